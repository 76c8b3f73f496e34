#include "dualmamba/model.hpp"

#include <algorithm>
#include <map>
#include <sstream>

#include "dualmamba/cost_trace.hpp"
#include "op_support.hpp"

namespace dualmamba {

namespace {

constexpr std::string_view kArchitectureEntry = "__meta.architecture";

std::string_view to_string(Discretization d) { return d == Discretization::zoh ? "zoh" : "euler"; }

SsmConfig ssm_config(const ModelConfig& c) {
  SsmConfig s;
  s.d_state = c.state_dim;
  s.dt_rank = c.dt_rank;
  s.d_skip = c.d_skip;
  s.discretization = c.discretization;
  return s;
}

}  // namespace

void ModelConfig::validate() const {
  std::vector<std::string> bad;
  if (bands == 0) bad.push_back("bands must be >= 1");
  if (classes < 2) bad.push_back("classes must be >= 2");
  if (embed_dim == 0 || embed_dim % 2 != 0) bad.push_back("embed_dim must be a positive even number");
  if (embed_groups == 0) {
    bad.push_back("embed_groups must be >= 1");
  } else {
    if (embed_dim % embed_groups != 0) bad.push_back("embed_dim must be divisible by embed_groups");
    if (bands % embed_groups != 0) bad.push_back("bands must be divisible by embed_groups");
  }
  if (state_dim == 0) bad.push_back("state_dim must be >= 1");
  if (ssm_ratio == 0) bad.push_back("ssm_ratio must be >= 1");
  if (patch == 0 || patch % 2 == 0) bad.push_back("patch must be odd");
  if (blocks == 0) bad.push_back("blocks must be >= 1");
  if (bad.empty()) return;
  std::string msg = "invalid model config:";
  for (const auto& b : bad) msg += " " + b + ";";
  msg.pop_back();
  throw ConfigError(msg);
}

std::string ModelConfig::architecture_string() const {
  std::ostringstream os;
  os << "bands=" << bands << ";classes=" << classes << ";embed_dim=" << embed_dim << ";state_dim=" << state_dim
     << ";ssm_ratio=" << ssm_ratio << ";patch=" << patch << ";blocks=" << blocks << ";embed_groups=" << embed_groups
     << ";spectral_scan=" << (spectral_bidirectional ? "bidirectional" : "unidirectional")
     << ";fusion=" << to_string(fusion) << ";dt_rank=" << dt_rank << ";discretization=" << to_string(discretization)
     << ";attn_norm_affine=" << attn_norm_affine << ";readout=" << to_string(readout) << ";d_skip=" << d_skip;
  return os.str();
}

std::uint64_t ModelConfig::architecture_hash() const { return fnv1a64(architecture_string()); }

template <typename T>
typename DualStreamBlock<T>::Output DualStreamBlock<T>::forward(const Tensor<T>& x, Mode mode) {
  Tensor<T> x_pos, g;
  {
    trace::Scope scope("dpe");
    x_pos = add(x, dpe.forward(x));
  }
  Tensor<T> g_spa, g_spe, local;
  {
    trace::Scope scope("spatial");
    g_spa = spatial.forward(x_pos);
  }
  {
    trace::Scope scope("spectral");
    g_spe = spectral.forward(x_pos);
  }
  {
    trace::Scope scope("cross_attn");
    g = cross_attn.forward(g_spe, g_spa, x_pos).fused;
  }
  {
    trace::Scope scope("ls2rc");
    local = ls2rc.forward(x, mode);
  }
  trace::Scope scope("fusion");
  auto fused = fusion.forward(g, local, mode);
  return {fused.fused, fused.global_weight};
}

template <typename T>
void DualStreamBlock<T>::visit(std::string_view prefix, const ParamVisitor<T>& fn) {
  dpe.visit(join_name(prefix, "dpe"), fn);
  spatial.visit(join_name(prefix, "spatial"), fn);
  spectral.visit(join_name(prefix, "spectral"), fn);
  cross_attn.visit(join_name(prefix, "cross_attn"), fn);
  ls2rc.visit(join_name(prefix, "ls2rc"), fn);
  fusion.visit(join_name(prefix, "fusion"), fn);
}

template <typename T>
DualMamba<T>::DualMamba(const ModelConfig& config, Rng& rng) : config_(config) {
  config_.validate();
  const std::size_t D = config_.embed_dim;
  const SsmConfig ssm = ssm_config(config_);
  embed = GroupConv<T>(config_.bands, D, config_.embed_groups, rng);
  for (std::size_t i = 0; i < config_.blocks; ++i) {
    DualStreamBlock<T> b;
    b.dpe = PositionalEmbedding<T>(D, rng);
    b.spatial = SpatialMambaBlock<T>(D, config_.ssm_ratio, ssm, rng);
    b.spectral = SpectralMambaBlock<T>(D, config_.ssm_ratio, config_.spectral_bidirectional, ssm, rng);
    b.cross_attn = CrossAttentionFusion<T>(D, config_.attn_norm_affine);
    b.ls2rc = SpectralSpatialConv<T>(D, rng);
    b.fusion = GlobalLocalFusion<T>(D, config_.fusion, rng);
    blocks.push_back(std::move(b));
  }
  classifier = Classifier<T>(D, config_.classes, config_.readout, rng);
  visit([](const std::string&, Tensor<T>& t, ParamKind kind) { t.set_requires_grad(kind == ParamKind::weight); });
}

template <typename T>
Tensor<T> DualMamba<T>::forward(const Tensor<T>& x, Mode mode) {
  const std::size_t P = config_.patch;
  detail::require(x.rank() == 4 && x.dim(1) == P && x.dim(2) == P && x.dim(3) == config_.bands, "dualmamba",
                  "expected input (B," + std::to_string(P) + "," + std::to_string(P) + "," +
                      std::to_string(config_.bands) + "), got " + shape_string(x.shape()));
  Tensor<T> h;
  {
    trace::Scope scope("embed");
    h = embed.forward(x);
  }
  last_global_weights.clear();
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    trace::Scope scope("block" + std::to_string(i));
    auto out = blocks[i].forward(h, mode);
    h = out.features;
    if (out.global_weight.defined()) last_global_weights.push_back(out.global_weight);
  }
  trace::Scope scope("classifier");
  return classifier.forward(h);
}

template <typename T>
void DualMamba<T>::visit(const ParamVisitor<T>& fn) {
  embed.visit("embed", fn);
  for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i].visit("block" + std::to_string(i), fn);
  classifier.visit("classifier", fn);
}

template <typename T>
std::vector<Tensor<T>> DualMamba<T>::parameters() {
  std::vector<Tensor<T>> out;
  visit([&](const std::string&, Tensor<T>& t, ParamKind kind) {
    if (kind == ParamKind::weight) out.push_back(t);
  });
  return out;
}

template struct DualStreamBlock<float>;
template struct DualStreamBlock<double>;
template class DualMamba<float>;
template class DualMamba<double>;

std::vector<CheckpointEntry> checkpoint_entries(DualMamba<float>& model, const AdamW<float>* optimizer) {
  std::vector<CheckpointEntry> entries;
  const std::uint64_t h = model.config().architecture_hash();
  CheckpointEntry arch{std::string(kArchitectureEntry), {4}, {}};
  for (int i = 0; i < 4; ++i) arch.values.push_back(static_cast<float>((h >> (16 * i)) & 0xffff));
  entries.push_back(std::move(arch));

  std::vector<std::string> weight_names;
  model.visit([&](const std::string& name, Tensor<float>& t, ParamKind kind) {
    entries.push_back(to_entry(name, t));
    if (kind == ParamKind::weight) weight_names.push_back(name);
  });
  if (optimizer != nullptr) {
    const std::string prefix(kOptimizerPrefix);
    entries.push_back({prefix + "step", {1}, {static_cast<float>(optimizer->step_count())}});
    auto& m = optimizer->first_moments();
    auto& v = optimizer->second_moments();
    for (std::size_t k = 0; k < weight_names.size(); ++k) {
      entries.push_back(to_entry(prefix + "m." + weight_names[k], m[k]));
      entries.push_back(to_entry(prefix + "v." + weight_names[k], v[k]));
    }
  }
  return entries;
}

void restore_checkpoint(DualMamba<float>& model, AdamW<float>* optimizer, const std::vector<CheckpointEntry>& entries) {
  std::map<std::string, const CheckpointEntry*> by_name;
  for (const auto& e : entries) {
    if (!by_name.emplace(e.name, &e).second) throw ConfigError("checkpoint: duplicate entry " + e.name);
  }
  auto take = [&](const std::string& name, const Shape& shape) -> const CheckpointEntry& {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw ConfigError("checkpoint does not match the model: missing entry " + name);
    if (it->second->shape != shape) {
      throw ConfigError("checkpoint does not match the model: entry " + name + " has shape " +
                        shape_string(it->second->shape) + ", model expects " + shape_string(shape));
    }
    const CheckpointEntry& e = *it->second;
    by_name.erase(it);
    return e;
  };
  auto copy_into = [](const CheckpointEntry& e, Tensor<float>& t) {
    std::copy(e.values.begin(), e.values.end(), t.data().begin());
  };

  const auto& arch = take(std::string(kArchitectureEntry), {4});
  std::uint64_t h = 0;
  for (int i = 0; i < 4; ++i) h |= static_cast<std::uint64_t>(arch.values[i]) << (16 * i);
  if (h != model.config().architecture_hash()) {
    throw ConfigError("checkpoint architecture differs from the config (" + model.config().architecture_string() + ")");
  }

  // Validate every model tensor before mutating anything.
  std::vector<std::pair<const CheckpointEntry*, Tensor<float>>> targets;
  std::vector<std::string> weight_names;
  model.visit([&](const std::string& name, Tensor<float>& t, ParamKind kind) {
    targets.emplace_back(&take(name, t.shape()), t);
    if (kind == ParamKind::weight) weight_names.push_back(name);
  });
  const std::string prefix(kOptimizerPrefix);
  std::vector<std::pair<const CheckpointEntry*, Tensor<float>>> optim_targets;
  const CheckpointEntry* step = nullptr;
  if (optimizer != nullptr && by_name.count(prefix + "step") != 0) {
    step = &take(prefix + "step", {1});
    for (std::size_t k = 0; k < weight_names.size(); ++k) {
      auto& m = optimizer->first_moments()[k];
      auto& v = optimizer->second_moments()[k];
      optim_targets.emplace_back(&take(prefix + "m." + weight_names[k], m.shape()), m);
      optim_targets.emplace_back(&take(prefix + "v." + weight_names[k], v.shape()), v);
    }
  }
  for (const auto& [name, e] : by_name) {
    if (name.rfind(prefix, 0) == 0 && optimizer == nullptr) continue;
    throw ConfigError("checkpoint does not match the model: unexpected entry " + name);
  }
  for (auto& [e, t] : targets) copy_into(*e, t);
  for (auto& [e, t] : optim_targets) copy_into(*e, t);
  if (step != nullptr) optimizer->set_step_count(static_cast<std::int64_t>(step->values[0]));
}

void save_checkpoint(const std::filesystem::path& path, DualMamba<float>& model, const AdamW<float>* optimizer) {
  write_checkpoint(path, checkpoint_entries(model, optimizer));
}

void load_checkpoint(const std::filesystem::path& path, DualMamba<float>& model, AdamW<float>* optimizer) {
  restore_checkpoint(model, optimizer, read_checkpoint(path));
}

}  // namespace dualmamba
