#include "dualmamba/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "dualmamba/rng.hpp"

namespace dualmamba {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

std::size_t parse_size(std::string_view v) {
  std::size_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || ec != std::errc() || ptr != v.data() + v.size()) throw ConfigError("expected a non-negative integer");
  return out;
}

double parse_double(std::string_view v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(std::string(v), &used);
    if (used != v.size()) throw std::invalid_argument("trailing");
    return d;
  } catch (const std::exception&) {
    throw ConfigError("expected a number");
  }
}

bool parse_bool(std::string_view v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("expected true or false");
}

// An empty value means "unset" rather than the config directory.
std::filesystem::path resolve_path(const std::filesystem::path& base, std::string_view v) {
  return v.empty() ? std::filesystem::path() : base / std::string(v);
}

std::string fmt_double(double d) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", d);
  return buf;
}

using Setter = std::function<void(TrainConfig&, std::string_view, const std::filesystem::path&)>;

const std::map<std::string, Setter, std::less<>>& setters() {
  static const std::map<std::string, Setter, std::less<>> table = {
      {"data", [](TrainConfig& c, std::string_view v, const auto& base) { c.data = resolve_path(base, v); }},
      {"labels", [](TrainConfig& c, std::string_view v, const auto& base) { c.labels = resolve_path(base, v); }},
      {"output", [](TrainConfig& c, std::string_view v, const auto& base) { c.output = resolve_path(base, v); }},
      {"bands", [](TrainConfig& c, std::string_view v, const auto&) { c.model.bands = parse_size(v); }},
      {"classes", [](TrainConfig& c, std::string_view v, const auto&) { c.model.classes = parse_size(v); }},
      {"embed_dim", [](TrainConfig& c, std::string_view v, const auto&) { c.model.embed_dim = parse_size(v); }},
      {"state_dim", [](TrainConfig& c, std::string_view v, const auto&) { c.model.state_dim = parse_size(v); }},
      {"ssm_ratio", [](TrainConfig& c, std::string_view v, const auto&) { c.model.ssm_ratio = parse_size(v); }},
      {"patch", [](TrainConfig& c, std::string_view v, const auto&) { c.model.patch = parse_size(v); }},
      {"blocks", [](TrainConfig& c, std::string_view v, const auto&) { c.model.blocks = parse_size(v); }},
      {"embed_groups", [](TrainConfig& c, std::string_view v, const auto&) { c.model.embed_groups = parse_size(v); }},
      {"spectral_scan",
       [](TrainConfig& c, std::string_view v, const auto&) {
         if (v == "bidirectional") {
           c.model.spectral_bidirectional = true;
         } else if (v == "unidirectional") {
           c.model.spectral_bidirectional = false;
         } else {
           throw ConfigError("expected bidirectional or unidirectional");
         }
       }},
      {"fusion", [](TrainConfig& c, std::string_view v, const auto&) { c.model.fusion = parse_fusion_strategy(v); }},
      {"dt_rank", [](TrainConfig& c, std::string_view v, const auto&) { c.model.dt_rank = parse_size(v); }},
      {"discretization",
       [](TrainConfig& c, std::string_view v, const auto&) {
         if (v == "zoh") {
           c.model.discretization = Discretization::zoh;
         } else if (v == "euler") {
           c.model.discretization = Discretization::euler;
         } else {
           throw ConfigError("expected zoh or euler");
         }
       }},
      {"attn_norm_affine", [](TrainConfig& c, std::string_view v, const auto&) { c.model.attn_norm_affine = parse_bool(v); }},
      {"readout", [](TrainConfig& c, std::string_view v, const auto&) { c.model.readout = parse_readout(v); }},
      {"d_skip", [](TrainConfig& c, std::string_view v, const auto&) { c.model.d_skip = parse_bool(v); }},
      {"split", [](TrainConfig& c, std::string_view v, const auto&) { c.split = SplitSpec::parse(v); }},
      {"batch_size", [](TrainConfig& c, std::string_view v, const auto&) { c.batch_size = parse_size(v); }},
      {"lr", [](TrainConfig& c, std::string_view v, const auto&) { c.lr = parse_double(v); }},
      {"weight_decay", [](TrainConfig& c, std::string_view v, const auto&) { c.weight_decay = parse_double(v); }},
      {"epochs", [](TrainConfig& c, std::string_view v, const auto&) { c.epochs = parse_size(v); }},
      {"lr_step", [](TrainConfig& c, std::string_view v, const auto&) { c.lr_step = parse_size(v); }},
      {"lr_gamma", [](TrainConfig& c, std::string_view v, const auto&) { c.lr_gamma = parse_double(v); }},
      {"seeds",
       [](TrainConfig& c, std::string_view v, const auto&) {
         c.seeds.clear();
         while (true) {
           const auto comma = v.find(',');
           c.seeds.push_back(parse_size(trim(v.substr(0, comma))));
           if (comma == std::string_view::npos) break;
           v = v.substr(comma + 1);
         }
       }},
      {"normalize",
       [](TrainConfig& c, std::string_view v, const auto&) {
         if (v == "standardize") {
           c.normalization = Normalization::standardize;
         } else if (v == "minmax") {
           c.normalization = Normalization::minmax;
         } else {
           throw ConfigError("expected standardize or minmax");
         }
       }},
  };
  return table;
}

}  // namespace

TrainConfig TrainConfig::parse(std::string_view text, const std::filesystem::path& base_dir) {
  TrainConfig c;
  c.model.bands = 0;
  c.model.classes = 0;
  c.output = base_dir / c.output;
  std::size_t line_no = 0;
  while (!text.empty()) {
    ++line_no;
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = "config line " + std::to_string(line_no);
    if (eq == std::string_view::npos) throw ConfigError(where + ": expected 'key = value'");
    const auto key = trim(line.substr(0, eq));
    const auto value = trim(line.substr(eq + 1));
    const auto it = setters().find(key);
    if (it == setters().end()) throw ConfigError(where + ": unknown key '" + std::string(key) + "'");
    try {
      it->second(c, value, base_dir);
    } catch (const ConfigError& e) {
      throw ConfigError(where + ": " + std::string(key) + ": " + e.what());
    }
  }
  c.validate();
  return c;
}

TrainConfig TrainConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path.parent_path());
}

void TrainConfig::validate() const {
  std::vector<std::string> bad;
  if (batch_size < 1) bad.push_back("batch_size must be >= 1");
  if (epochs < 1) bad.push_back("epochs must be >= 1");
  if (lr_step < 1) bad.push_back("lr_step must be >= 1");
  if (!(lr_gamma > 0.0 && lr_gamma <= 1.0)) bad.push_back("lr_gamma must lie in (0, 1]");
  if (!(lr > 0.0)) bad.push_back("lr must be positive");
  if (!(weight_decay >= 0.0)) bad.push_back("weight_decay must be >= 0");
  if (seeds.empty()) bad.push_back("seeds must not be empty");
  if (!bad.empty()) {
    std::string msg = "invalid training config:";
    for (const auto& b : bad) msg += " " + b + ";";
    msg.pop_back();
    throw ConfigError(msg);
  }
  // Data-dependent fields may still be 0; check the rest of the model now.
  ModelConfig m = model;
  if (m.bands == 0) m.bands = m.embed_groups == 0 ? 1 : m.embed_groups;
  if (m.classes == 0) m.classes = 2;
  m.validate();
}

std::string TrainConfig::canonical() const {
  std::ostringstream os;
  os << "data = " << data.generic_string() << '\n'
     << "labels = " << labels.generic_string() << '\n'
     << "bands = " << model.bands << '\n'
     << "classes = " << model.classes << '\n'
     << "embed_dim = " << model.embed_dim << '\n'
     << "state_dim = " << model.state_dim << '\n'
     << "ssm_ratio = " << model.ssm_ratio << '\n'
     << "patch = " << model.patch << '\n'
     << "blocks = " << model.blocks << '\n'
     << "embed_groups = " << model.embed_groups << '\n'
     << "spectral_scan = " << (model.spectral_bidirectional ? "bidirectional" : "unidirectional") << '\n'
     << "fusion = " << to_string(model.fusion) << '\n'
     << "dt_rank = " << model.dt_rank << '\n'
     << "discretization = " << (model.discretization == Discretization::zoh ? "zoh" : "euler") << '\n'
     << "attn_norm_affine = " << (model.attn_norm_affine ? "true" : "false") << '\n'
     << "readout = " << to_string(model.readout) << '\n'
     << "d_skip = " << (model.d_skip ? "true" : "false") << '\n'
     << "split = " << split.to_string() << '\n'
     << "batch_size = " << batch_size << '\n'
     << "lr = " << fmt_double(lr) << '\n'
     << "weight_decay = " << fmt_double(weight_decay) << '\n'
     << "epochs = " << epochs << '\n'
     << "lr_step = " << lr_step << '\n'
     << "lr_gamma = " << fmt_double(lr_gamma) << '\n'
     << "seeds = ";
  for (std::size_t i = 0; i < seeds.size(); ++i) os << (i ? "," : "") << seeds[i];
  os << '\n' << "normalize = " << (normalization == Normalization::standardize ? "standardize" : "minmax") << '\n';
  return os.str();
}

std::string TrainConfig::hash() const {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(canonical())));
  return buf;
}

void resolve_data_shape(TrainConfig& config, const HsiCube& cube) {
  auto resolve = [](std::size_t& field, std::size_t actual, const char* name) {
    if (field == 0) {
      field = actual;
    } else if (field != actual) {
      throw ConfigError(std::string("config sets ") + name + " = " + std::to_string(field) + " but the data has " +
                        std::to_string(actual));
    }
  };
  resolve(config.model.bands, cube.bands, "bands");
  resolve(config.model.classes, cube.num_classes(), "classes");
  config.model.validate();
}

}  // namespace dualmamba
