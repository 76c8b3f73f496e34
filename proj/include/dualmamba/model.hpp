#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dualmamba/checkpoint.hpp"
#include "dualmamba/conv_module.hpp"
#include "dualmamba/fusion.hpp"
#include "dualmamba/mamba.hpp"
#include "dualmamba/optim.hpp"

namespace dualmamba {

struct ModelConfig {
  std::size_t bands = 200;
  std::size_t classes = 16;
  std::size_t embed_dim = 64;
  std::size_t state_dim = 16;
  std::size_t ssm_ratio = 2;
  std::size_t patch = 7;
  std::size_t blocks = 1;
  std::size_t embed_groups = 4;
  bool spectral_bidirectional = true;
  FusionStrategy fusion = FusionStrategy::adaptive;
  std::size_t dt_rank = 0;  // 0 = auto
  Discretization discretization = Discretization::zoh;
  bool attn_norm_affine = false;
  Readout readout = Readout::mean;
  bool d_skip = false;

  // Throws ConfigError listing every violated invariant.
  void validate() const;
  // Canonical text of every field that shapes the network.
  std::string architecture_string() const;
  std::uint64_t architecture_hash() const;
};

template <typename T>
struct DualStreamBlock {
  PositionalEmbedding<T> dpe;
  SpatialMambaBlock<T> spatial;
  SpectralMambaBlock<T> spectral;
  CrossAttentionFusion<T> cross_attn;
  SpectralSpatialConv<T> ls2rc;
  GlobalLocalFusion<T> fusion;

  struct Output {
    Tensor<T> features;       // F, (B,P,P,D)
    Tensor<T> global_weight;  // adaptive fusion W_g, (B,1,1,1)
  };

  Output forward(const Tensor<T>& x, Mode mode);
  void visit(std::string_view prefix, const ParamVisitor<T>& fn);
};

/// Pixel embedding (3x3 group conv) -> dual-stream blocks -> classifier.
/// Input (B,P,P,bands), output logits (B,classes).
template <typename T>
class DualMamba {
 public:
  DualMamba(const ModelConfig& config, Rng& rng);

  const ModelConfig& config() const { return config_; }

  Tensor<T> forward(const Tensor<T>& x, Mode mode);

  // Visits every tensor with its stable hierarchical name, e.g.
  // "embed.weight", "block0.spatial.ssm.A_log", "classifier.bias".
  void visit(const ParamVisitor<T>& fn);
  std::vector<Tensor<T>> parameters();  // learned weights in visit order

  GroupConv<T> embed;
  std::vector<DualStreamBlock<T>> blocks;
  Classifier<T> classifier;

  // W_g per block from the last forward with adaptive fusion.
  std::vector<Tensor<T>> last_global_weights;

 private:
  ModelConfig config_;
};

// Model tensors plus an architecture tag; optimizer moments and step count
// under kOptimizerPrefix when `optimizer` is given.
std::vector<CheckpointEntry> checkpoint_entries(DualMamba<float>& model, const AdamW<float>* optimizer);

// Restores tensors by name. Missing, unexpected or mis-shaped entries and a
// differing architecture tag raise ConfigError.
void restore_checkpoint(DualMamba<float>& model, AdamW<float>* optimizer, const std::vector<CheckpointEntry>& entries);

void save_checkpoint(const std::filesystem::path& path, DualMamba<float>& model, const AdamW<float>* optimizer);
void load_checkpoint(const std::filesystem::path& path, DualMamba<float>& model, AdamW<float>* optimizer);

}  // namespace dualmamba
