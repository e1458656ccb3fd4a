#pragma once

#include <map>
#include <optional>
#include <vector>

#include "geomoe/locenc.hpp"
#include "geomoe/moe_layer.hpp"

namespace geomoe {

struct BlockConfig {
  int num_layers = 1;
  int dim = 16;
  int heads = 2;
};

struct ClassifierConfig {
  int expand_dim = 64;
  int bottleneck_dim = 32;
  double dropout = 0.1;
};

// Expert settings applied when dense MLPs are converted.
struct MoEConfig {
  int num_experts = 16;
  int hidden = 2;
  int gate_rank = kDefaultGateRank;  // capped at min(E, D); 0 keeps the full matrix
  double temperature = kGateTemperature;
  bool gate_trainable = true;  // hard routing gives the gate no gradient either way
  int refine_iters = 5;
  int min_class_count = 10;
  bool balance_classes = false;
};

struct ModelConfig {
  int image_size = 16;
  int patch_size = 4;
  int channels = 3;
  std::vector<BlockConfig> blocks{{2, 16, 2}, {4, 24, 2}, {3, 32, 2}};
  int num_classes = 8;
  int mlp_ratio = 2;
  ClassifierConfig classifier;
  std::vector<int> expert_layers{1, 3, 5, 7};
  std::uint64_t seed = 0;
  GridEncoderConfig locenc{16, 0.01, M_PI, 128, 64};
  double loc_dropout = 0.3;

  void validate() const;
  int num_layers() const;
  int num_patches() const;
  int patch_features() const { return channels * patch_size * patch_size; }
  std::size_t block_of_layer(int layer) const;
  std::vector<std::size_t> block_dims() const;
};

// Pre-MLP activations Norm(MHSA(E) + E), one entry per transformer layer.
template <typename T>
using PreMlpActivations = std::vector<Var<T>>;

struct ForwardOptions {
  bool train = false;
  bool hooks = false;
  Rng* rng = nullptr;                   // required when train
  const AblationSet* ablation = nullptr;  // merged with each layer's own set
};

template <typename T>
struct ForwardResult {
  Var<T> logits;
  PreMlpActivations<T> pre_mlp;  // empty unless hooks
  // routes[layer] holds B*P expert indices for MoE layers, empty otherwise.
  std::vector<std::vector<int>> routes;
};

// [B, C, H, W] images -> [B, P, C * ps * ps] patch vectors, patches in
// row-major grid order, features channel-major.
template <typename T>
Tensor<T> patchify(const Tensor<T>& images, int patch_size);

// Patch transformer with optional MoE layers, plus the location encoder and
// per-block projectors used by the contrastive auxiliary loss.
template <typename T>
class GeoModel {
 public:
  struct Layer {
    std::size_t block = 0;
    Mhsa<T> attn;
    LayerNorm<T> norm;
    Linear<T> fc1, fc2;
    std::optional<MoELayer<T>> moe;
  };

  GeoModel() = default;
  explicit GeoModel(const ModelConfig& cfg);

  const ModelConfig& config() const { return cfg_; }

  ForwardResult<T> forward(const Tensor<T>& images, const ForwardOptions& opts = {}) const;

  const std::vector<Layer>& layers() const { return layers_; }
  std::vector<Layer>& layers() { return layers_; }
  bool is_moe() const;
  std::vector<int> moe_layer_indices() const;
  // Experts per MoE layer (0 when dense).
  int num_experts() const;

  // Replaces the dense MLP of `layer`; the dense weights are dropped.
  void install_moe(int layer, MoELayer<T> moe);
  // 0 once the layer is converted.
  std::size_t dense_mlp_parameter_count(int layer) const;

  LocationEncoder<T>& location_encoder() { return locenc_; }
  const LocationEncoder<T>& location_encoder() const { return locenc_; }
  BlockProjectors<T>& projectors() { return projectors_; }
  const BlockProjectors<T>& projectors() const { return projectors_; }

  // Every parameter in a fixed order (names are unique).
  void visit(const ParamVisitor<T>& f);
  std::vector<Parameter<T>*> parameters();
  std::size_t parameter_count();
  std::map<std::string, Tensor<T>> state() const;
  void load_state(const std::map<std::string, Tensor<T>>& s);

  GeoModel clone() const;

 private:
  ModelConfig cfg_;
  Linear<T> patch_embed_;
  Parameter<T> pos_;
  std::vector<Linear<T>> transitions_;
  std::vector<Layer> layers_;
  LayerNorm<T> final_norm_;
  Linear<T> head_expand_, head_bottleneck_, head_out_;
  LocationEncoder<T> locenc_;
  BlockProjectors<T> projectors_;
};

}  // namespace geomoe
