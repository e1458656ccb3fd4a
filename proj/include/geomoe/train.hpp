#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "geomoe/data.hpp"
#include "geomoe/losses.hpp"
#include "geomoe/model.hpp"

namespace geomoe {

enum class LocBlocks { all, last_two, none };

std::string_view loc_blocks_name(LocBlocks b);
LocBlocks loc_blocks_from_name(std::string_view s);

struct GroupLrs {
  double experts = 1e-3;
  double head = 1e-6;
  double backbone = 1e-4;
  double loc_proj = 1e-4;
  double dense = 1e-4;  // every group of a model without experts
};

struct TrainConfig {
  int epochs = 60;
  int warmup_epochs = 40;
  int batch_size = 32;
  double weight_decay = 1e-8;
  double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
  GroupLrs lr;
  double mixup_alpha = 0.1;
  double label_smoothing = 0.05;
  double contrastive_weight = 0.01;
  double contrastive_tau = 0.07;
  LocBlocks loc_blocks = LocBlocks::all;
  // Epochs during which the location encoder trains before being frozen.
  int encoder_warm_epochs = 2;
  bool hflip = true;
  int crop_pad = 1;  // random shift crop; 0 disables
  std::uint64_t seed = 0;

  void validate() const;
};

// Multiplier on the peak rate at fractional epoch t: linear from 0.8 to 1 over
// the warmup, then cosine back down to 0.8 at the last epoch.
double lr_multiplier(double t, int warmup_epochs, int epochs);

// Peak rate of a parameter group; a model without experts uses lr.dense.
double group_lr(const GroupLrs& lr, ParamGroup g, bool moe_model);

template <typename T>
void adamw_step(Parameter<T>& p, double lr, const TrainConfig& cfg);

// Layers whose pre-MLP activations enter the contrastive loss.
std::vector<int> contrastive_layers(const ModelConfig& m, LocBlocks b);

// [B, C, H, W] batch from dataset images, optionally flipped/shifted.
template <typename T>
Tensor<T> make_batch(const Dataset& d, const std::vector<std::size_t>& idx, bool augment, const TrainConfig& cfg,
                     Rng* rng);

struct LossParts {
  double ce = 0;
  double contrastive = 0;
  std::size_t skipped_anchors = 0;
};

// Mixed, smoothed cross-entropy plus weighted supcon over the configured
// layers. Mixup pairing and dropout draw from rng.
template <typename T>
Var<T> total_loss(const GeoModel<T>& model, const Dataset& d, const std::vector<std::size_t>& idx,
                  const TrainConfig& cfg, Rng& rng, bool augment, LossParts* parts = nullptr);

struct EvalResult {
  double loss = 0;       // mean unsmoothed cross-entropy
  double accuracy = 0;   // percent
  std::size_t count = 0;
  std::vector<std::size_t> class_correct, class_total;
  std::vector<int> predictions;
};

template <typename T>
EvalResult evaluate(const GeoModel<T>& model, const Dataset& d, const std::vector<std::size_t>& idx,
                    const AblationSet* ablation = nullptr, std::size_t batch = 64);

struct LogRow {
  int epoch = 0;
  std::string split;
  double loss = 0, acc = 0, lr = 0;
};

struct TrainResult {
  std::vector<LogRow> log;
  double best_val_acc = -1;
  int best_epoch = -1;
  bool diverged = false;
  std::string message;
};

// Trains in place and leaves the best-validation weights loaded. on_best is
// called whenever validation accuracy improves.
template <typename T>
TrainResult train(GeoModel<T>& model, const Dataset& d, const TrainConfig& cfg,
                  const std::function<void(const GeoModel<T>&, int)>& on_best = {});

void write_train_log(const std::vector<LogRow>& log, const std::filesystem::path& path);

}  // namespace geomoe
