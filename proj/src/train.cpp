#include "geomoe/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>

namespace geomoe {

std::string_view loc_blocks_name(LocBlocks b) {
  switch (b) {
    case LocBlocks::all: return "all";
    case LocBlocks::last_two: return "last-two";
    case LocBlocks::none: return "none";
  }
  return "all";
}

LocBlocks loc_blocks_from_name(std::string_view s) {
  if (s == "all") return LocBlocks::all;
  if (s == "last-two") return LocBlocks::last_two;
  if (s == "none") return LocBlocks::none;
  throw ConfigError("loc must be all, last-two or none, got '" + std::string(s) + "'");
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (warmup_epochs < 0 || warmup_epochs > epochs) throw ConfigError("warmup_epochs must be in [0, epochs]");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  for (double r : {lr.experts, lr.head, lr.backbone, lr.loc_proj, lr.dense}) {
    if (!(r >= 0.0) || !std::isfinite(r)) throw ConfigError("learning rates must be finite and >= 0");
  }
  if (weight_decay < 0 || mixup_alpha < 0 || contrastive_weight < 0) {
    throw ConfigError("weight_decay, mixup_alpha and contrastive_weight must be >= 0");
  }
  if (label_smoothing < 0 || label_smoothing >= 1) throw ConfigError("label_smoothing must be in [0,1)");
  if (!(contrastive_tau > 0)) throw ConfigError("contrastive_tau must be > 0");
  if (encoder_warm_epochs < 0) throw ConfigError("encoder_warm_epochs must be >= 0");
  if (crop_pad < 0) throw ConfigError("crop_pad must be >= 0");
}

double lr_multiplier(double t, int warmup_epochs, int epochs) {
  constexpr double lo = 0.8;
  if (t < warmup_epochs) return lo + (1.0 - lo) * t / warmup_epochs;
  const double span = epochs - warmup_epochs;
  if (span <= 0) return 1.0;
  const double u = std::clamp((t - warmup_epochs) / span, 0.0, 1.0);
  return lo + (1.0 - lo) * 0.5 * (1.0 + std::cos(M_PI * u));
}

double group_lr(const GroupLrs& lr, ParamGroup g, bool moe_model) {
  if (!moe_model) return lr.dense;
  switch (g) {
    case ParamGroup::experts: return lr.experts;
    case ParamGroup::head: return lr.head;
    case ParamGroup::backbone: return lr.backbone;
    case ParamGroup::loc_proj: return lr.loc_proj;
  }
  return lr.backbone;
}

template <typename T>
void adamw_step(Parameter<T>& p, double lr, const TrainConfig& cfg) {
  if (p.frozen() || lr == 0.0 || p.grad().empty()) return;
  auto& w = p.mutable_value();
  const auto& g = p.grad();
  auto& m = p.moment1();
  auto& v = p.moment2();
  if (m.empty()) {
    m = Tensor<T>(w.shape());
    v = Tensor<T>(w.shape());
  }
  const auto t = ++p.step_count();
  const double b1 = cfg.beta1, b2 = cfg.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t));
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double gi = g[i];
    const double mi = b1 * m[i] + (1.0 - b1) * gi;
    const double vi = b2 * v[i] + (1.0 - b2) * gi * gi;
    m[i] = static_cast<T>(mi);
    v[i] = static_cast<T>(vi);
    const double upd = (mi / c1) / (std::sqrt(vi / c2) + cfg.adam_eps) + cfg.weight_decay * w[i];
    w[i] = static_cast<T>(w[i] - lr * upd);
  }
}

std::vector<int> contrastive_layers(const ModelConfig& m, LocBlocks b) {
  std::vector<int> out;
  if (b == LocBlocks::none) return out;
  const std::size_t first_block = b == LocBlocks::all || m.blocks.size() < 2 ? 0 : m.blocks.size() - 2;
  for (int l = 0; l < m.num_layers(); ++l) {
    if (m.block_of_layer(l) >= first_block) out.push_back(l);
  }
  return out;
}

template <typename T>
Tensor<T> make_batch(const Dataset& d, const std::vector<std::size_t>& idx, bool augment, const TrainConfig& cfg,
                     Rng* rng) {
  if (idx.empty()) throw ValidationError("empty batch");
  const Shape& s = d.images.at(idx[0]).shape();
  const std::size_t C = s[0], H = s[1], W = s[2], F = C * H * W;
  Tensor<T> out({idx.size(), C, H, W});
  for (std::size_t b = 0; b < idx.size(); ++b) {
    const auto& img = d.images.at(idx[b]);
    T* dst = out.data() + b * F;
    if (!augment || !rng) {
      for (std::size_t i = 0; i < F; ++i) dst[i] = static_cast<T>(img[i]);
      continue;
    }
    const bool flip = cfg.hflip && rng->bernoulli(0.5);
    const long pad = cfg.crop_pad;
    const long dx = pad ? static_cast<long>(rng->uniform_int(static_cast<std::uint64_t>(2 * pad + 1))) - pad : 0;
    const long dy = pad ? static_cast<long>(rng->uniform_int(static_cast<std::uint64_t>(2 * pad + 1))) - pad : 0;
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x) {
          long sx = static_cast<long>(flip ? W - 1 - x : x) + dx;
          long sy = static_cast<long>(y) + dy;
          sx = std::clamp(sx, 0L, static_cast<long>(W) - 1);
          sy = std::clamp(sy, 0L, static_cast<long>(H) - 1);
          dst[(c * H + y) * W + x] = static_cast<T>(img[(c * H + static_cast<std::size_t>(sy)) * W + static_cast<std::size_t>(sx)]);
        }
  }
  return out;
}

template <typename T>
Var<T> total_loss(const GeoModel<T>& model, const Dataset& d, const std::vector<std::size_t>& idx,
                  const TrainConfig& cfg, Rng& rng, bool augment, LossParts* parts) {
  const std::size_t B = idx.size();
  const std::size_t K = static_cast<std::size_t>(model.config().num_classes);
  Tensor<T> x = make_batch<T>(d, idx, augment, cfg, &rng);
  std::vector<int> labels(B);
  for (std::size_t i = 0; i < B; ++i) labels[i] = d.record(idx[i]).class_id;

  const MixupPlan plan = draw_mixup(B, cfg.mixup_alpha, rng);
  x = mix_rows(x, plan);
  Tensor<T> targets = smoothed_targets<T>(labels, K, cfg.label_smoothing);
  if (plan.lambda != 1.0) targets = mix_rows(targets, plan);

  const bool use_loc = cfg.contrastive_weight > 0.0 && B >= 2;
  const auto layers = use_loc ? contrastive_layers(model.config(), cfg.loc_blocks) : std::vector<int>{};

  ForwardOptions fo;
  fo.train = true;
  fo.hooks = !layers.empty();
  fo.rng = &rng;
  const auto res = model.forward(x, fo);
  Var<T> loss = soft_cross_entropy(res.logits, targets);
  if (parts) *parts = {static_cast<double>(loss.value()[0]), 0.0, 0};
  if (layers.empty()) return loss;

  std::vector<int> dom_labels(B);
  std::vector<LatLng> locs(B);
  for (std::size_t i = 0; i < B; ++i) {
    const auto& r = d.record(idx[plan.dominant(i)]);
    dom_labels[i] = r.class_id;
    locs[i] = r.location;
  }
  const Var<T> emb = model.location_encoder().encode(locs);
  Var<T> con;
  for (int l : layers) {
    const std::size_t block = model.config().block_of_layer(l);
    const Var<T> loc = model.projectors().project(emb, block, true, rng);
    // A row zeroed by ReLU and dropout has no direction; skip the layer.
    bool degenerate = false;
    for (std::size_t i = 0; i < B && !degenerate; ++i) degenerate = norm2<T>(loc.value().row(i)) < T(1e-6);
    if (degenerate) {
      if (parts) parts->skipped_anchors += 2 * B;
      continue;
    }
    const Var<T> img = l2_normalize(mean_over_patches(res.pre_mlp[static_cast<std::size_t>(l)]));
    SupConStats st;
    const Var<T> term = supcon_loss(concat_rows(img, l2_normalize(loc)), dom_labels, static_cast<T>(cfg.contrastive_tau), &st);
    if (parts) parts->skipped_anchors += st.skipped;
    con = con.defined() ? add(con, term) : term;
  }
  if (!con.defined()) return loss;
  if (parts) parts->contrastive = static_cast<double>(con.value()[0]);
  return add(loss, scale(con, static_cast<T>(cfg.contrastive_weight)));
}

template <typename T>
EvalResult evaluate(const GeoModel<T>& model, const Dataset& d, const std::vector<std::size_t>& idx,
                    const AblationSet* ablation, std::size_t batch) {
  if (idx.empty()) throw ValidationError("evaluation set is empty");
  NoGradGuard ng;
  const std::size_t K = static_cast<std::size_t>(model.config().num_classes);
  EvalResult r;
  r.class_correct.assign(K, 0);
  r.class_total.assign(K, 0);
  TrainConfig plain;
  std::size_t correct = 0;
  double loss_sum = 0;
  for (std::size_t s = 0; s < idx.size(); s += batch) {
    const std::vector<std::size_t> chunk(idx.begin() + static_cast<long>(s),
                                         idx.begin() + static_cast<long>(std::min(idx.size(), s + batch)));
    ForwardOptions fo;
    fo.ablation = ablation;
    const auto res = model.forward(make_batch<T>(d, chunk, false, plain, nullptr), fo);
    std::vector<int> labels(chunk.size());
    for (std::size_t i = 0; i < chunk.size(); ++i) labels[i] = d.record(chunk[i]).class_id;
    loss_sum += static_cast<double>(soft_cross_entropy(res.logits, smoothed_targets<T>(labels, K, 0.0)).value()[0]) *
                static_cast<double>(chunk.size());
    for (std::size_t i = 0; i < chunk.size(); ++i) {
      const auto row = res.logits.value().row(i);
      const int pred = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
      r.predictions.push_back(pred);
      const auto c = static_cast<std::size_t>(labels[i]);
      ++r.class_total[c];
      if (pred == labels[i]) {
        ++r.class_correct[c];
        ++correct;
      }
    }
  }
  r.count = idx.size();
  r.accuracy = 100.0 * static_cast<double>(correct) / static_cast<double>(idx.size());
  r.loss = loss_sum / static_cast<double>(idx.size());
  return r;
}

template <typename T>
TrainResult train(GeoModel<T>& model, const Dataset& d, const TrainConfig& cfg,
                  const std::function<void(const GeoModel<T>&, int)>& on_best) {
  cfg.validate();
  auto train_idx = d.indices(Split::train);
  const auto val_idx = d.indices(Split::val);
  if (train_idx.empty()) throw ValidationError("dataset has no train records");
  if (val_idx.empty()) throw ValidationError("dataset has no val records");
  if (static_cast<int>(d.num_classes()) != model.config().num_classes) {
    throw ConfigError("dataset has " + std::to_string(d.num_classes()) + " classes, model expects " +
                      std::to_string(model.config().num_classes));
  }

  Rng rng(cfg.seed);
  const bool moe = model.is_moe();
  const auto params = model.parameters();
  const auto bs = static_cast<std::size_t>(cfg.batch_size);
  const std::size_t steps = (train_idx.size() + bs - 1) / bs;
  const double ref_lr = moe ? cfg.lr.experts : cfg.lr.dense;

  TrainResult result;
  auto best_state = model.state();
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (epoch >= cfg.encoder_warm_epochs && !model.location_encoder().frozen()) model.location_encoder().set_frozen(true);
    rng.shuffle(train_idx);
    double loss_sum = 0;
    double mult = 1.0;
    for (std::size_t s = 0; s < steps; ++s) {
      const std::vector<std::size_t> batch(train_idx.begin() + static_cast<long>(s * bs),
                                           train_idx.begin() + static_cast<long>(std::min(train_idx.size(), (s + 1) * bs)));
      mult = lr_multiplier(epoch + static_cast<double>(s) / static_cast<double>(steps), cfg.warmup_epochs, cfg.epochs);
      for (auto* p : params) p->zero_grad();
      const Var<T> loss = total_loss(model, d, batch, cfg, rng, true);
      const double lv = static_cast<double>(loss.value()[0]);
      if (!std::isfinite(lv)) {
        model.load_state(best_state);
        result.diverged = true;
        result.message = "non-finite loss at epoch " + std::to_string(epoch) + " step " + std::to_string(s) +
                         "; restored last good weights";
        return result;
      }
      backward(loss);
      for (auto* p : params) adamw_step(*p, group_lr(cfg.lr, p->group(), moe) * mult, cfg);
      for (auto& l : model.layers()) {
        if (l.moe) l.moe->gate().refresh();
      }
      loss_sum += lv * static_cast<double>(batch.size());
    }
    const auto tr = evaluate(model, d, train_idx);
    const auto va = evaluate(model, d, val_idx);
    result.log.push_back({epoch, "train", loss_sum / static_cast<double>(train_idx.size()), tr.accuracy, ref_lr * mult});
    result.log.push_back({epoch, "val", va.loss, va.accuracy, ref_lr * mult});
    if (va.accuracy > result.best_val_acc) {
      result.best_val_acc = va.accuracy;
      result.best_epoch = epoch;
      best_state = model.state();
      if (on_best) on_best(model, epoch);
    }
  }
  model.load_state(best_state);
  return result;
}

void write_train_log(const std::vector<LogRow>& log, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write " + path.string());
  out << "epoch,split,loss,acc,lr\n" << std::setprecision(8);
  for (const auto& r : log) out << r.epoch << ',' << r.split << ',' << r.loss << ',' << r.acc << ',' << r.lr << '\n';
}

#define GEOMOE_INSTANTIATE_TRAIN(T)                                                                              \
  template void adamw_step(Parameter<T>&, double, const TrainConfig&);                                          \
  template Tensor<T> make_batch(const Dataset&, const std::vector<std::size_t>&, bool, const TrainConfig&, Rng*); \
  template Var<T> total_loss(const GeoModel<T>&, const Dataset&, const std::vector<std::size_t>&,                \
                             const TrainConfig&, Rng&, bool, LossParts*);                                        \
  template EvalResult evaluate(const GeoModel<T>&, const Dataset&, const std::vector<std::size_t>&,             \
                               const AblationSet*, std::size_t);                                                 \
  template TrainResult train(GeoModel<T>&, const Dataset&, const TrainConfig&,                                   \
                             const std::function<void(const GeoModel<T>&, int)>&);

GEOMOE_INSTANTIATE_TRAIN(float)
GEOMOE_INSTANTIATE_TRAIN(double)

}  // namespace geomoe
