#include "geomoe/config.hpp"

#include <cstdlib>
#include <fstream>
#include <set>

namespace geomoe {

using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

RunConfig::RunConfig() { apply_seed(); }

void RunConfig::apply_seed() {
  data.seed = seed;
  model.seed = seed;
  train.seed = Rng::derive(seed, 1);
  finetune.seed = Rng::derive(seed, 2);
}

void RunConfig::validate() const {
  data.validate();
  model.validate();
  train.validate();
  finetune.validate();
  if (data.num_classes != model.num_classes) throw ConfigError("data.num_classes must equal model.num_classes");
  if (data.image_size != model.image_size || data.channels != model.channels) {
    throw ConfigError("data image_size/channels must match the model");
  }
  if (moe.num_experts < 2) throw ConfigError("moe.num_experts must be >= 2");
  if (moe.hidden < 1) throw ConfigError("moe.hidden must be >= 1");
  if (moe.gate_rank < 0) throw ConfigError("moe.gate_rank must be >= 0");
  if (moe.refine_iters < 0 || moe.min_class_count < 1) throw ConfigError("moe.refine_iters >= 0 and min_class_count >= 1");
  if (analysis.cell_level < 0 || analysis.cell_level > CellId::kMaxLevel) throw ConfigError("analysis.cell_level out of range");
  if (!analysis.location.empty()) (void)CellId::parse(analysis.location);
  for (double p : analysis.prune_percentiles)
    if (p < 0 || p > 100) throw ConfigError("prune percentiles must be in [0,100]");
  if (analysis.grid_points < 1 || analysis.n_max < 1) throw ConfigError("analysis grid_points and n_max must be >= 1");
}

namespace {

// Reads known keys and rejects the rest.
class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + " must be an object");
  }

  template <typename V>
  void get(const char* key, V& out) {
    if (!j_.contains(key)) return;
    seen_.insert(key);
    try {
      out = j_.at(key).get<V>();
    } catch (const json::exception&) {
      throw ConfigError(where(key) + " has the wrong type");
    }
  }

  const json* sub(const char* key) {
    if (!j_.contains(key)) return nullptr;
    seen_.insert(key);
    return &j_.at(key);
  }

  std::string where(const char* key = nullptr) const {
    std::string w = path_.empty() ? "config" : path_;
    if (key) w += std::string(path_.empty() ? ":" : ".") + key;
    return w;
  }

  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.count(k)) throw ConfigError("unknown key '" + (path_.empty() ? k : path_ + "." + k) + "'");
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

ojson to_json(const LatLng& p) { return {{"lat", p.lat}, {"lng", p.lng}}; }

ojson data_json(const SyntheticConfig& c) {
  ojson a = ojson::array();
  for (const auto& x : c.anchors) a.push_back({{"center", to_json(x.center)}, {"num_classes", x.num_classes}, {"spread", x.spread}});
  return {{"num_classes", c.num_classes},
          {"image_size", c.image_size},
          {"channels", c.channels},
          {"patch_size", c.patch_size},
          {"samples_per_class", c.samples_per_class},
          {"min_samples_per_class", c.min_samples_per_class},
          {"imbalanced", c.imbalanced},
          {"imbalance_exponent", c.imbalance_exponent},
          {"pareto_alpha", c.pareto_alpha},
          {"radius_min", c.radius_min},
          {"radius_max", c.radius_max},
          {"noise", c.noise},
          {"split_fractions", c.split_fractions},
          {"anchors", a}};
}

void read_latlng(const json& j, const std::string& path, LatLng& p) {
  Reader r(j, path);
  r.get("lat", p.lat);
  r.get("lng", p.lng);
  r.finish();
}

void read_data(const json& j, SyntheticConfig& c) {
  Reader r(j, "data");
  r.get("num_classes", c.num_classes);
  r.get("image_size", c.image_size);
  r.get("channels", c.channels);
  r.get("patch_size", c.patch_size);
  r.get("samples_per_class", c.samples_per_class);
  r.get("min_samples_per_class", c.min_samples_per_class);
  r.get("imbalanced", c.imbalanced);
  r.get("imbalance_exponent", c.imbalance_exponent);
  r.get("pareto_alpha", c.pareto_alpha);
  r.get("radius_min", c.radius_min);
  r.get("radius_max", c.radius_max);
  r.get("noise", c.noise);
  r.get("split_fractions", c.split_fractions);
  if (const json* a = r.sub("anchors")) {
    if (!a->is_array()) throw ConfigError("data.anchors must be an array");
    c.anchors.clear();
    for (std::size_t i = 0; i < a->size(); ++i) {
      const std::string path = "data.anchors[" + std::to_string(i) + "]";
      Reader ar((*a)[i], path);
      RegionAnchor x;
      if (const json* ctr = ar.sub("center")) read_latlng(*ctr, path + ".center", x.center);
      ar.get("num_classes", x.num_classes);
      ar.get("spread", x.spread);
      ar.finish();
      c.anchors.push_back(x);
    }
  }
  r.finish();
}

ojson model_json(const ModelConfig& c) {
  ojson blocks = ojson::array();
  for (const auto& b : c.blocks) blocks.push_back({{"num_layers", b.num_layers}, {"dim", b.dim}, {"heads", b.heads}});
  return {{"image_size", c.image_size},
          {"patch_size", c.patch_size},
          {"channels", c.channels},
          {"blocks", blocks},
          {"num_classes", c.num_classes},
          {"mlp_ratio", c.mlp_ratio},
          {"classifier",
           {{"expand_dim", c.classifier.expand_dim},
            {"bottleneck_dim", c.classifier.bottleneck_dim},
            {"dropout", c.classifier.dropout}}},
          {"expert_layers", c.expert_layers},
          {"locenc",
           {{"num_scales", c.locenc.num_scales},
            {"r_min", c.locenc.r_min},
            {"r_max", c.locenc.r_max},
            {"ffn_hidden", c.locenc.ffn_hidden},
            {"out_dim", c.locenc.out_dim}}},
          {"loc_dropout", c.loc_dropout}};
}

void read_model(const json& j, ModelConfig& c) {
  Reader r(j, "model");
  r.get("image_size", c.image_size);
  r.get("patch_size", c.patch_size);
  r.get("channels", c.channels);
  if (const json* b = r.sub("blocks")) {
    if (!b->is_array()) throw ConfigError("model.blocks must be an array");
    c.blocks.clear();
    for (std::size_t i = 0; i < b->size(); ++i) {
      Reader br((*b)[i], "model.blocks[" + std::to_string(i) + "]");
      BlockConfig bc;
      br.get("num_layers", bc.num_layers);
      br.get("dim", bc.dim);
      br.get("heads", bc.heads);
      br.finish();
      c.blocks.push_back(bc);
    }
  }
  r.get("num_classes", c.num_classes);
  r.get("mlp_ratio", c.mlp_ratio);
  if (const json* k = r.sub("classifier")) {
    Reader kr(*k, "model.classifier");
    kr.get("expand_dim", c.classifier.expand_dim);
    kr.get("bottleneck_dim", c.classifier.bottleneck_dim);
    kr.get("dropout", c.classifier.dropout);
    kr.finish();
  }
  r.get("expert_layers", c.expert_layers);
  if (const json* l = r.sub("locenc")) {
    Reader lr(*l, "model.locenc");
    lr.get("num_scales", c.locenc.num_scales);
    lr.get("r_min", c.locenc.r_min);
    lr.get("r_max", c.locenc.r_max);
    lr.get("ffn_hidden", c.locenc.ffn_hidden);
    lr.get("out_dim", c.locenc.out_dim);
    lr.finish();
  }
  r.get("loc_dropout", c.loc_dropout);
  r.finish();
}

ojson train_json(const TrainConfig& c) {
  return {{"epochs", c.epochs},
          {"warmup_epochs", c.warmup_epochs},
          {"batch_size", c.batch_size},
          {"weight_decay", c.weight_decay},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"adam_eps", c.adam_eps},
          {"lr",
           {{"experts", c.lr.experts},
            {"head", c.lr.head},
            {"backbone", c.lr.backbone},
            {"loc_proj", c.lr.loc_proj},
            {"dense", c.lr.dense}}},
          {"mixup_alpha", c.mixup_alpha},
          {"label_smoothing", c.label_smoothing},
          {"contrastive_weight", c.contrastive_weight},
          {"contrastive_tau", c.contrastive_tau},
          {"loc_blocks", std::string(loc_blocks_name(c.loc_blocks))},
          {"encoder_warm_epochs", c.encoder_warm_epochs},
          {"hflip", c.hflip},
          {"crop_pad", c.crop_pad}};
}

void read_train(const json& j, const char* path, TrainConfig& c) {
  Reader r(j, path);
  r.get("epochs", c.epochs);
  r.get("warmup_epochs", c.warmup_epochs);
  r.get("batch_size", c.batch_size);
  r.get("weight_decay", c.weight_decay);
  r.get("beta1", c.beta1);
  r.get("beta2", c.beta2);
  r.get("adam_eps", c.adam_eps);
  if (const json* l = r.sub("lr")) {
    Reader lr(*l, std::string(path) + ".lr");
    lr.get("experts", c.lr.experts);
    lr.get("head", c.lr.head);
    lr.get("backbone", c.lr.backbone);
    lr.get("loc_proj", c.lr.loc_proj);
    lr.get("dense", c.lr.dense);
    lr.finish();
  }
  r.get("mixup_alpha", c.mixup_alpha);
  r.get("label_smoothing", c.label_smoothing);
  r.get("contrastive_weight", c.contrastive_weight);
  r.get("contrastive_tau", c.contrastive_tau);
  std::string loc = std::string(loc_blocks_name(c.loc_blocks));
  r.get("loc_blocks", loc);
  c.loc_blocks = loc_blocks_from_name(loc);
  r.get("encoder_warm_epochs", c.encoder_warm_epochs);
  r.get("hflip", c.hflip);
  r.get("crop_pad", c.crop_pad);
  r.finish();
}

ojson moe_json(const MoEConfig& c) {
  return {{"num_experts", c.num_experts},
          {"hidden", c.hidden},
          {"gate_rank", c.gate_rank},
          {"temperature", c.temperature},
          {"gate_trainable", c.gate_trainable},
          {"refine_iters", c.refine_iters},
          {"min_class_count", c.min_class_count},
          {"balance_classes", c.balance_classes}};
}

void read_moe(const json& j, MoEConfig& c) {
  Reader r(j, "moe");
  r.get("num_experts", c.num_experts);
  r.get("hidden", c.hidden);
  r.get("gate_rank", c.gate_rank);
  r.get("temperature", c.temperature);
  r.get("gate_trainable", c.gate_trainable);
  r.get("refine_iters", c.refine_iters);
  r.get("min_class_count", c.min_class_count);
  r.get("balance_classes", c.balance_classes);
  r.finish();
}

ojson analysis_json(const AnalysisConfig& c) {
  return {{"cell_level", c.cell_level},
          {"location", c.location},
          {"percentiles", c.percentiles},
          {"prune_percentiles", c.prune_percentiles},
          {"per_layer_percentile", c.per_layer_percentile},
          {"coverage_threshold", c.coverage_threshold},
          {"grid_points", c.grid_points},
          {"n_max", c.n_max},
          {"max_level", c.max_level}};
}

void read_analysis(const json& j, AnalysisConfig& c) {
  Reader r(j, "analysis");
  r.get("cell_level", c.cell_level);
  r.get("location", c.location);
  r.get("percentiles", c.percentiles);
  r.get("prune_percentiles", c.prune_percentiles);
  r.get("per_layer_percentile", c.per_layer_percentile);
  r.get("coverage_threshold", c.coverage_threshold);
  r.get("grid_points", c.grid_points);
  r.get("n_max", c.n_max);
  r.get("max_level", c.max_level);
  r.finish();
}

}  // namespace

ojson to_json(const RunConfig& c) {
  return {{"seed", c.seed},
          {"data", data_json(c.data)},
          {"model", model_json(c.model)},
          {"train", train_json(c.train)},
          {"finetune", train_json(c.finetune)},
          {"moe", moe_json(c.moe)},
          {"analysis", analysis_json(c.analysis)}};
}

RunConfig run_config_from_json(const json& j) {
  RunConfig c;
  Reader r(j, "");
  r.get("seed", c.seed);
  if (const json* s = r.sub("data")) read_data(*s, c.data);
  if (const json* s = r.sub("model")) read_model(*s, c.model);
  if (const json* s = r.sub("train")) read_train(*s, "train", c.train);
  if (const json* s = r.sub("finetune")) read_train(*s, "finetune", c.finetune);
  if (const json* s = r.sub("moe")) read_moe(*s, c.moe);
  if (const json* s = r.sub("analysis")) read_analysis(*s, c.analysis);
  r.finish();
  c.apply_seed();
  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  if (const char* env = std::getenv("GEOMOE_SEED")) {
    char* end = nullptr;
    const unsigned long long s = std::strtoull(env, &end, 10);
    if (!*env || *end) throw ConfigError("GEOMOE_SEED must be an unsigned integer");
    j["seed"] = s;
  }
  return run_config_from_json(j);
}

void save_run_config(const RunConfig& c, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write " + path.string());
  out << to_json(c).dump(2) << '\n';
}

}  // namespace geomoe
