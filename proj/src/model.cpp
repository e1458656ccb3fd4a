#include "geomoe/model.hpp"

#include <algorithm>
#include <set>

namespace geomoe {

void ModelConfig::validate() const {
  if (image_size <= 0 || patch_size <= 0 || channels <= 0) throw ConfigError("image/patch sizes must be positive");
  if (image_size % patch_size != 0) throw ConfigError("image_size must be a multiple of patch_size");
  if (blocks.empty()) throw ConfigError("model needs at least one block");
  for (const auto& b : blocks) {
    if (b.num_layers < 1 || b.dim < 1 || b.heads < 1) throw ConfigError("block layers/dim/heads must be >= 1");
    if (b.dim % b.heads != 0) {
      throw ConfigError("block dim " + std::to_string(b.dim) + " not divisible by " + std::to_string(b.heads) + " heads");
    }
  }
  if (num_classes < 2) throw ConfigError("num_classes must be >= 2");
  if (mlp_ratio < 1) throw ConfigError("mlp_ratio must be >= 1");
  if (classifier.expand_dim < 1 || classifier.bottleneck_dim < 1) throw ConfigError("classifier dims must be >= 1");
  const int L = num_layers();
  std::set<int> seen;
  for (int l : expert_layers) {
    if (l < 0 || l >= L) {
      throw ConfigError("expert layer " + std::to_string(l) + " outside 0.." + std::to_string(L - 1));
    }
    if (!seen.insert(l).second) throw ConfigError("duplicate expert layer " + std::to_string(l));
  }
  locenc.validate();
  if (loc_dropout < 0.0 || loc_dropout >= 1.0) throw ConfigError("loc_dropout must be in [0,1)");
}

int ModelConfig::num_layers() const {
  int n = 0;
  for (const auto& b : blocks) n += b.num_layers;
  return n;
}

int ModelConfig::num_patches() const {
  const int g = image_size / patch_size;
  return g * g;
}

std::size_t ModelConfig::block_of_layer(int layer) const {
  int acc = 0;
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    acc += blocks[b].num_layers;
    if (layer < acc) return b;
  }
  throw ConfigError("layer " + std::to_string(layer) + " out of range");
}

std::vector<std::size_t> ModelConfig::block_dims() const {
  std::vector<std::size_t> d;
  for (const auto& b : blocks) d.push_back(static_cast<std::size_t>(b.dim));
  return d;
}

template <typename T>
Tensor<T> patchify(const Tensor<T>& images, int patch_size) {
  if (images.rank() != 4) throw ConfigError("images must be [B,C,H,W], got " + shape_str(images.shape()));
  const std::size_t B = images.dim(0), C = images.dim(1), H = images.dim(2), W = images.dim(3);
  const auto ps = static_cast<std::size_t>(patch_size);
  if (H % ps != 0 || W % ps != 0) throw ConfigError("image " + shape_str(images.shape()) + " not divisible into patches");
  const std::size_t gh = H / ps, gw = W / ps, F = C * ps * ps;
  Tensor<T> out({B, gh * gw, F});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t py = 0; py < gh; ++py)
      for (std::size_t px = 0; px < gw; ++px) {
        T* dst = out.data() + ((b * gh * gw) + py * gw + px) * F;
        std::size_t f = 0;
        for (std::size_t c = 0; c < C; ++c)
          for (std::size_t y = 0; y < ps; ++y)
            for (std::size_t x = 0; x < ps; ++x)
              dst[f++] = images[((b * C + c) * H + py * ps + y) * W + px * ps + x];
      }
  return out;
}

template <typename T>
GeoModel<T>::GeoModel(const ModelConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(Rng::derive(cfg_.seed, 0x6d6f64656cULL));
  const auto P = static_cast<std::size_t>(cfg_.num_patches());
  const auto d0 = static_cast<std::size_t>(cfg_.blocks[0].dim);
  patch_embed_ = Linear<T>("embed.patch", ParamGroup::backbone, static_cast<std::size_t>(cfg_.patch_features()), d0, rng);
  Tensor<T> pos({P, d0});
  for (auto& v : pos.vec()) v = static_cast<T>(0.02 * rng.normal());
  pos_ = Parameter<T>("embed.pos", ParamGroup::backbone, std::move(pos));

  int layer = 0;
  for (std::size_t b = 0; b < cfg_.blocks.size(); ++b) {
    const auto& bc = cfg_.blocks[b];
    const auto dim = static_cast<std::size_t>(bc.dim);
    if (b > 0) {
      transitions_.emplace_back("embed.block" + std::to_string(b), ParamGroup::backbone,
                                static_cast<std::size_t>(cfg_.blocks[b - 1].dim), dim, rng);
    }
    for (int i = 0; i < bc.num_layers; ++i, ++layer) {
      const std::string name = "layer" + std::to_string(layer);
      Layer l;
      l.block = b;
      l.attn = Mhsa<T>(name + ".attn", ParamGroup::backbone, dim, static_cast<std::size_t>(bc.heads), rng);
      l.norm = LayerNorm<T>(name + ".norm", ParamGroup::backbone, dim);
      const auto hidden = dim * static_cast<std::size_t>(cfg_.mlp_ratio);
      l.fc1 = Linear<T>(name + ".mlp.fc1", ParamGroup::backbone, dim, hidden, rng, std::sqrt(2.0));
      l.fc2 = Linear<T>(name + ".mlp.fc2", ParamGroup::backbone, hidden, dim, rng, 0.5);
      layers_.push_back(std::move(l));
    }
  }
  const auto dl = static_cast<std::size_t>(cfg_.blocks.back().dim);
  final_norm_ = LayerNorm<T>("final_norm", ParamGroup::backbone, dl);
  const auto ex = static_cast<std::size_t>(cfg_.classifier.expand_dim);
  const auto bn = static_cast<std::size_t>(cfg_.classifier.bottleneck_dim);
  head_expand_ = Linear<T>("head.expand", ParamGroup::head, dl, ex, rng, std::sqrt(2.0));
  head_bottleneck_ = Linear<T>("head.bottleneck", ParamGroup::head, ex, bn, rng);
  head_out_ = Linear<T>("head.out", ParamGroup::head, bn, static_cast<std::size_t>(cfg_.num_classes), rng);

  locenc_ = LocationEncoder<T>(cfg_.locenc, rng);
  projectors_ = BlockProjectors<T>(static_cast<std::size_t>(cfg_.locenc.out_dim), cfg_.block_dims(), cfg_.loc_dropout, rng);
}

template <typename T>
ForwardResult<T> GeoModel<T>::forward(const Tensor<T>& images, const ForwardOptions& opts) const {
  const auto expect = Shape{images.rank() == 4 ? images.dim(0) : 0, static_cast<std::size_t>(cfg_.channels),
                            static_cast<std::size_t>(cfg_.image_size), static_cast<std::size_t>(cfg_.image_size)};
  if (images.rank() != 4 || images.shape() != expect) {
    throw ConfigError("image batch " + shape_str(images.shape()) + " does not match model input " + shape_str(expect));
  }
  if (opts.train && !opts.rng) throw StateError("training forward needs an rng");

  ForwardResult<T> res;
  res.routes.resize(layers_.size());
  if (opts.hooks) res.pre_mlp.resize(layers_.size());

  Var<T> x = add_per_patch(patch_embed_(constant(patchify(images, cfg_.patch_size))), pos_.var());
  std::size_t block = 0;
  for (std::size_t li = 0; li < layers_.size(); ++li) {
    const Layer& l = layers_[li];
    if (l.block != block) {
      block = l.block;
      x = transitions_[block - 1](x);
    }
    Var<T> h = l.norm(add(l.attn(x), x));
    if (opts.hooks) res.pre_mlp[li] = h;
    if (l.moe) {
      std::set<int> extra;
      if (opts.ablation) {
        for (const auto& node : *opts.ablation) {
          if (node.layer == static_cast<int>(li)) extra.insert(node.expert);
        }
      }
      x = l.moe->forward(h, &res.routes[li], &extra);
    } else {
      x = add(h, l.fc2(relu(l.fc1(h))));
    }
  }
  Var<T> pooled = mean_over_patches(final_norm_(x));
  Rng dummy(0);
  Rng& rng = opts.rng ? *opts.rng : dummy;
  Var<T> z = dropout(relu(head_expand_(pooled)), cfg_.classifier.dropout, rng, opts.train);
  res.logits = head_out_(head_bottleneck_(z));
  return res;
}

template <typename T>
bool GeoModel<T>::is_moe() const {
  return std::any_of(layers_.begin(), layers_.end(), [](const Layer& l) { return l.moe.has_value(); });
}

template <typename T>
std::vector<int> GeoModel<T>::moe_layer_indices() const {
  std::vector<int> out;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (layers_[i].moe) out.push_back(static_cast<int>(i));
  }
  return out;
}

template <typename T>
int GeoModel<T>::num_experts() const {
  for (const auto& l : layers_) {
    if (l.moe) return static_cast<int>(l.moe->num_experts());
  }
  return 0;
}

template <typename T>
void GeoModel<T>::install_moe(int layer, MoELayer<T> moe) {
  if (layer < 0 || static_cast<std::size_t>(layer) >= layers_.size()) {
    throw ConfigError("cannot install experts at layer " + std::to_string(layer));
  }
  auto& l = layers_[static_cast<std::size_t>(layer)];
  if (moe.gate().dim() != static_cast<std::size_t>(cfg_.blocks[l.block].dim)) {
    throw DimensionError("expert layer dim does not match layer " + std::to_string(layer));
  }
  l.moe = std::move(moe);
  l.fc1 = Linear<T>();
  l.fc2 = Linear<T>();
}

template <typename T>
std::size_t GeoModel<T>::dense_mlp_parameter_count(int layer) const {
  const auto& l = layers_.at(static_cast<std::size_t>(layer));
  if (l.moe) return 0;
  return l.fc1.weight.value().size() + l.fc1.bias.value().size() + l.fc2.weight.value().size() +
         l.fc2.bias.value().size();
}

template <typename T>
void GeoModel<T>::visit(const ParamVisitor<T>& f) {
  patch_embed_.visit(f);
  f(pos_);
  for (auto& t : transitions_) t.visit(f);
  for (auto& l : layers_) {
    l.attn.visit(f);
    l.norm.visit(f);
    if (l.moe) {
      l.moe->visit(f);
    } else {
      l.fc1.visit(f);
      l.fc2.visit(f);
    }
  }
  final_norm_.visit(f);
  head_expand_.visit(f);
  head_bottleneck_.visit(f);
  head_out_.visit(f);
  locenc_.visit(f);
  projectors_.visit(f);
}

template <typename T>
std::vector<Parameter<T>*> GeoModel<T>::parameters() {
  std::vector<Parameter<T>*> out;
  visit([&](Parameter<T>& p) { out.push_back(&p); });
  return out;
}

template <typename T>
std::size_t GeoModel<T>::parameter_count() {
  std::size_t n = 0;
  visit([&](Parameter<T>& p) { n += p.value().size(); });
  return n;
}

template <typename T>
std::map<std::string, Tensor<T>> GeoModel<T>::state() const {
  std::map<std::string, Tensor<T>> s;
  const_cast<GeoModel*>(this)->visit([&](Parameter<T>& p) { s.emplace(p.name(), p.value()); });
  return s;
}

template <typename T>
void GeoModel<T>::load_state(const std::map<std::string, Tensor<T>>& s) {
  std::size_t used = 0;
  visit([&](Parameter<T>& p) {
    auto it = s.find(p.name());
    if (it == s.end()) throw StateError("checkpoint is missing tensor '" + p.name() + "'");
    if (it->second.shape() != p.value().shape()) {
      throw StateError("tensor '" + p.name() + "' has shape " + shape_str(it->second.shape()) + ", expected " +
                       shape_str(p.value().shape()));
    }
    p.mutable_value() = it->second;
    ++used;
  });
  if (used != s.size()) throw StateError("checkpoint holds tensors the model does not use");
  for (auto& l : layers_) {
    if (l.moe) l.moe->gate().refresh();
  }
}

template <typename T>
GeoModel<T> GeoModel<T>::clone() const {
  GeoModel m;
  m.cfg_ = cfg_;
  m.patch_embed_ = patch_embed_.clone();
  m.pos_ = pos_.clone();
  for (const auto& t : transitions_) m.transitions_.push_back(t.clone());
  for (const auto& l : layers_) {
    Layer c;
    c.block = l.block;
    c.attn = l.attn.clone();
    c.norm = l.norm.clone();
    if (l.moe) {
      c.moe = l.moe->clone();
    } else {
      c.fc1 = l.fc1.clone();
      c.fc2 = l.fc2.clone();
    }
    m.layers_.push_back(std::move(c));
  }
  m.final_norm_ = final_norm_.clone();
  m.head_expand_ = head_expand_.clone();
  m.head_bottleneck_ = head_bottleneck_.clone();
  m.head_out_ = head_out_.clone();
  m.locenc_ = locenc_.clone();
  m.projectors_ = projectors_.clone();
  return m;
}

template Tensor<float> patchify(const Tensor<float>&, int);
template Tensor<double> patchify(const Tensor<double>&, int);
template class GeoModel<float>;
template class GeoModel<double>;

}  // namespace geomoe
