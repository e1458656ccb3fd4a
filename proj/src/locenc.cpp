#include "geomoe/locenc.hpp"

namespace geomoe {

void GridEncoderConfig::validate() const {
  if (!(r_min > 0.0 && r_min < r_max)) throw ConfigError("location encoder needs 0 < r_min < r_max");
  if (num_scales < 2) throw ConfigError("location encoder needs at least 2 scales");
  if (out_dim < 1 || ffn_hidden < 1) throw ConfigError("location encoder dims must be >= 1");
}

std::vector<double> GridEncoderConfig::scales() const {
  validate();
  const double g = std::pow(r_max / r_min, 1.0 / static_cast<double>(num_scales - 1));
  std::vector<double> s(static_cast<std::size_t>(num_scales));
  for (int k = 0; k < num_scales; ++k) s[static_cast<std::size_t>(k)] = r_min * std::pow(g, k);
  return s;
}

std::vector<double> multiscale_features(const LatLng& x, const GridEncoderConfig& cfg) {
  x.validate();
  const double lam = x.lng * M_PI / 180.0;
  const double phi = x.lat * M_PI / 180.0;
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(4 * cfg.num_scales));
  for (double s : cfg.scales()) {
    out.push_back(std::sin(lam / s));
    out.push_back(std::cos(lam / s));
    out.push_back(std::sin(phi / s));
    out.push_back(std::cos(phi / s));
  }
  return out;
}

template <typename T>
LocationEncoder<T>::LocationEncoder(const GridEncoderConfig& cfg, Rng& rng) : cfg_(cfg), initialized_(true) {
  cfg_.validate();
  const auto feat = static_cast<std::size_t>(4 * cfg_.num_scales);
  hidden_ = Linear<T>("locenc.ffn0", ParamGroup::loc_proj, feat, static_cast<std::size_t>(cfg_.ffn_hidden), rng,
                      std::sqrt(2.0));
  out_ = Linear<T>("locenc.ffn1", ParamGroup::loc_proj, static_cast<std::size_t>(cfg_.ffn_hidden),
                   static_cast<std::size_t>(cfg_.out_dim), rng);
}

template <typename T>
void LocationEncoder<T>::set_frozen(bool f) {
  frozen_ = f;
  visit([f](Parameter<T>& p) { p.set_frozen(f); });
}

template <typename T>
Var<T> LocationEncoder<T>::encode(const std::vector<LatLng>& xs) const {
  if (!initialized_) throw StateError("location encoder weights are not initialized");
  const auto feat = static_cast<std::size_t>(4 * cfg_.num_scales);
  Tensor<T> in({xs.size(), feat});
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const auto f = multiscale_features(xs[i], cfg_);
    for (std::size_t k = 0; k < feat; ++k) in[i * feat + k] = static_cast<T>(f[k]);
  }
  return out_(relu(hidden_(constant(std::move(in)))));
}

template <typename T>
std::vector<T> LocationEncoder<T>::encode(const LatLng& x) const {
  NoGradGuard ng;
  return encode(std::vector<LatLng>{x}).value().vec();
}

template <typename T>
void LocationEncoder<T>::visit(const ParamVisitor<T>& f) {
  if (!initialized_) return;
  hidden_.visit(f);
  out_.visit(f);
}

template <typename T>
LocationEncoder<T> LocationEncoder<T>::clone() const {
  LocationEncoder e;
  e.cfg_ = cfg_;
  e.initialized_ = initialized_;
  e.frozen_ = frozen_;
  if (initialized_) {
    e.hidden_ = hidden_.clone();
    e.out_ = out_.clone();
  }
  return e;
}

template <typename T>
BlockProjectors<T>::BlockProjectors(std::size_t embed_dim, const std::vector<std::size_t>& block_dims,
                                    double dropout_rate, Rng& rng)
    : rate_(dropout_rate) {
  if (dropout_rate < 0.0 || dropout_rate >= 1.0) throw ConfigError("projector dropout must be in [0,1)");
  for (std::size_t b = 0; b < block_dims.size(); ++b) {
    const std::string name = "locproj." + std::to_string(b);
    norms_.emplace_back(name + ".norm", ParamGroup::loc_proj, embed_dim);
    proj_.emplace_back(name + ".linear", ParamGroup::loc_proj, embed_dim, block_dims[b], rng, std::sqrt(2.0));
  }
}

template <typename T>
std::size_t BlockProjectors<T>::block_dim(std::size_t b) const {
  if (b >= proj_.size()) throw ConfigError("unknown block index " + std::to_string(b));
  return proj_[b].out_dim();
}

template <typename T>
Var<T> BlockProjectors<T>::project(const Var<T>& embeddings, std::size_t block, bool train, Rng& rng) const {
  if (block >= proj_.size()) {
    throw ConfigError("unknown block index " + std::to_string(block) + " (have " + std::to_string(proj_.size()) + ")");
  }
  return dropout(relu(proj_[block](norms_[block](embeddings))), rate_, rng, train);
}

template <typename T>
void BlockProjectors<T>::visit(const ParamVisitor<T>& f) {
  for (std::size_t b = 0; b < proj_.size(); ++b) {
    norms_[b].visit(f);
    proj_[b].visit(f);
  }
}

template <typename T>
BlockProjectors<T> BlockProjectors<T>::clone() const {
  BlockProjectors p;
  p.rate_ = rate_;
  for (const auto& n : norms_) p.norms_.push_back(n.clone());
  for (const auto& l : proj_) p.proj_.push_back(l.clone());
  return p;
}

template class LocationEncoder<float>;
template class LocationEncoder<double>;
template class BlockProjectors<float>;
template class BlockProjectors<double>;

}  // namespace geomoe
