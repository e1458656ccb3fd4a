#pragma once

#include <cmath>
#include <vector>

#include "geomoe/geocell.hpp"
#include "geomoe/layers.hpp"

namespace geomoe {

struct GridEncoderConfig {
  int num_scales = 16;
  double r_min = 0.01;
  double r_max = M_PI;
  int ffn_hidden = 128;
  int out_dim = 256;

  void validate() const;
  // s_k = r_min * g^k with g = (r_max / r_min)^(1 / (S - 1)).
  std::vector<double> scales() const;
};

// [sin(lng/s_k), cos(lng/s_k), sin(lat/s_k), cos(lat/s_k)] for k = 0..S-1, with
// lng/lat in radians.
std::vector<double> multiscale_features(const LatLng& x, const GridEncoderConfig& cfg);

// Multi-scale sinusoidal features followed by a one-hidden-layer ReLU FFN.
template <typename T>
class LocationEncoder {
 public:
  LocationEncoder() = default;
  LocationEncoder(const GridEncoderConfig& cfg, Rng& rng);

  const GridEncoderConfig& config() const { return cfg_; }
  bool initialized() const { return initialized_; }

  // Frozen encoders keep their weights through optimizer steps.
  bool frozen() const { return frozen_; }
  void set_frozen(bool f);

  // [N, out_dim] embeddings.
  Var<T> encode(const std::vector<LatLng>& xs) const;
  std::vector<T> encode(const LatLng& x) const;

  void visit(const ParamVisitor<T>& f);
  LocationEncoder clone() const;

 private:
  GridEncoderConfig cfg_;
  Linear<T> hidden_;
  Linear<T> out_;
  bool initialized_ = false;
  bool frozen_ = false;
};

// One Norm -> Linear -> ReLU -> Dropout head per transformer block, shared by
// every layer of that block.
template <typename T>
class BlockProjectors {
 public:
  BlockProjectors() = default;
  BlockProjectors(std::size_t embed_dim, const std::vector<std::size_t>& block_dims, double dropout_rate, Rng& rng);

  std::size_t num_blocks() const { return norms_.size(); }
  std::size_t block_dim(std::size_t b) const;
  double dropout_rate() const { return rate_; }

  Var<T> project(const Var<T>& embeddings, std::size_t block, bool train, Rng& rng) const;

  void visit(const ParamVisitor<T>& f);
  BlockProjectors clone() const;

 private:
  std::vector<LayerNorm<T>> norms_;
  std::vector<Linear<T>> proj_;
  double rate_ = 0.3;
};

}  // namespace geomoe
