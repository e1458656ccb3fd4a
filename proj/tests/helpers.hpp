#pragma once

#include "geomoe/data.hpp"
#include "geomoe/model.hpp"

namespace geomoe::testing {

inline SyntheticConfig tiny_data_config(int classes = 4, std::uint64_t seed = 1) {
  SyntheticConfig c;
  c.num_classes = classes;
  c.image_size = 8;
  c.patch_size = 4;
  c.samples_per_class = 12;
  c.min_samples_per_class = 3;
  c.radius_max = 0.4;
  c.seed = seed;
  return c;
}

inline ModelConfig tiny_model_config(int classes = 4, std::uint64_t seed = 1) {
  ModelConfig m;
  m.image_size = 8;
  m.patch_size = 4;
  m.blocks = {{1, 16, 2}, {1, 16, 2}};
  m.num_classes = classes;
  m.expert_layers = {0, 1};
  m.classifier = {16, 8, 0.1};
  m.locenc = {4, 0.05, M_PI, 12, 8};
  m.seed = seed;
  return m;
}

// Hand-made dataset: class 0 dark, class 1 bright, tiny noise.
inline Dataset two_tone_dataset(std::size_t n, int image_size = 8, std::uint64_t seed = 3) {
  Dataset d;
  d.manifest.class_names = {"dark", "bright"};
  d.manifest.image_size = image_size;
  Rng rng(seed);
  for (std::size_t i = 0; i < n; ++i) {
    Record r;
    r.id = "r" + std::to_string(i);
    r.class_id = static_cast<int>(i % 2);
    r.location = {rng.uniform(-60, 60), rng.uniform(-180, 180)};
    r.split = i % 4 == 3 ? Split::val : Split::train;
    d.manifest.records.push_back(r);
    Tensor<float> img({3, static_cast<std::size_t>(image_size), static_cast<std::size_t>(image_size)});
    for (auto& v : img.vec()) v = static_cast<float>((r.class_id ? 0.8 : 0.2) + 0.05 * rng.normal());
    d.images.push_back(std::move(img));
  }
  return d;
}

inline std::vector<std::size_t> iota(std::size_t n) {
  std::vector<std::size_t> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = i;
  return v;
}

}  // namespace geomoe::testing
