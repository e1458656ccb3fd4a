#include <gtest/gtest.h>

#include <cmath>

#include "geomoe/gradcheck.hpp"
#include "geomoe/locenc.hpp"

using namespace geomoe;

TEST(MultiscaleFeatures, OriginPattern) {
  GridEncoderConfig cfg;
  cfg.num_scales = 5;
  const auto f = multiscale_features({0, 0}, cfg);
  ASSERT_EQ(f.size(), 20u);
  for (std::size_t k = 0; k < 5; ++k) {
    EXPECT_EQ(f[4 * k + 0], 0.0);
    EXPECT_EQ(f[4 * k + 1], 1.0);
    EXPECT_EQ(f[4 * k + 2], 0.0);
    EXPECT_EQ(f[4 * k + 3], 1.0);
  }
}

TEST(MultiscaleFeatures, ScaleLadder) {
  GridEncoderConfig a{2, 0.1, 1.0, 8, 4};
  const auto s = a.scales();
  ASSERT_EQ(s.size(), 2u);
  EXPECT_NEAR(s[0], 0.1, 1e-15);
  EXPECT_NEAR(s[1], 1.0, 1e-15);
  GridEncoderConfig b{3, 0.01, 1.0, 8, 4};
  EXPECT_NEAR(b.scales()[1], 0.1, 1e-12);
  GridEncoderConfig d;
  EXPECT_EQ(d.num_scales, 16);
  EXPECT_NEAR(d.scales().front(), 0.01, 1e-15);
  EXPECT_NEAR(d.scales().back(), M_PI, 1e-12);
}

TEST(MultiscaleFeatures, ClosedFormAndBounded) {
  GridEncoderConfig cfg{4, 0.05, M_PI, 8, 4};
  Rng rng(1);
  for (int n = 0; n < 200; ++n) {
    const LatLng p{rng.uniform(-90, 90), rng.uniform(-180, 180)};
    const auto f = multiscale_features(p, cfg);
    const auto s = cfg.scales();
    const double lam = p.lng * M_PI / 180, phi = p.lat * M_PI / 180;
    for (std::size_t k = 0; k < s.size(); ++k) {
      EXPECT_NEAR(f[4 * k + 0], std::sin(lam / s[k]), 1e-12);
      EXPECT_NEAR(f[4 * k + 1], std::cos(lam / s[k]), 1e-12);
      EXPECT_NEAR(f[4 * k + 2], std::sin(phi / s[k]), 1e-12);
      EXPECT_NEAR(f[4 * k + 3], std::cos(phi / s[k]), 1e-12);
    }
    for (double v : f) {
      EXPECT_GE(v, -1.0);
      EXPECT_LE(v, 1.0);
    }
  }
}

TEST(GridEncoderConfig, Validation) {
  EXPECT_THROW((GridEncoderConfig{1, 0.01, 1, 8, 4}).validate(), ConfigError);
  EXPECT_THROW((GridEncoderConfig{4, 0.0, 1, 8, 4}).validate(), ConfigError);
  EXPECT_THROW((GridEncoderConfig{4, 1.0, 0.5, 8, 4}).validate(), ConfigError);
  EXPECT_THROW((GridEncoderConfig{4, 0.01, 1, 0, 4}).validate(), ConfigError);
  EXPECT_NO_THROW((GridEncoderConfig{4, 0.01, 1, 8, 4}).validate());
}

TEST(LocationEncoder, DeterministicShapeAndAntipodes) {
  GridEncoderConfig cfg{8, 0.01, M_PI, 32, 24};
  Rng rng(7);
  LocationEncoder<double> enc(cfg, rng);
  const auto a = enc.encode(LatLng{30, 40});
  EXPECT_EQ(a.size(), 24u);
  EXPECT_EQ(a, enc.encode(LatLng{30, 40}));
  const auto b = enc.encode(LatLng{-30, -140});
  double d = 0;
  for (std::size_t i = 0; i < a.size(); ++i) d += (a[i] - b[i]) * (a[i] - b[i]);
  EXPECT_GT(d, 0.0);
  const auto batch = enc.encode(std::vector<LatLng>{{30, 40}, {-30, -140}});
  EXPECT_EQ(batch.shape(), (Shape{2, 24}));
  for (std::size_t i = 0; i < 24; ++i) EXPECT_EQ(batch.value()[i], a[i]);
}

TEST(LocationEncoder, GradientThroughFfn) {
  GridEncoderConfig cfg{4, 0.1, M_PI, 6, 5};
  Rng rng(3);
  LocationEncoder<double> enc(cfg, rng);
  std::vector<Var<double>> leaves;
  enc.visit([&](Parameter<double>& p) { leaves.push_back(p.var()); });
  const std::vector<LatLng> xs{{10, 20}, {-45, 170}, {60, -100}};
  Tensor<double> w({3, 5});
  for (auto& v : w.vec()) v = rng.normal();
  auto r = finite_diff_check<double>([&] { return sum(mul(enc.encode(xs), constant(w))); }, leaves);
  EXPECT_LE(r.max_rel_error, 1e-6);
}

TEST(LocationEncoder, FreezeFlag) {
  Rng rng(0);
  LocationEncoder<float> enc(GridEncoderConfig{4, 0.1, M_PI, 6, 5}, rng);
  enc.set_frozen(true);
  EXPECT_TRUE(enc.frozen());
  bool all = true;
  enc.visit([&](Parameter<float>& p) { all = all && p.frozen(); });
  EXPECT_TRUE(all);
}

TEST(BlockProjectors, EvalDeterministicAndNonNegative) {
  Rng rng(4);
  BlockProjectors<double> proj(12, {8, 16}, 0.3, rng);
  EXPECT_EQ(proj.num_blocks(), 2u);
  Tensor<double> e({5, 12});
  for (auto& v : e.vec()) v = rng.normal();
  Rng r1(1), r2(2);
  const auto a = proj.project(constant(e), 1, false, r1).value();
  const auto b = proj.project(constant(e), 1, false, r2).value();
  EXPECT_EQ(a.shape(), (Shape{5, 16}));
  EXPECT_EQ(a.vec(), b.vec());
  for (double v : a.vec()) EXPECT_GE(v, 0.0);
}

TEST(BlockProjectors, TrainDropoutRate) {
  Rng rng(5);
  BlockProjectors<double> proj(4, {1}, 0.3, rng);
  // A constant input row gives the same projected value every time; count how
  // often dropout zeroes it.
  Tensor<double> e({10000, 4});
  for (std::size_t r = 0; r < 10000; ++r) {
    for (std::size_t c = 0; c < 4; ++c) e.at(r, c) = c == 0 ? 1.0 : -1.0;
  }
  const auto ev = proj.project(constant(e), 0, false, rng).value();
  if (ev[0] <= 0) GTEST_SKIP() << "seeded projector maps the probe to zero";
  Rng dr(11);
  const auto t = proj.project(constant(e), 0, true, dr).value();
  std::size_t zeros = 0;
  for (double v : t.vec()) zeros += v == 0 ? 1 : 0;
  EXPECT_GE(zeros / 10000.0, 0.27);
  EXPECT_LE(zeros / 10000.0, 0.33);
}
