#include <gtest/gtest.h>

#include <array>
#include <cmath>

#include "geomoe/data.hpp"
#include "geomoe/geocell.hpp"

using namespace geomoe;

namespace {

using V3 = std::array<double, 3>;

// Face frames (normal, u axis, v axis), written out independently of the
// library's projection code.
const std::array<std::array<V3, 3>, 6> kFrames{{
    {{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}},
    {{{0, 1, 0}, {-1, 0, 0}, {0, 0, 1}}},
    {{{0, 0, 1}, {-1, 0, 0}, {0, -1, 0}}},
    {{{-1, 0, 0}, {0, 0, -1}, {0, -1, 0}}},
    {{{0, -1, 0}, {0, 0, -1}, {1, 0, 0}}},
    {{{0, 0, -1}, {0, 1, 0}, {1, 0, 0}}},
}};

double st_to_uv(double s) { return s >= 0.5 ? (4 * s * s - 1) / 3 : (1 - 4 * (1 - s) * (1 - s)) / 3; }

V3 corner(int face, double s, double t) {
  const double u = st_to_uv(s), v = st_to_uv(t);
  const auto& f = kFrames[static_cast<std::size_t>(face)];
  return {f[0][0] + u * f[1][0] + v * f[2][0], f[0][1] + u * f[1][1] + v * f[2][1], f[0][2] + u * f[1][2] + v * f[2][2]};
}

V3 cross(const V3& a, const V3& b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}
double dot(const V3& a, const V3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }

// Point inside the spherical quadrilateral of the cell, with slack `tol` on
// every edge (negative tol = inclusive).
bool inside(const LatLng& p, const CellId& c, double tol) {
  const auto v = to_unit_vector(p);
  const V3 x{v.x, v.y, v.z};
  const auto [i, j] = c.ij();
  const double n = std::ldexp(1.0, c.level());
  const double s0 = i / n, s1 = (i + 1) / n, t0 = j / n, t1 = (j + 1) / n;
  const std::array<V3, 4> k{corner(c.face(), s0, t0), corner(c.face(), s1, t0), corner(c.face(), s1, t1),
                            corner(c.face(), s0, t1)};
  if (dot(x, kFrames[static_cast<std::size_t>(c.face())][0]) <= 0) return false;
  for (int e = 0; e < 4; ++e) {
    const V3 nrm = cross(k[e], k[(e + 1) % 4]);
    if (dot(nrm, x) / std::sqrt(dot(nrm, nrm)) < tol) return false;
  }
  return true;
}

LatLng random_point(Rng& rng) {
  const double z = rng.uniform(-1.0, 1.0);
  return {std::asin(z) * 180.0 / M_PI, rng.uniform(-180.0, 180.0)};
}

}  // namespace

TEST(CellId, OriginIsFaceZero) {
  EXPECT_EQ(cell_from_latlng({0, 0}, 0).token(), "0/");
  EXPECT_EQ(cell_from_latlng({0, 90}, 0).face(), 1);
  EXPECT_EQ(cell_from_latlng({90, 0}, 0).face(), 2);
  EXPECT_EQ(cell_from_latlng({0, 180}, 0).face(), 3);
  EXPECT_EQ(cell_from_latlng({0, -90}, 0).face(), 4);
  EXPECT_EQ(cell_from_latlng({-90, 0}, 0).face(), 5);
}

TEST(CellId, ParseToken) {
  const auto c = CellId::parse("2/03");
  EXPECT_EQ(c.face(), 2);
  EXPECT_EQ(c.level(), 2);
  EXPECT_EQ(c.path(), (std::vector<std::uint8_t>{0, 3}));
  EXPECT_EQ(c.token(), "2/03");
}

TEST(CellId, MalformedTokensRejected) {
  for (const char* t : {"", "6/", "2", "2/4", "x/0", "2-01", "1/0123012301230123012301230123012"}) {
    EXPECT_THROW(CellId::parse(t), ValidationError) << t;
  }
}

TEST(CellId, OutOfRangeCoordinatesRejected) {
  EXPECT_THROW(cell_from_latlng({91, 0}, 3), ValidationError);
  EXPECT_THROW(cell_from_latlng({0, 181}, 3), ValidationError);
  EXPECT_THROW(cell_from_latlng({NAN, 0}, 3), ValidationError);
  EXPECT_THROW(cell_from_latlng({0, 0}, 31), ValidationError);
}

TEST(CellId, TokenRoundTripUpToLevel30) {
  Rng rng(3);
  for (int n = 0; n < 500; ++n) {
    const int level = static_cast<int>(rng.uniform_int(31));
    const auto c = cell_from_latlng(random_point(rng), level);
    EXPECT_EQ(CellId::parse(c.token()), c);
    const auto [i, j] = c.ij();
    EXPECT_EQ(CellId::from_face_ij(c.face(), i, j, level), c);
  }
}

TEST(CellId, HierarchyOnRandomPoints) {
  Rng rng(2024);
  for (int n = 0; n < 10000; ++n) {
    const LatLng p = random_point(rng);
    CellId prev = cell_from_latlng(p, 0);
    ASSERT_TRUE(inside(p, prev, -1e-12)) << prev.token();
    for (int level = 1; level <= 12; ++level) {
      const CellId c = cell_from_latlng(p, level);
      ASSERT_EQ(c.level(), level);
      ASSERT_EQ(c.parent(), prev);
      ASSERT_TRUE(prev.contains(c));
      ASSERT_EQ(CellId::parse(c.token()), c);
      ASSERT_TRUE(inside(p, c, -1e-12)) << c.token();
      int strictly = 0;
      for (const auto& sib : prev.children()) strictly += inside(p, sib, 1e-12) ? 1 : 0;
      ASSERT_LE(strictly, 1);
      prev = c;
    }
  }
}

TEST(CellId, HilbertOrderVisitsAdjacentCells) {
  for (int face = 0; face < 6; ++face) {
    std::vector<CellId> order{CellId::face_cell(face)};
    for (int level = 1; level <= 4; ++level) {
      std::vector<CellId> next;
      for (const auto& c : order) {
        for (const auto& ch : c.children()) next.push_back(ch);
      }
      order = next;
      for (std::size_t k = 1; k < order.size(); ++k) {
        const auto [i0, j0] = order[k - 1].ij();
        const auto [i1, j1] = order[k].ij();
        const long d = std::labs(long(i0) - long(i1)) + std::labs(long(j0) - long(j1));
        ASSERT_EQ(d, 1) << order[k - 1].token() << " -> " << order[k].token();
      }
    }
  }
}

TEST(Partition, BelowThresholdKeepsFaces) {
  std::vector<GeoRecord> r{{{0, 0}, 0}, {{1, 1}, 0}, {{0, 90}, 0}, {{2, 91}, 0}, {{80, 10}, 0}};
  const auto p = adaptive_partition(r, 10);
  ASSERT_EQ(p.cells.size(), 3u);
  EXPECT_EQ(p.cells[0].cell.token(), "0/");
  EXPECT_EQ(p.cells[1].cell.token(), "1/");
  EXPECT_EQ(p.cells[2].cell.token(), "2/");
  EXPECT_EQ(p.cells[0].records, 2u);
  EXPECT_FALSE(p.hit_max_level);
}

TEST(Partition, SplitsIntoTwoChildren) {
  // Six records near each of two opposite corners of face 0.
  std::vector<GeoRecord> r;
  for (int k = 0; k < 6; ++k) r.push_back({{20.0 + k * 0.5, 20.0}, 0});
  for (int k = 0; k < 6; ++k) r.push_back({{-20.0 - k * 0.5, -20.0}, 0});
  const auto a = cell_from_latlng({20, 20}, 1), b = cell_from_latlng({-20, -20}, 1);
  ASSERT_NE(a, b);
  const auto p = adaptive_partition(r, 10);
  ASSERT_EQ(p.cells.size(), 2u);
  std::set<CellId> got{p.cells[0].cell, p.cells[1].cell};
  EXPECT_EQ(got, (std::set<CellId>{a, b}));
  for (const auto& c : p.cells) EXPECT_EQ(c.records, 6u);
}

TEST(Partition, DefaultNMax) { EXPECT_EQ(kDefaultNMax, 10000u); }

TEST(Partition, RespectsNMaxOnClusteredData) {
  Rng rng(5);
  std::vector<GeoRecord> r;
  for (int k = 0; k < 4000; ++k) {
    const int cls = static_cast<int>(rng.uniform_int(3));
    const LatLng center = cls == 0 ? LatLng{10, 10} : (cls == 1 ? LatLng{-30, 100} : LatLng{60, -40});
    r.push_back({{center.lat + rng.normal() * 2, center.lng + rng.normal() * 2}, cls});
  }
  for (std::size_t n_max : {50u, 200u, 1000u}) {
    const auto p = adaptive_partition(r, n_max);
    EXPECT_FALSE(p.hit_max_level);
    std::size_t total = 0;
    for (const auto& c : p.cells) {
      EXPECT_LE(c.max_class_count, n_max);
      total += c.records;
    }
    EXPECT_EQ(total, r.size());
    for (std::size_t a = 0; a < p.cells.size(); ++a) {
      for (std::size_t b = 0; b < p.cells.size(); ++b) {
        if (a != b) EXPECT_FALSE(p.cells[a].cell.contains(p.cells[b].cell));
      }
    }
    for (const auto& rec : r) EXPECT_TRUE(p.locate(rec.location).has_value());
  }
}

TEST(Partition, MaxLevelReachedIsReported) {
  std::vector<GeoRecord> r(20, GeoRecord{{1, 1}, 0});
  const auto p = adaptive_partition(r, 10, 3);
  EXPECT_TRUE(p.hit_max_level);
  ASSERT_EQ(p.cells.size(), 1u);
  EXPECT_EQ(p.cells[0].cell.level(), 3);
}

TEST(Partition, RejectsBadInput) {
  EXPECT_THROW(adaptive_partition({}, 10), ValidationError);
  EXPECT_THROW(adaptive_partition({{{0, 0}, 0}}, 0), ValidationError);
}

TEST(SpeciesInCell, EmptyAndMembership) {
  std::vector<GeoRecord> r{{{0, 0}, 7}, {{1, 0}, 7}, {{0, 90}, 2}};
  EXPECT_TRUE(species_in_cell(r, CellId::parse("5/")).empty());
  EXPECT_TRUE(species_in_cell(r, CellId::parse("0/")).count(7));
  EXPECT_EQ(species_in_cell(r, CellId::parse("0/")), std::set<int>{7});
}

TEST(SpeciesInCell, MatchesLinearScan) {
  SyntheticConfig cfg;
  cfg.num_classes = 12;
  cfg.samples_per_class = 30;
  cfg.radius_max = 0.5;
  cfg.seed = 9;
  const auto sd = generate_synthetic(cfg);
  const auto recs = sd.dataset.manifest.geo_records();
  for (int level : {0, 1, 2, 3}) {
    std::set<CellId> cells;
    for (const auto& r : recs) cells.insert(cell_from_latlng(r.location, level));
    for (const auto& c : cells) {
      std::set<int> scan;
      for (const auto& r : recs) {
        if (inside(r.location, c, -1e-12)) scan.insert(r.class_id);
      }
      EXPECT_EQ(species_in_cell(recs, c), scan) << c.token();
    }
  }
}

TEST(Geometry, AngularDistance) {
  EXPECT_NEAR(angular_distance({0, 0}, {0, 90}), M_PI / 2, 1e-12);
  EXPECT_NEAR(angular_distance({90, 0}, {-90, 0}), M_PI, 1e-12);
  EXPECT_NEAR(angular_distance({10, 10}, {10, 10}), 0.0, 1e-12);
}
