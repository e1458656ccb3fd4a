#include "geomoe/geocell.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <map>

#include "geomoe/errors.hpp"

namespace geomoe {

// Point -> cell mapping:
//   1. lat/lng -> unit vector (x, y, z).
//   2. face = axis of largest |component|, ordered (+x,+y,+z,-x,-y,-z) -> 0..5;
//      ties go to the lowest face index.
//   3. gnomonic projection onto the face: (u, v) in [-1,1]^2 (S2 face frames).
//   4. quadratic warp s = 0.5*sqrt(1+3u) for u >= 0, else 1 - 0.5*sqrt(1-3u);
//      same for t from v.
//   5. (i, j) = floor((s, t) * 2^level), clamped into the grid.
//   6. Hilbert path digits, most significant level first, using the tables
//      below. The orientation starts at (face & kSwap) and is updated per level
//      by XOR with kPosToOrientation[digit].
//
// Orientation bits: kSwap (1) exchanges the i and j axes, kInvert (2) flips
// both. Tables are indexed [orientation][..]:
//
//   kIJToPos     ij=00 01 10 11         kPosToIJ     pos=0  1  2  3
//   orient 0         0  1  3  2         orient 0         0  1  3  2
//   orient 1 (swap)  0  3  1  2         orient 1         0  2  3  1
//   orient 2 (inv)   2  3  1  0         orient 2         3  2  0  1
//   orient 3 (both)  2  1  3  0         orient 3         3  1  0  2
//
//   kPosToOrientation = {kSwap, 0, 0, kSwap|kInvert}
//
// where ij = (i_bit << 1) | j_bit.

namespace {

constexpr int kSwap = 1;
constexpr int kInvert = 2;
constexpr std::array<std::array<int, 4>, 4> kIJToPos{{{0, 1, 3, 2}, {0, 3, 1, 2}, {2, 3, 1, 0}, {2, 1, 3, 0}}};
constexpr std::array<std::array<int, 4>, 4> kPosToIJ{{{0, 1, 3, 2}, {0, 2, 3, 1}, {3, 2, 0, 1}, {3, 1, 0, 2}}};
constexpr std::array<int, 4> kPosToOrientation{kSwap, 0, 0, kSwap | kInvert};

constexpr double kDeg = M_PI / 180.0;

double uv_to_st(double u) {
  return u >= 0.0 ? 0.5 * std::sqrt(1.0 + 3.0 * u) : 1.0 - 0.5 * std::sqrt(1.0 - 3.0 * u);
}

void check_level(int level) {
  if (level < 0 || level > CellId::kMaxLevel) {
    throw ValidationError("cell level " + std::to_string(level) + " outside 0.." + std::to_string(CellId::kMaxLevel));
  }
}

}  // namespace

void LatLng::validate() const {
  if (!std::isfinite(lat) || lat < -90.0 || lat > 90.0) {
    throw ValidationError("latitude " + std::to_string(lat) + " outside [-90, 90]");
  }
  if (!std::isfinite(lng) || lng < -180.0 || lng > 180.0) {
    throw ValidationError("longitude " + std::to_string(lng) + " outside [-180, 180]");
  }
}

Vec3 to_unit_vector(const LatLng& p) {
  const double phi = p.lat * kDeg;
  const double lam = p.lng * kDeg;
  return {std::cos(phi) * std::cos(lam), std::cos(phi) * std::sin(lam), std::sin(phi)};
}

double angular_distance(const LatLng& a, const LatLng& b) {
  const Vec3 u = to_unit_vector(a);
  const Vec3 v = to_unit_vector(b);
  const double cx = u.y * v.z - u.z * v.y;
  const double cy = u.z * v.x - u.x * v.z;
  const double cz = u.x * v.y - u.y * v.x;
  return std::atan2(std::sqrt(cx * cx + cy * cy + cz * cz), u.x * v.x + u.y * v.y + u.z * v.z);
}

CellId::CellId(int face, std::vector<std::uint8_t> path) : face_(face), path_(std::move(path)) {
  if (face < 0 || face > 5) throw ValidationError("cell face " + std::to_string(face) + " outside 0..5");
  check_level(static_cast<int>(path_.size()));
  for (auto d : path_) {
    if (d > 3) throw ValidationError("cell path digit " + std::to_string(d) + " is not base-4");
  }
}

CellId CellId::parse(std::string_view token) {
  if (token.size() < 2 || token[1] != '/' || token[0] < '0' || token[0] > '5') {
    throw ValidationError("malformed cell token '" + std::string(token) + "'");
  }
  std::vector<std::uint8_t> path;
  for (char c : token.substr(2)) {
    if (c < '0' || c > '3') throw ValidationError("malformed cell token '" + std::string(token) + "'");
    path.push_back(static_cast<std::uint8_t>(c - '0'));
  }
  if (path.size() > static_cast<std::size_t>(kMaxLevel)) {
    throw ValidationError("cell token '" + std::string(token) + "' deeper than level 30");
  }
  return CellId(token[0] - '0', std::move(path));
}

std::string CellId::token() const {
  std::string s;
  s.reserve(path_.size() + 2);
  s.push_back(static_cast<char>('0' + face_));
  s.push_back('/');
  for (auto d : path_) s.push_back(static_cast<char>('0' + d));
  return s;
}

CellId CellId::parent() const {
  if (path_.empty()) throw ValidationError("face cell " + token() + " has no parent");
  return CellId(face_, std::vector<std::uint8_t>(path_.begin(), path_.end() - 1));
}

CellId CellId::child(int digit) const {
  if (digit < 0 || digit > 3) throw ValidationError("child digit must be 0..3");
  auto p = path_;
  p.push_back(static_cast<std::uint8_t>(digit));
  return CellId(face_, std::move(p));
}

std::vector<CellId> CellId::children() const { return {child(0), child(1), child(2), child(3)}; }

bool CellId::contains(const CellId& other) const {
  return face_ == other.face_ && other.path_.size() >= path_.size() &&
         std::equal(path_.begin(), path_.end(), other.path_.begin());
}

std::pair<std::uint32_t, std::uint32_t> CellId::ij() const {
  int orient = face_ & kSwap;
  std::uint32_t i = 0, j = 0;
  for (auto d : path_) {
    const int bits = kPosToIJ[orient][d];
    i = (i << 1) | static_cast<std::uint32_t>(bits >> 1);
    j = (j << 1) | static_cast<std::uint32_t>(bits & 1);
    orient ^= kPosToOrientation[d];
  }
  return {i, j};
}

CellId CellId::from_face_ij(int face, std::uint32_t i, std::uint32_t j, int level) {
  check_level(level);
  const std::uint64_t n = std::uint64_t{1} << level;
  if (i >= n || j >= n) throw ValidationError("cell (i, j) outside the level grid");
  int orient = face & kSwap;
  std::vector<std::uint8_t> path(static_cast<std::size_t>(level));
  for (int k = 0; k < level; ++k) {
    const int shift = level - 1 - k;
    const int bits = static_cast<int>(((i >> shift) & 1U) << 1 | ((j >> shift) & 1U));
    const int pos = kIJToPos[orient][bits];
    path[static_cast<std::size_t>(k)] = static_cast<std::uint8_t>(pos);
    orient ^= kPosToOrientation[pos];
  }
  return CellId(face, std::move(path));
}

FaceST face_st_from_latlng(const LatLng& p) {
  p.validate();
  const Vec3 v = to_unit_vector(p);
  const std::array<double, 3> comp{v.x, v.y, v.z};
  const double m = std::max({std::abs(v.x), std::abs(v.y), std::abs(v.z)});
  int face = 6;
  for (int a = 0; a < 3; ++a) {
    if (std::abs(comp[a]) == m) face = std::min(face, comp[a] >= 0.0 ? a : a + 3);
  }
  double u = 0, w = 0;
  switch (face) {
    case 0: u = v.y / v.x; w = v.z / v.x; break;
    case 1: u = -v.x / v.y; w = v.z / v.y; break;
    case 2: u = -v.x / v.z; w = -v.y / v.z; break;
    case 3: u = v.z / v.x; w = v.y / v.x; break;
    case 4: u = v.z / v.y; w = -v.x / v.y; break;
    default: u = -v.y / v.z; w = -v.x / v.z; break;
  }
  return {face, uv_to_st(std::clamp(u, -1.0, 1.0)), uv_to_st(std::clamp(w, -1.0, 1.0))};
}

CellId cell_from_latlng(const LatLng& p, int level) {
  check_level(level);
  const FaceST f = face_st_from_latlng(p);
  const double n = std::ldexp(1.0, level);
  const auto quant = [n](double s) {
    const double q = std::floor(s * n);
    return static_cast<std::uint32_t>(std::clamp(q, 0.0, n - 1.0));
  };
  return CellId::from_face_ij(f.face, quant(f.s), quant(f.t), level);
}

std::vector<CellId> CellPartition::ids() const {
  std::vector<CellId> out;
  out.reserve(cells.size());
  for (const auto& c : cells) out.push_back(c.cell);
  return out;
}

std::optional<CellId> CellPartition::locate(const LatLng& p) const {
  int deepest = 0;
  for (const auto& c : cells) deepest = std::max(deepest, c.cell.level());
  const CellId leaf = cell_from_latlng(p, deepest);
  for (const auto& c : cells) {
    if (c.cell.contains(leaf)) return c.cell;
  }
  return std::nullopt;
}

namespace {

struct PartitionBuilder {
  const std::vector<GeoRecord>& records;
  const std::vector<CellId>& deep;  // each record's cell at max_level
  std::size_t n_max;
  int max_level;
  CellPartition& out;

  void split(const CellId& cell, const std::vector<std::size_t>& idx) {
    std::map<int, std::size_t> per_class;
    for (auto r : idx) ++per_class[records[r].class_id];
    std::size_t mx = 0;
    for (const auto& [c, n] : per_class) mx = std::max(mx, n);
    if (mx > n_max && cell.level() < max_level) {
      std::array<std::vector<std::size_t>, 4> parts;
      const auto level = static_cast<std::size_t>(cell.level());
      for (auto r : idx) parts[deep[r].path()[level]].push_back(r);
      for (int d = 0; d < 4; ++d) {
        if (!parts[d].empty()) split(cell.child(d), parts[d]);
      }
      return;
    }
    if (mx > n_max) out.hit_max_level = true;
    out.cells.push_back({cell, idx.size(), mx});
  }
};

}  // namespace

CellPartition adaptive_partition(const std::vector<GeoRecord>& records, std::size_t n_max, int max_level) {
  if (n_max < 1) throw ValidationError("adaptive_partition: n_max must be >= 1");
  if (records.empty()) throw ValidationError("adaptive_partition: no records");
  check_level(max_level);

  std::vector<CellId> deep;
  deep.reserve(records.size());
  for (const auto& r : records) deep.push_back(cell_from_latlng(r.location, max_level));

  CellPartition out;
  out.n_max = n_max;
  out.max_level = max_level;
  PartitionBuilder builder{records, deep, n_max, max_level, out};

  std::array<std::vector<std::size_t>, 6> faces;
  for (std::size_t r = 0; r < records.size(); ++r) faces[static_cast<std::size_t>(deep[r].face())].push_back(r);
  for (int f = 0; f < 6; ++f) {
    if (!faces[f].empty()) builder.split(CellId::face_cell(f), faces[f]);
  }

  std::sort(out.cells.begin(), out.cells.end(), [](const CellStats& a, const CellStats& b) { return a.cell < b.cell; });
  std::size_t upper_band = 0;
  for (const auto& c : out.cells) {
    if (static_cast<double>(c.max_class_count) >= 0.1 * static_cast<double>(n_max)) ++upper_band;
  }
  out.lower_band_fraction = static_cast<double>(upper_band) / static_cast<double>(out.cells.size());
  return out;
}

std::set<int> species_in_cell(const std::vector<GeoRecord>& records, const CellId& cell) {
  std::set<int> out;
  for (const auto& r : records) {
    if (cell_from_latlng(r.location, cell.level()) == cell) out.insert(r.class_id);
  }
  return out;
}

}  // namespace geomoe
