#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace geomoe {

// Geographic point in degrees.
struct LatLng {
  double lat = 0.0;
  double lng = 0.0;

  void validate() const;
  friend bool operator==(const LatLng&, const LatLng&) = default;
};

struct Vec3 {
  double x = 0, y = 0, z = 0;
};

Vec3 to_unit_vector(const LatLng& p);
// Great-circle angle in radians.
double angular_distance(const LatLng& a, const LatLng& b);

// Cube-sphere quadtree cell: a face (0..5) plus a base-4 Hilbert path.
//
// Token form is "face/digits", e.g. "2/", "2/03". The hierarchy and Hilbert
// ordering mirror S2, but tokens are not byte-compatible with Google S2 cell
// tokens.
class CellId {
 public:
  static constexpr int kMaxLevel = 30;

  CellId() = default;
  CellId(int face, std::vector<std::uint8_t> path);

  static CellId face_cell(int face) { return CellId(face, {}); }
  static CellId parse(std::string_view token);

  int face() const { return face_; }
  int level() const { return static_cast<int>(path_.size()); }
  const std::vector<std::uint8_t>& path() const { return path_; }
  std::string token() const;

  CellId parent() const;
  CellId child(int digit) const;
  std::vector<CellId> children() const;
  // True when other equals this cell or lies below it.
  bool contains(const CellId& other) const;

  // (i, j) grid coordinates of this cell at its own level.
  std::pair<std::uint32_t, std::uint32_t> ij() const;
  static CellId from_face_ij(int face, std::uint32_t i, std::uint32_t j, int level);

  friend bool operator==(const CellId&, const CellId&) = default;
  friend auto operator<=>(const CellId&, const CellId&) = default;

 private:
  int face_ = 0;
  std::vector<std::uint8_t> path_;
};

// Face and (s, t) in [0,1]^2 for a point, following the steps documented in
// geocell.cpp.
struct FaceST {
  int face = 0;
  double s = 0, t = 0;
};
FaceST face_st_from_latlng(const LatLng& p);

CellId cell_from_latlng(const LatLng& p, int level);

struct GeoRecord {
  LatLng location;
  int class_id = 0;
};

struct CellStats {
  CellId cell;
  std::size_t records = 0;
  std::size_t max_class_count = 0;
};

struct CellPartition {
  std::vector<CellStats> cells;  // leaves, sorted by token order
  std::size_t n_max = 10000;
  int max_level = CellId::kMaxLevel;
  // Set when some leaf at max_level still holds more than n_max of one class.
  bool hit_max_level = false;
  // Share of leaves whose max per-class count is >= 0.1 * n_max (reported, not enforced).
  double lower_band_fraction = 0.0;

  std::vector<CellId> ids() const;
  // Leaf holding the point, if any.
  std::optional<CellId> locate(const LatLng& p) const;
};

inline constexpr std::size_t kDefaultNMax = 10000;

CellPartition adaptive_partition(const std::vector<GeoRecord>& records, std::size_t n_max = kDefaultNMax,
                                 int max_level = 12);

std::set<int> species_in_cell(const std::vector<GeoRecord>& records, const CellId& cell);

}  // namespace geomoe
