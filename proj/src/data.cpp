#include "geomoe/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "json.hpp"

#include "geomoe/errors.hpp"

namespace geomoe {

namespace fs = std::filesystem;

std::string_view split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "train";
}

Split split_from_name(std::string_view s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw ValidationError("unknown split '" + std::string(s) + "'");
}

std::vector<GeoRecord> DatasetManifest::geo_records(std::optional<Split> split) const {
  std::vector<GeoRecord> out;
  for (const auto& r : records) {
    if (!split || r.split == *split) out.push_back({r.location, r.class_id});
  }
  return out;
}

void DatasetManifest::validate() const {
  std::set<std::string> ids;
  for (const auto& r : records) {
    if (!ids.insert(r.id).second) throw ValidationError("duplicate record id '" + r.id + "'");
    r.location.validate();
    if (r.class_id < 0 || static_cast<std::size_t>(r.class_id) >= class_names.size()) {
      throw ValidationError("record '" + r.id + "' has class " + std::to_string(r.class_id) + " outside 0.." +
                            std::to_string(static_cast<int>(class_names.size()) - 1));
    }
  }
}

std::vector<std::size_t> Dataset::indices(Split s) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < manifest.records.size(); ++i) {
    if (manifest.records[i].split == s) out.push_back(i);
  }
  return out;
}

void SyntheticConfig::validate() const {
  if (num_classes < 2) throw ConfigError("synthetic data needs at least 2 classes");
  if (image_size < 2 * patch_size) {
    throw ConfigError("image_size " + std::to_string(image_size) + " is below 2x patch_size " + std::to_string(patch_size));
  }
  if (image_size % patch_size != 0) throw ConfigError("image_size must be a multiple of patch_size");
  if (channels != 1 && channels != 3) throw ConfigError("channels must be 1 or 3");
  if (samples_per_class < 1 || min_samples_per_class < 1) throw ConfigError("sample counts must be >= 1");
  if (!(radius_min > 0.0) || !(radius_max >= radius_min)) throw ConfigError("range radii must satisfy 0 < min <= max");
  if (!(pareto_alpha > 0.0)) throw ConfigError("pareto_alpha must be > 0");
  const double fs = split_fractions[0] + split_fractions[1] + split_fractions[2];
  if (std::abs(fs - 1.0) > 1e-9 || *std::min_element(split_fractions.begin(), split_fractions.end()) < 0.0) {
    throw ConfigError("split fractions must be non-negative and sum to 1");
  }
  int anchored = 0;
  for (const auto& a : anchors) {
    a.center.validate();
    anchored += a.num_classes;
  }
  if (anchored > num_classes) throw ConfigError("anchors claim more classes than num_classes");
}

std::string SyntheticConfig::hash() const {
  std::ostringstream os;
  os << std::setprecision(17) << num_classes << ',' << image_size << ',' << channels << ',' << patch_size << ','
     << samples_per_class << ',' << min_samples_per_class << ',' << imbalanced << ',' << imbalance_exponent << ','
     << pareto_alpha << ',' << radius_min << ',' << radius_max << ',' << noise << ',' << split_fractions[0] << ','
     << split_fractions[1] << ',' << split_fractions[2] << ',' << seed;
  for (const auto& a : anchors) os << ';' << a.center.lat << ',' << a.center.lng << ',' << a.num_classes << ',' << a.spread;
  const std::string s = os.str();
  std::ostringstream hex;
  hex << std::hex << std::setw(16) << std::setfill('0') << fnv1a64(s.data(), s.size());
  return hex.str();
}

double sample_range_radius(const SyntheticConfig& cfg, Rng& rng) {
  double u;
  do {
    u = rng.uniform();
  } while (u <= 0.0);
  return std::min(cfg.radius_max, cfg.radius_min * std::pow(u, -1.0 / cfg.pareto_alpha));
}

namespace {

LatLng from_unit(double x, double y, double z) {
  const double n = std::sqrt(x * x + y * y + z * z);
  x /= n;
  y /= n;
  z /= n;
  LatLng p{std::asin(std::clamp(z, -1.0, 1.0)) * 180.0 / M_PI, std::atan2(y, x) * 180.0 / M_PI};
  p.lat = std::clamp(p.lat, -90.0, 90.0);
  p.lng = std::clamp(p.lng, -180.0, 180.0);
  return p;
}

LatLng uniform_on_sphere(Rng& rng) {
  const double z = rng.uniform(-1.0, 1.0);
  const double a = rng.uniform(0.0, 2.0 * M_PI);
  const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
  return from_unit(r * std::cos(a), r * std::sin(a), z);
}

// Orthonormal frame with w = the center direction.
void frame(const Vec3& w, Vec3& u, Vec3& v) {
  const Vec3 a = std::abs(w.z) < 0.9 ? Vec3{0, 0, 1} : Vec3{1, 0, 0};
  u = {a.y * w.z - a.z * w.y, a.z * w.x - a.x * w.z, a.x * w.y - a.y * w.x};
  const double n = std::sqrt(u.x * u.x + u.y * u.y + u.z * u.z);
  u = {u.x / n, u.y / n, u.z / n};
  v = {w.y * u.z - w.z * u.y, w.z * u.x - w.x * u.z, w.x * u.y - w.y * u.x};
}

std::string record_id(std::size_t i) {
  std::ostringstream os;
  os << 's' << std::setw(6) << std::setfill('0') << i;
  return os.str();
}

std::vector<ClassSignature> make_signatures(int k, Rng& rng) {
  static constexpr std::array<std::array<double, 3>, 6> kPalette{{{0.9, 0.2, 0.2},
                                                                  {0.2, 0.8, 0.2},
                                                                  {0.2, 0.3, 0.9},
                                                                  {0.9, 0.8, 0.1},
                                                                  {0.8, 0.2, 0.8},
                                                                  {0.1, 0.8, 0.8}}};
  static constexpr std::array<double, 4> kOrient{0.0, M_PI / 4, M_PI / 2, 3 * M_PI / 4};
  static constexpr std::array<double, 3> kFreq{1.0, 2.0, 3.0};
  static constexpr std::array<std::array<double, 2>, 4> kBlob{{{0.25, 0.25}, {0.75, 0.25}, {0.25, 0.75}, {0.75, 0.75}}};

  struct Combo {
    int tint, orient, freq, blob, blob_color;
  };
  std::vector<Combo> combos;
  for (int t = 0; t < 6; ++t)
    for (int o = 0; o < 4; ++o)
      for (int f = 0; f < 3; ++f)
        for (int b = 0; b < 4; ++b) combos.push_back({t, o, f, b, (t + 1 + b) % 6});
  rng.shuffle(combos);

  // Greedy max-min selection: prefer combos differing from all chosen ones in
  // >= 3 attributes, relaxing the bound only when the pool runs dry.
  const auto differ = [](const Combo& a, const Combo& b) {
    return (a.tint != b.tint) + (a.orient != b.orient) + (a.freq != b.freq) + (a.blob != b.blob);
  };
  std::vector<Combo> chosen;
  for (int need = 3; need >= 0 && static_cast<int>(chosen.size()) < k; --need) {
    for (const auto& c : combos) {
      if (static_cast<int>(chosen.size()) >= k) break;
      bool ok = true;
      for (const auto& s : chosen) ok = ok && differ(c, s) >= need && differ(c, s) > 0;
      if (ok) chosen.push_back(c);
    }
  }
  std::vector<ClassSignature> sigs;
  for (const auto& c : chosen) {
    ClassSignature s;
    s.tint = kPalette[static_cast<std::size_t>(c.tint)];
    s.orientation = kOrient[static_cast<std::size_t>(c.orient)];
    s.frequency = kFreq[static_cast<std::size_t>(c.freq)];
    s.phase = rng.uniform(0.0, 2.0 * M_PI);
    s.blob_x = kBlob[static_cast<std::size_t>(c.blob)][0];
    s.blob_y = kBlob[static_cast<std::size_t>(c.blob)][1];
    s.blob_color = kPalette[static_cast<std::size_t>(c.blob_color)];
    sigs.push_back(s);
  }
  return sigs;
}

}  // namespace

LatLng sample_in_cap(const ClassRange& range, Rng& rng) {
  const Vec3 w = to_unit_vector(range.center);
  Vec3 u, v;
  frame(w, u, v);
  const double cos_r = std::cos(range.radius);
  const double c = rng.uniform(cos_r, 1.0);  // uniform area measure on the cap
  const double s = std::sqrt(std::max(0.0, 1.0 - c * c));
  const double a = rng.uniform(0.0, 2.0 * M_PI);
  const double ca = std::cos(a), sa = std::sin(a);
  return from_unit(c * w.x + s * (ca * u.x + sa * v.x), c * w.y + s * (ca * u.y + sa * v.y),
                   c * w.z + s * (ca * u.z + sa * v.z));
}

Tensor<float> render_image(const ClassSignature& sig, int channels, int image_size, double noise, std::uint64_t seed) {
  Rng rng(seed);
  const auto C = static_cast<std::size_t>(channels);
  const auto S = static_cast<std::size_t>(image_size);
  Tensor<float> img({C, S, S});
  const double phase = sig.phase + rng.uniform(-0.6, 0.6);
  const double bx = sig.blob_x + rng.uniform(-0.08, 0.08);
  const double by = sig.blob_y + rng.uniform(-0.08, 0.08);
  const double br = 0.12;
  const double ct = std::cos(sig.orientation), st = std::sin(sig.orientation);
  for (std::size_t y = 0; y < S; ++y) {
    for (std::size_t x = 0; x < S; ++x) {
      const double u = (static_cast<double>(x) + 0.5) / static_cast<double>(S);
      const double v = (static_cast<double>(y) + 0.5) / static_cast<double>(S);
      const double grating = std::sin(2.0 * M_PI * sig.frequency * (u * ct + v * st) + phase);
      const double blob = std::exp(-((u - bx) * (u - bx) + (v - by) * (v - by)) / (2.0 * br * br));
      for (std::size_t c = 0; c < C; ++c) {
        const std::size_t ch = C == 1 ? 3 : c;
        const double tint = ch == 3 ? (sig.tint[0] + sig.tint[1] + sig.tint[2]) / 3.0 : sig.tint[ch];
        const double bcol = ch == 3 ? (sig.blob_color[0] + sig.blob_color[1] + sig.blob_color[2]) / 3.0 : sig.blob_color[ch];
        double val = 0.25 + 0.3 * tint + 0.25 * grating * (0.4 + 0.6 * tint) + 0.45 * blob * (bcol - 0.5);
        val += noise * rng.normal();
        img[(c * S + y) * S + x] = static_cast<float>(std::clamp(val, 0.0, 1.0));
      }
    }
  }
  return img;
}

SyntheticData generate_synthetic(const SyntheticConfig& cfg) {
  Rng rng(cfg.seed);
  return generate_synthetic(cfg, rng);
}

SyntheticData generate_synthetic(const SyntheticConfig& cfg, Rng& rng) {
  cfg.validate();
  SyntheticData out;
  const auto K = static_cast<std::size_t>(cfg.num_classes);

  // Geographic ranges: anchored classes first, then uniform centers.
  std::size_t c = 0;
  for (const auto& a : cfg.anchors) {
    for (int i = 0; i < a.num_classes; ++i, ++c) {
      const ClassRange jitter{a.center, a.spread};
      out.ranges.push_back({sample_in_cap(jitter, rng), sample_range_radius(cfg, rng)});
    }
  }
  for (; c < K; ++c) out.ranges.push_back({uniform_on_sphere(rng), sample_range_radius(cfg, rng)});

  out.signatures = make_signatures(cfg.num_classes, rng);

  std::vector<int> counts(K, cfg.samples_per_class);
  if (cfg.imbalanced) {
    std::vector<std::size_t> order(K);
    for (std::size_t i = 0; i < K; ++i) order[i] = i;
    rng.shuffle(order);
    for (std::size_t rank = 0; rank < K; ++rank) {
      const double n = cfg.samples_per_class * std::pow(static_cast<double>(rank + 1), -cfg.imbalance_exponent);
      counts[order[rank]] = std::max(cfg.min_samples_per_class, static_cast<int>(std::lround(n)));
    }
  }

  auto& m = out.dataset.manifest;
  m.channels = cfg.channels;
  m.image_size = cfg.image_size;
  m.config_hash = cfg.hash();
  for (std::size_t k = 0; k < K; ++k) m.class_names.push_back("class_" + std::to_string(k));

  std::size_t next_id = 0;
  for (std::size_t k = 0; k < K; ++k) {
    const auto n = static_cast<std::size_t>(counts[k]);
    // Stratified split per class.
    auto n_train = static_cast<std::size_t>(std::lround(cfg.split_fractions[0] * static_cast<double>(n)));
    auto n_val = static_cast<std::size_t>(std::lround(cfg.split_fractions[1] * static_cast<double>(n)));
    if (n >= 3) {
      n_val = std::max<std::size_t>(n_val, cfg.split_fractions[1] > 0 ? 1 : 0);
      n_train = std::min(n_train, n - n_val - (cfg.split_fractions[2] > 0 ? 1 : 0));
    }
    n_train = std::min(n_train, n);
    n_val = std::min(n_val, n - n_train);
    std::vector<Split> splits(n, Split::test);
    for (std::size_t i = 0; i < n_train; ++i) splits[i] = Split::train;
    for (std::size_t i = n_train; i < n_train + n_val; ++i) splits[i] = Split::val;
    rng.shuffle(splits);
    for (std::size_t i = 0; i < n; ++i) {
      Record r;
      r.id = record_id(next_id);
      r.class_id = static_cast<int>(k);
      r.location = sample_in_cap(out.ranges[k], rng);
      r.split = splits[i];
      r.image_seed = Rng::derive(cfg.seed, next_id);
      r.image_path = "images/" + r.id + ".gimg";
      m.records.push_back(r);
      ++next_id;
    }
  }
  out.dataset.images.reserve(m.records.size());
  for (const auto& r : m.records) {
    out.dataset.images.push_back(render_image(out.signatures[static_cast<std::size_t>(r.class_id)], cfg.channels,
                                              cfg.image_size, cfg.noise, r.image_seed));
  }
  return out;
}

std::vector<LatLng> fibonacci_grid(std::size_t n) {
  std::vector<LatLng> out;
  out.reserve(n);
  const double golden = M_PI * (3.0 - std::sqrt(5.0));
  for (std::size_t i = 0; i < n; ++i) {
    const double z = 1.0 - (2.0 * static_cast<double>(i) + 1.0) / static_cast<double>(n);
    const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
    const double a = golden * static_cast<double>(i);
    out.push_back(from_unit(r * std::cos(a), r * std::sin(a), z));
  }
  return out;
}

std::vector<std::vector<double>> presence_scores(const std::vector<ClassRange>& ranges, const std::vector<LatLng>& grid) {
  std::vector<std::vector<double>> out(ranges.size(), std::vector<double>(grid.size()));
  for (std::size_t k = 0; k < ranges.size(); ++k) {
    const double r = ranges[k].radius;
    for (std::size_t g = 0; g < grid.size(); ++g) {
      const double d = angular_distance(ranges[k].center, grid[g]);
      out[k][g] = std::exp(-d * d / (2.0 * r * r));
    }
  }
  return out;
}

// ---- CSV ----

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur.push_back('"');
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) {
    if (c == '"') q.push_back('"');
    q.push_back(c);
  }
  q.push_back('"');
  return q;
}

bool parse_double(const std::string& s, double& v) {
  if (s.empty()) return false;
  char* end = nullptr;
  v = std::strtod(s.c_str(), &end);
  return end == s.c_str() + s.size() && std::isfinite(v);
}

}  // namespace

IngestResult ingest_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path.string());
  std::string header;
  if (!std::getline(in, header)) throw ValidationError(path.string() + ": empty file");
  if (!header.empty() && header.back() == '\r') header.pop_back();
  if (header.rfind("\xEF\xBB\xBF", 0) == 0) header = header.substr(3);
  const auto cols = split_csv_line(header);
  static const std::array<std::string, 6> kRequired{"id", "class", "lat", "lng", "split", "image_path"};
  std::map<std::string, std::size_t> at;
  for (std::size_t i = 0; i < cols.size(); ++i) at[cols[i]] = i;
  for (const auto& c : kRequired) {
    if (!at.count(c)) throw ValidationError(path.string() + ": missing column '" + c + "'");
  }

  IngestResult res;
  std::set<std::string> ids;
  int max_class = -1;
  std::string line;
  std::size_t lineno = 1, rows = 0, bad = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    ++rows;
    const auto f = split_csv_line(line);
    const auto issue = [&](const std::string& field, const std::string& msg) {
      res.issues.push_back({lineno, field, msg});
      ++bad;
    };
    if (f.size() != cols.size()) {
      issue("", "expected " + std::to_string(cols.size()) + " fields, got " + std::to_string(f.size()));
      continue;
    }
    Record r;
    r.id = f[at["id"]];
    if (r.id.empty() || !ids.insert(r.id).second) {
      issue("id", r.id.empty() ? "empty id" : "duplicate id '" + r.id + "'");
      continue;
    }
    double cls = 0, lat = 0, lng = 0;
    if (!parse_double(f[at["class"]], cls) || cls < 0 || cls != std::floor(cls)) {
      issue("class", "not a non-negative integer: '" + f[at["class"]] + "'");
      continue;
    }
    if (!parse_double(f[at["lat"]], lat) || lat < -90.0 || lat > 90.0) {
      issue("lat", "latitude out of range: '" + f[at["lat"]] + "'");
      continue;
    }
    if (!parse_double(f[at["lng"]], lng) || lng < -180.0 || lng > 180.0) {
      issue("lng", "longitude out of range: '" + f[at["lng"]] + "'");
      continue;
    }
    try {
      r.split = split_from_name(f[at["split"]]);
    } catch (const ValidationError&) {
      issue("split", "unknown split '" + f[at["split"]] + "'");
      continue;
    }
    r.class_id = static_cast<int>(cls);
    r.location = {lat, lng};
    r.image_path = f[at["image_path"]];
    max_class = std::max(max_class, r.class_id);
    res.manifest.records.push_back(std::move(r));
  }
  if (rows > 0 && static_cast<double>(bad) > 0.1 * static_cast<double>(rows)) {
    std::ostringstream os;
    os << path.string() << ": " << bad << " of " << rows << " rows invalid (> 10%)";
    if (!res.issues.empty()) {
      os << "; first: line " << res.issues.front().line << " field '" << res.issues.front().field << "': "
         << res.issues.front().message;
    }
    throw ValidationError(os.str());
  }
  for (int k = 0; k <= max_class; ++k) res.manifest.class_names.push_back("class_" + std::to_string(k));
  return res;
}

void write_csv(const DatasetManifest& m, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write " + path.string());
  out << "id,class,lat,lng,split,image_path\n";
  out << std::setprecision(17);
  for (const auto& r : m.records) {
    out << csv_field(r.id) << ',' << r.class_id << ',' << r.location.lat << ',' << r.location.lng << ','
        << split_name(r.split) << ',' << csv_field(r.image_path) << '\n';
  }
}

// ---- images ----

void write_image(const Tensor<float>& img, const fs::path& path) {
  if (img.rank() != 3) throw DimensionError("image must be [C,H,W]");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write " + path.string());
  out.write("GIMG", 4);
  for (std::size_t i = 0; i < 3; ++i) {
    const auto d = static_cast<std::uint32_t>(img.dim(i));
    const unsigned char b[4] = {static_cast<unsigned char>(d), static_cast<unsigned char>(d >> 8),
                                static_cast<unsigned char>(d >> 16), static_cast<unsigned char>(d >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
  }
  for (float v : img.vec()) {
    std::uint32_t u;
    std::memcpy(&u, &v, 4);
    const unsigned char b[4] = {static_cast<unsigned char>(u), static_cast<unsigned char>(u >> 8),
                                static_cast<unsigned char>(u >> 16), static_cast<unsigned char>(u >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
  }
}

Tensor<float> read_image(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open image " + path.string());
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "GIMG", 4) != 0) throw ValidationError(path.string() + ": bad image magic");
  const auto read_u32 = [&]() {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in) throw ValidationError(path.string() + ": truncated image");
    return static_cast<std::uint32_t>(b[0]) | static_cast<std::uint32_t>(b[1]) << 8 |
           static_cast<std::uint32_t>(b[2]) << 16 | static_cast<std::uint32_t>(b[3]) << 24;
  };
  const std::size_t C = read_u32(), H = read_u32(), W = read_u32();
  if (C == 0 || H == 0 || W == 0 || C > 4 || H > 4096 || W > 4096) {
    throw ValidationError(path.string() + ": implausible image dims");
  }
  Tensor<float> img({C, H, W});
  for (auto& v : img.vec()) {
    const std::uint32_t u = read_u32();
    std::memcpy(&v, &u, 4);
  }
  return img;
}

void save_dataset(const Dataset& d, const fs::path& dir) {
  fs::create_directories(dir / "images");
  write_csv(d.manifest, dir / "records.csv");
  nlohmann::json j;
  j["class_names"] = d.manifest.class_names;
  j["config_hash"] = d.manifest.config_hash;
  j["channels"] = d.manifest.channels;
  j["image_size"] = d.manifest.image_size;
  j["records_csv"] = "records.csv";
  j["image_format"] = "gimg: 'GIMG' + u32le C,H,W + float32le planar";
  std::ofstream(dir / "manifest.json") << j.dump(2) << '\n';
  for (std::size_t i = 0; i < d.images.size(); ++i) write_image(d.images[i], dir / d.manifest.records[i].image_path);
}

Dataset load_dataset(const fs::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw ValidationError("no manifest.json in " + dir.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("manifest.json: " + std::string(e.what()));
  }
  auto res = ingest_csv(dir / j.value("records_csv", std::string("records.csv")));
  Dataset d;
  d.manifest = std::move(res.manifest);
  d.manifest.class_names = j.at("class_names").get<std::vector<std::string>>();
  d.manifest.config_hash = j.value("config_hash", std::string());
  d.manifest.channels = j.value("channels", 3);
  d.manifest.image_size = j.value("image_size", 16);
  d.manifest.validate();
  for (const auto& r : d.manifest.records) {
    auto img = read_image(dir / r.image_path);
    if (img.shape() != Shape{static_cast<std::size_t>(d.manifest.channels), static_cast<std::size_t>(d.manifest.image_size),
                             static_cast<std::size_t>(d.manifest.image_size)}) {
      throw ValidationError(r.image_path + ": image shape " + shape_str(img.shape()) + " does not match manifest");
    }
    d.images.push_back(std::move(img));
  }
  return d;
}

// ---- location splits ----

std::vector<std::size_t> filter_by_location_species(const DatasetManifest& m, Split split, const CellId& cell) {
  const auto species = species_in_cell(m.geo_records(Split::train), cell);
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < m.records.size(); ++i) {
    if (m.records[i].split == split && species.count(m.records[i].class_id)) out.push_back(i);
  }
  return out;
}

LocationSplitResult split_by_location(const DatasetManifest& m, const CellPartition& partition,
                                      const std::vector<CellId>& locations) {
  for (const auto& r : m.records) {
    if (!partition.locate(r.location)) {
      throw ValidationError("partition does not cover record '" + r.id + "'");
    }
  }
  LocationSplitResult res;
  for (const auto& cell : locations) {
    LocationSplit ls;
    ls.cell = cell;
    std::vector<std::size_t> test_in_cell;
    for (std::size_t i = 0; i < m.records.size(); ++i) {
      const auto& r = m.records[i];
      if (cell_from_latlng(r.location, cell.level()) != cell) continue;
      switch (r.split) {
        case Split::train:
          ls.train.push_back(i);
          ls.classes.insert(r.class_id);
          break;
        case Split::val: ls.val.push_back(i); break;
        case Split::test: test_in_cell.push_back(i); break;
      }
    }
    if (ls.train.empty()) {
      res.warnings.push_back("location " + cell.token() + " has no training records; excluded");
      continue;
    }
    for (auto i : test_in_cell) {
      if (ls.classes.count(m.records[i].class_id)) ls.test.push_back(i);
    }
    res.locations.push_back(std::move(ls));
  }
  return res;
}

}  // namespace geomoe
