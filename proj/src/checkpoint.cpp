#include "geomoe/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <limits>

namespace geomoe {

namespace fs = std::filesystem;

namespace {

template <typename T>
constexpr std::uint8_t dtype_code() {
  return std::is_same_v<T, float> ? 0 : 1;
}

class Writer {
 public:
  explicit Writer(const fs::path& p) : out_(p, std::ios::binary) {
    if (!out_) throw ValidationError("cannot write " + p.string());
  }
  void bytes(const void* d, std::size_t n) { out_.write(static_cast<const char*>(d), static_cast<std::streamsize>(n)); }
  template <typename U>
  void le(U v) {
    unsigned char b[sizeof(U)];
    for (std::size_t i = 0; i < sizeof(U); ++i) b[i] = static_cast<unsigned char>(static_cast<std::uint64_t>(v) >> (8 * i));
    bytes(b, sizeof(U));
  }
  void close() {
    out_.flush();
    if (!out_) throw ValidationError("write failed");
  }

 private:
  std::ofstream out_;
};

class Reader {
 public:
  explicit Reader(const fs::path& p) : path_(p), in_(p, std::ios::binary) {
    if (!in_) throw ValidationError("cannot open checkpoint " + p.string());
    remaining_ = static_cast<std::uint64_t>(fs::file_size(p));
  }
  void bytes(void* d, std::uint64_t n) {
    need(n);
    in_.read(static_cast<char*>(d), static_cast<std::streamsize>(n));
    if (!in_) fail("truncated");
    remaining_ -= n;
  }
  template <typename U>
  U le() {
    unsigned char b[sizeof(U)];
    bytes(b, sizeof(U));
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return static_cast<U>(v);
  }
  void need(std::uint64_t n) const {
    if (n > remaining_) fail("declared size exceeds file length");
  }
  std::uint64_t remaining() const { return remaining_; }
  [[noreturn]] void fail(const std::string& why) const {
    throw ValidationError("corrupt checkpoint " + path_.string() + ": " + why);
  }

 private:
  fs::path path_;
  std::ifstream in_;
  std::uint64_t remaining_ = 0;
};

std::uint64_t digest(const std::string& s) { return fnv1a64(s.data(), s.size()); }

}  // namespace

template <typename T>
void save_checkpoint(const Checkpoint<T>& c, const fs::path& path) {
  Writer w(path);
  w.bytes("GMOE", 4);
  w.le<std::uint32_t>(kCheckpointVersion);
  w.le<std::uint64_t>(digest(c.config));
  w.le<std::uint64_t>(c.config.size());
  w.bytes(c.config.data(), c.config.size());
  w.le<std::uint64_t>(c.tensors.size());
  for (const auto& [name, t] : c.tensors) {
    w.le<std::uint32_t>(static_cast<std::uint32_t>(name.size()));
    w.bytes(name.data(), name.size());
    w.le<std::uint8_t>(dtype_code<T>());
    w.le<std::uint32_t>(static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) w.le<std::uint64_t>(d);
    for (T v : t.vec()) {
      using U = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
      U u;
      std::memcpy(&u, &v, sizeof(T));
      w.le<U>(u);
    }
  }
  w.close();
}

template <typename T>
Checkpoint<T> load_checkpoint(const fs::path& path) {
  Reader r(path);
  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, "GMOE", 4) != 0) r.fail("bad magic");
  const auto version = r.le<std::uint32_t>();
  if (version != kCheckpointVersion) r.fail("unsupported version " + std::to_string(version));
  const auto dg = r.le<std::uint64_t>();
  const auto clen = r.le<std::uint64_t>();
  r.need(clen);
  Checkpoint<T> c;
  c.config.resize(clen);
  r.bytes(c.config.data(), clen);
  if (digest(c.config) != dg) r.fail("config digest mismatch");
  const auto count = r.le<std::uint64_t>();
  // Smallest possible entry: name length, dtype, rank.
  if (count > r.remaining() / 9) r.fail("tensor count exceeds file length");
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto nlen = r.le<std::uint32_t>();
    r.need(nlen);
    std::string name(nlen, '\0');
    r.bytes(name.data(), nlen);
    const auto dt = r.le<std::uint8_t>();
    if (dt > 1) r.fail("unknown dtype code " + std::to_string(dt) + " for '" + name + "'");
    if (dt != dtype_code<T>()) r.fail("tensor '" + name + "' has a different precision than requested");
    const auto rank = r.le<std::uint32_t>();
    if (rank > 8) r.fail("tensor '" + name + "' has rank " + std::to_string(rank));
    r.need(static_cast<std::uint64_t>(rank) * 8);
    Shape shape;
    std::uint64_t n = 1;
    for (std::uint32_t k = 0; k < rank; ++k) {
      const auto d = r.le<std::uint64_t>();
      if (d != 0 && n > std::numeric_limits<std::uint64_t>::max() / d) r.fail("tensor size overflows");
      n *= d;
      shape.push_back(static_cast<std::size_t>(d));
    }
    if (n > r.remaining() / sizeof(T)) r.fail("tensor '" + name + "' payload exceeds file length");
    Tensor<T> t(shape);
    using U = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
    for (auto& v : t.vec()) {
      const U u = r.le<U>();
      std::memcpy(&v, &u, sizeof(T));
    }
    if (!c.tensors.emplace(name, std::move(t)).second) r.fail("duplicate tensor '" + name + "'");
  }
  if (r.remaining() != 0) r.fail("trailing bytes");
  return c;
}

void save_model(const GeoModel<float>& model, const RunConfig& run, const fs::path& path) {
  nlohmann::ordered_json j;
  j["run"] = to_json(run);
  const auto s = moe_structure(model);
  if (s.layers.empty()) {
    j["experts"] = nullptr;
  } else {
    j["experts"] = {{"layers", s.layers},
                    {"num_experts", s.num_experts},
                    {"hidden", s.hidden},
                    {"rank", s.rank},
                    {"temperature", s.temperature},
                    {"gate_trainable", s.gate_trainable}};
  }
  j["encoder_frozen"] = model.location_encoder().frozen();
  save_checkpoint<float>({j.dump(), model.state()}, path);
}

SavedModel load_model(const fs::path& path) {
  auto c = load_checkpoint<float>(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(c.config);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("checkpoint config: " + std::string(e.what()));
  }
  if (!j.contains("run")) throw ValidationError("checkpoint config has no run section");
  SavedModel out{run_config_from_json(j["run"]), GeoModel<float>()};
  out.model = GeoModel<float>(out.run.model);
  if (j.contains("experts") && !j["experts"].is_null()) {
    const auto& e = j["experts"];
    MoEStructure s;
    try {
      s.layers = e.at("layers").get<std::vector<int>>();
      s.num_experts = e.at("num_experts").get<int>();
      s.hidden = e.at("hidden").get<int>();
      s.rank = e.at("rank").get<int>();
      s.temperature = e.at("temperature").get<double>();
      s.gate_trainable = e.at("gate_trainable").get<bool>();
    } catch (const nlohmann::json::exception& ex) {
      throw ValidationError("checkpoint expert structure: " + std::string(ex.what()));
    }
    install_placeholder_moe(out.model, s);
  }
  out.model.load_state(c.tensors);
  out.model.location_encoder().set_frozen(j.value("encoder_frozen", false));
  return out;
}

template void save_checkpoint(const Checkpoint<float>&, const fs::path&);
template void save_checkpoint(const Checkpoint<double>&, const fs::path&);
template Checkpoint<float> load_checkpoint(const fs::path&);
template Checkpoint<double> load_checkpoint(const fs::path&);

}  // namespace geomoe
