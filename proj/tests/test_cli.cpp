#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include "geomoe/checkpoint.hpp"
#include "geomoe/svg.hpp"
#include "helpers.hpp"

using namespace geomoe;
using namespace geomoe::testing;
namespace fs = std::filesystem;

namespace {

fs::path tmp(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "geomoe_cli_test";
  fs::create_directories(dir);
  return dir / name;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void spit(const fs::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary);
  out << s;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(GEOMOE_CLI) + " " + args + " >/dev/null 2>" + tmp("stderr.txt").string();
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

// Minimal well-formedness check: balanced, properly nested tags and a single
// root element.
bool well_formed_xml(const std::string& s) {
  std::vector<std::string> stack;
  std::size_t i = 0, roots = 0;
  while ((i = s.find('<', i)) != std::string::npos) {
    const auto j = s.find('>', i);
    if (j == std::string::npos) return false;
    std::string tag = s.substr(i + 1, j - i - 1);
    i = j + 1;
    if (tag.empty() || tag[0] == '?' || tag[0] == '!') continue;
    if (tag[0] == '/') {
      const auto name = tag.substr(1);
      if (stack.empty() || stack.back() != name) return false;
      stack.pop_back();
      continue;
    }
    const bool self = tag.back() == '/';
    const auto name = tag.substr(0, tag.find_first_of(" \t\n/"));
    if (stack.empty()) ++roots;
    if (!self) stack.push_back(name);
  }
  // No raw ampersands outside entities.
  for (std::size_t k = s.find('&'); k != std::string::npos; k = s.find('&', k + 1)) {
    const auto semi = s.find(';', k);
    if (semi == std::string::npos || semi - k > 6) return false;
  }
  return stack.empty() && roots == 1;
}

SavedModel small_moe_model() {
  const auto d = generate_synthetic(tiny_data_config()).dataset;
  RunConfig run;
  run.data = tiny_data_config();
  run.model = tiny_model_config();
  GeoModel<float> dense(run.model);
  const auto cache = collect_activation_cache(dense, d, d.indices(Split::train), {0, 1});
  MoEConfig mc;
  mc.num_experts = 4;
  mc.gate_rank = 2;
  auto moe = convert_to_moe(dense, cache, mc, {0, 1}, 3);
  moe.location_encoder().set_frozen(true);
  return {run, std::move(moe)};
}

}  // namespace

TEST(Config, DefaultsRoundTripAndAreRecorded) {
  RunConfig c;
  c.seed = 17;
  c.apply_seed();
  save_run_config(c, tmp("cfg.json"));
  const auto r = load_run_config(tmp("cfg.json"));
  EXPECT_EQ(to_json(r).dump(), to_json(c).dump());
  const auto j = nlohmann::json::parse(slurp(tmp("cfg.json")));
  EXPECT_EQ(j["model"]["expert_layers"], (std::vector<int>{1, 3, 5, 7}));
  EXPECT_EQ(j["train"]["contrastive_weight"], 0.01);
  EXPECT_EQ(j["analysis"]["n_max"], 10000);
  EXPECT_EQ(j["analysis"]["percentiles"], (std::vector<double>{90, 99.9}));
}

TEST(Config, PartialFileFillsDefaults) {
  spit(tmp("part.json"), R"({"seed": 4, "moe": {"num_experts": 8}})");
  const auto c = load_run_config(tmp("part.json"));
  EXPECT_EQ(c.seed, 4u);
  EXPECT_EQ(c.moe.num_experts, 8);
  EXPECT_EQ(c.moe.hidden, 2);
  EXPECT_EQ(c.data.seed, 4u);
  EXPECT_EQ(c.model.seed, 4u);
  EXPECT_NE(c.train.seed, c.finetune.seed);
}

TEST(Config, UnknownKeyNamesPath) {
  spit(tmp("bad.json"), R"({"model": {"classifier": {"expand": 3}}})");
  try {
    load_run_config(tmp("bad.json"));
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("model.classifier.expand"), std::string::npos) << e.what();
  }
  spit(tmp("type.json"), R"({"train": {"epochs": "many"}})");
  EXPECT_THROW(load_run_config(tmp("type.json")), ConfigError);
  spit(tmp("syntax.json"), R"({"train": )");
  EXPECT_THROW(load_run_config(tmp("syntax.json")), ConfigError);
  spit(tmp("mismatch.json"), R"({"data": {"num_classes": 5}})");
  EXPECT_THROW(load_run_config(tmp("mismatch.json")), ConfigError);
}

TEST(Config, SeedEnvironmentOverride) {
  spit(tmp("seed.json"), R"({"seed": 4})");
  setenv("GEOMOE_SEED", "123", 1);
  const auto c = load_run_config(tmp("seed.json"));
  unsetenv("GEOMOE_SEED");
  EXPECT_EQ(c.seed, 123u);
  EXPECT_EQ(c.data.seed, 123u);
  setenv("GEOMOE_SEED", "abc", 1);
  EXPECT_THROW(load_run_config(tmp("seed.json")), ConfigError);
  unsetenv("GEOMOE_SEED");
}

TEST(Checkpoint, BitwiseRoundTrip) {
  auto saved = small_moe_model();
  save_model(saved.model, saved.run, tmp("m.gmoe"));
  const auto back = load_model(tmp("m.gmoe"));
  const auto a = saved.model.state(), b = back.model.state();
  ASSERT_EQ(a.size(), b.size());
  for (const auto& [name, t] : a) {
    const auto& u = b.at(name);
    ASSERT_EQ(t.shape(), u.shape()) << name;
    EXPECT_EQ(std::memcmp(t.data(), u.data(), t.size() * sizeof(float)), 0) << name;
  }
  EXPECT_TRUE(back.model.location_encoder().frozen());
  EXPECT_EQ(back.model.num_experts(), 4);
  EXPECT_EQ(to_json(back.run).dump(), to_json(saved.run).dump());
  // Saving the reloaded model reproduces the file byte for byte.
  save_model(back.model, back.run, tmp("m2.gmoe"));
  EXPECT_EQ(slurp(tmp("m.gmoe")), slurp(tmp("m2.gmoe")));
}

TEST(Checkpoint, DoubleTensors) {
  Checkpoint<double> c{"{}", {{"a", Tensor<double>({2, 2}, {1, -0.0, 1e-300, 3})}, {"b", Tensor<double>({0})}}};
  save_checkpoint(c, tmp("d.gmoe"));
  const auto r = load_checkpoint<double>(tmp("d.gmoe"));
  EXPECT_EQ(r.tensors.at("a").vec(), c.tensors.at("a").vec());
  EXPECT_TRUE(std::signbit(r.tensors.at("a")[1]));
  EXPECT_THROW(load_checkpoint<float>(tmp("d.gmoe")), ValidationError);
}

TEST(Checkpoint, CorruptionRejected) {
  auto saved = small_moe_model();
  save_model(saved.model, saved.run, tmp("c.gmoe"));
  const std::string good = slurp(tmp("c.gmoe"));
  auto expect_bad = [&](std::string bytes, const std::string& what) {
    spit(tmp("bad.gmoe"), bytes);
    try {
      load_model(tmp("bad.gmoe"));
      ADD_FAILURE() << "accepted: " << what;
    } catch (const ValidationError& e) {
      EXPECT_NE(std::string(e.what()).find("corrupt checkpoint"), std::string::npos) << what << ": " << e.what();
    }
  };
  auto s = good;
  s[0] = 'X';
  expect_bad(s, "magic");
  s = good;
  s[4] = 2;
  expect_bad(s, "version");
  s = good;
  s[30] ^= 1;
  expect_bad(s, "config digest");
  expect_bad(good.substr(0, good.size() - 3), "truncated payload");
  expect_bad(good + "x", "trailing bytes");
  expect_bad(good.substr(0, 10), "truncated header");
  // Huge config length: rejected before any allocation.
  s = good;
  for (int k = 16; k < 24; ++k) s[static_cast<std::size_t>(k)] = '\xff';
  expect_bad(s, "config length");
  expect_bad("", "empty");
}

TEST(Svg, EscapingAndWellFormedOutputs) {
  EXPECT_EQ(xml_escape("a<b&\"c'>"), "a&lt;b&amp;&quot;c&apos;&gt;");
  AffinityMatrix a;
  a.row_labels = {"cls <0>", "b&c"};
  a.col_labels = {"0/", "1/"};
  a.values = {{0.2, 0.8}, {1, 0}};
  a.present = {true, false};
  const auto h = svg_heatmap(a, "t & t");
  EXPECT_TRUE(well_formed_xml(h)) << h;
  EXPECT_EQ(h.find("cls <0>"), std::string::npos);

  RouteTrace tr{{"a", 0, "0/", 1, 0, 0}, {"a", 0, "0/", 3, 0, 1}, {"b", 0, "0/", 1, 0, 1}, {"b", 0, "0/", 3, 0, 1}};
  const auto g = build_routing_graph(tr, 2);
  const auto r = svg_routes(g, 90, 99.9, {{1, 0}});
  EXPECT_TRUE(well_formed_xml(r)) << r;
  const auto l = svg_lines({{"threshold", {0, 1, 2}, {100, 90, 50}}, {"random", {0, 1, 2}, {100, 40, 10}}}, "x", "y", "z");
  EXPECT_TRUE(well_formed_xml(l)) << l;
  const auto hist = svg_histogram({0, 0.5, 1}, {3, 1}, "h", "x");
  EXPECT_TRUE(well_formed_xml(hist)) << hist;
}

TEST(Cli, UsageErrorsExitOne) {
  EXPECT_EQ(run_cli(""), 1);
  EXPECT_EQ(run_cli("frobnicate"), 1);
  EXPECT_EQ(run_cli("gen-data --out x"), 1);
  EXPECT_EQ(run_cli("train --data d --out o --loc sideways"), 1);
  EXPECT_EQ(run_cli("--help"), 0);
}

TEST(Cli, CorruptedHeaderExitsTwo) {
  auto saved = small_moe_model();
  save_model(saved.model, saved.run, tmp("h.gmoe"));
  auto s = slurp(tmp("h.gmoe"));
  s[1] = 'X';
  spit(tmp("h_bad.gmoe"), s);
  EXPECT_EQ(run_cli("trace --ckpt " + tmp("h_bad.gmoe").string() + " --data /nonexistent --out " + tmp("t.csv").string()),
            2);
  EXPECT_NE(slurp(tmp("stderr.txt")).find("corrupt checkpoint"), std::string::npos);
}

TEST(Cli, ConfigErrorsExitTwo) {
  spit(tmp("bad_cli.json"), R"({"nope": 1})");
  EXPECT_EQ(run_cli("gen-data --config " + tmp("bad_cli.json").string() + " --out " + tmp("o").string()), 2);
  EXPECT_NE(slurp(tmp("stderr.txt")).find("nope"), std::string::npos);
  EXPECT_EQ(run_cli("gen-data --config /nonexistent.json --out " + tmp("o").string()), 2);
}
