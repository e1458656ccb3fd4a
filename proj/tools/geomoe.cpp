// geomoe command-line driver.
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"

#include "geomoe/analysis.hpp"
#include "geomoe/checkpoint.hpp"
#include "geomoe/svg.hpp"

namespace fs = std::filesystem;
using namespace geomoe;

namespace {

std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    try {
      std::size_t pos = 0;
      out.push_back(std::stoi(tok, &pos));
      if (pos != tok.size()) throw std::invalid_argument(tok);
    } catch (const std::exception&) {
      throw ConfigError("bad integer list '" + s + "'");
    }
  }
  return out;
}

void write_text(const fs::path& p, const std::string& s) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p);
  if (!out) throw ValidationError("cannot write " + p.string());
  out << s;
}

std::optional<CellId> location_arg(const std::string& token) {
  if (token.empty()) return std::nullopt;
  return CellId::parse(token);
}

void write_ranges(const std::vector<ClassRange>& ranges, const fs::path& p) {
  std::ofstream out(p);
  out << "class,lat,lng,radius\n" << std::setprecision(17);
  for (std::size_t k = 0; k < ranges.size(); ++k) {
    out << k << ',' << ranges[k].center.lat << ',' << ranges[k].center.lng << ',' << ranges[k].radius << '\n';
  }
}

std::vector<ClassRange> read_ranges(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw ValidationError("cannot open " + p.string());
  std::string line;
  std::getline(in, line);
  std::vector<ClassRange> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string f[4];
    for (auto& x : f) std::getline(ss, x, ',');
    out.push_back({{std::stod(f[1]), std::stod(f[2])}, std::stod(f[3])});
  }
  return out;
}

struct PruneCurvePoint {
  std::string method;
  std::size_t dropped;
  double percentile;
  double accuracy;
};

void print_split_counts(const DatasetManifest& m) {
  std::size_t c[3] = {0, 0, 0};
  for (const auto& r : m.records) ++c[static_cast<int>(r.split)];
  std::cout << "records " << m.records.size() << " (train " << c[0] << ", val " << c[1] << ", test " << c[2] << "), classes "
            << m.class_names.size() << '\n';
}

// ---- subcommands ----

int cmd_gen_data(const std::string& config, const std::string& out) {
  const RunConfig run = load_run_config(config);
  const auto sd = generate_synthetic(run.data);
  save_dataset(sd.dataset, out);
  write_ranges(sd.ranges, fs::path(out) / "ranges.csv");
  save_run_config(run, fs::path(out) / "config.json");
  print_split_counts(sd.dataset.manifest);
  const auto part = adaptive_partition(sd.dataset.manifest.geo_records(Split::train), run.analysis.n_max, run.analysis.max_level);
  std::cout << "partition cells " << part.cells.size() << (part.hit_max_level ? " (max level reached)" : "") << '\n';
  return 0;
}

int cmd_train(const std::string& config, const std::string& data, const std::string& out, const std::string& loc,
              const std::string& init, std::string log) {
  if (config.empty() && init.empty()) throw ConfigError("train needs --config or --init");
  RunConfig run;
  GeoModel<float> model;
  if (!init.empty()) {
    auto saved = load_model(init);
    run = config.empty() ? saved.run : load_run_config(config);
    run.model = saved.run.model;
    model = std::move(saved.model);
  } else {
    run = load_run_config(config);
    model = GeoModel<float>(run.model);
  }
  TrainConfig& tc = model.is_moe() ? run.finetune : run.train;
  if (!loc.empty()) tc.loc_blocks = loc_blocks_from_name(loc);
  const Dataset d = load_dataset(data);
  const auto res = train<float>(model, d, tc, [&](const GeoModel<float>& m, int) { save_model(m, run, out); });
  if (log.empty()) log = out + ".log.csv";
  write_train_log(res.log, log);
  save_run_config(run, out + ".config.json");
  if (res.diverged) {
    std::cerr << "geomoe: numeric error: " << res.message << '\n';
    save_model(model, run, out);
    return 3;
  }
  save_model(model, run, out);
  std::cout << "best val acc " << res.best_val_acc << " at epoch " << res.best_epoch << '\n';
  return 0;
}

int cmd_convert(const std::string& ckpt, const std::string& data, const std::string& out, int experts, int hidden,
                const std::string& layers_arg, int rank, int refine, bool balance) {
  auto saved = load_model(ckpt);
  if (saved.model.is_moe()) throw StateError(ckpt + " already has expert layers");
  RunConfig run = saved.run;
  if (experts > 0) run.moe.num_experts = experts;
  if (hidden > 0) run.moe.hidden = hidden;
  if (rank >= 0) run.moe.gate_rank = rank;
  if (refine >= 0) run.moe.refine_iters = refine;
  if (balance) run.moe.balance_classes = true;
  const auto layers = layers_arg.empty() ? run.model.expert_layers : parse_int_list(layers_arg);
  const Dataset d = load_dataset(data);
  auto idx = d.indices(Split::train);
  if (run.moe.balance_classes) {
    Rng rng(Rng::derive(run.seed, 3));
    idx = balanced_resample(d.manifest, idx, run.moe.min_class_count, rng);
  }
  const auto cache = collect_activation_cache(saved.model, d, idx, layers);
  const long long before = static_cast<long long>(saved.model.parameter_count());
  auto mm = convert_to_moe(saved.model, cache, run.moe, layers, Rng::derive(run.seed, 4));
  save_model(mm, run, out);
  std::cout << "converted layers";
  for (int l : layers) std::cout << ' ' << l;
  std::cout << " -> " << run.moe.num_experts << " experts; parameters " << before
            << " -> " << mm.parameter_count() << '\n';
  return 0;
}

int cmd_trace(const std::string& ckpt, const std::string& data, const std::string& split, const std::string& out,
              const std::string& location, int level) {
  const auto saved = load_model(ckpt);
  const Dataset d = load_dataset(data);
  const auto idx = location_eval_indices(d.manifest, split_from_name(split), location_arg(location));
  const auto t = trace_routes(saved.model, d, idx, level >= 0 ? level : saved.run.analysis.cell_level);
  write_trace_csv(t, out);
  std::cout << "traced " << idx.size() << " samples, " << t.size() << " routes\n";
  return 0;
}

int cmd_prune(const std::string& traces, const std::string& method, std::optional<double> percentile,
              std::optional<int> count, std::string location, const std::string& out, const std::string& ckpt,
              const std::string& data, std::string importance, bool per_layer, std::uint64_t seed) {
  const auto saved = load_model(ckpt);
  const Dataset d = load_dataset(data);
  if (location.empty()) location = saved.run.analysis.location;
  const auto loc = location_arg(location);
  const auto g = build_routing_graph(read_trace_csv(traces), saved.model.num_experts());
  per_layer = per_layer || saved.run.analysis.per_layer_percentile;

  PruneSet ps;
  if (method == "threshold") {
    if (!percentile) throw ConfigError("threshold pruning needs --percentile");
    ps = threshold_prune(g, *percentile, per_layer);
  } else if (method == "per-expert" || method == "random") {
    std::size_t k = 0;
    if (count) {
      if (*count < 0) throw ConfigError("--count must be >= 0");
      k = static_cast<std::size_t>(*count);
    } else if (percentile) {
      k = threshold_prune(g, *percentile, per_layer).nodes.size();
    } else {
      throw ConfigError(method + " pruning needs --count or --percentile");
    }
    if (method == "per-expert") {
      if (importance.empty()) importance = out + ".importance.csv";
      ImportanceTable table;
      if (fs::exists(importance)) {
        table = read_importance_csv(importance);
      } else {
        table = per_expert_importance(saved.model, d, location_eval_indices(d.manifest, Split::val, loc));
        write_importance_csv(table, importance);
      }
      ps = per_expert_prune(table, k, &g);
    } else {
      ps = random_prune(expert_nodes(saved.model), k, seed);
    }
    ps.percentile = percentile;
  } else {
    throw ConfigError("unknown method '" + method + "'");
  }
  const auto ev = evaluate_pruned(saved.model, ps.nodes, d, location_eval_indices(d.manifest, Split::test, loc));
  PruningManifest m{ps.method, ps.percentile, {ps.nodes.begin(), ps.nodes.end()}, location, ev.baseline.accuracy,
                    ev.pruned.accuracy, g.hash()};
  write_manifest(m, out);
  std::cout << "pruned " << m.nodes.size() << " nodes; baseline_acc " << m.baseline_acc << " pruned_acc " << m.pruned_acc
            << '\n';
  return 0;
}

int cmd_eval(const std::string& ckpt, const std::string& manifest, const std::string& data, std::string location,
             const std::string& split, const std::string& per_class) {
  const auto saved = load_model(ckpt);
  const Dataset d = load_dataset(data);
  AblationSet nodes;
  if (!manifest.empty()) {
    const auto m = read_manifest(manifest);
    nodes = m.node_set();
    if (location.empty()) location = m.location;
  }
  const auto ev = evaluate_pruned(saved.model, nodes, d, location_eval_indices(d.manifest, split_from_name(split), location_arg(location)));
  std::cout << std::setprecision(6) << "location " << (location.empty() ? "<global>" : location) << '\n'
            << "samples " << ev.baseline.count << '\n'
            << "baseline_acc " << ev.baseline.accuracy << '\n'
            << "pruned_acc " << ev.pruned.accuracy << '\n';
  std::ostringstream csv;
  csv << "class_id,class_name,count,baseline_acc,pruned_acc\n";
  for (std::size_t k = 0; k < d.num_classes(); ++k) {
    const auto n = ev.baseline.class_total[k];
    if (n == 0) continue;
    csv << k << ',' << d.manifest.class_names[k] << ',' << n << ',' << 100.0 * ev.baseline.class_correct[k] / n << ','
        << 100.0 * ev.pruned.class_correct[k] / n << '\n';
  }
  if (per_class.empty()) {
    std::cout << csv.str();
  } else {
    write_text(per_class, csv.str());
  }
  return 0;
}

int cmd_plot(const std::string& kind, const std::string& in, const std::string& out, double low, double high,
             const std::string& manifest) {
  std::string svg;
  if (kind == "affinity") {
    svg = svg_heatmap(read_affinity_csv(in), fs::path(in).filename().string());
  } else if (kind == "routes") {
    AblationSet pruned;
    if (!manifest.empty()) pruned = read_manifest(manifest).node_set();
    svg = svg_routes(build_routing_graph(read_trace_csv(in)), low, high, pruned);
  } else if (kind == "prune-curve") {
    std::ifstream f(in);
    if (!f) throw ValidationError("cannot open " + in);
    std::string line;
    std::getline(f, line);
    if (line.rfind("method,dropped", 0) != 0) throw ValidationError(in + ": expected a method,dropped,... header");
    std::map<std::string, CurveSeries> series;
    while (std::getline(f, line)) {
      if (line.empty()) continue;
      std::stringstream ss(line);
      std::string method, dropped, pct, acc;
      std::getline(ss, method, ',');
      std::getline(ss, dropped, ',');
      std::getline(ss, pct, ',');
      std::getline(ss, acc, ',');
      auto& s = series[method];
      s.name = method;
      s.x.push_back(std::stod(dropped));
      s.y.push_back(std::stod(acc));
    }
    std::vector<CurveSeries> v;
    for (auto& [k, s] : series) v.push_back(s);
    svg = svg_lines(v, "accuracy vs dropped experts", "dropped experts", "accuracy (%)");
  } else if (kind == "coverage") {
    std::ifstream f(in);
    if (!f) throw ValidationError("cannot open " + in);
    std::string line;
    std::getline(f, line);
    if (line != "bin_lo,bin_hi,count") throw ValidationError(in + ": expected a bin_lo,bin_hi,count header");
    std::vector<double> edges;
    std::vector<std::size_t> counts;
    while (std::getline(f, line)) {
      if (line.empty()) continue;
      std::stringstream ss(line);
      std::string lo, hi, c;
      std::getline(ss, lo, ',');
      std::getline(ss, hi, ',');
      std::getline(ss, c, ',');
      if (edges.empty()) edges.push_back(std::stod(lo));
      edges.push_back(std::stod(hi));
      counts.push_back(std::stoul(c));
    }
    svg = svg_histogram(edges, counts, "species coverage", "fraction of grid cells covered");
  } else {
    throw ConfigError("unknown plot kind '" + kind + "'");
  }
  write_text(out, svg);
  return 0;
}

int cmd_analyze(const std::string& ckpt, const std::string& data, const std::string& out, std::string location,
                int layer) {
  const auto saved = load_model(ckpt);
  const auto& run = saved.run;
  const auto& model = saved.model;
  const Dataset d = load_dataset(data);
  const fs::path dir(out);
  fs::create_directories(dir);
  if (location.empty()) location = run.analysis.location;
  const auto loc = location_arg(location);
  const auto moe_layers = model.moe_layer_indices();
  if (layer < 0) layer = moe_layers.empty() ? run.model.num_layers() - 1 : moe_layers.front();

  // Federated partition and per-location split table.
  const auto part = adaptive_partition(d.manifest.geo_records(Split::train), run.analysis.n_max, run.analysis.max_level);
  {
    std::ofstream f(dir / "partition.csv");
    f << "cell,records,max_class_count\n";
    for (const auto& c : part.cells) f << c.cell.token() << ',' << c.records << ',' << c.max_class_count << '\n';
    const auto ls = split_by_location(d.manifest, part, part.ids());
    std::ofstream t(dir / "locations.csv");
    t << "location,train,val,test,classes\n";
    for (const auto& l : ls.locations) {
      t << l.cell.token() << ',' << l.train.size() << ',' << l.val.size() << ',' << l.test.size() << ',' << l.classes.size()
        << '\n';
    }
    for (const auto& w : ls.warnings) std::cerr << "geomoe: warning: " << w << '\n';
  }

  const auto val = d.indices(Split::val);
  if (model.is_moe()) {
    const auto a = class_expert_affinity(model, d, val, layer, run.moe.temperature);
    write_affinity_csv(a, dir / "affinity_experts.csv");
    write_text(dir / "affinity_experts.svg", svg_heatmap(a, "class-expert affinity, layer " + std::to_string(layer)));
  }
  {
    std::set<CellId> cells;
    for (auto i : d.indices(Split::train)) cells.insert(cell_from_latlng(d.record(i).location, run.analysis.cell_level));
    const auto a = class_cell_affinity(model, d, val, {cells.begin(), cells.end()}, layer, run.moe.temperature);
    for (const auto& w : a.warnings) std::cerr << "geomoe: warning: " << w << '\n';
    write_affinity_csv(a, dir / "affinity_cells.csv");
    write_text(dir / "affinity_cells.svg", svg_heatmap(a, "class-cell affinity, layer " + std::to_string(layer)));
  }
  if (fs::exists(fs::path(data) / "ranges.csv")) {
    const auto ranges = read_ranges(fs::path(data) / "ranges.csv");
    const auto grid = fibonacci_grid(static_cast<std::size_t>(run.analysis.grid_points));
    const auto cov = coverage_density(presence_scores(ranges, grid), run.analysis.coverage_threshold);
    write_coverage_csv(cov, dir / "coverage.csv");
    std::ofstream f(dir / "coverage_classes.csv");
    f << "class,coverage\n";
    for (std::size_t k = 0; k < cov.coverage.size(); ++k) f << k << ',' << cov.coverage[k] << '\n';
    write_text(dir / "coverage.svg", svg_histogram(cov.bin_edges, cov.histogram, "species coverage", "fraction covered"));
    std::cout << "coverage median " << cov.median << " mean " << cov.mean << " top-decile mean " << cov.top_decile_mean
              << '\n';
  } else {
    std::cerr << "geomoe: warning: no ranges.csv in " << data << "; coverage skipped\n";
  }

  if (model.is_moe()) {
    const auto vidx = location_eval_indices(d.manifest, Split::val, loc);
    const auto tidx = location_eval_indices(d.manifest, Split::test, loc);
    const auto trace = trace_routes(model, d, vidx, run.analysis.cell_level);
    write_trace_csv(trace, dir / "traces.csv");
    const auto g = build_routing_graph(trace, model.num_experts());
    write_text(dir / "routes.svg", svg_routes(g, run.analysis.percentiles.size() > 0 ? run.analysis.percentiles[0] : 90.0,
                                              run.analysis.percentiles.size() > 1 ? run.analysis.percentiles[1] : 99.9));
    const auto table = per_expert_importance(model, d, vidx);
    write_importance_csv(table, dir / "importance.csv");
    const auto nodes = expert_nodes(model);
    std::vector<PruneCurvePoint> curve;
    for (double p : run.analysis.prune_percentiles) {
      const auto ps = threshold_prune(g, p, run.analysis.per_layer_percentile);
      const std::size_t k = ps.nodes.size();
      curve.push_back({"threshold", k, p, evaluate(model, d, tidx, &ps.nodes).accuracy});
      const auto pe = per_expert_prune(table, k, &g);
      curve.push_back({"per-expert", k, p, evaluate(model, d, tidx, &pe.nodes).accuracy});
      const auto pr = random_prune(nodes, k, Rng::derive(run.seed, static_cast<std::uint64_t>(k)));
      curve.push_back({"random", k, p, evaluate(model, d, tidx, &pr.nodes).accuracy});
    }
    std::ofstream f(dir / "prune_curve.csv");
    f << "method,dropped,percentile,accuracy\n";
    std::map<std::string, CurveSeries> series;
    for (const auto& c : curve) {
      f << c.method << ',' << c.dropped << ',' << c.percentile << ',' << c.accuracy << '\n';
      series[c.method].name = c.method;
      series[c.method].x.push_back(static_cast<double>(c.dropped));
      series[c.method].y.push_back(c.accuracy);
    }
    std::vector<CurveSeries> v;
    for (auto& [k, s] : series) v.push_back(s);
    write_text(dir / "prune_curve.svg", svg_lines(v, "location " + (location.empty() ? std::string("<global>") : location),
                                                  "dropped experts", "accuracy (%)"));
  }
  std::cout << "analysis written to " << dir.string() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"geomoe: geography-aware mixture-of-experts toolkit"};
  app.require_subcommand(1);
  int threads = 1;
  app.add_option("--threads", threads, "Cap on internal parallelism (computation is single-threaded)")
      ->check(CLI::PositiveNumber);
  std::function<int()> action;

  std::string config, out, data, ckpt, loc, init, log, layers, split = "val", location, traces, method, importance,
                                                                manifest, kind, in, per_class;
  int experts = 0, hidden = 0, rank = -1, refine = -1, level = -1, layer = -1;
  bool balance = false, per_layer = false;
  std::optional<double> percentile;
  std::optional<int> count;
  std::uint64_t seed = 0;
  double low = 90.0, high = 99.9;

  auto* gen = app.add_subcommand("gen-data", "Generate the synthetic geo dataset");
  gen->add_option("--config", config)->required();
  gen->add_option("--out", out)->required();
  gen->callback([&] { action = [&] { return cmd_gen_data(config, out); }; });

  auto* tr = app.add_subcommand("train", "Train a model (dense, or experts after convert via --init)");
  tr->add_option("--config", config);
  tr->add_option("--data", data)->required();
  tr->add_option("--out", out)->required();
  tr->add_option("--loc", loc)->check(CLI::IsMember({"all", "last-two", "none"}));
  tr->add_option("--init", init, "Start from this checkpoint");
  tr->add_option("--log", log, "Training log CSV (default OUT.log.csv)");
  tr->callback([&] { action = [&] { return cmd_train(config, data, out, loc, init, log); }; });

  auto* cv = app.add_subcommand("convert", "Replace dense MLPs by routed experts");
  cv->add_option("--ckpt", ckpt)->required();
  cv->add_option("--data", data)->required();
  cv->add_option("--out", out)->required();
  cv->add_option("--experts", experts);
  cv->add_option("--hidden", hidden);
  cv->add_option("--layers", layers, "Comma-separated layers (default: model expert_layers, 1,3,5,7)");
  cv->add_option("--rank", rank, "Gate rank; 0 keeps the full matrix");
  cv->add_option("--refine-iters", refine);
  cv->add_flag("--balance", balance, "Resample rare classes before clustering");
  cv->callback([&] { action = [&] { return cmd_convert(ckpt, data, out, experts, hidden, layers, rank, refine, balance); }; });

  auto* tc = app.add_subcommand("trace", "Record per-patch expert routes");
  tc->add_option("--ckpt", ckpt)->required();
  tc->add_option("--data", data)->required();
  tc->add_option("--split", split)->check(CLI::IsMember({"train", "val", "test"}));
  tc->add_option("--out", out)->required();
  tc->add_option("--location", location, "Keep samples whose class occurs in this cell");
  tc->add_option("--cell-level", level);
  tc->callback([&] { action = [&] { return cmd_trace(ckpt, data, split, out, location, level); }; });

  auto* pr = app.add_subcommand("prune", "Select experts to remove for a location");
  pr->add_option("--traces", traces)->required();
  pr->add_option("--method", method)->required()->check(CLI::IsMember({"threshold", "per-expert", "random"}));
  pr->add_option("--percentile", percentile);
  pr->add_option("--count", count);
  pr->add_option("--location", location);
  pr->add_option("--out", out)->required();
  pr->add_option("--ckpt", ckpt)->required();
  pr->add_option("--data", data)->required();
  pr->add_option("--importance", importance, "Per-expert importance cache (default OUT.importance.csv)");
  pr->add_flag("--per-layer", per_layer, "Percentile per layer pair instead of pooled");
  pr->add_option("--seed", seed);
  pr->callback([&] {
    action = [&] {
      return cmd_prune(traces, method, percentile, count, location, out, ckpt, data, importance, per_layer, seed);
    };
  });

  auto* ev = app.add_subcommand("eval", "Baseline and pruned accuracy");
  ev->add_option("--ckpt", ckpt)->required();
  ev->add_option("--manifest", manifest);
  ev->add_option("--data", data)->required();
  ev->add_option("--location", location);
  ev->add_option("--split", split = "test")->check(CLI::IsMember({"train", "val", "test"}));
  ev->add_option("--per-class", per_class, "Write per-class accuracy CSV here instead of stdout");
  ev->callback([&] { action = [&] { return cmd_eval(ckpt, manifest, data, location, split, per_class); }; });

  auto* pl = app.add_subcommand("plot", "Render SVG from analysis CSV");
  pl->add_option("--kind", kind)->required()->check(CLI::IsMember({"affinity", "routes", "prune-curve", "coverage"}));
  pl->add_option("--in", in)->required();
  pl->add_option("--out", out)->required();
  pl->add_option("--low", low, "Route band percentile (grey below)");
  pl->add_option("--high", high, "Route band percentile (red above)");
  pl->add_option("--manifest", manifest, "Hollow out pruned nodes in route diagrams");
  pl->callback([&] { action = [&] { return cmd_plot(kind, in, out, low, high, manifest); }; });

  auto* an = app.add_subcommand("analyze", "Affinities, coverage, partition and prune curves");
  an->add_option("--ckpt", ckpt)->required();
  an->add_option("--data", data)->required();
  an->add_option("--out", out)->required();
  an->add_option("--location", location);
  an->add_option("--layer", layer);
  an->callback([&] { action = [&] { return cmd_analyze(ckpt, data, out, location, layer); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }
  (void)threads;
  try {
    return action();
  } catch (const NumericError& e) {
    std::cerr << "geomoe: numeric error: " << e.what() << '\n';
    return 3;
  } catch (const ConfigError& e) {
    std::cerr << "geomoe: config error: " << e.what() << '\n';
    return 2;
  } catch (const Error& e) {
    std::cerr << "geomoe: validation error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "geomoe: error: " << e.what() << '\n';
    return 2;
  }
}
