// rsdetect command-line front end. Every subcommand rebuilds its inputs from
// the seeded scenario, so a run directory can be regenerated stage by stage.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "rsdetect/experiment.hpp"

using namespace rsdetect;
namespace fs = std::filesystem;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = "runs";
  bool quiet = false;
};

// defaults < config file < RSDETECT_* environment < --seed
ScenarioConfig load_config(const Globals& g) {
  ScenarioConfig c = g.config.empty() ? ScenarioConfig{} : ScenarioConfig::load(g.config);
  c.apply_env();
  if (g.seed) c.set("seed", std::to_string(*g.seed));
  // parse every typed key up front so a bad value fails before any work
  grid_from(c);
  cotrain_config(c);
  fleet_spec(c, true);
  fleet_spec(c, false);
  noise_levels(c);
  c.list("eval.top_k");
  c.flag("output.traces");
  c.flag("output.checkpoints");
  c.flag("eval.self_train");
  c.flag("eval.target_supervised");
  return c;
}

Logger logger(const Globals& g) {
  if (g.quiet) return {};
  return [](const std::string& s) { std::cerr << "rsdetect: " << s << '\n'; };
}

fs::path run_dir(const Globals& g, const ScenarioConfig& c) {
  const auto d = run_directory(g.out, c);
  fs::create_directories(d);
  return d;
}

void write_text(const fs::path& p, const std::string& s) {
  auto f = detail::open_out(p);
  f << s;
}

CandidateSet training_candidates(const PreparedData& d) { return subset(d.candidates, d.train_idx); }

Stage1Result run_stage1(const PreparedData& d) {
  const auto train = training_candidates(d);
  std::vector<std::vector<double>> X;
  std::vector<int> y;
  source_matrix(d.source_features, X, y);
  std::vector<std::string> names(shared_feature_names().begin(), shared_feature_names().end());
  return stage1_seed(X, y, train.ids, train.features, d.cfg.num("delta"),
                     forest_params(d.cfg, mix_seed(d.cfg.u64("seed"), 0x51)), names);
}

int checkpoint_iteration(const fs::path& dir) {
  const auto name = dir.filename().string();
  int it = 0;
  if (name.rfind("iter-", 0) != 0 || !detail::parse_number(std::string_view(name).substr(5), it))
    throw Error(ErrorKind::DataError, "not a checkpoint directory: " + dir.string());
  return it;
}

// --- subcommands -------------------------------------------------------------------

int cmd_simulate(const Globals& g) {
  auto c = load_config(g);
  const auto d = prepare(c, logger(g));
  const auto dir = run_dir(g, c);
  write_text(dir / "config.txt", c.canonical());
  auto dump = [&](const char* name, const std::vector<SimVehicle>& fleet) {
    auto f = detail::open_out(dir / name);
    write_trace_header(f);
    for (const auto& v : fleet) write_trace_rows(f, v.trajectory);
  };
  dump("source_traces.csv", d.source);
  dump("target_traces.csv", d.target);
  std::vector<SimVehicle> all = d.source;
  all.insert(all.end(), d.target.begin(), d.target.end());
  auto gt = detail::open_out(dir / "ground_truth.csv");
  write_ground_truth(gt, all);
  std::cout << dir.string() << '\n';
  return 0;
}

int cmd_extract(const Globals& g, const std::string& traces, bool png) {
  auto c = load_config(g);
  const auto dir = run_dir(g, c);
  if (traces.empty()) {
    const auto d = prepare(c, logger(g));
    write_prepared(d, dir);
    std::cout << dir.string() << '\n';
    return 0;
  }
  // external traces: features and images for every vehicle in the file
  const auto grid = grid_from(c);
  const auto fc = feature_config(c);
  const auto ic = image_config(c);
  const auto in = read_traces(traces);
  if (in.malformed_rows) std::cerr << "rsdetect: skipped " << in.malformed_rows << " malformed rows\n";
  std::vector<FeatureRecord> recs;
  fs::create_directories(dir / "images");
  std::size_t dropped = 0;
  for (const auto& t : in.trajectories) {
    try {
      recs.push_back({t.vehicle_id, extract_features(t, grid, fc), VehicleLabel::Unknown});
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::MissingData) throw;
      ++dropped;
      continue;
    }
    const auto s = build_image_stack(t, grid, ic, c.integer("sim.first_day"));
    write_timg_file((dir / "images" / (t.vehicle_id + ".timg")).string(), s);
    if (png)
      for (int k = 0; k < s.days(); ++k) {
        auto f = detail::open_out(dir / "images" / (t.vehicle_id + "-day" + std::to_string(k) + ".png"),
                                  std::ios::out | std::ios::binary);
        write_png(f, s.channels[static_cast<std::size_t>(k)]);
      }
  }
  if (recs.empty()) throw Error(ErrorKind::MissingData, "no vehicle in " + traces + " has a usable day");
  auto f = detail::open_out(dir / "features.csv");
  write_features(f, recs);
  std::cerr << "rsdetect: " << recs.size() << " vehicles extracted, " << dropped << " without usable days\n";
  std::cout << dir.string() << '\n';
  return 0;
}

int cmd_stage1(const Globals& g) {
  auto c = load_config(g);
  const auto d = prepare(c, logger(g));
  const auto dir = run_dir(g, c);
  const auto s1 = detail::stage("stage1", [&] { return run_stage1(d); });
  auto f = detail::open_out(dir / "stage1_forest.rsf");
  write_forest(f, s1.model);
  auto m = detail::open_out(dir / "stage1_manifest.csv");
  write_manifest(m, s1.pool);
  std::cout << "C_r " << s1.pool.ridesourcing().size() << ", C_n " << s1.pool.other().size() << ", C' "
            << s1.pool.unlabeled().size() << '\n';
  return 0;
}

int cmd_cotrain(const Globals& g, bool resume) {
  auto c = load_config(g);
  const auto d = prepare(c, logger(g));
  const auto dir = run_dir(g, c);
  const auto train = training_candidates(d);
  const auto cc = cotrain_config(c);
  const auto log = logger(g);
  LabeledPool pool;
  int first = 1;
  std::optional<fs::path> ck;
  if (resume) ck = latest_checkpoint(dir / "checkpoints");
  if (ck) {
    pool = load_manifest_file(*ck / "manifest.csv");
    const int done = checkpoint_iteration(*ck);
    if (last_iteration(pool) < done) {
      // that iteration added nothing, so the run had already finished
      if (fs::exists(dir / "final")) fs::remove_all(dir / "final");
      fs::copy(*ck, dir / "final", fs::copy_options::recursive);
      std::cout << "already complete at iteration " << done << ", C_r " << pool.ridesourcing().size() << ", C_n "
                << pool.other().size() << ", C' " << pool.unlabeled().size() << '\n';
      return 0;
    }
    first = done + 1;
    if (log) log("resuming after " + ck->filename().string());
  } else {
    pool = detail::stage("stage1", [&] { return run_stage1(d); }).pool;
  }
  const auto r = detail::stage("cotrain", [&] {
    return cotrain(pool, train, cc,
                   [&](const IterationStats& st, const LabeledPool& p, const EnsembleClassifier& model) {
                     if (log)
                       log("iteration " + std::to_string(st.iteration) + ": +" + std::to_string(st.added) +
                           " (C_r " + std::to_string(st.ridesourcing) + ", C_n " + std::to_string(st.other) +
                           ", C' " + std::to_string(st.unlabeled) + ")");
                     save_checkpoint(dir / "checkpoints", st.iteration, p, model);
                   },
                   first);
  });
  const auto last = save_checkpoint(dir, r.iterations, r.pool, r.model);
  if (fs::exists(dir / "final")) fs::remove_all(dir / "final");
  fs::rename(last, dir / "final");
  std::cout << "iterations " << r.iterations << (r.stalled ? " (stalled)" : "") << ", C_r "
            << r.pool.ridesourcing().size() << ", C_n " << r.pool.other().size() << ", C' "
            << r.pool.unlabeled().size() << '\n';
  return 0;
}

int cmd_classify(const Globals& g, std::string model, const std::string& features, const std::string& images) {
  auto c = load_config(g);
  const auto dir = run_dir(g, c);
  if (model.empty()) model = (dir / "final").string();
  const auto ens = load_ensemble(model);
  CandidateSet set;
  if (features.empty()) {
    const auto d = prepare(c, logger(g));
    set = d.candidates;
  } else {
    if (images.empty()) throw Error(ErrorKind::ConfigError, "--features needs --images");
    for (const auto& r : read_features(features)) {
      set.ids.push_back(r.vehicle_id);
      set.features.push_back(r.features.to_vector());
      set.images.push_back(read_timg_file((fs::path(images) / (r.vehicle_id + ".timg")).string(), r.vehicle_id));
    }
  }
  set.validate();
  auto f = detail::open_out(dir / "classification.csv");
  f << "vehicle_id,p_rf,p_cnn,p_final,label,confidence\n";
  std::size_t positives = 0;
  for (std::size_t i = 0; i < set.size(); ++i) {
    const double a = ens.rf_probability(set.features[i]);
    const double b = ens.cnn_probability(set.images[i]);
    const auto cl = classify_probability((a + b) / 2.0);
    positives += cl.label;
    f << set.ids[i] << ',' << detail::format_double(a) << ',' << detail::format_double(b) << ','
      << detail::format_double(cl.probability) << ',' << (cl.label ? "ridesourcing" : "other") << ','
      << detail::format_double(cl.confidence) << '\n';
  }
  std::cout << set.size() << " cars classified, " << positives << " ridesourcing -> "
            << (dir / "classification.csv").string() << '\n';
  return 0;
}

void print_metrics(const char* name, const Json& m) {
  std::printf("%-22s AUC %.4f  accuracy %.4f", name, m["auc"].get<double>(), m["accuracy"].get<double>());
  for (const auto& [k, v] : m["top_k_precision"].items()) std::printf("  top-%s%% %.4f", k.c_str(), v.get<double>());
  std::printf("\n");
}

int cmd_evaluate(const Globals& g) {
  auto c = load_config(g);
  const auto d = prepare(c, logger(g));
  const auto r = run_experiment(d, g.out, logger(g));
  print_metrics("co-trained ensemble", r.report["metrics"]);
  for (const auto& [name, m] : r.report["baselines"].items()) print_metrics(name.c_str(), m);
  std::printf("co-training iterations %d\nreport %s\n", r.report["cotrain"]["iterations"].get<int>(),
              (r.run_dir / "report.json").string().c_str());
  return 0;
}

int cmd_ablate(const Globals& g) {
  auto c = load_config(g);
  const auto d = prepare(c, logger(g));
  const auto j = leave_one_feature_out(d, shared_feature_groups());
  const auto p = run_dir(g, c) / "ablation.json";
  write_json(p, j);
  print_metrics("full", j["full"]);
  for (const auto& row : j["rows"]) print_metrics(("-" + row["removed"].get<std::string>()).c_str(), row["metrics"]);
  std::printf("ablation %s\n", p.string().c_str());
  return 0;
}

int cmd_noise(const Globals& g) {
  auto c = load_config(g);
  const auto d = prepare(c, logger(g));
  const auto j = noise_sweep(d, noise_levels(c));
  const auto p = run_dir(g, c) / "noise.json";
  write_json(p, j);
  print_metrics("clean", j["clean"]);
  for (const auto& row : j["levels"]) {
    char name[64];
    std::snprintf(name, sizeof(name), "%g min, %g m", row["interval_min"].get<double>(), row["radius_m"].get<double>());
    print_metrics(name, row["metrics"]);
  }
  std::printf("noise sweep %s\n", p.string().c_str());
  return 0;
}

std::string key_table() {
  std::string s = "config keys (file lines 'key = value'; environment RSDETECT_<KEY> with dots as underscores):\n";
  for (const auto& k : config_keys()) {
    char line[200];
    std::snprintf(line, sizeof(line), "  %-28s %-14s %s\n", std::string(k.key).c_str(), std::string(k.default_value).c_str(),
                  std::string(k.help).c_str());
    s += line;
  }
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Ridesourcing car detection by transfer from taxi and bus traces"};
  app.footer(key_table());
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "scenario config file")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "master seed (overrides config and environment)");
  app.add_option("--out", g.out, "output root; runs go to <out>/run-<config hash>")->capture_default_str();
  app.add_flag("-q,--quiet", g.quiet, "no progress messages");

  auto* simulate = app.add_subcommand("simulate", "simulate source and target fleets, write traces and ground truth");
  auto* extract = app.add_subcommand("extract", "shared features and trajectory images");
  std::string traces;
  bool png = false;
  extract->add_option("--traces", traces, "extract from this trace CSV instead of the simulated fleets")
      ->check(CLI::ExistingFile);
  extract->add_flag("--png", png, "also write one PNG per vehicle-day (with --traces)");
  auto* stage1 = app.add_subcommand("stage1", "train the source forest and seed confident target labels");
  auto* cot = app.add_subcommand("cotrain", "stage 1 then co-training, with a checkpoint per iteration");
  bool resume = false;
  cot->add_flag("--resume", resume, "continue from the latest checkpoint in the run directory");
  auto* classify = app.add_subcommand("classify", "score cars with a saved ensemble");
  std::string model, features, images;
  classify->add_option("--model", model, "checkpoint directory (default <run>/final)");
  classify->add_option("--features", features, "feature CSV to score instead of the simulated target")
      ->check(CLI::ExistingFile);
  classify->add_option("--images", images, "directory of <vehicle_id>.timg files")->check(CLI::ExistingDirectory);
  auto* evaluate = app.add_subcommand("evaluate", "full experiment and report on held-out cars");
  auto* ablate = app.add_subcommand("ablate", "leave-one-feature-group-out study of the source forest");
  auto* noise = app.add_subcommand("noise-sweep", "source forest precision under perturbed taxi traces");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitConfig;
  }

  try {
    if (simulate->parsed()) return cmd_simulate(g);
    if (extract->parsed()) return cmd_extract(g, traces, png);
    if (stage1->parsed()) return cmd_stage1(g);
    if (cot->parsed()) return cmd_cotrain(g, resume);
    if (classify->parsed()) return cmd_classify(g, model, features, images);
    if (evaluate->parsed()) return cmd_evaluate(g);
    if (ablate->parsed()) return cmd_ablate(g);
    if (noise->parsed()) return cmd_noise(g);
  } catch (const Error& e) {
    std::cerr << "rsdetect: " << e.what() << '\n';
    return e.kind() == ErrorKind::ConfigError ? kExitConfig : kExitData;
  } catch (const std::exception& e) {
    std::cerr << "rsdetect: " << e.what() << '\n';
    return kExitData;
  }
  return kExitConfig;
}
