#include "crl/experiment.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <ostream>

#include "crl/error.hpp"

namespace crl {

using nlohmann::json;
namespace fs = std::filesystem;

json read_json(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw UsageError("cannot read " + path.string());
  try {
    return json::parse(f);
  } catch (const json::exception& e) {
    throw UsageError(path.string() + ": " + e.what());
  }
}

void write_json(const fs::path& path, const json& doc) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot write " + path.string());
  f << doc.dump(2) << "\n";
}

json matrix_to_json(const AccuracyMatrix& m) {
  json rows = json::array();
  for (int t = 1; t <= m.num_tasks(); ++t) rows.push_back(m.row(t));
  return rows;
}

AccuracyMatrix matrix_from_json(const json& j) {
  AccuracyMatrix m(static_cast<int>(j.size()));
  for (int t = 1; t <= m.num_tasks(); ++t) {
    const auto& row = j.at(t - 1);
    if (static_cast<int>(row.size()) != t) throw UsageError("accuracy matrix row " + std::to_string(t) + " has wrong length");
    for (int k = 1; k <= t; ++k) m.set(t, k, row.at(k - 1).get<double>());
  }
  return m;
}

json metrics_to_json(const MetricsReport& r) {
  json j{{"avg_accuracy", r.avg_accuracy},
         {"final_avg_accuracy", r.final_avg_accuracy},
         {"forgetting", r.forgetting},
         {"chance", r.chance}};
  if (!r.warning.empty()) j["warning"] = r.warning;
  return j;
}

json strip_timing(json doc) {
  if (doc.is_object()) {
    doc.erase("wall_clock_seconds");
    for (auto& [k, v] : doc.items()) v = strip_timing(v);
  } else if (doc.is_array()) {
    for (auto& v : doc) v = strip_timing(v);
  }
  return doc;
}

fs::path cmd_generate_data(const ExperimentConfig& cfg, const RunOptions& opts) {
  const fs::path root = opts.output_dir.value_or(cfg.output_dir);
  if (!cfg.dataset.synthetic) throw ConfigError("generate-data needs dataset.source = synthetic");
  const Dataset ds = cfg.dataset.load();
  const fs::path dir = root / "data" / ds.name;
  write_dataset(ds, dir);
  if (opts.log) *opts.log << "wrote " << ds.clips.size() << " clips to " << (dir / "manifest.csv").string() << "\n";
  if (cfg.downstream && cfg.downstream->synthetic) {
    const Dataset down = cfg.downstream->load();
    const fs::path ddir = root / "data" / down.name;
    write_dataset(down, ddir);
    if (opts.log) *opts.log << "wrote " << down.clips.size() << " clips to " << (ddir / "manifest.csv").string() << "\n";
  }
  return dir;
}

namespace {

void write_matrix_csv(const fs::path& path, const AccuracyMatrix& m) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot write " + path.string());
  f << "t,j,accuracy\n";
  char buf[64];
  for (int t = 1; t <= m.num_tasks(); ++t)
    for (int j = 1; j <= t; ++j) {
      std::snprintf(buf, sizeof buf, "%.17g", m.at(t, j));
      f << t << "," << j << "," << buf << "\n";
    }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot write " + path.string());
  f << text;
}

std::pair<double, double> mean_std(const std::vector<double>& xs) {
  if (xs.empty()) return {0.0, 0.0};
  double m = 0;
  for (double x : xs) m += x;
  m /= static_cast<double>(xs.size());
  double v = 0;
  for (double x : xs) v += (x - m) * (x - m);
  // Sample standard deviation; zero for a single run.
  const double sd = xs.size() > 1 ? std::sqrt(v / static_cast<double>(xs.size() - 1)) : 0.0;
  return {m, sd};
}

json run_one(const ExperimentConfig& cfg, const Dataset& dataset, const Dataset* downstream, std::uint64_t seed,
             std::optional<int> fold, const fs::path& root, std::ostream* log) {
  const auto started = std::chrono::steady_clock::now();
  std::string dirname = "seed_" + std::to_string(seed);
  if (fold) dirname += "_fold" + std::to_string(*fold);
  const fs::path dir = root / dirname;
  fs::create_directories(dir);
  write_text(dir / "config.echo.toml", cfg.source_text);

  const TaskSequence seq = split_tasks(dataset, cfg.num_tasks, cfg.split_seed.value_or(seed));
  nn::EncoderConfig enc = cfg.encoder;
  enc.freq_bins = dataset.freq_bins();

  EvalPlan plan{cfg.protocols, downstream};
  json artifacts = json::array();
  auto hook = [&](int t, const RunState& st) {
    const std::string name = "encoder_task" + std::to_string(t) + ".bin";
    nn::save_state(st.snapshots.back(), dir / name);
    artifacts.push_back(dirname + "/" + name);
    if (log) {
      const auto& r = st.reports.back();
      *log << "  [" << dirname << "] task " << t << "/" << cfg.num_tasks << " clips=" << r.train_size
           << " loss " << r.first_epoch_loss << " -> " << r.last_epoch_loss << "\n";
    }
  };
  const SequenceResult res = run_sequence(dataset, seq, cfg.regime, plan, enc, seed, hook);

  json run{{"seed", seed},
           {"fold", fold ? json(*fold) : json(nullptr)},
           {"directory", dirname},
           {"class_order", seq.class_order},
           {"tasks", seq.tasks},
           {"classes_seen", res.classes_seen}};
  json in_domain = json::object();
  bool first = true;
  for (const auto& p : cfg.protocols) {
    if (p.kind == ProtocolKind::FLEP) continue;
    const auto& m = res.matrices.at(p.kind);
    const MetricsReport rep = summarize(m, res.classes_seen);
    const std::string pname = to_string(p.kind);
    fs::create_directories(dir / pname);
    write_matrix_csv(dir / pname / "accuracy_matrix.csv", m);
    json metrics = metrics_to_json(rep);
    metrics["protocol"] = pname;
    metrics["seed"] = seed;
    write_json(dir / pname / "metrics.json", metrics);
    artifacts.push_back(dirname + "/" + pname + "/accuracy_matrix.csv");
    artifacts.push_back(dirname + "/" + pname + "/metrics.json");
    if (first) {
      write_matrix_csv(dir / "accuracy_matrix.csv", m);
      artifacts.push_back(dirname + "/accuracy_matrix.csv");
      first = false;
    }
    in_domain[pname] = {{"accuracy_matrix", matrix_to_json(m)}, {"metrics", metrics_to_json(rep)}};
  }
  run["in_domain"] = in_domain;
  if (!res.flep_curve.empty()) {
    const double chance = 1.0 / downstream->num_classes;
    run["flep"] = {{"curve", res.flep_curve}, {"final_accuracy", res.flep_curve.back()}, {"chance", chance}};
  }
  run["training"] = json::array();
  for (const auto& r : res.reports)
    run["training"].push_back({{"task", r.task}, {"clips", r.train_size}, {"steps", r.steps},
                               {"first_epoch_loss", r.first_epoch_loss}, {"last_epoch_loss", r.last_epoch_loss}});
  artifacts.push_back(dirname + "/results.json");
  run["artifacts"] = artifacts;
  run["wall_clock_seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  write_json(dir / "results.json", run);
  return run;
}

}  // namespace

json cmd_run(const ExperimentConfig& cfg_in, const RunOptions& opts) {
  ExperimentConfig cfg = cfg_in;
  if (opts.seeds) cfg.seeds = *opts.seeds;
  if (opts.output_dir) cfg.output_dir = *opts.output_dir;
  cfg.validate();
  const auto started = std::chrono::steady_clock::now();

  const Dataset base = cfg.dataset.load();
  if (cfg.num_tasks > base.num_classes)
    throw ConfigError("split.num_tasks (" + std::to_string(cfg.num_tasks) + ") exceeds the number of classes (" +
                      std::to_string(base.num_classes) + ")");
  std::optional<Dataset> downstream;
  if (cfg.downstream) {
    downstream = cfg.downstream->load();
    check_downstream(*downstream, base);
  }

  fs::create_directories(cfg.output_dir);
  write_text(cfg.output_dir / "config.echo.toml", cfg.source_text);

  std::vector<std::optional<int>> folds;
  if (cfg.folds.empty()) folds.push_back(std::nullopt);
  for (int f : cfg.folds) folds.push_back(f);

  json runs = json::array();
  for (auto seed : cfg.seeds)
    for (auto fold : folds) {
      const Dataset ds = fold ? base.with_fold_as_test(*fold) : base;
      if (opts.log) *opts.log << "run " << cfg.run_label() << " seed " << seed << (fold ? " fold " + std::to_string(*fold) : "") << "\n";
      runs.push_back(run_one(cfg, ds, downstream ? &*downstream : nullptr, seed, fold, cfg.output_dir, opts.log));
    }

  json protocols = json::array();
  json aggregate = json::object();
  for (const auto& p : cfg.protocols) {
    const std::string pname = to_string(p.kind);
    protocols.push_back(pname);
    std::vector<double> finals, forgets;
    for (const auto& r : runs) {
      if (p.kind == ProtocolKind::FLEP) {
        finals.push_back(r.at("flep").at("final_accuracy").get<double>());
      } else {
        const auto& m = r.at("in_domain").at(pname).at("metrics");
        finals.push_back(m.at("final_avg_accuracy").get<double>());
        forgets.push_back(m.at("forgetting").get<double>());
      }
    }
    const auto [fm, fs_] = mean_std(finals);
    json agg{{"final_avg_accuracy", {{"mean", fm}, {"std", fs_}, {"values", finals}}}};
    if (p.kind != ProtocolKind::FLEP) {
      const auto [gm, gs] = mean_std(forgets);
      agg["forgetting"] = {{"mean", gm}, {"std", gs}, {"values", forgets}};
    }
    aggregate[pname] = agg;
  }

  json doc{{"label", cfg.run_label()},
           {"regime", cfg.regime.label()},
           {"mode", to_string(cfg.regime.mode)},
           {"distill", to_string(cfg.regime.distill)},
           {"replay", to_string(cfg.regime.replay)},
           {"num_tasks", cfg.num_tasks},
           {"num_classes", base.num_classes},
           {"dataset", base.name},
           {"protocols", protocols},
           {"config_echo", cfg.source_text},
           {"runs", runs},
           {"aggregate", aggregate}};
  if (cfg.regime.mode == RegimeMode::joint)
    doc["joint"] = {{"alpha", cfg.regime.joint.alpha}, {"beta", cfg.regime.joint.beta}};
  doc["wall_clock_seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  write_json(cfg.output_dir / "results.json", doc);

  return doc;
}

void print_summary(const json& doc, std::ostream& out) {
  const auto label = doc.at("label").get<std::string>();
  for (const auto& p : doc.at("protocols")) {
    const auto& a = doc.at("aggregate").at(p.get<std::string>());
    char buf[160];
    std::snprintf(buf, sizeof buf, "%s %s: A = %.4f +- %.4f", label.c_str(), p.get<std::string>().c_str(),
                  a.at("final_avg_accuracy").at("mean").get<double>(), a.at("final_avg_accuracy").at("std").get<double>());
    out << buf;
    if (a.contains("forgetting")) {
      std::snprintf(buf, sizeof buf, "  F = %.4f +- %.4f", a.at("forgetting").at("mean").get<double>(),
                    a.at("forgetting").at("std").get<double>());
      out << buf;
    }
    out << "\n";
  }
}

}  // namespace crl
