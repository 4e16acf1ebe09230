#include "crl/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "crl/error.hpp"

namespace crl {

Dataset DatasetSource::load() const {
  if (synthetic) return generate_synthetic(spec);
  return load_dataset(manifest, num_classes);
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

// Strips a trailing comment that is not inside a quoted string.
std::string strip_comment(const std::string& s) {
  bool quoted = false;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '"') quoted = !quoted;
    if (s[i] == '#' && !quoted) return s.substr(0, i);
  }
  return s;
}

struct Value {
  std::string key;
  std::string raw;
  int line = 0;

  [[noreturn]] void fail(const std::string& what) const {
    throw ConfigError("line " + std::to_string(line) + ": " + key + ": " + what);
  }

  std::string str() const {
    if (raw.size() >= 2 && raw.front() == '"' && raw.back() == '"') return raw.substr(1, raw.size() - 2);
    return raw;
  }

  double num() const {
    double v = 0;
    const char* end = raw.data() + raw.size();
    auto [p, ec] = std::from_chars(raw.data(), end, v);
    if (ec != std::errc() || p != end) fail("expected a number, got '" + raw + "'");
    return v;
  }

  long integer() const {
    long v = 0;
    const char* end = raw.data() + raw.size();
    auto [p, ec] = std::from_chars(raw.data(), end, v);
    if (ec != std::errc() || p != end) fail("expected an integer, got '" + raw + "'");
    return v;
  }

  std::uint64_t u64() const {
    const long v = integer();
    if (v < 0) fail("expected a non-negative integer");
    return static_cast<std::uint64_t>(v);
  }

  bool boolean() const {
    if (raw == "true") return true;
    if (raw == "false") return false;
    fail("expected true or false, got '" + raw + "'");
  }

  std::vector<Value> list() const {
    if (raw.size() < 2 || raw.front() != '[' || raw.back() != ']') fail("expected a [list], got '" + raw + "'");
    std::vector<Value> out;
    std::stringstream ss(raw.substr(1, raw.size() - 2));
    std::string item;
    while (std::getline(ss, item, ',')) {
      item = trim(item);
      if (!item.empty()) out.push_back({key, item, line});
    }
    return out;
  }
};

using Setter = std::function<void(ExperimentConfig&, const Value&)>;

void parse_synthetic_key(DatasetSource& d, const std::string& k, const Value& v) {
  if (k == "source") {
    const auto s = v.str();
    if (s == "synthetic") d.synthetic = true;
    else if (s == "manifest") d.synthetic = false;
    else v.fail("expected synthetic or manifest");
  } else if (k == "manifest") {
    d.manifest = v.str();
  } else if (k == "num_classes") {
    d.spec.num_classes = static_cast<int>(v.integer());
    d.num_classes = d.spec.num_classes;
  } else if (k == "train_per_class") {
    d.spec.train_per_class = static_cast<int>(v.integer());
  } else if (k == "test_per_class") {
    d.spec.test_per_class = static_cast<int>(v.integer());
  } else if (k == "freq_bins") {
    d.spec.freq_bins = static_cast<int>(v.integer());
  } else if (k == "frames") {
    d.spec.frames = static_cast<int>(v.integer());
  } else if (k == "noise_sigma") {
    d.spec.noise_sigma = v.num();
  } else if (k == "seed") {
    d.spec.seed = v.u64();
  } else if (k == "name") {
    d.spec.name = v.str();
  } else {
    throw ConfigError("line " + std::to_string(v.line) + ": unknown key '" + v.key + "'");
  }
}

std::map<std::string, Setter> make_setters() {
  std::map<std::string, Setter> s;
  s["run.label"] = [](auto& c, auto& v) { c.label = v.str(); };
  s["run.seeds"] = [](auto& c, auto& v) {
    c.seeds.clear();
    for (const auto& x : v.list()) c.seeds.push_back(x.u64());
  };
  s["run.output_dir"] = [](auto& c, auto& v) { c.output_dir = v.str(); };

  for (const char* k : {"source", "manifest", "num_classes", "train_per_class", "test_per_class", "freq_bins",
                        "frames", "noise_sigma", "seed", "name"}) {
    const std::string key = k;
    s["dataset." + key] = [key](auto& c, auto& v) { parse_synthetic_key(c.dataset, key, v); };
    s["downstream." + key] = [key](auto& c, auto& v) {
      if (!c.downstream) {
        c.downstream.emplace();
        c.downstream->spec.seed = 2;
      }
      parse_synthetic_key(*c.downstream, key, v);
    };
  }

  s["split.num_tasks"] = [](auto& c, auto& v) { c.num_tasks = static_cast<int>(v.integer()); };
  s["split.seed"] = [](auto& c, auto& v) { c.split_seed = v.u64(); };
  s["split.folds"] = [](auto& c, auto& v) {
    c.folds.clear();
    for (const auto& x : v.list()) c.folds.push_back(static_cast<int>(x.integer()));
  };

  s["augment.segment_len"] = [](auto& c, auto& v) { c.regime.augment.segment_len = static_cast<int>(v.integer()); };
  s["augment.num_freq_masks"] = [](auto& c, auto& v) {
    c.regime.augment.num_freq_masks = static_cast<int>(v.integer());
  };
  s["augment.max_freq_width"] = [](auto& c, auto& v) {
    c.regime.augment.max_freq_width = static_cast<int>(v.integer());
  };
  s["augment.num_time_masks"] = [](auto& c, auto& v) {
    c.regime.augment.num_time_masks = static_cast<int>(v.integer());
  };
  s["augment.max_time_width"] = [](auto& c, auto& v) {
    c.regime.augment.max_time_width = static_cast<int>(v.integer());
  };
  s["augment.mask_value"] = [](auto& c, auto& v) { c.regime.augment.mask_value = static_cast<float>(v.num()); };

  s["encoder.channels"] = [](auto& c, auto& v) {
    c.encoder.channels.clear();
    for (const auto& x : v.list()) c.encoder.channels.push_back(x.u64());
  };
  s["encoder.global_pool"] = [](auto& c, auto& v) { c.encoder.global_pool = v.boolean(); };
  s["encoder.proj_dim"] = [](auto& c, auto& v) { c.regime.proj_dim = v.u64(); };

  s["objective.method"] = [](auto& c, auto& v) { c.regime.ssl.method = parse_ssl_method(v.str()); };
  s["objective.temperature"] = [](auto& c, auto& v) { c.regime.ssl.temperature = v.num(); };
  s["objective.barlow_lambda"] = [](auto& c, auto& v) { c.regime.ssl.barlow_lambda = v.num(); };
  s["objective.moco_queue"] = [](auto& c, auto& v) { c.regime.ssl.moco_queue_size = v.u64(); };
  s["objective.moco_momentum"] = [](auto& c, auto& v) { c.regime.ssl.moco_momentum = v.num(); };

  s["distill.kind"] = [](auto& c, auto& v) { c.regime.distill = parse_distill_kind(v.str()); };
  s["distill.weight"] = [](auto& c, auto& v) { c.regime.distill_weight = v.num(); };
  s["distill.temperature"] = [](auto& c, auto& v) { c.regime.distill_temperature = v.num(); };

  s["joint.alpha"] = [](auto& c, auto& v) { c.regime.joint.alpha = v.num(); };
  s["joint.beta"] = [](auto& c, auto& v) { c.regime.joint.beta = v.num(); };

  s["continual.mode"] = [](auto& c, auto& v) { c.regime.mode = parse_regime_mode(v.str()); };
  s["continual.replay"] = [](auto& c, auto& v) { c.regime.replay = parse_replay_mode(v.str()); };
  s["continual.epochs_per_task"] = [](auto& c, auto& v) {
    c.regime.epochs_per_task = static_cast<int>(v.integer());
  };
  s["continual.batch_size"] = [](auto& c, auto& v) { c.regime.batch_size = static_cast<int>(v.integer()); };

  s["optim.kind"] = [](auto& c, auto& v) { c.regime.optim.kind = nn::parse_optim_kind(v.str()); };
  s["optim.lr"] = [](auto& c, auto& v) { c.regime.optim.lr = v.num(); };
  s["optim.momentum"] = [](auto& c, auto& v) { c.regime.optim.momentum = v.num(); };
  s["optim.weight_decay"] = [](auto& c, auto& v) { c.regime.optim.weight_decay = v.num(); };

  s["evaluation.protocols"] = [](auto& c, auto& v) {
    const ProtocolSpec tmpl = c.protocols.empty() ? ProtocolSpec{} : c.protocols.front();
    c.protocols.clear();
    for (const auto& x : v.list()) {
      ProtocolSpec p = tmpl;
      p.kind = parse_protocol(x.str());
      c.protocols.push_back(p);
    }
  };
  s["evaluation.slep_budget"] = [](auto& c, auto& v) {
    for (auto& p : c.protocols) p.slep_budget = static_cast<int>(v.integer());
  };
  s["evaluation.probe_epochs"] = [](auto& c, auto& v) {
    for (auto& p : c.protocols) p.probe.epochs = static_cast<int>(v.integer());
  };
  s["evaluation.probe_lr"] = [](auto& c, auto& v) {
    for (auto& p : c.protocols) p.probe.lr = v.num();
  };
  s["evaluation.probe_batch_size"] = [](auto& c, auto& v) {
    for (auto& p : c.protocols) p.probe.batch_size = static_cast<int>(v.integer());
  };
  return s;
}

}  // namespace

ExperimentConfig parse_config(const std::string& text) {
  static const auto setters = make_setters();
  ExperimentConfig cfg;
  cfg.source_text = text;

  // Collect first so that list-valued keys (protocols) apply before the
  // per-protocol settings regardless of their order in the file.
  std::vector<Value> values;
  std::set<std::string> seen;
  std::string section;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  bool temperature_set = false;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(strip_comment(line));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError("line " + std::to_string(lineno) + ": malformed section header");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = (section.empty() ? "" : section + ".") + trim(line.substr(0, eq));
    const std::string raw = trim(line.substr(eq + 1));
    if (!setters.count(key)) throw ConfigError("line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    if (!seen.insert(key).second) throw ConfigError("line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
    if (raw.empty()) throw ConfigError("line " + std::to_string(lineno) + ": missing value for '" + key + "'");
    if (key == "objective.temperature") temperature_set = true;
    values.push_back({key, raw, lineno});
  }
  std::stable_partition(values.begin(), values.end(), [](const Value& v) { return v.key == "evaluation.protocols"; });
  for (const auto& v : values) setters.at(v.key)(cfg, v);

  if (!temperature_set && cfg.regime.ssl.method == SslMethod::moco) cfg.regime.ssl.temperature = 0.07;
  if (cfg.dataset.synthetic) cfg.encoder.freq_bins = static_cast<std::size_t>(cfg.dataset.spec.freq_bins);
  // The downstream corpus feeds the same encoder.
  if (cfg.downstream && cfg.downstream->synthetic && !seen.count("downstream.freq_bins"))
    cfg.downstream->spec.freq_bins = static_cast<int>(cfg.encoder.freq_bins);
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config(ss.str());
}

void ExperimentConfig::validate() const {
  if (seeds.empty()) throw ConfigError("run.seeds must not be empty");
  if (num_tasks < 1) throw ConfigError("split.num_tasks must be >= 1");
  if (!dataset.synthetic && dataset.manifest.empty()) throw ConfigError("dataset.manifest is required for source = manifest");
  if (dataset.synthetic && dataset.spec.num_classes < 2) throw ConfigError("dataset.num_classes must be >= 2");
  if (dataset.synthetic && num_tasks > dataset.spec.num_classes)
    throw ConfigError("split.num_tasks exceeds dataset.num_classes");
  if (protocols.empty()) throw ConfigError("evaluation.protocols must not be empty");
  std::set<ProtocolKind> kinds;
  for (const auto& p : protocols) {
    if (!kinds.insert(p.kind).second) throw ConfigError("evaluation.protocols lists " + to_string(p.kind) + " twice");
    if (p.kind == ProtocolKind::FLEP && !downstream) throw ConfigError("FLEP requires a [downstream] section");
    if (p.kind == ProtocolKind::SLEP && p.slep_budget < 1) throw ConfigError("evaluation.slep_budget must be >= 1");
    if (p.probe.epochs < 1 || p.probe.batch_size < 1 || !(p.probe.lr > 0))
      throw ConfigError("evaluation probe settings must be positive");
  }
  if (downstream && downstream->synthetic && static_cast<std::size_t>(downstream->spec.freq_bins) != encoder.freq_bins)
    throw ConfigError("downstream.freq_bins must match the encoder input (" + std::to_string(encoder.freq_bins) + ")");
  encoder.validate();
  regime.validate();
  regime.augment.validate(encoder.freq_bins);
}

std::vector<std::uint64_t> parse_seed_list(const std::string& s) {
  std::vector<std::uint64_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    std::uint64_t v = 0;
    auto [p, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
    if (item.empty() || ec != std::errc() || p != item.data() + item.size())
      throw UsageError("--seeds: '" + item + "' is not a non-negative integer");
    out.push_back(v);
  }
  if (out.empty()) throw UsageError("--seeds: empty list");
  return out;
}

}  // namespace crl
