#include "crl/dataspec.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "crl/error.hpp"
#include "crl/rng.hpp"

namespace crl {

std::string to_string(Split s) { return s == Split::train ? "train" : "test"; }

Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "test") return Split::test;
  throw ConfigError("unknown split '" + s + "'");
}

std::string to_string(ReplayMode m) { return m == ReplayMode::none ? "none" : "full"; }

ReplayMode parse_replay_mode(const std::string& s) {
  if (s == "none") return ReplayMode::none;
  if (s == "full") return ReplayMode::full;
  throw ConfigError("unknown replay mode '" + s + "'");
}

// ---- Dataset ----

void Dataset::validate() const {
  if (num_classes < 2) throw ConfigError("dataset '" + name + "': need at least 2 classes");
  if (clips.empty()) throw ConfigError("dataset '" + name + "': no clips");
  const auto shape = clips.front().features.shape();
  std::set<std::string> ids;
  std::vector<int> seen_train(num_classes, 0), seen_test(num_classes, 0);
  for (const auto& c : clips) {
    if (!ids.insert(c.clip_id).second) throw ConfigError("dataset '" + name + "': duplicate clip id " + c.clip_id);
    if (c.label < 0 || c.label >= num_classes)
      throw ConfigError("clip " + c.clip_id + ": label " + std::to_string(c.label) + " outside [0," +
                        std::to_string(num_classes) + ")");
    if (c.features.shape() != shape)
      throw ConfigError("clip " + c.clip_id + ": shape " + c.features.shape_string() + " differs from " +
                        clips.front().features.shape_string());
    for (float v : c.features.data())
      if (!std::isfinite(v)) throw ConfigError("clip " + c.clip_id + ": non-finite feature value");
    (c.split == Split::train ? seen_train : seen_test)[c.label]++;
  }
  for (int k = 0; k < num_classes; ++k)
    if (!seen_train[k] || !seen_test[k])
      throw ConfigError("dataset '" + name + "': class " + std::to_string(k) + " missing from " +
                        (!seen_train[k] ? "train" : "test") + " split");
}

std::size_t Dataset::freq_bins() const { return clips.empty() ? 0 : clips.front().freq_bins(); }

ClipRefs Dataset::split(Split s) const {
  ClipRefs out;
  for (const auto& c : clips)
    if (c.split == s) out.push_back(&c);
  return out;
}

std::uint64_t Dataset::fingerprint() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&](std::uint64_t v) {
    h ^= v;
    h *= 0x100000001b3ULL;
  };
  for (const auto& c : clips) {
    mix(static_cast<std::uint64_t>(c.label));
    mix(c.split == Split::train ? 1 : 2);
    for (float f : c.features.data()) mix(std::bit_cast<std::uint32_t>(f));
  }
  return h;
}

Dataset Dataset::with_fold_as_test(int test_fold) const {
  Dataset out = *this;
  for (auto& c : out.clips) {
    auto it = fold_of.find(c.clip_id);
    if (it == fold_of.end()) continue;
    c.split = it->second == test_fold ? Split::test : Split::train;
  }
  out.name = name + "-fold" + std::to_string(test_fold);
  return out;
}

// ---- synthetic corpus ----

namespace {

struct ClassTemplate {
  double fundamental;  // bin
  double spacing;      // bins between partials
  double am_rate;      // modulation cycles per clip
};

std::vector<ClassTemplate> make_templates(const SyntheticSpec& s) {
  Rng rng(mix_seed(s.seed, "templates"));
  const int C = s.num_classes;
  const double F = s.freq_bins;
  std::vector<double> centers(C), spacings(C), rates(C);
  // Fundamentals evenly spaced over most of the band.
  for (int c = 0; c < C; ++c) centers[c] = 0.06 * F + (0.75 * F) * (c + 0.5) / C;
  for (int c = 0; c < C; ++c) spacings[c] = F / 16.0 + (F / 8.0) * c / std::max(1, C - 1);
  for (int c = 0; c < C; ++c) rates[c] = 1.0 + 7.0 * c / std::max(1, C - 1);
  shuffle(centers.begin(), centers.end(), rng);
  shuffle(spacings.begin(), spacings.end(), rng);
  shuffle(rates.begin(), rates.end(), rng);
  std::vector<ClassTemplate> out(C);
  for (int c = 0; c < C; ++c) out[c] = {centers[c], spacings[c], rates[c]};
  return out;
}

Tensor render_clip(const SyntheticSpec& s, const ClassTemplate& tpl, Rng& rng) {
  const int F = s.freq_bins, N = s.frames;
  const double gain = uniform_real(rng, 0.6, 1.4);
  // Within-class variation along every class-defining axis: band position,
  // harmonic spacing and modulation rate.
  const double jitter = (F / 16.0) * uniform_real(rng, -1.0, 1.0);
  const double spacing = tpl.spacing * (1.0 + 0.08 * uniform_real(rng, -1.0, 1.0));
  const double am_rate = tpl.am_rate * (1.0 + 0.2 * uniform_real(rng, -1.0, 1.0));
  const double phase = uniform_real(rng, 0.0, 6.283185307179586);
  constexpr double kTwoPi = 6.283185307179586;
  constexpr int kPartials = 4;

  Tensor x({static_cast<std::size_t>(F), static_cast<std::size_t>(N)});
  for (int n = 0; n < N; ++n) {
    const double am = 0.55 + 0.45 * std::sin(kTwoPi * am_rate * n / N + phase);
    for (int f = 0; f < F; ++f) {
      double e = 0.0;
      double amp = 1.0;
      for (int k = 0; k < kPartials; ++k) {
        const double centre = tpl.fundamental + jitter + k * spacing;
        const double d = (f - centre) / 1.2;
        e += amp * std::exp(-0.5 * d * d);
        amp *= 0.7;
      }
      x.at(f, n) = static_cast<float>(std::log(0.05 + gain * am * e));
    }
  }
  if (s.noise_sigma > 0)
    for (auto& v : x.data()) v += static_cast<float>(s.noise_sigma * normal(rng));
  return x;
}

}  // namespace

Dataset generate_synthetic(const SyntheticSpec& s) {
  if (s.num_classes < 2) throw ConfigError("generate_synthetic: num_classes must be >= 2");
  if (s.freq_bins < 16) throw ConfigError("generate_synthetic: freq_bins must be >= 16");
  if (s.frames < 32) throw ConfigError("generate_synthetic: frames must be >= 32");
  if (s.train_per_class < 1 || s.test_per_class < 1)
    throw ConfigError("generate_synthetic: clips per class must be >= 1");
  if (!(s.noise_sigma >= 0)) throw ConfigError("generate_synthetic: noise_sigma must be >= 0");

  const auto templates = make_templates(s);
  Dataset ds;
  ds.name = s.name.empty() ? "synthetic-" + std::to_string(s.seed) : s.name;
  ds.num_classes = s.num_classes;
  for (Split split : {Split::train, Split::test}) {
    const int per_class = split == Split::train ? s.train_per_class : s.test_per_class;
    for (int c = 0; c < s.num_classes; ++c)
      for (int i = 0; i < per_class; ++i) {
        Rng rng(mix_seed(s.seed, "clip", {static_cast<std::uint64_t>(split), static_cast<std::uint64_t>(c),
                                          static_cast<std::uint64_t>(i)}));
        SpectrogramClip clip;
        clip.clip_id = to_string(split) + "-c" + std::to_string(c) + "-" + std::to_string(i);
        clip.features = render_clip(s, templates[c], rng);
        clip.label = c;
        clip.split = split;
        ds.clips.push_back(std::move(clip));
      }
  }
  return ds;
}

// ---- tasks ----

int TaskSequence::task_of(int label) const {
  for (int t = 0; t < num_tasks; ++t)
    if (std::find(tasks[t].begin(), tasks[t].end(), label) != tasks[t].end()) return t + 1;
  throw UsageError("label " + std::to_string(label) + " is not in any task");
}

std::vector<int> TaskSequence::classes_up_to(int t) const {
  if (t < 1 || t > num_tasks) throw UsageError("task index " + std::to_string(t) + " out of range");
  std::vector<int> out;
  for (int i = 0; i < t; ++i) out.insert(out.end(), tasks[i].begin(), tasks[i].end());
  return out;
}

TaskSequence split_tasks(const Dataset& dataset, int num_tasks, std::uint64_t seed) {
  const int C = dataset.num_classes;
  if (num_tasks < 1) throw ConfigError("split_tasks: number of tasks must be >= 1");
  if (num_tasks > C)
    throw ConfigError("split_tasks: " + std::to_string(num_tasks) + " tasks exceed " + std::to_string(C) + " classes");
  TaskSequence seq;
  seq.num_tasks = num_tasks;
  seq.seed = seed;
  seq.class_order.resize(C);
  for (int c = 0; c < C; ++c) seq.class_order[c] = c;
  Rng rng(mix_seed(seed, "class-order"));
  shuffle(seq.class_order.begin(), seq.class_order.end(), rng);
  const int base = C / num_tasks, extra = C % num_tasks;
  int pos = 0;
  for (int t = 0; t < num_tasks; ++t) {
    const int n = base + (t < extra ? 1 : 0);
    seq.tasks.emplace_back(seq.class_order.begin() + pos, seq.class_order.begin() + pos + n);
    pos += n;
  }
  return seq;
}

TaskDataset materialize_task(const Dataset& dataset, const TaskSequence& seq, int t) {
  if (t < 1 || t > seq.num_tasks)
    throw UsageError("materialize_task: task " + std::to_string(t) + " outside [1," + std::to_string(seq.num_tasks) + "]");
  TaskDataset task;
  task.task_index = t;
  task.classes = seq.tasks[t - 1];
  const std::set<int> cls(task.classes.begin(), task.classes.end());
  for (const auto& c : dataset.clips) {
    if (!cls.count(c.label)) continue;
    (c.split == Split::train ? task.train : task.test).push_back(&c);
  }
  return task;
}

ClipRefs slep_subset(const ClipRefs& task_train, int per_task_budget, std::uint64_t seed) {
  if (per_task_budget < 1) throw UsageError("slep_subset: budget must be >= 1");
  if (task_train.empty()) throw UsageError("slep_subset: empty training list");
  if (static_cast<std::size_t>(per_task_budget) >= task_train.size()) return task_train;

  std::map<int, ClipRefs> by_class;
  for (const auto* c : task_train) by_class[c->label].push_back(c);
  Rng rng(mix_seed(seed, "slep"));
  for (auto& [label, refs] : by_class) shuffle(refs.begin(), refs.end(), rng);

  // Round-robin over classes keeps per-class counts within one of each other
  // until a class runs out.
  std::vector<int> labels;
  for (const auto& kv : by_class) labels.push_back(kv.first);
  shuffle(labels.begin(), labels.end(), rng);
  std::map<int, std::size_t> taken;
  ClipRefs out;
  while (out.size() < static_cast<std::size_t>(per_task_budget)) {
    for (int label : labels) {
      if (out.size() == static_cast<std::size_t>(per_task_budget)) break;
      auto& k = taken[label];
      if (k < by_class[label].size()) out.push_back(by_class[label][k++]);
    }
  }
  return out;
}

ReplayBuffer replay_extend(ReplayBuffer buffer, const ClipRefs& task_train) {
  if (buffer.mode == ReplayMode::none) {
    buffer.stored.clear();
    return buffer;
  }
  buffer.stored.insert(buffer.stored.end(), task_train.begin(), task_train.end());
  return buffer;
}

// ---- file formats ----

namespace {

void put_u32(std::ostream& os, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

bool get_u32(std::istream& is, std::uint32_t& v) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) return false;
  v = b[0] | (std::uint32_t{b[1]} << 8) | (std::uint32_t{b[2]} << 16) | (std::uint32_t{b[3]} << 24);
  return true;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream ss(line);
  while (std::getline(ss, cur, ',')) {
    while (!cur.empty() && (cur.back() == '\r' || cur.back() == ' ')) cur.pop_back();
    while (!cur.empty() && cur.front() == ' ') cur.erase(cur.begin());
    out.push_back(cur);
  }
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

void write_feature_file(const std::filesystem::path& path, const Tensor& features) {
  if (features.rank() != 2) throw UsageError("write_feature_file: expected a (F,N) matrix");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot write " + path.string());
  os.write("CRLF1", 5);
  put_u32(os, static_cast<std::uint32_t>(features.dim(0)));
  put_u32(os, static_cast<std::uint32_t>(features.dim(1)));
  for (float f : features.data()) put_u32(os, std::bit_cast<std::uint32_t>(f));
  if (!os) throw Error("failed writing " + path.string());
}

Tensor read_feature_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IngestionError("feature file not found: " + path.string());
  char magic[5];
  if (!is.read(magic, 5) || std::string(magic, 5) != "CRLF1")
    throw IngestionError(path.string() + ": bad magic (expected CRLF1)");
  std::uint32_t F = 0, N = 0;
  if (!get_u32(is, F) || !get_u32(is, N)) throw IngestionError(path.string() + ": truncated header");
  Tensor t({F, N});
  for (auto& v : t.data()) {
    std::uint32_t bits;
    if (!get_u32(is, bits)) throw IngestionError(path.string() + ": truncated body");
    v = std::bit_cast<float>(bits);
  }
  return t;
}

Dataset load_dataset(const std::filesystem::path& manifest_path, std::optional<int> num_classes) {
  std::ifstream is(manifest_path);
  if (!is) throw IngestionError("manifest not found: " + manifest_path.string());
  std::string line;
  if (!std::getline(is, line)) throw IngestionError("manifest is empty: " + manifest_path.string());
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "clip_id,path,label,split,fold")
    throw IngestionError("manifest header must be 'clip_id,path,label,split,fold', got '" + line + "'");

  const auto base = manifest_path.parent_path();
  Dataset ds;
  ds.name = manifest_path.parent_path().filename().string();
  if (ds.name.empty()) ds.name = manifest_path.stem().string();
  std::vector<std::size_t> expected_shape;
  int max_label = -1;
  int row = 1;
  while (std::getline(is, line)) {
    ++row;
    if (line.empty() || line == "\r") continue;
    const auto cols = split_csv(line);
    const std::string where = manifest_path.string() + " row " + std::to_string(row);
    if (cols.size() != 5) throw IngestionError(where + ": expected 5 columns, got " + std::to_string(cols.size()));
    SpectrogramClip clip;
    clip.clip_id = cols[0];
    int label = -1;
    try {
      std::size_t used = 0;
      label = std::stoi(cols[2], &used);
      if (used != cols[2].size()) label = -1;
    } catch (const std::exception&) {
      label = -1;
    }
    if (label < 0 || (num_classes && label >= *num_classes))
      throw IngestionError(where + ": unknown label '" + cols[2] + "'");
    clip.label = label;
    if (cols[3] != "train" && cols[3] != "test") throw IngestionError(where + ": unknown split '" + cols[3] + "'");
    clip.split = parse_split(cols[3]);
    std::filesystem::path p = cols[1];
    if (p.is_relative()) p = base / p;
    try {
      clip.features = read_feature_file(p);
    } catch (const IngestionError& e) {
      throw IngestionError(where + ": " + e.what());
    }
    if (expected_shape.empty()) {
      expected_shape = clip.features.shape();
    } else if (clip.features.shape() != expected_shape) {
      throw IngestionError(where + ": feature shape " + clip.features.shape_string() + " but expected (" +
                           std::to_string(expected_shape[0]) + "," + std::to_string(expected_shape[1]) + ")");
    }
    if (!cols[4].empty()) {
      try {
        ds.fold_of[clip.clip_id] = std::stoi(cols[4]);
      } catch (const std::exception&) {
        throw IngestionError(where + ": bad fold '" + cols[4] + "'");
      }
    }
    max_label = std::max(max_label, label);
    ds.clips.push_back(std::move(clip));
  }
  ds.num_classes = num_classes.value_or(max_label + 1);
  return ds;
}

void write_dataset(const Dataset& dataset, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "features");
  std::ofstream os(dir / "manifest.csv");
  if (!os) throw Error("cannot write " + (dir / "manifest.csv").string());
  os << "clip_id,path,label,split,fold\n";
  for (const auto& c : dataset.clips) {
    const std::string rel = "features/" + c.clip_id + ".bin";
    write_feature_file(dir / rel, c.features);
    auto fold = dataset.fold_of.find(c.clip_id);
    os << c.clip_id << ',' << rel << ',' << c.label << ',' << to_string(c.split) << ','
       << (fold == dataset.fold_of.end() ? std::string() : std::to_string(fold->second)) << '\n';
  }
  if (!os) throw Error("failed writing manifest in " + dir.string());
}

}  // namespace crl
