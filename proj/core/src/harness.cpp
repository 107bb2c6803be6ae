#include "sba/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <mutex>
#include <ostream>
#include <sstream>
#include <thread>

#include "json.hpp"
#include "sba/error.hpp"
#include "sba/rng.hpp"

namespace sba {

namespace {

using Json = nlohmann::ordered_json;

const std::vector<std::string>& run_keys() {
  static const std::vector<std::string> keys = {
      "train.mode",          "train.loss_mode",      "train.update_style",
      "train.kl_gradient",   "train.eta",            "train.omega_radians",
      "train.split_layer",   "optim.lr",             "optim.momentum",
      "optim.weight_decay",  "optim.epochs",         "optim.batch_size",
      "vicinity.p_gauss",    "vicinity.q_drop",      "vicinity.sigma",
      "vicinity.tau",        "vicinity.keep_prob",   "vicinity.basis_mode",
      "model.widths",        "model.split_layers",   "eval.vote",
      "eval.vote_last_epochs", "eval.batch_size",    "seed.init",
      "seed.shuffle",        "seed.scheduler",       "seed.noise",
      "seed.mask",           "seed.split"};
  return keys;
}

const std::vector<std::string>& experiment_keys() {
  static const std::vector<std::string> keys = {
      "name",
      "output_dir",
      "workers",
      "seeds",
      "checkpoints",
      "dataset.kind",
      "dataset.train_images",
      "dataset.train_labels",
      "dataset.test_images",
      "dataset.test_labels",
      "dataset.train_path",
      "dataset.test_path",
      "dataset.label_column",
      "dataset.train_count",
      "dataset.test_count",
      "dataset.noise",
      "dataset.seed",
      "dataset.train_limit",
      "dataset.test_limit",
      "dataset.normalize"};
  return keys;
}

bool contains(const std::vector<std::string>& v, const std::string& s) {
  return std::find(v.begin(), v.end(), s) != v.end();
}

constexpr std::string_view kSweepPrefix = "sweep.";

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string sanitize(std::string s) {
  for (char& c : s) {
    const bool ok = std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '-' ||
                    c == '=' || c == '_';
    if (!ok) c = '_';
  }
  return s;
}

std::string csv_cell(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c == '\n' ? ' ' : c;
  }
  return out + "\"";
}

std::string describe(const DatasetSpec& d) {
  std::ostringstream os;
  switch (d.kind) {
    case DatasetKind::idx:
      os << "idx " << d.train_images.string() << ' ' << d.train_labels.string() << ' '
         << d.test_images.string() << ' ' << d.test_labels.string();
      break;
    case DatasetKind::delimited:
      os << "delimited " << d.train_path.string() << ' ' << d.test_path.string() << ' '
         << d.label_column;
      break;
    case DatasetKind::two_moons:
      os << "two_moons " << d.train_count << ' ' << d.test_count << ' ' << fmt_double(d.noise)
         << ' ' << d.seed;
      break;
  }
  os << " limit " << d.train_limit << ' ' << d.test_limit << " normalize "
     << (d.normalize ? (*d.normalize == NormalizationKind::zscore ? "zscore" : "minmax") : "none");
  return os.str();
}

std::uint64_t parse_u64(const std::string& s, const std::string& what) {
  try {
    std::size_t used = 0;
    const unsigned long long v = std::stoull(s, &used);
    if (used != s.size() || s.front() == '-') throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ConfigError(what + ": expected a non-negative integer, got '" + s + "'");
  }
}

std::uint64_t seed_override(const ConfigFile& file, const std::string& key,
                            std::uint64_t fallback) {
  return file.has(key) ? parse_u64(file.get_string(key, ""), key) : fallback;
}

std::filesystem::path resolve_path(const ConfigFile& file, const std::string& key) {
  if (!file.has(key)) return {};
  std::filesystem::path p = file.get_string(key, "");
  if (p.is_relative() && !file.base_dir().empty()) p = file.base_dir() / p;
  return p;
}

Dataset remap_labels(const Dataset& test, const std::vector<std::string>& train_names) {
  std::map<std::string, int> index;
  for (std::size_t i = 0; i < train_names.size(); ++i) index[train_names[i]] = static_cast<int>(i);
  std::vector<int> labels;
  labels.reserve(test.size());
  for (int l : test.labels()) {
    const auto it = index.find(test.label_names.at(static_cast<std::size_t>(l)));
    if (it == index.end()) {
      throw FormatError("test label '" + test.label_names[static_cast<std::size_t>(l)] +
                        "' does not occur in the training set");
    }
    labels.push_back(it->second);
  }
  Dataset out(std::vector<double>(test.features().begin(), test.features().end()), test.dim(),
              std::move(labels), train_names.size());
  out.label_names = train_names;
  return out;
}

Json optional_json(const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); }

std::optional<double> optional_double(const Json& j, const char* key) {
  const auto it = j.find(key);
  if (it == j.end() || it->is_null()) return std::nullopt;
  return it->get<double>();
}

}  // namespace

std::vector<std::string> known_config_keys() {
  std::vector<std::string> keys = experiment_keys();
  keys.insert(keys.end(), run_keys().begin(), run_keys().end());
  return keys;
}

RunConfig run_config_from(const ConfigFile& file, std::uint64_t master_seed) {
  RunConfig c;
  if (file.has("train.mode")) c.mode = parse_train_mode(file.get_string("train.mode", ""));
  if (file.has("train.loss_mode")) c.loss_mode = parse_loss_mode(file.get_string("train.loss_mode", ""));
  if (file.has("train.update_style")) {
    c.update_style = parse_update_style(file.get_string("train.update_style", ""));
  }
  if (file.has("train.kl_gradient")) {
    c.kl_gradient = parse_kl_gradient(file.get_string("train.kl_gradient", ""));
  }
  c.eta = file.get_double("train.eta", c.mode == TrainMode::baseline ? 0.0 : c.eta);
  c.omega = file.get_optional_double("train.omega_radians");
  c.fixed_split = file.get_size("train.split_layer", 0);

  auto& o = c.optimizer;
  o.learning_rate = file.get_double("optim.lr", o.learning_rate);
  o.momentum = file.get_double("optim.momentum", o.momentum);
  o.weight_decay = file.get_double("optim.weight_decay", o.weight_decay);
  o.epochs = file.get_size("optim.epochs", o.epochs);
  o.batch_size = file.get_size("optim.batch_size", o.batch_size);

  auto& v = c.vicinity;
  v.p_gauss = file.get_size("vicinity.p_gauss", v.p_gauss);
  v.q_drop = file.get_size("vicinity.q_drop", v.q_drop);
  v.sigma = file.get_double("vicinity.sigma", v.sigma);
  v.tau = file.get_double("vicinity.tau", v.tau);
  v.keep_prob = file.get_double("vicinity.keep_prob", v.keep_prob);
  if (file.has("vicinity.basis_mode")) {
    v.basis_mode = parse_basis_mode(file.get_string("vicinity.basis_mode", ""));
  }

  c.widths = file.get_size_list("model.widths", c.widths);
  c.split_layers = file.get_size_list("model.split_layers", c.split_layers);

  c.eval.vote = file.get_bool("eval.vote", c.eval.vote);
  c.eval.vote_last_epochs = file.get_size("eval.vote_last_epochs", c.eval.vote_last_epochs);
  c.eval.batch_size = file.get_size("eval.batch_size", c.eval.batch_size);

  c.seeds = Seeds::derive(master_seed);
  c.seeds.init = seed_override(file, "seed.init", c.seeds.init);
  c.seeds.shuffle = seed_override(file, "seed.shuffle", c.seeds.shuffle);
  c.seeds.scheduler = seed_override(file, "seed.scheduler", c.seeds.scheduler);
  c.seeds.noise = seed_override(file, "seed.noise", c.seeds.noise);
  c.seeds.mask = seed_override(file, "seed.mask", c.seeds.mask);
  c.seeds.split = seed_override(file, "seed.split", c.seeds.split);

  c.validate();
  return c;
}

ExperimentSpec parse_experiment(const ConfigFile& file) {
  ExperimentSpec spec;
  spec.run_template = ConfigFile::parse("", file.source());
  for (const auto& key : file.keys()) {
    if (key.rfind(kSweepPrefix, 0) == 0) {
      const std::string target = key.substr(kSweepPrefix.size());
      if (!contains(run_keys(), target)) {
        throw ConfigError(file.source() + ": " + key + ": '" + target +
                          "' is not a sweepable config key");
      }
      SweepAxis axis{target, file.get_list(key)};
      if (axis.values.empty()) throw ConfigError(file.source() + ": " + key + ": empty value list");
      spec.axes.push_back(std::move(axis));
    } else if (contains(run_keys(), key)) {
      spec.run_template.set(key, file.raw(key));
    } else if (!contains(experiment_keys(), key)) {
      throw ConfigError(file.source() + ": unknown key '" + key + "'");
    }
  }

  spec.name = file.get_string("name", spec.name);
  spec.output_dir = file.get_string("output_dir", "sba-out/" + spec.name);
  spec.workers = file.get_size("workers", 1);
  if (spec.workers == 0) throw ConfigError(file.source() + ": workers must be >= 1");
  spec.write_checkpoints = file.get_bool("checkpoints", true);
  if (file.has("seeds")) {
    spec.seeds.clear();
    for (const auto& s : file.get_list("seeds")) spec.seeds.push_back(parse_u64(s, "seeds"));
    if (spec.seeds.empty()) throw ConfigError(file.source() + ": seeds: empty list");
  }

  auto& d = spec.dataset;
  const std::string kind = file.get_string("dataset.kind", "two_moons");
  if (kind == "idx") {
    d.kind = DatasetKind::idx;
    d.train_images = resolve_path(file, "dataset.train_images");
    d.train_labels = resolve_path(file, "dataset.train_labels");
    d.test_images = resolve_path(file, "dataset.test_images");
    d.test_labels = resolve_path(file, "dataset.test_labels");
    if (d.train_images.empty() || d.train_labels.empty()) {
      throw ConfigError("dataset.train_images and dataset.train_labels are required for kind idx");
    }
    if (d.test_images.empty() != d.test_labels.empty()) {
      throw ConfigError("dataset.test_images and dataset.test_labels must be given together");
    }
  } else if (kind == "delimited") {
    d.kind = DatasetKind::delimited;
    d.train_path = resolve_path(file, "dataset.train_path");
    d.test_path = resolve_path(file, "dataset.test_path");
    d.label_column = static_cast<int>(file.get_int("dataset.label_column", -1));
    if (d.train_path.empty()) throw ConfigError("dataset.train_path is required for kind delimited");
  } else if (kind == "two_moons") {
    d.kind = DatasetKind::two_moons;
    d.train_count = file.get_size("dataset.train_count", d.train_count);
    d.test_count = file.get_size("dataset.test_count", d.test_count);
    d.noise = file.get_double("dataset.noise", d.noise);
    d.seed = file.get_size("dataset.seed", d.seed);
  } else {
    throw ConfigError("dataset.kind must be one of {idx, delimited, two_moons}, got '" + kind + "'");
  }
  d.train_limit = file.get_size("dataset.train_limit", 0);
  d.test_limit = file.get_size("dataset.test_limit", 0);
  const std::string norm = file.get_string("dataset.normalize", "none");
  if (norm == "zscore") {
    d.normalize = NormalizationKind::zscore;
  } else if (norm == "minmax") {
    d.normalize = NormalizationKind::minmax;
  } else if (norm != "none") {
    throw ConfigError("dataset.normalize must be one of {none, zscore, minmax}, got '" + norm + "'");
  }

  plan_runs(spec);
  return spec;
}

ExperimentSpec load_experiment(const std::filesystem::path& path) {
  return parse_experiment(ConfigFile::load(path));
}

std::vector<PlannedRun> plan_runs(const ExperimentSpec& spec) {
  std::vector<PlannedRun> runs;
  std::vector<std::size_t> at(spec.axes.size(), 0);
  const std::string dataset = describe(spec.dataset);
  while (true) {
    for (std::uint64_t seed : spec.seeds) {
      PlannedRun run;
      run.index = runs.size();
      run.seed = seed;
      ConfigFile resolved = spec.run_template;
      char prefix[16];
      std::snprintf(prefix, sizeof prefix, "r%03zu", run.index);
      run.run_id = prefix;
      for (std::size_t a = 0; a < spec.axes.size(); ++a) {
        const auto& axis = spec.axes[a];
        const std::string& value = axis.values[at[a]];
        resolved.set(axis.key, value);
        run.overrides.emplace_back(axis.key, value);
        run.run_id += "_" + axis.key.substr(axis.key.rfind('.') + 1) + "=" + value;
      }
      run.run_id = sanitize(run.run_id + "_s" + std::to_string(seed));
      try {
        run.config = run_config_from(resolved, seed);
      } catch (const ConfigError& e) {
        throw ConfigError("run " + run.run_id + ": " + e.what());
      }
      run.resolved_config =
          resolved.canonical() + "seed = " + std::to_string(seed) + "\ndataset = " + dataset + "\n";
      run.config_hash = stable_hash(run.resolved_config);
      runs.push_back(std::move(run));
    }
    std::size_t a = spec.axes.size();
    while (a > 0) {
      --a;
      if (++at[a] < spec.axes[a].values.size()) break;
      at[a] = 0;
      if (a == 0) return runs;
    }
    if (spec.axes.empty()) return runs;
  }
}

LoadedData load_datasets(const DatasetSpec& d) {
  LoadedData out;
  switch (d.kind) {
    case DatasetKind::idx:
      out.train = load_idx(d.train_images, d.train_labels);
      if (!d.test_images.empty()) out.test = load_idx(d.test_images, d.test_labels);
      break;
    case DatasetKind::delimited:
      out.train = load_delimited(d.train_path, d.label_column);
      if (!d.test_path.empty()) {
        out.test = remap_labels(load_delimited(d.test_path, d.label_column), out.train.label_names);
      }
      break;
    case DatasetKind::two_moons:
      out.train = synth_two_moons(d.train_count, d.noise, d.seed);
      if (d.test_count > 0) {
        out.test = synth_two_moons(d.test_count, d.noise, mix_seed(d.seed, "two_moons_test"));
      }
      break;
  }
  if (d.train_limit > 0) out.train = out.train.head(d.train_limit);
  if (out.test && d.test_limit > 0) out.test = out.test->head(d.test_limit);
  if (d.normalize) {
    const Normalization norm = out.train.normalize(*d.normalize);
    if (out.test) out.test->apply_normalization(norm);
  }
  return out;
}

std::string to_json_line(const MetricsRecord& r) {
  const EpochMetrics& m = r.metrics;
  Json j;
  j["run_id"] = r.run_id;
  j["config_hash"] = r.config_hash;
  j["seed"] = r.seed;
  j["epoch"] = m.epoch;
  j["train_loss_primary"] = m.train_loss_primary;
  j["train_loss_constraint"] = optional_json(m.train_loss_constraint);
  j["train_accuracy"] = m.train_accuracy;
  j["test_accuracy_argmax"] = optional_json(m.test_accuracy);
  j["test_accuracy_vote"] = optional_json(m.test_accuracy_vote);
  j["augmented_fraction"] = m.augmented_fraction;
  j["iterations"] = m.iterations;
  j["augmented_iterations"] = m.augmented_iterations;
  j["basis_generations"] = m.basis_generations;
  j["wall_clock_seconds"] = m.wall_clock_seconds;
  return j.dump();
}

MetricsRecord parse_metrics_line(std::string_view line) {
  try {
    const Json j = Json::parse(line);
    MetricsRecord r;
    r.run_id = j.at("run_id").get<std::string>();
    r.config_hash = j.at("config_hash").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    EpochMetrics& m = r.metrics;
    m.epoch = j.at("epoch").get<std::size_t>();
    m.train_loss_primary = j.at("train_loss_primary").get<double>();
    m.train_loss_constraint = optional_double(j, "train_loss_constraint");
    m.train_accuracy = j.at("train_accuracy").get<double>();
    m.test_accuracy = optional_double(j, "test_accuracy_argmax");
    m.test_accuracy_vote = optional_double(j, "test_accuracy_vote");
    m.augmented_fraction = j.at("augmented_fraction").get<double>();
    m.iterations = j.at("iterations").get<std::size_t>();
    m.augmented_iterations = j.at("augmented_iterations").get<std::size_t>();
    m.basis_generations = j.at("basis_generations").get<std::size_t>();
    m.wall_clock_seconds = j.at("wall_clock_seconds").get<double>();
    return r;
  } catch (const Json::exception& e) {
    throw FormatError(std::string("malformed metrics record: ") + e.what());
  }
}

std::vector<MetricsRecord> read_metrics(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot read metrics file " + path.string());
  std::vector<MetricsRecord> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(parse_metrics_line(line));
    } catch (const FormatError& e) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

std::vector<EpochMetrics> metrics_for_run(std::span<const MetricsRecord> records,
                                          const std::string& run_id) {
  std::vector<EpochMetrics> out;
  if (records.empty()) return out;
  const std::string& id = run_id.empty() ? records.front().run_id : run_id;
  for (const auto& r : records)
    if (r.run_id == id) out.push_back(r.metrics);
  return out;
}

std::optional<double> median_of_final(std::span<const double> values, std::size_t count) {
  if (values.empty() || count == 0) return std::nullopt;
  const std::size_t n = std::min(count, values.size());
  std::vector<double> tail(values.end() - static_cast<std::ptrdiff_t>(n), values.end());
  std::sort(tail.begin(), tail.end());
  if (n % 2 == 1) return tail[n / 2];
  return 0.5 * (tail[n / 2 - 1] + tail[n / 2]);
}

bool ExperimentResult::all_ok() const {
  return std::all_of(runs.begin(), runs.end(), [](const RunOutcome& r) { return r.ok; });
}

std::filesystem::path resolve_output_dir(const std::filesystem::path& configured) {
  const char* root = std::getenv("SBA_OUTPUT_ROOT");
  if (root && *root && configured.is_relative()) return std::filesystem::path(root) / configured;
  return configured;
}

namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::trunc);
  os << text;
  if (!os) throw Error("cannot write " + path.string());
}

void summarize_metrics(RunOutcome& outcome) {
  std::vector<double> argmax, vote;
  for (const auto& m : outcome.metrics) {
    if (m.test_accuracy) argmax.push_back(*m.test_accuracy);
    if (m.test_accuracy_vote) vote.push_back(*m.test_accuracy_vote);
  }
  outcome.final_accuracy = median_of_final(argmax);
  outcome.final_accuracy_vote = median_of_final(vote);
}

void execute_run(const ExperimentSpec& spec, const LoadedData& data,
                 const std::filesystem::path& root, RunOutcome& outcome, std::ostream* progress,
                 std::mutex& progress_mutex) {
  const PlannedRun& plan = outcome.plan;
  const std::filesystem::path dir = root / "runs" / plan.run_id;
  try {
    std::filesystem::create_directories(dir);
    std::filesystem::remove(dir / "error.txt");
    write_text(dir / "config.txt", plan.resolved_config);
    std::ofstream metrics(dir / "metrics.jsonl", std::ios::trunc);
    if (!metrics) throw Error("cannot write " + (dir / "metrics.jsonl").string());

    auto on_epoch = [&](const EpochMetrics& m, const LayerStack&) {
      outcome.metrics.push_back(m);
      metrics << to_json_line(MetricsRecord{plan.run_id, plan.config_hash, plan.seed, m}) << '\n';
      metrics.flush();
      if (progress) {
        std::lock_guard lock(progress_mutex);
        *progress << plan.run_id << " epoch " << m.epoch << "/" << plan.config.optimizer.epochs
                  << " loss " << m.train_loss_primary;
        if (m.test_accuracy) *progress << " test " << *m.test_accuracy;
        *progress << '\n';
      }
    };
    TrainingResult result =
        run_training(plan.config, data.train, data.test ? &*data.test : nullptr, on_epoch);
    if (spec.write_checkpoints) save_checkpoint(result.network, dir / "model.sba");
    outcome.ok = true;
  } catch (const std::exception& e) {
    outcome.ok = false;
    outcome.error = e.what();
    try {
      write_text(dir / "error.txt", outcome.error + "\n");
    } catch (const std::exception&) {
    }
    if (progress) {
      std::lock_guard lock(progress_mutex);
      *progress << plan.run_id << " failed: " << outcome.error << '\n';
    }
  }
  summarize_metrics(outcome);
}

void write_summary(const ExperimentSpec& spec, const ExperimentResult& result) {
  std::ostringstream os;
  os << "run_id,seed";
  for (const auto& axis : spec.axes) os << ',' << axis.key;
  os << ",status,epochs_completed,final_test_accuracy,final_test_accuracy_vote,"
        "final_train_loss,mean_epoch_seconds,total_seconds,config_hash,error\n";
  auto opt = [](const std::optional<double>& v) { return v ? fmt_double(*v) : std::string(); };
  for (const auto& run : result.runs) {
    os << run.plan.run_id << ',' << run.plan.seed;
    for (const auto& [key, value] : run.plan.overrides) os << ',' << csv_cell(value);
    double total = 0.0;
    for (const auto& m : run.metrics) total += m.wall_clock_seconds;
    const std::size_t n = run.metrics.size();
    os << ',' << (run.ok ? "ok" : "failed") << ',' << n << ',' << opt(run.final_accuracy) << ','
       << opt(run.final_accuracy_vote) << ','
       << (n ? fmt_double(run.metrics.back().train_loss_primary) : std::string()) << ','
       << (n ? fmt_double(total / static_cast<double>(n)) : std::string()) << ','
       << fmt_double(total) << ',' << run.plan.config_hash << ',' << csv_cell(run.error) << '\n';
  }
  write_text(result.output_dir / "summary.csv", os.str());
}

}  // namespace

ExperimentResult run_experiment(const ExperimentSpec& spec, const LoadedData* data,
                                std::ostream* progress) {
  std::optional<LoadedData> owned;
  if (!data) {
    owned = load_datasets(spec.dataset);
    data = &*owned;
  }

  ExperimentResult result;
  result.output_dir = resolve_output_dir(spec.output_dir);
  std::filesystem::create_directories(result.output_dir);
  if (!data->train.label_names.empty()) {
    std::string labels;
    for (std::size_t i = 0; i < data->train.label_names.size(); ++i) {
      labels += std::to_string(i) + "," + data->train.label_names[i] + "\n";
    }
    write_text(result.output_dir / "labels.csv", labels);
  }

  for (auto& plan : plan_runs(spec)) {
    RunOutcome outcome;
    outcome.plan = std::move(plan);
    result.runs.push_back(std::move(outcome));
  }

  std::atomic<std::size_t> next{0};
  std::mutex progress_mutex;
  auto worker = [&] {
    for (std::size_t i = next++; i < result.runs.size(); i = next++) {
      execute_run(spec, *data, result.output_dir, result.runs[i], progress, progress_mutex);
    }
  };
  const std::size_t slots = std::min(spec.workers, result.runs.size());
  if (slots <= 1) {
    worker();
  } else {
    std::vector<std::thread> threads;
    for (std::size_t i = 0; i < slots; ++i) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
  }

  std::ostringstream all;
  for (const auto& run : result.runs) {
    for (const auto& m : run.metrics) {
      all << to_json_line(MetricsRecord{run.plan.run_id, run.plan.config_hash, run.plan.seed, m})
          << '\n';
    }
  }
  write_text(result.output_dir / "metrics.jsonl", all.str());
  write_summary(spec, result);
  return result;
}

TimeToTarget time_to_target(std::span<const EpochMetrics> metrics, double target) {
  TimeToTarget t;
  double cumulative = 0.0;
  for (const auto& m : metrics) {
    cumulative += m.wall_clock_seconds;
    if (m.test_accuracy && *m.test_accuracy >= target) {
      t.epoch = m.epoch;
      t.seconds = cumulative;
      break;
    }
  }
  return t;
}

CostRatio cost_ratio(std::span<const EpochMetrics> a, std::span<const EpochMetrics> b,
                     double target) {
  CostRatio r{time_to_target(a, target), time_to_target(b, target), std::nullopt};
  if (r.a.reached() && r.b.reached() && *r.b.seconds > 0.0) r.ratio = *r.a.seconds / *r.b.seconds;
  return r;
}

void write_curve(std::span<const EpochMetrics> metrics, const std::filesystem::path& path) {
  std::ostringstream os;
  os << "epoch,train_loss_primary,train_loss_constraint,train_accuracy,test_accuracy_argmax,"
        "test_accuracy_vote,augmented_fraction,cumulative_seconds\n";
  auto opt = [](const std::optional<double>& v) { return v ? fmt_double(*v) : std::string(); };
  double cumulative = 0.0;
  for (const auto& m : metrics) {
    cumulative += m.wall_clock_seconds;
    os << m.epoch << ',' << fmt_double(m.train_loss_primary) << ','
       << opt(m.train_loss_constraint) << ',' << fmt_double(m.train_accuracy) << ','
       << opt(m.test_accuracy) << ',' << opt(m.test_accuracy_vote) << ','
       << fmt_double(m.augmented_fraction) << ',' << fmt_double(cumulative) << '\n';
  }
  std::ofstream out(path, std::ios::trunc);
  out << os.str();
  if (!out) throw Error("cannot write curve file " + path.string());
}

std::vector<std::filesystem::path> emit_curves(std::span<const MetricsRecord> records,
                                               const std::filesystem::path& out_dir) {
  if (records.empty()) throw ContractError("emit_curves: no metrics records");
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw Error("cannot create curve directory " + out_dir.string() + ": " + ec.message());
  std::vector<std::string> order;
  for (const auto& r : records)
    if (!contains(order, r.run_id)) order.push_back(r.run_id);
  std::vector<std::filesystem::path> written;
  for (const auto& id : order) {
    const auto path = out_dir / (sanitize(id) + ".csv");
    write_curve(metrics_for_run(records, id), path);
    written.push_back(path);
  }
  return written;
}

}  // namespace sba
