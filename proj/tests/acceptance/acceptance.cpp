// End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and
// exits non-zero when any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "oracles.hpp"
#include "sba/config.hpp"
#include "sba/error.hpp"
#include "sba/harness.hpp"
#include "sba/inference.hpp"
#include "sba/trainer.hpp"

using namespace sba;
namespace fs = std::filesystem;
using std::numbers::pi;
using Clock = std::chrono::steady_clock;

namespace {

struct Verdict {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << "[failed: " << what << "] ";
    }
  }
};

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::string fmt(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string file_bytes(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

// ---------------------------------------------------------------------------
// 1. gradients against finite differences

std::vector<double> flatten(const LayerStack& net) {
  std::vector<double> theta;
  for (const auto& p : net.parameters()) theta.insert(theta.end(), p.values().begin(), p.values().end());
  return theta;
}

std::vector<double> flat_grad(const LayerStack& net) {
  std::vector<double> g;
  for (const auto& p : net.parameters()) {
    if (p.has_grad()) {
      g.insert(g.end(), p.grad().begin(), p.grad().end());
    } else {
      g.insert(g.end(), p.size(), 0.0);
    }
  }
  return g;
}

oracle::Matrix rows_of(const Tensor& t) {
  oracle::Matrix m;
  for (std::size_t r = 0; r < t.rows(); ++r) m.emplace_back(t.row(r).begin(), t.row(r).end());
  return m;
}

double max_rel_error(const std::vector<double>& a, const std::vector<double>& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, oracle::relative_error(a[i], b[i]));
  return worst;
}

std::size_t parameter_count(const std::vector<std::size_t>& widths) {
  std::size_t n = 0;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) n += (widths[l] + 1) * widths[l + 1];
  return n;
}

std::vector<std::size_t> random_widths(std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> input(2, 5), hidden(2, 6), classes(2, 4), depth(1, 3);
  while (true) {
    std::vector<std::size_t> w{input(rng)};
    const std::size_t d = depth(rng);
    for (std::size_t i = 0; i < d; ++i) w.push_back(hidden(rng));
    w.push_back(classes(rng));
    if (parameter_count(w) <= 100) return w;
  }
}

void criterion_gradients(Verdict& v) {
  const auto start = Clock::now();
  std::mt19937_64 rng(20240601);
  std::normal_distribution<double> normal(0.0, 1.0);
  double worst = 0.0;
  std::size_t checks = 0, largest = 0;
  for (int config = 0; config < 100; ++config) {
    const auto widths = random_widths(rng);
    largest = std::max(largest, parameter_count(widths));
    LayerStack net = LayerStack::init(widths, rng());
    auto params = net.parameters();
    for (std::size_t i = 1; i < params.size(); i += 2)
      for (double& b : params[i].mutable_values()) b = 0.1 * normal(rng);

    const std::size_t batch = 2 + rng() % 4;
    std::vector<double> xv(batch * widths.front());
    for (auto& x : xv) x = normal(rng);
    const Tensor x = Tensor::matrix(batch, widths.front(), xv);
    std::vector<int> labels(batch);
    for (auto& y : labels) y = static_cast<int>(rng() % widths.back());

    const SplitChoice k{1 + rng() % (widths.size() - 2)};
    VicinityConfig vc;
    vc.p_gauss = 1 + rng() % 3;
    vc.q_drop = rng() % 3;
    vc.sigma = 0.5;
    vc.tau = 1.0;
    vc.keep_prob = 0.7;
    RandomStream noise = make_stream(rng(), 1), mask = make_stream(rng(), 2);
    const BasisMatrix basis = make_basis(net.width_at(k), noise);
    const AugmentedBatch aug = augment_batch(forward_to(net, x, k), vc, basis, noise, mask);
    const double eta = std::pow(10.0, -2.0 + 3.0 * std::uniform_real_distribution<double>()(rng));
    const LossMode mode = config % 2 ? LossMode::hard_ce : LossMode::soft_kl;

    oracle::Surrogate sur;
    sur.widths = widths;
    sur.x = rows_of(x);
    sur.labels = labels;
    sur.k = k.layer;
    sur.virtual_rows = rows_of(aug.virtual_rows());
    sur.ref_index = aug.ref_index;
    sur.hard = mode == LossMode::hard_ce;
    sur.frozen_ref = rows_of(ops::log_softmax(forward(net, x)));
    const auto theta = flatten(net);

    // combined: I1 + eta I2; sequential: I1, then eta I2 on its own.
    struct Expression {
      double primary_weight, constraint_weight;
    };
    for (const Expression e : {Expression{1.0, eta}, Expression{1.0, 0.0}, Expression{0.0, eta}}) {
      for (auto& p : params) p.zero_grad();
      Tape tape;
      const Tensor xk = forward_to(net, x, k, tape);
      const LossTerms terms =
          loss_from_split(tape, net, xk, labels, k, &aug, mode, KlGradient::virtual_only);
      Tensor loss = tape.scale(terms.primary, e.primary_weight);
      if (e.constraint_weight != 0.0) loss = tape.add(loss, tape.scale(*terms.constraint, e.constraint_weight));
      tape.backward(loss);
      sur.include_primary = e.primary_weight != 0.0;
      sur.eta = e.constraint_weight;
      const auto numeric = oracle::central_gradient(sur, theta, 1e-5);
      worst = std::max(worst, max_rel_error(flat_grad(net), numeric));
      ++checks;
    }
  }
  const double elapsed = seconds_since(start);
  v.detail << checks << " gradient checks over 100 nets (<= " << largest
           << " parameters), max relative error " << worst << ", " << fmt(elapsed, 1) << " s";
  v.require(largest <= 100, "parameter budget");
  v.require(worst < 1e-4, "relative error < 1e-4");
  v.require(elapsed < 60.0, "runtime < 60 s");
}

// ---------------------------------------------------------------------------
// 2. degeneracy equivalences

RunConfig moons_config(TrainMode mode, std::uint64_t seed) {
  RunConfig c;
  c.mode = mode;
  c.widths = {2, 32, 32, 2};
  c.optimizer.epochs = 20;
  c.optimizer.batch_size = 20;
  c.eval.vote = true;
  c.eval.vote_last_epochs = 3;
  c.eta = mode == TrainMode::baseline ? 0.0 : 0.1;
  c.seeds = Seeds::derive(seed);
  return c;
}

bool same_run(const TrainingResult& a, const TrainingResult& b) {
  if (flatten(a.network) != flatten(b.network) || a.metrics.size() != b.metrics.size()) return false;
  for (std::size_t i = 0; i < a.metrics.size(); ++i) {
    const auto &x = a.metrics[i], &y = b.metrics[i];
    if (x.train_loss_primary != y.train_loss_primary || x.train_accuracy != y.train_accuracy ||
        x.test_accuracy != y.test_accuracy || x.test_accuracy_vote != y.test_accuracy_vote)
      return false;
  }
  return true;
}

void criterion_degeneracy(Verdict& v) {
  const auto start = Clock::now();
  const Dataset train = synth_two_moons(400, 0.1, 11);
  const Dataset test = synth_two_moons(1000, 0.1, 12);
  std::size_t pairs = 0, equal = 0;
  for (std::uint64_t seed : {0, 1, 2}) {
    RunConfig sba_half = moons_config(TrainMode::sba, seed);
    sba_half.omega = pi / 2;
    const bool a = same_run(run_training(sba_half, train, &test),
                            run_training(moons_config(TrainMode::baseline, seed), train, &test));
    v.require(a, "omega=pi/2 equals baseline, seed " + std::to_string(seed));

    RunConfig sba_zero = moons_config(TrainMode::sba, seed);
    sba_zero.omega = 0.0;
    const bool b = same_run(run_training(sba_zero, train, &test),
                            run_training(moons_config(TrainMode::ba, seed), train, &test));
    v.require(b, "omega=0 equals ba, seed " + std::to_string(seed));

    RunConfig no_eta = moons_config(TrainMode::sba, seed);
    no_eta.eta = 0.0;
    Trainer augmented(no_eta);
    Trainer plain(moons_config(TrainMode::baseline, seed));
    const BatchPlan plan{no_eta.seeds.shuffle, no_eta.optimizer.batch_size};
    bool c = true;
    std::size_t augmented_steps = 0;
    for (std::size_t epoch = 0; epoch < 5 && c; ++epoch) {
      for (const auto& [x, y] : batches(train, plan, epoch)) {
        augmented_steps += augmented.train_step(x, y).lambda;
        plain.train_step(x, y);
        if (flatten(augmented.network()) != flatten(plain.network())) {
          c = false;
          break;
        }
      }
    }
    v.require(c, "eta=0 steps equal baseline steps, seed " + std::to_string(seed));
    v.require(augmented_steps > 0, "eta=0 run augmented at least once");
    pairs += 3;
    equal += a + b + c;
  }
  const double elapsed = seconds_since(start);
  v.detail << equal << "/" << pairs << " bit-exact pairs on two-moons, " << fmt(elapsed, 1) << " s";
  v.require(elapsed < 60.0, "runtime < 60 s");
}

// ---------------------------------------------------------------------------
// 3. scheduler statistics

void criterion_scheduler(Verdict& v) {
  constexpr std::size_t kDraws = 100000;
  for (double omega : {0.0, pi / 6, pi / 3, pi / 2}) {
    const double p = augmentation_probability(omega);
    const double bound = 3.0 * std::sqrt(p * (1.0 - p) / kDraws);
    std::size_t within = 0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
      Scheduler s(omega, Seeds::derive(seed).scheduler);
      for (std::size_t i = 0; i < kDraws; ++i) s.sample();
      if (std::abs(s.empirical_rate() - p) <= bound) ++within;
    }
    v.detail << "omega=" << fmt(omega, 3) << ": " << within << "/100; ";
    v.require(within >= 99, "omega " + fmt(omega, 3) + " rate within 3 sigma");
  }
}

// ---------------------------------------------------------------------------
// 4. vicinity invariants

void criterion_vicinity(Verdict& v) {
  double worst_orth = 0.0;
  for (std::size_t q : {1, 8, 64, 256}) {
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
      RandomStream s = make_stream(seed, q);
      worst_orth = std::max(worst_orth, make_basis(q, s).orthogonality_error());
    }
  }
  v.require(worst_orth < 1e-10, "basis orthonormality");

  std::size_t violations = 0;
  double worst_ratio = 0.0;
  for (std::size_t q : {1, 8, 64, 256}) {
    RandomStream s = make_stream(7, q);
    const BasisMatrix basis = make_basis(q, s);
    std::normal_distribution<double> n(0.0, 1.0);
    std::vector<double> x(q);
    for (auto& e : x) e = n(s);
    const double tau = 0.3, sigma = 0.5;
    const double limit = std::sqrt(static_cast<double>(q)) * tau;
    const double slack = limit * (1.0 + 1e-12);
    for (int draw = 0; draw < 10000; ++draw) {
      const auto xv = gaussian_virtual(x, basis, sigma, tau, s);
      double d2 = 0.0;
      for (std::size_t i = 0; i < q; ++i) d2 += (xv[i] - x[i]) * (xv[i] - x[i]);
      worst_ratio = std::max(worst_ratio, std::sqrt(d2) / limit);
      if (std::sqrt(d2) > slack) ++violations;
    }
  }
  v.require(violations == 0, "gaussian locality");

  const double keep = 0.9;
  const std::size_t width = 64, draws = 10000;
  RandomStream s = make_stream(9);
  std::vector<double> x(width);
  for (std::size_t i = 0; i < width; ++i) x[i] = 0.5 + static_cast<double>(i);
  std::size_t zeros = 0, bad_components = 0;
  for (std::size_t d = 0; d < draws; ++d) {
    const auto xv = dropout_virtual(x, keep, s);
    for (std::size_t i = 0; i < width; ++i) {
      if (xv[i] == 0.0) {
        ++zeros;
      } else if (xv[i] != x[i]) {
        ++bad_components;
      }
    }
  }
  const double n = static_cast<double>(width * draws);
  const double zero_fraction = static_cast<double>(zeros) / n;
  const double sd = std::sqrt(keep * (1.0 - keep) / n);
  v.require(bad_components == 0, "mask components are 0 or x_i");
  v.require(std::abs(zero_fraction - (1.0 - keep)) <= 3.0 * sd, "zero fraction within 3 sigma");

  RunConfig cfg = moons_config(TrainMode::sba, 4);
  cfg.omega = pi / 2;
  const Dataset train = synth_two_moons(200, 0.1, 4);
  Trainer trainer(cfg);
  for (std::size_t epoch = 0; epoch < 5; ++epoch)
    for (const auto& [bx, by] : batches(train, BatchPlan{cfg.seeds.shuffle, 20}, epoch))
      trainer.train_step(bx, by);
  v.require(trainer.basis_generations() == 0 && !trainer.basis().has_value(),
            "no basis at omega=pi/2");

  v.detail << "orthogonality error " << worst_orth << ", max |x'-x|/(sqrt(Q) tau) "
           << fmt(worst_ratio, 15) << ", zero fraction " << fmt(zero_fraction, 5) << " (3 sigma "
           << fmt(3 * sd, 5) << "), bases at pi/2: " << trainer.basis_generations();
}

// ---------------------------------------------------------------------------
// 5. KL / CE identities

void criterion_identities(Verdict& v) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n(0.0, 2.0);
  double worst_self = 0.0, smallest = 1.0;
  for (int i = 0; i < 10000; ++i) {
    const std::size_t k = 2 + rng() % 9;
    std::vector<double> a(k), b(k);
    for (auto& e : a) e = n(rng);
    for (auto& e : b) e = n(rng);
    const Tensor la = ops::log_softmax(Tensor::matrix(1, k, a));
    const Tensor lb = ops::log_softmax(Tensor::matrix(1, k, b));
    worst_self = std::max(worst_self, std::abs(ops::kl_divergence_mean(la, la)));
    smallest = std::min(smallest, ops::kl_divergence_mean(la, lb));
  }
  double worst_uniform = 0.0;
  for (std::size_t k = 2; k <= 16; ++k) {
    const Tensor lp = ops::log_softmax(Tensor::matrix(1, k, std::vector<double>(k, 0.0)));
    for (int label = 0; label < static_cast<int>(k); ++label) {
      const std::vector<int> y{label};
      worst_uniform = std::max(worst_uniform,
                               std::abs(ops::cross_entropy_mean(lp, y) - std::log(double(k))));
    }
  }
  const double worked = ops::kl_divergence_mean(
      Tensor::matrix({{std::log(0.5), std::log(0.5)}}),
      Tensor::matrix({{std::log(0.25), std::log(0.75)}}));
  v.require(worst_self <= 1e-12, "KL(P||P) = 0");
  v.require(smallest >= 0.0, "KL >= 0");
  v.require(worst_uniform <= 1e-12, "uniform CE = ln k");
  v.require(std::abs(worked - 0.14384) <= 1e-5, "worked KL value");
  v.detail << "max |KL(P||P)| " << worst_self << ", min KL " << smallest << ", max |CE - ln k| "
           << worst_uniform << ", worked KL " << fmt(worked, 6);
}

// ---------------------------------------------------------------------------
// 6-10. MNIST experiments

fs::path mnist_dir() {
  if (const char* env = std::getenv("SBA_MNIST_DIR")) return env;
  return SBA_ACCEPTANCE_MNIST_DIR;
}

fs::path output_root() {
  if (const char* env = std::getenv("SBA_ACCEPTANCE_OUT")) return env;
  return SBA_ACCEPTANCE_OUT_DIR;
}

std::string mnist_base(const std::string& name) {
  const std::string dir = mnist_dir().string();
  return "name = " + name +
         "\n"
         "dataset.kind = idx\n"
         "dataset.train_images = " + dir + "/train-images-idx3-ubyte\n"
         "dataset.train_labels = " + dir + "/train-labels-idx1-ubyte\n"
         "dataset.test_images = " + dir + "/t10k-images-idx3-ubyte\n"
         "dataset.test_labels = " + dir + "/t10k-labels-idx1-ubyte\n"
         "dataset.train_limit = 1000\n"
         "model.widths = [784, 256, 128, 10]\n"
         "optim.epochs = 30\n"
         "vicinity.p_gauss = 2\n"
         "vicinity.q_drop = 2\n"
         "seeds = [0, 1, 2, 3, 4]\n";
}

struct MnistRuns {
  std::map<std::string, ExperimentResult> by_name;
  std::vector<double> etas{0.0, 0.0001, 0.001, 0.01, 0.1, 1.0, 10.0};
  std::optional<LoadedData> data;
  std::string error;
};

ExperimentResult run_named(MnistRuns& runs, const std::string& name, const std::string& body,
                           std::size_t workers) {
  ExperimentSpec spec = parse_experiment(ConfigFile::parse(mnist_base(name) + body, name));
  spec.output_dir = output_root() / name;
  spec.workers = workers;
  fs::remove_all(spec.output_dir);
  const auto start = Clock::now();
  ExperimentResult r = run_experiment(spec, &*runs.data);
  std::cout << "  ran " << name << " (" << r.runs.size() << " runs, " << fmt(seconds_since(start), 0)
            << " s)" << std::endl;
  return r;
}

std::string eta_name(double eta) {
  std::ostringstream os;
  os << "sba_eta_" << eta;
  return os.str();
}

MnistRuns run_mnist() {
  MnistRuns runs;
  try {
    ExperimentSpec probe = parse_experiment(ConfigFile::parse(mnist_base("probe")));
    runs.data = load_datasets(probe.dataset);
  } catch (const Error& e) {
    runs.error = std::string("MNIST unavailable: ") + e.what();
    return runs;
  }
  const std::size_t parallel = std::max(1u, std::thread::hardware_concurrency());
  runs.by_name["baseline"] = run_named(runs, "baseline", "train.mode = baseline\n", 1);
  runs.by_name["ba"] = run_named(runs, "ba", "train.mode = ba\ntrain.eta = 0.1\n", 1);
  runs.by_name[eta_name(0.1)] = run_named(runs, eta_name(0.1), "train.mode = sba\ntrain.eta = 0.1\n", 1);
  for (double eta : runs.etas) {
    if (eta == 0.1) continue;
    std::ostringstream body;
    body << "train.mode = sba\ntrain.eta = " << eta << "\n";
    runs.by_name[eta_name(eta)] = run_named(runs, eta_name(eta), body.str(), parallel);
  }
  return runs;
}

bool all_ok(const MnistRuns& runs, Verdict& v, std::initializer_list<std::string> names) {
  if (!runs.error.empty()) {
    v.require(false, runs.error);
    return false;
  }
  bool ok = true;
  for (const auto& name : names) {
    const auto it = runs.by_name.find(name);
    if (it == runs.by_name.end() || !it->second.all_ok()) {
      v.require(false, name + " runs completed");
      ok = false;
    }
  }
  return ok;
}

std::vector<double> finals(const ExperimentResult& r) {
  std::vector<double> out;
  for (const auto& run : r.runs) out.push_back(run.final_accuracy.value_or(0.0));
  return out;
}

double mean_epoch_seconds(const ExperimentResult& r) {
  double total = 0.0;
  std::size_t n = 0;
  for (const auto& run : r.runs)
    for (const auto& m : run.metrics) {
      total += m.wall_clock_seconds;
      ++n;
    }
  return total / static_cast<double>(n);
}

std::string list(const std::vector<double>& v) {
  std::string s;
  for (double x : v) s += (s.empty() ? "" : " ") + fmt(x);
  return s;
}

void criterion_generalization(const MnistRuns& runs, Verdict& v) {
  if (!all_ok(runs, v, {"baseline", "ba", eta_name(0.1)})) return;
  const auto base = finals(runs.by_name.at("baseline"));
  const auto ba = finals(runs.by_name.at("ba"));
  const auto sba = finals(runs.by_name.at(eta_name(0.1)));
  double worst_gap = 0.0;
  for (std::size_t s = 0; s < base.size(); ++s) worst_gap = std::min(worst_gap, sba[s] - base[s]);
  v.detail << "median baseline " << fmt(median(base)) << ", sba " << fmt(median(sba)) << ", ba "
           << fmt(median(ba)) << "; worst per-seed sba - baseline " << fmt(100 * worst_gap, 2)
           << " pp; baseline [" << list(base) << "] sba [" << list(sba) << "] ba [" << list(ba)
           << "]";
  v.require(median(sba) >= median(base), "sba median >= baseline median");
  v.require(median(ba) >= median(base), "ba median >= baseline median");
  v.require(worst_gap >= -0.001, "sba trails baseline by <= 0.1 pp in every seed");
}

void criterion_cost(const MnistRuns& runs, Verdict& v) {
  if (!all_ok(runs, v, {"baseline", "ba", eta_name(0.1)})) return;
  const auto& base = runs.by_name.at("baseline");
  const auto& ba = runs.by_name.at("ba");
  const auto& sba = runs.by_name.at(eta_name(0.1));
  const double ba_epoch = mean_epoch_seconds(ba), sba_epoch = mean_epoch_seconds(sba);
  std::size_t above = 0;
  std::string ratios;
  for (std::size_t s = 0; s < base.runs.size(); ++s) {
    const double target = *base.runs[s].final_accuracy;
    const CostRatio r = cost_ratio(ba.runs[s].metrics, sba.runs[s].metrics, target);
    if (r.reached() && *r.ratio > 1.0) ++above;
    ratios += (ratios.empty() ? "" : " ") + (r.reached() ? fmt(*r.ratio, 2) : std::string("n/a"));
  }
  v.detail << "mean epoch seconds ba " << fmt(ba_epoch) << ", sba " << fmt(sba_epoch)
           << "; cost ratios [" << ratios << "], " << above << "/5 above 1";
  v.require(sba_epoch < ba_epoch, "sba epoch faster than ba epoch");
  v.require(above >= 4, "cost ratio > 1 in >= 4 seeds");
}

void criterion_eta(const MnistRuns& runs, Verdict& v) {
  if (!runs.error.empty()) {
    v.require(false, runs.error);
    return;
  }
  std::vector<double> medians;
  for (double eta : runs.etas) {
    const auto& r = runs.by_name.at(eta_name(eta));
    v.require(r.all_ok(), eta_name(eta) + " runs completed");
    medians.push_back(median(finals(r)));
  }
  const double edge = std::max(medians.front(), medians.back());
  const double interior = *std::max_element(medians.begin() + 1, medians.end() - 1);
  const std::size_t best = std::max_element(medians.begin(), medians.end()) - medians.begin();
  v.detail << "median accuracy by eta [" << list(medians) << "], best eta " << runs.etas[best];
  v.require(interior > edge, "peak at an interior eta");
}

void criterion_vote(const MnistRuns& runs, Verdict& v) {
  if (!all_ok(runs, v, {eta_name(0.1)})) return;
  const auto& sba = runs.by_name.at(eta_name(0.1));
  const Dataset& test = *runs.data->test;
  std::vector<double> argmax_acc, vote_acc;
  bool agree_equal = true, sum_law = true;
  for (const auto& run : sba.runs) {
    argmax_acc.push_back(*run.final_accuracy);
    vote_acc.push_back(*run.final_accuracy_vote);

    const LayerStack net = load_checkpoint(sba.output_dir / "runs" / run.plan.run_id / "model.sba");
    const RunConfig& cfg = run.plan.config;
    const std::size_t m = cfg.vicinity.fold();
    const double plain = evaluate(net, test, EvalMode::argmax).accuracy;

    VoteSettings agree = vote_settings_for(cfg, cfg.optimizer.epochs);
    agree.vicinity.tau = 1e-300;
    agree.vicinity.keep_prob = 1.0;
    std::vector<VotePrediction> preds;
    const double unanimous = evaluate(net, test, EvalMode::vote, agree, &preds).accuracy;
    agree_equal = agree_equal && unanimous == plain;

    std::vector<VotePrediction> trained;
    evaluate(net, test, EvalMode::vote, vote_settings_for(cfg, cfg.optimizer.epochs), &trained);
    for (const auto* set : {&preds, &trained}) {
      sum_law = sum_law && set->size() == test.size();
      for (const auto& p : *set) {
        std::size_t total = 0;
        for (std::size_t c : p.vote_counts) total += c;
        sum_law = sum_law && total == m + 1;
      }
    }
  }
  const double gap = median(vote_acc) - median(argmax_acc);
  v.detail << "all-agree vote == argmax: " << (agree_equal ? "yes" : "no")
           << "; median vote " << fmt(median(vote_acc)) << " vs argmax " << fmt(median(argmax_acc))
           << " (" << fmt(100 * gap, 2) << " pp); sum law " << (sum_law ? "holds" : "broken");
  v.require(agree_equal, "all-agree vote equals argmax");
  v.require(std::abs(gap) <= 0.005, "vote within 0.5 pp of argmax");
  v.require(sum_law, "vote counts sum to M + 1");
}

std::vector<std::string> non_timing_lines(const fs::path& metrics) {
  std::vector<std::string> out;
  for (auto r : read_metrics(metrics)) {
    r.metrics.wall_clock_seconds = 0.0;
    out.push_back(to_json_line(r));
  }
  return out;
}

bool same_outputs(const ExperimentResult& a, const ExperimentResult& b) {
  if (non_timing_lines(a.output_dir / "metrics.jsonl") != non_timing_lines(b.output_dir / "metrics.jsonl"))
    return false;
  for (const auto& run : a.runs) {
    const fs::path rel = fs::path("runs") / run.plan.run_id;
    for (const char* file : {"model.sba", "config.txt"})
      if (file_bytes(a.output_dir / rel / file) != file_bytes(b.output_dir / rel / file)) return false;
  }
  return true;
}

void criterion_determinism(MnistRuns& runs, Verdict& v) {
  const fs::path root = output_root();
  const std::string moons = R"(
dataset.kind = two_moons
model.widths = [2, 32, 32, 2]
optim.epochs = 10
optim.batch_size = 20
sweep.train.mode = [baseline, ba, sba]
seeds = [0, 1]
workers = 3
)";
  auto run_moons = [&](const std::string& name) {
    ExperimentSpec spec = parse_experiment(ConfigFile::parse("name = " + name + moons));
    spec.output_dir = root / name;
    fs::remove_all(spec.output_dir);
    return run_experiment(spec);
  };
  const bool moons_same = same_outputs(run_moons("determinism_moons_a"), run_moons("determinism_moons_b"));
  v.require(moons_same, "two-moons sweep reproduces");
  std::size_t compared = 6;

  if (all_ok(runs, v, {"ba", eta_name(0.1)})) {
    for (const std::string& name : {std::string("ba"), eta_name(0.1)}) {
      const ExperimentResult& first = runs.by_name.at(name);
      const std::string body = name == "ba" ? "train.mode = ba\ntrain.eta = 0.1\nseeds = [0]\n"
                                            : "train.mode = sba\ntrain.eta = 0.1\nseeds = [0]\n";
      std::string text = mnist_base(name) + body;
      text.replace(text.find("seeds = [0, 1, 2, 3, 4]\n"), 24, "");
      ExperimentSpec spec = parse_experiment(ConfigFile::parse(text, name));
      spec.output_dir = root / ("determinism_" + name);
      fs::remove_all(spec.output_dir);
      const ExperimentResult again = run_experiment(spec, &*runs.data);
      const auto a = non_timing_lines(first.output_dir / "runs" / first.runs[0].plan.run_id / "metrics.jsonl");
      const auto b = non_timing_lines(again.output_dir / "runs" / again.runs[0].plan.run_id / "metrics.jsonl");
      const bool same_ckpt =
          file_bytes(first.output_dir / "runs" / first.runs[0].plan.run_id / "model.sba") ==
          file_bytes(again.output_dir / "runs" / again.runs[0].plan.run_id / "model.sba");
      v.require(a == b && same_ckpt, name + " seed 0 reproduces");
      ++compared;
    }
  }
  v.detail << compared << " configurations re-run, non-timing outputs "
           << (v.pass ? "identical" : "differ");
}

}  // namespace

// Optional arguments select criteria by number; default is all of them.
int main(int argc, char** argv) {
  std::cout << std::setprecision(6);
  std::vector<int> selected;
  for (int i = 1; i < argc; ++i) selected.push_back(std::atoi(argv[i]));
  auto wanted = [&](int id) {
    return selected.empty() || std::find(selected.begin(), selected.end(), id) != selected.end();
  };
  int failures = 0;
  auto report = [&](int id, const std::string& title, Verdict& v) {
    std::cout << "criterion " << id << " " << (v.pass ? "PASS" : "FAIL") << " (" << title
              << "): " << v.detail.str() << std::endl;
    if (!v.pass) ++failures;
  };
  auto guarded = [&](int id, const std::string& title, const std::function<void(Verdict&)>& body) {
    if (!wanted(id)) return;
    Verdict v;
    try {
      body(v);
    } catch (const std::exception& e) {
      v.require(false, std::string("exception: ") + e.what());
    }
    report(id, title, v);
  };

  guarded(1, "gradient oracle", criterion_gradients);
  guarded(2, "degeneracy equivalences", criterion_degeneracy);
  guarded(3, "scheduler statistics", criterion_scheduler);
  guarded(4, "vicinity invariants", criterion_vicinity);
  guarded(5, "KL/CE identities", criterion_identities);

  MnistRuns runs;
  if (wanted(6) || wanted(7) || wanted(8) || wanted(9) || wanted(10)) {
    std::cout << "running MNIST experiments from " << mnist_dir() << std::endl;
    try {
      runs = run_mnist();
    } catch (const std::exception& e) {
      runs.error = std::string("MNIST experiments failed: ") + e.what();
    }
  }
  guarded(6, "desk-scale generalization", [&](Verdict& v) { criterion_generalization(runs, v); });
  guarded(7, "cost-ratio direction", [&](Verdict& v) { criterion_cost(runs, v); });
  guarded(8, "eta-sweep shape", [&](Verdict& v) { criterion_eta(runs, v); });
  guarded(9, "inference vote", [&](Verdict& v) { criterion_vote(runs, v); });
  guarded(10, "end-to-end determinism", [&](Verdict& v) { criterion_determinism(runs, v); });

  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed")
            << std::endl;
  return failures == 0 ? 0 : 1;
}
