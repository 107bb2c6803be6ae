#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "sba/data_io.hpp"
#include "sba/inference.hpp"
#include "sba/network.hpp"
#include "sba/rng.hpp"
#include "sba/scheduler.hpp"
#include "sba/tensor.hpp"
#include "sba/vicinity.hpp"

namespace sba {

/// baseline: plain ERM, never augments.
/// ba:       augments on every iteration (omega = 0).
/// sba:      augments when the Bernoulli scheduler draws 1.
enum class TrainMode { baseline, ba, sba };

/// soft_kl: KL(reference softmax || virtual softmax), the distilled soft label.
/// hard_ce: cross entropy of each virtual row against its reference's label.
enum class LossMode { soft_kl, hard_ce };

/// combined:   one step on I1 + eta * I2.
/// sequential: step on I1, then (if augmented) a fresh forward pass at the
///             updated parameters and a step on eta * I2.
enum class UpdateStyle { combined, sequential };

TrainMode parse_train_mode(std::string_view s);
LossMode parse_loss_mode(std::string_view s);
UpdateStyle parse_update_style(std::string_view s);
KlGradient parse_kl_gradient(std::string_view s);
std::string_view to_string(TrainMode m);
std::string_view to_string(LossMode m);
std::string_view to_string(UpdateStyle s);
std::string_view to_string(KlGradient g);

struct OptimizerConfig {
  double learning_rate = 0.05;
  double momentum = 0.9;
  double weight_decay = 0.0;
  std::size_t epochs = 30;
  std::size_t batch_size = 32;
};

struct EvalConfig {
  bool vote = true;
  /// Vote accuracy is computed only for the last this-many epochs.
  std::size_t vote_last_epochs = 5;
  std::size_t batch_size = 500;
};

struct RunConfig {
  TrainMode mode = TrainMode::sba;
  LossMode loss_mode = LossMode::soft_kl;
  UpdateStyle update_style = UpdateStyle::combined;
  KlGradient kl_gradient = KlGradient::virtual_only;
  double eta = 0.1;
  /// Unset means the mode's natural value: 0 for ba, pi/2 for baseline,
  /// pi/3 for sba.
  std::optional<double> omega;
  VicinityConfig vicinity;
  OptimizerConfig optimizer;
  std::vector<std::size_t> widths{784, 256, 128, 10};
  /// Eligible split layers; empty means every hidden layer.
  std::vector<std::size_t> split_layers;
  /// Pins k for every augmented iteration when nonzero.
  std::size_t fixed_split = 0;
  Seeds seeds;
  EvalConfig eval;

  double effective_omega() const;
  /// ConfigError naming the offending field.
  void validate() const;
};

struct EpochMetrics {
  std::size_t epoch = 0;  // 1-based
  double train_loss_primary = 0.0;
  /// Mean I2 over augmented iterations; unset when none occurred.
  std::optional<double> train_loss_constraint;
  double train_accuracy = 0.0;
  std::optional<double> test_accuracy;
  std::optional<double> test_accuracy_vote;
  double augmented_fraction = 0.0;
  double wall_clock_seconds = 0.0;
  std::size_t iterations = 0;
  std::size_t augmented_iterations = 0;
  std::size_t basis_generations = 0;  // cumulative over the run
};

/// SGD with heavy-ball momentum: v = mu v + (g + wd theta), theta -= lr v.
class SgdMomentum {
 public:
  SgdMomentum(std::vector<Tensor> params, const OptimizerConfig& cfg);
  void zero_grad();
  /// Applies the accumulated gradients scaled by `grad_scale`.
  void step(double grad_scale = 1.0);

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> velocity_;
  double lr_, momentum_, weight_decay_;
};

/// Loss terms of one iteration. `constraint` is set only when augmented.
struct LossTerms {
  Tensor primary;
  std::optional<Tensor> constraint;
};

/// I1 and I2 from layer-k activations already on `tape`. When `augmented` is
/// given, its virtual rows (constants) are stacked under the activations and
/// pushed through g_{k+1} in one pass; I1 always uses the first B rows.
LossTerms loss_from_split(Tape& tape, const LayerStack& net, const Tensor& activations,
                          std::span<const int> labels, SplitChoice k,
                          const AugmentedBatch* augmented, LossMode loss_mode,
                          KlGradient kl_gradient);

/// Everything one iteration produced, including the virtual rows.
struct IterationLoss {
  Tensor primary;
  std::optional<Tensor> constraint;
  std::optional<AugmentedBatch> augmented;
};

/// The per-iteration objective. With `augment_at` unset (lambda = 0) this is
/// plain cross entropy on the batch; otherwise virtual points are generated at
/// that layer from `basis` and the configured streams.
IterationLoss iteration_loss(Tape& tape, const LayerStack& net, const Tensor& x,
                             std::span<const int> labels, std::optional<SplitChoice> augment_at,
                             const BasisMatrix* basis, const RunConfig& cfg, RandomStream& noise,
                             RandomStream& mask);

struct StepResult {
  int lambda = 0;
  std::optional<SplitChoice> split;
  double loss_primary = 0.0;
  std::optional<double> loss_constraint;
};

/// Owns one training run: model, optimizer, scheduler and every random stream.
class Trainer {
 public:
  explicit Trainer(RunConfig cfg);

  /// One iteration of the scheduled training procedure on a batch.
  StepResult train_step(const Tensor& x, std::span<const int> labels);

  const LayerStack& network() const { return net_; }
  const RunConfig& config() const { return cfg_; }
  /// Null in baseline mode.
  const Scheduler* scheduler() const { return scheduler_ ? &*scheduler_ : nullptr; }
  std::size_t iteration() const { return iteration_; }
  std::size_t basis_generations() const { return basis_generations_; }
  const std::optional<BasisMatrix>& basis() const { return basis_; }

 private:
  SplitChoice choose_split();
  const BasisMatrix& refresh_basis(SplitChoice k);
  void check_finite(double value, const char* what) const;

  RunConfig cfg_;
  LayerStack net_;
  SgdMomentum optimizer_;
  std::optional<Scheduler> scheduler_;
  RandomStream noise_;
  RandomStream mask_;
  RandomStream split_;
  std::optional<BasisMatrix> basis_;
  std::size_t iteration_ = 0;
  std::size_t basis_generations_ = 0;
};

struct TrainingResult {
  LayerStack network;
  std::vector<EpochMetrics> metrics;
  std::size_t scheduler_draws = 0;
  std::size_t scheduler_ones = 0;
};

using EpochCallback = std::function<void(const EpochMetrics&, const LayerStack&)>;

/// epochs x floor(N / B) iterations. `test` may be null. Wall-clock time
/// covers the training iterations of an epoch only, not evaluation.
TrainingResult run_training(const RunConfig& cfg, const Dataset& train, const Dataset* test,
                            const EpochCallback& on_epoch = {});

/// Vote settings derived from a run's seeds and vicinity.
VoteSettings vote_settings_for(const RunConfig& cfg, std::size_t epoch);

}  // namespace sba
