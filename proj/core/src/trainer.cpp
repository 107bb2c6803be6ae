#include "sba/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numbers>
#include <sstream>
#include <string>

#include "sba/error.hpp"

namespace sba {

namespace {

constexpr std::uint64_t kTrainTag = 0x545241494e;  // "TRAIN"

template <typename Enum, std::size_t N>
Enum parse_enum(std::string_view s, const char* field,
                const std::pair<std::string_view, Enum> (&table)[N]) {
  for (const auto& [name, value] : table)
    if (name == s) return value;
  std::string allowed;
  for (const auto& entry : table) allowed += (allowed.empty() ? "" : ", ") + std::string(entry.first);
  throw ConfigError(std::string(field) + " must be one of {" + allowed + "}, got '" +
                    std::string(s) + "'");
}

constexpr std::pair<std::string_view, TrainMode> kModes[] = {
    {"baseline", TrainMode::baseline}, {"ba", TrainMode::ba}, {"sba", TrainMode::sba}};
constexpr std::pair<std::string_view, LossMode> kLossModes[] = {{"soft_kl", LossMode::soft_kl},
                                                                {"hard_ce", LossMode::hard_ce}};
constexpr std::pair<std::string_view, UpdateStyle> kStyles[] = {
    {"combined", UpdateStyle::combined}, {"sequential", UpdateStyle::sequential}};
constexpr std::pair<std::string_view, KlGradient> kKlGradients[] = {
    {"detached", KlGradient::virtual_only}, {"full", KlGradient::both}};

template <typename Enum, std::size_t N>
std::string_view enum_name(Enum v, const std::pair<std::string_view, Enum> (&table)[N]) {
  for (const auto& [name, value] : table)
    if (value == v) return name;
  return "?";
}

}  // namespace

TrainMode parse_train_mode(std::string_view s) { return parse_enum(s, "train.mode", kModes); }
LossMode parse_loss_mode(std::string_view s) { return parse_enum(s, "train.loss_mode", kLossModes); }
UpdateStyle parse_update_style(std::string_view s) {
  return parse_enum(s, "train.update_style", kStyles);
}
KlGradient parse_kl_gradient(std::string_view s) {
  return parse_enum(s, "train.kl_gradient", kKlGradients);
}
std::string_view to_string(TrainMode m) { return enum_name(m, kModes); }
std::string_view to_string(LossMode m) { return enum_name(m, kLossModes); }
std::string_view to_string(UpdateStyle s) { return enum_name(s, kStyles); }
std::string_view to_string(KlGradient g) { return enum_name(g, kKlGradients); }

// ---------------------------------------------------------------------------
// RunConfig

double RunConfig::effective_omega() const {
  if (omega) return *omega;
  switch (mode) {
    case TrainMode::baseline:
      return std::numbers::pi / 2;
    case TrainMode::ba:
      return 0.0;
    case TrainMode::sba:
      break;
  }
  return std::numbers::pi / 3;
}

void RunConfig::validate() const {
  if (!(eta >= 0.0) || !std::isfinite(eta)) throw ConfigError("train.eta must be a finite value >= 0");
  const double w = effective_omega();
  if (!(w >= 0.0 && w <= std::numbers::pi / 2 + 1e-12)) {
    throw ConfigError("train.omega_radians must lie in [0, pi/2]");
  }
  if (mode == TrainMode::ba && w != 0.0) {
    throw ConfigError("train.omega_radians: mode ba always augments and requires omega = 0");
  }
  if (mode == TrainMode::baseline && eta != 0.0 && augmentation_probability(w) != 0.0) {
    throw ConfigError("train.omega_radians: mode baseline requires eta = 0 or omega = pi/2");
  }
  vicinity.validate(mode != TrainMode::baseline);
  const auto& o = optimizer;
  if (!(o.learning_rate > 0.0)) throw ConfigError("optim.lr must be > 0");
  if (!(o.momentum >= 0.0 && o.momentum < 1.0)) throw ConfigError("optim.momentum must lie in [0, 1)");
  if (!(o.weight_decay >= 0.0)) throw ConfigError("optim.weight_decay must be >= 0");
  if (o.epochs < 1) throw ConfigError("optim.epochs must be >= 1");
  if (o.batch_size < 1) throw ConfigError("optim.batch_size must be >= 1");
  if (eval.batch_size < 1) throw ConfigError("eval.batch_size must be >= 1");
  if (widths.size() < 2) throw ConfigError("model.widths needs at least 2 entries");
  for (auto v : widths)
    if (v == 0) throw ConfigError("model.widths entries must be positive");
  for (auto k : split_layers) {
    if (k == 0 || k + 1 >= widths.size()) {
      throw ConfigError("model.split_layers: " + std::to_string(k) +
                        " is not a hidden layer index (1.." + std::to_string(widths.size() - 2) + ")");
    }
  }
  if (mode != TrainMode::baseline && widths.size() < 3) {
    throw ConfigError("model.widths: augmentation needs at least one hidden layer");
  }
  if (fixed_split != 0) {
    const bool hidden = fixed_split + 1 < widths.size();
    const bool listed = split_layers.empty() ||
                        std::find(split_layers.begin(), split_layers.end(), fixed_split) !=
                            split_layers.end();
    if (!hidden || !listed) {
      throw ConfigError("train.split_layer " + std::to_string(fixed_split) +
                        " is not an eligible split layer");
    }
  }
}

// ---------------------------------------------------------------------------
// SgdMomentum

SgdMomentum::SgdMomentum(std::vector<Tensor> params, const OptimizerConfig& cfg)
    : params_(std::move(params)),
      lr_(cfg.learning_rate),
      momentum_(cfg.momentum),
      weight_decay_(cfg.weight_decay) {
  for (const auto& p : params_) velocity_.emplace_back(p.size(), 0.0);
}

void SgdMomentum::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

void SgdMomentum::step(double grad_scale) {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto values = params_[i].mutable_values();
    const auto grad = params_[i].mutable_grad();
    auto& v = velocity_[i];
    for (std::size_t j = 0; j < values.size(); ++j) {
      double g = grad[j] * grad_scale;
      if (weight_decay_ != 0.0) g += weight_decay_ * values[j];
      v[j] = momentum_ * v[j] + g;
      values[j] -= lr_ * v[j];
    }
  }
}

// ---------------------------------------------------------------------------
// Losses

LossTerms loss_from_split(Tape& tape, const LayerStack& net, const Tensor& activations,
                          std::span<const int> labels, SplitChoice k,
                          const AugmentedBatch* augmented, LossMode loss_mode,
                          KlGradient kl_gradient) {
  const std::size_t batch = activations.rows();
  if (labels.size() != batch) {
    throw DimensionError("loss: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(batch) + " rows");
  }
  if (!augmented) {
    const Tensor log_probs = tape.log_softmax(forward_from(net, activations, k, tape));
    return LossTerms{tape.cross_entropy_mean(log_probs, labels), std::nullopt};
  }
  if (augmented->reference_count != batch) {
    throw DimensionError("augmented batch built for " +
                         std::to_string(augmented->reference_count) + " references, got " +
                         std::to_string(batch));
  }
  const Tensor stacked = tape.concat_rows(activations, augmented->virtual_rows());
  const Tensor log_probs = tape.log_softmax(forward_from(net, stacked, k, tape));
  const Tensor raw = tape.slice_rows(log_probs, 0, batch);
  const Tensor virt = tape.slice_rows(log_probs, batch, log_probs.rows());
  LossTerms terms{tape.cross_entropy_mean(raw, labels), std::nullopt};
  if (loss_mode == LossMode::soft_kl) {
    const Tensor ref = tape.gather_rows(raw, augmented->ref_index);
    terms.constraint = tape.kl_divergence_mean(ref, virt, kl_gradient);
  } else {
    std::vector<int> virt_labels;
    virt_labels.reserve(augmented->ref_index.size());
    for (std::size_t r : augmented->ref_index) virt_labels.push_back(labels[r]);
    terms.constraint = tape.cross_entropy_mean(virt, virt_labels);
  }
  return terms;
}

IterationLoss iteration_loss(Tape& tape, const LayerStack& net, const Tensor& x,
                             std::span<const int> labels, std::optional<SplitChoice> augment_at,
                             const BasisMatrix* basis, const RunConfig& cfg, RandomStream& noise,
                             RandomStream& mask) {
  if (!augment_at) {
    if (labels.size() != x.rows()) throw DimensionError("label count differs from batch rows");
    const Tensor log_probs = tape.log_softmax(forward(net, x, tape));
    return IterationLoss{tape.cross_entropy_mean(log_probs, labels), std::nullopt, std::nullopt};
  }
  if (!basis) throw ContractError("augmented iteration needs a basis matrix");
  const Tensor activations = forward_to(net, x, *augment_at, tape);
  AugmentedBatch aug = augment_batch(activations, cfg.vicinity, *basis, noise, mask);
  LossTerms terms = loss_from_split(tape, net, activations, labels, *augment_at, &aug,
                                    cfg.loss_mode, cfg.kl_gradient);
  return IterationLoss{terms.primary, terms.constraint, std::move(aug)};
}

// ---------------------------------------------------------------------------
// Trainer

Trainer::Trainer(RunConfig cfg)
    : cfg_((cfg.validate(), std::move(cfg))),
      net_(LayerStack::init(cfg_.widths, cfg_.seeds.init, cfg_.split_layers)),
      optimizer_(net_.parameters(), cfg_.optimizer),
      noise_(make_stream(cfg_.seeds.noise, kTrainTag)),
      mask_(make_stream(cfg_.seeds.mask, kTrainTag)),
      split_(make_stream(cfg_.seeds.split, kTrainTag)) {
  if (cfg_.mode != TrainMode::baseline) scheduler_.emplace(cfg_.effective_omega(), cfg_.seeds.scheduler);
}

SplitChoice Trainer::choose_split() {
  if (cfg_.fixed_split != 0) return SplitChoice{cfg_.fixed_split};
  return draw_split(net_.eligible_splits(), split_);
}

const BasisMatrix& Trainer::refresh_basis(SplitChoice k) {
  basis_ = make_basis(net_.width_at(k), noise_, cfg_.vicinity.basis_mode);
  basis_->layer = k.layer;
  basis_->generation_stamp = iteration_;
  ++basis_generations_;
  return *basis_;
}

void Trainer::check_finite(double value, const char* what) const {
  if (std::isfinite(value)) return;
  std::ostringstream os;
  os << what << " became non-finite at iteration " << iteration_ << " (eta=" << cfg_.eta
     << ", sigma=" << cfg_.vicinity.sigma << ", tau=" << cfg_.vicinity.tau << ")";
  throw DivergenceError(os.str());
}

StepResult Trainer::train_step(const Tensor& x, std::span<const int> labels) {
  StepResult result;
  result.lambda = scheduler_ ? scheduler_->sample() : 0;
  ++iteration_;
  const BasisMatrix* basis = nullptr;
  if (result.lambda == 1) {
    result.split = choose_split();
    basis = &refresh_basis(*result.split);
  }

  optimizer_.zero_grad();
  Tape tape;
  IterationLoss loss =
      iteration_loss(tape, net_, x, labels, result.split, basis, cfg_, noise_, mask_);
  result.loss_primary = loss.primary.item();
  check_finite(result.loss_primary, "primary loss");
  if (loss.constraint) {
    result.loss_constraint = loss.constraint->item();
    check_finite(*result.loss_constraint, "constraint loss");
  }

  if (cfg_.update_style == UpdateStyle::combined || !loss.constraint) {
    const Tensor total = loss.constraint
                             ? tape.add(loss.primary, tape.scale(*loss.constraint, cfg_.eta))
                             : loss.primary;
    tape.backward(total);
    optimizer_.step();
    return result;
  }

  tape.backward(loss.primary);
  optimizer_.step();

  // Second update at the new parameters, same batch and virtual points.
  optimizer_.zero_grad();
  Tape second;
  const Tensor activations = forward_to(net_, x, *result.split, second);
  LossTerms terms = loss_from_split(second, net_, activations, labels, *result.split,
                                    &*loss.augmented, cfg_.loss_mode, cfg_.kl_gradient);
  result.loss_constraint = terms.constraint->item();
  check_finite(*result.loss_constraint, "constraint loss");
  second.backward(second.scale(*terms.constraint, cfg_.eta));
  optimizer_.step();
  return result;
}

// ---------------------------------------------------------------------------
// run_training

VoteSettings vote_settings_for(const RunConfig& cfg, std::size_t epoch) {
  VoteSettings s;
  s.vicinity = cfg.vicinity;
  if (cfg.fixed_split != 0) s.split = SplitChoice{cfg.fixed_split};
  s.noise_seed = cfg.seeds.noise;
  s.mask_seed = cfg.seeds.mask;
  s.split_seed = cfg.seeds.split;
  s.stream_index = epoch;
  s.batch_size = cfg.eval.batch_size;
  return s;
}

TrainingResult run_training(const RunConfig& cfg, const Dataset& train, const Dataset* test,
                            const EpochCallback& on_epoch) {
  cfg.validate();
  if (train.size() == 0) throw ConfigError("training set is empty");
  if (train.dim() != cfg.widths.front()) {
    throw ConfigError("model.widths: input width " + std::to_string(cfg.widths.front()) +
                      " does not match dataset width " + std::to_string(train.dim()));
  }
  if (train.class_count() > cfg.widths.back()) {
    throw ConfigError("model.widths: " + std::to_string(cfg.widths.back()) +
                      " outputs cannot cover " + std::to_string(train.class_count()) + " classes");
  }
  if (test && (test->dim() != train.dim() || test->class_count() > cfg.widths.back())) {
    throw ConfigError("test set does not match the training set's width or classes");
  }
  if (cfg.optimizer.batch_size > train.size()) {
    throw ConfigError("optim.batch_size " + std::to_string(cfg.optimizer.batch_size) +
                      " exceeds training set size " + std::to_string(train.size()));
  }

  Trainer trainer(cfg);
  const BatchPlan plan{cfg.seeds.shuffle, cfg.optimizer.batch_size};
  TrainingResult result{trainer.network(), {}, 0, 0};
  const std::size_t epochs = cfg.optimizer.epochs;

  for (std::size_t epoch = 1; epoch <= epochs; ++epoch) {
    EpochMetrics m;
    m.epoch = epoch;
    double primary_sum = 0.0, constraint_sum = 0.0;

    const auto start = std::chrono::steady_clock::now();
    for (const auto& idx : plan.batch_indices(train.size(), epoch - 1)) {
      const Tensor x = train.gather(idx);
      const std::vector<int> y = train.gather_labels(idx);
      const StepResult step = trainer.train_step(x, y);
      ++m.iterations;
      primary_sum += step.loss_primary;
      if (step.lambda == 1) {
        ++m.augmented_iterations;
        constraint_sum += step.loss_constraint.value_or(0.0);
      }
    }
    m.wall_clock_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

    m.train_loss_primary = primary_sum / static_cast<double>(m.iterations);
    if (m.augmented_iterations > 0) {
      m.train_loss_constraint = constraint_sum / static_cast<double>(m.augmented_iterations);
    }
    m.augmented_fraction =
        static_cast<double>(m.augmented_iterations) / static_cast<double>(m.iterations);
    m.basis_generations = trainer.basis_generations();

    const LayerStack& net = trainer.network();
    m.train_accuracy = evaluate(net, train, EvalMode::argmax).accuracy;
    if (test) {
      m.test_accuracy = evaluate(net, *test, EvalMode::argmax).accuracy;
      const bool vote_epoch = cfg.eval.vote && cfg.vicinity.fold() > 0 &&
                              !net.eligible_splits().empty() &&
                              epoch + cfg.eval.vote_last_epochs > epochs;
      if (vote_epoch) {
        m.test_accuracy_vote =
            evaluate(net, *test, EvalMode::vote, vote_settings_for(cfg, epoch)).accuracy;
      }
    }
    if (on_epoch) on_epoch(m, net);
    result.metrics.push_back(m);
  }
  if (const Scheduler* s = trainer.scheduler()) {
    result.scheduler_draws = s->draw_count();
    result.scheduler_ones = s->one_count();
  }
  result.network = trainer.network().clone();
  return result;
}

}  // namespace sba
