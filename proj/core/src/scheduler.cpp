#include "sba/scheduler.hpp"

#include <cmath>
#include <numbers>
#include <random>
#include <string>

#include "sba/error.hpp"

namespace sba {

namespace {
constexpr std::uint64_t kSchedulerTag = 0x5343484544;  // "SCHED"
constexpr double kOmegaSlack = 1e-12;
}  // namespace

double augmentation_probability(double omega) {
  const double p = std::cos(omega);
  // cos(pi/2) is ~6e-17 in double.
  return p < 1e-12 ? 0.0 : p;
}

Scheduler::Scheduler(double omega, std::uint64_t seed)
    : omega_(omega), probability_(0.0), stream_(make_stream(seed, kSchedulerTag)) {
  if (!(omega >= -kOmegaSlack && omega <= std::numbers::pi / 2 + kOmegaSlack)) {
    throw ConfigError("omega_radians must lie in [0, pi/2], got " + std::to_string(omega));
  }
  probability_ = augmentation_probability(omega);
}

int Scheduler::sample() {
  std::bernoulli_distribution draw(probability_);
  const int lambda = draw(stream_) ? 1 : 0;
  ++draws_;
  ones_ += static_cast<std::size_t>(lambda);
  return lambda;
}

double Scheduler::empirical_rate() const {
  if (draws_ == 0) throw ContractError("empirical_rate needs at least one draw");
  return static_cast<double>(ones_) / static_cast<double>(draws_);
}

}  // namespace sba
