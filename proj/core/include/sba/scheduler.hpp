#pragma once

#include <cstddef>
#include <cstdint>

#include "sba/rng.hpp"

namespace sba {

/// Bernoulli batch scheduler: lambda(t) = 1 with probability cos(omega).
///
/// Owns a dedicated stream, so its draws never shift any other source of
/// randomness in a run.
class Scheduler {
 public:
  /// omega in [0, pi/2]; anything else is a ConfigError.
  Scheduler(double omega, std::uint64_t seed);

  double omega() const { return omega_; }
  double probability() const { return probability_; }
  /// Probability used at iteration t. Constant today.
  double probability_at(std::size_t /*iteration*/) const { return probability_; }

  /// Returns lambda(t) in {0, 1} and updates the counters.
  int sample();

  std::size_t draw_count() const { return draws_; }
  std::size_t one_count() const { return ones_; }
  /// ones / draws; ContractError before the first draw.
  double empirical_rate() const;

 private:
  double omega_;
  double probability_;
  RandomStream stream_;
  std::size_t draws_ = 0;
  std::size_t ones_ = 0;
};

/// cos(omega), with the floating-point residue of cos(pi/2) mapped to 0.
double augmentation_probability(double omega);

}  // namespace sba
