#pragma once

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

#include "sba/rng.hpp"
#include "sba/tensor.hpp"

namespace sba {

enum class BasisMode {
  orthonormal,        // Q factor of a Gaussian matrix
  column_normalized,  // Gaussian matrix with unit-norm columns
};

BasisMode parse_basis_mode(std::string_view name);
std::string_view to_string(BasisMode mode);

/// Shape of the latent vicinity around each reference activation.
struct VicinityConfig {
  std::size_t p_gauss = 2;  // projected clipped-Gaussian points per sample
  std::size_t q_drop = 2;   // feature-deletion points per sample
  double sigma = 0.1;       // Gaussian std, activation units
  double tau = 0.3;         // per-component clip bound, activation units
  double keep_prob = 0.9;   // Bernoulli keep probability of deletion masks
  BasisMode basis_mode = BasisMode::orthonormal;

  std::size_t fold() const { return p_gauss + q_drop; }
  /// ConfigError on out-of-range values; `require_fold` demands M >= 1.
  void validate(bool require_fold = true) const;
};

/// Random Q x Q projection used to rotate clipped noise.
struct BasisMatrix {
  std::size_t width = 0;
  std::vector<double> values;  // row-major width x width
  std::size_t generation_stamp = 0;
  std::size_t layer = 0;

  double at(std::size_t r, std::size_t c) const { return values[r * width + c]; }
  /// max |(S^T S - I)_{ij}|
  double orthogonality_error() const;
  std::vector<double> apply(std::span<const double> v) const;
};

/// Orthonormal mode: QR of a standard-Gaussian matrix with columns of Q
/// flipped so that diag(R) > 0.
BasisMatrix make_basis(std::size_t width, RandomStream& stream,
                       BasisMode mode = BasisMode::orthonormal);

/// x + S * clip(eps, tau), eps ~ N(0, sigma^2 I).
std::vector<double> gaussian_virtual(std::span<const double> x, const BasisMatrix& basis,
                                     double sigma, double tau, RandomStream& stream);

/// Same with an already drawn noise vector; exposed for exact checks.
std::vector<double> gaussian_virtual_from_noise(std::span<const double> x,
                                                const BasisMatrix& basis,
                                                std::span<const double> noise, double tau);

/// Elementwise x * mask, mask_i ~ Bernoulli(keep_prob). No 1/keep_prob rescale.
std::vector<double> dropout_virtual(std::span<const double> x, double keep_prob,
                                    RandomStream& stream);

/// [X_k; V_g; V_d] with V_g and V_d each grouped by reference sample.
struct AugmentedBatch {
  Tensor rows;                        // (1 + M) B x Q_k, detached
  std::vector<std::size_t> ref_index;  // reference row of virtual row B + v
  std::size_t reference_count = 0;     // B

  std::size_t virtual_count() const { return ref_index.size(); }
  /// Rows [B, (1 + M) B), i.e. V_g then V_d.
  Tensor virtual_rows() const;
};

AugmentedBatch augment_batch(const Tensor& activations, const VicinityConfig& cfg,
                             const BasisMatrix& basis, RandomStream& noise,
                             RandomStream& mask);

}  // namespace sba
