#include "sba/vicinity.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "sba/error.hpp"

namespace sba {

BasisMode parse_basis_mode(std::string_view name) {
  if (name == "orthonormal") return BasisMode::orthonormal;
  if (name == "column_normalized") return BasisMode::column_normalized;
  throw ConfigError("basis_mode must be orthonormal or column_normalized, got '" +
                    std::string(name) + "'");
}

std::string_view to_string(BasisMode mode) {
  return mode == BasisMode::orthonormal ? "orthonormal" : "column_normalized";
}

void VicinityConfig::validate(bool require_fold) const {
  if (require_fold && fold() < 1) {
    throw ConfigError("vicinity: p_gauss + q_drop must be at least 1");
  }
  if (!(sigma > 0.0)) throw ConfigError("vicinity.sigma must be > 0");
  if (!(tau > 0.0)) throw ConfigError("vicinity.tau must be > 0");
  if (!(keep_prob > 0.0 && keep_prob <= 1.0)) {
    throw ConfigError("vicinity.keep_prob must lie in (0, 1]");
  }
}

double BasisMatrix::orthogonality_error() const {
  double worst = 0.0;
  for (std::size_t i = 0; i < width; ++i) {
    for (std::size_t j = 0; j < width; ++j) {
      double dot = 0.0;
      for (std::size_t r = 0; r < width; ++r) dot += at(r, i) * at(r, j);
      worst = std::max(worst, std::abs(dot - (i == j ? 1.0 : 0.0)));
    }
  }
  return worst;
}

std::vector<double> BasisMatrix::apply(std::span<const double> v) const {
  if (v.size() != width) {
    throw DimensionError("basis of width " + std::to_string(width) +
                         " applied to vector of length " + std::to_string(v.size()));
  }
  std::vector<double> out(width, 0.0);
  for (std::size_t r = 0; r < width; ++r) {
    const double* row = values.data() + r * width;
    double acc = 0.0;
    for (std::size_t c = 0; c < width; ++c) acc += row[c] * v[c];
    out[r] = acc;
  }
  return out;
}

BasisMatrix make_basis(std::size_t width, RandomStream& stream, BasisMode mode) {
  if (width == 0) throw ConfigError("basis width must be at least 1");
  using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const auto n = static_cast<Eigen::Index>(width);
  Mat gaussian(n, n);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (Eigen::Index r = 0; r < n; ++r)
    for (Eigen::Index c = 0; c < n; ++c) gaussian(r, c) = normal(stream);

  Mat basis;
  if (mode == BasisMode::orthonormal) {
    Eigen::HouseholderQR<Mat> qr(gaussian);
    basis = qr.householderQ() * Mat::Identity(n, n);
    const Mat& packed = qr.matrixQR();
    for (Eigen::Index c = 0; c < n; ++c)
      if (packed(c, c) < 0.0) basis.col(c) *= -1.0;
  } else {
    basis = gaussian;
    for (Eigen::Index c = 0; c < n; ++c) basis.col(c).normalize();
  }

  BasisMatrix out;
  out.width = width;
  out.values.assign(basis.data(), basis.data() + basis.size());
  return out;
}

std::vector<double> gaussian_virtual_from_noise(std::span<const double> x,
                                                const BasisMatrix& basis,
                                                std::span<const double> noise, double tau) {
  if (noise.size() != x.size()) throw DimensionError("noise length differs from x");
  std::vector<double> clipped(noise.begin(), noise.end());
  for (double& e : clipped) e = std::clamp(e, -tau, tau);
  std::vector<double> out = basis.apply(clipped);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + out[i];
  return out;
}

std::vector<double> gaussian_virtual(std::span<const double> x, const BasisMatrix& basis,
                                     double sigma, double tau, RandomStream& stream) {
  if (!(tau > 0.0)) throw ConfigError("tau must be > 0");
  std::normal_distribution<double> normal(0.0, sigma);
  std::vector<double> noise(x.size());
  for (double& e : noise) e = normal(stream);
  return gaussian_virtual_from_noise(x, basis, noise, tau);
}

std::vector<double> dropout_virtual(std::span<const double> x, double keep_prob,
                                    RandomStream& stream) {
  if (!(keep_prob > 0.0 && keep_prob <= 1.0)) throw ConfigError("keep_prob must lie in (0, 1]");
  std::bernoulli_distribution keep(keep_prob);
  std::vector<double> out(x.begin(), x.end());
  for (double& v : out)
    if (!keep(stream)) v = 0.0;
  return out;
}

Tensor AugmentedBatch::virtual_rows() const {
  return ops::slice_rows(rows, reference_count, rows.rows());
}

AugmentedBatch augment_batch(const Tensor& activations, const VicinityConfig& cfg,
                             const BasisMatrix& basis, RandomStream& noise,
                             RandomStream& mask) {
  cfg.validate();
  if (activations.rank() != 2 || activations.cols() != basis.width) {
    throw DimensionError("augment_batch: activations " + shape_string(activations.shape()) +
                         " do not match basis width " + std::to_string(basis.width));
  }
  const std::size_t batch = activations.rows(), width = activations.cols();
  const std::size_t total = batch * (1 + cfg.fold());
  std::vector<double> data;
  data.reserve(total * width);
  data.insert(data.end(), activations.values().begin(), activations.values().end());

  AugmentedBatch out;
  out.reference_count = batch;
  out.ref_index.reserve(batch * cfg.fold());
  for (std::size_t i = 0; i < batch; ++i) {
    for (std::size_t j = 0; j < cfg.p_gauss; ++j) {
      const auto v = gaussian_virtual(activations.row(i), basis, cfg.sigma, cfg.tau, noise);
      data.insert(data.end(), v.begin(), v.end());
      out.ref_index.push_back(i);
    }
  }
  for (std::size_t i = 0; i < batch; ++i) {
    for (std::size_t j = 0; j < cfg.q_drop; ++j) {
      const auto v = dropout_virtual(activations.row(i), cfg.keep_prob, mask);
      data.insert(data.end(), v.begin(), v.end());
      out.ref_index.push_back(i);
    }
  }
  out.rows = Tensor(Shape{total, width}, std::move(data));
  return out;
}

}  // namespace sba
