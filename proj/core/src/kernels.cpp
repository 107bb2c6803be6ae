#include "kernels.hpp"

#include <algorithm>
#include <cmath>

namespace sba::kernels {

void affine_forward(std::span<const double> x, std::size_t rows, std::size_t n,
                    std::span<const double> w, std::size_t m, std::span<const double> b,
                    std::span<double> out) {
  const double* wp = w.data();
  for (std::size_t i = 0; i < rows; ++i) {
    const double* xi = x.data() + i * n;
    double* oi = out.data() + i * m;
    std::fill(oi, oi + m, 0.0);
    for (std::size_t r = 0; r < n; ++r) {
      const double coef = xi[r];
      if (coef == 0.0) continue;
      const double* wr = wp + r * m;
      for (std::size_t j = 0; j < m; ++j) oi[j] += coef * wr[j];
    }
    for (std::size_t j = 0; j < m; ++j) oi[j] += b[j];
  }
}

void affine_grad_input(std::span<const double> dy, std::size_t rows, std::size_t m,
                       std::span<const double> w, std::size_t n, std::span<double> dx) {
  constexpr std::size_t kLanes = 8;
  for (std::size_t i = 0; i < rows; ++i) {
    const double* gi = dy.data() + i * m;
    double* di = dx.data() + i * n;
    for (std::size_t r = 0; r < n; ++r) {
      const double* wr = w.data() + r * m;
      double lane[kLanes] = {};
      std::size_t j = 0;
      for (; j + kLanes <= m; j += kLanes)
        for (std::size_t l = 0; l < kLanes; ++l) lane[l] += gi[j + l] * wr[j + l];
      double acc = 0.0;
      for (; j < m; ++j) acc += gi[j] * wr[j];
      for (std::size_t l = 0; l < kLanes; ++l) acc += lane[l];
      di[r] += acc;
    }
  }
}

void affine_grad_weight(std::span<const double> x, std::size_t rows, std::size_t n,
                        std::span<const double> dy, std::size_t m, std::span<double> dw) {
  for (std::size_t i = 0; i < rows; ++i) {
    const double* xi = x.data() + i * n;
    const double* gi = dy.data() + i * m;
    for (std::size_t r = 0; r < n; ++r) {
      const double coef = xi[r];
      if (coef == 0.0) continue;
      double* dr = dw.data() + r * m;
      for (std::size_t j = 0; j < m; ++j) dr[j] += coef * gi[j];
    }
  }
}

void affine_grad_bias(std::span<const double> dy, std::size_t rows, std::size_t m,
                      std::span<double> db) {
  for (std::size_t i = 0; i < rows; ++i) {
    const double* gi = dy.data() + i * m;
    for (std::size_t j = 0; j < m; ++j) db[j] += gi[j];
  }
}

void log_softmax_rows(std::span<const double> x, std::size_t rows, std::size_t k,
                      std::span<double> out) {
  for (std::size_t i = 0; i < rows; ++i) {
    const double* xi = x.data() + i * k;
    double* oi = out.data() + i * k;
    const double peak = *std::max_element(xi, xi + k);
    double total = 0.0;
    for (std::size_t c = 0; c < k; ++c) total += std::exp(xi[c] - peak);
    const double log_norm = peak + std::log(total);
    for (std::size_t c = 0; c < k; ++c) oi[c] = xi[c] - log_norm;
  }
}

}  // namespace sba::kernels
