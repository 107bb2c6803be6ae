#pragma once

#include <cstddef>
#include <span>

// Dense kernels behind Tape and ops. Every output element is accumulated in a
// fixed index order that does not depend on how many rows are in the batch,
// so a row's result is identical whether it is processed alone or stacked
// under other rows.
namespace sba::kernels {

// out[i,:] = sum_r x[i,r] * w[r,:] + b   (x: rows x n, w: n x m)
void affine_forward(std::span<const double> x, std::size_t rows, std::size_t n,
                    std::span<const double> w, std::size_t m, std::span<const double> b,
                    std::span<double> out);

// dx[i,r] += sum_j dy[i,j] * w[r,j]
void affine_grad_input(std::span<const double> dy, std::size_t rows, std::size_t m,
                       std::span<const double> w, std::size_t n, std::span<double> dx);

// dw[r,j] += sum_i x[i,r] * dy[i,j], accumulated row by row in i order
void affine_grad_weight(std::span<const double> x, std::size_t rows, std::size_t n,
                        std::span<const double> dy, std::size_t m, std::span<double> dw);

// db[j] += sum_i dy[i,j]
void affine_grad_bias(std::span<const double> dy, std::size_t rows, std::size_t m,
                      std::span<double> db);

// Row-wise log softmax with max subtraction.
void log_softmax_rows(std::span<const double> x, std::size_t rows, std::size_t k,
                      std::span<double> out);

}  // namespace sba::kernels
