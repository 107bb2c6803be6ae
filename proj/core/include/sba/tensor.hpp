#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace sba {

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);

class Tape;

/// Dense rank-1 or rank-2 array of doubles, row-major.
///
/// A Tensor is a handle: copies share storage and the gradient accumulator,
/// which is what lets a Tape write gradients back into model parameters.
/// Use detach() for an independent copy.
class Tensor {
 public:
  Tensor();
  explicit Tensor(Shape shape, bool requires_grad = false);
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor vector(std::vector<double> values, bool requires_grad = false);
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows,
                       bool requires_grad = false);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values,
                       bool requires_grad = false);

  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t size() const;
  /// Leading dimension; 1 for rank-1 tensors treated as a single row.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> values() const;
  /// In-place access for optimizers and perturbation checks.
  std::span<double> mutable_values();
  std::span<const double> row(std::size_t r) const;

  double operator[](std::size_t i) const;
  double at(std::size_t r, std::size_t c) const;
  /// Value of a single-element tensor.
  double item() const;

  bool requires_grad() const;
  void set_requires_grad(bool flag);
  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  /// Copy of the values with no gradient and no tape link.
  Tensor detach() const;
  bool shares_storage(const Tensor& other) const { return impl_ == other.impl_; }
  bool all_finite() const;

 private:
  struct Impl {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;
    bool requires_grad = false;
    const Tape* tape = nullptr;
    std::size_t node = 0;
  };

  explicit Tensor(std::shared_ptr<Impl> impl) : impl_(std::move(impl)) {}
  Impl& impl() const { return *impl_; }

  std::shared_ptr<Impl> impl_;

  friend class Tape;
};

/// How the KL term treats the reference (soft-label) distribution.
enum class KlGradient {
  virtual_only,  // reference is a detached teacher signal
  both,          // full gradient, for ablation
};

/// Records differentiable operations and runs reverse-mode accumulation.
///
/// Nodes are appended in execution order, so the record is topologically
/// sorted by construction; backward walks it once, in reverse. One tape per
/// training step; it is not thread-safe and not meant to be shared.
class Tape {
 public:
  Tape() = default;
  ~Tape() { clear(); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// out = x * W + b, with x [B x n], W [n x m], b [m].
  Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b);
  Tensor relu(const Tensor& x);
  Tensor log_softmax(const Tensor& x);
  /// -(1/B) sum_i log_probs[i, labels[i]].
  Tensor cross_entropy_mean(const Tensor& log_probs, std::span<const int> labels);
  /// (1/R) sum_rows KL(ref || virt), natural log.
  Tensor kl_divergence_mean(const Tensor& ref_log_probs, const Tensor& virt_log_probs,
                            KlGradient mode = KlGradient::virtual_only);

  Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end);
  Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows);
  Tensor concat_rows(const Tensor& top, const Tensor& bottom);

  Tensor add(const Tensor& a, const Tensor& b);
  Tensor mul(const Tensor& a, const Tensor& b);
  Tensor scale(const Tensor& x, double factor);
  Tensor sum(const Tensor& x);

  /// Accumulates d(loss)/d(leaf) into every requires_grad leaf reachable from
  /// loss. Leaf gradients add up across calls until zero_grad().
  void backward(const Tensor& loss);

  std::size_t size() const { return nodes_.size(); }
  void clear();

 private:
  using ImplPtr = std::shared_ptr<Tensor::Impl>;

  struct Node {
    ImplPtr output;
    std::vector<std::size_t> parents;
    std::function<void(const Tensor::Impl& out)> propagate;
  };

  static std::span<double> grad_of(Tensor::Impl& impl);
  bool on_tape(const Tensor& t) const { return t.impl_->tape == this; }
  bool tracks(const Tensor& t) const { return t.requires_grad() || on_tape(t); }
  Tensor record(Tensor out, std::initializer_list<const Tensor*> inputs,
                std::function<void(const Tensor::Impl& out)> propagate);

  std::vector<Node> nodes_;
};

/// Tape-free forward versions of the same operations.
namespace ops {
Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b);
Tensor relu(const Tensor& x);
Tensor log_softmax(const Tensor& x);
Tensor softmax(const Tensor& x);
double cross_entropy_mean(const Tensor& log_probs, std::span<const int> labels);
double kl_divergence_mean(const Tensor& ref_log_probs, const Tensor& virt_log_probs);
Tensor concat_rows(const Tensor& top, const Tensor& bottom);
Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end);
}  // namespace ops

/// Builds a scalar loss on the given tape from the current parameter values.
using ScalarObjective = std::function<Tensor(Tape&)>;

/// Compares the tape gradient of `objective` w.r.t. every element of `params`
/// against central differences with the given step. Returns the largest
/// elementwise relative error |a-b| / max(|a|, |b|, 1e-8). Parameters are
/// perturbed in place and restored; their grads are overwritten.
double finite_difference_check(const ScalarObjective& objective,
                               std::span<const Tensor> params, double step);

/// Single-tensor form: f maps theta to a scalar on the tape.
double finite_difference_check(const std::function<Tensor(Tape&, const Tensor&)>& f,
                               Tensor theta, double step);

}  // namespace sba
