#include "sba/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "kernels.hpp"
#include "sba/error.hpp"

namespace sba {

namespace {

std::size_t element_count(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

void require_rank2(const Tensor& t, const char* op, const char* name) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(op) + ": " + name + " must be rank 2, got " +
                         shape_string(t.shape()));
  }
}

}  // namespace

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

// ---------------------------------------------------------------------------
// Tensor

Tensor::Tensor() : Tensor(Shape{0}) {}

Tensor::Tensor(Shape shape, bool requires_grad)
    : impl_(std::make_shared<Impl>()) {
  if (shape.empty() || shape.size() > 2) {
    throw DimensionError("tensor rank must be 1 or 2, got " + shape_string(shape));
  }
  impl_->data.assign(element_count(shape), 0.0);
  impl_->shape = std::move(shape);
  impl_->requires_grad = requires_grad;
}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad)
    : impl_(std::make_shared<Impl>()) {
  if (shape.empty() || shape.size() > 2) {
    throw DimensionError("tensor rank must be 1 or 2, got " + shape_string(shape));
  }
  if (element_count(shape) != values.size()) {
    throw DimensionError("shape " + shape_string(shape) + " needs " +
                         std::to_string(element_count(shape)) + " values, got " +
                         std::to_string(values.size()));
  }
  impl_->shape = std::move(shape);
  impl_->data = std::move(values);
  impl_->requires_grad = requires_grad;
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor(Shape{1}, {value}, requires_grad);
}

Tensor Tensor::vector(std::vector<double> values, bool requires_grad) {
  const std::size_t n = values.size();
  return Tensor(Shape{n}, std::move(values), requires_grad);
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows,
                      bool requires_grad) {
  const std::size_t r = rows.size();
  const std::size_t c = r ? rows.begin()->size() : 0;
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw DimensionError("ragged matrix literal");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor(Shape{r, c}, std::move(data), requires_grad);
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values,
                      bool requires_grad) {
  return Tensor(Shape{rows, cols}, std::move(values), requires_grad);
}

const Shape& Tensor::shape() const { return impl_->shape; }
std::size_t Tensor::size() const { return impl_->data.size(); }
std::size_t Tensor::rows() const { return rank() == 2 ? impl_->shape[0] : 1; }
std::size_t Tensor::cols() const { return impl_->shape.back(); }

std::span<const double> Tensor::values() const { return impl_->data; }
std::span<double> Tensor::mutable_values() { return impl_->data; }

std::span<const double> Tensor::row(std::size_t r) const {
  if (r >= rows()) throw DimensionError("row index out of range");
  return values().subspan(r * cols(), cols());
}

double Tensor::operator[](std::size_t i) const { return impl_->data.at(i); }

double Tensor::at(std::size_t r, std::size_t c) const {
  if (r >= rows() || c >= cols()) throw DimensionError("index out of range");
  return impl_->data[r * cols() + c];
}

double Tensor::item() const {
  if (size() != 1) {
    throw ContractError("item() needs a single element, got " + shape_string(shape()));
  }
  return impl_->data[0];
}

bool Tensor::requires_grad() const { return impl_->requires_grad; }
void Tensor::set_requires_grad(bool flag) { impl_->requires_grad = flag; }
bool Tensor::has_grad() const { return !impl_->grad.empty(); }
std::span<const double> Tensor::grad() const { return impl_->grad; }

std::span<double> Tensor::mutable_grad() {
  if (impl_->grad.size() != impl_->data.size()) impl_->grad.assign(impl_->data.size(), 0.0);
  return impl_->grad;
}

void Tensor::zero_grad() { impl_->grad.assign(impl_->data.size(), 0.0); }

Tensor Tensor::detach() const { return Tensor(impl_->shape, impl_->data, false); }

bool Tensor::all_finite() const {
  return std::all_of(impl_->data.begin(), impl_->data.end(),
                     [](double v) { return std::isfinite(v); });
}

// ---------------------------------------------------------------------------
// Tape

std::span<double> Tape::grad_of(Tensor::Impl& impl) {
  if (impl.grad.size() != impl.data.size()) impl.grad.assign(impl.data.size(), 0.0);
  return impl.grad;
}

Tensor Tape::record(Tensor out, std::initializer_list<const Tensor*> inputs,
                    std::function<void(const Tensor::Impl& out)> propagate) {
  bool any = false;
  Node node;
  for (const Tensor* in : inputs) {
    if (!tracks(*in)) continue;
    any = true;
    if (on_tape(*in)) node.parents.push_back(in->impl_->node);
  }
  if (!any) return out;
  out.impl_->tape = this;
  out.impl_->node = nodes_.size();
  out.impl_->requires_grad = true;
  node.output = out.impl_;
  node.propagate = std::move(propagate);
  nodes_.push_back(std::move(node));
  return out;
}

Tensor Tape::affine(const Tensor& x, const Tensor& w, const Tensor& b) {
  Tensor out = ops::affine(x, w, b);
  const std::size_t rows = x.rows(), n = x.cols(), m = w.cols();
  ImplPtr xi = x.impl_, wi = w.impl_, bi = b.impl_;
  const bool gx = tracks(x), gw = tracks(w), gb = tracks(b);
  return record(out, {&x, &w, &b}, [=](const Tensor::Impl& o) {
    if (gx) kernels::affine_grad_input(o.grad, rows, m, wi->data, n, grad_of(*xi));
    if (gw) kernels::affine_grad_weight(xi->data, rows, n, o.grad, m, grad_of(*wi));
    if (gb) kernels::affine_grad_bias(o.grad, rows, m, grad_of(*bi));
  });
}

Tensor Tape::relu(const Tensor& x) {
  Tensor out = ops::relu(x);
  ImplPtr xi = x.impl_;
  return record(out, {&x}, [=](const Tensor::Impl& o) {
    auto dx = grad_of(*xi);
    for (std::size_t i = 0; i < dx.size(); ++i)
      if (xi->data[i] > 0.0) dx[i] += o.grad[i];
  });
}

Tensor Tape::log_softmax(const Tensor& x) {
  Tensor out = ops::log_softmax(x);
  const std::size_t rows = x.rows(), k = x.cols();
  ImplPtr xi = x.impl_;
  return record(out, {&x}, [=](const Tensor::Impl& o) {
    auto dx = grad_of(*xi);
    for (std::size_t i = 0; i < rows; ++i) {
      const double* g = o.grad.data() + i * k;
      const double* lp = o.data.data() + i * k;
      double total = 0.0;
      for (std::size_t c = 0; c < k; ++c) total += g[c];
      for (std::size_t c = 0; c < k; ++c) dx[i * k + c] += g[c] - std::exp(lp[c]) * total;
    }
  });
}

Tensor Tape::cross_entropy_mean(const Tensor& log_probs, std::span<const int> labels) {
  const double value = ops::cross_entropy_mean(log_probs, labels);
  const std::size_t rows = log_probs.rows(), k = log_probs.cols();
  ImplPtr li = log_probs.impl_;
  std::vector<int> y(labels.begin(), labels.end());
  return record(Tensor::scalar(value), {&log_probs}, [=](const Tensor::Impl& o) {
    auto dl = grad_of(*li);
    const double g = o.grad[0] / static_cast<double>(rows);
    for (std::size_t i = 0; i < rows; ++i) dl[i * k + static_cast<std::size_t>(y[i])] -= g;
  });
}

Tensor Tape::kl_divergence_mean(const Tensor& ref_log_probs, const Tensor& virt_log_probs,
                                KlGradient mode) {
  const double value = ops::kl_divergence_mean(ref_log_probs, virt_log_probs);
  const std::size_t rows = ref_log_probs.rows(), k = ref_log_probs.cols();
  ImplPtr ri = ref_log_probs.impl_, vi = virt_log_probs.impl_;
  const bool gv = tracks(virt_log_probs);
  const bool gr = mode == KlGradient::both && tracks(ref_log_probs);
  Tensor out = Tensor::scalar(value);
  if (!gv && !gr) return out;
  auto propagate = [=](const Tensor::Impl& o) {
    const double g = o.grad[0] / static_cast<double>(rows);
    std::span<double> dv, dr;
    if (gv) dv = grad_of(*vi);
    if (gr) dr = grad_of(*ri);
    for (std::size_t i = 0; i < rows * k; ++i) {
      const double p = std::exp(ri->data[i]);
      if (gv) dv[i] -= p * g;
      if (gr) dr[i] += p * (ri->data[i] - vi->data[i] + 1.0) * g;
    }
  };
  if (gr) return record(out, {&ref_log_probs, &virt_log_probs}, propagate);
  // Reference is a constant here: it must not become a parent.
  return record(out, {&virt_log_probs}, propagate);
}

Tensor Tape::slice_rows(const Tensor& x, std::size_t begin, std::size_t end) {
  Tensor out = ops::slice_rows(x, begin, end);
  const std::size_t k = x.cols();
  ImplPtr xi = x.impl_;
  return record(out, {&x}, [=](const Tensor::Impl& o) {
    auto dx = grad_of(*xi);
    for (std::size_t i = 0; i < o.grad.size(); ++i) dx[begin * k + i] += o.grad[i];
  });
}

Tensor Tape::gather_rows(const Tensor& x, std::span<const std::size_t> rows) {
  require_rank2(x, "gather_rows", "x");
  const std::size_t k = x.cols();
  std::vector<double> data;
  data.reserve(rows.size() * k);
  for (std::size_t r : rows) {
    if (r >= x.rows()) throw DimensionError("gather_rows: row index out of range");
    const auto src = x.row(r);
    data.insert(data.end(), src.begin(), src.end());
  }
  Tensor out(Shape{rows.size(), k}, std::move(data));
  ImplPtr xi = x.impl_;
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return record(out, {&x}, [=](const Tensor::Impl& o) {
    auto dx = grad_of(*xi);
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t c = 0; c < k; ++c) dx[idx[i] * k + c] += o.grad[i * k + c];
  });
}

Tensor Tape::concat_rows(const Tensor& top, const Tensor& bottom) {
  Tensor out = ops::concat_rows(top, bottom);
  const std::size_t split = top.size();
  ImplPtr ti = top.impl_, bi = bottom.impl_;
  const bool gt = tracks(top), gb = tracks(bottom);
  return record(out, {&top, &bottom}, [=](const Tensor::Impl& o) {
    if (gt) {
      auto d = grad_of(*ti);
      for (std::size_t i = 0; i < split; ++i) d[i] += o.grad[i];
    }
    if (gb) {
      auto d = grad_of(*bi);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += o.grad[split + i];
    }
  });
}

Tensor Tape::add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("add: shapes " + shape_string(a.shape()) + " and " +
                         shape_string(b.shape()) + " differ");
  }
  std::vector<double> data(a.size());
  for (std::size_t i = 0; i < data.size(); ++i) data[i] = a[i] + b[i];
  ImplPtr ai = a.impl_, bi = b.impl_;
  const bool ga = tracks(a), gb = tracks(b);
  return record(Tensor(a.shape(), std::move(data)), {&a, &b}, [=](const Tensor::Impl& o) {
    if (ga) {
      auto d = grad_of(*ai);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += o.grad[i];
    }
    if (gb) {
      auto d = grad_of(*bi);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += o.grad[i];
    }
  });
}

Tensor Tape::mul(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("mul: shapes " + shape_string(a.shape()) + " and " +
                         shape_string(b.shape()) + " differ");
  }
  std::vector<double> data(a.size());
  for (std::size_t i = 0; i < data.size(); ++i) data[i] = a[i] * b[i];
  ImplPtr ai = a.impl_, bi = b.impl_;
  const bool ga = tracks(a), gb = tracks(b);
  return record(Tensor(a.shape(), std::move(data)), {&a, &b}, [=](const Tensor::Impl& o) {
    if (ga) {
      auto d = grad_of(*ai);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += o.grad[i] * bi->data[i];
    }
    if (gb) {
      auto d = grad_of(*bi);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += o.grad[i] * ai->data[i];
    }
  });
}

Tensor Tape::scale(const Tensor& x, double factor) {
  std::vector<double> data(x.size());
  for (std::size_t i = 0; i < data.size(); ++i) data[i] = x[i] * factor;
  ImplPtr xi = x.impl_;
  return record(Tensor(x.shape(), std::move(data)), {&x}, [=](const Tensor::Impl& o) {
    auto d = grad_of(*xi);
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += o.grad[i] * factor;
  });
}

Tensor Tape::sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.values()) total += v;
  ImplPtr xi = x.impl_;
  return record(Tensor::scalar(total), {&x}, [=](const Tensor::Impl& o) {
    auto d = grad_of(*xi);
    for (double& v : d) v += o.grad[0];
  });
}

void Tape::backward(const Tensor& loss) {
  if (loss.size() != 1) {
    throw ContractError("backward needs a scalar loss, got shape " +
                        shape_string(loss.shape()));
  }
  if (!on_tape(loss)) {
    if (loss.requires_grad()) {
      grad_of(*loss.impl_)[0] += 1.0;
      return;
    }
    throw ContractError("backward: loss was not produced on this tape");
  }
  const std::size_t last = loss.impl_->node;
  for (std::size_t i = 0; i <= last; ++i) {
    auto& out = *nodes_[i].output;
    out.grad.assign(out.data.size(), 0.0);
  }
  std::vector<char> reached(last + 1, 0);
  reached[last] = 1;
  loss.impl_->grad[0] = 1.0;
  for (std::size_t i = last + 1; i-- > 0;) {
    if (!reached[i]) continue;
    const Node& node = nodes_[i];
    node.propagate(*node.output);
    for (std::size_t p : node.parents) reached[p] = 1;
  }
}

void Tape::clear() {
  for (auto& node : nodes_) node.output->tape = nullptr;
  nodes_.clear();
}

// ---------------------------------------------------------------------------
// ops

namespace ops {

Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b) {
  require_rank2(x, "affine", "x");
  require_rank2(w, "affine", "W");
  if (x.cols() != w.rows() || b.rank() != 1 || b.size() != w.cols()) {
    throw DimensionError("affine: x " + shape_string(x.shape()) + ", W " +
                         shape_string(w.shape()) + ", b " + shape_string(b.shape()) +
                         " do not conform");
  }
  Tensor out(Shape{x.rows(), w.cols()});
  kernels::affine_forward(x.values(), x.rows(), x.cols(), w.values(), w.cols(), b.values(),
                          out.mutable_values());
  return out;
}

Tensor relu(const Tensor& x) {
  Tensor out(x.shape());
  auto o = out.mutable_values();
  const auto v = x.values();
  for (std::size_t i = 0; i < v.size(); ++i) o[i] = v[i] > 0.0 ? v[i] : 0.0;
  return out;
}

Tensor log_softmax(const Tensor& x) {
  require_rank2(x, "log_softmax", "x");
  if (x.cols() < 2) throw DimensionError("log_softmax: needs at least 2 classes");
  Tensor out(x.shape());
  kernels::log_softmax_rows(x.values(), x.rows(), x.cols(), out.mutable_values());
  return out;
}

Tensor softmax(const Tensor& x) {
  Tensor out = log_softmax(x);
  for (double& v : out.mutable_values()) v = std::exp(v);
  return out;
}

double cross_entropy_mean(const Tensor& log_probs, std::span<const int> labels) {
  require_rank2(log_probs, "cross_entropy_mean", "log_probs");
  if (labels.size() != log_probs.rows()) {
    throw DimensionError("cross_entropy_mean: " + std::to_string(labels.size()) +
                         " labels for " + shape_string(log_probs.shape()));
  }
  const std::size_t k = log_probs.cols();
  double total = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= k) {
      throw DomainError("cross_entropy_mean: label " + std::to_string(labels[i]) +
                        " outside [0, " + std::to_string(k) + ")");
    }
    total += log_probs.at(i, static_cast<std::size_t>(labels[i]));
  }
  return -total / static_cast<double>(labels.size());
}

double kl_divergence_mean(const Tensor& ref_log_probs, const Tensor& virt_log_probs) {
  require_rank2(ref_log_probs, "kl_divergence_mean", "reference");
  if (ref_log_probs.shape() != virt_log_probs.shape()) {
    throw DimensionError("kl_divergence_mean: reference " +
                         shape_string(ref_log_probs.shape()) + " vs virtual " +
                         shape_string(virt_log_probs.shape()));
  }
  const auto r = ref_log_probs.values();
  const auto v = virt_log_probs.values();
  double total = 0.0;
  for (std::size_t i = 0; i < r.size(); ++i) total += std::exp(r[i]) * (r[i] - v[i]);
  return total / static_cast<double>(ref_log_probs.rows());
}

Tensor concat_rows(const Tensor& top, const Tensor& bottom) {
  require_rank2(top, "concat_rows", "top");
  require_rank2(bottom, "concat_rows", "bottom");
  if (top.cols() != bottom.cols()) {
    throw DimensionError("concat_rows: " + shape_string(top.shape()) + " and " +
                         shape_string(bottom.shape()) + " differ in width");
  }
  std::vector<double> data;
  data.reserve(top.size() + bottom.size());
  data.insert(data.end(), top.values().begin(), top.values().end());
  data.insert(data.end(), bottom.values().begin(), bottom.values().end());
  return Tensor(Shape{top.rows() + bottom.rows(), top.cols()}, std::move(data));
}

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end) {
  require_rank2(x, "slice_rows", "x");
  if (begin > end || end > x.rows()) {
    throw DimensionError("slice_rows: [" + std::to_string(begin) + ", " +
                         std::to_string(end) + ") outside " + shape_string(x.shape()));
  }
  const std::size_t k = x.cols();
  const auto v = x.values();
  return Tensor(Shape{end - begin, k},
                std::vector<double>(v.begin() + static_cast<std::ptrdiff_t>(begin * k),
                                    v.begin() + static_cast<std::ptrdiff_t>(end * k)));
}

}  // namespace ops

// ---------------------------------------------------------------------------
// Finite differences

double finite_difference_check(const ScalarObjective& objective,
                               std::span<const Tensor> params, double step) {
  if (!(step > 0.0)) throw ContractError("finite_difference_check: step must be > 0");
  std::vector<Tensor> ps(params.begin(), params.end());
  std::vector<bool> had_flag;
  for (auto& p : ps) {
    had_flag.push_back(p.requires_grad());
    p.set_requires_grad(true);
    p.zero_grad();
  }
  {
    Tape tape;
    tape.backward(objective(tape));
  }
  double worst = 0.0;
  for (auto& p : ps) {
    const std::vector<double> analytic(p.grad().begin(), p.grad().end());
    auto v = p.mutable_values();
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double original = v[i];
      v[i] = original + step;
      double plus, minus;
      {
        Tape tape;
        plus = objective(tape).item();
      }
      v[i] = original - step;
      {
        Tape tape;
        minus = objective(tape).item();
      }
      v[i] = original;
      const double numeric = (plus - minus) / (2.0 * step);
      const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-8});
      worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
    }
  }
  for (std::size_t i = 0; i < ps.size(); ++i) ps[i].set_requires_grad(had_flag[i]);
  return worst;
}

double finite_difference_check(const std::function<Tensor(Tape&, const Tensor&)>& f,
                               Tensor theta, double step) {
  const Tensor params[] = {theta};
  return finite_difference_check([&](Tape& tape) { return f(tape, theta); }, params, step);
}

}  // namespace sba
