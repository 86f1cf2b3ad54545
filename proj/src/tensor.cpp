#include "clst/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

namespace clst {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

ShapeError::ShapeError(const std::string& op, const Shape& a, const Shape& b)
    : std::invalid_argument(op + ": shape mismatch " + shape_str(a) + " vs " +
                            shape_str(b)) {}

ShapeError::ShapeError(const std::string& op, const std::string& what)
    : std::invalid_argument(op + ": " + what) {}

Tensor::Tensor() : node_(std::make_shared<detail::Node>()) {
  node_->values.assign(1, 0.0);
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  auto node = std::make_shared<detail::Node>();
  node->values.assign(shape_numel(shape), value);
  node->shape = std::move(shape);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::from(Shape shape, std::vector<double> values,
                    bool requires_grad) {
  if (values.size() != shape_numel(shape)) {
    throw ShapeError("from", "shape " + shape_str(shape) + " needs " +
                                 std::to_string(shape_numel(shape)) +
                                 " values, got " +
                                 std::to_string(values.size()));
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->values = std::move(values);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from({}, {value}, requires_grad);
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= rank()) {
    throw ShapeError("dim", "axis " + std::to_string(axis) +
                                " out of range for " + shape_str(shape()));
  }
  return node_->shape[axis];
}

double Tensor::item() const {
  if (numel() != 1) {
    throw ShapeError("item", "tensor of shape " + shape_str(shape()) +
                                 " is not a scalar");
  }
  return node_->values[0];
}

void Tensor::set_requires_grad(bool on) { node_->requires_grad = on; }

std::span<double> Tensor::mutable_grad() {
  node_->ensure_grad();
  return node_->grad;
}

Tensor Tensor::detach() const {
  return from(node_->shape, node_->values, false);
}

Tensor Tensor::make_result(Shape shape, std::vector<double> values,
                           std::vector<Tensor> inputs,
                           std::function<void(detail::Node&)> backward_fn) {
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->values = std::move(values);
  bool any = false;
  for (const auto& t : inputs) any = any || t.requires_grad();
  if (any) {
    node->requires_grad = true;
    node->parents.reserve(inputs.size());
    for (auto& t : inputs) node->parents.push_back(t.node_);
    node->backward_fn = std::move(backward_fn);
  }
  return Tensor(std::move(node));
}

void Tensor::backward() {
  if (numel() != 1) {
    throw ShapeError("backward", "loss must be a scalar, got shape " +
                                     shape_str(shape()));
  }
  if (!node_->requires_grad) return;

  // Post-order DFS gives a topological order with the root last.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      detail::Node* p = n->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  node_->ensure_grad();
  node_->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = *it;
    if (!n->backward_fn) continue;
    for (auto& p : n->parents) {
      if (p->requires_grad) p->ensure_grad();
    }
    n->backward_fn(*n);
  }
  for (detail::Node* n : order) {
    if (!n->backward_fn) continue;
    n->backward_fn = nullptr;
    n->parents.clear();
    if (n != node_.get()) n->grad.clear();
  }
}

namespace {

using RowMatrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMatrix>;
using ConstMatMap = Eigen::Map<const RowMatrix>;

// Eigen picks reduction and GEMM kernels by pointer alignment, and vector
// storage alignment varies between allocations. Products and sums run on
// owned (always aligned) copies so results are bitwise reproducible.
RowMatrix owned(const double* p, Eigen::Index rows, Eigen::Index cols) {
  return ConstMatMap(p, rows, cols);
}

void require_same(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw ShapeError(op, a.shape(), b.shape());
}

// Shared helper for unary elementwise ops: dy/dx given x and y.
template <typename Fwd, typename Deriv>
Tensor unary(const Tensor& a, Fwd fwd, Deriv deriv) {
  const auto x = a.values();
  std::vector<double> y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = fwd(x[i]);
  return Tensor::make_result(a.shape(), std::move(y), {a},
                             [deriv](detail::Node& self) {
                               auto& p = *self.parents[0];
                               for (std::size_t i = 0; i < p.values.size(); ++i)
                                 p.grad[i] += self.grad[i] *
                                              deriv(p.values[i], self.values[i]);
                             });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same("add", a, b);
  std::vector<double> y(a.numel());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a[i] + b[i];
  return Tensor::make_result(a.shape(), std::move(y), {a, b},
                             [](detail::Node& self) {
                               for (auto& p : self.parents) {
                                 if (!p->requires_grad) continue;
                                 for (std::size_t i = 0; i < self.grad.size(); ++i)
                                   p->grad[i] += self.grad[i];
                               }
                             });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same("sub", a, b);
  std::vector<double> y(a.numel());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a[i] - b[i];
  return Tensor::make_result(
      a.shape(), std::move(y), {a, b}, [](detail::Node& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        if (pa.requires_grad)
          for (std::size_t i = 0; i < self.grad.size(); ++i)
            pa.grad[i] += self.grad[i];
        if (pb.requires_grad)
          for (std::size_t i = 0; i < self.grad.size(); ++i)
            pb.grad[i] -= self.grad[i];
      });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same("mul", a, b);
  std::vector<double> y(a.numel());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a[i] * b[i];
  return Tensor::make_result(
      a.shape(), std::move(y), {a, b}, [](detail::Node& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        if (pa.requires_grad)
          for (std::size_t i = 0; i < self.grad.size(); ++i)
            pa.grad[i] += self.grad[i] * pb.values[i];
        if (pb.requires_grad)
          for (std::size_t i = 0; i < self.grad.size(); ++i)
            pb.grad[i] += self.grad[i] * pa.values[i];
      });
}

Tensor scale(const Tensor& a, double s) {
  return unary(
      a, [s](double x) { return s * x; },
      [s](double, double) { return s; });
}

Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
Tensor operator*(double s, const Tensor& a) { return scale(a, s); }

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw ShapeError("matmul", a.shape(), b.shape());
  const auto m = static_cast<Eigen::Index>(a.dim(0));
  const auto k = static_cast<Eigen::Index>(a.dim(1));
  const auto n = static_cast<Eigen::Index>(b.dim(1));
  std::vector<double> y(a.dim(0) * b.dim(1));
  MatMap(y.data(), m, n) =
      owned(a.values().data(), m, k) * owned(b.values().data(), k, n);
  return Tensor::make_result(
      {a.dim(0), b.dim(1)}, std::move(y), {a, b}, [m, k, n](detail::Node& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        const RowMatrix g = owned(self.grad.data(), m, n);
        if (pa.requires_grad) {
          const RowMatrix d = g * owned(pb.values.data(), k, n).transpose();
          MatMap(pa.grad.data(), m, k) += d;
        }
        if (pb.requires_grad) {
          const RowMatrix d = owned(pa.values.data(), m, k).transpose() * g;
          MatMap(pb.grad.data(), k, n) += d;
        }
      });
}

Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) throw ShapeError("transpose", "expected rank 2, got " +
                                                       shape_str(a.shape()));
  const std::size_t m = a.dim(0), n = a.dim(1);
  std::vector<double> y(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) y[j * m + i] = a[i * n + j];
  return Tensor::make_result({n, m}, std::move(y), {a},
                             [m, n](detail::Node& self) {
                               auto& p = *self.parents[0];
                               for (std::size_t i = 0; i < m; ++i)
                                 for (std::size_t j = 0; j < n; ++j)
                                   p.grad[i * n + j] += self.grad[j * m + i];
                             });
}

namespace {

struct ConvGeom {
  std::size_t H, W, ci, co, k;
  std::size_t pixels() const { return H * W; }
  std::size_t patch() const { return k * k * ci; }
};

// [H*W, k*k*Ci] patch matrix; out-of-bounds taps stay zero.
std::vector<double> im2col(const ConvGeom& g, const double* in) {
  std::vector<double> cols(g.pixels() * g.patch(), 0.0);
  const long r = static_cast<long>(g.k / 2);
  const long H = static_cast<long>(g.H), W = static_cast<long>(g.W);
  for (long y = 0; y < H; ++y)
    for (long x = 0; x < W; ++x) {
      double* row = cols.data() + (y * W + x) * g.patch();
      for (long dy = 0; dy < static_cast<long>(g.k); ++dy) {
        const long yy = y + dy - r;
        if (yy < 0 || yy >= H) continue;
        for (long dx = 0; dx < static_cast<long>(g.k); ++dx) {
          const long xx = x + dx - r;
          if (xx < 0 || xx >= W) continue;
          const double* px = in + (yy * W + xx) * g.ci;
          std::copy(px, px + g.ci, row + (dy * g.k + dx) * g.ci);
        }
      }
    }
  return cols;
}

void col2im_add(const ConvGeom& g, const double* cols, double* grad_in) {
  const long r = static_cast<long>(g.k / 2);
  const long H = static_cast<long>(g.H), W = static_cast<long>(g.W);
  for (long y = 0; y < H; ++y)
    for (long x = 0; x < W; ++x) {
      const double* row = cols + (y * W + x) * g.patch();
      for (long dy = 0; dy < static_cast<long>(g.k); ++dy) {
        const long yy = y + dy - r;
        if (yy < 0 || yy >= H) continue;
        for (long dx = 0; dx < static_cast<long>(g.k); ++dx) {
          const long xx = x + dx - r;
          if (xx < 0 || xx >= W) continue;
          double* gi = grad_in + (yy * W + xx) * g.ci;
          const double* src = row + (dy * g.k + dx) * g.ci;
          for (std::size_t c = 0; c < g.ci; ++c) gi[c] += src[c];
        }
      }
    }
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias) {
  if (input.rank() != 3) {
    throw ShapeError("conv2d", "input must be [H,W,C], got " +
                                   shape_str(input.shape()));
  }
  if (weight.rank() != 4 || weight.dim(0) != weight.dim(1) ||
      weight.dim(0) % 2 == 0 || weight.dim(2) != input.dim(2)) {
    throw ShapeError("conv2d", input.shape(), weight.shape());
  }
  if (bias.rank() != 1 || bias.dim(0) != weight.dim(3)) {
    throw ShapeError("conv2d", weight.shape(), bias.shape());
  }
  const ConvGeom g{input.dim(0), input.dim(1), input.dim(2), weight.dim(3),
                   weight.dim(0)};
  const auto P = static_cast<Eigen::Index>(g.pixels());
  const auto K = static_cast<Eigen::Index>(g.patch());
  const auto N = static_cast<Eigen::Index>(g.co);

  // A 1x1 kernel reads the input directly as its patch matrix.
  auto cols = std::make_shared<std::vector<double>>(
      g.k == 1 ? std::vector<double>(input.values().begin(), input.values().end())
               : im2col(g, input.values().data()));

  std::vector<double> out(g.pixels() * g.co);
  RowMatrix out_m = owned(cols->data(), P, K) * owned(weight.values().data(), K, N);
  out_m.rowwise() +=
      Eigen::Map<const Eigen::RowVectorXd>(bias.values().data(), N);
  MatMap(out.data(), P, N) = out_m;

  return Tensor::make_result(
      {g.H, g.W, g.co}, std::move(out), {input, weight, bias},
      [g, P, K, N, cols](detail::Node& self) {
        auto& pin = *self.parents[0];
        auto& pw = *self.parents[1];
        auto& pb = *self.parents[2];
        const RowMatrix grad_out = owned(self.grad.data(), P, N);
        if (pb.requires_grad) {
          const Eigen::RowVectorXd d = grad_out.colwise().sum();
          Eigen::Map<Eigen::RowVectorXd>(pb.grad.data(), N) += d;
        }
        if (pw.requires_grad) {
          const RowMatrix d = owned(cols->data(), P, K).transpose() * grad_out;
          MatMap(pw.grad.data(), K, N) += d;
        }
        if (pin.requires_grad) {
          const RowMatrix grad_cols = grad_out * owned(pw.values.data(), K, N).transpose();
          if (g.k == 1) MatMap(pin.grad.data(), P, K) += grad_cols;
          else col2im_add(g, grad_cols.data(), pin.grad.data());
        }
      });
}

Tensor relu(const Tensor& a) {
  return unary(
      a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor exp(const Tensor& a) {
  return unary(
      a, [](double x) { return std::exp(x); },
      [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
  return unary(
      a, [](double x) { return std::log(std::max(x, kLogFloor)); },
      [](double x, double) { return x > kLogFloor ? 1.0 / x : 0.0; });
}

Tensor softmax(const Tensor& a) {
  if (a.rank() == 0) throw ShapeError("softmax", "needs at least one axis");
  const std::size_t c = a.shape().back();
  const std::size_t rows = a.numel() / c;
  std::vector<double> y(a.numel());
  const auto x = a.values();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.data() + r * c;
    double* yr = y.data() + r * c;
    const double mx = *std::max_element(xr, xr + c);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      yr[j] = std::exp(xr[j] - mx);
      z += yr[j];
    }
    for (std::size_t j = 0; j < c; ++j) yr[j] /= z;
  }
  return Tensor::make_result(a.shape(), std::move(y), {a},
                             [rows, c](detail::Node& self) {
                               auto& p = *self.parents[0];
                               for (std::size_t r = 0; r < rows; ++r) {
                                 const double* yr = self.values.data() + r * c;
                                 const double* gr = self.grad.data() + r * c;
                                 double s = 0.0;
                                 for (std::size_t j = 0; j < c; ++j)
                                   s += yr[j] * gr[j];
                                 double* pr = p.grad.data() + r * c;
                                 for (std::size_t j = 0; j < c; ++j)
                                   pr[j] += yr[j] * (gr[j] - s);
                               }
                             });
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.values()) s += v;
  return Tensor::make_result({}, {s}, {a}, [](detail::Node& self) {
    auto& p = *self.parents[0];
    const double g = self.grad[0];
    for (auto& v : p.grad) v += g;
  });
}

Tensor mean(const Tensor& a) {
  if (a.numel() == 0) throw ShapeError("mean", "empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.numel()));
}

Tensor sum(const Tensor& a, std::size_t axis) {
  if (axis >= a.rank()) {
    throw ShapeError("sum", "axis " + std::to_string(axis) +
                                " out of range for " + shape_str(a.shape()));
  }
  const auto& s = a.shape();
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t n = s[axis];
  Shape out_shape;
  for (std::size_t i = 0; i < s.size(); ++i)
    if (i != axis) out_shape.push_back(s[i]);
  std::vector<double> y(outer * inner, 0.0);
  const auto x = a.values();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t i = 0; i < inner; ++i)
        y[o * inner + i] += x[(o * n + j) * inner + i];
  return Tensor::make_result(
      std::move(out_shape), std::move(y), {a},
      [outer, inner, n](detail::Node& self) {
        auto& p = *self.parents[0];
        for (std::size_t o = 0; o < outer; ++o)
          for (std::size_t j = 0; j < n; ++j)
            for (std::size_t i = 0; i < inner; ++i)
              p.grad[(o * n + j) * inner + i] += self.grad[o * inner + i];
      });
}

Tensor mean(const Tensor& a, std::size_t axis) {
  const std::size_t n = a.dim(axis);
  if (n == 0) throw ShapeError("mean", "empty axis");
  return scale(sum(a, axis), 1.0 / static_cast<double>(n));
}

Tensor l2_norm(const Tensor& a) {
  if (a.rank() == 0) throw ShapeError("l2_norm", "needs at least one axis");
  const std::size_t k = a.shape().back();
  const std::size_t rows = a.numel() / k;
  Shape out_shape(a.shape().begin(), a.shape().end() - 1);
  std::vector<double> y(rows);
  const auto x = a.values();
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < k; ++j) s += x[r * k + j] * x[r * k + j];
    y[r] = std::sqrt(s);
  }
  return Tensor::make_result(std::move(out_shape), std::move(y), {a},
                             [rows, k](detail::Node& self) {
                               auto& p = *self.parents[0];
                               for (std::size_t r = 0; r < rows; ++r) {
                                 const double n = self.values[r];
                                 if (n == 0.0) continue;
                                 const double g = self.grad[r] / n;
                                 for (std::size_t j = 0; j < k; ++j)
                                   p.grad[r * k + j] += g * p.values[r * k + j];
                               }
                             });
}

Tensor divide_rows(const Tensor& a, const Tensor& denom) {
  if (a.rank() == 0 ||
      Shape(a.shape().begin(), a.shape().end() - 1) != denom.shape()) {
    throw ShapeError("divide_rows", a.shape(), denom.shape());
  }
  const std::size_t k = a.shape().back();
  const std::size_t rows = denom.numel();
  std::vector<double> y(a.numel());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < k; ++j) y[r * k + j] = a[r * k + j] / denom[r];
  return Tensor::make_result(
      a.shape(), std::move(y), {a, denom}, [rows, k](detail::Node& self) {
        auto& pa = *self.parents[0];
        auto& pd = *self.parents[1];
        for (std::size_t r = 0; r < rows; ++r) {
          const double d = pd.values[r];
          double acc = 0.0;
          for (std::size_t j = 0; j < k; ++j) {
            const double g = self.grad[r * k + j];
            if (pa.requires_grad) pa.grad[r * k + j] += g / d;
            acc += g * pa.values[r * k + j];
          }
          if (pd.requires_grad) pd.grad[r] -= acc / (d * d);
        }
      });
}

Tensor l2_normalize(const Tensor& a) {
  Tensor n = l2_norm(a);
  for (double v : n.values()) {
    if (!(v > 0.0)) {
      throw std::domain_error(
          "l2_normalize: zero-norm vector (degenerate projection)");
    }
  }
  return divide_rows(a, n);
}

Tensor dot(const Tensor& a, const Tensor& b) { return sum(mul(a, b)); }

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) throw ShapeError("reshape", a.shape(), shape);
  std::vector<double> y(a.values().begin(), a.values().end());
  return Tensor::make_result(std::move(shape), std::move(y), {a},
                             [](detail::Node& self) {
                               auto& p = *self.parents[0];
                               for (std::size_t i = 0; i < self.grad.size(); ++i)
                                 p.grad[i] += self.grad[i];
                             });
}

double finite_diff_check(const std::function<Tensor(const Tensor&)>& f,
                         Tensor x, double step) {
  if (!(step > 0.0)) throw std::invalid_argument("finite_diff_check: step must be > 0");
  const bool had = x.requires_grad();
  x.set_requires_grad(true);
  x.zero_grad();
  Tensor loss = f(x);
  if (!std::isfinite(loss.item()))
    throw std::runtime_error("finite_diff_check: non-finite loss");
  loss.backward();
  std::vector<double> analytic(x.numel(), 0.0);
  if (x.has_grad()) std::copy(x.grad().begin(), x.grad().end(), analytic.begin());

  auto vals = x.mutable_values();
  double worst = 0.0;
  for (std::size_t i = 0; i < vals.size(); ++i) {
    const double orig = vals[i];
    vals[i] = orig + step;
    const double fp = f(x).item();
    vals[i] = orig - step;
    const double fm = f(x).item();
    vals[i] = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm))
      throw std::runtime_error("finite_diff_check: non-finite intermediate");
    const double numeric = (fp - fm) / (2.0 * step);
    const double err =
        std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(analytic[i]));
    worst = std::max(worst, err);
  }
  x.zero_grad();
  x.set_requires_grad(had);
  return worst;
}

}  // namespace clst
