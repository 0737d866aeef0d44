#include "hitdvae/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>
#include <utility>

namespace hitdvae {

namespace {

thread_local bool t_grad_enabled = true;

using Grads = std::span<std::vector<double>*>;

Tensor make_result(Shape shape, std::vector<double> data, std::vector<const Tensor*> inputs,
                   BackwardFn fn) {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  bool needs = false;
  if (t_grad_enabled) {
    for (const Tensor* t : inputs) needs = needs || t->requires_grad();
  }
  if (needs) {
    impl->requires_grad = true;
    auto node = std::make_shared<Node>();
    node->inputs.reserve(inputs.size());
    for (const Tensor* t : inputs) node->inputs.push_back(t->impl());
    node->backward = std::move(fn);
    impl->node = std::move(node);
  }
  return Tensor(std::move(impl));
}

const std::vector<double>& input_data(const TensorImpl& out, std::size_t i) {
  return out.node->inputs[i]->data;
}

void require_defined(const Tensor& t, const char* op) {
  if (!t.defined()) throw std::invalid_argument(std::string(op) + ": undefined tensor");
}

// Offsets of each output element into a and b under numpy broadcasting.
struct BroadcastPlan {
  Shape out;
  std::vector<std::size_t> a_off;
  std::vector<std::size_t> b_off;
};

BroadcastPlan plan_broadcast(const Shape& a, const Shape& b, const char* op) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape ap(rank, 1), bp(rank, 1), out(rank, 1);
  std::copy(a.begin(), a.end(), ap.begin() + static_cast<std::ptrdiff_t>(rank - a.size()));
  std::copy(b.begin(), b.end(), bp.begin() + static_cast<std::ptrdiff_t>(rank - b.size()));
  for (std::size_t d = 0; d < rank; ++d) {
    if (ap[d] != bp[d] && ap[d] != 1 && bp[d] != 1) {
      throw ShapeError(std::string(op) + ": cannot broadcast " + shape_str(a) + " with " +
                       shape_str(b));
    }
    out[d] = std::max(ap[d], bp[d]);
  }
  auto strides = [rank](const Shape& s) {
    std::vector<std::size_t> st(rank, 0);
    std::size_t acc = 1;
    for (std::size_t d = rank; d-- > 0;) {
      st[d] = s[d] == 1 ? 0 : acc;
      acc *= s[d];
    }
    return st;
  };
  const auto as = strides(ap);
  const auto bs = strides(bp);
  const std::size_t n = shape_numel(out);
  BroadcastPlan plan{out, std::vector<std::size_t>(n), std::vector<std::size_t>(n)};
  std::vector<std::size_t> idx(rank, 0);
  std::size_t ao = 0, bo = 0;
  for (std::size_t i = 0; i < n; ++i) {
    plan.a_off[i] = ao;
    plan.b_off[i] = bo;
    for (std::size_t d = rank; d-- > 0;) {
      ++idx[d];
      ao += as[d];
      bo += bs[d];
      if (idx[d] < out[d]) break;
      ao -= as[d] * idx[d];
      bo -= bs[d] * idx[d];
      idx[d] = 0;
    }
  }
  return plan;
}

// f(x, y) -> value; dfa(x, y, g) and dfb(x, y, g) -> input gradient contributions.
template <class F, class DA, class DB>
Tensor binary_op(const Tensor& a, const Tensor& b, const char* name, F f, DA dfa, DB dfb) {
  require_defined(a, name);
  require_defined(b, name);
  const auto& av = a.values();
  const auto& bv = b.values();
  if (a.shape() == b.shape()) {
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(av[i], bv[i]);
    return make_result(a.shape(), std::move(out), {&a, &b},
                       [dfa, dfb](const TensorImpl& o, std::span<const double> g, Grads gin) {
                         const auto& x = input_data(o, 0);
                         const auto& y = input_data(o, 1);
                         if (gin[0]) {
                           auto& ga = *gin[0];
                           for (std::size_t i = 0; i < g.size(); ++i) ga[i] += dfa(x[i], y[i], g[i]);
                         }
                         if (gin[1]) {
                           auto& gb = *gin[1];
                           for (std::size_t i = 0; i < g.size(); ++i) gb[i] += dfb(x[i], y[i], g[i]);
                         }
                       });
  }
  auto plan = std::make_shared<BroadcastPlan>(plan_broadcast(a.shape(), b.shape(), name));
  std::vector<double> out(plan->a_off.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(av[plan->a_off[i]], bv[plan->b_off[i]]);
  Shape shape = plan->out;
  return make_result(std::move(shape), std::move(out), {&a, &b},
                     [plan, dfa, dfb](const TensorImpl& o, std::span<const double> g, Grads gin) {
                       const auto& x = input_data(o, 0);
                       const auto& y = input_data(o, 1);
                       for (std::size_t i = 0; i < g.size(); ++i) {
                         const double xi = x[plan->a_off[i]];
                         const double yi = y[plan->b_off[i]];
                         if (gin[0]) (*gin[0])[plan->a_off[i]] += dfa(xi, yi, g[i]);
                         if (gin[1]) (*gin[1])[plan->b_off[i]] += dfb(xi, yi, g[i]);
                       }
                     });
}

// f(x) -> value; df(x, y) -> local derivative.
template <class F, class D>
Tensor unary_op(const Tensor& a, const char* name, F f, D df) {
  require_defined(a, name);
  const auto& av = a.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(av[i]);
  return make_result(a.shape(), std::move(out), {&a},
                     [df](const TensorImpl& o, std::span<const double> g, Grads gin) {
                       const auto& x = input_data(o, 0);
                       auto& ga = *gin[0];
                       for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * df(x[i], o.data[i]);
                     });
}

struct AxisSplit {
  std::size_t outer = 1, extent = 1, inner = 1;
};

AxisSplit split_axis(const Shape& s, std::size_t axis, const char* op) {
  if (axis >= s.size()) {
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for " +
                     shape_str(s));
  }
  AxisSplit r;
  for (std::size_t d = 0; d < axis; ++d) r.outer *= s[d];
  r.extent = s[axis];
  for (std::size_t d = axis + 1; d < s.size(); ++d) r.inner *= s[d];
  return r;
}

}  // namespace

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

void GradSink::accumulate(const TensorImpl* leaf, std::span<const double> g) {
  auto& buf = grads_[leaf];
  if (buf.empty()) buf.assign(g.size(), 0.0);
  for (std::size_t i = 0; i < g.size(); ++i) buf[i] += g[i];
}

std::span<const double> GradSink::get(const TensorImpl* leaf) const {
  auto it = grads_.find(leaf);
  if (it == grads_.end()) return {};
  return it->second;
}

// ---- Tensor ----

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  return from(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  for (std::size_t e : shape) {
    if (e == 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape));
  }
  if (values.size() != shape_numel(shape)) {
    throw ShapeError("value count " + std::to_string(values.size()) + " does not match shape " +
                     shape_str(shape));
  }
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(values);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from({1}, {value}, requires_grad); }

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r ? rows.begin()->size() : 0;
  std::vector<double> v;
  v.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw ShapeError("ragged matrix literal");
    v.insert(v.end(), row.begin(), row.end());
  }
  return from({r, c}, std::move(v));
}

const Shape& Tensor::shape() const {
  require_defined(*this, "shape");
  return impl_->shape;
}

std::size_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) throw ShapeError("dim: axis out of range for " + shape_str(s));
  return s[axis];
}

std::size_t Tensor::numel() const { return impl_ ? impl_->data.size() : 0; }

std::span<const double> Tensor::values() const {
  require_defined(*this, "values");
  return impl_->data;
}

std::span<double> Tensor::mutable_values() {
  require_defined(*this, "mutable_values");
  return impl_->data;
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item: tensor of shape " + shape_str(shape()) + " is not scalar");
  return impl_->data[0];
}

double Tensor::at(std::size_t r, std::size_t c) const {
  const auto& s = shape();
  if (s.size() != 2 || r >= s[0] || c >= s[1]) {
    throw ShapeError("at(" + std::to_string(r) + "," + std::to_string(c) + ") invalid for " + shape_str(s));
  }
  return impl_->data[r * s[1] + c];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

bool Tensor::has_grad() const { return impl_ && !impl_->grad.empty(); }

std::span<const double> Tensor::grad() const {
  require_defined(*this, "grad");
  return impl_->grad;
}

void Tensor::zero_grad() {
  if (impl_) impl_->grad.clear();
}

void Tensor::add_to_grad(std::span<const double> g) {
  require_defined(*this, "add_to_grad");
  if (!impl_->requires_grad) return;
  if (g.size() != impl_->data.size()) throw ShapeError("add_to_grad: size mismatch");
  if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0);
  for (std::size_t i = 0; i < g.size(); ++i) impl_->grad[i] += g[i];
}

void Tensor::scale_grad(double factor) {
  if (!impl_) return;
  for (double& g : impl_->grad) g *= factor;
}

Tensor Tensor::detach() const {
  require_defined(*this, "detach");
  return from(impl_->shape, impl_->data, false);
}

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

bool grad_enabled() { return t_grad_enabled; }

// ---- backward ----

void backward(const Tensor& loss, GradSink* sink) {
  require_defined(loss, "backward");
  if (loss.numel() != 1) {
    throw ShapeError("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
  }
  if (!loss.requires_grad()) {
    throw std::invalid_argument("backward: loss is not connected to any tensor requiring gradients");
  }
  TensorImpl* root = loss.impl().get();

  // Iterative post-order DFS; reverse of the result is a valid reverse-topological sweep.
  std::vector<TensorImpl*> order;
  std::unordered_set<TensorImpl*> visited;
  std::vector<std::pair<TensorImpl*, std::size_t>> stack;
  stack.emplace_back(root, 0);
  visited.insert(root);
  while (!stack.empty()) {
    auto& [impl, next] = stack.back();
    if (impl->node && next < impl->node->inputs.size()) {
      TensorImpl* child = impl->node->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(impl);
      stack.pop_back();
    }
  }

  std::unordered_map<TensorImpl*, std::vector<double>> grads;
  grads[root] = {1.0};
  std::vector<std::vector<double>*> gin;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorImpl* impl = *it;
    auto found = grads.find(impl);
    if (found == grads.end()) continue;
    std::vector<double> g = std::move(found->second);
    grads.erase(found);
    if (impl->node) {
      gin.assign(impl->node->inputs.size(), nullptr);
      for (std::size_t i = 0; i < gin.size(); ++i) {
        TensorImpl* in = impl->node->inputs[i].get();
        if (!in->requires_grad) continue;
        auto& buf = grads[in];
        if (buf.empty()) buf.assign(in->data.size(), 0.0);
        gin[i] = &buf;
      }
      impl->node->backward(*impl, g, gin);
    } else if (sink) {
      sink->accumulate(impl, g);
    } else {
      if (impl->grad.empty()) impl->grad.assign(impl->data.size(), 0.0);
      for (std::size_t i = 0; i < g.size(); ++i) impl->grad[i] += g[i];
    }
  }
}

// ---- binary ----

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "add", [](double x, double y) { return x + y; }, [](double, double, double g) { return g; },
      [](double, double, double g) { return g; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "sub", [](double x, double y) { return x - y; }, [](double, double, double g) { return g; },
      [](double, double, double g) { return -g; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "mul", [](double x, double y) { return x * y; },
      [](double, double y, double g) { return g * y; }, [](double x, double, double g) { return g * x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "div", [](double x, double y) { return x / y; },
      [](double, double y, double g) { return g / y; },
      [](double x, double y, double g) { return -g * x / (y * y); });
}

Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
Tensor operator-(const Tensor& a) { return neg(a); }
Tensor operator*(const Tensor& a, double c) { return scale(a, c); }
Tensor operator*(double c, const Tensor& a) { return scale(a, c); }
Tensor operator+(const Tensor& a, double c) { return add_scalar(a, c); }
Tensor operator-(const Tensor& a, double c) { return add_scalar(a, -c); }

Tensor scale(const Tensor& a, double c) {
  return unary_op(
      a, "scale", [c](double x) { return c * x; }, [c](double, double) { return c; });
}

Tensor add_scalar(const Tensor& a, double c) {
  return unary_op(
      a, "add_scalar", [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

// ---- unary ----

Tensor neg(const Tensor& a) {
  return unary_op(
      a, "neg", [](double x) { return -x; }, [](double, double) { return -1.0; });
}

Tensor exp(const Tensor& a) {
  return unary_op(
      a, "exp", [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
  return unary_op(
      a, "log", [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor tanh(const Tensor& a) {
  return unary_op(
      a, "tanh", [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor sigmoid(const Tensor& a) {
  return unary_op(
      a, "sigmoid",
      [](double x) {
        if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor relu(const Tensor& a) {
  return unary_op(
      a, "relu", [](double x) { return x > 0 ? x : 0.0; }, [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}

Tensor sqrt(const Tensor& a) {
  return unary_op(
      a, "sqrt", [](double x) { return std::sqrt(x); },
      [](double, double y) { return y > 0 ? 0.5 / y : 0.0; });
}

Tensor square(const Tensor& a) {
  return unary_op(
      a, "square", [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Tensor abs(const Tensor& a) {
  return unary_op(
      a, "abs", [](double x) { return std::fabs(x); },
      [](double x, double) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); });
}

Tensor acos(const Tensor& a) {
  return unary_op(
      a, "acos", [](double x) { return std::acos(std::clamp(x, -1.0, 1.0)); },
      [](double x, double) { return (x > -1.0 && x < 1.0) ? -1.0 / std::sqrt(1.0 - x * x) : 0.0; });
}

Tensor clamp(const Tensor& a, double lo, double hi) {
  return unary_op(
      a, "clamp", [lo, hi](double x) { return std::clamp(x, lo, hi); },
      [lo, hi](double x, double) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
}

// ---- structure ----

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_defined(a, "matmul");
  require_defined(b, "matmul");
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  const double* A = a.values().data();
  const double* B = b.values().data();
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    double* c = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = A[i * k + p];
      const double* brow = B + p * n;
      for (std::size_t j = 0; j < n; ++j) c[j] += aip * brow[j];
    }
  }
  return make_result({m, n}, std::move(out), {&a, &b},
                     [m, k, n](const TensorImpl& o, std::span<const double> g, Grads gin) {
                       const double* A = input_data(o, 0).data();
                       const double* B = input_data(o, 1).data();
                       if (gin[0]) {
                         double* ga = gin[0]->data();
                         for (std::size_t i = 0; i < m; ++i) {
                           const double* gi = g.data() + i * n;
                           for (std::size_t p = 0; p < k; ++p) {
                             const double* bp = B + p * n;
                             double acc = 0.0;
                             for (std::size_t j = 0; j < n; ++j) acc += gi[j] * bp[j];
                             ga[i * k + p] += acc;
                           }
                         }
                       }
                       if (gin[1]) {
                         double* gb = gin[1]->data();
                         for (std::size_t i = 0; i < m; ++i) {
                           const double* gi = g.data() + i * n;
                           for (std::size_t p = 0; p < k; ++p) {
                             const double aip = A[i * k + p];
                             double* gbp = gb + p * n;
                             for (std::size_t j = 0; j < n; ++j) gbp[j] += aip * gi[j];
                           }
                         }
                       }
                     });
}

Tensor transpose(const Tensor& a) {
  require_defined(a, "transpose");
  if (a.rank() != 2) throw ShapeError("transpose: expected rank 2, got " + shape_str(a.shape()));
  const std::size_t r = a.dim(0), c = a.dim(1);
  const auto& v = a.values();
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = v[i * c + j];
  return make_result({c, r}, std::move(out), {&a}, [r, c](const TensorImpl&, std::span<const double> g, Grads gin) {
    auto& ga = *gin[0];
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += g[j * r + i];
  });
}

Tensor apply_left(const Tensor& left, const Tensor& x) {
  require_defined(left, "apply_left");
  require_defined(x, "apply_left");
  if (left.rank() != 2 || (x.rank() != 2 && x.rank() != 3)) {
    throw ShapeError("apply_left: expected matrix and stack, got " + shape_str(left.shape()) + " and " +
                     shape_str(x.shape()));
  }
  const bool stacked = x.rank() == 3;
  const std::size_t batch = stacked ? x.dim(0) : 1;
  const std::size_t m = stacked ? x.dim(1) : x.dim(0);
  const std::size_t f = stacked ? x.dim(2) : x.dim(1);
  const std::size_t n = left.dim(0);
  if (left.dim(1) != m) {
    throw ShapeError("apply_left: node count mismatch " + shape_str(left.shape()) + " vs " + shape_str(x.shape()));
  }
  const double* L = left.values().data();
  const double* X = x.values().data();
  std::vector<double> out(batch * n * f, 0.0);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t i = 0; i < n; ++i) {
      double* o = out.data() + (b * n + i) * f;
      for (std::size_t p = 0; p < m; ++p) {
        const double l = L[i * m + p];
        const double* xr = X + (b * m + p) * f;
        for (std::size_t j = 0; j < f; ++j) o[j] += l * xr[j];
      }
    }
  }
  Shape shape = stacked ? Shape{batch, n, f} : Shape{n, f};
  return make_result(std::move(shape), std::move(out), {&left, &x},
                     [batch, n, m, f](const TensorImpl& o, std::span<const double> g, Grads gin) {
                       const double* L = input_data(o, 0).data();
                       const double* X = input_data(o, 1).data();
                       for (std::size_t b = 0; b < batch; ++b) {
                         for (std::size_t i = 0; i < n; ++i) {
                           const double* gr = g.data() + (b * n + i) * f;
                           for (std::size_t p = 0; p < m; ++p) {
                             const double* xr = X + (b * m + p) * f;
                             if (gin[0]) {
                               double acc = 0.0;
                               for (std::size_t j = 0; j < f; ++j) acc += gr[j] * xr[j];
                               (*gin[0])[i * m + p] += acc;
                             }
                             if (gin[1]) {
                               const double l = L[i * m + p];
                               double* gx = gin[1]->data() + (b * m + p) * f;
                               for (std::size_t j = 0; j < f; ++j) gx[j] += l * gr[j];
                             }
                           }
                         }
                       }
                     });
}

Tensor reshape(const Tensor& a, Shape shape) {
  require_defined(a, "reshape");
  if (shape_numel(shape) != a.numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  }
  std::vector<double> out(a.values().begin(), a.values().end());
  return make_result(std::move(shape), std::move(out), {&a}, [](const TensorImpl&, std::span<const double> g, Grads gin) {
    auto& ga = *gin[0];
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& first = parts.front().shape();
  Shape out_shape = first;
  if (axis >= first.size()) throw ShapeError("concat: axis out of range for " + shape_str(first));
  out_shape[axis] = 0;
  std::vector<std::size_t> extents;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t d = 0; ok && d < s.size(); ++d) ok = d == axis || s[d] == first[d];
    if (!ok) throw ShapeError("concat: " + shape_str(s) + " does not conform to " + shape_str(first));
    out_shape[axis] += s[axis];
    extents.push_back(s[axis]);
  }
  const AxisSplit sp = split_axis(out_shape, axis, "concat");
  std::vector<double> out(shape_numel(out_shape));
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto& v = parts[k].values();
    const std::size_t block = extents[k] * sp.inner;
    for (std::size_t o = 0; o < sp.outer; ++o) {
      std::copy_n(v.begin() + static_cast<std::ptrdiff_t>(o * block), block,
                  out.begin() + static_cast<std::ptrdiff_t>(o * sp.extent * sp.inner + offset));
    }
    offset += block;
  }
  std::vector<const Tensor*> inputs;
  for (const auto& p : parts) inputs.push_back(&p);
  return make_result(std::move(out_shape), std::move(out), inputs,
                     [sp, extents](const TensorImpl&, std::span<const double> g, Grads gin) {
                       std::size_t offset = 0;
                       for (std::size_t k = 0; k < extents.size(); ++k) {
                         const std::size_t block = extents[k] * sp.inner;
                         if (gin[k]) {
                           auto& gk = *gin[k];
                           for (std::size_t o = 0; o < sp.outer; ++o) {
                             const double* src = g.data() + o * sp.extent * sp.inner + offset;
                             for (std::size_t i = 0; i < block; ++i) gk[o * block + i] += src[i];
                           }
                         }
                         offset += block;
                       }
                     });
}

Tensor slice(const Tensor& a, std::size_t axis, std::size_t begin, std::size_t end) {
  require_defined(a, "slice");
  const AxisSplit sp = split_axis(a.shape(), axis, "slice");
  if (begin >= end || end > sp.extent) {
    throw ShapeError("slice: range [" + std::to_string(begin) + "," + std::to_string(end) + ") invalid on axis " +
                     std::to_string(axis) + " of " + shape_str(a.shape()));
  }
  Shape shape = a.shape();
  shape[axis] = end - begin;
  const std::size_t block = (end - begin) * sp.inner;
  const auto& v = a.values();
  std::vector<double> out(sp.outer * block);
  for (std::size_t o = 0; o < sp.outer; ++o) {
    std::copy_n(v.begin() + static_cast<std::ptrdiff_t>((o * sp.extent + begin) * sp.inner), block,
                out.begin() + static_cast<std::ptrdiff_t>(o * block));
  }
  return make_result(std::move(shape), std::move(out), {&a},
                     [sp, begin, block](const TensorImpl&, std::span<const double> g, Grads gin) {
                       auto& ga = *gin[0];
                       for (std::size_t o = 0; o < sp.outer; ++o) {
                         double* dst = ga.data() + (o * sp.extent + begin) * sp.inner;
                         for (std::size_t i = 0; i < block; ++i) dst[i] += g[o * block + i];
                       }
                     });
}

Tensor row(const Tensor& a, std::size_t index) { return slice(a, 0, index, index + 1); }

// ---- reductions ----

Tensor sum(const Tensor& a) {
  require_defined(a, "sum");
  double s = 0.0;
  for (double x : a.values()) s += x;
  return make_result({1}, {s}, {&a}, [](const TensorImpl&, std::span<const double> g, Grads gin) {
    for (double& x : *gin[0]) x += g[0];
  });
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.numel())); }

Tensor sum(const Tensor& a, std::size_t axis, bool keepdim) {
  require_defined(a, "sum");
  const AxisSplit sp = split_axis(a.shape(), axis, "sum");
  Shape shape = a.shape();
  if (keepdim) {
    shape[axis] = 1;
  } else {
    shape.erase(shape.begin() + static_cast<std::ptrdiff_t>(axis));
    if (shape.empty()) shape = {1};
  }
  const auto& v = a.values();
  std::vector<double> out(sp.outer * sp.inner, 0.0);
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t e = 0; e < sp.extent; ++e)
      for (std::size_t i = 0; i < sp.inner; ++i) out[o * sp.inner + i] += v[(o * sp.extent + e) * sp.inner + i];
  return make_result(std::move(shape), std::move(out), {&a}, [sp](const TensorImpl&, std::span<const double> g, Grads gin) {
    auto& ga = *gin[0];
    for (std::size_t o = 0; o < sp.outer; ++o)
      for (std::size_t e = 0; e < sp.extent; ++e)
        for (std::size_t i = 0; i < sp.inner; ++i) ga[(o * sp.extent + e) * sp.inner + i] += g[o * sp.inner + i];
  });
}

Tensor mean(const Tensor& a, std::size_t axis, bool keepdim) {
  return scale(sum(a, axis, keepdim), 1.0 / static_cast<double>(a.dim(axis)));
}

Tensor softmax(const Tensor& a, std::size_t axis) {
  require_defined(a, "softmax");
  const AxisSplit sp = split_axis(a.shape(), axis, "softmax");
  const auto& v = a.values();
  std::vector<double> out(v.size());
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t i = 0; i < sp.inner; ++i) {
      const std::size_t base = o * sp.extent * sp.inner + i;
      double mx = v[base];
      for (std::size_t e = 1; e < sp.extent; ++e) mx = std::max(mx, v[base + e * sp.inner]);
      double z = 0.0;
      for (std::size_t e = 0; e < sp.extent; ++e) {
        const double ex = std::exp(v[base + e * sp.inner] - mx);
        out[base + e * sp.inner] = ex;
        z += ex;
      }
      for (std::size_t e = 0; e < sp.extent; ++e) out[base + e * sp.inner] /= z;
    }
  }
  return make_result(a.shape(), std::move(out), {&a}, [sp](const TensorImpl& o, std::span<const double> g, Grads gin) {
    auto& ga = *gin[0];
    const auto& y = o.data;
    for (std::size_t q = 0; q < sp.outer; ++q) {
      for (std::size_t i = 0; i < sp.inner; ++i) {
        const std::size_t base = q * sp.extent * sp.inner + i;
        double dot = 0.0;
        for (std::size_t e = 0; e < sp.extent; ++e) dot += g[base + e * sp.inner] * y[base + e * sp.inner];
        for (std::size_t e = 0; e < sp.extent; ++e) {
          const std::size_t k = base + e * sp.inner;
          ga[k] += y[k] * (g[k] - dot);
        }
      }
    }
  });
}

Tensor log_softmax(const Tensor& a, std::size_t axis) {
  require_defined(a, "log_softmax");
  const AxisSplit sp = split_axis(a.shape(), axis, "log_softmax");
  const auto& v = a.values();
  std::vector<double> out(v.size());
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t i = 0; i < sp.inner; ++i) {
      const std::size_t base = o * sp.extent * sp.inner + i;
      double mx = v[base];
      for (std::size_t e = 1; e < sp.extent; ++e) mx = std::max(mx, v[base + e * sp.inner]);
      double z = 0.0;
      for (std::size_t e = 0; e < sp.extent; ++e) z += std::exp(v[base + e * sp.inner] - mx);
      const double lz = mx + std::log(z);
      for (std::size_t e = 0; e < sp.extent; ++e) out[base + e * sp.inner] = v[base + e * sp.inner] - lz;
    }
  }
  return make_result(a.shape(), std::move(out), {&a}, [sp](const TensorImpl& o, std::span<const double> g, Grads gin) {
    auto& ga = *gin[0];
    const auto& y = o.data;
    for (std::size_t q = 0; q < sp.outer; ++q) {
      for (std::size_t i = 0; i < sp.inner; ++i) {
        const std::size_t base = q * sp.extent * sp.inner + i;
        double gs = 0.0;
        for (std::size_t e = 0; e < sp.extent; ++e) gs += g[base + e * sp.inner];
        for (std::size_t e = 0; e < sp.extent; ++e) {
          const std::size_t k = base + e * sp.inner;
          ga[k] += g[k] - std::exp(y[k]) * gs;
        }
      }
    }
  });
}

Tensor layer_norm(const Tensor& a, double eps) {
  require_defined(a, "layer_norm");
  const std::size_t width = a.shape().back();
  const std::size_t rows = a.numel() / width;
  const auto& v = a.values();
  std::vector<double> out(v.size());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = v.data() + r * width;
    double mu = 0.0;
    for (std::size_t j = 0; j < width; ++j) mu += x[j];
    mu /= static_cast<double>(width);
    double var = 0.0;
    for (std::size_t j = 0; j < width; ++j) var += (x[j] - mu) * (x[j] - mu);
    var /= static_cast<double>(width);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t j = 0; j < width; ++j) out[r * width + j] = (x[j] - mu) * is;
  }
  return make_result(a.shape(), std::move(out), {&a},
                     [rows, width, inv_std](const TensorImpl& o, std::span<const double> g, Grads gin) {
                       auto& ga = *gin[0];
                       const auto& y = o.data;
                       const double n = static_cast<double>(width);
                       for (std::size_t r = 0; r < rows; ++r) {
                         const double* gr = g.data() + r * width;
                         const double* yr = y.data() + r * width;
                         double gm = 0.0, gy = 0.0;
                         for (std::size_t j = 0; j < width; ++j) {
                           gm += gr[j];
                           gy += gr[j] * yr[j];
                         }
                         gm /= n;
                         gy /= n;
                         const double is = (*inv_std)[r];
                         for (std::size_t j = 0; j < width; ++j) ga[r * width + j] += is * (gr[j] - gm - yr[j] * gy);
                       }
                     });
}

Tensor l1_norm(const Tensor& a) { return sum(abs(a)); }

Tensor l2_norm(const Tensor& a) { return sqrt(sum(square(a))); }

}  // namespace hitdvae
