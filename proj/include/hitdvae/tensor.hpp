#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace hitdvae {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

/// Raised when operand shapes do not conform.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised for NaN/inf where a finite value is required.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TensorImpl;

/// Backward closure of a recorded op. `grads[i]` is null when input i does not
/// need a gradient; otherwise it is a zero-initialized buffer of input i's size
/// that the closure accumulates into.
using BackwardFn = std::function<void(const TensorImpl& out, std::span<const double> grad_out,
                                      std::span<std::vector<double>*> grads)>;

struct Node {
  std::vector<std::shared_ptr<TensorImpl>> inputs;
  BackwardFn backward;
};

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;
  bool requires_grad = false;
  std::shared_ptr<Node> node;
};

/// Leaf gradients collected by one backward pass instead of being written into
/// the leaves. Lets independent tapes run on separate threads while sharing
/// parameters.
class GradSink {
 public:
  void accumulate(const TensorImpl* leaf, std::span<const double> g);
  /// Returns an empty span for leaves that received nothing.
  std::span<const double> get(const TensorImpl* leaf) const;
  void clear() { grads_.clear(); }

 private:
  std::unordered_map<const TensorImpl*, std::vector<double>> grads_;
};

/// Differentiable dense array of doubles in row-major order.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  /// Row-major matrix literal, e.g. Tensor::matrix({{1, 0}, {0, 1}}).
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);

  bool defined() const { return static_cast<bool>(impl_); }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> values() const;
  /// In-place access for optimizers and finite-difference probes only.
  std::span<double> mutable_values();
  double item() const;
  double operator[](std::size_t flat_index) const { return values()[flat_index]; }
  double at(std::size_t row, std::size_t col) const;

  bool requires_grad() const;
  bool has_grad() const;
  std::span<const double> grad() const;
  void zero_grad();
  void add_to_grad(std::span<const double> g);
  void scale_grad(double factor);

  /// Same values, no graph history, no gradient requirement.
  Tensor detach() const;

  std::shared_ptr<TensorImpl> impl() const { return impl_; }
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

 private:
  std::shared_ptr<TensorImpl> impl_;
};

/// RAII switch that disables graph recording on the current thread.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

/// Reverse-mode sweep from a scalar loss. Leaf gradients accumulate into the
/// leaves themselves, or into `sink` when given.
void backward(const Tensor& loss, GradSink* sink = nullptr);

// Elementwise binary ops with numpy-style broadcasting.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor operator+(const Tensor& a, const Tensor& b);
Tensor operator-(const Tensor& a, const Tensor& b);
Tensor operator*(const Tensor& a, const Tensor& b);
Tensor operator/(const Tensor& a, const Tensor& b);
Tensor operator-(const Tensor& a);
Tensor operator*(const Tensor& a, double c);
Tensor operator*(double c, const Tensor& a);
Tensor operator+(const Tensor& a, double c);
Tensor operator-(const Tensor& a, double c);

Tensor scale(const Tensor& a, double c);
Tensor add_scalar(const Tensor& a, double c);

// Elementwise unary ops.
Tensor neg(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor relu(const Tensor& a);
/// Gradient is taken as 0 where the result is exactly 0.
Tensor sqrt(const Tensor& a);
Tensor square(const Tensor& a);
Tensor abs(const Tensor& a);
/// arccos of the input clamped to [-1, 1]; zero gradient outside the open interval.
Tensor acos(const Tensor& a);
/// Zero gradient outside [lo, hi].
Tensor clamp(const Tensor& a, double lo, double hi);

// Linear algebra and structure.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
/// out[b] = left * x[b] for a B x N' x F stack `x` and an N x N' matrix `left`.
Tensor apply_left(const Tensor& left, const Tensor& x);
Tensor reshape(const Tensor& a, Shape shape);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor slice(const Tensor& a, std::size_t axis, std::size_t begin, std::size_t end);
Tensor row(const Tensor& a, std::size_t index);

// Reductions.
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor sum(const Tensor& a, std::size_t axis, bool keepdim = false);
Tensor mean(const Tensor& a, std::size_t axis, bool keepdim = false);
Tensor softmax(const Tensor& a, std::size_t axis);
Tensor log_softmax(const Tensor& a, std::size_t axis);
/// Normalizes over the last axis to zero mean and unit variance.
Tensor layer_norm(const Tensor& a, double eps = 1e-5);

Tensor l1_norm(const Tensor& a);
Tensor l2_norm(const Tensor& a);

}  // namespace hitdvae
