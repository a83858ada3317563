#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace csn {

using Shape = std::vector<std::size_t>;

/// Raised when operand extents are incompatible with an operation.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a forward op produces NaN/Inf or divides by zero.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised for misuse of the differentiation tape (detached or non-scalar loss).
class TapeError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct NodeId {
  std::uint64_t tape = 0;
  std::size_t index = 0;
};

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until a gradient is accumulated
  bool requires_grad = false;
  std::optional<NodeId> node;

  // Lazily sized gradient buffer.
  std::vector<double>& grad_buffer();
};

/// Dense row-major float64 tensor. Copies share storage (handle semantics);
/// use clone() for an independent value.
class Tensor {
 public:
  Tensor();
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor ones(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor vector(std::vector<double> values, bool requires_grad = false);
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows,
                       bool requires_grad = false);

  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::ptrdiff_t axis) const;
  std::size_t numel() const { return impl_->data.size(); }

  std::span<const double> data() const { return impl_->data; }
  /// Mutable access; only valid for tensors that are not on a tape.
  std::span<double> mutable_data();
  double item() const;
  double at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool flag);
  bool has_grad() const { return !impl_->grad.empty(); }
  /// Gradient after backward(); zeros when nothing reached this tensor.
  std::vector<double> grad() const;
  void zero_grad();
  bool on_tape() const { return impl_->node.has_value(); }

  Tensor detach() const;
  Tensor clone() const;

  const std::shared_ptr<TensorImpl>& impl() const { return impl_; }

 private:
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<TensorImpl> impl_;
  friend class Tape;
};

/// Define-by-run differentiation tape. Constructing a Tape makes it the
/// active tape for the current thread until it is destroyed; ops record onto
/// the active tape whenever an input requires grad.
class Tape {
 public:
  using BackwardFn = std::function<void()>;

  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active();

  /// Records an op. `inputs` must already be on this tape or be leaves.
  /// Returns the output tensor, marked requires_grad and attached to the tape.
  Tensor record(Shape shape, std::vector<double> data,
                std::vector<std::shared_ptr<TensorImpl>> inputs,
                std::function<void(const TensorImpl& out)> backward);

  /// Reverse accumulation from a scalar loss recorded on this tape.
  void backward(const Tensor& loss);

  std::size_t size() const { return entries_.size(); }
  std::uint64_t id() const { return id_; }

 private:
  struct Entry {
    std::vector<std::shared_ptr<TensorImpl>> inputs;
    std::shared_ptr<TensorImpl> output;
    std::function<void(const TensorImpl&)> backward;
  };
  std::vector<Entry> entries_;
  std::uint64_t id_;
  Tape* previous_;
};

/// Suspends recording on the current thread (inference).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  Tape* saved_;
};

/// Builds the result of a forward op: recorded on the active tape when any
/// input requires grad, otherwise a plain value. Checks finiteness.
Tensor make_result(const char* op, Shape shape, std::vector<double> data,
                   std::initializer_list<const Tensor*> inputs,
                   std::function<void(const TensorImpl& out)> backward);

}  // namespace csn
