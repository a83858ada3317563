#include "csn/tensor.hpp"

#include <atomic>
#include <cmath>
#include <sstream>

namespace csn {

namespace {

thread_local Tape* g_active_tape = nullptr;
std::atomic<std::uint64_t> g_next_tape_id{1};

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto extent : shape) n *= extent;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << ',';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

std::vector<double>& TensorImpl::grad_buffer() {
  if (grad.empty()) grad.assign(data.size(), 0.0);
  return grad;
}

Tensor::Tensor() : impl_(std::make_shared<TensorImpl>()) {
  impl_->data.assign(1, 0.0);
}

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad)
    : impl_(std::make_shared<TensorImpl>()) {
  if (shape_numel(shape) != data.size()) {
    throw DimensionError("tensor shape " + shape_str(shape) + " does not match " +
                         std::to_string(data.size()) + " values");
  }
  impl_->shape = std::move(shape);
  impl_->data = std::move(data);
  impl_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::ones(Shape shape, bool requires_grad) { return full(std::move(shape), 1.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const auto n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) { return Tensor({}, {value}, requires_grad); }

Tensor Tensor::vector(std::vector<double> values, bool requires_grad) {
  const auto n = values.size();
  return Tensor({n}, std::move(values), requires_grad);
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows, bool requires_grad) {
  const std::size_t r = rows.size();
  const std::size_t c = r ? rows.begin()->size() : 0;
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw DimensionError("ragged matrix literal");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor({r, c}, std::move(data), requires_grad);
}

std::size_t Tensor::dim(std::ptrdiff_t axis) const {
  const auto r = static_cast<std::ptrdiff_t>(rank());
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) throw DimensionError("axis out of range for shape " + shape_str(shape()));
  return impl_->shape[static_cast<std::size_t>(axis)];
}

std::span<double> Tensor::mutable_data() {
  if (impl_->node) throw TapeError("cannot mutate a tensor recorded on a tape");
  return impl_->data;
}

double Tensor::item() const {
  if (numel() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape()));
  return impl_->data[0];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
  if (index.size() != rank()) throw DimensionError("index rank mismatch");
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (auto i : index) {
    if (i >= impl_->shape[axis]) throw DimensionError("index out of range");
    flat = flat * impl_->shape[axis] + i;
    ++axis;
  }
  return impl_->data[flat];
}

Tensor& Tensor::set_requires_grad(bool flag) {
  impl_->requires_grad = flag;
  return *this;
}

std::vector<double> Tensor::grad() const {
  if (impl_->grad.empty()) return std::vector<double>(numel(), 0.0);
  return impl_->grad;
}

void Tensor::zero_grad() { impl_->grad.clear(); }

Tensor Tensor::detach() const { return Tensor(impl_->shape, impl_->data, false); }

Tensor Tensor::clone() const { return Tensor(impl_->shape, impl_->data, impl_->requires_grad); }

Tape::Tape() : id_(g_next_tape_id.fetch_add(1)), previous_(g_active_tape) { g_active_tape = this; }

Tape::~Tape() {
  // Detach outputs so stale node ids are never mistaken for live ones.
  for (auto& entry : entries_) entry.output->node.reset();
  g_active_tape = previous_;
}

Tape* Tape::active() { return g_active_tape; }

Tensor Tape::record(Shape shape, std::vector<double> data, std::vector<std::shared_ptr<TensorImpl>> inputs,
                    std::function<void(const TensorImpl& out)> backward) {
  Tensor out(std::move(shape), std::move(data), true);
  out.impl_->node = NodeId{id_, entries_.size()};
  entries_.push_back(Entry{std::move(inputs), out.impl_, std::move(backward)});
  return out;
}

void Tape::backward(const Tensor& loss) {
  const auto& impl = loss.impl();
  if (impl->data.size() != 1) {
    throw TapeError("backward() needs a scalar loss, got shape " + shape_str(impl->shape));
  }
  if (!impl->node || impl->node->tape != id_) throw TapeError("backward() on a loss that is not on this tape");
  const std::size_t start = impl->node->index;
  impl->grad_buffer()[0] += 1.0;
  for (std::size_t i = start + 1; i-- > 0;) {
    auto& entry = entries_[i];
    if (entry.output->grad.empty()) continue;  // unreachable from the loss
    for (auto& input : entry.inputs) {
      if (input->requires_grad) input->grad_buffer();
    }
    entry.backward(*entry.output);
  }
}

NoGradGuard::NoGradGuard() : saved_(g_active_tape) { g_active_tape = nullptr; }

NoGradGuard::~NoGradGuard() { g_active_tape = saved_; }

Tensor make_result(const char* op, Shape shape, std::vector<double> data, std::initializer_list<const Tensor*> inputs,
                   std::function<void(const TensorImpl& out)> backward) {
  for (double v : data) {
    if (!std::isfinite(v)) throw NumericError(std::string(op) + " produced a non-finite value");
  }
  Tape* tape = Tape::active();
  bool track = false;
  if (tape) {
    for (const Tensor* t : inputs) track = track || t->requires_grad();
  }
  if (!track) return Tensor(std::move(shape), std::move(data), false);
  std::vector<std::shared_ptr<TensorImpl>> impls;
  impls.reserve(inputs.size());
  for (const Tensor* t : inputs) impls.push_back(t->impl());
  return tape->record(std::move(shape), std::move(data), std::move(impls), std::move(backward));
}

}  // namespace csn
