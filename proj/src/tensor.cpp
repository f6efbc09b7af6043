// Copyright 2026 The siitbench Authors
// SPDX-License-Identifier: Apache-2.0

#include "siit/tensor.hpp"

#include <cmath>
#include <sstream>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "siit/error.hpp"

namespace siit {

namespace {

// Activation buffers are a few MB and are freed and reallocated every step.
// Keeping them on the heap instead of fresh mmaps avoids a page-fault storm.
[[maybe_unused]] const bool kHeapTuned = [] {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 256 << 20);
  mallopt(M_TRIM_THRESHOLD, 512 << 20);
#endif
  return true;
}();

}  // namespace

namespace {
thread_local Tape* g_current_tape = nullptr;
}  // namespace

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  if (shape.size() == 1) os << ',';
  os << ')';
  return os.str();
}

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }

Tensor Tensor::full(Shape shape, double value) {
  auto impl = std::make_shared<TensorImpl>();
  impl->data.assign(shape_numel(shape), value);
  impl->shape = std::move(shape);
  return Tensor(std::move(impl));
}

Tensor Tensor::from(Shape shape, std::vector<double> data) {
  if (shape_numel(shape) != data.size()) {
    throw ShapeError("tensor: shape " + shape_str(shape) + " does not match " +
                     std::to_string(data.size()) + " values");
  }
  for (std::size_t d : shape) {
    if (d == 0) throw ShapeError("tensor: zero-sized dimension in " + shape_str(shape));
  }
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double value) { return from({}, {value}); }

Tensor Tensor::parameter(Shape shape, std::vector<double> data) {
  Tensor t = from(std::move(shape), std::move(data));
  t.impl_->requires_grad = true;
  t.zero_grad();
  return t;
}

double Tensor::item() const {
  if (numel() != 1) {
    throw ShapeError("item: tensor of shape " + shape_str(shape()) + " is not a scalar");
  }
  return impl_->data[0];
}

std::span<const double> Tensor::grad() const {
  if (!impl_->grad) throw AutogradError("grad: tensor has no gradient");
  return *impl_->grad;
}

std::span<double> Tensor::mutable_grad() {
  return grad_buffer(*impl_);
}

void Tensor::zero_grad() { impl_->grad.emplace(impl_->data.size(), 0.0); }

Tensor Tensor::detach() const {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = impl_->shape;
  impl->data = impl_->data;
  return Tensor(std::move(impl));
}

std::vector<double>& grad_buffer(TensorImpl& impl) {
  if (!impl.grad) impl.grad.emplace(impl.data.size(), 0.0);
  return *impl.grad;
}

void accumulate_grad(TensorImpl& impl, std::span<const double> values) {
  auto& g = grad_buffer(impl);
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += values[i];
}

Tape::Scope::Scope(Tape& tape) : previous_(g_current_tape) { g_current_tape = &tape; }
Tape::Scope::~Scope() { g_current_tape = previous_; }

Tape* Tape::current() { return g_current_tape; }

bool Tape::should_record(std::initializer_list<const Tensor*> inputs) {
  if (!g_current_tape) return false;
  for (const Tensor* t : inputs) {
    if (t->requires_grad()) return true;
  }
  return false;
}

bool Tape::should_record(std::span<const Tensor> inputs) {
  if (!g_current_tape) return false;
  for (const Tensor& t : inputs) {
    if (t.requires_grad()) return true;
  }
  return false;
}

void Tape::record(const char* kind, std::vector<std::shared_ptr<TensorImpl>> inputs,
                  std::shared_ptr<TensorImpl> output, BackwardFn fn) {
  if (consumed_) throw AutogradError("tape: recording onto a consumed tape; call reset() first");
  output->requires_grad = true;
  nodes_.push_back(Node{kind, std::move(inputs), std::move(output), std::move(fn)});
}

void Tape::backward(const Tensor& loss) {
  if (consumed_) throw AutogradError("backward: called twice without reset");
  if (!loss.defined() || loss.numel() != 1 || !loss.shape().empty()) {
    throw AutogradError("backward: loss must be a scalar, got shape " +
                        (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
  }
  bool connected = false;
  for (const Node& n : nodes_) {
    if (n.output == loss.impl()) {
      connected = true;
      break;
    }
  }
  if (!connected) throw AutogradError("backward: loss is not connected to this tape");
  if (!std::isfinite(loss.item())) throw DivergenceError("backward: loss is not finite");
  consumed_ = true;

  // Intermediate buffers start from zero; leaves keep accumulating.
  for (Node& n : nodes_) n.output->grad.reset();
  loss.impl()->grad.emplace(1, 1.0);

  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    if (!it->output->grad) continue;
    it->backward(*it->output->grad);
  }
  for (Node& n : nodes_) {
    for (auto& in : n.inputs) {
      if (!in->requires_grad) continue;
      auto& g = grad_buffer(*in);
      for (double v : g) {
        if (!std::isfinite(v)) {
          throw DivergenceError(std::string("backward: non-finite gradient flowing into ") + n.kind);
        }
      }
    }
  }
}

void Tape::reset() {
  nodes_.clear();
  consumed_ = false;
}

}  // namespace siit
