// Copyright 2026 The siitbench Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace siit {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::optional<std::vector<double>> grad;
  bool requires_grad = false;
};

// Dense row-major float64 array. Copies share storage; data is treated as
// immutable once an op has produced it. Only parameters are rewritten in
// place (optimizer, loader) through `mutable_data()`.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor from(Shape shape, std::vector<double> data);
  static Tensor scalar(double value);
  // Leaf with requires_grad set and a zeroed grad buffer.
  static Tensor parameter(Shape shape, std::vector<double> data);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t dim(std::size_t axis) const { return impl_->shape.at(axis); }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t numel() const { return impl_->data.size(); }

  std::span<const double> data() const { return impl_->data; }
  std::span<double> mutable_data() { return impl_->data; }
  double item() const;
  double operator[](std::size_t i) const { return impl_->data[i]; }

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool on) { impl_->requires_grad = on; }

  bool has_grad() const { return impl_->grad.has_value(); }
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();
  void clear_grad() { impl_->grad.reset(); }

  // Copy with fresh storage and no tape history.
  Tensor detach() const;

  const std::shared_ptr<TensorImpl>& impl() const { return impl_; }
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

 private:
  std::shared_ptr<TensorImpl> impl_;
};

// Append-only record of differentiable operations (define-by-run). Ops record
// onto the tape installed for the calling thread by `Tape::Scope`; with no
// scope, or when no input requires a gradient, nothing is recorded.
class Tape {
 public:
  using BackwardFn = std::function<void(const std::vector<double>& grad_out)>;

  struct Node {
    const char* kind;
    std::vector<std::shared_ptr<TensorImpl>> inputs;
    std::shared_ptr<TensorImpl> output;
    BackwardFn backward;
  };

  class Scope {
   public:
    explicit Scope(Tape& tape);
    ~Scope();
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    Tape* previous_;
  };

  // Tape installed on this thread, or nullptr.
  static Tape* current();
  // A tape is active on this thread and at least one input needs a gradient.
  static bool should_record(std::initializer_list<const Tensor*> inputs);
  static bool should_record(std::span<const Tensor> inputs);

  void record(const char* kind, std::vector<std::shared_ptr<TensorImpl>> inputs,
              std::shared_ptr<TensorImpl> output, BackwardFn fn);

  // Populates grads of every tensor reachable from `loss`; requires-grad
  // inputs on the tape that `loss` does not reach receive zero grads.
  // Intermediate grads stay readable until reset().
  void backward(const Tensor& loss);
  void reset();

  std::size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }

 private:
  std::vector<Node> nodes_;
  bool consumed_ = false;
};

// Adds `values` into the grad buffer of `impl`, allocating it on first use.
void accumulate_grad(TensorImpl& impl, std::span<const double> values);
std::vector<double>& grad_buffer(TensorImpl& impl);

}  // namespace siit
