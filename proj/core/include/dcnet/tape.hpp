#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "dcnet/tensor.hpp"

namespace dcnet {

// Handed to a backward rule: the output gradient plus accumulation targets
// for each input that requires a gradient.
class BackwardContext {
 public:
  BackwardContext(const Tensor& output, const std::vector<Tensor>& inputs)
      : output_(output), inputs_(inputs) {}

  std::span<const double> grad_output() const { return output_.grad(); }
  bool needs(std::size_t i) const { return inputs_[i].requires_grad(); }
  // Gradient buffer of input i; callers accumulate (+=) into it.
  std::span<double> grad_input(std::size_t i) {
    Tensor handle = inputs_[i];
    return handle.mutable_grad();
  }

 private:
  const Tensor& output_;
  const std::vector<Tensor>& inputs_;
};

using BackwardFn = std::function<void(BackwardContext&)>;

// Ordered record of differentiable operations for one forward pass.
//
// Operations are appended in execution order, so every entry's inputs were
// produced before it. backward() walks the entries once in reverse.
class Tape {
 public:
  struct Entry {
    std::string op;
    std::vector<Tensor> inputs;
    Tensor output;
    BackwardFn backward;
  };

  void record(std::string op, std::vector<Tensor> inputs, Tensor output, BackwardFn fn);

  // Seeds d(loss)/d(loss) = 1 and propagates. Gradients of leaf tensors
  // accumulate across calls; intermediate gradients are reset each call.
  void backward(const Tensor& loss);

  void clear() { entries_.clear(); }
  std::size_t size() const { return entries_.size(); }
  const std::vector<Entry>& entries() const { return entries_; }

 private:
  std::vector<Entry> entries_;
};

// Makes `tape` the recording target for ops on this thread while alive.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

// Suspends recording on this thread (inference, finite differences).
class NoGradScope {
 public:
  NoGradScope();
  ~NoGradScope();
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Tape* previous_;
};

Tape* active_tape();

// backward() on the active tape of this thread.
void backward(const Tensor& loss);

}  // namespace dcnet
