#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "o2na/tensor.hpp"

namespace o2na {

// Ordered record of differentiable operations.
//
// Ops append an entry (output + adjoint closure) when the tape is recording
// and at least one operand requires a gradient. backward() replays the
// entries in exact reverse order. Leaf gradients accumulate across calls;
// intermediate gradients are reset at the start of every backward pass.
class Tape {
 public:
  enum class Mode { kRecord, kInference };

  explicit Tape(Mode mode = Mode::kRecord) : mode_(mode) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return mode_ == Mode::kRecord; }

  // True when an op over these operands must be recorded.
  bool wants(std::initializer_list<const Tensor*> inputs) const;

  void record(Tensor output, std::function<void()> adjoint);

  void backward(const Tensor& loss);
  void clear() { entries_.clear(); }
  std::size_t size() const { return entries_.size(); }

 private:
  struct Entry {
    Tensor output;
    std::function<void()> adjoint;
  };

  Mode mode_;
  std::vector<Entry> entries_;
};

}  // namespace o2na
