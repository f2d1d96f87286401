#pragma once

#include <functional>
#include <vector>

#include "relmod/tensor.hpp"

namespace relmod {

/// Ordered record of executed primitive ops. backward() replays the
/// recorded steps in exact reverse execution order, accumulating
/// gradients additively into every requires_grad tensor that fed an op.
///
/// A tape constructed with recording=false never records anything;
/// ops run through it behave as pure forward evaluation (eval mode).
class Tape {
 public:
  explicit Tape(bool recording = true) : recording_(recording) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return recording_; }
  std::size_t size() const { return steps_.size(); }

  /// Registers the backward rule of one primitive op.
  void record(std::function<void()> step);

  /// Seeds d(loss)/d(loss) = 1 and replays all backward rules in reverse.
  /// loss must be a one-element tensor produced under this tape.
  /// Calling backward a second time without reset() is an error.
  void backward(const Tensor& loss);

  /// Clears the recorded steps so the tape can be reused.
  void reset();

 private:
  std::vector<std::function<void()>> steps_;
  bool recording_;
  bool consumed_ = false;
};

}  // namespace relmod
