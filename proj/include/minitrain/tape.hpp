#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <vector>

#include "minitrain/tensor.hpp"

namespace minitrain {

/// Records differentiable operations in execution order and replays their
/// backward rules in exact reverse order.
///
/// Constructing a Tape makes it the active tape of the calling thread for
/// element type T; the previous active tape is restored on destruction.
/// A tape can be consumed by backward() once.
template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void()>;

  Tape() : serial_(next_serial()), previous_(active_slot()) { active_slot() = this; }
  ~Tape() { active_slot() = previous_; }

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active() { return active_slot(); }

  /// Detaches the active tape for the lifetime of the guard, so ops run as
  /// plain forward computations.
  class Suspend {
   public:
    Suspend() : saved_(active_slot()) { active_slot() = nullptr; }
    ~Suspend() { active_slot() = saved_; }
    Suspend(const Suspend&) = delete;
    Suspend& operator=(const Suspend&) = delete;

   private:
    Tape* saved_;
  };

  /// True if an op with these inputs must be recorded on the active tape.
  static bool should_record(std::initializer_list<const Tensor<T>*> inputs) {
    Tape* tape = active();
    if (tape == nullptr || tape->consumed_) return false;
    for (const Tensor<T>* in : inputs) {
      if (in != nullptr && in->defined() && in->requires_grad()) return true;
    }
    return false;
  }

  /// Appends a node producing `output`. The backward rule reads
  /// output.grad() and accumulates into the inputs' gradient buffers.
  void record(Tensor<T>& output, BackwardFn backward) {
    if (consumed_) throw TapeError("cannot record on a consumed tape");
    output.impl().requires_grad = true;
    output.impl().tape_id = nodes_.size();
    output.impl().tape_serial = serial_;
    nodes_.push_back(Node{output, std::move(backward)});
  }

  /// Seeds d(loss)/d(loss) = 1 and runs every backward rule in reverse
  /// recording order, then releases the recorded graph.
  void backward(Tensor<T>& loss) {
    if (consumed_) throw TapeError("backward called twice on a consumed tape");
    if (loss.numel() != 1) {
      throw ShapeError("backward needs a scalar loss, got " + shape_str(loss.shape()));
    }
    if (!loss.tape_id() || loss.impl().tape_serial != serial_) {
      throw TapeError("loss was not produced on this tape");
    }
    consumed_ = true;
    loss.ensure_grad()[0] += T(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      if (!it->output.has_grad()) continue;
      it->backward();
    }
    for (auto& node : nodes_) {
      node.output.impl().tape_id.reset();
    }
    nodes_.clear();
    nodes_.shrink_to_fit();
  }

  std::size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }

 private:
  struct Node {
    Tensor<T> output;
    BackwardFn backward;
  };

  static Tape*& active_slot() {
    thread_local Tape* slot = nullptr;
    return slot;
  }
  static std::uint64_t next_serial() {
    static std::atomic<std::uint64_t> counter{1};
    return counter.fetch_add(1);
  }

  std::uint64_t serial_;
  Tape* previous_;
  bool consumed_ = false;
  std::vector<Node> nodes_;
};

/// Runs backward on the active tape.
template <typename T>
void backward(Tensor<T>& loss) {
  Tape<T>* tape = Tape<T>::active();
  if (tape == nullptr) throw TapeError("backward called without an active tape");
  tape->backward(loss);
}

}  // namespace minitrain
