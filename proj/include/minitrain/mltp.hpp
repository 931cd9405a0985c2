#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "minitrain/budget.hpp"
#include "minitrain/cifar.hpp"
#include "minitrain/learner.hpp"
#include "minitrain/optim.hpp"
#include "minitrain/preprocess.hpp"

namespace minitrain {

/// Disjoint class-balanced tasks whose union is the input subset (minus any
/// odd per-class remainder).
struct TaskSplit {
  std::vector<Dataset> tasks;
  std::size_t per_class_per_task = 0;
  std::uint64_t seed = 0;
};

/// Halves every class present in `ds` after a seeded shuffle.
TaskSplit split_tasks(const Dataset& ds, std::uint64_t seed);

struct MltpConfig {
  std::size_t inner_steps = 1;
  double beta = 0.5;  // outer interpolation rate, in (0, 1]
  std::size_t meta_iterations = 1;
  std::size_t batch_size = 256;
  // lr_peak and schedule drive the inner learning rate; total_steps should
  // span meta_iterations * inner_steps.
  OptConfig inner_optimizer;
  bool augment = true;
  std::uint64_t seed = 0;
  // Predicted duration of the first round, before any has been timed.
  double first_round_estimate = 0.0;

  void validate() const;
};

template <typename T>
struct InnerResult {
  std::unique_ptr<Learner<T>> adapted;
  double mean_loss = 0.0;
};

/// Runs inner_steps updates on a deep copy of `shared`. Step s of round r
/// is global step g = r * inner_steps + s; it uses batch g % nb of epoch
/// g / nb (nb batches per task epoch) and learning rate schedule_lr(g).
/// `state` carries the task's momentum across rounds.
template <typename T>
InnerResult<T> inner_loop(const Learner<T>& shared, const Dataset& task, const MltpConfig& cfg,
                          OptState<T>& state, const ChannelStats& stats, std::size_t round);

/// w ← (1 − β)·w + β·mean_t(w_t), i.e. w + β·mean_t(w_t − w).
template <typename T>
void meta_update(ParamSet<T>& shared, const std::vector<const ParamSet<T>*>& adapted,
                 double beta);

struct MltpRound {
  std::size_t round = 0;
  std::vector<double> task_losses;
  std::vector<double> delta_norms;  // ‖w_t − w‖ per task, before the update
  double wall_seconds = 0.0;
};

struct MltpHistory {
  std::vector<MltpRound> rounds;
  bool stopped_by_budget = false;
  bool rolled_back = false;
};

/// Meta-rounds of {inner_loop per task from the shared weights; meta_update}.
/// A round starts only if its predicted duration fits the budget; if the
/// budget runs out during the inner loops the round is discarded. After
/// each completed round the learner's normalization statistics are
/// re-estimated from `recalibration_inputs`, then `on_round` runs. Round
/// durations (including on_round) are read from the budget clock.
template <typename T>
MltpHistory mltp_train(Learner<T>& shared, const TaskSplit& split, const MltpConfig& cfg,
                       const ChannelStats& stats, BudgetClock* budget,
                       const std::vector<Tensor<T>>& recalibration_inputs,
                       const std::function<void(const MltpRound&)>& on_round = {});

}  // namespace minitrain
