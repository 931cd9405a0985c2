#include "minitrain/mltp.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>

#include "minitrain/log.hpp"

namespace minitrain {

TaskSplit split_tasks(const Dataset& ds, std::uint64_t seed) {
  const auto counts = ds.class_counts();
  std::size_t per_class = 0;
  bool first = true;
  for (std::size_t c = 0; c < counts.size(); ++c) {
    if (counts[c] == 0) continue;
    if (counts[c] < 2) {
      throw DataError("class " + std::to_string(c) + " has " + std::to_string(counts[c]) +
                      " sample(s); a task split needs at least 2");
    }
    const std::size_t half = counts[c] / 2;
    if (counts[c] % 2 != 0) {
      warn("class " + std::to_string(c) + " has an odd count; dropping one sample from the split");
    }
    if (first) {
      per_class = half;
      first = false;
    } else if (half != per_class) {
      warn("classes are unbalanced; tasks take " + std::to_string(std::min(per_class, half)) +
           " per class");
      per_class = std::min(per_class, half);
    }
  }
  if (first) throw DataError("cannot split an empty dataset");

  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < ds.size(); ++i) by_class[ds.labels[i]].push_back(i);

  std::mt19937_64 rng(seed);
  std::vector<std::size_t> a;
  std::vector<std::size_t> b;
  for (auto& [label, idx] : by_class) {
    std::shuffle(idx.begin(), idx.end(), rng);
    a.insert(a.end(), idx.begin(), idx.begin() + per_class);
    b.insert(b.end(), idx.begin() + per_class, idx.begin() + 2 * per_class);
  }

  TaskSplit split;
  split.per_class_per_task = per_class;
  split.seed = seed;
  split.tasks.push_back(select_records(ds, a));
  split.tasks.push_back(select_records(ds, b));
  return split;
}

void MltpConfig::validate() const {
  if (inner_steps < 1) throw ConfigError("mltp inner_steps must be >= 1");
  if (meta_iterations < 1) throw ConfigError("mltp meta_iterations must be >= 1");
  if (!(beta > 0.0 && beta <= 1.0)) throw ConfigError("mltp beta must lie in (0, 1]");
  if (batch_size < 1) throw ConfigError("mltp batch_size must be >= 1");
  inner_optimizer.validate();
}

template <typename T>
InnerResult<T> inner_loop(const Learner<T>& shared, const Dataset& task, const MltpConfig& cfg,
                          OptState<T>& state, const ChannelStats& stats, std::size_t round) {
  if (task.size() == 0) throw DataError("empty task");
  InnerResult<T> result;
  result.adapted = shared.clone();
  Learner<T>& learner = *result.adapted;

  const std::size_t nb = (task.size() + cfg.batch_size - 1) / cfg.batch_size;
  std::size_t cached_epoch = static_cast<std::size_t>(-1);
  std::vector<std::vector<std::size_t>> batches;
  double loss_sum = 0.0;
  for (std::size_t s = 0; s < cfg.inner_steps; ++s) {
    const std::size_t g = round * cfg.inner_steps + s;
    const std::size_t epoch = g / nb;
    const std::size_t b = g % nb;
    if (epoch != cached_epoch) {
      batches = make_batches(task.size(), cfg.batch_size, true, cfg.seed, epoch);
      cached_epoch = epoch;
    }
    std::optional<std::uint64_t> aug;
    if (cfg.augment) aug = stream_seed(cfg.seed, epoch, b);
    const Batch<T> batch = make_batch<T>(task, batches[b], stats, aug);
    const double lr = schedule_lr(cfg.inner_optimizer, g);
    loss_sum += optimizer_step(learner.params(), state, lr, cfg.inner_optimizer,
                               [&] { return learner.loss_and_grads(batch); });
  }
  result.mean_loss = loss_sum / static_cast<double>(cfg.inner_steps);
  return result;
}

template <typename T>
void meta_update(ParamSet<T>& shared, const std::vector<const ParamSet<T>*>& adapted,
                 double beta) {
  if (adapted.empty()) throw ConfigError("meta_update needs at least one adapted set");
  for (const auto* a : adapted) shared.check_compatible(*a);
  const double inv = 1.0 / static_cast<double>(adapted.size());
  for (std::size_t p = 0; p < shared.size(); ++p) {
    auto w = shared[p].tensor.data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      double mean = 0.0;
      for (const auto* a : adapted) mean += static_cast<double>((*a)[p].tensor.data()[i]);
      mean *= inv;
      w[i] = static_cast<T>((1.0 - beta) * static_cast<double>(w[i]) + beta * mean);
    }
  }
}

namespace {

template <typename T>
double delta_norm(const ParamSet<T>& from, const ParamSet<T>& to) {
  double acc = 0.0;
  for (std::size_t p = 0; p < from.size(); ++p) {
    const auto a = from[p].tensor.data();
    const auto b = to[p].tensor.data();
    for (std::size_t i = 0; i < a.size(); ++i) {
      const double d = static_cast<double>(b[i]) - static_cast<double>(a[i]);
      acc += d * d;
    }
  }
  return std::sqrt(acc);
}

}  // namespace

template <typename T>
MltpHistory mltp_train(Learner<T>& shared, const TaskSplit& split, const MltpConfig& cfg,
                       const ChannelStats& stats, BudgetClock* budget,
                       const std::vector<Tensor<T>>& recalibration_inputs,
                       const std::function<void(const MltpRound&)>& on_round) {
  cfg.validate();
  if (split.tasks.empty()) throw ConfigError("task split holds no tasks");

  std::vector<OptState<T>> states;
  for (std::size_t t = 0; t < split.tasks.size(); ++t) {
    states.push_back(OptState<T>::create(shared.params(), cfg.inner_optimizer));
  }

  auto now = [budget] {
    return budget != nullptr ? budget->elapsed() : BudgetClock::steady_seconds();
  };

  MltpHistory history;
  for (std::size_t r = 0; r < cfg.meta_iterations; ++r) {
    if (budget != nullptr && !budget->fits(budget->predicted_unit(cfg.first_round_estimate))) {
      history.stopped_by_budget = true;
      break;
    }
    const double t0 = now();
    const std::vector<OptState<T>> saved_states = states;

    MltpRound rec;
    rec.round = r;
    std::vector<InnerResult<T>> results;
    for (std::size_t t = 0; t < split.tasks.size(); ++t) {
      results.push_back(inner_loop(shared, split.tasks[t], cfg, states[t], stats, r));
      rec.task_losses.push_back(results.back().mean_loss);
    }
    if (budget != nullptr && budget->exhausted()) {
      states = saved_states;
      history.stopped_by_budget = true;
      history.rolled_back = true;
      break;
    }

    std::vector<const ParamSet<T>*> adapted;
    for (auto& res : results) {
      rec.delta_norms.push_back(delta_norm(shared.params(), res.adapted->params()));
      adapted.push_back(&res.adapted->params());
    }
    meta_update(shared.params(), adapted, cfg.beta);
    if (!recalibration_inputs.empty()) shared.recalibrate(recalibration_inputs);

    rec.wall_seconds = now() - t0;
    history.rounds.push_back(rec);
    if (on_round) on_round(rec);
    if (budget != nullptr) budget->observe_unit(now() - t0);
  }
  return history;
}

#define MINITRAIN_INSTANTIATE_MLTP(T)                                                          \
  template InnerResult<T> inner_loop(const Learner<T>&, const Dataset&, const MltpConfig&,   \
                                     OptState<T>&, const ChannelStats&, std::size_t);          \
  template void meta_update(ParamSet<T>&, const std::vector<const ParamSet<T>*>&, double);   \
  template MltpHistory mltp_train(Learner<T>&, const TaskSplit&, const MltpConfig&,           \
                                  const ChannelStats&, BudgetClock*,                          \
                                  const std::vector<Tensor<T>>&,                              \
                                  const std::function<void(const MltpRound&)>&);

MINITRAIN_INSTANTIATE_MLTP(float)
MINITRAIN_INSTANTIATE_MLTP(double)

}  // namespace minitrain
