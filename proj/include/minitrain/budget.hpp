#pragma once

#include <algorithm>
#include <chrono>
#include <functional>

namespace minitrain {

/// Wall-clock budget measured from construction on a monotonic clock.
///
/// Work is admitted in whole units (epochs, meta-rounds): a unit starts only
/// if its predicted duration fits in what remains. The prediction is the
/// longest unit observed so far, or a caller-supplied estimate before the
/// first one completes.
class BudgetClock {
 public:
  using TimeSource = std::function<double()>;

  static double steady_seconds() {
    using namespace std::chrono;
    return duration<double>(steady_clock::now().time_since_epoch()).count();
  }

  explicit BudgetClock(double budget_seconds, TimeSource source = &BudgetClock::steady_seconds)
      : budget_(budget_seconds), source_(std::move(source)), origin_(source_()) {}

  double budget() const { return budget_; }
  double elapsed() const { return source_() - origin_; }
  double remaining() const { return budget_ - elapsed(); }
  bool exhausted() const { return elapsed() >= budget_; }

  double predicted_unit(double first_estimate) const {
    return longest_ > 0.0 ? longest_ : first_estimate;
  }

  bool fits(double predicted_seconds) const {
    return predicted_seconds <= remaining() && !exhausted();
  }

  void observe_unit(double seconds) { longest_ = std::max(longest_, seconds); }
  double longest_unit() const { return longest_; }

 private:
  double budget_;
  TimeSource source_;
  double origin_;
  double longest_ = 0.0;
};

}  // namespace minitrain
