#include "minitrain/harness.hpp"

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "minitrain/checkpoint.hpp"
#include "minitrain/digest.hpp"
#include "minitrain/log.hpp"
#include "minitrain/mltp.hpp"
#include "minitrain/optim.hpp"
#include "minitrain/whitening.hpp"

namespace minitrain {

namespace {

constexpr std::uint64_t kTestSubsetStream = 0x7E57;
constexpr std::uint64_t kWhiteningStream = 0x3417;
constexpr double kWhiteningEps = 1e-3;

std::size_t ceil_div(std::size_t a, std::size_t b) { return (a + b - 1) / b; }

}  // namespace

template <typename T>
std::vector<Batch<T>> make_eval_batches(const Dataset& ds, const ChannelStats& stats,
                                        std::size_t batch_size) {
  if (batch_size == 0) throw ConfigError("batch size must be positive");
  std::vector<Batch<T>> out;
  for (std::size_t start = 0; start < ds.size(); start += batch_size) {
    std::vector<std::size_t> idx(std::min(batch_size, ds.size() - start));
    std::iota(idx.begin(), idx.end(), start);
    out.push_back(make_batch<T>(ds, idx, stats, std::nullopt));
  }
  return out;
}

template <typename T>
double evaluate(Learner<T>& model, const std::vector<Batch<T>>& batches) {
  std::size_t total = 0;
  std::size_t correct = 0;
  for (const auto& batch : batches) {
    const Tensor<T> logits = model.predict(batch.inputs);
    const std::size_t k = logits.dim(1);
    const auto values = logits.data();
    for (std::size_t i = 0; i < batch.labels.size(); ++i) {
      const std::size_t pred = argmax_lowest<T>(values.subspan(i * k, k));
      if (static_cast<int>(pred) == batch.labels[i]) ++correct;
    }
    total += batch.labels.size();
  }
  if (total == 0) throw DataError("cannot evaluate on an empty test set");
  return 100.0 * static_cast<double>(correct) / static_cast<double>(total);
}

template <typename T>
std::string state_digest(const std::vector<std::pair<std::string, Tensor<T>>>& state) {
  Sha256 h;
  for (const auto& [name, tensor] : state) {
    h.update(name);
    h.update_u64(tensor.rank());
    for (std::size_t e : tensor.shape()) h.update_u64(e);
    h.update_values<T>(tensor.data());
  }
  return h.finish();
}

namespace {

template <typename T>
RunResult run_typed(const RunConfig& cfg, const Dataset& train_pool, const Dataset& test_pool,
                    const ConfigSources& sources, const RunHooks& hooks, BudgetClock& clock) {
  cfg.validate();
  if (!cfg.metrics_out.empty()) {
    preflight_writable(cfg.metrics_out);
    preflight_writable(manifest_path(cfg.metrics_out));
  }
  if (!cfg.checkpoint_out.empty()) preflight_writable(cfg.checkpoint_out);
  const std::string recipe = cfg.recipe();

  const Dataset train = sample_subset(train_pool, cfg.per_class, cfg.seed);
  const std::uint64_t test_seed = stream_seed(cfg.seed, 0, kTestSubsetStream);
  const Dataset test = cfg.test_per_class == 0
                           ? test_pool
                           : sample_subset(test_pool, cfg.test_per_class, test_seed);
  if (test.size() == 0) throw DataError("cannot evaluate on an empty test set");
  const ChannelStats stats = compute_channel_stats(train);

  ModelSpec spec;
  for (auto& w : spec.widths) {
    w = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(w * cfg.width)));
  }
  std::optional<WhiteningFilters> whitening;
  const std::uint64_t whitening_seed = stream_seed(cfg.seed, 0, kWhiteningStream);
  if (cfg.ip) {
    whitening = fit_whitening(train, stats, cfg.whitening_samples, kWhiteningEps, whitening_seed);
    spec.activation = Activation{ActivationKind::kCelu, cfg.celu_alpha()};
    spec.stem.kind = StemKind::kWhitened;
    spec.stem.filters = whitening->filters;
    spec.stem.expand_to = spec.widths[0];
  }
  ResNetLearner<T> learner(ResNet9<T>::build(spec, cfg.seed), cfg.label_smoothing());
  const std::string initial_digest = state_digest(learner.model().state());

  const std::size_t nb = ceil_div(train.size(), cfg.batch_size);
  OptConfig opt;
  opt.lr_peak = cfg.lr_peak;
  opt.momentum = cfg.momentum;
  opt.weight_decay = cfg.weight_decay();
  opt.rho = cfg.rho;
  opt.gc_enabled = cfg.gc;
  opt.sam_enabled = cfg.optimizer == OptimizerKind::kSam;
  opt.total_steps = std::max<std::size_t>(1, cfg.max_epochs * nb);
  opt.validate();

  const auto test_batches = make_eval_batches<T>(test, stats, cfg.batch_size);

  RunResult result;
  nlohmann::json mltp_rounds = nlohmann::json::array();
  auto emit = [&](const MetricsRecord& r) {
    result.records.push_back(r);
    if (!cfg.metrics_out.empty()) write_metrics(result.records, cfg.metrics_out);
    if (hooks.on_record) hooks.on_record(r);
  };

  const double eval_start = clock.elapsed();
  const double initial_accuracy = evaluate(learner, test_batches);
  const double eval_seconds = clock.elapsed() - eval_start;
  // A training epoch costs roughly three forward passes per image.
  const double first_estimate = 3.0 * eval_seconds * static_cast<double>(train.size()) /
                                static_cast<double>(test.size());

  auto save_diagnostic = [&] {
    std::filesystem::path path;
    if (!cfg.checkpoint_out.empty()) {
      path = cfg.checkpoint_out.string() + ".diagnostic";
    } else if (!cfg.metrics_out.empty()) {
      path = cfg.metrics_out.string() + ".diagnostic.ckpt";
    }
    if (path.empty()) return;
    try {
      save_checkpoint(learner.model(), path);
      warn("saved diagnostic checkpoint to " + path.string());
    } catch (const std::exception& e) {
      warn(std::string("could not save diagnostic checkpoint: ") + e.what());
    }
  };

  bool stopped = false;
  if (cfg.mltp && cfg.max_epochs > 0) {
    const TaskSplit split = split_tasks(train, cfg.seed);
    MltpConfig mc;
    const std::size_t task_size = split.tasks.front().size();
    mc.inner_steps =
        cfg.mltp_inner_steps > 0 ? cfg.mltp_inner_steps : ceil_div(task_size, cfg.batch_size);
    mc.meta_iterations = cfg.mltp_rounds > 0 ? cfg.mltp_rounds : cfg.max_epochs;
    mc.beta = cfg.mltp_beta;
    mc.batch_size = cfg.batch_size;
    mc.inner_optimizer = opt;
    mc.inner_optimizer.total_steps = mc.meta_iterations * mc.inner_steps;
    mc.augment = true;
    mc.seed = cfg.seed;
    mc.first_round_estimate = first_estimate;
    if (first_estimate > clock.remaining()) {
      warn("budget is shorter than one estimated meta-round (" + std::to_string(first_estimate) +
           " s)");
    }

    std::vector<Tensor<T>> recal;
    for (auto& b : make_eval_batches<T>(train, stats, cfg.batch_size)) recal.push_back(b.inputs);

    auto on_round = [&](const MltpRound& round) {
      const double acc = evaluate(learner, test_batches);
      double mean_loss = 0.0;
      for (double l : round.task_losses) mean_loss += l;
      mean_loss /= static_cast<double>(round.task_losses.size());
      const std::size_t last_step = (round.round + 1) * mc.inner_steps - 1;
      emit(MetricsRecord{round.round + 1, clock.elapsed(), mean_loss, acc,
                         schedule_lr(mc.inner_optimizer, last_step), recipe});
      mltp_rounds.push_back({{"round", round.round},
                             {"task_losses", round.task_losses},
                             {"delta_norms", round.delta_norms},
                             {"wall_seconds", round.wall_seconds}});
    };
    try {
      const MltpHistory history = mltp_train<T>(learner, split, mc, stats, &clock, recal, on_round);
      stopped = history.stopped_by_budget;
    } catch (const NumericError&) {
      save_diagnostic();
      throw;
    }
    result.epochs_completed = result.records.size();
  } else {
    OptState<T> state = OptState<T>::create(learner.params(), opt);
    std::size_t step = 0;
    for (std::size_t e = 1; e <= cfg.max_epochs; ++e) {
      if (!clock.fits(clock.predicted_unit(first_estimate))) {
        stopped = true;
        break;
      }
      const double start = clock.elapsed();
      const auto batches = make_batches(train.size(), cfg.batch_size, true, cfg.seed, e - 1);
      double loss_sum = 0.0;
      double lr = 0.0;
      for (std::size_t b = 0; b < batches.size(); ++b) {
        const Batch<T> batch =
            make_batch<T>(train, batches[b], stats, stream_seed(cfg.seed, e - 1, b));
        lr = schedule_lr(opt, step);
        try {
          loss_sum += optimizer_step(learner.params(), state, lr, opt,
                                     [&] { return learner.loss_and_grads(batch); });
        } catch (const NumericError&) {
          save_diagnostic();
          throw;
        }
        ++step;
        if (hooks.on_step) hooks.on_step(e, b);
      }
      const double acc = evaluate(learner, test_batches);
      const double end = clock.elapsed();
      clock.observe_unit(end - start);
      emit(MetricsRecord{e, end, loss_sum / static_cast<double>(batches.size()), acc, lr,
                         recipe});
      ++result.epochs_completed;
    }
  }

  if (result.records.empty()) {
    emit(MetricsRecord{0, clock.elapsed(), std::numeric_limits<double>::quiet_NaN(),
                       initial_accuracy, 0.0, recipe});
  }

  result.final_accuracy = result.records.back().test_accuracy;
  result.wall_seconds = clock.elapsed();
  result.longest_epoch = clock.longest_unit();
  result.stopped_by_budget = stopped;

  if (!cfg.checkpoint_out.empty()) save_checkpoint(learner.model(), cfg.checkpoint_out);

  nlohmann::json& m = result.manifest;
  m["library_version"] = kLibraryVersion;
  m["recipe"] = recipe;
  m["config"] = cfg.to_json();
  nlohmann::json src;
  src["config_file"] = sources.config_file ? sources.config_file->string() : "";
  src["file_values"] = sources.file_values;
  src["flag_values"] = sources.flag_values;
  m["config_sources"] = src;
  m["seeds"] = {{"run", cfg.seed},
                {"train_subset", cfg.seed},
                {"test_subset", test_seed},
                {"whitening", whitening_seed},
                {"init", cfg.seed},
                {"batches", cfg.seed}};
  m["data"] = {{"train_source_digest", train_pool.source_digest},
               {"test_source_digest", test_pool.source_digest},
               {"train_subset_size", train.size()},
               {"test_subset_size", test.size()},
               {"train_subset_digest", dataset_digest(train)},
               {"test_subset_digest", dataset_digest(test)}};
  m["channel_stats"] = {{"mean", stats.mean}, {"std", stats.std}};
  m["model"] = nlohmann::json::parse(model_spec_to_json(spec));
  m["label_smoothing"] = cfg.label_smoothing();
  if (whitening) {
    m["whitening"] = {{"fit_digest", whitening->fit_digest},
                      {"eps", whitening->eps},
                      {"samples", cfg.whitening_samples},
                      {"eigenvalues", whitening->eigvals}};
  } else {
    m["whitening"] = nullptr;
  }
  m["initial_weights_digest"] = initial_digest;
  m["final_weights_digest"] = state_digest(learner.model().state());
  m["optimizer"] = {{"kind", opt.sam_enabled ? "sam" : "sgd"},
                    {"lr_peak", opt.lr_peak},
                    {"momentum", opt.momentum},
                    {"weight_decay", opt.weight_decay},
                    {"rho", opt.rho},
                    {"gc", opt.gc_enabled},
                    {"schedule", "one-cycle"},
                    {"warmup_fraction", opt.warmup_fraction},
                    {"total_steps", opt.total_steps}};
  if (cfg.mltp) m["mltp_rounds"] = mltp_rounds;
  m["results"] = {{"final_accuracy", result.final_accuracy},
                  {"initial_accuracy", initial_accuracy},
                  {"epochs_completed", result.epochs_completed},
                  {"wall_seconds", result.wall_seconds},
                  {"longest_epoch_seconds", result.longest_epoch},
                  {"stopped_by_budget", result.stopped_by_budget},
                  {"budget_seconds", cfg.budget_seconds}};
  if (!cfg.metrics_out.empty()) {
    write_metrics(result.records, cfg.metrics_out);
    write_manifest(m, manifest_path(cfg.metrics_out));
  }
  return result;
}

}  // namespace

RunResult run_training(const RunConfig& cfg, const Dataset& train_pool, const Dataset& test_pool,
                       const ConfigSources& sources, const RunHooks& hooks, BudgetClock* clock) {
  std::optional<BudgetClock> local;
  if (clock == nullptr) {
    local.emplace(cfg.budget_seconds,
                  hooks.time_source ? hooks.time_source : &BudgetClock::steady_seconds);
    clock = &*local;
  }
  if (cfg.precision == 64) {
    return run_typed<double>(cfg, train_pool, test_pool, sources, hooks, *clock);
  }
  return run_typed<float>(cfg, train_pool, test_pool, sources, hooks, *clock);
}

RunResult run_from_config(const RunConfig& cfg, const ConfigSources& sources) {
  BudgetClock clock(cfg.budget_seconds);
  if (cfg.data_dir.empty()) {
    throw ConfigError("no data directory: pass --data-dir or set CIFAR_DIR");
  }
  const Dataset train = load_cifar_split(cfg.data_dir, Split::kTrain);
  const Dataset test = load_cifar_split(cfg.data_dir, Split::kTest);
  return run_training(cfg, train, test, sources, {}, &clock);
}

std::filesystem::path recipe_path(const std::filesystem::path& base, const std::string& recipe) {
  if (base.empty()) return base;
  std::string tag = recipe;
  std::replace(tag.begin(), tag.end(), '+', '_');
  std::filesystem::path out = base;
  out.replace_filename(base.stem().string() + "." + tag + base.extension().string());
  return out;
}

std::vector<RecipeSummary> recipe_matrix(const RunConfig& base,
                                         const std::vector<std::string>& recipes,
                                         const Dataset& train_pool, const Dataset& test_pool,
                                         const RunHooks& hooks) {
  std::vector<RecipeSummary> rows;
  for (const auto& recipe : recipes) {
    RecipeSummary row;
    row.recipe = recipe;
    try {
      RunConfig cfg = base;
      apply_recipe(cfg, recipe);
      cfg.metrics_out = recipe_path(base.metrics_out, recipe);
      cfg.checkpoint_out = recipe_path(base.checkpoint_out, recipe);
      const RunResult r = run_training(cfg, train_pool, test_pool, {}, hooks);
      row.ok = true;
      row.final_accuracy = r.final_accuracy;
      row.epochs = r.epochs_completed;
      row.wall_seconds = r.wall_seconds;
    } catch (const std::exception& e) {
      row.ok = false;
      row.error = e.what();
      warn("recipe " + recipe + " failed: " + e.what());
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string format_recipe_table(const std::vector<RecipeSummary>& rows) {
  std::ostringstream out;
  char line[256];
  std::snprintf(line, sizeof line, "%-16s %-7s %12s %8s %12s\n", "recipe", "status",
                "accuracy(%)", "epochs", "wall(s)");
  out << line;
  for (const auto& r : rows) {
    if (r.ok) {
      std::snprintf(line, sizeof line, "%-16s %-7s %12.2f %8zu %12.1f\n", r.recipe.c_str(), "ok",
                    r.final_accuracy, r.epochs, r.wall_seconds);
      out << line;
    } else {
      std::snprintf(line, sizeof line, "%-16s %-7s %s\n", r.recipe.c_str(), "failed",
                    r.error.c_str());
      out << line;
    }
  }
  return out.str();
}

#define MINITRAIN_INSTANTIATE_HARNESS(T)                                                    \
  template std::vector<Batch<T>> make_eval_batches(const Dataset&, const ChannelStats&,   \
                                                   std::size_t);                          \
  template double evaluate(Learner<T>&, const std::vector<Batch<T>>&);                    \
  template std::string state_digest(const std::vector<std::pair<std::string, Tensor<T>>>&);

MINITRAIN_INSTANTIATE_HARNESS(float)
MINITRAIN_INSTANTIATE_HARNESS(double)

void retain_freed_memory() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, -1);
#endif
}

}  // namespace minitrain
