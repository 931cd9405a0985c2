// Acceptance runner: one PASS/FAIL/SKIP line per criterion.
//
//   minitrain_acceptance [--only N] [--cifar-dir DIR] [--extended]
//
// Exit status with --only: 0 pass, 1 fail, 77 skip. Without --only every
// criterion runs and the status is 1 if any gating criterion failed.

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "fixtures.hpp"
#include "minitrain/grad_check.hpp"
#include "minitrain/harness.hpp"
#include "minitrain/log.hpp"
#include "minitrain/mltp.hpp"
#include "minitrain/ops.hpp"
#include "minitrain/optim.hpp"
#include "minitrain/resnet9.hpp"
#include "minitrain/whitening.hpp"

using namespace minitrain;
using fixtures::random_tensor;
namespace fs = std::filesystem;

namespace {

constexpr int kSkipCode = 77;

enum class Status { kPass, kFail, kSkip };

struct Outcome {
  Status status = Status::kPass;
  std::string detail;
};

struct Context {
  fs::path cifar_dir;
  bool extended = false;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// Collects named checks; the criterion fails if any check fails.
struct Checks {
  std::vector<std::string> failed;
  std::vector<std::string> notes;
  void expect(bool ok, const std::string& what) {
    if (!ok) failed.push_back(what);
  }
  Outcome outcome() const {
    Outcome o;
    o.status = failed.empty() ? Status::kPass : Status::kFail;
    const auto& list = failed.empty() ? notes : failed;
    for (std::size_t i = 0; i < list.size(); ++i) o.detail += (i ? "; " : "") + list[i];
    return o;
  }
};

// ---------------------------------------------------------------- 1

Tensor<double> contract(const Tensor<double>& y, std::uint64_t seed) {
  static thread_local std::vector<Tensor<double>> keep;
  Tensor<double> r = random_tensor<double>(y.shape(), seed);
  keep.push_back(r);
  return sum(mul(y, r));
}

Tensor<double> away_from_zero(Shape shape, std::uint64_t seed, double gap) {
  Tensor<double> t = random_tensor<double>(shape, seed);
  for (auto& v : t.data()) v = v >= 0 ? v + gap : v - gap;
  return t;
}

Tensor<double> distinct_values(Shape shape, std::uint64_t seed) {
  Tensor<double> t(shape);
  std::vector<double> v(t.numel());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = 0.01 * static_cast<double>(i);
  std::mt19937_64 rng(seed);
  std::shuffle(v.begin(), v.end(), rng);
  std::copy(v.begin(), v.end(), t.data().begin());
  return t;
}

ModelSpec grad_spec(bool whitened) {
  ModelSpec spec;
  spec.widths = {4, 6, 6, 8};
  spec.image_size = 8;
  if (whitened) {
    spec.activation = Activation{ActivationKind::kCelu, 0.3};
    spec.stem.kind = StemKind::kWhitened;
    spec.stem.expand_to = 4;
    std::mt19937_64 rng(5);
    std::normal_distribution<double> d(0.0, 0.5);
    spec.stem.filters.resize(kWhiteningFilterValues);
    for (auto& v : spec.stem.filters) v = d(rng);
  }
  return spec;
}

Outcome criterion_gradients(const Context&) {
  constexpr double kSmooth = 1e-6, kKink = 1e-4;
  constexpr double kLinearStep = 1e-3, kCurvedStep = 1e-4, kKinkStep = 1e-6;
  const auto start = std::chrono::steady_clock::now();
  Checks c;
  std::size_t cases = 0;
  auto run = [&](const std::string& name, double tol, const std::function<GradCheckReport(std::uint64_t)>& f,
                 std::uint64_t seeds = 20) {
    double worst = 0.0;
    for (std::uint64_t s = 0; s < seeds; ++s) {
      const auto r = f(s);
      worst = std::max(worst, r.max_rel_error);
      ++cases;
    }
    c.expect(worst <= tol, name + " rel err " + fmt("%.2e", worst));
  };

  run("conv2d", kSmooth, [&](std::uint64_t s) {
    auto x = random_tensor<double>(Shape{2, 3, 6, 5}, 100 + s);
    auto w = random_tensor<double>(Shape{4, 3, 3, 3}, 200 + s);
    auto b = random_tensor<double>(Shape{4}, 300 + s);
    const std::size_t stride = 1 + s % 2, pad = s % 3 == 0 ? 0 : 1;
    return grad_check<double>([&] { return contract(conv2d(x, w, &b, stride, pad), s); }, {x, w, b},
                              kLinearStep, kSmooth);
  });
  run("linear", kSmooth, [&](std::uint64_t s) {
    auto x = random_tensor<double>(Shape{4, 6}, 100 + s);
    auto w = random_tensor<double>(Shape{3, 6}, 200 + s);
    auto b = random_tensor<double>(Shape{3}, 300 + s);
    return grad_check<double>([&] { return contract(linear(x, w, &b), s); }, {x, w, b}, kLinearStep,
                              kSmooth);
  });
  run("batchnorm train", kSmooth, [&](std::uint64_t s) {
    auto x = random_tensor<double>(Shape{3, 2, 3, 3}, 100 + s, -2, 2);
    auto g = random_tensor<double>(Shape{2}, 200 + s, 0.5, 1.5);
    auto b = random_tensor<double>(Shape{2}, 300 + s);
    auto st = BatchNormState<double>::create(2);
    return grad_check<double>([&] { return contract(batchnorm2d(x, g, b, st, Mode::kTrain), s); },
                              {x, g, b}, kCurvedStep, kSmooth);
  });
  run("batchnorm eval", kSmooth, [&](std::uint64_t s) {
    auto x = random_tensor<double>(Shape{2, 2, 2, 2}, 100 + s);
    auto g = random_tensor<double>(Shape{2}, 200 + s);
    auto b = random_tensor<double>(Shape{2}, 300 + s);
    auto st = BatchNormState<double>::create(2);
    st.running_var.data()[1] = 2.5;
    st.running_mean.data()[0] = -0.3;
    return grad_check<double>([&] { return contract(batchnorm2d(x, g, b, st, Mode::kEval), s); },
                              {x, g, b}, kLinearStep, kSmooth);
  });
  run("celu", kSmooth, [&](std::uint64_t s) {
    auto x = away_from_zero(Shape{3, 7}, 100 + s, 0.01);
    return grad_check<double>([&] { return contract(celu(x, s % 2 ? 1.0 : 0.3), s); }, {x},
                              kCurvedStep, kSmooth);
  });
  run("add/mul/scale", kSmooth, [&](std::uint64_t s) {
    auto a = random_tensor<double>(Shape{2, 5}, 100 + s);
    auto b = random_tensor<double>(Shape{2, 5}, 200 + s);
    return grad_check<double>(
        [&] { return add(contract(add(a, b), s), add(contract(mul(a, b), s + 1), contract(scale(a, -0.125), s + 2))); },
        {a, b}, kLinearStep, kSmooth);
  });
  run("smoothed cross entropy", kSmooth, [&](std::uint64_t s) {
    auto z = random_tensor<double>(Shape{4, 10}, 100 + s, -1.5, 1.5);
    const std::vector<int> labels{static_cast<int>(s % 10), 9, 0, static_cast<int>((s * 3) % 10)};
    return grad_check<double>([&] { return smoothed_cross_entropy(z, labels, s % 2 ? 0.1 : 0.0).loss; },
                              {z}, kCurvedStep, kSmooth);
  });
  run("relu", kKink, [&](std::uint64_t s) {
    auto x = away_from_zero(Shape{4, 6}, 100 + s, 0.01);
    return grad_check<double>([&] { return contract(relu(x), s); }, {x}, kKinkStep, kKink);
  });
  run("maxpool", kKink, [&](std::uint64_t s) {
    auto x = distinct_values(Shape{2, 2, 6, 6}, 100 + s);
    return grad_check<double>([&] { return contract(maxpool2d(x, 2, 2), s); }, {x}, kKinkStep, kKink);
  });
  run("global maxpool", kKink, [&](std::uint64_t s) {
    auto x = distinct_values(Shape{2, 3, 3, 3}, 200 + s);
    return grad_check<double>([&] { return contract(global_maxpool(x), s); }, {x}, kKinkStep, kKink);
  });
  for (bool whitened : {true, false}) {
    run(whitened ? "resnet9 loss (celu, whitened stem)" : "resnet9 loss (relu)", kKink,
        [&](std::uint64_t s) {
          auto model = ResNet9<double>::build(grad_spec(whitened), 7 + s);
          auto x = random_tensor<double>(Shape{4, 3, 8, 8}, 33 + s);
          const std::vector<int> labels{0, 3, 7, 9};
          std::vector<Tensor<double>> params;
          for (auto& e : model.params()) params.push_back(e.tensor);
          GradCheckOptions opts;
          opts.samples = 400;
          opts.seed = s;
          return grad_check<double>(
              [&] {
                return smoothed_cross_entropy(model.forward(x, Mode::kTrain), labels,
                                              whitened ? 0.1 : 0.0)
                    .loss;
              },
              params, kKinkStep, kKink, opts);
        },
        3);
  }
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  c.expect(secs < 120.0, "runtime " + fmt("%.1f s", secs) + " over the 2 minute target");
  c.notes.push_back(std::to_string(cases) + " checks, smooth 1e-6 / kinked 1e-4");
  return c.outcome();
}

// ---------------------------------------------------------------- 2

Outcome criterion_optimizer(const Context&) {
  Checks c;
  // (a) centralization
  {
    ParamSet<double> p;
    p.add("conv", random_tensor<double>(Shape{8, 4, 3, 3}, 1));
    auto g = random_tensor<double>(Shape{8, 4, 3, 3}, 2, -3, 5);
    auto dst = p[0].tensor.ensure_grad();
    std::copy(g.data().begin(), g.data().end(), dst.begin());
    centralize_gradients(p);
    double worst = 0.0;
    for (std::size_t o = 0; o < 8; ++o) {
      double m = 0.0;
      for (std::size_t i = 0; i < 36; ++i) m += p[0].tensor.grad()[o * 36 + i];
      worst = std::max(worst, std::abs(m / 36.0));
    }
    const std::vector<double> once(p[0].tensor.grad().begin(), p[0].tensor.grad().end());
    centralize_gradients(p);
    double drift = 0.0;
    for (std::size_t i = 0; i < once.size(); ++i) drift = std::max(drift, std::abs(once[i] - p[0].tensor.grad()[i]));
    c.expect(worst <= 1e-12, "GC slice mean " + fmt("%.1e", worst));
    c.expect(drift <= 1e-12, "GC not idempotent " + fmt("%.1e", drift));
    c.notes.push_back("GC mean " + fmt("%.0e", worst));
  }
  // (b) SAM closed form: L = w², w = 1
  {
    ParamSet<double> p;
    p.add("w", Tensor<double>(Shape{1}, 1.0));
    p.zero_grad();
    OptConfig cfg;
    cfg.schedule = Schedule::kConstant;
    cfg.momentum = 0.0;
    cfg.sam_enabled = true;
    cfg.rho = 0.05;
    auto st = OptState<double>::create(p, cfg);
    sam_step(p, st, 0.1, cfg, [&] {
      const double w = p[0].tensor.data()[0];
      p[0].tensor.grad()[0] += 2.0 * w;
      return w * w;
    });
    const double w = p[0].tensor.data()[0];
    c.expect(std::abs(w - 0.79) <= 1e-8, "SAM closed form gave " + fmt("%.12f", w));
    c.notes.push_back("SAM w'=" + fmt("%.10f", w));
  }
  // (c) rho = 0 SAM against SGD, bit for bit
  {
    auto traj = [](bool sam) {
      ModelSpec spec;
      spec.widths = {4, 8, 8, 8};
      spec.image_size = 8;
      auto model = ResNet9<float>::build(spec, 21);
      auto x = random_tensor<float>(Shape{6, 3, 8, 8}, 22);
      const std::vector<int> labels{0, 1, 2, 3, 4, 5};
      OptConfig cfg;
      cfg.sam_enabled = sam;
      cfg.rho = 0.0;
      cfg.weight_decay = 5e-4;
      cfg.gc_enabled = true;
      cfg.total_steps = 10;
      auto st = OptState<float>::create(model.params(), cfg);
      std::vector<float> out;
      for (std::size_t s = 0; s < 10; ++s) {
        optimizer_step(model.params(), st, schedule_lr(cfg, s + 1), cfg, [&] {
          Tape<float> tape;
          auto ce = smoothed_cross_entropy(model.forward(x, Mode::kTrain), labels, 0.1);
          tape.backward(ce.loss);
          return static_cast<double>(ce.loss.item());
        });
        for (const auto& e : model.params()) out.insert(out.end(), e.tensor.data().begin(), e.tensor.data().end());
      }
      return out;
    };
    const auto a = traj(false), b = traj(true);
    c.expect(a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0,
             "rho=0 SAM diverged from SGD");
    c.notes.push_back("rho=0 bit-identical over 10 steps");
  }
  // (d) decay-only step
  {
    ParamSet<double> p;
    p.add("w", Tensor<double>(Shape{1, 1}, 1.0));
    p.zero_grad();
    OptConfig cfg;
    cfg.schedule = Schedule::kConstant;
    cfg.momentum = 0.0;
    cfg.weight_decay = 0.0005;
    auto st = OptState<double>::create(p, cfg);
    sgd_step(p, st, 0.1, cfg);
    const double w = p[0].tensor.data()[0];
    c.expect(std::abs(w - 0.9999) <= 1e-15, "decay step gave " + fmt("%.17g", w));
    c.notes.push_back("decay step " + fmt("%.6f", w));
  }
  return c.outcome();
}

// ---------------------------------------------------------------- 3

Outcome criterion_label_smoothing(const Context&) {
  Checks c;
  std::vector<int> labels(10);
  for (int i = 0; i < 10; ++i) labels[i] = (i * 7) % 10;
  const auto t = smoothed_targets<double>(labels, 0.1, 10);
  double worst = 0.0, row_err = 0.0;
  for (std::size_t r = 0; r < labels.size(); ++r) {
    double row = 0.0;
    for (int k = 0; k < 10; ++k) {
      const double v = t.data()[r * 10 + k];
      row += v;
      worst = std::max(worst, std::abs(v - (k == labels[r] ? 0.91 : 0.01)));
    }
    row_err = std::max(row_err, std::abs(row - 1.0));
  }
  c.expect(worst <= 1e-15, "target deviation " + fmt("%.1e", worst));
  c.expect(row_err <= 1e-12, "row sum deviation " + fmt("%.1e", row_err));
  c.notes.push_back("targets 0.91/0.01 (max dev " + fmt("%.0e", worst) + "), rows sum to 1 within " +
                    fmt("%.0e", row_err));
  return c.outcome();
}

// ---------------------------------------------------------------- 4

Outcome criterion_whitening(const Context&) {
  Checks c;
  const auto ds = fixtures::synthetic_cifar(20, 6);
  const auto stats = compute_channel_stats(ds);
  const std::size_t count = 20000;
  const auto patches = sample_patches(ds, stats, count, 8);
  const auto w = fit_whitening_from_patches(patches, count, 1e-3);
  std::vector<double> proj(count * kPatchDim);
  for (std::size_t r = 0; r < count; ++r)
    for (std::size_t i = 0; i < kPatchDim; ++i) {
      double acc = 0.0;
      for (std::size_t j = 0; j < kPatchDim; ++j) acc += w.filters[i * kPatchDim + j] * patches[r * kPatchDim + j];
      proj[r * kPatchDim + i] = acc;
    }
  const auto cov = patch_covariance(proj, count);
  double off = 0.0;
  for (std::size_t i = 0; i < kPatchDim; ++i)
    for (std::size_t j = 0; j < kPatchDim; ++j)
      if (i != j) off = std::max(off, std::abs(cov[i * kPatchDim + j]));
  c.expect(off <= 1e-3, "off-diagonal " + fmt("%.2e", off));
  c.expect(std::is_sorted(w.eigvals.rbegin(), w.eigvals.rend()), "eigenvalues not descending");

  // Frozen stem through 100 SAM+GC+decay steps.
  ModelSpec spec;
  spec.widths = {4, 8, 8, 8};
  spec.image_size = 8;
  spec.activation = Activation{ActivationKind::kCelu, 0.3};
  spec.stem.kind = StemKind::kWhitened;
  spec.stem.filters = w.filters;
  spec.stem.expand_to = 4;
  auto model = ResNet9<float>::build(spec, 3);
  const std::vector<float> before(model.stem_filters().data().begin(), model.stem_filters().data().end());
  OptConfig cfg;
  cfg.sam_enabled = true;
  cfg.gc_enabled = true;
  cfg.weight_decay = 5e-4;
  cfg.total_steps = 100;
  auto st = OptState<float>::create(model.params(), cfg);
  for (std::size_t s = 0; s < 100; ++s) {
    auto x = random_tensor<float>(Shape{4, 3, 8, 8}, 1000 + s);
    const std::vector<int> labels{static_cast<int>(s % 10), 1, 2, 3};
    optimizer_step(model.params(), st, schedule_lr(cfg, s), cfg, [&] {
      Tape<float> tape;
      auto ce = smoothed_cross_entropy(model.forward(x, Mode::kTrain), labels, 0.1);
      tape.backward(ce.loss);
      return static_cast<double>(ce.loss.item());
    });
  }
  const auto after = model.stem_filters().data();
  c.expect(std::memcmp(before.data(), after.data(), before.size() * sizeof(float)) == 0,
           "stem filters changed during training");
  c.notes.push_back("max off-diagonal " + fmt("%.1e", off) + ", stem bit-unchanged after 100 steps");
  return c.outcome();
}

// ---------------------------------------------------------------- 5

Outcome criterion_oracles(const Context&) {
  Checks c;
  double worst = 0.0;
  for (std::uint64_t s = 0; s < 10; ++s) {
    const Shape xs{2, 3, 9, 7}, ws{5, 3, 3, 3};
    auto x = random_tensor<double>(xs, 10 + s);
    auto w = random_tensor<double>(ws, 20 + s);
    auto b = random_tensor<double>(Shape{5}, 30 + s);
    const std::size_t stride = 1 + s % 2, pad = s % 2;
    Shape os;
    std::vector<double> bv(b.data().begin(), b.data().end());
    const auto want = fixtures::naive_conv({x.data().begin(), x.data().end()}, xs,
                                           {w.data().begin(), w.data().end()}, ws, &bv, stride, pad, os);
    const auto got = conv2d(x, w, &b, stride, pad);
    for (std::size_t i = 0; i < want.size(); ++i) worst = std::max(worst, fixtures::rel_err(got.data()[i], want[i], 1e-12));

    auto p = random_tensor<double>(Shape{2, 3, 8, 8}, 40 + s);
    const auto pw = fixtures::naive_maxpool({p.data().begin(), p.data().end()}, p.shape(), 2, 2);
    const auto pg = maxpool2d(p, 2, 2);
    for (std::size_t i = 0; i < pw.size(); ++i) worst = std::max(worst, fixtures::rel_err(pg.data()[i], pw[i], 1e-12));

    auto lx = random_tensor<double>(Shape{5, 7}, 50 + s);
    auto lw = random_tensor<double>(Shape{4, 7}, 60 + s);
    auto lb = random_tensor<double>(Shape{4}, 70 + s);
    std::vector<double> lbv(lb.data().begin(), lb.data().end());
    const auto lwant = fixtures::naive_linear({lx.data().begin(), lx.data().end()}, 5, 7,
                                              {lw.data().begin(), lw.data().end()}, 4, &lbv);
    const auto lgot = linear(lx, lw, &lb);
    for (std::size_t i = 0; i < lwant.size(); ++i) worst = std::max(worst, fixtures::rel_err(lgot.data()[i], lwant[i], 1e-12));
  }
  c.expect(worst <= 1e-5, "conv/pool/linear rel err " + fmt("%.2e", worst));

  // MLTP two rounds on the linear fixture.
  const auto ds = fixtures::synthetic_cifar(4, 10);
  const auto stats = compute_channel_stats(ds);
  const auto split = split_tasks(ds, 21);
  MltpConfig cfg;
  cfg.inner_steps = 3;
  cfg.beta = 0.5;
  cfg.meta_iterations = 2;
  cfg.batch_size = 1000;
  cfg.augment = false;
  cfg.inner_optimizer.lr_peak = 0.5;
  cfg.inner_optimizer.momentum = 0.9;
  cfg.inner_optimizer.weight_decay = 0.01;
  cfg.inner_optimizer.schedule = Schedule::kConstant;
  fixtures::LinearLearner<double> learner(6);
  std::vector<double> init;
  for (const auto& e : learner.params()) init.insert(init.end(), e.tensor.data().begin(), e.tensor.data().end());
  std::vector<std::vector<double>> got;
  mltp_train<double>(learner, split, cfg, stats, nullptr, {}, [&](const MltpRound&) {
    std::vector<double> w;
    for (const auto& e : learner.params()) w.insert(w.end(), e.tensor.data().begin(), e.tensor.data().end());
    got.push_back(w);
  });
  const auto want = fixtures::reference_mltp_linear(split.tasks, stats, init, 2, 3, 0.5, 0.9, 0.01, 0.5);
  double mworst = got.size() == want.size() ? 0.0 : INFINITY;
  for (std::size_t r = 0; r < std::min(got.size(), want.size()); ++r)
    for (std::size_t j = 0; j < want[r].size(); ++j) mworst = std::max(mworst, fixtures::rel_err(got[r][j], want[r][j], 1e-9));
  c.expect(mworst <= 1e-6, "MLTP trajectory rel err " + fmt("%.2e", mworst));
  c.notes.push_back("ops rel err " + fmt("%.1e", worst) + ", MLTP rel err " + fmt("%.1e", mworst));
  return c.outcome();
}

// ---------------------------------------------------------------- 6, 7

RunConfig fixture_config() {
  RunConfig cfg;
  cfg.per_class = 10;
  cfg.test_per_class = 5;
  cfg.width = 0.125;
  cfg.batch_size = 32;
  cfg.budget_seconds = 1e9;
  cfg.whitening_samples = 2000;
  return cfg;
}

const Dataset& fixture_train() {
  static const Dataset ds = fixtures::synthetic_cifar(12, 101);
  return ds;
}
const Dataset& fixture_test() {
  static const Dataset ds = fixtures::synthetic_cifar(6, 202, Split::kTest);
  return ds;
}

Outcome criterion_budget(const Context&) {
  Checks c;
  auto quiet = set_warning_sink([](const std::string&) {});
  std::size_t runs = 0;
  // Fake clock: one second per optimizer step (4 per epoch), per MLTP round
  // four seconds charged at its record.
  for (bool mltp : {false, true}) {
    for (double budget : {3.0, 7.5, 13.0, 21.0}) {
      auto cfg = fixture_config();
      cfg.mltp = mltp;
      cfg.mltp_inner_steps = 2;
      cfg.max_epochs = 100;
      cfg.budget_seconds = budget;
      double now = 0.0;
      RunHooks hooks;
      hooks.time_source = [&] { return now; };
      hooks.on_step = [&](std::size_t, std::size_t) { now += 1.0; };
      if (mltp) hooks.on_record = [&](const MetricsRecord&) { now += 4.0; };
      const auto r = run_training(cfg, fixture_train(), fixture_test(), {}, hooks);
      c.expect(r.wall_seconds <= budget + r.longest_epoch,
               std::string(mltp ? "mltp" : "sgd") + " budget " + fmt("%g", budget) + " took " +
                   fmt("%g", r.wall_seconds));
      ++runs;
    }
  }
  // Real clock.
  {
    auto cfg = fixture_config();
    cfg.max_epochs = 100;
    cfg.budget_seconds = 2.0;
    const auto r = run_training(cfg, fixture_train(), fixture_test());
    c.expect(r.wall_seconds <= cfg.budget_seconds + r.longest_epoch,
             "steady clock run took " + fmt("%.2f s", r.wall_seconds));
    ++runs;
  }
  // Budget close to zero.
  {
    auto cfg = fixture_config();
    cfg.budget_seconds = 0.001;
    double now = 0.0;
    RunHooks hooks;
    hooks.time_source = [&] { return now += 0.01; };
    const auto r = run_training(cfg, fixture_train(), fixture_test(), {}, hooks);
    c.expect(r.records.size() == 1 && r.records[0].epoch == 0, "no evaluation record at budget 0.001");
    ++runs;
  }
  set_warning_sink(quiet);
  c.notes.push_back(std::to_string(runs) + " runs within budget + one epoch; epoch-0 record emitted");
  return c.outcome();
}

std::vector<std::string> loss_column(const fs::path& csv) {
  std::ifstream in(csv);
  std::string line;
  std::vector<std::string> out;
  std::getline(in, line);
  while (std::getline(in, line)) {
    std::stringstream ss(line);
    std::string cell;
    for (int i = 0; i < 3; ++i) std::getline(ss, cell, ',');
    out.push_back(cell);
  }
  return out;
}

Outcome criterion_determinism(const Context&) {
  Checks c;
  const auto dir = fs::temp_directory_path() / "minitrain_acceptance";
  fs::create_directories(dir);
  auto cfg = fixture_config();
  cfg.max_epochs = 10;
  cfg.deterministic = true;
  cfg.seed = 5;
  apply_recipe(cfg, "sam+ip");
  std::vector<std::vector<std::string>> cols;
  for (const char* name : {"a.csv", "b.csv"}) {
    cfg.metrics_out = dir / name;
    run_training(cfg, fixture_train(), fixture_test());
    cols.push_back(loss_column(cfg.metrics_out));
  }
  c.expect(cols[0].size() == 10, "expected 10 rows, got " + std::to_string(cols[0].size()));
  c.expect(cols[0] == cols[1], "train_loss columns differ");
  c.notes.push_back("10 train_loss values identical across two runs");
  return c.outcome();
}

// ---------------------------------------------------------------- 8, 9

struct CifarPools {
  Dataset train, test;
};

std::optional<CifarPools> load_cifar(const Context& ctx, std::string& why) {
  if (ctx.cifar_dir.empty()) {
    why = "CIFAR-10 not available (set CIFAR_DIR or --cifar-dir)";
    return std::nullopt;
  }
  try {
    return CifarPools{load_cifar_split(ctx.cifar_dir, Split::kTrain),
                      load_cifar_split(ctx.cifar_dir, Split::kTest)};
  } catch (const std::exception& e) {
    why = std::string("CIFAR-10 unreadable: ") + e.what();
    return std::nullopt;
  }
}

Outcome criterion_directional(const Context& ctx) {
  std::string why;
  const auto pools = load_cifar(ctx, why);
  if (!pools) return {Status::kSkip, why};
  double sums[2] = {0.0, 0.0};
  std::string per_seed;
  const char* recipes[2] = {"baseline", "sam+ip"};
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    for (int r = 0; r < 2; ++r) {
      RunConfig cfg;
      apply_recipe(cfg, recipes[r]);
      cfg.per_class = 100;
      cfg.width = 0.5;
      cfg.max_epochs = 15;
      cfg.batch_size = 128;
      cfg.budget_seconds = 1e9;
      cfg.seed = seed;
      const auto res = run_training(cfg, pools->train, pools->test);
      sums[r] += res.final_accuracy;
      per_seed += std::string(per_seed.empty() ? "" : ", ") + recipes[r] + "/" +
                  std::to_string(seed) + "=" + fmt("%.2f", res.final_accuracy);
      std::fprintf(stderr, "  criterion 8: %s seed %llu: %.2f%% in %.0f s\n", recipes[r],
                   static_cast<unsigned long long>(seed), res.final_accuracy, res.wall_seconds);
    }
  }
  const double base = sums[0] / 3.0, ip = sums[1] / 3.0;
  Checks c;
  c.expect(ip - base >= 2.0, "sam+ip " + fmt("%.2f", ip) + " vs baseline " + fmt("%.2f", base) +
                                 " (gap below 2 points)");
  c.expect(base >= 35.0, "baseline mean " + fmt("%.2f", base) + " below 35%");
  c.notes.push_back("baseline " + fmt("%.2f", base) + "%, sam+ip " + fmt("%.2f", ip) + "% [" +
                    per_seed + "]");
  auto o = c.outcome();
  if (o.status == Status::kFail) o.detail += " [" + per_seed + "]";
  return o;
}

Outcome criterion_extended(const Context& ctx) {
  if (!ctx.extended) return {Status::kSkip, "extended run not requested (--extended)"};
  std::string why;
  const auto pools = load_cifar(ctx, why);
  if (!pools) return {Status::kSkip, why};
  RunConfig cfg;
  apply_recipe(cfg, "sam+ip");
  cfg.max_epochs = 25;
  cfg.budget_seconds = 7200.0;
  const auto res = run_training(cfg, pools->train, pools->test);
  Checks c;
  c.expect(res.final_accuracy >= 60.0, "accuracy " + fmt("%.2f", res.final_accuracy) + "% below 60%");
  c.expect(res.epochs_completed == 25, std::to_string(res.epochs_completed) + " of 25 epochs within 2 hours");
  c.notes.push_back(fmt("%.2f", res.final_accuracy) + "% after " + std::to_string(res.epochs_completed) +
                    " epochs in " + fmt("%.0f s", res.wall_seconds));
  return c.outcome();
}

struct Criterion {
  int id;
  const char* title;
  bool gating;
  Outcome (*run)(const Context&);
};

const Criterion kCriteria[] = {
    {1, "gradient oracle suite", true, criterion_gradients},
    {2, "optimizer algebra", true, criterion_optimizer},
    {3, "label smoothing targets", true, criterion_label_smoothing},
    {4, "whitening", true, criterion_whitening},
    {5, "oracle equivalence", true, criterion_oracles},
    {6, "budget contract", true, criterion_budget},
    {7, "determinism", true, criterion_determinism},
    {8, "directional recipe comparison (CIFAR-10, 100/class)", true, criterion_directional},
    {9, "extended 5000-image run (non-gating)", false, criterion_extended},
};

}  // namespace

int main(int argc, char** argv) {
  minitrain::retain_freed_memory();
  CLI::App app{"minitrain acceptance criteria", "minitrain_acceptance"};
  int only = 0;
  std::string cifar_dir;
  bool extended = false;
  app.add_option("--only", only, "run a single criterion (1-9)")->check(CLI::Range(1, 9));
  app.add_option("--cifar-dir", cifar_dir, "CIFAR-10 binary directory (default: $CIFAR_DIR)");
  app.add_flag("--extended", extended, "also run criterion 9 (about two hours)");
  CLI11_PARSE(app, argc, argv);

  Context ctx;
  if (cifar_dir.empty()) {
    if (const char* env = std::getenv("CIFAR_DIR")) cifar_dir = env;
  }
  ctx.cifar_dir = cifar_dir;
  ctx.extended = extended;

  bool gating_failed = false;
  Status last = Status::kPass;
  for (const auto& cr : kCriteria) {
    if (only != 0 && cr.id != only) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = cr.run(ctx);
    } catch (const std::exception& e) {
      o = {Status::kFail, std::string("exception: ") + e.what()};
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const char* tag = o.status == Status::kPass ? "PASS" : o.status == Status::kFail ? "FAIL" : "SKIP";
    std::printf("criterion %d %s  %s: %s (%.1f s)\n", cr.id, tag, cr.title, o.detail.c_str(), secs);
    std::fflush(stdout);
    if (o.status == Status::kFail && cr.gating) gating_failed = true;
    last = o.status;
  }
  if (only != 0) {
    if (last == Status::kSkip) return kSkipCode;
    return last == Status::kFail ? 1 : 0;
  }
  return gating_failed ? 1 : 0;
}
