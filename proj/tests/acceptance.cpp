// Acceptance suite: prints one PASS/FAIL line per criterion and exits non-zero
// when any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "splab/dataset.hpp"
#include "splab/diagnostics.hpp"
#include "splab/experiment.hpp"
#include "splab/ghost.hpp"
#include "splab/masks.hpp"
#include "splab/model.hpp"
#include "splab/oracles.hpp"
#include "splab/rescale.hpp"
#include "splab/trainer.hpp"

using namespace splab;
namespace fs = std::filesystem;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

fs::path workdir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / "splab_acceptance" / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

Dataset teacher_images(std::uint64_t seed) {
  return make_synthetic({.name = "teacher", .n = 480, .classes = 4, .seed = seed, .input_shape = {1, 8, 8}});
}

Dataset spirals(std::uint64_t seed = 0) { return make_synthetic({.n = 1000, .classes = 2, .noise = 0.05, .seed = seed}); }

double mean(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

// 1 ------------------------------------------------------------------------
Verdict gradients() {
  auto checks = op_gradient_checks(1, 20, 1e-6);
  const auto models = model_gradient_checks(2, 1e-6);
  checks.insert(checks.end(), models.begin(), models.end());
  double worst = 0;
  std::string failed;
  for (const auto& c : checks) {
    worst = std::max(worst, c.error);
    if (!c.pass) failed += " " + c.name;
  }
  return {failed.empty(), fmt("%zu checks (%zu full models), worst rel err %.2e, tol 1e-6%s", checks.size(),
                              models.size(), worst, failed.empty() ? "" : (" failing:" + failed).c_str())};
}

// 2 ------------------------------------------------------------------------
Verdict hessians() {
  const auto checks = hessian_checks(3, 1e-3);
  double worst = 0;
  bool ok = !checks.empty();
  for (const auto& c : checks) {
    worst = std::max(worst, c.error);
    ok = ok && c.pass;
  }
  return {ok, fmt("%zu hvp/eigen checks on <= 20-parameter models, worst rel err %.2e, tol 1e-3", checks.size(), worst)};
}

// 3 ------------------------------------------------------------------------
Verdict mask_semantics() {
  const Dataset d = spirals();
  Model m = build_model(mlp_preset(2, {64, 64, 64}, 2), 0);
  const Mask mask = random_mask(m, 0.95, 0);
  TrainConfig cfg;
  cfg.batch_size = 64;
  cfg.gsk = cfg.gsw = cfg.lrsi = true;
  cfg.ls_alpha = 0.1;
  const TrainResult r = train(m, mask, d, cfg);
  double worst = 0;
  std::size_t masked = 0;
  for (const auto& b : m.blocks())
    for (std::size_t i = 0; i < b.value.size(); ++i)
      if (b.masked(i)) {
        ++masked;
        worst = std::max({worst, std::abs(b.value[i]), std::abs(b.momentum[i])});
      }
  bool ok = worst == 0.0 && r.history.size() == 60 && masked == mask.total() - mask.survivors();

  const Model fresh = build_model(mlp_preset(2, {64, 64, 64}, 2), 1);
  const Batch batch = d.train_head(128);
  const std::size_t n = fresh.maskable_count();
  long off = 0;
  auto track = [&](const Mask& mk, double s) {
    off = std::max(off, std::abs(static_cast<long>(mk.survivors()) - static_cast<long>(keep_count(n, s))));
  };
  for (const Mask& mk : {random_mask(fresh, 0.95, 3), magnitude_mask(fresh, 0.95), snip_mask(fresh, batch, 0.95),
                         grasp_mask(fresh, batch, 0.95), synflow_mask(fresh, 0.95)})
    track(mk, 0.95);
  TrainConfig lth;
  lth.epochs = 1;
  lth.milestones = {};
  track(imp_lth(fresh, d, 1, 0.95, lth).mask, 0.95);
  ok = ok && off <= 1;
  return {ok, fmt("60-epoch run at s=0.95: max |masked param or momentum| = %g over %zu entries; "
                  "6 generators off target by at most %ld weight(s)",
                  worst, masked, off)};
}

// 4 ------------------------------------------------------------------------
Verdict rehabilitation() {
  const std::vector<std::size_t> ms{30, 45};
  const Dataset d = teacher_images(4);
  Model m = build_model(resnet_tiny_preset({1, 8, 8}, 4), 4);
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 32;
  cfg.milestones = {1, 2};
  cfg.gsk = cfg.gsw = true;
  train(m, d, cfg);  // trained weights, not just an initialization
  const Batch x = d.train_head(64);
  bool identical = true;
  std::size_t compared = 0;
  for (auto mode : {BatchNormMode::kTrain, BatchNormMode::kEval}) {
    const Tensor plain = m.predict(x.x, {.bn_mode = mode});
    const GhostSchedule s = ghost_mode({}, ms);
    for (std::size_t e = s.t_end(); e < 60; ++e) {
      ForwardOptions o = s.forward_options(e);
      o.bn_mode = mode;
      identical = identical && m.predict(x.x, o) == plain;
      ++compared;
    }
  }
  const GhostSchedule keep = ghost_mode({.policy = GhostPolicy::kKeepForever}, ms);
  bool keep_differs = true;
  for (std::size_t e : {30ul, 45ul, 59ul}) keep_differs = keep_differs && m.predict(x.x, keep.forward_options(e)) != m.predict(x.x, {});
  return {identical && keep_differs,
          fmt("%zu post-milestone forwards bit-identical to the never-ghosted model: %s; keep_forever differs: %s",
              compared, identical ? "yes" : "no", keep_differs ? "yes" : "no")};
}

// 5 ------------------------------------------------------------------------
Verdict absorption() {
  const Dataset d = teacher_images(5);
  const Model base = build_model(resnet_tiny_preset({1, 8, 8}, 4), 5);
  const Batch x = d.train_head(64);
  const Tensor ref = base.predict(x.x, {});
  double worst = 0;
  std::string worst_at;
  for (const std::string& g : base.groups()) {
    if (g == base.groups().back()) continue;  // the dense head feeds no BN
    for (double c : {0.1, 3.0, 10.0}) {
      Model m = base;
      apply_scales(m, {.groups = {g}, .scales = {c}});
      const Tensor y = m.predict(x.x, {});
      for (std::size_t i = 0; i < y.size(); ++i)
        if (std::abs(y[i] - ref[i]) > worst) {
          worst = std::abs(y[i] - ref[i]);
          worst_at = fmt("%s c=%g", g.c_str(), c);
        }
    }
  }
  return {worst <= 1e-9, fmt("max-abs train-mode output change %.3e (at %s), tol 1e-9; BN eps = %g", worst,
                             worst_at.c_str(), kBatchNormEps)};
}

// 6 ------------------------------------------------------------------------
Verdict lrsi() {
  const Dataset d = spirals();
  const Batch b = d.train_head(128);
  const Tensor t = smooth_targets(b.labels, 2, 0.0);
  bool never_worse = true;
  int strictly = 0;
  std::string gains;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    for (bool bn : {false, true}) {
      Model m = build_model(mlp_preset(2, {64, 64, 64}, 2, bn), seed);
      apply_mask(m, random_mask(m, 0.9, seed));
      const ScaleSet s = learn_scales(m, b.x, t, 0.1, {});
      Model scaled = m;
      apply_scales(scaled, s);
      const double fin = first_step_loss(scaled, b.x, t, 0.1), init = first_step_loss(m, b.x, t, 0.1);
      never_worse = never_worse && fin <= init;
      if (!bn) {
        strictly += fin < init;
        gains += fmt(" %.4f->%.4f", init, fin);
      }
    }
  }
  return {never_worse && strictly >= 4,
          fmt("final <= unit on all 10 runs: %s; strictly lower on the non-BN mlp in %d/5 seeds (%s )",
              never_worse ? "yes" : "no", strictly, gains.c_str())};
}

// 7 ------------------------------------------------------------------------
constexpr std::size_t kResEpochs = 12;

TrainConfig resnet_train(std::uint64_t seed) {
  TrainConfig c;
  c.epochs = kResEpochs;
  c.batch_size = 32;
  c.lr0 = 0.05;
  c.milestones = {6, 9};
  c.seed = seed;
  return c;
}

Verdict activation_direction() {
  int wins = 0;
  std::string detail;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Dataset d = teacher_images(100 + seed);
    double sp[2];
    for (int swish = 0; swish < 2; ++swish) {
      Model m = build_model(resnet_tiny_preset({1, 8, 8}, 4), seed);
      TrainConfig c = resnet_train(seed);
      c.probes = {.enabled = true, .every = kResEpochs / 2, .batch = 256, .act_eps = 1e-6, .spectrum = false};
      if (swish) {
        c.gsw = true;
        c.ghost.policy = GhostPolicy::kKeepForever;
      }
      const TrainResult r = train(m, random_mask(m, 0.9, seed), d, c);
      sp[swish] = r.history.size() > kResEpochs / 2 ? mean(r.history[kResEpochs / 2].act_sparsity) : NAN;
    }
    const bool win = sp[0] >= 10.0 * sp[1] && sp[0] > 0.0;
    wins += win;
    detail += fmt(" %.4f/%.2g", sp[0], sp[1]);
  }
  return {wins >= 4, fmt("ReLU >= 10x Swish mid-training sparsity in %d/5 seeds (relu/swish:%s ), eps 1e-6", wins,
                         detail.c_str())};
}

// 8 ------------------------------------------------------------------------
Verdict accuracy_direction(const fs::path& config) {
  ExperimentConfig cfg = load_config(config);
  cfg.output = workdir("spirals");
  const ExperimentOutcome out = run_experiment(cfg);
  auto cell = [&](double s, const std::string& tw) {
    for (const auto& r : out.summary)
      if (std::abs(r.sparsity - s) < 1e-12 && r.tweaks == tw) return r.mean;
    return std::numeric_limits<double>::quiet_NaN();
  };
  const double g50 = cell(0.5, "tost") - cell(0.5, "baseline");
  const double g95 = cell(0.95, "tost") - cell(0.95, "baseline");
  const double g98 = cell(0.98, "tost") - cell(0.98, "baseline");
  auto sign = [](double v) { return (v > 0) - (v < 0); };
  const bool ok = g95 >= 0.0 && sign(g98) >= sign(g50);
  return {ok, fmt("s=0.95 tost %.4f vs baseline %.4f; gaps s=0.5 %+.4f, s=0.98 %+.4f (%s)", cell(0.95, "tost"),
                  cell(0.95, "baseline"), g50, g98, config.filename().string().c_str())};
}

// 9 ------------------------------------------------------------------------
Verdict curvature_direction() {
  int wins = 0;
  std::string detail;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Dataset d = teacher_images(200 + seed);
    double peak[2];
    for (int tost = 0; tost < 2; ++tost) {
      Model m = build_model(resnet_tiny_preset({1, 8, 8}, 4), seed);
      TrainConfig c = resnet_train(seed);
      c.probes = {.enabled = true, .every = 2, .batch = 128, .spectrum = true, .eig_count = 1, .power_iters = 30};
      if (tost) {
        c.gsk = c.gsw = c.lrsi = true;
        c.ls_alpha = 0.1;
      }
      const TrainResult r = train(m, random_mask(m, 0.9, seed), d, c);
      peak[tost] = -INFINITY;
      for (const auto& h : r.history)
        if (!h.top_eigs.empty()) peak[tost] = std::max(peak[tost], h.top_eigs[0]);
    }
    wins += peak[1] <= peak[0];
    detail += fmt(" %.3g/%.3g", peak[1], peak[0]);
  }
  return {wins >= 3, fmt("ToST peak top eigenvalue <= baseline in %d/5 seeds (tost/base:%s )", wins, detail.c_str())};
}

// 10 -----------------------------------------------------------------------
Verdict synflow_collapse() {
  int synflow_ok = 0, random_collapsed = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Model m = build_model(mlp_preset(8, {16, 16, 16, 16, 16}, 2), seed);
    synflow_ok += !layer_collapse_check(synflow_mask(m, 0.99)).collapsed;
    random_collapsed += layer_collapse_check(random_mask(m, 0.99, seed)).collapsed;
  }
  return {synflow_ok == 5 && random_collapsed >= 1,
          fmt("6-layer thin mlp at s=0.99: SynFlow keeps every layer in %d/5 seeds; random collapses in %d/5",
              synflow_ok, random_collapsed)};
}

// 11 -----------------------------------------------------------------------
Verdict determinism() {
  const char* text = R"({
    "model": {"hidden": [16, 16], "batchnorm": true},
    "dataset": {"name": "spirals", "n": 300, "noise": 0.05},
    "mask": {"algo": ["random", "snip"], "sparsity": [0.8]},
    "train": {"epochs": 4, "batch": 32, "milestones": [2]},
    "probes": {"enabled": true, "every": 2, "eig_count": 2, "power_iters": 20, "scan": true, "landscape": true, "grid_n": 5},
    "grid": {"tweaks": ["baseline", "tost"], "seeds": [0, 1]}
  })";
  std::vector<fs::path> dirs;
  for (int run = 0; run < 2; ++run) {
    ExperimentConfig cfg = parse_config(text);
    cfg.output = workdir("determinism" + std::to_string(run));
    run_experiment(cfg);
    dirs.push_back(cfg.output);
  }
  std::size_t files = 0, differing = 0;
  for (const auto& e : fs::recursive_directory_iterator(dirs[0])) {
    if (!e.is_regular_file()) continue;
    const fs::path other = dirs[1] / fs::relative(e.path(), dirs[0]);
    ++files;
    differing += !fs::exists(other) || read_text(e.path()) != read_text(other);
  }
  return {files > 0 && differing == 0, fmt("%zu artifacts compared, %zu differ", files, differing)};
}

// 12 -----------------------------------------------------------------------
Verdict schedules() {
  bool ok = true;
  std::size_t n = 0;
  auto check = [&](bool c) {
    ok = ok && c;
    ++n;
  };
  const std::vector<std::size_t> milestones{90, 135};
  for (auto [e, want] : std::vector<std::pair<std::size_t, double>>{
           {0, 0.1}, {45, 0.1}, {89, 0.1}, {90, 0.01}, {112, 0.01}, {134, 0.01}, {135, 0.001}, {179, 0.001}})
    check(lr_at(e, 0.1, milestones) == want);
  const std::vector<std::size_t> desk{30, 45};
  for (auto [e, want] : std::vector<std::pair<std::size_t, double>>{{0, 0.1}, {15, 0.1}, {29, 0.1}, {30, 0.01}, {59, 0.001}})
    check(lr_at(e, 0.1, desk) == want);
  for (std::size_t t : {30ul, 90ul}) {
    const std::size_t end = 2 * t;
    for (std::size_t e : {0ul, t / 2, t - 1, t, end}) {
      const double u = static_cast<double>(e) / static_cast<double>(t);
      check(beta_at(e, t, 1.0, 10.0) == (e < t ? 1.0 + 9.0 * u : kReluBeta));
      check(alpha_at(e, t, 1.0) == (e < t ? 1.0 - u : 0.0));
    }
    check(alpha_at(0, t) == 1.0 && alpha_at(t, t) == 0.0 && beta_at(0, t, 1.0, 10.0) == 1.0);
    check(alpha_at(t / 2, t) == 0.5 && beta_at(t / 2, t, 1.0, 10.0) == 5.5);
  }
  return {ok, fmt("%zu exact comparisons (lr at 89/90/135 = 0.1/0.01/0.001; alpha 1 -> 0; beta 1 -> 5.5 -> inf)", n)};
}

}  // namespace

int main(int argc, char** argv) {
  const fs::path config = argc > 1 ? fs::path(argv[1]) : fs::path(SPLAB_SOURCE_DIR) / "configs" / "spirals_tost.json";
  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria = {
      {"gradient correctness", gradients},
      {"hvp and spectrum oracles", hessians},
      {"mask semantics", mask_semantics},
      {"ghost rehabilitation", rehabilitation},
      {"BN scale absorption", absorption},
      {"LRsI contract", lrsi},
      {"activation-sparsity direction", activation_direction},
      {"accuracy direction", [&] { return accuracy_direction(config); }},
      {"curvature direction", curvature_direction},
      {"SynFlow anti-collapse", synflow_collapse},
      {"determinism", determinism},
      {"schedule exactness", schedules},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    failures += !v.pass;
    std::printf("%s %2zu %s: %s [%.0fs]\n", v.pass ? "PASS" : "FAIL", i + 1, criteria[i].first.c_str(), v.detail.c_str(),
                secs);
    std::fflush(stdout);
  }
  std::printf("%d/%zu criteria pass\n", static_cast<int>(criteria.size()) - failures, criteria.size());
  return failures == 0 ? 0 : 1;
}
