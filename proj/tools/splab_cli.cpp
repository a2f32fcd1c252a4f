// Command-line front end: run, mask, probe, compare, selftest.
#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "splab/checkpoint.hpp"
#include "splab/error.hpp"
#include "splab/experiment.hpp"
#include "splab/oracles.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kRunFailure = 1;
constexpr int kConfigError = 2;

int cmd_run(const std::string& config) {
  const auto cfg = splab::load_config(config);
  const auto outcome = splab::run_experiment(cfg);
  for (const auto& row : outcome.summary)
    std::printf("%-10s s=%-6g %-16s acc %.4f +- %.4f (n=%zu, diverged %zu)\n", row.algo.c_str(), row.sparsity,
                row.tweaks.c_str(), row.mean, row.std, row.accs.size(), row.diverged);
  std::printf("summary: %s\n", (cfg.output / "summary.csv").string().c_str());
  return outcome.any_diverged() ? kRunFailure : kOk;
}

int cmd_mask(const std::string& config, const std::string& algo_name, double sparsity, const std::string& out) {
  auto cfg = splab::load_config(config);
  const auto algo = splab::parse_mask_algo(algo_name);
  if (!(sparsity >= 0.0 && sparsity < 1.0)) throw splab::ConfigError("--sparsity must lie in [0,1)");
  const auto data = splab::load_dataset(cfg.dataset);
  const auto seed = cfg.seeds.front();
  splab::Model model = splab::build_model(splab::model_spec(cfg.model, data), seed);
  const auto train = splab::cell_config(cfg, splab::Tweaks{}, seed);
  const splab::Mask mask = splab::make_mask(algo, sparsity, model, data, cfg.mask, train, seed);
  splab::apply_mask(model, mask);
  splab::save_checkpoint(out, model);
  const auto report = splab::layer_collapse_check(mask);
  for (const auto& [name, n] : report.survivors) std::printf("%-16s %zu survivors\n", name.c_str(), n);
  std::printf("sparsity %.6f (target %.6f), %zu of %zu weights kept\n", mask.sparsity(), sparsity, mask.survivors(),
              mask.total());
  for (const auto& w : mask.warnings) std::printf("warning: %s\n", w.c_str());
  if (report.collapsed) std::printf("layer collapse: %s\n", report.empty_layers.front().c_str());
  return kOk;
}

int cmd_probe(const std::string& checkpoint, const std::string& config, std::size_t batch, bool spectrum, bool scan,
              bool landscape, const std::string& out_dir) {
  auto cfg = splab::load_config(config);
  const auto data = splab::load_dataset(cfg.dataset);
  splab::Model model = splab::build_model(splab::model_spec(cfg.model, data), cfg.seeds.front());
  splab::load_checkpoint(checkpoint, model);
  const auto b = data.train_head(batch);
  const auto target = splab::smooth_targets(b.labels, data.classes, 0.0);
  const auto& pc = cfg.train.probes;
  if (!spectrum && !scan && !landscape) spectrum = true;
  const std::filesystem::path dir(out_dir);
  const splab::ForwardOptions fwd{};

  const splab::PowerOptions po{.k = scan ? std::max<std::size_t>(pc.eig_count, 1) : pc.eig_count,
                               .iters = pc.power_iters, .tol = pc.tol, .seed = cfg.seeds.front()};
  splab::SpectrumRecord top;
  if (spectrum || scan) top = splab::top_hessian_eigs(model, b.x, target, po, fwd);
  if (spectrum) {
    splab::write_text(dir / "spectrum.csv", splab::spectrum_csv({top}, top.eigenvalues.size()));
    for (std::size_t i = 0; i < top.eigenvalues.size(); ++i)
      std::printf("lambda_%zu %.10g residual %.3g%s\n", i + 1, top.eigenvalues[i], top.residuals[i],
                  top.converged[i] ? "" : " (unconverged)");
  }
  std::vector<double> t(pc.grid_n);
  for (std::size_t i = 0; i < pc.grid_n; ++i)
    t[i] = pc.grid_n == 1 ? 0.0
                          : pc.span * (2.0 * static_cast<double>(i) - static_cast<double>(pc.grid_n - 1)) /
                                static_cast<double>(pc.grid_n - 1);
  if (scan) {
    const auto losses = splab::eigvec_perturb_scan(model, b.x, target, top.eigenvectors.front(), t, fwd);
    std::string csv = "t,loss\n";
    for (std::size_t i = 0; i < t.size(); ++i) csv += splab::format_double(t[i]) + ',' + splab::format_double(losses[i]) + '\n';
    splab::write_text(dir / "scan.csv", csv);
    std::printf("scan: %zu points -> %s\n", t.size(), (dir / "scan.csv").string().c_str());
  }
  if (landscape) {
    const auto grid = splab::landscape_slice(model, b.x, target, pc.grid_n, pc.span, cfg.seeds.front(), fwd);
    std::string csv = "a,b,loss\n";
    for (std::size_t i = 0; i < grid.n; ++i)
      for (std::size_t j = 0; j < grid.n; ++j)
        csv += splab::format_double(grid.coords[i]) + ',' + splab::format_double(grid.coords[j]) + ',' +
               splab::format_double(grid.at(i, j)) + '\n';
    splab::write_text(dir / "landscape.csv", csv);
    std::printf("landscape: %zux%zu grid, baseline %.10g -> %s\n", grid.n, grid.n, grid.baseline,
                (dir / "landscape.csv").string().c_str());
  }
  return kOk;
}

int cmd_compare(const std::vector<std::string>& summaries, const std::string& out) {
  if (summaries.size() < 2) throw splab::ArgumentError("compare needs at least two summaries");
  const auto base = splab::read_summary(summaries.front());
  std::string csv;
  for (std::size_t i = 1; i < summaries.size(); ++i) {
    const auto rows = splab::compare_runs(base, splab::read_summary(summaries[i]));
    const std::string part = splab::delta_csv(rows);
    csv += i == 1 ? part : part.substr(part.find('\n') + 1);
  }
  if (out.empty())
    std::cout << csv;
  else
    splab::write_text(out, csv);
  return kOk;
}

int cmd_selftest(std::uint64_t seed) {
  std::vector<splab::OracleCheck> checks = splab::op_gradient_checks(seed);
  for (auto& c : splab::model_gradient_checks(seed)) checks.push_back(c);
  for (auto& c : splab::hessian_checks(seed)) checks.push_back(c);
  bool ok = true;
  for (const auto& c : checks) {
    std::printf("%s  %-48s err %.3e (tol %.0e)\n", c.pass ? "PASS" : "FAIL", c.name.c_str(), c.error, c.tolerance);
    ok = ok && c.pass;
  }
  return ok ? kOk : kRunFailure;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sparse training lab"};
  app.require_subcommand(1);

  std::string config;
  auto* run = app.add_subcommand("run", "Run every cell of an experiment grid");
  run->add_option("config", config, "experiment JSON")->required();

  std::string algo = "random", mask_out;
  double sparsity = 0.0;
  auto* mask = app.add_subcommand("mask", "Generate a mask and save it with the initial parameters");
  mask->add_option("config", config, "experiment JSON")->required();
  mask->add_option("--algo", algo, "random|magnitude|snip|grasp|synflow|lth");
  mask->add_option("--sparsity", sparsity, "fraction of weights removed")->required();
  mask->add_option("--out", mask_out, "checkpoint path")->required();

  std::string checkpoint, probe_out = ".";
  std::size_t batch = 512;
  bool spectrum = false, scan = false, landscape = false;
  auto* probe = app.add_subcommand("probe", "Hessian spectrum, eigenvector scan or loss landscape of a checkpoint");
  probe->add_option("checkpoint", checkpoint, "checkpoint path")->required();
  probe->add_option("--config", config, "experiment JSON that describes the model and data")->required();
  probe->add_option("--batch", batch, "probe batch size (first training examples)");
  probe->add_flag("--spectrum", spectrum);
  probe->add_flag("--scan", scan);
  probe->add_flag("--landscape", landscape);
  probe->add_option("--out", probe_out, "output directory");

  std::vector<std::string> summaries;
  std::string compare_out;
  auto* compare = app.add_subcommand("compare", "Accuracy deltas of later summaries against the first");
  compare->add_option("summaries", summaries, "summary.csv files")->required();
  compare->add_option("--out", compare_out, "write the delta CSV here instead of stdout");

  std::uint64_t seed = 0;
  auto* selftest = app.add_subcommand("selftest", "Run the gradient and Hessian oracle suites");
  selftest->add_option("--seed", seed);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigError;
  }

  try {
    if (*run) return cmd_run(config);
    if (*mask) return cmd_mask(config, algo, sparsity, mask_out);
    if (*probe) return cmd_probe(checkpoint, config, batch, spectrum, scan, landscape, probe_out);
    if (*compare) return cmd_compare(summaries, compare_out);
    if (*selftest) return cmd_selftest(seed);
  } catch (const splab::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kConfigError;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kRunFailure;
  }
  return kOk;
}
