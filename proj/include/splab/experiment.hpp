#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "splab/dataset.hpp"
#include "splab/masks.hpp"
#include "splab/trainer.hpp"

namespace splab {

/// Which toolkit pieces a run enables. Named subsets: baseline, tost (all
/// four), gsk, gsw, lrsi, ls, and '+'-joined combinations such as "gsk+gsw".
struct Tweaks {
  bool gsk = false;
  bool gsw = false;
  bool lrsi = false;
  bool ls = false;

  std::string name() const;
  static Tweaks parse(std::string_view name);
  bool operator==(const Tweaks&) const = default;
};

struct ModelConfig {
  std::string preset = "mlp";  ///< "mlp" or "resnet-tiny"
  std::vector<std::size_t> hidden{64, 64};
  bool batchnorm = false;
};

struct DatasetConfig {
  std::string kind = "spirals";  ///< spirals, teacher or idx
  SyntheticOptions synthetic;
  std::filesystem::path images;
  std::filesystem::path labels;
  std::size_t limit = 1000;
};

struct MaskConfig {
  std::vector<MaskAlgo> algos{MaskAlgo::kRandom};
  std::vector<double> sparsities{0.0};
  MaskScope scope = MaskScope::kGlobal;
  std::size_t batch = 128;  ///< SNIP/GraSP scoring batch
  std::size_t synflow_iterations = 100;
  std::size_t lth_rounds = 1;
  double lth_rate = 0.2;
};

struct ExperimentConfig {
  std::string name = "experiment";
  ModelConfig model;
  DatasetConfig dataset;
  MaskConfig mask;
  TrainConfig train;  ///< ls_alpha here is the ratio used when the ls tweak is on
  bool force_lrsi = false;
  std::vector<Tweaks> tweaks{Tweaks{}};
  std::vector<std::uint64_t> seeds{0};
  bool scan = false;       ///< eigenvector scan after training
  bool landscape = false;  ///< loss landscape after training
  std::filesystem::path output = "runs";
};

/// Parses JSON text; unknown keys and bad values raise ConfigError.
ExperimentConfig parse_config(std::string_view json_text, const std::filesystem::path& base_dir = {});
ExperimentConfig load_config(const std::filesystem::path& path);

Dataset load_dataset(const DatasetConfig& cfg);
ModelSpec model_spec(const ModelConfig& cfg, const Dataset& data);
/// Mask for one cell; LTH trains with `train` (tweaks off).
Mask make_mask(MaskAlgo algo, double sparsity, const Model& model, const Dataset& data, const MaskConfig& cfg,
               const TrainConfig& train, std::uint64_t seed);
/// Training configuration of one grid cell.
TrainConfig cell_config(const ExperimentConfig& cfg, const Tweaks& tweaks, std::uint64_t seed);

struct RunSummary {
  MaskAlgo algo = MaskAlgo::kRandom;
  double sparsity = 0.0;
  std::string tweaks;
  std::uint64_t seed = 0;
  double test_acc = 0.0;  ///< final epoch
  bool diverged = false;
  std::filesystem::path dir;
  TrainResult result;
  Mask mask;
};

struct SummaryRow {
  std::string algo;
  double sparsity = 0.0;
  std::string tweaks;
  std::vector<std::uint64_t> seeds;
  std::vector<double> accs;  ///< aligned with seeds; diverged runs are absent
  std::size_t diverged = 0;
  double mean = 0.0;
  double std = 0.0;  ///< sample (n-1) standard deviation, 0 for n < 2
};

struct ExperimentOutcome {
  std::vector<RunSummary> runs;
  std::vector<SummaryRow> summary;
  bool any_diverged() const;
};

/// Runs every grid cell, writing <output>/<cell>/history.csv (plus spectrum,
/// scales, scan and landscape CSVs when produced) and <output>/summary.csv.
ExperimentOutcome run_experiment(const ExperimentConfig& cfg);

std::string format_double(double v);
std::string history_csv(const std::vector<RunRecord>& history, std::size_t activation_layers, std::size_t eig_count);
std::string spectrum_csv(const std::vector<SpectrumRecord>& spectra, std::size_t eig_count);
std::string summary_csv(const std::vector<SummaryRow>& rows);
std::vector<SummaryRow> parse_summary_csv(std::string_view text);
std::vector<SummaryRow> read_summary(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

struct DeltaRow {
  std::string algo;
  double sparsity = 0.0;
  std::string tweaks_a;
  std::string tweaks_b;
  double mean_a = 0.0;
  double mean_b = 0.0;
  double delta = 0.0;       ///< mean_b - mean_a
  double pooled_std = 0.0;
  bool paired = false;      ///< seeds align, so paired_delta is defined
  double paired_delta = 0.0;
};

/// Matches cells by (algo, sparsity), and also by tweak subset when both
/// summaries list the same subsets. Mismatched axes raise ArgumentError.
std::vector<DeltaRow> compare_runs(const std::vector<SummaryRow>& a, const std::vector<SummaryRow>& b);
std::string delta_csv(const std::vector<DeltaRow>& rows);

}  // namespace splab
