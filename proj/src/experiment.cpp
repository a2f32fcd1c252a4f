#include "splab/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "json.hpp"

#include "splab/error.hpp"

namespace splab {

using nlohmann::json;

std::string Tweaks::name() const {
  if (gsk && gsw && lrsi && ls) return "tost";
  std::string s;
  auto add = [&](bool on, const char* n) {
    if (!on) return;
    if (!s.empty()) s += '+';
    s += n;
  };
  add(gsk, "gsk");
  add(gsw, "gsw");
  add(lrsi, "lrsi");
  add(ls, "ls");
  return s.empty() ? "baseline" : s;
}

Tweaks Tweaks::parse(std::string_view name) {
  Tweaks t;
  std::size_t start = 0;
  while (start <= name.size()) {
    const std::size_t end = std::min(name.find('+', start), name.size());
    const std::string_view part = name.substr(start, end - start);
    if (part == "baseline") {
    } else if (part == "tost") {
      t = Tweaks{true, true, true, true};
    } else if (part == "gsk") {
      t.gsk = true;
    } else if (part == "gsw") {
      t.gsw = true;
    } else if (part == "lrsi") {
      t.lrsi = true;
    } else if (part == "ls") {
      t.ls = true;
    } else {
      throw ConfigError("unknown tweak '" + std::string(part) + "' in '" + std::string(name) + "'");
    }
    start = end + 1;
  }
  return t;
}

namespace {

void check_keys(const json& j, const std::string& section, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError(section + " must be an object");
  for (const auto& [key, value] : j.items()) {
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; }))
      throw ConfigError("unknown config key '" + (section.empty() ? key : section + "." + key) + "'");
  }
}

template <typename T>
void read(const json& j, const char* key, const std::string& section, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config key '" + section + "." + key + "' has the wrong type");
  }
}

void read_size(const json& j, const char* key, const std::string& section, std::size_t& out) {
  if (!j.contains(key)) return;
  const json& v = j.at(key);
  if (!v.is_number_integer() || v.get<long long>() < 0)
    throw ConfigError("config key '" + section + "." + key + "' must be a non-negative integer");
  out = v.get<std::size_t>();
}

std::vector<std::size_t> read_sizes(const json& v, const std::string& where) {
  if (!v.is_array()) throw ConfigError("config key '" + where + "' must be an array of integers");
  std::vector<std::size_t> out;
  for (const auto& e : v) {
    if (!e.is_number_integer() || e.get<long long>() < 0)
      throw ConfigError("config key '" + where + "' must hold non-negative integers");
    out.push_back(e.get<std::size_t>());
  }
  return out;
}

std::vector<double> number_or_list(const json& v, const std::string& where) {
  std::vector<double> out;
  if (v.is_number()) {
    out.push_back(v.get<double>());
  } else if (v.is_array() && !v.empty()) {
    for (const auto& e : v) {
      if (!e.is_number()) throw ConfigError("config key '" + where + "' must hold numbers");
      out.push_back(e.get<double>());
    }
  } else {
    throw ConfigError("config key '" + where + "' must be a number or a non-empty array");
  }
  return out;
}

std::vector<std::string> string_or_list(const json& v, const std::string& where) {
  std::vector<std::string> out;
  if (v.is_string()) {
    out.push_back(v.get<std::string>());
  } else if (v.is_array() && !v.empty()) {
    for (const auto& e : v) {
      if (!e.is_string()) throw ConfigError("config key '" + where + "' must hold strings");
      out.push_back(e.get<std::string>());
    }
  } else {
    throw ConfigError("config key '" + where + "' must be a string or a non-empty array");
  }
  return out;
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  const std::filesystem::path path(p);
  return path.is_absolute() || base.empty() ? path : base / path;
}

}  // namespace

ExperimentConfig parse_config(std::string_view json_text, const std::filesystem::path& base_dir) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  check_keys(root, "", {"name", "model", "dataset", "mask", "train", "ghost", "lrsi", "probes", "grid", "output"});
  ExperimentConfig cfg;
  read(root, "name", "", cfg.name);
  if (root.contains("output")) {
    std::string out;
    read(root, "output", "", out);
    cfg.output = resolve(base_dir, out);
  }

  if (root.contains("model")) {
    const json& m = root["model"];
    check_keys(m, "model", {"preset", "hidden", "batchnorm"});
    read(m, "preset", "model", cfg.model.preset);
    if (m.contains("hidden")) cfg.model.hidden = read_sizes(m["hidden"], "model.hidden");
    read(m, "batchnorm", "model", cfg.model.batchnorm);
    if (cfg.model.preset != "mlp" && cfg.model.preset != "resnet-tiny")
      throw ConfigError("unknown model preset '" + cfg.model.preset + "'");
  }

  if (root.contains("dataset")) {
    const json& d = root["dataset"];
    check_keys(d, "dataset",
               {"name", "n", "classes", "noise", "seed", "test_fraction", "input_shape", "teacher_hidden", "images",
                "labels", "limit"});
    auto& s = cfg.dataset.synthetic;
    read(d, "name", "dataset", cfg.dataset.kind);
    read_size(d, "n", "dataset", s.n);
    read_size(d, "classes", "dataset", s.classes);
    read(d, "noise", "dataset", s.noise);
    read(d, "seed", "dataset", s.seed);
    read(d, "test_fraction", "dataset", s.test_fraction);
    if (d.contains("input_shape")) s.input_shape = read_sizes(d["input_shape"], "dataset.input_shape");
    read_size(d, "teacher_hidden", "dataset", s.teacher_hidden);
    read_size(d, "limit", "dataset", cfg.dataset.limit);
    std::string p;
    if (d.contains("images")) {
      read(d, "images", "dataset", p);
      cfg.dataset.images = resolve(base_dir, p);
    }
    if (d.contains("labels")) {
      read(d, "labels", "dataset", p);
      cfg.dataset.labels = resolve(base_dir, p);
    }
    const auto& k = cfg.dataset.kind;
    if (k != "spirals" && k != "teacher" && k != "idx") throw ConfigError("unknown dataset '" + k + "'");
    s.name = k;
    if (k == "idx" && (cfg.dataset.images.empty() || cfg.dataset.labels.empty()))
      throw ConfigError("dataset 'idx' needs dataset.images and dataset.labels");
    if (s.classes < 2) throw ConfigError("dataset.classes must be >= 2");
    if (k != "idx" && s.n < 10 * s.classes) throw ConfigError("dataset.n must be >= 10 * classes");
    if (!(s.test_fraction > 0.0 && s.test_fraction < 1.0)) throw ConfigError("dataset.test_fraction must lie in (0,1)");
    if (s.noise < 0.0) throw ConfigError("dataset.noise must be non-negative");
  }

  if (root.contains("mask")) {
    const json& m = root["mask"];
    check_keys(m, "mask", {"algo", "sparsity", "scope", "batch", "iterations", "rounds", "rate"});
    if (m.contains("algo")) {
      cfg.mask.algos.clear();
      for (const auto& a : string_or_list(m["algo"], "mask.algo")) cfg.mask.algos.push_back(parse_mask_algo(a));
    }
    if (m.contains("sparsity")) cfg.mask.sparsities = number_or_list(m["sparsity"], "mask.sparsity");
    for (double s : cfg.mask.sparsities)
      if (!(s >= 0.0 && s < 1.0)) throw ConfigError("mask.sparsity values must lie in [0,1)");
    if (m.contains("scope")) {
      std::string scope;
      read(m, "scope", "mask", scope);
      cfg.mask.scope = parse_mask_scope(scope);
    }
    read_size(m, "batch", "mask", cfg.mask.batch);
    read_size(m, "iterations", "mask", cfg.mask.synflow_iterations);
    read_size(m, "rounds", "mask", cfg.mask.lth_rounds);
    read(m, "rate", "mask", cfg.mask.lth_rate);
    if (cfg.mask.batch == 0 || cfg.mask.synflow_iterations == 0 || cfg.mask.lth_rounds == 0)
      throw ConfigError("mask.batch, mask.iterations and mask.rounds must be >= 1");
    if (!(cfg.mask.lth_rate > 0.0 && cfg.mask.lth_rate < 1.0)) throw ConfigError("mask.rate must lie in (0,1)");
  }

  TrainConfig& t = cfg.train;
  t.ls_alpha = 0.1;
  if (root.contains("train")) {
    const json& j = root["train"];
    check_keys(j, "train", {"epochs", "batch", "lr0", "milestones", "momentum", "wd", "ls_alpha", "seed"});
    read_size(j, "epochs", "train", t.epochs);
    read_size(j, "batch", "train", t.batch_size);
    read(j, "lr0", "train", t.lr0);
    if (j.contains("milestones")) t.milestones = read_sizes(j["milestones"], "train.milestones");
    read(j, "momentum", "train", t.momentum);
    read(j, "wd", "train", t.weight_decay);
    read(j, "ls_alpha", "train", t.ls_alpha);
    if (j.contains("seed")) {
      std::uint64_t seed = 0;
      read(j, "seed", "train", seed);
      cfg.seeds = {seed};
    }
  }

  if (root.contains("ghost")) {
    const json& g = root["ghost"];
    check_keys(g, "ghost", {"policy", "beta0", "beta_max", "alpha0", "schedule", "activation"});
    std::string s;
    if (g.contains("policy")) {
      read(g, "policy", "ghost", s);
      t.ghost.policy = parse_ghost_policy(s);
    }
    read(g, "beta0", "ghost", t.ghost.beta0);
    read(g, "beta_max", "ghost", t.ghost.beta_max);
    read(g, "alpha0", "ghost", t.ghost.alpha0);
    if (g.contains("schedule")) {
      read(g, "schedule", "ghost", s);
      t.ghost.schedule = parse_schedule_shape(s);
    }
    if (g.contains("activation")) {
      read(g, "activation", "ghost", s);
      if (s != "pswish" && s != "mish") throw ConfigError("ghost.activation must be pswish or mish");
      t.ghost.soft = parse_activation(s);
    }
  }

  if (root.contains("lrsi")) {
    const json& l = root["lrsi"];
    check_keys(l, "lrsi", {"enabled", "iters", "step", "bounds", "batch", "fd_step"});
    read(l, "enabled", "lrsi", cfg.force_lrsi);
    read_size(l, "iters", "lrsi", t.rescale.iters);
    read(l, "step", "lrsi", t.rescale.step);
    read(l, "fd_step", "lrsi", t.rescale.fd_step);
    read_size(l, "batch", "lrsi", t.rescale.batch);
    if (l.contains("bounds")) {
      const auto b = number_or_list(l["bounds"], "lrsi.bounds");
      if (b.size() != 2) throw ConfigError("lrsi.bounds must be [c_min, c_max]");
      t.rescale.c_min = b[0];
      t.rescale.c_max = b[1];
    }
  }

  if (root.contains("probes")) {
    const json& p = root["probes"];
    check_keys(p, "probes",
               {"enabled", "every", "batch", "act_eps", "spectrum", "eig_count", "power_iters", "tol", "grid_n", "span",
                "scan", "landscape"});
    auto& pc = t.probes;
    read(p, "enabled", "probes", pc.enabled);
    read_size(p, "every", "probes", pc.every);
    read_size(p, "batch", "probes", pc.batch);
    read(p, "act_eps", "probes", pc.act_eps);
    read(p, "spectrum", "probes", pc.spectrum);
    read_size(p, "eig_count", "probes", pc.eig_count);
    read_size(p, "power_iters", "probes", pc.power_iters);
    read(p, "tol", "probes", pc.tol);
    read_size(p, "grid_n", "probes", pc.grid_n);
    read(p, "span", "probes", pc.span);
    read(p, "scan", "probes", cfg.scan);
    read(p, "landscape", "probes", cfg.landscape);
  }

  if (root.contains("grid")) {
    const json& g = root["grid"];
    check_keys(g, "grid", {"tweaks", "seeds"});
    if (g.contains("tweaks")) {
      cfg.tweaks.clear();
      for (const auto& n : string_or_list(g["tweaks"], "grid.tweaks")) cfg.tweaks.push_back(Tweaks::parse(n));
    }
    if (g.contains("seeds")) {
      cfg.seeds.clear();
      for (auto s : read_sizes(g["seeds"], "grid.seeds")) cfg.seeds.push_back(s);
      if (cfg.seeds.empty()) throw ConfigError("grid.seeds must not be empty");
    }
  }

  // Validate every cell configuration up front so no run starts on a bad grid.
  for (const auto& tw : cfg.tweaks) cell_config(cfg, tw, cfg.seeds.front()).validate();
  return cfg;
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error("cannot write " + path.string());
  f << text;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::string text;
  try {
    text = read_text(path);
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  return parse_config(text, path.parent_path());
}

Dataset load_dataset(const DatasetConfig& cfg) {
  if (cfg.kind == "idx") {
    const Tensor x = load_idx_images(cfg.images, cfg.limit);
    auto y = load_idx_labels(cfg.labels, cfg.limit);
    if (y.size() != x.dim(0)) throw FormatError("IDX image and label counts differ", 0);
    const std::size_t classes = std::max(cfg.synthetic.classes, *std::max_element(y.begin(), y.end()) + 1);
    return split_and_normalize("idx", x, y, classes, cfg.synthetic.test_fraction, cfg.synthetic.seed);
  }
  return make_synthetic(cfg.synthetic);
}

ModelSpec model_spec(const ModelConfig& cfg, const Dataset& data) {
  if (cfg.preset == "resnet-tiny") {
    if (data.input_shape.size() != 3) throw ConfigError("resnet-tiny needs (C,H,W) inputs");
    return resnet_tiny_preset(data.input_shape, data.classes);
  }
  ModelSpec spec = mlp_preset(shape_numel(data.input_shape), cfg.hidden, data.classes, cfg.batchnorm);
  spec.input_shape = data.input_shape;
  return spec;
}

Mask make_mask(MaskAlgo algo, double sparsity, const Model& model, const Dataset& data, const MaskConfig& cfg,
               const TrainConfig& train, std::uint64_t seed) {
  switch (algo) {
    case MaskAlgo::kRandom: return random_mask(model, sparsity, seed, cfg.scope);
    case MaskAlgo::kMagnitude: return magnitude_mask(model, sparsity, cfg.scope);
    case MaskAlgo::kSnip: return snip_mask(model, data.train_head(cfg.batch), sparsity, cfg.scope);
    case MaskAlgo::kGrasp: return grasp_mask(model, data.train_head(cfg.batch), sparsity, cfg.scope);
    case MaskAlgo::kSynflow: return synflow_mask(model, sparsity, cfg.synflow_iterations, cfg.scope);
    case MaskAlgo::kLth: {
      if (sparsity == 0.0) return dense_mask(model);
      // Per-round rate chosen so the rounds compound to the requested sparsity.
      const double rate = 1.0 - std::pow(1.0 - sparsity, 1.0 / static_cast<double>(cfg.lth_rounds));
      TrainConfig plain = train;
      plain.gsk = plain.gsw = plain.lrsi = false;
      plain.ls_alpha = 0.0;
      plain.probes.enabled = false;
      plain.seed = seed;
      Mask m = imp_lth(model, data, cfg.lth_rounds, rate, plain, cfg.scope).mask;
      m.target_sparsity = sparsity;
      return m;
    }
  }
  throw ArgumentError("unknown mask algorithm");
}

TrainConfig cell_config(const ExperimentConfig& cfg, const Tweaks& tweaks, std::uint64_t seed) {
  TrainConfig t = cfg.train;
  t.seed = seed;
  t.gsk = tweaks.gsk;
  t.gsw = tweaks.gsw;
  t.lrsi = tweaks.lrsi || cfg.force_lrsi;
  if (!tweaks.ls) t.ls_alpha = 0.0;
  return t;
}

bool ExperimentOutcome::any_diverged() const {
  return std::any_of(runs.begin(), runs.end(), [](const RunSummary& r) { return r.diverged; });
}

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

namespace {

std::string short_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

std::string join(const std::vector<std::string>& parts, char sep) {
  std::string s;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) s += sep;
    s += parts[i];
  }
  return s;
}

std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t end = s.find(sep, start);
    out.emplace_back(s.substr(start, end == std::string_view::npos ? std::string_view::npos : end - start));
    if (end == std::string_view::npos) break;
    start = end + 1;
  }
  return out;
}

double parse_double(const std::string& s) {
  if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    throw FormatError("not a number: '" + s + "'", 0);
  }
  if (used != s.size()) throw FormatError("not a number: '" + s + "'", 0);
  return v;
}

void mean_std(SummaryRow& row) {
  const std::size_t n = row.accs.size();
  row.mean = row.std = 0.0;
  if (n == 0) {
    row.mean = std::numeric_limits<double>::quiet_NaN();
    return;
  }
  for (double a : row.accs) row.mean += a;
  row.mean /= static_cast<double>(n);
  if (n < 2) return;
  double sq = 0.0;
  for (double a : row.accs) sq += (a - row.mean) * (a - row.mean);
  row.std = std::sqrt(sq / static_cast<double>(n - 1));
}

}  // namespace

std::string history_csv(const std::vector<RunRecord>& history, std::size_t activation_layers, std::size_t eig_count) {
  std::string out = "epoch,lr,beta,alpha,train_loss,test_loss,test_acc,grad_flow";
  for (std::size_t i = 1; i <= activation_layers; ++i) out += ",act_sparsity_L" + std::to_string(i);
  for (std::size_t i = 1; i <= eig_count; ++i) out += ",top_eig_" + std::to_string(i);
  out += '\n';
  for (const auto& r : history) {
    out += std::to_string(r.epoch);
    for (double v : {r.lr, r.beta, r.alpha, r.train_loss, r.test_loss, r.test_acc, r.grad_flow}) out += ',' + format_double(v);
    for (std::size_t i = 0; i < activation_layers; ++i)
      out += ',' + (i < r.act_sparsity.size() ? format_double(r.act_sparsity[i]) : std::string());
    for (std::size_t i = 0; i < eig_count; ++i)
      out += ',' + (i < r.top_eigs.size() ? format_double(r.top_eigs[i]) : std::string());
    out += '\n';
  }
  return out;
}

std::string spectrum_csv(const std::vector<SpectrumRecord>& spectra, std::size_t eig_count) {
  std::string out = "epoch";
  for (std::size_t i = 1; i <= eig_count; ++i) out += ",lambda_" + std::to_string(i);
  for (std::size_t i = 1; i <= eig_count; ++i) out += ",residual_" + std::to_string(i);
  out += '\n';
  for (const auto& s : spectra) {
    out += std::to_string(s.epoch);
    for (std::size_t i = 0; i < eig_count; ++i)
      out += ',' + (i < s.eigenvalues.size() ? format_double(s.eigenvalues[i]) : std::string());
    for (std::size_t i = 0; i < eig_count; ++i)
      out += ',' + (i < s.residuals.size() ? format_double(s.residuals[i]) : std::string());
    out += '\n';
  }
  return out;
}

std::string summary_csv(const std::vector<SummaryRow>& rows) {
  std::string out = "# std_test_acc is the sample standard deviation over seeds (n-1 denominator)\n";
  out += "algo,sparsity,tweaks,n,diverged,mean_test_acc,std_test_acc,seeds,test_accs\n";
  for (const auto& r : rows) {
    std::vector<std::string> seeds, accs;
    for (auto s : r.seeds) seeds.push_back(std::to_string(s));
    for (double a : r.accs) accs.push_back(format_double(a));
    out += r.algo + ',' + format_double(r.sparsity) + ',' + r.tweaks + ',' + std::to_string(r.accs.size()) + ',' +
           std::to_string(r.diverged) + ',' + format_double(r.mean) + ',' + format_double(r.std) + ',' +
           join(seeds, ';') + ',' + join(accs, ';') + '\n';
  }
  return out;
}

std::vector<SummaryRow> parse_summary_csv(std::string_view text) {
  std::vector<SummaryRow> rows;
  bool header = false;
  std::size_t offset = 0;
  for (const auto& line : split(text, '\n')) {
    const std::size_t here = offset;
    offset += line.size() + 1;
    if (line.empty() || line[0] == '#') continue;
    if (!header) {
      if (line.rfind("algo,sparsity,tweaks", 0) != 0) throw FormatError("summary header missing", here);
      header = true;
      continue;
    }
    const auto f = split(line, ',');
    if (f.size() != 9) throw FormatError("summary row needs 9 fields", here);
    SummaryRow r;
    r.algo = f[0];
    r.sparsity = parse_double(f[1]);
    r.tweaks = f[2];
    r.diverged = static_cast<std::size_t>(parse_double(f[4]));
    r.mean = parse_double(f[5]);
    r.std = parse_double(f[6]);
    if (!f[7].empty())
      for (const auto& s : split(f[7], ';')) r.seeds.push_back(static_cast<std::uint64_t>(std::stoull(s)));
    if (!f[8].empty())
      for (const auto& a : split(f[8], ';')) r.accs.push_back(parse_double(a));
    if (r.seeds.size() != r.accs.size()) throw FormatError("summary seeds and accuracies disagree", here);
    rows.push_back(std::move(r));
  }
  if (!header) throw FormatError("summary header missing", 0);
  return rows;
}

std::vector<SummaryRow> read_summary(const std::filesystem::path& path) { return parse_summary_csv(read_text(path)); }

ExperimentOutcome run_experiment(const ExperimentConfig& cfg) {
  const Dataset data = load_dataset(cfg.dataset);
  const ModelSpec spec = model_spec(cfg.model, data);
  ExperimentOutcome outcome;
  std::filesystem::create_directories(cfg.output);

  for (MaskAlgo algo : cfg.mask.algos)
    for (double s : cfg.mask.sparsities)
      for (const Tweaks& tw : cfg.tweaks) {
        SummaryRow row{.algo = std::string(mask_algo_name(algo)), .sparsity = s, .tweaks = tw.name()};
        for (std::uint64_t seed : cfg.seeds) {
          RunSummary run{.algo = algo, .sparsity = s, .tweaks = tw.name(), .seed = seed};
          std::string cell = row.algo + "_s" + short_double(s) + "_" + run.tweaks + "_seed" + std::to_string(seed);
          std::replace(cell.begin(), cell.end(), '+', '-');
          run.dir = cfg.output / cell;
          std::filesystem::create_directories(run.dir);

          const TrainConfig tc = cell_config(cfg, tw, seed);
          Model model = build_model(spec, seed);
          std::string failure;
          try {
            run.mask = make_mask(algo, s, model, data, cfg.mask, tc, seed);
            run.result = train(model, run.mask, data, tc);
            if (run.result.diverged) failure = run.result.diagnostic;
          } catch (const ConfigError&) {
            throw;
          } catch (const Error& e) {
            failure = e.what();
          }
          run.diverged = !failure.empty();

          write_text(run.dir / "history.csv",
                     history_csv(run.result.history, model.activation_count(),
                                 tc.probes.enabled && tc.probes.spectrum ? tc.probes.eig_count : 0));
          if (!run.result.spectra.empty())
            write_text(run.dir / "spectrum.csv", spectrum_csv(run.result.spectra, tc.probes.eig_count));
          if (run.result.scales) {
            std::string sc = "group,scale\n";
            for (std::size_t j = 0; j < run.result.scales->groups.size(); ++j)
              sc += run.result.scales->groups[j] + ',' + format_double(run.result.scales->scales[j]) + '\n';
            write_text(run.dir / "scales.csv", sc);
          }
          if (!run.mask.warnings.empty()) write_text(run.dir / "warnings.txt", join(run.mask.warnings, '\n') + '\n');
          if (run.diverged) write_text(run.dir / "diagnostic.txt", failure + '\n');

          if (!run.diverged && (cfg.scan || cfg.landscape)) {
            const Batch b = data.train_head(tc.probes.batch);
            const Tensor target = smooth_targets(b.labels, data.classes, tc.ls_alpha);
            ForwardOptions fwd;
            if (tc.gsk || tc.gsw) fwd = ghost_mode(tc.ghost, tc.milestones, tc.gsk, tc.gsw).forward_options(tc.epochs);
            const auto& pc = tc.probes;
            std::vector<double> t(pc.grid_n);
            for (std::size_t i = 0; i < pc.grid_n; ++i)
              t[i] = pc.grid_n == 1 ? 0.0
                                    : pc.span * (2.0 * static_cast<double>(i) - static_cast<double>(pc.grid_n - 1)) /
                                          static_cast<double>(pc.grid_n - 1);
            if (cfg.scan) {
              const PowerOptions po{.k = 1, .iters = pc.power_iters, .tol = pc.tol, .seed = seed};
              const auto top = top_hessian_eigs(model, b.x, target, po, fwd);
              const auto losses = eigvec_perturb_scan(model, b.x, target, top.eigenvectors[0], t, fwd);
              std::string csv = "t,loss\n";
              for (std::size_t i = 0; i < t.size(); ++i) csv += format_double(t[i]) + ',' + format_double(losses[i]) + '\n';
              write_text(run.dir / "scan.csv", csv);
            }
            if (cfg.landscape) {
              const auto grid = landscape_slice(model, b.x, target, pc.grid_n, pc.span, seed, fwd);
              std::string csv = "a,b,loss\n";
              for (std::size_t i = 0; i < grid.n; ++i)
                for (std::size_t j = 0; j < grid.n; ++j)
                  csv += format_double(grid.coords[i]) + ',' + format_double(grid.coords[j]) + ',' +
                         format_double(grid.at(i, j)) + '\n';
              write_text(run.dir / "landscape.csv", csv);
            }
          }

          if (run.diverged || run.result.history.empty()) {
            row.diverged += run.diverged ? 1 : 0;
          } else {
            run.test_acc = run.result.history.back().test_acc;
            row.seeds.push_back(seed);
            row.accs.push_back(run.test_acc);
          }
          outcome.runs.push_back(std::move(run));
        }
        mean_std(row);
        outcome.summary.push_back(std::move(row));
      }
  write_text(cfg.output / "summary.csv", summary_csv(outcome.summary));
  return outcome;
}

std::vector<DeltaRow> compare_runs(const std::vector<SummaryRow>& a, const std::vector<SummaryRow>& b) {
  std::set<std::string> ta, tb;
  for (const auto& r : a) ta.insert(r.tweaks);
  for (const auto& r : b) tb.insert(r.tweaks);
  const bool by_tweak = ta == tb;
  auto key = [&](const SummaryRow& r) { return r.algo + '|' + format_double(r.sparsity) + (by_tweak ? '|' + r.tweaks : ""); };
  std::map<std::string, const SummaryRow*> ka, kb;
  for (const auto& r : a)
    if (!ka.emplace(key(r), &r).second) throw ArgumentError("summary lists cell " + key(r) + " twice");
  for (const auto& r : b)
    if (!kb.emplace(key(r), &r).second) throw ArgumentError("summary lists cell " + key(r) + " twice");
  if (ka.size() != kb.size() || !std::equal(ka.begin(), ka.end(), kb.begin(), [](auto& x, auto& y) { return x.first == y.first; }))
    throw ArgumentError("summaries do not share grid axes");

  std::vector<DeltaRow> out;
  for (const auto& r : a) {
    const SummaryRow& ra = r;
    const SummaryRow& rb = *kb.at(key(r));
    DeltaRow d{.algo = ra.algo, .sparsity = ra.sparsity, .tweaks_a = ra.tweaks, .tweaks_b = rb.tweaks,
               .mean_a = ra.mean, .mean_b = rb.mean, .delta = rb.mean - ra.mean};
    const double na = static_cast<double>(ra.accs.size()), nb = static_cast<double>(rb.accs.size());
    d.pooled_std = na + nb > 2.0
                       ? std::sqrt(((na - 1.0) * ra.std * ra.std + (nb - 1.0) * rb.std * rb.std) / (na + nb - 2.0))
                       : 0.0;
    if (ra.seeds == rb.seeds && !ra.seeds.empty()) {
      d.paired = true;
      double acc = 0.0;
      for (std::size_t i = 0; i < ra.accs.size(); ++i) acc += rb.accs[i] - ra.accs[i];
      d.paired_delta = acc / na;
    }
    out.push_back(d);
  }
  return out;
}

std::string delta_csv(const std::vector<DeltaRow>& rows) {
  std::string out = "algo,sparsity,tweaks_a,tweaks_b,mean_a,mean_b,delta,pooled_std,paired_delta\n";
  for (const auto& d : rows)
    out += d.algo + ',' + format_double(d.sparsity) + ',' + d.tweaks_a + ',' + d.tweaks_b + ',' + format_double(d.mean_a) +
           ',' + format_double(d.mean_b) + ',' + format_double(d.delta) + ',' + format_double(d.pooled_std) + ',' +
           (d.paired ? format_double(d.paired_delta) : std::string()) + '\n';
  return out;
}

}  // namespace splab
