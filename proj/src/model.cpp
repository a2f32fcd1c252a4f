#include "splab/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "splab/error.hpp"

namespace splab {

std::string_view activation_name(ActivationKind kind) {
  switch (kind) {
    case ActivationKind::kRelu: return "relu";
    case ActivationKind::kPSwish: return "pswish";
    case ActivationKind::kMish: return "mish";
  }
  return "?";
}

ActivationKind parse_activation(std::string_view name) {
  if (name == "relu") return ActivationKind::kRelu;
  if (name == "pswish" || name == "swish") return ActivationKind::kPSwish;
  if (name == "mish") return ActivationKind::kMish;
  throw ArgumentError("unknown activation '" + std::string(name) + "'");
}

std::string_view layer_name(LayerKind kind) {
  switch (kind) {
    case LayerKind::kDense: return "dense";
    case LayerKind::kConv3x3: return "conv3x3";
    case LayerKind::kBatchNorm: return "batchnorm";
    case LayerKind::kActivation: return "activation";
    case LayerKind::kResidualBlock: return "residual_block";
    case LayerKind::kGlobalPool: return "global_pool";
  }
  return "?";
}

std::string GhostSite::describe() const {
  std::string s = "layer " + std::to_string(layer);
  if (sub >= 0) s += " sub-block " + std::to_string(sub);
  return s + " " + shape_str(shape);
}

ModelSpec mlp_preset(std::size_t input_dim, std::vector<std::size_t> hidden, std::size_t classes, bool batchnorm) {
  ModelSpec spec{.name = "mlp", .input_shape = {input_dim}, .classes = classes};
  for (std::size_t w : hidden) {
    spec.layers.push_back(LayerSpec::dense(w));
    if (batchnorm) spec.layers.push_back(LayerSpec::batchnorm());
    spec.layers.push_back(LayerSpec::act());
  }
  spec.layers.push_back(LayerSpec::dense(classes));
  return spec;
}

ModelSpec resnet_tiny_preset(Shape input_shape, std::size_t classes) {
  ModelSpec spec{.name = "resnet-tiny", .input_shape = std::move(input_shape), .classes = classes};
  spec.layers = {LayerSpec::conv(8),      LayerSpec::batchnorm(),    LayerSpec::act(),
                 LayerSpec::residual(8),  LayerSpec::residual(16, 2), LayerSpec::residual(32, 2),
                 LayerSpec::global_pool(), LayerSpec::dense(classes)};
  return spec;
}

namespace {

std::string layer_prefix(std::size_t i) {
  std::string s = std::to_string(i);
  if (s.size() < 2) s.insert(0, 2 - s.size(), '0');
  return "L" + s;
}

[[noreturn]] void chain_fail(std::size_t i, const LayerSpec& l, const std::string& msg) {
  throw BuildError("layer " + std::to_string(i) + " (" + std::string(layer_name(l.kind)) + "): " + msg);
}

Shape conv_out(const Shape& in, std::size_t channels, int stride) {
  return {channels, (in[1] - 1) / static_cast<std::size_t>(stride) + 1,
          (in[2] - 1) / static_cast<std::size_t>(stride) + 1};
}

}  // namespace

ParamBlock& Model::block(std::string_view name) {
  auto i = find_block(name);
  if (!i) throw ArgumentError("no parameter block '" + std::string(name) + "'");
  return blocks_[*i];
}

const ParamBlock& Model::block(std::string_view name) const {
  auto i = find_block(name);
  if (!i) throw ArgumentError("no parameter block '" + std::string(name) + "'");
  return blocks_[*i];
}

std::optional<std::size_t> Model::find_block(std::string_view name) const {
  for (std::size_t i = 0; i < blocks_.size(); ++i)
    if (blocks_[i].name == name) return i;
  return std::nullopt;
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const auto& b : blocks_) n += b.value.size();
  return n;
}

std::size_t Model::maskable_count() const {
  std::size_t n = 0;
  for (const auto& b : blocks_)
    if (b.maskable()) n += b.value.size();
  return n;
}

std::size_t Model::activation_count() const {
  std::size_t n = 0;
  for (const auto& l : spec_.layers) {
    if (l.kind == LayerKind::kActivation) n += 1;
    if (l.kind == LayerKind::kResidualBlock) n += 2;
  }
  return n;
}

std::vector<std::string> Model::groups() const {
  std::vector<std::string> out;
  for (const auto& b : blocks_)
    if (b.maskable()) out.push_back(b.group);
  return out;
}

Model build_model(const ModelSpec& spec, std::uint64_t seed) {
  if (spec.layers.empty()) throw BuildError("model spec has no layers");
  if (spec.input_shape.empty() || shape_numel(spec.input_shape) == 0) throw BuildError("model spec has no input shape");
  if (spec.classes < 2) throw BuildError("model needs at least 2 classes");

  Model m;
  m.spec_ = spec;
  std::mt19937_64 rng(seed);

  auto add_weight = [&](const std::string& group, Shape shape, std::size_t fan_in) {
    ParamBlock b{.name = group + ".w", .kind = ParamKind::kWeight, .group = group, .fan_in = fan_in};
    b.value = Tensor(std::move(shape));
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
    for (double& v : b.value.values()) v = dist(rng);
    b.momentum.assign(b.value.size(), 0.0);
    m.blocks_.push_back(std::move(b));
  };
  auto add_vector = [&](const std::string& name, const std::string& group, ParamKind kind, std::size_t n, double fill) {
    ParamBlock b{.name = name, .kind = kind, .group = group};
    b.value = Tensor({n}, fill);
    b.momentum.assign(n, 0.0);
    m.blocks_.push_back(std::move(b));
  };
  auto add_conv = [&](const std::string& group, std::size_t in_c, std::size_t out_c) {
    add_weight(group, {out_c, in_c, 3, 3}, in_c * 9);
    add_vector(group + ".b", group, ParamKind::kBias, out_c, 0.0);
  };
  auto add_bn = [&](const std::string& group, std::size_t channels) {
    add_vector(group + ".gamma", group, ParamKind::kBnScale, channels, 1.0);
    add_vector(group + ".beta", group, ParamKind::kBnShift, channels, 0.0);
    m.running_[group] = RunningStats{Tensor({channels}, 0.0), Tensor({channels}, 1.0)};
  };

  Shape cur = spec.input_shape;
  Shape sub_in;  // empty when no dense/conv feeds the next activation
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& l = spec.layers[i];
    const std::string p = layer_prefix(i);
    switch (l.kind) {
      case LayerKind::kDense: {
        if (l.width == 0) chain_fail(i, l, "width must be positive");
        const std::size_t in = shape_numel(cur);
        sub_in = Shape{in};
        add_weight(p, {in, l.width}, in);
        add_vector(p + ".b", p, ParamKind::kBias, l.width, 0.0);
        cur = {l.width};
        break;
      }
      case LayerKind::kConv3x3: {
        if (cur.size() != 3) chain_fail(i, l, "expects (C,H,W) input, got " + shape_str(cur));
        if (l.width == 0) chain_fail(i, l, "channels must be positive");
        if (l.stride != 1 && l.stride != 2) chain_fail(i, l, "stride must be 1 or 2");
        sub_in = cur;
        add_conv(p, cur[0], l.width);
        cur = conv_out(cur, l.width, l.stride);
        break;
      }
      case LayerKind::kBatchNorm: {
        add_bn(p, cur[0]);
        break;
      }
      case LayerKind::kActivation: {
        if (sub_in == cur) m.ghost_sites_.push_back(GhostSite{.layer = i, .sub = -1, .shape = cur});
        sub_in.clear();
        break;
      }
      case LayerKind::kResidualBlock: {
        if (cur.size() != 3) chain_fail(i, l, "expects (C,H,W) input, got " + shape_str(cur));
        if (l.width == 0) chain_fail(i, l, "channels must be positive");
        if (l.stride != 1 && l.stride != 2) chain_fail(i, l, "stride must be 1 or 2");
        const Shape out = conv_out(cur, l.width, l.stride);
        const bool reshapes = out != cur;
        if (l.has_native_skip && reshapes && !l.projection)
          chain_fail(i, l, "native skip needs " + shape_str(cur) + " == " + shape_str(out) + " without a projection");
        add_conv(p + ".conv1", cur[0], l.width);
        add_bn(p + ".bn1", l.width);
        add_conv(p + ".conv2", l.width, l.width);
        add_bn(p + ".bn2", l.width);
        if (l.has_native_skip && reshapes) {
          add_conv(p + ".proj", cur[0], l.width);
          add_bn(p + ".bnp", l.width);
        }
        if (!reshapes) m.ghost_sites_.push_back(GhostSite{.layer = i, .sub = 0, .shape = out});
        m.ghost_sites_.push_back(GhostSite{.layer = i, .sub = 1, .shape = out});
        cur = out;
        sub_in.clear();
        break;
      }
      case LayerKind::kGlobalPool: {
        if (cur.size() != 3) chain_fail(i, l, "expects (C,H,W) input, got " + shape_str(cur));
        cur = {cur[0]};
        break;
      }
    }
  }
  if (cur != Shape{spec.classes})
    chain_fail(spec.layers.size() - 1, spec.layers.back(),
               "network output " + shape_str(cur) + " does not match " + std::to_string(spec.classes) + " classes");
  return m;
}

namespace {

struct BuildState {
  Graph& g;
  const Model& m;
  const ForwardOptions& opts;
  ModelGraph& mg;

  NodeId param(const std::string& name) const {
    auto i = m.find_block(name);
    if (!i) throw ArgumentError("no parameter block '" + name + "'");
    return mg.params[*i];
  }

  NodeId activation(NodeId x, ActivationKind native) const {
    Activation a{native, 1.0};
    if (native == ActivationKind::kRelu && opts.replace_relu) a = *opts.replace_relu;
    NodeId y;
    switch (a.kind) {
      case ActivationKind::kRelu: y = g.relu(x); break;
      case ActivationKind::kPSwish: y = g.pswish(x, a.beta); break;
      case ActivationKind::kMish: y = g.mish(x); break;
      default: y = g.relu(x);
    }
    mg.pre_activations.push_back(x);
    mg.activations.push_back(y);
    return y;
  }

  NodeId batchnorm(NodeId x, const std::string& group) const {
    if (opts.bn_passthrough) return x;
    const RunningStats& rs = m.running_stats().at(group);
    NodeId y = g.batchnorm(x, param(group + ".gamma"), param(group + ".beta"), opts.bn_mode, &rs.mean, &rs.var);
    mg.batchnorms.emplace_back(group, y);
    return y;
  }

  NodeId ghost(NodeId pre, NodeId site_in, double alpha) const {
    if (alpha == 0.0) return pre;
    return g.add(pre, g.mul(site_in, g.constant(Tensor::scalar(alpha))));
  }

  bool is_site(std::size_t layer, int sub) const {
    return std::any_of(m.ghost_sites().begin(), m.ghost_sites().end(),
                       [&](const GhostSite& s) { return s.layer == layer && s.sub == sub; });
  }

  NodeId residual(std::size_t i, NodeId x, double alpha) const {
    const LayerSpec& l = m.spec().layers[i];
    const std::string p = layer_prefix(i);
    NodeId h = g.conv2d(x, param(p + ".conv1.w"), param(p + ".conv1.b"), l.stride);
    h = batchnorm(h, p + ".bn1");
    if (is_site(i, 0)) h = ghost(h, x, alpha);
    const NodeId a1 = activation(h, l.activation);
    NodeId o = g.conv2d(a1, param(p + ".conv2.w"), param(p + ".conv2.b"), 1);
    o = batchnorm(o, p + ".bn2");
    if (l.has_native_skip) {
      NodeId skip = x;
      if (m.find_block(p + ".proj.w")) {
        skip = g.conv2d(x, param(p + ".proj.w"), param(p + ".proj.b"), l.stride);
        skip = batchnorm(skip, p + ".bnp");
      }
      o = g.add(o, skip);
    }
    if (is_site(i, 1)) o = ghost(o, a1, alpha);
    return activation(o, l.activation);
  }
};

}  // namespace

ModelGraph Model::build(Graph& g, NodeId x, const ForwardOptions& opts, bool requires_grad) const {
  if (opts.ghost_alpha < 0.0 || opts.ghost_alpha > 1.0) throw ArgumentError("ghost alpha must lie in [0,1]");
  ModelGraph mg;
  mg.input = x;
  for (const auto& b : blocks_) mg.params.push_back(g.input(b.name, requires_grad));
  BuildState st{g, *this, opts, mg};

  NodeId cur = x;
  std::size_t rank = spec_.input_shape.size();
  NodeId sub_in = 0;
  bool has_sub = false;
  for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
    const LayerSpec& l = spec_.layers[i];
    const std::string p = layer_prefix(i);
    switch (l.kind) {
      case LayerKind::kDense:
        if (rank > 1) cur = g.reshape(cur);
        sub_in = cur;
        has_sub = true;
        cur = g.add(g.matmul(cur, st.param(p + ".w")), st.param(p + ".b"));
        rank = 1;
        break;
      case LayerKind::kConv3x3:
        sub_in = cur;
        has_sub = true;
        cur = g.conv2d(cur, st.param(p + ".w"), st.param(p + ".b"), l.stride);
        break;
      case LayerKind::kBatchNorm:
        cur = st.batchnorm(cur, p);
        break;
      case LayerKind::kActivation:
        if (has_sub && st.is_site(i, -1)) cur = st.ghost(cur, sub_in, opts.ghost_alpha);
        cur = st.activation(cur, l.activation);
        has_sub = false;
        break;
      case LayerKind::kResidualBlock:
        cur = st.residual(i, cur, opts.ghost_alpha);
        has_sub = false;
        break;
      case LayerKind::kGlobalPool:
        cur = g.global_avg_pool(cur);
        rank = 1;
        break;
    }
  }
  mg.logits = cur;
  return mg;
}

NamedTensors Model::bindings() const {
  NamedTensors b;
  for (const auto& p : blocks_) b.emplace(p.name, p.value);
  return b;
}

namespace {

void check_input(const Model& m, const Tensor& x) {
  Shape expect = m.spec().input_shape;
  expect.insert(expect.begin(), x.rank() ? x.dim(0) : 0);
  if (x.shape() != expect)
    throw ShapeError("model input " + shape_str(x.shape()) + " does not match (N, " + shape_str(m.spec().input_shape) + ")");
}

}  // namespace

Tensor Model::predict(const Tensor& x, const ForwardOptions& opts) const {
  check_input(*this, x);
  Graph g;
  const NodeId xin = g.input("__x");
  const ModelGraph mg = build(g, xin, opts, false);
  NamedTensors binds = bindings();
  binds.emplace("__x", x);
  g.forward(binds);
  return g.value(mg.logits);
}

namespace {

struct EvalOut {
  Model::Evaluation ev;
  std::vector<std::pair<std::string, Graph::BatchStats>> stats;
};

EvalOut evaluate_impl(const Model& m, const Tensor& x, const Tensor& target, const ForwardOptions& opts,
                      bool want_grads, bool want_activations, bool want_stats) {
  check_input(m, x);
  Graph g;
  const NodeId xin = g.input("__x");
  const NodeId tin = g.input("__target");
  const ModelGraph mg = m.build(g, xin, opts, want_grads);
  const NodeId loss = g.softmax_cross_entropy(mg.logits, tin);
  g.set_root(loss);
  NamedTensors binds = m.bindings();
  binds.emplace("__x", x);
  binds.emplace("__target", target);
  g.forward(binds);

  EvalOut out;
  out.ev.loss = g.value(loss).item();
  out.ev.logits = g.value(mg.logits);
  if (want_activations) {
    for (NodeId a : mg.activations) out.ev.activations.push_back(g.value(a));
    for (NodeId a : mg.pre_activations) out.ev.pre_activations.push_back(g.value(a));
  }
  if (want_stats && opts.bn_mode == BatchNormMode::kTrain)
    for (const auto& [group, id] : mg.batchnorms) out.stats.emplace_back(group, g.batch_stats(id));
  if (want_grads) {
    g.backward(Tensor::scalar(1.0));
    out.ev.grads.reserve(mg.params.size());
    for (NodeId p : mg.params) out.ev.grads.push_back(g.grad(p));
  }
  return out;
}

}  // namespace

Model::Evaluation Model::evaluate(const Tensor& x, const Tensor& target, const ForwardOptions& opts, bool want_grads,
                                  bool want_activations) const {
  return evaluate_impl(*this, x, target, opts, want_grads, want_activations, false).ev;
}

Model::Evaluation Model::train_step_eval(const Tensor& x, const Tensor& target, const ForwardOptions& opts) {
  EvalOut out = evaluate_impl(*this, x, target, opts, true, false, true);
  for (const auto& [group, st] : out.stats) {
    RunningStats& rs = running_.at(group);
    for (std::size_t c = 0; c < st.mean.size(); ++c) {
      rs.mean[c] = (1.0 - kBatchNormMomentum) * rs.mean[c] + kBatchNormMomentum * st.mean[c];
      rs.var[c] = (1.0 - kBatchNormMomentum) * rs.var[c] + kBatchNormMomentum * st.var[c];
    }
  }
  return std::move(out.ev);
}

std::vector<double> Model::flat_values() const {
  std::vector<double> v;
  v.reserve(parameter_count());
  for (const auto& b : blocks_) v.insert(v.end(), b.value.values().begin(), b.value.values().end());
  return v;
}

void Model::set_flat_values(std::span<const double> values) {
  if (values.size() != parameter_count()) throw ArgumentError("flat parameter vector has the wrong length");
  std::size_t off = 0;
  for (auto& b : blocks_) {
    std::copy_n(values.begin() + static_cast<std::ptrdiff_t>(off), b.value.size(), b.value.values().begin());
    off += b.value.size();
  }
}

std::vector<double> Model::flat_free() const {
  std::vector<double> v;
  v.reserve(parameter_count());
  for (const auto& b : blocks_)
    for (std::size_t i = 0; i < b.value.size(); ++i) v.push_back(b.masked(i) ? 0.0 : 1.0);
  return v;
}

std::vector<double> Model::flatten(const std::vector<Tensor>& tensors) {
  std::vector<double> v;
  for (const auto& t : tensors) v.insert(v.end(), t.values().begin(), t.values().end());
  return v;
}

Tensor residual_block_forward(const Model& model, std::size_t layer, const Tensor& x, double alpha,
                              const ForwardOptions& opts) {
  if (layer >= model.spec().layers.size() || model.spec().layers[layer].kind != LayerKind::kResidualBlock)
    throw ArgumentError("layer " + std::to_string(layer) + " is not a residual block");
  if (alpha < 0.0 || alpha > 1.0) throw ArgumentError("ghost alpha must lie in [0,1]");
  Graph g;
  const NodeId xin = g.input("__x");
  ModelGraph mg;
  mg.input = xin;
  for (const auto& b : model.blocks()) mg.params.push_back(g.input(b.name, false));
  BuildState st{g, model, opts, mg};
  const NodeId out = st.residual(layer, xin, alpha);
  NamedTensors binds = model.bindings();
  binds.emplace("__x", x);
  g.forward(binds);
  return g.value(out);
}

}  // namespace splab
