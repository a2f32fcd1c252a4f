#include "splab/graph.hpp"

#include <algorithm>
#include <cmath>

#include "splab/activations.hpp"
#include "splab/error.hpp"

namespace splab {

std::string_view op_name(OpKind kind) {
  switch (kind) {
    case OpKind::kInput: return "input";
    case OpKind::kConstant: return "constant";
    case OpKind::kMatMul: return "matmul";
    case OpKind::kAdd: return "add";
    case OpKind::kMul: return "mul";
    case OpKind::kConv2d: return "conv2d";
    case OpKind::kBatchNorm: return "batchnorm";
    case OpKind::kRelu: return "relu";
    case OpKind::kPSwish: return "pswish";
    case OpKind::kMish: return "mish";
    case OpKind::kGlobalAvgPool: return "global_avg_pool";
    case OpKind::kReshape: return "reshape";
    case OpKind::kSum: return "sum";
    case OpKind::kSoftmaxCrossEntropy: return "softmax_cross_entropy";
  }
  return "?";
}

const Graph::Node& Graph::node(NodeId id) const {
  if (id >= nodes_.size()) throw ArgumentError("node id " + std::to_string(id) + " out of range");
  return nodes_[id];
}

NodeId Graph::push(Node n) {
  for (NodeId in : n.inputs) {
    if (in >= nodes_.size()) throw ArgumentError("op references unknown node " + std::to_string(in));
    n.requires_grad = n.requires_grad || nodes_[in].requires_grad;
  }
  nodes_.push_back(std::move(n));
  forwarded_ = false;
  return nodes_.size() - 1;
}

std::string Graph::label(NodeId id) const {
  const Node& n = node(id);
  std::string s = std::string(op_name(n.kind)) + "#" + std::to_string(id);
  if (!n.name.empty()) s += " '" + n.name + "'";
  return s;
}

void Graph::shape_fail(NodeId id, const std::string& msg) const {
  throw ShapeError("node " + label(id) + ": " + msg);
}

NodeId Graph::input(std::string name, bool requires_grad) {
  if (name.empty()) throw ArgumentError("input nodes need a name");
  for (const Node& n : nodes_)
    if (n.kind == OpKind::kInput && n.name == name) throw ArgumentError("duplicate input name '" + name + "'");
  Node n{.kind = OpKind::kInput};
  n.name = std::move(name);
  n.requires_grad = requires_grad;
  return push(std::move(n));
}

NodeId Graph::constant(Tensor value) {
  Node n{.kind = OpKind::kConstant};
  n.value = std::move(value);
  return push(std::move(n));
}

NodeId Graph::matmul(NodeId a, NodeId b) { return push(Node{.kind = OpKind::kMatMul, .inputs = {a, b}}); }
NodeId Graph::add(NodeId a, NodeId b) { return push(Node{.kind = OpKind::kAdd, .inputs = {a, b}}); }
NodeId Graph::mul(NodeId a, NodeId b) { return push(Node{.kind = OpKind::kMul, .inputs = {a, b}}); }

NodeId Graph::conv2d(NodeId x, NodeId w, std::optional<NodeId> bias, int stride) {
  if (stride != 1 && stride != 2) throw ArgumentError("conv2d stride must be 1 or 2");
  Node n{.kind = OpKind::kConv2d, .inputs = {x, w}};
  if (bias) n.inputs.push_back(*bias);
  n.stride = stride;
  return push(std::move(n));
}

NodeId Graph::batchnorm(NodeId x, NodeId gamma, NodeId shift, BatchNormMode mode, const Tensor* running_mean,
                        const Tensor* running_var) {
  Node n{.kind = OpKind::kBatchNorm, .inputs = {x, gamma, shift}};
  n.bn_mode = mode;
  if (mode == BatchNormMode::kEval) {
    if (!running_mean || !running_var) throw ArgumentError("eval-mode batchnorm needs running stats");
    n.running_mean = *running_mean;
    n.running_var = *running_var;
  }
  return push(std::move(n));
}

NodeId Graph::relu(NodeId x) { return push(Node{.kind = OpKind::kRelu, .inputs = {x}}); }

NodeId Graph::pswish(NodeId x, double beta) {
  if (!(beta >= 0.0)) throw ArgumentError("pswish beta must be >= 0");
  Node n{.kind = OpKind::kPSwish, .inputs = {x}};
  n.beta = beta;
  return push(std::move(n));
}

NodeId Graph::mish(NodeId x) { return push(Node{.kind = OpKind::kMish, .inputs = {x}}); }
NodeId Graph::global_avg_pool(NodeId x) { return push(Node{.kind = OpKind::kGlobalAvgPool, .inputs = {x}}); }

NodeId Graph::reshape(NodeId x, Shape shape) {
  Node n{.kind = OpKind::kReshape, .inputs = {x}};
  n.shape_attr = std::move(shape);
  return push(std::move(n));
}

NodeId Graph::sum(NodeId x) { return push(Node{.kind = OpKind::kSum, .inputs = {x}}); }

NodeId Graph::softmax_cross_entropy(NodeId logits, NodeId target) {
  return push(Node{.kind = OpKind::kSoftmaxCrossEntropy, .inputs = {logits, target}});
}

void Graph::set_root(NodeId id) {
  node(id);
  root_ = id;
}

NodeId Graph::root() const {
  if (nodes_.empty()) throw StateError("empty graph has no root");
  return root_.value_or(nodes_.size() - 1);
}

void Graph::mark_output(std::string name, NodeId id) {
  node(id);
  outputs_[std::move(name)] = id;
}

const Tensor& Graph::value(NodeId id) const {
  if (!forwarded_) throw StateError("value() before forward()");
  return node(id).value;
}

const Tensor& Graph::grad(NodeId id) const {
  if (!backwarded_) throw StateError("grad() before backward()");
  return node(id).grad;
}

Graph::BatchStats Graph::batch_stats(NodeId id) const {
  const Node& n = node(id);
  if (n.kind != OpKind::kBatchNorm || n.bn_mode != BatchNormMode::kTrain)
    throw ArgumentError("batch_stats() needs a train-mode batchnorm node");
  if (!forwarded_) throw StateError("batch_stats() before forward()");
  const std::size_t c = n.saved2.size();
  const std::size_t count = n.value.size() / c;
  BatchStats st;
  st.mean = n.saved3;
  st.var.resize(c);
  for (std::size_t i = 0; i < c; ++i)
    st.var[i] = count > 1 ? n.saved4[i] * static_cast<double>(count) / static_cast<double>(count - 1) : 0.0;
  return st;
}

NamedTensors Graph::forward(const NamedTensors& inputs) {
  forwarded_ = false;
  backwarded_ = false;
  for (NodeId id = 0; id < nodes_.size(); ++id) {
    Node& n = nodes_[id];
    if (n.kind == OpKind::kInput) {
      auto it = inputs.find(n.name);
      if (it == inputs.end()) throw ArgumentError("input '" + n.name + "' is not bound");
      n.value = it->second;
    }
    if (n.kind != OpKind::kInput && n.kind != OpKind::kConstant) eval_node(id);
    if (!n.value.all_finite()) throw OverflowError("non-finite value produced at node " + label(id));
  }
  forwarded_ = true;
  NamedTensors out;
  for (const auto& [name, id] : outputs_) out.emplace(name, nodes_[id].value);
  return out;
}

namespace {

// Returns (outer, channels, inner) for an axis-1 channel layout.
struct ChannelLayout {
  std::size_t outer, channels, inner;
};

ChannelLayout channel_layout(const Shape& s) {
  std::size_t inner = 1;
  for (std::size_t i = 2; i < s.size(); ++i) inner *= s[i];
  return {s[0], s[1], inner};
}

}  // namespace

void Graph::eval_node(NodeId id) {
  Node& n = nodes_[id];
  auto in = [&](std::size_t k) -> const Tensor& { return nodes_[n.inputs[k]].value; };

  switch (n.kind) {
    case OpKind::kInput:
    case OpKind::kConstant:
      return;

    case OpKind::kMatMul: {
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
        shape_fail(id, "cannot multiply " + shape_str(a.shape()) + " by " + shape_str(b.shape()));
      const std::size_t rows = a.dim(0), inner = a.dim(1), cols = b.dim(1);
      Tensor y({rows, cols});
      const double* ap = a.data().data();
      const double* bp = b.data().data();
      double* yp = y.data().data();
      for (std::size_t i = 0; i < rows; ++i) {
        double* yrow = yp + i * cols;
        for (std::size_t k = 0; k < inner; ++k) {
          const double av = ap[i * inner + k];
          if (av == 0.0) continue;
          const double* brow = bp + k * cols;
          for (std::size_t j = 0; j < cols; ++j) yrow[j] += av * brow[j];
        }
      }
      n.value = std::move(y);
      return;
    }

    case OpKind::kAdd:
    case OpKind::kMul: {
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      const bool add = n.kind == OpKind::kAdd;
      Tensor y = a;
      auto ys = y.data();
      auto bs = b.data();
      if (b.shape() == a.shape()) {
        for (std::size_t i = 0; i < ys.size(); ++i) ys[i] = add ? ys[i] + bs[i] : ys[i] * bs[i];
      } else if (b.size() == 1) {
        for (double& v : ys) v = add ? v + bs[0] : v * bs[0];
      } else if (add && b.rank() == 1 && a.rank() >= 2 && b.dim(0) == a.dim(1)) {
        const auto lay = channel_layout(a.shape());
        for (std::size_t o = 0; o < lay.outer; ++o)
          for (std::size_t c = 0; c < lay.channels; ++c) {
            double* p = ys.data() + (o * lay.channels + c) * lay.inner;
            for (std::size_t i = 0; i < lay.inner; ++i) p[i] += bs[c];
          }
      } else {
        shape_fail(id, "cannot broadcast " + shape_str(b.shape()) + " onto " + shape_str(a.shape()));
      }
      n.value = std::move(y);
      return;
    }

    case OpKind::kConv2d: {
      const Tensor& x = in(0);
      const Tensor& w = in(1);
      if (x.rank() != 4) shape_fail(id, "conv2d input must be (N,C,H,W), got " + shape_str(x.shape()));
      if (w.rank() != 4 || w.dim(1) != x.dim(1) || w.dim(2) != 3 || w.dim(3) != 3)
        shape_fail(id, "conv2d kernel " + shape_str(w.shape()) + " incompatible with input " + shape_str(x.shape()));
      const std::size_t outc = w.dim(0);
      if (n.inputs.size() == 3 && in(2).shape() != Shape{outc})
        shape_fail(id, "conv2d bias must be (" + std::to_string(outc) + ")");
      const int batch = static_cast<int>(x.dim(0)), inc = static_cast<int>(x.dim(1));
      const int h = static_cast<int>(x.dim(2)), wd = static_cast<int>(x.dim(3));
      const int s = n.stride;
      const int ho = (h - 1) / s + 1, wo = (wd - 1) / s + 1;
      Tensor y({x.dim(0), outc, static_cast<std::size_t>(ho), static_cast<std::size_t>(wo)});
      const double* xp = x.data().data();
      const double* wp = w.data().data();
      double* yp = y.data().data();
      for (int b = 0; b < batch; ++b)
        for (int o = 0; o < static_cast<int>(outc); ++o) {
          double* yplane = yp + (static_cast<std::size_t>(b) * outc + o) * ho * wo;
          if (n.inputs.size() == 3) std::fill(yplane, yplane + ho * wo, in(2)[o]);
          for (int c = 0; c < inc; ++c) {
            const double* xplane = xp + (static_cast<std::size_t>(b) * inc + c) * h * wd;
            for (int ky = 0; ky < 3; ++ky)
              for (int kx = 0; kx < 3; ++kx) {
                const double wv = wp[((static_cast<std::size_t>(o) * inc + c) * 3 + ky) * 3 + kx];
                if (wv == 0.0) continue;
                const int ox_lo = kx == 0 ? 1 : 0;
                const int ox_hi = std::min(wo - 1, (wd - kx) / s);
                for (int oy = 0; oy < ho; ++oy) {
                  const int iy = oy * s + ky - 1;
                  if (iy < 0 || iy >= h) continue;
                  const double* xrow = xplane + iy * wd;
                  double* yrow = yplane + oy * wo;
                  for (int ox = ox_lo; ox <= ox_hi; ++ox) yrow[ox] += wv * xrow[ox * s + kx - 1];
                }
              }
          }
        }
      n.value = std::move(y);
      return;
    }

    case OpKind::kBatchNorm: {
      const Tensor& x = in(0);
      const Tensor& gamma = in(1);
      const Tensor& shift = in(2);
      if (x.rank() < 2) shape_fail(id, "batchnorm input needs rank >= 2");
      const auto lay = channel_layout(x.shape());
      if (gamma.shape() != Shape{lay.channels} || shift.shape() != Shape{lay.channels})
        shape_fail(id, "batchnorm scale/shift must be (" + std::to_string(lay.channels) + ")");
      if (n.bn_mode == BatchNormMode::kTrain && lay.outer < 2)
        throw ArgumentError("node " + label(id) + ": train-mode batchnorm needs a batch of at least 2");
      if (n.bn_mode == BatchNormMode::kEval &&
          (n.running_mean.size() != lay.channels || n.running_var.size() != lay.channels))
        shape_fail(id, "running stats do not match channel count");
      Tensor y(x.shape());
      n.saved.assign(x.size(), 0.0);       // xhat
      n.saved2.assign(lay.channels, 0.0);  // inverse std
      n.saved3.assign(lay.channels, 0.0);  // mean
      n.saved4.assign(lay.channels, 0.0);  // variance
      const double count = static_cast<double>(lay.outer * lay.inner);
      for (std::size_t c = 0; c < lay.channels; ++c) {
        double mean, var;
        if (n.bn_mode == BatchNormMode::kTrain) {
          double acc = 0.0;
          for (std::size_t o = 0; o < lay.outer; ++o) {
            const double* p = x.data().data() + (o * lay.channels + c) * lay.inner;
            for (std::size_t i = 0; i < lay.inner; ++i) acc += p[i];
          }
          mean = acc / count;
          double sq = 0.0;
          for (std::size_t o = 0; o < lay.outer; ++o) {
            const double* p = x.data().data() + (o * lay.channels + c) * lay.inner;
            for (std::size_t i = 0; i < lay.inner; ++i) sq += (p[i] - mean) * (p[i] - mean);
          }
          var = sq / count;
        } else {
          mean = n.running_mean[c];
          var = n.running_var[c];
        }
        const double inv = 1.0 / std::sqrt(var + kBatchNormEps);
        n.saved2[c] = inv;
        n.saved3[c] = mean;
        n.saved4[c] = var;
        for (std::size_t o = 0; o < lay.outer; ++o) {
          const std::size_t base = (o * lay.channels + c) * lay.inner;
          for (std::size_t i = 0; i < lay.inner; ++i) {
            const double xh = (x[base + i] - mean) * inv;
            n.saved[base + i] = xh;
            y[base + i] = gamma[c] * xh + shift[c];
          }
        }
      }
      n.value = std::move(y);
      return;
    }

    case OpKind::kRelu:
    case OpKind::kPSwish:
    case OpKind::kMish: {
      Tensor y = in(0);
      for (double& v : y.values()) {
        if (n.kind == OpKind::kRelu) v = relu_value(v);
        else if (n.kind == OpKind::kPSwish) v = pswish_value(v, n.beta);
        else v = mish_value(v);
      }
      n.value = std::move(y);
      return;
    }

    case OpKind::kGlobalAvgPool: {
      const Tensor& x = in(0);
      if (x.rank() != 4) shape_fail(id, "global_avg_pool input must be (N,C,H,W)");
      const auto lay = channel_layout(x.shape());
      Tensor y({lay.outer, lay.channels});
      for (std::size_t o = 0; o < lay.outer * lay.channels; ++o) {
        double acc = 0.0;
        for (std::size_t i = 0; i < lay.inner; ++i) acc += x[o * lay.inner + i];
        y[o] = acc / static_cast<double>(lay.inner);
      }
      n.value = std::move(y);
      return;
    }

    case OpKind::kReshape: {
      const Tensor& x = in(0);
      Shape target = n.shape_attr;
      if (target.empty()) target = {x.dim(0), x.size() / x.dim(0)};
      if (shape_numel(target) != x.size()) shape_fail(id, "cannot reshape " + shape_str(x.shape()) + " to " + shape_str(target));
      n.value = x.reshaped(std::move(target));
      return;
    }

    case OpKind::kSum: {
      double acc = 0.0;
      for (double v : in(0).data()) acc += v;
      n.value = Tensor::scalar(acc);
      return;
    }

    case OpKind::kSoftmaxCrossEntropy: {
      const Tensor& z = in(0);
      const Tensor& t = in(1);
      if (z.rank() != 2 || t.shape() != z.shape())
        shape_fail(id, "logits " + shape_str(z.shape()) + " and target " + shape_str(t.shape()) + " must be equal (N,K)");
      const std::size_t rows = z.dim(0), k = z.dim(1);
      n.saved.assign(z.size(), 0.0);  // log-softmax
      double loss = 0.0;
      for (std::size_t r = 0; r < rows; ++r) {
        const double* zr = z.data().data() + r * k;
        const double mx = *std::max_element(zr, zr + k);
        double se = 0.0;
        for (std::size_t j = 0; j < k; ++j) se += std::exp(zr[j] - mx);
        const double lse = mx + std::log(se);
        for (std::size_t j = 0; j < k; ++j) {
          const double lp = zr[j] - lse;
          n.saved[r * k + j] = lp;
          loss -= t[r * k + j] * lp;
        }
      }
      n.value = Tensor::scalar(loss / static_cast<double>(rows));
      return;
    }
  }
}

NamedTensors Graph::backward(const Tensor& seed) {
  if (!forwarded_) throw StateError("backward() called before forward()");
  const NodeId r = root();
  if (seed.shape() != nodes_[r].value.shape())
    throw ShapeError("seed shape " + shape_str(seed.shape()) + " does not match root " + shape_str(nodes_[r].value.shape()));
  for (Node& n : nodes_) n.grad = Tensor(n.value.shape(), 0.0);
  nodes_[r].grad = seed;
  for (NodeId id = r + 1; id-- > 0;) {
    if (nodes_[id].requires_grad) backprop_node(id);
  }
  backwarded_ = true;
  NamedTensors out;
  for (const Node& n : nodes_)
    if (n.kind == OpKind::kInput && n.requires_grad) out.emplace(n.name, n.grad);
  return out;
}

void Graph::backprop_node(NodeId id) {
  Node& n = nodes_[id];
  const Tensor& dy = n.grad;
  auto in = [&](std::size_t k) -> Node& { return nodes_[n.inputs[k]]; };

  switch (n.kind) {
    case OpKind::kInput:
    case OpKind::kConstant:
      return;

    case OpKind::kMatMul: {
      Node& a = in(0);
      Node& b = in(1);
      const std::size_t rows = a.value.dim(0), inner = a.value.dim(1), cols = b.value.dim(1);
      const double* ap = a.value.data().data();
      const double* bp = b.value.data().data();
      const double* gp = dy.data().data();
      if (a.requires_grad) {
        double* da = a.grad.data().data();
        for (std::size_t i = 0; i < rows; ++i)
          for (std::size_t k = 0; k < inner; ++k) {
            double acc = 0.0;
            const double* brow = bp + k * cols;
            const double* grow = gp + i * cols;
            for (std::size_t j = 0; j < cols; ++j) acc += grow[j] * brow[j];
            da[i * inner + k] += acc;
          }
      }
      if (b.requires_grad) {
        double* db = b.grad.data().data();
        for (std::size_t i = 0; i < rows; ++i)
          for (std::size_t k = 0; k < inner; ++k) {
            const double av = ap[i * inner + k];
            if (av == 0.0) continue;
            const double* grow = gp + i * cols;
            double* drow = db + k * cols;
            for (std::size_t j = 0; j < cols; ++j) drow[j] += av * grow[j];
          }
      }
      return;
    }

    case OpKind::kAdd:
    case OpKind::kMul: {
      Node& a = in(0);
      Node& b = in(1);
      const bool add = n.kind == OpKind::kAdd;
      const auto g = dy.data();
      const auto bv = b.value.data();
      const auto av = a.value.data();
      const bool same = b.value.shape() == a.value.shape();
      const bool scalar = !same && b.value.size() == 1;
      if (a.requires_grad) {
        auto da = a.grad.data();
        for (std::size_t i = 0; i < g.size(); ++i) {
          const double factor = add ? 1.0 : (same ? bv[i] : bv[0]);
          da[i] += g[i] * factor;
        }
      }
      if (b.requires_grad) {
        auto db = b.grad.data();
        if (same) {
          for (std::size_t i = 0; i < g.size(); ++i) db[i] += add ? g[i] : g[i] * av[i];
        } else if (scalar) {
          double acc = 0.0;
          for (std::size_t i = 0; i < g.size(); ++i) acc += add ? g[i] : g[i] * av[i];
          db[0] += acc;
        } else {
          const auto lay = channel_layout(a.value.shape());
          for (std::size_t o = 0; o < lay.outer; ++o)
            for (std::size_t c = 0; c < lay.channels; ++c) {
              const double* p = g.data() + (o * lay.channels + c) * lay.inner;
              double acc = 0.0;
              for (std::size_t i = 0; i < lay.inner; ++i) acc += p[i];
              db[c] += acc;
            }
        }
      }
      return;
    }

    case OpKind::kConv2d: {
      Node& xn = in(0);
      Node& wn = in(1);
      const Tensor& x = xn.value;
      const Tensor& w = wn.value;
      const std::size_t outc = w.dim(0);
      const int batch = static_cast<int>(x.dim(0)), inc = static_cast<int>(x.dim(1));
      const int h = static_cast<int>(x.dim(2)), wd = static_cast<int>(x.dim(3));
      const int s = n.stride;
      const int ho = static_cast<int>(dy.dim(2)), wo = static_cast<int>(dy.dim(3));
      const double* xp = x.data().data();
      const double* wp = w.data().data();
      const double* gp = dy.data().data();
      double* dx = xn.requires_grad ? xn.grad.data().data() : nullptr;
      double* dw = wn.requires_grad ? wn.grad.data().data() : nullptr;
      for (int b = 0; b < batch; ++b)
        for (int o = 0; o < static_cast<int>(outc); ++o) {
          const double* gplane = gp + (static_cast<std::size_t>(b) * outc + o) * ho * wo;
          for (int c = 0; c < inc; ++c) {
            const std::size_t xoff = (static_cast<std::size_t>(b) * inc + c) * h * wd;
            for (int ky = 0; ky < 3; ++ky)
              for (int kx = 0; kx < 3; ++kx) {
                const std::size_t widx = ((static_cast<std::size_t>(o) * inc + c) * 3 + ky) * 3 + kx;
                const double wv = wp[widx];
                const int ox_lo = kx == 0 ? 1 : 0;
                const int ox_hi = std::min(wo - 1, (wd - kx) / s);
                double acc = 0.0;
                for (int oy = 0; oy < ho; ++oy) {
                  const int iy = oy * s + ky - 1;
                  if (iy < 0 || iy >= h) continue;
                  const double* grow = gplane + oy * wo;
                  const std::size_t xrow = xoff + static_cast<std::size_t>(iy) * wd;
                  if (dw)
                    for (int ox = ox_lo; ox <= ox_hi; ++ox) acc += grow[ox] * xp[xrow + ox * s + kx - 1];
                  if (dx && wv != 0.0)
                    for (int ox = ox_lo; ox <= ox_hi; ++ox) dx[xrow + ox * s + kx - 1] += wv * grow[ox];
                }
                if (dw) dw[widx] += acc;
              }
          }
        }
      if (n.inputs.size() == 3 && in(2).requires_grad) {
        double* db = in(2).grad.data().data();
        for (int b = 0; b < batch; ++b)
          for (std::size_t o = 0; o < outc; ++o) {
            const double* gplane = gp + (static_cast<std::size_t>(b) * outc + o) * ho * wo;
            double acc = 0.0;
            for (int i = 0; i < ho * wo; ++i) acc += gplane[i];
            db[o] += acc;
          }
      }
      return;
    }

    case OpKind::kBatchNorm: {
      Node& xn = in(0);
      Node& gn = in(1);
      Node& sn = in(2);
      const auto lay = channel_layout(xn.value.shape());
      const double count = static_cast<double>(lay.outer * lay.inner);
      for (std::size_t c = 0; c < lay.channels; ++c) {
        double sum_g = 0.0, sum_gx = 0.0;
        for (std::size_t o = 0; o < lay.outer; ++o) {
          const std::size_t base = (o * lay.channels + c) * lay.inner;
          for (std::size_t i = 0; i < lay.inner; ++i) {
            sum_g += dy[base + i];
            sum_gx += dy[base + i] * n.saved[base + i];
          }
        }
        const double gamma = gn.value[c];
        if (gn.requires_grad) gn.grad[c] += sum_gx;
        if (sn.requires_grad) sn.grad[c] += sum_g;
        if (!xn.requires_grad) continue;
        const double inv = n.saved2[c];
        for (std::size_t o = 0; o < lay.outer; ++o) {
          const std::size_t base = (o * lay.channels + c) * lay.inner;
          for (std::size_t i = 0; i < lay.inner; ++i) {
            if (n.bn_mode == BatchNormMode::kTrain) {
              xn.grad[base + i] +=
                  gamma * inv * (dy[base + i] - sum_g / count - n.saved[base + i] * sum_gx / count);
            } else {
              xn.grad[base + i] += gamma * inv * dy[base + i];
            }
          }
        }
      }
      return;
    }

    case OpKind::kRelu:
    case OpKind::kPSwish:
    case OpKind::kMish: {
      Node& xn = in(0);
      const auto x = xn.value.data();
      auto dx = xn.grad.data();
      for (std::size_t i = 0; i < x.size(); ++i) {
        double d;
        if (n.kind == OpKind::kRelu) d = relu_derivative(x[i]);
        else if (n.kind == OpKind::kPSwish) d = pswish_derivative(x[i], n.beta);
        else d = mish_derivative(x[i]);
        dx[i] += dy[i] * d;
      }
      return;
    }

    case OpKind::kGlobalAvgPool: {
      Node& xn = in(0);
      const auto lay = channel_layout(xn.value.shape());
      const double scale = 1.0 / static_cast<double>(lay.inner);
      for (std::size_t o = 0; o < lay.outer * lay.channels; ++o)
        for (std::size_t i = 0; i < lay.inner; ++i) xn.grad[o * lay.inner + i] += dy[o] * scale;
      return;
    }

    case OpKind::kReshape: {
      Node& xn = in(0);
      for (std::size_t i = 0; i < dy.size(); ++i) xn.grad[i] += dy[i];
      return;
    }

    case OpKind::kSum: {
      Node& xn = in(0);
      for (double& g : xn.grad.values()) g += dy[0];
      return;
    }

    case OpKind::kSoftmaxCrossEntropy: {
      Node& zn = in(0);
      Node& tn = in(1);
      const std::size_t rows = zn.value.dim(0), k = zn.value.dim(1);
      const double scale = dy[0] / static_cast<double>(rows);
      for (std::size_t r = 0; r < rows; ++r) {
        double tsum = 0.0;
        for (std::size_t j = 0; j < k; ++j) tsum += tn.value[r * k + j];
        for (std::size_t j = 0; j < k; ++j) {
          const std::size_t i = r * k + j;
          if (zn.requires_grad) zn.grad[i] += scale * (tsum * std::exp(n.saved[i]) - tn.value[i]);
          if (tn.requires_grad) tn.grad[i] -= scale * n.saved[i];
        }
      }
      return;
    }
  }
}

}  // namespace splab
