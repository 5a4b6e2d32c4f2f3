/* Copyright 2026 The BSC Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#include "bsc/encoders/encoder.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <string>

#include "bsc/errors.hpp"
#include "bsc/numerics/ops.hpp"

namespace bsc::encoders {

namespace {

std::atomic<std::uint64_t> g_next_net_id{1};

constexpr std::size_t kNoLayer = std::numeric_limits<std::size_t>::max();

struct ItemInfo {
  std::size_t layer;
  Stage stage;
};

// Item 0 is the pooled input; then, per layer, its dense output followed by
// the norm and activation outputs when the layer has them.
std::vector<ItemInfo> item_layout(const EncoderNet& net) {
  std::vector<ItemInfo> items{{kNoLayer, Stage::kDense}};
  for (std::size_t l = 0; l < net.depth(); ++l) {
    const Layer& layer = net.layer(l);
    items.push_back({l, Stage::kDense});
    if (layer.norm != Norm::kNone) items.push_back({l, Stage::kNorm});
    if (layer.activation == Activation::kRelu) items.push_back({l, Stage::kActivation});
  }
  return items;
}

bool policy_keeps(const TapePolicy& policy, const ItemInfo& item) {
  if (item.layer == kNoLayer) return true;
  const LayerSave& s = policy.layers.at(item.layer);
  switch (item.stage) {
    case Stage::kDense: return s.dense;
    case Stage::kNorm: return s.norm;
    case Stage::kActivation: return s.activation;
  }
  return false;
}

std::size_t param_index(const EncoderNet& net, std::size_t layer, bool gain) {
  for (std::size_t i = 0; i < net.num_params(); ++i) {
    if (net.param_location(i) == std::make_pair(layer, gain)) return i;
  }
  throw Error("encoder has no such parameter");
}

Tensor layer_norm_forward(const Tensor& z, const Tensor& gain) {
  const std::size_t n = z.rows();
  const std::size_t d = z.cols();
  Tensor p({n, d});
  for (std::size_t i = 0; i < n; ++i) {
    double mean = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += z.at(i, j);
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double c = z.at(i, j) - mean;
      var += c * c;
    }
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + kNormEpsilon);
    for (std::size_t j = 0; j < d; ++j) p.at(i, j) = gain[j] * ((z.at(i, j) - mean) * inv);
  }
  return p;
}

Tensor layer_norm_backward(const Tensor& g, const Tensor& z, const Tensor& gain,
                           Tensor& gain_grad) {
  const std::size_t n = z.rows();
  const std::size_t d = z.cols();
  const double dd = static_cast<double>(d);
  Tensor dz({n, d});
  std::vector<double> xhat(d);
  std::vector<double> dxhat(d);
  for (std::size_t i = 0; i < n; ++i) {
    double mean = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += z.at(i, j);
    mean /= dd;
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double c = z.at(i, j) - mean;
      var += c * c;
    }
    var /= dd;
    const double inv = 1.0 / std::sqrt(var + kNormEpsilon);
    double mean_dx = 0.0;
    double mean_dx_x = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      xhat[j] = (z.at(i, j) - mean) * inv;
      dxhat[j] = g.at(i, j) * gain[j];
      gain_grad[j] += g.at(i, j) * xhat[j];
      mean_dx += dxhat[j];
      mean_dx_x += dxhat[j] * xhat[j];
    }
    mean_dx /= dd;
    mean_dx_x /= dd;
    for (std::size_t j = 0; j < d; ++j) {
      dz.at(i, j) = inv * (dxhat[j] - mean_dx - xhat[j] * mean_dx_x);
    }
  }
  return dz;
}

// Per-feature statistics over the batch axis; no learned parameters.
Tensor batch_norm_forward(const Tensor& z) {
  const std::size_t n = z.rows();
  const std::size_t d = z.cols();
  Tensor p({n, d});
  if (n == 0) return p;
  for (std::size_t j = 0; j < d; ++j) {
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += z.at(i, j);
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double c = z.at(i, j) - mean;
      var += c * c;
    }
    var /= static_cast<double>(n);
    const double inv = 1.0 / std::sqrt(var + kNormEpsilon);
    for (std::size_t i = 0; i < n; ++i) p.at(i, j) = (z.at(i, j) - mean) * inv;
  }
  return p;
}

Tensor batch_norm_backward(const Tensor& g, const Tensor& z) {
  const std::size_t n = z.rows();
  const std::size_t d = z.cols();
  Tensor dz({n, d});
  if (n == 0) return dz;
  const double nn = static_cast<double>(n);
  std::vector<double> xhat(n);
  for (std::size_t j = 0; j < d; ++j) {
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += z.at(i, j);
    mean /= nn;
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double c = z.at(i, j) - mean;
      var += c * c;
    }
    var /= nn;
    const double inv = 1.0 / std::sqrt(var + kNormEpsilon);
    double mean_g = 0.0;
    double mean_g_x = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      xhat[i] = (z.at(i, j) - mean) * inv;
      mean_g += g.at(i, j);
      mean_g_x += g.at(i, j) * xhat[i];
    }
    mean_g /= nn;
    mean_g_x /= nn;
    for (std::size_t i = 0; i < n; ++i) {
      dz.at(i, j) = inv * (g.at(i, j) - mean_g - xhat[i] * mean_g_x);
    }
  }
  return dz;
}

Tensor relu(const Tensor& p) {
  Tensor a = p;
  for (auto& v : a.span()) v = v > 0.0 ? v : 0.0;
  return a;
}

Tensor relu_backward(const Tensor& g, const Tensor& a) {
  Tensor out = g;
  for (std::size_t i = 0; i < out.numel(); ++i) {
    if (!(a[i] > 0.0)) out[i] = 0.0;
  }
  return out;
}

// Jacobian-vector product of o -> o / ||o|| applied row-wise.
Tensor sphere_backward(const Tensor& o, const Tensor& g) {
  const std::size_t n = o.rows();
  const std::size_t d = o.cols();
  Tensor out({n, d});
  for (std::size_t i = 0; i < n; ++i) {
    double ss = 0.0;
    for (std::size_t j = 0; j < d; ++j) ss += o.at(i, j) * o.at(i, j);
    const double norm = std::sqrt(ss);
    if (!(norm >= kDegenerateNorm)) {
      throw DegenerateEmbeddingError("backward through a zero-norm embedding row");
    }
    double ug = 0.0;
    for (std::size_t j = 0; j < d; ++j) ug += (o.at(i, j) / norm) * g.at(i, j);
    for (std::size_t j = 0; j < d; ++j) {
      out.at(i, j) = (g.at(i, j) - (o.at(i, j) / norm) * ug) / norm;
    }
  }
  return out;
}

class DirectWeights final : public WeightAccess {
 public:
  explicit DirectWeights(const EncoderNet& net) : net_(net) {}
  const Tensor& acquire(std::size_t layer) override { return net_.layer(layer).weight; }
  void release(std::size_t) override {}

 private:
  const EncoderNet& net_;
};

Tensor compute_item(const EncoderNet& net, const ItemInfo& item, const Tensor& prev,
                    WeightAccess& weights) {
  const Layer& layer = net.layer(item.layer);
  switch (item.stage) {
    case Stage::kDense: {
      const Tensor& w = weights.acquire(item.layer);
      Tensor z = matmul_nt(prev, w);
      weights.release(item.layer);
      return z;
    }
    case Stage::kNorm:
      return layer.norm == Norm::kLayerNorm ? layer_norm_forward(prev, layer.gain)
                                            : batch_norm_forward(prev);
    case Stage::kActivation:
      return relu(prev);
  }
  throw Error("unreachable stage");
}

}  // namespace

// ---------------------------------------------------------------------------
// EncoderNet

EncoderNet::EncoderNet(std::size_t input_dim, std::vector<LayerSpec> specs, InputKind kind,
                       Rng& rng)
    : input_dim_(input_dim), kind_(kind), id_(g_next_net_id.fetch_add(1)) {
  if (specs.empty()) throw ConfigError("encoder needs at least one layer");
  if (input_dim == 0) throw ConfigError("encoder input dimension must be positive");
  std::size_t fan_in = input_dim;
  for (const LayerSpec& s : specs) {
    if (s.out == 0) throw ConfigError("encoder layer width must be positive");
    Layer layer;
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    layer.weight = rng.uniform_tensor({s.out, fan_in}, -bound, bound);
    if (s.norm == Norm::kLayerNorm) layer.gain = Tensor::filled({s.out}, 1.0);
    layer.activation = s.activation;
    layer.norm = s.norm;
    layer.se_like = s.se_like;
    layers_.push_back(std::move(layer));
    fan_in = s.out;
  }
  index_params();
}

EncoderNet EncoderNet::mlp(std::size_t input_dim, std::size_t width, std::size_t depth,
                           std::size_t embed_dim, Norm hidden_norm, InputKind kind, Rng& rng) {
  if (depth == 0) throw ConfigError("encoder depth must be positive");
  std::vector<LayerSpec> specs;
  for (std::size_t l = 0; l + 1 < depth; ++l) {
    specs.push_back({width, Activation::kRelu, hidden_norm, false});
  }
  specs.push_back({embed_dim, Activation::kIdentity, Norm::kNone, false});
  return EncoderNet(input_dim, std::move(specs), kind, rng);
}

EncoderNet::EncoderNet(const EncoderNet& other)
    : input_dim_(other.input_dim_),
      kind_(other.kind_),
      layers_(other.layers_),
      param_slots_(other.param_slots_),
      id_(g_next_net_id.fetch_add(1)) {}

EncoderNet& EncoderNet::operator=(const EncoderNet& other) {
  if (this != &other) {
    input_dim_ = other.input_dim_;
    kind_ = other.kind_;
    layers_ = other.layers_;
    param_slots_ = other.param_slots_;
    ++generation_;
  }
  return *this;
}

void EncoderNet::index_params() {
  param_slots_.clear();
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    param_slots_.emplace_back(l, false);
    if (!layers_[l].gain.empty()) param_slots_.emplace_back(l, true);
  }
}

bool EncoderNet::has_batch_coupling() const {
  return std::any_of(layers_.begin(), layers_.end(),
                     [](const Layer& l) { return l.norm == Norm::kBatchNorm; });
}

const Tensor& EncoderNet::param(std::size_t i) const {
  const auto [l, gain] = param_slots_.at(i);
  return gain ? layers_[l].gain : layers_[l].weight;
}

Tensor& EncoderNet::mutable_param(std::size_t i) {
  ++generation_;
  const auto [l, gain] = param_slots_.at(i);
  return gain ? layers_[l].gain : layers_[l].weight;
}

std::string EncoderNet::param_name(std::size_t i) const {
  const auto [l, gain] = param_slots_.at(i);
  return "layer" + std::to_string(l) + (gain ? ".gain" : ".weight");
}

std::size_t EncoderNet::num_scalars() const {
  std::size_t total = 0;
  for (std::size_t i = 0; i < num_params(); ++i) total += param(i).numel();
  return total;
}

ParamGrads zero_grads(const EncoderNet& net) {
  ParamGrads g;
  g.reserve(net.num_params());
  for (std::size_t i = 0; i < net.num_params(); ++i) g.emplace_back(net.param(i).shape());
  return g;
}

TapePolicy TapePolicy::save_all(const EncoderNet& net) {
  return TapePolicy{std::vector<LayerSave>(net.depth(), LayerSave{true, true, true})};
}

TapePolicy TapePolicy::recompute_all(const EncoderNet& net) {
  return TapePolicy{std::vector<LayerSave>(net.depth(), LayerSave{false, false, false})};
}

// ---------------------------------------------------------------------------
// Passes

std::size_t ActivationTape::item_count(const EncoderNet& net) { return item_layout(net).size(); }

const Tensor* ActivationTape::saved_item(std::size_t item) const {
  const auto it = items_.find(item);
  return it == items_.end() ? nullptr : &it->second.value;
}

Tensor pool_inputs(const EncoderNet& net, const Tensor& inputs) {
  if (net.input_kind() == InputKind::kVectors) {
    if (inputs.rank() != 2 || inputs.dim(1) != net.input_dim()) {
      throw DimensionError("encoder expects [n x " + std::to_string(net.input_dim()) +
                           "] inputs, got " + shape_string(inputs.shape()));
    }
    return inputs;
  }
  if (inputs.rank() != 3 || inputs.dim(2) != net.input_dim() || inputs.dim(1) == 0) {
    throw DimensionError("text encoder expects [n x T x " + std::to_string(net.input_dim()) +
                         "] token inputs, got " + shape_string(inputs.shape()));
  }
  const std::size_t n = inputs.dim(0);
  const std::size_t steps = inputs.dim(1);
  const std::size_t d = inputs.dim(2);
  Tensor pooled({n, d});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      double s = 0.0;
      for (std::size_t t = 0; t < steps; ++t) s += inputs[(i * steps + t) * d + j];
      pooled.at(i, j) = s / static_cast<double>(steps);
    }
  }
  return pooled;
}

Tensor forward(const EncoderNet& net, const Tensor& inputs, ActivationTape* tape,
               const PassOptions& options) {
  DirectWeights direct(net);
  WeightAccess& weights = options.weights ? *options.weights : direct;
  const auto layout = item_layout(net);
  if (tape && tape->policy_.layers.size() != net.depth()) {
    throw TapeError("tape policy covers " + std::to_string(tape->policy_.layers.size()) +
                    " layers but the encoder has " + std::to_string(net.depth()));
  }

  Tensor pooled = pool_inputs(net, inputs);
  const std::size_t n = pooled.rows();
  if (tape) {
    tape->items_.clear();
    tape->populated_ = false;
  }

  TrackedTensor cur(std::move(pooled), options.ledger, MemCategory::kActivations, "fwd:input");
  for (std::size_t k = 1; k < layout.size(); ++k) {
    TrackedTensor next(compute_item(net, layout[k], cur.value, weights), options.ledger,
                       MemCategory::kActivations, "fwd");
    if (tape && policy_keeps(tape->policy_, layout[k - 1])) {
      tape->items_.emplace(k - 1, std::move(cur));
    }
    cur = std::move(next);
  }
  Tensor out = l2_normalize_rows(cur.value);
  if (tape && policy_keeps(tape->policy_, layout.back())) {
    tape->items_.emplace(layout.size() - 1, std::move(cur));
  }

  if (tape) {
    tape->populated_ = true;
    tape->net_id_ = net.id();
    tape->generation_ = net.generation();
    tape->rows_ = n;
  }
  if (options.stats) options.stats->rows_forwarded += n;
  return out;
}

ParamGrads backward(const EncoderNet& net, ActivationTape& tape, const Tensor& output_grad,
                    const PassOptions& options) {
  if (!tape.populated_) throw TapeError("backward called with an empty or consumed tape");
  if (tape.net_id_ != net.id() || tape.generation_ != net.generation()) {
    throw TapeError("activation tape was recorded for a different encoder or stale weights");
  }
  if (output_grad.rank() != 2 || output_grad.dim(0) != tape.rows_ ||
      output_grad.dim(1) != net.embed_dim()) {
    throw DimensionError("output gradient shape " + shape_string(output_grad.shape()) +
                         " does not match tape of " + std::to_string(tape.rows_) + " rows x " +
                         std::to_string(net.embed_dim()));
  }

  DirectWeights direct(net);
  WeightAccess& weights = options.weights ? *options.weights : direct;
  const auto layout = item_layout(net);
  MemoryLedger* ledger = options.ledger;

  std::map<std::size_t, TrackedTensor> live = std::move(tape.items_);
  tape.items_.clear();
  tape.populated_ = false;

  // Recomputes the segment from the nearest live item below k; recomputed
  // items stay live until their layer has been processed.
  auto use = [&](std::size_t k) -> const Tensor& {
    if (!live.count(k)) {
      std::size_t j = k;
      while (!live.count(j)) --j;  // item 0 is always live
      for (std::size_t t = j + 1; t <= k; ++t) {
        live.emplace(t, TrackedTensor(compute_item(net, layout[t], live.at(t - 1).value, weights),
                                      ledger, MemCategory::kActivations, "bwd:recompute"));
        if (options.stats) ++options.stats->items_recomputed;
      }
    }
    const Tensor& value = live.at(k).value;
    if (options.on_item_used) options.on_item_used(k, value);
    return value;
  };
  auto drop_from = [&](std::size_t k) { live.erase(live.lower_bound(k), live.end()); };

  ParamGrads grads(net.num_params());
  std::size_t k = layout.size() - 1;
  TrackedTensor g(sphere_backward(use(k), output_grad), ledger, MemCategory::kActivations,
                  "bwd:grad");

  for (std::size_t l = net.depth(); l-- > 0;) {
    const Layer& layer = net.layer(l);
    if (layer.activation == Activation::kRelu) {
      TrackedTensor gp(relu_backward(g.value, use(k)), ledger, MemCategory::kActivations,
                       "bwd:grad");
      g = std::move(gp);
      drop_from(k);
      --k;
    }
    if (layer.norm != Norm::kNone) {
      const Tensor& z = use(k - 1);
      Tensor dz;
      if (layer.norm == Norm::kLayerNorm) {
        Tensor gain_grad(layer.gain.shape());
        dz = layer_norm_backward(g.value, z, layer.gain, gain_grad);
        grads[param_index(net, l, true)] = std::move(gain_grad);
      } else {
        dz = batch_norm_backward(g.value, z);
      }
      TrackedTensor gz(std::move(dz), ledger, MemCategory::kActivations, "bwd:grad");
      g = std::move(gz);
      drop_from(k);
      --k;
    }
    // k now indexes this layer's dense output.
    const Tensor& h = use(k - 1);
    grads[param_index(net, l, false)] = matmul_tn(g.value, h);
    if (l > 0) {
      const Tensor& w = weights.acquire(l);
      TrackedTensor gh(matmul(g.value, w), ledger, MemCategory::kActivations, "bwd:grad");
      weights.release(l);
      g = std::move(gh);
    }
    drop_from(k);
    --k;
  }
  g = TrackedTensor();
  live.clear();
  return grads;
}

PassProfile profile_pass(const EncoderNet& net, const TapePolicy& policy,
                         const Tensor& example_row) {
  if (example_row.dim(0) != 1) throw DimensionError("profile_pass expects a single example");
  PassProfile p;
  {
    MemoryLedger ledger;
    PassOptions opts;
    opts.ledger = &ledger;
    forward(net, example_row, nullptr, opts);
    p.forward_untaped = ledger.peak(MemCategory::kActivations);
  }
  MemoryLedger ledger;
  PassOptions opts;
  opts.ledger = &ledger;
  ActivationTape tape(policy);
  Tensor out = forward(net, example_row, &tape, opts);
  p.forward_taped = ledger.peak(MemCategory::kActivations);
  p.tape_retained = ledger.live(MemCategory::kActivations);
  ledger.reset_peaks();
  backward(net, tape, Tensor::filled(out.shape(), 1.0), opts);
  p.backward = ledger.peak(MemCategory::kActivations);
  p.forward_backward = std::max(p.forward_taped, p.backward);
  return p;
}

// ---------------------------------------------------------------------------
// Classification head

ClassHead::ClassHead(std::size_t num_classes, std::size_t embed_dim, Rng& rng) {
  if (num_classes < 2) throw ConfigError("classification head needs at least two classes");
  const double bound = 1.0 / std::sqrt(static_cast<double>(embed_dim));
  weight = rng.uniform_tensor({num_classes, embed_dim}, -bound, bound);
}

Tensor class_logits(const ClassHead& head, const Tensor& embeddings) {
  return matmul_nt(embeddings, head.weight);
}

ClassifyResult classify_loss_grad(const ClassHead& head, const Tensor& embeddings,
                                  const std::vector<std::size_t>& labels) {
  const std::size_t n = embeddings.rows();
  const std::size_t c = head.num_classes();
  if (labels.size() != n) throw DimensionError("one label per embedding row is required");
  for (std::size_t lab : labels) {
    if (lab >= c) {
      throw LabelError("label " + std::to_string(lab) + " outside [0, " + std::to_string(c) + ")");
    }
  }
  ClassifyResult r;
  if (n == 0) {
    r.head_grad = Tensor(head.weight.shape());
    r.embedding_grad = Tensor(embeddings.shape());
    return r;
  }
  const Tensor logits = class_logits(head, embeddings);
  Tensor dlogits({n, c});
  const double inv_n = 1.0 / static_cast<double>(n);
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double mx = logits.at(i, 0);
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, logits.at(i, j));
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += std::exp(logits.at(i, j) - mx);
    const double lse = mx + std::log(s);
    loss += lse - logits.at(i, labels[i]);
    for (std::size_t j = 0; j < c; ++j) {
      const double prob = std::exp(logits.at(i, j) - lse);
      dlogits.at(i, j) = inv_n * (prob - (j == labels[i] ? 1.0 : 0.0));
    }
  }
  r.loss = loss * inv_n;
  r.head_grad = matmul_tn(dlogits, embeddings);
  r.embedding_grad = matmul(dlogits, head.weight);
  return r;
}

}  // namespace bsc::encoders
