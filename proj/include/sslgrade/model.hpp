#pragma once

// Explicit layer graphs for the convolutional autoencoder and the grading
// classifier. A graph is an ordered list of layers in topological order; the
// level manifest names the encoder + bottleneck layers that are shared with
// the classifier and copied by transfer_prefix.

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <utility>
#include <vector>

#include "sslgrade/error.hpp"
#include "sslgrade/ops.hpp"
#include "sslgrade/random.hpp"
#include "sslgrade/tensor.hpp"

namespace sslgrade {

enum class LayerKind { conv, transpose_conv, relu, residual_add, concat, global_max_pool, dense, softmax };

inline std::string_view to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::conv: return "conv";
    case LayerKind::transpose_conv: return "transpose_conv";
    case LayerKind::relu: return "relu";
    case LayerKind::residual_add: return "residual_add";
    case LayerKind::concat: return "concat";
    case LayerKind::global_max_pool: return "global_max_pool";
    case LayerKind::dense: return "dense";
    case LayerKind::softmax: return "softmax";
  }
  return "?";
}

inline bool is_parameterized(LayerKind kind) {
  return kind == LayerKind::conv || kind == LayerKind::transpose_conv || kind == LayerKind::dense;
}

// Name of the pseudo-layer that feeds the graph input.
inline constexpr std::string_view kGraphInput = "input";

template <class Real>
struct LayerSpec {
  std::size_t index = 0;
  std::string name;
  LayerKind kind = LayerKind::relu;
  std::vector<std::string> inputs;
  ConvSpec conv;
  std::optional<KernelBank<Real>> kernel;
  std::optional<DenseParams<Real>> dense;
  // Resolved producers; npos stands for the graph input.
  std::vector<std::size_t> input_ids;
};

inline constexpr std::size_t kInputId = static_cast<std::size_t>(-1);

struct CaeConfig {
  std::size_t input_channels = 3;
  std::size_t input_size = 128;
  std::size_t stem_channels = 32;
  std::vector<std::size_t> block_channels{32, 64, 128, 256};
  std::size_t bottleneck_channels = 256;
  std::size_t bottleneck_convs = 4;
  std::size_t kernel = 3;
  std::size_t down_stride = 2;

  // stem (conv, relu) x2, each block (conv, relu) x2, bottleneck convs with
  // relu after all but the last, then residual_add and relu.
  std::size_t level_count() const { return 4 + 4 * block_channels.size() + 2 * bottleneck_convs + 1; }

  bool operator==(const CaeConfig&) const = default;
};

struct ClassifierConfig {
  std::size_t hidden = 200;
  std::size_t classes = 4;

  bool operator==(const ClassifierConfig&) const = default;
};

template <class Real>
class ModelGraph {
 public:
  using Layer = LayerSpec<Real>;

  ModelGraph() = default;
  explicit ModelGraph(std::array<std::size_t, 3> input_dims) : input_dims_(input_dims) {}

  const std::array<std::size_t, 3>& input_dims() const { return input_dims_; }
  const std::vector<Layer>& layers() const { return layers_; }
  std::vector<Layer>& layers() { return layers_; }
  const std::vector<std::string>& level_manifest() const { return manifest_; }
  void set_level_manifest(std::vector<std::string> manifest) {
    std::size_t cursor = 0;
    for (const auto& name : manifest) {
      while (cursor < layers_.size() && layers_[cursor].name != name) ++cursor;
      if (cursor == layers_.size()) throw ShapeError("level manifest is not a subsequence of layers: " + name);
      ++cursor;
    }
    manifest_ = std::move(manifest);
  }

  Layer& add(std::string name, LayerKind kind, std::vector<std::string> inputs, ConvSpec conv = {}) {
    if (name == kGraphInput || find(name) != nullptr) throw ShapeError("duplicate layer name: " + name);
    Layer layer;
    layer.index = layers_.size();
    layer.name = std::move(name);
    layer.kind = kind;
    layer.conv = conv;
    for (const auto& in : inputs) {
      if (in == kGraphInput) {
        layer.input_ids.push_back(kInputId);
        continue;
      }
      const Layer* producer = find(in);
      if (producer == nullptr) throw ShapeError("layer " + layer.name + " references unknown input " + in);
      layer.input_ids.push_back(producer->index);
    }
    layer.inputs = std::move(inputs);
    layers_.push_back(std::move(layer));
    return layers_.back();
  }

  const Layer* find(std::string_view name) const {
    for (const auto& l : layers_)
      if (l.name == name) return &l;
    return nullptr;
  }
  Layer* find(std::string_view name) {
    for (auto& l : layers_)
      if (l.name == name) return &l;
    return nullptr;
  }
  std::size_t index_of(std::string_view name) const {
    const Layer* l = find(name);
    if (l == nullptr) throw ShapeError("unknown layer: " + std::string(name));
    return l->index;
  }
  const Layer& output_layer() const { return layers_.back(); }

  bool operator==(const ModelGraph& other) const {
    if (input_dims_ != other.input_dims_ || manifest_ != other.manifest_ || layers_.size() != other.layers_.size())
      return false;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      const auto& a = layers_[i];
      const auto& b = other.layers_[i];
      if (a.name != b.name || a.kind != b.kind || a.inputs != b.inputs || !(a.conv == b.conv) ||
          a.kernel != b.kernel || a.dense != b.dense)
        return false;
    }
    return true;
  }

 private:
  std::array<std::size_t, 3> input_dims_{0, 0, 0};
  std::vector<Layer> layers_;
  std::vector<std::string> manifest_;
};

namespace detail {

template <class Real>
void add_conv(ModelGraph<Real>& g, const std::string& name, const std::string& input, std::size_t in_c,
              std::size_t out_c, std::size_t k, ConvSpec spec) {
  auto& layer = g.add(name, LayerKind::conv, {input}, spec);
  layer.kernel = KernelBank<Real>(out_c, in_c, k, k);
}

template <class Real>
void add_transpose_conv(ModelGraph<Real>& g, const std::string& name, const std::string& input, std::size_t in_c,
                        std::size_t out_c, std::size_t k, ConvSpec spec) {
  auto& layer = g.add(name, LayerKind::transpose_conv, {input}, spec);
  layer.kernel = KernelBank<Real>(out_c, in_c, k, k);
}

template <class Real>
void add_dense(ModelGraph<Real>& g, const std::string& name, const std::string& input, std::size_t in,
               std::size_t out) {
  auto& layer = g.add(name, LayerKind::dense, {input});
  layer.dense = DenseParams<Real>(in, out);
}

inline void validate(const CaeConfig& cfg) {
  if (cfg.input_channels == 0 || cfg.stem_channels == 0 || cfg.bottleneck_channels == 0)
    throw ShapeError("CAE channel counts must be positive");
  if (cfg.block_channels.empty()) throw ShapeError("CAE needs at least one encoder block");
  for (auto c : cfg.block_channels)
    if (c == 0) throw ShapeError("CAE block channel counts must be positive");
  if (cfg.bottleneck_convs == 0) throw ShapeError("CAE bottleneck needs at least one conv");
  if (cfg.kernel == 0 || cfg.kernel % 2 == 0) throw ShapeError("CAE kernel size must be odd");
  if (cfg.down_stride < 2) throw ShapeError("CAE down_stride must be at least 2");
  if (cfg.bottleneck_channels != cfg.block_channels.back())
    throw ShapeError("bottleneck channels must equal the last block width for the residual add");
  std::size_t size = cfg.input_size;
  for (std::size_t b = 0; b < cfg.block_channels.size(); ++b) {
    if (size == 0 || size % cfg.down_stride != 0)
      throw ShapeError("input size " + std::to_string(cfg.input_size) + " is not divisible by stride^blocks");
    size /= cfg.down_stride;
  }
  if (size == 0) throw ShapeError("CAE bottleneck would be empty");
}

// Encoder + bottleneck layers shared by both graphs. Returns the manifest.
template <class Real>
std::vector<std::string> add_feature_extractor(ModelGraph<Real>& g, const CaeConfig& cfg) {
  const std::size_t k = cfg.kernel;
  const std::size_t pad = k / 2;
  const ConvSpec same{1, pad, 0};
  const ConvSpec down{cfg.down_stride, pad, 0};
  std::vector<std::string> manifest;
  auto conv = [&](const std::string& name, const std::string& in, std::size_t ci, std::size_t co, ConvSpec s) {
    add_conv(g, name, in, ci, co, k, s);
    manifest.push_back(name);
  };
  auto relu = [&](const std::string& name, const std::string& in) {
    g.add(name, LayerKind::relu, {in});
    manifest.push_back(name);
  };

  conv("stem_conv1", std::string(kGraphInput), cfg.input_channels, cfg.stem_channels, same);
  relu("stem_relu1", "stem_conv1");
  conv("stem_conv2", "stem_relu1", cfg.stem_channels, cfg.stem_channels, same);
  relu("stem_relu2", "stem_conv2");

  std::string prev = "stem_relu2";
  std::size_t prev_c = cfg.stem_channels;
  for (std::size_t b = 0; b < cfg.block_channels.size(); ++b) {
    const std::string p = "enc" + std::to_string(b + 1) + "_";
    const std::size_t c = cfg.block_channels[b];
    conv(p + "down", prev, prev_c, c, down);
    relu(p + "down_relu", p + "down");
    conv(p + "conv", p + "down_relu", c, c, same);
    relu(p + "relu", p + "conv");
    prev = p + "relu";
    prev_c = c;
  }

  const std::string bottleneck_in = prev;
  for (std::size_t i = 1; i <= cfg.bottleneck_convs; ++i) {
    const std::string name = "bneck_conv" + std::to_string(i);
    conv(name, prev, prev_c, cfg.bottleneck_channels, same);
    prev_c = cfg.bottleneck_channels;
    prev = name;
    if (i < cfg.bottleneck_convs) {
      relu("bneck_relu" + std::to_string(i), name);
      prev = "bneck_relu" + std::to_string(i);
    }
  }
  g.add("bneck_add", LayerKind::residual_add, {prev, bottleneck_in});
  manifest.push_back("bneck_add");
  relu("bneck_relu", "bneck_add");
  return manifest;
}

}  // namespace detail

// Layer name whose output is the bottleneck feature map.
inline constexpr std::string_view kBottleneckOutput = "bneck_relu";
inline constexpr std::string_view kReconstruction = "recon_conv";
inline constexpr std::string_view kPooledFeatures = "gmp";
inline constexpr std::string_view kLogits = "fc2";
inline constexpr std::string_view kProbabilities = "softmax";

// Stem, stride-2 encoder blocks, residual bottleneck, and a mirrored decoder
// whose blocks upsample, concatenate the matching encoder output, and fuse
// with a stride-1 conv. The last conv maps back to the input channel count.
template <class Real = float>
ModelGraph<Real> build_cae(const CaeConfig& cfg = {}) {
  detail::validate(cfg);
  ModelGraph<Real> g({cfg.input_channels, cfg.input_size, cfg.input_size});
  auto manifest = detail::add_feature_extractor(g, cfg);

  const std::size_t k = cfg.kernel;
  const std::size_t pad = k / 2;
  const std::size_t blocks = cfg.block_channels.size();
  std::string prev(kBottleneckOutput);
  std::size_t prev_c = cfg.bottleneck_channels;
  for (std::size_t b = blocks; b >= 1; --b) {
    const std::string p = "dec" + std::to_string(b) + "_";
    const std::string skip = b == 1 ? std::string("stem_relu2") : "enc" + std::to_string(b - 1) + "_relu";
    const std::size_t skip_c = b == 1 ? cfg.stem_channels : cfg.block_channels[b - 2];
    detail::add_transpose_conv(g, p + "up", prev, prev_c, skip_c, k, ConvSpec{cfg.down_stride, pad, cfg.down_stride - 1});
    g.add(p + "up_relu", LayerKind::relu, {p + "up"});
    g.add(p + "concat", LayerKind::concat, {p + "up_relu", skip});
    detail::add_conv(g, p + "conv", p + "concat", 2 * skip_c, skip_c, k, ConvSpec{1, pad, 0});
    g.add(p + "relu", LayerKind::relu, {p + "conv"});
    prev = p + "relu";
    prev_c = skip_c;
  }
  detail::add_conv(g, std::string(kReconstruction), prev, prev_c, cfg.input_channels, k, ConvSpec{1, pad, 0});
  g.set_level_manifest(std::move(manifest));
  return g;
}

// Feature extractor of the CAE followed by global max pooling and a two-layer
// dense head ending in softmax. The decoder is not part of this graph.
template <class Real = float>
ModelGraph<Real> build_classifier(const CaeConfig& cfg = {}, const ClassifierConfig& head = {}) {
  detail::validate(cfg);
  if (head.hidden == 0 || head.classes < 2) throw ShapeError("classifier head needs hidden > 0 and >= 2 classes");
  ModelGraph<Real> g({cfg.input_channels, cfg.input_size, cfg.input_size});
  auto manifest = detail::add_feature_extractor(g, cfg);
  g.add(std::string(kPooledFeatures), LayerKind::global_max_pool, {std::string(kBottleneckOutput)});
  detail::add_dense(g, "fc1", std::string(kPooledFeatures), cfg.bottleneck_channels, head.hidden);
  g.add("fc1_relu", LayerKind::relu, {"fc1"});
  detail::add_dense(g, std::string(kLogits), "fc1_relu", head.hidden, head.classes);
  g.add(std::string(kProbabilities), LayerKind::softmax, {std::string(kLogits)});
  g.set_level_manifest(std::move(manifest));
  return g;
}

// Kaiming-uniform (bound sqrt(6 / fan_in)) weights, zero biases. Layers are
// visited in graph order from a single seeded stream.
template <class Real>
void init_parameters(ModelGraph<Real>& g, std::uint64_t seed) {
  Rng rng(seed);
  for (auto& layer : g.layers()) {
    if (layer.kernel) {
      auto& k = *layer.kernel;
      const double bound = std::sqrt(6.0 / static_cast<double>(k.in_channels() * k.kh() * k.kw()));
      for (auto& w : k.weights) w = static_cast<Real>(rng.uniform(-bound, bound));
      std::fill(k.bias.begin(), k.bias.end(), Real(0));
    } else if (layer.dense) {
      auto& d = *layer.dense;
      const double bound = std::sqrt(6.0 / static_cast<double>(d.in));
      for (auto& w : d.weights) w = static_cast<Real>(rng.uniform(-bound, bound));
      std::fill(d.bias.begin(), d.bias.end(), Real(0));
    }
  }
}

template <class To, class From>
ModelGraph<To> cast_graph(const ModelGraph<From>& src) {
  ModelGraph<To> dst(src.input_dims());
  for (const auto& l : src.layers()) {
    auto& layer = dst.add(l.name, l.kind, l.inputs, l.conv);
    if (l.kernel) {
      KernelBank<To> k(l.kernel->dims[0], l.kernel->dims[1], l.kernel->dims[2], l.kernel->dims[3]);
      std::copy(l.kernel->weights.begin(), l.kernel->weights.end(), k.weights.begin());
      std::copy(l.kernel->bias.begin(), l.kernel->bias.end(), k.bias.begin());
      layer.kernel = std::move(k);
    }
    if (l.dense) {
      DenseParams<To> d(l.dense->in, l.dense->out);
      std::copy(l.dense->weights.begin(), l.dense->weights.end(), d.weights.begin());
      std::copy(l.dense->bias.begin(), l.dense->bias.end(), d.bias.begin());
      layer.dense = std::move(d);
    }
  }
  dst.set_level_manifest(src.level_manifest());
  return dst;
}

// ---------------------------------------------------------------------------
// Named parameter views

template <class Value>
struct ParamRef {
  std::string name;  // "<layer>.weight" or "<layer>.bias"
  std::vector<std::size_t> dims;
  std::span<Value> values;
  std::size_t layer = 0;
};

template <class Real, class Graph>
auto parameters_impl(Graph& g) {
  using Value = std::conditional_t<std::is_const_v<Graph>, const Real, Real>;
  std::vector<ParamRef<Value>> out;
  for (auto& layer : g.layers()) {
    if (layer.kernel) {
      auto& k = *layer.kernel;
      out.push_back({layer.name + ".weight", {k.dims[0], k.dims[1], k.dims[2], k.dims[3]},
                     std::span<Value>(k.weights), layer.index});
      out.push_back({layer.name + ".bias", {k.bias.size()}, std::span<Value>(k.bias), layer.index});
    } else if (layer.dense) {
      auto& d = *layer.dense;
      out.push_back({layer.name + ".weight", {d.in, d.out}, std::span<Value>(d.weights), layer.index});
      out.push_back({layer.name + ".bias", {d.bias.size()}, std::span<Value>(d.bias), layer.index});
    }
  }
  return out;
}

template <class Real>
std::vector<ParamRef<Real>> parameters(ModelGraph<Real>& g) {
  return parameters_impl<Real>(g);
}
template <class Real>
std::vector<ParamRef<const Real>> parameters(const ModelGraph<Real>& g) {
  return parameters_impl<Real>(g);
}

// Gradients aligned with parameters(g): entry i has the size of parameter i.
template <class Real>
struct GradientSet {
  std::vector<std::string> names;
  std::vector<std::vector<Real>> values;

  std::size_t size() const { return values.size(); }
  const std::vector<Real>& at(std::string_view name) const {
    for (std::size_t i = 0; i < names.size(); ++i)
      if (names[i] == name) return values[i];
    throw ShapeError("no gradient for parameter " + std::string(name));
  }

  double squared_norm() const {
    double total = 0.0;
    for (const auto& v : values)
      for (Real x : v) total += static_cast<double>(x) * static_cast<double>(x);
    return total;
  }

  void scale(Real factor) {
    for (auto& v : values)
      for (Real& x : v) x *= factor;
  }
};

template <class Real>
GradientSet<Real> zero_gradients(const ModelGraph<Real>& g) {
  GradientSet<Real> out;
  for (const auto& p : parameters(g)) {
    out.names.push_back(p.name);
    out.values.emplace_back(p.values.size(), Real(0));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Forward / backward

enum class Mode { train, infer };

template <class Real>
struct Activations {
  std::vector<std::string> names;
  std::vector<Tensor4<Real>> values;
  Tensor4<Real> input;

  std::size_t size() const { return values.size(); }
  const Tensor4<Real>& at(std::string_view name) const {
    for (std::size_t i = 0; i < names.size(); ++i)
      if (names[i] == name) return values[i];
    throw ShapeError("missing activation for layer " + std::string(name));
  }
  const Tensor4<Real>& output() const { return values.back(); }
};

namespace detail {

template <class Real>
const Tensor4<Real>& producer_output(const Activations<Real>& acts, std::size_t id) {
  if (id == kInputId) return acts.input;
  if (id >= acts.values.size()) throw ShapeError("activation missing for producer index " + std::to_string(id));
  return acts.values[id];
}

template <class Real>
Tensor4<Real> apply_layer(const LayerSpec<Real>& layer, const Activations<Real>& acts) {
  const auto& in0 = producer_output(acts, layer.input_ids.at(0));
  switch (layer.kind) {
    case LayerKind::conv: return conv2d_forward(in0, *layer.kernel, layer.conv);
    case LayerKind::transpose_conv: return conv2d_transpose_forward(in0, *layer.kernel, layer.conv);
    case LayerKind::relu: return relu_forward(in0);
    case LayerKind::residual_add: return residual_add(in0, producer_output(acts, layer.input_ids.at(1)));
    case LayerKind::concat: return concat_channels(in0, producer_output(acts, layer.input_ids.at(1)));
    case LayerKind::global_max_pool: return global_max_pool_forward(in0);
    case LayerKind::dense: return dense_forward(in0, *layer.dense);
    case LayerKind::softmax: return softmax_rows(in0);
  }
  throw ShapeError("unknown layer kind");
}

}  // namespace detail

// Runs layers in order and keeps every layer's output. When stop_after names a
// layer, evaluation ends after it. Mode is accepted for interface symmetry;
// no layer behaves differently between training and inference.
template <class Real>
Activations<Real> forward(const ModelGraph<Real>& g, const Tensor4<Real>& x, Mode mode = Mode::train,
                          std::string_view stop_after = {}) {
  (void)mode;
  const auto& d = g.input_dims();
  if (x.c() != d[0] || x.h() != d[1] || x.w() != d[2])
    throw ShapeError("layer input: expected (n," + std::to_string(d[0]) + "," + std::to_string(d[1]) + "," +
                     std::to_string(d[2]) + "), got " + dims_string(x.dims()));
  if (!stop_after.empty()) (void)g.index_of(stop_after);
  Activations<Real> acts;
  acts.input = x;
  for (const auto& layer : g.layers()) {
    try {
      acts.values.push_back(detail::apply_layer(layer, acts));
    } catch (const ShapeError& e) {
      throw ShapeError("layer " + layer.name + ": " + e.what());
    }
    acts.names.push_back(layer.name);
    if (!stop_after.empty() && layer.name == stop_after) break;
  }
  return acts;
}

struct BackwardOptions {
  // Layer whose output receives loss_grad; empty means the last layer.
  std::string start;
  // (consumer, producer) edges whose gradient contribution is dropped.
  std::set<std::pair<std::string, std::string>> cut_edges;
};

template <class Real>
struct BackwardResult {
  GradientSet<Real> params;
  Tensor4<Real> input;  // gradient with respect to the graph input
};

// Reverse sweep from the start layer. Fan-out gradients (skip and residual
// edges) are summed before a producer is processed.
template <class Real>
BackwardResult<Real> backward(const ModelGraph<Real>& g, const Activations<Real>& acts, const Tensor4<Real>& loss_grad,
                              const BackwardOptions& opts = {}) {
  const std::size_t start = opts.start.empty() ? g.layers().size() - 1 : g.index_of(opts.start);
  if (acts.values.size() <= start || acts.names[start] != g.layers()[start].name)
    throw ShapeError("missing activation for layer " + g.layers()[start].name);
  if (loss_grad.dims() != acts.values[start].dims())
    throw ShapeError("loss gradient dims " + dims_string(loss_grad.dims()) + " do not match layer " +
                     g.layers()[start].name);

  BackwardResult<Real> result{zero_gradients(g), Tensor4<Real>(acts.input.dims())};
  std::vector<std::size_t> slot(g.layers().size(), kInputId);
  {
    std::size_t pos = 0;
    for (const auto& layer : g.layers())
      if (is_parameterized(layer.kind)) {
        slot[layer.index] = pos;
        pos += 2;
      }
  }

  std::vector<std::optional<Tensor4<Real>>> grads(start + 1);
  grads[start] = loss_grad;
  auto send = [&](const LayerSpec<Real>& consumer, std::size_t which, Tensor4<Real>&& grad) {
    const std::size_t id = consumer.input_ids[which];
    if (opts.cut_edges.contains({consumer.name, consumer.inputs[which]})) return;
    if (id == kInputId) {
      result.input += grad;
      return;
    }
    if (grads[id]) {
      *grads[id] += grad;
    } else {
      grads[id] = std::move(grad);
    }
  };

  for (std::size_t idx = start + 1; idx-- > 0;) {
    if (!grads[idx]) continue;
    const auto& layer = g.layers()[idx];
    const Tensor4<Real>& go = *grads[idx];
    const auto& in0 = detail::producer_output(acts, layer.input_ids.at(0));
    switch (layer.kind) {
      case LayerKind::conv:
      case LayerKind::transpose_conv: {
        auto cg = layer.kind == LayerKind::conv ? conv2d_backward(in0, *layer.kernel, layer.conv, go)
                                                : conv2d_transpose_backward(in0, *layer.kernel, layer.conv, go);
        result.params.values[slot[idx]] = std::move(cg.kernel.weights);
        result.params.values[slot[idx] + 1] = std::move(cg.kernel.bias);
        send(layer, 0, std::move(cg.input));
        break;
      }
      case LayerKind::dense: {
        auto dg = dense_backward(in0, *layer.dense, go);
        result.params.values[slot[idx]] = std::move(dg.params.weights);
        result.params.values[slot[idx] + 1] = std::move(dg.params.bias);
        send(layer, 0, std::move(dg.input));
        break;
      }
      case LayerKind::relu: send(layer, 0, relu_backward(in0, go)); break;
      case LayerKind::residual_add:
        send(layer, 0, Tensor4<Real>(go));
        send(layer, 1, Tensor4<Real>(go));
        break;
      case LayerKind::concat: {
        const std::size_t ca = in0.c();
        const std::size_t cb = go.c() - ca;
        send(layer, 0, slice_channels(go, 0, ca));
        send(layer, 1, slice_channels(go, ca, cb));
        break;
      }
      case LayerKind::global_max_pool: send(layer, 0, global_max_pool_backward(in0, go)); break;
      case LayerKind::softmax: send(layer, 0, softmax_rows_backward(acts.values[idx], go)); break;
    }
    grads[idx].reset();
  }
  return result;
}

// ---------------------------------------------------------------------------
// Prefix transfer

// Copies parameters of the first n_levels manifest entries from src into dst.
// Returns the number of parameterized levels copied.
template <class Real>
std::size_t transfer_prefix(const ModelGraph<Real>& src, ModelGraph<Real>& dst, std::size_t n_levels) {
  const auto& sm = src.level_manifest();
  const auto& dm = dst.level_manifest();
  if (n_levels > sm.size() || n_levels > dm.size())
    throw ShapeError("transfer of " + std::to_string(n_levels) + " levels exceeds manifest length " +
                     std::to_string(std::min(sm.size(), dm.size())));
  for (std::size_t i = 0; i < n_levels; ++i) {
    if (sm[i] != dm[i]) throw ShapeError("level " + std::to_string(i) + " differs: " + sm[i] + " vs " + dm[i]);
    const auto* a = src.find(sm[i]);
    const auto* b = dst.find(dm[i]);
    if (a->kind != b->kind) throw ShapeError("level " + sm[i] + " has different layer kinds");
    if (a->kernel.has_value() != b->kernel.has_value() || a->dense.has_value() != b->dense.has_value() ||
        (a->kernel && a->kernel->dims != b->kernel->dims) ||
        (a->dense && (a->dense->in != b->dense->in || a->dense->out != b->dense->out)))
      throw ShapeError("level " + sm[i] + " has mismatched parameter shapes");
  }
  std::size_t copied = 0;
  for (std::size_t i = 0; i < n_levels; ++i) {
    const auto* a = src.find(sm[i]);
    auto* b = dst.find(dm[i]);
    if (a->kernel) {
      b->kernel = a->kernel;
      ++copied;
    } else if (a->dense) {
      b->dense = a->dense;
      ++copied;
    }
  }
  return copied;
}

}  // namespace sslgrade
