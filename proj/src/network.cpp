#include "scaleseg/network.hpp"

#include <algorithm>
#include <cmath>

#include "scaleseg/errors.hpp"
#include "scaleseg/rng.hpp"

namespace scaleseg {

std::string_view merge_mode_name(MergeMode mode) {
  switch (mode) {
    case MergeMode::kAttention:
      return "attention";
    case MergeMode::kAverage:
      return "average";
    case MergeMode::kMax:
      return "max";
  }
  return "unknown";
}

MergeMode parse_merge_mode(std::string_view name) {
  if (name == "attention") return MergeMode::kAttention;
  if (name == "average") return MergeMode::kAverage;
  if (name == "max") return MergeMode::kMax;
  throw ValidationError("unknown merge mode '" + std::string(name) +
                        "' (expected attention, average or max)");
}

namespace {

void check_layer(const Layer& layer, const std::string& where) {
  layer.spec.validate();
  const auto& s = layer.spec;
  const Shape4 expected{s.out_channels, s.in_channels, s.kernel, s.kernel};
  if (!(layer.kernel.shape() == expected)) {
    throw ValidationError(where + ": kernel shape " + layer.kernel.shape().str() +
                          " != " + expected.str());
  }
  if (layer.bias.size() != static_cast<std::size_t>(s.out_channels)) {
    throw ValidationError(where + ": bias length " +
                          std::to_string(layer.bias.size()) + " != " +
                          std::to_string(s.out_channels));
  }
}

void check_scales(const std::vector<double>& scales) {
  if (scales.empty()) throw ValidationError("scales must not be empty");
  if (scales[0] != 1.0) {
    throw ValidationError("first scale must be 1.0, got " +
                          std::to_string(scales[0]));
  }
  for (std::size_t i = 0; i < scales.size(); ++i) {
    if (!(scales[i] > 0.0 && scales[i] <= 1.0)) {
      throw ValidationError("scale " + std::to_string(scales[i]) +
                            " outside (0, 1]");
    }
    if (i > 0 && !(scales[i] < scales[i - 1])) {
      throw ValidationError("scales must be strictly descending");
    }
  }
}

}  // namespace

void NetworkParams::validate() const {
  if (num_classes < 2) {
    throw ValidationError("num_classes must be >= 2, got " +
                          std::to_string(num_classes));
  }
  check_scales(scales);
  if (trunk.size() < 2) {
    throw ValidationError("trunk needs a feature layer and a score layer");
  }
  for (std::size_t i = 0; i < trunk.size(); ++i) {
    check_layer(trunk[i], "trunk layer " + std::to_string(i));
    if (i > 0 && trunk[i].spec.in_channels != trunk[i - 1].spec.out_channels) {
      throw ValidationError("trunk layer " + std::to_string(i) +
                            ": in_channels " +
                            std::to_string(trunk[i].spec.in_channels) +
                            " != previous out_channels " +
                            std::to_string(trunk[i - 1].spec.out_channels));
    }
  }
  if (trunk.front().spec.in_channels != 3) {
    throw ValidationError("trunk layer 0: in_channels must be 3 (RGB)");
  }
  const ConvSpec& score = trunk.back().spec;
  if (score.out_channels != num_classes || score.kernel != 1 ||
      score.stride != 1 || score.has_relu) {
    throw ValidationError("score layer must be a 1x1, stride-1 conv with " +
                          std::to_string(num_classes) +
                          " outputs and no ReLU");
  }
  if (attention.empty()) return;
  if (attention.size() != 2) {
    throw ValidationError("attention head must have exactly 2 layers");
  }
  for (std::size_t i = 0; i < 2; ++i) {
    check_layer(attention[i], "attention layer " + std::to_string(i));
  }
  const int feature_channels = trunk[feature_layer()].spec.out_channels;
  if (attention[0].spec.in_channels != feature_channels) {
    throw ValidationError("attention layer 0: in_channels " +
                          std::to_string(attention[0].spec.in_channels) +
                          " != feature channels " +
                          std::to_string(feature_channels));
  }
  if (attention[0].spec.stride != 1 || attention[1].spec.stride != 1) {
    throw ValidationError("attention head layers must have stride 1");
  }
  if (attention[1].spec.in_channels != attention[0].spec.out_channels) {
    throw ValidationError("attention layer 1: in_channels mismatch");
  }
  if (attention[1].spec.out_channels != num_scales()) {
    throw ValidationError("attention layer 1: out_channels " +
                          std::to_string(attention[1].spec.out_channels) +
                          " != number of scales " +
                          std::to_string(num_scales()));
  }
}

std::vector<ConvSpec> default_trunk_plan(int num_classes) {
  return {
      ConvSpec{3, 16, 3, 1, 1, true},
      ConvSpec{16, 32, 3, 2, 1, true},
      ConvSpec{32, 32, 3, 1, 2, true},
      ConvSpec{32, num_classes, 1, 1, 1, false},
  };
}

namespace {

Layer make_layer(const ConvSpec& spec, SplitMix64& rng, double lr_multiplier) {
  Layer layer;
  layer.spec = spec;
  layer.kernel = Tensor4(spec.out_channels, spec.in_channels, spec.kernel,
                         spec.kernel);
  const double area = static_cast<double>(spec.kernel) * spec.kernel;
  const double fan_in = spec.in_channels * area;
  const double fan_out = spec.out_channels * area;
  const double bound = std::sqrt(6.0 / (fan_in + fan_out));
  for (double& v : layer.kernel.values()) v = rng.uniform(-bound, bound);
  layer.bias.assign(spec.out_channels, 0.0);
  layer.lr_multiplier = lr_multiplier;
  return layer;
}

}  // namespace

NetworkParams init_params(std::uint64_t seed,
                          const std::vector<ConvSpec>& trunk_plan,
                          int num_classes, const std::vector<double>& scales,
                          int attention_hidden) {
  if (num_classes < 2) {
    throw ValidationError("num_classes must be >= 2, got " +
                          std::to_string(num_classes));
  }
  check_scales(scales);
  if (trunk_plan.size() < 2) {
    throw ValidationError("trunk plan needs a feature layer and a score layer");
  }
  const ConvSpec& score = trunk_plan.back();
  if (score.kernel != 1 || score.out_channels != num_classes) {
    throw ValidationError("trunk plan must end with a 1x1 score layer of " +
                          std::to_string(num_classes) + " outputs");
  }
  if (attention_hidden < 0) {
    throw ValidationError("attention_hidden must be >= 0");
  }

  SplitMix64 rng(seed);
  NetworkParams p;
  p.num_classes = num_classes;
  p.scales = scales;
  for (std::size_t i = 0; i < trunk_plan.size(); ++i) {
    const bool is_score = i + 1 == trunk_plan.size();
    p.trunk.push_back(
        make_layer(trunk_plan[i], rng, is_score ? kClassifierLrMultiplier : 1.0));
  }
  if (attention_hidden > 0) {
    const int feature_channels = trunk_plan[trunk_plan.size() - 2].out_channels;
    const int num_scales = static_cast<int>(scales.size());
    p.attention.push_back(make_layer(
        ConvSpec{feature_channels, attention_hidden, 3, 1, 1, true}, rng, 1.0));
    p.attention.push_back(
        make_layer(ConvSpec{attention_hidden, num_scales, 1, 1, 1, false}, rng,
                   kClassifierLrMultiplier));
  }
  p.validate();
  return p;
}

ParamGrads ParamGrads::zeros_like(const NetworkParams& params) {
  ParamGrads g;
  auto zero = [](const Layer& l) {
    return LayerGrad{Tensor4(l.kernel.shape()),
                     std::vector<double>(l.bias.size(), 0.0)};
  };
  for (const Layer& l : params.trunk) g.trunk.push_back(zero(l));
  for (const Layer& l : params.attention) g.attention.push_back(zero(l));
  return g;
}

namespace {

void add_layer_grads(std::vector<LayerGrad>& dst,
                     const std::vector<LayerGrad>& src) {
  if (dst.size() != src.size()) {
    throw ValidationError("gradient tables have different layer counts");
  }
  for (std::size_t i = 0; i < dst.size(); ++i) {
    dst[i].kernel += src[i].kernel;
    if (dst[i].bias.size() != src[i].bias.size()) {
      throw ValidationError("gradient bias length mismatch in layer " +
                            std::to_string(i));
    }
    for (std::size_t j = 0; j < dst[i].bias.size(); ++j) {
      dst[i].bias[j] += src[i].bias[j];
    }
  }
}

}  // namespace

ParamGrads& ParamGrads::operator+=(const ParamGrads& other) {
  add_layer_grads(trunk, other.trunk);
  add_layer_grads(attention, other.attention);
  if (!other.image.empty()) {
    if (image.empty()) {
      image = other.image;
    } else {
      image += other.image;
    }
  }
  return *this;
}

ParamGrads& ParamGrads::operator*=(double k) {
  for (auto* table : {&trunk, &attention}) {
    for (LayerGrad& g : *table) {
      g.kernel *= k;
      for (double& b : g.bias) b *= k;
    }
  }
  image *= k;
  return *this;
}

namespace {

int scaled_extent(double scale, int extent) {
  return static_cast<int>(std::floor(scale * extent + 0.5));
}

Tensor4 apply_layer(const Layer& layer, const Tensor4& input) {
  Tensor4 out = conv2d(input, layer.kernel, layer.bias, layer.spec);
  if (layer.spec.has_relu) relu_inplace(out);
  return out;
}

}  // namespace

ScaleTrace forward_scale(const NetworkParams& params, const Tensor4& image,
                         double scale) {
  if (image.n() != 1 || image.c() != 3) {
    throw ValidationError("image must be (1, 3, H, W), got " +
                          image.shape().str());
  }
  if (std::find(params.scales.begin(), params.scales.end(), scale) ==
      params.scales.end()) {
    throw ValidationError("scale " + std::to_string(scale) +
                          " is not one of the network's scales");
  }
  const int h = scaled_extent(scale, image.h());
  const int w = scaled_extent(scale, image.w());
  if (h < kMinScaledExtent || w < kMinScaledExtent) {
    throw ValidationError("image " + std::to_string(image.h()) + "x" +
                          std::to_string(image.w()) + " at scale " +
                          std::to_string(scale) + " is " + std::to_string(h) +
                          "x" + std::to_string(w) + ", below the minimum " +
                          std::to_string(kMinScaledExtent));
  }
  ScaleTrace trace;
  trace.scale = scale;
  trace.input = bilinear_resize(image, h, w);
  trace.activations.reserve(params.trunk.size());
  const Tensor4* x = &trace.input;
  for (const Layer& layer : params.trunk) {
    trace.activations.push_back(apply_layer(layer, *x));
    x = &trace.activations.back();
  }
  return trace;
}

Tensor4 attention_logits(const NetworkParams& params,
                         std::span<ScaleTrace> traces, int out_h, int out_w) {
  if (!params.has_attention()) {
    throw ValidationError("network has no attention head");
  }
  const int S = params.num_scales();
  if (static_cast<int>(traces.size()) != S) {
    throw ValidationError("attention_logits: expected " + std::to_string(S) +
                          " feature maps, got " + std::to_string(traces.size()));
  }
  Tensor4 logits(S, 1, out_h, out_w);
  for (int s = 0; s < S; ++s) {
    ScaleTrace& t = traces[s];
    const Tensor4& features = t.features();
    if (features.c() != params.attention[0].spec.in_channels) {
      throw ValidationError("attention_logits: feature channels " +
                            std::to_string(features.c()) +
                            " != attention head input " +
                            std::to_string(params.attention[0].spec.in_channels));
    }
    t.attention_hidden = apply_layer(params.attention[0], features);
    t.attention_out = apply_layer(params.attention[1], t.attention_hidden);
    Tensor4 own(1, 1, t.attention_out.h(), t.attention_out.w());
    std::copy_n(t.attention_out.plane(0, s), own.size(), own.plane(0, 0));
    const Tensor4 resized = bilinear_resize(own, out_h, out_w);
    std::copy_n(resized.plane(0, 0), resized.size(), logits.plane(s, 0));
  }
  return logits;
}

namespace {

void check_pyramid(const ScorePyramid& pyramid) {
  if (pyramid.resized.empty()) throw ValidationError("empty score pyramid");
  const Shape4 shape = pyramid.resized[0].shape();
  if (shape.n != 1) {
    throw ValidationError("score maps must have batch dimension 1, got " +
                          shape.str());
  }
  for (const Tensor4& f : pyramid.resized) {
    if (!(f.shape() == shape)) {
      throw ValidationError("resized score map shape " + f.shape().str() +
                            " != " + shape.str());
    }
  }
}

}  // namespace

std::pair<MergedScores, WeightMaps> merge_attention(const ScorePyramid& pyramid,
                                                    const Tensor4& logits) {
  check_pyramid(pyramid);
  const Shape4 fs = pyramid.resized[0].shape();
  const Shape4 expected{pyramid.num_scales(), 1, fs.h, fs.w};
  if (!(logits.shape() == expected)) {
    throw ValidationError("merge_attention: logits shape " +
                          logits.shape().str() + " != " + expected.str());
  }
  WeightMaps maps{logits, softmax_over_axis0(logits)};
  MergedScores merged{Tensor4(fs)};
  const std::size_t plane = static_cast<std::size_t>(fs.h) * fs.w;
  for (int s = 0; s < pyramid.num_scales(); ++s) {
    const double* w = maps.weights.plane(s, 0);
    for (int c = 0; c < fs.c; ++c) {
      const double* f = pyramid.resized[s].plane(0, c);
      double* g = merged.scores.plane(0, c);
      for (std::size_t i = 0; i < plane; ++i) g[i] += w[i] * f[i];
    }
  }
  return {std::move(merged), std::move(maps)};
}

MergedScores merge_average(const ScorePyramid& pyramid) {
  check_pyramid(pyramid);
  const int S = pyramid.num_scales();
  const double w = 1.0 / S;
  // Same accumulation order as merge_attention so that uniform attention
  // weights reproduce this result bit for bit.
  MergedScores merged{Tensor4(pyramid.resized[0].shape())};
  auto g = merged.scores.values();
  for (int s = 0; s < S; ++s) {
    const auto f = pyramid.resized[s].values();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += w * f[i];
  }
  return merged;
}

MaxMerge merge_max(const ScorePyramid& pyramid) {
  check_pyramid(pyramid);
  const int S = pyramid.num_scales();
  const Shape4 fs = pyramid.resized[0].shape();
  MaxMerge out;
  out.merged.scores = pyramid.resized[0];
  out.argmax.assign(fs.size(), 0);
  auto g = out.merged.scores.values();
  for (int s = 1; s < S; ++s) {
    const auto f = pyramid.resized[s].values();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (f[i] > g[i]) {
        g[i] = f[i];
        out.argmax[i] = s;
      }
    }
  }
  out.fractions.weights = Tensor4(S, 1, fs.h, fs.w);
  const std::size_t plane = static_cast<std::size_t>(fs.h) * fs.w;
  const double share = 1.0 / fs.c;
  for (int c = 0; c < fs.c; ++c) {
    for (std::size_t i = 0; i < plane; ++i) {
      const int s = out.argmax[c * plane + i];
      out.fractions.weights.plane(s, 0)[i] += share;
    }
  }
  return out;
}

MergeGrads merge_attention_backward(const ScorePyramid& pyramid,
                                    const Tensor4& weights,
                                    const Tensor4& grad_merged) {
  check_pyramid(pyramid);
  const Shape4 fs = pyramid.resized[0].shape();
  if (!(grad_merged.shape() == fs)) {
    throw ValidationError("merge_attention_backward: gradient shape " +
                          grad_merged.shape().str() + " != " + fs.str());
  }
  const int S = pyramid.num_scales();
  const std::size_t plane = static_cast<std::size_t>(fs.h) * fs.w;
  MergeGrads out;
  Tensor4 grad_w(S, 1, fs.h, fs.w);
  for (int s = 0; s < S; ++s) {
    Tensor4 gf(fs);
    const double* w = weights.plane(s, 0);
    double* gw = grad_w.plane(s, 0);
    for (int c = 0; c < fs.c; ++c) {
      const double* go = grad_merged.plane(0, c);
      const double* f = pyramid.resized[s].plane(0, c);
      double* d = gf.plane(0, c);
      for (std::size_t i = 0; i < plane; ++i) {
        d[i] = w[i] * go[i];
        gw[i] += go[i] * f[i];
      }
    }
    out.resized.push_back(std::move(gf));
  }
  out.logits = softmax_over_axis0_backward(weights, grad_w);
  return out;
}

MergeGrads merge_average_backward(int num_scales, const Tensor4& grad_merged) {
  if (num_scales < 1) throw ValidationError("empty score pyramid");
  MergeGrads out;
  Tensor4 g = grad_merged;
  g *= 1.0 / num_scales;
  out.resized.assign(num_scales, g);
  return out;
}

MergeGrads merge_max_backward(int num_scales, std::span<const int> argmax,
                              const Tensor4& grad_merged) {
  if (num_scales < 1) throw ValidationError("empty score pyramid");
  if (argmax.size() != grad_merged.size()) {
    throw ValidationError("merge_max_backward: argmax size mismatch");
  }
  MergeGrads out;
  out.resized.assign(num_scales, Tensor4(grad_merged.shape()));
  const auto go = grad_merged.values();
  for (std::size_t i = 0; i < go.size(); ++i) {
    out.resized[argmax[i]].values()[i] = go[i];
  }
  return out;
}

Tensor4 center_image(const Tensor4& image) {
  Tensor4 out = image;
  for (double& v : out.values()) v -= kInputMean;
  return out;
}

ForwardResult network_forward(const NetworkParams& params, const Tensor4& image,
                              MergeMode mode) {
  params.validate();
  if (mode == MergeMode::kAttention && !params.has_attention()) {
    throw ValidationError("attention merge requested but the network has no "
                          "attention head");
  }
  ForwardResult result;
  ForwardCache& cache = result.cache;
  cache.mode = mode;
  cache.image_shape = image.shape();
  for (double s : params.scales) {
    cache.traces.push_back(forward_scale(params, image, s));
  }
  const Tensor4& finest = cache.traces[0].native_scores();
  const int h = finest.h(), w = finest.w();
  for (const ScaleTrace& t : cache.traces) {
    cache.pyramid.native.push_back(t.native_scores());
    cache.pyramid.resized.push_back(bilinear_resize(t.native_scores(), h, w));
  }
  const int S = params.num_scales();
  switch (mode) {
    case MergeMode::kAttention: {
      Tensor4 logits = attention_logits(params, cache.traces, h, w);
      auto [merged, maps] = merge_attention(cache.pyramid, logits);
      result.merged = std::move(merged);
      cache.weights = std::move(maps);
      break;
    }
    case MergeMode::kAverage:
      result.merged = merge_average(cache.pyramid);
      cache.weights.weights = Tensor4(S, 1, h, w, 1.0 / S);
      break;
    case MergeMode::kMax: {
      MaxMerge m = merge_max(cache.pyramid);
      result.merged = std::move(m.merged);
      cache.argmax = std::move(m.argmax);
      cache.weights = std::move(m.fractions);
      break;
    }
  }
  return result;
}

namespace {

void accumulate(LayerGrad& dst, const ConvGrads& src) {
  dst.kernel += src.kernel;
  for (std::size_t i = 0; i < dst.bias.size(); ++i) dst.bias[i] += src.bias[i];
}

}  // namespace

ParamGrads network_backward(const NetworkParams& params,
                            const ForwardCache& cache,
                            const Tensor4& grad_on_merged,
                            std::span<const Tensor4> grads_on_natives,
                            bool want_input_grad) {
  const int S = params.num_scales();
  if (static_cast<int>(cache.traces.size()) != S) {
    throw ValidationError("network_backward: cache holds " +
                          std::to_string(cache.traces.size()) +
                          " scales, params have " + std::to_string(S));
  }
  const Shape4 merged_shape = cache.pyramid.resized[0].shape();
  if (!(grad_on_merged.shape() == merged_shape)) {
    throw ValidationError("network_backward: merged gradient shape " +
                          grad_on_merged.shape().str() + " != " +
                          merged_shape.str());
  }
  if (!grads_on_natives.empty()) {
    if (static_cast<int>(grads_on_natives.size()) != S) {
      throw ValidationError("network_backward: expected " + std::to_string(S) +
                            " native-score gradients, got " +
                            std::to_string(grads_on_natives.size()));
    }
    for (int s = 0; s < S; ++s) {
      if (!(grads_on_natives[s].shape() == cache.pyramid.native[s].shape())) {
        throw ValidationError("network_backward: native gradient " +
                              std::to_string(s) + " shape " +
                              grads_on_natives[s].shape().str() + " != " +
                              cache.pyramid.native[s].shape().str());
      }
    }
  }

  MergeGrads mg;
  switch (cache.mode) {
    case MergeMode::kAttention:
      mg = merge_attention_backward(cache.pyramid, cache.weights.weights,
                                    grad_on_merged);
      break;
    case MergeMode::kAverage:
      mg = merge_average_backward(S, grad_on_merged);
      break;
    case MergeMode::kMax:
      mg = merge_max_backward(S, cache.argmax, grad_on_merged);
      break;
  }

  ParamGrads grads = ParamGrads::zeros_like(params);
  if (want_input_grad) grads.image = Tensor4(cache.image_shape);
  const std::size_t L = params.trunk.size();

  for (int s = 0; s < S; ++s) {
    const ScaleTrace& t = cache.traces[s];
    const Tensor4& native = t.native_scores();
    Tensor4 g = bilinear_resize_backward(mg.resized[s], native.h(), native.w());
    if (!grads_on_natives.empty()) g += grads_on_natives[s];

    Tensor4 feature_grad;
    if (cache.mode == MergeMode::kAttention) {
      const Tensor4& out = t.attention_out;
      Tensor4 own(1, 1, mg.logits.h(), mg.logits.w());
      std::copy_n(mg.logits.plane(s, 0), own.size(), own.plane(0, 0));
      const Tensor4 own_native = bilinear_resize_backward(own, out.h(), out.w());
      Tensor4 g_out(out.shape());
      std::copy_n(own_native.plane(0, 0), own_native.size(), g_out.plane(0, s));
      ConvGrads g1 = conv2d_backward(t.attention_hidden, params.attention[1].kernel,
                                     params.attention[1].spec, g_out);
      accumulate(grads.attention[1], g1);
      const Tensor4 g_hidden = relu_backward(t.attention_hidden, g1.input);
      ConvGrads g0 = conv2d_backward(t.features(), params.attention[0].kernel,
                                     params.attention[0].spec, g_hidden);
      accumulate(grads.attention[0], g0);
      feature_grad = std::move(g0.input);
    }

    for (std::size_t l = L; l-- > 0;) {
      const Layer& layer = params.trunk[l];
      if (l == params.feature_layer() && !feature_grad.empty()) {
        g += feature_grad;
      }
      if (layer.spec.has_relu) g = relu_backward(t.activations[l], g);
      const Tensor4& input = l == 0 ? t.input : t.activations[l - 1];
      const bool need_input = l > 0 || want_input_grad;
      ConvGrads cg = conv2d_backward(input, layer.kernel, layer.spec, g, need_input);
      accumulate(grads.trunk[l], cg);
      g = std::move(cg.input);
    }
    if (want_input_grad) {
      grads.image += bilinear_resize_backward(g, cache.image_shape.h,
                                              cache.image_shape.w);
    }
  }
  return grads;
}

}  // namespace scaleseg
