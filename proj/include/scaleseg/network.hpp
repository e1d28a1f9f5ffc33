#ifndef SCALESEG_NETWORK_HPP_
#define SCALESEG_NETWORK_HPP_

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "scaleseg/tensor.hpp"

namespace scaleseg {

enum class MergeMode { kAttention, kAverage, kMax };

std::string_view merge_mode_name(MergeMode mode);
MergeMode parse_merge_mode(std::string_view name);

struct Layer {
  ConvSpec spec;
  Tensor4 kernel;  // (out, in, k, k)
  std::vector<double> bias;
  double lr_multiplier = 1.0;

  bool operator==(const Layer&) const = default;
};

// One trunk shared by every input scale, plus an optional two-layer
// attention head reading the trunk's feature layer (the one before the
// score layer).
struct NetworkParams {
  std::vector<Layer> trunk;
  std::vector<Layer> attention;  // empty, or {3x3 + ReLU, 1x1 -> S}
  int num_classes = 0;
  std::vector<double> scales;  // descending, scales[0] == 1

  int num_scales() const { return static_cast<int>(scales.size()); }
  bool has_attention() const { return !attention.empty(); }
  std::size_t feature_layer() const { return trunk.size() - 2; }

  // Checks the structural invariants; throws ValidationError.
  void validate() const;

  bool operator==(const NetworkParams&) const = default;
};

// conv3x3x16/ReLU -> conv3x3 stride 2 x32/ReLU -> conv3x3 dilation 2 x32/ReLU
// (feature layer) -> conv1x1xC (score layer).
std::vector<ConvSpec> default_trunk_plan(int num_classes);

inline constexpr int kDefaultAttentionHidden = 8;
inline constexpr double kClassifierLrMultiplier = 10.0;
inline constexpr int kMinScaledExtent = 8;

// Glorot-uniform kernels, zero biases. The score layer and the attention
// output layer get kClassifierLrMultiplier. attention_hidden == 0 builds
// no attention head.
NetworkParams init_params(std::uint64_t seed,
                          const std::vector<ConvSpec>& trunk_plan,
                          int num_classes, const std::vector<double>& scales,
                          int attention_hidden = kDefaultAttentionHidden);

// Per-scale activations kept for backward.
struct ScaleTrace {
  double scale = 1.0;
  Tensor4 input;                    // image resized to this scale
  std::vector<Tensor4> activations;  // output of each trunk layer (post-ReLU)
  Tensor4 attention_hidden;         // post-ReLU, empty without attention
  Tensor4 attention_out;            // S channels at native resolution

  const Tensor4& native_scores() const { return activations.back(); }
  const Tensor4& features() const {
    return activations[activations.size() - 2];
  }
};

struct ScorePyramid {
  std::vector<Tensor4> native;   // f^s at each scale's own resolution
  std::vector<Tensor4> resized;  // f^s bilinearly resized to the finest shape

  int num_scales() const { return static_cast<int>(resized.size()); }
};

struct WeightMaps {
  Tensor4 logits;   // (S, 1, h, w); empty outside attention mode
  Tensor4 weights;  // (S, 1, h, w)
};

struct MergedScores {
  Tensor4 scores;  // (1, C, h, w)
};

struct MaxMerge {
  MergedScores merged;
  std::vector<int> argmax;  // per (c, y, x) winning scale index
  WeightMaps fractions;     // share of channels won by each scale, per pixel
};

struct ForwardCache {
  MergeMode mode = MergeMode::kAttention;
  Shape4 image_shape;
  std::vector<ScaleTrace> traces;
  ScorePyramid pyramid;
  WeightMaps weights;
  std::vector<int> argmax;  // max mode only
};

struct ForwardResult {
  MergedScores merged;
  ForwardCache cache;

  const ScorePyramid& pyramid() const { return cache.pyramid; }
  const WeightMaps& weights() const { return cache.weights; }
};

struct LayerGrad {
  Tensor4 kernel;
  std::vector<double> bias;
};

// Gradient table aligned with NetworkParams.
struct ParamGrads {
  std::vector<LayerGrad> trunk;
  std::vector<LayerGrad> attention;
  Tensor4 image;  // empty unless requested

  static ParamGrads zeros_like(const NetworkParams& params);
  ParamGrads& operator+=(const ParamGrads& other);
  ParamGrads& operator*=(double k);
};

// Resizes the image to round(s*H) x round(s*W) and runs the trunk.
ScaleTrace forward_scale(const NetworkParams& params, const Tensor4& image,
                         double scale);

// Runs the attention head on every scale's features, keeps channel s of
// scale s's output and resizes it to out_h x out_w. Fills the traces'
// attention fields and returns logits stacked to (S, 1, out_h, out_w).
Tensor4 attention_logits(const NetworkParams& params,
                         std::span<ScaleTrace> traces, int out_h, int out_w);

// g = sum_s w^s * f^s with w = softmax over scales of the logits.
std::pair<MergedScores, WeightMaps> merge_attention(const ScorePyramid& pyramid,
                                                    const Tensor4& logits);
MergedScores merge_average(const ScorePyramid& pyramid);
MaxMerge merge_max(const ScorePyramid& pyramid);

struct MergeGrads {
  std::vector<Tensor4> resized;  // d/d f^s (resized)
  Tensor4 logits;                // attention mode only
};

MergeGrads merge_attention_backward(const ScorePyramid& pyramid,
                                    const Tensor4& weights,
                                    const Tensor4& grad_merged);
MergeGrads merge_average_backward(int num_scales, const Tensor4& grad_merged);
MergeGrads merge_max_backward(int num_scales, std::span<const int> argmax,
                              const Tensor4& grad_merged);

// Images in [0, 1] are shifted by the mid-grey value before entering the
// network; an uncentred input slows training to a crawl.
inline constexpr double kInputMean = 0.5;
Tensor4 center_image(const Tensor4& image);

// image is (1, 3, H, W), already centred.
ForwardResult network_forward(const NetworkParams& params, const Tensor4& image,
                              MergeMode mode);

// grads_on_natives is empty (no extra supervision) or holds one gradient per
// scale on the native score maps.
ParamGrads network_backward(const NetworkParams& params,
                            const ForwardCache& cache,
                            const Tensor4& grad_on_merged,
                            std::span<const Tensor4> grads_on_natives,
                            bool want_input_grad = false);

}  // namespace scaleseg

#endif  // SCALESEG_NETWORK_HPP_
