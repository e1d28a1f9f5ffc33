#ifndef SCALESEG_EVAL_HPP_
#define SCALESEG_EVAL_HPP_

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "scaleseg/data.hpp"
#include "scaleseg/network.hpp"
#include "scaleseg/tensor.hpp"

namespace scaleseg {

// Rows are ground truth, columns are predictions.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int num_classes);

  int num_classes() const { return num_classes_; }
  std::int64_t at(int truth, int pred) const {
    return counts_[static_cast<std::size_t>(truth) * num_classes_ + pred];
  }
  std::int64_t& at(int truth, int pred) {
    return counts_[static_cast<std::size_t>(truth) * num_classes_ + pred];
  }
  std::int64_t total() const;

  ConfusionMatrix& operator+=(const ConfusionMatrix& other);
  bool operator==(const ConfusionMatrix&) const = default;

 private:
  int num_classes_;
  std::vector<std::int64_t> counts_;
};

// Adds every non-ignore truth pixel. Predictions must not contain ignore.
void accumulate_confusion(ConfusionMatrix& matrix, const LabelMap& prediction,
                          const LabelMap& truth);

struct EvalReport {
  std::vector<std::optional<double>> per_class_iou;  // nullopt: zero union
  double mean_iou = 0.0;
  std::int64_t pixels = 0;
};

// IOU_c = tp / (row + col - tp); classes with zero union are left out of
// the mean. Throws if every class is absent.
EvalReport mean_iou(const ConfusionMatrix& matrix);

// Per-pixel argmax over channels of a (1, C, h, w) map, ties to the lowest
// class.
LabelMap argmax_labels(const Tensor4& scores);

// Upsamples merged scores bilinearly to out_h x out_w, then argmax.
LabelMap predict_labels(const Tensor4& merged_scores, int out_h, int out_w);

LabelMap predict(const NetworkParams& params, const Tensor4& image, MergeMode mode);

ConfusionMatrix evaluate(const NetworkParams& params, std::span<const Sample> samples,
                         MergeMode mode);

// Per-scale weight maps resized to out_h x out_w, each (1, 1, out_h, out_w).
std::vector<Tensor4> upsampled_weight_maps(const WeightMaps& weights, int out_h,
                                           int out_w);

std::string attention_file_name(double scale);

// Writes one attention_s<scale>.pgm per scale, upsampled to out_h x out_w.
std::vector<std::filesystem::path> export_attention_maps(
    const WeightMaps& weights, std::span<const double> scales, int out_h, int out_w,
    const std::filesystem::path& out_dir);

}  // namespace scaleseg

#endif  // SCALESEG_EVAL_HPP_
