#include "scaleseg/eval.hpp"

#include <algorithm>
#include <charconv>

#include "scaleseg/errors.hpp"

namespace scaleseg {

ConfusionMatrix::ConfusionMatrix(int num_classes)
    : num_classes_(num_classes),
      counts_(static_cast<std::size_t>(std::max(num_classes, 0)) *
                  std::max(num_classes, 0),
              0) {
  if (num_classes < 1) throw ValidationError("confusion matrix needs >= 1 class");
}

std::int64_t ConfusionMatrix::total() const {
  std::int64_t t = 0;
  for (std::int64_t v : counts_) t += v;
  return t;
}

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& other) {
  if (other.num_classes_ != num_classes_) {
    throw ValidationError("cannot merge confusion matrices of different sizes");
  }
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
  return *this;
}

void accumulate_confusion(ConfusionMatrix& matrix, const LabelMap& prediction,
                          const LabelMap& truth) {
  if (prediction.h() != truth.h() || prediction.w() != truth.w()) {
    throw ValidationError("accumulate_confusion: prediction is " +
                          std::to_string(prediction.h()) + "x" +
                          std::to_string(prediction.w()) + " but truth is " +
                          std::to_string(truth.h()) + "x" +
                          std::to_string(truth.w()));
  }
  const int C = matrix.num_classes();
  const auto p = prediction.values();
  const auto t = truth.values();
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (t[i] == kIgnoreLabel) continue;
    if (p[i] >= C) {
      throw ValidationError("accumulate_confusion: prediction " +
                            std::to_string(p[i]) + " at pixel " +
                            std::to_string(i) + " is not a class");
    }
    if (t[i] >= C) {
      throw ValidationError("accumulate_confusion: truth label " +
                            std::to_string(t[i]) + " at pixel " +
                            std::to_string(i) + " is not a class");
    }
    ++matrix.at(t[i], p[i]);
  }
}

EvalReport mean_iou(const ConfusionMatrix& matrix) {
  const int C = matrix.num_classes();
  if (C < 2) throw ValidationError("mean_iou needs >= 2 classes");
  EvalReport report;
  report.pixels = matrix.total();
  double sum = 0.0;
  int defined = 0;
  for (int c = 0; c < C; ++c) {
    std::int64_t row = 0, col = 0;
    for (int k = 0; k < C; ++k) {
      row += matrix.at(c, k);
      col += matrix.at(k, c);
    }
    const std::int64_t tp = matrix.at(c, c);
    const std::int64_t uni = row + col - tp;
    if (uni == 0) {
      report.per_class_iou.push_back(std::nullopt);
      continue;
    }
    const double iou = static_cast<double>(tp) / static_cast<double>(uni);
    report.per_class_iou.push_back(iou);
    sum += iou;
    ++defined;
  }
  if (defined == 0) {
    throw ValidationError("mean_iou: no class occurs in truth or prediction");
  }
  report.mean_iou = sum / defined;
  return report;
}

LabelMap argmax_labels(const Tensor4& scores) {
  if (scores.n() != 1 || scores.c() < 1) {
    throw ValidationError("argmax_labels: expected (1, C, h, w), got " +
                          scores.shape().str());
  }
  LabelMap out(scores.h(), scores.w());
  const std::size_t plane = static_cast<std::size_t>(scores.h()) * scores.w();
  const auto s = scores.values();
  for (std::size_t i = 0; i < plane; ++i) {
    int best = 0;
    for (int c = 1; c < scores.c(); ++c) {
      if (s[c * plane + i] > s[best * plane + i]) best = c;
    }
    out.raw()[i] = static_cast<std::uint8_t>(best);
  }
  return out;
}

LabelMap predict_labels(const Tensor4& merged_scores, int out_h, int out_w) {
  return argmax_labels(bilinear_resize(merged_scores, out_h, out_w));
}

LabelMap predict(const NetworkParams& params, const Tensor4& image, MergeMode mode) {
  const ForwardResult fwd = network_forward(params, center_image(image), mode);
  return predict_labels(fwd.merged.scores, image.h(), image.w());
}

ConfusionMatrix evaluate(const NetworkParams& params, std::span<const Sample> samples,
                         MergeMode mode) {
  ConfusionMatrix m(params.num_classes);
  for (const Sample& s : samples) {
    accumulate_confusion(m, predict(params, s.image, mode), s.labels);
  }
  return m;
}

std::vector<Tensor4> upsampled_weight_maps(const WeightMaps& weights, int out_h,
                                           int out_w) {
  const Tensor4& w = weights.weights;
  if (w.empty() || w.c() != 1) {
    throw ValidationError("weight maps must be (S, 1, h, w), got " + w.shape().str());
  }
  std::vector<Tensor4> maps;
  for (int s = 0; s < w.n(); ++s) {
    Tensor4 one(1, 1, w.h(), w.w());
    std::copy_n(w.plane(s, 0), one.size(), one.plane(0, 0));
    maps.push_back(bilinear_resize(one, out_h, out_w));
  }
  return maps;
}

std::string attention_file_name(double scale) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), scale);
  return "attention_s" + std::string(buf, res.ptr) + ".pgm";
}

std::vector<std::filesystem::path> export_attention_maps(
    const WeightMaps& weights, std::span<const double> scales, int out_h, int out_w,
    const std::filesystem::path& out_dir) {
  const std::vector<Tensor4> maps = upsampled_weight_maps(weights, out_h, out_w);
  if (maps.size() != scales.size()) {
    throw ValidationError("export_attention_maps: " + std::to_string(maps.size()) +
                          " weight maps for " + std::to_string(scales.size()) +
                          " scales");
  }
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());
  std::vector<std::filesystem::path> paths;
  for (std::size_t s = 0; s < maps.size(); ++s) {
    paths.push_back(out_dir / attention_file_name(scales[s]));
    write_pgm(paths.back(), maps[s]);
  }
  return paths;
}

}  // namespace scaleseg
