#include "scaleseg/loss.hpp"

#include <algorithm>
#include <cmath>

#include "scaleseg/errors.hpp"

namespace scaleseg {

CrossEntropy softmax_cross_entropy(const Tensor4& scores, const LabelMap& labels) {
  if (scores.n() != 1) {
    throw ValidationError("softmax_cross_entropy: scores must have batch 1, got " +
                          scores.shape().str());
  }
  if (scores.h() != labels.h() || scores.w() != labels.w()) {
    throw ValidationError("softmax_cross_entropy: scores are " +
                          std::to_string(scores.h()) + "x" +
                          std::to_string(scores.w()) + " but labels are " +
                          std::to_string(labels.h()) + "x" +
                          std::to_string(labels.w()));
  }
  const int C = scores.c();
  const std::size_t plane = static_cast<std::size_t>(scores.h()) * scores.w();
  const auto lab = labels.values();

  CrossEntropy out;
  out.grad = Tensor4(scores.shape());
  for (std::size_t i = 0; i < plane; ++i) {
    if (lab[i] == kIgnoreLabel) continue;
    if (lab[i] >= C) {
      throw ValidationError("label " + std::to_string(lab[i]) + " at pixel " +
                            std::to_string(i) + " is >= num_classes " +
                            std::to_string(C));
    }
    ++out.valid;
  }
  if (out.valid == 0) return out;

  const double inv_valid = 1.0 / static_cast<double>(out.valid);
  const auto s = scores.values();
  auto g = out.grad.values();
  double sum = 0.0;
  for (std::size_t i = 0; i < plane; ++i) {
    if (lab[i] == kIgnoreLabel) continue;
    double m = s[i];
    for (int c = 1; c < C; ++c) m = std::max(m, s[c * plane + i]);
    double z = 0.0;
    for (int c = 0; c < C; ++c) z += std::exp(s[c * plane + i] - m);
    const double log_z = m + std::log(z);
    sum += log_z - s[lab[i] * plane + i];
    for (int c = 0; c < C; ++c) {
      const double p = std::exp(s[c * plane + i] - log_z);
      g[c * plane + i] = (p - (c == lab[i] ? 1.0 : 0.0)) * inv_valid;
    }
  }
  out.loss = sum * inv_valid;
  return out;
}

LabelMap downsample_labels(const LabelMap& labels, int out_h, int out_w) {
  return nearest_downsample(labels, out_h, out_w);
}

std::vector<double> LossReport::terms() const {
  std::vector<double> t{merged_loss};
  if (extra_supervision) {
    t.insert(t.end(), per_scale_losses.begin(), per_scale_losses.end());
  }
  return t;
}

TotalLoss total_loss(const MergedScores& merged, const ScorePyramid& pyramid,
                     const LabelMap& labels, bool extra_supervision) {
  const int S = pyramid.num_scales();
  if (S < 1) throw ValidationError("total_loss: empty score pyramid");
  TotalLoss out;
  LossReport& r = out.report;
  r.extra_supervision = extra_supervision;
  r.per_scale_losses.assign(S, 0.0);
  r.per_scale_valid.assign(S, 0);

  const Tensor4& g = merged.scores;
  CrossEntropy m =
      softmax_cross_entropy(g, downsample_labels(labels, g.h(), g.w()));
  r.merged_loss = m.loss;
  r.merged_valid = m.valid;
  r.has_empty_term = m.valid == 0;
  out.grads.merged = std::move(m.grad);
  r.total = r.merged_loss;

  if (extra_supervision) {
    if (static_cast<int>(pyramid.native.size()) != S) {
      throw ValidationError("total_loss: pyramid has no native score maps");
    }
    for (int s = 0; s < S; ++s) {
      const Tensor4& f = pyramid.native[s];
      CrossEntropy e =
          softmax_cross_entropy(f, downsample_labels(labels, f.h(), f.w()));
      r.per_scale_losses[s] = e.loss;
      r.per_scale_valid[s] = e.valid;
      r.has_empty_term = r.has_empty_term || e.valid == 0;
      r.total += e.loss;
      out.grads.natives.push_back(std::move(e.grad));
    }
  }
  return out;
}

}  // namespace scaleseg
