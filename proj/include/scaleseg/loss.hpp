#ifndef SCALESEG_LOSS_HPP_
#define SCALESEG_LOSS_HPP_

#include <vector>

#include "scaleseg/network.hpp"
#include "scaleseg/tensor.hpp"

namespace scaleseg {

struct CrossEntropy {
  double loss = 0.0;
  Tensor4 grad;           // d loss / d scores
  long long valid = 0;    // non-ignore pixels
};

// Pixel-averaged softmax cross-entropy over the non-ignore pixels of a
// (1, C, h, w) score map. With no valid pixels the loss and gradient are 0.
CrossEntropy softmax_cross_entropy(const Tensor4& scores, const LabelMap& labels);

LabelMap downsample_labels(const LabelMap& labels, int out_h, int out_w);

struct LossReport {
  double merged_loss = 0.0;
  std::vector<double> per_scale_losses;  // S entries, zero without extra supervision
  double total = 0.0;
  long long merged_valid = 0;
  std::vector<long long> per_scale_valid;
  bool extra_supervision = false;
  bool has_empty_term = false;  // some term had no valid pixels

  // The 1 + S terms (or just the merged term) in summation order.
  std::vector<double> terms() const;
};

struct LossGrads {
  Tensor4 merged;
  std::vector<Tensor4> natives;  // empty without extra supervision
};

struct TotalLoss {
  LossReport report;
  LossGrads grads;
};

// Merged cross-entropy plus, with extra supervision, one cross-entropy per
// scale on its native score map. labels are at input resolution and are
// nearest-downsampled to each term's resolution.
TotalLoss total_loss(const MergedScores& merged, const ScorePyramid& pyramid,
                     const LabelMap& labels, bool extra_supervision);

}  // namespace scaleseg

#endif  // SCALESEG_LOSS_HPP_
