#include <cmath>

#include <gtest/gtest.h>

#include "scaleseg/errors.hpp"
#include "scaleseg/loss.hpp"
#include "test_support.hpp"

namespace scaleseg {
namespace {

using testing::random_labels;
using testing::random_tensor;

// Direct log-softmax evaluation, one pixel at a time, no shift.
double ce_oracle(const Tensor4& scores, const LabelMap& labels) {
  double sum = 0.0;
  int valid = 0;
  for (int y = 0; y < scores.h(); ++y) {
    for (int x = 0; x < scores.w(); ++x) {
      const int label = labels.at(y, x);
      if (label == kIgnoreLabel) continue;
      double z = 0.0;
      for (int c = 0; c < scores.c(); ++c) z += std::exp(scores.at(0, c, y, x));
      sum += std::log(z) - scores.at(0, label, y, x);
      ++valid;
    }
  }
  return valid == 0 ? 0.0 : sum / valid;
}

TEST(SoftmaxCrossEntropy, UniformScoresGiveLogC) {
  const CrossEntropy ce = softmax_cross_entropy(Tensor4(1, 4, 3, 5), random_labels(3, 5, 4, 1));
  EXPECT_NEAR(ce.loss, std::log(4.0), 1e-12);
  EXPECT_EQ(ce.valid, 15);
}

TEST(SoftmaxCrossEntropy, HandComputedPixel) {
  const Tensor4 scores({1, 2, 1, 1}, std::vector<double>{1.0, 0.0});
  const CrossEntropy ce = softmax_cross_entropy(scores, LabelMap(1, 1, 0));
  EXPECT_NEAR(ce.loss, 0.313262, 1e-6);
  EXPECT_NEAR(ce.loss, std::log1p(std::exp(-1.0)), 1e-15);
  const double sigma = 1.0 / (1.0 + std::exp(1.0));  // softmax of class 1
  EXPECT_NEAR(ce.grad.raw()[0], -sigma, 1e-15);
  EXPECT_NEAR(ce.grad.raw()[1], sigma, 1e-15);
}

TEST(SoftmaxCrossEntropy, SaturatesForLargeMargins) {
  const LabelMap labels = random_labels(4, 4, 3, 2);
  Tensor4 scores(1, 3, 4, 4);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) scores.at(0, labels.at(y, x), y, x) = 50.0;
  EXPECT_LT(softmax_cross_entropy(scores, labels).loss, 1e-20);
}

TEST(SoftmaxCrossEntropy, MatchesOracleWithIgnores) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Tensor4 scores = random_tensor({1, 3, 4, 6}, seed, -4, 4);
    LabelMap labels = random_labels(4, 6, 3, seed + 50);
    labels.at(1, 2) = kIgnoreLabel;
    labels.at(3, 5) = kIgnoreLabel;
    const CrossEntropy ce = softmax_cross_entropy(scores, labels);
    EXPECT_NEAR(ce.loss, ce_oracle(scores, labels), 1e-12);
    EXPECT_EQ(ce.valid, 22);
  }
}

TEST(SoftmaxCrossEntropy, GradientSumsToZeroPerPixel) {
  const Tensor4 scores = random_tensor({1, 4, 5, 5}, 3, -3, 3);
  const CrossEntropy ce = softmax_cross_entropy(scores, random_labels(5, 5, 4, 4));
  for (int y = 0; y < 5; ++y) {
    for (int x = 0; x < 5; ++x) {
      double sum = 0.0;
      for (int c = 0; c < 4; ++c) sum += ce.grad.at(0, c, y, x);
      EXPECT_NEAR(sum, 0.0, 1e-12);
    }
  }
}

TEST(SoftmaxCrossEntropy, ShiftInvariant) {
  Tensor4 scores = random_tensor({1, 3, 4, 4}, 5, -2, 2);
  const LabelMap labels = random_labels(4, 4, 3, 6);
  const double before = softmax_cross_entropy(scores, labels).loss;
  SplitMix64 rng(9);
  for (int y = 0; y < 4; ++y) {
    for (int x = 0; x < 4; ++x) {
      const double shift = rng.uniform(-30, 30);
      for (int c = 0; c < 3; ++c) scores.at(0, c, y, x) += shift;
    }
  }
  EXPECT_NEAR(softmax_cross_entropy(scores, labels).loss, before, 1e-10);
}

TEST(SoftmaxCrossEntropy, IgnoredPixelHasNoGradient) {
  const Tensor4 scores = random_tensor({1, 3, 3, 3}, 7);
  LabelMap labels = random_labels(3, 3, 3, 8);
  labels.at(1, 1) = kIgnoreLabel;
  const CrossEntropy ce = softmax_cross_entropy(scores, labels);
  for (int c = 0; c < 3; ++c) EXPECT_EQ(ce.grad.at(0, c, 1, 1), 0.0);
}

TEST(SoftmaxCrossEntropy, GradientMatchesFiniteDifferences) {
  Tensor4 scores = random_tensor({1, 3, 3, 4}, 10, -2, 2);
  LabelMap labels = random_labels(3, 4, 3, 11);
  labels.at(0, 0) = kIgnoreLabel;
  const CrossEntropy ce = softmax_cross_entropy(scores, labels);
  auto f = [&] { return softmax_cross_entropy(scores, labels).loss; };
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (std::abs(ce.grad.raw()[i]) == 0.0) continue;
    EXPECT_LT(testing::rel_err(ce.grad.raw()[i], testing::central_difference(scores, i, f)), 1e-4);
  }
}

TEST(SoftmaxCrossEntropy, AllIgnoredIsZero) {
  const CrossEntropy ce =
      softmax_cross_entropy(random_tensor({1, 2, 2, 2}, 1), LabelMap(2, 2, kIgnoreLabel));
  EXPECT_EQ(ce.loss, 0.0);
  EXPECT_EQ(ce.valid, 0);
  for (double v : ce.grad.values()) EXPECT_EQ(v, 0.0);
}

TEST(SoftmaxCrossEntropy, Rejections) {
  EXPECT_THROW(softmax_cross_entropy(Tensor4(1, 2, 2, 2), LabelMap(2, 2, 2)), ValidationError);
  EXPECT_THROW(softmax_cross_entropy(Tensor4(1, 2, 2, 3), LabelMap(2, 2, 0)), ValidationError);
}

TEST(DownsampleLabels, Examples) {
  const LabelMap in = random_labels(5, 5, 3, 12);
  EXPECT_EQ(downsample_labels(in, 5, 5), in);
  const LabelMap row(1, 3, std::vector<std::uint8_t>{0, kIgnoreLabel, 2});
  EXPECT_EQ(downsample_labels(row, 1, 2).raw(), (std::vector<std::uint8_t>{0, 2}));
  const LabelMap row2(1, 3, std::vector<std::uint8_t>{0, kIgnoreLabel, 2});
  EXPECT_EQ(downsample_labels(row2, 1, 1).raw(), (std::vector<std::uint8_t>{0}));
  const LabelMap mid(1, 5, std::vector<std::uint8_t>{0, 1, kIgnoreLabel, 1, 0});
  EXPECT_EQ(downsample_labels(mid, 1, 3).raw()[1], kIgnoreLabel);
}

ScorePyramid pyramid(const std::vector<Shape4>& shapes, std::uint64_t seed) {
  ScorePyramid p;
  for (std::size_t s = 0; s < shapes.size(); ++s) {
    p.native.push_back(random_tensor(shapes[s], seed + s));
    p.resized.push_back(bilinear_resize(p.native.back(), shapes[0].h, shapes[0].w));
  }
  return p;
}

TEST(TotalLoss, WithoutExtraSupervision) {
  const ScorePyramid pyr = pyramid({{1, 3, 8, 8}, {1, 3, 4, 4}}, 1);
  const MergedScores merged{random_tensor({1, 3, 8, 8}, 9)};
  const TotalLoss t = total_loss(merged, pyr, random_labels(16, 16, 3, 2), false);
  EXPECT_EQ(t.report.total, t.report.merged_loss);
  EXPECT_EQ(t.report.per_scale_losses, (std::vector<double>{0.0, 0.0}));
  EXPECT_TRUE(t.grads.natives.empty());
  EXPECT_EQ(t.report.terms().size(), 1u);
}

TEST(TotalLoss, OnePlusSTermsSummedInOrder) {
  for (int S : {2, 3}) {
    std::vector<Shape4> shapes{{1, 3, 8, 8}, {1, 3, 6, 6}, {1, 3, 4, 4}};
    shapes.resize(S);
    const ScorePyramid pyr = pyramid(shapes, 3);
    const MergedScores merged{random_tensor({1, 3, 8, 8}, 4)};
    const TotalLoss t = total_loss(merged, pyr, random_labels(16, 16, 3, 5), true);
    const std::vector<double> terms = t.report.terms();
    ASSERT_EQ(terms.size(), static_cast<std::size_t>(1 + S));
    double sum = 0.0;
    for (double v : terms) sum += v;
    EXPECT_EQ(t.report.total, sum);
    EXPECT_EQ(terms[0], t.report.merged_loss);
    ASSERT_EQ(t.grads.natives.size(), static_cast<std::size_t>(S));
    for (int s = 0; s < S; ++s) EXPECT_EQ(t.grads.natives[s].shape(), shapes[s]);
  }
}

TEST(TotalLoss, TermsUseLabelsAtTheirOwnResolution) {
  const ScorePyramid pyr = pyramid({{1, 3, 8, 8}, {1, 3, 4, 4}}, 6);
  const MergedScores merged{random_tensor({1, 3, 8, 8}, 7)};
  const LabelMap labels = random_labels(16, 16, 3, 8);
  const TotalLoss t = total_loss(merged, pyr, labels, true);
  EXPECT_EQ(t.report.merged_loss,
            softmax_cross_entropy(merged.scores, downsample_labels(labels, 8, 8)).loss);
  EXPECT_EQ(t.report.per_scale_losses[1],
            softmax_cross_entropy(pyr.native[1], downsample_labels(labels, 4, 4)).loss);
}

TEST(TotalLoss, SingleScaleTermEqualsMergedTerm) {
  const ScorePyramid pyr = pyramid({{1, 2, 6, 6}}, 9);
  const MergedScores merged{pyr.native[0]};
  const TotalLoss t = total_loss(merged, pyr, random_labels(6, 6, 2, 10), true);
  EXPECT_EQ(t.report.per_scale_losses[0], t.report.merged_loss);
}

TEST(TotalLoss, EmptyTermIsFlagged) {
  const ScorePyramid pyr = pyramid({{1, 2, 4, 4}}, 11);
  const TotalLoss t =
      total_loss(MergedScores{pyr.native[0]}, pyr, LabelMap(4, 4, kIgnoreLabel), true);
  EXPECT_TRUE(t.report.has_empty_term);
  EXPECT_EQ(t.report.total, 0.0);
}

}  // namespace
}  // namespace scaleseg
