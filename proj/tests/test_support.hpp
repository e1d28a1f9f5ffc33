#ifndef SCALESEG_TESTS_TEST_SUPPORT_HPP_
#define SCALESEG_TESTS_TEST_SUPPORT_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <unistd.h>

#include "scaleseg/rng.hpp"
#include "scaleseg/tensor.hpp"

namespace scaleseg::testing {

inline Tensor4 random_tensor(Shape4 shape, std::uint64_t seed, double lo = -1.0,
                             double hi = 1.0) {
  SplitMix64 rng(seed);
  Tensor4 t(shape);
  for (double& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

inline LabelMap random_labels(int h, int w, int num_classes, std::uint64_t seed) {
  SplitMix64 rng(seed);
  LabelMap labels(h, w);
  for (auto& v : labels.raw()) v = static_cast<std::uint8_t>(rng.uniform_int(0, num_classes - 1));
  return labels;
}

inline double rel_err(double a, double n) {
  const double d = std::max({std::abs(a), std::abs(n), 1e-8});
  return std::abs(a - n) / d;
}

// Central difference of f with respect to t[i], step 1e-5.
inline double central_difference(Tensor4& t, std::size_t i,
                                 const std::function<double()>& f) {
  constexpr double h = 1e-5;
  const double saved = t.raw()[i];
  t.raw()[i] = saved + h;
  const double up = f();
  t.raw()[i] = saved - h;
  const double down = f();
  t.raw()[i] = saved;
  return (up - down) / (2 * h);
}

// sum(out * weights): a scalar probe whose gradient w.r.t. out is `weights`.
inline double dot(const Tensor4& a, const Tensor4& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a.raw()[i] * b.raw()[i];
  return s;
}

// Mean IOU from explicit pixel sets, one (prediction, truth) pair at a time.
struct SetIou {
  std::vector<std::optional<double>> per_class;
  double mean = 0.0;
};

inline SetIou set_iou(const std::vector<LabelMap>& preds, const std::vector<LabelMap>& truths,
                      int num_classes) {
  std::vector<std::set<std::pair<std::size_t, std::size_t>>> pred_sets(num_classes),
      truth_sets(num_classes);
  for (std::size_t k = 0; k < preds.size(); ++k) {
    for (std::size_t i = 0; i < truths[k].raw().size(); ++i) {
      const int t = truths[k].raw()[i];
      if (t == kIgnoreLabel) continue;
      truth_sets[t].insert({k, i});
      pred_sets[preds[k].raw()[i]].insert({k, i});
    }
  }
  SetIou out;
  double sum = 0.0;
  int defined = 0;
  for (int c = 0; c < num_classes; ++c) {
    std::set<std::pair<std::size_t, std::size_t>> both, either = pred_sets[c];
    either.insert(truth_sets[c].begin(), truth_sets[c].end());
    for (const auto& p : pred_sets[c])
      if (truth_sets[c].count(p)) both.insert(p);
    if (either.empty()) {
      out.per_class.push_back(std::nullopt);
      continue;
    }
    const double iou = static_cast<double>(both.size()) / static_cast<double>(either.size());
    out.per_class.push_back(iou);
    sum += iou;
    ++defined;
  }
  out.mean = sum / defined;
  return out;
}

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("scaleseg_" + tag + "_" + std::to_string(::getpid()) + "_" +
             std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() { std::filesystem::remove_all(path_); }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace scaleseg::testing

#endif  // SCALESEG_TESTS_TEST_SUPPORT_HPP_
