#ifndef SCALESEG_TRAINER_HPP_
#define SCALESEG_TRAINER_HPP_

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "scaleseg/data.hpp"
#include "scaleseg/loss.hpp"
#include "scaleseg/network.hpp"

namespace scaleseg {

struct TrainConfig {
  double base_lr = 0.001;
  std::int64_t lr_step_iters = 2000;
  double lr_gamma = 0.1;
  double momentum = 0.9;
  double weight_decay = 0.0005;
  int batch_size = 4;
  std::int64_t max_iters = 1500;
  std::uint64_t seed = 1;
  std::vector<double> scales{1.0};
  MergeMode merge_mode = MergeMode::kAttention;
  bool extra_supervision = true;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

// Network matching a training configuration: default trunk, attention head
// only for attention merging.
NetworkParams init_params_for(const TrainConfig& config, int num_classes);

struct OptimizerState {
  ParamGrads velocity;  // mirrors the parameter shapes
  std::int64_t iteration = 0;

  static OptimizerState zeros_like(const NetworkParams& params);
  bool operator==(const OptimizerState&) const;
};

// base_lr * lr_gamma ^ floor(iter / lr_step_iters)
double lr_at(const TrainConfig& config, std::int64_t iter);

// v <- momentum * v + lr * m * (g + weight_decay * theta);  theta <- theta - v
void sgd_step(NetworkParams& params, const ParamGrads& grads,
              OptimizerState& state, const TrainConfig& config,
              std::int64_t iter);

struct BatchResult {
  LossReport report;  // mean over images of each term
  ParamGrads grads;   // gradient of the mean total loss
};

// Forward + loss + backward over a batch, images in the given order.
BatchResult batch_gradient(const NetworkParams& params,
                           std::span<const Sample* const> batch,
                           MergeMode mode, bool extra_supervision,
                           bool want_input_grad = false);

// Mean total loss over the batch, forward only.
double batch_loss(const NetworkParams& params,
                  std::span<const Sample* const> batch, MergeMode mode,
                  bool extra_supervision);

// Dataset indices used by iteration `iter`. Global sample position
// p = iter * batch_size + b is drawn from epoch p / n of the seeded shuffle.
std::vector<int> batch_indices(std::int64_t iter, int batch_size, int n,
                               std::uint64_t seed);

struct IterationLog {
  std::int64_t iter = 0;
  double lr = 0.0;
  LossReport report;
};

struct TrainResult {
  NetworkParams params;
  OptimizerState state;
  std::vector<IterationLog> log;
};

// Runs iterations state.iteration .. config.max_iters - 1. Throws
// ValidationError naming the iteration if a loss is not finite.
TrainResult train_loop(NetworkParams params, OptimizerState state,
                       std::span<const Sample> dataset, const TrainConfig& config,
                       const std::function<void(const IterationLog&)>& on_iteration = {});

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst;  // e.g. "trunk[1].kernel[37]"
  std::int64_t checked = 0;
  double tolerance = 0.0;
  bool passed = false;
};

inline constexpr double kFiniteDifferenceStep = 1e-5;

// Central differences at this step carry roughly 1e-11 of rounding noise, so
// gradients below the floor are compared in absolute terms.
inline constexpr double kGradientNoiseFloor = 1e-6;

// |a - n| / max(|a|, |n|, kGradientNoiseFloor); 0 when both are exactly 0.
double relative_error(double analytic, double numeric);

// Compares `analytic` against central differences of the mean total loss
// for every parameter (and the image gradient of a single-image batch when
// analytic.image is non-empty).
GradCheckReport compare_gradients(const NetworkParams& params,
                                  std::span<const Sample* const> batch,
                                  MergeMode mode, bool extra_supervision,
                                  const ParamGrads& analytic, double tolerance);

GradCheckReport grad_check(const NetworkParams& params,
                           std::span<const Sample* const> batch,
                           const TrainConfig& config, double tolerance,
                           bool include_input = false);

// Gradient-check instance: scales {1, 0.75}, C = 2, one 12x12 random image.
struct GradCheckInstance {
  NetworkParams params;
  Sample sample;
};
GradCheckInstance make_grad_check_instance(std::uint64_t seed, MergeMode mode);

struct Checkpoint {
  TrainConfig config;
  NetworkParams params;
  OptimizerState state;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& path, const NetworkParams& params,
                     const OptimizerState& state, const TrainConfig& config);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// The payload is followed by a CRC-32 of every preceding byte.
std::vector<std::uint8_t> encode_checkpoint(const NetworkParams& params,
                                            const OptimizerState& state,
                                            const TrainConfig& config);
// Throws IoError for truncation, bad magic/version, trailing bytes and a
// checksum mismatch,
// ValidationError when the stored tensors disagree with the stored config.
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);

}  // namespace scaleseg

#endif  // SCALESEG_TRAINER_HPP_
