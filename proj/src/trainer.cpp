#include "scaleseg/trainer.hpp"

#include <cmath>
#include <map>

#include "scaleseg/errors.hpp"
#include "scaleseg/rng.hpp"

namespace scaleseg {

void TrainConfig::validate() const {
  if (!(base_lr > 0.0)) throw ValidationError("base_lr must be > 0");
  if (lr_step_iters < 1) throw ValidationError("lr_step_iters must be >= 1");
  if (!(lr_gamma > 0.0 && lr_gamma <= 1.0)) {
    throw ValidationError("lr_gamma must be in (0, 1]");
  }
  if (!(momentum >= 0.0 && momentum < 1.0)) {
    throw ValidationError("momentum must be in [0, 1)");
  }
  if (!(weight_decay >= 0.0)) throw ValidationError("weight_decay must be >= 0");
  if (batch_size < 1) throw ValidationError("batch_size must be >= 1");
  if (max_iters < 0) throw ValidationError("max_iters must be >= 0");
  if (scales.empty()) throw ValidationError("scales must not be empty");
}

NetworkParams init_params_for(const TrainConfig& config, int num_classes) {
  config.validate();
  const int hidden =
      config.merge_mode == MergeMode::kAttention ? kDefaultAttentionHidden : 0;
  return init_params(config.seed, default_trunk_plan(num_classes), num_classes,
                     config.scales, hidden);
}

OptimizerState OptimizerState::zeros_like(const NetworkParams& params) {
  return OptimizerState{ParamGrads::zeros_like(params), 0};
}

namespace {

bool same_layers(const std::vector<LayerGrad>& a, const std::vector<LayerGrad>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!(a[i].kernel == b[i].kernel) || a[i].bias != b[i].bias) return false;
  }
  return true;
}

}  // namespace

bool OptimizerState::operator==(const OptimizerState& other) const {
  return iteration == other.iteration &&
         same_layers(velocity.trunk, other.velocity.trunk) &&
         same_layers(velocity.attention, other.velocity.attention);
}

double lr_at(const TrainConfig& config, std::int64_t iter) {
  if (iter < 0) throw ValidationError("lr_at: iteration must be >= 0");
  const std::int64_t steps = iter / config.lr_step_iters;
  return config.base_lr * std::pow(config.lr_gamma, static_cast<double>(steps));
}

namespace {

void step_values(std::span<double> theta, std::span<const double> grad,
                 std::span<double> velocity, double lr_m, double momentum,
                 double weight_decay) {
  for (std::size_t i = 0; i < theta.size(); ++i) {
    velocity[i] = momentum * velocity[i] + lr_m * (grad[i] + weight_decay * theta[i]);
    theta[i] -= velocity[i];
  }
}

void step_layers(std::vector<Layer>& layers, const std::vector<LayerGrad>& grads,
                 std::vector<LayerGrad>& velocity, double lr,
                 const TrainConfig& config, const char* table) {
  if (grads.size() != layers.size() || velocity.size() != layers.size()) {
    throw ValidationError(std::string("sgd_step: ") + table +
                          " gradient table is not aligned with the parameters");
  }
  for (std::size_t l = 0; l < layers.size(); ++l) {
    Layer& layer = layers[l];
    if (!(grads[l].kernel.shape() == layer.kernel.shape()) ||
        !(velocity[l].kernel.shape() == layer.kernel.shape()) ||
        grads[l].bias.size() != layer.bias.size() ||
        velocity[l].bias.size() != layer.bias.size()) {
      throw ValidationError(std::string("sgd_step: ") + table + " layer " +
                            std::to_string(l) + " gradient shape mismatch");
    }
    const double lr_m = lr * layer.lr_multiplier;
    step_values(layer.kernel.values(), grads[l].kernel.values(),
                velocity[l].kernel.values(), lr_m, config.momentum,
                config.weight_decay);
    step_values(layer.bias, grads[l].bias, velocity[l].bias, lr_m,
                config.momentum, config.weight_decay);
  }
}

}  // namespace

void sgd_step(NetworkParams& params, const ParamGrads& grads,
              OptimizerState& state, const TrainConfig& config,
              std::int64_t iter) {
  const double lr = lr_at(config, iter);
  step_layers(params.trunk, grads.trunk, state.velocity.trunk, lr, config, "trunk");
  step_layers(params.attention, grads.attention, state.velocity.attention, lr,
              config, "attention");
}

BatchResult batch_gradient(const NetworkParams& params,
                           std::span<const Sample* const> batch,
                           MergeMode mode, bool extra_supervision,
                           bool want_input_grad) {
  if (batch.empty()) throw ValidationError("batch_gradient: empty batch");
  const int S = params.num_scales();
  const double inv = 1.0 / static_cast<double>(batch.size());

  BatchResult out;
  out.grads = ParamGrads::zeros_like(params);
  LossReport& mean = out.report;
  mean.extra_supervision = extra_supervision;
  mean.per_scale_losses.assign(S, 0.0);
  mean.per_scale_valid.assign(S, 0);

  for (const Sample* sample : batch) {
    const ForwardResult fwd = network_forward(params, center_image(sample->image), mode);
    TotalLoss tl = total_loss(fwd.merged, fwd.pyramid(), sample->labels,
                              extra_supervision);
    tl.grads.merged *= inv;
    for (Tensor4& g : tl.grads.natives) g *= inv;
    out.grads += network_backward(params, fwd.cache, tl.grads.merged,
                                  tl.grads.natives, want_input_grad);

    const LossReport& r = tl.report;
    mean.merged_loss += r.merged_loss * inv;
    mean.merged_valid += r.merged_valid;
    for (int s = 0; s < S; ++s) {
      mean.per_scale_losses[s] += r.per_scale_losses[s] * inv;
      mean.per_scale_valid[s] += r.per_scale_valid[s];
    }
    mean.has_empty_term = mean.has_empty_term || r.has_empty_term;
  }
  mean.total = mean.merged_loss;
  if (extra_supervision) {
    for (double l : mean.per_scale_losses) mean.total += l;
  }
  return out;
}

double batch_loss(const NetworkParams& params,
                  std::span<const Sample* const> batch, MergeMode mode,
                  bool extra_supervision) {
  if (batch.empty()) throw ValidationError("batch_loss: empty batch");
  const double inv = 1.0 / static_cast<double>(batch.size());
  double merged = 0.0;
  std::vector<double> per_scale(params.num_scales(), 0.0);
  for (const Sample* sample : batch) {
    const ForwardResult fwd = network_forward(params, center_image(sample->image), mode);
    const TotalLoss tl = total_loss(fwd.merged, fwd.pyramid(), sample->labels,
                                    extra_supervision);
    merged += tl.report.merged_loss * inv;
    for (std::size_t s = 0; s < per_scale.size(); ++s) {
      per_scale[s] += tl.report.per_scale_losses[s] * inv;
    }
  }
  double total = merged;
  if (extra_supervision) {
    for (double l : per_scale) total += l;
  }
  return total;
}

std::vector<int> batch_indices(std::int64_t iter, int batch_size, int n,
                               std::uint64_t seed) {
  std::vector<int> out;
  out.reserve(batch_size);
  std::uint64_t cached_epoch = ~0ULL;
  std::vector<int> perm;
  for (int b = 0; b < batch_size; ++b) {
    const std::int64_t p = iter * batch_size + b;
    const auto epoch = static_cast<std::uint64_t>(p / n);
    if (epoch != cached_epoch) {
      perm = shuffled_indices(n, seed, epoch);
      cached_epoch = epoch;
    }
    out.push_back(perm[p % n]);
  }
  return out;
}

TrainResult train_loop(NetworkParams params, OptimizerState state,
                       std::span<const Sample> dataset, const TrainConfig& config,
                       const std::function<void(const IterationLog&)>& on_iteration) {
  config.validate();
  params.validate();
  if (dataset.empty()) throw ValidationError("train_loop: dataset is empty");
  if (params.scales != config.scales) {
    throw ValidationError("train_loop: network scales differ from config scales");
  }
  const int n = static_cast<int>(dataset.size());
  TrainResult result;
  std::vector<const Sample*> batch(config.batch_size);
  for (std::int64_t iter = state.iteration; iter < config.max_iters; ++iter) {
    const std::vector<int> idx = batch_indices(iter, config.batch_size, n, config.seed);
    for (int b = 0; b < config.batch_size; ++b) batch[b] = &dataset[idx[b]];
    BatchResult br = batch_gradient(params, batch, config.merge_mode,
                                    config.extra_supervision);
    if (!std::isfinite(br.report.total)) {
      throw ValidationError("training diverged: non-finite loss at iteration " +
                            std::to_string(iter));
    }
    IterationLog entry{iter, lr_at(config, iter), br.report};
    sgd_step(params, br.grads, state, config, iter);
    state.iteration = iter + 1;
    if (on_iteration) on_iteration(entry);
    result.log.push_back(std::move(entry));
  }
  result.params = std::move(params);
  result.state = std::move(state);
  return result;
}

double relative_error(double analytic, double numeric) {
  const double scale = std::max(std::abs(analytic), std::abs(numeric));
  if (scale == 0.0) return 0.0;
  return std::abs(analytic - numeric) / std::max(scale, kGradientNoiseFloor);
}

namespace {

struct Probe {
  std::string name;
  double* value;
  double analytic;
};

void add_probes(std::vector<Probe>& probes, std::vector<Layer>& layers,
                const std::vector<LayerGrad>& grads, const std::string& table) {
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const std::string prefix = table + "[" + std::to_string(l) + "]";
    auto k = layers[l].kernel.values();
    const auto gk = grads[l].kernel.values();
    for (std::size_t i = 0; i < k.size(); ++i) {
      probes.push_back({prefix + ".kernel[" + std::to_string(i) + "]", &k[i], gk[i]});
    }
    for (std::size_t i = 0; i < layers[l].bias.size(); ++i) {
      probes.push_back({prefix + ".bias[" + std::to_string(i) + "]",
                        &layers[l].bias[i], grads[l].bias[i]});
    }
  }
}

}  // namespace

GradCheckReport compare_gradients(const NetworkParams& params,
                                  std::span<const Sample* const> batch,
                                  MergeMode mode, bool extra_supervision,
                                  const ParamGrads& analytic, double tolerance) {
  NetworkParams work = params;
  std::vector<Probe> probes;
  add_probes(probes, work.trunk, analytic.trunk, "trunk");
  add_probes(probes, work.attention, analytic.attention, "attention");

  Sample image_copy;
  std::vector<const Sample*> work_batch(batch.begin(), batch.end());
  if (!analytic.image.empty()) {
    if (batch.size() != 1) {
      throw ValidationError("input-gradient check needs a single-image batch");
    }
    image_copy = *batch[0];
    work_batch[0] = &image_copy;
    auto px = image_copy.image.values();
    const auto gx = analytic.image.values();
    for (std::size_t i = 0; i < px.size(); ++i) {
      probes.push_back({"image[" + std::to_string(i) + "]", &px[i], gx[i]});
    }
  }

  GradCheckReport report;
  report.tolerance = tolerance;
  const double h = kFiniteDifferenceStep;
  for (const Probe& p : probes) {
    const double original = *p.value;
    *p.value = original + h;
    const double plus = batch_loss(work, work_batch, mode, extra_supervision);
    *p.value = original - h;
    const double minus = batch_loss(work, work_batch, mode, extra_supervision);
    *p.value = original;
    const double numeric = (plus - minus) / (2.0 * h);
    const double err = relative_error(p.analytic, numeric);
    ++report.checked;
    if (report.worst.empty() || err > report.max_rel_error) {
      report.max_rel_error = err;
      report.worst = p.name;
    }
  }
  report.passed = report.max_rel_error < tolerance;
  return report;
}

GradCheckReport grad_check(const NetworkParams& params,
                           std::span<const Sample* const> batch,
                           const TrainConfig& config, double tolerance,
                           bool include_input) {
  if (include_input && batch.size() != 1) {
    throw ValidationError("input-gradient check needs a single-image batch");
  }
  const BatchResult br = batch_gradient(params, batch, config.merge_mode,
                                        config.extra_supervision, include_input);
  return compare_gradients(params, batch, config.merge_mode,
                           config.extra_supervision, br.grads, tolerance);
}

GradCheckInstance make_grad_check_instance(std::uint64_t seed, MergeMode mode) {
  constexpr int kClasses = 2;
  constexpr int kSize = 12;
  // Default trunk topology at reduced width.
  const std::vector<ConvSpec> plan{
      ConvSpec{3, 4, 3, 1, 1, true},
      ConvSpec{4, 6, 3, 2, 1, true},
      ConvSpec{6, 6, 3, 1, 2, true},
      ConvSpec{6, kClasses, 1, 1, 1, false},
  };
  GradCheckInstance inst;
  inst.params = init_params(seed, plan, kClasses, {1.0, 0.75},
                            mode == MergeMode::kAttention ? 4 : 0);
  SplitMix64 rng(splitmix64_mix(seed ^ 0x6772616463686b00ULL));
  // Wider than the training initialisation so that scale differences, and
  // with them the attention-head gradients, stand well above the
  // finite-difference noise. Non-zero biases keep units off the ReLU kink.
  for (auto* table : {&inst.params.trunk, &inst.params.attention}) {
    for (Layer& l : *table) {
      const double fan_in = l.spec.in_channels * l.spec.kernel * l.spec.kernel;
      const double bound = 3.0 / std::sqrt(fan_in);
      for (double& v : l.kernel.values()) v = rng.uniform(-bound, bound);
      for (double& b : l.bias) b = rng.uniform(-0.1, 0.1);
    }
  }
  inst.sample.image = Tensor4(1, 3, kSize, kSize);
  for (double& v : inst.sample.image.values()) v = rng.uniform();
  inst.sample.labels = LabelMap(kSize, kSize);
  for (auto& v : inst.sample.labels.raw()) {
    v = static_cast<std::uint8_t>(rng.uniform_int(0, kClasses - 1));
  }
  inst.sample.labels.at(0, 0) = kIgnoreLabel;
  return inst;
}

}  // namespace scaleseg
