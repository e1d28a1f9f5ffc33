#include <algorithm>
#include <cmath>
#include <numbers>

#include "scaleseg/data.hpp"
#include "scaleseg/errors.hpp"
#include "scaleseg/rng.hpp"

namespace scaleseg {

namespace {

constexpr double kNoiseAmplitude = 0.1;
constexpr int kPlacementTries = 64;

// Equal-area proportions relative to a disk of the same radius.
const double kSquareHalfSide = std::sqrt(std::numbers::pi) / 2.0;
const double kTriangleSide = std::sqrt(4.0 * std::numbers::pi / std::sqrt(3.0));
const double kTriangleCircumradius = kTriangleSide / std::sqrt(3.0);

}  // namespace

bool ObjectSpec::contains(double px, double py) const {
  const double dx = px - cx;
  const double dy = py - cy;
  switch (kind) {
    case ShapeKind::kDisk:
      return dx * dx + dy * dy <= radius * radius;
    case ShapeKind::kSquare: {
      const double a = kSquareHalfSide * radius;
      return std::abs(dx) <= a && std::abs(dy) <= a;
    }
    case ShapeKind::kTriangle: {
      // Upward-pointing equilateral triangle centred on its centroid.
      const double R = kTriangleCircumradius * radius;
      const double half = kTriangleSide * radius / 2.0;
      if (dy > R / 2.0 || dy < -R) return false;
      // Half-width grows linearly from 0 at the apex to `half` at the base.
      const double width = half * (dy + R) / (1.5 * R);
      return std::abs(dx) <= width;
    }
  }
  return false;
}

void SynthConfig::validate() const {
  if (image_size < 16) {
    throw ValidationError("image_size must be >= 16, got " +
                          std::to_string(image_size));
  }
  if (num_classes < 2 || num_classes > 4) {
    throw ValidationError("num_classes must be in [2, 4], got " +
                          std::to_string(num_classes));
  }
  if (min_objects < 1) {
    throw ValidationError("min_objects must be >= 1, got " +
                          std::to_string(min_objects));
  }
  if (max_objects < min_objects) {
    throw ValidationError("max_objects must be >= min_objects");
  }
  auto check_range = [&](double lo, double hi, const char* name) {
    if (!(lo > 0.0) || !(hi >= lo)) {
      throw ValidationError(std::string(name) + " radius range is invalid");
    }
    if (!(hi < image_size / 2.0)) {
      throw ValidationError(std::string(name) +
                            " radius must be < image_size / 2");
    }
  };
  check_range(small_radius_min, small_radius_max, "small");
  check_range(large_radius_min, large_radius_max, "large");
  if (train_count < 1) throw ValidationError("train_count must be >= 1");
  if (val_count < 1) throw ValidationError("val_count must be >= 1");
}

namespace {

std::array<double, 3> random_color(SplitMix64& rng, double lo, double hi) {
  return {rng.uniform(lo, hi), rng.uniform(lo, hi), rng.uniform(lo, hi)};
}

std::array<double, 3> background_color(SplitMix64& rng) {
  return random_color(rng, 0.05, 0.4);
}

std::array<double, 3> object_color(SplitMix64& rng) { return random_color(rng, 0.55, 0.95); }

ObjectSpec random_object(const SynthConfig& cfg, SplitMix64& rng, bool small) {
  ObjectSpec o;
  o.kind = static_cast<ShapeKind>(rng.uniform_int(1, cfg.num_classes - 1));
  o.small = small;
  o.radius = small ? rng.uniform(cfg.small_radius_min, cfg.small_radius_max)
                   : rng.uniform(cfg.large_radius_min, cfg.large_radius_max);
  const double size = cfg.image_size;
  o.cx = rng.uniform(o.radius, size - o.radius);
  o.cy = rng.uniform(o.radius, size - o.radius);
  o.color = object_color(rng);
  return o;
}

bool overlaps(const ObjectSpec& a, const ObjectSpec& b, int size) {
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      if (a.contains(x + 0.5, y + 0.5) && b.contains(x + 0.5, y + 0.5)) {
        return true;
      }
    }
  }
  return false;
}

}  // namespace

std::vector<int> rasterize_owners(std::span<const ObjectSpec> objects, int h,
                                  int w) {
  std::vector<int> owner(static_cast<std::size_t>(h) * w, -1);
  for (std::size_t k = 0; k < objects.size(); ++k) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        if (objects[k].contains(x + 0.5, y + 0.5)) {
          owner[static_cast<std::size_t>(y) * w + x] = static_cast<int>(k);
        }
      }
    }
  }
  return owner;
}

LabelMap rasterize_labels(std::span<const ObjectSpec> objects, int h, int w) {
  const std::vector<int> owner = rasterize_owners(objects, h, w);
  LabelMap labels(h, w, 0);
  for (std::size_t i = 0; i < owner.size(); ++i) {
    if (owner[i] >= 0) {
      labels.raw()[i] = static_cast<std::uint8_t>(objects[owner[i]].kind);
    }
  }
  return labels;
}

Sample synth_sample(const SynthConfig& config, Split split, int index) {
  config.validate();
  const std::uint64_t key =
      splitmix64_mix(config.seed ^
                     splitmix64_mix(static_cast<std::uint64_t>(split) ^
                                    splitmix64_mix(static_cast<std::uint64_t>(index))));
  SplitMix64 rng(key);
  const int size = config.image_size;
  const std::array<double, 3> background = background_color(rng);

  Sample sample;
  if (config.one_small_one_large) {
    ObjectSpec large = random_object(config, rng, false);
    ObjectSpec small = random_object(config, rng, true);
    for (int attempt = 0; attempt < kPlacementTries && overlaps(large, small, size);
         ++attempt) {
      small = random_object(config, rng, true);
    }
    sample.objects = {large, small};
  } else {
    const auto count = rng.uniform_int(config.min_objects, config.max_objects);
    for (std::int64_t k = 0; k < count; ++k) {
      const bool small = rng.uniform() < 0.5;
      sample.objects.push_back(random_object(config, rng, small));
    }
  }

  const std::vector<int> owner = rasterize_owners(sample.objects, size, size);
  sample.labels = LabelMap(size, size, 0);
  sample.image = Tensor4(1, 3, size, size);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * size + x;
      const int k = owner[i];
      if (k >= 0) {
        sample.labels.raw()[i] = static_cast<std::uint8_t>(sample.objects[k].kind);
        for (int c = 0; c < 3; ++c) sample.image.at(0, c, y, x) = sample.objects[k].color[c];
        continue;
      }
      // Shapes are filled flat; only the background carries noise.
      for (int c = 0; c < 3; ++c) {
        const double v = background[c] + rng.uniform(-kNoiseAmplitude, kNoiseAmplitude);
        sample.image.at(0, c, y, x) = std::clamp(v, 0.0, 1.0);
      }
    }
  }
  return sample;
}

Dataset synth_generate(const SynthConfig& config) {
  config.validate();
  Dataset d;
  d.train.reserve(config.train_count);
  d.val.reserve(config.val_count);
  for (int i = 0; i < config.train_count; ++i) {
    d.train.push_back(synth_sample(config, Split::kTrain, i));
  }
  for (int i = 0; i < config.val_count; ++i) {
    d.val.push_back(synth_sample(config, Split::kVal, i));
  }
  return d;
}

std::vector<int> shuffled_indices(int n, std::uint64_t seed, std::uint64_t epoch) {
  if (n < 1) throw ValidationError("shuffled_indices: n must be >= 1");
  std::vector<int> perm(n);
  for (int i = 0; i < n; ++i) perm[i] = i;
  SplitMix64 rng(seed ^ epoch);
  for (int i = n - 1; i > 0; --i) {
    const auto j = static_cast<int>(rng.next() % static_cast<std::uint64_t>(i + 1));
    std::swap(perm[i], perm[j]);
  }
  return perm;
}

}  // namespace scaleseg
