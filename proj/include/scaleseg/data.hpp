#ifndef SCALESEG_DATA_HPP_
#define SCALESEG_DATA_HPP_

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "scaleseg/tensor.hpp"

namespace scaleseg {

// Shape kinds double as class indices; 0 is background.
enum class ShapeKind : std::uint8_t { kDisk = 1, kSquare = 2, kTriangle = 3 };

struct ObjectSpec {
  ShapeKind kind = ShapeKind::kDisk;
  double cx = 0.0;  // centre, in pixel units (pixel (y, x) has centre x + 0.5)
  double cy = 0.0;
  double radius = 0.0;  // all kinds have area pi * radius^2
  std::array<double, 3> color{};
  bool small = false;

  bool contains(double px, double py) const;
  bool operator==(const ObjectSpec&) const = default;
};

struct Sample {
  Tensor4 image;  // (1, 3, H, W), values in [0, 1]
  LabelMap labels;
  std::vector<ObjectSpec> objects;  // draw order; empty for loaded samples

  bool operator==(const Sample&) const = default;
};

struct SynthConfig {
  int image_size = 64;
  int num_classes = 4;  // background + up to three shape classes
  int min_objects = 1;
  int max_objects = 3;
  double small_radius_min = 4.0;
  double small_radius_max = 7.0;
  double large_radius_min = 14.0;
  double large_radius_max = 22.0;
  std::uint64_t seed = 42;
  int train_count = 200;
  int val_count = 50;
  // Every image gets exactly one large object and then one small object,
  // placed apart when possible.
  bool one_small_one_large = false;

  void validate() const;
};

struct Dataset {
  std::vector<Sample> train;
  std::vector<Sample> val;
};

enum class Split : std::uint64_t { kTrain = 0, kVal = 1 };

Sample synth_sample(const SynthConfig& config, Split split, int index);
Dataset synth_generate(const SynthConfig& config);

// Index of the topmost object covering each pixel, -1 for background.
std::vector<int> rasterize_owners(std::span<const ObjectSpec> objects, int h,
                                  int w);
LabelMap rasterize_labels(std::span<const ObjectSpec> objects, int h, int w);

// Fisher-Yates permutation of 0..n-1 keyed by splitmix64(seed ^ epoch).
std::vector<int> shuffled_indices(int n, std::uint64_t seed, std::uint64_t epoch);

// Binary netpbm. Readers throw IoError with the byte offset of the problem.
Tensor4 parse_ppm(std::span<const std::uint8_t> bytes);
LabelMap parse_pgm(std::span<const std::uint8_t> bytes);
Tensor4 read_ppm(const std::filesystem::path& path);
LabelMap read_pgm(const std::filesystem::path& path);

// (1, 3, h, w) in [0, 1] -> P6, byte = round(255 x).
void write_ppm(const std::filesystem::path& path, const Tensor4& image);
// Single-channel map in [0, 1] -> P5, byte = round(255 x).
void write_pgm(const std::filesystem::path& path, const Tensor4& map);
// Raw label bytes -> P5.
void write_label_pgm(const std::filesystem::path& path, const LabelMap& labels);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);

// images/NNNN.ppm, labels/NNNN.pgm and dataset.txt (one index per line).
std::vector<Sample> load_dataset_dir(const std::filesystem::path& dir);
void write_dataset_dir(const std::filesystem::path& dir,
                       std::span<const Sample> samples);

}  // namespace scaleseg

#endif  // SCALESEG_DATA_HPP_
