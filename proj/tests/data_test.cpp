#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <set>

#include <gtest/gtest.h>

#include "scaleseg/data.hpp"
#include "scaleseg/errors.hpp"
#include "test_support.hpp"

namespace scaleseg {
namespace {

namespace fs = std::filesystem;
using testing::TempDir;

std::vector<std::uint8_t> bytes_of(const std::string& s) {
  return {s.begin(), s.end()};
}

SynthConfig small_config() {
  SynthConfig c;
  c.train_count = 20;
  c.val_count = 5;
  return c;
}

TEST(Synth, DeterministicAndIndexAddressable) {
  const SynthConfig c = small_config();
  const Dataset a = synth_generate(c);
  const Dataset b = synth_generate(c);
  EXPECT_EQ(a.train, b.train);
  EXPECT_EQ(a.val, b.val);
  EXPECT_EQ(synth_sample(c, Split::kTrain, 13), a.train[13]);
  EXPECT_EQ(synth_sample(c, Split::kVal, 2), a.val[2]);
  EXPECT_NE(a.train[0].image, a.val[0].image);
  SynthConfig other = c;
  other.seed = 43;
  EXPECT_NE(synth_generate(other).train[0].image, a.train[0].image);
}

TEST(Synth, SamplesAreWellFormed) {
  const Dataset d = synth_generate(small_config());
  for (const Sample& s : d.train) {
    ASSERT_EQ(s.image.shape(), (Shape4{1, 3, 64, 64}));
    ASSERT_EQ(s.labels.h(), 64);
    for (double v : s.image.values()) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
    for (auto l : s.labels.values()) EXPECT_LT(l, 4);
    EXPECT_GE(s.objects.size(), 1u);
    EXPECT_LE(s.objects.size(), 3u);
  }
}

TEST(Synth, LabelsMatchRecordedGeometry) {
  for (const Sample& s : synth_generate(small_config()).train)
    EXPECT_EQ(rasterize_labels(s.objects, 64, 64), s.labels);
}

TEST(Synth, ScaleDrawsCoverBothPopulations) {
  int small = 0, large = 0;
  for (const Sample& s : synth_generate(small_config()).train) {
    for (const ObjectSpec& o : s.objects) {
      if (o.small) {
        ++small;
        EXPECT_GE(o.radius, 4.0);
        EXPECT_LE(o.radius, 7.0);
      } else {
        ++large;
        EXPECT_GE(o.radius, 14.0);
        EXPECT_LE(o.radius, 22.0);
      }
    }
  }
  EXPECT_GT(small, 5);
  EXPECT_GT(large, 5);
}

TEST(Synth, BackgroundIsAtLeastFortyPercent) {
  SynthConfig c;
  const Dataset d = synth_generate(c);
  double total = 0.0;
  for (const Sample& s : d.train) {
    const auto v = s.labels.values();
    total += static_cast<double>(std::count(v.begin(), v.end(), 0)) / v.size();
  }
  EXPECT_GE(total / d.train.size(), 0.40);
}

TEST(Synth, RejectsInvalidConfigs) {
  SynthConfig c;
  c.min_objects = 0;
  EXPECT_THROW(synth_generate(c), ValidationError);
  c = SynthConfig{};
  c.large_radius_max = 32.0;
  EXPECT_THROW(synth_generate(c), ValidationError);
  c = SynthConfig{};
  c.num_classes = 5;
  EXPECT_THROW(synth_generate(c), ValidationError);
  c = SynthConfig{};
  c.train_count = 0;
  EXPECT_THROW(synth_generate(c), ValidationError);
}

TEST(Synth, FewerClassesLimitShapeKinds) {
  SynthConfig c = small_config();
  c.num_classes = 2;
  for (const Sample& s : synth_generate(c).train) {
    for (auto l : s.labels.values()) EXPECT_LT(l, 2);
  }
}

TEST(Synth, OneSmallOneLargeMode) {
  SynthConfig c = small_config();
  c.one_small_one_large = true;
  for (const Sample& s : synth_generate(c).val) {
    ASSERT_EQ(s.objects.size(), 2u);
    EXPECT_FALSE(s.objects[0].small);
    EXPECT_TRUE(s.objects[1].small);
  }
}

class ShapeArea : public ::testing::TestWithParam<ShapeKind> {};

TEST_P(ShapeArea, PixelCountNearPiRSquared) {
  for (double r : {6.0, 7.5, 10.0, 14.0, 19.5}) {
    for (double offset : {0.0, 0.25, 0.5}) {
      ObjectSpec o;
      o.kind = GetParam();
      o.cx = 32.0 + offset;
      o.cy = 32.0 + offset / 2;
      o.radius = r;
      const ObjectSpec objects[] = {o};
      const LabelMap l = rasterize_labels(objects, 64, 64);
      const auto v = l.values();
      const double count = std::count(v.begin(), v.end(), static_cast<std::uint8_t>(o.kind));
      const double area = std::numbers::pi * r * r;
      // Square edges snap to whole pixel rows, so only disks get the tight bound.
      const double tol = o.kind == ShapeKind::kDisk ? 0.08 : 0.15;
      EXPECT_NEAR(count / area, 1.0, tol) << "r=" << r << " offset=" << offset;
    }
  }
}

INSTANTIATE_TEST_SUITE_P(AllKinds, ShapeArea,
                         ::testing::Values(ShapeKind::kDisk, ShapeKind::kSquare,
                                           ShapeKind::kTriangle));

TEST(Rasterize, PixelCentreRule) {
  ObjectSpec o;
  o.cx = 2.0;
  o.cy = 2.0;
  o.radius = 1.0;
  const ObjectSpec objects[] = {o};
  const LabelMap l = rasterize_labels(objects, 4, 4);
  // Centres (1.5, 1.5) .. (2.5, 2.5) are at distance sqrt(0.5) < 1.
  const std::vector<std::uint8_t> want{0, 0, 0, 0, 0, 1, 1, 0, 0, 1, 1, 0, 0, 0, 0, 0};
  EXPECT_EQ(l.raw(), want);
}

TEST(Rasterize, LaterObjectsOverdraw) {
  ObjectSpec a;
  a.kind = ShapeKind::kDisk;
  a.cx = a.cy = 10.0;
  a.radius = 6.0;
  ObjectSpec b = a;
  b.kind = ShapeKind::kSquare;
  b.cx = 13.0;
  const ObjectSpec objects[] = {a, b};
  const auto owners = rasterize_owners(objects, 20, 20);
  const LabelMap labels = rasterize_labels(objects, 20, 20);
  EXPECT_EQ(owners[10 * 20 + 12], 1);
  EXPECT_EQ(labels.at(10, 12), 2);
  EXPECT_EQ(owners[10 * 20 + 5], 0);
  EXPECT_EQ(owners[0], -1);
}

TEST(ShuffledIndices, Examples) {
  EXPECT_EQ(shuffled_indices(1, 5, 0), (std::vector<int>{0}));
  for (std::uint64_t seed : {0ull, 1ull, 42ull, ~0ull}) {
    auto p = shuffled_indices(37, seed, 3);
    std::sort(p.begin(), p.end());
    std::vector<int> iota(37);
    std::iota(iota.begin(), iota.end(), 0);
    EXPECT_EQ(p, iota);
  }
  EXPECT_EQ(shuffled_indices(50, 9, 2), shuffled_indices(50, 9, 2));
}

TEST(ShuffledIndices, EpochsDiffer) {
  for (std::uint64_t seed : {1ull, 42ull, 1234ull}) {
    std::set<std::vector<int>> seen;
    for (std::uint64_t epoch = 0; epoch < 20; ++epoch) seen.insert(shuffled_indices(100, seed, epoch));
    EXPECT_EQ(seen.size(), 20u);
  }
}

TEST(Netpbm, UnitPixelNormalisation) {
  const Tensor4 t = parse_ppm(bytes_of(std::string("P6\n1 1\n255\n") + '\xff' + '\0' + '\0'));
  EXPECT_EQ(t.raw(), (std::vector<double>{1.0, 0.0, 0.0}));
}

TEST(Netpbm, ByteFiveFiveIsIgnore) {
  const LabelMap l = parse_pgm(bytes_of(std::string("P5\n1 1\n255\n") + '\xff'));
  EXPECT_EQ(l.at(0, 0), kIgnoreLabel);
}

TEST(Netpbm, CommentsDoNotChangeResult) {
  const std::string payload = "\x01\x02\x03\x04\x05\x06";
  const LabelMap plain = parse_pgm(bytes_of("P5\n3 2\n255\n" + payload));
  const LabelMap commented =
      parse_pgm(bytes_of("P5\n# a comment\n3\n# another\n2 255\n" + payload));
  EXPECT_EQ(plain, commented);
}

TEST(Netpbm, ErrorsCarryByteOffsets) {
  try {
    parse_pgm(bytes_of("P5\n2 2\n255\n\x01\x02\x03"));
    FAIL() << "expected IoError";
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("byte offset 11"), std::string::npos) << e.what();
  }
  try {
    parse_pgm(bytes_of("P5\n2 2\n16\n\x01\x02\x03\x04"));
    FAIL() << "expected IoError";
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("maxval"), std::string::npos) << e.what();
  }
}

Tensor4 constant_map(int h, int w, double v) { return Tensor4(1, 1, h, w, v); }

TEST(WritePgm, Quantisation) {
  TempDir dir("pgm");
  write_pgm(dir.path() / "one.pgm", constant_map(3, 2, 1.0));
  const LabelMap one = read_pgm(dir.path() / "one.pgm");
  for (auto b : one.values()) EXPECT_EQ(b, 255);
  write_pgm(dir.path() / "third.pgm", constant_map(3, 2, 1.0 / 3.0));
  const LabelMap third = read_pgm(dir.path() / "third.pgm");
  for (auto b : third.values()) EXPECT_EQ(b, 85);
  write_pgm(dir.path() / "half.pgm", constant_map(1, 1, 0.5));
  EXPECT_EQ(read_pgm(dir.path() / "half.pgm").at(0, 0), 128);
}

TEST(WritePgm, RoundTripWithinHalfStep) {
  TempDir dir("pgm_rt");
  const Tensor4 map = testing::random_tensor({1, 1, 9, 7}, 4, 0.0, 1.0);
  write_pgm(dir.path() / "m.pgm", map);
  const LabelMap back = read_pgm(dir.path() / "m.pgm");
  for (int y = 0; y < 9; ++y)
    for (int x = 0; x < 7; ++x) EXPECT_LE(std::abs(back.at(y, x) / 255.0 - map.at(0, 0, y, x)), 1.0 / 510);
}

TEST(WritePgm, RejectsOutOfRange) {
  TempDir dir("pgm_bad");
  EXPECT_THROW(write_pgm(dir.path() / "x.pgm", constant_map(1, 2, 1.01)), ValidationError);
  EXPECT_THROW(write_pgm(dir.path() / "x.pgm", constant_map(1, 2, -0.01)), ValidationError);
  EXPECT_THROW(write_pgm(dir.path() / "x.pgm", constant_map(1, 2, std::nan(""))), ValidationError);
  EXPECT_THROW(write_pgm(dir.path() / "x.pgm", Tensor4(1, 2, 2, 2)), ValidationError);
  EXPECT_THROW(write_pgm(dir.path() / "missing" / "x.pgm", constant_map(1, 1, 0.5)), IoError);
}

std::vector<fs::path> fixtures(const std::string& prefix) {
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(fs::path(SCALESEG_FIXTURE_DIR) / "netpbm")) {
    if (e.path().filename().string().rfind(prefix, 0) == 0) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

TEST(NetpbmCorpus, MalformedFilesRejectedWithDiagnostics) {
  const auto bad = fixtures("bad_");
  ASSERT_GE(bad.size(), 10u);
  for (const fs::path& p : bad) {
    try {
      if (p.extension() == ".ppm") {
        read_ppm(p);
      } else {
        read_pgm(p);
      }
      ADD_FAILURE() << p.filename() << " was accepted";
    } catch (const IoError& e) {
      const std::string msg = e.what();
      EXPECT_NE(msg.find(p.filename().string()), std::string::npos) << msg;
      EXPECT_NE(msg.find("byte offset"), std::string::npos) << msg;
    }
  }
}

TEST(NetpbmCorpus, WellFormedFilesRoundTrip) {
  const auto good = fixtures("good_");
  ASSERT_GE(good.size(), 5u);
  TempDir dir("corpus");
  for (const fs::path& p : good) {
    const fs::path out = dir.path() / p.filename();
    if (p.extension() == ".ppm") {
      const Tensor4 img = read_ppm(p);
      write_ppm(out, img);
      const Tensor4 back = read_ppm(out);
      ASSERT_EQ(back.shape(), img.shape()) << p.filename();
      for (std::size_t i = 0; i < img.size(); ++i)
        EXPECT_LE(std::abs(back.raw()[i] - img.raw()[i]), 1.0 / 510) << p.filename();
    } else {
      const LabelMap labels = read_pgm(p);
      write_label_pgm(out, labels);
      EXPECT_EQ(read_pgm(out), labels) << p.filename();
    }
  }
}

TEST(NetpbmCorpus, KnownPayloads) {
  const fs::path dir = fs::path(SCALESEG_FIXTURE_DIR) / "netpbm";
  EXPECT_EQ(read_ppm(dir / "good_1x1_red.ppm").raw(), (std::vector<double>{1.0, 0.0, 0.0}));
  const LabelMap l = read_pgm(dir / "good_comments.pgm");
  EXPECT_EQ(l.h(), 2);
  EXPECT_EQ(l.w(), 3);
  EXPECT_EQ(l.at(1, 1), 255);
}

TEST(DatasetDir, RoundTrip) {
  TempDir dir("dataset");
  const auto samples = synth_generate(small_config()).val;
  write_dataset_dir(dir.path(), samples);
  EXPECT_TRUE(fs::exists(dir.path() / "images" / "0003.ppm"));
  EXPECT_TRUE(fs::exists(dir.path() / "labels" / "0003.pgm"));
  const auto loaded = load_dataset_dir(dir.path());
  ASSERT_EQ(loaded.size(), samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    EXPECT_EQ(loaded[i].labels, samples[i].labels);
    for (std::size_t j = 0; j < samples[i].image.size(); ++j)
      EXPECT_LE(std::abs(loaded[i].image.raw()[j] - samples[i].image.raw()[j]), 1.0 / 510);
  }
}

TEST(DatasetDir, ListingSelectsSamples) {
  TempDir dir("dataset_sel");
  const auto samples = synth_generate(small_config()).val;
  write_dataset_dir(dir.path(), samples);
  std::ofstream(dir.path() / "dataset.txt") << "# subset\n4\n\n1\n";
  const auto loaded = load_dataset_dir(dir.path());
  ASSERT_EQ(loaded.size(), 2u);
  EXPECT_EQ(loaded[0].labels, samples[4].labels);
  EXPECT_EQ(loaded[1].labels, samples[1].labels);
}

TEST(DatasetDir, Failures) {
  TempDir dir("dataset_bad");
  EXPECT_THROW(load_dataset_dir(dir.path()), IoError);
  std::ofstream(dir.path() / "dataset.txt") << "7\n";
  EXPECT_THROW(load_dataset_dir(dir.path()), IoError);
  std::ofstream(dir.path() / "dataset.txt") << "x1\n";
  EXPECT_THROW(load_dataset_dir(dir.path()), IoError);
  std::ofstream(dir.path() / "dataset.txt") << "\n";
  EXPECT_THROW(load_dataset_dir(dir.path()), IoError);
}

}  // namespace
}  // namespace scaleseg
