#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>
#include <string>

#include "scaleseg/data.hpp"
#include "scaleseg/errors.hpp"

namespace scaleseg {

namespace {

struct Header {
  int width = 0;
  int height = 0;
  std::size_t payload_offset = 0;
};

class HeaderReader {
 public:
  explicit HeaderReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  [[noreturn]] void fail(const std::string& what, std::size_t offset) const {
    throw IoError("netpbm: " + what + " at byte offset " + std::to_string(offset));
  }

  void expect_magic(char kind) {
    if (bytes_.size() < 2) fail("file too short for magic number", bytes_.size());
    if (bytes_[0] != 'P' || bytes_[1] != static_cast<std::uint8_t>(kind)) {
      fail(std::string("bad magic number, expected P") + kind, 0);
    }
    pos_ = 2;
  }

  int read_field(const char* name) {
    // At least one whitespace (or a comment) separates fields.
    const std::size_t start = pos_;
    skip_whitespace_and_comments();
    if (pos_ == start) fail(std::string("missing whitespace before ") + name, pos_);
    if (pos_ >= bytes_.size()) fail(std::string("truncated header, missing ") + name, pos_);
    if (!std::isdigit(bytes_[pos_])) {
      fail(std::string("expected decimal ") + name, pos_);
    }
    const std::size_t field_start = pos_;
    long long value = 0;
    while (pos_ < bytes_.size() && std::isdigit(bytes_[pos_])) {
      value = value * 10 + (bytes_[pos_] - '0');
      if (value > 1'000'000) fail(std::string(name) + " is too large", field_start);
      ++pos_;
    }
    return static_cast<int>(value);
  }

  Header read(char kind) {
    expect_magic(kind);
    Header h;
    h.width = read_field("width");
    const std::size_t height_at = pos_;
    h.height = read_field("height");
    const std::size_t maxval_at = pos_;
    const int maxval = read_field("maxval");
    if (h.width < 1) fail("width must be >= 1", 2);
    if (h.height < 1) fail("height must be >= 1", height_at);
    if (maxval != 255) {
      fail("maxval " + std::to_string(maxval) + " is not 255", maxval_at);
    }
    if (pos_ >= bytes_.size() || !std::isspace(bytes_[pos_])) {
      fail("expected single whitespace after maxval", pos_);
    }
    h.payload_offset = pos_ + 1;
    return h;
  }

 private:
  void skip_whitespace_and_comments() {
    while (pos_ < bytes_.size()) {
      if (std::isspace(bytes_[pos_])) {
        ++pos_;
      } else if (bytes_[pos_] == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else {
        break;
      }
    }
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

std::span<const std::uint8_t> payload(std::span<const std::uint8_t> bytes,
                                      const Header& h, int channels) {
  const std::size_t need = static_cast<std::size_t>(h.width) * h.height * channels;
  const std::size_t have = bytes.size() - h.payload_offset;
  if (have < need) {
    throw IoError("netpbm: truncated payload, expected " + std::to_string(need) +
                  " bytes from byte offset " + std::to_string(h.payload_offset) +
                  ", file ends at byte offset " + std::to_string(bytes.size()));
  }
  if (have > need) {
    throw IoError("netpbm: unexpected trailing data at byte offset " +
                  std::to_string(h.payload_offset + need));
  }
  return bytes.subspan(h.payload_offset, need);
}

std::uint8_t quantize(double v, std::size_t index) {
  constexpr double kSlack = 1e-9;
  if (!(v >= -kSlack && v <= 1.0 + kSlack)) {
    throw ValidationError("value " + std::to_string(v) + " at element " +
                          std::to_string(index) + " is outside [0, 1]");
  }
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

void write_bytes(const std::filesystem::path& path, const std::string& header,
                 const std::vector<std::uint8_t>& body) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  out.write(reinterpret_cast<const char*>(body.data()),
            static_cast<std::streamsize>(body.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

std::string header_for(char kind, int w, int h) {
  return std::string("P") + kind + "\n" + std::to_string(w) + " " +
         std::to_string(h) + "\n255\n";
}

}  // namespace

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Tensor4 parse_ppm(std::span<const std::uint8_t> bytes) {
  const Header h = HeaderReader(bytes).read('6');
  const auto body = payload(bytes, h, 3);
  Tensor4 image(1, 3, h.height, h.width);
  std::size_t i = 0;
  for (int y = 0; y < h.height; ++y) {
    for (int x = 0; x < h.width; ++x) {
      for (int c = 0; c < 3; ++c) image.at(0, c, y, x) = body[i++] / 255.0;
    }
  }
  return image;
}

LabelMap parse_pgm(std::span<const std::uint8_t> bytes) {
  const Header h = HeaderReader(bytes).read('5');
  const auto body = payload(bytes, h, 1);
  return LabelMap(h.height, h.width, std::vector<std::uint8_t>(body.begin(), body.end()));
}

Tensor4 read_ppm(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  try {
    return parse_ppm(bytes);
  } catch (const IoError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

LabelMap read_pgm(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  try {
    return parse_pgm(bytes);
  } catch (const IoError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

void write_ppm(const std::filesystem::path& path, const Tensor4& image) {
  if (image.n() != 1 || image.c() != 3) {
    throw ValidationError("write_ppm: image must be (1, 3, h, w), got " +
                          image.shape().str());
  }
  std::vector<std::uint8_t> body;
  body.reserve(image.size());
  for (int y = 0; y < image.h(); ++y) {
    for (int x = 0; x < image.w(); ++x) {
      for (int c = 0; c < 3; ++c) {
        body.push_back(quantize(image.at(0, c, y, x), image.index(0, c, y, x)));
      }
    }
  }
  write_bytes(path, header_for('6', image.w(), image.h()), body);
}

void write_pgm(const std::filesystem::path& path, const Tensor4& map) {
  if (map.n() != 1 || map.c() != 1) {
    throw ValidationError("write_pgm: map must be (1, 1, h, w), got " +
                          map.shape().str());
  }
  std::vector<std::uint8_t> body;
  body.reserve(map.size());
  const auto v = map.values();
  for (std::size_t i = 0; i < v.size(); ++i) body.push_back(quantize(v[i], i));
  write_bytes(path, header_for('5', map.w(), map.h()), body);
}

void write_label_pgm(const std::filesystem::path& path, const LabelMap& labels) {
  const auto v = labels.values();
  write_bytes(path, header_for('5', labels.w(), labels.h()),
              std::vector<std::uint8_t>(v.begin(), v.end()));
}

}  // namespace scaleseg
