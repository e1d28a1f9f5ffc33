#include <cstdio>
#include <fstream>
#include <string>

#include "scaleseg/data.hpp"
#include "scaleseg/errors.hpp"

namespace scaleseg {

namespace {

std::string index_name(int index) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%04d", index);
  return buf;
}

}  // namespace

std::vector<Sample> load_dataset_dir(const std::filesystem::path& dir) {
  const auto listing = dir / "dataset.txt";
  std::ifstream in(listing);
  if (!in) throw IoError("cannot open " + listing.string());
  std::vector<Sample> samples;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    const auto last = line.find_last_not_of(" \t\r");
    const std::string token = line.substr(first, last - first + 1);
    int index = 0;
    try {
      std::size_t used = 0;
      index = std::stoi(token, &used);
      if (used != token.size() || index < 0) throw std::invalid_argument(token);
    } catch (const std::exception&) {
      throw IoError(listing.string() + ":" + std::to_string(line_no) +
                    ": expected a non-negative index, got '" + token + "'");
    }
    Sample s;
    s.image = read_ppm(dir / "images" / (index_name(index) + ".ppm"));
    s.labels = read_pgm(dir / "labels" / (index_name(index) + ".pgm"));
    if (s.labels.h() != s.image.h() || s.labels.w() != s.image.w()) {
      throw IoError("sample " + index_name(index) + ": image is " +
                    std::to_string(s.image.h()) + "x" +
                    std::to_string(s.image.w()) + " but labels are " +
                    std::to_string(s.labels.h()) + "x" +
                    std::to_string(s.labels.w()));
    }
    samples.push_back(std::move(s));
  }
  if (samples.empty()) throw IoError(listing.string() + " lists no samples");
  return samples;
}

void write_dataset_dir(const std::filesystem::path& dir,
                       std::span<const Sample> samples) {
  std::error_code ec;
  std::filesystem::create_directories(dir / "images", ec);
  std::filesystem::create_directories(dir / "labels", ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  std::ofstream listing(dir / "dataset.txt");
  if (!listing) throw IoError("cannot write " + (dir / "dataset.txt").string());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const std::string name = index_name(static_cast<int>(i));
    write_ppm(dir / "images" / (name + ".ppm"), samples[i].image);
    write_label_pgm(dir / "labels" / (name + ".pgm"), samples[i].labels);
    listing << name << '\n';
  }
  if (!listing) throw IoError("failed writing " + (dir / "dataset.txt").string());
}

}  // namespace scaleseg
