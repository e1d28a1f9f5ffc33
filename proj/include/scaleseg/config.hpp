#ifndef SCALESEG_CONFIG_HPP_
#define SCALESEG_CONFIG_HPP_

#include <filesystem>
#include <optional>
#include <string_view>

#include "scaleseg/data.hpp"
#include "scaleseg/trainer.hpp"

namespace scaleseg {

// Settings read from a `key = value` file. Training keys mirror TrainConfig,
// dataset keys mirror SynthConfig (its seed is `data_seed`); `data_dir`
// points at an on-disk dataset to train on instead of the synthetic one.
struct RunConfig {
  TrainConfig train;
  SynthConfig synth;
  std::optional<std::filesystem::path> data_dir;
};

// Blank lines and `#` comments are skipped. Unknown keys, duplicate keys and
// unparsable values throw ValidationError naming the offending token.
RunConfig parse_config_text(std::string_view text);
RunConfig parse_config_file(const std::filesystem::path& path);

}  // namespace scaleseg

#endif  // SCALESEG_CONFIG_HPP_
