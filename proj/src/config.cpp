#include "scaleseg/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>

#include "scaleseg/errors.hpp"

namespace scaleseg {

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

[[noreturn]] void bad_value(const std::string& key, std::string_view value,
                            const char* expected) {
  throw ValidationError("config key '" + key + "': cannot parse '" +
                        std::string(value) + "' as " + expected);
}

template <typename T>
T parse_number(const std::string& key, std::string_view v) {
  T out{};
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size()) {
    bad_value(key, v, std::is_floating_point_v<T> ? "a number" : "an integer");
  }
  return out;
}

bool parse_bool(const std::string& key, std::string_view v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  bad_value(key, v, "a boolean");
}

std::vector<double> parse_list(const std::string& key, std::string_view v) {
  std::vector<double> out;
  while (true) {
    const auto comma = v.find(',');
    out.push_back(parse_number<double>(key, trim(v.substr(0, comma))));
    if (comma == std::string_view::npos) break;
    v = v.substr(comma + 1);
  }
  return out;
}

using Setter = std::function<void(RunConfig&, const std::string&, std::string_view)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"base_lr", [](RunConfig& c, const std::string& k, std::string_view v) {
         c.train.base_lr = parse_number<double>(k, v); }},
      {"lr_step_iters", [](RunConfig& c, const std::string& k, std::string_view v) {
         c.train.lr_step_iters = parse_number<std::int64_t>(k, v); }},
      {"lr_gamma", [](RunConfig& c, const std::string& k, std::string_view v) {
         c.train.lr_gamma = parse_number<double>(k, v); }},
      {"momentum", [](RunConfig& c, const std::string& k, std::string_view v) {
         c.train.momentum = parse_number<double>(k, v); }},
      {"weight_decay", [](RunConfig& c, const std::string& k, std::string_view v) {
         c.train.weight_decay = parse_number<double>(k, v); }},
      {"batch_size", [](RunConfig& c, const std::string& k, std::string_view v) {
         c.train.batch_size = parse_number<int>(k, v); }},
      {"max_iters", [](RunConfig& c, const std::string& k, std::string_view v) {
         c.train.max_iters = parse_number<std::int64_t>(k, v); }},
      {"seed", [](RunConfig& c, const std::string& k, std::string_view v) {
         c.train.seed = parse_number<std::uint64_t>(k, v); }},
      {"scales", [](RunConfig& c, const std::string& k, std::string_view v) {
         c.train.scales = parse_list(k, v); }},
      {"merge_mode", [](RunConfig& c, const std::string&, std::string_view v) {
         c.train.merge_mode = parse_merge_mode(v); }},
      {"extra_supervision", [](RunConfig& c, const std::string& k, std::string_view v) {
         c.train.extra_supervision = parse_bool(k, v); }},
      {"image_size", [](RunConfig& c, const std::string& k, std::string_view v) {
         c.synth.image_size = parse_number<int>(k, v); }},
      {"num_classes", [](RunConfig& c, const std::string& k, std::string_view v) {
         c.synth.num_classes = parse_number<int>(k, v); }},
      {"min_objects", [](RunConfig& c, const std::string& k, std::string_view v) {
         c.synth.min_objects = parse_number<int>(k, v); }},
      {"max_objects", [](RunConfig& c, const std::string& k, std::string_view v) {
         c.synth.max_objects = parse_number<int>(k, v); }},
      {"small_radius_min", [](RunConfig& c, const std::string& k, std::string_view v) {
         c.synth.small_radius_min = parse_number<double>(k, v); }},
      {"small_radius_max", [](RunConfig& c, const std::string& k, std::string_view v) {
         c.synth.small_radius_max = parse_number<double>(k, v); }},
      {"large_radius_min", [](RunConfig& c, const std::string& k, std::string_view v) {
         c.synth.large_radius_min = parse_number<double>(k, v); }},
      {"large_radius_max", [](RunConfig& c, const std::string& k, std::string_view v) {
         c.synth.large_radius_max = parse_number<double>(k, v); }},
      {"data_seed", [](RunConfig& c, const std::string& k, std::string_view v) {
         c.synth.seed = parse_number<std::uint64_t>(k, v); }},
      {"train_count", [](RunConfig& c, const std::string& k, std::string_view v) {
         c.synth.train_count = parse_number<int>(k, v); }},
      {"val_count", [](RunConfig& c, const std::string& k, std::string_view v) {
         c.synth.val_count = parse_number<int>(k, v); }},
      {"one_small_one_large", [](RunConfig& c, const std::string& k, std::string_view v) {
         c.synth.one_small_one_large = parse_bool(k, v); }},
      {"data_dir", [](RunConfig& c, const std::string&, std::string_view v) {
         c.data_dir = std::filesystem::path(std::string(v)); }},
  };
  return table;
}

}  // namespace

RunConfig parse_config_text(std::string_view text) {
  RunConfig config;
  std::set<std::string> seen;
  int line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) {
      line = line.substr(0, hash);
    }
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ValidationError("config line " + std::to_string(line_no) +
                            ": expected 'key = value', got '" + std::string(line) + "'");
    }
    const std::string key(trim(line.substr(0, eq)));
    const std::string_view value = trim(line.substr(eq + 1));
    const auto it = setters().find(key);
    if (it == setters().end()) {
      throw ValidationError("config line " + std::to_string(line_no) +
                            ": unknown key '" + key + "'");
    }
    if (!seen.insert(key).second) {
      throw ValidationError("config line " + std::to_string(line_no) +
                            ": duplicate key '" + key + "'");
    }
    if (value.empty()) {
      throw ValidationError("config line " + std::to_string(line_no) + ": key '" +
                            key + "' has no value");
    }
    it->second(config, key, value);
  }
  config.train.validate();
  config.synth.validate();
  return config;
}

RunConfig parse_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str());
}

}  // namespace scaleseg
