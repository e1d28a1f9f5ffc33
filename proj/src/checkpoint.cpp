#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include <zlib.h>

#include "scaleseg/errors.hpp"
#include "scaleseg/trainer.hpp"

namespace scaleseg {

namespace {

constexpr char kMagic[4] = {'S', 'A', 'S', 'G'};
constexpr std::uint32_t kMaxLayers = 64;
constexpr std::uint32_t kMaxScales = 16;
constexpr std::uint32_t kMaxDim = 1u << 16;

std::uint32_t crc_of(std::span<const std::uint8_t> bytes) {
  return static_cast<std::uint32_t>(
      crc32(crc32(0L, Z_NULL, 0), bytes.data(), static_cast<uInt>(bytes.size())));
}

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void i64(std::int64_t v) { u64(static_cast<std::uint64_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

  void tensor(const Shape4& s, std::span<const double> values) {
    u32(static_cast<std::uint32_t>(s.n));
    u32(static_cast<std::uint32_t>(s.c));
    u32(static_cast<std::uint32_t>(s.h));
    u32(static_cast<std::uint32_t>(s.w));
    for (double v : values) f64(v);
  }

  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  void need(std::size_t n, const std::string& field) const {
    if (bytes_.size() - pos_ < n) {
      throw IoError("checkpoint truncated reading " + field + " at byte offset " +
                    std::to_string(pos_) + " (need " + std::to_string(n) +
                    " bytes, " + std::to_string(bytes_.size() - pos_) + " left)");
    }
  }
  std::uint8_t u8(const std::string& field) {
    need(1, field);
    return bytes_[pos_++];
  }
  std::uint32_t u32(const std::string& field) {
    need(4, field);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_++]) << (8 * i);
    return v;
  }
  std::uint64_t u64(const std::string& field) {
    need(8, field);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_++]) << (8 * i);
    return v;
  }
  std::int64_t i64(const std::string& field) {
    return static_cast<std::int64_t>(u64(field));
  }
  double f64(const std::string& field) { return std::bit_cast<double>(u64(field)); }

  std::uint32_t bounded(const std::string& field, std::uint32_t max) {
    const std::size_t at = pos_;
    const std::uint32_t v = u32(field);
    if (v > max) {
      throw IoError("checkpoint field " + field + " = " + std::to_string(v) +
                    " exceeds " + std::to_string(max) + " at byte offset " +
                    std::to_string(at));
    }
    return v;
  }

  Tensor4 tensor(const std::string& field) {
    Shape4 s;
    s.n = static_cast<int>(bounded(field + ".n", kMaxDim));
    s.c = static_cast<int>(bounded(field + ".c", kMaxDim));
    s.h = static_cast<int>(bounded(field + ".h", kMaxDim));
    s.w = static_cast<int>(bounded(field + ".w", kMaxDim));
    // Check the payload is present before allocating it.
    const std::size_t count = s.size();
    if (count > (bytes_.size() - pos_) / 8) need(count * 8, field + " data");
    std::vector<double> data(count);
    for (double& v : data) v = f64(field);
    return Tensor4(s, std::move(data));
  }

  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

void write_spec(Writer& w, const Layer& layer) {
  const ConvSpec& s = layer.spec;
  w.u32(static_cast<std::uint32_t>(s.in_channels));
  w.u32(static_cast<std::uint32_t>(s.out_channels));
  w.u32(static_cast<std::uint32_t>(s.kernel));
  w.u32(static_cast<std::uint32_t>(s.stride));
  w.u32(static_cast<std::uint32_t>(s.dilation));
  w.u8(s.has_relu ? 1 : 0);
  w.f64(layer.lr_multiplier);
}

Layer read_spec(Reader& r, const std::string& field) {
  Layer layer;
  ConvSpec& s = layer.spec;
  s.in_channels = static_cast<int>(r.bounded(field + ".in_channels", kMaxDim));
  s.out_channels = static_cast<int>(r.bounded(field + ".out_channels", kMaxDim));
  s.kernel = static_cast<int>(r.bounded(field + ".kernel", kMaxDim));
  s.stride = static_cast<int>(r.bounded(field + ".stride", kMaxDim));
  s.dilation = static_cast<int>(r.bounded(field + ".dilation", kMaxDim));
  const std::uint8_t relu = r.u8(field + ".has_relu");
  if (relu > 1) throw IoError("checkpoint field " + field + ".has_relu is not 0/1");
  s.has_relu = relu == 1;
  layer.lr_multiplier = r.f64(field + ".lr_multiplier");
  return layer;
}

void write_layer_tensors(Writer& w, const std::vector<Layer>& layers) {
  for (const Layer& l : layers) {
    w.tensor(l.kernel.shape(), l.kernel.values());
    w.tensor(Shape4{1, static_cast<int>(l.bias.size()), 1, 1}, l.bias);
  }
}

void write_grad_tensors(Writer& w, const std::vector<LayerGrad>& layers) {
  for (const LayerGrad& l : layers) {
    w.tensor(l.kernel.shape(), l.kernel.values());
    w.tensor(Shape4{1, static_cast<int>(l.bias.size()), 1, 1}, l.bias);
  }
}

void expect_shape(const Tensor4& t, const Shape4& expected, const std::string& field) {
  if (!(t.shape() == expected)) {
    throw ValidationError("checkpoint " + field + " has shape " + t.shape().str() +
                          " but the stored configuration implies " + expected.str());
  }
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const NetworkParams& params,
                                            const OptimizerState& state,
                                            const TrainConfig& config) {
  Writer w;
  w.bytes(kMagic, 4);
  w.u32(kCheckpointVersion);

  w.f64(config.base_lr);
  w.i64(config.lr_step_iters);
  w.f64(config.lr_gamma);
  w.f64(config.momentum);
  w.f64(config.weight_decay);
  w.u32(static_cast<std::uint32_t>(config.batch_size));
  w.i64(config.max_iters);
  w.u64(config.seed);
  w.u32(static_cast<std::uint32_t>(config.scales.size()));
  for (double s : config.scales) w.f64(s);
  w.u8(static_cast<std::uint8_t>(config.merge_mode));
  w.u8(config.extra_supervision ? 1 : 0);

  w.u32(static_cast<std::uint32_t>(params.num_classes));
  w.i64(state.iteration);
  w.u32(static_cast<std::uint32_t>(params.trunk.size()));
  w.u32(static_cast<std::uint32_t>(params.attention.size()));
  for (const Layer& l : params.trunk) write_spec(w, l);
  for (const Layer& l : params.attention) write_spec(w, l);
  write_layer_tensors(w, params.trunk);
  write_layer_tensors(w, params.attention);
  write_grad_tensors(w, state.velocity.trunk);
  write_grad_tensors(w, state.velocity.attention);
  std::vector<std::uint8_t> bytes = w.take();
  const std::uint32_t crc = crc_of(bytes);
  for (int i = 0; i < 4; ++i) bytes.push_back(static_cast<std::uint8_t>(crc >> (8 * i)));
  return bytes;
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  r.need(4, "magic");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw IoError("not a checkpoint: bad magic bytes at byte offset 0");
  }
  for (int i = 0; i < 4; ++i) r.u8("magic");
  const std::uint32_t version = r.u32("version");
  if (version != kCheckpointVersion) {
    throw IoError("unsupported checkpoint version " + std::to_string(version) +
                  " (expected " + std::to_string(kCheckpointVersion) + ")");
  }

  Checkpoint ck;
  TrainConfig& c = ck.config;
  c.base_lr = r.f64("config.base_lr");
  c.lr_step_iters = r.i64("config.lr_step_iters");
  c.lr_gamma = r.f64("config.lr_gamma");
  c.momentum = r.f64("config.momentum");
  c.weight_decay = r.f64("config.weight_decay");
  c.batch_size = static_cast<int>(r.bounded("config.batch_size", 1u << 20));
  c.max_iters = r.i64("config.max_iters");
  c.seed = r.u64("config.seed");
  const std::uint32_t num_scales = r.bounded("config.scales.count", kMaxScales);
  c.scales.resize(num_scales);
  for (std::uint32_t i = 0; i < num_scales; ++i) {
    c.scales[i] = r.f64("config.scales[" + std::to_string(i) + "]");
  }
  const std::uint8_t mode = r.u8("config.merge_mode");
  if (mode > static_cast<std::uint8_t>(MergeMode::kMax)) {
    throw IoError("checkpoint field config.merge_mode has unknown value " +
                  std::to_string(mode));
  }
  c.merge_mode = static_cast<MergeMode>(mode);
  const std::uint8_t extra = r.u8("config.extra_supervision");
  if (extra > 1) throw IoError("checkpoint field config.extra_supervision is not 0/1");
  c.extra_supervision = extra == 1;
  c.validate();

  NetworkParams& p = ck.params;
  p.num_classes = static_cast<int>(r.bounded("num_classes", 255));
  p.scales = c.scales;
  ck.state.iteration = r.i64("iteration");
  if (ck.state.iteration < 0) throw IoError("checkpoint iteration is negative");
  const std::uint32_t trunk_count = r.bounded("trunk.count", kMaxLayers);
  const std::uint32_t attention_count = r.bounded("attention.count", kMaxLayers);
  for (std::uint32_t i = 0; i < trunk_count; ++i) {
    p.trunk.push_back(read_spec(r, "trunk[" + std::to_string(i) + "]"));
  }
  for (std::uint32_t i = 0; i < attention_count; ++i) {
    p.attention.push_back(read_spec(r, "attention[" + std::to_string(i) + "]"));
  }

  auto read_layers = [&](std::vector<Layer>& layers, const std::string& table) {
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const std::string f = table + "[" + std::to_string(i) + "]";
      const ConvSpec& s = layers[i].spec;
      layers[i].kernel = r.tensor(f + ".kernel");
      expect_shape(layers[i].kernel,
                   Shape4{s.out_channels, s.in_channels, s.kernel, s.kernel},
                   f + ".kernel");
      const Tensor4 bias = r.tensor(f + ".bias");
      expect_shape(bias, Shape4{1, s.out_channels, 1, 1}, f + ".bias");
      layers[i].bias = bias.raw();
    }
  };
  read_layers(p.trunk, "trunk");
  read_layers(p.attention, "attention");
  p.validate();
  if (c.merge_mode == MergeMode::kAttention && !p.has_attention()) {
    throw ValidationError("checkpoint config requests attention merging but "
                          "stores no attention head");
  }

  ck.state.velocity = ParamGrads::zeros_like(p);
  auto read_velocity = [&](std::vector<LayerGrad>& grads,
                           const std::vector<Layer>& layers, const std::string& table) {
    for (std::size_t i = 0; i < grads.size(); ++i) {
      const std::string f = "velocity." + table + "[" + std::to_string(i) + "]";
      grads[i].kernel = r.tensor(f + ".kernel");
      expect_shape(grads[i].kernel, layers[i].kernel.shape(), f + ".kernel");
      const Tensor4 bias = r.tensor(f + ".bias");
      expect_shape(bias, Shape4{1, static_cast<int>(layers[i].bias.size()), 1, 1},
                   f + ".bias");
      grads[i].bias = bias.raw();
    }
  };
  read_velocity(ck.state.velocity.trunk, p.trunk, "trunk");
  read_velocity(ck.state.velocity.attention, p.attention, "attention");

  const std::size_t body = r.pos();
  const std::uint32_t stored = r.u32("checksum");
  if (r.remaining() != 0) {
    throw IoError("checkpoint has " + std::to_string(r.remaining()) +
                  " unexpected trailing bytes at byte offset " +
                  std::to_string(r.pos()));
  }
  if (stored != crc_of(bytes.first(body))) {
    throw IoError("checkpoint checksum mismatch over bytes 0.." + std::to_string(body));
  }
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const NetworkParams& params,
                     const OptimizerState& state, const TrainConfig& config) {
  const std::vector<std::uint8_t> bytes = encode_checkpoint(params, state, config);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                        std::istreambuf_iterator<char>());
  try {
    return decode_checkpoint(bytes);
  } catch (const IoError& e) {
    throw IoError(path.string() + ": " + e.what());
  } catch (const ValidationError& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

}  // namespace scaleseg
