#include "scaleseg/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

#include "scaleseg/errors.hpp"

namespace scaleseg {

std::string Shape4::str() const {
  return "(" + std::to_string(n) + ", " + std::to_string(c) + ", " +
         std::to_string(h) + ", " + std::to_string(w) + ")";
}

Tensor4::Tensor4(int n, int c, int h, int w, double fill)
    : Tensor4(Shape4{n, c, h, w}, fill) {}

Tensor4::Tensor4(Shape4 shape, double fill) : shape_(shape) {
  if (shape.n < 0 || shape.c < 0 || shape.h < 0 || shape.w < 0) {
    throw ValidationError("negative tensor dimension in " + shape.str());
  }
  data_.assign(shape.size(), fill);
}

Tensor4::Tensor4(Shape4 shape, std::vector<double> data)
    : shape_(shape), data_(std::move(data)) {
  if (data_.size() != shape_.size()) {
    throw ValidationError("tensor data length " + std::to_string(data_.size()) +
                          " does not match shape " + shape_.str());
  }
}

void Tensor4::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

Tensor4& Tensor4::operator+=(const Tensor4& other) {
  if (!(other.shape_ == shape_)) {
    throw ValidationError("tensor add: shape " + other.shape_.str() +
                          " vs " + shape_.str());
  }
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

Tensor4& Tensor4::operator*=(double k) {
  for (double& v : data_) v *= k;
  return *this;
}

LabelMap::LabelMap(int h, int w, std::uint8_t fill)
    : h_(h), w_(w), data_(static_cast<std::size_t>(h) * w, fill) {
  if (h < 0 || w < 0) throw ValidationError("negative label map dimension");
}

LabelMap::LabelMap(int h, int w, std::vector<std::uint8_t> data)
    : h_(h), w_(w), data_(std::move(data)) {
  if (data_.size() != static_cast<std::size_t>(h) * w) {
    throw ValidationError("label data length " + std::to_string(data_.size()) +
                          " does not match " + std::to_string(h) + "x" +
                          std::to_string(w));
  }
}

void ConvSpec::validate() const {
  if (in_channels < 1) throw ValidationError("conv in_channels must be >= 1");
  if (out_channels < 1) throw ValidationError("conv out_channels must be >= 1");
  if (kernel < 1 || kernel % 2 == 0) {
    throw ValidationError("conv kernel must be odd, got " +
                          std::to_string(kernel));
  }
  if (stride < 1) throw ValidationError("conv stride must be >= 1");
  if (dilation < 1) throw ValidationError("conv dilation must be >= 1");
}

namespace {

void check_conv_shapes(const Tensor4& input, const Tensor4& kernel,
                       const ConvSpec& spec) {
  spec.validate();
  if (input.c() != spec.in_channels) {
    throw ValidationError("conv2d: input channel dimension " +
                          std::to_string(input.c()) + " != in_channels " +
                          std::to_string(spec.in_channels));
  }
  if (kernel.n() != spec.out_channels) {
    throw ValidationError("conv2d: kernel out-channel dimension " +
                          std::to_string(kernel.n()) + " != out_channels " +
                          std::to_string(spec.out_channels));
  }
  if (kernel.c() != spec.in_channels) {
    throw ValidationError("conv2d: kernel in-channel dimension " +
                          std::to_string(kernel.c()) + " != in_channels " +
                          std::to_string(spec.in_channels));
  }
  if (kernel.h() != spec.kernel || kernel.w() != spec.kernel) {
    throw ValidationError("conv2d: kernel spatial dimension " +
                          std::to_string(kernel.h()) + "x" +
                          std::to_string(kernel.w()) + " != " +
                          std::to_string(spec.kernel));
  }
  if (input.h() < 1 || input.w() < 1) {
    throw ValidationError("conv2d: empty input spatial dimension " +
                          input.shape().str());
  }
}

// Range of output columns whose tap (offset d) lands inside [0, in).
std::pair<int, int> valid_range(int offset, int stride, int in, int out) {
  int lo = 0;
  if (offset < 0) lo = (-offset + stride - 1) / stride;
  int hi = (in - 1 - offset);
  hi = hi < 0 ? -1 : hi / stride;
  hi = std::min(hi, out - 1);
  return {lo, hi};
}

}  // namespace

Tensor4 conv2d(const Tensor4& input, const Tensor4& kernel,
               std::span<const double> bias, const ConvSpec& spec) {
  check_conv_shapes(input, kernel, spec);
  if (bias.size() != static_cast<std::size_t>(spec.out_channels)) {
    throw ValidationError("conv2d: bias length " + std::to_string(bias.size()) +
                          " != out_channels " +
                          std::to_string(spec.out_channels));
  }
  const int in_h = input.h(), in_w = input.w();
  const int out_h = spec.out_extent(in_h), out_w = spec.out_extent(in_w);
  const int k = spec.kernel, stride = spec.stride, pad = spec.pad();
  Tensor4 out(input.n(), spec.out_channels, out_h, out_w);

  for (int n = 0; n < input.n(); ++n) {
    for (int oc = 0; oc < spec.out_channels; ++oc) {
      double* dst = out.plane(n, oc);
      std::fill(dst, dst + static_cast<std::size_t>(out_h) * out_w, bias[oc]);
      for (int ic = 0; ic < spec.in_channels; ++ic) {
        const double* src = input.plane(n, ic);
        for (int ky = 0; ky < k; ++ky) {
          const int dy = ky * spec.dilation - pad;
          const auto [oy_lo, oy_hi] = valid_range(dy, stride, in_h, out_h);
          for (int kx = 0; kx < k; ++kx) {
            const double wv = kernel.at(oc, ic, ky, kx);
            const int dx = kx * spec.dilation - pad;
            const auto [ox_lo, ox_hi] = valid_range(dx, stride, in_w, out_w);
            for (int oy = oy_lo; oy <= oy_hi; ++oy) {
              const double* row = src + static_cast<std::size_t>(oy * stride + dy) * in_w + dx;
              double* orow = dst + static_cast<std::size_t>(oy) * out_w;
              if (stride == 1) {
                for (int ox = ox_lo; ox <= ox_hi; ++ox) orow[ox] += wv * row[ox];
              } else {
                for (int ox = ox_lo; ox <= ox_hi; ++ox) {
                  orow[ox] += wv * row[ox * stride];
                }
              }
            }
          }
        }
      }
    }
  }
  return out;
}

ConvGrads conv2d_backward(const Tensor4& input, const Tensor4& kernel,
                          const ConvSpec& spec, const Tensor4& grad_out,
                          bool want_input_grad) {
  check_conv_shapes(input, kernel, spec);
  const int in_h = input.h(), in_w = input.w();
  const int out_h = spec.out_extent(in_h), out_w = spec.out_extent(in_w);
  const Shape4 expected{input.n(), spec.out_channels, out_h, out_w};
  if (!(grad_out.shape() == expected)) {
    throw ValidationError("conv2d_backward: grad_out shape " +
                          grad_out.shape().str() + " != " + expected.str());
  }
  const int k = spec.kernel, stride = spec.stride, pad = spec.pad();

  ConvGrads g;
  g.kernel = Tensor4(kernel.shape());
  g.bias.assign(spec.out_channels, 0.0);
  if (want_input_grad) g.input = Tensor4(input.shape());

  for (int n = 0; n < input.n(); ++n) {
    for (int oc = 0; oc < spec.out_channels; ++oc) {
      const double* go = grad_out.plane(n, oc);
      double bsum = 0.0;
      for (std::size_t i = 0; i < static_cast<std::size_t>(out_h) * out_w; ++i) {
        bsum += go[i];
      }
      g.bias[oc] += bsum;
      for (int ic = 0; ic < spec.in_channels; ++ic) {
        const double* src = input.plane(n, ic);
        double* gin = want_input_grad ? g.input.plane(n, ic) : nullptr;
        for (int ky = 0; ky < k; ++ky) {
          const int dy = ky * spec.dilation - pad;
          const auto [oy_lo, oy_hi] = valid_range(dy, stride, in_h, out_h);
          for (int kx = 0; kx < k; ++kx) {
            const double wv = kernel.at(oc, ic, ky, kx);
            const int dx = kx * spec.dilation - pad;
            const auto [ox_lo, ox_hi] = valid_range(dx, stride, in_w, out_w);
            double acc = 0.0;
            for (int oy = oy_lo; oy <= oy_hi; ++oy) {
              const std::size_t src_off = static_cast<std::size_t>(oy * stride + dy) * in_w + dx;
              const double* row = src + src_off;
              const double* grow = go + static_cast<std::size_t>(oy) * out_w;
              if (stride == 1) {
                for (int ox = ox_lo; ox <= ox_hi; ++ox) acc += grow[ox] * row[ox];
                if (gin != nullptr) {
                  double* irow = gin + src_off;
                  for (int ox = ox_lo; ox <= ox_hi; ++ox) irow[ox] += wv * grow[ox];
                }
              } else {
                for (int ox = ox_lo; ox <= ox_hi; ++ox) {
                  acc += grow[ox] * row[ox * stride];
                }
                if (gin != nullptr) {
                  double* irow = gin + src_off;
                  for (int ox = ox_lo; ox <= ox_hi; ++ox) {
                    irow[ox * stride] += wv * grow[ox];
                  }
                }
              }
            }
            g.kernel.at(oc, ic, ky, kx) += acc;
          }
        }
      }
    }
  }
  return g;
}

Tensor4 relu(const Tensor4& input) {
  Tensor4 out = input;
  relu_inplace(out);
  return out;
}

void relu_inplace(Tensor4& t) {
  // NaN passes through so divergence stays visible downstream.
  for (double& v : t.values()) v = v < 0.0 || v == 0.0 ? 0.0 : v;
}

Tensor4 relu_backward(const Tensor4& forward_input, const Tensor4& grad_out) {
  if (!(forward_input.shape() == grad_out.shape())) {
    throw ValidationError("relu_backward: shape " + grad_out.shape().str() +
                          " vs " + forward_input.shape().str());
  }
  Tensor4 g(grad_out.shape());
  const auto x = forward_input.values();
  const auto go = grad_out.values();
  auto gi = g.values();
  for (std::size_t i = 0; i < gi.size(); ++i) gi[i] = x[i] > 0.0 ? go[i] : 0.0;
  return g;
}

namespace {

struct Tap {
  int lo;
  int hi;
  double frac;  // weight of hi
};

std::vector<Tap> resize_taps(int in, int out) {
  std::vector<Tap> taps(out);
  for (int j = 0; j < out; ++j) {
    if (out == 1 || in == 1) {
      taps[j] = {0, 0, 0.0};
      continue;
    }
    const double src = static_cast<double>(j) * (in - 1) / (out - 1);
    int lo = static_cast<int>(std::floor(src));
    lo = std::clamp(lo, 0, in - 1);
    const int hi = std::min(lo + 1, in - 1);
    taps[j] = {lo, hi, src - lo};
  }
  return taps;
}

}  // namespace

Tensor4 bilinear_resize(const Tensor4& input, int out_h, int out_w) {
  if (out_h < 1 || out_w < 1) {
    throw ValidationError("bilinear_resize: output size " +
                          std::to_string(out_h) + "x" + std::to_string(out_w) +
                          " must be >= 1");
  }
  if (input.h() == out_h && input.w() == out_w) return input;
  const auto ty = resize_taps(input.h(), out_h);
  const auto tx = resize_taps(input.w(), out_w);
  Tensor4 out(input.n(), input.c(), out_h, out_w);
  for (int n = 0; n < input.n(); ++n) {
    for (int c = 0; c < input.c(); ++c) {
      const double* src = input.plane(n, c);
      double* dst = out.plane(n, c);
      for (int y = 0; y < out_h; ++y) {
        const Tap& a = ty[y];
        const double* r0 = src + static_cast<std::size_t>(a.lo) * input.w();
        const double* r1 = src + static_cast<std::size_t>(a.hi) * input.w();
        for (int x = 0; x < out_w; ++x) {
          const Tap& b = tx[x];
          const double top = (1.0 - b.frac) * r0[b.lo] + b.frac * r0[b.hi];
          const double bot = (1.0 - b.frac) * r1[b.lo] + b.frac * r1[b.hi];
          dst[static_cast<std::size_t>(y) * out_w + x] =
              (1.0 - a.frac) * top + a.frac * bot;
        }
      }
    }
  }
  return out;
}

Tensor4 bilinear_resize_backward(const Tensor4& grad_out, int in_h, int in_w) {
  if (in_h < 1 || in_w < 1) {
    throw ValidationError("bilinear_resize_backward: input size must be >= 1");
  }
  if (grad_out.h() == in_h && grad_out.w() == in_w) return grad_out;
  const int out_h = grad_out.h(), out_w = grad_out.w();
  const auto ty = resize_taps(in_h, out_h);
  const auto tx = resize_taps(in_w, out_w);
  Tensor4 g(grad_out.n(), grad_out.c(), in_h, in_w);
  for (int n = 0; n < grad_out.n(); ++n) {
    for (int c = 0; c < grad_out.c(); ++c) {
      const double* go = grad_out.plane(n, c);
      double* gi = g.plane(n, c);
      for (int y = 0; y < out_h; ++y) {
        const Tap& a = ty[y];
        double* r0 = gi + static_cast<std::size_t>(a.lo) * in_w;
        double* r1 = gi + static_cast<std::size_t>(a.hi) * in_w;
        for (int x = 0; x < out_w; ++x) {
          const Tap& b = tx[x];
          const double v = go[static_cast<std::size_t>(y) * out_w + x];
          const double top = (1.0 - a.frac) * v;
          const double bot = a.frac * v;
          r0[b.lo] += (1.0 - b.frac) * top;
          r0[b.hi] += b.frac * top;
          r1[b.lo] += (1.0 - b.frac) * bot;
          r1[b.hi] += b.frac * bot;
        }
      }
    }
  }
  return g;
}

Tensor4 softmax_over_axis0(const Tensor4& logits) {
  if (logits.n() < 1) {
    throw ValidationError("softmax_over_axis0: need at least one entry on axis 0");
  }
  const int S = logits.n();
  const std::size_t plane = static_cast<std::size_t>(logits.c()) * logits.h() * logits.w();
  Tensor4 out(logits.shape());
  const auto in = logits.values();
  auto o = out.values();
  for (std::size_t i = 0; i < plane; ++i) {
    double m = in[i];
    for (int s = 1; s < S; ++s) m = std::max(m, in[s * plane + i]);
    double sum = 0.0;
    for (int s = 0; s < S; ++s) {
      const double e = std::exp(in[s * plane + i] - m);
      o[s * plane + i] = e;
      sum += e;
    }
    for (int s = 0; s < S; ++s) o[s * plane + i] /= sum;
  }
  return out;
}

Tensor4 softmax_over_axis0_backward(const Tensor4& softmax_out,
                                    const Tensor4& grad_out) {
  if (!(softmax_out.shape() == grad_out.shape())) {
    throw ValidationError("softmax_over_axis0_backward: shape " +
                          grad_out.shape().str() + " vs " +
                          softmax_out.shape().str());
  }
  const int S = softmax_out.n();
  const std::size_t plane = static_cast<std::size_t>(softmax_out.c()) *
                            softmax_out.h() * softmax_out.w();
  Tensor4 g(softmax_out.shape());
  const auto y = softmax_out.values();
  const auto go = grad_out.values();
  auto gi = g.values();
  for (std::size_t i = 0; i < plane; ++i) {
    double dot = 0.0;
    for (int s = 0; s < S; ++s) dot += y[s * plane + i] * go[s * plane + i];
    for (int s = 0; s < S; ++s) {
      gi[s * plane + i] = y[s * plane + i] * (go[s * plane + i] - dot);
    }
  }
  return g;
}

namespace {

// round_half_up(j * (in - 1) / (out - 1)) in exact integer arithmetic.
int nearest_source(int j, int in, int out) {
  if (out == 1) return 0;
  const long long num = 2LL * j * (in - 1) + (out - 1);
  return static_cast<int>(num / (2LL * (out - 1)));
}

}  // namespace

LabelMap nearest_downsample(const LabelMap& labels, int out_h, int out_w) {
  if (out_h < 1 || out_w < 1) {
    throw ValidationError("nearest_downsample: output size must be >= 1");
  }
  if (out_h > labels.h() || out_w > labels.w()) {
    throw ValidationError("nearest_downsample: output " + std::to_string(out_h) +
                          "x" + std::to_string(out_w) + " exceeds input " +
                          std::to_string(labels.h()) + "x" +
                          std::to_string(labels.w()));
  }
  LabelMap out(out_h, out_w);
  for (int y = 0; y < out_h; ++y) {
    const int sy = nearest_source(y, labels.h(), out_h);
    for (int x = 0; x < out_w; ++x) {
      out.at(y, x) = labels.at(sy, nearest_source(x, labels.w(), out_w));
    }
  }
  return out;
}

}  // namespace scaleseg
