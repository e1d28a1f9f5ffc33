#ifndef SCALESEG_TENSOR_HPP_
#define SCALESEG_TENSOR_HPP_

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace scaleseg {

struct Shape4 {
  int n = 0;
  int c = 0;
  int h = 0;
  int w = 0;

  std::size_t size() const {
    return static_cast<std::size_t>(n) * c * h * w;
  }
  bool operator==(const Shape4&) const = default;
  std::string str() const;
};

// Dense (n, c, h, w) array of doubles, row-major.
class Tensor4 {
 public:
  Tensor4() = default;
  Tensor4(int n, int c, int h, int w, double fill = 0.0);
  explicit Tensor4(Shape4 shape, double fill = 0.0);
  Tensor4(Shape4 shape, std::vector<double> data);

  const Shape4& shape() const { return shape_; }
  int n() const { return shape_.n; }
  int c() const { return shape_.c; }
  int h() const { return shape_.h; }
  int w() const { return shape_.w; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::size_t index(int n, int c, int y, int x) const {
    return ((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + y) *
               shape_.w + x;
  }
  double& at(int n, int c, int y, int x) { return data_[index(n, c, y, x)]; }
  double at(int n, int c, int y, int x) const {
    return data_[index(n, c, y, x)];
  }

  // Pointer to the start of one (n, c) plane.
  double* plane(int n, int c) { return data_.data() + index(n, c, 0, 0); }
  const double* plane(int n, int c) const {
    return data_.data() + index(n, c, 0, 0);
  }

  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  std::vector<double>& raw() { return data_; }
  const std::vector<double>& raw() const { return data_; }

  void fill(double v);
  Tensor4& operator+=(const Tensor4& other);
  Tensor4& operator*=(double k);

  bool operator==(const Tensor4&) const = default;

 private:
  Shape4 shape_;
  std::vector<double> data_;
};

inline constexpr std::uint8_t kIgnoreLabel = 255;

// Per-pixel class indices; kIgnoreLabel marks pixels excluded from losses
// and metrics.
class LabelMap {
 public:
  LabelMap() = default;
  LabelMap(int h, int w, std::uint8_t fill = 0);
  LabelMap(int h, int w, std::vector<std::uint8_t> data);

  int h() const { return h_; }
  int w() const { return w_; }
  std::size_t size() const { return data_.size(); }
  std::uint8_t& at(int y, int x) { return data_[static_cast<std::size_t>(y) * w_ + x]; }
  std::uint8_t at(int y, int x) const {
    return data_[static_cast<std::size_t>(y) * w_ + x];
  }
  std::span<const std::uint8_t> values() const { return data_; }
  std::vector<std::uint8_t>& raw() { return data_; }
  const std::vector<std::uint8_t>& raw() const { return data_; }

  bool operator==(const LabelMap&) const = default;

 private:
  int h_ = 0;
  int w_ = 0;
  std::vector<std::uint8_t> data_;
};

struct ConvSpec {
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 1;  // odd
  int stride = 1;
  int dilation = 1;
  bool has_relu = false;

  int pad() const { return dilation * (kernel - 1) / 2; }
  int out_extent(int in) const { return (in - 1) / stride + 1; }
  void validate() const;
  bool operator==(const ConvSpec&) const = default;
};

struct ConvGrads {
  Tensor4 input;   // empty unless requested
  Tensor4 kernel;
  std::vector<double> bias;
};

// Zero-padded cross-correlation with implied padding dilation*(k-1)/2.
// kernel is (out_channels, in_channels, k, k).
Tensor4 conv2d(const Tensor4& input, const Tensor4& kernel,
               std::span<const double> bias, const ConvSpec& spec);

ConvGrads conv2d_backward(const Tensor4& input, const Tensor4& kernel,
                          const ConvSpec& spec, const Tensor4& grad_out,
                          bool want_input_grad = true);

Tensor4 relu(const Tensor4& input);
void relu_inplace(Tensor4& t);

// Passes grad where the forward input (or output, equivalently) is > 0.
Tensor4 relu_backward(const Tensor4& forward_input, const Tensor4& grad_out);

// Edge-aligned bilinear resampling: output index j samples source
// coordinate j*(in-1)/(out-1), and 0 for single-pixel outputs.
Tensor4 bilinear_resize(const Tensor4& input, int out_h, int out_w);

// Transpose of bilinear_resize's linear map.
Tensor4 bilinear_resize_backward(const Tensor4& grad_out, int in_h, int in_w);

// Softmax across axis 0 at every (c, y, x), max-shifted.
Tensor4 softmax_over_axis0(const Tensor4& logits);

Tensor4 softmax_over_axis0_backward(const Tensor4& softmax_out,
                                    const Tensor4& grad_out);

// Edge-aligned nearest neighbour: source index round_half_up(j*(in-1)/(out-1)).
LabelMap nearest_downsample(const LabelMap& labels, int out_h, int out_w);

}  // namespace scaleseg

#endif  // SCALESEG_TENSOR_HPP_
