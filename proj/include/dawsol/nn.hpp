// Minimal dense/conv layers with explicit forward caches and backward passes,
// plus SGD with momentum. Feature maps are stored channels x positions
// (row-major spatial flattening), matching the pixel-domain layout used
// everywhere else in the library.
#pragma once

#include <cmath>
#include <vector>

#include "dawsol/rng.hpp"
#include "dawsol/types.hpp"

namespace dawsol {

struct SgdParams {
  double learning_rate = 0.01;
  double momentum = 0.9;
  double weight_decay = 1e-4;
};

// One learnable tensor with gradient accumulator and momentum buffer.
struct Param {
  Matrix value;
  Matrix grad;
  Matrix velocity;

  void init(int rows, int cols) {
    value = Matrix::Zero(rows, cols);
    grad = Matrix::Zero(rows, cols);
    velocity = Matrix::Zero(rows, cols);
  }

  void zero_grad() { grad.setZero(); }

  void sgd_step(const SgdParams& p, bool decay = true) {
    Matrix g = grad;
    if (decay && p.weight_decay > 0) g += p.weight_decay * value;
    velocity = p.momentum * velocity + g;
    value -= p.learning_rate * velocity;
  }
};

// 3x3 convolution, padding 1, configurable stride, fused ReLU.
class ConvRelu {
 public:
  ConvRelu() = default;
  ConvRelu(int in_ch, int out_ch, int stride, Rng& rng)
      : in_ch_(in_ch), out_ch_(out_ch), stride_(stride) {
    weight_.init(out_ch, in_ch * 9);
    bias_.init(out_ch, 1);
    const double std = std::sqrt(2.0 / (in_ch * 9));
    for (int r = 0; r < weight_.value.rows(); ++r)
      for (int c = 0; c < weight_.value.cols(); ++c)
        weight_.value(r, c) = rng.normal(0.0, std);
  }

  int in_channels() const { return in_ch_; }
  int out_channels() const { return out_ch_; }
  int stride() const { return stride_; }

  static int out_extent(int in, int stride) { return (in + stride - 1) / stride; }

  struct Cache {
    Matrix cols;   // (in_ch*9) x (ho*wo)
    Matrix preact; // out_ch x (ho*wo), before ReLU
    int h = 0, w = 0, ho = 0, wo = 0;
  };

  // input: in_ch x (h*w)
  Matrix forward(const Matrix& input, int h, int w, Cache& cache) const {
    const int ho = out_extent(h, stride_);
    const int wo = out_extent(w, stride_);
    cache.h = h;
    cache.w = w;
    cache.ho = ho;
    cache.wo = wo;
    cache.cols = Matrix::Zero(in_ch_ * 9, ho * wo);
    for (int oy = 0; oy < ho; ++oy) {
      for (int ox = 0; ox < wo; ++ox) {
        const int col = oy * wo + ox;
        for (int ky = 0; ky < 3; ++ky) {
          const int iy = oy * stride_ - 1 + ky;
          if (iy < 0 || iy >= h) continue;
          for (int kx = 0; kx < 3; ++kx) {
            const int ix = ox * stride_ - 1 + kx;
            if (ix < 0 || ix >= w) continue;
            const int pix = iy * w + ix;
            const int roff = (ky * 3 + kx) * in_ch_;
            cache.cols.block(roff, col, in_ch_, 1) = input.col(pix);
          }
        }
      }
    }
    cache.preact = weight_.value * cache.cols;
    cache.preact.colwise() += bias_.value.col(0);
    return cache.preact.cwiseMax(0.0);
  }

  // d_out: out_ch x (ho*wo); returns gradient wrt the layer input and
  // accumulates parameter gradients.
  Matrix backward(const Matrix& d_out, const Cache& cache) {
    Matrix d_pre = (cache.preact.array() > 0.0).select(d_out, Matrix::Zero(d_out.rows(), d_out.cols()));
    weight_.grad.noalias() += d_pre * cache.cols.transpose();
    bias_.grad.col(0) += d_pre.rowwise().sum();
    Matrix d_cols = weight_.value.transpose() * d_pre;
    Matrix d_in = Matrix::Zero(in_ch_, cache.h * cache.w);
    for (int oy = 0; oy < cache.ho; ++oy) {
      for (int ox = 0; ox < cache.wo; ++ox) {
        const int col = oy * cache.wo + ox;
        for (int ky = 0; ky < 3; ++ky) {
          const int iy = oy * stride_ - 1 + ky;
          if (iy < 0 || iy >= cache.h) continue;
          for (int kx = 0; kx < 3; ++kx) {
            const int ix = ox * stride_ - 1 + kx;
            if (ix < 0 || ix >= cache.w) continue;
            const int pix = iy * cache.w + ix;
            const int roff = (ky * 3 + kx) * in_ch_;
            d_in.col(pix) += d_cols.block(roff, col, in_ch_, 1);
          }
        }
      }
    }
    return d_in;
  }

  Param& weight() { return weight_; }
  Param& bias() { return bias_; }
  const Param& weight() const { return weight_; }
  const Param& bias() const { return bias_; }

 private:
  int in_ch_ = 0, out_ch_ = 0, stride_ = 1;
  Param weight_;
  Param bias_;
};

// Affine map applied column-wise: out = W * in + b per column.
class Linear {
 public:
  Linear() = default;
  Linear(int in_dim, int out_dim, Rng& rng) : in_dim_(in_dim), out_dim_(out_dim) {
    weight_.init(out_dim, in_dim);
    bias_.init(out_dim, 1);
    const double std = std::sqrt(2.0 / in_dim);
    for (int r = 0; r < out_dim; ++r)
      for (int c = 0; c < in_dim; ++c) weight_.value(r, c) = rng.normal(0.0, std);
  }

  int in_dim() const { return in_dim_; }
  int out_dim() const { return out_dim_; }

  Matrix forward(const Matrix& in) const {
    if (in.rows() != in_dim_) throw InputError("Linear: input dim mismatch");
    Matrix out = weight_.value * in;
    out.colwise() += bias_.value.col(0);
    return out;
  }

  // Accumulates parameter grads, returns gradient wrt input.
  Matrix backward(const Matrix& in, const Matrix& d_out) {
    weight_.grad.noalias() += d_out * in.transpose();
    bias_.grad.col(0) += d_out.rowwise().sum();
    return weight_.value.transpose() * d_out;
  }

  Param& weight() { return weight_; }
  Param& bias() { return bias_; }
  const Param& weight() const { return weight_; }
  const Param& bias() const { return bias_; }

 private:
  int in_dim_ = 0, out_dim_ = 0;
  Param weight_;
  Param bias_;
};

// Gradient reversal: identity forward, -scale * upstream in backward.
struct GradientReversal {
  double scale = 1.0;
  Matrix forward(const Matrix& in) const { return in; }
  Matrix backward(const Matrix& d_out) const { return -scale * d_out; }
};

}  // namespace dawsol
