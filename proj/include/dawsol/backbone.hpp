// The extractor f, aggregator g (global average pooling) and estimator e,
// plus CAM generation (bilinear upsampling + per-class min-max).
//
// The desk-scale backbone is four 3x3 conv+ReLU stages, stride 2 each
// (total stride 16), channel widths w, 2w, 4w, C.
#pragma once

#include <cmath>
#include <vector>

#include "dawsol/config.hpp"
#include "dawsol/nn.hpp"
#include "dawsol/serialize.hpp"
#include "dawsol/types.hpp"

namespace dawsol {

constexpr int kBackboneStride = 16;

// GAP: z_c = mean_i Z[c, i].
inline SourceFeature aggregate(const PixelFeatureMap& fm) {
  if (fm.positions() < 1) throw InputError("aggregate: empty feature map");
  return SourceFeature{fm.Z.rowwise().mean()};
}

// Bilinear upsampling of a row-major h x w map to H x W (align_corners=false
// convention: sample at pixel centers).
inline Matrix bilinear_upsample_rowmajor(const Vector& flat, int h, int w, int H, int W) {
  Matrix out(H, W);
  const double sy = static_cast<double>(h) / H;
  const double sx = static_cast<double>(w) / W;
  for (int Y = 0; Y < H; ++Y) {
    double fy = (Y + 0.5) * sy - 0.5;
    fy = std::min(std::max(fy, 0.0), static_cast<double>(h - 1));
    const int y0 = static_cast<int>(std::floor(fy));
    const int y1 = std::min(y0 + 1, h - 1);
    const double wy = fy - y0;
    for (int X = 0; X < W; ++X) {
      double fx = (X + 0.5) * sx - 0.5;
      fx = std::min(std::max(fx, 0.0), static_cast<double>(w - 1));
      const int x0 = static_cast<int>(std::floor(fx));
      const int x1 = std::min(x0 + 1, w - 1);
      const double wx = fx - x0;
      const double v00 = flat[y0 * w + x0], v01 = flat[y0 * w + x1];
      const double v10 = flat[y1 * w + x0], v11 = flat[y1 * w + x1];
      out(Y, X) = (1 - wy) * ((1 - wx) * v00 + wx * v01) + wy * ((1 - wx) * v10 + wx * v11);
    }
  }
  return out;
}

// Min-max normalization to [0,1]; constant maps become all zeros.
inline void minmax_normalize_rows(Matrix& scores) {
  for (int r = 0; r < scores.rows(); ++r) {
    const double lo = scores.row(r).minCoeff();
    const double hi = scores.row(r).maxCoeff();
    if (hi - lo <= 0.0) {
      scores.row(r).setZero();
    } else {
      scores.row(r) = (scores.row(r).array() - lo) / (hi - lo);
    }
  }
}

class Backbone {
 public:
  Backbone() = default;

  Backbone(const RunConfig& cfg, Rng& rng) {
    const int w = cfg.backbone_width;
    const int chans[5] = {3, w, 2 * w, 4 * w, cfg.feature_dim};
    for (int s = 0; s < 4; ++s) stages_.emplace_back(chans[s], chans[s + 1], 2, rng);
    estimator_ = Linear(cfg.feature_dim, cfg.num_classes, rng);
  }

  int feature_dim() const { return estimator_.in_dim(); }
  int num_classes() const { return estimator_.out_dim(); }

  struct ForwardCache {
    std::vector<ConvRelu::Cache> stage;
    std::vector<Matrix> stage_input;  // input to each stage
    int h = 0, w = 0;                 // final feature extent
  };

  // f(.): image (3 x H*W) -> pixel features (C x N). The cache enables a
  // later backward pass for the same image.
  PixelFeatureMap extract_features(const Matrix& image, int H, int W, ForwardCache* cache = nullptr) const {
    if (image.rows() != 3 || image.cols() != static_cast<long>(H) * W)
      throw InputError("extract_features: image must be 3 x (H*W)");
    ForwardCache local;
    ForwardCache& fc = cache ? *cache : local;
    fc.stage.resize(stages_.size());
    fc.stage_input.resize(stages_.size());
    Matrix x = image;
    int h = H, w = W;
    for (size_t s = 0; s < stages_.size(); ++s) {
      fc.stage_input[s] = x;
      x = stages_[s].forward(x, h, w, fc.stage[s]);
      h = fc.stage[s].ho;
      w = fc.stage[s].wo;
    }
    fc.h = h;
    fc.w = w;
    if (!x.allFinite()) throw DawsolError("extract_features: non-finite activation");
    return PixelFeatureMap{std::move(x), h, w};
  }

  // e(.): columns of `features` (C x m) -> scores (K x m).
  Matrix estimate(const Matrix& features) const { return estimator_.forward(features); }

  // Backward through e for feature gradients + estimator parameter grads.
  Matrix estimate_backward(const Matrix& features, const Matrix& d_scores) {
    return estimator_.backward(features, d_scores);
  }

  // Backward through f given dL/dZ; accumulates all conv parameter grads.
  void extract_backward(const Matrix& d_features, const ForwardCache& fc) {
    Matrix d = d_features;
    for (int s = static_cast<int>(stages_.size()) - 1; s >= 0; --s)
      d = stages_[s].backward(d, fc.stage[s]);
  }

  // Inference path Y* = e(f(X)) upsampled to image resolution and min-max
  // normalized per class.
  ScoreMap generate_cam(const Matrix& image, int H, int W) const {
    PixelFeatureMap fm = extract_features(image, H, W);
    Matrix raw = estimate(fm.Z);  // K x N
    Matrix up(raw.rows(), static_cast<long>(H) * W);
    for (int k = 0; k < raw.rows(); ++k) {
      Matrix big = bilinear_upsample_rowmajor(raw.row(k).transpose(), fm.h, fm.w, H, W);
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) up(k, y * W + x) = big(y, x);
    }
    minmax_normalize_rows(up);
    return ScoreMap{std::move(up), H, W};
  }

  std::vector<Param*> params() {
    std::vector<Param*> ps;
    for (auto& s : stages_) {
      ps.push_back(&s.weight());
      ps.push_back(&s.bias());
    }
    ps.push_back(&estimator_.weight());
    ps.push_back(&estimator_.bias());
    return ps;
  }

  Linear& estimator() { return estimator_; }
  const Linear& estimator() const { return estimator_; }

  void save(std::ostream& os) const {
    io::write_u32(os, static_cast<std::uint32_t>(stages_.size()));
    for (const auto& s : stages_) {
      io::write_u32(os, s.in_channels());
      io::write_u32(os, s.out_channels());
      io::write_u32(os, s.stride());
      io::write_matrix(os, s.weight().value);
      io::write_matrix(os, s.weight().velocity);
      io::write_matrix(os, s.bias().value);
      io::write_matrix(os, s.bias().velocity);
    }
    io::write_u32(os, estimator_.in_dim());
    io::write_u32(os, estimator_.out_dim());
    io::write_matrix(os, estimator_.weight().value);
    io::write_matrix(os, estimator_.weight().velocity);
    io::write_matrix(os, estimator_.bias().value);
    io::write_matrix(os, estimator_.bias().velocity);
  }

  void load(std::istream& is) {
    const int n = static_cast<int>(io::read_u32(is));
    stages_.clear();
    Rng dummy(0);
    for (int i = 0; i < n; ++i) {
      const int ic = static_cast<int>(io::read_u32(is));
      const int oc = static_cast<int>(io::read_u32(is));
      const int st = static_cast<int>(io::read_u32(is));
      ConvRelu layer(ic, oc, st, dummy);
      layer.weight().value = io::read_matrix(is);
      layer.weight().velocity = io::read_matrix(is);
      layer.bias().value = io::read_matrix(is);
      layer.bias().velocity = io::read_matrix(is);
      stages_.push_back(std::move(layer));
    }
    const int in_dim = static_cast<int>(io::read_u32(is));
    const int out_dim = static_cast<int>(io::read_u32(is));
    estimator_ = Linear(in_dim, out_dim, dummy);
    estimator_.weight().value = io::read_matrix(is);
    estimator_.weight().velocity = io::read_matrix(is);
    estimator_.bias().value = io::read_matrix(is);
    estimator_.bias().velocity = io::read_matrix(is);
  }

 private:
  std::vector<ConvRelu> stages_;
  Linear estimator_;
};

}  // namespace dawsol
