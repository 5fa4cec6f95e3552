// Shared domain types: feature matrices, class masks, annotations, boxes.
#pragma once

#include <Eigen/Dense>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace dawsol {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

struct DawsolError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ConfigError : DawsolError {
  using DawsolError::DawsolError;
};
struct InputError : DawsolError {
  using DawsolError::DawsolError;
};
struct IoError : DawsolError {
  using DawsolError::DawsolError;
};

// Per-image pixel-domain features: C channels x N spatial positions, N = h*w.
struct PixelFeatureMap {
  Matrix Z;  // C x N
  int h = 0;
  int w = 0;

  int channels() const { return static_cast<int>(Z.rows()); }
  int positions() const { return static_cast<int>(Z.cols()); }
};

// Aggregated image-level feature z (length C).
struct SourceFeature {
  Vector z;
};

// Per-class localization scores, K x N (or K x H*W after upsampling).
struct ScoreMap {
  Matrix scores;  // K x N
  int h = 0;
  int w = 0;
};

// Image-level classification mask y in {0,1}^K plus its dominant class.
struct ClassMask {
  Vector y;  // multi-hot; for CutMix this carries the mixed label weights
  int dominant_class = 0;

  static ClassMask from_vector(const Vector& y) {
    if (y.size() < 1) throw InputError("ClassMask: empty label vector");
    double best = y[0];
    int k = 0;
    for (int i = 1; i < y.size(); ++i) {
      if (y[i] > best) {  // ties keep the lowest index
        best = y[i];
        k = i;
      }
    }
    if (best <= 0.0) throw InputError("ClassMask: no positive label entry");
    return ClassMask{y, k};
  }

  static ClassMask single(int k, int num_classes) {
    Vector y = Vector::Zero(num_classes);
    y[k] = 1.0;
    return ClassMask{y, k};
  }
};

// Continuous box, half-open in both axes: [x0, x1) x [y0, y1).
struct Box {
  double x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  double area() const {
    return std::max(0.0, x1 - x0) * std::max(0.0, y1 - y0);
  }
};

// Integer pixel box with inclusive corners, as stored in annotation CSVs.
struct PixelBox {
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  Box continuous() const {
    return Box{static_cast<double>(x0), static_cast<double>(y0),
               static_cast<double>(x1 + 1), static_cast<double>(y1 + 1)};
  }
};

// Binary pixel mask, row-major h x w.
struct BinaryMask {
  int h = 0, w = 0;
  std::vector<std::uint8_t> data;  // 0 or 1

  std::uint8_t at(int r, int c) const { return data[r * w + c]; }
  std::uint8_t& at(int r, int c) { return data[r * w + c]; }
  long count() const {
    long s = 0;
    for (auto v : data) s += v;
    return s;
  }
};

// Ground truth for evaluation: a box or a pixel mask (never used in training).
struct PixelAnnotation {
  int class_id = 0;
  std::optional<PixelBox> box;
  std::optional<BinaryMask> mask;
};

}  // namespace dawsol
