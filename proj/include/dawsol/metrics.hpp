// Localization evaluation: map thresholding, box extraction, BoxAccV2,
// pixel precision/recall, PxAP, pIoU, Top-1 Loc and GT-known.
#pragma once

#include <algorithm>
#include <cmath>
#include <deque>
#include <optional>
#include <string>
#include <vector>

#include "dawsol/types.hpp"

namespace dawsol {

// One evaluated image: the normalized gt-class score map at image resolution,
// the classifier's predicted class, and the ground truth.
struct EvalRecord {
  std::string image_id;
  Matrix map;  // H x W, entries in [0,1]
  int predicted_class = 0;
  int gt_class = 0;
  std::optional<PixelBox> gt_box;
  std::optional<BinaryMask> gt_mask;
};

struct ThresholdSweep {
  std::vector<double> thresholds;

  // steps equally spaced thresholds spanning [0, 1].
  static ThresholdSweep uniform(int steps = 101) {
    if (steps < 2) throw InputError("ThresholdSweep: need at least 2 thresholds");
    ThresholdSweep s;
    s.thresholds.resize(steps);
    for (int i = 0; i < steps; ++i)
      s.thresholds[i] = static_cast<double>(i) / (steps - 1);
    return s;
  }
};

// mask[i,j] = 1 iff map[i,j] >= tau.
inline BinaryMask threshold_map(const Matrix& map, double tau) {
  BinaryMask m;
  m.h = static_cast<int>(map.rows());
  m.w = static_cast<int>(map.cols());
  m.data.resize(static_cast<size_t>(m.h) * m.w);
  for (int r = 0; r < m.h; ++r)
    for (int c = 0; c < m.w; ++c) m.at(r, c) = map(r, c) >= tau ? 1 : 0;
  return m;
}

// Tight box of the largest 4-connected foreground component; nullopt when
// the mask is empty. Ties between equal-sized components keep the first one
// in row-major scan order.
inline std::optional<PixelBox> mask_to_box(const BinaryMask& mask) {
  std::vector<int> comp(mask.data.size(), -1);
  int best_size = 0;
  PixelBox best{};
  int n_comp = 0;
  for (int r0 = 0; r0 < mask.h; ++r0) {
    for (int c0 = 0; c0 < mask.w; ++c0) {
      if (!mask.at(r0, c0) || comp[r0 * mask.w + c0] >= 0) continue;
      const int id = n_comp++;
      int size = 0;
      PixelBox box{c0, r0, c0, r0};
      std::deque<std::pair<int, int>> q{{r0, c0}};
      comp[r0 * mask.w + c0] = id;
      while (!q.empty()) {
        auto [r, c] = q.front();
        q.pop_front();
        ++size;
        box.x0 = std::min(box.x0, c);
        box.x1 = std::max(box.x1, c);
        box.y0 = std::min(box.y0, r);
        box.y1 = std::max(box.y1, r);
        const int dr[4] = {-1, 1, 0, 0}, dc[4] = {0, 0, -1, 1};
        for (int d = 0; d < 4; ++d) {
          const int nr = r + dr[d], nc = c + dc[d];
          if (nr < 0 || nr >= mask.h || nc < 0 || nc >= mask.w) continue;
          if (!mask.at(nr, nc) || comp[nr * mask.w + nc] >= 0) continue;
          comp[nr * mask.w + nc] = id;
          q.emplace_back(nr, nc);
        }
      }
      if (size > best_size) {
        best_size = size;
        best = box;
      }
    }
  }
  if (best_size == 0) return std::nullopt;
  return best;
}

inline double box_iou(const Box& a, const Box& b) {
  const double ix = std::max(0.0, std::min(a.x1, b.x1) - std::max(a.x0, b.x0));
  const double iy = std::max(0.0, std::min(a.y1, b.y1) - std::max(a.y0, b.y0));
  const double inter = ix * iy;
  const double uni = a.area() + b.area() - inter;
  return uni > 0 ? inter / uni : 0.0;
}

// IoU of the extracted box at threshold tau against the record's gt box;
// 0 when no box is extracted.
inline double record_box_iou(const EvalRecord& rec, double tau) {
  auto box = mask_to_box(threshold_map(rec.map, tau));
  if (!box) return 0.0;
  return box_iou(box->continuous(), rec.gt_box->continuous());
}

// BoxAccV2: per delta in {0.3, 0.5, 0.7}, best-over-tau fraction of images
// with IoU >= delta; the three maxima averaged, as a percentage.
inline double box_acc_v2(const std::vector<EvalRecord>& records, const ThresholdSweep& sweep) {
  if (records.empty()) throw InputError("box_acc_v2: empty record set");
  for (const auto& r : records)
    if (!r.gt_box) throw InputError("box_acc_v2: record missing gt box");
  const double deltas[3] = {0.3, 0.5, 0.7};
  double sum = 0.0;
  std::vector<std::vector<double>> ious(records.size());
  for (size_t i = 0; i < records.size(); ++i) {
    ious[i].reserve(sweep.thresholds.size());
    for (double tau : sweep.thresholds) ious[i].push_back(record_box_iou(records[i], tau));
  }
  for (double delta : deltas) {
    double best = 0.0;
    for (size_t t = 0; t < sweep.thresholds.size(); ++t) {
      int hits = 0;
      for (size_t i = 0; i < records.size(); ++i)
        if (ious[i][t] >= delta) ++hits;
      best = std::max(best, static_cast<double>(hits) / records.size());
    }
    sum += best;
  }
  return 100.0 * sum / 3.0;
}

struct PrPoint {
  double tau = 0.0;
  double precision = 1.0;
  double recall = 0.0;
};

// Pooled pixel precision/recall at each threshold. Precision is 1 when
// nothing is predicted.
inline std::vector<PrPoint> pixel_pr_curve(const std::vector<EvalRecord>& records,
                                           const ThresholdSweep& sweep) {
  if (records.empty()) throw InputError("pixel_pr_curve: empty record set");
  long total_fg = 0;
  for (const auto& r : records) {
    if (!r.gt_mask) throw InputError("pixel_pr_curve: record missing gt mask");
    total_fg += r.gt_mask->count();
  }
  if (total_fg == 0) throw InputError("pixel_pr_curve: ground truth has no foreground pixels");

  std::vector<PrPoint> curve;
  curve.reserve(sweep.thresholds.size());
  for (double tau : sweep.thresholds) {
    long tp = 0, fp = 0;
    for (const auto& r : records) {
      for (int y = 0; y < r.map.rows(); ++y) {
        for (int x = 0; x < r.map.cols(); ++x) {
          if (r.map(y, x) >= tau) {
            if (r.gt_mask->at(y, x)) ++tp;
            else ++fp;
          }
        }
      }
    }
    PrPoint p;
    p.tau = tau;
    p.precision = (tp + fp) > 0 ? static_cast<double>(tp) / (tp + fp) : 1.0;
    p.recall = static_cast<double>(tp) / total_fg;
    curve.push_back(p);
  }
  return curve;
}

// Area under the pixel PR curve (trapezoid over recall, walking the sweep in
// descending threshold order so recall is non-decreasing, with a zero-recall
// anchor at the highest-threshold precision), as a percentage.
inline double pxap(const std::vector<EvalRecord>& records, const ThresholdSweep& sweep) {
  auto curve = pixel_pr_curve(records, sweep);
  std::sort(curve.begin(), curve.end(),
            [](const PrPoint& a, const PrPoint& b) { return a.tau > b.tau; });
  double area = 0.0;
  double prev_r = 0.0, prev_p = curve.front().precision;
  for (const auto& p : curve) {
    area += (p.recall - prev_r) * 0.5 * (p.precision + prev_p);
    prev_r = p.recall;
    prev_p = p.precision;
  }
  return 100.0 * area;
}

// Peak pooled pixel IoU over the sweep, as a percentage.
inline double piou(const std::vector<EvalRecord>& records, const ThresholdSweep& sweep) {
  if (records.empty()) throw InputError("piou: empty record set");
  long total_fg = 0;
  for (const auto& r : records) {
    if (!r.gt_mask) throw InputError("piou: record missing gt mask");
    total_fg += r.gt_mask->count();
  }
  if (total_fg == 0) throw InputError("piou: ground truth has no foreground pixels");
  double best = 0.0;
  for (double tau : sweep.thresholds) {
    long tp = 0, fp = 0;
    for (const auto& r : records) {
      for (int y = 0; y < r.map.rows(); ++y) {
        for (int x = 0; x < r.map.cols(); ++x) {
          if (r.map(y, x) >= tau) {
            if (r.gt_mask->at(y, x)) ++tp;
            else ++fp;
          }
        }
      }
    }
    const long fn = total_fg - tp;
    const long denom = tp + fp + fn;
    if (denom > 0) best = std::max(best, static_cast<double>(tp) / denom);
  }
  return 100.0 * best;
}

struct Top1GtKnown {
  double top1 = 0.0;
  double gt_known = 0.0;
  double best_tau = 0.0;
};

// GT-known: fraction of images whose gt-class box IoU >= delta at the single
// sweep threshold maximizing that fraction. Top-1 additionally requires the
// predicted class to equal the gt class, evaluated at the same threshold.
inline Top1GtKnown top1_and_gtknown(const std::vector<EvalRecord>& records,
                                    const ThresholdSweep& sweep, double delta = 0.5) {
  if (records.empty()) throw InputError("top1_and_gtknown: empty record set");
  for (const auto& r : records)
    if (!r.gt_box) throw InputError("top1_and_gtknown: record missing gt box");
  Top1GtKnown out;
  int best_hits = -1;
  size_t best_t = 0;
  std::vector<std::vector<bool>> hit(sweep.thresholds.size());
  for (size_t t = 0; t < sweep.thresholds.size(); ++t) {
    hit[t].resize(records.size());
    int hits = 0;
    for (size_t i = 0; i < records.size(); ++i) {
      hit[t][i] = record_box_iou(records[i], sweep.thresholds[t]) >= delta;
      if (hit[t][i]) ++hits;
    }
    if (hits > best_hits) {
      best_hits = hits;
      best_t = t;
    }
  }
  int top1_hits = 0;
  for (size_t i = 0; i < records.size(); ++i)
    if (hit[best_t][i] && records[i].predicted_class == records[i].gt_class) ++top1_hits;
  out.gt_known = 100.0 * best_hits / records.size();
  out.top1 = 100.0 * top1_hits / records.size();
  out.best_tau = sweep.thresholds[best_t];
  return out;
}

}  // namespace dawsol
