// Dataset ingestion, the synthetic shapes generator, and the HaS / CutMix
// training augmentations.
//
// On-disk layout (per split directory under the dataset root):
//   images/<id>.ppm     binary PPM, one per image
//   labels.csv          <id>,<class>           (all splits)
//   masks/<id>.pgm      binary PGM, 255 = foreground   (eval splits)
//   boxes.csv           <id>,<class>,<x0>,<y0>,<x1>,<y1>  inclusive pixel
//                       coordinates, tight box of the mask (eval splits)
#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "dawsol/image.hpp"
#include "dawsol/metrics.hpp"
#include "dawsol/rng.hpp"
#include "dawsol/types.hpp"

namespace dawsol {

namespace fs = std::filesystem;

struct ManifestEntry {
  std::string image_id;
  std::string image_path;
  ClassMask label;
  std::string mask_path;  // empty when absent
  std::optional<PixelBox> box;
};

struct DatasetManifest {
  std::string root;
  std::string split;
  std::vector<ManifestEntry> entries;

  bool has_masks() const {
    return !entries.empty() && !entries.front().mask_path.empty();
  }
  bool has_boxes() const {
    return !entries.empty() && entries.front().box.has_value();
  }
};

namespace detail {

inline std::vector<std::vector<std::string>> read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, ',')) fields.push_back(f);
    rows.push_back(std::move(fields));
  }
  return rows;
}

}  // namespace detail

// Loads a split. Training splits carry class labels only (the weak
// supervision contract); eval splits must provide masks and/or boxes for
// every image.
inline DatasetManifest load_manifest(const std::string& root, const std::string& split,
                                     int num_classes, bool require_annotations) {
  DatasetManifest m;
  m.root = root;
  m.split = split;
  const fs::path dir = fs::path(root) / split;
  if (!fs::is_directory(dir)) throw IoError("dataset split directory missing: " + dir.string());
  const fs::path labels_path = dir / "labels.csv";
  if (!fs::is_regular_file(labels_path)) throw IoError("missing " + labels_path.string());

  std::map<std::string, int> labels;
  for (const auto& row : detail::read_csv(labels_path.string())) {
    if (row.size() != 2) throw IoError(labels_path.string() + ": expected <id>,<class> rows");
    const int cls = std::stoi(row[1]);
    if (cls < 0 || cls >= num_classes)
      throw IoError(labels_path.string() + ": class id out of range for '" + row[0] + "'");
    labels[row[0]] = cls;
  }
  if (labels.empty()) throw IoError(labels_path.string() + ": no entries");

  std::map<std::string, PixelBox> boxes;
  const fs::path boxes_path = dir / "boxes.csv";
  if (fs::is_regular_file(boxes_path)) {
    for (const auto& row : detail::read_csv(boxes_path.string())) {
      if (row.size() != 6) throw IoError(boxes_path.string() + ": expected 6 fields per row");
      boxes[row[0]] = PixelBox{std::stoi(row[2]), std::stoi(row[3]), std::stoi(row[4]),
                               std::stoi(row[5])};
    }
  }
  const bool have_masks_dir = fs::is_directory(dir / "masks");

  // deterministic ordering by id (== path order)
  for (const auto& [id, cls] : labels) {
    ManifestEntry e;
    e.image_id = id;
    e.image_path = (dir / "images" / (id + ".ppm")).string();
    if (!fs::is_regular_file(e.image_path)) throw IoError("missing image file " + e.image_path);
    e.label = ClassMask::single(cls, num_classes);
    if (have_masks_dir) {
      const fs::path mp = dir / "masks" / (id + ".pgm");
      if (fs::is_regular_file(mp)) e.mask_path = mp.string();
    }
    auto it = boxes.find(id);
    if (it != boxes.end()) e.box = it->second;
    if (require_annotations && e.mask_path.empty() && !e.box)
      throw IoError("eval split '" + split + "': image '" + id + "' has no annotation");
    m.entries.push_back(std::move(e));
  }
  return m;
}

enum class ShapeClass { kCircle = 0, kSquare = 1, kTriangle = 2 };

struct SyntheticSpec {
  int num_train = 2000;
  int num_eval = 300;
  int num_classes = 3;  // circle, square, triangle
  int image_size = 96;
  double noise_level = 0.2;
  double scale_min = 0.3;
  double scale_max = 0.6;  // object diameter as a fraction of image size
  std::int64_t seed = 0;
};

namespace detail {

inline bool inside_shape(ShapeClass shape, double x, double y, double cx, double cy, double r) {
  const double dx = x - cx, dy = y - cy;
  switch (shape) {
    case ShapeClass::kCircle:
      return dx * dx + dy * dy <= r * r;
    case ShapeClass::kSquare:
      return std::abs(dx) <= r * 0.886 && std::abs(dy) <= r * 0.886;  // area-matched to circle
    case ShapeClass::kTriangle: {
      // upward triangle, vertices area-comparable to the circle
      const double ax = cx, ay = cy - 1.2 * r;
      const double bx = cx - 1.1 * r, by = cy + 0.8 * r;
      const double ex = cx + 1.1 * r, ey = cy + 0.8 * r;
      auto side = [&](double px0, double py0, double px1, double py1) {
        return (px1 - px0) * (y - py0) - (py1 - py0) * (x - px0);
      };
      const double s1 = side(ax, ay, bx, by), s2 = side(bx, by, ex, ey), s3 = side(ex, ey, ax, ay);
      return (s1 >= 0 && s2 >= 0 && s3 >= 0) || (s1 <= 0 && s2 <= 0 && s3 <= 0);
    }
  }
  return false;
}

struct RenderedImage {
  Image image;
  BinaryMask mask;
  PixelBox box;
  int class_id;
};

inline RenderedImage render_synthetic(const SyntheticSpec& spec, Rng& rng) {
  const int S = spec.image_size;
  RenderedImage out;
  out.class_id = static_cast<int>(rng.uniform_int(0, spec.num_classes - 1));
  const auto shape = static_cast<ShapeClass>(out.class_id);

  const double diam = rng.uniform(spec.scale_min, spec.scale_max) * S;
  const double r = diam / 2.0;
  const double margin = 1.3 * r + 2.0;
  const double cx = rng.uniform(margin, S - margin);
  const double cy = rng.uniform(margin, S - margin);

  // background: smooth gradient plus per-pixel noise
  const double bg = rng.uniform(0.3, 0.5);
  const double gx = rng.uniform(-0.1, 0.1), gy = rng.uniform(-0.1, 0.1);
  // foreground tint: per-class hue (jittered), brighter than background
  static constexpr double kClassTint[3][3] = {
      {0.9, 0.5, 0.5}, {0.5, 0.9, 0.5}, {0.5, 0.5, 0.9}};
  double fg[3];
  for (int c = 0; c < 3; ++c)
    fg[c] = kClassTint[out.class_id][c] + rng.uniform(-0.05, 0.05);

  out.image.h = S;
  out.image.w = S;
  out.image.pixels.resize(3, static_cast<long>(S) * S);
  out.mask.h = S;
  out.mask.w = S;
  out.mask.data.assign(static_cast<size_t>(S) * S, 0);

  // pass 1: rasterize the mask and its tight box
  int x0 = S, y0 = S, x1 = -1, y1 = -1;
  for (int y = 0; y < S; ++y) {
    for (int x = 0; x < S; ++x) {
      if (!inside_shape(shape, x + 0.5, y + 0.5, cx, cy, r)) continue;
      out.mask.data[static_cast<long>(y) * S + x] = 1;
      x0 = std::min(x0, x);
      x1 = std::max(x1, x);
      y0 = std::min(y0, y);
      y1 = std::max(y1, y);
    }
  }
  out.box = PixelBox{x0, y0, x1, y1};

  // pass 2: colorize. The class tint fades from full strength at the top of
  // the object toward the background at the bottom, so only part of each
  // object carries strong class evidence and a classifier's activation map
  // need not cover the full ground-truth extent on its own.
  for (int y = 0; y < S; ++y) {
    for (int x = 0; x < S; ++x) {
      const long p = static_cast<long>(y) * S + x;
      const double base = bg + gx * (static_cast<double>(x) / S - 0.5) +
                          gy * (static_cast<double>(y) / S - 0.5);
      const bool fgpix = out.mask.data[p] != 0;
      double strength = 0.0;
      if (fgpix) {
        const double t = y1 > y0 ? static_cast<double>(y - y0) / (y1 - y0) : 0.0;
        strength = 1.0 - 0.8 * t;
      }
      for (int c = 0; c < 3; ++c) {
        double v = fgpix ? base + strength * (fg[c] - base) : base;
        v += rng.uniform(-spec.noise_level, spec.noise_level);
        out.image.pixels(c, p) = std::clamp(v, 0.0, 1.0);
      }
    }
  }
  return out;
}

}  // namespace detail

// Materializes the synthetic shapes dataset: train/ (images + labels) and
// test/ (images + labels + masks + boxes). Same spec -> byte-identical files.
inline void generate_synthetic(const SyntheticSpec& spec, const std::string& out_root) {
  if (spec.num_classes < 1 || spec.num_classes > 3)
    throw InputError("generate_synthetic: num_classes must be 1..3 (circle, square, triangle)");
  Rng rng = seeded_rng(spec.seed);

  auto write_split = [&](const std::string& split, int count, bool with_annotations) {
    const fs::path dir = fs::path(out_root) / split;
    fs::create_directories(dir / "images");
    if (with_annotations) fs::create_directories(dir / "masks");
    std::ofstream labels(dir / "labels.csv");
    std::ofstream boxes;
    if (with_annotations) boxes.open(dir / "boxes.csv");
    for (int i = 0; i < count; ++i) {
      auto r = detail::render_synthetic(spec, rng);
      char id[16];
      std::snprintf(id, sizeof id, "%06d", i);
      write_ppm(r.image, (dir / "images" / (std::string(id) + ".ppm")).string());
      labels << id << "," << r.class_id << "\n";
      if (with_annotations) {
        write_pgm_mask(r.mask, (dir / "masks" / (std::string(id) + ".pgm")).string());
        boxes << id << "," << r.class_id << "," << r.box.x0 << "," << r.box.y0 << ","
              << r.box.x1 << "," << r.box.y1 << "\n";
      }
    }
  };
  write_split("train", spec.num_train, false);
  write_split("test", spec.num_eval, true);
}

// Hide-and-seek: zero each grid cell independently with hide_prob.
inline Image has_augment(const Image& img, int grid, double hide_prob, Rng& rng) {
  if (grid < 1 || img.h % grid != 0 || img.w % grid != 0)
    throw InputError("has_augment: grid must divide the image size");
  Image out = img;
  const int ch = img.h / grid, cw = img.w / grid;
  for (int gy = 0; gy < grid; ++gy) {
    for (int gx = 0; gx < grid; ++gx) {
      if (!rng.bernoulli(hide_prob)) continue;
      for (int y = gy * ch; y < (gy + 1) * ch; ++y)
        for (int x = gx * cw; x < (gx + 1) * cw; ++x)
          out.pixels.col(static_cast<long>(y) * img.w + x).setZero();
    }
  }
  return out;
}

struct CutMixResult {
  Image image;
  Vector label;   // mixed label weights
  double lambda;  // 1 - pasted-area fraction
};

// CutMix: paste a random rectangle of B into A; label = lam*yA + (1-lam)*yB.
inline CutMixResult cutmix_augment(const Image& a, const Vector& ya, const Image& b,
                                   const Vector& yb, double alpha, Rng& rng) {
  if (a.h != b.h || a.w != b.w) throw InputError("cutmix_augment: image dims must match");
  if (ya.size() != yb.size()) throw InputError("cutmix_augment: label dims must match");
  CutMixResult out;
  out.image = a;
  const double lam0 = rng.beta(alpha, alpha);
  const double cut = std::sqrt(1.0 - lam0);
  const int pw = static_cast<int>(std::round(cut * a.w));
  const int ph = static_cast<int>(std::round(cut * a.h));
  const int cx = static_cast<int>(rng.uniform_int(0, a.w - 1));
  const int cy = static_cast<int>(rng.uniform_int(0, a.h - 1));
  const int x0 = std::clamp(cx - pw / 2, 0, a.w);
  const int x1 = std::clamp(cx - pw / 2 + pw, 0, a.w);
  const int y0 = std::clamp(cy - ph / 2, 0, a.h);
  const int y1 = std::clamp(cy - ph / 2 + ph, 0, a.h);
  for (int y = y0; y < y1; ++y)
    for (int x = x0; x < x1; ++x)
      out.image.pixels.col(static_cast<long>(y) * a.w + x) =
          b.pixels.col(static_cast<long>(y) * a.w + x);
  const double area = static_cast<double>(x1 - x0) * (y1 - y0);
  out.lambda = 1.0 - area / (static_cast<double>(a.h) * a.w);
  out.label = out.lambda * ya + (1.0 - out.lambda) * yb;
  return out;
}

inline BinaryMask load_gt_mask(const ManifestEntry& e) {
  if (e.mask_path.empty()) throw IoError("no mask for image '" + e.image_id + "'");
  return read_pgm_mask_cached(e.mask_path);
}

}  // namespace dawsol
