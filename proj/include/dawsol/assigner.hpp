// Target sample assigner: anchor cache, anchored three-way K-means over an
// image's pixel features, subset sampling, and the cache update rule.
#pragma once

#include <array>
#include <cmath>
#include <limits>
#include <vector>

#include "dawsol/rng.hpp"
#include "dawsol/serialize.hpp"
#include "dawsol/types.hpp"

namespace dawsol {

// Persistent anchor matrix M (C x (K+1)): column 0 is the Universum anchor,
// column k+1 the true-target anchor of class k. seen_count[k] counts images
// of class k whose cache update has completed.
struct AnchorCache {
  Matrix M;
  std::vector<long> seen_count;
  long universum_updates = 0;  // completed updates of column 0
  double epsilon_scale = 1e-3;
  bool eq7_literal = false;

  static AnchorCache create(int feature_dim, int num_classes, double epsilon_scale = 1e-3,
                            bool eq7_literal = false) {
    AnchorCache c;
    c.M = Matrix::Zero(feature_dim, num_classes + 1);
    c.seen_count.assign(num_classes, 0);
    c.epsilon_scale = epsilon_scale;
    c.eq7_literal = eq7_literal;
    return c;
  }

  int feature_dim() const { return static_cast<int>(M.rows()); }
  int num_classes() const { return static_cast<int>(M.cols()) - 1; }

  void save(std::ostream& os) const {
    io::write_matrix(os, M);
    io::write_u32(os, static_cast<std::uint32_t>(seen_count.size()));
    for (long v : seen_count) io::write_i64(os, v);
    io::write_i64(os, universum_updates);
    io::write_f64(os, epsilon_scale);
    io::write_u32(os, eq7_literal ? 1 : 0);
  }

  static AnchorCache load(std::istream& is) {
    AnchorCache c;
    c.M = io::read_matrix(is);
    const int k = static_cast<int>(io::read_u32(is));
    c.seen_count.resize(k);
    for (int i = 0; i < k; ++i) c.seen_count[i] = io::read_i64(is);
    c.universum_updates = io::read_i64(is);
    c.epsilon_scale = io::read_f64(is);
    c.eq7_literal = io::read_u32(is) != 0;
    return c;
  }
};

// The three sampled target subsets plus the per-position cluster labels.
struct SubsetSample {
  std::vector<int> universum;    // indices into Z columns, cluster 0
  std::vector<int> true_target;  // cluster 1
  std::vector<int> fake_target;  // cluster 2
  std::vector<int> cluster_labels;  // length N over {0,1,2}
  Matrix centers;                   // C x 3 final K-means centers
};

// Anchor retrieval: a_u = M[:,0], a_t = M[:,k+1] with first-touch init
// M[:,k+1] = z + eps, eps ~ U[-epsilon_scale, epsilon_scale] per channel.
inline std::pair<Vector, Vector> get_anchors(AnchorCache& cache, const ClassMask& mask,
                                             const SourceFeature& z, Rng& rng) {
  const int k = mask.dominant_class;
  if (k < 0 || k >= cache.num_classes()) throw InputError("get_anchors: class out of range");
  if (z.z.size() != cache.feature_dim()) throw InputError("get_anchors: feature dim mismatch");
  if (cache.seen_count[k] == 0 && cache.M.col(k + 1).isZero(0.0)) {
    Vector eps(cache.feature_dim());
    for (int i = 0; i < eps.size(); ++i)
      eps[i] = rng.uniform(-cache.epsilon_scale, cache.epsilon_scale);
    cache.M.col(k + 1) = z.z + eps;
  }
  return {cache.M.col(0), cache.M.col(k + 1)};
}

struct KmeansResult {
  std::vector<int> labels;
  Matrix centers;  // C x 3
  std::vector<double> objective_trace;  // sum of squared distances after each assignment
  int iterations = 0;
};

// Lloyd's iteration with fixed K=3 and caller-provided initial centers.
// Ties assign to the lowest center index; an empty cluster is re-seeded to
// the point farthest from that cluster's previous center. Stops when the
// relative center movement falls below tol.
inline KmeansResult kmeans3(const Matrix& points, const Matrix& init_centers, int max_iters = 50,
                            double tol = 1e-4) {
  const int N = static_cast<int>(points.cols());
  if (N < 3) throw InputError("kmeans3: need at least 3 points");
  if (init_centers.cols() != 3 || init_centers.rows() != points.rows())
    throw InputError("kmeans3: init_centers must be C x 3");

  KmeansResult res;
  res.centers = init_centers;
  res.labels.assign(N, 0);

  for (int it = 0; it < max_iters; ++it) {
    // assignment
    double objective = 0.0;
    std::array<long, 3> counts{0, 0, 0};
    for (int i = 0; i < N; ++i) {
      int best = 0;
      double best_d = (points.col(i) - res.centers.col(0)).squaredNorm();
      for (int j = 1; j < 3; ++j) {
        const double d = (points.col(i) - res.centers.col(j)).squaredNorm();
        if (d < best_d) {
          best_d = d;
          best = j;
        }
      }
      res.labels[i] = best;
      ++counts[best];
      objective += best_d;
    }
    res.objective_trace.push_back(objective);
    res.iterations = it + 1;

    // update
    Matrix next = Matrix::Zero(points.rows(), 3);
    for (int i = 0; i < N; ++i) next.col(res.labels[i]) += points.col(i);
    for (int j = 0; j < 3; ++j) {
      if (counts[j] > 0) {
        next.col(j) /= static_cast<double>(counts[j]);
      } else {
        // re-seed to the point farthest from the previous center
        int far = 0;
        double far_d = -1.0;
        for (int i = 0; i < N; ++i) {
          const double d = (points.col(i) - res.centers.col(j)).squaredNorm();
          if (d > far_d) {
            far_d = d;
            far = i;
          }
        }
        next.col(j) = points.col(far);
      }
    }

    double movement = 0.0;
    for (int j = 0; j < 3; ++j) {
      const double m = (next.col(j) - res.centers.col(j)).norm() / (1.0 + res.centers.col(j).norm());
      movement = std::max(movement, m);
    }
    res.centers = next;
    if (movement < tol) break;
  }

  // final assignment against the final centers
  for (int i = 0; i < N; ++i) {
    int best = 0;
    double best_d = (points.col(i) - res.centers.col(0)).squaredNorm();
    for (int j = 1; j < 3; ++j) {
      const double d = (points.col(i) - res.centers.col(j)).squaredNorm();
      if (d < best_d) {
        best_d = d;
        best = j;
      }
    }
    res.labels[i] = best;
  }
  return res;
}

// Full per-image assignment: cluster Z's columns with init {a_u, a_t, z},
// then uniformly sample min(n, cluster size) positions per subset.
inline SubsetSample assign_and_sample(const PixelFeatureMap& fm, const SourceFeature& z,
                                      AnchorCache& cache, const ClassMask& mask, int n, Rng& rng,
                                      int max_iters = 50, double tol = 1e-4) {
  auto [a_u, a_t] = get_anchors(cache, mask, z, rng);
  Matrix init(fm.channels(), 3);
  init.col(0) = a_u;
  init.col(1) = a_t;
  init.col(2) = z.z;
  KmeansResult km = kmeans3(fm.Z, init, max_iters, tol);

  std::array<std::vector<int>, 3> members;
  for (int i = 0; i < fm.positions(); ++i) members[km.labels[i]].push_back(i);

  SubsetSample out;
  out.cluster_labels = std::move(km.labels);
  out.centers = std::move(km.centers);
  for (int j = 0; j < 3; ++j) {
    const auto& mem = members[j];
    std::vector<int> picked;
    if (static_cast<int>(mem.size()) <= n) {
      picked = mem;
    } else {
      auto sel = sample_without_replacement(static_cast<int>(mem.size()), n, rng);
      picked.reserve(sel.size());
      for (int s : sel) picked.push_back(mem[s]);
    }
    if (j == 0) out.universum = std::move(picked);
    else if (j == 1) out.true_target = std::move(picked);
    else out.fake_target = std::move(picked);
  }
  return out;
}

// Cache update (four-branch rule over the final cluster centers).
//
// Default mode keeps each anchor the running mean of the centers it has
// absorbed: M <- (1-r)*M + r*C with r = 1/(previous updates of that column + 1).
// Literal mode applies the printed weighting M <- r*M + (1-r)*C instead.
// First-touch columns (seen_count == 0) copy whichever of C[:,1], C[:,2] is
// farther from z, ties favouring C[:,1].
inline void update_cache(AnchorCache& cache, const Matrix& centers, const SourceFeature& z,
                         const ClassMask& mask) {
  if (centers.cols() != 3 || centers.rows() != cache.feature_dim())
    throw InputError("update_cache: centers must be C x 3");
  const int k = mask.dominant_class;
  if (k < 0 || k >= cache.num_classes()) throw InputError("update_cache: class out of range");

  auto blend = [&](const Vector& old_v, const Vector& c, long prev_updates) -> Vector {
    const double r = 1.0 / static_cast<double>(prev_updates + 1);
    if (cache.eq7_literal) return r * old_v + (1.0 - r) * c;
    return (1.0 - r) * old_v + r * c;
  };

  // branch 1: Universum anchor
  cache.M.col(0) = blend(cache.M.col(0), centers.col(0), cache.universum_updates);
  ++cache.universum_updates;

  if (cache.seen_count[k] > 0) {
    // branch 2: running blend toward the true-target center
    cache.M.col(k + 1) = blend(cache.M.col(k + 1), centers.col(1), cache.seen_count[k]);
  } else {
    // branches 3/4: pick the center farther from z ("<=" keeps C[:,1])
    const double d1 = (centers.col(1) - z.z).norm();
    const double d2 = (centers.col(2) - z.z).norm();
    cache.M.col(k + 1) = (d2 > d1) ? centers.col(2) : centers.col(1);
  }
  ++cache.seen_count[k];
}

}  // namespace dawsol
