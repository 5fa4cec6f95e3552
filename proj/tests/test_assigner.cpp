#include <catch2/catch_amalgamated.hpp>

#include "dawsol/assigner.hpp"

using namespace dawsol;

TEST_CASE("get_anchors initializes a fresh class column as z + eps") {
  AnchorCache cache = AnchorCache::create(4, 5, 1e-3);
  Rng rng = seeded_rng(1);
  Vector v(4);
  v << 1, 2, 3, 4;
  auto [a_u, a_t] = get_anchors(cache, ClassMask::single(3, 5), SourceFeature{v}, rng);
  CHECK(a_u.isZero());
  CHECK((a_t - v).cwiseAbs().maxCoeff() <= 1e-3);
  CHECK((a_t - v).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("get_anchors returns stored columns unchanged after an update") {
  AnchorCache cache = AnchorCache::create(3, 2);
  Rng rng = seeded_rng(2);
  Vector stored(3);
  stored << 7, 8, 9;
  cache.M.col(2) = stored;
  cache.seen_count[1] = 1;
  auto [a_u, a_t] = get_anchors(cache, ClassMask::single(1, 2), SourceFeature{Vector::Zero(3)}, rng);
  CHECK(a_t == stored);
}

TEST_CASE("get_anchors returns distinct columns for distinct classes") {
  AnchorCache cache = AnchorCache::create(2, 3);
  Rng rng = seeded_rng(3);
  Vector v1(2), v2(2);
  v1 << 1, 0;
  v2 << 0, 1;
  auto [u1, t1] = get_anchors(cache, ClassMask::single(0, 3), SourceFeature{v1}, rng);
  auto [u2, t2] = get_anchors(cache, ClassMask::single(2, 3), SourceFeature{v2}, rng);
  CHECK((t1 - t2).norm() > 0.5);
}

TEST_CASE("kmeans3 hand case {0, 0.1, 5, 5.1, 10}") {
  Matrix pts(1, 5);
  pts << 0, 0.1, 5, 5.1, 10;
  Matrix init(1, 3);
  init << 0, 5, 10;
  auto res = kmeans3(pts, init);
  CHECK(res.labels == std::vector<int>{0, 0, 1, 1, 2});
  CHECK(res.centers(0, 0) == Catch::Approx(0.05).margin(1e-9));
  CHECK(res.centers(0, 1) == Catch::Approx(5.05).margin(1e-9));
  CHECK(res.centers(0, 2) == Catch::Approx(10.0).margin(1e-9));
}

TEST_CASE("kmeans3 on points equal to init centers is a fixed point") {
  Matrix pts(2, 3);
  pts << 0, 5, 10, 0, 5, 10;
  auto res = kmeans3(pts, pts);
  CHECK(res.labels == std::vector<int>{0, 1, 2});
  CHECK(res.centers == pts);
}

TEST_CASE("kmeans3 with identical points resolves ties to cluster 0") {
  Matrix pts = Matrix::Constant(2, 5, 3.0);
  Matrix init = Matrix::Constant(2, 3, 3.0);
  auto res = kmeans3(pts, init);
  for (int lab : res.labels) CHECK(lab == 0);
}

TEST_CASE("kmeans3 rejects fewer than 3 points") {
  Matrix pts = Matrix::Random(2, 2);
  Matrix init = Matrix::Random(2, 3);
  CHECK_THROWS_AS(kmeans3(pts, init), InputError);
}

TEST_CASE("kmeans3 objective is non-increasing and labels are nearest-center") {
  Rng rng = seeded_rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const int C = 1 + static_cast<int>(rng.uniform_int(1, 4));
    const int N = 3 + static_cast<int>(rng.uniform_int(0, 40));
    Matrix pts(C, N);
    for (int i = 0; i < C * N; ++i) pts(i / N, i % N) = rng.normal();
    Matrix init(C, 3);
    for (int i = 0; i < C * 3; ++i) init(i / 3, i % 3) = rng.normal();
    auto res = kmeans3(pts, init);
    for (size_t i = 1; i < res.objective_trace.size(); ++i)
      CHECK(res.objective_trace[i] <= res.objective_trace[i - 1] + 1e-9);
    for (int i = 0; i < N; ++i) {
      const double own = (pts.col(i) - res.centers.col(res.labels[i])).squaredNorm();
      for (int j = 0; j < 3; ++j)
        CHECK(own <= (pts.col(i) - res.centers.col(j)).squaredNorm() + 1e-12);
    }
  }
}

TEST_CASE("assign_and_sample respects the min(n, cluster size) rule") {
  // construct features with three well-separated groups
  const int C = 2;
  Matrix Z(C, 30);
  for (int i = 0; i < 30; ++i) {
    Vector v(2);
    if (i < 14) v << 0, 0;           // near universum anchor (0)
    else if (i < 24) v << 10, 10;    // near class anchor
    else v << 20, 20;                // near z
    Z.col(i) = v + Vector::Constant(2, 0.01 * i);
  }
  PixelFeatureMap fm{Z, 5, 6};
  Vector zv(2);
  zv << 20, 20;
  AnchorCache cache = AnchorCache::create(2, 1, 1e-6);
  Vector anchor(2);
  anchor << 10, 10;
  cache.M.col(1) = anchor;
  cache.seen_count[0] = 1;
  Rng rng = seeded_rng(4);
  auto sample = assign_and_sample(fm, SourceFeature{zv}, cache, ClassMask::single(0, 1), 12, rng);
  CHECK(sample.universum.size() == 12);   // min(12, 14)
  CHECK(sample.true_target.size() == 10); // min(12, 10)
  CHECK(sample.fake_target.size() == 6);  // min(12, 6)
}

TEST_CASE("assign_and_sample with n >= N uses every point exactly once") {
  Rng rng = seeded_rng(5);
  Matrix Z = Matrix::Random(3, 16);
  PixelFeatureMap fm{Z, 4, 4};
  AnchorCache cache = AnchorCache::create(3, 2, 1e-3);
  SourceFeature z{Z.rowwise().mean()};
  auto sample = assign_and_sample(fm, z, cache, ClassMask::single(0, 2), 16, rng);
  std::vector<int> all;
  for (int i : sample.universum) all.push_back(i);
  for (int i : sample.true_target) all.push_back(i);
  for (int i : sample.fake_target) all.push_back(i);
  std::sort(all.begin(), all.end());
  REQUIRE(all.size() == 16);
  for (int i = 0; i < 16; ++i) CHECK(all[i] == i);
}

TEST_CASE("subset labels partition the positions and match their subsets") {
  Rng rng = seeded_rng(6);
  Matrix Z = Matrix::Random(4, 25) * 3.0;
  PixelFeatureMap fm{Z, 5, 5};
  AnchorCache cache = AnchorCache::create(4, 3, 1e-3);
  SourceFeature z{Z.rowwise().mean()};
  auto sample = assign_and_sample(fm, z, cache, ClassMask::single(1, 3), 8, rng);
  REQUIRE(sample.cluster_labels.size() == 25);
  for (int lab : sample.cluster_labels) CHECK((lab >= 0 && lab <= 2));
  for (int i : sample.universum) CHECK(sample.cluster_labels[i] == 0);
  for (int i : sample.true_target) CHECK(sample.cluster_labels[i] == 1);
  for (int i : sample.fake_target) CHECK(sample.cluster_labels[i] == 2);
}

TEST_CASE("background near zero and object near z are assigned as expected") {
  // synthetic image: background pixels near the zero/universum anchor,
  // object pixels near z
  const int C = 3;
  Matrix Z(C, 20);
  Vector obj(3);
  obj << 4, 4, 4;
  for (int i = 0; i < 20; ++i) Z.col(i) = (i < 12) ? Vector::Zero(3) : obj;
  Vector zv = Z.rowwise().mean();
  AnchorCache cache = AnchorCache::create(3, 1, 1e-9);
  Vector t_anchor(3);
  t_anchor << 3, 3, 3;  // established true-target anchor
  cache.M.col(1) = t_anchor;
  cache.seen_count[0] = 1;
  Rng rng = seeded_rng(7);
  PixelFeatureMap fm{Z, 4, 5};
  auto sample = assign_and_sample(fm, SourceFeature{zv}, cache, ClassMask::single(0, 1), 32, rng);
  for (int i = 0; i < 12; ++i) CHECK(sample.cluster_labels[i] == 0);
  for (int i = 12; i < 20; ++i) CHECK(sample.cluster_labels[i] != 0);
}

TEST_CASE("update_cache branch 1 blends toward the universum center") {
  // with one previous update, r = 1/2 in both modes and the blend is a
  // plain average
  for (bool literal : {false, true}) {
    AnchorCache cache = AnchorCache::create(2, 1, 1e-3, literal);
    cache.M.col(0) << 1, 1;
    cache.universum_updates = 1;
    cache.seen_count[0] = 1;
    Matrix centers(2, 3);
    centers.col(0) << 3, 3;
    centers.col(1) << 0, 0;
    centers.col(2) << 0, 0;
    update_cache(cache, centers, SourceFeature{Vector::Zero(2)}, ClassMask::single(0, 1));
    CHECK(cache.M(0, 0) == Catch::Approx(2.0).margin(1e-9));
    CHECK(cache.M(1, 0) == Catch::Approx(2.0).margin(1e-9));
    CHECK(cache.universum_updates == 2);
  }
}

TEST_CASE("update_cache first-touch picks the center farther from z") {
  AnchorCache cache = AnchorCache::create(2, 1);
  Matrix centers(2, 3);
  centers.col(0) << 0, 0;
  centers.col(1) << 1, 0;
  centers.col(2) << 3, 0;
  update_cache(cache, centers, SourceFeature{Vector::Zero(2)}, ClassMask::single(0, 1));
  CHECK(cache.M(0, 1) == Catch::Approx(3.0).margin(1e-12));
  CHECK(cache.seen_count[0] == 1);
}

TEST_CASE("update_cache first-touch equidistant tie keeps the true-target center") {
  AnchorCache cache = AnchorCache::create(2, 1);
  Matrix centers(2, 3);
  centers.col(0) << 0, 0;
  centers.col(1) << 2, 0;
  centers.col(2) << -2, 0;
  update_cache(cache, centers, SourceFeature{Vector::Zero(2)}, ClassMask::single(0, 1));
  CHECK(cache.M(0, 1) == Catch::Approx(2.0).margin(1e-12));
}

TEST_CASE("running-mean mode converges to the arithmetic mean of centers") {
  Rng rng = seeded_rng(8);
  AnchorCache cache = AnchorCache::create(3, 1, 1e-3, false);
  Vector sum = Vector::Zero(3);
  const int T = 100;
  for (int t = 0; t < T; ++t) {
    Matrix centers(3, 3);
    for (int i = 0; i < 9; ++i) centers(i / 3, i % 3) = rng.normal();
    sum += centers.col(0);
    update_cache(cache, centers, SourceFeature{Vector::Zero(3)}, ClassMask::single(0, 1));
  }
  CHECK((cache.M.col(0) - sum / T).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("literal mode freezes the universum anchor on its first update") {
  AnchorCache cache = AnchorCache::create(2, 1, 1e-3, true);
  Matrix centers(2, 3);
  centers.col(0) << 5, 5;
  centers.col(1) << 1, 1;
  centers.col(2) << 2, 2;
  update_cache(cache, centers, SourceFeature{Vector::Zero(2)}, ClassMask::single(0, 1));
  // r = 1 on the first update keeps the zero initialization
  CHECK(cache.M.col(0).isZero());
}

TEST_CASE("cache evolution is deterministic given the seed") {
  auto run = [] {
    Rng rng = seeded_rng(99);
    AnchorCache cache = AnchorCache::create(4, 2, 1e-3);
    for (int t = 0; t < 10; ++t) {
      Matrix Z(4, 12);
      for (int i = 0; i < 48; ++i) Z(i / 12, i % 12) = rng.normal();
      PixelFeatureMap fm{Z, 3, 4};
      SourceFeature z{Z.rowwise().mean()};
      ClassMask mask = ClassMask::single(t % 2, 2);
      auto s = assign_and_sample(fm, z, cache, mask, 4, rng);
      update_cache(cache, s.centers, z, mask);
    }
    return cache.M;
  };
  CHECK(run() == run());
}

TEST_CASE("anchor cache serialization round-trips") {
  AnchorCache cache = AnchorCache::create(3, 2, 5e-4, true);
  cache.M.setRandom();
  cache.seen_count = {4, 7};
  cache.universum_updates = 11;
  std::stringstream ss;
  cache.save(ss);
  AnchorCache back = AnchorCache::load(ss);
  CHECK(back.M == cache.M);
  CHECK(back.seen_count == cache.seen_count);
  CHECK(back.universum_updates == 11);
  CHECK(back.epsilon_scale == 5e-4);
  CHECK(back.eq7_literal == true);
}
