#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "dawsol/trainer.hpp"

using namespace dawsol;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           fs::path("dawsol_trainer_" + std::to_string(::getpid()) + "_" +
                    std::to_string(counter()++));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  static int& counter() {
    static int c = 0;
    return c;
  }
};

RunConfig tiny_config() {
  RunConfig cfg;
  cfg.num_classes = 3;
  cfg.feature_dim = 8;
  cfg.image_size = 32;
  cfg.backbone_width = 4;
  cfg.samples_per_subset = 8;
  cfg.batch_size = 4;
  cfg.epochs = 1;
  cfg.seed = 123;
  return cfg;
}

std::vector<TrainItem> random_batch(const RunConfig& cfg, Rng& rng, int n) {
  std::vector<TrainItem> batch;
  for (int i = 0; i < n; ++i) {
    TrainItem it;
    it.image.resize(3, static_cast<long>(cfg.image_size) * cfg.image_size);
    for (long c = 0; c < it.image.cols(); ++c)
      for (int ch = 0; ch < 3; ++ch) it.image(ch, c) = rng.uniform();
    it.label = ClassMask::single(static_cast<int>(rng.uniform_int(0, cfg.num_classes - 1)),
                                 cfg.num_classes);
    batch.push_back(std::move(it));
  }
  return batch;
}

// A learnable toy batch: class k paints a bright blob in channel energy
// controlled by position.
std::vector<TrainItem> structured_batch(const RunConfig& cfg, Rng& rng, int n) {
  const int S = cfg.image_size;
  std::vector<TrainItem> batch;
  for (int i = 0; i < n; ++i) {
    TrainItem it;
    const int cls = i % cfg.num_classes;
    it.image = Matrix::Constant(3, static_cast<long>(S) * S, 0.2);
    const int band = S / cfg.num_classes;
    for (int y = cls * band; y < (cls + 1) * band; ++y)
      for (int x = 0; x < S; ++x)
        it.image.col(static_cast<long>(y) * S + x).setConstant(0.9);
    for (long c = 0; c < it.image.cols(); ++c)
      for (int ch = 0; ch < 3; ++ch) it.image(ch, c) += 0.02 * rng.uniform();
    it.label = ClassMask::single(cls, cfg.num_classes);
    batch.push_back(std::move(it));
  }
  return batch;
}

}  // namespace

TEST_CASE("train_step runs and returns finite losses for each uda method") {
  for (auto method : {UdaMethod::kMmd, UdaMethod::kDann}) {
    RunConfig cfg = tiny_config();
    cfg.uda_method = method;
    TrainState state = TrainState::create(cfg);
    Rng rng = seeded_rng(1);
    auto batch = random_batch(cfg, rng, 3);
    LossBreakdown lb = train_step(state, batch, 0.01);
    CHECK(std::isfinite(lb.total));
    CHECK(lb.l_c > 0.0);
    CHECK(lb.l_u >= 0.0);
    CHECK(state.step == 1);
  }
}

TEST_CASE("loss decreases over repeated steps on a small structured batch") {
  RunConfig cfg = tiny_config();
  cfg.lambda1 = 0.1;
  cfg.lambda2 = 0.5;
  TrainState state = TrainState::create(cfg);
  Rng rng = seeded_rng(2);
  auto batch = structured_batch(cfg, rng, 6);
  double first = 0, last = 0;
  for (int s = 0; s < 50; ++s) {
    LossBreakdown lb = train_step(state, batch, 0.02);
    if (s == 0) first = lb.l_c;
    last = lb.l_c;
  }
  CHECK(last < first);
}

TEST_CASE("cache bookkeeping: seen counts track the classes in each batch") {
  RunConfig cfg = tiny_config();
  TrainState state = TrainState::create(cfg);
  Rng rng = seeded_rng(3);
  auto batch = random_batch(cfg, rng, 4);
  batch[0].label = ClassMask::single(0, 3);
  batch[1].label = ClassMask::single(0, 3);
  batch[2].label = ClassMask::single(2, 3);
  batch[3].label = ClassMask::single(1, 3);
  CHECK(state.cache.M.isZero(0.0));
  train_step(state, batch, 0.01);
  CHECK(state.cache.seen_count[0] == 2);
  CHECK(state.cache.seen_count[1] == 1);
  CHECK(state.cache.seen_count[2] == 1);
  CHECK(state.cache.universum_updates == 4);
  CHECK(!state.cache.M.col(0).isZero(0.0));
}

TEST_CASE("with lambda1 = lambda2 = 0 and no TSA the step is plain classification") {
  RunConfig cfg = tiny_config();
  cfg.lambda1 = 0.0;
  cfg.lambda2 = 0.0;
  cfg.use_tsa = false;
  TrainState state = TrainState::create(cfg);
  Rng rng = seeded_rng(4);
  auto batch = random_batch(cfg, rng, 3);
  LossBreakdown lb = train_step(state, batch, 0.01);
  CHECK(lb.l_d == 0.0);
  CHECK(lb.l_u == 0.0);
  CHECK(lb.total == lb.l_c);
  CHECK(state.cache.M.isZero(0.0));  // cache untouched without TSA
}

TEST_CASE("universum term moves the extractor: lambda2 > 0 changes the update") {
  Rng rng = seeded_rng(5);
  RunConfig base = tiny_config();
  base.lambda1 = 0.0;
  base.lambda2 = 0.0;
  RunConfig with_u = base;
  with_u.lambda2 = 2.0;
  TrainState s0 = TrainState::create(base);
  TrainState s1 = TrainState::create(with_u);
  auto batch = random_batch(base, rng, 3);
  train_step(s0, batch, 0.01);
  train_step(s1, batch, 0.01);
  // identical seeds -> identical init; only the universum gradient differs
  auto p0 = s0.model.params(), p1 = s1.model.params();
  double diff = 0;
  for (size_t i = 0; i < p0.size(); ++i) diff += (p0[i]->value - p1[i]->value).cwiseAbs().sum();
  CHECK(diff > 0.0);
}

TEST_CASE("train over a generated dataset and evaluate every metric") {
  TempDir tmp;
  SyntheticSpec spec;
  spec.num_train = 8;
  spec.num_eval = 4;
  spec.image_size = 32;
  spec.seed = 9;
  generate_synthetic(spec, tmp.path.string());

  RunConfig cfg = tiny_config();
  cfg.epochs = 1;
  auto train_manifest = load_manifest(tmp.path.string(), "train", cfg.num_classes, false);
  std::ostringstream log;
  TrainState state = train(cfg, train_manifest, &log);
  CHECK(state.step == 2);  // 8 images / batch 4
  CHECK(log.str().find("\"l_c\":") != std::string::npos);

  auto eval_manifest = load_manifest(tmp.path.string(), "test", cfg.num_classes, true);
  MetricSummary m = evaluate(state, eval_manifest);
  CHECK(m.num_images == 4);
  REQUIRE(m.pxap_pct);
  REQUIRE(m.piou_pct);
  REQUIRE(m.box_acc_v2_pct);
  REQUIRE(m.top1_pct);
  REQUIRE(m.gt_known_pct);
  CHECK(*m.top1_pct <= *m.gt_known_pct);
  CHECK(*m.pxap_pct >= 0.0);
  CHECK(*m.pxap_pct <= 100.0);
}

TEST_CASE("training twice from the same config is bit-deterministic") {
  TempDir tmp;
  SyntheticSpec spec;
  spec.num_train = 8;
  spec.num_eval = 2;
  spec.image_size = 32;
  spec.seed = 10;
  generate_synthetic(spec, tmp.path.string());
  RunConfig cfg = tiny_config();
  auto manifest = load_manifest(tmp.path.string(), "train", cfg.num_classes, false);

  std::ostringstream log_a, log_b;
  train(cfg, manifest, &log_a);
  train(cfg, manifest, &log_b);
  CHECK(log_a.str() == log_b.str());

  cfg.seed = 321;
  std::ostringstream log_c;
  train(cfg, manifest, &log_c);
  CHECK(log_a.str() != log_c.str());
}

TEST_CASE("augmented training runs for has and cutmix") {
  TempDir tmp;
  SyntheticSpec spec;
  spec.num_train = 8;
  spec.num_eval = 2;
  spec.image_size = 32;
  spec.seed = 11;
  generate_synthetic(spec, tmp.path.string());
  for (auto aug : {Augmentation::kHas, Augmentation::kCutMix}) {
    RunConfig cfg = tiny_config();
    cfg.augmentation = aug;
    auto manifest = load_manifest(tmp.path.string(), "train", cfg.num_classes, false);
    TrainState state = train(cfg, manifest);
    CHECK(state.step == 2);
  }
}

TEST_CASE("checkpoint round-trip preserves evaluation bit-exactly") {
  TempDir tmp;
  SyntheticSpec spec;
  spec.num_train = 8;
  spec.num_eval = 3;
  spec.image_size = 32;
  spec.seed = 12;
  generate_synthetic(spec, tmp.path.string());
  RunConfig cfg = tiny_config();
  cfg.uda_method = UdaMethod::kDann;  // exercise the optional classifier block
  auto manifest = load_manifest(tmp.path.string(), "train", cfg.num_classes, false);
  TrainState state = train(cfg, manifest);

  const auto ck = (tmp.path / "model.ckpt").string();
  save_checkpoint(state, ck);
  TrainState restored = load_checkpoint(ck);
  CHECK(restored.step == state.step);
  CHECK(restored.config == state.config);
  CHECK(restored.cache.M == state.cache.M);

  auto eval_manifest = load_manifest(tmp.path.string(), "test", cfg.num_classes, true);
  auto ra = build_eval_records(state, eval_manifest);
  auto rb = build_eval_records(restored, eval_manifest);
  REQUIRE(ra.size() == rb.size());
  for (size_t i = 0; i < ra.size(); ++i) {
    CHECK(ra[i].predicted_class == rb[i].predicted_class);
    CHECK(ra[i].map == rb[i].map);
  }

  // training continues identically after restore
  Rng rng = seeded_rng(13);
  auto batch = random_batch(cfg, rng, 2);
  LossBreakdown la = train_step(state, batch, 0.01);
  LossBreakdown lbk = train_step(restored, batch, 0.01);
  CHECK(la.total == lbk.total);
}

TEST_CASE("checkpoint loading rejects garbage and truncation") {
  TempDir tmp;
  const auto bad = (tmp.path / "bad.ckpt").string();
  {
    std::ofstream out(bad, std::ios::binary);
    out << "not a checkpoint at all";
  }
  CHECK_THROWS_AS(load_checkpoint(bad), IoError);
  CHECK_THROWS_AS(load_checkpoint((tmp.path / "missing.ckpt").string()), IoError);

  RunConfig cfg = tiny_config();
  TrainState state = TrainState::create(cfg);
  const auto good = (tmp.path / "good.ckpt").string();
  save_checkpoint(state, good);
  // truncate
  const auto trunc = (tmp.path / "trunc.ckpt").string();
  {
    std::ifstream in(good, std::ios::binary);
    std::vector<char> buf(256);
    in.read(buf.data(), 256);
    std::ofstream out(trunc, std::ios::binary);
    out.write(buf.data(), in.gcount());
  }
  CHECK_THROWS_AS(load_checkpoint(trunc), IoError);
}

TEST_CASE("untrained model yields valid metric ranges") {
  TempDir tmp;
  SyntheticSpec spec;
  spec.num_train = 2;
  spec.num_eval = 4;
  spec.image_size = 32;
  spec.seed = 14;
  generate_synthetic(spec, tmp.path.string());
  RunConfig cfg = tiny_config();
  TrainState state = TrainState::create(cfg);
  auto eval_manifest = load_manifest(tmp.path.string(), "test", cfg.num_classes, true);
  MetricSummary m = evaluate(state, eval_manifest);
  REQUIRE(m.pxap_pct);
  CHECK(*m.pxap_pct >= 0.0);
  CHECK(*m.pxap_pct <= 100.0);
  CHECK(m.classification_acc_pct >= 0.0);
}
