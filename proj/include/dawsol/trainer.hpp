// Training loop orchestration: forward through f/g/e, TSA assignment,
// DAL + classification losses, SGD update, cache update; plus evaluation
// and checkpointing.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "dawsol/assigner.hpp"
#include "dawsol/backbone.hpp"
#include "dawsol/config.hpp"
#include "dawsol/data.hpp"
#include "dawsol/losses.hpp"
#include "dawsol/metrics.hpp"

namespace dawsol {

struct TrainState {
  RunConfig config;
  Backbone model;
  AnchorCache cache;
  DomainClassifier domain_classifier;  // initialized only for uda=dann
  Rng rng{0};
  long step = 0;

  static TrainState create(const RunConfig& cfg) {
    cfg.validate();
    TrainState s;
    s.config = cfg;
    s.rng = seeded_rng(cfg.seed);
    s.model = Backbone(cfg, s.rng);
    s.cache = AnchorCache::create(cfg.feature_dim, cfg.num_classes, cfg.epsilon_scale,
                                  cfg.eq7_literal);
    if (cfg.uda_method == UdaMethod::kDann)
      s.domain_classifier = DomainClassifier(cfg.feature_dim, s.rng);
    return s;
  }

  std::vector<Param*> params() {
    auto ps = model.params();
    if (domain_classifier.initialized())
      for (auto* p : domain_classifier.params()) ps.push_back(p);
    return ps;
  }
};

struct TrainItem {
  Matrix image;  // 3 x (H*W)
  ClassMask label;
};

namespace detail {

// Origin of a pooled sample: image index, and the Z column it came from
// (-1 for the image-level feature z itself).
struct PoolRef {
  int image = 0;
  int column = -1;
};

}  // namespace detail

// One optimizer step over a batch. Throws on non-finite losses with a
// per-term diagnostic.
inline LossBreakdown train_step(TrainState& state, const std::vector<TrainItem>& batch,
                                double learning_rate) {
  const RunConfig& cfg = state.config;
  const int B = static_cast<int>(batch.size());
  if (B < 1) throw InputError("train_step: empty batch");
  const int H = cfg.image_size, W = cfg.image_size;
  const int C = cfg.feature_dim;

  for (auto* p : state.params()) p->zero_grad();

  // forward pass per image
  std::vector<Backbone::ForwardCache> caches(B);
  std::vector<PixelFeatureMap> features(B);
  Matrix z_batch(C, B);
  for (int i = 0; i < B; ++i) {
    features[i] = state.model.extract_features(batch[i].image, H, W, &caches[i]);
    z_batch.col(i) = aggregate(features[i]).z;
  }
  Matrix logits = state.model.estimate(z_batch);

  // target sampling (clustering is a detached selection; no gradient flows
  // through the assignment itself)
  std::vector<SubsetSample> subsets(B);
  const int N = features[0].positions();
  for (int i = 0; i < B; ++i) {
    SourceFeature z{z_batch.col(i)};
    if (cfg.use_tsa) {
      subsets[i] = assign_and_sample(features[i], z, state.cache, batch[i].label,
                                     cfg.samples_per_subset, state.rng, cfg.kmeans_max_iters,
                                     cfg.kmeans_tol);
    } else {
      // no TSA: n uniformly sampled target positions stand in for T^t
      subsets[i].true_target =
          sample_without_replacement(N, cfg.samples_per_subset, state.rng);
      subsets[i].cluster_labels.assign(N, 1);
    }
  }

  // pool S u T^f (source-like), T^t (target-like), and T^u across the batch
  std::vector<detail::PoolRef> src_ref, tgt_ref, uni_ref;
  for (int i = 0; i < B; ++i) src_ref.push_back({i, -1});
  for (int i = 0; i < B; ++i) {
    for (int j : subsets[i].fake_target) src_ref.push_back({i, j});
    for (int j : subsets[i].true_target) tgt_ref.push_back({i, j});
    for (int j : subsets[i].universum) uni_ref.push_back({i, j});
  }
  auto gather = [&](const std::vector<detail::PoolRef>& refs) {
    Matrix m(C, static_cast<long>(refs.size()));
    for (size_t c = 0; c < refs.size(); ++c) {
      const auto& ref = refs[c];
      m.col(c) = ref.column < 0 ? z_batch.col(ref.image) : features[ref.image].Z.col(ref.column);
    }
    return m;
  };
  Matrix src = gather(src_ref), tgt = gather(tgt_ref), uni = gather(uni_ref);

  // losses and their gradients
  LossBreakdown lb;
  Matrix d_logits;
  lb.l_c = classification_loss(logits, [&] {
    std::vector<ClassMask> masks;
    masks.reserve(B);
    for (const auto& it : batch) masks.push_back(it.label);
    return masks;
  }(), &d_logits);

  // optional linear warm-up of the adaptation weights
  const double warm = cfg.lambda_warmup_steps > 0
                          ? std::min(1.0, static_cast<double>(state.step + 1) /
                                              cfg.lambda_warmup_steps)
                          : 1.0;
  const double lambda1 = warm * cfg.lambda1;
  const double lambda2 = warm * cfg.lambda2;

  Matrix d_src, d_tgt, d_uni;
  if (lambda1 > 0 && tgt.cols() > 0 && src.cols() > 0) {
    if (cfg.uda_method == UdaMethod::kMmd) {
      const double sigma = cfg.mmd_sigma > 0 ? cfg.mmd_sigma : median_bandwidth(src, tgt);
      lb.l_d = mmd_loss(src, tgt, sigma, cfg.mmd_unbiased, &d_src, &d_tgt);
    } else if (cfg.uda_method == UdaMethod::kDann) {
      lb.l_d = state.domain_classifier.loss(src, tgt, &d_src, &d_tgt);
      // the classifier itself descends on lambda1 * l_d
      for (auto* p : state.domain_classifier.params()) p->grad *= lambda1;
    }
  }
  if (lambda2 > 0 && uni.cols() > 0) lb.l_u = universum_reg(uni, cfg.eq4_literal, &d_uni);
  lb.total = lb.l_c + lambda1 * lb.l_d + lambda2 * lb.l_u;

  if (!std::isfinite(lb.total)) {
    std::ostringstream os;
    os << "train_step: non-finite loss at step " << state.step << " (l_c=" << lb.l_c
       << ", l_d=" << lb.l_d << ", l_u=" << lb.l_u << ")";
    throw DawsolError(os.str());
  }

  // backward: estimator, then route feature-space gradients into each image
  Matrix d_z = state.model.estimate_backward(z_batch, d_logits);  // C x B
  std::vector<Matrix> d_Z(B);
  for (int i = 0; i < B; ++i) d_Z[i] = Matrix::Zero(C, features[i].positions());

  auto route = [&](const std::vector<detail::PoolRef>& refs, const Matrix& grads, double scale) {
    if (grads.size() == 0) return;
    for (size_t c = 0; c < refs.size(); ++c) {
      const auto& ref = refs[c];
      if (ref.column < 0) {
        d_z.col(ref.image) += scale * grads.col(c);
      } else {
        d_Z[ref.image].col(ref.column) += scale * grads.col(c);
      }
    }
  };
  route(src_ref, d_src, lambda1);
  route(tgt_ref, d_tgt, lambda1);
  route(uni_ref, d_uni, lambda2);

  for (int i = 0; i < B; ++i) {
    // GAP backward spreads the z gradient uniformly over positions
    const double inv_n = 1.0 / features[i].positions();
    d_Z[i].colwise() += (inv_n * d_z.col(i)).eval();
    state.model.extract_backward(d_Z[i], caches[i]);
  }
  if (cfg.clip_grad_norm > 0) {
    double sq = 0;
    for (auto* p : state.params()) sq += p->grad.squaredNorm();
    const double norm = std::sqrt(sq);
    if (norm > cfg.clip_grad_norm) {
      const double scale = cfg.clip_grad_norm / norm;
      for (auto* p : state.params()) p->grad *= scale;
    }
  }
  SgdParams sgd{learning_rate, cfg.momentum, cfg.weight_decay};
  for (auto* p : state.params()) p->sgd_step(sgd);

  // cache update with the final cluster centers from this forward pass
  if (cfg.use_tsa) {
    for (int i = 0; i < B; ++i)
      update_cache(state.cache, subsets[i].centers, SourceFeature{z_batch.col(i)},
                   batch[i].label);
  }
  ++state.step;
  return lb;
}

struct MetricSummary {
  std::optional<double> pxap_pct;
  std::optional<double> piou_pct;
  std::optional<double> box_acc_v2_pct;
  std::optional<double> top1_pct;
  std::optional<double> gt_known_pct;
  std::optional<double> best_tau;
  double classification_acc_pct = 0.0;
  int num_images = 0;
};

// Inference path over an eval manifest: per image, the gt-class CAM at image
// resolution plus the image-level class prediction.
inline std::vector<EvalRecord> build_eval_records(const TrainState& state,
                                                  const DatasetManifest& manifest) {
  if (manifest.entries.empty()) throw InputError("evaluate: empty manifest");
  const RunConfig& cfg = state.config;
  std::vector<EvalRecord> records;
  records.reserve(manifest.entries.size());
  for (const auto& e : manifest.entries) {
    Image img = read_ppm_cached(e.image_path);
    if (img.h != cfg.image_size || img.w != cfg.image_size)
      throw InputError("evaluate: image '" + e.image_id + "' has unexpected size");
    PixelFeatureMap fm = state.model.extract_features(img.pixels, img.h, img.w);
    Vector z = aggregate(fm).z;
    Matrix logits = state.model.estimate(z);
    int pred = 0;
    logits.col(0).maxCoeff(&pred);

    ScoreMap cam = state.model.generate_cam(img.pixels, img.h, img.w);
    EvalRecord rec;
    rec.image_id = e.image_id;
    rec.predicted_class = pred;
    rec.gt_class = e.label.dominant_class;
    rec.map.resize(img.h, img.w);
    for (int y = 0; y < img.h; ++y)
      for (int x = 0; x < img.w; ++x) rec.map(y, x) = cam.scores(rec.gt_class, y * img.w + x);
    if (!e.mask_path.empty()) rec.gt_mask = load_gt_mask(e);
    rec.gt_box = e.box;
    records.push_back(std::move(rec));
  }
  return records;
}

// Computes every metric the annotations support.
inline MetricSummary evaluate(const TrainState& state, const DatasetManifest& manifest) {
  const std::vector<EvalRecord> records = build_eval_records(state, manifest);
  MetricSummary out;
  out.num_images = static_cast<int>(records.size());
  int correct = 0;
  for (const auto& r : records)
    if (r.predicted_class == r.gt_class) ++correct;
  out.classification_acc_pct = 100.0 * correct / records.size();
  const auto sweep = ThresholdSweep::uniform(state.config.sweep_steps);
  const bool all_masks = std::all_of(records.begin(), records.end(),
                                     [](const EvalRecord& r) { return r.gt_mask.has_value(); });
  const bool all_boxes = std::all_of(records.begin(), records.end(),
                                     [](const EvalRecord& r) { return r.gt_box.has_value(); });
  if (all_masks) {
    out.pxap_pct = pxap(records, sweep);
    out.piou_pct = piou(records, sweep);
  }
  if (all_boxes) {
    out.box_acc_v2_pct = box_acc_v2(records, sweep);
    auto t = top1_and_gtknown(records, sweep);
    out.top1_pct = t.top1;
    out.gt_known_pct = t.gt_known;
    out.best_tau = t.best_tau;
  }
  return out;
}

// Full training driver: epochs over the train manifest with the configured
// schedule and augmentation, optionally logging one JSON line per step.
inline TrainState train(const RunConfig& cfg, const DatasetManifest& train_manifest,
                        std::ostream* loss_log = nullptr) {
  TrainState state = TrainState::create(cfg);
  const int M = static_cast<int>(train_manifest.entries.size());
  if (M == 0) throw InputError("train: empty training manifest");

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr =
        cfg.learning_rate * std::pow(cfg.lr_decay_factor, epoch / cfg.lr_decay_epochs);
    // deterministic shuffle from the state rng
    std::vector<int> order(M);
    for (int i = 0; i < M; ++i) order[i] = i;
    for (int i = M - 1; i > 0; --i)
      std::swap(order[i], order[static_cast<int>(state.rng.uniform_int(0, i))]);

    for (int start = 0; start < M; start += cfg.batch_size) {
      const int bsz = std::min(cfg.batch_size, M - start);
      std::vector<TrainItem> batch;
      batch.reserve(bsz);
      std::vector<Image> raw(bsz);
      for (int b = 0; b < bsz; ++b)
        raw[b] = read_ppm_cached(train_manifest.entries[order[start + b]].image_path);
      for (int b = 0; b < bsz; ++b) {
        const auto& entry = train_manifest.entries[order[start + b]];
        TrainItem item;
        item.label = entry.label;
        switch (cfg.augmentation) {
          case Augmentation::kNone:
            item.image = raw[b].pixels;
            break;
          case Augmentation::kHas: {
            item.image = has_augment(raw[b], cfg.has_grid, cfg.has_hide_prob, state.rng).pixels;
            break;
          }
          case Augmentation::kCutMix: {
            const int other = static_cast<int>(state.rng.uniform_int(0, bsz - 1));
            const auto& oe = train_manifest.entries[order[start + other]];
            auto mixed = cutmix_augment(raw[b], entry.label.y, raw[other], oe.label.y,
                                        cfg.cutmix_alpha, state.rng);
            item.image = mixed.image.pixels;
            item.label = ClassMask::from_vector(mixed.label);
            break;
          }
        }
        batch.push_back(std::move(item));
      }
      LossBreakdown lb = train_step(state, batch, lr);
      if (loss_log) {
        *loss_log << std::setprecision(17) << "{\"step\":" << state.step << ",\"l_c\":" << lb.l_c
                  << ",\"l_d\":" << lb.l_d << ",\"l_u\":" << lb.l_u << ",\"total\":" << lb.total
                  << "}\n";
      }
    }
  }
  return state;
}

constexpr char kCheckpointMagic[8] = {'D', 'A', 'W', 'S', 'O', 'L', 'C', 'K'};
constexpr std::uint32_t kCheckpointVersion = 1;

inline void save_checkpoint(const TrainState& state, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint '" + path + "'");
  out.write(kCheckpointMagic, sizeof kCheckpointMagic);
  io::write_u32(out, kCheckpointVersion);
  io::write_string(out, serialize_config(state.config));
  state.model.save(out);
  state.cache.save(out);
  io::write_u32(out, state.domain_classifier.initialized() ? 1 : 0);
  if (state.domain_classifier.initialized()) state.domain_classifier.save(out);
  io::write_i64(out, state.step);
  io::write_string(out, state.rng.state());
  if (!out) throw IoError("failed writing checkpoint '" + path + "'");
}

inline TrainState load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path + "'");
  char magic[8];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0)
    throw IoError("'" + path + "': not a checkpoint file");
  const auto version = io::read_u32(in);
  if (version != kCheckpointVersion)
    throw IoError("'" + path + "': checkpoint version " + std::to_string(version) +
                  " unsupported (expected " + std::to_string(kCheckpointVersion) + ")");
  TrainState state;
  std::istringstream cfg_in(io::read_string(in));
  state.config = parse_config(cfg_in);
  state.model.load(in);
  state.cache = AnchorCache::load(in);
  if (io::read_u32(in) != 0) state.domain_classifier.load(in);
  state.step = io::read_i64(in);
  state.rng.restore(io::read_string(in));
  if (!in) throw IoError("'" + path + "': truncated checkpoint");
  return state;
}

}  // namespace dawsol
