// dawsol command-line entry points: dataset generation, training,
// evaluation, ablation runs, cache dumps, and localization overlays.

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "dawsol/data.hpp"
#include "dawsol/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

dawsol::RunConfig make_config(const std::string& config_path,
                              const std::vector<std::string>& overrides,
                              std::optional<std::int64_t> seed) {
  dawsol::RunConfig cfg;
  if (!config_path.empty()) cfg = dawsol::load_config(config_path);
  for (const auto& ov : overrides) {
    auto eq = ov.find('=');
    if (eq == std::string::npos)
      throw dawsol::ConfigError("override '" + ov + "' is not key=value");
    dawsol::apply_config_entry(cfg, ov.substr(0, eq), ov.substr(eq + 1));
  }
  if (seed) cfg.seed = *seed;
  cfg.validate();
  return cfg;
}

json summary_to_json(const dawsol::MetricSummary& s) {
  json j;
  j["num_images"] = s.num_images;
  j["classification_acc"] = s.classification_acc_pct;
  if (s.pxap_pct) j["pxap"] = *s.pxap_pct;
  if (s.piou_pct) j["piou"] = *s.piou_pct;
  if (s.box_acc_v2_pct) j["box_acc_v2"] = *s.box_acc_v2_pct;
  if (s.top1_pct) j["top1_loc"] = *s.top1_pct;
  if (s.gt_known_pct) j["gt_known"] = *s.gt_known_pct;
  if (s.best_tau) j["best_tau"] = *s.best_tau;
  return j;
}

// Fixed five-color heat ramp (black-blue-cyan-yellow-red) so overlay tests
// are byte-stable.
void heat_color(double v, double rgb[3]) {
  static const double stops[5][3] = {
      {0.0, 0.0, 0.0}, {0.0, 0.0, 1.0}, {0.0, 1.0, 1.0}, {1.0, 1.0, 0.0}, {1.0, 0.0, 0.0}};
  v = std::clamp(v, 0.0, 1.0) * 4.0;
  const int i = std::min(static_cast<int>(v), 3);
  const double f = v - i;
  for (int c = 0; c < 3; ++c) rgb[c] = stops[i][c] * (1 - f) + stops[i + 1][c] * f;
}

void run_visualize(const dawsol::TrainState& state, const std::string& images_dir,
                   const std::string& out_dir, double tau) {
  fs::create_directories(out_dir);
  std::vector<fs::path> files;
  for (const auto& p : fs::directory_iterator(images_dir))
    if (p.path().extension() == ".ppm") files.push_back(p.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw dawsol::IoError("no .ppm images in '" + images_dir + "'");
  for (const auto& f : files) {
    dawsol::Image img = dawsol::read_ppm(f.string());
    dawsol::ScoreMap cam = state.model.generate_cam(img.pixels, img.h, img.w);
    dawsol::PixelFeatureMap fm = state.model.extract_features(img.pixels, img.h, img.w);
    dawsol::Matrix logits = state.model.estimate(dawsol::aggregate(fm).z);
    int pred = 0;
    logits.col(0).maxCoeff(&pred);

    dawsol::Matrix map(img.h, img.w);
    for (int y = 0; y < img.h; ++y)
      for (int x = 0; x < img.w; ++x) map(y, x) = cam.scores(pred, y * img.w + x);

    dawsol::Image overlay = img;
    const double alpha = 0.5;
    for (int y = 0; y < img.h; ++y) {
      for (int x = 0; x < img.w; ++x) {
        double rgb[3];
        heat_color(map(y, x), rgb);
        for (int c = 0; c < 3; ++c) {
          auto& px = overlay.pixels(c, static_cast<long>(y) * img.w + x);
          px = (1 - alpha) * px + alpha * rgb[c];
        }
      }
    }
    auto box = dawsol::mask_to_box(dawsol::threshold_map(map, tau));
    if (box) {
      auto draw = [&](int y, int x) {
        if (y < 0 || y >= img.h || x < 0 || x >= img.w) return;
        overlay.pixels(0, static_cast<long>(y) * img.w + x) = 1.0;
        overlay.pixels(1, static_cast<long>(y) * img.w + x) = 0.0;
        overlay.pixels(2, static_cast<long>(y) * img.w + x) = 0.0;
      };
      for (int x = box->x0; x <= box->x1; ++x) {
        draw(box->y0, x);
        draw(box->y1, x);
      }
      for (int y = box->y0; y <= box->y1; ++y) {
        draw(y, box->x0);
        draw(y, box->x1);
      }
    }
    const std::string out = (fs::path(out_dir) / (f.stem().string() + "_overlay.ppm")).string();
    dawsol::write_ppm(overlay, out);
  }
}

struct AblationRow {
  std::string name;
  double lambda1, lambda2;
  bool tsa;
};

void run_ablate(dawsol::RunConfig base, const std::string& data_dir, const std::string& out_csv) {
  const std::vector<AblationRow> rows = {
      {"l_c_only", 0.0, 0.0, false},
      {"l_c+l_d", base.lambda1, 0.0, false},
      {"l_c+l_d+tsa", base.lambda1, 0.0, true},
      {"l_c+l_u+tsa", 0.0, base.lambda2, true},
      {"full", base.lambda1, base.lambda2, true},
  };
  auto train_manifest = dawsol::load_manifest(data_dir, "train", base.num_classes, false);
  auto test_manifest = dawsol::load_manifest(data_dir, "test", base.num_classes, true);
  std::ofstream csv(out_csv);
  if (!csv) throw dawsol::IoError("cannot write '" + out_csv + "'");
  csv << "row,lambda1,lambda2,tsa,piou,pxap,classification_acc\n";
  for (const auto& row : rows) {
    dawsol::RunConfig cfg = base;
    cfg.lambda1 = row.lambda1;
    cfg.lambda2 = row.lambda2;
    cfg.use_tsa = row.tsa;
    if (cfg.lambda1 == 0.0 && cfg.uda_method == dawsol::UdaMethod::kNone)
      cfg.uda_method = dawsol::UdaMethod::kMmd;
    std::cerr << "[ablate] training row '" << row.name << "'...\n";
    dawsol::TrainState state = dawsol::train(cfg, train_manifest);
    auto summary = dawsol::evaluate(state, test_manifest);
    csv << row.name << "," << cfg.lambda1 << "," << cfg.lambda2 << "," << (row.tsa ? 1 : 0) << ","
        << (summary.piou_pct ? *summary.piou_pct : -1.0) << ","
        << (summary.pxap_pct ? *summary.pxap_pct : -1.0) << "," << summary.classification_acc_pct
        << "\n";
    csv.flush();
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"DA-WSOL: weakly supervised object localization via domain adaptation"};
  app.require_subcommand(1);

  std::string config_path, data_dir, out_dir, checkpoint_path, images_dir, split = "test";
  std::vector<std::string> overrides;
  std::optional<std::int64_t> seed;
  double tau = 0.5;

  // generate-synthetic
  auto* gen = app.add_subcommand("generate-synthetic", "materialize the synthetic shapes dataset");
  dawsol::SyntheticSpec spec;
  gen->add_option("--out", out_dir, "output dataset root")->required();
  gen->add_option("--num-train", spec.num_train, "training images");
  gen->add_option("--num-eval", spec.num_eval, "eval images");
  gen->add_option("--num-classes", spec.num_classes, "shape classes (1..3)");
  gen->add_option("--image-size", spec.image_size, "image side length");
  gen->add_option("--noise", spec.noise_level, "background texture noise level");
  gen->add_option("--scale-min", spec.scale_min, "min object diameter fraction");
  gen->add_option("--scale-max", spec.scale_max, "max object diameter fraction");
  gen->add_option("--seed", spec.seed, "generator seed");

  // train
  auto* tr = app.add_subcommand("train", "train a model");
  tr->add_option("--config", config_path, "config file (key = value lines)");
  tr->add_option("--data", data_dir, "dataset root")->required();
  tr->add_option("--out", out_dir, "output directory")->required();
  tr->add_option("--set", overrides, "config override key=value (repeatable)");
  tr->add_option("--seed", seed, "override config seed");

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "evaluate a checkpoint");
  ev->add_option("--checkpoint", checkpoint_path, "checkpoint file")->required();
  ev->add_option("--data", data_dir, "dataset root")->required();
  ev->add_option("--split", split, "dataset split (default: test)");
  ev->add_option("--out", out_dir, "output directory for summary.json + curves.csv");

  // visualize
  auto* vis = app.add_subcommand("visualize", "write heatmap overlays with extracted boxes");
  vis->add_option("--checkpoint", checkpoint_path, "checkpoint file")->required();
  vis->add_option("--images", images_dir, "directory of .ppm images")->required();
  vis->add_option("--out", out_dir, "output directory")->required();
  vis->add_option("--tau", tau, "box extraction threshold (default 0.5)");

  // ablate
  auto* ab = app.add_subcommand("ablate", "run the loss/TSA ablation grid");
  ab->add_option("--config", config_path, "config file");
  ab->add_option("--data", data_dir, "dataset root")->required();
  ab->add_option("--out", out_dir, "output directory")->required();
  ab->add_option("--set", overrides, "config override key=value (repeatable)");
  ab->add_option("--seed", seed, "override config seed");

  // dump-cache
  auto* dc = app.add_subcommand("dump-cache", "dump the anchor cache as CSV to stdout");
  dc->add_option("--checkpoint", checkpoint_path, "checkpoint file")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      dawsol::generate_synthetic(spec, out_dir);
      json j{{"dataset_root", out_dir},
             {"num_train", spec.num_train},
             {"num_eval", spec.num_eval},
             {"seed", spec.seed}};
      std::cout << j.dump(2) << "\n";
    } else if (tr->parsed()) {
      dawsol::RunConfig cfg = make_config(config_path, overrides, seed);
      fs::create_directories(out_dir);
      auto manifest = dawsol::load_manifest(data_dir, "train", cfg.num_classes, false);
      std::ofstream log(fs::path(out_dir) / "loss_log.jsonl");
      dawsol::TrainState state = dawsol::train(cfg, manifest, &log);
      dawsol::save_config(cfg, (fs::path(out_dir) / "config.cfg").string());
      dawsol::save_checkpoint(state, (fs::path(out_dir) / "checkpoint.bin").string());
      json j{{"steps", state.step}, {"checkpoint", (fs::path(out_dir) / "checkpoint.bin").string()}};
      std::cout << j.dump(2) << "\n";
    } else if (ev->parsed()) {
      dawsol::TrainState state = dawsol::load_checkpoint(checkpoint_path);
      auto manifest = dawsol::load_manifest(data_dir, split, state.config.num_classes, true);
      auto summary = dawsol::evaluate(state, manifest);
      json j = summary_to_json(summary);
      if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        std::ofstream(fs::path(out_dir) / "summary.json") << j.dump(2) << "\n";
        auto records = dawsol::build_eval_records(state, manifest);
        const auto sweep = dawsol::ThresholdSweep::uniform(state.config.sweep_steps);
        std::ofstream curves(fs::path(out_dir) / "curves.csv");
        if (manifest.has_masks()) {
          curves << "tau,precision,recall\n";
          for (const auto& p : dawsol::pixel_pr_curve(records, sweep))
            curves << p.tau << "," << p.precision << "," << p.recall << "\n";
        }
      }
      std::cout << j.dump(2) << "\n";
    } else if (vis->parsed()) {
      dawsol::TrainState state = dawsol::load_checkpoint(checkpoint_path);
      run_visualize(state, images_dir, out_dir, tau);
      std::cout << json{{"out_dir", out_dir}}.dump(2) << "\n";
    } else if (ab->parsed()) {
      dawsol::RunConfig cfg = make_config(config_path, overrides, seed);
      fs::create_directories(out_dir);
      const std::string csv = (fs::path(out_dir) / "ablation.csv").string();
      run_ablate(cfg, data_dir, csv);
      std::cout << json{{"csv", csv}}.dump(2) << "\n";
    } else if (dc->parsed()) {
      dawsol::TrainState state = dawsol::load_checkpoint(checkpoint_path);
      const auto& cache = state.cache;
      std::cout << "seen_count";
      for (long v : cache.seen_count) std::cout << "," << v;
      std::cout << "\n";
      std::cout << "channel,universum";
      for (int k = 0; k < cache.num_classes(); ++k) std::cout << ",class_" << k;
      std::cout << "\n";
      std::cout.precision(17);
      for (int c = 0; c < cache.feature_dim(); ++c) {
        std::cout << c;
        for (int j = 0; j < cache.M.cols(); ++j) std::cout << "," << cache.M(c, j);
        std::cout << "\n";
      }
    }
  } catch (const dawsol::ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
