// Run configuration: a flat key=value text file, one key per field.
// Unknown keys and invariant violations are hard errors.
#pragma once

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "dawsol/types.hpp"

namespace dawsol {

enum class UdaMethod { kMmd, kDann, kNone };
enum class Augmentation { kNone, kHas, kCutMix };

inline std::string to_string(UdaMethod m) {
  switch (m) {
    case UdaMethod::kMmd: return "mmd";
    case UdaMethod::kDann: return "dann";
    case UdaMethod::kNone: return "none";
  }
  return "?";
}

inline std::string to_string(Augmentation a) {
  switch (a) {
    case Augmentation::kNone: return "none";
    case Augmentation::kHas: return "has";
    case Augmentation::kCutMix: return "cutmix";
  }
  return "?";
}

struct RunConfig {
  // problem shape
  int num_classes = 3;        // K
  int feature_dim = 64;       // C, channels of the final feature stage
  int image_size = 224;       // H = W
  int backbone_width = 16;    // channels of the first backbone stage

  // DA-WSOL hyper-parameters
  int samples_per_subset = 32;  // n
  double lambda1 = 0.3;
  double lambda2 = 2.0;
  int lambda_warmup_steps = 0;  // linear ramp of lambda1/lambda2 over this many steps
  UdaMethod uda_method = UdaMethod::kMmd;
  bool use_tsa = true;
  double epsilon_scale = 1e-3;   // anchor init offset scale
  double mmd_sigma = 0.0;        // <= 0: median heuristic per call
  bool mmd_unbiased = false;     // drop self-pairs in the MMD estimator
  bool eq4_literal = false;      // Universum: raw L1 sum instead of mean
  bool eq7_literal = false;      // cache update: literal weighting
  int kmeans_max_iters = 50;
  double kmeans_tol = 1e-4;

  // training schedule
  Augmentation augmentation = Augmentation::kNone;
  std::int64_t seed = 0;
  int batch_size = 32;
  int epochs = 8;
  double learning_rate = 0.05;
  int lr_decay_epochs = 3;       // divide lr every this many epochs
  double lr_decay_factor = 0.1;
  double momentum = 0.9;
  double clip_grad_norm = 0.0;  // global gradient-norm clip; <= 0 disables
  double weight_decay = 1e-4;

  // augmentation knobs
  int has_grid = 4;
  double has_hide_prob = 0.5;
  double cutmix_alpha = 1.0;

  // evaluation
  int sweep_steps = 101;  // thresholds 0.00, 0.01, ..., 1.00

  void validate() const {
    auto fail = [](const std::string& msg) { throw ConfigError("config validation: " + msg); };
    if (num_classes < 1) fail("num_classes must be >= 1");
    if (feature_dim < 1) fail("feature_dim must be >= 1");
    if (image_size < 16 || image_size % 16 != 0)
      fail("image_size must be a positive multiple of the backbone stride (16)");
    if (backbone_width < 1) fail("backbone_width must be >= 1");
    if (samples_per_subset < 1) fail("samples_per_subset must be >= 1");
    if (lambda1 < 0) fail("lambda1 must be >= 0");
    if (lambda2 < 0) fail("lambda2 must be >= 0");
    if (lambda_warmup_steps < 0) fail("lambda_warmup_steps must be >= 0");
    if (uda_method == UdaMethod::kNone && lambda1 > 0)
      fail("uda_method=none is inconsistent with lambda1 > 0");
    if (epsilon_scale <= 0) fail("epsilon_scale must be > 0");
    if (kmeans_max_iters < 1) fail("kmeans_max_iters must be >= 1");
    if (kmeans_tol <= 0) fail("kmeans_tol must be > 0");
    if (batch_size < 1) fail("batch_size must be >= 1");
    if (epochs < 0) fail("epochs must be >= 0");
    if (learning_rate <= 0) fail("learning_rate must be > 0");
    if (lr_decay_epochs < 1) fail("lr_decay_epochs must be >= 1");
    if (lr_decay_factor <= 0 || lr_decay_factor > 1) fail("lr_decay_factor must be in (0, 1]");
    if (momentum < 0 || momentum >= 1) fail("momentum must be in [0, 1)");
    if (weight_decay < 0) fail("weight_decay must be >= 0");
    if (has_grid < 1 || image_size % has_grid != 0) fail("has_grid must divide image_size");
    if (has_hide_prob < 0 || has_hide_prob > 1) fail("has_hide_prob must be in [0, 1]");
    if (cutmix_alpha <= 0) fail("cutmix_alpha must be > 0");
    if (sweep_steps < 2) fail("sweep_steps must be >= 2");
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline bool parse_bool(const std::string& v, const std::string& key) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("key '" + key + "': expected true/false, got '" + v + "'");
}

template <typename T>
inline T parse_num(const std::string& v, const std::string& key) {
  if (v.empty()) throw ConfigError("key '" + key + "': empty value");
  std::istringstream is(v);
  T out;
  char c;
  if (!(is >> out) || (is >> c))
    throw ConfigError("key '" + key + "': bad numeric value '" + v + "'");
  return out;
}

}  // namespace detail

// Applies one key=value pair. Throws ConfigError on unknown key or bad value.
inline void apply_config_entry(RunConfig& c, const std::string& key, const std::string& value) {
  using detail::parse_bool;
  using detail::parse_num;
  if (key == "num_classes") c.num_classes = parse_num<int>(value, key);
  else if (key == "feature_dim") c.feature_dim = parse_num<int>(value, key);
  else if (key == "image_size") c.image_size = parse_num<int>(value, key);
  else if (key == "backbone_width") c.backbone_width = parse_num<int>(value, key);
  else if (key == "samples_per_subset") c.samples_per_subset = parse_num<int>(value, key);
  else if (key == "lambda1") c.lambda1 = parse_num<double>(value, key);
  else if (key == "lambda2") c.lambda2 = parse_num<double>(value, key);
  else if (key == "lambda_warmup_steps") c.lambda_warmup_steps = parse_num<int>(value, key);
  else if (key == "uda_method") {
    if (value == "mmd") c.uda_method = UdaMethod::kMmd;
    else if (value == "dann") c.uda_method = UdaMethod::kDann;
    else if (value == "none") c.uda_method = UdaMethod::kNone;
    else throw ConfigError("key 'uda_method': expected mmd|dann|none, got '" + value + "'");
  } else if (key == "use_tsa") c.use_tsa = parse_bool(value, key);
  else if (key == "epsilon_scale") c.epsilon_scale = parse_num<double>(value, key);
  else if (key == "mmd_sigma") c.mmd_sigma = parse_num<double>(value, key);
  else if (key == "mmd_unbiased") c.mmd_unbiased = parse_bool(value, key);
  else if (key == "eq4_literal") c.eq4_literal = parse_bool(value, key);
  else if (key == "eq7_literal") c.eq7_literal = parse_bool(value, key);
  else if (key == "kmeans_max_iters") c.kmeans_max_iters = parse_num<int>(value, key);
  else if (key == "kmeans_tol") c.kmeans_tol = parse_num<double>(value, key);
  else if (key == "augmentation") {
    if (value == "none") c.augmentation = Augmentation::kNone;
    else if (value == "has") c.augmentation = Augmentation::kHas;
    else if (value == "cutmix") c.augmentation = Augmentation::kCutMix;
    else throw ConfigError("key 'augmentation': expected none|has|cutmix, got '" + value + "'");
  } else if (key == "seed") c.seed = parse_num<std::int64_t>(value, key);
  else if (key == "batch_size") c.batch_size = parse_num<int>(value, key);
  else if (key == "epochs") c.epochs = parse_num<int>(value, key);
  else if (key == "learning_rate") c.learning_rate = parse_num<double>(value, key);
  else if (key == "lr_decay_epochs") c.lr_decay_epochs = parse_num<int>(value, key);
  else if (key == "lr_decay_factor") c.lr_decay_factor = parse_num<double>(value, key);
  else if (key == "momentum") c.momentum = parse_num<double>(value, key);
  else if (key == "clip_grad_norm") c.clip_grad_norm = parse_num<double>(value, key);
  else if (key == "weight_decay") c.weight_decay = parse_num<double>(value, key);
  else if (key == "has_grid") c.has_grid = parse_num<int>(value, key);
  else if (key == "has_hide_prob") c.has_hide_prob = parse_num<double>(value, key);
  else if (key == "cutmix_alpha") c.cutmix_alpha = parse_num<double>(value, key);
  else if (key == "sweep_steps") c.sweep_steps = parse_num<int>(value, key);
  else throw ConfigError("unknown config key '" + key + "'");
}

inline RunConfig parse_config(std::istream& in) {
  RunConfig c;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string s = detail::trim(line);
    if (s.empty() || s[0] == '#') continue;
    auto eq = s.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(lineno) + ": expected key=value, got '" + s + "'");
    std::string key = detail::trim(s.substr(0, eq));
    std::string value = detail::trim(s.substr(eq + 1));
    try {
      apply_config_entry(c, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  c.validate();
  return c;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  return parse_config(in);
}

inline std::string serialize_config(const RunConfig& c) {
  std::ostringstream os;
  os.precision(17);
  os << "num_classes = " << c.num_classes << "\n"
     << "feature_dim = " << c.feature_dim << "\n"
     << "image_size = " << c.image_size << "\n"
     << "backbone_width = " << c.backbone_width << "\n"
     << "samples_per_subset = " << c.samples_per_subset << "\n"
     << "lambda1 = " << c.lambda1 << "\n"
     << "lambda2 = " << c.lambda2 << "\n"
     << "lambda_warmup_steps = " << c.lambda_warmup_steps << "\n"
     << "uda_method = " << to_string(c.uda_method) << "\n"
     << "use_tsa = " << (c.use_tsa ? "true" : "false") << "\n"
     << "epsilon_scale = " << c.epsilon_scale << "\n"
     << "mmd_sigma = " << c.mmd_sigma << "\n"
     << "mmd_unbiased = " << (c.mmd_unbiased ? "true" : "false") << "\n"
     << "eq4_literal = " << (c.eq4_literal ? "true" : "false") << "\n"
     << "eq7_literal = " << (c.eq7_literal ? "true" : "false") << "\n"
     << "kmeans_max_iters = " << c.kmeans_max_iters << "\n"
     << "kmeans_tol = " << c.kmeans_tol << "\n"
     << "augmentation = " << to_string(c.augmentation) << "\n"
     << "seed = " << c.seed << "\n"
     << "batch_size = " << c.batch_size << "\n"
     << "epochs = " << c.epochs << "\n"
     << "learning_rate = " << c.learning_rate << "\n"
     << "lr_decay_epochs = " << c.lr_decay_epochs << "\n"
     << "lr_decay_factor = " << c.lr_decay_factor << "\n"
     << "momentum = " << c.momentum << "\n"
     << "clip_grad_norm = " << c.clip_grad_norm << "\n"
     << "weight_decay = " << c.weight_decay << "\n"
     << "has_grid = " << c.has_grid << "\n"
     << "has_hide_prob = " << c.has_hide_prob << "\n"
     << "cutmix_alpha = " << c.cutmix_alpha << "\n"
     << "sweep_steps = " << c.sweep_steps << "\n";
  return os.str();
}

inline void save_config(const RunConfig& c, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write config file '" + path + "'");
  out << serialize_config(c);
}

inline bool operator==(const RunConfig& a, const RunConfig& b) {
  return serialize_config(a) == serialize_config(b);
}

}  // namespace dawsol
