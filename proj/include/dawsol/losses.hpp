// Training objectives: classification cross-entropy, Gaussian-kernel MMD,
// Universum L1 regularization, DAL composition, and the gradient-reversal
// adversarial (DANN) plugin. All set-valued inputs are C x m matrices whose
// columns are samples.
#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "dawsol/nn.hpp"
#include "dawsol/serialize.hpp"
#include "dawsol/types.hpp"

namespace dawsol {

struct LossBreakdown {
  double l_c = 0.0;
  double l_d = 0.0;
  double l_u = 0.0;
  double total = 0.0;
};

// Mean softmax cross-entropy over batch columns. Labels are the (possibly
// mixed) per-image weight vectors; one-hot labels reduce to plain CE against
// the dominant class. d_scores (if given) receives dL/dscores.
inline double classification_loss(const Matrix& scores, const std::vector<ClassMask>& masks,
                                  Matrix* d_scores = nullptr) {
  const int B = static_cast<int>(scores.cols());
  if (B < 1 || static_cast<int>(masks.size()) != B)
    throw InputError("classification_loss: batch size mismatch");
  if (d_scores) *d_scores = Matrix::Zero(scores.rows(), scores.cols());
  double loss = 0.0;
  for (int i = 0; i < B; ++i) {
    Vector logits = scores.col(i);
    const double mx = logits.maxCoeff();
    Vector ex = (logits.array() - mx).exp();
    const double Z = ex.sum();
    Vector p = ex / Z;
    Vector w = masks[i].y / masks[i].y.sum();
    for (int k = 0; k < logits.size(); ++k)
      if (w[k] > 0) loss -= w[k] * (logits[k] - mx - std::log(Z));
    if (d_scores) d_scores->col(i) = (p - w) / static_cast<double>(B);
  }
  return loss / B;
}

inline double gaussian_kernel(const Vector& a, const Vector& b, double sigma) {
  if (a.size() != b.size()) throw InputError("gaussian_kernel: dim mismatch");
  if (sigma <= 0) throw InputError("gaussian_kernel: sigma must be > 0");
  return std::exp(-(a - b).squaredNorm() / (2.0 * sigma * sigma));
}

// Median heuristic: median pairwise Euclidean distance over the columns of
// the stacked sets; falls back to 1 when all points coincide.
inline double median_bandwidth(const Matrix& a, const Matrix& b) {
  std::vector<double> d;
  const int m = static_cast<int>(a.cols()), n = static_cast<int>(b.cols());
  auto col = [&](int i) { return i < m ? a.col(i) : b.col(i - m); };
  const int total = m + n;
  for (int i = 0; i < total; ++i)
    for (int j = i + 1; j < total; ++j) d.push_back((col(i) - col(j)).norm());
  if (d.empty()) return 1.0;
  std::nth_element(d.begin(), d.begin() + d.size() / 2, d.end());
  const double med = d[d.size() / 2];
  return med > 1e-12 ? med : 1.0;
}

// Squared MMD between the two sets (biased V-statistic, self-pairs included;
// `unbiased` drops the i=j terms of the within-set sums). Gradients with
// respect to every column are written to d_a / d_b when non-null; sigma is
// treated as a constant.
inline double mmd_loss(const Matrix& a, const Matrix& b, double sigma, bool unbiased = false,
                       Matrix* d_a = nullptr, Matrix* d_b = nullptr) {
  const int m = static_cast<int>(a.cols()), n = static_cast<int>(b.cols());
  if (m == 0 || n == 0) throw InputError("mmd_loss: both sets must be non-empty");
  const double inv_s2 = 1.0 / (sigma * sigma);
  if (d_a) *d_a = Matrix::Zero(a.rows(), m);
  if (d_b) *d_b = Matrix::Zero(b.rows(), n);

  double within_a = 0.0, within_b = 0.0, cross = 0.0;
  const double wa_denom = unbiased ? static_cast<double>(m) * std::max(m - 1, 1)
                                   : static_cast<double>(m) * m;
  const double wb_denom = unbiased ? static_cast<double>(n) * std::max(n - 1, 1)
                                   : static_cast<double>(n) * n;
  const double cr_denom = static_cast<double>(m) * n;

  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < m; ++j) {
      if (unbiased && i == j) continue;
      const double h = gaussian_kernel(a.col(i), a.col(j), sigma);
      within_a += h;
      if (d_a && i != j) {
        // a_i appears as first argument in (i,j) and as second in (j,i);
        // both contribute the same term, hence the factor 2.
        d_a->col(i) += (2.0 * h * inv_s2 / wa_denom) * (a.col(j) - a.col(i));
      }
    }
  }
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (unbiased && i == j) continue;
      const double h = gaussian_kernel(b.col(i), b.col(j), sigma);
      within_b += h;
      if (d_b && i != j) d_b->col(i) += (2.0 * h * inv_s2 / wb_denom) * (b.col(j) - b.col(i));
    }
  }
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) {
      const double h = gaussian_kernel(a.col(i), b.col(j), sigma);
      cross += h;
      if (d_a) d_a->col(i) -= (2.0 * h * inv_s2 / cr_denom) * (b.col(j) - a.col(i));
      if (d_b) d_b->col(j) -= (2.0 * h * inv_s2 / cr_denom) * (a.col(i) - b.col(j));
    }
  }
  return within_a / wa_denom + within_b / wb_denom - 2.0 * cross / cr_denom;
}

// Universum regularization. Default: mean over samples of per-vector L1/C
// (scale-stable); literal mode: plain sum of L1 norms. Empty set -> 0.
// d_samples receives the (sub)gradient.
inline double universum_reg(const Matrix& samples, bool literal = false,
                            Matrix* d_samples = nullptr) {
  const int m = static_cast<int>(samples.cols());
  if (d_samples) *d_samples = Matrix::Zero(samples.rows(), std::max(m, 0));
  if (m == 0) return 0.0;
  const double scale = literal ? 1.0 : 1.0 / (static_cast<double>(m) * samples.rows());
  double loss = 0.0;
  for (int i = 0; i < m; ++i) {
    loss += samples.col(i).lpNorm<1>();
    if (d_samples)
      d_samples->col(i) = samples.col(i).unaryExpr([](double v) {
        return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0);
      });
  }
  if (d_samples) *d_samples *= scale;
  return loss * scale;
}

class DomainClassifier;
inline double dann_domain_loss(DomainClassifier& dc, const Matrix& a, const Matrix& b,
                               Matrix* d_a, Matrix* d_b);

// Two-layer domain classifier used by the DANN plugin; the reversal happens
// where its input gradient flows back into the feature extractor.
class DomainClassifier {
 public:
  DomainClassifier() = default;
  DomainClassifier(int feature_dim, Rng& rng)
      : hidden_(feature_dim, feature_dim, rng), head_(feature_dim, 1, rng) {}

  bool initialized() const { return hidden_.in_dim() > 0; }
  int feature_dim() const { return hidden_.in_dim(); }

  // Binary domain cross-entropy: columns of `a` carry domain label 1,
  // columns of `b` label 0. d_a/d_b receive the *reversed* feature gradients
  // (already multiplied by -1); parameter grads accumulate un-reversed so a
  // plain descent step trains the classifier adversarially.
  double loss(const Matrix& a, const Matrix& b, Matrix* d_a = nullptr, Matrix* d_b = nullptr) {
    const int m = static_cast<int>(a.cols()), n = static_cast<int>(b.cols());
    if (m == 0 || n == 0) throw InputError("DomainClassifier: both sets must be non-empty");
    Matrix in(a.rows(), m + n);
    in.leftCols(m) = a;
    in.rightCols(n) = b;
    Matrix h_pre = hidden_.forward(in);
    Matrix h = h_pre.cwiseMax(0.0);
    Matrix logits = head_.forward(h);  // 1 x (m+n)
    const double inv = 1.0 / (m + n);

    double loss = 0.0;
    Matrix d_logits(1, m + n);
    for (int i = 0; i < m + n; ++i) {
      const double t = i < m ? 1.0 : 0.0;
      const double x = logits(0, i);
      // numerically stable BCE with logits
      loss += std::max(x, 0.0) - x * t + std::log1p(std::exp(-std::abs(x)));
      const double p = 1.0 / (1.0 + std::exp(-x));
      d_logits(0, i) = (p - t) * inv;
    }
    loss *= inv;

    if (d_a || d_b) {
      Matrix d_h = head_.backward(h, d_logits);
      Matrix d_hpre = (h_pre.array() > 0.0).select(d_h, Matrix::Zero(d_h.rows(), d_h.cols()));
      Matrix d_in = hidden_.backward(in, d_hpre);
      GradientReversal grl;
      d_in = grl.backward(d_in);
      if (d_a) *d_a = d_in.leftCols(m);
      if (d_b) *d_b = d_in.rightCols(n);
    }
    return loss;
  }

  std::vector<Param*> params() {
    return {&hidden_.weight(), &hidden_.bias(), &head_.weight(), &head_.bias()};
  }

  void save(std::ostream& os) const {
    io::write_u32(os, hidden_.in_dim());
    io::write_matrix(os, hidden_.weight().value);
    io::write_matrix(os, hidden_.weight().velocity);
    io::write_matrix(os, hidden_.bias().value);
    io::write_matrix(os, hidden_.bias().velocity);
    io::write_matrix(os, head_.weight().value);
    io::write_matrix(os, head_.weight().velocity);
    io::write_matrix(os, head_.bias().value);
    io::write_matrix(os, head_.bias().velocity);
  }

  void load(std::istream& is) {
    Rng dummy(0);
    const int dim = static_cast<int>(io::read_u32(is));
    hidden_ = Linear(dim, dim, dummy);
    head_ = Linear(dim, 1, dummy);
    hidden_.weight().value = io::read_matrix(is);
    hidden_.weight().velocity = io::read_matrix(is);
    hidden_.bias().value = io::read_matrix(is);
    hidden_.bias().velocity = io::read_matrix(is);
    head_.weight().value = io::read_matrix(is);
    head_.weight().velocity = io::read_matrix(is);
    head_.bias().value = io::read_matrix(is);
    head_.bias().velocity = io::read_matrix(is);
  }

 private:
  Linear hidden_;
  Linear head_;
};

inline double dann_domain_loss(DomainClassifier& dc, const Matrix& a, const Matrix& b,
                               Matrix* d_a, Matrix* d_b) {
  return dc.loss(a, b, d_a, d_b);
}

// Horizontal concatenation of two sample sets (either may be empty).
inline Matrix hcat(const Matrix& a, const Matrix& b) {
  if (a.cols() == 0) return b;
  if (b.cols() == 0) return a;
  Matrix out(a.rows(), a.cols() + b.cols());
  out.leftCols(a.cols()) = a;
  out.rightCols(b.cols()) = b;
  return out;
}

// DAL composition: l_d over (S u T^f) vs T^t with the selected UDA method,
// l_u over T^u. Empty subsets contribute 0. Returned values are unweighted;
// the caller applies lambda1/lambda2.
struct DalLoss {
  double l_d = 0.0;
  double l_u = 0.0;
};

inline DalLoss dal_loss(const Matrix& S, const Matrix& Tf, const Matrix& Tt, const Matrix& Tu,
                        bool uda_is_mmd, double sigma = 0.0,
                        bool mmd_unbiased = false, bool eq4_literal = false,
                        DomainClassifier* dc = nullptr) {
  DalLoss out;
  Matrix src = hcat(S, Tf);
  if (src.cols() > 0 && Tt.cols() > 0) {
    if (uda_is_mmd) {
      const double s = sigma > 0 ? sigma : median_bandwidth(src, Tt);
      out.l_d = mmd_loss(src, Tt, s, mmd_unbiased);
    } else if (dc) {
      out.l_d = dc->loss(src, Tt);
    }
  }
  out.l_u = universum_reg(Tu, eq4_literal);
  return out;
}

}  // namespace dawsol
