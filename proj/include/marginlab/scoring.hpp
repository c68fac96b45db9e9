#pragma once

// Fine-tuning-free normality scorers. Every scorer returns higher values for
// more in-distribution samples:
//   proto-msp    MSP over the relational logits of (test, class prototype)
//   knn          -(distance to the k-th nearest support embedding)
//   mahalanobis  -(smallest squared Mahalanobis distance to a class mean)

#include <limits>

#include "marginlab/model.hpp"

namespace marginlab {

enum class ScorerKind { proto_msp, knn, mahalanobis };

inline const char* to_string(ScorerKind k) {
  switch (k) {
    case ScorerKind::proto_msp: return "proto-msp";
    case ScorerKind::knn: return "knn";
    case ScorerKind::mahalanobis: return "mahalanobis";
  }
  return "?";
}

inline ScorerKind parse_scorer(const std::string& s) {
  if (s == "proto-msp") return ScorerKind::proto_msp;
  if (s == "knn") return ScorerKind::knn;
  if (s == "mahalanobis") return ScorerKind::mahalanobis;
  fail(ErrorKind::invalid_argument, "unknown scorer '" + s + "'");
}

inline const std::vector<ScorerKind>& all_scorers() {
  static const std::vector<ScorerKind> kinds{ScorerKind::proto_msp, ScorerKind::knn,
                                             ScorerKind::mahalanobis};
  return kinds;
}

/// Counts similarity / distance evaluations for n.comp accounting.
struct ComparisonCounter {
  std::size_t count = 0;
};

inline void tick(ComparisonCounter* c, std::size_t n = 1) {
  if (c) c->count += n;
}

// ---------------------------------------------------------------------------
// Prototypes

struct PrototypeSet {
  std::vector<std::int32_t> class_ids;  // ascending
  Matrix prototypes;                    // one row per class
};

/// Mean embedding per class of pre-computed embeddings.
inline PrototypeSet prototypes_from_embeddings(const Matrix& z, std::span<const std::int32_t> labels) {
  require(z.rows() == labels.size(), ErrorKind::data, "prototypes: embeddings and labels disagree");
  std::map<std::int32_t, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < labels.size(); ++i) groups[labels[i]].push_back(i);
  require(!groups.empty(), ErrorKind::data, "prototypes: empty support set");
  PrototypeSet out;
  out.prototypes = Matrix(groups.size(), z.cols());
  std::size_t r = 0;
  for (const auto& [id, rows] : groups) {
    out.class_ids.push_back(id);
    auto proto = out.prototypes.row(r++);
    for (std::size_t i : rows)
      for (std::size_t k = 0; k < z.cols(); ++k) proto[k] += z(i, k);
    for (double& v : proto) v /= static_cast<double>(rows.size());
  }
  return out;
}

inline PrototypeSet build_prototypes(const ModelParams& params, const EmbeddingSet& support) {
  support.validate();
  return prototypes_from_embeddings(encode_all(params, support.features), support.labels);
}

/// Maximum softmax probability of a logit vector.
inline double msp_of_logits(std::span<const double> logits) {
  const Vector p = softmax(logits);
  return *std::max_element(p.begin(), p.end());
}

/// Relational logits of an embedded test sample against every prototype.
inline Vector prototype_logits(const ModelParams& params, const PrototypeSet& protos,
                               std::span<const double> z_test, SceLogit mode = SceLogit::same,
                               ComparisonCounter* counter = nullptr) {
  Vector logits(protos.prototypes.rows());
  for (std::size_t y = 0; y < logits.size(); ++y) {
    logits[y] = relational_logit(score_pair(params, z_test, protos.prototypes.row(y)), mode);
    tick(counter);
  }
  return logits;
}

inline double proto_msp_score(const ModelParams& params, const PrototypeSet& protos,
                              std::span<const double> x_test, SceLogit mode = SceLogit::same,
                              ComparisonCounter* counter = nullptr) {
  if (protos.prototypes.rows() < 2)
    fail(ErrorKind::degenerate_setup, "proto_msp_score: need at least 2 prototypes");
  const Vector z = encode(params, x_test);
  return msp_of_logits(prototype_logits(params, protos, z, mode, counter));
}

// ---------------------------------------------------------------------------
// k-NN

namespace detail {

inline void normalize_rows(Matrix& m) {
  for (std::size_t i = 0; i < m.rows(); ++i) {
    auto row = m.row(i);
    const double n = norm2(row);
    if (n > 0.0)
      for (double& v : row) v /= n;
  }
}

}  // namespace detail

/// Support embeddings prepared once (L2-normalized when requested) and queried
/// per test sample.
class KnnScorer {
 public:
  KnnScorer(Matrix support, bool normalize) : support_(std::move(support)), normalize_(normalize) {
    require(support_.rows() > 0, ErrorKind::invalid_argument, "knn: empty support set");
    if (normalize_) detail::normalize_rows(support_);
  }

  std::size_t support_size() const { return support_.rows(); }

  double score(std::span<const double> z_test, std::size_t k,
               ComparisonCounter* counter = nullptr) const {
    if (k < 1 || k > support_.rows()) {
      std::ostringstream msg;
      msg << "knn: k = " << k << " must lie in [1, " << support_.rows() << "]";
      fail(ErrorKind::invalid_argument, msg.str());
    }
    require(z_test.size() == support_.cols(), ErrorKind::invalid_argument,
            "knn: embedding length mismatch");
    Vector z(z_test.begin(), z_test.end());
    if (normalize_) {
      const double n = norm2(z);
      if (n > 0.0)
        for (double& v : z) v /= n;
    }
    Vector d2(support_.rows());
    for (std::size_t i = 0; i < support_.rows(); ++i) d2[i] = squared_distance(z, support_.row(i));
    tick(counter, support_.rows());
    std::nth_element(d2.begin(), d2.begin() + static_cast<std::ptrdiff_t>(k - 1), d2.end());
    return -std::sqrt(d2[k - 1]);
  }

 private:
  Matrix support_;
  bool normalize_;
};

inline double knn_score(const Matrix& support_embeddings, std::span<const double> z_test,
                        std::size_t k, bool normalize = true, ComparisonCounter* counter = nullptr) {
  return KnnScorer(support_embeddings, normalize).score(z_test, k, counter);
}

// ---------------------------------------------------------------------------
// Mahalanobis with a shared covariance

struct GaussianFit {
  std::vector<std::int32_t> class_ids;
  Matrix class_means;
  Matrix covariance;  // includes the ridge
  double epsilon = 0.0;
  Matrix cholesky_factor;  // lower triangular, filled by make_gaussian_fit
};

/// Factorises the covariance; a non-positive-definite matrix raises a
/// numerical error naming the failing pivot.
inline GaussianFit make_gaussian_fit(std::vector<std::int32_t> ids, Matrix means, Matrix covariance,
                                     double epsilon = 0.0) {
  require(means.cols() == covariance.rows() && covariance.rows() == covariance.cols(),
          ErrorKind::invalid_argument, "gaussian fit: shape mismatch");
  for (std::size_t a = 0; a < covariance.rows(); ++a)
    for (std::size_t b = 0; b < a; ++b)
      if (std::abs(covariance(a, b) - covariance(b, a)) > 1e-10)
        fail(ErrorKind::numerical, "gaussian fit: covariance is not symmetric");
  GaussianFit fit;
  fit.class_ids = std::move(ids);
  fit.class_means = std::move(means);
  fit.covariance = std::move(covariance);
  fit.epsilon = epsilon;
  fit.cholesky_factor = cholesky(fit.covariance);
  return fit;
}

/// Class means and pooled within-class covariance / (N - K), plus ε·I with
/// ε = epsilon_scale · trace(Σ) / D.
inline GaussianFit mahalanobis_fit_embeddings(const Matrix& z, std::span<const std::int32_t> labels,
                                              double epsilon_scale = 1e-3) {
  require(epsilon_scale >= 0.0, ErrorKind::invalid_argument, "mahalanobis: epsilon_scale must be >= 0");
  const PrototypeSet means = prototypes_from_embeddings(z, labels);
  const std::size_t n = z.rows(), k = means.class_ids.size(), d = z.cols();
  if (n <= k) {
    std::ostringstream msg;
    msg << "mahalanobis fit: " << n << " samples over " << k << " classes leaves no degrees of freedom";
    fail(ErrorKind::fit, msg.str());
  }
  std::map<std::int32_t, std::size_t> row_of;
  for (std::size_t r = 0; r < k; ++r) row_of[means.class_ids[r]] = r;

  Matrix cov(d, d);
  Vector diff(d);
  for (std::size_t i = 0; i < n; ++i) {
    const auto mu = means.prototypes.row(row_of[labels[i]]);
    for (std::size_t a = 0; a < d; ++a) diff[a] = z(i, a) - mu[a];
    for (std::size_t a = 0; a < d; ++a)
      for (std::size_t b = 0; b <= a; ++b) cov(a, b) += diff[a] * diff[b];
  }
  const double dof = static_cast<double>(n - k);
  double trace = 0.0;
  for (std::size_t a = 0; a < d; ++a) {
    for (std::size_t b = 0; b <= a; ++b) {
      cov(a, b) /= dof;
      cov(b, a) = cov(a, b);
    }
    trace += cov(a, a);
  }
  const double eps = epsilon_scale * trace / static_cast<double>(d);
  for (std::size_t a = 0; a < d; ++a) cov(a, a) += eps;
  try {
    return make_gaussian_fit(means.class_ids, means.prototypes, std::move(cov), eps);
  } catch (const Error& e) {
    fail(ErrorKind::fit, std::string("mahalanobis fit: ") + e.what());
  }
}

inline GaussianFit mahalanobis_fit(const EmbeddingSet& support, const ModelParams& params,
                                   double epsilon_scale = 1e-3) {
  support.validate();
  return mahalanobis_fit_embeddings(encode_all(params, support.features), support.labels,
                                    epsilon_scale);
}

/// -min_y (z - μ_y)ᵀ Σ⁻¹ (z - μ_y), through the Cholesky factor.
inline double mahalanobis_score(const GaussianFit& fit, std::span<const double> z_test,
                                ComparisonCounter* counter = nullptr) {
  require(z_test.size() == fit.class_means.cols(), ErrorKind::invalid_argument,
          "mahalanobis: embedding length mismatch");
  const Matrix factor =
      fit.cholesky_factor.empty() ? cholesky(fit.covariance) : Matrix();
  const Matrix& l = fit.cholesky_factor.empty() ? factor : fit.cholesky_factor;
  double best = std::numeric_limits<double>::infinity();
  Vector diff(z_test.size());
  for (std::size_t y = 0; y < fit.class_means.rows(); ++y) {
    const auto mu = fit.class_means.row(y);
    for (std::size_t a = 0; a < diff.size(); ++a) diff[a] = z_test[a] - mu[a];
    const Vector w = forward_substitute(l, diff);
    best = std::min(best, dot(w, w));
    tick(counter);
  }
  return -best;
}

// ---------------------------------------------------------------------------
// Comparisons per test sample

inline std::size_t count_comparisons(ScorerKind kind, const EmbeddingSet& support) {
  require(support.size() > 0, ErrorKind::invalid_argument, "count_comparisons: empty support set");
  if (kind == ScorerKind::knn) return support.size();
  return support.class_ids().size();
}

}  // namespace marginlab
