#pragma once

// Class compactness and separation of pair features: the R² index
//
//   R² = 1 - d_within / d_total
//
// where d_within averages the cosine distance 1 - sim(a, b) over all (i, j)
// pairs inside each class (self-pairs included) and then over classes, and
// d_total averages it over every (class h, class k) block with weights
// 1 / (K² M_h M_k).

#include <map>

#include "marginlab/model.hpp"

namespace marginlab {

struct LabeledFeatureSet {
  Matrix features;
  std::vector<int> class_of;
};

struct SeparationReport {
  double r2 = 0.0;
  double d_within = 0.0;
  double d_total = 0.0;
  std::vector<double> per_class_within;  // ascending class id
};

enum class R2Method {
  direct,    // O(N² D) double sum, exactly as the definition reads
  shortcut,  // O(N D) via means of unit vectors: mean_ij(1 - u_i·u_j) = 1 - |ū|²
};

namespace detail {

struct NormalizedClasses {
  std::vector<Matrix> members;  // unit rows per class, ascending class id
};

inline NormalizedClasses normalize_by_class(const LabeledFeatureSet& set) {
  require(set.features.rows() == set.class_of.size(), ErrorKind::invalid_argument,
          "r2_index: features and labels disagree in length");
  std::map<int, Matrix> groups;
  Vector unit(set.features.cols());
  for (std::size_t i = 0; i < set.class_of.size(); ++i) {
    const auto row = set.features.row(i);
    const double n = norm2(row);
    if (!(n > 0.0) || !std::isfinite(n))
      fail(ErrorKind::degenerate_vector, "r2_index: zero-norm feature row " + std::to_string(i));
    for (std::size_t k = 0; k < row.size(); ++k) unit[k] = row[k] / n;
    auto [it, inserted] = groups.try_emplace(set.class_of[i], 0, set.features.cols());
    it->second.append_row(unit);
  }
  require(groups.size() >= 2, ErrorKind::invalid_argument, "r2_index: need at least 2 classes");
  NormalizedClasses out;
  for (auto& [id, m] : groups) out.members.push_back(std::move(m));
  return out;
}

// Σ_i Σ_j (1 - sim(a_i, b_j)) over unit rows.
inline double block_distance_sum(const Matrix& a, const Matrix& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.rows(); ++j)
      s += 1.0 - std::clamp(dot(a.row(i), b.row(j)), -1.0, 1.0);
  return s;
}

}  // namespace detail

inline SeparationReport r2_index(const LabeledFeatureSet& set, R2Method method = R2Method::direct) {
  const auto classes = detail::normalize_by_class(set);
  const auto& g = classes.members;
  const std::size_t k_count = g.size();
  const double kk = static_cast<double>(k_count);
  SeparationReport rep;
  rep.per_class_within.resize(k_count);

  if (method == R2Method::direct) {
    for (std::size_t h = 0; h < k_count; ++h) {
      const double mh = static_cast<double>(g[h].rows());
      for (std::size_t k = h; k < k_count; ++k) {
        const double mk = static_cast<double>(g[k].rows());
        const double s = detail::block_distance_sum(g[h], g[k]);
        const double block = s / (kk * kk * mh * mk);
        rep.d_total += h == k ? block : 2.0 * block;
        if (h == k) rep.per_class_within[h] = s / (mh * mh);
      }
    }
  } else {
    const std::size_t dim = set.features.cols();
    Vector grand(dim, 0.0);
    for (std::size_t h = 0; h < k_count; ++h) {
      Vector mean(dim, 0.0);
      for (std::size_t i = 0; i < g[h].rows(); ++i)
        for (std::size_t d = 0; d < dim; ++d) mean[d] += g[h](i, d);
      for (double& v : mean) v /= static_cast<double>(g[h].rows());
      rep.per_class_within[h] = std::max(0.0, 1.0 - dot(mean, mean));
      for (std::size_t d = 0; d < dim; ++d) grand[d] += mean[d] / kk;
    }
    rep.d_total = std::max(0.0, 1.0 - dot(grand, grand));
  }
  for (double w : rep.per_class_within) rep.d_within += w / kk;

  if (!(rep.d_total > 1e-12))
    fail(ErrorKind::degenerate_geometry, "r2_index: total cosine spread is zero");
  rep.r2 = 1.0 - rep.d_within / rep.d_total;
  return rep;
}

/// Pair features p of every pair, labelled 1 (same) / 0 (different).
inline LabeledFeatureSet pair_features(const ModelParams& params, const PairBatch& pairs) {
  LabeledFeatureSet set;
  set.features = Matrix(pairs.size(), params.arch.pair_dim());
  set.class_of.resize(pairs.size());
  for (std::size_t m = 0; m < pairs.size(); ++m) {
    const PairOutput o = score_pair(params, encode(params, pairs.left.row(m)),
                                    encode(params, pairs.right.row(m)));
    std::copy(o.p.begin(), o.p.end(), set.features.row(m).begin());
    set.class_of[m] = pairs.targets[m].binary;
  }
  return set;
}

inline SeparationReport r2_of_pairs(const ModelParams& params, const PairBatch& eval_pairs,
                                    R2Method method = R2Method::direct) {
  return r2_index(pair_features(params, eval_pairs), method);
}

// ---------------------------------------------------------------------------
// 2-D projection

namespace detail {

// Dominant eigenvector of a symmetric PSD matrix by power iteration.
inline Vector power_iteration(const Matrix& c, Vector v) {
  const std::size_t n = c.rows();
  Vector w(n);
  for (int iter = 0; iter < 10000; ++iter) {
    for (std::size_t i = 0; i < n; ++i) w[i] = dot(c.row(i), v);
    const double nw = norm2(w);
    if (!(nw > 0.0)) return Vector(n, 0.0);
    double change = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      w[i] /= nw;
      change = std::max(change, std::abs(w[i] - v[i]));
    }
    v.swap(w);
    if (change < 1e-13) break;
  }
  return v;
}

inline void fix_sign(Vector& v) {
  std::size_t arg = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (std::abs(v[i]) > std::abs(v[arg])) arg = i;
  if (v[arg] < 0.0)
    for (double& x : v) x = -x;
}

// Removes the component along unit u and normalizes; a vector (numerically)
// parallel to u becomes zero.
inline void orthonormalize_against(Vector& v, const Vector& u) {
  const double before = norm2(v);
  const double proj = dot(v, u);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] -= proj * u[i];
  const double n = norm2(v);
  if (!(n > 1e-10 * before)) {
    std::fill(v.begin(), v.end(), 0.0);
    return;
  }
  for (double& x : v) x /= n;
}

}  // namespace detail

/// Coordinates on the top two principal directions of the centered data.
/// Power iteration starts from v_i ∝ 1/(i+1); the second direction deflates
/// the first. Each axis is signed so its largest-magnitude loading is positive.
inline Matrix project_2d(const LabeledFeatureSet& set) {
  const Matrix& x = set.features;
  const std::size_t n = x.rows(), d = x.cols();
  require(d >= 2, ErrorKind::invalid_argument, "project_2d: need at least 2 feature dims");
  require(n >= 1, ErrorKind::invalid_argument, "project_2d: empty feature set");

  Vector mean(d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < d; ++k) mean[k] += x(i, k) / static_cast<double>(n);
  Matrix centered(n, d);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < d; ++k) centered(i, k) = x(i, k) - mean[k];
  Matrix cov(d, d);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t a = 0; a < d; ++a)
      for (std::size_t b = 0; b < d; ++b) cov(a, b) += centered(i, a) * centered(i, b);

  double trace = 0.0;
  for (std::size_t a = 0; a < d; ++a) trace += cov(a, a);
  if (!(trace > 0.0)) fail(ErrorKind::degenerate_geometry, "project_2d: all points are identical");

  Vector start(d);
  for (std::size_t i = 0; i < d; ++i) start[i] = 1.0 / static_cast<double>(i + 1);
  const double start_norm = norm2(start);
  for (double& v : start) v /= start_norm;

  Vector v1 = detail::power_iteration(cov, start);
  detail::fix_sign(v1);
  Vector cv1(d);
  for (std::size_t i = 0; i < d; ++i) cv1[i] = dot(cov.row(i), v1);
  const double lambda1 = dot(v1, cv1);
  Matrix deflated = cov;
  for (std::size_t a = 0; a < d; ++a)
    for (std::size_t b = 0; b < d; ++b) deflated(a, b) -= lambda1 * v1[a] * v1[b];

  Vector s2 = start;
  detail::orthonormalize_against(s2, v1);
  Vector v2 = detail::power_iteration(deflated, s2);
  detail::orthonormalize_against(v2, v1);
  detail::orthonormalize_against(v2, v1);
  Vector cv2(d);
  for (std::size_t i = 0; i < d; ++i) cv2[i] = dot(cov.row(i), v2);
  if (!(norm2(v2) > 0.5) || !(dot(v2, cv2) > 1e-12 * trace)) {
    // Rank-one data: any unit direction orthogonal to v1 will do.
    for (std::size_t e = 0; e < d && !(norm2(v2) > 0.5); ++e) {
      v2.assign(d, 0.0);
      v2[e] = 1.0;
      detail::orthonormalize_against(v2, v1);
      detail::orthonormalize_against(v2, v1);
    }
  }
  detail::fix_sign(v2);

  Matrix out(n, 2);
  for (std::size_t i = 0; i < n; ++i) {
    out(i, 0) = dot(centered.row(i), v1);
    out(i, 1) = dot(centered.row(i), v2);
  }
  return out;
}

}  // namespace marginlab
