#pragma once

// Seeded synthetic benchmarks: a pre-training class pool, a support set of
// known classes and a test set mixing known and unknown classes, with an
// optional domain shift applied to the test inputs only.

#include <optional>

#include "marginlab/embedding_set.hpp"

namespace marginlab {

struct DomainShift {
  Matrix rotation;  // orthogonal, input_dim x input_dim
  Vector bias;
  double extra_noise_std = 0.0;
};

struct SplitSizes {
  std::size_t pretrain = 200;
  std::size_t holdout = 40;  // fresh pre-training-class samples for R² pairs
  std::size_t support = 164;
  std::size_t test = 20;
};

struct BenchmarkConfig {
  std::size_t input_dim = 32;
  std::size_t n_pretrain_classes = 30;
  std::size_t n_known_classes = 25;
  std::size_t n_unknown_classes = 25;
  SplitSizes samples_per_class;
  double class_mean_scale = 1.0;
  double within_class_std = 0.6;
  // Pre-training class means vary only in the first pretrain_mean_dims input
  // coordinates (0 or >= input_dim = all of them); evaluation class means use every coordinate,
  // so the evaluation classes differ from pre-training along directions the
  // relational model never had to separate.
  std::size_t pretrain_mean_dims = 4;
  std::optional<DomainShift> shift;
  std::uint64_t seed = 0;
};

struct BenchmarkSplit {
  EmbeddingSet pretrain;
  EmbeddingSet holdout;
  EmbeddingSet support;
  EmbeddingSet test;
  std::vector<bool> test_is_ood;

  friend bool operator==(const BenchmarkSplit&, const BenchmarkSplit&) = default;
};

/// Max |QᵀQ - I| entry.
inline double orthogonality_error(const Matrix& q) {
  double worst = 0.0;
  for (std::size_t i = 0; i < q.cols(); ++i)
    for (std::size_t j = 0; j < q.cols(); ++j) {
      double s = 0.0;
      for (std::size_t r = 0; r < q.rows(); ++r) s += q(r, i) * q(r, j);
      worst = std::max(worst, std::abs(s - (i == j ? 1.0 : 0.0)));
    }
  return worst;
}

/// Haar-distributed orthogonal matrix: QR of a Gaussian matrix with the
/// diagonal of R made positive. Gram-Schmidt runs twice per column.
inline Matrix random_orthogonal(std::size_t dim, Rng& rng) {
  require(dim >= 1, ErrorKind::invalid_argument, "random_orthogonal: dim must be >= 1");
  Matrix g(dim, dim);
  for (double& v : g.data()) v = rng.normal();
  for (std::size_t c = 0; c < dim; ++c) {
    for (int pass = 0; pass < 2; ++pass)
      for (std::size_t p = 0; p < c; ++p) {
        double proj = 0.0;
        for (std::size_t r = 0; r < dim; ++r) proj += g(r, p) * g(r, c);
        for (std::size_t r = 0; r < dim; ++r) g(r, c) -= proj * g(r, p);
      }
    double n = 0.0;
    for (std::size_t r = 0; r < dim; ++r) n += g(r, c) * g(r, c);
    n = std::sqrt(n);
    require(n > 1e-12, ErrorKind::numerical, "random_orthogonal: rank-deficient draw");
    for (std::size_t r = 0; r < dim; ++r) g(r, c) /= n;
  }
  return g;
}

/// Random rotation, bias ~ N(0, bias_scale²·I) and additive test noise.
inline DomainShift make_domain_shift(std::size_t dim, double bias_scale, double noise_std,
                                     bool rotate, Rng& rng) {
  DomainShift s;
  s.rotation = rotate ? random_orthogonal(dim, rng) : Matrix::identity(dim);
  s.bias.resize(dim);
  for (double& b : s.bias) b = bias_scale * rng.normal();
  s.extra_noise_std = noise_std;
  return s;
}

inline void validate(const BenchmarkConfig& c) {
  auto bad = [](const std::string& what) { fail(ErrorKind::config, "benchmark config: " + what); };
  if (c.input_dim < 1) bad("input_dim must be >= 1");
  if (c.n_pretrain_classes < 1 || c.n_unknown_classes < 1) bad("class counts must be >= 1");
  if (c.n_known_classes < 2) bad("n_known_classes must be >= 2");
  const auto& s = c.samples_per_class;
  if (s.pretrain < 1 || s.holdout < 1 || s.support < 1 || s.test < 1)
    bad("samples per class must be >= 1");
  if (!(c.within_class_std > 0.0)) bad("within_class_std must be > 0");
  if (!(c.class_mean_scale >= 0.0)) bad("class_mean_scale must be >= 0");
  if (c.shift) {
    const auto& sh = *c.shift;
    if (sh.rotation.rows() != c.input_dim || sh.rotation.cols() != c.input_dim)
      bad("shift rotation must be input_dim x input_dim");
    if (orthogonality_error(sh.rotation) > 1e-8) bad("shift rotation is not orthogonal");
    if (sh.bias.size() != c.input_dim) bad("shift bias must have input_dim entries");
    if (!(sh.extra_noise_std >= 0.0)) bad("shift extra_noise_std must be >= 0");
  }
}

/// x -> R x + bias + N(0, extra_noise_std²·I), applied row by row.
inline void apply_shift(Matrix& x, const DomainShift& shift, Rng& rng) {
  Vector tmp(x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto row = x.row(i);
    for (std::size_t r = 0; r < x.cols(); ++r) {
      double s = shift.bias[r];
      for (std::size_t c = 0; c < x.cols(); ++c) s += shift.rotation(r, c) * row[c];
      tmp[r] = s;
    }
    for (std::size_t r = 0; r < x.cols(); ++r)
      row[r] = tmp[r] + (shift.extra_noise_std > 0.0 ? shift.extra_noise_std * rng.normal() : 0.0);
  }
}

/// Pre-training ids are [0, P); known ids [P, P+K); unknown ids [P+K, P+K+U).
/// Each split draws from its own child stream, so enabling the shift leaves
/// every sample before the shift untouched.
inline BenchmarkSplit gen_benchmark(const BenchmarkConfig& config) {
  validate(config);
  const std::size_t dim = config.input_dim;
  const std::size_t n_classes =
      config.n_pretrain_classes + config.n_known_classes + config.n_unknown_classes;

  Rng root(config.seed);
  Rng mean_rng = root.split();
  Rng pretrain_rng = root.split();
  Rng holdout_rng = root.split();
  Rng support_rng = root.split();
  Rng test_rng = root.split();
  Rng shift_rng = root.split();

  Matrix means(n_classes, dim);
  for (double& v : means.data()) v = config.class_mean_scale * mean_rng.normal();
  if (config.pretrain_mean_dims > 0)
    for (std::size_t c = 0; c < config.n_pretrain_classes; ++c)
      for (std::size_t j = config.pretrain_mean_dims; j < dim; ++j) means(c, j) = 0.0;

  Vector x(dim);
  auto draw = [&](EmbeddingSet& out, std::size_t first, std::size_t count, std::size_t per_class,
                  Rng& rng, auto flag_of) {
    out.features = Matrix(0, dim);
    for (std::size_t c = first; c < first + count; ++c)
      for (std::size_t s = 0; s < per_class; ++s) {
        for (std::size_t j = 0; j < dim; ++j)
          x[j] = means(c, j) + config.within_class_std * rng.normal();
        out.push_back(x, static_cast<std::int32_t>(c), flag_of(c));
      }
  };
  const auto na = [](std::size_t) { return kFlagNotApplicable; };
  const std::size_t known_first = config.n_pretrain_classes;
  const std::size_t unknown_first = known_first + config.n_known_classes;
  const auto& per = config.samples_per_class;

  BenchmarkSplit split;
  draw(split.pretrain, 0, config.n_pretrain_classes, per.pretrain, pretrain_rng, na);
  draw(split.holdout, 0, config.n_pretrain_classes, per.holdout, holdout_rng, na);
  draw(split.support, known_first, config.n_known_classes, per.support, support_rng, na);
  draw(split.test, known_first, config.n_known_classes + config.n_unknown_classes, per.test,
       test_rng, [&](std::size_t c) { return std::uint8_t(c >= unknown_first ? 1 : 0); });

  if (config.shift) apply_shift(split.test.features, *config.shift, shift_rng);

  split.test_is_ood.reserve(split.test.size());
  for (std::uint8_t f : split.test.ood_flags) split.test_is_ood.push_back(f == 1);
  return split;
}

}  // namespace marginlab
