#pragma once

// Same/different pair objectives and their derivatives with respect to the
// pair score. bce, focal, mse_cs and hinge read one scalar score; sce reads
// two logits ordered (different, same).

#include <array>
#include <charconv>
#include <sstream>

#include "marginlab/numeric.hpp"

namespace marginlab {

enum class LossKind { bce, sce, focal, mse_cs, hinge };

inline const char* to_string(LossKind k) {
  switch (k) {
    case LossKind::bce: return "bce";
    case LossKind::sce: return "sce";
    case LossKind::focal: return "focal";
    case LossKind::mse_cs: return "mse_cs";
    case LossKind::hinge: return "hinge";
  }
  return "?";
}

struct LossSpec {
  LossKind kind = LossKind::bce;
  double gamma = 2.0;   // focal
  double c = 10.0;      // mse_cs slope
  double delta = 0.01;  // hinge margin

  /// Number of head outputs this loss consumes.
  std::size_t arity() const noexcept { return kind == LossKind::sce ? 2 : 1; }

  /// The single hyperparameter read for this kind (0 for bce/sce).
  double hyperparam() const noexcept {
    switch (kind) {
      case LossKind::focal: return gamma;
      case LossKind::mse_cs: return c;
      case LossKind::hinge: return delta;
      default: return 0.0;
    }
  }

  friend bool operator==(const LossSpec&, const LossSpec&) = default;
};

inline void validate(const LossSpec& spec) {
  switch (spec.kind) {
    case LossKind::focal:
      require(spec.gamma >= 0.0, ErrorKind::invalid_argument, "focal: gamma must be >= 0");
      break;
    case LossKind::mse_cs:
      require(spec.c > 0.0, ErrorKind::invalid_argument, "mse_cs: c must be > 0");
      break;
    case LossKind::hinge:
      require(spec.delta > 0.0, ErrorKind::invalid_argument, "hinge: delta must be > 0");
      break;
    default: break;
  }
}

/// Shortest decimal form that parses back to the same double.
inline std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

/// CLI form: bce | sce | focal:g=2 | mse:c=10 | hinge:d=0.01
inline std::string to_string(const LossSpec& spec) {
  switch (spec.kind) {
    case LossKind::bce: return "bce";
    case LossKind::sce: return "sce";
    case LossKind::focal: return "focal:g=" + format_double(spec.gamma);
    case LossKind::mse_cs: return "mse:c=" + format_double(spec.c);
    case LossKind::hinge: return "hinge:d=" + format_double(spec.delta);
  }
  return "?";
}

inline LossSpec parse_loss_spec(const std::string& text) {
  auto bad = [&](const std::string& why) {
    fail(ErrorKind::invalid_argument, "loss spec '" + text + "': " + why);
  };
  const auto colon = text.find(':');
  const std::string name = text.substr(0, colon);
  LossSpec spec;
  char key = 0;
  if (name == "bce") {
    spec.kind = LossKind::bce;
  } else if (name == "sce") {
    spec.kind = LossKind::sce;
  } else if (name == "focal") {
    spec.kind = LossKind::focal;
    key = 'g';
  } else if (name == "mse" || name == "mse_cs") {
    spec.kind = LossKind::mse_cs;
    key = 'c';
  } else if (name == "hinge") {
    spec.kind = LossKind::hinge;
    key = 'd';
  } else {
    bad("unknown loss kind");
  }
  if (colon != std::string::npos) {
    const std::string param = text.substr(colon + 1);
    if (key == 0) bad("this loss takes no parameter");
    if (param.size() < 3 || param[0] != key || param[1] != '=')
      bad(std::string("expected ") + key + "=<value>");
    double v = 0.0;
    const auto* first = param.data() + 2;
    const auto* last = param.data() + param.size();
    const auto res = std::from_chars(first, last, v);
    if (res.ec != std::errc() || res.ptr != last || !std::isfinite(v)) bad("malformed number");
    if (key == 'g') spec.gamma = v;
    if (key == 'c') spec.c = v;
    if (key == 'd') spec.delta = v;
  }
  validate(spec);
  return spec;
}

/// Pair label in both conventions: binary {0,1} and signed {-1,+1}.
struct PairTarget {
  int binary = 0;

  static PairTarget same(bool is_same) { return PairTarget{is_same ? 1 : 0}; }
  int signed_label() const noexcept { return 2 * binary - 1; }

  friend bool operator==(const PairTarget&, const PairTarget&) = default;
};

struct LossOutput {
  double value = 0.0;
  std::array<double, 2> grad{};
  std::size_t arity = 1;

  std::span<const double> gradient() const { return {grad.data(), arity}; }
};

inline constexpr double kProbabilityFloor = 1e-15;

namespace detail {

// Binary focal term on the signed margin s = l·σ, where p = sigmoid(s) is the
// probability assigned to the true class. gamma = 0 gives binary cross-entropy.
inline LossOutput focal_on_margin(double sigma, PairTarget target, double gamma) {
  check_finite(sigma, "loss");
  const double l = target.signed_label();
  const double s = l * sigma;
  const double p = stable_sigmoid(s);
  const double q = stable_sigmoid(-s);  // 1 - p without cancellation
  const double log_p = std::log(std::max(p, kProbabilityFloor));
  const double weight = gamma == 0.0 ? 1.0 : std::pow(q, gamma);
  LossOutput out;
  out.value = -weight * log_p;
  // d/ds [-(q^γ) log p] = q^γ (γ p log p - q)
  const double d_ds = gamma == 0.0 ? -q : weight * (gamma * p * log_p - q);
  out.grad[0] = l * d_ds;
  return out;
}

}  // namespace detail

inline LossOutput loss_bce(double sigma, PairTarget target) {
  return detail::focal_on_margin(sigma, target, 0.0);
}

inline LossOutput loss_focal(double sigma, PairTarget target, double gamma) {
  require(gamma >= 0.0, ErrorKind::invalid_argument, "focal: gamma must be >= 0");
  return detail::focal_on_margin(sigma, target, gamma);
}

inline LossOutput loss_sce(std::array<double, 2> logits, int label_index) {
  require(label_index == 0 || label_index == 1, ErrorKind::invalid_argument,
          "sce: label index must be 0 or 1");
  const double lse = log_sum_exp(logits);
  const Vector probs = softmax(logits);
  LossOutput out;
  out.arity = 2;
  out.value = std::max(0.0, lse - logits[label_index]);
  out.grad[0] = probs[0] - (label_index == 0 ? 1.0 : 0.0);
  out.grad[1] = probs[1] - (label_index == 1 ? 1.0 : 0.0);
  return out;
}

/// Squared error against l ∈ {-1, 1} of ŝ_c(σ) = 2/(1+e^{-cσ}) - 1 = tanh(cσ/2).
inline LossOutput loss_mse_cs(double sigma, PairTarget target, double c) {
  require(c > 0.0, ErrorKind::invalid_argument, "mse_cs: c must be > 0");
  check_finite(sigma, "loss_mse_cs");
  const double l = target.signed_label();
  const double s_hat = std::tanh(0.5 * c * sigma);
  // dŝ/dσ = 2c·f(cσ)·f(-cσ), f the logistic function
  const double ds = 2.0 * c * stable_sigmoid(c * sigma) * stable_sigmoid(-c * sigma);
  LossOutput out;
  out.value = (s_hat - l) * (s_hat - l);
  out.grad[0] = 2.0 * (s_hat - l) * ds;
  return out;
}

/// max(0, δ - l·σ); the subgradient at the kink is 0.
inline LossOutput loss_hinge(double sigma, PairTarget target, double delta) {
  require(delta > 0.0, ErrorKind::invalid_argument, "hinge: delta must be > 0");
  check_finite(sigma, "loss_hinge");
  const double l = target.signed_label();
  LossOutput out;
  out.value = std::max(0.0, delta - l * sigma);
  out.grad[0] = l * sigma < delta ? -l : 0.0;
  return out;
}

/// Dispatches on spec.kind; `scores` has spec.arity() entries.
inline LossOutput evaluate_loss(const LossSpec& spec, std::span<const double> scores,
                                PairTarget target) {
  require(scores.size() == spec.arity(), ErrorKind::invalid_argument,
          "loss: head arity does not match loss kind");
  switch (spec.kind) {
    case LossKind::bce: return loss_bce(scores[0], target);
    case LossKind::sce: return loss_sce({scores[0], scores[1]}, target.binary);
    case LossKind::focal: return loss_focal(scores[0], target, spec.gamma);
    case LossKind::mse_cs: return loss_mse_cs(scores[0], target, spec.c);
    case LossKind::hinge: return loss_hinge(scores[0], target, spec.delta);
  }
  fail(ErrorKind::invalid_argument, "unknown loss kind");
}

/// Denominator floor for gradient relative errors; below it the comparison is
/// effectively absolute.
inline constexpr double kRelativeErrorFloor = 1e-5;

inline double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), kRelativeErrorFloor});
  return std::abs(analytic - numeric) / denom;
}

struct LossPoint {
  std::array<double, 2> scores{};
  PairTarget target;
};

/// Max relative error between the analytic gradient and central differences
/// (f(x+h) - f(x-h)) / 2h over every score component.
inline double check_gradient(const LossSpec& spec, const LossPoint& point, double h = 1e-6) {
  const std::size_t n = spec.arity();
  std::array<double, 2> x = point.scores;
  const LossOutput analytic = evaluate_loss(spec, std::span<const double>(x.data(), n), point.target);
  double worst = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    auto xp = x, xm = x;
    xp[i] += h;
    xm[i] -= h;
    const double fp = evaluate_loss(spec, std::span<const double>(xp.data(), n), point.target).value;
    const double fm = evaluate_loss(spec, std::span<const double>(xm.data(), n), point.target).value;
    worst = std::max(worst, relative_error(analytic.grad[i], (fp - fm) / (2.0 * h)));
  }
  return worst;
}

}  // namespace marginlab
