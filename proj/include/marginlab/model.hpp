#pragma once

// Relational pair model: a shared ReLU encoder maps each input to an
// embedding z, a ReLU head maps the combined pair (z_i, z_j) to the pair
// feature p, and a final affine map turns p into one score (scalar heads) or
// two logits ordered (different, same) for the sce head.

#include <functional>

#include "marginlab/embedding_set.hpp"
#include "marginlab/losses.hpp"
#include "marginlab/metrics.hpp"

namespace marginlab {

enum class PairCombine : std::uint8_t {
  concat = 0,     // [z_i, z_j]
  symmetric = 1,  // [z_i + z_j, |z_i - z_j|]
};

struct Architecture {
  std::vector<std::size_t> encoder{32, 64, 32};  // input_dim, hidden..., emb_dim
  std::vector<std::size_t> head{64, 32};         // hidden..., pair_dim
  std::size_t outputs = 1;
  PairCombine combine = PairCombine::concat;

  std::size_t input_dim() const { return encoder.front(); }
  std::size_t emb_dim() const { return encoder.back(); }
  std::size_t pair_dim() const { return head.back(); }

  friend bool operator==(const Architecture&, const Architecture&) = default;
};

inline void validate(const Architecture& a) {
  require(a.encoder.size() >= 2, ErrorKind::invalid_argument,
          "architecture: encoder needs input and embedding dims");
  require(!a.head.empty(), ErrorKind::invalid_argument, "architecture: head needs a pair dim");
  require(a.outputs == 1 || a.outputs == 2, ErrorKind::invalid_argument,
          "architecture: outputs must be 1 or 2");
  for (std::size_t d : a.encoder) require(d > 0, ErrorKind::invalid_argument, "architecture: zero dim");
  for (std::size_t d : a.head) require(d > 0, ErrorKind::invalid_argument, "architecture: zero dim");
}

struct DenseLayer {
  Matrix weight;  // out x in
  Vector bias;

  std::size_t in() const { return weight.cols(); }
  std::size_t out() const { return weight.rows(); }

  friend bool operator==(const DenseLayer&, const DenseLayer&) = default;
};

/// All layers in one list: encoder layers, then head layers, then the output
/// layer. Every layer but the output one is followed by a ReLU.
struct ModelParams {
  Architecture arch;
  std::vector<DenseLayer> layers;

  std::size_t n_encoder_layers() const { return arch.encoder.size() - 1; }
  std::size_t n_head_layers() const { return arch.head.size(); }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.weight.data().size() + l.bias.size();
    return n;
  }

  /// Flat parameter i in layer order, each layer's weights (row-major) then bias.
  double& parameter(std::size_t i) {
    for (auto& l : layers) {
      if (i < l.weight.data().size()) return l.weight.data()[i];
      i -= l.weight.data().size();
      if (i < l.bias.size()) return l.bias[i];
      i -= l.bias.size();
    }
    fail(ErrorKind::invalid_argument, "parameter index out of range");
  }

  Vector flatten() const {
    Vector out;
    out.reserve(parameter_count());
    for (const auto& l : layers) {
      out.insert(out.end(), l.weight.data().begin(), l.weight.data().end());
      out.insert(out.end(), l.bias.begin(), l.bias.end());
    }
    return out;
  }

  void unflatten(std::span<const double> flat) {
    require(flat.size() == parameter_count(), ErrorKind::invalid_argument,
            "unflatten: parameter count mismatch");
    std::size_t k = 0;
    for (auto& l : layers) {
      for (double& w : l.weight.data()) w = flat[k++];
      for (double& b : l.bias) b = flat[k++];
    }
  }

  bool all_finite() const {
    for (const auto& l : layers) {
      if (!l.weight.all_finite()) return false;
      for (double b : l.bias)
        if (!std::isfinite(b)) return false;
    }
    return true;
  }

  friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

/// Zero-valued parameters with the layer shapes of `arch`.
inline ModelParams zero_params(const Architecture& arch) {
  validate(arch);
  ModelParams p;
  p.arch = arch;
  auto add = [&](std::size_t in, std::size_t out) {
    p.layers.push_back(DenseLayer{Matrix(out, in), Vector(out, 0.0)});
  };
  for (std::size_t i = 0; i + 1 < arch.encoder.size(); ++i) add(arch.encoder[i], arch.encoder[i + 1]);
  std::size_t in = 2 * arch.emb_dim();
  for (std::size_t d : arch.head) {
    add(in, d);
    in = d;
  }
  add(in, arch.outputs);
  return p;
}

/// Weights uniform in ±sqrt(6 / (fan_in + fan_out)), biases zero.
inline ModelParams init_params(const Architecture& arch, Rng& rng) {
  ModelParams p = zero_params(arch);
  for (auto& l : p.layers) {
    const double bound = std::sqrt(6.0 / static_cast<double>(l.in() + l.out()));
    for (double& w : l.weight.data()) w = rng.uniform(-bound, bound);
  }
  return p;
}

namespace detail {

inline void dense_forward(const DenseLayer& layer, std::span<const double> in, std::span<double> out,
                          bool relu) {
  const std::size_t n_in = layer.in();
  const double* w = layer.weight.data().data();
  for (std::size_t o = 0; o < layer.out(); ++o) {
    double s = layer.bias[o];
    const double* row = w + o * n_in;
    for (std::size_t i = 0; i < n_in; ++i) s += row[i] * in[i];
    out[o] = relu ? std::max(0.0, s) : s;
  }
}

// Accumulates parameter gradients into `grad` and writes dL/d(input) into
// `d_in`. `out` is the layer's (post-activation) output; `d_out` is modified
// in place to hold dL/d(pre-activation).
inline void dense_backward(const DenseLayer& layer, DenseLayer& grad, std::span<const double> in,
                           std::span<const double> out, std::span<double> d_out,
                           std::span<double> d_in, bool relu) {
  const std::size_t n_in = layer.in();
  if (relu)
    for (std::size_t o = 0; o < d_out.size(); ++o)
      if (!(out[o] > 0.0)) d_out[o] = 0.0;
  std::fill(d_in.begin(), d_in.end(), 0.0);
  const double* w = layer.weight.data().data();
  double* gw = grad.weight.data().data();
  for (std::size_t o = 0; o < layer.out(); ++o) {
    const double g = d_out[o];
    if (g == 0.0) continue;
    grad.bias[o] += g;
    const double* row = w + o * n_in;
    double* grow = gw + o * n_in;
    for (std::size_t i = 0; i < n_in; ++i) {
      grow[i] += g * in[i];
      d_in[i] += g * row[i];
    }
  }
}

// Activations of every layer of a ReLU stack; acts[0] is the input.
struct StackTrace {
  std::vector<Vector> acts;
};

inline void run_stack(const ModelParams& m, std::size_t first, std::size_t count,
                      std::span<const double> input, StackTrace& trace, bool relu_last) {
  trace.acts.resize(count + 1);
  trace.acts[0].assign(input.begin(), input.end());
  for (std::size_t l = 0; l < count; ++l) {
    const DenseLayer& layer = m.layers[first + l];
    trace.acts[l + 1].resize(layer.out());
    dense_forward(layer, trace.acts[l], trace.acts[l + 1], relu_last || l + 1 < count);
  }
}

inline void backprop_stack(const ModelParams& m, ModelParams& grad, std::size_t first,
                           std::size_t count, const StackTrace& trace, Vector d_out,
                           Vector& d_input, bool relu_last) {
  Vector d_in;
  for (std::size_t l = count; l-- > 0;) {
    const DenseLayer& layer = m.layers[first + l];
    d_in.assign(layer.in(), 0.0);
    dense_backward(layer, grad.layers[first + l], trace.acts[l], trace.acts[l + 1], d_out, d_in,
                   relu_last || l + 1 < count);
    d_out.swap(d_in);
  }
  d_input = std::move(d_out);
}

inline Vector combine_pair(PairCombine mode, std::span<const double> zi, std::span<const double> zj) {
  const std::size_t d = zi.size();
  Vector u(2 * d);
  for (std::size_t k = 0; k < d; ++k) {
    if (mode == PairCombine::concat) {
      u[k] = zi[k];
      u[d + k] = zj[k];
    } else {
      u[k] = zi[k] + zj[k];
      u[d + k] = std::abs(zi[k] - zj[k]);
    }
  }
  return u;
}

inline void check_length(std::span<const double> v, std::size_t n, const char* what) {
  if (v.size() != n) {
    std::ostringstream msg;
    msg << what << ": expected length " << n << ", got " << v.size();
    fail(ErrorKind::invalid_argument, msg.str());
  }
}

}  // namespace detail

/// z = φ(x).
inline Vector encode(const ModelParams& params, std::span<const double> x) {
  detail::check_length(x, params.arch.input_dim(), "encode");
  detail::StackTrace t;
  detail::run_stack(params, 0, params.n_encoder_layers(), x, t, true);
  return t.acts.back();
}

inline Matrix encode_all(const ModelParams& params, const Matrix& x) {
  Matrix z(x.rows(), params.arch.emb_dim());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const Vector zi = encode(params, x.row(i));
    std::copy(zi.begin(), zi.end(), z.row(i).begin());
  }
  return z;
}

struct PairOutput {
  Vector p;  // penultimate pair feature
  std::array<double, 2> score{};
  std::size_t arity = 1;

  std::span<const double> scores() const { return {score.data(), arity}; }
};

inline PairOutput score_pair(const ModelParams& params, std::span<const double> zi,
                             std::span<const double> zj) {
  detail::check_length(zi, params.arch.emb_dim(), "score_pair");
  detail::check_length(zj, params.arch.emb_dim(), "score_pair");
  const Vector u = detail::combine_pair(params.arch.combine, zi, zj);
  detail::StackTrace t;
  const std::size_t first = params.n_encoder_layers();
  detail::run_stack(params, first, params.n_head_layers(), u, t, true);
  PairOutput out;
  out.p = t.acts.back();
  out.arity = params.arch.outputs;
  detail::dense_forward(params.layers.back(), out.p, std::span<double>(out.score.data(), out.arity),
                        false);
  return out;
}

/// How a 2-logit head is reduced to one relational logit.
enum class SceLogit { same, difference };

inline double relational_logit(const PairOutput& out, SceLogit mode = SceLogit::same) {
  if (out.arity == 1) return out.score[0];
  return mode == SceLogit::same ? out.score[1] : out.score[1] - out.score[0];
}

// ---------------------------------------------------------------------------
// Pairs

struct PairBatch {
  Matrix left;
  Matrix right;
  std::vector<PairTarget> targets;

  std::size_t size() const noexcept { return targets.size(); }
};

/// ⌈m/2⌉ same-class pairs then ⌊m/2⌋ different-class pairs, interleaved.
/// Same pairs draw a class uniformly among classes holding >= 2 samples and two
/// distinct samples of it; different pairs draw two distinct classes uniformly.
inline PairBatch sample_pairs(const EmbeddingSet& set, std::size_t m, Rng& rng) {
  set.validate();
  const auto by_class = set.rows_by_class();
  std::vector<const std::vector<std::size_t>*> all, eligible;
  for (const auto& [label, rows] : by_class) {
    all.push_back(&rows);
    if (rows.size() >= 2) eligible.push_back(&rows);
  }
  const std::size_t n_same = (m + 1) / 2;
  const std::size_t n_diff = m / 2;
  if (n_same > 0 && eligible.empty())
    fail(ErrorKind::data, "sample_pairs: no class has at least 2 samples");
  if (n_diff > 0 && all.size() < 2)
    fail(ErrorKind::data, "sample_pairs: need at least 2 classes for different pairs");

  PairBatch batch;
  batch.left = Matrix(0, set.dim());
  batch.right = Matrix(0, set.dim());
  auto emit = [&](std::size_t a, std::size_t b, bool same) {
    batch.left.append_row(set.features.row(a));
    batch.right.append_row(set.features.row(b));
    batch.targets.push_back(PairTarget::same(same));
  };
  std::size_t done_same = 0, done_diff = 0;
  while (done_same < n_same || done_diff < n_diff) {
    if (done_same < n_same) {
      const auto& rows = *eligible[rng.index(eligible.size())];
      const std::size_t a = rng.index(rows.size());
      std::size_t b = rng.index(rows.size() - 1);
      if (b >= a) ++b;
      emit(rows[a], rows[b], true);
      ++done_same;
    }
    if (done_diff < n_diff) {
      const std::size_t ca = rng.index(all.size());
      std::size_t cb = rng.index(all.size() - 1);
      if (cb >= ca) ++cb;
      emit((*all[ca])[rng.index(all[ca]->size())], (*all[cb])[rng.index(all[cb]->size())], false);
      ++done_diff;
    }
  }
  return batch;
}

// ---------------------------------------------------------------------------
// Loss and exact gradient over a pair batch

struct BatchGradient {
  double loss = 0.0;  // mean over pairs
  ModelParams grad;
};

/// Mean loss over the batch and its exact gradient with respect to every
/// parameter. Both encoder branches backpropagate into the shared encoder.
inline BatchGradient batch_loss_and_gradient(const ModelParams& params, const LossSpec& loss,
                                             const PairBatch& batch) {
  require(batch.size() > 0, ErrorKind::invalid_argument, "empty pair batch");
  require(loss.arity() == params.arch.outputs, ErrorKind::invalid_argument,
          "loss arity does not match model head");
  BatchGradient out;
  out.grad = zero_params(params.arch);
  const std::size_t n_enc = params.n_encoder_layers();
  const std::size_t n_head = params.n_head_layers();
  const std::size_t emb = params.arch.emb_dim();
  const double scale = 1.0 / static_cast<double>(batch.size());

  detail::StackTrace ti, tj, th;
  Vector d_u, d_zi(emb), d_zj(emb), d_xi, d_xj;
  for (std::size_t m = 0; m < batch.size(); ++m) {
    detail::run_stack(params, 0, n_enc, batch.left.row(m), ti, true);
    detail::run_stack(params, 0, n_enc, batch.right.row(m), tj, true);
    const Vector& zi = ti.acts.back();
    const Vector& zj = tj.acts.back();
    const Vector u = detail::combine_pair(params.arch.combine, zi, zj);
    detail::run_stack(params, n_enc, n_head, u, th, true);
    const Vector& p = th.acts.back();

    std::array<double, 2> score{};
    const DenseLayer& head_out = params.layers.back();
    detail::dense_forward(head_out, p, std::span<double>(score.data(), head_out.out()), false);
    for (std::size_t k = 0; k < head_out.out(); ++k)
      if (!std::isfinite(score[k])) fail(ErrorKind::diverged, "non-finite pair score");

    const LossOutput lo = evaluate_loss(
        loss, std::span<const double>(score.data(), head_out.out()), batch.targets[m]);
    out.loss += lo.value * scale;

    Vector d_score(head_out.out());
    for (std::size_t k = 0; k < d_score.size(); ++k) d_score[k] = lo.grad[k] * scale;
    Vector d_p(p.size());
    detail::dense_backward(head_out, out.grad.layers.back(), p,
                           std::span<const double>(score.data(), head_out.out()), d_score, d_p,
                           false);
    detail::backprop_stack(params, out.grad, n_enc, n_head, th, std::move(d_p), d_u, true);

    for (std::size_t k = 0; k < emb; ++k) {
      if (params.arch.combine == PairCombine::concat) {
        d_zi[k] = d_u[k];
        d_zj[k] = d_u[emb + k];
      } else {
        const double diff = zi[k] - zj[k];
        const double sgn = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
        d_zi[k] = d_u[k] + sgn * d_u[emb + k];
        d_zj[k] = d_u[k] - sgn * d_u[emb + k];
      }
    }
    detail::backprop_stack(params, out.grad, 0, n_enc, ti, d_zi, d_xi, true);
    detail::backprop_stack(params, out.grad, 0, n_enc, tj, d_zj, d_xj, true);
  }
  return out;
}

inline double batch_loss(const ModelParams& params, const LossSpec& loss, const PairBatch& batch) {
  double total = 0.0;
  for (std::size_t m = 0; m < batch.size(); ++m) {
    const PairOutput o = score_pair(params, encode(params, batch.left.row(m)),
                                    encode(params, batch.right.row(m)));
    total += evaluate_loss(loss, o.scores(), batch.targets[m]).value;
  }
  return total / static_cast<double>(batch.size());
}

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
  LossSpec loss;
  double learning_rate = 0.01;
  double momentum = 0.9;
  std::size_t batch_size = 64;
  std::size_t epochs = 30;
  std::size_t pairs_per_epoch = 4096;
  std::uint64_t seed = 0;
  // Hidden sizes; input_dim comes from the data and outputs from the loss.
  std::size_t encoder_hidden = 64;
  std::size_t emb_dim = 32;
  std::size_t head_hidden = 64;
  std::size_t pair_dim = 32;
  PairCombine combine = PairCombine::symmetric;

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

inline void validate(const TrainConfig& c) {
  validate(c.loss);
  auto bad = [](const std::string& what) { fail(ErrorKind::config, "train config: " + what); };
  if (!(c.learning_rate > 0.0)) bad("learning_rate must be > 0");
  if (!(c.momentum >= 0.0 && c.momentum < 1.0)) bad("momentum must lie in [0, 1)");
  if (c.batch_size < 1) bad("batch_size must be >= 1");
  if (c.pairs_per_epoch < 1) bad("pairs_per_epoch must be >= 1");
  if (c.encoder_hidden < 1 || c.emb_dim < 1 || c.head_hidden < 1 || c.pair_dim < 1)
    bad("layer sizes must be >= 1");
}

inline Architecture architecture_for(const TrainConfig& c, std::size_t input_dim) {
  Architecture a;
  a.encoder = {input_dim, c.encoder_hidden, c.emb_dim};
  a.head = {c.head_hidden, c.pair_dim};
  a.outputs = c.loss.arity();
  a.combine = c.combine;
  return a;
}

struct TrainResult {
  ModelParams params;
  Vector epoch_losses;
};

/// Parameter initialisation and pair sampling draw from separate child
/// streams of Rng(config.seed).
struct TrainStreams {
  Rng init;
  Rng pairs;

  explicit TrainStreams(std::uint64_t seed) : init(0), pairs(0) {
    Rng root(seed);
    init = root.split();
    pairs = root.split();
  }
};

inline ModelParams initial_params(const TrainConfig& config, std::size_t input_dim) {
  TrainStreams streams(config.seed);
  return init_params(architecture_for(config, input_dim), streams.init);
}

/// Mini-batch SGD with momentum (v ← μv + g, θ ← θ - ηv) on freshly sampled
/// balanced pair batches. Returns the mean training loss of every epoch.
inline TrainResult train(const TrainConfig& config, const EmbeddingSet& pretrain,
                         const std::function<void(std::size_t, double)>& on_epoch = {}) {
  validate(config);
  pretrain.validate();
  TrainStreams streams(config.seed);
  TrainResult result;
  result.params = init_params(architecture_for(config, pretrain.dim()), streams.init);
  if (config.epochs == 0) return result;

  Vector theta = result.params.flatten();
  Vector velocity(theta.size(), 0.0);
  const std::size_t n_batches = std::max<std::size_t>(1, config.pairs_per_epoch / config.batch_size);

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    double epoch_loss = 0.0;
    for (std::size_t b = 0; b < n_batches; ++b) {
      const PairBatch batch = sample_pairs(pretrain, config.batch_size, streams.pairs);
      BatchGradient g;
      try {
        g = batch_loss_and_gradient(result.params, config.loss, batch);
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::diverged && e.kind() != ErrorKind::invalid_argument) throw;
        fail(ErrorKind::diverged, "training diverged at epoch " + std::to_string(epoch + 1));
      }
      epoch_loss += g.loss;
      const Vector grad = g.grad.flatten();
      for (std::size_t i = 0; i < theta.size(); ++i) {
        velocity[i] = config.momentum * velocity[i] + grad[i];
        theta[i] -= config.learning_rate * velocity[i];
      }
      result.params.unflatten(theta);
    }
    epoch_loss /= static_cast<double>(n_batches);
    if (!std::isfinite(epoch_loss))
      fail(ErrorKind::diverged, "training diverged at epoch " + std::to_string(epoch + 1));
    result.epoch_losses.push_back(epoch_loss);
    if (on_epoch) on_epoch(epoch + 1, epoch_loss);
  }
  return result;
}

/// Relational scores of every pair in the batch (σ, or same-minus-different
/// logit for a 2-logit head).
inline Vector pair_scores(const ModelParams& params, const PairBatch& pairs) {
  Vector s(pairs.size());
  for (std::size_t m = 0; m < pairs.size(); ++m)
    s[m] = relational_logit(score_pair(params, encode(params, pairs.left.row(m)),
                                       encode(params, pairs.right.row(m))),
                            SceLogit::difference);
  return s;
}

/// AUROC of the relational score as a same/different discriminator.
inline double pair_auc_sanity(const ModelParams& params, const PairBatch& pairs) {
  require(pairs.size() > 0, ErrorKind::invalid_argument, "pair_auc_sanity: empty batch");
  const Vector s = pair_scores(params, pairs);
  ScoreSample sample;
  for (std::size_t m = 0; m < pairs.size(); ++m)
    (pairs.targets[m].binary == 1 ? sample.scores_id : sample.scores_ood).push_back(s[m]);
  if (sample.scores_id.empty() || sample.scores_ood.empty())
    fail(ErrorKind::invalid_argument, "pair_auc_sanity: batch holds a single label");
  return auroc(sample);
}

}  // namespace marginlab
