#include <gtest/gtest.h>

#include "marginlab/checkpoint.hpp"
#include "marginlab/datagen.hpp"
#include "oracles.hpp"

using namespace marginlab;

namespace {

Architecture small_arch(std::size_t outputs = 1, PairCombine combine = PairCombine::concat) {
  Architecture a;
  a.encoder = {6, 8, 5};
  a.head = {7, 4};
  a.outputs = outputs;
  a.combine = combine;
  return a;
}

EmbeddingSet toy_set(std::size_t classes, std::size_t per_class, std::size_t dim, std::uint64_t seed) {
  Rng rng(seed);
  EmbeddingSet s;
  s.features = Matrix(0, dim);
  Vector x(dim);
  for (std::size_t c = 0; c < classes; ++c) {
    Vector mean(dim);
    for (double& m : mean) m = 2.0 * rng.normal();
    for (std::size_t i = 0; i < per_class; ++i) {
      for (std::size_t d = 0; d < dim; ++d) x[d] = mean[d] + 0.5 * rng.normal();
      s.push_back(x, static_cast<std::int32_t>(c));
    }
  }
  return s;
}

TrainConfig small_train(const std::string& loss, std::size_t epochs) {
  TrainConfig c;
  c.loss = parse_loss_spec(loss);
  c.epochs = epochs;
  c.pairs_per_epoch = 256;
  c.batch_size = 32;
  c.encoder_hidden = 16;
  c.emb_dim = 8;
  c.head_hidden = 16;
  c.pair_dim = 8;
  return c;
}

}  // namespace

TEST(Encode, ZeroWeightsGiveZero) {
  const ModelParams p = zero_params(small_arch());
  const Vector z = encode(p, Vector{1, 2, 3, 4, 5, 6});
  for (double v : z) EXPECT_EQ(v, 0.0);
}

TEST(Encode, IdentityLayerPassesNonnegativeInput) {
  Architecture a;
  a.encoder = {4, 4};
  a.head = {2};
  ModelParams p = zero_params(a);
  p.layers[0].weight = Matrix::identity(4);
  const Vector x{1, 2, 3, 4};
  EXPECT_EQ(encode(p, x), x);
}

TEST(Encode, DeterministicAndNonnegative) {
  Rng rng(4);
  const ModelParams p = init_params(small_arch(), rng);
  const Vector x{0.3, -1.0, 2.0, 0.0, -0.5, 1.5};
  EXPECT_EQ(encode(p, x), encode(p, x));
  for (double v : encode(p, x)) EXPECT_GE(v, 0.0);
  EXPECT_THROW(encode(p, Vector{1.0, 2.0}), Error);
}

TEST(ScorePair, ZeroHeadGivesBiases) {
  Rng rng(4);
  ModelParams p = init_params(small_arch(), rng);
  const std::size_t first_head = p.n_encoder_layers();
  for (std::size_t l = first_head; l < p.layers.size(); ++l) {
    for (double& w : p.layers[l].weight.data()) w = 0.0;
  }
  p.layers[first_head].bias = {0.5, -1.0, 0.25, 0.0, 2.0, -3.0, 1.0};
  p.layers[first_head + 1].bias = {0.1, -0.2, 0.3, 0.4};
  p.layers.back().bias = {-0.75};
  const Vector zi(5, 1.0), zj(5, 2.0);
  const PairOutput o = score_pair(p, zi, zj);
  EXPECT_EQ(o.p, (Vector{0.1, 0.0, 0.3, 0.4}));
  EXPECT_EQ(o.score[0], -0.75);
}

TEST(ScorePair, SymmetricCombineIsOrderInvariant) {
  Rng rng(6);
  const ModelParams p = init_params(small_arch(2, PairCombine::symmetric), rng);
  for (int t = 0; t < 50; ++t) {
    Vector zi(5), zj(5);
    for (double& v : zi) v = rng.uniform(0.0, 2.0);
    for (double& v : zj) v = rng.uniform(0.0, 2.0);
    const PairOutput a = score_pair(p, zi, zj), b = score_pair(p, zj, zi);
    EXPECT_EQ(a.score, b.score);
    EXPECT_EQ(a.p, b.p);
  }
}

TEST(RelationalLogit, Modes) {
  PairOutput o;
  o.arity = 2;
  o.score = {0.5, 2.0};
  EXPECT_EQ(relational_logit(o), 2.0);
  EXPECT_EQ(relational_logit(o, SceLogit::difference), 1.5);
  o.arity = 1;
  EXPECT_EQ(relational_logit(o, SceLogit::difference), 0.5);
}

TEST(SamplePairs, Balance) {
  const EmbeddingSet s = toy_set(4, 5, 3, 1);
  Rng rng(2);
  const PairBatch b = sample_pairs(s, 10, rng);
  int same = 0;
  for (const auto& t : b.targets) same += t.binary;
  EXPECT_EQ(same, 5);
  const PairBatch big = sample_pairs(s, 10000, rng);
  same = 0;
  for (const auto& t : big.targets) same += t.binary;
  EXPECT_EQ(same, 5000);
  const PairBatch odd = sample_pairs(s, 7, rng);
  same = 0;
  for (const auto& t : odd.targets) same += t.binary;
  EXPECT_EQ(same, 4);
}

TEST(SamplePairs, LabelsMatchClasses) {
  const EmbeddingSet s = toy_set(3, 4, 2, 9);
  Rng rng(3);
  const PairBatch b = sample_pairs(s, 400, rng);
  auto class_of = [&](std::span<const double> x) {
    for (std::size_t i = 0; i < s.size(); ++i)
      if (std::equal(x.begin(), x.end(), s.features.row(i).begin())) return s.labels[i];
    return -1;
  };
  for (std::size_t m = 0; m < b.size(); ++m) {
    const bool same = class_of(b.left.row(m)) == class_of(b.right.row(m));
    EXPECT_EQ(same, b.targets[m].binary == 1);
    if (same) {
      EXPECT_NE(b.left.row(m)[0], b.right.row(m)[0]);
    }
  }
}

TEST(SamplePairs, ReproducibleAndErrors) {
  const EmbeddingSet s = toy_set(2, 2, 3, 5);
  Rng a(7), b(7);
  const PairBatch x = sample_pairs(s, 12, a), y = sample_pairs(s, 12, b);
  EXPECT_EQ(x.left, y.left);
  EXPECT_EQ(x.right, y.right);
  EXPECT_EQ(x.targets, y.targets);

  const EmbeddingSet singletons = toy_set(3, 1, 3, 5);
  Rng r(1);
  try {
    sample_pairs(singletons, 4, r);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::data);
  }
  EXPECT_THROW(sample_pairs(toy_set(1, 5, 3, 5), 4, r), Error);
}

TEST(Backprop, MatchesFiniteDifferences) {
  const EmbeddingSet s = toy_set(4, 6, 6, 12);
  for (const char* loss : {"bce", "sce", "focal:g=2", "mse:c=1", "hinge:d=1"}) {
    for (PairCombine combine : {PairCombine::concat, PairCombine::symmetric}) {
      const LossSpec spec = parse_loss_spec(loss);
      Rng rng(31);
      const ModelParams p = init_params(small_arch(spec.arity(), combine), rng);
      const PairBatch batch = sample_pairs(s, 16, rng);
      const BatchGradient g = batch_loss_and_gradient(p, spec, batch);
      EXPECT_NEAR(g.loss, batch_loss(p, spec, batch), 1e-12);
      const Vector flat = g.grad.flatten();
      for (std::size_t i = 0; i < flat.size(); i += 3) {
        const double fd = oracle::fd_parameter_gradient(p, spec, batch, i);
        EXPECT_LT(relative_error(flat[i], fd), 1e-4) << loss << " parameter " << i;
      }
    }
  }
}

TEST(Backprop, EncoderGradientSumsBothBranches) {
  const EmbeddingSet s = toy_set(3, 4, 6, 2);
  Rng rng(8);
  const ModelParams p = init_params(small_arch(), rng);
  const LossSpec bce = parse_loss_spec("bce");
  const PairBatch one = sample_pairs(s, 2, rng);
  const BatchGradient g = batch_loss_and_gradient(p, bce, one);
  const std::size_t n_encoder =
      p.layers[0].weight.data().size() + p.layers[0].bias.size() + p.layers[1].weight.data().size() +
      p.layers[1].bias.size();
  const Vector flat = g.grad.flatten();
  double norm = 0.0;
  for (std::size_t i = 0; i < n_encoder; ++i) {
    norm += std::abs(flat[i]);
    EXPECT_LT(relative_error(flat[i], oracle::fd_parameter_gradient(p, bce, one, i)), 1e-4) << i;
  }
  EXPECT_GT(norm, 0.0);
}

TEST(Train, ZeroEpochsEqualsInit) {
  const EmbeddingSet s = toy_set(4, 6, 6, 3);
  const TrainConfig c = small_train("hinge:d=0.01", 0);
  const TrainResult r = train(c, s);
  EXPECT_EQ(r.params, initial_params(c, 6));
  EXPECT_TRUE(r.epoch_losses.empty());
}

TEST(Train, DeterministicPerSeed) {
  const EmbeddingSet s = toy_set(4, 6, 6, 3);
  TrainConfig c = small_train("sce", 3);
  c.seed = 5;
  const TrainResult a = train(c, s), b = train(c, s);
  EXPECT_EQ(a.params, b.params);
  EXPECT_EQ(a.epoch_losses, b.epoch_losses);
  c.seed = 6;
  EXPECT_NE(train(c, s).params, a.params);
}

TEST(Train, LossDecreasesOnEasyData) {
  const EmbeddingSet s = toy_set(5, 10, 6, 4);
  for (const char* loss : {"bce", "sce", "hinge:d=0.1"}) {
    const TrainResult r = train(small_train(loss, 15), s);
    ASSERT_EQ(r.epoch_losses.size(), 15u);
    EXPECT_LT(r.epoch_losses.back(), r.epoch_losses.front()) << loss;
  }
}

TEST(Train, DivergenceNamesEpoch) {
  const EmbeddingSet s = toy_set(4, 6, 6, 3);
  TrainConfig c = small_train("mse:c=1", 5);
  c.learning_rate = 1e12;
  c.loss = parse_loss_spec("hinge:d=1");
  c.combine = PairCombine::concat;  // blows up here; symmetric kills every ReLU instead
  try {
    train(c, s);
    FAIL() << "expected divergence";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::diverged);
    EXPECT_NE(std::string(e.what()).find("epoch"), std::string::npos);
  }
}

TEST(Train, ConfigValidation) {
  const EmbeddingSet s = toy_set(4, 6, 6, 3);
  TrainConfig c = small_train("bce", 1);
  c.momentum = 1.0;
  EXPECT_THROW(train(c, s), Error);
  c = small_train("bce", 1);
  c.batch_size = 0;
  EXPECT_THROW(train(c, s), Error);
}

TEST(PairAucSanity, ComplementAndErrors) {
  const EmbeddingSet s = toy_set(4, 8, 6, 3);
  const TrainResult r = train(small_train("bce", 5), s);
  Rng rng(1);
  PairBatch b = sample_pairs(s, 200, rng);
  const double auc = pair_auc_sanity(r.params, b);
  for (auto& t : b.targets) t.binary = 1 - t.binary;
  EXPECT_NEAR(pair_auc_sanity(r.params, b), 1.0 - auc, 1e-12);
  for (auto& t : b.targets) t.binary = 1;
  try {
    pair_auc_sanity(r.params, b);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::invalid_argument);
  }
}

TEST(PairAucSanity, ChanceAtInit) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    BenchmarkConfig bc;
    bc.seed = seed;
    const BenchmarkSplit split = gen_benchmark(bc);
    TrainConfig c;
    c.seed = seed;
    Rng rng(100 + seed);
    const double auc = pair_auc_sanity(initial_params(c, bc.input_dim), sample_pairs(split.holdout, 2000, rng));
    EXPECT_GT(auc, 0.4) << "seed " << seed;
    EXPECT_LT(auc, 0.6) << "seed " << seed;
  }
}

TEST(Checkpoint, RoundTripAtFloat32) {
  const EmbeddingSet s = toy_set(4, 6, 6, 3);
  TrainConfig c = small_train("focal:g=3", 2);
  c.combine = PairCombine::symmetric;
  const Checkpoint ck = make_checkpoint(c, train(c, s));
  const Checkpoint back = decode_checkpoint(encode_checkpoint(ck));
  EXPECT_EQ(back.params.arch, ck.params.arch);
  const Vector a = ck.params.flatten(), b = back.params.flatten();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(b[i], static_cast<double>(static_cast<float>(a[i])));
  EXPECT_EQ(back.config.loss, c.loss);
  EXPECT_EQ(back.config.combine, PairCombine::symmetric);
  EXPECT_EQ(back.epoch_losses, ck.epoch_losses);
  EXPECT_EQ(encode_checkpoint(back), encode_checkpoint(ck));
}

TEST(Checkpoint, Errors) {
  const EmbeddingSet s = toy_set(4, 6, 6, 3);
  const TrainConfig c = small_train("bce", 0);
  const std::string bytes = encode_checkpoint(make_checkpoint(c, train(c, s)));
  auto kind = [](const std::string& b) {
    try {
      decode_checkpoint(b);
    } catch (const Error& e) {
      return e.kind();
    }
    return ErrorKind::config;
  };
  for (std::size_t cut : {std::size_t{3}, std::size_t{10}, bytes.size() / 2, bytes.size() - 1})
    EXPECT_EQ(kind(bytes.substr(0, cut)), ErrorKind::format) << cut;
  std::string v0 = bytes;
  v0[4] = 0;
  EXPECT_EQ(kind(v0), ErrorKind::unsupported_version);
  EXPECT_EQ(kind("OODF" + bytes.substr(4)), ErrorKind::format);
  EXPECT_EQ(kind(bytes + "!"), ErrorKind::format);
}
