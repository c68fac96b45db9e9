#include <gtest/gtest.h>

#include "marginlab/losses.hpp"

using namespace marginlab;

namespace {

const PairTarget kSame = PairTarget::same(true);
const PairTarget kDiff = PairTarget::same(false);

}  // namespace

TEST(Bce, Values) {
  const LossOutput a = loss_bce(0.0, kSame);
  EXPECT_NEAR(a.value, std::log(2.0), 1e-15);
  EXPECT_NEAR(a.grad[0], -0.5, 1e-15);
  EXPECT_LT(loss_bce(30.0, kSame).value, 1e-12);
  const LossOutput b = loss_bce(1.0, kDiff);
  EXPECT_NEAR(b.value, std::log(1.0 + std::exp(1.0)), 1e-14);
  EXPECT_NEAR(b.value, 1.3132616875182228, 1e-14);
  EXPECT_NEAR(b.grad[0], 0.7310585786300049, 1e-14);
  EXPECT_TRUE(std::isfinite(loss_bce(-1e4, kSame).value));
}

TEST(Sce, Values) {
  EXPECT_NEAR(loss_sce({0.0, 0.0}, 1).value, std::log(2.0), 1e-15);
  EXPECT_NEAR(loss_sce({1000.0, 0.0}, 0).value, 0.0, 1e-12);
  EXPECT_NEAR(loss_sce({1.0, 0.0}, 0).value, std::log(1.0 + std::exp(-1.0)), 1e-15);
  EXPECT_NEAR(loss_sce({1.0, 0.0}, 0).value, 0.31326168751822286, 1e-14);
  const LossOutput g = loss_sce({0.3, -0.2}, 1);
  EXPECT_NEAR(g.grad[0] + g.grad[1], 0.0, 1e-15);
  EXPECT_THROW(loss_sce({0.0, 0.0}, 2), Error);
}

TEST(Focal, ReducesToBceAtGammaZero) {
  Rng rng(8);
  for (int i = 0; i < 100; ++i) {
    const double s = rng.uniform(-20.0, 20.0);
    const PairTarget t = PairTarget::same(rng.uniform() < 0.5);
    const LossOutput f = loss_focal(s, t, 0.0);
    const LossOutput b = loss_bce(s, t);
    EXPECT_EQ(f.value, b.value);
    EXPECT_EQ(f.grad[0], b.grad[0]);
  }
}

TEST(Focal, Values) {
  EXPECT_NEAR(loss_focal(0.0, kSame, 2.0).value, 0.25 * std::log(2.0), 1e-15);
  EXPECT_NEAR(loss_focal(0.0, kSame, 2.0).value, 0.17329, 1e-5);
  for (double g : {0.5, 1.0, 2.0, 5.0}) EXPECT_LT(loss_focal(30.0, kSame, g).value, 1e-12);
  EXPECT_THROW(loss_focal(0.0, kSame, -1.0), Error);
}

TEST(MseCs, Values) {
  for (double c : {1.0, 10.0, 50.0}) EXPECT_EQ(loss_mse_cs(0.0, kSame, c).value, 1.0);
  EXPECT_LT(loss_mse_cs(30.0, kSame, 10.0).value, 1e-12);
  const double s_hat = 2.0 / (1.0 + std::exp(-1.0)) - 1.0;
  EXPECT_NEAR(s_hat, 0.46212, 1e-5);
  const LossOutput o = loss_mse_cs(0.1, kSame, 10.0);
  EXPECT_NEAR(o.value, (s_hat - 1.0) * (s_hat - 1.0), 1e-15);
  EXPECT_NEAR(o.value, 0.28931, 1e-5);
  EXPECT_THROW(loss_mse_cs(0.0, kSame, 0.0), Error);
}

TEST(Hinge, Values) {
  const LossOutput a = loss_hinge(0.5, kSame, 0.01);
  EXPECT_EQ(a.value, 0.0);
  EXPECT_EQ(a.grad[0], 0.0);
  const LossOutput b = loss_hinge(-0.3, kSame, 1.0);
  EXPECT_NEAR(b.value, 1.3, 1e-15);
  EXPECT_EQ(b.grad[0], -1.0);
  const LossOutput c = loss_hinge(0.0, kDiff, 0.1);
  EXPECT_NEAR(c.value, 0.1, 1e-15);
  EXPECT_EQ(c.grad[0], 1.0);
  EXPECT_EQ(loss_hinge(0.01, kSame, 0.01).grad[0], 0.0);  // kink
  EXPECT_THROW(loss_hinge(0.0, kSame, 0.0), Error);
}

TEST(CheckGradient, Examples) {
  EXPECT_LT(check_gradient(parse_loss_spec("bce"), {{0.3, 0.0}, kSame}), 1e-6);
  EXPECT_EQ(check_gradient(parse_loss_spec("hinge:d=0.01"), {{2.0, 0.0}, kSame}), 0.0);
  EXPECT_LT(check_gradient(parse_loss_spec("focal:g=3"), {{-0.7, 0.0}, kDiff}), 1e-5);
}

TEST(CheckGradient, RandomPointsAllLosses) {
  Rng rng(21);
  for (const char* name : {"bce", "sce", "focal:g=2", "mse:c=10", "hinge:d=0.1"}) {
    const LossSpec spec = parse_loss_spec(name);
    for (int i = 0; i < 200; ++i) {
      LossPoint p{{rng.uniform(-4.0, 4.0), rng.uniform(-4.0, 4.0)}, PairTarget::same(rng.uniform() < 0.5)};
      if (spec.kind == LossKind::hinge && std::abs(spec.delta - p.target.signed_label() * p.scores[0]) < 1e-3)
        continue;
      EXPECT_LT(check_gradient(spec, p), 1e-4) << name << " at " << p.scores[0];
    }
  }
}

TEST(LossSpec, ParseAndFormat) {
  EXPECT_EQ(parse_loss_spec("sce").kind, LossKind::sce);
  EXPECT_EQ(parse_loss_spec("sce").arity(), 2u);
  EXPECT_EQ(parse_loss_spec("bce").arity(), 1u);
  EXPECT_EQ(parse_loss_spec("focal:g=3").gamma, 3.0);
  EXPECT_EQ(parse_loss_spec("mse:c=50").c, 50.0);
  EXPECT_EQ(parse_loss_spec("mse_cs:c=1").c, 1.0);
  EXPECT_EQ(parse_loss_spec("hinge:d=0.01").delta, 0.01);
  EXPECT_EQ(parse_loss_spec("hinge:d=0.01").hyperparam(), 0.01);
  for (const char* s : {"bce", "sce", "focal:g=1", "focal:g=2.5", "mse:c=10", "hinge:d=0.1", "hinge:d=0.01"})
    EXPECT_EQ(to_string(parse_loss_spec(s)), s);
  EXPECT_EQ(to_string(parse_loss_spec("focal")), "focal:g=2");
  for (const char* s : {"", "ce", "sce:g=1", "focal:c=1", "focal:g=", "hinge:d=0", "hinge:d=-1",
                        "mse:c=abc", "hinge:d=1x", "focal:g=nan"}) {
    try {
      parse_loss_spec(s);
      ADD_FAILURE() << "accepted '" << s << "'";
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::invalid_argument);
    }
  }
}

TEST(EvaluateLoss, ArityMismatch) {
  EXPECT_THROW(evaluate_loss(parse_loss_spec("sce"), Vector{0.0}, kSame), Error);
  EXPECT_THROW(evaluate_loss(parse_loss_spec("bce"), Vector{0.0, 1.0}, kSame), Error);
}

TEST(EvaluateLoss, NonFiniteScoreRejected) {
  EXPECT_THROW(loss_hinge(std::nan(""), kSame, 1.0), Error);
  EXPECT_THROW(loss_bce(std::numeric_limits<double>::infinity(), kSame), Error);
}
