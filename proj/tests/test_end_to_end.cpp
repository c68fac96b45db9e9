#include <gtest/gtest.h>

#include "marginlab/experiment.hpp"

using namespace marginlab;

// Default benchmark and training config throughout; models are trained once
// per (loss, seed) and shared between tests.

namespace {

struct TrainedRun {
  BenchmarkSplit split;
  TrainResult trained;
};

const TrainedRun& run_for(const std::string& loss, std::uint64_t seed) {
  static std::map<std::pair<std::string, std::uint64_t>, TrainedRun> cache;
  const auto key = std::make_pair(loss, seed);
  auto it = cache.find(key);
  if (it == cache.end()) {
    BenchmarkConfig bc;
    bc.seed = seed;
    TrainConfig tc;
    tc.loss = parse_loss_spec(loss);
    tc.seed = seed;
    TrainedRun r;
    r.split = gen_benchmark(bc);
    r.trained = train(tc, r.split.pretrain);
    it = cache.emplace(key, std::move(r)).first;
  }
  return it->second;
}

double score_range(const EvalReport& rep) {
  const auto [lo, hi] = std::minmax_element(rep.scores.begin(), rep.scores.end());
  return *hi - *lo;
}

}  // namespace

TEST(EndToEnd, HingeSmallMarginLossDecreases) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Vector& curve = run_for("hinge:d=0.01", seed).trained.epoch_losses;
    ASSERT_EQ(curve.size(), TrainConfig{}.epochs);
    EXPECT_LT(curve.back(), curve.front()) << "seed " << seed;
  }
}

TEST(EndToEnd, TrainedModelSeparatesPairsOfItsTrainingDistribution) {
  const TrainedRun& r = run_for("sce", 0);
  Rng rng(99);
  const PairBatch pairs = sample_pairs(r.split.pretrain, 2000, rng);
  EXPECT_GT(pair_auc_sanity(r.trained.params, pairs), 0.9);
}

TEST(EndToEnd, SceSeparatesPairClustersMoreThanHinge) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const TrainedRun& sce = run_for("sce", seed);
    const TrainedRun& hinge = run_for("hinge:d=0.01", seed);
    const PairBatch pairs = r2_pairs_for(sce.split, 2000, seed, false);
    const double r2_sce = r2_of_pairs(sce.trained.params, pairs).r2;
    const double r2_hinge = r2_of_pairs(hinge.trained.params, pairs).r2;
    EXPECT_GT(r2_sce, r2_hinge) << "seed " << seed;
  }
}

TEST(EndToEnd, HingeGivesNarrowerMspRange) {
  const TrainedRun& sce = run_for("sce", 0);
  const TrainedRun& hinge = run_for("hinge:d=0.01", 0);
  const EvalReport a =
      evaluate_scorer(sce.trained.params, sce.split.support, sce.split.test, ScorerKind::proto_msp);
  const EvalReport b = evaluate_scorer(hinge.trained.params, hinge.split.support, hinge.split.test,
                                       ScorerKind::proto_msp);
  EXPECT_LT(score_range(b), score_range(a));
}

TEST(EndToEnd, StrongShiftLowersEveryScorer) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const TrainedRun& r = run_for("sce", seed);
    BenchmarkConfig bc;
    bc.seed = seed;
    Rng shift_rng(seed + 500);
    bc.shift = make_domain_shift(bc.input_dim, 0.0, 10.0 * bc.within_class_std, false, shift_rng);
    const BenchmarkSplit shifted = gen_benchmark(bc);
    const auto rows = run_crossdomain(r.trained.params, r.split.support, r.split.test, shifted.test,
                                      all_scorers());
    for (const auto& row : rows) {
      EXPECT_LT(row.auroc_cross, row.auroc_intra) << to_string(row.scorer) << " seed " << seed;
      EXPECT_EQ(row.n_comp_intra, row.n_comp_cross);
    }
  }
}
