#include <gtest/gtest.h>

#include "marginlab/experiment.hpp"

using namespace marginlab;

namespace {

SweepConfig tiny_sweep() {
  SweepConfig c;
  c.grid = {parse_loss_spec("hinge:d=0.1")};
  c.seeds = {3};
  c.benchmark.input_dim = 8;
  c.benchmark.n_pretrain_classes = 6;
  c.benchmark.n_known_classes = 3;
  c.benchmark.n_unknown_classes = 3;
  c.benchmark.samples_per_class = {20, 10, 12, 6};
  c.train.epochs = 2;
  c.train.pairs_per_epoch = 256;
  c.train.encoder_hidden = 8;
  c.train.emb_dim = 6;
  c.train.head_hidden = 16;
  c.train.pair_dim = 16;
  c.r2_pairs = 200;
  return c;
}

SweepRow row(const char* loss, double r2, double auc, std::string status = "ok") {
  SweepRow r;
  r.loss = parse_loss_spec(loss);
  r.r2 = r2;
  r.auroc = auc;
  r.status = std::move(status);
  return r;
}

}  // namespace

TEST(Csv, NumberRoundTrip) {
  for (double v : {0.1, -3.0, 1e-300, 2.0 / 3.0, 12345.678})
    EXPECT_EQ(parse_csv_double(csv_number(v)), v);
  EXPECT_EQ(csv_number(std::nan("")), "nan");
  EXPECT_TRUE(std::isnan(parse_csv_double("nan")));
  EXPECT_THROW(parse_csv_double("1.5x"), Error);
}

TEST(Csv, ColumnCountMismatchNamesLine) {
  try {
    parse_csv_table("a,b\n1,2\n3\n", "t.csv");
    FAIL() << "no error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::format);
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos);
  }
}

TEST(Csv, ScoresRoundTrip) {
  const std::vector<ScoreRecord> recs{{"knn", 0, false, -0.25}, {"knn", 1, true, -1.0 / 3.0}};
  const std::string text = scores_csv(recs);
  EXPECT_EQ(text.substr(0, text.find('\n')), "scorer,sample_index,is_ood,score");
  EXPECT_EQ(parse_scores_csv(text), recs);
  EXPECT_THROW(parse_scores_csv("scorer,sample_index,is_ood,score\nknn,0,2,0.5\n"), Error);
}

TEST(Histogram, SeparatedScoresFillExtremeBins) {
  const Vector id(100, 0.9), ood(100, 0.1);
  const Histogram h = make_histogram(id, ood, 8);
  ASSERT_EQ(h.bins(), 8u);
  EXPECT_FALSE(h.degenerate);
  EXPECT_EQ(h.id_counts.back(), 100u);
  EXPECT_EQ(h.ood_counts.front(), 100u);
  for (std::size_t b = 1; b + 1 < 8; ++b) {
    EXPECT_EQ(h.id_counts[b], 0u);
    EXPECT_EQ(h.ood_counts[b], 0u);
  }
  EXPECT_DOUBLE_EQ(h.bin_lo(0), 0.1);
  EXPECT_DOUBLE_EQ(h.bin_hi(7), 0.9);
}

TEST(Histogram, CountsConserved) {
  Rng rng(5);
  Vector id(137), ood(61);
  for (double& v : id) v = rng.normal();
  for (double& v : ood) v = rng.normal() - 1.0;
  const Histogram h = make_histogram(id, ood, 13);
  std::size_t ni = 0, no = 0;
  for (std::size_t b = 0; b < h.bins(); ++b) {
    ni += h.id_counts[b];
    no += h.ood_counts[b];
  }
  EXPECT_EQ(ni, 137u);
  EXPECT_EQ(no, 61u);
}

TEST(Histogram, IdenticalScoresGiveOneBin) {
  const Vector id(10, 0.5), ood(4, 0.5);
  const Histogram h = make_histogram(id, ood, 20);
  EXPECT_TRUE(h.degenerate);
  ASSERT_EQ(h.bins(), 1u);
  EXPECT_EQ(h.id_counts[0], 10u);
  EXPECT_EQ(h.ood_counts[0], 4u);
  const std::string csv = histogram_csv(h);
  EXPECT_EQ(parse_csv_table(csv).rows.size(), 1u);
}

TEST(Histogram, SvgCarriesRangeAndLegend) {
  const Histogram h = make_histogram(Vector{0.2, 0.4}, Vector{0.3}, 4);
  const std::string svg = histogram_svg(h, "proto-msp");
  EXPECT_NE(svg.find("<svg"), std::string::npos);
  EXPECT_NE(svg.find("range 0.2 to 0.4"), std::string::npos);
  EXPECT_NE(svg.find(">ID<"), std::string::npos);
  EXPECT_NE(svg.find(">OOD<"), std::string::npos);
}

TEST(Summary, SignsAndExclusions) {
  std::vector<SweepRow> rows{row("sce", 0.9, 0.6), row("bce", 0.5, 0.7), row("hinge:d=0.1", 0.1, 0.8),
                             row("mse:c=10", std::nan(""), 0.5, "r2-degenerate")};
  const auto trends = summarize_sweep(rows, {ScorerKind::proto_msp});
  ASSERT_EQ(trends.size(), 1u);
  EXPECT_EQ(trends[0].n_rows, 3u);
  EXPECT_EQ(trends[0].excluded, 1u);
  EXPECT_DOUBLE_EQ(trends[0].spearman_r2_auroc, -1.0);
  const std::string text = sweep_summary(rows, {ScorerKind::proto_msp});
  EXPECT_NE(text.find("sign=negative"), std::string::npos);
  EXPECT_NE(text.find("excluded loss=mse:c=10 seed=0 status=r2-degenerate"), std::string::npos);

  rows.pop_back();
  rows.pop_back();
  EXPECT_NE(sweep_summary(rows, {ScorerKind::proto_msp}).find("sign=undefined"), std::string::npos);
}

TEST(Sweep, OneCellGivesOneRowPerScorer) {
  const SweepConfig c = tiny_sweep();
  const auto rows = run_sweep(c);
  ASSERT_EQ(rows.size(), 3u);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    EXPECT_EQ(rows[i].scorer, all_scorers()[i]);
    EXPECT_EQ(rows[i].seed, 3u);
    EXPECT_EQ(rows[i].status, "ok");
    EXPECT_TRUE(rows[i].r2 >= 0.0 && rows[i].r2 <= 1.0);
    EXPECT_TRUE(rows[i].auroc >= 0.0 && rows[i].auroc <= 1.0);
  }
  EXPECT_EQ(rows[0].n_comp, 3u);
  EXPECT_EQ(rows[1].n_comp, 36u);
  EXPECT_EQ(rows[2].n_comp, 3u);
  EXPECT_EQ(rows[0].r2, rows[1].r2);
}

TEST(Sweep, RerunIsByteIdenticalAndThreadIndependent) {
  SweepConfig c = tiny_sweep();
  c.grid.push_back(parse_loss_spec("sce"));
  c.seeds = {0, 1};
  const std::string a = sweep_csv(run_sweep(c));
  EXPECT_EQ(a, sweep_csv(run_sweep(c)));
  c.threads = 3;
  EXPECT_EQ(a, sweep_csv(run_sweep(c)));
}

TEST(Sweep, CsvRoundTrip) {
  const auto rows = run_sweep(tiny_sweep());
  const auto back = parse_sweep_csv(sweep_csv(rows));
  ASSERT_EQ(back.size(), rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    EXPECT_EQ(back[i].loss, rows[i].loss);
    EXPECT_EQ(back[i].scorer, rows[i].scorer);
    EXPECT_EQ(back[i].r2, rows[i].r2);
    EXPECT_EQ(back[i].auroc, rows[i].auroc);
    EXPECT_EQ(back[i].n_comp, rows[i].n_comp);
  }
  const std::string timing = timing_csv(rows);
  EXPECT_EQ(parse_csv_table(timing).rows.size(), 1u);
}

TEST(Sweep, DeadPairFeaturesAreMarkedNotFatal) {
  // A huge step kills every penultimate ReLU, so R² has zero-norm rows.
  SweepConfig c = tiny_sweep();
  c.train.learning_rate = 1e6;
  const auto rows = run_sweep(c);
  ASSERT_EQ(rows.size(), 3u);
  for (const auto& r : rows) EXPECT_TRUE(std::isnan(r.r2));
  EXPECT_EQ(rows[0].status, "r2-degenerate");
  EXPECT_TRUE(std::isfinite(rows[0].auroc));
  // Constant embeddings leave a zero covariance, which the ridge cannot fix.
  EXPECT_EQ(rows[2].status, "fit-failed");
  EXPECT_TRUE(std::isnan(rows[2].auroc));
  EXPECT_NE(sweep_summary(rows, all_scorers()).find("status=r2-degenerate"), std::string::npos);
}

TEST(CrossDomain, ZeroShiftLeavesEverythingUnchanged) {
  const SweepConfig c = tiny_sweep();
  const BenchmarkSplit plain = gen_benchmark(benchmark_for_seed(c, 7));
  BenchmarkConfig shifted_cfg = benchmark_for_seed(c, 7);
  shifted_cfg.shift = DomainShift{Matrix::identity(8), Vector(8, 0.0), 0.0};
  const BenchmarkSplit shifted = gen_benchmark(shifted_cfg);

  TrainConfig tc = c.train;
  tc.loss = parse_loss_spec("sce");
  const ModelParams params = train(tc, plain.pretrain).params;
  const auto rows = run_crossdomain(params, plain.support, plain.test, shifted.test, all_scorers());
  ASSERT_EQ(rows.size(), 3u);
  for (const auto& r : rows) {
    EXPECT_EQ(r.delta_auroc(), 0.0);
    EXPECT_EQ(r.n_comp_intra, r.n_comp_cross);
    EXPECT_EQ(r.fpr95_intra, r.fpr95_cross);
  }
  EXPECT_EQ(parse_csv_table(crossdomain_csv(rows)).rows.size(), 3u);
}
