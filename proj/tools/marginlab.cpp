// marginlab: command-line driver for benchmark generation, relational
// pre-training, OOD scoring, R² analysis, sweeps and report rendering.

#include <filesystem>
#include <iostream>

#include "CLI11.hpp"
#include "marginlab/checkpoint.hpp"
#include "marginlab/experiment.hpp"
#include "marginlab/oodf.hpp"

namespace fs = std::filesystem;
using namespace marginlab;

namespace {

struct BenchmarkFlags {
  BenchmarkConfig config;
  std::string shift;

  void add(CLI::App& app) {
    app.add_option("--seed", config.seed, "benchmark seed");
    app.add_option("--input-dim", config.input_dim);
    app.add_option("--pretrain-classes", config.n_pretrain_classes);
    app.add_option("--known", config.n_known_classes, "known (support) classes");
    app.add_option("--unknown", config.n_unknown_classes, "unknown (OOD) classes");
    app.add_option("--pretrain-per-class", config.samples_per_class.pretrain);
    app.add_option("--holdout-per-class", config.samples_per_class.holdout);
    app.add_option("--support-per-class", config.samples_per_class.support);
    app.add_option("--test-per-class", config.samples_per_class.test);
    app.add_option("--mean-scale", config.class_mean_scale);
    app.add_option("--within-std", config.within_class_std);
    app.add_option("--pretrain-mean-dims", config.pretrain_mean_dims,
                   "pre-training class means vary in this many leading input dims (0 = all)");
    app.add_option("--shift", shift, "test-set domain shift, e.g. noise=2,bias=0.5,rotate=1,seed=3");
  }
};

/// "noise=<std>,bias=<scale>,rotate=<0|1>,seed=<n>"; every key optional.
/// The rotation and bias are drawn from their own stream so the same spec
/// always yields the same transform.
DomainShift parse_shift(const std::string& text, std::size_t dim, std::uint64_t default_seed) {
  double noise = 0.0, bias = 0.0;
  bool rotate = false;
  std::uint64_t seed = default_seed;
  std::istringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) fail(ErrorKind::invalid_argument, "shift: expected key=value, got '" + item + "'");
    const std::string key = item.substr(0, eq), value = item.substr(eq + 1);
    try {
      if (key == "noise")
        noise = std::stod(value);
      else if (key == "bias")
        bias = std::stod(value);
      else if (key == "rotate")
        rotate = std::stoi(value) != 0;
      else if (key == "seed")
        seed = std::stoull(value);
      else
        fail(ErrorKind::invalid_argument, "shift: unknown key '" + key + "'");
    } catch (const std::logic_error&) {
      fail(ErrorKind::invalid_argument, "shift: bad value for '" + key + "'");
    }
  }
  require(noise >= 0.0 && bias >= 0.0, ErrorKind::invalid_argument, "shift: noise and bias must be >= 0");
  Rng rng(seed ^ 0x9E3779B97F4A7C15ULL);
  return make_domain_shift(dim, bias, noise, rotate, rng);
}

struct TrainFlags {
  TrainConfig config;
  std::string loss = "sce";
  std::string combine = TrainConfig{}.combine == PairCombine::concat ? "concat" : "symmetric";

  void add(CLI::App& app, bool with_loss) {
    if (with_loss) app.add_option("--loss", loss, "loss spec: sce | bce | focal:g=G | mse:c=C | hinge:d=D");
    app.add_option("--epochs", config.epochs);
    app.add_option("--lr", config.learning_rate);
    app.add_option("--momentum", config.momentum);
    app.add_option("--batch", config.batch_size);
    app.add_option("--pairs-per-epoch", config.pairs_per_epoch);
    app.add_option("--encoder-hidden", config.encoder_hidden);
    app.add_option("--emb-dim", config.emb_dim);
    app.add_option("--head-hidden", config.head_hidden);
    app.add_option("--pair-dim", config.pair_dim);
    app.add_option("--combine", combine, "concat | symmetric")->check(CLI::IsMember({"concat", "symmetric"}));
  }

  TrainConfig resolve(std::uint64_t seed) const {
    TrainConfig c = config;
    c.loss = parse_loss_spec(loss);
    c.combine = combine == "concat" ? PairCombine::concat : PairCombine::symmetric;
    c.seed = seed;
    return c;
  }
};

struct ScorerFlags {
  std::vector<std::string> scorers{"proto-msp"};
  ScorerOptions options;
  std::string sce_logit = "same";

  void add(CLI::App& app) {
    app.add_option("--scorer", scorers, "proto-msp | knn | mahalanobis | all (repeatable)");
    app.add_option("--k", options.k, "k for the k-NN scorer");
    app.add_flag("--no-normalize", [this](std::int64_t) { options.normalize = false; },
                 "k-NN on raw instead of L2-normalized embeddings");
    app.add_option("--epsilon-scale", options.epsilon_scale, "Mahalanobis ridge, relative to trace/D");
    app.add_option("--sce-logit", sce_logit, "logit used by proto-msp for 2-logit heads")
        ->check(CLI::IsMember({"same", "difference"}));
  }

  std::vector<ScorerKind> kinds() const {
    std::vector<ScorerKind> out;
    for (const auto& s : scorers) {
      if (s == "all") return all_scorers();
      out.push_back(parse_scorer(s));
    }
    return out;
  }

  ScorerOptions resolve() const {
    ScorerOptions o = options;
    o.sce_logit = sce_logit == "difference" ? SceLogit::difference : SceLogit::same;
    return o;
  }
};

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  oodf::detail::write_file(path, text);
}

std::string read_text(const fs::path& path) { return oodf::detail::read_file(path); }

std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
  std::vector<std::uint64_t> out;
  std::istringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stoull(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::logic_error&) {
      fail(ErrorKind::invalid_argument, "bad seed '" + item + "'");
    }
  }
  require(!out.empty(), ErrorKind::config, "seed list is empty");
  return out;
}

std::string fmt(double v) {
  std::ostringstream s;
  s << std::setprecision(6) << v;
  return s.str();
}

// ---------------------------------------------------------------------------

void cmd_gen(const BenchmarkFlags& bf, const fs::path& out) {
  BenchmarkConfig config = bf.config;
  if (!bf.shift.empty()) config.shift = parse_shift(bf.shift, config.input_dim, config.seed);
  const BenchmarkSplit split = gen_benchmark(config);
  fs::create_directories(out);
  oodf::write(out / "pretrain.oodf", split.pretrain);
  oodf::write(out / "holdout.oodf", split.holdout);
  oodf::write(out / "support.oodf", split.support);
  oodf::write(out / "test.oodf", split.test);
  std::cout << "pretrain " << split.pretrain.size() << " holdout " << split.holdout.size() << " support "
            << split.support.size() << " test " << split.test.size() << " dim " << config.input_dim << "\n";
}

void cmd_pretrain(const TrainFlags& tf, std::uint64_t seed, const fs::path& data, const fs::path& out,
                  bool quiet) {
  const EmbeddingSet pretrain = oodf::read(data);
  const TrainConfig config = tf.resolve(seed);
  TrainResult result = train(config, pretrain, [&](std::size_t epoch, double loss) {
    if (!quiet) std::cout << "epoch " << epoch << " loss " << fmt(loss) << "\n";
  });
  save_checkpoint(make_checkpoint(config, std::move(result)), out);
}

void cmd_evaluate(const ScorerFlags& sf, const std::string& model, const fs::path& support_path,
                  const fs::path& test_path, const std::string& out) {
  const EmbeddingSet support = oodf::read(support_path);
  const EmbeddingSet test = oodf::read(test_path);
  std::optional<Checkpoint> ck;
  if (!model.empty()) ck = load_checkpoint(model);
  std::vector<ScoreRecord> records;
  for (ScorerKind kind : sf.kinds()) {
    const EvalReport rep = evaluate_features(ck ? &ck->params : nullptr, support, test, kind, sf.resolve());
    std::cout << "scorer " << to_string(kind) << " auroc " << fmt(rep.auroc) << " fpr95 "
              << fmt(rep.fpr_at_tpr95) << " n.comp " << rep.n_comp_per_test << " prototypes "
              << support.class_ids().size() << "\n";
    const auto r = score_records(rep);
    records.insert(records.end(), r.begin(), r.end());
  }
  if (!out.empty()) write_text(fs::path(out) / "scores.csv", scores_csv(records));
}

void cmd_r2(const std::string& model, const fs::path& data, std::size_t n_pairs, std::uint64_t seed,
            const std::string& method, const std::string& out) {
  const Checkpoint ck = load_checkpoint(model);
  const EmbeddingSet set = oodf::read(data);
  Rng rng(seed);
  const PairBatch pairs = sample_pairs(set, n_pairs, rng);
  const LabeledFeatureSet features = pair_features(ck.params, pairs);
  const SeparationReport rep =
      r2_index(features, method == "shortcut" ? R2Method::shortcut : R2Method::direct);
  std::cout << "r2 " << fmt(rep.r2) << " d_within " << fmt(rep.d_within) << " d_total "
            << fmt(rep.d_total) << "\n";
  if (!out.empty()) {
    write_text(fs::path(out) / "r2_report.csv", r2_report_csv({{ck.config.loss, ck.config.seed, rep}}));
    write_text(fs::path(out) / "projection.csv", projection_csv(project_2d(features), features.class_of));
  }
}

void cmd_sweep(SweepConfig config, const fs::path& out, bool quiet) {
  config.threads = threads_from_env(1);
  const auto rows = run_sweep(config, [&](const SweepRow& r) {
    if (!quiet)
      std::cerr << "done loss=" << to_string(r.loss) << " seed=" << r.seed << " status=" << r.status
                << "\n";
  });
  std::vector<R2Record> r2;
  for (const auto& r : rows)
    if (r.scorer == config.scorers.front() && r.usable()) r2.push_back({r.loss, r.seed, {r.r2, r.d_within, r.d_total, {}}});
  const std::string summary = sweep_summary(rows, config.scorers);
  fs::create_directories(out);
  write_text(out / "sweep.csv", sweep_csv(rows));
  write_text(out / "timing.csv", timing_csv(rows));
  write_text(out / "r2_report.csv", r2_report_csv(r2));
  write_text(out / "summary.txt", summary);
  std::cout << summary;
}

void cmd_hist(const fs::path& scores_path, const std::string& scorer, std::size_t bins, const fs::path& out) {
  const auto records = parse_scores_csv(read_text(scores_path), scores_path.string());
  std::string name = scorer;
  if (name.empty()) {
    require(!records.empty(), ErrorKind::data, scores_path.string() + ": no scores");
    name = records.front().scorer;
  }
  Vector id, ood;
  for (const auto& r : records)
    if (r.scorer == name) (r.is_ood ? ood : id).push_back(r.score);
  require(!id.empty() || !ood.empty(), ErrorKind::data, "no scores for scorer '" + name + "'");
  const Histogram h = make_histogram(id, ood, bins);
  if (h.degenerate) std::cerr << "warning: all scores equal " << fmt(h.lo) << "; using a single bin\n";
  fs::create_directories(out);
  write_text(out / "hist.csv", histogram_csv(h));
  write_text(out / "hist.svg", histogram_svg(h, name + " scores"));
  std::cout << "range " << fmt(h.lo) << " " << fmt(h.hi) << " width " << fmt(h.hi - h.lo) << " id " << id.size()
            << " ood " << ood.size() << "\n";
}

void cmd_crossdomain(const BenchmarkFlags& bf, const TrainFlags& tf, const ScorerFlags& sf,
                     const std::string& model, const fs::path& out) {
  require(!bf.shift.empty(), ErrorKind::config, "crossdomain: --shift is required");
  BenchmarkConfig intra = bf.config;
  intra.shift.reset();
  BenchmarkConfig cross = bf.config;
  cross.shift = parse_shift(bf.shift, cross.input_dim, cross.seed);
  const BenchmarkSplit a = gen_benchmark(intra);
  const BenchmarkSplit b = gen_benchmark(cross);
  ModelParams params;
  if (!model.empty())
    params = load_checkpoint(model).params;
  else
    params = train(tf.resolve(bf.config.seed), a.pretrain).params;
  const auto rows = run_crossdomain(params, a.support, a.test, b.test, sf.kinds(), sf.resolve());
  for (const auto& r : rows)
    std::cout << "scorer " << to_string(r.scorer) << " auroc_intra " << fmt(r.auroc_intra) << " auroc_cross "
              << fmt(r.auroc_cross) << " delta " << fmt(r.delta_auroc()) << " n.comp " << r.n_comp_intra
              << "\n";
  if (!out.empty()) write_text(fs::path(out) / "crossdomain.csv", crossdomain_csv(rows));
}

int report(ErrorKind kind, const std::string& message) {
  std::string flat = message;
  std::replace(flat.begin(), flat.end(), '\n', ' ');
  std::cerr << "error: kind=" << to_string(kind) << " message=" << flat << "\n";
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"marginlab: relational OOD detection experiments"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  bool quiet = false;
  app.add_flag("-q,--quiet", quiet, "suppress progress output");

  // gen
  auto* gen = app.add_subcommand("gen", "generate a synthetic benchmark as OODF files");
  BenchmarkFlags gen_bench;
  std::string gen_out;
  gen_bench.add(*gen);
  gen->add_option("--out", gen_out, "output directory")->required();

  // pretrain
  auto* pre = app.add_subcommand("pretrain", "train the relational model on same/different pairs");
  TrainFlags pre_train;
  std::uint64_t pre_seed = 0;
  std::string pre_data, pre_out;
  pre_train.add(*pre, true);
  pre->add_option("--seed", pre_seed, "training seed");
  pre->add_option("--data", pre_data, "pre-training OODF/CSV file")->required();
  pre->add_option("--out", pre_out, "checkpoint path")->required();

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "score a test set against a support set");
  ScorerFlags ev_score;
  std::string ev_model, ev_support, ev_test, ev_out;
  ev_score.add(*ev);
  ev->add_option("--model", ev_model, "checkpoint; omit to score the stored features directly");
  ev->add_option("--support", ev_support, "support OODF/CSV file")->required();
  ev->add_option("--test", ev_test, "test OODF/CSV file")->required();
  ev->add_option("--out", ev_out, "directory for scores.csv");

  // r2
  auto* r2 = app.add_subcommand("r2", "R² index of pair features on sampled pairs");
  std::string r2_model, r2_data, r2_out, r2_method = "direct";
  std::size_t r2_pairs = 2000;
  std::uint64_t r2_seed = 0;
  r2->add_option("--model", r2_model, "checkpoint")->required();
  r2->add_option("--data", r2_data, "OODF/CSV file pairs are drawn from (e.g. holdout.oodf)")->required();
  r2->add_option("--pairs", r2_pairs, "number of balanced pairs");
  r2->add_option("--seed", r2_seed, "pair sampling seed");
  r2->add_option("--method", r2_method)->check(CLI::IsMember({"direct", "shortcut"}));
  r2->add_option("--out", r2_out, "directory for r2_report.csv and projection.csv");

  // sweep
  auto* sw = app.add_subcommand("sweep", "loss x seed sweep: train, R², evaluate");
  BenchmarkFlags sw_bench;
  TrainFlags sw_train;
  ScorerFlags sw_score;
  std::string sw_grid, sw_seeds = "0,1,2,3,4", sw_out;
  SweepConfig sw_config;
  sw_bench.add(*sw);
  sw_train.add(*sw, false);
  sw_score.add(*sw);
  sw_score.scorers = {"all"};
  sw->add_option("--grid", sw_grid, "comma-separated loss specs (default: the 11-loss grid)");
  sw->add_option("--seeds", sw_seeds, "comma-separated seeds");
  sw->add_option("--r2-pairs", sw_config.r2_pairs, "held-out pairs for R²");
  sw->add_flag("--r2-on-train", sw_config.r2_on_train, "measure R² on pre-training samples instead");
  sw->add_option("--out", sw_out, "output directory")->required();

  // hist
  auto* hi = app.add_subcommand("hist", "histogram of ID vs OOD normality scores");
  std::string hi_scores, hi_scorer, hi_out;
  std::size_t hi_bins = 20;
  hi->add_option("--scores", hi_scores, "scores.csv")->required();
  hi->add_option("--scorer", hi_scorer, "scorer to plot (default: first in file)");
  hi->add_option("--bins", hi_bins);
  hi->add_option("--out", hi_out, "output directory")->required();

  // crossdomain
  auto* cd = app.add_subcommand("crossdomain", "intra- vs cross-domain evaluation of one model");
  BenchmarkFlags cd_bench;
  TrainFlags cd_train;
  ScorerFlags cd_score;
  std::string cd_model, cd_out;
  cd_bench.add(*cd);
  cd_train.add(*cd, true);
  cd_score.add(*cd);
  cd_score.scorers = {"all"};
  cd->add_option("--model", cd_model, "checkpoint; omit to train one on the benchmark");
  cd->add_option("--out", cd_out, "directory for crossdomain.csv");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return report(ErrorKind::invalid_argument, e.what());
  }

  try {
    if (gen->parsed()) {
      cmd_gen(gen_bench, gen_out);
    } else if (pre->parsed()) {
      cmd_pretrain(pre_train, pre_seed, pre_data, pre_out, quiet);
    } else if (ev->parsed()) {
      cmd_evaluate(ev_score, ev_model, ev_support, ev_test, ev_out);
    } else if (r2->parsed()) {
      cmd_r2(r2_model, r2_data, r2_pairs, r2_seed, r2_method, r2_out);
    } else if (sw->parsed()) {
      sw_config.benchmark = sw_bench.config;
      if (!sw_bench.shift.empty())
        sw_config.benchmark.shift = parse_shift(sw_bench.shift, sw_bench.config.input_dim, sw_bench.config.seed);
      sw_config.train = sw_train.resolve(0);
      if (!sw_grid.empty()) {
        sw_config.grid.clear();
        std::istringstream in(sw_grid);
        std::string item;
        while (std::getline(in, item, ',')) sw_config.grid.push_back(parse_loss_spec(item));
      }
      sw_config.seeds = parse_seed_list(sw_seeds);
      sw_config.scorers = sw_score.kinds();
      sw_config.scorer_options = sw_score.resolve();
      cmd_sweep(sw_config, sw_out, quiet);
    } else if (hi->parsed()) {
      cmd_hist(hi_scores, hi_scorer, hi_bins, hi_out);
    } else if (cd->parsed()) {
      cmd_crossdomain(cd_bench, cd_train, cd_score, cd_model, cd_out);
    }
  } catch (const Error& e) {
    return report(e.kind(), e.what());
  } catch (const nlohmann::json::exception& e) {
    return report(ErrorKind::format, e.what());
  } catch (const std::exception& e) {
    return report(ErrorKind::data, e.what());
  }
  return 0;
}
