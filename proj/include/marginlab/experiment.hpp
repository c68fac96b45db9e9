#pragma once

// Experiment orchestration: loss x seed sweeps, score histograms, and
// intra- vs cross-domain comparisons, plus the CSV tables they emit.

#include <atomic>
#include <chrono>
#include <cstdlib>
#include <iomanip>
#include <thread>

#include "marginlab/analysis.hpp"
#include "marginlab/datagen.hpp"
#include "marginlab/evaluation.hpp"

namespace marginlab {

// ---------------------------------------------------------------------------
// CSV helpers

/// Round-trip decimal form; non-finite values print as "nan".
inline std::string csv_number(double v) {
  if (!std::isfinite(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(const std::string& name) const {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) fail(ErrorKind::format, "CSV: missing column '" + name + "'");
    return static_cast<std::size_t>(it - header.begin());
  }
};

inline CsvTable parse_csv_table(const std::string& text, const std::string& source = "<memory>") {
  CsvTable t;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  auto split = [](const std::string& s) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ss(s);
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!s.empty() && s.back() == ',') cells.emplace_back();
    return cells;
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto cells = split(line);
    if (t.header.empty()) {
      t.header = std::move(cells);
      continue;
    }
    if (cells.size() != t.header.size()) {
      std::ostringstream msg;
      msg << source << ": line " << line_no << ": expected " << t.header.size() << " columns, got "
          << cells.size();
      fail(ErrorKind::format, msg.str());
    }
    t.rows.push_back(std::move(cells));
  }
  if (t.header.empty()) fail(ErrorKind::format, source + ": empty CSV");
  return t;
}

inline double parse_csv_double(const std::string& s) {
  if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::logic_error&) {
    fail(ErrorKind::format, "CSV: malformed number '" + s + "'");
  }
  if (used != s.size()) fail(ErrorKind::format, "CSV: malformed number '" + s + "'");
  return v;
}

// ---------------------------------------------------------------------------
// scores.csv: scorer,sample_index,is_ood,score

struct ScoreRecord {
  std::string scorer;
  std::size_t sample_index = 0;
  bool is_ood = false;
  double score = 0.0;

  friend bool operator==(const ScoreRecord&, const ScoreRecord&) = default;
};

inline std::vector<ScoreRecord> score_records(const EvalReport& rep) {
  std::vector<ScoreRecord> out;
  for (std::size_t i = 0; i < rep.scores.size(); ++i)
    out.push_back({to_string(rep.scorer), i, rep.is_ood[i], rep.scores[i]});
  return out;
}

inline std::string scores_csv(const std::vector<ScoreRecord>& records) {
  std::string out = "scorer,sample_index,is_ood,score\n";
  for (const auto& r : records)
    out += r.scorer + "," + std::to_string(r.sample_index) + "," + (r.is_ood ? "1" : "0") + "," +
           csv_number(r.score) + "\n";
  return out;
}

inline std::vector<ScoreRecord> parse_scores_csv(const std::string& text,
                                                 const std::string& source = "<memory>") {
  const CsvTable t = parse_csv_table(text, source);
  const std::size_t c_scorer = t.column("scorer"), c_idx = t.column("sample_index"),
                    c_ood = t.column("is_ood"), c_score = t.column("score");
  std::vector<ScoreRecord> out;
  for (const auto& row : t.rows) {
    ScoreRecord r;
    r.scorer = row[c_scorer];
    r.sample_index = static_cast<std::size_t>(parse_csv_double(row[c_idx]));
    if (row[c_ood] != "0" && row[c_ood] != "1") fail(ErrorKind::format, source + ": is_ood must be 0 or 1");
    r.is_ood = row[c_ood] == "1";
    r.score = parse_csv_double(row[c_score]);
    if (!std::isfinite(r.score)) fail(ErrorKind::format, source + ": non-finite score");
    out.push_back(std::move(r));
  }
  return out;
}

// ---------------------------------------------------------------------------
// R² reports and projections

struct R2Record {
  LossSpec loss;
  std::uint64_t seed = 0;
  SeparationReport report;
};

inline std::string r2_report_csv(const std::vector<R2Record>& records) {
  std::string out = "loss_kind,hyperparam,seed,r2,d_within,d_total\n";
  for (const auto& r : records)
    out += std::string(to_string(r.loss.kind)) + "," + csv_number(r.loss.hyperparam()) + "," +
           std::to_string(r.seed) + "," + csv_number(r.report.r2) + "," +
           csv_number(r.report.d_within) + "," + csv_number(r.report.d_total) + "\n";
  return out;
}

inline std::string projection_csv(const Matrix& coords, std::span<const int> labels) {
  std::string out = "x,y,pair_label\n";
  for (std::size_t i = 0; i < coords.rows(); ++i)
    out += csv_number(coords(i, 0)) + "," + csv_number(coords(i, 1)) + "," +
           std::to_string(labels[i]) + "\n";
  return out;
}

// ---------------------------------------------------------------------------
// Sweeps

inline std::vector<LossSpec> default_loss_grid() {
  std::vector<LossSpec> grid;
  for (const char* s : {"sce", "bce", "focal:g=1", "focal:g=2", "focal:g=3", "mse:c=1", "mse:c=10",
                        "mse:c=50", "hinge:d=1", "hinge:d=0.1", "hinge:d=0.01"})
    grid.push_back(parse_loss_spec(s));
  return grid;
}

struct SweepConfig {
  std::vector<LossSpec> grid = default_loss_grid();
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  BenchmarkConfig benchmark;
  std::vector<ScorerKind> scorers = all_scorers();
  TrainConfig train;  // loss and seed are overwritten per cell
  ScorerOptions scorer_options;
  std::size_t r2_pairs = 2000;
  bool r2_on_train = false;
  std::size_t threads = 1;
};

struct SweepRow {
  LossSpec loss;
  std::uint64_t seed = 0;
  ScorerKind scorer = ScorerKind::proto_msp;
  double r2 = std::numeric_limits<double>::quiet_NaN();
  double d_within = std::numeric_limits<double>::quiet_NaN();
  double d_total = std::numeric_limits<double>::quiet_NaN();
  double auroc = std::numeric_limits<double>::quiet_NaN();
  double fpr95 = std::numeric_limits<double>::quiet_NaN();
  std::size_t n_comp = 0;
  double wall_time = 0.0;  // seconds for the whole cell; not part of sweep.csv
  std::string status = "ok";  // ok | diverged | r2-degenerate | fit-failed

  bool usable() const { return status == "ok"; }
};

/// Benchmark for one sweep seed: the configured benchmark with its seed replaced.
inline BenchmarkConfig benchmark_for_seed(const SweepConfig& config, std::uint64_t seed) {
  BenchmarkConfig b = config.benchmark;
  b.seed = seed;
  return b;
}

/// Held-out pairs for R², drawn from a stream independent of training.
inline PairBatch r2_pairs_for(const BenchmarkSplit& split, std::size_t n, std::uint64_t seed,
                              bool on_train) {
  Rng rng(seed ^ 0x5DEECE66DULL);
  return sample_pairs(on_train ? split.pretrain : split.holdout, n, rng);
}

/// train -> R² on held-out pairs -> evaluate every scorer, for one (loss, seed).
inline std::vector<SweepRow> run_sweep_cell(const SweepConfig& config, const BenchmarkSplit& split,
                                            const LossSpec& loss, std::uint64_t seed) {
  const auto start = std::chrono::steady_clock::now();
  std::vector<SweepRow> rows;
  for (ScorerKind s : config.scorers) {
    SweepRow r;
    r.loss = loss;
    r.seed = seed;
    r.scorer = s;
    r.n_comp = count_comparisons(s, split.support);
    rows.push_back(r);
  }
  TrainConfig tc = config.train;
  tc.loss = loss;
  tc.seed = seed;
  TrainResult trained;
  try {
    trained = train(tc, split.pretrain);
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::diverged) throw;
    for (auto& r : rows) r.status = "diverged";
    return rows;
  }

  std::optional<SeparationReport> sep;
  try {
    sep = r2_of_pairs(trained.params,
                      r2_pairs_for(split, config.r2_pairs, seed, config.r2_on_train));
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::degenerate_vector && e.kind() != ErrorKind::degenerate_geometry)
      throw;
  }
  for (auto& r : rows) {
    if (sep) {
      r.r2 = sep->r2;
      r.d_within = sep->d_within;
      r.d_total = sep->d_total;
    } else {
      r.status = "r2-degenerate";
    }
    try {
      const EvalReport ev =
          evaluate_scorer(trained.params, split.support, split.test, r.scorer, config.scorer_options);
      r.auroc = ev.auroc;
      r.fpr95 = ev.fpr_at_tpr95;
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::fit) throw;
      r.status = "fit-failed";
    }
  }
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  for (auto& r : rows) r.wall_time = secs;
  return rows;
}

/// Worker count: MARGINLAB_THREADS when set (>= 1), else `fallback`.
inline std::size_t threads_from_env(std::size_t fallback) {
  if (const char* v = std::getenv("MARGINLAB_THREADS")) {
    const long n = std::strtol(v, nullptr, 10);
    if (n >= 1) return static_cast<std::size_t>(n);
  }
  return std::max<std::size_t>(1, fallback);
}

/// Runs every (loss, seed) cell. Cells are independent and may run on several
/// threads; rows come back in (seed, loss, scorer) order regardless.
inline std::vector<SweepRow> run_sweep(const SweepConfig& config,
                                       const std::function<void(const SweepRow&)>& on_cell = {}) {
  require(!config.grid.empty() && !config.seeds.empty() && !config.scorers.empty(),
          ErrorKind::config, "sweep: grid, seeds and scorers must be nonempty");
  std::vector<BenchmarkSplit> splits;
  for (std::uint64_t seed : config.seeds) splits.push_back(gen_benchmark(benchmark_for_seed(config, seed)));

  const std::size_t n_cells = config.seeds.size() * config.grid.size();
  std::vector<std::vector<SweepRow>> cells(n_cells);
  std::vector<std::exception_ptr> errors(n_cells);
  std::atomic<std::size_t> next{0};
  std::mutex report_mutex;
  auto worker = [&]() {
    for (std::size_t i = next++; i < n_cells; i = next++) {
      const std::size_t s = i / config.grid.size(), l = i % config.grid.size();
      try {
        cells[i] = run_sweep_cell(config, splits[s], config.grid[l], config.seeds[s]);
        if (on_cell) {
          std::lock_guard lock(report_mutex);
          on_cell(cells[i].front());
        }
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t n_threads = std::min(std::max<std::size_t>(1, config.threads), n_cells);
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);

  std::vector<SweepRow> rows;
  for (auto& c : cells) rows.insert(rows.end(), c.begin(), c.end());
  return rows;
}

inline std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::string out = "loss_kind,hyperparam,loss_spec,seed,scorer,r2,d_within,d_total,auroc,fpr95,n_comp,status\n";
  for (const auto& r : rows)
    out += std::string(to_string(r.loss.kind)) + "," + csv_number(r.loss.hyperparam()) + "," +
           to_string(r.loss) + "," + std::to_string(r.seed) + "," + to_string(r.scorer) + "," +
           csv_number(r.r2) + "," + csv_number(r.d_within) + "," + csv_number(r.d_total) + "," +
           csv_number(r.auroc) + "," + csv_number(r.fpr95) + "," + std::to_string(r.n_comp) + "," +
           r.status + "\n";
  return out;
}

/// Wall-clock seconds per cell, kept apart from sweep.csv so that file stays
/// byte-identical across reruns.
inline std::string timing_csv(const std::vector<SweepRow>& rows) {
  std::string out = "loss_spec,seed,wall_time_s\n";
  for (const auto& r : rows)
    if (r.scorer == rows.front().scorer)
      out += to_string(r.loss) + "," + std::to_string(r.seed) + "," + csv_number(r.wall_time) + "\n";
  return out;
}

inline std::vector<SweepRow> parse_sweep_csv(const std::string& text,
                                             const std::string& source = "<memory>") {
  const CsvTable t = parse_csv_table(text, source);
  std::vector<SweepRow> rows;
  for (const auto& row : t.rows) {
    SweepRow r;
    r.loss = parse_loss_spec(row[t.column("loss_spec")]);
    r.seed = static_cast<std::uint64_t>(std::stoull(row[t.column("seed")]));
    r.scorer = parse_scorer(row[t.column("scorer")]);
    r.r2 = parse_csv_double(row[t.column("r2")]);
    r.d_within = parse_csv_double(row[t.column("d_within")]);
    r.d_total = parse_csv_double(row[t.column("d_total")]);
    r.auroc = parse_csv_double(row[t.column("auroc")]);
    r.fpr95 = parse_csv_double(row[t.column("fpr95")]);
    r.n_comp = static_cast<std::size_t>(std::stoull(row[t.column("n_comp")]));
    r.status = row[t.column("status")];
    rows.push_back(std::move(r));
  }
  return rows;
}

struct ScorerTrend {
  ScorerKind scorer = ScorerKind::proto_msp;
  std::size_t n_rows = 0;
  std::size_t excluded = 0;
  double spearman_r2_auroc = std::numeric_limits<double>::quiet_NaN();
};

/// Spearman(R², AUROC) per scorer over usable rows.
inline std::vector<ScorerTrend> summarize_sweep(const std::vector<SweepRow>& rows,
                                                const std::vector<ScorerKind>& scorers) {
  std::vector<ScorerTrend> out;
  for (ScorerKind s : scorers) {
    ScorerTrend t;
    t.scorer = s;
    Vector r2, auc;
    for (const auto& r : rows) {
      if (r.scorer != s) continue;
      if (!r.usable()) {
        ++t.excluded;
        continue;
      }
      r2.push_back(r.r2);
      auc.push_back(r.auroc);
    }
    t.n_rows = r2.size();
    try {
      if (r2.size() >= 3) t.spearman_r2_auroc = spearman(r2, auc);
    } catch (const Error&) {
    }
    out.push_back(t);
  }
  return out;
}

inline std::string sweep_summary(const std::vector<SweepRow>& rows,
                                 const std::vector<ScorerKind>& scorers) {
  std::ostringstream out;
  for (const auto& t : summarize_sweep(rows, scorers)) {
    out << "scorer=" << to_string(t.scorer) << " rows=" << t.n_rows << " excluded=" << t.excluded
        << " spearman_r2_auroc=" << csv_number(t.spearman_r2_auroc) << " sign=";
    if (!std::isfinite(t.spearman_r2_auroc))
      out << "undefined";
    else
      out << (t.spearman_r2_auroc < 0 ? "negative" : (t.spearman_r2_auroc > 0 ? "positive" : "zero"));
    out << "\n";
  }
  for (const auto& r : rows)
    if (!r.usable() && r.scorer == scorers.front())
      out << "excluded loss=" << to_string(r.loss) << " seed=" << r.seed << " status=" << r.status
          << "\n";
  return out.str();
}

// ---------------------------------------------------------------------------
// Histograms

struct Histogram {
  double lo = 0.0;
  double hi = 0.0;
  std::vector<std::size_t> id_counts;
  std::vector<std::size_t> ood_counts;
  bool degenerate = false;  // all scores identical: one bin

  std::size_t bins() const { return id_counts.size(); }
  double bin_lo(std::size_t b) const { return lo + (hi - lo) * static_cast<double>(b) / static_cast<double>(bins()); }
  double bin_hi(std::size_t b) const { return lo + (hi - lo) * static_cast<double>(b + 1) / static_cast<double>(bins()); }
};

/// Fixed-width bins over [min, max] of the union of both series; the top edge
/// belongs to the last bin.
inline Histogram make_histogram(std::span<const double> id, std::span<const double> ood,
                                std::size_t bins) {
  require(bins >= 1, ErrorKind::invalid_argument, "histogram: bins must be >= 1");
  require(!id.empty() || !ood.empty(), ErrorKind::invalid_argument, "histogram: no scores");
  Histogram h;
  h.lo = std::numeric_limits<double>::infinity();
  h.hi = -std::numeric_limits<double>::infinity();
  for (auto s : {id, ood})
    for (double v : s) {
      check_finite(v, "histogram");
      h.lo = std::min(h.lo, v);
      h.hi = std::max(h.hi, v);
    }
  if (!(h.hi > h.lo)) {
    h.degenerate = true;
    bins = 1;
  }
  h.id_counts.assign(bins, 0);
  h.ood_counts.assign(bins, 0);
  auto bin_of = [&](double v) -> std::size_t {
    if (h.degenerate) return 0;
    const double t = (v - h.lo) / (h.hi - h.lo) * static_cast<double>(bins);
    return std::min(bins - 1, static_cast<std::size_t>(std::max(0.0, t)));
  };
  for (double v : id) ++h.id_counts[bin_of(v)];
  for (double v : ood) ++h.ood_counts[bin_of(v)];
  return h;
}

inline std::string histogram_csv(const Histogram& h) {
  std::string out = "bin,bin_lo,bin_hi,id_count,ood_count\n";
  for (std::size_t b = 0; b < h.bins(); ++b)
    out += std::to_string(b) + "," + csv_number(h.bin_lo(b)) + "," + csv_number(h.bin_hi(b)) + "," +
           std::to_string(h.id_counts[b]) + "," + std::to_string(h.ood_counts[b]) + "\n";
  return out;
}

/// Plain SVG bar chart: ID and OOD bars side by side per bin, axis labels
/// carrying the score range.
inline std::string histogram_svg(const Histogram& h, const std::string& title) {
  const double width = 640, height = 360, left = 60, right = 20, top = 40, bottom = 60;
  const double plot_w = width - left - right, plot_h = height - top - bottom;
  std::size_t peak = 1;
  for (std::size_t b = 0; b < h.bins(); ++b) peak = std::max({peak, h.id_counts[b], h.ood_counts[b]});
  auto fmt = [](double v) {
    std::ostringstream s;
    s << std::setprecision(6) << v;
    return s.str();
  };
  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  svg << "<text x=\"" << width / 2 << "\" y=\"20\" text-anchor=\"middle\">" << title << "</text>\n";
  svg << "<line x1=\"" << left << "\" y1=\"" << top + plot_h << "\" x2=\"" << left + plot_w << "\" y2=\""
      << top + plot_h << "\" stroke=\"black\"/>\n";
  svg << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << top + plot_h
      << "\" stroke=\"black\"/>\n";
  const double slot = plot_w / static_cast<double>(h.bins());
  for (std::size_t b = 0; b < h.bins(); ++b) {
    const double x = left + slot * static_cast<double>(b);
    const double hid = plot_h * static_cast<double>(h.id_counts[b]) / static_cast<double>(peak);
    const double hood = plot_h * static_cast<double>(h.ood_counts[b]) / static_cast<double>(peak);
    svg << "<rect x=\"" << fmt(x + 1) << "\" y=\"" << fmt(top + plot_h - hid) << "\" width=\""
        << fmt(slot / 2 - 1) << "\" height=\"" << fmt(hid) << "\" fill=\"#1f77b4\"/>\n";
    svg << "<rect x=\"" << fmt(x + slot / 2) << "\" y=\"" << fmt(top + plot_h - hood) << "\" width=\""
        << fmt(slot / 2 - 1) << "\" height=\"" << fmt(hood) << "\" fill=\"#d62728\"/>\n";
  }
  svg << "<text x=\"" << left << "\" y=\"" << top + plot_h + 18 << "\" text-anchor=\"start\">"
      << fmt(h.lo) << "</text>\n";
  svg << "<text x=\"" << left + plot_w << "\" y=\"" << top + plot_h + 18 << "\" text-anchor=\"end\">"
      << fmt(h.hi) << "</text>\n";
  svg << "<text x=\"" << left + plot_w / 2 << "\" y=\"" << height - 15
      << "\" text-anchor=\"middle\">normality score (range " << fmt(h.lo) << " to " << fmt(h.hi)
      << ")</text>\n";
  svg << "<text x=\"15\" y=\"" << top + plot_h / 2 << "\" transform=\"rotate(-90 15 " << top + plot_h / 2
      << ")\" text-anchor=\"middle\">count (max " << peak << ")</text>\n";
  svg << "<text x=\"" << left + plot_w - 90 << "\" y=\"" << top + 12 << "\" fill=\"#1f77b4\">ID</text>\n";
  svg << "<text x=\"" << left + plot_w - 50 << "\" y=\"" << top + 12 << "\" fill=\"#d62728\">OOD</text>\n";
  svg << "</svg>\n";
  return svg.str();
}

// ---------------------------------------------------------------------------
// Intra- vs cross-domain

struct CrossDomainRow {
  ScorerKind scorer = ScorerKind::proto_msp;
  std::size_t n_comp_intra = 0;
  std::size_t n_comp_cross = 0;
  double auroc_intra = 0.0;
  double auroc_cross = 0.0;
  double fpr95_intra = 0.0;
  double fpr95_cross = 0.0;

  double delta_auroc() const { return auroc_cross - auroc_intra; }
};

/// Evaluates every scorer on the same support set against an unshifted and a
/// shifted test set, with one frozen model.
inline std::vector<CrossDomainRow> run_crossdomain(const ModelParams& params,
                                                   const EmbeddingSet& support,
                                                   const EmbeddingSet& test_intra,
                                                   const EmbeddingSet& test_cross,
                                                   const std::vector<ScorerKind>& scorers,
                                                   const ScorerOptions& options = {}) {
  std::vector<CrossDomainRow> out;
  for (ScorerKind s : scorers) {
    const EvalReport a = evaluate_scorer(params, support, test_intra, s, options);
    const EvalReport b = evaluate_scorer(params, support, test_cross, s, options);
    out.push_back({s, a.n_comp_per_test, b.n_comp_per_test, a.auroc, b.auroc, a.fpr_at_tpr95,
                   b.fpr_at_tpr95});
  }
  return out;
}

inline std::string crossdomain_csv(const std::vector<CrossDomainRow>& rows) {
  std::string out =
      "scorer,n_comp_intra,n_comp_cross,auroc_intra,auroc_cross,delta_auroc,fpr95_intra,fpr95_cross\n";
  for (const auto& r : rows)
    out += std::string(to_string(r.scorer)) + "," + std::to_string(r.n_comp_intra) + "," +
           std::to_string(r.n_comp_cross) + "," + csv_number(r.auroc_intra) + "," +
           csv_number(r.auroc_cross) + "," + csv_number(r.delta_auroc()) + "," +
           csv_number(r.fpr95_intra) + "," + csv_number(r.fpr95_cross) + "\n";
  return out;
}

}  // namespace marginlab
