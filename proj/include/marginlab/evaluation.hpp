#pragma once

#include "marginlab/metrics.hpp"
#include "marginlab/scoring.hpp"

namespace marginlab {

struct ScorerOptions {
  std::size_t k = 1;
  bool normalize = true;
  double epsilon_scale = 1e-3;
  SceLogit sce_logit = SceLogit::same;
};

struct EvalReport {
  ScorerKind scorer = ScorerKind::proto_msp;
  double auroc = 0.0;
  double fpr_at_tpr95 = 0.0;
  std::size_t n_comp_per_test = 0;
  double measured_comp_per_test = 0.0;  // from the instrumented counter
  Vector scores;                        // test order
  std::vector<bool> is_ood;             // test order
  Vector scores_id;
  Vector scores_ood;
};

/// Scores every test sample with one scorer built from the support set, then
/// computes AUROC and FPR@TPR95. With a model, inputs are encoded first; with
/// `params == nullptr` the stored features are scored as they are (external
/// embeddings), which rules out proto-msp.
inline EvalReport evaluate_features(const ModelParams* params, const EmbeddingSet& support,
                                    const EmbeddingSet& test, ScorerKind kind,
                                    const ScorerOptions& options = {}) {
  support.validate();
  test.validate();
  require(test.size() > 0, ErrorKind::data, "evaluate: empty test set");
  for (std::uint8_t f : test.ood_flags)
    require(f == 0 || f == 1, ErrorKind::data, "evaluate: test set lacks ID/OOD flags");

  EvalReport rep;
  rep.scorer = kind;
  rep.n_comp_per_test = count_comparisons(kind, support);
  ComparisonCounter counter;
  require(support.dim() == test.dim(), ErrorKind::data, "evaluate: support and test dims differ");
  if (!params && kind == ScorerKind::proto_msp)
    fail(ErrorKind::invalid_argument, "proto-msp needs a relational model");
  const Matrix z_test = params ? encode_all(*params, test.features) : test.features;
  const Matrix z_support = params ? encode_all(*params, support.features) : support.features;
  rep.scores.resize(test.size());

  switch (kind) {
    case ScorerKind::proto_msp: {
      const PrototypeSet protos = prototypes_from_embeddings(z_support, support.labels);
      if (protos.prototypes.rows() < 2)
        fail(ErrorKind::degenerate_setup, "proto-msp: need at least 2 support classes");
      for (std::size_t i = 0; i < test.size(); ++i)
        rep.scores[i] =
            msp_of_logits(prototype_logits(*params, protos, z_test.row(i), options.sce_logit, &counter));
      break;
    }
    case ScorerKind::knn: {
      const KnnScorer knn(z_support, options.normalize);
      for (std::size_t i = 0; i < test.size(); ++i)
        rep.scores[i] = knn.score(z_test.row(i), options.k, &counter);
      break;
    }
    case ScorerKind::mahalanobis: {
      const GaussianFit fit =
          mahalanobis_fit_embeddings(z_support, support.labels, options.epsilon_scale);
      for (std::size_t i = 0; i < test.size(); ++i)
        rep.scores[i] = mahalanobis_score(fit, z_test.row(i), &counter);
      break;
    }
  }
  rep.measured_comp_per_test = static_cast<double>(counter.count) / static_cast<double>(test.size());

  rep.is_ood.resize(test.size());
  for (std::size_t i = 0; i < test.size(); ++i) {
    rep.is_ood[i] = test.ood_flags[i] == 1;
    (rep.is_ood[i] ? rep.scores_ood : rep.scores_id).push_back(rep.scores[i]);
  }
  const ScoreSample sample{rep.scores_id, rep.scores_ood};
  rep.auroc = auroc(sample);
  rep.fpr_at_tpr95 = fpr_at_tpr(sample, 0.95);
  return rep;
}

inline EvalReport evaluate_scorer(const ModelParams& params, const EmbeddingSet& support,
                                  const EmbeddingSet& test, ScorerKind kind,
                                  const ScorerOptions& options = {}) {
  return evaluate_features(&params, support, test, kind, options);
}

}  // namespace marginlab
