#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <vector>

#include "marginlab/numeric.hpp"

namespace marginlab {

inline constexpr std::uint8_t kFlagNotApplicable = 0xFF;

/// N feature vectors with integer class labels and a per-row OOD flag
/// (0 = in-distribution, 1 = OOD, 0xFF = not applicable).
struct EmbeddingSet {
  Matrix features;
  std::vector<std::int32_t> labels;
  std::vector<std::uint8_t> ood_flags;

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t dim() const noexcept { return features.cols(); }

  void push_back(std::span<const double> x, std::int32_t label,
                 std::uint8_t flag = kFlagNotApplicable) {
    features.append_row(x);
    labels.push_back(label);
    ood_flags.push_back(flag);
  }

  void validate() const {
    require(features.rows() == labels.size() && labels.size() == ood_flags.size(),
            ErrorKind::data, "embedding set: features, labels and flags disagree in length");
  }

  std::set<std::int32_t> class_ids() const { return {labels.begin(), labels.end()}; }

  /// Row indices per class, classes in ascending id order.
  std::map<std::int32_t, std::vector<std::size_t>> rows_by_class() const {
    std::map<std::int32_t, std::vector<std::size_t>> out;
    for (std::size_t i = 0; i < labels.size(); ++i) out[labels[i]].push_back(i);
    return out;
  }

  friend bool operator==(const EmbeddingSet&, const EmbeddingSet&) = default;
};

}  // namespace marginlab
