#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "ncprobe/linalg.hpp"

namespace ncprobe {

/// Feature vectors (one per row) with class labels in [0, num_classes).
struct FeatureSet {
  Matrix features;
  std::vector<int> labels;
  int num_classes = 0;

  Eigen::Index size() const { return features.rows(); }
  Eigen::Index dim() const { return features.cols(); }

  std::vector<int> class_counts() const {
    std::vector<int> counts(static_cast<std::size_t>(num_classes), 0);
    for (int l : labels) ++counts[static_cast<std::size_t>(l)];
    return counts;
  }

  void validate() const {
    if (static_cast<Eigen::Index>(labels.size()) != features.rows()) {
      throw DimensionError("FeatureSet: " + std::to_string(labels.size()) + " labels for " +
                           std::to_string(features.rows()) + " features");
    }
    if (num_classes < 1) throw std::invalid_argument("FeatureSet: num_classes must be >= 1");
    for (int l : labels) {
      if (l < 0 || l >= num_classes) {
        throw std::out_of_range("FeatureSet: label " + std::to_string(l) + " outside [0, " +
                                std::to_string(num_classes) + ")");
      }
    }
  }
};

/// Drops samples of classes with fewer than `min_count` members and renumbers
/// the surviving classes densely, preserving order. `kept` receives the
/// original ids of the surviving classes.
inline FeatureSet filter_classes(const FeatureSet& fs, int min_count, std::vector<int>* kept = nullptr) {
  fs.validate();
  const auto counts = fs.class_counts();
  std::vector<int> remap(counts.size(), -1);
  std::vector<int> ids;
  for (std::size_t c = 0; c < counts.size(); ++c) {
    if (counts[c] > 0 && counts[c] >= min_count) {
      remap[c] = static_cast<int>(ids.size());
      ids.push_back(static_cast<int>(c));
    }
  }
  std::vector<int> rows;
  for (std::size_t i = 0; i < fs.labels.size(); ++i) {
    if (remap[static_cast<std::size_t>(fs.labels[i])] >= 0) rows.push_back(static_cast<int>(i));
  }
  FeatureSet out;
  out.features.resize(static_cast<Eigen::Index>(rows.size()), fs.features.cols());
  out.labels.reserve(rows.size());
  for (std::size_t k = 0; k < rows.size(); ++k) {
    out.features.row(static_cast<Eigen::Index>(k)) = fs.features.row(rows[k]);
    out.labels.push_back(remap[static_cast<std::size_t>(fs.labels[static_cast<std::size_t>(rows[k])])]);
  }
  out.num_classes = static_cast<int>(ids.size());
  if (kept) *kept = std::move(ids);
  return out;
}

}  // namespace ncprobe
