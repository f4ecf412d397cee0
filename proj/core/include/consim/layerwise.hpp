#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "consim/bundle.hpp"
#include "consim/factorize.hpp"
#include "consim/similarity.hpp"

namespace consim {

using DecompositionMap = std::map<std::pair<std::string, std::string>, ConceptDecomposition>;

struct LayerwiseModel {
  const Bundle& bundle;
  const DecompositionMap& decompositions;  // keyed by (layer, class)
};

struct LayerwiseResult {
  std::vector<std::string> layers1;
  std::vector<std::string> layers2;
  Matrix mmcs;  // |layers1| x |layers2|
  Matrix mmcs1;
  Matrix mmcs2;
};

// For every class, both models' coefficients are refit (NNLS) over the union
// of their proposal sets; each cell aggregates the per-class correlation
// matrices of one layer pair.
LayerwiseResult layerwise_mmcs(const LayerwiseModel& model1, const LayerwiseModel& model2,
                               const std::vector<std::string>& layers1,
                               const std::vector<std::string>& layers2,
                               const std::vector<std::string>& classes,
                               CorrelationKind kind = CorrelationKind::kPearson, int jobs = 1);

// CSV with a header row of layers2 labels and a leading column of layers1 labels.
std::string layerwise_csv(const LayerwiseResult& result, const Matrix& values);

struct SharedRows {
  PatchManifest manifest;
  Matrix A1;
  Matrix A2;
  bool label_fallback = false;
};

// Union of both models' proposals for `class_id`, with each model's
// activations at the given layers gathered onto it.
SharedRows shared_rows(const Bundle& bundle1, const std::string& layer1, const Bundle& bundle2,
                       const std::string& layer2, const std::string& class_id);

}  // namespace consim
