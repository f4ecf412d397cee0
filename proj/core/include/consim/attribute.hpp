#pragma once

#include <string>

#include "consim/types.hpp"

namespace consim {

enum class AttributionTarget {
  kProbability,  // softmax probability of the target class
  kLogit,        // pre-softmax logit; gradient is constant
};

enum class Aggregation { kMean, kSum };

const char* to_string(Aggregation aggregation) noexcept;
Aggregation aggregation_from_string(const std::string& name);

struct CigOptions {
  int steps = 30;
  AttributionTarget target = AttributionTarget::kProbability;
  Aggregation aggregation = Aggregation::kMean;
};

// Logits of the reconstruction u_row * W through the head.
RowVector concept_logits(const RowVector& u_row, const Matrix& W, const LinearHead& head);

// Per-row attributions (rows x k) with a zero baseline, midpoint rule over
// `steps` points, gradients in closed form through softmax o linear.
Matrix concept_attributions(const Matrix& U, const Matrix& W, const LinearHead& head,
                            Index target_class, const CigOptions& options = {});

// Per-concept importance for one class: attributions aggregated over rows.
Vector concept_integrated_gradients(const Matrix& U, const Matrix& W, const LinearHead& head,
                                    Index target_class, const CigOptions& options = {});

// Exact pre-softmax attributions: phi_j = r_j * (W_j . w_target), rows x k.
Matrix analytic_cig_linear(const Matrix& U, const Matrix& W, const LinearHead& head,
                           Index target_class);

}  // namespace consim
