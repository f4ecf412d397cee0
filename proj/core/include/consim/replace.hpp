#pragma once

#include <span>
#include <string>
#include <vector>

#include "consim/types.hpp"

namespace consim {

enum class KlDirection {
  kSelfToCross,  // KL(softmax(z_self) || softmax(z_cross))
  kCrossToSelf,
};

const char* to_string(KlDirection direction) noexcept;
KlDirection kl_direction_from_string(const std::string& name);

struct ReplacementOutcome {
  std::string class_id;
  int concept_index = 0;
  double delta_l2 = 0.0;
  double delta_kl = 0.0;
  double match_accuracy = 1.0;
  double delta_pearson = 0.0;
};

// Z = A * weights + bias, row by row.
Matrix head_logits(const Matrix& A, const LinearHead& head);

// KL(softmax(z_p) || softmax(z_q)), log-sum-exp stabilized, clamped at 0.
double kl_divergence(std::span<const double> z_p, std::span<const double> z_q);
double kl_divergence(const RowVector& z_p, const RowVector& z_q);

// Lowest index among the maxima.
Index argmax(std::span<const double> z);

// Fraction of rows whose argmax agrees.
double match_accuracy(const Matrix& z_a, const Matrix& z_b);
double match_accuracy(const std::vector<Index>& y_a, const std::vector<Index>& y_b);

struct ReplacementInputs {
  const Matrix& U_true;
  const Matrix& U_self_pred;
  const Matrix& U_cross_pred;
  const Matrix& W;
  const LinearHead& head;
};

// For every concept i: replace column i of U_true by the self and by the cross
// prediction, reconstruct through W, push through the head and compare the two.
std::vector<ReplacementOutcome> replacement_test(const ReplacementInputs& inputs,
                                                 KlDirection kl_direction =
                                                     KlDirection::kSelfToCross,
                                                 const std::string& class_id = "");

}  // namespace consim
