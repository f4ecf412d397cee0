#include "consim/replace.hpp"

#include <cmath>

#include "consim/error.hpp"

namespace consim {
namespace {

double log_sum_exp(std::span<const double> z) {
  double m = z[0];
  for (double v : z) m = std::max(m, v);
  double s = 0.0;
  for (double v : z) s += std::exp(v - m);
  return m + std::log(s);
}

std::span<const double> row_span(const RowVector& r) {
  return {r.data(), static_cast<std::size_t>(r.size())};
}

}  // namespace

const char* to_string(KlDirection direction) noexcept {
  return direction == KlDirection::kSelfToCross ? "self_to_cross" : "cross_to_self";
}

KlDirection kl_direction_from_string(const std::string& name) {
  if (name == "self_to_cross") return KlDirection::kSelfToCross;
  if (name == "cross_to_self") return KlDirection::kCrossToSelf;
  throw Error(ErrorCode::kInvalidArgument, "unknown kl_direction '" + name + "'");
}

Matrix head_logits(const Matrix& A, const LinearHead& head) {
  if (A.cols() != head.weights.rows()) {
    throw Error(ErrorCode::kDimensionMismatch,
                "head_logits: activations have " + std::to_string(A.cols()) +
                    " columns, head expects " + std::to_string(head.weights.rows()));
  }
  return (A * head.weights).rowwise() + head.bias;
}

double kl_divergence(std::span<const double> z_p, std::span<const double> z_q) {
  if (z_p.size() != z_q.size() || z_p.empty()) {
    throw Error(ErrorCode::kDimensionMismatch, "kl_divergence: logit lengths differ");
  }
  for (std::size_t i = 0; i < z_p.size(); ++i) {
    if (!std::isfinite(z_p[i]) || !std::isfinite(z_q[i])) {
      throw Error(ErrorCode::kNonFinite, "kl_divergence: non-finite logits");
    }
  }
  const double lse_p = log_sum_exp(z_p), lse_q = log_sum_exp(z_q);
  double kl = 0.0;
  for (std::size_t i = 0; i < z_p.size(); ++i) {
    const double log_p = z_p[i] - lse_p;
    const double log_q = z_q[i] - lse_q;
    kl += std::exp(log_p) * (log_p - log_q);
  }
  return std::max(kl, 0.0);
}

double kl_divergence(const RowVector& z_p, const RowVector& z_q) {
  return kl_divergence(row_span(z_p), row_span(z_q));
}

Index argmax(std::span<const double> z) {
  Index best = 0;
  for (std::size_t i = 1; i < z.size(); ++i) {
    if (z[i] > z[static_cast<std::size_t>(best)]) best = static_cast<Index>(i);
  }
  return best;
}

double match_accuracy(const std::vector<Index>& y_a, const std::vector<Index>& y_b) {
  if (y_a.size() != y_b.size()) {
    throw Error(ErrorCode::kDimensionMismatch, "match_accuracy: length mismatch");
  }
  if (y_a.empty()) return 1.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < y_a.size(); ++i) hits += y_a[i] == y_b[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(y_a.size());
}

double match_accuracy(const Matrix& z_a, const Matrix& z_b) {
  if (z_a.rows() != z_b.rows() || z_a.cols() != z_b.cols()) {
    throw Error(ErrorCode::kDimensionMismatch, "match_accuracy: logit shapes differ");
  }
  std::vector<Index> ya, yb;
  for (Index i = 0; i < z_a.rows(); ++i) {
    const RowVector a = z_a.row(i), b = z_b.row(i);
    ya.push_back(argmax(row_span(a)));
    yb.push_back(argmax(row_span(b)));
  }
  return match_accuracy(ya, yb);
}

std::vector<ReplacementOutcome> replacement_test(const ReplacementInputs& in,
                                                 KlDirection kl_direction,
                                                 const std::string& class_id) {
  const Matrix& U = in.U_true;
  if (in.U_self_pred.rows() != U.rows() || in.U_self_pred.cols() != U.cols() ||
      in.U_cross_pred.rows() != U.rows() || in.U_cross_pred.cols() != U.cols()) {
    throw Error(ErrorCode::kDimensionMismatch,
                "replacement_test: coefficient matrices must share one n x k shape");
  }
  if (in.W.rows() != U.cols()) {
    throw Error(ErrorCode::kDimensionMismatch, "replacement_test: basis rows differ from k");
  }
  if (in.head.weights.rows() != in.W.cols()) {
    throw Error(ErrorCode::kDimensionMismatch, "replacement_test: head input differs from d");
  }
  const Index n = U.rows();
  std::vector<ReplacementOutcome> outcomes;
  outcomes.reserve(static_cast<std::size_t>(U.cols()));
  for (Index i = 0; i < U.cols(); ++i) {
    Matrix U_self = U, U_cross = U;
    U_self.col(i) = in.U_self_pred.col(i);
    U_cross.col(i) = in.U_cross_pred.col(i);
    const Matrix A_self = U_self * in.W;
    const Matrix A_cross = U_cross * in.W;
    const Matrix z_self = head_logits(A_self, in.head);
    const Matrix z_cross = head_logits(A_cross, in.head);

    ReplacementOutcome o;
    o.class_id = class_id;
    o.concept_index = static_cast<int>(i);
    double l2 = 0.0, kl = 0.0;
    for (Index r = 0; r < n; ++r) {
      l2 += (A_cross.row(r) - A_self.row(r)).norm();
      const RowVector zs = z_self.row(r), zc = z_cross.row(r);
      kl += kl_direction == KlDirection::kSelfToCross ? kl_divergence(zs, zc) : kl_divergence(zc, zs);
    }
    o.delta_l2 = n > 0 ? l2 / static_cast<double>(n) : 0.0;
    o.delta_kl = n > 0 ? kl / static_cast<double>(n) : 0.0;
    o.match_accuracy = match_accuracy(z_cross, z_self);
    outcomes.push_back(o);
  }
  return outcomes;
}

}  // namespace consim
