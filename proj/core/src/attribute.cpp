#include "consim/attribute.hpp"

#include <cmath>

#include "consim/error.hpp"
#include "consim/replace.hpp"

namespace consim {
namespace {

void check_inputs(const Matrix& U, const Matrix& W, const LinearHead& head, Index target) {
  if (U.cols() != W.rows()) {
    throw Error(ErrorCode::kDimensionMismatch, "cig: coefficient width differs from basis rows");
  }
  if (W.cols() != head.weights.rows()) {
    throw Error(ErrorCode::kDimensionMismatch, "cig: basis width differs from head input");
  }
  if (target < 0 || target >= head.weights.cols()) {
    throw Error(ErrorCode::kInvalidArgument,
                "cig: target class " + std::to_string(target) + " outside [0, " +
                    std::to_string(head.weights.cols()) + ")");
  }
}

RowVector softmax(const RowVector& z) {
  const RowVector e = (z.array() - z.maxCoeff()).exp();
  return e / e.sum();
}

}  // namespace

const char* to_string(Aggregation aggregation) noexcept {
  return aggregation == Aggregation::kMean ? "mean" : "sum";
}

Aggregation aggregation_from_string(const std::string& name) {
  if (name == "mean") return Aggregation::kMean;
  if (name == "sum") return Aggregation::kSum;
  throw Error(ErrorCode::kInvalidArgument, "unknown importance aggregation '" + name + "'");
}

RowVector concept_logits(const RowVector& u_row, const Matrix& W, const LinearHead& head) {
  if (u_row.size() != W.rows()) {
    throw Error(ErrorCode::kDimensionMismatch, "concept_logits: u has the wrong length");
  }
  return head_logits(u_row * W, head);
}

Matrix concept_attributions(const Matrix& U, const Matrix& W, const LinearHead& head,
                            Index target_class, const CigOptions& options) {
  check_inputs(U, W, head, target_class);
  if (options.steps < 1) throw Error(ErrorCode::kInvalidArgument, "cig: steps must be >= 1");
  // Composite linear map from coefficients to logits.
  const Matrix M = W * head.weights;  // k x C
  const Vector m_target = M.col(target_class);
  Matrix phi(U.rows(), U.cols());
  for (Index r = 0; r < U.rows(); ++r) {
    const RowVector u = U.row(r);
    Vector grad_sum = Vector::Zero(U.cols());
    if (options.target == AttributionTarget::kLogit) {
      grad_sum = m_target * static_cast<double>(options.steps);
    } else {
      for (int s = 0; s < options.steps; ++s) {
        const double alpha = (s + 0.5) / options.steps;
        const RowVector z = (alpha * u) * M + head.bias;
        const RowVector p = softmax(z);
        // d p_t / d z = p_t (e_t - p)
        RowVector dz = -p[target_class] * p;
        dz[target_class] += p[target_class];
        grad_sum += M * dz.transpose();
      }
    }
    phi.row(r) = u.cwiseProduct(grad_sum.transpose() / static_cast<double>(options.steps));
  }
  return phi;
}

Vector concept_integrated_gradients(const Matrix& U, const Matrix& W, const LinearHead& head,
                                    Index target_class, const CigOptions& options) {
  const Matrix phi = concept_attributions(U, W, head, target_class, options);
  if (phi.rows() == 0) return Vector::Zero(U.cols());
  const Vector total = phi.colwise().sum().transpose();
  return options.aggregation == Aggregation::kMean ? Vector(total / static_cast<double>(phi.rows()))
                                                   : total;
}

Matrix analytic_cig_linear(const Matrix& U, const Matrix& W, const LinearHead& head,
                           Index target_class) {
  check_inputs(U, W, head, target_class);
  Matrix phi(U.rows(), U.cols());
  for (Index j = 0; j < U.cols(); ++j) {
    double dot = 0.0;
    for (Index c = 0; c < W.cols(); ++c) dot += W(j, c) * head.weights(c, target_class);
    phi.col(j) = U.col(j) * dot;
  }
  return phi;
}

}  // namespace consim
