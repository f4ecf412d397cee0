#include <doctest.h>

#include <cmath>

#include "consim/attribute.hpp"
#include "consim/error.hpp"
#include "helpers.hpp"

using namespace consim;

namespace {

LinearHead head_of(Index d, Index C, std::uint64_t seed) {
  LinearHead h;
  h.weights = testing::random_matrix(d, C, seed);
  h.bias = testing::random_matrix(1, C, seed + 1);
  return h;
}

double prob(const RowVector& z, Index t) {
  const RowVector e = (z.array() - z.maxCoeff()).exp();
  return e(t) / e.sum();
}

}  // namespace

TEST_SUITE("attribute") {
  const Matrix U = testing::random_matrix(8, 4, 1, 0.0, 1.0);
  const Matrix W = testing::random_matrix(4, 6, 2, 0.0, 1.0);
  const LinearHead head = head_of(6, 3, 3);

  TEST_CASE("logit target matches the analytic attribution") {
    CigOptions opt;
    opt.target = AttributionTarget::kLogit;
    const Matrix numeric = concept_attributions(U, W, head, 1, opt);
    const Matrix exact = analytic_cig_linear(U, W, head, 1);
    CHECK((numeric - exact).cwiseAbs().maxCoeff() <= 1e-12);
  }

  TEST_CASE("probability attributions are complete") {
    CigOptions opt;
    opt.steps = 300;
    const Matrix phi = concept_attributions(U, W, head, 2, opt);
    for (Index r = 0; r < U.rows(); ++r) {
      const double gap = prob(concept_logits(U.row(r), W, head), 2) -
                         prob(concept_logits(RowVector::Zero(4), W, head), 2);
      CHECK(std::abs(phi.row(r).sum() - gap) <= 1e-6);
    }
  }

  TEST_CASE("midpoint rule converges") {
    CigOptions coarse, fine;
    fine.steps = 3000;
    const Vector a = concept_integrated_gradients(U, W, head, 0, coarse);
    const Vector b = concept_integrated_gradients(U, W, head, 0, fine);
    CHECK((a - b).cwiseAbs().maxCoeff() <= 1e-3);
  }

  TEST_CASE("aggregation: sum is rows times mean") {
    CigOptions mean, sum;
    sum.aggregation = Aggregation::kSum;
    const Vector m = concept_integrated_gradients(U, W, head, 0, mean);
    const Vector s = concept_integrated_gradients(U, W, head, 0, sum);
    CHECK((s - m * 8.0).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(aggregation_from_string("sum") == Aggregation::kSum);
  }

  TEST_CASE("zero coefficients get zero attribution") {
    Matrix Z = U;
    Z.col(2).setZero();
    const Matrix phi = concept_attributions(Z, W, head, 0);
    CHECK(phi.col(2).isZero(0.0));
  }

  TEST_CASE("input validation") {
    CHECK_THROWS_AS(concept_attributions(U, W, head, 3), Error);
    CHECK_THROWS_AS(concept_attributions(U, W.topRows(3), head, 0), Error);
    CigOptions none;
    none.steps = 0;
    CHECK_THROWS_AS(concept_attributions(U, W, head, 0, none), Error);
  }
}
