#include <doctest.h>

#include <cmath>

#include "consim/error.hpp"
#include "consim/replace.hpp"
#include "helpers.hpp"

using namespace consim;

namespace {

LinearHead random_head(Index d, Index C, std::uint64_t seed) {
  LinearHead h;
  h.weights = testing::random_matrix(d, C, seed);
  h.bias = testing::random_matrix(1, C, seed + 1);
  for (Index c = 0; c < C; ++c) h.class_labels.push_back("k" + std::to_string(c));
  return h;
}

}  // namespace

TEST_SUITE("replace") {
  TEST_CASE("KL divergence of two-class softmaxes") {
    // softmax(0, 0) = (1/2, 1/2); softmax(0, ln 3) = (1/4, 3/4).
    const std::vector<double> p = {0.0, 0.0};
    const std::vector<double> q = {0.0, std::log(3.0)};
    CHECK(kl_divergence(p, q) == doctest::Approx(std::log(2.0 / std::sqrt(3.0))).epsilon(1e-14));
    CHECK(kl_divergence(p, p) == 0.0);
    // Shift invariance and huge logits stay finite.
    const std::vector<double> big = {1000.0, 1000.0 + std::log(3.0)};
    CHECK(kl_divergence(p, big) == doctest::Approx(kl_divergence(p, q)));
  }

  TEST_CASE("argmax ties go to the lowest index") {
    const std::vector<double> z = {1.0, 3.0, 3.0};
    CHECK(argmax(z) == 1);
    Matrix a(2, 2), b(2, 2);
    a << 1, 0, 0, 1;
    b << 1, 0, 1, 0;
    CHECK(match_accuracy(a, b) == 0.5);
  }

  TEST_CASE("self replacement is the identity") {
    const Matrix U = testing::random_matrix(20, 4, 1, 0.0, 1.0);
    const Matrix W = testing::random_matrix(4, 6, 2, 0.0, 1.0);
    const LinearHead head = random_head(6, 3, 3);
    const auto out = replacement_test({U, U, U, W, head}, KlDirection::kSelfToCross, "c");
    REQUIRE(out.size() == 4);
    for (const auto& o : out) {
      CHECK(o.delta_l2 == 0.0);
      CHECK(o.delta_kl == 0.0);
      CHECK(o.match_accuracy == 1.0);
      CHECK(o.class_id == "c");
    }
  }

  TEST_CASE("delta_l2 has a rank-one closed form") {
    // Reconstructions differ only through column i: dA = (u_self - u_cross) W_i.
    const Matrix U = testing::random_matrix(15, 3, 4, 0.0, 1.0);
    const Matrix self = testing::random_matrix(15, 3, 5, 0.0, 1.0);
    const Matrix cross = testing::random_matrix(15, 3, 6, 0.0, 1.0);
    const Matrix W = testing::random_matrix(3, 5, 7);
    const LinearHead head = random_head(5, 4, 8);
    const auto out = replacement_test({U, self, cross, W, head});
    for (const auto& o : out) {
      const Index i = o.concept_index;
      const double gain = W.row(i).norm();
      const double mean = ((self.col(i) - cross.col(i)).cwiseAbs() * gain).mean();
      CHECK(o.delta_l2 == doctest::Approx(mean).epsilon(1e-12));
    }
  }

  TEST_CASE("dimension checks") {
    const Matrix U = Matrix::Ones(3, 2);
    const Matrix W = Matrix::Ones(2, 4);
    const LinearHead wrong = random_head(5, 2, 1);
    CHECK_THROWS_AS(replacement_test({U, U, U, W, wrong}), Error);
    CHECK(kl_direction_from_string("cross_to_self") == KlDirection::kCrossToSelf);
    CHECK_THROWS_AS(kl_direction_from_string("sideways"), Error);
  }
}
