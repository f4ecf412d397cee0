#include <doctest.h>

#include <cmath>
#include <set>

#include "consim/similarity.hpp"
#include "helpers.hpp"

using namespace consim;

TEST_SUITE("similarity") {
  TEST_CASE("pearson and spearman on hand-computed data") {
    const std::vector<double> u = {1, 2, 3, 4};
    const std::vector<double> v = {2, 4, 5, 4};
    // cov = 3.5, var_u = 5, var_v = 4.75 (sums of squared deviations)
    CHECK(pearson(u, v).r == doctest::Approx(3.5 / std::sqrt(23.75)));
    // ranks of v: 1, 2.5, 4, 2.5 -> cov = 3, var = 5 and 4.5
    CHECK(spearman(u, v).r == doctest::Approx(3.0 / std::sqrt(22.5)));
    const std::vector<double> w = {4, 3, 2, 1};
    CHECK(pearson(u, w).r == doctest::Approx(-1.0));
  }

  TEST_CASE("average ranks share ties") {
    const std::vector<double> v = {10, 20, 20, 5};
    const Vector r = average_ranks(v);
    CHECK(r(0) == 2.0);
    CHECK(r(1) == 3.5);
    CHECK(r(2) == 3.5);
    CHECK(r(3) == 1.0);
  }

  TEST_CASE("constant inputs are degenerate, not NaN") {
    const std::vector<double> c = {3, 3, 3};
    const std::vector<double> v = {1, 2, 3};
    CHECK(pearson(c, v).degenerate);
    CHECK(pearson(c, v).r == 0.0);
    CHECK(spearman(v, c).degenerate);
    CHECK_FALSE(pearson(v, v).degenerate);
  }

  TEST_CASE("correlation matrix, MCS and MMCS") {
    const Matrix U = testing::random_matrix(30, 3, 2);
    const CorrelationMatrix self = correlation_matrix(U, U, CorrelationKind::kPearson);
    for (Index i = 0; i < 3; ++i) CHECK(self.R(i, i) == doctest::Approx(1.0));
    const MmcsResult r = mmcs({self.R});
    CHECK(r.mmcs == doctest::Approx(1.0));

    Matrix R(2, 3);
    R << 0.1, 0.9, 0.2, 0.4, 0.3, 0.5;
    CHECK(mcs(R, McsAxis::kRows)(0) == 0.9);
    CHECK(mcs(R, McsAxis::kRows)(1) == 0.5);
    CHECK(mcs(R, McsAxis::kColumns)(0) == 0.4);
    const MmcsResult m = mmcs({R});
    CHECK(m.mmcs1 == doctest::Approx(0.7));
    CHECK(m.mmcs2 == doctest::Approx((0.4 + 0.9 + 0.5) / 3));
    CHECK(m.mmcs == doctest::Approx((m.mmcs1 + m.mmcs2) / 2));
  }

  TEST_CASE("image-level split keeps images whole") {
    std::vector<std::string> ids;
    for (int i = 0; i < 10; ++i) {
      for (int p = 0; p < 4; ++p) ids.push_back("img" + std::to_string(i));
    }
    const EvalSplit s = split_by_image(ids, 0.3, 7);
    CHECK(s.eval.size() == 12);
    CHECK(s.train.size() == 28);
    std::set<std::string> train_imgs, eval_imgs;
    for (Index r : s.train) train_imgs.insert(ids[static_cast<std::size_t>(r)]);
    for (Index r : s.eval) eval_imgs.insert(ids[static_cast<std::size_t>(r)]);
    for (const auto& id : eval_imgs) CHECK(train_imgs.count(id) == 0);
    CHECK(split_by_image(ids, 0.3, 7).eval == s.eval);
  }

  TEST_CASE("self-comparison scores CMCS equal to SMCS") {
    const Matrix A = testing::random_matrix(120, 6, 3, 0.0, 1.0);
    const Matrix U = A.leftCols(3) * 2.0;
    std::vector<std::string> ids;
    for (int i = 0; i < 120; ++i) ids.push_back("i" + std::to_string(i / 4));
    const EvalSplit split = split_by_image(ids, 0.3, 0);
    const ScoreResult r = score_concepts(A, A, U, U, split, {}, "c");
    REQUIRE(r.records.size() == 6);
    for (const auto& rec : r.records) {
      CHECK(rec.delta_pearson == doctest::Approx(0.0).epsilon(1e-12));
      CHECK(rec.cmcs_pearson == rec.smcs_pearson);
      CHECK(rec.class_id == "c");
    }
    CHECK(r.records[0].model == 1);
    CHECK(r.records[0].direction == Direction::k2to1);
    CHECK(r.records[5].model == 2);
    CHECK(r.records[5].direction == Direction::k1to2);
  }
}
