#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "consim/types.hpp"

namespace consim {

struct Standardized {
  Matrix values;
  RowVector mean;
  RowVector std;               // population std, floored at kStdFloor
  std::vector<bool> constant;  // columns whose raw std fell below the floor
};

inline constexpr double kStdFloor = 1e-12;

Standardized standardize(const Matrix& X);

struct LassoOptions {
  int max_iter = 10000;  // full coordinate cycles
  double tol = 1e-6;     // max |delta w_j| over a cycle
};

struct LassoResult {
  Vector weights;
  int cycles = 0;
  bool converged = false;
  std::vector<double> objective;  // after each full cycle
};

// Cyclic coordinate descent on (1/n)||Xw - y||^2 + lambda ||w||_1.
LassoResult lasso_cd(const Matrix& X, const Vector& y, double lambda,
                     const LassoOptions& options = {});

double lasso_objective(const Matrix& X, const Vector& y, const Vector& w, double lambda);

// Smallest lambda for which w = 0 is optimal: max_j |2 x_j'y| / n.
double lasso_lambda_max(const Matrix& X, const Vector& y);

enum class Direction { k1to2, k2to1, k1to1, k2to2 };
const char* to_string(Direction direction) noexcept;
Direction direction_from_string(const std::string& name);

struct ConceptRegressor {
  Matrix W_star;  // d_src x k
  double lambda = 0.1;
  RowVector x_mean, x_std;
  RowVector y_mean, y_std;
  std::vector<bool> x_constant;
  int folds = 5;
  std::uint64_t seed = 0;
  Direction direction = Direction::k1to2;
};

struct RegressorOptions {
  double lambda = 0.1;
  int folds = 5;
  std::uint64_t seed = 0;
  Direction direction = Direction::k1to2;
  LassoOptions lasso;
};

// Seeded partition of 0..n-1 into `folds` folds whose sizes differ by at most one.
std::vector<std::vector<Index>> fold_assignment(Index n, int folds, std::uint64_t seed);

// One lasso fit per fold per target column on standardized data; W_star is
// the mean of the fold weights.
ConceptRegressor fit_concept_regressor(const Matrix& A_src, const Matrix& U_tgt,
                                       const RegressorOptions& options = {});

// Standardize with the stored statistics, apply W_star, unnormalize.
Matrix predict_coefficients(const ConceptRegressor& regressor, const Matrix& A_eval);

// Mean R^2 over the target columns (uniform average).
double r2_score(const Matrix& y_true, const Matrix& y_pred);

struct PermutationImportance {
  Vector mean;  // per source feature
  Vector std;
  Matrix raw;   // features x repeats
};

// Mean decrease of R^2 when one source column is shuffled, over `repeats`
// seeded shuffles.
PermutationImportance permutation_importance(const ConceptRegressor& regressor, const Matrix& X,
                                             const Matrix& y, int repeats = 5,
                                             std::uint64_t seed = 0);

}  // namespace consim
