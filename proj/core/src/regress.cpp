#include "consim/regress.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "consim/error.hpp"

namespace consim {
namespace {

double soft_threshold(double value, double threshold) {
  if (value > threshold) return value - threshold;
  if (value < -threshold) return value + threshold;
  return 0.0;
}

}  // namespace

Standardized standardize(const Matrix& X) {
  Standardized out;
  const auto n = static_cast<double>(X.rows());
  out.mean = X.colwise().mean();
  out.std.resize(X.cols());
  out.constant.assign(static_cast<std::size_t>(X.cols()), false);
  out.values.resize(X.rows(), X.cols());
  for (Index j = 0; j < X.cols(); ++j) {
    const auto centered = X.col(j).array() - out.mean(j);
    const double sd = n > 0 ? std::sqrt(centered.square().sum() / n) : 0.0;
    if (sd < kStdFloor) {
      out.std(j) = kStdFloor;
      out.constant[static_cast<std::size_t>(j)] = true;
      out.values.col(j).setZero();
    } else {
      out.std(j) = sd;
      out.values.col(j) = centered / sd;
    }
  }
  return out;
}

double lasso_objective(const Matrix& X, const Vector& y, const Vector& w, double lambda) {
  return (X * w - y).squaredNorm() / static_cast<double>(X.rows()) + lambda * w.lpNorm<1>();
}

double lasso_lambda_max(const Matrix& X, const Vector& y) {
  if (X.rows() == 0) return 0.0;
  return (2.0 * (X.transpose() * y).cwiseAbs().maxCoeff()) / static_cast<double>(X.rows());
}

LassoResult lasso_cd(const Matrix& X, const Vector& y, double lambda, const LassoOptions& options) {
  if (X.rows() != y.size()) {
    throw Error(ErrorCode::kDimensionMismatch, "lasso_cd: X and y have different row counts");
  }
  if (!X.allFinite() || !y.allFinite() || !std::isfinite(lambda)) {
    throw Error(ErrorCode::kNonFinite, "lasso_cd: non-finite input");
  }
  if (lambda < 0.0) throw Error(ErrorCode::kInvalidArgument, "lasso_cd: lambda must be >= 0");
  const Index p = X.cols();
  const double n = static_cast<double>(X.rows());
  LassoResult out;
  out.weights = Vector::Zero(p);
  if (X.rows() == 0) {
    out.converged = true;
    return out;
  }
  // w = 0 is optimal iff lambda >= lambda_max. Checking that directly keeps
  // the boundary exact; the coordinate sweep sums in another order and could
  // leave a rounding-sized weight behind.
  if (lambda >= lasso_lambda_max(X, y)) {
    out.converged = true;
    out.objective.push_back(y.squaredNorm() / n);
    return out;
  }
  // Per coordinate: minimize z w^2 - 2 rho w + lambda |w|, so w = S(rho, lambda/2) / z.
  const Vector z = X.colwise().squaredNorm().transpose() / n;
  Vector residual = y;
  for (int cycle = 0; cycle < options.max_iter; ++cycle) {
    double max_delta = 0.0;
    for (Index j = 0; j < p; ++j) {
      const double old = out.weights(j);
      double updated = 0.0;
      if (z(j) > 0.0) {
        const double rho = X.col(j).dot(residual) / n + z(j) * old;
        updated = soft_threshold(rho, lambda / 2.0) / z(j);
      }
      const double delta = updated - old;
      if (delta != 0.0) {
        residual -= delta * X.col(j);
        out.weights(j) = updated;
        max_delta = std::max(max_delta, std::abs(delta));
      }
    }
    out.cycles = cycle + 1;
    out.objective.push_back(residual.squaredNorm() / n + lambda * out.weights.lpNorm<1>());
    if (max_delta < options.tol) {
      out.converged = true;
      break;
    }
  }
  return out;
}

const char* to_string(Direction direction) noexcept {
  switch (direction) {
    case Direction::k1to2: return "1->2";
    case Direction::k2to1: return "2->1";
    case Direction::k1to1: return "1->1";
    case Direction::k2to2: return "2->2";
  }
  return "?";
}

Direction direction_from_string(const std::string& name) {
  if (name == "1->2") return Direction::k1to2;
  if (name == "2->1") return Direction::k2to1;
  if (name == "1->1") return Direction::k1to1;
  if (name == "2->2") return Direction::k2to2;
  throw Error(ErrorCode::kInvalidArgument, "unknown direction '" + name + "'");
}

std::vector<std::vector<Index>> fold_assignment(Index n, int folds, std::uint64_t seed) {
  if (folds < 1) throw Error(ErrorCode::kInvalidArgument, "folds must be >= 1");
  if (n < folds) {
    throw Error(ErrorCode::kInvalidArgument, "fold_assignment: " + std::to_string(n) +
                                                 " rows cannot fill " + std::to_string(folds) +
                                                 " folds");
  }
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  std::mt19937_64 rng(seed);
  // Fisher-Yates with our own index draw keeps the permutation stable across
  // standard library implementations.
  for (Index i = n - 1; i > 0; --i) {
    const auto j = static_cast<Index>(rng() % static_cast<std::uint64_t>(i + 1));
    std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
  }
  std::vector<std::vector<Index>> out(static_cast<std::size_t>(folds));
  const Index base = n / folds;
  const Index extra = n % folds;
  Index pos = 0;
  for (int f = 0; f < folds; ++f) {
    const Index size = base + (f < extra ? 1 : 0);
    out[static_cast<std::size_t>(f)].assign(order.begin() + pos, order.begin() + pos + size);
    std::sort(out[static_cast<std::size_t>(f)].begin(), out[static_cast<std::size_t>(f)].end());
    pos += size;
  }
  return out;
}

ConceptRegressor fit_concept_regressor(const Matrix& A_src, const Matrix& U_tgt,
                                       const RegressorOptions& options) {
  if (A_src.rows() != U_tgt.rows()) {
    throw Error(ErrorCode::kDimensionMismatch,
                "fit_concept_regressor: source has " + std::to_string(A_src.rows()) +
                    " rows, targets have " + std::to_string(U_tgt.rows()));
  }
  if (A_src.rows() < options.folds) {
    throw Error(ErrorCode::kInvalidArgument,
                "fit_concept_regressor: fewer rows (" + std::to_string(A_src.rows()) +
                    ") than folds (" + std::to_string(options.folds) + ")");
  }
  ConceptRegressor reg;
  reg.lambda = options.lambda;
  reg.folds = options.folds;
  reg.seed = options.seed;
  reg.direction = options.direction;

  const Standardized xs = standardize(A_src);
  const Standardized ys = standardize(U_tgt);
  reg.x_mean = xs.mean;
  reg.x_std = xs.std;
  reg.x_constant = xs.constant;
  reg.y_mean = ys.mean;
  reg.y_std = ys.std;
  reg.W_star = Matrix::Zero(A_src.cols(), U_tgt.cols());

  const auto folds = fold_assignment(A_src.rows(), options.folds, options.seed);
  for (const auto& rows : folds) {
    Matrix X(static_cast<Index>(rows.size()), A_src.cols());
    Matrix Y(static_cast<Index>(rows.size()), U_tgt.cols());
    for (std::size_t r = 0; r < rows.size(); ++r) {
      X.row(static_cast<Index>(r)) = xs.values.row(rows[r]);
      Y.row(static_cast<Index>(r)) = ys.values.row(rows[r]);
    }
    for (Index c = 0; c < U_tgt.cols(); ++c) {
      reg.W_star.col(c) += lasso_cd(X, Y.col(c), options.lambda, options.lasso).weights;
    }
  }
  reg.W_star /= static_cast<double>(folds.size());
  for (Index j = 0; j < A_src.cols(); ++j) {
    if (reg.x_constant[static_cast<std::size_t>(j)]) reg.W_star.row(j).setZero();
  }
  return reg;
}

Matrix predict_coefficients(const ConceptRegressor& regressor, const Matrix& A_eval) {
  if (A_eval.cols() != regressor.W_star.rows()) {
    throw Error(ErrorCode::kDimensionMismatch,
                "predict_coefficients: input has " + std::to_string(A_eval.cols()) +
                    " columns, regressor expects " + std::to_string(regressor.W_star.rows()));
  }
  Matrix X = (A_eval.rowwise() - regressor.x_mean).array().rowwise() / regressor.x_std.array();
  for (Index j = 0; j < X.cols(); ++j) {
    if (regressor.x_constant[static_cast<std::size_t>(j)]) X.col(j).setZero();
  }
  Matrix Y = X * regressor.W_star;
  return (Y.array().rowwise() * regressor.y_std.array()).rowwise() + regressor.y_mean.array();
}

double r2_score(const Matrix& y_true, const Matrix& y_pred) {
  if (y_true.rows() != y_pred.rows() || y_true.cols() != y_pred.cols()) {
    throw Error(ErrorCode::kDimensionMismatch, "r2_score: shape mismatch");
  }
  double total = 0.0;
  for (Index c = 0; c < y_true.cols(); ++c) {
    const double ss_res = (y_true.col(c) - y_pred.col(c)).squaredNorm();
    const double ss_tot = (y_true.col(c).array() - y_true.col(c).mean()).square().sum();
    if (ss_tot > 0.0) {
      total += 1.0 - ss_res / ss_tot;
    } else {
      total += ss_res == 0.0 ? 1.0 : 0.0;
    }
  }
  return y_true.cols() > 0 ? total / static_cast<double>(y_true.cols()) : 0.0;
}

PermutationImportance permutation_importance(const ConceptRegressor& regressor, const Matrix& X,
                                             const Matrix& y, int repeats, std::uint64_t seed) {
  if (X.rows() != y.rows()) {
    throw Error(ErrorCode::kDimensionMismatch, "permutation_importance: row mismatch");
  }
  if (repeats < 1) throw Error(ErrorCode::kInvalidArgument, "permutation_importance: repeats < 1");
  const double baseline = r2_score(y, predict_coefficients(regressor, X));
  PermutationImportance out;
  out.raw.resize(X.cols(), repeats);
  std::mt19937_64 rng(seed);
  std::vector<Index> perm(static_cast<std::size_t>(X.rows()));
  Matrix shuffled = X;
  for (Index j = 0; j < X.cols(); ++j) {
    for (int r = 0; r < repeats; ++r) {
      std::iota(perm.begin(), perm.end(), Index{0});
      for (Index i = X.rows() - 1; i > 0; --i) {
        const auto s = static_cast<Index>(rng() % static_cast<std::uint64_t>(i + 1));
        std::swap(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(s)]);
      }
      for (Index i = 0; i < X.rows(); ++i) shuffled(i, j) = X(perm[static_cast<std::size_t>(i)], j);
      out.raw(j, r) = baseline - r2_score(y, predict_coefficients(regressor, shuffled));
    }
    shuffled.col(j) = X.col(j);
  }
  out.mean = out.raw.rowwise().mean();
  out.std = ((out.raw.colwise() - out.mean).array().square().rowwise().mean()).sqrt();
  return out;
}

}  // namespace consim
