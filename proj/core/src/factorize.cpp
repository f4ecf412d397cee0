#include "consim/factorize.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <limits>
#include <random>

#include "consim/error.hpp"

namespace consim {
namespace {

constexpr double kTiny = std::numeric_limits<double>::min();
constexpr int kMaxInner = 10;
constexpr double kInnerShrink = 0.01;

void check_rank(const Matrix& A, int k, const char* who) {
  if (A.rows() < 1 || A.cols() < 1) {
    throw Error(ErrorCode::kInvalidArgument, std::string(who) + ": empty matrix");
  }
  if (k < 1 || k > std::min(A.rows(), A.cols())) {
    throw Error(ErrorCode::kInvalidArgument,
                std::string(who) + ": k=" + std::to_string(k) + " outside [1, min(n, d)=" +
                    std::to_string(std::min(A.rows(), A.cols())) + "]");
  }
  require_finite(A, who);
}

double squared_residual(const Matrix& A, const Matrix& U, const Matrix& W) {
  return (A - U * W).squaredNorm();
}

bool stalled(double previous, double current, double tol) {
  if (current <= 0.0) return true;
  return (previous - current) <= tol * previous;
}

// Non-negative double SVD with zeros filled by the mean of A (NNDSVDa).
bool nndsvda(const Matrix& A, int k, Matrix& U, Matrix& W) {
  Eigen::BDCSVD<Matrix> svd(A, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Vector& s = svd.singularValues();
  const Matrix& left = svd.matrixU();
  const Matrix& right = svd.matrixV();
  U = Matrix::Zero(A.rows(), k);
  W = Matrix::Zero(k, A.cols());
  U.col(0) = std::sqrt(s(0)) * left.col(0).cwiseAbs();
  W.row(0) = std::sqrt(s(0)) * right.col(0).cwiseAbs().transpose();
  for (int j = 1; j < k; ++j) {
    const Vector x = left.col(j);
    const Vector y = right.col(j);
    const Vector xp = x.cwiseMax(0.0), xn = (-x).cwiseMax(0.0);
    const Vector yp = y.cwiseMax(0.0), yn = (-y).cwiseMax(0.0);
    const double xpn = xp.norm(), xnn = xn.norm(), ypn = yp.norm(), ynn = yn.norm();
    const double mp = xpn * ypn, mn = xnn * ynn;
    if (std::max(mp, mn) <= 0.0) continue;
    const double scale = std::sqrt(s(j) * std::max(mp, mn));
    if (mp > mn) {
      U.col(j) = scale * xp / xpn;
      W.row(j) = scale * (yp / ypn).transpose();
    } else {
      U.col(j) = scale * xn / xnn;
      W.row(j) = scale * (yn / ynn).transpose();
    }
  }
  const double fill = A.mean();
  U = U.unaryExpr([fill](double v) { return v < 1e-12 ? fill : v; });
  W = W.unaryExpr([fill](double v) { return v < 1e-12 ? fill : v; });
  return U.allFinite() && W.allFinite() && fill > 0.0;
}

void random_init(const Matrix& A, int k, std::uint64_t seed, Matrix& U, Matrix& W) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  const double scale = std::sqrt(std::max(A.mean(), 1e-12) / k);
  U = Matrix::NullaryExpr(A.rows(), k, [&] { return scale * uniform(rng); });
  W = Matrix::NullaryExpr(k, A.cols(), [&] { return scale * uniform(rng); });
}

// +0.0 for anything not strictly positive (also folds -0.0).
double clamp_nonneg(double v) { return v > 0.0 ? v : 0.0; }

Matrix least_squares_basis(const Matrix& U, const Matrix& A) {
  const Matrix gram = U.transpose() * U;
  const Matrix rhs = U.transpose() * A;
  Eigen::LDLT<Matrix> ldlt(gram);
  if (ldlt.info() == Eigen::Success && ldlt.isPositive() &&
      ldlt.vectorD().minCoeff() > 1e-12 * std::max(1.0, ldlt.vectorD().maxCoeff())) {
    return ldlt.solve(rhs);
  }
  return Eigen::CompleteOrthogonalDecomposition<Matrix>(U).solve(A);
}

void record_monotone(std::vector<double>& history, double value) {
  // Non-increasing up to rounding in the residual evaluation itself.
  assert(history.empty() || value <= history.back() * (1.0 + 1e-12) + 1e-300);
  history.push_back(value);
}

}  // namespace

const char* to_string(FactorMethod method) noexcept {
  return method == FactorMethod::kNnmf ? "nnmf" : "semi_nmf";
}

FactorMethod factor_method_from_string(const std::string& name) {
  if (name == "nnmf") return FactorMethod::kNnmf;
  if (name == "semi_nmf") return FactorMethod::kSemiNmf;
  throw Error(ErrorCode::kInvalidArgument, "unknown factorization method '" + name + "'");
}

FactorMethod detect_factor_method(const Matrix& A) {
  return A.size() > 0 && A.minCoeff() < 0.0 ? FactorMethod::kSemiNmf : FactorMethod::kNnmf;
}

double reconstruction_error(const Matrix& A, const Matrix& U, const Matrix& W) {
  if (U.rows() != A.rows() || W.cols() != A.cols() || U.cols() != W.rows()) {
    throw Error(ErrorCode::kDimensionMismatch, "reconstruction_error: A is " +
                                                   std::to_string(A.rows()) + "x" +
                                                   std::to_string(A.cols()) + ", U*W is " +
                                                   std::to_string(U.rows()) + "x" +
                                                   std::to_string(W.cols()));
  }
  return (A - U * W).norm();
}

ConceptDecomposition nnmf(const Matrix& A, int k, const FactorOptions& options) {
  check_rank(A, k, "nnmf");
  if (A.minCoeff() < 0.0) {
    throw Error(ErrorCode::kInvalidArgument, "nnmf: input has negative entries; use semi_nmf");
  }
  ConceptDecomposition out;
  out.method = FactorMethod::kNnmf;
  out.k = k;
  out.seed = options.seed;
  if (A.isZero(0.0)) {
    out.U = Matrix::Zero(A.rows(), k);
    out.W = Matrix::Zero(k, A.cols());
    out.objective = {0.0};
    return out;
  }

  Matrix U, W;
  if (!nndsvda(A, k, U, W)) random_init(A, k, options.seed, U, W);

  double current = squared_residual(A, U, W);
  record_monotone(out.objective, current);
  // Accelerated multiplicative updates (Gillis & Glineur): with the products
  // against A cached, repeating a factor's update is cheap, so each outer
  // iteration updates W and then U several times until the steps shrink.
  // Every inner step is a plain multiplicative update, so the objective still
  // cannot increase.
  const auto inner_update = [](Matrix& X, const Matrix& num, const Matrix& gram, bool left) {
    double first_step = 0.0;
    for (int inner = 0; inner < kMaxInner; ++inner) {
      const Matrix den = left ? Matrix(X * gram) : Matrix(gram * X);
      const Matrix next = X.cwiseProduct(num.cwiseQuotient(den.cwiseMax(kTiny)));
      const double step = (next - X).norm();
      X = next;
      if (inner == 0) first_step = step;
      else if (step <= kInnerShrink * first_step) break;
    }
  };
  for (int it = 0; it < options.max_iter; ++it) {
    inner_update(W, U.transpose() * A, U.transpose() * U, false);
    inner_update(U, A * W.transpose(), W * W.transpose(), true);

    const double previous = current;
    current = squared_residual(A, U, W);
    record_monotone(out.objective, current);
    out.iterations = it + 1;
    if (stalled(previous, current, options.tol)) break;
  }
  out.U = U.unaryExpr(&clamp_nonneg);
  out.W = W.unaryExpr(&clamp_nonneg);
  out.recon_error = reconstruction_error(A, out.U, out.W);
  return out;
}

ConceptDecomposition semi_nmf(const Matrix& A, int k, const FactorOptions& options) {
  check_rank(A, k, "semi_nmf");
  ConceptDecomposition out;
  out.method = FactorMethod::kSemiNmf;
  out.k = k;
  out.seed = options.seed;

  const KMeansResult km = kmeans(A, k, options.seed);
  Matrix U = Matrix::Constant(A.rows(), k, 0.2);
  for (Index i = 0; i < A.rows(); ++i) U(i, km.labels[static_cast<std::size_t>(i)]) += 1.0;
  std::vector<Index> zero_rows;
  for (Index i = 0; i < A.rows(); ++i) {
    if (A.row(i).isZero(0.0)) zero_rows.push_back(i);
  }
  for (Index i : zero_rows) U.row(i).setZero();

  Matrix W = least_squares_basis(U, A);
  double current = squared_residual(A, U, W);
  record_monotone(out.objective, current);
  for (int it = 0; it < options.max_iter && current > 0.0; ++it) {
    const Matrix P = A * W.transpose();
    const Matrix Q = W * W.transpose();
    const Matrix P_pos = (P.cwiseAbs() + P) / 2.0, P_neg = (P.cwiseAbs() - P) / 2.0;
    const Matrix Q_pos = (Q.cwiseAbs() + Q) / 2.0, Q_neg = (Q.cwiseAbs() - Q) / 2.0;
    const Matrix num = P_pos + U * Q_neg;
    const Matrix den = P_neg + U * Q_pos;
    U = U.cwiseProduct(num.cwiseQuotient(den.cwiseMax(kTiny)).cwiseSqrt());
    for (Index i : zero_rows) U.row(i).setZero();
    W = least_squares_basis(U, A);

    const double previous = current;
    current = squared_residual(A, U, W);
    record_monotone(out.objective, current);
    out.iterations = it + 1;
    if (stalled(previous, current, options.tol)) break;
  }
  out.U = U.unaryExpr(&clamp_nonneg);
  out.W = W;
  out.recon_error = reconstruction_error(A, out.U, out.W);
  return out;
}

KMeansResult kmeans(const Matrix& points, int k, std::uint64_t seed, int restarts, int max_iter) {
  const Index n = points.rows();
  if (k < 1 || k > n) throw Error(ErrorCode::kInvalidArgument, "kmeans: k outside [1, n]");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  const auto pick = [&](Index bound) {
    return std::min<Index>(static_cast<Index>(uniform(rng) * static_cast<double>(bound)), bound - 1);
  };

  KMeansResult best;
  best.inertia = std::numeric_limits<double>::infinity();
  for (int restart = 0; restart < std::max(restarts, 1); ++restart) {
    Matrix centers(k, points.cols());
    centers.row(0) = points.row(pick(n));
    Vector dist = (points.rowwise() - centers.row(0)).rowwise().squaredNorm();
    for (int c = 1; c < k; ++c) {
      const double total = dist.sum();
      Index chosen = 0;
      if (total <= 0.0) {
        chosen = pick(n);
      } else {
        const double target = uniform(rng) * total;
        double acc = 0.0;
        chosen = n - 1;
        for (Index i = 0; i < n; ++i) {
          acc += dist(i);
          if (acc > target) {
            chosen = i;
            break;
          }
        }
      }
      centers.row(c) = points.row(chosen);
      dist = dist.cwiseMin((points.rowwise() - centers.row(c)).rowwise().squaredNorm());
    }

    std::vector<int> labels(static_cast<std::size_t>(n), -1);
    Vector nearest(n);
    for (int iter = 0; iter < max_iter; ++iter) {
      bool changed = false;
      for (Index i = 0; i < n; ++i) {
        int label = 0;
        double d_best = (points.row(i) - centers.row(0)).squaredNorm();
        for (int c = 1; c < k; ++c) {
          const double d = (points.row(i) - centers.row(c)).squaredNorm();
          if (d < d_best) {
            d_best = d;
            label = c;
          }
        }
        nearest(i) = d_best;
        if (labels[static_cast<std::size_t>(i)] != label) {
          labels[static_cast<std::size_t>(i)] = label;
          changed = true;
        }
      }
      if (!changed) break;
      Matrix sums = Matrix::Zero(k, points.cols());
      std::vector<Index> counts(static_cast<std::size_t>(k), 0);
      for (Index i = 0; i < n; ++i) {
        sums.row(labels[static_cast<std::size_t>(i)]) += points.row(i);
        ++counts[static_cast<std::size_t>(labels[static_cast<std::size_t>(i)])];
      }
      for (int c = 0; c < k; ++c) {
        if (counts[static_cast<std::size_t>(c)] > 0) {
          centers.row(c) = sums.row(c) / static_cast<double>(counts[static_cast<std::size_t>(c)]);
        } else {
          // Re-seed an empty cluster at the worst-served point.
          Index far = 0;
          nearest.maxCoeff(&far);
          centers.row(c) = points.row(far);
          nearest(far) = 0.0;
        }
      }
    }
    double inertia = 0.0;
    for (Index i = 0; i < n; ++i) {
      inertia += (points.row(i) - centers.row(labels[static_cast<std::size_t>(i)])).squaredNorm();
    }
    if (inertia < best.inertia) {
      best.inertia = inertia;
      best.labels = labels;
      best.centers = centers;
    }
  }
  return best;
}

Vector nnls_active_set(const Matrix& gram, const Vector& rhs) {
  const Index k = rhs.size();
  Vector x = Vector::Zero(k);
  if (rhs.isZero(0.0)) return x;
  std::vector<bool> passive(static_cast<std::size_t>(k), false);
  const double tol = 1e-13 * std::max({1.0, rhs.cwiseAbs().maxCoeff(), gram.diagonal().maxCoeff()});

  const auto solve_passive = [&](Vector& s) {
    std::vector<Index> idx;
    for (Index j = 0; j < k; ++j) {
      if (passive[static_cast<std::size_t>(j)]) idx.push_back(j);
    }
    const auto m = static_cast<Index>(idx.size());
    Matrix g(m, m);
    Vector b(m);
    for (Index a = 0; a < m; ++a) {
      b(a) = rhs(idx[static_cast<std::size_t>(a)]);
      for (Index c = 0; c < m; ++c) g(a, c) = gram(idx[static_cast<std::size_t>(a)], idx[static_cast<std::size_t>(c)]);
    }
    Vector sol;
    Eigen::LDLT<Matrix> ldlt(g);
    if (ldlt.info() == Eigen::Success && ldlt.isPositive() && ldlt.vectorD().minCoeff() > 0.0) {
      sol = ldlt.solve(b);
    } else {
      sol = Eigen::CompleteOrthogonalDecomposition<Matrix>(g).solve(b);
    }
    s = Vector::Zero(k);
    for (Index a = 0; a < m; ++a) s(idx[static_cast<std::size_t>(a)]) = sol(a);
  };

  Vector w = rhs - gram * x;
  for (Index outer = 0; outer < 3 * k + 10; ++outer) {
    Index best = -1;
    double best_w = tol;
    for (Index j = 0; j < k; ++j) {
      if (!passive[static_cast<std::size_t>(j)] && w(j) > best_w) {
        best_w = w(j);
        best = j;
      }
    }
    if (best < 0) break;
    passive[static_cast<std::size_t>(best)] = true;

    Vector s;
    solve_passive(s);
    for (Index inner = 0; inner < 3 * k + 10; ++inner) {
      double alpha = std::numeric_limits<double>::infinity();
      for (Index j = 0; j < k; ++j) {
        if (passive[static_cast<std::size_t>(j)] && s(j) <= 0.0) {
          alpha = std::min(alpha, x(j) / (x(j) - s(j)));
        }
      }
      if (!std::isfinite(alpha)) break;
      x += alpha * (s - x);
      for (Index j = 0; j < k; ++j) {
        if (passive[static_cast<std::size_t>(j)] && x(j) <= tol * 1e-3) {
          passive[static_cast<std::size_t>(j)] = false;
          x(j) = 0.0;
        }
      }
      solve_passive(s);
    }
    x = s;
    w = rhs - gram * x;
  }
  return x.unaryExpr(&clamp_nonneg);
}

Matrix nnls_refit(const Matrix& A, const Matrix& W) {
  if (A.cols() != W.cols()) {
    throw Error(ErrorCode::kDimensionMismatch,
                "nnls_refit: A has " + std::to_string(A.cols()) + " columns, basis has " +
                    std::to_string(W.cols()));
  }
  require_finite(A, "nnls_refit input");
  const Matrix gram = W * W.transpose();
  const Matrix rhs = A * W.transpose();
  Matrix U(A.rows(), W.rows());
  for (Index i = 0; i < A.rows(); ++i) U.row(i) = nnls_active_set(gram, rhs.row(i).transpose()).transpose();
  return U;
}

}  // namespace consim
