#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "consim/types.hpp"

namespace consim {

enum class FactorMethod { kNnmf, kSemiNmf };

const char* to_string(FactorMethod method) noexcept;
FactorMethod factor_method_from_string(const std::string& name);

struct FactorOptions {
  int max_iter = 500;
  double tol = 1e-5;  // relative objective decrease
  std::uint64_t seed = 0;
};

// A ~= U * W with U (n x k) >= 0. W (k x d) is non-negative for NNMF only.
struct ConceptDecomposition {
  Matrix U;
  Matrix W;
  FactorMethod method = FactorMethod::kNnmf;
  int k = 0;
  double recon_error = 0.0;
  int iterations = 0;
  std::uint64_t seed = 0;
  // Squared Frobenius objective after initialization and after every iteration.
  std::vector<double> objective;
};

// Multiplicative-update NNMF, NNDSVDa initialization.
ConceptDecomposition nnmf(const Matrix& A, int k, const FactorOptions& options = {});

// Semi-NMF: W by least squares, U by the sign-split multiplicative rule.
// U starts from k-means memberships plus 0.2.
ConceptDecomposition semi_nmf(const Matrix& A, int k, const FactorOptions& options = {});

// NNMF when A has no negative entries, Semi-NMF otherwise.
FactorMethod detect_factor_method(const Matrix& A);

// Row-wise non-negative least squares against a fixed basis: each row u of the
// result minimizes ||a - u W||^2 subject to u >= 0 (Lawson-Hanson active set).
Matrix nnls_refit(const Matrix& A, const Matrix& W);

// Single-row solve on precomputed normal equations: min u'Gu - 2 b'u, u >= 0.
Vector nnls_active_set(const Matrix& gram, const Vector& rhs);

double reconstruction_error(const Matrix& A, const Matrix& U, const Matrix& W);

struct KMeansResult {
  std::vector<int> labels;
  Matrix centers;
  double inertia = 0.0;
};

// Seeded Lloyd's with k-means++ seeding and `restarts` restarts; the lowest
// inertia wins (earliest restart on ties), points go to the lowest-index
// nearest center.
KMeansResult kmeans(const Matrix& points, int k, std::uint64_t seed, int restarts = 10,
                    int max_iter = 300);

}  // namespace consim
