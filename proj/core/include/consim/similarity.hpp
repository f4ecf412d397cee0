#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "consim/regress.hpp"
#include "consim/types.hpp"

namespace consim {

// Degenerate results (zero variance in either input) score 0 and are flagged.
struct Correlation {
  double r = 0.0;
  bool degenerate = false;
};

Correlation pearson(std::span<const double> u, std::span<const double> v);
Correlation spearman(std::span<const double> u, std::span<const double> v);
Correlation pearson(const Vector& u, const Vector& v);
Correlation spearman(const Vector& u, const Vector& v);

// Average ranks (1-based), ties share the mean of their positions.
Vector average_ranks(std::span<const double> values);

enum class CorrelationKind { kPearson, kSpearman };

struct CorrelationMatrix {
  Matrix R;  // k1 x k2
  std::vector<std::vector<bool>> degenerate;
  CorrelationKind kind = CorrelationKind::kPearson;
};

CorrelationMatrix correlation_matrix(const Matrix& U1, const Matrix& U2, CorrelationKind kind);

enum class McsAxis { kRows, kColumns };

// kRows: per concept of the first model, the best match among the second
// model's concepts (row maxima). kColumns: column maxima.
Vector mcs(const Matrix& R, McsAxis axis);

struct MmcsResult {
  double mmcs1 = 0.0;
  double mmcs2 = 0.0;
  double mmcs = 0.0;
};

// Mean of the per-concept maxima over concepts and classes, per direction;
// the overall score averages the two directions.
MmcsResult mmcs(const std::vector<Matrix>& per_class_R);

struct SimilarityRecord {
  std::string class_id;
  int concept_index = 0;
  int model = 1;  // which model's concepts are the regression targets
  Direction direction = Direction::k2to1;  // the cross direction scored
  double cmcs_pearson = 0.0;
  double cmcs_spearman = 0.0;
  double smcs_pearson = 0.0;
  double smcs_spearman = 0.0;
  double delta_pearson = 0.0;  // smcs_pearson - cmcs_pearson
  bool degenerate = false;
  bool label_fallback = false;  // proposals chosen by label, not prediction
  std::optional<double> importance;
};

struct EvalSplit {
  std::vector<Index> train;
  std::vector<Index> eval;
};

// Seeded split at image granularity: all patches of one image land on the
// same side. `eval_fraction` of the images (at least one, at most all but
// one) go to the evaluation side.
EvalSplit split_by_image(const std::vector<std::string>& image_ids, double eval_fraction,
                         std::uint64_t seed);

struct ScoreOptions {
  RegressorOptions regressor;  // direction is overwritten per fit
};

struct ScoreResult {
  std::vector<SimilarityRecord> records;  // model-1 concepts then model-2 concepts
  // Predictions on the evaluation rows, indexed by Direction.
  Matrix pred_1to2, pred_2to1, pred_1to1, pred_2to2;
  Matrix U1_eval, U2_eval;
};

// Fits the four direction regressors on the training rows and scores every
// concept on the evaluation rows.
ScoreResult score_concepts(const Matrix& A1, const Matrix& A2, const Matrix& U1,
                           const Matrix& U2, const EvalSplit& split,
                           const ScoreOptions& options, const std::string& class_id = "");

Matrix take_rows(const Matrix& m, const std::vector<Index>& rows);

}  // namespace consim
