#include "consim/similarity.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>

#include "consim/error.hpp"

namespace consim {

Correlation pearson(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size()) throw Error(ErrorCode::kDimensionMismatch, "pearson: length mismatch");
  if (u.size() < 2) throw Error(ErrorCode::kInvalidArgument, "pearson: need at least 2 samples");
  const auto n = static_cast<double>(u.size());
  const double mu = std::accumulate(u.begin(), u.end(), 0.0) / n;
  const double mv = std::accumulate(v.begin(), v.end(), 0.0) / n;
  double suv = 0.0, suu = 0.0, svv = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    const double a = u[i] - mu, b = v[i] - mv;
    suv += a * b;
    suu += a * a;
    svv += b * b;
  }
  // Relative floor: a column that is constant up to rounding counts as constant.
  const double floor_u = 1e-24 * std::max(1.0, mu * mu) * n;
  const double floor_v = 1e-24 * std::max(1.0, mv * mv) * n;
  if (suu <= floor_u || svv <= floor_v) return {0.0, true};
  const double r = suv / std::sqrt(suu * svv);
  return {std::clamp(r, -1.0, 1.0), false};
}

Vector average_ranks(std::span<const double> values) {
  const std::size_t n = values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  Vector ranks(static_cast<Index>(n));
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
    const double rank = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t t = i; t <= j; ++t) ranks(static_cast<Index>(order[t])) = rank;
    i = j + 1;
  }
  return ranks;
}

Correlation spearman(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size()) throw Error(ErrorCode::kDimensionMismatch, "spearman: length mismatch");
  const Vector ru = average_ranks(u), rv = average_ranks(v);
  return pearson(std::span(ru.data(), static_cast<std::size_t>(ru.size())),
                 std::span(rv.data(), static_cast<std::size_t>(rv.size())));
}

Correlation pearson(const Vector& u, const Vector& v) {
  return pearson(std::span(u.data(), static_cast<std::size_t>(u.size())),
                 std::span(v.data(), static_cast<std::size_t>(v.size())));
}

Correlation spearman(const Vector& u, const Vector& v) {
  return spearman(std::span(u.data(), static_cast<std::size_t>(u.size())),
                  std::span(v.data(), static_cast<std::size_t>(v.size())));
}

CorrelationMatrix correlation_matrix(const Matrix& U1, const Matrix& U2, CorrelationKind kind) {
  if (U1.rows() != U2.rows()) {
    throw Error(ErrorCode::kDimensionMismatch,
                "correlation_matrix: " + std::to_string(U1.rows()) + " vs " +
                    std::to_string(U2.rows()) + " rows");
  }
  CorrelationMatrix out;
  out.kind = kind;
  out.R.resize(U1.cols(), U2.cols());
  out.degenerate.assign(static_cast<std::size_t>(U1.cols()),
                        std::vector<bool>(static_cast<std::size_t>(U2.cols()), false));
  for (Index i = 0; i < U1.cols(); ++i) {
    const Vector a = U1.col(i);
    for (Index j = 0; j < U2.cols(); ++j) {
      const Vector b = U2.col(j);
      const Correlation c = kind == CorrelationKind::kPearson ? pearson(a, b) : spearman(a, b);
      out.R(i, j) = c.r;
      out.degenerate[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = c.degenerate;
    }
  }
  return out;
}

Vector mcs(const Matrix& R, McsAxis axis) {
  if (R.size() == 0) return Vector();
  return axis == McsAxis::kRows ? Vector(R.rowwise().maxCoeff()) : Vector(R.colwise().maxCoeff().transpose());
}

MmcsResult mmcs(const std::vector<Matrix>& per_class_R) {
  MmcsResult out;
  double sum1 = 0.0, sum2 = 0.0;
  Index count1 = 0, count2 = 0;
  for (const Matrix& R : per_class_R) {
    const Vector m1 = mcs(R, McsAxis::kRows);
    const Vector m2 = mcs(R, McsAxis::kColumns);
    sum1 += m1.sum();
    sum2 += m2.sum();
    count1 += m1.size();
    count2 += m2.size();
  }
  out.mmcs1 = count1 > 0 ? sum1 / static_cast<double>(count1) : 0.0;
  out.mmcs2 = count2 > 0 ? sum2 / static_cast<double>(count2) : 0.0;
  out.mmcs = (out.mmcs1 + out.mmcs2) / 2.0;
  return out;
}

EvalSplit split_by_image(const std::vector<std::string>& image_ids, double eval_fraction,
                         std::uint64_t seed) {
  if (!(eval_fraction > 0.0 && eval_fraction < 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "eval_fraction must lie in (0, 1)");
  }
  std::vector<std::string> images = image_ids;
  std::sort(images.begin(), images.end());
  images.erase(std::unique(images.begin(), images.end()), images.end());
  if (images.size() < 2) {
    throw Error(ErrorCode::kInvalidArgument, "split_by_image: need patches from at least 2 images");
  }
  std::mt19937_64 rng(seed);
  for (std::size_t i = images.size() - 1; i > 0; --i) {
    std::swap(images[i], images[rng() % (i + 1)]);
  }
  auto n_eval = static_cast<std::size_t>(std::lround(eval_fraction * static_cast<double>(images.size())));
  n_eval = std::clamp<std::size_t>(n_eval, 1, images.size() - 1);
  std::map<std::string, bool> is_eval;
  for (std::size_t i = 0; i < images.size(); ++i) is_eval[images[i]] = i < n_eval;

  EvalSplit split;
  for (std::size_t r = 0; r < image_ids.size(); ++r) {
    (is_eval[image_ids[r]] ? split.eval : split.train).push_back(static_cast<Index>(r));
  }
  return split;
}

Matrix take_rows(const Matrix& m, const std::vector<Index>& rows) {
  Matrix out(static_cast<Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Index>(i)) = m.row(rows[i]);
  return out;
}

ScoreResult score_concepts(const Matrix& A1, const Matrix& A2, const Matrix& U1, const Matrix& U2,
                           const EvalSplit& split, const ScoreOptions& options,
                           const std::string& class_id) {
  if (A1.rows() != A2.rows() || A1.rows() != U1.rows() || A1.rows() != U2.rows()) {
    throw Error(ErrorCode::kDimensionMismatch,
                "score_concepts: activations and coefficients must share the patch set");
  }
  const Matrix A1_train = take_rows(A1, split.train), A2_train = take_rows(A2, split.train);
  const Matrix U1_train = take_rows(U1, split.train), U2_train = take_rows(U2, split.train);
  const Matrix A1_eval = take_rows(A1, split.eval), A2_eval = take_rows(A2, split.eval);

  const auto fit_predict = [&](const Matrix& src_train, const Matrix& tgt_train,
                               const Matrix& src_eval, Direction direction) {
    RegressorOptions opts = options.regressor;
    opts.direction = direction;
    return predict_coefficients(fit_concept_regressor(src_train, tgt_train, opts), src_eval);
  };

  ScoreResult out;
  out.U1_eval = take_rows(U1, split.eval);
  out.U2_eval = take_rows(U2, split.eval);
  out.pred_2to1 = fit_predict(A2_train, U1_train, A2_eval, Direction::k2to1);
  out.pred_1to1 = fit_predict(A1_train, U1_train, A1_eval, Direction::k1to1);
  out.pred_1to2 = fit_predict(A1_train, U2_train, A1_eval, Direction::k1to2);
  out.pred_2to2 = fit_predict(A2_train, U2_train, A2_eval, Direction::k2to2);

  const auto emit = [&](int model, Direction cross, const Matrix& truth, const Matrix& cross_pred,
                        const Matrix& self_pred) {
    for (Index c = 0; c < truth.cols(); ++c) {
      const Vector t = truth.col(c), xp = cross_pred.col(c), sp = self_pred.col(c);
      const Correlation cp = pearson(t, xp), cs = spearman(t, xp);
      const Correlation sp_p = pearson(t, sp), sp_s = spearman(t, sp);
      SimilarityRecord rec;
      rec.class_id = class_id;
      rec.concept_index = static_cast<int>(c);
      rec.model = model;
      rec.direction = cross;
      rec.cmcs_pearson = cp.r;
      rec.cmcs_spearman = cs.r;
      rec.smcs_pearson = sp_p.r;
      rec.smcs_spearman = sp_s.r;
      rec.delta_pearson = rec.smcs_pearson - rec.cmcs_pearson;
      rec.degenerate = cp.degenerate || cs.degenerate || sp_p.degenerate || sp_s.degenerate;
      out.records.push_back(rec);
    }
  };
  emit(1, Direction::k2to1, out.U1_eval, out.pred_2to1, out.pred_1to1);
  emit(2, Direction::k1to2, out.U2_eval, out.pred_1to2, out.pred_2to2);
  return out;
}

}  // namespace consim
