// Acceptance suite: one PASS/FAIL line per criterion, each with its measured
// value, tolerance and wall-clock budget. Exit status is nonzero if any
// criterion fails.

#include <nlohmann/json.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "consim/consim.hpp"

using namespace consim;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Verdict {
  bool ok = true;
  std::string detail;
};

int g_failures = 0;

void criterion(const char* name, double budget_s, const std::function<Verdict()>& body) {
  const auto t0 = std::chrono::steady_clock::now();
  Verdict v;
  try {
    v = body();
  } catch (const std::exception& e) {
    v = {false, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const bool in_time = secs < budget_s;
  const bool pass = v.ok && in_time;
  if (!pass) ++g_failures;
  std::printf("%s  %-28s %s; %.2fs (budget %.0fs%s)\n", pass ? "PASS" : "FAIL", name, v.detail.c_str(),
              secs, budget_s, in_time ? "" : ", exceeded");
  std::fflush(stdout);
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

Matrix uniform(Index rows, Index cols, std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  return Matrix::NullaryExpr(rows, cols, [&] { return u(rng); });
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("consim_acceptance_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

json load_json(const fs::path& p) {
  std::ifstream in(p);
  return json::parse(in);
}

// Runs synth -> extract -> compare -> layerwise -> report into `out`.
PipelineConfig full_pipeline(const fs::path& out, const SyntheticSpec& spec, int jobs) {
  PipelineConfig c;
  c.out = out.string();
  c.synth = spec;
  c.jobs = jobs;
  c.model1 = {(out / "synth/model1.npz").string(), (out / "synth/model1.json").string()};
  c.model2 = {(out / "synth/model2.npz").string(), (out / "synth/model2.json").string()};
  cmd_synth(c);
  cmd_extract(c);
  cmd_compare(c);
  cmd_layerwise(c);
  cmd_report(c);
  return c;
}

// ---------------------------------------------------------------------------

Verdict npy_round_trip() {
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<int> dim(0, 40);
  std::uniform_int_distribution<std::uint64_t> bits;
  const fs::path dir = scratch("npy");
  int identical = 0;
  for (int i = 0; i < 100; ++i) {
    // Arbitrary bit patterns cover subnormals, infinities and NaN payloads.
    Matrix m(dim(rng), dim(rng));
    for (Index j = 0; j < m.size(); ++j) {
      const std::uint64_t b = bits(rng);
      std::memcpy(m.data() + j, &b, 8);
    }
    const fs::path p = dir / "m.npy";
    write_npy_file(p.string(), m);
    const Matrix back = read_npy_file(p.string());
    if (back.rows() == m.rows() && back.cols() == m.cols() &&
        std::memcmp(back.data(), m.data(), sizeof(double) * static_cast<std::size_t>(m.size())) == 0) {
      ++identical;
    }
  }
  fs::remove_all(dir);
  return {identical == 100, std::to_string(identical) + "/100 bit-identical"};
}

Verdict nnmf_planted() {
  double worst = 0.0;
  int max_iter_used = 0;
  int monotone_violations = 0;
  for (int i = 0; i < 20; ++i) {
    std::mt19937_64 rng(100 + i);
    const Matrix A = uniform(60, 5, rng, 0, 1) * uniform(5, 40, rng, 0, 1);
    FactorOptions opt;
    opt.seed = static_cast<std::uint64_t>(i);
    const ConceptDecomposition d = nnmf(A, 5, opt);
    worst = std::max(worst, d.recon_error / A.norm());
    max_iter_used = std::max(max_iter_used, d.iterations);
    for (std::size_t t = 1; t < d.objective.size(); ++t) {
      // Only floating-point rounding may separate consecutive values.
      if (d.objective[t] > d.objective[t - 1] * (1.0 + 1e-12)) ++monotone_violations;
    }
  }
  return {worst <= 1e-2 && max_iter_used <= 500 && monotone_violations == 0,
          "worst rel err " + num(worst) + " <= 1e-2, iterations <= " + std::to_string(max_iter_used) +
              ", monotone violations " + std::to_string(monotone_violations)};
}

Verdict nnls_kkt() {
  std::mt19937_64 rng(7);
  const int k = 10, d = 30;
  const Matrix W = uniform(k, d, rng, -1, 1);
  const Matrix A = uniform(1000, d, rng, -1, 1) + uniform(1000, k, rng, 0, 1) * W;
  const Matrix G = W * W.transpose();
  const double lipschitz = G.operatorNorm();
  double kkt = 0.0, gap = 0.0;
  for (Index r = 0; r < A.rows(); ++r) {
    const Vector b = W * A.row(r).transpose();
    const Vector u = nnls_active_set(G, b);
    const Vector grad = G * u - b;
    for (Index j = 0; j < k; ++j) {
      kkt = std::max({kkt, -u(j), -grad(j), std::abs(u(j) * grad(j))});
    }
    // Projected-gradient oracle on the same quadratic.
    Vector pg = Vector::Zero(k);
    for (int it = 0; it < 3000; ++it) pg = (pg - (G * pg - b) / lipschitz).cwiseMax(0.0);
    const auto f = [&](const Vector& x) { return x.dot(G * x) - 2.0 * b.dot(x); };
    gap = std::max(gap, f(u) - f(pg));
  }
  return {kkt <= 1e-8 && gap <= 1e-10,
          "max KKT residual " + num(kkt) + " <= 1e-8, objective excess over oracle " + num(gap) + " <= 1e-10"};
}

Verdict lasso_checks() {
  double ols_err = 0.0, subgrad = 0.0;
  int zero_failures = 0, trend_failures = 0;
  // The default stop (max |dw| < 1e-6) bounds the step, not the optimality
  // gap, so optimality is checked at a solver tolerance well below 1e-6.
  LassoOptions tight;
  tight.tol = 1e-9;
  for (int i = 0; i < 50; ++i) {
    std::mt19937_64 rng(500 + i);
    const Matrix X = standardize(uniform(100, 12, rng, -1, 1)).values;
    Vector truth = Vector::Zero(12);
    for (Index j = 0; j < 4; ++j) truth(j) = 1.0 - 0.4 * static_cast<double>(j);
    std::normal_distribution<double> noise(0.0, 0.5);
    Vector y = X * truth;
    for (Index r = 0; r < y.size(); ++r) y(r) += noise(rng);

    const Vector ols = (X.transpose() * X).ldlt().solve(X.transpose() * y);
    ols_err = std::max(ols_err, (lasso_cd(X, y, 0.0, tight).weights - ols).cwiseAbs().maxCoeff());

    const double lmax = lasso_lambda_max(X, y);
    if (!lasso_cd(X, y, lmax).weights.isZero(0.0) || !lasso_cd(X, y, 1.5 * lmax).weights.isZero(0.0)) {
      ++zero_failures;
    }

    const double lambda = 0.1;
    const Vector w = lasso_cd(X, y, lambda, tight).weights;
    const Vector g = (2.0 / 100.0) * X.transpose() * (X * w - y);
    for (Index j = 0; j < w.size(); ++j) {
      subgrad = std::max(subgrad, w(j) != 0.0 ? std::abs(g(j) + lambda * (w(j) > 0 ? 1.0 : -1.0))
                                              : std::max(0.0, std::abs(g(j)) - lambda));
    }

    Index previous = w.size() + 1;
    for (double l : {0.01, 0.1, 0.5}) {
      const Index nnz = (lasso_cd(X, y, l, tight).weights.array() != 0.0).count();
      if (nnz > previous) ++trend_failures;
      previous = nnz;
    }
  }
  return {ols_err <= 1e-6 && zero_failures == 0 && subgrad <= 1e-6 && trend_failures == 0,
          "lambda=0 vs normal eqs " + num(ols_err) + " <= 1e-6, zero-at-lambda_max failures " +
              std::to_string(zero_failures) + ", subgradient " + num(subgrad) +
              " <= 1e-6, nnz trend violations " + std::to_string(trend_failures)};
}

Verdict cig_checks() {
  double analytic = 0.0, completeness = 0.0, drift = 0.0;
  for (int i = 0; i < 10; ++i) {
    std::mt19937_64 rng(900 + i);
    const Matrix U = uniform(20, 10, rng, 0, 1);
    const Matrix W = uniform(10, 32, rng, 0, 0.3);
    LinearHead head;
    head.weights = uniform(32, 5, rng, -1, 1);
    head.bias = uniform(1, 5, rng, -0.5, 0.5);
    const Index target = i % 5;

    CigOptions logit;
    logit.target = AttributionTarget::kLogit;
    analytic = std::max(analytic, (concept_attributions(U, W, head, target, logit) -
                                   analytic_cig_linear(U, W, head, target))
                                      .cwiseAbs()
                                      .maxCoeff());

    // Completeness on a small instance: 6 rows, k = 3, d = 6, 4 classes.
    const Matrix Us = uniform(6, 3, rng, 0, 1);
    const Matrix Ws = uniform(3, 6, rng, 0, 1);
    LinearHead small;
    small.weights = uniform(6, 4, rng, -1, 1);
    small.bias = uniform(1, 4, rng, -0.5, 0.5);
    const Index ts = i % 4;
    CigOptions fine;
    fine.steps = 300;
    const Matrix phi = concept_attributions(Us, Ws, small, ts, fine);
    const auto prob = [&](const RowVector& u) {
      const RowVector z = concept_logits(u, Ws, small);
      const RowVector e = (z.array() - z.maxCoeff()).exp();
      return e(ts) / e.sum();
    };
    const double p0 = prob(RowVector::Zero(3));
    for (Index r = 0; r < Us.rows(); ++r) {
      completeness = std::max(completeness, std::abs(phi.row(r).sum() - (prob(Us.row(r)) - p0)));
    }

    CigOptions s30, s3000;
    s3000.steps = 3000;
    drift = std::max(drift, (concept_attributions(U, W, head, target, s30) -
                             concept_attributions(U, W, head, target, s3000))
                                .cwiseAbs()
                                .maxCoeff());
  }
  return {analytic <= 1e-12 && completeness <= 1e-6 && drift <= 1e-3,
          "logit vs analytic " + num(analytic) + " <= 1e-12, completeness@300 " + num(completeness) +
              " <= 1e-6, 30 vs 3000 steps " + num(drift) + " <= 1e-3"};
}

Verdict replacement_identity() {
  const SyntheticPair pair = generate_planted_pair(SyntheticSpec{});
  const Matrix& A = pair.model1.at("layer1", "c0").data;
  const ConceptDecomposition d = nnmf(A, 10);
  const Matrix U = nnls_refit(A, d.W);
  std::vector<std::string> ids;
  for (const auto& e : pair.model1.manifest.entries) ids.push_back(e.image_id);
  const EvalSplit split = split_by_image(ids, 0.3, 0);
  RegressorOptions ro;
  ro.direction = Direction::k1to1;
  const ConceptRegressor reg = fit_concept_regressor(take_rows(A, split.train), take_rows(U, split.train), ro);
  const Matrix U_eval = take_rows(U, split.eval);
  const Matrix self = predict_coefficients(reg, take_rows(A, split.eval));

  int identity_failures = 0;
  for (const auto& o : replacement_test({U_eval, self, self, d.W, *pair.model1.head})) {
    if (o.delta_l2 != 0.0 || o.delta_kl != 0.0 || o.match_accuracy != 1.0) ++identity_failures;
  }
  // Rank one: the reconstructions differ by (u_self - u_cross) W_i.
  const Matrix cross = self.array() + 0.37;
  double closed = 0.0;
  for (const auto& o : replacement_test({U_eval, self, cross, d.W, *pair.model1.head})) {
    const double expected = 0.37 * d.W.row(o.concept_index).norm();
    closed = std::max(closed, std::abs(o.delta_l2 - expected));
  }
  return {identity_failures == 0 && closed <= 1e-10,
          "self-replacement non-identity concepts " + std::to_string(identity_failures) +
              ", rank-1 delta_l2 error " + num(closed) + " <= 1e-10"};
}

// Basis row of each concept, unit-normalized, for matching across runs.
Matrix unit_rows(const Matrix& W) { return W.rowwise().normalized(); }

Verdict toy_concept() {
  const fs::path out = scratch("toy");
  const SyntheticSpec spec;
  const PipelineConfig c = full_pipeline(out, spec, 1);
  const json results = load_json(out / "compare/results.json");
  const auto W = read_npz((out / "extract/m1/layer1/c0/decomposition.npz").string()).at("W");
  const SyntheticPair truth = generate_planted_pair(spec);

  // The planted concept is the one whose basis row aligns with the plant.
  const Vector align = unit_rows(W) * truth.planted_direction.transpose();
  Index planted = 0;
  align.maxCoeff(&planted);

  std::map<int, double> cmcs, delta_kl;
  for (const auto& r : results["records"]) {
    if (r["model"] == 1) cmcs[r["concept_index"].get<int>()] = r["cmcs_pearson"].get<double>();
  }
  for (const auto& o : results["replacement"]) {
    if (o["model"] == 1) delta_kl[o["concept_index"].get<int>()] = o["delta_kl"].get<double>();
  }
  int low = 0;
  double min_other = 1.0;
  for (const auto& [i, v] : cmcs) {
    if (v < 0.2) ++low;
    if (i != planted) min_other = std::min(min_other, v);
  }
  bool kl_max = true;
  for (const auto& [i, v] : delta_kl) {
    if (i != planted && v >= delta_kl.at(static_cast<int>(planted))) kl_max = false;
  }

  // Specificity: the same data without the plant; match concepts by basis.
  SyntheticSpec control_spec = spec;
  control_spec.plant_strength = 0.0;
  const fs::path control_out = scratch("toy_control");
  full_pipeline(control_out, control_spec, 1);
  const json control = load_json(control_out / "compare/results.json");
  const auto Wc = read_npz((control_out / "extract/m1/layer1/c0/decomposition.npz").string()).at("W");
  std::map<int, double> control_cmcs;
  for (const auto& r : control["records"]) {
    if (r["model"] == 1) control_cmcs[r["concept_index"].get<int>()] = r["cmcs_pearson"].get<double>();
  }
  const Matrix match = unit_rows(W) * unit_rows(Wc).transpose();
  double max_shift = 0.0;
  for (Index i = 0; i < W.rows(); ++i) {
    if (i == planted) continue;
    Index j = 0;
    match.row(i).maxCoeff(&j);
    max_shift = std::max(max_shift, std::abs(cmcs.at(static_cast<int>(i)) - control_cmcs.at(static_cast<int>(j))));
  }
  fs::remove_all(out);
  fs::remove_all(control_out);

  const bool ok = low == 1 && cmcs.at(static_cast<int>(planted)) < 0.2 && min_other >= 0.8 && kl_max &&
                  max_shift < 0.1;
  return {ok, "concepts with nc->ps CMCS < 0.2: " + std::to_string(low) + " (planted #" +
                  std::to_string(planted) + ", " + num(cmcs.at(static_cast<int>(planted))) +
                  "), min other CMCS " + num(min_other) + " >= 0.8, planted has max delta_kl: " +
                  (kl_max ? "yes" : "no") + ", max shift vs control " + num(max_shift) + " < 0.1"};
}

Verdict self_comparison() {
  const fs::path out = scratch("self");
  PipelineConfig c;
  c.out = out.string();
  cmd_synth(c);
  c.model1 = {(out / "synth/model1.npz").string(), (out / "synth/model1.json").string()};
  c.model2 = c.model1;
  cmd_extract(c);
  cmd_compare(c);
  double worst_delta = 0.0, worst_gap = 0.0;
  for (const auto& r : load_json(out / "compare/results.json")["records"]) {
    worst_delta = std::max(worst_delta, std::abs(r["delta_pearson"].get<double>()));
    worst_gap = std::max(worst_gap, std::abs(r["cmcs_pearson"].get<double>() - r["smcs_pearson"].get<double>()));
  }
  const Matrix U = read_npz((out / "compare/classes/c0/arrays.npz").string()).at("U1_eval");
  const double m = mmcs({correlation_matrix(U, U, CorrelationKind::kPearson).R}).mmcs;
  fs::remove_all(out);
  return {worst_delta <= 1e-6 && worst_gap <= 1e-6 && std::abs(m - 1.0) <= 1e-12,
          "max |CMCS - SMCS| " + num(worst_gap) + ", max |dPearson| " + num(worst_delta) +
              " <= 1e-6, MMCS(U, U) - 1 = " + num(m - 1.0)};
}

Verdict lower_bound_trend() {
  std::vector<double> gaps;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    SyntheticSpec spec;
    spec.seed = seed;
    const SyntheticPair pair = generate_linear_pair(spec);
    const SharedRows rows = shared_rows(pair.model1, "layer1", pair.model2, "layer1", "c0");
    FactorOptions fo;
    fo.seed = seed;
    const Matrix U1 = nnls_refit(rows.A1, nnmf(rows.A1, 10, fo).W);
    const Matrix U2 = nnls_refit(rows.A2, nnmf(rows.A2, 10, fo).W);
    std::vector<std::string> ids;
    for (const auto& e : rows.manifest.entries) ids.push_back(e.image_id);
    const EvalSplit split = split_by_image(ids, 0.3, seed);
    const ScoreResult scored = score_concepts(rows.A1, rows.A2, U1, U2, split, {}, "c0");
    // Plain max-correlation against the other model's concepts, same rows.
    const Vector mcs1 =
        mcs(correlation_matrix(scored.U1_eval, scored.U2_eval, CorrelationKind::kPearson).R, McsAxis::kRows);
    const Vector mcs2 =
        mcs(correlation_matrix(scored.U1_eval, scored.U2_eval, CorrelationKind::kPearson).R, McsAxis::kColumns);
    double sum = 0.0;
    for (const auto& r : scored.records) {
      const double base = r.model == 1 ? mcs1(r.concept_index) : mcs2(r.concept_index);
      sum += r.cmcs_pearson - base;
    }
    gaps.push_back(sum / static_cast<double>(scored.records.size()));
  }
  double mean = 0.0, lowest = gaps.front();
  for (double g : gaps) {
    mean += g / static_cast<double>(gaps.size());
    lowest = std::min(lowest, g);
  }
  return {mean >= 0.0, "mean(CMCS - MCS) over 10 bundles " + num(mean) + " >= 0 (lowest bundle " + num(lowest) + ")"};
}

// Every regular file under the stage directories, relative path -> bytes.
std::map<std::string, Bytes> result_files(const fs::path& out) {
  std::map<std::string, Bytes> files;
  for (const char* stage : {"synth", "extract", "compare", "layerwise", "report"}) {
    for (const auto& e : fs::recursive_directory_iterator(out / stage)) {
      if (e.is_regular_file()) files[fs::relative(e.path(), out).string()] = read_file(e.path().string());
    }
  }
  return files;
}

Verdict determinism() {
  SyntheticSpec spec;
  spec.n_classes = 3;
  spec.n_layers = 2;
  spec.n_images = 40;
  const fs::path a = scratch("det_a"), b = scratch("det_b"), c = scratch("det_c");
  full_pipeline(a, spec, 1);
  full_pipeline(b, spec, 1);
  full_pipeline(c, spec, 8);
  const auto fa = result_files(a), fb = result_files(b), fc = result_files(c);
  std::size_t differing = 0;
  for (const auto& [name, bytes] : fa) {
    if (!fb.count(name) || fb.at(name) != bytes) ++differing;
    if (!fc.count(name) || fc.at(name) != bytes) ++differing;
  }
  const bool same_sets = fa.size() == fb.size() && fa.size() == fc.size();
  for (const auto& p : {a, b, c}) fs::remove_all(p);
  return {same_sets && differing == 0 && !fa.empty(),
          std::to_string(fa.size()) + " result files compared across jobs=1, jobs=1, jobs=8; " +
              std::to_string(differing) + " differ"};
}

}  // namespace

int main() {
  criterion("npy_round_trip", 1, npy_round_trip);
  criterion("nnmf_planted_rank", 10, nnmf_planted);
  criterion("nnls_kkt_and_oracle", 5, nnls_kkt);
  criterion("lasso_optimality", 10, lasso_checks);
  criterion("cig_oracles", 5, cig_checks);
  criterion("replacement_identity", 5, replacement_identity);
  criterion("toy_concept_analogue", 60, toy_concept);
  criterion("self_comparison", 30, self_comparison);
  criterion("lower_bound_trend", 60, lower_bound_trend);
  criterion("end_to_end_determinism", 120, determinism);
  std::printf("%d criteria failed\n", g_failures);
  return g_failures == 0 ? 0 : 1;
}
