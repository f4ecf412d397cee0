#include "consim/pipeline.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "consim/bundle.hpp"
#include "consim/error.hpp"
#include "consim/explain.hpp"
#include "consim/layerwise.hpp"
#include "consim/parallel.hpp"
#include "consim/similarity.hpp"
#include "consim/zip.hpp"

namespace consim {

namespace fs = std::filesystem;
using nlohmann::json;

std::string sha256_hex(std::span<const std::uint8_t> bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw Error(ErrorCode::kIo, "sha256 failed");
  }
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[digest[i] >> 4];
    out += hex[digest[i] & 15];
  }
  return out;
}

std::string sha256_hex(const std::string& text) {
  return sha256_hex(std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::vector<std::size_t> select_above_percentile(const std::vector<double>& values,
                                                 double percentile) {
  if (percentile < 0.0 || percentile >= 100.0) {
    throw Error(ErrorCode::kInvalidArgument, "percentile must lie in [0, 100)");
  }
  std::vector<std::size_t> order(values.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return values[a] > values[b]; });
  // Round away float noise in (1 - p/100) * N before taking the ceiling.
  const double raw = (1.0 - percentile / 100.0) * static_cast<double>(values.size());
  const auto keep = static_cast<std::size_t>(std::ceil(raw - 1e-9));
  order.resize(std::min(keep, order.size()));
  return order;
}

namespace {

// ---- small helpers -------------------------------------------------------

std::string path_component(const std::string& name) {
  std::string out;
  for (const char ch : name) {
    const bool ok = std::isalnum(static_cast<unsigned char>(ch)) || ch == '-' || ch == '_' || ch == '.';
    out += ok ? ch : '_';
  }
  if (out.empty() || out == "." || out == "..") out = "_" + out;
  return out;
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::kMalformedFile, path.string() + ": " + e.what());
  }
}

std::optional<json> read_json_if_exists(const fs::path& path) {
  if (!fs::exists(path)) return std::nullopt;
  try {
    return read_json(path);
  } catch (const Error&) {
    return std::nullopt;  // a damaged cache entry is just a miss
  }
}

void write_json(const fs::path& path, const json& doc) {
  write_text_atomic(path.string(), doc.dump(1) + "\n");
}

Matrix index_row(const std::vector<Index>& rows) {
  Matrix m(1, static_cast<Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) m(0, static_cast<Index>(i)) = static_cast<double>(rows[i]);
  return m;
}

// ---- loaded inputs -------------------------------------------------------

struct LoadedModel {
  Bundle bundle;
  std::string input_hash;  // content of bundle + manifest files
};

LoadedModel load_model(const ModelInput& input, int which) {
  if (input.bundle.empty() || input.manifest.empty()) {
    throw Error(ErrorCode::kInvalidArgument,
                "config: model" + std::to_string(which) + " needs both bundle and manifest paths");
  }
  LoadedModel m;
  m.bundle = load_bundle(input.bundle, input.manifest);
  const std::string combined = sha256_hex(read_file(input.bundle)) + sha256_hex(read_file(input.manifest));
  m.input_hash = sha256_hex(combined);
  return m;
}

struct Workspace {
  const PipelineConfig& config;
  LoadedModel m1;
  LoadedModel m2;
  std::vector<std::string> layers1;
  std::vector<std::string> layers2;
  std::vector<std::string> classes;
  std::string compare_layer1;
  std::string compare_layer2;

  const LoadedModel& model(int which) const { return which == 1 ? m1 : m2; }
  const std::vector<std::string>& layers(int which) const { return which == 1 ? layers1 : layers2; }
};

std::vector<std::string> resolve_layers(const std::vector<std::string>& wanted, const Bundle& bundle,
                                        int which) {
  const std::vector<std::string> available = bundle.layers();
  if (wanted.empty()) return available;
  for (const auto& l : wanted) {
    if (std::find(available.begin(), available.end(), l) == available.end()) {
      throw Error(ErrorCode::kMissingMember,
                  "model" + std::to_string(which) + " has no layer \"" + l + "\"");
    }
  }
  return wanted;
}

// The comparison layer defaults to the last selected layer whose width matches
// the head, so the replacement test can run; otherwise the last selected layer.
std::string resolve_compare_layer(const std::string& wanted, const std::vector<std::string>& layers,
                                  const Bundle& bundle, int which) {
  if (!wanted.empty()) {
    if (std::find(layers.begin(), layers.end(), wanted) == layers.end()) {
      throw Error(ErrorCode::kInvalidArgument, "compare_layer" + std::to_string(which) + " \"" +
                                                   wanted + "\" is not among the selected layers");
    }
    return wanted;
  }
  if (bundle.head) {
    for (auto it = layers.rbegin(); it != layers.rend(); ++it) {
      const auto cls = bundle.classes().front();
      if (bundle.at(*it, cls).data.cols() == bundle.head->input_dim()) return *it;
    }
  }
  return layers.back();
}

Workspace open_workspace(const PipelineConfig& config) {
  Workspace ws{config, load_model(config.model1, 1), load_model(config.model2, 2), {}, {}, {}, {}, {}};
  ws.layers1 = resolve_layers(config.layers1, ws.m1.bundle, 1);
  ws.layers2 = resolve_layers(config.layers2, ws.m2.bundle, 2);
  if (config.classes.empty()) {
    const auto c1 = ws.m1.bundle.classes();
    const auto c2 = ws.m2.bundle.classes();
    std::set_intersection(c1.begin(), c1.end(), c2.begin(), c2.end(), std::back_inserter(ws.classes));
    if (ws.classes.empty()) throw Error(ErrorCode::kInvalidArgument, "the two bundles share no class");
  } else {
    ws.classes = config.classes;
    std::sort(ws.classes.begin(), ws.classes.end());
    ws.classes.erase(std::unique(ws.classes.begin(), ws.classes.end()), ws.classes.end());
  }
  for (const auto& cls : ws.classes) {
    for (int which : {1, 2}) {
      for (const auto& layer : ws.layers(which)) {
        if (!ws.model(which).bundle.contains(layer, cls)) {
          throw Error(ErrorCode::kMissingMember, "model" + std::to_string(which) + " has no matrix for " +
                                                     layer + "/" + cls);
        }
      }
    }
  }
  ws.compare_layer1 = resolve_compare_layer(config.compare_layer1, ws.layers1, ws.m1.bundle, 1);
  ws.compare_layer2 = resolve_compare_layer(config.compare_layer2, ws.layers2, ws.m2.bundle, 2);
  return ws;
}

// ---- extract -------------------------------------------------------------

struct ExtractItem {
  int model;
  std::string layer;
  std::string class_id;
};

fs::path extract_dir(const PipelineConfig& config, int model, const std::string& layer,
                     const std::string& class_id) {
  return fs::path(config.out) / "extract" / ("m" + std::to_string(model)) / path_component(layer) /
         path_component(class_id);
}

json extract_params(const PipelineConfig& c) {
  return {{"k", c.k}, {"method", c.method}, {"max_iter", c.max_iter}, {"tol", fmt(c.tol)},
          {"seed", c.seed}};
}

std::string extract_key(const Workspace& ws, const ExtractItem& item) {
  const json doc = {{"stage", "extract/1"},
                    {"input", ws.model(item.model).input_hash},
                    {"layer", item.layer},
                    {"class", item.class_id},
                    {"params", extract_params(ws.config)}};
  return sha256_hex(doc.dump());
}

// Proposal rows of one class at one layer, in proposal-manifest order.
Matrix proposal_matrix(const Bundle& bundle, const std::string& layer, const std::string& class_id,
                       bool* label_fallback) {
  const ProposalSelection sel = select_proposals(bundle.manifest, class_id);
  if (sel.manifest.size() == 0) {
    throw Error(ErrorCode::kInvalidArgument, "class " + class_id + " has no concept proposals");
  }
  if (label_fallback) *label_fallback = sel.used_label_fallback;
  return gather_rows(bundle.at(layer, class_id).data, bundle.manifest,
                     bundle.manifest.rows_of_class(class_id), sel.manifest);
}

std::vector<ExtractItem> extract_items(const Workspace& ws, bool all_layers) {
  std::vector<ExtractItem> items;
  for (int which : {1, 2}) {
    const std::vector<std::string> layers =
        all_layers ? ws.layers(which)
                   : std::vector<std::string>{which == 1 ? ws.compare_layer1 : ws.compare_layer2};
    for (const auto& layer : layers) {
      for (const auto& cls : ws.classes) items.push_back({which, layer, cls});
    }
  }
  return items;
}

// Loads a cached decomposition; throws kMissingStage if it is absent or stale.
ConceptDecomposition load_decomposition(const Workspace& ws, const ExtractItem& item) {
  const fs::path dir = extract_dir(ws.config, item.model, item.layer, item.class_id);
  const auto meta = read_json_if_exists(dir / "decomposition.json");
  const std::string key = extract_key(ws, item);
  if (!meta || meta->value("cache_key", "") != key || !fs::exists(dir / "decomposition.npz")) {
    throw Error(ErrorCode::kMissingStage, "no up-to-date decomposition for model" +
                                              std::to_string(item.model) + " " + item.layer + "/" +
                                              item.class_id + "; run extract first");
  }
  const auto arrays = read_npz((dir / "decomposition.npz").string());
  ConceptDecomposition d;
  d.U = arrays.at("U");
  d.W = arrays.at("W");
  d.method = factor_method_from_string(meta->at("method").get<std::string>());
  d.k = meta->at("k").get<int>();
  d.recon_error = meta->at("recon_error").get<double>();
  d.iterations = meta->at("iterations").get<int>();
  d.seed = meta->at("seed").get<std::uint64_t>();
  return d;
}

StageStats run_extract(const Workspace& ws, bool all_layers) {
  const PipelineConfig& c = ws.config;
  const std::vector<ExtractItem> items = extract_items(ws, all_layers);
  std::vector<char> computed(items.size(), 0);
  parallel_for(items.size(), c.jobs, [&](std::size_t i) {
    const ExtractItem& item = items[i];
    const fs::path dir = extract_dir(c, item.model, item.layer, item.class_id);
    const std::string key = extract_key(ws, item);
    if (const auto meta = read_json_if_exists(dir / "decomposition.json");
        meta && meta->value("cache_key", "") == key && fs::exists(dir / "decomposition.npz")) {
      return;
    }
    bool fallback = false;
    const Matrix A = proposal_matrix(ws.model(item.model).bundle, item.layer, item.class_id, &fallback);
    const FactorMethod method =
        c.method == "auto" ? detect_factor_method(A) : factor_method_from_string(c.method);
    FactorOptions options;
    options.max_iter = c.max_iter;
    options.tol = c.tol;
    options.seed = c.seed;
    const ConceptDecomposition d =
        method == FactorMethod::kNnmf ? nnmf(A, c.k, options) : semi_nmf(A, c.k, options);
    fs::create_directories(dir);
    write_npz((dir / "decomposition.npz").string(), {{"U", d.U}, {"W", d.W}});
    // The sidecar goes last: its presence marks the entry complete.
    write_json(dir / "decomposition.json", {{"cache_key", key},
                                            {"model", item.model},
                                            {"layer", item.layer},
                                            {"class_id", item.class_id},
                                            {"method", to_string(d.method)},
                                            {"k", d.k},
                                            {"seed", d.seed},
                                            {"recon_error", d.recon_error},
                                            {"iterations", d.iterations},
                                            {"rows", A.rows()},
                                            {"label_fallback", fallback}});
    computed[i] = 1;
  });
  StageStats stats;
  for (char x : computed) (x ? stats.computed : stats.cached) += 1;
  return stats;
}

// ---- compare -------------------------------------------------------------

json compare_params(const PipelineConfig& c) {
  return {{"lambda", fmt(c.lambda)},         {"folds", c.folds},
          {"cig_steps", c.cig_steps},         {"seed", c.seed},
          {"lasso_max_iter", c.lasso_max_iter}, {"lasso_tol", fmt(c.lasso_tol)},
          {"eval_fraction", fmt(c.eval_fraction)}, {"kl_direction", c.kl_direction},
          {"importance_aggregation", c.importance_aggregation}};
}

std::string compare_key(const Workspace& ws) {
  json extract_keys = json::array();
  for (const auto& item : extract_items(ws, false)) extract_keys.push_back(extract_key(ws, item));
  const json doc = {{"stage", "compare/1"},
                    {"extract", extract_keys},
                    {"layer1", ws.compare_layer1},
                    {"layer2", ws.compare_layer2},
                    {"classes", ws.classes},
                    {"params", compare_params(ws.config)}};
  return sha256_hex(doc.dump());
}

struct ClassResult {
  std::vector<SimilarityRecord> records;
  std::vector<std::pair<int, ReplacementOutcome>> outcomes;  // (model, outcome)
  std::map<int, Vector> importance;
  std::map<std::string, Matrix> arrays;
  PatchManifest eval_manifest;
  std::size_t shared_rows = 0;
};

ClassResult compare_class(const Workspace& ws, const std::string& cls) {
  const PipelineConfig& c = ws.config;
  const Bundle& b1 = ws.m1.bundle;
  const Bundle& b2 = ws.m2.bundle;
  const ConceptDecomposition d1 = load_decomposition(ws, {1, ws.compare_layer1, cls});
  const ConceptDecomposition d2 = load_decomposition(ws, {2, ws.compare_layer2, cls});

  const SharedRows rows = shared_rows(b1, ws.compare_layer1, b2, ws.compare_layer2, cls);
  const Matrix U1 = nnls_refit(rows.A1, d1.W);
  const Matrix U2 = nnls_refit(rows.A2, d2.W);

  std::vector<std::string> image_ids;
  for (const auto& e : rows.manifest.entries) image_ids.push_back(e.image_id);
  const EvalSplit split = split_by_image(image_ids, c.eval_fraction, c.seed);

  ScoreOptions options;
  options.regressor.lambda = c.lambda;
  options.regressor.folds = c.folds;
  options.regressor.seed = c.seed;
  options.regressor.lasso.max_iter = c.lasso_max_iter;
  options.regressor.lasso.tol = c.lasso_tol;
  ScoreResult scored = score_concepts(rows.A1, rows.A2, U1, U2, split, options, cls);

  ClassResult out;
  out.shared_rows = rows.manifest.size();
  for (auto& r : scored.records) r.label_fallback = rows.label_fallback;

  const KlDirection kl = kl_direction_from_string(c.kl_direction);
  CigOptions cig;
  cig.steps = c.cig_steps;
  cig.aggregation = aggregation_from_string(c.importance_aggregation);

  struct Side {
    int model;
    const Bundle& bundle;
    const ConceptDecomposition& d;
    const Matrix& U_all;
    const Matrix& U_eval;
    const Matrix& self_pred;
    const Matrix& cross_pred;
  };
  const Side sides[] = {
      {1, b1, d1, U1, scored.U1_eval, scored.pred_1to1, scored.pred_2to1},
      {2, b2, d2, U2, scored.U2_eval, scored.pred_2to2, scored.pred_1to2},
  };
  for (const Side& s : sides) {
    if (!s.bundle.head || s.bundle.head->input_dim() != s.d.W.cols()) continue;
    const LinearHead& head = *s.bundle.head;
    const ReplacementInputs in{s.U_eval, s.self_pred, s.cross_pred, s.d.W, head};
    for (auto& o : replacement_test(in, kl, cls)) {
      for (const auto& r : scored.records) {
        if (r.model == s.model && r.concept_index == o.concept_index) o.delta_pearson = r.delta_pearson;
      }
      out.outcomes.emplace_back(s.model, o);
    }
    const Index target = head.class_index(cls);
    if (target >= 0) {
      const Vector imp = concept_integrated_gradients(s.U_all, s.d.W, head, target, cig);
      out.importance[s.model] = imp;
      for (auto& r : scored.records) {
        if (r.model == s.model) r.importance = imp(r.concept_index);
      }
    }
  }
  out.records = std::move(scored.records);

  out.arrays = {{"U1_eval", scored.U1_eval},     {"U2_eval", scored.U2_eval},
                {"pred_1to2", scored.pred_1to2}, {"pred_2to1", scored.pred_2to1},
                {"pred_1to1", scored.pred_1to1}, {"pred_2to2", scored.pred_2to2},
                {"eval_rows", index_row(split.eval)}, {"train_rows", index_row(split.train)}};
  out.eval_manifest = rows.manifest;
  out.eval_manifest.entries.clear();
  for (const Index r : split.eval) {
    out.eval_manifest.entries.push_back(rows.manifest.entries[static_cast<std::size_t>(r)]);
  }
  return out;
}

json record_to_json(const SimilarityRecord& r) {
  json doc = {{"class_id", r.class_id},
              {"model", r.model},
              {"concept_index", r.concept_index},
              {"direction", to_string(r.direction)},
              {"cmcs_pearson", r.cmcs_pearson},
              {"cmcs_spearman", r.cmcs_spearman},
              {"smcs_pearson", r.smcs_pearson},
              {"smcs_spearman", r.smcs_spearman},
              {"delta_pearson", r.delta_pearson},
              {"degenerate", r.degenerate},
              {"label_fallback", r.label_fallback}};
  doc["importance"] = r.importance ? json(*r.importance) : json(nullptr);
  return doc;
}

SimilarityRecord record_from_json(const json& doc) {
  SimilarityRecord r;
  r.class_id = doc.at("class_id").get<std::string>();
  r.model = doc.at("model").get<int>();
  r.concept_index = doc.at("concept_index").get<int>();
  r.direction = direction_from_string(doc.at("direction").get<std::string>());
  r.cmcs_pearson = doc.at("cmcs_pearson").get<double>();
  r.cmcs_spearman = doc.at("cmcs_spearman").get<double>();
  r.smcs_pearson = doc.at("smcs_pearson").get<double>();
  r.smcs_spearman = doc.at("smcs_spearman").get<double>();
  r.delta_pearson = doc.at("delta_pearson").get<double>();
  r.degenerate = doc.at("degenerate").get<bool>();
  r.label_fallback = doc.at("label_fallback").get<bool>();
  if (!doc.at("importance").is_null()) r.importance = doc.at("importance").get<double>();
  return r;
}

json outcome_to_json(int model, const ReplacementOutcome& o) {
  return {{"class_id", o.class_id},         {"model", model},
          {"concept_index", o.concept_index}, {"delta_l2", o.delta_l2},
          {"delta_kl", o.delta_kl},         {"match_accuracy", o.match_accuracy},
          {"delta_pearson", o.delta_pearson}};
}

ReplacementOutcome outcome_from_json(const json& doc) {
  ReplacementOutcome o;
  o.class_id = doc.at("class_id").get<std::string>();
  o.concept_index = doc.at("concept_index").get<int>();
  o.delta_l2 = doc.at("delta_l2").get<double>();
  o.delta_kl = doc.at("delta_kl").get<double>();
  o.match_accuracy = doc.at("match_accuracy").get<double>();
  o.delta_pearson = doc.at("delta_pearson").get<double>();
  return o;
}

fs::path compare_dir(const PipelineConfig& c) { return fs::path(c.out) / "compare"; }

StageStats run_compare(const Workspace& ws) {
  const PipelineConfig& c = ws.config;
  const fs::path dir = compare_dir(c);
  const std::string key = compare_key(ws);
  if (const auto meta = read_json_if_exists(dir / "meta.json");
      meta && meta->value("cache_key", "") == key && fs::exists(dir / "results.json")) {
    return {0, 1};
  }

  std::vector<ClassResult> results(ws.classes.size());
  parallel_for(ws.classes.size(), c.jobs,
               [&](std::size_t i) { results[i] = compare_class(ws, ws.classes[i]); });

  fs::create_directories(dir);
  json records = json::array();
  json outcomes = json::array();
  json classes = json::array();
  std::ostringstream summary;
  summary << "class_id,model,concept_index,direction,cmcs_pearson,cmcs_spearman,smcs_pearson,"
             "smcs_spearman,delta_pearson,importance,delta_l2,delta_kl,match_accuracy,degenerate\n";
  std::ostringstream scatter;
  scatter << "class_id,model,concept_index,delta_pearson,delta_kl,delta_l2,match_accuracy,importance\n";

  for (std::size_t i = 0; i < ws.classes.size(); ++i) {
    const std::string& cls = ws.classes[i];
    const ClassResult& r = results[i];
    const fs::path class_dir = dir / "classes" / path_component(cls);
    fs::create_directories(class_dir);
    write_npz((class_dir / "arrays.npz").string(), r.arrays);
    write_manifest((class_dir / "eval_manifest.json").string(), r.eval_manifest);
    classes.push_back({{"class_id", cls},
                       {"directory", "classes/" + path_component(cls)},
                       {"shared_rows", r.shared_rows},
                       {"eval_rows", r.eval_manifest.size()}});

    for (const auto& rec : r.records) {
      records.push_back(record_to_json(rec));
      const ReplacementOutcome* match = nullptr;
      for (const auto& [model, o] : r.outcomes) {
        if (model == rec.model && o.concept_index == rec.concept_index) match = &o;
      }
      summary << cls << ',' << rec.model << ',' << rec.concept_index << ',' << to_string(rec.direction)
              << ',' << fmt(rec.cmcs_pearson) << ',' << fmt(rec.cmcs_spearman) << ','
              << fmt(rec.smcs_pearson) << ',' << fmt(rec.smcs_spearman) << ','
              << fmt(rec.delta_pearson) << ',' << (rec.importance ? fmt(*rec.importance) : "") << ','
              << (match ? fmt(match->delta_l2) : "") << ',' << (match ? fmt(match->delta_kl) : "")
              << ',' << (match ? fmt(match->match_accuracy) : "") << ','
              << (rec.degenerate ? 1 : 0) << '\n';
      if (match) {
        scatter << cls << ',' << rec.model << ',' << rec.concept_index << ','
                << fmt(rec.delta_pearson) << ',' << fmt(match->delta_kl) << ','
                << fmt(match->delta_l2) << ',' << fmt(match->match_accuracy) << ','
                << (rec.importance ? fmt(*rec.importance) : "") << '\n';
      }
    }
    for (const auto& [model, o] : r.outcomes) outcomes.push_back(outcome_to_json(model, o));
  }

  const json doc = {{"schema", "consim.compare/1"},
                    {"layer1", ws.compare_layer1},
                    {"layer2", ws.compare_layer2},
                    {"classes", classes},
                    {"records", records},
                    {"replacement", outcomes}};
  write_json(dir / "results.json", doc);
  write_text_atomic((dir / "summary.csv").string(), summary.str());
  write_text_atomic((dir / "replacement_scatter.csv").string(), scatter.str());
  write_json(dir / "meta.json", {{"cache_key", key}});
  return {1, 0};
}

// ---- layerwise -----------------------------------------------------------

StageStats run_layerwise(const Workspace& ws) {
  const PipelineConfig& c = ws.config;
  const fs::path dir = fs::path(c.out) / "layerwise";
  json extract_keys = json::array();
  const auto items = extract_items(ws, true);
  for (const auto& item : items) extract_keys.push_back(extract_key(ws, item));
  const std::string key = sha256_hex(json({{"stage", "layerwise/1"},
                                           {"extract", extract_keys},
                                           {"layers1", ws.layers1},
                                           {"layers2", ws.layers2},
                                           {"classes", ws.classes}})
                                         .dump());
  if (const auto meta = read_json_if_exists(dir / "meta.json");
      meta && meta->value("cache_key", "") == key && fs::exists(dir / "mmcs_pearson.csv") &&
      fs::exists(dir / "mmcs_spearman.csv")) {
    return {0, 1};
  }

  std::vector<ConceptDecomposition> loaded(items.size());
  parallel_for(items.size(), c.jobs, [&](std::size_t i) { loaded[i] = load_decomposition(ws, items[i]); });
  DecompositionMap map1, map2;
  for (std::size_t i = 0; i < items.size(); ++i) {
    auto& target = items[i].model == 1 ? map1 : map2;
    target[{items[i].layer, items[i].class_id}] = std::move(loaded[i]);
  }
  const LayerwiseModel lm1{ws.m1.bundle, map1};
  const LayerwiseModel lm2{ws.m2.bundle, map2};

  fs::create_directories(dir);
  json summary = {{"layers1", ws.layers1}, {"layers2", ws.layers2}};
  for (const auto& [kind, name] : {std::pair{CorrelationKind::kPearson, "pearson"},
                                   std::pair{CorrelationKind::kSpearman, "spearman"}}) {
    const LayerwiseResult r = layerwise_mmcs(lm1, lm2, ws.layers1, ws.layers2, ws.classes, kind, c.jobs);
    const std::string n = name;
    write_text_atomic((dir / ("mmcs_" + n + ".csv")).string(), layerwise_csv(r, r.mmcs));
    write_text_atomic((dir / ("mmcs1_" + n + ".csv")).string(), layerwise_csv(r, r.mmcs1));
    write_text_atomic((dir / ("mmcs2_" + n + ".csv")).string(), layerwise_csv(r, r.mmcs2));
    json rows = json::array();
    for (Index i = 0; i < r.mmcs.rows(); ++i) {
      json row = json::array();
      for (Index j = 0; j < r.mmcs.cols(); ++j) row.push_back(r.mmcs(i, j));
      rows.push_back(row);
    }
    summary[n] = rows;
  }
  write_json(dir / "mmcs.json", summary);
  write_json(dir / "meta.json", {{"cache_key", key}});
  return {1, 0};
}

// ---- report --------------------------------------------------------------

StageStats run_report(const PipelineConfig& c) {
  const fs::path cdir = compare_dir(c);
  const auto results = read_json_if_exists(cdir / "results.json");
  const auto meta = read_json_if_exists(cdir / "meta.json");
  if (!results || !meta) {
    throw Error(ErrorCode::kMissingStage, "no compare results under " + cdir.string() +
                                              "; run compare first");
  }
  const fs::path dir = fs::path(c.out) / "report";
  const std::string key = sha256_hex(json({{"stage", "report/1"},
                                           {"compare", meta->value("cache_key", "")},
                                           {"top_n", c.top_n},
                                           {"exclude_top", c.exclude_top},
                                           {"kl_percentile", fmt(c.kl_percentile)},
                                           {"max", c.report_max_concepts},
                                           {"image_dir", c.image_dir},
                                           {"grid", c.montage_grid}})
                                         .dump());
  if (const auto m = read_json_if_exists(dir / "meta.json");
      m && m->value("cache_key", "") == key && fs::exists(dir / "index.json")) {
    return {0, 1};
  }

  struct Candidate {
    SimilarityRecord record;
    std::optional<ReplacementOutcome> outcome;
  };
  std::vector<Candidate> candidates;
  for (const auto& doc : results->at("records")) candidates.push_back({record_from_json(doc), {}});
  for (const auto& doc : results->at("replacement")) {
    const ReplacementOutcome o = outcome_from_json(doc);
    const int model = doc.at("model").get<int>();
    for (auto& cand : candidates) {
      if (cand.record.class_id == o.class_id && cand.record.model == model &&
          cand.record.concept_index == o.concept_index) {
        cand.outcome = o;
      }
    }
  }

  // The paper's recipe: keep concepts above a delta-KL percentile, then rank
  // by the similarity gap.
  if (c.kl_percentile > 0.0) {
    std::vector<Candidate> with_kl;
    for (auto& cand : candidates) {
      if (cand.outcome) with_kl.push_back(cand);
    }
    std::vector<double> kl;
    for (const auto& cand : with_kl) kl.push_back(cand.outcome->delta_kl);
    std::vector<std::size_t> keep = select_above_percentile(kl, c.kl_percentile);
    std::sort(keep.begin(), keep.end());
    candidates.clear();
    for (std::size_t i : keep) candidates.push_back(with_kl[i]);
  }
  std::stable_sort(candidates.begin(), candidates.end(), [](const Candidate& a, const Candidate& b) {
    return a.record.delta_pearson > b.record.delta_pearson;
  });
  if (c.report_max_concepts > 0 && candidates.size() > static_cast<std::size_t>(c.report_max_concepts)) {
    candidates.resize(static_cast<std::size_t>(c.report_max_concepts));
  }

  std::map<std::string, std::pair<std::map<std::string, Matrix>, PatchManifest>> per_class;
  for (const auto& entry : results->at("classes")) {
    const fs::path class_dir = cdir / entry.at("directory").get<std::string>();
    per_class[entry.at("class_id").get<std::string>()] = {
        read_npz((class_dir / "arrays.npz").string()),
        read_manifest((class_dir / "eval_manifest.json").string())};
  }

  std::vector<ReportEntry> entries(candidates.size());
  parallel_for(candidates.size(), c.jobs, [&](std::size_t i) {
    const Candidate& cand = candidates[i];
    const auto& [arrays, manifest] = per_class.at(cand.record.class_id);
    const bool first = cand.record.model == 1;
    const Matrix& U_true = arrays.at(first ? "U1_eval" : "U2_eval");
    const Matrix& U_pred = arrays.at(first ? "pred_2to1" : "pred_1to2");
    const Index j = cand.record.concept_index;
    entries[i].explanation =
        explain_concept(cand.record.class_id, cand.record.model, cand.record.concept_index,
                        U_true.col(j), U_pred.col(j), manifest, static_cast<std::size_t>(c.top_n),
                        static_cast<std::size_t>(c.exclude_top));
    entries[i].similarity = cand.record;
    entries[i].outcome = cand.outcome;
  });

  fs::remove_all(dir);
  const std::vector<std::string> paths = emit_report(entries, dir.string());
  if (!c.image_dir.empty()) {
    parallel_for(entries.size(), c.jobs, [&](std::size_t i) {
      const PatchManifest& manifest = per_class.at(entries[i].explanation.class_id).second;
      CollageOptions options;
      options.grid = c.montage_grid;
      options.image_size = manifest.image_size;
      options.patch_size = manifest.patch_size;
      const fs::path collage_dir = dir / "collages" / fs::path(paths[i]).stem();
      emit_collage_bundle(entries[i].explanation, c.image_dir, collage_dir.string(), options,
                          entries[i].similarity);
    });
  }
  write_json(dir / "meta.json", {{"cache_key", key}});
  return {static_cast<int>(entries.size()), 0};
}

}  // namespace

StageStats cmd_extract(const PipelineConfig& config) {
  const Workspace ws = open_workspace(config);
  return run_extract(ws, true);
}

StageStats cmd_compare(const PipelineConfig& config) {
  const Workspace ws = open_workspace(config);
  return run_compare(ws);
}

StageStats cmd_layerwise(const PipelineConfig& config) {
  const Workspace ws = open_workspace(config);
  return run_layerwise(ws);
}

StageStats cmd_report(const PipelineConfig& config) { return run_report(config); }

StageStats cmd_synth(const PipelineConfig& config, bool planted) {
  const SyntheticSpec spec = config.synth.value_or(SyntheticSpec{});
  const SyntheticPair pair = planted ? generate_planted_pair(spec) : generate_linear_pair(spec);
  const fs::path dir = fs::path(config.out) / "synth";
  fs::create_directories(dir);
  save_bundle(pair.model1, (dir / "model1.npz").string(), (dir / "model1.json").string());
  save_bundle(pair.model2, (dir / "model2.npz").string(), (dir / "model2.json").string());
  std::map<std::string, Matrix> truth = {{"latent", pair.latent},
                                         {"mixing1", pair.mixing1},
                                         {"mixing2", pair.mixing2}};
  if (planted) {
    truth["indicator"] = pair.indicator;
    truth["planted_direction"] = pair.planted_direction;
  }
  write_npz((dir / "ground_truth.npz").string(), truth);
  write_json(dir / "spec.json", {{"planted", planted}, {"spec", synthetic_spec_to_json(spec)}});

  // A ready-to-run config next to the outputs; its paths are relative to it.
  PipelineConfig next = config;
  next.model1 = {"synth/model1.npz", "synth/model1.json"};
  next.model2 = {"synth/model2.npz", "synth/model2.json"};
  next.out = ".";
  next.synth = spec;
  write_json(fs::path(config.out) / "config.json", config_to_json(next));
  return {1, 0};
}

}  // namespace consim
