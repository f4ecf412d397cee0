#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <set>

#include "consim/error.hpp"
#include "consim/pipeline.hpp"

namespace consim {

using nlohmann::json;

json config_to_json(const PipelineConfig& c) {
  json doc = {{"model1", {{"bundle", c.model1.bundle}, {"manifest", c.model1.manifest}}},
              {"model2", {{"bundle", c.model2.bundle}, {"manifest", c.model2.manifest}}},
              {"layers1", c.layers1},
              {"layers2", c.layers2},
              {"classes", c.classes},
              {"compare_layer1", c.compare_layer1},
              {"compare_layer2", c.compare_layer2},
              {"k", c.k},
              {"lambda", c.lambda},
              {"folds", c.folds},
              {"cig_steps", c.cig_steps},
              {"top_n", c.top_n},
              {"exclude_top", c.exclude_top},
              {"seed", c.seed},
              {"jobs", c.jobs},
              {"out", c.out},
              {"method", c.method},
              {"max_iter", c.max_iter},
              {"tol", c.tol},
              {"lasso_max_iter", c.lasso_max_iter},
              {"lasso_tol", c.lasso_tol},
              {"eval_fraction", c.eval_fraction},
              {"kl_direction", c.kl_direction},
              {"importance_aggregation", c.importance_aggregation},
              {"kl_percentile", c.kl_percentile},
              {"report_max_concepts", c.report_max_concepts},
              {"image_dir", c.image_dir},
              {"montage_grid", c.montage_grid}};
  doc["synth"] = c.synth ? synthetic_spec_to_json(*c.synth) : json(nullptr);
  return doc;
}

namespace {

template <typename T>
void read_key(const json& doc, const char* key, T& target) {
  const auto it = doc.find(key);
  if (it == doc.end() || it->is_null()) return;
  try {
    target = it->get<T>();
  } catch (const json::exception&) {
    throw Error(ErrorCode::kSchemaViolation, std::string("config: \"") + key + "\" has the wrong type");
  }
}

void read_model(const json& doc, const char* key, ModelInput& model) {
  const auto it = doc.find(key);
  if (it == doc.end() || it->is_null()) return;
  if (!it->is_object()) throw Error(ErrorCode::kSchemaViolation, std::string("config: ") + key + " must be an object");
  for (const auto& [k, _] : it->items()) {
    if (k != "bundle" && k != "manifest") {
      throw Error(ErrorCode::kSchemaViolation, std::string("config: unknown key ") + key + "." + k);
    }
  }
  read_key(*it, "bundle", model.bundle);
  read_key(*it, "manifest", model.manifest);
}

void check(bool ok, const std::string& why) {
  if (!ok) throw Error(ErrorCode::kInvalidArgument, "config: " + why);
}

}  // namespace

PipelineConfig config_from_json(const json& doc) {
  if (!doc.is_object()) throw Error(ErrorCode::kSchemaViolation, "config: document is not an object");
  PipelineConfig c;
  const json known = config_to_json(c);
  for (const auto& [key, _] : doc.items()) {
    if (!known.contains(key)) throw Error(ErrorCode::kSchemaViolation, "config: unknown key \"" + key + "\"");
  }
  read_model(doc, "model1", c.model1);
  read_model(doc, "model2", c.model2);
  read_key(doc, "layers1", c.layers1);
  read_key(doc, "layers2", c.layers2);
  read_key(doc, "classes", c.classes);
  read_key(doc, "compare_layer1", c.compare_layer1);
  read_key(doc, "compare_layer2", c.compare_layer2);
  read_key(doc, "k", c.k);
  read_key(doc, "lambda", c.lambda);
  read_key(doc, "folds", c.folds);
  read_key(doc, "cig_steps", c.cig_steps);
  read_key(doc, "top_n", c.top_n);
  read_key(doc, "exclude_top", c.exclude_top);
  read_key(doc, "seed", c.seed);
  read_key(doc, "jobs", c.jobs);
  read_key(doc, "out", c.out);
  read_key(doc, "method", c.method);
  read_key(doc, "max_iter", c.max_iter);
  read_key(doc, "tol", c.tol);
  read_key(doc, "lasso_max_iter", c.lasso_max_iter);
  read_key(doc, "lasso_tol", c.lasso_tol);
  read_key(doc, "eval_fraction", c.eval_fraction);
  read_key(doc, "kl_direction", c.kl_direction);
  read_key(doc, "importance_aggregation", c.importance_aggregation);
  read_key(doc, "kl_percentile", c.kl_percentile);
  read_key(doc, "report_max_concepts", c.report_max_concepts);
  read_key(doc, "image_dir", c.image_dir);
  read_key(doc, "montage_grid", c.montage_grid);
  if (const auto it = doc.find("synth"); it != doc.end() && !it->is_null()) {
    c.synth = synthetic_spec_from_json(*it);
  }

  check(c.k >= 1, "k must be >= 1");
  check(c.lambda >= 0.0, "lambda must be >= 0");
  check(c.folds >= 1, "folds must be >= 1");
  check(c.cig_steps >= 1, "cig_steps must be >= 1");
  check(c.top_n >= 1 && c.exclude_top >= 0, "top_n must be >= 1 and exclude_top >= 0");
  check(c.jobs >= 1, "jobs must be >= 1");
  check(c.max_iter >= 1 && c.lasso_max_iter >= 1, "iteration budgets must be >= 1");
  check(c.eval_fraction > 0.0 && c.eval_fraction < 1.0, "eval_fraction must lie in (0, 1)");
  check(c.kl_percentile >= 0.0 && c.kl_percentile < 100.0, "kl_percentile must lie in [0, 100)");
  check(c.montage_grid >= 1, "montage_grid must be >= 1");
  check(c.method == "auto" || c.method == "nnmf" || c.method == "semi_nmf",
        "method must be auto, nnmf or semi_nmf");
  kl_direction_from_string(c.kl_direction);
  aggregation_from_string(c.importance_aggregation);
  return c;
}

PipelineConfig read_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot open config " + path);
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::kSchemaViolation, "config: " + path + " is not JSON: " + e.what());
  }
  PipelineConfig c = config_from_json(doc);
  // Relative paths inside a config file are relative to the file.
  const std::filesystem::path base = std::filesystem::path(path).parent_path();
  const auto resolve = [&](std::string& p) {
    if (!p.empty() && std::filesystem::path(p).is_relative()) p = (base / p).lexically_normal().string();
  };
  resolve(c.model1.bundle);
  resolve(c.model1.manifest);
  resolve(c.model2.bundle);
  resolve(c.model2.manifest);
  resolve(c.out);
  resolve(c.image_dir);
  return c;
}

}  // namespace consim
