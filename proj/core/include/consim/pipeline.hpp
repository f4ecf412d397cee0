#pragma once

#include <nlohmann/json.hpp>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "consim/attribute.hpp"
#include "consim/factorize.hpp"
#include "consim/replace.hpp"
#include "consim/synthgen.hpp"

namespace consim {

struct ModelInput {
  std::string bundle;    // NPZ path
  std::string manifest;  // JSON path
};

struct PipelineConfig {
  ModelInput model1;
  ModelInput model2;
  std::vector<std::string> layers1;  // empty: every layer in the bundle
  std::vector<std::string> layers2;
  std::vector<std::string> classes;  // empty: classes present in both bundles
  std::string compare_layer1;        // empty: last of layers1
  std::string compare_layer2;

  int k = 10;
  double lambda = 0.1;
  int folds = 5;
  int cig_steps = 30;
  int top_n = 10;
  int exclude_top = 10;
  std::uint64_t seed = 0;
  int jobs = 1;
  std::string out = "consim_out";

  std::string method = "auto";  // auto | nnmf | semi_nmf
  int max_iter = 500;
  double tol = 1e-5;
  int lasso_max_iter = 10000;
  double lasso_tol = 1e-6;
  double eval_fraction = 0.3;
  std::string kl_direction = "self_to_cross";
  std::string importance_aggregation = "mean";
  double kl_percentile = 0.0;  // report filter on delta_kl, in [0, 100)
  int report_max_concepts = 0;  // 0: no cap
  std::string image_dir;        // enables collages when set
  int montage_grid = 3;
  std::optional<SyntheticSpec> synth;
};

nlohmann::json config_to_json(const PipelineConfig& config);
// Unknown keys are rejected so typos do not silently fall back to defaults.
PipelineConfig config_from_json(const nlohmann::json& doc);
PipelineConfig read_config(const std::string& path);

struct StageStats {
  int computed = 0;
  int cached = 0;
};

// Per-(model, layer, class) decompositions under <out>/extract.
StageStats cmd_extract(const PipelineConfig& config);
// Similarity, replacement and importance results under <out>/compare.
StageStats cmd_compare(const PipelineConfig& config);
// MMCS matrices under <out>/layerwise.
StageStats cmd_layerwise(const PipelineConfig& config);
// Concept reports (and optional collages) under <out>/report.
StageStats cmd_report(const PipelineConfig& config);
// Writes model1/model2 bundles and ground truth under <out>/synth.
StageStats cmd_synth(const PipelineConfig& config, bool planted = true);

// Keeps the ceil((1 - percentile/100) * N) largest values, ties by index.
std::vector<std::size_t> select_above_percentile(const std::vector<double>& values,
                                                 double percentile);

std::string sha256_hex(std::span<const std::uint8_t> bytes);
std::string sha256_hex(const std::string& text);

}  // namespace consim
