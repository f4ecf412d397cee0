#pragma once

#include <nlohmann/json_fwd.hpp>
#include <optional>
#include <string>
#include <vector>

#include "consim/manifest.hpp"
#include "consim/replace.hpp"
#include "consim/similarity.hpp"
#include "consim/types.hpp"

namespace consim {

struct PatchRef {
  std::size_t row = 0;  // manifest index
  std::string image_id;
  Rect rect;
  double score = 0.0;
};

// Highest-scoring patch of each image, images ranked by that score
// (descending), ties by manifest index. At most `n` refs.
std::vector<PatchRef> top_k_patches(const Vector& scores, const PatchManifest& manifest,
                                    std::size_t n);

struct OverUnder {
  std::vector<PatchRef> over;   // scored by u_pred - u_true
  std::vector<PatchRef> under;  // scored by u_true - u_pred
  std::vector<std::string> excluded_images;
  bool zero_residual = false;
};

// Images of the top `exclude_top` real patches are removed from both pools.
OverUnder over_under_predicted(const Vector& u_true, const Vector& u_pred,
                               const PatchManifest& manifest, std::size_t n,
                               std::size_t exclude_top = 10);

struct ConceptExplanation {
  std::string class_id;
  int model = 1;
  int concept_index = 0;
  std::vector<PatchRef> top_real;
  std::vector<PatchRef> over_predicted;
  std::vector<PatchRef> under_predicted;
  std::vector<std::string> excluded_images;
  bool zero_residual = false;
  std::vector<double> scatter_true;
  std::vector<double> scatter_pred;
};

ConceptExplanation explain_concept(const std::string& class_id, int model, int concept_index,
                                   const Vector& u_true, const Vector& u_pred,
                                   const PatchManifest& manifest, std::size_t top_n,
                                   std::size_t exclude_top);

struct ReportEntry {
  ConceptExplanation explanation;
  std::optional<SimilarityRecord> similarity;
  std::optional<ReplacementOutcome> outcome;
};

nlohmann::json report_to_json(const ReportEntry& entry);

// Empty when `doc` conforms to the concept-report schema; otherwise one
// message per violation.
std::vector<std::string> validate_report(const nlohmann::json& doc);
std::vector<std::string> validate_report_index(const nlohmann::json& doc);

// Writes one JSON document per (class, model, concept) plus index.json into
// `directory`. Returns the written report paths in index order.
std::vector<std::string> emit_report(const std::vector<ReportEntry>& entries,
                                     const std::string& directory);

struct CollageOptions {
  int grid = 3;
  int image_size = 224;
  int patch_size = 64;
};

struct CollageFiles {
  std::string top_real_png;
  std::string over_predicted_png;
  std::string prompt_txt;
};

// Composes IC1 (top real) and IC2 (over-predicted) montages from source
// images `<image_dir>/<image_id>.{png,jpg,jpeg}` and writes a prompt text
// for manual comparison with a vision-language model.
CollageFiles emit_collage_bundle(const ConceptExplanation& explanation,
                                 const std::string& image_dir, const std::string& directory,
                                 const CollageOptions& options = {},
                                 const std::optional<SimilarityRecord>& similarity = {});

}  // namespace consim
