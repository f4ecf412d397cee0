#include "consim/explain.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <set>
#include <sstream>

#include "consim/error.hpp"
#include "consim/image.hpp"
#include "consim/zip.hpp"

namespace consim {
namespace {

using nlohmann::json;
namespace fs = std::filesystem;

constexpr const char* kReportSchema = "consim.concept_report/1";
constexpr const char* kIndexSchema = "consim.report_index/1";

std::vector<PatchRef> top_patches_excluding(const Vector& scores, const PatchManifest& manifest,
                                            std::size_t n, const std::set<std::string>& excluded) {
  if (static_cast<std::size_t>(scores.size()) != manifest.size()) {
    throw Error(ErrorCode::kDimensionMismatch, "patch selection: scores and manifest differ in length");
  }
  // Best patch per image; the lower manifest index wins ties.
  std::map<std::string, std::size_t> best;
  for (std::size_t i = 0; i < manifest.size(); ++i) {
    const double s = scores(static_cast<Index>(i));
    if (std::isnan(s)) continue;
    const std::string& image = manifest.entries[i].image_id;
    if (excluded.contains(image)) continue;
    const auto it = best.find(image);
    if (it == best.end() || s > scores(static_cast<Index>(it->second))) best[image] = i;
  }
  std::vector<std::size_t> rows;
  rows.reserve(best.size());
  for (const auto& [_, row] : best) rows.push_back(row);
  std::sort(rows.begin(), rows.end(), [&](std::size_t a, std::size_t b) {
    const double sa = scores(static_cast<Index>(a)), sb = scores(static_cast<Index>(b));
    return sa != sb ? sa > sb : a < b;
  });
  if (rows.size() > n) rows.resize(n);
  std::vector<PatchRef> out;
  for (std::size_t row : rows) {
    const PatchEntry& e = manifest.entries[row];
    out.push_back({row, e.image_id, e.rect, scores(static_cast<Index>(row))});
  }
  return out;
}

json refs_to_json(const std::vector<PatchRef>& refs) {
  json arr = json::array();
  for (const auto& r : refs) {
    arr.push_back({{"row", r.row},
                   {"image_id", r.image_id},
                   {"rect", {r.rect.x, r.rect.y, r.rect.w, r.rect.h}},
                   {"score", r.score}});
  }
  return arr;
}

std::string sanitize(const std::string& s) {
  std::string out;
  for (char ch : s) {
    const bool keep = std::isalnum(static_cast<unsigned char>(ch)) || ch == '-' || ch == '_' || ch == '.';
    out.push_back(keep ? ch : '_');
  }
  return out.empty() ? "_" : out;
}

void expect(std::vector<std::string>& errors, const json& doc, const char* key,
            bool (json::*is_type)() const noexcept, const std::string& where, bool nullable = false) {
  const auto it = doc.find(key);
  if (it == doc.end()) {
    errors.push_back(where + ": missing \"" + key + "\"");
  } else if (!((*it).*is_type)() && !(nullable && it->is_null())) {
    errors.push_back(where + ": \"" + key + "\" has the wrong type");
  }
}

void validate_refs(std::vector<std::string>& errors, const json& doc, const char* key) {
  const auto it = doc.find(key);
  if (it == doc.end() || !it->is_array()) {
    errors.push_back(std::string("report: \"") + key + "\" must be an array");
    return;
  }
  std::set<std::string> images;
  for (std::size_t i = 0; i < it->size(); ++i) {
    const json& ref = (*it)[i];
    const std::string where = std::string(key) + "[" + std::to_string(i) + "]";
    if (!ref.is_object()) {
      errors.push_back(where + ": not an object");
      continue;
    }
    expect(errors, ref, "row", &json::is_number_unsigned, where);
    expect(errors, ref, "image_id", &json::is_string, where);
    expect(errors, ref, "score", &json::is_number, where);
    const auto rect = ref.find("rect");
    if (rect == ref.end() || !rect->is_array() || rect->size() != 4) {
      errors.push_back(where + ": rect must be [x, y, w, h]");
    }
    if (ref.contains("image_id") && ref["image_id"].is_string() &&
        !images.insert(ref["image_id"].get<std::string>()).second) {
      errors.push_back(where + ": image repeated within the list");
    }
  }
}

}  // namespace

std::vector<PatchRef> top_k_patches(const Vector& scores, const PatchManifest& manifest, std::size_t n) {
  return top_patches_excluding(scores, manifest, n, {});
}

OverUnder over_under_predicted(const Vector& u_true, const Vector& u_pred,
                               const PatchManifest& manifest, std::size_t n,
                               std::size_t exclude_top) {
  if (u_true.size() != u_pred.size()) {
    throw Error(ErrorCode::kDimensionMismatch, "over_under_predicted: length mismatch");
  }
  OverUnder out;
  std::set<std::string> excluded;
  for (const auto& ref : top_k_patches(u_true, manifest, exclude_top)) {
    excluded.insert(ref.image_id);
    out.excluded_images.push_back(ref.image_id);
  }
  const Vector residual = u_pred - u_true;
  out.zero_residual = residual.size() == 0 || residual.cwiseAbs().maxCoeff() == 0.0;
  out.over = top_patches_excluding(residual, manifest, n, excluded);
  out.under = top_patches_excluding(-residual, manifest, n, excluded);
  return out;
}

ConceptExplanation explain_concept(const std::string& class_id, int model, int concept_index,
                                   const Vector& u_true, const Vector& u_pred,
                                   const PatchManifest& manifest, std::size_t top_n,
                                   std::size_t exclude_top) {
  ConceptExplanation ex;
  ex.class_id = class_id;
  ex.model = model;
  ex.concept_index = concept_index;
  ex.top_real = top_k_patches(u_true, manifest, top_n);
  const OverUnder ou = over_under_predicted(u_true, u_pred, manifest, top_n, exclude_top);
  ex.over_predicted = ou.over;
  ex.under_predicted = ou.under;
  ex.excluded_images = ou.excluded_images;
  ex.zero_residual = ou.zero_residual;
  ex.scatter_true.assign(u_true.data(), u_true.data() + u_true.size());
  ex.scatter_pred.assign(u_pred.data(), u_pred.data() + u_pred.size());
  return ex;
}

json report_to_json(const ReportEntry& entry) {
  const ConceptExplanation& ex = entry.explanation;
  json doc = {{"schema", kReportSchema},
              {"class_id", ex.class_id},
              {"model", ex.model},
              {"concept_index", ex.concept_index},
              {"top_real", refs_to_json(ex.top_real)},
              {"over_predicted", refs_to_json(ex.over_predicted)},
              {"under_predicted", refs_to_json(ex.under_predicted)},
              {"excluded_images", ex.excluded_images},
              {"zero_residual", ex.zero_residual}};
  // Region boundaries for colouring the predicted-vs-true scatter; these are
  // read off the selections, not tuned thresholds.
  json regions = json::object();
  regions["top_real_min_true"] = ex.top_real.empty() ? json(nullptr) : json(ex.top_real.back().score);
  regions["over_min_residual"] =
      ex.over_predicted.empty() ? json(nullptr) : json(ex.over_predicted.back().score);
  regions["under_min_residual"] =
      ex.under_predicted.empty() ? json(nullptr) : json(ex.under_predicted.back().score);
  doc["scatter"] = {{"true", ex.scatter_true}, {"predicted", ex.scatter_pred}, {"regions", regions}};
  if (entry.similarity) {
    const SimilarityRecord& s = *entry.similarity;
    doc["similarity"] = {{"direction", to_string(s.direction)},
                         {"cmcs_pearson", s.cmcs_pearson},
                         {"cmcs_spearman", s.cmcs_spearman},
                         {"smcs_pearson", s.smcs_pearson},
                         {"smcs_spearman", s.smcs_spearman},
                         {"delta_pearson", s.delta_pearson},
                         {"degenerate", s.degenerate},
                         {"label_fallback", s.label_fallback}};
    doc["importance"] = s.importance ? json(*s.importance) : json(nullptr);
  } else {
    doc["similarity"] = nullptr;
    doc["importance"] = nullptr;
  }
  if (entry.outcome) {
    doc["replacement"] = {{"delta_l2", entry.outcome->delta_l2},
                          {"delta_kl", entry.outcome->delta_kl},
                          {"match_accuracy", entry.outcome->match_accuracy}};
  } else {
    doc["replacement"] = nullptr;
  }
  return doc;
}

std::vector<std::string> validate_report(const json& doc) {
  std::vector<std::string> errors;
  if (!doc.is_object()) return {"report: not an object"};
  if (doc.value("schema", std::string()) != kReportSchema) errors.push_back("report: wrong schema tag");
  expect(errors, doc, "class_id", &json::is_string, "report");
  expect(errors, doc, "model", &json::is_number_integer, "report");
  expect(errors, doc, "concept_index", &json::is_number_integer, "report");
  expect(errors, doc, "zero_residual", &json::is_boolean, "report");
  expect(errors, doc, "similarity", &json::is_object, "report", true);
  expect(errors, doc, "replacement", &json::is_object, "report", true);
  expect(errors, doc, "importance", &json::is_number, "report", true);
  validate_refs(errors, doc, "top_real");
  validate_refs(errors, doc, "over_predicted");
  validate_refs(errors, doc, "under_predicted");

  expect(errors, doc, "excluded_images", &json::is_array, "report");
  // Over/under selections never reuse an excluded top-real image.
  if (errors.empty()) {
    std::set<std::string> excluded;
    for (const auto& id : doc["excluded_images"]) {
      if (id.is_string()) excluded.insert(id.get<std::string>());
    }
    for (const char* key : {"over_predicted", "under_predicted"}) {
      for (const auto& r : doc[key]) {
        if (excluded.contains(r["image_id"].get<std::string>())) {
          errors.push_back(std::string(key) + ": reuses excluded image " +
                           r["image_id"].get<std::string>());
        }
      }
    }
  }

  const auto scatter = doc.find("scatter");
  if (scatter == doc.end() || !scatter->is_object()) {
    errors.push_back("report: missing scatter object");
  } else {
    expect(errors, *scatter, "true", &json::is_array, "scatter");
    expect(errors, *scatter, "predicted", &json::is_array, "scatter");
    expect(errors, *scatter, "regions", &json::is_object, "scatter");
    if (scatter->contains("true") && scatter->contains("predicted") &&
        (*scatter)["true"].size() != (*scatter)["predicted"].size()) {
      errors.push_back("scatter: true and predicted differ in length");
    }
  }
  if (const auto sim = doc.find("similarity"); sim != doc.end() && sim->is_object()) {
    for (const char* key : {"cmcs_pearson", "cmcs_spearman", "smcs_pearson", "smcs_spearman"}) {
      expect(errors, *sim, key, &json::is_number, "similarity");
      if (sim->contains(key) && (*sim)[key].is_number()) {
        const double v = (*sim)[key].get<double>();
        if (v < -1.0 || v > 1.0) errors.push_back(std::string("similarity.") + key + " outside [-1, 1]");
      }
    }
    expect(errors, *sim, "delta_pearson", &json::is_number, "similarity");
    expect(errors, *sim, "direction", &json::is_string, "similarity");
  }
  if (const auto rep = doc.find("replacement"); rep != doc.end() && rep->is_object()) {
    for (const char* key : {"delta_l2", "delta_kl", "match_accuracy"}) {
      expect(errors, *rep, key, &json::is_number, "replacement");
    }
  }
  return errors;
}

std::vector<std::string> validate_report_index(const json& doc) {
  std::vector<std::string> errors;
  if (!doc.is_object()) return {"index: not an object"};
  if (doc.value("schema", std::string()) != kIndexSchema) errors.push_back("index: wrong schema tag");
  const auto reports = doc.find("reports");
  if (reports == doc.end() || !reports->is_array()) {
    errors.push_back("index: \"reports\" must be an array");
    return errors;
  }
  for (std::size_t i = 0; i < reports->size(); ++i) {
    const std::string where = "reports[" + std::to_string(i) + "]";
    const json& r = (*reports)[i];
    expect(errors, r, "file", &json::is_string, where);
    expect(errors, r, "class_id", &json::is_string, where);
    expect(errors, r, "model", &json::is_number_integer, where);
    expect(errors, r, "concept_index", &json::is_number_integer, where);
  }
  return errors;
}

std::vector<std::string> emit_report(const std::vector<ReportEntry>& entries,
                                     const std::string& directory) {
  fs::create_directories(directory);
  json index = {{"schema", kIndexSchema}, {"reports", json::array()}};
  std::vector<std::string> paths;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const ConceptExplanation& ex = entries[i].explanation;
    char prefix[16];
    std::snprintf(prefix, sizeof prefix, "%04zu", i);
    const std::string file = std::string(prefix) + "_" + sanitize(ex.class_id) + "_m" +
                             std::to_string(ex.model) + "_c" + std::to_string(ex.concept_index) +
                             ".json";
    const json doc = report_to_json(entries[i]);
    const std::string path = (fs::path(directory) / file).string();
    write_text_atomic(path, doc.dump(1) + "\n");
    paths.push_back(path);
    json row = {{"file", file},
                {"class_id", ex.class_id},
                {"model", ex.model},
                {"concept_index", ex.concept_index}};
    if (entries[i].similarity) row["delta_pearson"] = entries[i].similarity->delta_pearson;
    if (entries[i].outcome) row["delta_kl"] = entries[i].outcome->delta_kl;
    index["reports"].push_back(std::move(row));
  }
  write_text_atomic((fs::path(directory) / "index.json").string(), index.dump(1) + "\n");
  return paths;
}

namespace {

std::string find_source_image(const std::string& image_dir, const std::string& image_id) {
  for (const char* ext : {".png", ".jpg", ".jpeg", ".PNG", ".JPG", ".JPEG"}) {
    const fs::path p = fs::path(image_dir) / (image_id + ext);
    if (fs::exists(p)) return p.string();
  }
  throw Error(ErrorCode::kMissingMember,
              "collage: no source image for image_id '" + image_id + "' in " + image_dir);
}

Image collage_of(const std::vector<PatchRef>& refs, const std::string& image_dir,
                 const CollageOptions& options) {
  std::vector<Image> tiles;
  for (std::size_t i = 0; i < refs.size() && i < static_cast<std::size_t>(options.grid * options.grid); ++i) {
    Image source = read_image(find_source_image(image_dir, refs[i].image_id));
    source = resize_nearest(source, options.image_size, options.image_size);
    tiles.push_back(crop(source, refs[i].rect));
  }
  return montage(tiles, options.grid, options.patch_size);
}

}  // namespace

CollageFiles emit_collage_bundle(const ConceptExplanation& explanation,
                                 const std::string& image_dir, const std::string& directory,
                                 const CollageOptions& options,
                                 const std::optional<SimilarityRecord>& similarity) {
  const std::string stem = sanitize(explanation.class_id) + "_m" + std::to_string(explanation.model) +
                           "_c" + std::to_string(explanation.concept_index);
  CollageFiles files;
  files.top_real_png = (fs::path(directory) / (stem + "_IC1.png")).string();
  files.over_predicted_png = (fs::path(directory) / (stem + "_IC2.png")).string();
  files.prompt_txt = (fs::path(directory) / (stem + "_prompt.txt")).string();

  const Image ic1 = collage_of(explanation.top_real, image_dir, options);
  const Image ic2 = collage_of(explanation.over_predicted, image_dir, options);
  write_png(files.top_real_png, ic1);
  write_png(files.over_predicted_png, ic2);

  std::ostringstream prompt;
  prompt << "You are shown two image collages built from " << options.patch_size << "x"
         << options.patch_size << " patches.\n"
         << "IC1 (" << fs::path(files.top_real_png).filename().string()
         << "): the patches where a visual concept of model " << explanation.model
         << " responds most strongly (class " << explanation.class_id << ", concept "
         << explanation.concept_index << ").\n"
         << "IC2 (" << fs::path(files.over_predicted_png).filename().string()
         << "): the patches where the other model's prediction of that concept is most "
            "overestimated.\n";
  if (similarity) {
    prompt << "Measured cross-model similarity (Pearson): " << similarity->cmcs_pearson
           << "; same-model baseline: " << similarity->smcs_pearson << ".\n";
  }
  prompt << "\nDescribe each collage and compare them. Answer in exactly this form:\n"
         << "IC1: <one-sentence description>\n"
         << "IC2: <one-sentence description>\n"
         << "Similarity: <what the collages share>\n"
         << "Difference: <how they differ>\n"
         << "Semantically different: [Yes|No] <one-sentence justification>\n";
  write_text_atomic(files.prompt_txt, prompt.str());
  return files;
}

}  // namespace consim
