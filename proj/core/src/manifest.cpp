#include "consim/manifest.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "consim/error.hpp"
#include "consim/zip.hpp"

namespace consim {
namespace {

using nlohmann::json;

[[noreturn]] void violation(const std::string& why) {
  throw Error(ErrorCode::kSchemaViolation, "manifest: " + why);
}

const json& require(const json& doc, const char* key, json::value_t type, const std::string& where) {
  const auto it = doc.find(key);
  if (it == doc.end()) violation(where + " lacks \"" + key + "\"");
  const bool ok = type == json::value_t::number_integer
                      ? it->is_number_integer()
                      : it->type() == type;
  if (!ok) violation(where + "." + key + " has the wrong type");
  return *it;
}

}  // namespace

std::vector<std::size_t> PatchManifest::rows_of_class(const std::string& class_id) const {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (entries[i].class_id == class_id) rows.push_back(i);
  }
  return rows;
}

PatchManifest manifest_from_json(const json& doc) {
  if (!doc.is_object()) violation("document is not an object");
  static const std::set<std::string> known = {"image_size", "patch_size", "model_id", "entries",
                                              "head_classes"};
  for (const auto& [key, _] : doc.items()) {
    if (!known.contains(key)) violation("unknown key \"" + key + "\"");
  }
  PatchManifest m;
  m.image_size = require(doc, "image_size", json::value_t::number_integer, "root").get<int>();
  m.patch_size = require(doc, "patch_size", json::value_t::number_integer, "root").get<int>();
  m.model_id = require(doc, "model_id", json::value_t::string, "root").get<std::string>();
  if (m.image_size <= 0 || m.patch_size <= 0 || m.patch_size > m.image_size) {
    violation("need 0 < patch_size <= image_size");
  }
  const json& entries = require(doc, "entries", json::value_t::array, "root");
  m.entries.reserve(entries.size());
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const json& e = entries[i];
    const std::string where = "entries[" + std::to_string(i) + "]";
    if (!e.is_object()) violation(where + " is not an object");
    PatchEntry p;
    p.image_id = require(e, "image_id", json::value_t::string, where).get<std::string>();
    p.class_id = require(e, "class_id", json::value_t::string, where).get<std::string>();
    const auto pred = e.find("predicted_class");
    if (pred == e.end()) violation(where + " lacks \"predicted_class\"");
    if (pred->is_string()) {
      p.predicted_class = pred->get<std::string>();
    } else if (!pred->is_null()) {
      violation(where + ".predicted_class must be a string or null");
    }
    const json& rect = require(e, "rect", json::value_t::array, where);
    if (rect.size() != 4 || !std::all_of(rect.begin(), rect.end(),
                                         [](const json& v) { return v.is_number_integer(); })) {
      violation(where + ".rect must be four integers");
    }
    p.rect = {rect[0].get<int>(), rect[1].get<int>(), rect[2].get<int>(), rect[3].get<int>()};
    if (p.rect.w != m.patch_size || p.rect.h != m.patch_size) {
      violation(where + ".rect size differs from patch_size");
    }
    if (p.rect.x < 0 || p.rect.y < 0 || p.rect.x + p.rect.w > m.image_size ||
        p.rect.y + p.rect.h > m.image_size) {
      violation(where + ".rect lies outside the image");
    }
    m.entries.push_back(std::move(p));
  }
  if (const auto hc = doc.find("head_classes"); hc != doc.end()) {
    if (!hc->is_array() ||
        !std::all_of(hc->begin(), hc->end(), [](const json& v) { return v.is_string(); })) {
      violation("head_classes must be an array of strings");
    }
    m.head_classes = hc->get<std::vector<std::string>>();
  }
  return m;
}

json manifest_to_json(const PatchManifest& manifest) {
  json entries = json::array();
  for (const auto& e : manifest.entries) {
    entries.push_back({{"image_id", e.image_id},
                       {"rect", {e.rect.x, e.rect.y, e.rect.w, e.rect.h}},
                       {"class_id", e.class_id},
                       {"predicted_class", e.predicted_class}});
  }
  json doc = {{"image_size", manifest.image_size},
              {"patch_size", manifest.patch_size},
              {"model_id", manifest.model_id},
              {"entries", std::move(entries)}};
  if (manifest.head_classes) doc["head_classes"] = *manifest.head_classes;
  return doc;
}

PatchManifest read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path);
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::kSchemaViolation, "manifest: " + path + " is not JSON: " + e.what());
  }
  return manifest_from_json(doc);
}

void write_manifest(const std::string& path, const PatchManifest& manifest) {
  write_text_atomic(path, manifest_to_json(manifest).dump(1) + "\n");
}

std::vector<Rect> patch_grid(int image_size, int patch_size, int grid_n) {
  if (grid_n < 1) throw Error(ErrorCode::kInvalidArgument, "patch_grid: grid_n must be >= 1");
  if (patch_size < 1 || patch_size > image_size) {
    throw Error(ErrorCode::kInvalidArgument, "patch_grid: patch_size exceeds image_size");
  }
  std::vector<int> offsets(static_cast<std::size_t>(grid_n), 0);
  if (grid_n > 1) {
    const double span = image_size - patch_size;
    for (int i = 0; i < grid_n; ++i) {
      offsets[static_cast<std::size_t>(i)] = static_cast<int>(std::lround(i * span / (grid_n - 1)));
    }
  }
  std::vector<Rect> rects;
  rects.reserve(offsets.size() * offsets.size());
  for (int y : offsets) {
    for (int x : offsets) rects.push_back({x, y, patch_size, patch_size});
  }
  return rects;
}

PatchManifest union_image_sets(const PatchManifest& first, const PatchManifest& second) {
  if (first.image_size != second.image_size || first.patch_size != second.patch_size) {
    throw Error(ErrorCode::kInvalidArgument,
                "union_image_sets: incompatible patch geometry (image " +
                    std::to_string(first.image_size) + "/" + std::to_string(second.image_size) +
                    ", patch " + std::to_string(first.patch_size) + "/" +
                    std::to_string(second.patch_size) + ")");
  }
  std::vector<PatchEntry> merged;
  merged.reserve(first.size() + second.size());
  merged.insert(merged.end(), first.entries.begin(), first.entries.end());
  merged.insert(merged.end(), second.entries.begin(), second.entries.end());
  const auto key_less = [](const PatchEntry& a, const PatchEntry& b) {
    return std::tie(a.image_id, a.rect) < std::tie(b.image_id, b.rect);
  };
  std::stable_sort(merged.begin(), merged.end(), key_less);
  const auto last = std::unique(merged.begin(), merged.end(),
                                [](const PatchEntry& a, const PatchEntry& b) {
                                  return a.image_id == b.image_id && a.rect == b.rect;
                                });
  merged.erase(last, merged.end());

  PatchManifest out;
  out.image_size = first.image_size;
  out.patch_size = first.patch_size;
  out.model_id = first.model_id == second.model_id ? first.model_id
                                                   : first.model_id + "+" + second.model_id;
  out.entries = std::move(merged);
  return out;
}

ProposalSelection select_proposals(const PatchManifest& manifest, const std::string& class_id) {
  ProposalSelection sel;
  const std::vector<std::size_t> class_rows = manifest.rows_of_class(class_id);
  const bool has_predictions = std::any_of(class_rows.begin(), class_rows.end(), [&](auto i) {
    return !manifest.entries[i].predicted_class.empty();
  });
  sel.used_label_fallback = !has_predictions;
  sel.manifest.image_size = manifest.image_size;
  sel.manifest.patch_size = manifest.patch_size;
  sel.manifest.model_id = manifest.model_id;
  for (std::size_t i : class_rows) {
    const PatchEntry& e = manifest.entries[i];
    if (!has_predictions || e.predicted_class == class_id) {
      sel.rows.push_back(i);
      sel.manifest.entries.push_back(e);
    }
  }
  return sel;
}

}  // namespace consim
