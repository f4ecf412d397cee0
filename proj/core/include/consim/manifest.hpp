#pragma once

#include <nlohmann/json_fwd.hpp>
#include <array>
#include <compare>
#include <optional>
#include <string>
#include <vector>

namespace consim {

struct Rect {
  int x = 0;
  int y = 0;
  int w = 0;
  int h = 0;

  auto operator<=>(const Rect&) const = default;
};

struct PatchEntry {
  std::string image_id;
  Rect rect;
  std::string class_id;
  std::string predicted_class;  // empty when the dump carries no predictions
};

// Row order of every activation matrix sharing the manifest follows `entries`.
struct PatchManifest {
  int image_size = 0;
  int patch_size = 0;
  std::string model_id;
  std::vector<PatchEntry> entries;
  // Optional extension key: labels of the linear head's output columns.
  std::optional<std::vector<std::string>> head_classes;

  std::size_t size() const { return entries.size(); }
  // Manifest-order indices of the entries whose class_id equals `class_id`.
  std::vector<std::size_t> rows_of_class(const std::string& class_id) const;
};

// Throws kSchemaViolation with a message naming the offending field.
PatchManifest manifest_from_json(const nlohmann::json& doc);
nlohmann::json manifest_to_json(const PatchManifest& manifest);

PatchManifest read_manifest(const std::string& path);
void write_manifest(const std::string& path, const PatchManifest& manifest);

// Evenly spaced square patches, row-major (y outer, x inner).
std::vector<Rect> patch_grid(int image_size, int patch_size, int grid_n);

// Deduplicated union keyed by (image_id, rect), sorted by image_id then rect.
// On duplicate keys the entry from `first` wins.
PatchManifest union_image_sets(const PatchManifest& first, const PatchManifest& second);

// Entries of `manifest` (restricted to `rows`) that are concept proposals for
// `class_id`: the model predicted the class. When the manifest has no
// predictions, the class label is used and `used_label_fallback` is set.
struct ProposalSelection {
  PatchManifest manifest;
  std::vector<std::size_t> rows;  // indices into the source manifest
  bool used_label_fallback = false;
};
ProposalSelection select_proposals(const PatchManifest& manifest, const std::string& class_id);

}  // namespace consim
