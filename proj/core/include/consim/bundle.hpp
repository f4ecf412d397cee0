#pragma once

#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "consim/manifest.hpp"
#include "consim/types.hpp"

namespace consim {

// One model's activation dump: a matrix per (layer, class) whose rows are the
// manifest entries of that class, in manifest order.
struct Bundle {
  PatchManifest manifest;
  std::map<std::pair<std::string, std::string>, ActivationMatrix> matrices;
  std::optional<LinearHead> head;

  std::vector<std::string> layers() const;
  std::vector<std::string> classes() const;
  const ActivationMatrix& at(const std::string& layer, const std::string& class_id) const;
  bool contains(const std::string& layer, const std::string& class_id) const;
};

// Validates row counts against the manifest, finiteness, and head shape.
Bundle load_bundle(const std::string& npz_path, const std::string& manifest_path);
void save_bundle(const Bundle& bundle, const std::string& npz_path,
                 const std::string& manifest_path);

// Rows of `matrix` (laid out per `source` restricted to `source_rows`) that
// correspond to the entries of `target`, in target order. Throws
// kMissingMember naming the first patch the source does not cover.
Matrix gather_rows(const Matrix& matrix, const PatchManifest& source,
                   const std::vector<std::size_t>& source_rows, const PatchManifest& target);

}  // namespace consim
