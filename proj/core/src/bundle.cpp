#include "consim/bundle.hpp"

#include <map>
#include <set>

#include "consim/error.hpp"
#include "consim/zip.hpp"

namespace consim {

std::vector<std::string> Bundle::layers() const {
  std::vector<std::string> out;
  for (const auto& [key, _] : matrices) {
    if (out.empty() || out.back() != key.first) out.push_back(key.first);
  }
  return out;
}

std::vector<std::string> Bundle::classes() const {
  std::set<std::string> seen;
  for (const auto& [key, _] : matrices) seen.insert(key.second);
  return {seen.begin(), seen.end()};
}

bool Bundle::contains(const std::string& layer, const std::string& class_id) const {
  return matrices.contains({layer, class_id});
}

const ActivationMatrix& Bundle::at(const std::string& layer, const std::string& class_id) const {
  const auto it = matrices.find({layer, class_id});
  if (it == matrices.end()) {
    throw Error(ErrorCode::kMissingMember, "bundle " + manifest.model_id + " has no matrix for " +
                                               layer + "/" + class_id);
  }
  return it->second;
}

Bundle load_bundle(const std::string& npz_path, const std::string& manifest_path) {
  Bundle bundle;
  bundle.manifest = read_manifest(manifest_path);
  const PatchManifest& manifest = bundle.manifest;

  std::optional<Matrix> head_weights, head_bias;
  for (auto& [name, data] : read_npz(npz_path)) {
    if (name == "head_weights") {
      head_weights = std::move(data);
      continue;
    }
    if (name == "head_bias") {
      head_bias = std::move(data);
      continue;
    }
    const auto slash = name.rfind('/');
    if (slash == std::string::npos || slash == 0 || slash + 1 == name.size()) {
      throw Error(ErrorCode::kMalformedFile,
                  npz_path + ": member '" + name + "' is not named <layer>/<class>.npy");
    }
    ActivationMatrix am;
    am.layer_id = name.substr(0, slash);
    am.class_id = name.substr(slash + 1);
    am.model_id = manifest.model_id;
    am.data = std::move(data);
    const auto expected = manifest.rows_of_class(am.class_id).size();
    if (static_cast<std::size_t>(am.data.rows()) != expected) {
      throw Error(ErrorCode::kRowCountMismatch,
                  npz_path + ": " + name + " has " + std::to_string(am.data.rows()) +
                      " rows but the manifest lists " + std::to_string(expected) +
                      " patches of class " + am.class_id);
    }
    if (am.data.cols() < 1) {
      throw Error(ErrorCode::kDimensionMismatch, npz_path + ": " + name + " has no columns");
    }
    require_finite(am.data, (npz_path + ":" + name).c_str());
    bundle.matrices.emplace(std::make_pair(am.layer_id, am.class_id), std::move(am));
  }
  if (bundle.matrices.empty()) {
    throw Error(ErrorCode::kMissingMember, npz_path + ": no activation matrices");
  }

  // Every layer must cover every class the manifest lists.
  std::set<std::string> manifest_classes;
  for (const auto& e : manifest.entries) manifest_classes.insert(e.class_id);
  for (const auto& layer : bundle.layers()) {
    Index dim = -1;
    for (const auto& c : manifest_classes) {
      if (!bundle.contains(layer, c)) {
        throw Error(ErrorCode::kMissingMember, npz_path + ": missing member " + layer + "/" + c +
                                                   ".npy for manifest class " + c);
      }
      const Index d = bundle.at(layer, c).data.cols();
      if (dim >= 0 && d != dim) {
        throw Error(ErrorCode::kDimensionMismatch,
                    npz_path + ": layer " + layer + " has inconsistent widths across classes");
      }
      dim = d;
    }
  }

  if (head_weights.has_value() != head_bias.has_value()) {
    throw Error(ErrorCode::kMissingMember,
                npz_path + ": head_weights.npy and head_bias.npy must appear together");
  }
  if (head_weights) {
    LinearHead head;
    head.weights = std::move(*head_weights);
    if (head_bias->rows() == 1) {
      head.bias = head_bias->row(0);
    } else if (head_bias->cols() == 1) {
      head.bias = head_bias->col(0).transpose();
    } else {
      throw Error(ErrorCode::kDimensionMismatch, npz_path + ": head_bias must be 1 x C");
    }
    if (head.bias.size() != head.weights.cols() || head.weights.cols() < 2) {
      throw Error(ErrorCode::kDimensionMismatch,
                  npz_path + ": head needs C >= 2 outputs with matching bias");
    }
    require_finite(head.weights, "head_weights");
    require_finite(head.bias, "head_bias");
    if (manifest.head_classes) {
      if (static_cast<Index>(manifest.head_classes->size()) != head.weights.cols()) {
        throw Error(ErrorCode::kSchemaViolation,
                    manifest_path + ": head_classes length differs from head output count");
      }
      head.class_labels = *manifest.head_classes;
    } else {
      for (Index c = 0; c < head.weights.cols(); ++c) head.class_labels.push_back(std::to_string(c));
    }
    bundle.head = std::move(head);
  }
  return bundle;
}

void save_bundle(const Bundle& bundle, const std::string& npz_path,
                 const std::string& manifest_path) {
  std::map<std::string, Matrix> arrays;
  for (const auto& [key, am] : bundle.matrices) arrays.emplace(key.first + "/" + key.second, am.data);
  PatchManifest manifest = bundle.manifest;
  if (bundle.head) {
    arrays.emplace("head_weights", bundle.head->weights);
    arrays.emplace("head_bias", Matrix(bundle.head->bias));
    manifest.head_classes = bundle.head->class_labels;
  }
  write_npz(npz_path, arrays);
  write_manifest(manifest_path, manifest);
}

Matrix gather_rows(const Matrix& matrix, const PatchManifest& source,
                   const std::vector<std::size_t>& source_rows, const PatchManifest& target) {
  if (static_cast<std::size_t>(matrix.rows()) != source_rows.size()) {
    throw Error(ErrorCode::kRowCountMismatch, "gather_rows: matrix rows differ from source rows");
  }
  std::map<std::pair<std::string, Rect>, Index> position;
  for (std::size_t i = 0; i < source_rows.size(); ++i) {
    const PatchEntry& e = source.entries.at(source_rows[i]);
    position.emplace(std::make_pair(e.image_id, e.rect), static_cast<Index>(i));
  }
  Matrix out(static_cast<Index>(target.size()), matrix.cols());
  for (std::size_t t = 0; t < target.size(); ++t) {
    const PatchEntry& e = target.entries[t];
    const auto it = position.find({e.image_id, e.rect});
    if (it == position.end()) {
      throw Error(ErrorCode::kMissingMember,
                  "model " + source.model_id + " has no activations for patch " + e.image_id +
                      " [" + std::to_string(e.rect.x) + "," + std::to_string(e.rect.y) + "," +
                      std::to_string(e.rect.w) + "," + std::to_string(e.rect.h) +
                      "]; extract both models over the shared patch set");
    }
    out.row(static_cast<Index>(t)) = matrix.row(it->second);
  }
  return out;
}

}  // namespace consim
