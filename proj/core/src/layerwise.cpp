#include "consim/layerwise.hpp"

#include <sstream>

#include "consim/error.hpp"
#include "consim/parallel.hpp"

namespace consim {

SharedRows shared_rows(const Bundle& bundle1, const std::string& layer1, const Bundle& bundle2,
                       const std::string& layer2, const std::string& class_id) {
  const ProposalSelection p1 = select_proposals(bundle1.manifest, class_id);
  const ProposalSelection p2 = select_proposals(bundle2.manifest, class_id);
  SharedRows out;
  out.manifest = union_image_sets(p1.manifest, p2.manifest);
  out.label_fallback = p1.used_label_fallback || p2.used_label_fallback;
  if (out.manifest.size() == 0) {
    throw Error(ErrorCode::kInvalidArgument, "class " + class_id + " has no concept proposals");
  }
  out.A1 = gather_rows(bundle1.at(layer1, class_id).data, bundle1.manifest,
                       bundle1.manifest.rows_of_class(class_id), out.manifest);
  out.A2 = gather_rows(bundle2.at(layer2, class_id).data, bundle2.manifest,
                       bundle2.manifest.rows_of_class(class_id), out.manifest);
  return out;
}

namespace {

const ConceptDecomposition& find_decomposition(const DecompositionMap& map,
                                               const std::string& layer,
                                               const std::string& class_id, int model) {
  const auto it = map.find({layer, class_id});
  if (it == map.end()) {
    throw Error(ErrorCode::kMissingStage, "no decomposition for model " + std::to_string(model) +
                                              " " + layer + "/" + class_id + "; run extract first");
  }
  return it->second;
}

}  // namespace

LayerwiseResult layerwise_mmcs(const LayerwiseModel& model1, const LayerwiseModel& model2,
                               const std::vector<std::string>& layers1,
                               const std::vector<std::string>& layers2,
                               const std::vector<std::string>& classes, CorrelationKind kind,
                               int jobs) {
  if (classes.empty()) throw Error(ErrorCode::kInvalidArgument, "layerwise_mmcs: no classes");
  LayerwiseResult out;
  out.layers1 = layers1;
  out.layers2 = layers2;
  const auto L1 = static_cast<Index>(layers1.size());
  const auto L2 = static_cast<Index>(layers2.size());

  // Refit every (class, layer) on the class's shared patch set once.
  const std::size_t C = classes.size();
  std::vector<std::vector<Matrix>> U1(C, std::vector<Matrix>(layers1.size()));
  std::vector<std::vector<Matrix>> U2(C, std::vector<Matrix>(layers2.size()));
  const std::size_t per_class = layers1.size() + layers2.size();
  parallel_for(C * per_class, jobs, [&](std::size_t item) {
    const std::size_t c = item / per_class;
    const std::size_t slot = item % per_class;
    const std::string& cls = classes[c];
    if (slot < layers1.size()) {
      const std::string& layer = layers1[slot];
      const SharedRows rows =
          shared_rows(model1.bundle, layer, model2.bundle, layers2.front(), cls);
      U1[c][slot] = nnls_refit(rows.A1, find_decomposition(model1.decompositions, layer, cls, 1).W);
    } else {
      const std::string& layer = layers2[slot - layers1.size()];
      const SharedRows rows =
          shared_rows(model1.bundle, layers1.front(), model2.bundle, layer, cls);
      U2[c][slot - layers1.size()] =
          nnls_refit(rows.A2, find_decomposition(model2.decompositions, layer, cls, 2).W);
    }
  });

  out.mmcs.resize(L1, L2);
  out.mmcs1.resize(L1, L2);
  out.mmcs2.resize(L1, L2);
  parallel_for(static_cast<std::size_t>(L1 * L2), jobs, [&](std::size_t cell) {
    const auto i = static_cast<Index>(cell) / L2;
    const auto j = static_cast<Index>(cell) % L2;
    std::vector<Matrix> per_class;
    for (std::size_t c = 0; c < C; ++c) {
      per_class.push_back(correlation_matrix(U1[c][static_cast<std::size_t>(i)],
                                             U2[c][static_cast<std::size_t>(j)], kind)
                              .R);
    }
    const MmcsResult r = mmcs(per_class);
    out.mmcs(i, j) = r.mmcs;
    out.mmcs1(i, j) = r.mmcs1;
    out.mmcs2(i, j) = r.mmcs2;
  });
  return out;
}

std::string layerwise_csv(const LayerwiseResult& result, const Matrix& values) {
  std::ostringstream os;
  os.precision(17);
  os << "layer";
  for (const auto& l2 : result.layers2) os << ',' << l2;
  os << '\n';
  for (std::size_t i = 0; i < result.layers1.size(); ++i) {
    os << result.layers1[i];
    for (std::size_t j = 0; j < result.layers2.size(); ++j) {
      os << ',' << values(static_cast<Index>(i), static_cast<Index>(j));
    }
    os << '\n';
  }
  return os.str();
}

}  // namespace consim
