#include "consim/synthgen.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <random>

#include "consim/error.hpp"

namespace consim {
namespace {

// Independent streams per ingredient, so changing one knob (for example the
// plant strength) leaves every other draw untouched.
enum Stream : std::uint64_t {
  kLatent = 1,
  kMixing1,
  kMixing2,
  kNoise1,
  kNoise2,
  kIndicator,
  kHead,
  kPlanted,
  kLayerLatent,
};

std::mt19937_64 stream(std::uint64_t seed, Stream s, std::uint64_t sub = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(s), static_cast<std::uint32_t>(sub)};
  return std::mt19937_64(seq);
}

void validate(const SyntheticSpec& spec) {
  const auto positive = [](int v, const char* name) {
    if (v < 1) throw Error(ErrorCode::kInvalidArgument, std::string("synth: ") + name + " must be >= 1");
  };
  positive(spec.n_images, "n_images");
  positive(spec.patches_per_image, "patches_per_image");
  positive(spec.d1, "d1");
  positive(spec.d2, "d2");
  positive(spec.k_latent, "k_latent");
  positive(spec.n_classes, "n_classes");
  positive(spec.n_layers, "n_layers");
  const int grid = static_cast<int>(std::lround(std::sqrt(spec.patches_per_image)));
  if (grid * grid != spec.patches_per_image) {
    throw Error(ErrorCode::kInvalidArgument, "synth: patches_per_image must be a perfect square");
  }
  if (spec.n_head_classes < std::max(2, spec.n_classes)) {
    throw Error(ErrorCode::kInvalidArgument, "synth: n_head_classes must be >= max(2, n_classes)");
  }
  if (spec.plant_strength < 0.0 || spec.noise_sigma < 0.0) {
    throw Error(ErrorCode::kInvalidArgument, "synth: plant_strength and noise_sigma must be >= 0");
  }
  if (spec.k_latent >= std::min(spec.d1, spec.d2)) {
    throw Error(ErrorCode::kInvalidArgument, "synth: k_latent must be below both feature dims");
  }
}

// Sparse non-negative factors: active with probability `rate`, |N(0,1)| when active.
Matrix sparse_abs_gaussian(Index rows, Index cols, double rate, std::mt19937_64& rng) {
  std::bernoulli_distribution active(rate);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Matrix m(rows, cols);
  for (Index i = 0; i < rows; ++i) {
    for (Index j = 0; j < cols; ++j) {
      const bool on = active(rng);
      const double g = std::abs(gauss(rng));
      m(i, j) = on ? g : 0.0;
    }
  }
  return m;
}

Matrix abs_gaussian(Index rows, Index cols, std::mt19937_64& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  return Matrix::NullaryExpr(rows, cols, [&] { return std::abs(gauss(rng)); });
}

Matrix add_noise_relu(const Matrix& clean, double sigma, std::mt19937_64& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  Matrix noisy = clean;
  for (Index i = 0; i < noisy.rows(); ++i) {
    for (Index j = 0; j < noisy.cols(); ++j) {
      const double g = gauss(rng);
      noisy(i, j) = std::max(0.0, noisy(i, j) + sigma * g);
    }
  }
  return noisy;
}

Matrix pseudo_inverse(const Matrix& m) {
  return Eigen::CompleteOrthogonalDecomposition<Matrix>(m).pseudoInverse();
}

struct Skeleton {
  PatchManifest manifest;
  std::vector<std::vector<std::size_t>> class_rows;
  std::vector<Matrix> layer_latents;  // per layer, rows x k_latent
  Vector indicator;
  Matrix head_latent;  // k_latent x C
  RowVector head_bias;
  std::vector<std::string> head_labels;
};

Skeleton make_skeleton(const SyntheticSpec& spec) {
  Skeleton sk;
  sk.manifest.image_size = spec.image_size;
  sk.manifest.patch_size = spec.patch_size;
  const int grid = static_cast<int>(std::lround(std::sqrt(spec.patches_per_image)));
  const auto rects = patch_grid(spec.image_size, spec.patch_size, grid);
  sk.class_rows.resize(static_cast<std::size_t>(spec.n_classes));
  for (int c = 0; c < spec.n_classes; ++c) {
    const std::string label = synthetic_class_label(c);
    for (int i = 0; i < spec.n_images; ++i) {
      char image_id[64];
      std::snprintf(image_id, sizeof image_id, "img_%s_%04d", label.c_str(), i);
      for (const Rect& r : rects) {
        sk.class_rows[static_cast<std::size_t>(c)].push_back(sk.manifest.entries.size());
        sk.manifest.entries.push_back({image_id, r, label, label});
      }
    }
  }
  const auto rows = static_cast<Index>(sk.manifest.size());

  auto latent_rng = stream(spec.seed, kLatent);
  const Matrix final_latent = sparse_abs_gaussian(rows, spec.k_latent, spec.latent_rate, latent_rng);
  // Earlier layers swap some of the final layer's factors for unrelated ones:
  // the further from the head, the fewer factors survive.
  for (int l = 0; l < spec.n_layers; ++l) {
    Matrix latent = final_latent;
    const int replaced = std::min(spec.k_latent, 2 * (spec.n_layers - 1 - l));
    if (replaced > 0) {
      auto rng = stream(spec.seed, kLayerLatent, static_cast<std::uint64_t>(l));
      latent.leftCols(replaced) = sparse_abs_gaussian(rows, replaced, spec.latent_rate, rng);
    }
    sk.layer_latents.push_back(std::move(latent));
  }

  auto ind_rng = stream(spec.seed, kIndicator);
  std::bernoulli_distribution present(spec.plant_rate);
  sk.indicator = Vector::NullaryExpr(rows, [&] { return present(ind_rng) ? 1.0 : 0.0; });

  auto head_rng = stream(spec.seed, kHead);
  std::normal_distribution<double> gauss(0.0, 1.0);
  sk.head_latent = Matrix::NullaryExpr(spec.k_latent, spec.n_head_classes, [&] { return gauss(head_rng); });
  sk.head_bias = RowVector::NullaryExpr(spec.n_head_classes, [&] { return 0.1 * gauss(head_rng); });
  for (int c = 0; c < spec.n_head_classes; ++c) sk.head_labels.push_back(synthetic_class_label(c));
  return sk;
}

Bundle assemble(const SyntheticSpec& spec, const Skeleton& sk, const std::string& model_id,
                const std::vector<Matrix>& layer_activations, LinearHead head) {
  Bundle b;
  b.manifest = sk.manifest;
  b.manifest.model_id = model_id;
  for (int l = 0; l < spec.n_layers; ++l) {
    const Matrix& acts = layer_activations[static_cast<std::size_t>(l)];
    for (int c = 0; c < spec.n_classes; ++c) {
      ActivationMatrix am;
      am.model_id = model_id;
      am.layer_id = synthetic_layer_label(l);
      am.class_id = synthetic_class_label(c);
      const auto& rows = sk.class_rows[static_cast<std::size_t>(c)];
      am.data.resize(static_cast<Index>(rows.size()), acts.cols());
      for (std::size_t r = 0; r < rows.size(); ++r) {
        am.data.row(static_cast<Index>(r)) = acts.row(static_cast<Index>(rows[r]));
      }
      b.matrices.emplace(std::make_pair(am.layer_id, am.class_id), std::move(am));
    }
  }
  head.class_labels = sk.head_labels;
  b.manifest.head_classes = head.class_labels;
  b.head = std::move(head);
  return b;
}

struct ModelDraw {
  std::vector<Matrix> clean;  // per layer, before noise
  Matrix last_mixing;
};

ModelDraw draw_model(const SyntheticSpec& spec, const Skeleton& sk, int d, Stream mixing_stream) {
  ModelDraw out;
  for (int l = 0; l < spec.n_layers; ++l) {
    auto rng = stream(spec.seed, mixing_stream, static_cast<std::uint64_t>(l));
    Matrix mixing = abs_gaussian(spec.k_latent, d, rng);
    // Unit rows put every factor, and the plant, on one scale.
    mixing.rowwise().normalize();
    out.clean.push_back(sk.layer_latents[static_cast<std::size_t>(l)] * mixing);
    if (l + 1 == spec.n_layers) out.last_mixing = mixing;
  }
  return out;
}

std::vector<Matrix> noisy_layers(const SyntheticSpec& spec, const std::vector<Matrix>& clean,
                                 Stream noise_stream) {
  std::vector<Matrix> out;
  for (std::size_t l = 0; l < clean.size(); ++l) {
    auto rng = stream(spec.seed, noise_stream, l);
    out.push_back(add_noise_relu(clean[l], spec.noise_sigma, rng));
  }
  return out;
}

}  // namespace

std::string synthetic_class_label(int index) { return "c" + std::to_string(index); }
std::string synthetic_layer_label(int index) { return "layer" + std::to_string(index + 1); }

nlohmann::json synthetic_spec_to_json(const SyntheticSpec& s) {
  return {{"n_images", s.n_images},       {"patches_per_image", s.patches_per_image},
          {"d1", s.d1},                   {"d2", s.d2},
          {"k_latent", s.k_latent},       {"plant_strength", s.plant_strength},
          {"noise_sigma", s.noise_sigma}, {"seed", s.seed},
          {"n_classes", s.n_classes},     {"n_head_classes", s.n_head_classes},
          {"n_layers", s.n_layers},       {"latent_rate", s.latent_rate},
          {"plant_rate", s.plant_rate},   {"head_gain", s.head_gain},
          {"image_size", s.image_size},   {"patch_size", s.patch_size}};
}

SyntheticSpec synthetic_spec_from_json(const nlohmann::json& doc) {
  SyntheticSpec s;
  const nlohmann::json defaults = synthetic_spec_to_json(s);
  for (const auto& [key, _] : doc.items()) {
    if (!defaults.contains(key)) throw Error(ErrorCode::kSchemaViolation, "synth: unknown key \"" + key + "\"");
  }
  try {
    s.n_images = doc.value("n_images", s.n_images);
    s.patches_per_image = doc.value("patches_per_image", s.patches_per_image);
    s.d1 = doc.value("d1", s.d1);
    s.d2 = doc.value("d2", s.d2);
    s.k_latent = doc.value("k_latent", s.k_latent);
    s.plant_strength = doc.value("plant_strength", s.plant_strength);
    s.noise_sigma = doc.value("noise_sigma", s.noise_sigma);
    s.seed = doc.value("seed", s.seed);
    s.n_classes = doc.value("n_classes", s.n_classes);
    s.n_head_classes = doc.value("n_head_classes", s.n_head_classes);
    s.n_layers = doc.value("n_layers", s.n_layers);
    s.latent_rate = doc.value("latent_rate", s.latent_rate);
    s.plant_rate = doc.value("plant_rate", s.plant_rate);
    s.head_gain = doc.value("head_gain", s.head_gain);
    s.image_size = doc.value("image_size", s.image_size);
    s.patch_size = doc.value("patch_size", s.patch_size);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kSchemaViolation, std::string("synth: ") + e.what());
  }
  return s;
}

SyntheticPair generate_linear_pair(const SyntheticSpec& spec) {
  validate(spec);
  const Skeleton sk = make_skeleton(spec);
  const ModelDraw m1 = draw_model(spec, sk, spec.d1, kMixing1);
  const ModelDraw m2 = draw_model(spec, sk, spec.d2, kMixing2);

  // Model 1 is noise-free: A1 = L B1 exactly.
  std::vector<Matrix> acts1 = m1.clean;
  std::vector<Matrix> acts2 = noisy_layers(spec, m2.clean, kNoise2);

  LinearHead h1, h2;
  h1.weights = pseudo_inverse(m1.last_mixing) * sk.head_latent;
  h1.bias = sk.head_bias;
  h2.weights = pseudo_inverse(m2.last_mixing) * sk.head_latent;
  h2.bias = sk.head_bias;

  SyntheticPair out;
  out.model1 = assemble(spec, sk, "synthetic_1", acts1, std::move(h1));
  out.model2 = assemble(spec, sk, "synthetic_2", acts2, std::move(h2));
  out.latent = sk.layer_latents.back();
  out.mixing1 = m1.last_mixing;
  out.mixing2 = m2.last_mixing;
  return out;
}

SyntheticPair generate_planted_pair(const SyntheticSpec& spec) {
  validate(spec);
  const Skeleton sk = make_skeleton(spec);
  const ModelDraw ps = draw_model(spec, sk, spec.d1, kMixing1);
  const ModelDraw nc = draw_model(spec, sk, spec.d2, kMixing2);

  // Planted direction: non-negative, supported on a quarter of the features.
  auto prng = stream(spec.seed, kPlanted);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::bernoulli_distribution support(0.25);
  RowVector planted = RowVector::Zero(spec.d1);
  for (Index j = 0; j < spec.d1; ++j) {
    const bool on = support(prng);
    const double g = std::abs(gauss(prng));
    planted(j) = on ? g : 0.0;
  }
  if (planted.isZero(0.0)) planted(0) = 1.0;
  planted.normalize();

  std::vector<Matrix> clean_ps = ps.clean;
  clean_ps.back() += spec.plant_strength * sk.indicator * planted;
  std::vector<Matrix> acts_ps = noisy_layers(spec, clean_ps, kNoise1);
  std::vector<Matrix> acts_nc = noisy_layers(spec, nc.clean, kNoise2);

  // Both heads decode the shared factors identically; the ps head also reads
  // the planted coordinate for the first class.
  Matrix stacked(spec.k_latent + 1, spec.d1);
  stacked.topRows(spec.k_latent) = ps.last_mixing;
  stacked.row(spec.k_latent) = planted;
  Matrix decode(spec.k_latent + 1, spec.n_head_classes);
  decode.topRows(spec.k_latent) = sk.head_latent;
  decode.row(spec.k_latent).setZero();
  decode(spec.k_latent, 0) = spec.head_gain;

  LinearHead h_ps, h_nc;
  h_ps.weights = pseudo_inverse(stacked) * decode;
  h_ps.bias = sk.head_bias;
  h_nc.weights = pseudo_inverse(nc.last_mixing) * sk.head_latent;
  h_nc.bias = sk.head_bias;

  SyntheticPair out;
  out.model1 = assemble(spec, sk, "synthetic_ps", acts_ps, std::move(h_ps));
  out.model2 = assemble(spec, sk, "synthetic_nc", acts_nc, std::move(h_nc));
  out.latent = sk.layer_latents.back();
  out.indicator = sk.indicator;
  out.mixing1 = ps.last_mixing;
  out.mixing2 = nc.last_mixing;
  out.planted_direction = planted;
  return out;
}

}  // namespace consim
