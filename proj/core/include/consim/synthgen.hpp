#pragma once

#include <nlohmann/json_fwd.hpp>
#include <cstdint>
#include <string>

#include "consim/bundle.hpp"

namespace consim {

struct SyntheticSpec {
  int n_images = 100;  // per class
  int patches_per_image = 16;  // must be a perfect square
  int d1 = 64;
  int d2 = 64;
  int k_latent = 8;
  double plant_strength = 5.0;
  double noise_sigma = 0.1;
  std::uint64_t seed = 1;

  int n_classes = 1;       // classes present in the bundles
  int n_head_classes = 4;  // classifier outputs (>= n_classes, >= 2)
  int n_layers = 1;        // the last layer feeds the head
  double latent_rate = 0.5;  // probability a latent factor is active in a patch
  double plant_rate = 0.5;   // probability the planted feature is present
  double head_gain = 1.0;    // planted-feature logit weight in the ps head
  int image_size = 224;
  int patch_size = 64;
};

nlohmann::json synthetic_spec_to_json(const SyntheticSpec& spec);
SyntheticSpec synthetic_spec_from_json(const nlohmann::json& doc);

struct SyntheticPair {
  Bundle model1;
  Bundle model2;
  Matrix latent;            // rows x k_latent, last layer, all classes stacked
  Vector indicator;         // planted feature per row (planted pair only)
  Matrix mixing1, mixing2;  // k_latent x d, last layer
  RowVector planted_direction;  // 1 x d1, unit norm (planted pair only)
};

// A1 = L B1, A2 = L B2 + noise, both clipped at zero so NNMF applies.
SyntheticPair generate_linear_pair(const SyntheticSpec& spec);

// Model 1 ("ps") carries an extra direction, scaled by plant_strength, on the
// patches flagged by a 50% indicator, and its head reads that direction for
// the first class. Model 2 ("nc") never sees the indicator.
SyntheticPair generate_planted_pair(const SyntheticSpec& spec);

std::string synthetic_class_label(int index);
std::string synthetic_layer_label(int index);

}  // namespace consim
