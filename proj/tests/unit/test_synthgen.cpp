#include <doctest.h>

#include <nlohmann/json.hpp>

#include "consim/error.hpp"
#include "consim/synthgen.hpp"

using namespace consim;

namespace {

SyntheticSpec small() {
  SyntheticSpec s;
  s.n_images = 10;
  s.d1 = 16;
  s.d2 = 12;
  s.k_latent = 4;
  return s;
}

}  // namespace

TEST_SUITE("synthgen") {
  TEST_CASE("shapes, labels and head dims") {
    SyntheticSpec s = small();
    s.n_classes = 2;
    s.n_layers = 3;
    const SyntheticPair p = generate_planted_pair(s);
    CHECK(p.model1.manifest.size() == 2 * 10 * 16);
    CHECK(p.model1.layers() == std::vector<std::string>{"layer1", "layer2", "layer3"});
    CHECK(p.model1.classes() == std::vector<std::string>{"c0", "c1"});
    CHECK(p.model1.at("layer3", "c1").data.rows() == 160);
    CHECK(p.model1.at("layer3", "c1").data.cols() == 16);
    CHECK(p.model2.at("layer3", "c1").data.cols() == 12);
    REQUIRE(p.model1.head.has_value());
    CHECK(p.model1.head->input_dim() == 16);
    CHECK(p.model2.head->input_dim() == 12);
    CHECK(p.model1.head->num_classes() == 4);
    CHECK(p.model1.at("layer1", "c0").data.minCoeff() >= 0.0);
    CHECK(p.planted_direction.norm() == doctest::Approx(1.0));
    CHECK(p.indicator.size() == 320);
  }

  TEST_CASE("seeded determinism") {
    const SyntheticPair a = generate_planted_pair(small());
    const SyntheticPair b = generate_planted_pair(small());
    CHECK(a.model1.at("layer1", "c0").data == b.model1.at("layer1", "c0").data);
    CHECK(a.model2.head->weights == b.model2.head->weights);
    SyntheticSpec other = small();
    other.seed = 2;
    CHECK(generate_planted_pair(other).model1.at("layer1", "c0").data != a.model1.at("layer1", "c0").data);
  }

  TEST_CASE("plant strength only touches the planted model") {
    SyntheticSpec off = small();
    off.plant_strength = 0.0;
    const SyntheticPair a = generate_planted_pair(small());
    const SyntheticPair b = generate_planted_pair(off);
    CHECK(a.model2.at("layer1", "c0").data == b.model2.at("layer1", "c0").data);
    CHECK(a.model1.at("layer1", "c0").data != b.model1.at("layer1", "c0").data);
    CHECK(a.indicator == b.indicator);
  }

  TEST_CASE("the planted head reads the planted direction") {
    SyntheticSpec s = small();
    s.noise_sigma = 0.0;
    const SyntheticPair p = generate_planted_pair(s);
    const RowVector z = p.planted_direction * p.model1.head->weights;
    CHECK(z(0) == doctest::Approx(s.head_gain));
    CHECK(std::abs(z(1)) < 1e-9);
  }

  TEST_CASE("spec json round trip and validation") {
    SyntheticSpec s = small();
    s.plant_rate = 0.3;
    const SyntheticSpec back = synthetic_spec_from_json(synthetic_spec_to_json(s));
    CHECK(back.plant_rate == 0.3);
    CHECK(back.d2 == 12);
    SyntheticSpec bad = small();
    bad.patches_per_image = 15;
    CHECK_THROWS_AS(generate_linear_pair(bad), Error);
    bad = small();
    bad.k_latent = 12;
    CHECK_THROWS_AS(generate_linear_pair(bad), Error);
  }
}
