#include <doctest.h>

#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>

#include "consim/error.hpp"
#include "consim/pipeline.hpp"
#include "consim/zip.hpp"
#include "helpers.hpp"

using namespace consim;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

PipelineConfig small_run(const testing::TempDir& dir) {
  PipelineConfig c;
  SyntheticSpec s;
  s.n_images = 20;
  s.d1 = 16;
  s.d2 = 16;
  s.k_latent = 4;
  c.synth = s;
  c.k = 4;
  c.out = dir.path().string();
  c.model1 = {(dir / "synth/model1.npz").string(), (dir / "synth/model1.json").string()};
  c.model2 = {(dir / "synth/model2.npz").string(), (dir / "synth/model2.json").string()};
  return c;
}

json load(const fs::path& p) {
  std::ifstream in(p);
  return json::parse(in);
}

}  // namespace

TEST_SUITE("pipeline") {
  TEST_CASE("config defaults and round trip") {
    const PipelineConfig d;
    CHECK(d.k == 10);
    CHECK(d.lambda == 0.1);
    CHECK(d.folds == 5);
    CHECK(d.cig_steps == 30);
    CHECK(d.top_n == 10);
    CHECK(d.exclude_top == 10);

    PipelineConfig c;
    c.k = 7;
    c.layers1 = {"a", "b"};
    c.kl_percentile = 75;
    c.synth = SyntheticSpec{};
    const json doc = config_to_json(c);
    CHECK(config_to_json(config_from_json(doc)) == doc);

    json typo = doc;
    typo["lamda"] = 0.5;
    CHECK_THROWS_AS(config_from_json(typo), Error);
    json bad = doc;
    bad["k"] = 0;
    CHECK_THROWS_AS(config_from_json(bad), Error);
    CHECK(config_from_json(json::object()).k == 10);
  }

  TEST_CASE("stages run, cache and refuse to skip ahead") {
    testing::TempDir dir("pipeline");
    const PipelineConfig c = small_run(dir);
    cmd_synth(c);

    try {
      cmd_compare(c);
      FAIL("compare ran without decompositions");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::kMissingStage);
    }
    CHECK_THROWS_AS(cmd_report(c), Error);

    CHECK(cmd_extract(c).computed == 2);
    const StageStats again = cmd_extract(c);
    CHECK(again.computed == 0);
    CHECK(again.cached == 2);

    CHECK(cmd_compare(c).computed == 1);
    const json results = load(dir / "compare/results.json");
    CHECK(results["records"].size() == 8);
    CHECK(results["replacement"].size() == 8);
    CHECK(cmd_compare(c).cached == 1);

    CHECK(cmd_layerwise(c).computed == 1);
    CHECK(fs::exists(dir / "layerwise/mmcs_pearson.csv"));

    CHECK(cmd_report(c).computed == 8);
    CHECK(load(dir / "report/index.json")["reports"].size() == 8);

    // Changing a compare knob invalidates compare but not extract.
    PipelineConfig c2 = c;
    c2.lambda = 0.2;
    CHECK(cmd_extract(c2).cached == 2);
    CHECK(cmd_compare(c2).computed == 1);
    PipelineConfig c3 = c2;
    c3.kl_percentile = 75;
    CHECK(cmd_report(c3).computed == 2);
  }

  TEST_CASE("self-comparison") {
    testing::TempDir dir("selfcmp");
    PipelineConfig c = small_run(dir);
    cmd_synth(c);
    c.model2 = c.model1;
    cmd_extract(c);
    cmd_compare(c);
    for (const auto& r : load(dir / "compare/results.json")["records"]) {
      CHECK(std::abs(r["delta_pearson"].get<double>()) <= 1e-6);
    }
    cmd_layerwise(c);
    const json m = load(dir / "layerwise/mmcs.json");
    CHECK(m["pearson"][0][0].get<double>() == doctest::Approx(1.0));
  }

  TEST_CASE("synth writes a runnable config") {
    testing::TempDir dir("synthcfg");
    cmd_synth(small_run(dir));
    const PipelineConfig c = read_config((dir / "config.json").string());
    CHECK(fs::equivalent(c.model1.bundle, dir / "synth/model1.npz"));
    CHECK(fs::equivalent(c.out, dir.path()));
    CHECK(c.synth.has_value());
  }
}
