#include <doctest.h>

#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>

#include "consim/error.hpp"
#include "consim/explain.hpp"
#include "consim/image.hpp"
#include "consim/pipeline.hpp"
#include "helpers.hpp"

using namespace consim;
using nlohmann::json;

namespace {

// Four images x two patches; image i, patch p at row 2i + p.
PatchManifest small_manifest() {
  PatchManifest m;
  m.image_size = 8;
  m.patch_size = 4;
  for (int i = 0; i < 4; ++i) {
    for (int p = 0; p < 2; ++p) m.entries.push_back({"im" + std::to_string(i), {4 * p, 0, 4, 4}, "c", "c"});
  }
  return m;
}

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Index>(v.size()));
  Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

}  // namespace

TEST_SUITE("explain") {
  TEST_CASE("top patches: one per image, ranked, ties by row") {
    const auto refs = top_k_patches(vec({0.1, 0.9, 0.5, 0.5, 0.9, 0.2, 0.0, 0.3}), small_manifest(), 3);
    REQUIRE(refs.size() == 3);
    CHECK(refs[0].row == 1);
    CHECK(refs[1].row == 4);
    CHECK(refs[2].row == 2);
    CHECK(refs[2].image_id == "im1");
  }

  TEST_CASE("over/under predictions skip the top real images") {
    const Vector u_true = vec({5, 0, 4, 0, 0, 0, 1, 0});
    const Vector u_pred = vec({0, 9, 4, 0, 2, 0, 0, 0});
    const OverUnder ou = over_under_predicted(u_true, u_pred, small_manifest(), 5, 1);
    CHECK(ou.excluded_images == std::vector<std::string>{"im0"});
    REQUIRE_FALSE(ou.over.empty());
    CHECK(ou.over[0].image_id == "im2");  // im0's +9 residual is excluded
    CHECK(ou.under[0].image_id == "im3");
    for (const auto& r : ou.over) CHECK(r.image_id != "im0");
    CHECK_FALSE(ou.zero_residual);

    const OverUnder flat = over_under_predicted(u_true, u_true, small_manifest(), 5, 0);
    CHECK(flat.zero_residual);
  }

  TEST_CASE("report documents validate and are written with an index") {
    testing::TempDir dir("report");
    const PatchManifest m = small_manifest();
    const Vector u = vec({1, 2, 3, 4, 5, 6, 7, 8});
    ReportEntry e;
    e.explanation = explain_concept("c", 1, 0, u, u.reverse(), m, 2, 1);
    SimilarityRecord s;
    s.class_id = "c";
    s.delta_pearson = 0.25;
    e.similarity = s;
    const json doc = report_to_json(e);
    CHECK(validate_report(doc).empty());

    json broken = doc;
    broken.erase("top_real");
    CHECK_FALSE(validate_report(broken).empty());

    const auto paths = emit_report({e, e}, dir.path().string());
    REQUIRE(paths.size() == 2);
    std::ifstream in(dir / "index.json");
    const json index = json::parse(in);
    CHECK(validate_report_index(index).empty());
    CHECK(index["reports"].size() == 2);
    CHECK(emit_report({}, (dir / "empty").string()).empty());
    std::ifstream empty(dir / "empty" / "index.json");
    CHECK(json::parse(empty)["reports"].empty());
  }

  TEST_CASE("collage tiles come from the right rects") {
    testing::TempDir dir("collage");
    // 8x8 source: left half white, right half black.
    Image src(8, 8);
    for (int y = 0; y < 8; ++y) {
      for (int x = 0; x < 4; ++x) std::fill(src.at(x, y), src.at(x, y) + 3, 255);
    }
    write_png((dir / "im0.png").string(), src);
    ConceptExplanation ex;
    ex.class_id = "c";
    ex.top_real = {{0, "im0", {0, 0, 4, 4}, 1.0}};
    ex.over_predicted = {{1, "im0", {4, 0, 4, 4}, 1.0}};
    CollageOptions opt;
    opt.grid = 2;
    opt.image_size = 8;
    opt.patch_size = 4;
    const CollageFiles files = emit_collage_bundle(ex, dir.path().string(), (dir / "out").string(), opt);
    const Image ic1 = read_png(files.top_real_png);
    const Image ic2 = read_png(files.over_predicted_png);
    CHECK(ic1.width == 8);
    CHECK(ic1.at(1, 1)[0] == 255);  // first tile is the white patch
    CHECK(ic1.at(5, 1)[0] == 0);    // second tile is empty
    CHECK(ic2.at(1, 1)[0] == 0);    // the black patch
    std::ifstream prompt(files.prompt_txt);
    const std::string text((std::istreambuf_iterator<char>(prompt)), {});
    CHECK(text.find("Semantically different") != std::string::npos);

    ex.top_real[0].image_id = "missing";
    try {
      emit_collage_bundle(ex, dir.path().string(), (dir / "out2").string(), opt);
      FAIL("accepted");
    } catch (const Error& e) {
      CHECK(std::string(e.what()).find("missing") != std::string::npos);
    }
  }

  TEST_CASE("percentile filter arithmetic") {
    std::vector<double> v;
    for (int i = 0; i < 20; ++i) v.push_back(static_cast<double>((i * 7) % 20));
    const auto keep = select_above_percentile(v, 75.0);
    REQUIRE(keep.size() == 5);
    for (std::size_t i : keep) CHECK(v[i] >= 15.0);
    CHECK(select_above_percentile(v, 0.0).size() == 20);
    CHECK(select_above_percentile({}, 50.0).empty());
    CHECK(select_above_percentile(v, 99.0).size() == 1);
  }
}
