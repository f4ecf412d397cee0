#include <doctest.h>

#include <nlohmann/json.hpp>

#include "consim/error.hpp"
#include "consim/manifest.hpp"

using namespace consim;
using nlohmann::json;

namespace {

PatchManifest make(std::initializer_list<PatchEntry> entries) {
  PatchManifest m;
  m.image_size = 224;
  m.patch_size = 64;
  m.model_id = "m";
  m.entries = entries;
  return m;
}

std::vector<int> xs(const std::vector<Rect>& rects) {
  std::vector<int> out;
  for (const auto& r : rects) {
    if (r.y == 0) out.push_back(r.x);
  }
  return out;
}

}  // namespace

TEST_SUITE("manifest") {
  TEST_CASE("patch_grid offsets") {
    const auto g = patch_grid(224, 64, 4);
    REQUIRE(g.size() == 16);
    CHECK(xs(g) == std::vector<int>{0, 53, 107, 160});
    CHECK(g[4].y == 53);  // row-major: y outer
    CHECK(g.back().x + g.back().w == 224);
    CHECK(xs(patch_grid(10, 4, 3)) == std::vector<int>{0, 3, 6});
    CHECK(patch_grid(64, 64, 1).size() == 1);
    CHECK_THROWS_AS(patch_grid(32, 64, 2), Error);
  }

  TEST_CASE("schema round trip and strictness") {
    const json doc = {{"image_size", 224},
                      {"patch_size", 64},
                      {"model_id", "resnet"},
                      {"entries",
                       {{{"image_id", "a"},
                         {"rect", {0, 0, 64, 64}},
                         {"class_id", "dog"},
                         {"predicted_class", "dog"}},
                        {{"image_id", "b"},
                         {"rect", {53, 0, 64, 64}},
                         {"class_id", "dog"},
                         {"predicted_class", nullptr}}}}};
    const PatchManifest m = manifest_from_json(doc);
    REQUIRE(m.size() == 2);
    CHECK(m.entries[1].rect.x == 53);
    CHECK(m.entries[1].predicted_class.empty());
    CHECK(manifest_from_json(manifest_to_json(m)).entries[0].image_id == "a");

    json extra = doc;
    extra["colour"] = 1;
    CHECK_THROWS_AS(manifest_from_json(extra), Error);
    json short_rect = doc;
    short_rect["entries"][0]["rect"] = {0, 0, 64};
    try {
      manifest_from_json(short_rect);
      FAIL("accepted");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::kSchemaViolation);
      CHECK(std::string(e.what()).find("rect") != std::string::npos);
    }
  }

  TEST_CASE("union is sorted, deduplicated, commutative and idempotent") {
    const PatchManifest a = make({{"b", {0, 0, 64, 64}, "c", "c"}, {"a", {53, 0, 64, 64}, "c", "c"}});
    const PatchManifest b = make({{"a", {53, 0, 64, 64}, "c", "c"}, {"a", {0, 0, 64, 64}, "c", "c"}});
    const PatchManifest u = union_image_sets(a, b);
    REQUIRE(u.size() == 3);
    CHECK(u.entries[0].image_id == "a");
    CHECK(u.entries[0].rect.x == 0);
    CHECK(u.entries[1].rect.x == 53);
    CHECK(u.entries[2].image_id == "b");

    const PatchManifest v = union_image_sets(b, a);
    REQUIRE(v.size() == u.size());
    for (std::size_t i = 0; i < u.size(); ++i) {
      CHECK(v.entries[i].image_id == u.entries[i].image_id);
      CHECK(v.entries[i].rect == u.entries[i].rect);
    }
    CHECK(union_image_sets(u, u).size() == u.size());
  }

  TEST_CASE("proposals follow predictions, with a label fallback") {
    const PatchManifest m = make({{"a", {0, 0, 64, 64}, "dog", "dog"},
                                  {"b", {0, 0, 64, 64}, "dog", "cat"},
                                  {"c", {0, 0, 64, 64}, "cat", "cat"}});
    const ProposalSelection dog = select_proposals(m, "dog");
    CHECK(dog.rows == std::vector<std::size_t>{0});
    CHECK_FALSE(dog.used_label_fallback);

    const PatchManifest unlabeled = make({{"a", {0, 0, 64, 64}, "dog", ""}, {"b", {0, 0, 64, 64}, "dog", ""}});
    const ProposalSelection fb = select_proposals(unlabeled, "dog");
    CHECK(fb.rows.size() == 2);
    CHECK(fb.used_label_fallback);
  }
}
