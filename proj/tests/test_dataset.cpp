#include <doctest.h>

#include <fstream>
#include <set>

#include "icehrnet/dataset.hpp"
#include "icehrnet/error.hpp"
#include "test_util.hpp"

using namespace icehrnet;
namespace fs = std::filesystem;

namespace {

LabeledImage make_sample(const std::string& id, int h, int w, std::uint64_t seed, int classes = 2) {
  Rng rng(seed);
  LabeledImage s{id, RgbImage(h, w), Mask(h, w)};
  for (auto& p : s.image.pixels) p = static_cast<std::uint8_t>(rng.index(256));
  for (auto& l : s.mask.labels) l = static_cast<std::uint8_t>(rng.index(classes));
  return s;
}

Dataset make_dataset(int n) {
  Dataset d;
  d.manifest.name = "unit";
  d.manifest.num_classes = 2;
  d.manifest.class_names = {"a", "b"};
  for (int i = 0; i < n; ++i) {
    d.samples.push_back(make_sample("s" + std::to_string(i), 8, 12, i));
    d.manifest.split[d.samples.back().id] = i % 3 == 0 ? Split::kTrain : i % 3 == 1 ? Split::kVal : Split::kTest;
  }
  return d;
}

void write_text(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

}  // namespace

TEST_CASE("png round trip for images and masks") {
  const LabeledImage s = make_sample("x", 5, 7, 3, 4);
  CHECK(decode_png_rgb(encode_png(s.image)) == s.image);
  CHECK(decode_mask(encode_mask(s.mask)) == s.mask);
  // An RGB file is not a valid mask.
  CHECK_THROWS_AS(decode_mask(encode_png(s.image)), ValidationError);
  const std::vector<std::uint8_t> garbage{1, 2, 3, 4};
  CHECK_THROWS_AS(decode_png_rgb(garbage), ValidationError);
}

TEST_CASE("dataset save/load round trip and split-filtered loading") {
  testutil::TempDir dir("ds_roundtrip");
  const Dataset d = make_dataset(6);
  const fs::path manifest = save_dataset(d, dir.path());
  const Dataset back = load_dataset(manifest);
  REQUIRE(back.samples.size() == 6);
  for (std::size_t i = 0; i < 6; ++i) {
    CHECK(back.samples[i].image == d.samples[i].image);
    CHECK(back.samples[i].mask == d.samples[i].mask);
  }
  // Files outside the requested split are never opened.
  for (const auto& s : back.manifest.samples) {
    if (back.manifest.split.at(s.id) != Split::kTest) fs::remove(dir.path() / s.mask);
  }
  const Dataset test = load_dataset(manifest, Split::kTest);
  CHECK(test.samples.size() == 2);
  CHECK_THROWS_AS(load_dataset(manifest), IoError);
}

TEST_CASE("manifest structural errors") {
  testutil::TempDir dir("ds_errors");
  const fs::path p = dir / "manifest.json";
  CHECK_THROWS_AS(parse_manifest(dir / "missing.json"), IoError);
  write_text(p, "{not json");
  CHECK_THROWS_AS(parse_manifest(p), ValidationError);
  write_text(p, R"({"name":"x","num_classes":1,"class_names":["a"],"samples":[]})");
  CHECK_THROWS_AS(parse_manifest(p), ValidationError);
  write_text(p, R"({"name":"x","num_classes":2,"class_names":["a"],"samples":[]})");
  CHECK_THROWS_AS(parse_manifest(p), ValidationError);
  write_text(p, R"({"name":"x","num_classes":2,"class_names":["a","b"],"samples":[
      {"id":"a","image":"i.png","mask":"m.png"},{"id":"a","image":"j.png","mask":"n.png"}]})");
  CHECK_THROWS_WITH_AS(parse_manifest(p), doctest::Contains("duplicate sample id 'a'"), ValidationError);
  write_text(p, R"({"name":"x","num_classes":2,"class_names":["a","b"],"samples":[],"split":{"ghost":"train"}})");
  CHECK_THROWS_AS(parse_manifest(p), ValidationError);
  write_text(p, R"({"name":"x","num_classes":2,"class_names":["a","b"],"samples":[
      {"id":"a","image":"i.png","mask":"m.png"}],"split":{"a":"holdout"}})");
  CHECK_THROWS_AS(parse_manifest(p), ValidationError);
}

TEST_CASE("sample validation names the offending sample") {
  LabeledImage s = make_sample("bad_one", 4, 4, 1);
  s.mask.at(2, 2) = 5;
  CHECK_THROWS_WITH_AS(validate_sample(s, 2), doctest::Contains("bad_one"), ValidationError);
  s.mask.at(2, 2) = 255;
  CHECK_NOTHROW(validate_sample(s, 2));
  s.mask = Mask(4, 5);
  CHECK_THROWS_WITH_AS(validate_sample(s, 2), doctest::Contains("does not match"), ValidationError);

  testutil::TempDir dir("ds_sample");
  Dataset d = make_dataset(3);
  const fs::path manifest = save_dataset(d, dir.path());
  write_mask(dir / "masks/s1.png", Mask(8, 12, 9));
  CHECK_THROWS_WITH_AS(load_dataset(manifest), doctest::Contains("s1"), ValidationError);
  write_image(dir / "masks/s1.png", RgbImage(8, 12));
  CHECK_THROWS_WITH_AS(load_dataset(manifest), doctest::Contains("s1"), ValidationError);
  fs::remove(dir / "images/s2.png");
  CHECK_THROWS_AS(load_dataset(manifest, Split::kTest), IoError);
}

TEST_CASE("split counts follow floor of ratio times N") {
  DatasetManifest m;
  m.num_classes = 2;
  for (int i = 0; i < 100; ++i) m.samples.push_back({"s" + std::to_string(i), "", ""});
  const DatasetManifest s = split_dataset(m, {0.29, 0.31, 0.40}, 5);
  CHECK(s.ids_in(Split::kTrain).size() == 29);
  CHECK(s.ids_in(Split::kVal).size() == 31);
  CHECK(s.ids_in(Split::kTest).size() == 40);
  CHECK(split_dataset(m, {0.29, 0.31, 0.40}, 5).split == s.split);
  CHECK(split_dataset(m, {0.29, 0.31, 0.40}, 6).split != s.split);

  m.samples.resize(7);
  const DatasetManifest t = split_dataset(m, {0.5, 0.25, 0.25}, 1);
  CHECK(t.ids_in(Split::kTrain).size() == 3);
  CHECK(t.ids_in(Split::kVal).size() == 1);
  CHECK(t.ids_in(Split::kTest).size() == 3);

  CHECK_THROWS_AS(split_dataset(m, {0.5, 0.5, 0.5}, 1), ValidationError);
  CHECK_THROWS_AS(split_dataset(m, {1.2, -0.2, 0.0}, 1), ValidationError);
  m.samples.resize(2);
  CHECK_THROWS_AS(split_dataset(m, {0.5, 0.25, 0.25}, 1), ValidationError);
}

TEST_CASE("augmentation keeps labels valid and is seed-deterministic") {
  const LabeledImage s = make_sample("a", 32, 40, 9, 3);
  const auto ops = default_augment_ops(24, 24);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const LabeledImage a = augment_sample(s, ops, seed);
    CHECK(a.height() == 24);
    CHECK(a.width() == 24);
    CHECK_NOTHROW(validate_sample(a, 3));
    const LabeledImage b = augment_sample(s, ops, seed);
    CHECK(a.image == b.image);
    CHECK(a.mask == b.mask);
  }
}

TEST_CASE("flip twice is the identity and masks are never interpolated") {
  const LabeledImage s = make_sample("a", 6, 9, 2, 3);
  const std::vector<AugmentOp> flip{AugmentOp::random_flip(1.0)};
  const LabeledImage once = augment_sample(s, flip, 0);
  CHECK(once.mask.at(0, 0) == s.mask.at(0, 8));
  const LabeledImage twice = augment_sample(once, flip, 0);
  CHECK(twice.image == s.image);
  CHECK(twice.mask == s.mask);

  const LabeledImage scaled = augment_sample(s, {AugmentOp::random_scale(1.7, 1.7)}, 0);
  std::set<int> labels(scaled.mask.labels.begin(), scaled.mask.labels.end());
  for (int l : labels) CHECK(l < 3);
}

TEST_CASE("expansion puts originals first and rejects oversize crops") {
  std::vector<LabeledImage> in{make_sample("a", 16, 16, 1), make_sample("b", 16, 16, 2)};
  const auto out = augment_expand(in, {AugmentOp::random_flip(), AugmentOp::random_crop(12, 12)}, 2, 4);
  REQUIRE(out.size() == 6);
  CHECK(out[0].image == in[0].image);
  CHECK(out[1].image == in[1].image);
  CHECK(out[2].id == "a_aug1");
  CHECK(out[5].id == "b_aug2");
  CHECK_THROWS_WITH_AS(augment_expand(in, {AugmentOp::random_crop(20, 12)}, 1, 0), doctest::Contains("'a'"),
                       ValidationError);
  CHECK_THROWS_AS(augment_expand(in, {}, -1, 0), ValidationError);
  CHECK_THROWS_AS(AugmentOp::random_scale(0.0, 1.0), ValidationError);
  CHECK_THROWS_AS(AugmentOp::random_flip(1.5), ValidationError);
}

TEST_CASE("rotation pads with the ignore label") {
  LabeledImage s = make_sample("r", 20, 20, 4);
  const LabeledImage r = augment_sample(s, {AugmentOp::random_rotate(45, 45)}, 0);
  CHECK(r.mask.at(0, 0) == kIgnoreValue);
  CHECK(r.mask.at(10, 10) != kIgnoreValue);
}
