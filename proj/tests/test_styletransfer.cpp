#include <doctest.h>

#include <cmath>
#include <set>

#include "icehrnet/error.hpp"
#include "icehrnet/styletransfer.hpp"
#include "test_util.hpp"

using namespace icehrnet;
using testutil::random_tensor;

namespace {

RgbImage random_image(int h, int w, Rng& rng, int lo = 0, int hi = 255) {
  RgbImage img(h, w);
  for (auto& p : img.pixels) p = static_cast<std::uint8_t>(lo + rng.index(hi - lo + 1));
  return img;
}

RgbImage flat_image(int h, int w, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  RgbImage img(h, w);
  for (std::size_t i = 0; i < img.pixel_count(); ++i) {
    img.pixels[i * 3] = r;
    img.pixels[i * 3 + 1] = g;
    img.pixels[i * 3 + 2] = b;
  }
  return img;
}

StyleBank two_class_bank(Rng& rng) {
  StyleBank bank;
  bank.styles[0] = {random_image(16, 16, rng, 0, 80), random_image(20, 18, rng, 10, 60)};
  bank.styles[1] = {random_image(16, 16, rng, 170, 255)};
  bank.patch_names[0] = {"dark_a", "dark_b"};
  bank.patch_names[1] = {"bright"};
  bank.global_patch = random_image(32, 32, rng);
  bank.global_patch_name = "whole";
  return bank;
}

}  // namespace

TEST_CASE("adain matches style moments") {
  Rng rng(21);
  for (int t = 0; t < 20; ++t) {
    const Tensor c = random_tensor({1, 4, 7, 9}, rng, 3.0);
    const Tensor s = random_tensor({1, 4, 5, 6}, rng, 0.5);
    const ChannelStats want = channel_stats(s);
    const ChannelStats got = channel_stats(adain(c, s));
    for (int k = 0; k < 4; ++k) {
      CHECK(got.mean[k] == doctest::Approx(want.mean[k]).epsilon(1e-9));
      CHECK(std::abs(got.std[k] - want.std[k]) < 1e-5);
    }
  }
}

TEST_CASE("adain of an input with itself is the identity") {
  Rng rng(5);
  const Tensor c = random_tensor({1, 3, 6, 6}, rng, 2.0);
  const Tensor out = adain(c, c);
  for (std::size_t i = 0; i < c.size(); ++i) CHECK(std::abs(out[i] - c[i]) < 1e-5);
}

TEST_CASE("adain of a constant channel yields the style mean") {
  Tensor c({1, 1, 3, 3}, 7.0);
  Tensor s({1, 1, 2, 2});
  s[0] = 1;
  s[1] = 3;
  s[2] = 1;
  s[3] = 3;
  const Tensor out = adain(c, s);
  for (double v : out.values()) CHECK(v == doctest::Approx(2.0));
}

TEST_CASE("adain argument errors") {
  CHECK_THROWS_AS(adain(Tensor({1, 2, 2, 2}), Tensor({1, 3, 2, 2})), ValidationError);
  CHECK_THROWS_AS(adain(Tensor({1, 2, 2, 2}), Tensor({1, 2, 2, 2}), 0.0), ValidationError);
  CHECK_THROWS_AS(channel_stats(Tensor({2, 2, 2, 2})), ValidationError);
}

TEST_CASE("color space conversions round trip exactly on 8-bit values") {
  Rng rng(8);
  const RgbImage img = random_image(9, 11, rng);
  for (ColorSpace cs : {ColorSpace::kOpponent, ColorSpace::kRgb}) {
    CHECK(color_space_to_image(image_to_color_space(img, cs), cs) == img);
  }
}

TEST_CASE("statistical stylization of a flat gray image gives the style mean color") {
  Rng rng(2);
  const RgbImage gray = flat_image(8, 8, 128, 128, 128);
  const RgbImage style = flat_image(16, 16, 40, 90, 200);
  const RgbImage out = stylize_image(gray, style, TransferBackend::statistical());
  for (std::size_t i = 0; i < out.pixel_count(); ++i) {
    CHECK(out.pixels[i * 3] == 40);
    CHECK(out.pixels[i * 3 + 1] == 90);
    CHECK(out.pixels[i * 3 + 2] == 200);
  }
}

TEST_CASE("stylized luminance moments follow the style patch") {
  Rng rng(4);
  const RgbImage content = random_image(32, 32, rng, 60, 200);
  const RgbImage style = random_image(24, 24, rng, 100, 140);
  const RgbImage out = stylize_image(content, style, TransferBackend::statistical());
  const ChannelStats want = channel_stats(image_to_color_space(style, ColorSpace::kOpponent));
  const ChannelStats got = channel_stats(image_to_color_space(out, ColorSpace::kOpponent));
  // 8-bit rounding bounds the error.
  CHECK(std::abs(got.mean[0] - want.mean[0]) < 1.0);
  CHECK(std::abs(got.std[0] - want.std[0]) < 1.0);
}

TEST_CASE("per-class compositing picks each pixel from its class rendering") {
  Rng rng(13);
  const StyleBank bank = two_class_bank(rng);
  const TransferBackend backend = TransferBackend::statistical();
  LabeledImage s{"sample_7", random_image(24, 20, rng), Mask(24, 20)};
  for (auto& l : s.mask.labels) l = rng.bernoulli(0.1) ? 255 : static_cast<std::uint8_t>(rng.index(2));
  const StylizedSample out = stylize_per_class(s, bank, backend, 3);
  for (int cls = 0; cls < 2; ++cls) {
    const std::size_t k = choose_patch(bank, cls, s.id, 3);
    const RgbImage ref = stylize_image(s.image, bank.styles.at(cls)[k], backend);
    for (std::size_t i = 0; i < s.mask.pixel_count(); ++i) {
      if (s.mask.labels[i] != cls) continue;
      for (int c = 0; c < 3; ++c) REQUIRE(out.sample.image.pixels[i * 3 + c] == ref.pixels[i * 3 + c]);
    }
    CHECK(out.styles_used.at(cls) == bank.patch_names.at(cls)[k]);
  }
  for (std::size_t i = 0; i < s.mask.pixel_count(); ++i) {
    if (s.mask.labels[i] != 255) continue;
    for (int c = 0; c < 3; ++c) CHECK(out.sample.image.pixels[i * 3 + c] == s.image.pixels[i * 3 + c]);
  }
  CHECK(out.sample.mask == s.mask);
}

TEST_CASE("patch choice is deterministic per sample and seed") {
  Rng rng(1);
  const StyleBank bank = two_class_bank(rng);
  CHECK(choose_patch(bank, 0, "a", 5) == choose_patch(bank, 0, "a", 5));
  std::set<std::size_t> seen;
  for (int i = 0; i < 40; ++i) seen.insert(choose_patch(bank, 0, "id" + std::to_string(i), 5));
  CHECK(seen.size() == 2);
  CHECK_THROWS_AS(choose_patch(bank, 4, "a", 5), ValidationError);
}

TEST_CASE("missing bank entries and class assignment") {
  Rng rng(3);
  StyleBank bank = two_class_bank(rng);
  bank.styles.erase(1);
  LabeledImage s{"lonely", random_image(8, 8, rng), Mask(8, 8, 1)};
  CHECK_THROWS_WITH_AS(stylize_per_class(s, bank, TransferBackend::statistical(), 0), doctest::Contains("class 1"),
                       ValidationError);

  const auto a = assign_classes(5, 2);
  CHECK(a.at(0) == 0);
  CHECK(a.at(3) == 1);
  CHECK(a.at(4) == 0);
  CHECK_THROWS_AS(assign_classes(1, 2), ValidationError);
  CHECK_THROWS_AS(assign_classes(2, 2, std::map<int, int>{{0, 0}}), ValidationError);
  CHECK_THROWS_AS(assign_classes(2, 2, std::map<int, int>{{0, 0}, {1, 2}}), ValidationError);
  CHECK(assign_classes(2, 2, std::map<int, int>{{0, 1}, {1, 0}}).at(0) == 1);
}

TEST_CASE("dataset stylization modes") {
  Rng rng(6);
  StyleBank bank = two_class_bank(rng);
  Dataset d;
  d.manifest.num_classes = 2;
  d.manifest.class_names = {"a", "b"};
  for (int i = 0; i < 3; ++i) {
    LabeledImage s{"d" + std::to_string(i), random_image(16, 16, rng), Mask(16, 16)};
    for (auto& l : s.mask.labels) l = static_cast<std::uint8_t>(rng.index(2));
    d.samples.push_back(s);
  }
  const auto backend = TransferBackend::statistical();
  const Dataset none = stylize_dataset(d, bank, StyleMode::kNone, backend, 0);
  CHECK(none.samples[1].image == d.samples[1].image);
  const Dataset conv = stylize_dataset(d, bank, StyleMode::kConventional, backend, 0);
  CHECK(conv.samples[1].image == stylize_image(d.samples[1].image, *bank.global_patch, backend));
  const Dataset adv = stylize_dataset(d, bank, StyleMode::kAdvanced, backend, 0);
  CHECK(adv.samples[2].image == stylize_per_class(d.samples[2], bank, backend, 0).sample.image);
  bank.global_patch.reset();
  CHECK_THROWS_AS(stylize_dataset(d, bank, StyleMode::kConventional, backend, 0), ValidationError);
}

TEST_CASE("style bank persistence and validation") {
  Rng rng(9);
  testutil::TempDir dir("bank");
  const StyleBank bank = two_class_bank(rng);
  const auto path = save_style_bank(bank, dir.path());
  const StyleBank back = load_style_bank(path);
  CHECK(back.styles.at(0) == bank.styles.at(0));
  CHECK(back.styles.at(1) == bank.styles.at(1));
  CHECK(*back.global_patch == *bank.global_patch);

  StyleBank tiny;
  tiny.styles[0] = {random_image(8, 8, rng)};
  CHECK_THROWS_AS(tiny.validate(), ValidationError);
  CHECK_THROWS_AS(load_style_bank(dir / "nope.json"), IoError);
}

TEST_CASE("neural backend: missing weights and identity-like network") {
  CHECK_THROWS_WITH_AS(NeuralWeights::load("/nonexistent/weights.bin"), doctest::Contains("missing"), ValidationError);
  TransferBackend b;
  b.kind = BackendKind::kNeural;
  CHECK_THROWS_AS(b.validate(), ValidationError);

  // One 1x1 encoder layer with identity weights and a 1x1 identity decoder:
  // with alpha 0 the content passes through unchanged.
  NeuralWeights w;
  Tensor eye({3, 3, 1, 1});
  for (int i = 0; i < 3; ++i) eye.at(i, i, 0, 0) = 1.0;
  w.encoder.push_back({eye, Tensor({1, 3, 1, 1})});
  w.decoder.push_back({eye, Tensor({1, 3, 1, 1})});
  testutil::TempDir dir("neural");
  w.save(dir / "w.bin");
  auto loaded = std::make_shared<const NeuralWeights>(NeuralWeights::load(dir / "w.bin"));
  Rng rng(2);
  const RgbImage content = random_image(8, 8, rng), style = random_image(16, 16, rng);
  CHECK(stylize_image(content, style, TransferBackend::neural_from(loaded, 0.0)) == content);
  // With alpha 1 the output moments (in RGB, all channels positive) follow the style.
  const RgbImage full = stylize_image(content, style, TransferBackend::neural_from(loaded, 1.0));
  const auto want = channel_stats(image_to_color_space(style, ColorSpace::kRgb));
  const auto got = channel_stats(image_to_color_space(full, ColorSpace::kRgb));
  for (int c = 0; c < 3; ++c) CHECK(std::abs(got.mean[c] - want.mean[c]) < 3.0);  // clamping at 0 and 255

  NeuralWeights bad = w;
  bad.decoder[0].weight = Tensor({2, 3, 1, 1});
  bad.decoder[0].bias = Tensor({1, 2, 1, 1});
  CHECK_THROWS_AS(bad.validate(), ValidationError);
}
