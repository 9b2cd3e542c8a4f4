#include <gtest/gtest.h>

#include "drscreen/error.hpp"
#include "drscreen/imaging.hpp"
#include "fixtures.hpp"

using namespace drscreen;
using drscreen::testing::synthetic_fundus;

namespace {

ImageTensor gray(int h, int w, std::initializer_list<float> values) {
  std::vector<float> data;
  for (float v : values) data.insert(data.end(), {v, v, v});
  return ImageTensor(h, w, std::move(data));
}

}  // namespace

TEST(Bilinear, TwoByTwoToOneIsTheMean) {
  const auto img = gray(2, 2, {10, 30, 50, 70});
  const auto out = resize_bilinear(img, 1);
  ASSERT_EQ(out.height(), 1);
  for (int c = 0; c < 3; ++c) EXPECT_FLOAT_EQ(out.at(0, 0, c), 40.0f);
}

TEST(Bilinear, ConstantImageStaysConstant) {
  ImageTensor img(17, 17);
  for (auto& v : img.values()) v = 123.0f;
  const auto out = resize_bilinear(img, 224);
  for (float v : out.values()) ASSERT_EQ(v, 123.0f);
}

TEST(Bilinear, IdentityAtTargetSizeAndRejectsNonSquare) {
  const auto img = synthetic_fundus(32, 32, Grade(2), 1);
  EXPECT_EQ(resize_bilinear(img, 32), img);
  EXPECT_THROW(resize_bilinear(ImageTensor(4, 5), 3), ShapeError);
  EXPECT_THROW(resize_bilinear(img, 0), ShapeError);
}

TEST(Bilinear, OutputStaysWithinInputRange) {
  const auto img = synthetic_fundus(40, 40, Grade(3), 2);
  const auto out = resize_bilinear(img, 97);
  for (float v : out.values()) {
    ASSERT_GE(v, 0.0f);
    ASSERT_LE(v, 255.0f);
  }
}

TEST(Normalize, ScalesAndRejectsOutOfRange) {
  const auto n = normalize(gray(1, 2, {0, 255}));
  EXPECT_EQ(n.at(0, 0, 0), 0.0f);
  EXPECT_EQ(n.at(0, 1, 2), 1.0f);
  EXPECT_THROW(normalize(gray(1, 1, {256})), RangeError);
  EXPECT_THROW(normalize(gray(1, 1, {-1})), RangeError);
}

TEST(Crop, CenteredSquare) {
  EXPECT_EQ(centered_square(100, 160), (CropRect{30, 0, 100}));
  EXPECT_EQ(centered_square(161, 100), (CropRect{0, 30, 100}));
  const auto img = synthetic_fundus(10, 20, Grade(0), 3);
  const auto sq = square_crop(img);
  EXPECT_EQ(sq.height(), 10);
  EXPECT_EQ(sq.width(), 10);
  EXPECT_EQ(sq.at(0, 0, 0), img.at(0, 5, 0));
}

TEST(Crop, BoundsAreChecked) {
  EXPECT_NO_THROW(check_crop({0, 0, 10}, 10, 10));
  EXPECT_THROW(check_crop({1, 0, 10}, 10, 10), BoundsError);
  EXPECT_THROW(check_crop({0, 0, 0}, 10, 10), BoundsError);
  EXPECT_THROW(check_crop({-1, 0, 2}, 10, 10), BoundsError);
  const auto img = synthetic_fundus(10, 10, Grade(0), 3);
  EXPECT_THROW(square_crop(img, CropRect{5, 5, 6}), BoundsError);
}

TEST(Flip, InvolutionAndMirror) {
  const auto img = synthetic_fundus(9, 9, Grade(1), 4);
  EXPECT_EQ(flip(flip(img, FlipAxis::kHorizontal), FlipAxis::kHorizontal), img);
  EXPECT_EQ(flip(flip(img, FlipAxis::kVertical), FlipAxis::kVertical), img);
  const auto h = flip(img, FlipAxis::kHorizontal);
  EXPECT_EQ(h.at(2, 0, 1), img.at(2, 8, 1));
  const auto v = flip(img, FlipAxis::kVertical);
  EXPECT_EQ(v.at(0, 3, 2), img.at(8, 3, 2));
}

TEST(Zoom, IdentityInOutAndErrors) {
  const auto img = synthetic_fundus(20, 20, Grade(2), 5);
  EXPECT_EQ(random_zoom(img, 1.0), img);
  const auto in = random_zoom(img, 1.3);
  EXPECT_EQ(in.height(), 20);
  const auto out = random_zoom(img, 0.5);
  EXPECT_EQ(out.height(), 20);
  EXPECT_EQ(out.at(0, 0, 0), 0.0f);  // zero border
  EXPECT_THROW(random_zoom(img, 0.0), ParameterError);
  EXPECT_THROW(random_zoom(img, -2.0), ParameterError);
  EXPECT_THROW(random_zoom(img, std::nan("")), ParameterError);
}

TEST(Augment, SeededAndBitReproducible) {
  const auto img = normalize(synthetic_fundus(32, 32, Grade(2), 6));
  AugmentConfig cfg;
  cfg.p_zoom = 0.5;
  for (std::uint64_t seed : {1u, 2u, 99u}) {
    Rng a(seed), b(seed);
    for (int i = 0; i < 20; ++i) ASSERT_EQ(augment(img, cfg, a), augment(img, cfg, b));
  }
}

TEST(Augment, AlwaysDrawsFourUniforms) {
  const auto img = normalize(synthetic_fundus(16, 16, Grade(1), 7));
  for (const auto& cfg : {AugmentConfig{}, AugmentConfig::disabled()}) {
    Rng used(3), reference(3);
    augment(img, cfg, used);
    for (int i = 0; i < 4; ++i) reference.uniform();
    EXPECT_EQ(used.next(), reference.next());
  }
}

TEST(Augment, DisabledIsIdentityAndConfigValidated) {
  const auto img = normalize(synthetic_fundus(16, 16, Grade(4), 8));
  Rng rng(1);
  EXPECT_EQ(augment(img, AugmentConfig::disabled(), rng), img);
  AugmentConfig bad;
  bad.p_hflip = 1.5;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = AugmentConfig{};
  bad.zoom_min = 1.4;
  EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(Codec, PngRoundTripIsLossless) {
  const auto img = synthetic_fundus(23, 31, Grade(3), 9);
  EXPECT_EQ(decode_image(encode_png(img)), img);
}

TEST(Codec, JpegDecodesToSameShape) {
  const auto img = synthetic_fundus(40, 48, Grade(1), 10);
  const auto back = decode_image(encode_jpeg(img, 95));
  ASSERT_EQ(back.height(), 40);
  ASSERT_EQ(back.width(), 48);
  double err = 0;
  for (std::size_t i = 0; i < img.values().size(); ++i) err += std::abs(img.values()[i] - back.values()[i]);
  EXPECT_LT(err / img.values().size(), 12.0);
}

TEST(Codec, GarbageIsADecodeError) {
  const std::vector<std::uint8_t> junk = {1, 2, 3, 4, 5, 6, 7, 8, 9};
  EXPECT_THROW(decode_image(junk), DecodeError);
  auto png = encode_png(synthetic_fundus(8, 8, Grade(0), 1));
  png.resize(png.size() / 2);
  EXPECT_THROW(decode_image(png), DecodeError);
  EXPECT_THROW(decode_image({}), DecodeError);
}

TEST(Preprocess, AlwaysInputSizedAndUnitRange) {
  for (auto [h, w] : {std::pair{300, 400}, std::pair{224, 224}, std::pair{100, 90}}) {
    const auto bytes = encode_png(synthetic_fundus(h, w, Grade(2), 11));
    const auto t = preprocess_for_inference(bytes);
    ASSERT_EQ(t.height(), kInputSide);
    ASSERT_EQ(t.width(), kInputSide);
    for (float v : t.values()) {
      ASSERT_GE(v, 0.0f);
      ASSERT_LE(v, 1.0f);
    }
  }
}

TEST(Preprocess, ManualCropIsUsed) {
  const auto raw = synthetic_fundus(60, 80, Grade(2), 12);
  const auto bytes = encode_png(raw);
  const CropRect r{5, 3, 50};
  EXPECT_EQ(preprocess_for_inference(bytes, r, 50), normalize(square_crop(raw, r)));
  EXPECT_THROW(preprocess_for_inference(bytes, CropRect{40, 20, 50}), BoundsError);
}
