// Copyright 2026 The MCGR Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <random>

#include "mcgr/error.hpp"
#include "mcgr/image.hpp"
#include "oracles/oracles.hpp"
#include "test_util.hpp"

using mcgr::ImageArray;

TEST(Image, CropFlipQuantize) {
  ImageArray img(1, 3, 4);
  for (int y = 0; y < 3; ++y)
    for (int x = 0; x < 4; ++x) img.at(0, y, x) = 10 * y + x;
  const ImageArray c = img.crop(1, 2, 2, 2);
  EXPECT_EQ(c.at(0, 0, 0), 12);
  EXPECT_EQ(c.at(0, 1, 1), 23);
  EXPECT_THROW(img.crop(2, 0, 2, 1), mcgr::ContractError);
  const ImageArray h = img.flipped(true, false);
  EXPECT_EQ(h.at(0, 0, 0), 3);
  const ImageArray v = img.flipped(false, true);
  EXPECT_EQ(v.at(0, 0, 0), 20);
  EXPECT_EQ(img.flipped(true, true).flipped(true, true), img);
  ImageArray q(1, 1, 3, std::vector<double>{-4, 12.6, 300});
  EXPECT_EQ(q.quantized().data(), (std::vector<double>{0, 13, 255}));
}

TEST(Image, CenterCropToMultiple) {
  ImageArray img(3, 10, 13);
  const ImageArray c = img.center_crop_to_multiple(4);
  EXPECT_EQ(c.height(), 8);
  EXPECT_EQ(c.width(), 12);
}

TEST(Image, PngRoundTrip8And16Bit) {
  testutil::TempDir dir("png");
  std::mt19937_64 rng(1);
  for (double peak : {255.0, 65535.0}) {
    for (int channels : {1, 3}) {
      const ImageArray img = testutil::random_image(channels, 7, 9, rng, peak).quantized();
      const auto path = dir.path() / ("img_" + std::to_string(channels) + "_" + std::to_string(int(peak)) + ".png");
      mcgr::save_png(img, path);
      const ImageArray back = mcgr::load_png(path);
      EXPECT_EQ(back.peak(), peak);
      EXPECT_EQ(back, img);
    }
  }
  EXPECT_THROW(mcgr::load_png(dir.path() / "missing.png"), mcgr::IoError);
}

TEST(Image, BicubicPreservesConstants) {
  ImageArray img(3, 100, 100, 255.0, 77.0);
  const ImageArray lr = mcgr::synthesize_lr(img, 4);
  EXPECT_EQ(lr.height(), 25);
  EXPECT_EQ(lr.width(), 25);
  for (double v : lr.data()) EXPECT_NEAR(v, 77.0, 1e-12);
}

TEST(Image, SynthesizeLrShapeAndContract) {
  const ImageArray lr = mcgr::synthesize_lr(ImageArray(1, 1000, 1000), 2);
  EXPECT_EQ(lr.height(), 500);
  EXPECT_EQ(lr.width(), 500);
  EXPECT_THROW(mcgr::synthesize_lr(ImageArray(1, 8, 8), 3), mcgr::ContractError);
  EXPECT_THROW(mcgr::synthesize_lr(ImageArray(1, 10, 8), 4), mcgr::ContractError);
}

TEST(Image, BicubicMatchesDirectReference) {
  std::mt19937_64 rng(2);
  const ImageArray img = testutil::random_image(3, 16, 16, rng);
  const ImageArray expected = oracle::bicubic_resize(img, 8, 8);
  const ImageArray got = mcgr::synthesize_lr(img, 2);
  for (std::size_t i = 0; i < got.data().size(); ++i) EXPECT_NEAR(got.data()[i], expected.data()[i], 1e-6);
}

TEST(Image, BicubicMatchesReferenceForOtherRatios) {
  std::mt19937_64 rng(3);
  const ImageArray img = testutil::random_image(1, 12, 9, rng);
  for (auto [h, w] : {std::pair{3, 9}, std::pair{24, 18}, std::pair{5, 7}}) {
    const ImageArray expected = oracle::bicubic_resize(img, h, w);
    const ImageArray got = mcgr::resize_bicubic(img, h, w);
    for (std::size_t i = 0; i < got.data().size(); ++i) EXPECT_NEAR(got.data()[i], expected.data()[i], 1e-6);
  }
}

TEST(Image, LumaAndTensorConversion) {
  ImageArray rgb(3, 1, 1, 1000.0);
  rgb.at(0, 0, 0) = 1000;
  rgb.at(1, 0, 0) = 0;
  rgb.at(2, 0, 0) = 500;
  EXPECT_NEAR(mcgr::to_luma255(rgb).at(0, 0, 0), (0.299 + 0.114 * 0.5) * 255, 1e-12);
  const mcgr::Tensor t = mcgr::to_tensor(rgb);
  EXPECT_EQ(t.shape(), (mcgr::Shape{1, 3, 1, 1}));
  EXPECT_DOUBLE_EQ(t.at(0, 2, 0, 0), 0.5);
  const ImageArray back = mcgr::from_tensor(t, 0, 1000.0);
  EXPECT_EQ(back, rgb);
}
