#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "rsdetect/image.hpp"

using namespace rsdetect;

namespace {

Grid<double> stay_of(double seconds) {
  Grid<double> g(2, 2, 0.0);
  g(0, 1) = seconds;
  return g;
}

}  // namespace

TEST(RenderImage, Eq11Values) {
  EXPECT_DOUBLE_EQ(render_image(stay_of(0.0), 3600).pixels(0, 1), 0.0);
  EXPECT_DOUBLE_EQ(render_image(stay_of(3600.0), 3600).pixels(0, 1), 255.0);
  EXPECT_DOUBLE_EQ(render_image(stay_of(9000.0), 3600).pixels(0, 1), 255.0);
  EXPECT_DOUBLE_EQ(render_image(stay_of(1800.0), 3600).pixels(0, 1), 127.5);
  EXPECT_THROW(render_image(stay_of(1.0), 0.0), Error);
  EXPECT_THROW(render_image(stay_of(1.0), -5.0), Error);
}

TEST(RenderImage, MonotoneBoundedAndScaleInvariant) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.0, 8000.0), scale(0.1, 10.0);
  for (int i = 0; i < 2000; ++i) {
    const double a = u(rng), b = u(rng), T = 1.0 + u(rng);
    const double pa = render_image(stay_of(a), T).pixels(0, 1);
    const double pb = render_image(stay_of(b), T).pixels(0, 1);
    if (a <= b) EXPECT_LE(pa, pb);
    EXPECT_GE(pa, 0.0);
    EXPECT_LE(pa, 255.0);
    EXPECT_EQ(pa == 255.0, a >= T);
    const double c = scale(rng);
    const double scaled = normalize(render_image(stay_of(c * a), c * T)).data[1];
    EXPECT_NEAR(scaled, normalize(render_image(stay_of(a), T)).data[1], 1e-12);
  }
}

TEST(Normalize, Values) {
  TrajectoryImage img{Grid<double>(1, 3, 0.0), 0};
  img.pixels.data = {255.0, 0.0, 127.5};
  const auto n = normalize(img);
  EXPECT_DOUBLE_EQ(n.data[0], 1.0);
  EXPECT_DOUBLE_EQ(n.data[1], 0.0);
  EXPECT_DOUBLE_EQ(n.data[2], 0.5);
}

TEST(Stack, FillsMissingDays) {
  std::vector<TrajectoryImage> imgs;
  for (int k : {0, 1, 3, 4, 6}) {
    TrajectoryImage img{Grid<double>(24, 24, 0.0), k};
    img.pixels(k, k) = 10.0 * (k + 1);
    imgs.push_back(img);
  }
  const auto s = stack(imgs, 7, 24, 24, "car");
  ASSERT_EQ(s.days(), 7);
  EXPECT_EQ(s.present_days(), 5);
  EXPECT_EQ(s.missing_mask(), (1u << 2) | (1u << 5));
  EXPECT_DOUBLE_EQ(s.channels[3].pixels(3, 3), 40.0);
  EXPECT_DOUBLE_EQ(s.channels[2].pixels.sum<double>(), 0.0);

  const auto empty = stack({}, 7, 24, 24);
  EXPECT_EQ(empty.present_days(), 0);
  EXPECT_EQ(empty.missing_mask(), 0x7Fu);

  std::vector<TrajectoryImage> full;
  for (int k = 0; k < 7; ++k) full.push_back({Grid<double>(24, 24, 1.0), k});
  const auto fs = stack(full, 7, 24, 24);
  EXPECT_EQ(fs.missing_mask(), 0u);
  for (int k = 0; k < 7; ++k) EXPECT_EQ(fs.channels[static_cast<std::size_t>(k)].day_index, k);

  full.push_back({Grid<double>(24, 24, 1.0), 0});
  EXPECT_THROW(stack(full, 7, 24, 24), Error);
}

TEST(Timg, LayoutAndRoundTrip) {
  std::vector<TrajectoryImage> imgs;
  TrajectoryImage img{Grid<double>(2, 3, 0.0), 1};
  img.pixels.data = {0.0, 1.5, 255.0, 3.25, 0.0, 100.0};
  imgs.push_back(img);
  const auto s = stack(imgs, 2, 2, 3, "v");
  std::ostringstream out;
  write_timg(out, s);
  const std::string bytes = out.str();
  ASSERT_EQ(bytes.size(), 4u + 16u + 2u * 2u * 3u * 4u);
  EXPECT_EQ(bytes.substr(0, 4), "TIMG");
  EXPECT_EQ(bytes[4], 1);
  EXPECT_EQ(bytes[8], 2);
  EXPECT_EQ(bytes[12], 3);
  EXPECT_EQ(bytes[16], 2);
  // 1.5f = 0x3FC00000 little-endian at channel 1, pixel 1
  const std::size_t off = 20 + (6 + 1) * 4;
  EXPECT_EQ(static_cast<unsigned char>(bytes[off + 3]), 0x3F);
  EXPECT_EQ(static_cast<unsigned char>(bytes[off + 2]), 0xC0);

  std::istringstream in(bytes);
  const auto back = read_timg(in, "v");
  EXPECT_EQ(back.missing, s.missing);
  EXPECT_EQ(back.channels[1].pixels, s.channels[1].pixels);

  std::istringstream bad("XXXX");
  EXPECT_THROW(read_timg(bad), Error);
}

TEST(Png, WritesSignatureAndQuantizesHalfToEven) {
  EXPECT_EQ(quantize_pixel(127.5), 128);
  EXPECT_EQ(quantize_pixel(126.5), 126);
  EXPECT_EQ(quantize_pixel(255.0), 255);
  TrajectoryImage img{Grid<double>(24, 24, 127.5), 0};
  std::ostringstream out;
  write_png(out, img);
  const std::string bytes = out.str();
  ASSERT_GT(bytes.size(), 8u);
  EXPECT_EQ(bytes.substr(1, 3), "PNG");
  EXPECT_NE(bytes.find("IHDR"), std::string::npos);
  EXPECT_NE(bytes.find("IEND"), std::string::npos);
}
