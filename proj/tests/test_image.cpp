#include "doctest_compat.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "udm/image.hpp"

using namespace udm;
namespace fs = std::filesystem;

namespace {
fs::path tmp_dir() {
  auto d = fs::temp_directory_path() / "udm_image_tests";
  fs::create_directories(d);
  return d;
}
}  // namespace

TEST_CASE("Image constructor validates and clamps") {
  CHECK_THROWS_AS(Image(torch::rand({1, 8, 8})), ShapeError);
  CHECK_THROWS_AS(Image(torch::rand({8, 8})), ShapeError);
  auto t = torch::tensor({{{-0.5f, 1.5f}}}).expand({3, 1, 2}).contiguous();
  Image img(t);
  CHECK(img.tensor().min().item<float>() == 0.0f);
  CHECK(img.tensor().max().item<float>() == 1.0f);
}

TEST_CASE("pipeline size gate") {
  Image small(torch::rand({3, 31, 64}));
  CHECK_THROWS_AS(small.require_pipeline_size(), SizeError);
  Image ok(torch::rand({3, 32, 32}));
  CHECK_NOTHROW(ok.require_pipeline_size());
}

TEST_CASE("PNG save/load round-trips 8-bit data exactly") {
  auto g = make_generator(7);
  auto q = (torch::rand({3, 40, 56}, g) * 255).round() / 255.0;
  Image img(q.to(torch::kFloat32));
  auto path = (tmp_dir() / "rt.png").string();
  save_png(img, path);
  auto back = load_image(path);
  CHECK(images_equal(img, back));
  CHECK(back.source_id() == path);
}

TEST_CASE("PNG encode is byte-stable for identical pixels") {
  auto q = (torch::rand({3, 33, 47}, make_generator(11)) * 255).round() / 255.0;
  Image img(q.to(torch::kFloat32));
  auto p1 = (tmp_dir() / "det1.png").string();
  auto p2 = (tmp_dir() / "det2.png").string();
  save_png(img, p1);
  save_png(img, p2);
  std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
  std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
  std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
  CHECK(b1 == b2);
  CHECK(!b1.empty());
}

TEST_CASE("load_image rejects non-image bytes") {
  auto path = (tmp_dir() / "junk.bin").string();
  std::ofstream(path, std::ios::binary) << "not an image at all";
  CHECK_THROWS_AS(load_image(path), IoError);
  CHECK_THROWS_AS(load_image((tmp_dir() / "missing.png").string()), IoError);
}

TEST_CASE("u8 conversion quantizes with round-to-nearest") {
  auto t = torch::full({3, 1, 1}, 0.5f);
  t[0][0][0] = 0.0f;
  t[1][0][0] = 1.0f;
  Image img(t);
  auto u8 = img.to_u8_rgb();
  CHECK(u8[0] == 0);
  CHECK(u8[1] == 255);
  CHECK(u8[2] == 128);  // 0.5*255 = 127.5 rounds away from zero
}
