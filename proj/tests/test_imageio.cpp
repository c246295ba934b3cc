#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <fstream>

#include "maxw/imageio.hpp"
#include "maxw/rng.hpp"

using namespace maxw;

namespace {

std::string tmp(const char* stem) { return std::string("/tmp/maxw_io_") + stem; }

void write_raw(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

TEST_CASE("PPM round-trip preserves every byte") {
  Rng rng(71);
  ImageU8 img;
  img.height = 5;
  img.width = 7;
  img.rgb.resize(5 * 7 * 3);
  for (auto& b : img.rgb) b = static_cast<unsigned char>(rng.next_below(256));
  const std::string path = tmp("rt.ppm");
  write_ppm(path, img);
  ImageU8 back = read_ppm(path);
  CHECK(back.height == 5);
  CHECK(back.width == 7);
  CHECK(back.rgb == img.rgb);
  std::remove(path.c_str());
}

TEST_CASE("PPM parser accepts comments and flexible whitespace") {
  const std::string path = tmp("comment.ppm");
  std::string bytes = "P6 # a comment\n# another\n 2\t1 # sizes\n255\n";
  bytes += std::string("\x01\x02\x03\x04\x05\x06", 6);
  write_raw(path, bytes);
  ImageU8 img = read_ppm(path);
  CHECK(img.width == 2);
  CHECK(img.height == 1);
  CHECK(img.rgb == std::vector<unsigned char>{1, 2, 3, 4, 5, 6});
  std::remove(path.c_str());
}

TEST_CASE("truncated PPM raster reports the byte offset") {
  const std::string path = tmp("trunc.ppm");
  write_raw(path, "P6\n2 2\n255\n\x01\x02\x03");  // needs 12 raster bytes, has 3
  try {
    read_ppm(path);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("byte") != std::string::npos);
  }
  std::remove(path.c_str());
}

TEST_CASE("PPM with the wrong magic or maxval is rejected") {
  const std::string p1 = tmp("magic.ppm");
  write_raw(p1, "P5\n1 1\n255\nxxx");
  CHECK_THROWS_AS(read_ppm(p1), ParseError);
  const std::string p2 = tmp("maxval.ppm");
  write_raw(p2, "P6\n1 1\n127\nxxx");
  CHECK_THROWS_AS(read_ppm(p2), ParseError);
  std::remove(p1.c_str());
  std::remove(p2.c_str());
}

TEST_CASE("16-bit PGM round-trips ids above 255 big-endianly") {
  MaskIdMap map;
  map.height = 2;
  map.width = 2;
  map.ids = {0, 1, 258, 65535};
  const std::string path = tmp("rt.pgm");
  write_pgm16(path, map);
  // verify the on-disk big-endian encoding of 258 = 0x0102
  std::ifstream in(path, std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::size_t raster = bytes.size() - 8;
  CHECK(static_cast<unsigned char>(bytes[raster + 4]) == 0x01);
  CHECK(static_cast<unsigned char>(bytes[raster + 5]) == 0x02);
  MaskIdMap back = read_pgm16(path);
  CHECK(back.ids == map.ids);
  std::remove(path.c_str());
}

TEST_CASE("truncated PGM raster is a parse error, not a crash") {
  const std::string path = tmp("trunc.pgm");
  write_raw(path, std::string("P5\n2 2\n65535\n") + std::string("\x00\x01\x00", 3));
  try {
    read_pgm16(path);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("byte") != std::string::npos);
  }
  std::remove(path.c_str());
}

TEST_CASE("a hand-written 2x2 PGM fixture parses to the expected ids") {
  const std::string path = tmp("fixture.pgm");
  // ids: [[1, 0], [2, 1]] as big-endian u16
  const char raster[8] = {0, 1, 0, 0, 0, 2, 0, 1};
  write_raw(path, std::string("P5\n2 2\n65535\n") + std::string(raster, 8));
  MaskIdMap map = read_pgm16(path);
  CHECK(map.ids == std::vector<std::uint16_t>{1, 0, 2, 1});
  std::remove(path.c_str());
}

TEST_CASE("labels round-trip and reject malformed lines") {
  const std::string path = tmp("labels.txt");
  write_labels(path, {{1, "circle"}, {2, "sky"}});
  auto back = read_labels(path);
  REQUIRE(back.size() == 2);
  CHECK(back.at(1) == "circle");
  CHECK(back.at(2) == "sky");
  write_raw(path, "1 circle\n");  // space, not tab
  CHECK_THROWS_AS(read_labels(path), ParseError);
  write_raw(path, "1\tcircle\n1\tsquare\n");
  CHECK_THROWS_AS(read_labels(path), ParseError);
  std::remove(path.c_str());
}

TEST_CASE("manifest round-trips stems in order") {
  const std::string path = tmp("manifest.txt");
  write_manifest(path, {"scene_000", "scene_001", "val_01"});
  auto stems = read_manifest(path);
  CHECK(stems == std::vector<std::string>{"scene_000", "scene_001", "val_01"});
  std::remove(path.c_str());
}

TEST_CASE("planar conversion scales bytes into [0,1] channel planes") {
  ImageU8 img;
  img.height = 1;
  img.width = 2;
  img.rgb = {255, 0, 0, 0, 255, 0};  // red pixel, green pixel
  auto planar = image_to_planar(img);
  REQUIRE(planar.size() == 6);
  CHECK(planar[0] == 1.0);  // R plane
  CHECK(planar[1] == 0.0);
  CHECK(planar[2] == 0.0);  // G plane
  CHECK(planar[3] == 1.0);
  CHECK(planar[4] == 0.0);  // B plane
  CHECK(planar[5] == 0.0);
}
