#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "bihl/annotations.hpp"
#include "bihl/error.hpp"

namespace fs = std::filesystem;
using bihl::AnnotatedBox;

namespace {

fs::path scratch_dir() {
  const fs::path dir = fs::temp_directory_path() / "bihl_annotation_tests";
  fs::create_directories(dir);
  return dir;
}

std::string write_file(const std::string& name, const std::string& body) {
  const fs::path p = scratch_dir() / name;
  std::ofstream out(p, std::ios::binary);
  out << body;
  return p.string();
}

const char* kXml = R"(<annotation>
  <filename>street_004.jpg</filename>
  <size><width>500</width><height>375</height></size>
  <object>
    <name>car</name>
    <difficult>0</difficult>
    <bndbox><xmin>1</xmin><ymin>1</ymin><xmax>100</xmax><ymax>50</ymax></bndbox>
  </object>
  <object>
    <name> person </name>
    <difficult>1</difficult>
    <bndbox><xmin>156</xmin><ymin>97</ymin><xmax>351</xmax><ymax>270</ymax></bndbox>
  </object>
</annotation>
)";

}  // namespace

TEST_CASE("annotations: detection xml with index conversion") {
  const std::string path = write_file("street_004.xml", kXml);
  const auto boxes = bihl::load_voc_xml(path);
  REQUIRE(boxes.size() == 2);

  // 1-indexed inclusive corners become a 0-indexed origin and a size that
  // counts both endpoints.
  CHECK(boxes[0].image_id == "street_004");
  CHECK(boxes[0].label == "car");
  CHECK_FALSE(boxes[0].difficult);
  CHECK(boxes[0].box.x == 0);
  CHECK(boxes[0].box.y == 0);
  CHECK(boxes[0].box.w == 100);
  CHECK(boxes[0].box.h == 50);

  CHECK(boxes[1].label == "person");
  CHECK(boxes[1].difficult);
  CHECK(boxes[1].box.x == 155);
  CHECK(boxes[1].box.y == 96);
  CHECK(boxes[1].box.w == 196);
  CHECK(boxes[1].box.h == 174);
}

TEST_CASE("annotations: xml fallbacks and failure modes") {
  SUBCASE("missing filename tag falls back to the file stem") {
    const std::string path = write_file(
        "no_filename.xml",
        "<annotation><object><name>dog</name>"
        "<bndbox><xmin>3</xmin><ymin>4</ymin><xmax>12</xmax><ymax>14</ymax>"
        "</bndbox></object></annotation>");
    const auto boxes = bihl::load_voc_xml(path);
    REQUIRE(boxes.size() == 1);
    CHECK(boxes[0].image_id == "no_filename");
    CHECK(boxes[0].box.x == 2);
    CHECK(boxes[0].box.h == 11);
    // difficult defaults to false when the tag is absent
    CHECK_FALSE(boxes[0].difficult);
  }
  SUBCASE("no objects yields an empty list, not an error") {
    const std::string path =
        write_file("empty.xml", "<annotation><filename>a.png</filename></annotation>");
    CHECK(bihl::load_voc_xml(path).empty());
  }
  SUBCASE("object without a name") {
    const std::string path = write_file(
        "anon.xml",
        "<annotation><object><bndbox><xmin>1</xmin><ymin>1</ymin>"
        "<xmax>2</xmax><ymax>2</ymax></bndbox></object></annotation>");
    CHECK_THROWS_AS(bihl::load_voc_xml(path), bihl::Error);
  }
  SUBCASE("inverted box corners") {
    const std::string path = write_file(
        "inverted.xml",
        "<annotation><object><name>x</name><bndbox><xmin>50</xmin>"
        "<ymin>1</ymin><xmax>10</xmax><ymax>2</ymax></bndbox></object></annotation>");
    try {
      bihl::load_voc_xml(path);
      FAIL("expected an error");
    } catch (const bihl::Error& e) {
      CHECK(std::string(e.code()) == "malformed");
    }
  }
  SUBCASE("unclosed tag") {
    const std::string path =
        write_file("unclosed.xml", "<annotation><object><name>x</name>");
    CHECK_THROWS_AS(bihl::load_voc_xml(path), bihl::Error);
  }
  SUBCASE("nonexistent file") {
    try {
      bihl::load_voc_xml((scratch_dir() / "missing.xml").string());
      FAIL("expected an error");
    } catch (const bihl::Error& e) {
      CHECK(std::string(e.code()) == "io");
    }
  }
}

TEST_CASE("annotations: csv lines, comments, and validation") {
  const std::string path = write_file("boxes.csv",
                                      "# header comment\n"
                                      "\n"
                                      "img/a.png, cat , 10,20,30,40\n"
                                      "img/b.png,dog,0,0,16,16\n");
  const auto boxes = bihl::load_annotation_csv(path);
  REQUIRE(boxes.size() == 2);
  CHECK(boxes[0].image_id == "img/a.png");
  CHECK(boxes[0].label == "cat");
  CHECK(boxes[0].box.x == 10);
  CHECK(boxes[0].box.y == 20);
  CHECK(boxes[0].box.w == 30);
  CHECK(boxes[0].box.h == 40);
  CHECK(boxes[1].image_id == "img/b.png");

  SUBCASE("wrong field count") {
    const std::string bad = write_file("short.csv", "a.png,cat,1,2,3\n");
    CHECK_THROWS_WITH_AS(bihl::load_annotation_csv(bad),
                         doctest::Contains("image_path,label,x,y,w,h"),
                         bihl::Error);
  }
  SUBCASE("non-numeric coordinate") {
    const std::string bad = write_file("nan.csv", "a.png,cat,1,2,three,4\n");
    CHECK_THROWS_AS(bihl::load_annotation_csv(bad), bihl::Error);
  }
  SUBCASE("degenerate size") {
    const std::string bad = write_file("flat.csv", "a.png,cat,1,2,5,0\n");
    CHECK_THROWS_AS(bihl::load_annotation_csv(bad), bihl::Error);
  }
}

TEST_CASE("annotations: directory loading merges files in sorted order") {
  const fs::path dir = scratch_dir() / "set";
  fs::create_directories(dir);
  {
    std::ofstream(dir / "b.csv") << "b.png,dog,1,1,8,8\n";
    std::ofstream(dir / "a.csv") << "a.png,cat,2,2,8,8\n";
    std::ofstream(dir / "c.xml")
        << "<annotation><filename>c.png</filename><object><name>cow</name>"
           "<bndbox><xmin>5</xmin><ymin>5</ymin><xmax>9</xmax><ymax>9</ymax>"
           "</bndbox></object></annotation>";
    std::ofstream(dir / "ignore.json") << "{}";
  }
  const auto boxes = bihl::load_annotations(dir.string());
  REQUIRE(boxes.size() == 3);
  CHECK(boxes[0].image_id == "a.png");
  CHECK(boxes[1].image_id == "b.png");
  CHECK(boxes[2].image_id == "c");

  SUBCASE("single file dispatches by extension") {
    const auto one = bihl::load_annotations((dir / "a.csv").string());
    REQUIRE(one.size() == 1);
    CHECK(one[0].label == "cat");
  }
  SUBCASE("unsupported extension") {
    CHECK_THROWS_AS(bihl::load_annotations((dir / "ignore.json").string()),
                    bihl::Error);
  }
}

TEST_CASE("annotations: clipping to the image frame") {
  std::vector<AnnotatedBox> boxes(4);
  boxes[0].box = {-5, -5, 20, 20};   // hangs over the top-left corner
  boxes[1].box = {90, 40, 30, 30};   // hangs over the bottom-right corner
  boxes[2].box = {10, 10, 5, 5};     // fully inside
  boxes[3].box = {120, 10, 10, 10};  // fully outside
  bihl::clip_annotations(boxes, 100, 60);
  REQUIRE(boxes.size() == 3);
  CHECK(boxes[0].box.x == 0);
  CHECK(boxes[0].box.y == 0);
  CHECK(boxes[0].box.w == 15);
  CHECK(boxes[0].box.h == 15);
  CHECK(boxes[1].box.w == 10);
  CHECK(boxes[1].box.h == 20);
  CHECK(boxes[2].box.w == 5);
}

TEST_CASE("annotations: path stems") {
  CHECK(bihl::path_stem("a/b/c.xml") == "c");
  CHECK(bihl::path_stem("plain.png") == "plain");
  CHECK(bihl::path_stem("/abs/path/img.tar.gz") == "img.tar");
  CHECK(bihl::path_stem("noext") == "noext");
}
