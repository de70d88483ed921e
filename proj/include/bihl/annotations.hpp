#pragma once

#include <string>
#include <vector>

#include "bihl/boxes.hpp"

namespace bihl {

// Ground-truth instance. Coordinates are 0-indexed pixels.
struct AnnotatedBox {
  std::string image_id;  // filename stem or path, depending on the source
  Box box;
  std::string label;       // class name, used only for per-class ABO grouping
  bool difficult = false;  // carried through; evaluation includes these
};

// Detection-dataset XML: <object> entries with <name> and a <bndbox> holding
// 1-indexed inclusive xmin/ymin/xmax/ymax, converted here to 0-indexed
// (x, y, w, h). image_id is the <filename> stem when present, else the file
// stem. Throws Error("malformed") on structural problems.
std::vector<AnnotatedBox> load_voc_xml(const std::string& path);

// Plain-text lines "image_path,label,x,y,w,h" (already 0-indexed). Blank
// lines and lines starting with '#' are skipped.
std::vector<AnnotatedBox> load_annotation_csv(const std::string& path);

// Loads one annotation file by extension (.xml or .csv/.txt), or every such
// file inside a directory in sorted order.
std::vector<AnnotatedBox> load_annotations(const std::string& path);

// Clamps each box to [0, w) x [0, h); boxes left empty are removed.
void clip_annotations(std::vector<AnnotatedBox>& boxes, int img_w, int img_h);

// Filename without directory or extension ("a/b/c.xml" -> "c").
std::string path_stem(const std::string& path);

}  // namespace bihl
