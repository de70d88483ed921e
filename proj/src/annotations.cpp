#include "bihl/annotations.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "bihl/error.hpp"

namespace bihl {

namespace {

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("io", path + ": cannot open for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Returns the text between <tag> and </tag> starting at `from`, or npos in
// `open_at` when the tag does not occur again. Nested identical tags are not
// supported (the annotation schema has none).
std::string tag_text(const std::string& xml, const std::string& tag,
                     std::size_t from, std::size_t& open_at) {
  const std::string open = "<" + tag + ">";
  const std::string close = "</" + tag + ">";
  open_at = xml.find(open, from);
  if (open_at == std::string::npos) return {};
  const std::size_t begin = open_at + open.size();
  const std::size_t end = xml.find(close, begin);
  if (end == std::string::npos)
    throw Error("malformed", "unclosed <" + tag + ">");
  return xml.substr(begin, end - begin);
}

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  std::size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

int parse_int(const std::string& s, const std::string& what) {
  try {
    std::size_t used = 0;
    // Some annotation tools write coordinates as floats; accept and round.
    double v = std::stod(trim(s), &used);
    if (used == 0) throw std::invalid_argument("empty");
    return int(std::lround(v));
  } catch (const std::exception&) {
    throw Error("malformed", what + ": bad number \"" + trim(s) + "\"");
  }
}

}  // namespace

std::string path_stem(const std::string& path) {
  return std::filesystem::path(path).stem().string();
}

std::vector<AnnotatedBox> load_voc_xml(const std::string& path) {
  const std::string xml = read_text(path);
  std::size_t at = 0;

  std::string image_id = path_stem(path);
  {
    std::size_t fn_at = 0;
    const std::string fn = tag_text(xml, "filename", 0, fn_at);
    if (fn_at != std::string::npos && !trim(fn).empty())
      image_id = path_stem(trim(fn));
  }

  std::vector<AnnotatedBox> out;
  for (;;) {
    std::size_t obj_at = 0;
    const std::string obj = tag_text(xml, "object", at, obj_at);
    if (obj_at == std::string::npos) break;
    at = obj_at + obj.size();

    AnnotatedBox a;
    a.image_id = image_id;
    std::size_t pos = 0;
    a.label = trim(tag_text(obj, "name", 0, pos));
    if (pos == std::string::npos)
      throw Error("malformed", path + ": <object> without <name>");

    const std::string diff = tag_text(obj, "difficult", 0, pos);
    a.difficult = pos != std::string::npos && parse_int(diff, path) != 0;

    const std::string bnd = tag_text(obj, "bndbox", 0, pos);
    if (pos == std::string::npos)
      throw Error("malformed", path + ": <object> without <bndbox>");
    const int xmin = parse_int(tag_text(bnd, "xmin", 0, pos), path);
    const int ymin = parse_int(tag_text(bnd, "ymin", 0, pos), path);
    const int xmax = parse_int(tag_text(bnd, "xmax", 0, pos), path);
    const int ymax = parse_int(tag_text(bnd, "ymax", 0, pos), path);
    if (xmax < xmin || ymax < ymin)
      throw Error("malformed", path + ": inverted bndbox");
    // 1-indexed inclusive corners -> 0-indexed top-left plus size.
    a.box = {xmin - 1, ymin - 1, xmax - xmin + 1, ymax - ymin + 1};
    out.push_back(std::move(a));
  }
  return out;
}

std::vector<AnnotatedBox> load_annotation_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("io", path + ": cannot open for reading");
  std::vector<AnnotatedBox> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    std::vector<std::string> fields;
    std::stringstream ss(t);
    std::string field;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (fields.size() != 6)
      throw Error("malformed", path + ":" + std::to_string(lineno) +
                                   ": want image_path,label,x,y,w,h");
    AnnotatedBox a;
    a.image_id = trim(fields[0]);
    a.label = trim(fields[1]);
    const std::string where = path + ":" + std::to_string(lineno);
    a.box = {parse_int(fields[2], where), parse_int(fields[3], where),
             parse_int(fields[4], where), parse_int(fields[5], where)};
    if (a.box.w < 1 || a.box.h < 1)
      throw Error("malformed", where + ": box size must be >= 1");
    out.push_back(std::move(a));
  }
  return out;
}

std::vector<AnnotatedBox> load_annotations(const std::string& path) {
  namespace fs = std::filesystem;
  auto load_one = [](const std::string& p) {
    const std::string ext = fs::path(p).extension().string();
    if (ext == ".xml") return load_voc_xml(p);
    if (ext == ".csv" || ext == ".txt") return load_annotation_csv(p);
    throw Error("malformed", p + ": unsupported annotation extension");
  };
  if (!fs::is_directory(path)) return load_one(path);

  std::vector<std::string> files;
  for (const auto& entry : fs::directory_iterator(path)) {
    if (!entry.is_regular_file()) continue;
    const std::string ext = entry.path().extension().string();
    if (ext == ".xml" || ext == ".csv" || ext == ".txt")
      files.push_back(entry.path().string());
  }
  std::sort(files.begin(), files.end());
  std::vector<AnnotatedBox> out;
  for (const std::string& f : files) {
    std::vector<AnnotatedBox> part = load_one(f);
    out.insert(out.end(), std::make_move_iterator(part.begin()),
               std::make_move_iterator(part.end()));
  }
  return out;
}

void clip_annotations(std::vector<AnnotatedBox>& boxes, int img_w, int img_h) {
  for (AnnotatedBox& a : boxes) {
    const int x1 = std::clamp(a.box.x, 0, img_w);
    const int y1 = std::clamp(a.box.y, 0, img_h);
    const int x2 = std::clamp(a.box.x2(), 0, img_w);
    const int y2 = std::clamp(a.box.y2(), 0, img_h);
    a.box = {x1, y1, x2 - x1, y2 - y1};
  }
  std::erase_if(boxes,
                [](const AnnotatedBox& a) { return a.box.w < 1 || a.box.h < 1; });
}

}  // namespace bihl
