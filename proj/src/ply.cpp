#include "gss/ply.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <cstdlib>
#include <sstream>
#include <vector>

namespace gss {

namespace {

struct Property {
  std::string name;
  std::string type;
  bool is_list = false;
};

struct Element {
  std::string name;
  long count = 0;
  std::vector<Property> props;
};

int type_size(const std::string& t) {
  if (t == "char" || t == "uchar" || t == "int8" || t == "uint8") return 1;
  if (t == "short" || t == "ushort" || t == "int16" || t == "uint16") return 2;
  if (t == "int" || t == "uint" || t == "int32" || t == "uint32" || t == "float" || t == "float32") return 4;
  if (t == "double" || t == "float64") return 8;
  return -1;
}

double read_scalar_le(const char* p, const std::string& t) {
  if (t == "float" || t == "float32") { float v; std::memcpy(&v, p, 4); return v; }
  if (t == "double" || t == "float64") { double v; std::memcpy(&v, p, 8); return v; }
  if (t == "uchar" || t == "uint8") { return double(uint8_t(*p)); }
  if (t == "char" || t == "int8") { return double(int8_t(*p)); }
  if (t == "ushort" || t == "uint16") { uint16_t v; std::memcpy(&v, p, 2); return v; }
  if (t == "short" || t == "int16") { int16_t v; std::memcpy(&v, p, 2); return v; }
  if (t == "uint" || t == "uint32") { uint32_t v; std::memcpy(&v, p, 4); return v; }
  if (t == "int" || t == "int32") { int32_t v; std::memcpy(&v, p, 4); return v; }
  return 0.0;
}

bool is_color_byte_type(const std::string& t) {
  return t == "uchar" || t == "uint8" || t == "char" || t == "int8";
}

}  // namespace

PointCloud load_ply(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("ply: cannot open file: " + path);

  std::string line;
  int line_no = 0;
  auto next_line = [&]() -> std::string {
    if (!std::getline(in, line)) throw ParseError("ply: unexpected end of header at line " + std::to_string(line_no));
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return line;
  };

  if (next_line() != "ply") throw ParseError("ply: line 1: missing 'ply' magic, got '" + line + "'");

  bool binary = false;
  bool have_format = false;
  std::vector<Element> elements;
  while (true) {
    const std::string l = next_line();
    std::istringstream ss(l);
    std::string tok;
    ss >> tok;
    if (tok == "comment" || tok == "obj_info" || tok.empty()) continue;
    if (tok == "format") {
      std::string fmt, ver;
      ss >> fmt >> ver;
      if (fmt == "ascii") binary = false;
      else if (fmt == "binary_little_endian") binary = true;
      else throw ParseError("ply: line " + std::to_string(line_no) + ": unsupported format '" + l + "'");
      have_format = true;
    } else if (tok == "element") {
      Element e;
      if (!(ss >> e.name >> e.count) || e.count < 0)
        throw ParseError("ply: line " + std::to_string(line_no) + ": bad element declaration '" + l + "'");
      elements.push_back(e);
    } else if (tok == "property") {
      if (elements.empty())
        throw ParseError("ply: line " + std::to_string(line_no) + ": property before any element: '" + l + "'");
      Property p;
      std::string t;
      ss >> t;
      if (t == "list") {
        std::string count_t, item_t;
        ss >> count_t >> item_t >> p.name;
        p.is_list = true;
        p.type = item_t;
        if (type_size(count_t) < 0 || type_size(item_t) < 0)
          throw ParseError("ply: line " + std::to_string(line_no) + ": bad list property '" + l + "'");
      } else {
        p.type = t;
        ss >> p.name;
        if (type_size(t) < 0 || p.name.empty())
          throw ParseError("ply: line " + std::to_string(line_no) + ": bad property '" + l + "'");
      }
      elements.back().props.push_back(p);
    } else if (tok == "end_header") {
      break;
    } else {
      throw ParseError("ply: line " + std::to_string(line_no) + ": unknown header keyword '" + l + "'");
    }
  }
  if (!have_format) throw ParseError("ply: header has no format line");

  const Element* vertex = nullptr;
  for (const auto& e : elements)
    if (e.name == "vertex") { vertex = &e; break; }
  if (!vertex) throw ParseError("ply: no 'vertex' element in header");
  if (vertex->count < 1) throw ParseError("ply: vertex element is empty");

  int ix = -1, iy = -1, iz = -1, ir = -1, ig = -1, ib = -1;
  for (size_t k = 0; k < vertex->props.size(); ++k) {
    const std::string& n = vertex->props[k].name;
    if (n == "x") ix = int(k);
    else if (n == "y") iy = int(k);
    else if (n == "z") iz = int(k);
    else if (n == "red" || n == "r") ir = int(k);
    else if (n == "green" || n == "g") ig = int(k);
    else if (n == "blue" || n == "b") ib = int(k);
  }
  if (ix < 0 || iy < 0 || iz < 0)
    throw ParseError("ply: vertex element lacks x,y,z properties");
  const bool has_color = ir >= 0 && ig >= 0 && ib >= 0;

  PointCloud pc;
  pc.positions.reserve(size_t(vertex->count) * 3);
  if (has_color) pc.colors.reserve(size_t(vertex->count) * 3);

  auto check_finite = [&](double v, long idx) {
    if (!std::isfinite(v))
      throw ParseError("ply: non-finite coordinate at vertex " + std::to_string(idx));
    return float(v);
  };
  auto normalize_color = [&](double v, const std::string& t) {
    return is_color_byte_type(t) ? float(v / 255.0) : float(std::clamp(v, 0.0, 1.0));
  };

  // Elements preceding "vertex" are consumed; lists are unsupported in any
  // element read before or as vertex data.
  for (const auto& e : elements) {
    const bool is_vertex = &e == vertex;
    for (long i = 0; i < e.count; ++i) {
      std::vector<double> vals(e.props.size(), 0.0);
      if (binary) {
        for (size_t k = 0; k < e.props.size(); ++k) {
          const auto& p = e.props[k];
          if (p.is_list) throw ParseError("ply: list properties are not supported (element '" + e.name + "')");
          char buf[8];
          if (!in.read(buf, type_size(p.type)))
            throw ParseError("ply: truncated body at element '" + e.name + "' item " + std::to_string(i));
          vals[k] = read_scalar_le(buf, p.type);
        }
      } else {
        std::string row;
        do {
          if (!std::getline(in, row))
            throw ParseError("ply: truncated body at element '" + e.name + "' item " + std::to_string(i));
          ++line_no;
        } while (row.find_first_not_of(" \t\r\n") == std::string::npos);
        std::istringstream ss(row);
        for (size_t k = 0; k < e.props.size(); ++k) {
          const auto& p = e.props[k];
          if (p.is_list) throw ParseError("ply: list properties are not supported (element '" + e.name + "')");
          std::string tok;
          if (!(ss >> tok))
            throw ParseError("ply: line " + std::to_string(line_no) + ": expected " +
                             std::to_string(e.props.size()) + " values, got fewer");
          char* end = nullptr;
          vals[k] = std::strtod(tok.c_str(), &end);  // accepts nan/inf, unlike stream extraction
          if (end == tok.c_str())
            throw ParseError("ply: line " + std::to_string(line_no) + ": bad numeric token '" + tok + "'");
        }
      }
      if (is_vertex) {
        pc.positions.push_back(check_finite(vals[ix], i));
        pc.positions.push_back(check_finite(vals[iy], i));
        pc.positions.push_back(check_finite(vals[iz], i));
        if (has_color) {
          pc.colors.push_back(normalize_color(vals[ir], vertex->props[ir].type));
          pc.colors.push_back(normalize_color(vals[ig], vertex->props[ig].type));
          pc.colors.push_back(normalize_color(vals[ib], vertex->props[ib].type));
        }
      }
    }
    if (is_vertex) break;
  }
  return pc;
}

void save_ply(const std::string& path, const PointCloud& pc, bool binary) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParseError("ply: cannot open for writing: " + path);
  const int m = pc.size();
  out << "ply\nformat " << (binary ? "binary_little_endian" : "ascii") << " 1.0\n";
  out << "element vertex " << m << "\n";
  out << "property float x\nproperty float y\nproperty float z\n";
  out << "property uchar red\nproperty uchar green\nproperty uchar blue\n";
  out << "end_header\n";
  auto color_byte = [&](int i, int c) -> uint8_t {
    const float v = pc.colors.empty() ? 0.5f : pc.colors[i * 3 + c];
    return uint8_t(std::clamp(int(std::lround(v * 255.0f)), 0, 255));
  };
  for (int i = 0; i < m; ++i) {
    if (binary) {
      out.write(reinterpret_cast<const char*>(&pc.positions[i * 3]), 12);
      const uint8_t rgb[3] = {color_byte(i, 0), color_byte(i, 1), color_byte(i, 2)};
      out.write(reinterpret_cast<const char*>(rgb), 3);
    } else {
      out << pc.positions[i * 3] << " " << pc.positions[i * 3 + 1] << " " << pc.positions[i * 3 + 2] << " "
          << int(color_byte(i, 0)) << " " << int(color_byte(i, 1)) << " " << int(color_byte(i, 2)) << "\n";
    }
  }
}

}  // namespace gss
