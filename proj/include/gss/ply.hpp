#pragma once

#include <string>

#include "gss/scene.hpp"

namespace gss {

// Reads an ASCII or binary-little-endian PLY with at least x,y,z vertex
// properties. red/green/blue (uchar, or float r/g/b in [0,1]) become colors
// normalized to [0,1]; absent colors default to 0.5 gray.
// Throws ParseError naming the offending header line or vertex index.
PointCloud load_ply(const std::string& path);

// Vertex dump (positions + uchar colors) for inspection.
void save_ply(const std::string& path, const PointCloud& pc, bool binary = true);

}  // namespace gss
