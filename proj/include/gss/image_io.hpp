#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace gss {

// 8-bit RGB PNG (stored-deflate, no external compression dependency).
// data: h*w*3 floats in [0,1], row-major.
void write_png_rgb(const std::string& path, const float* data, int width, int height);

// Raw 32-bit float image dump for exact comparisons:
// magic "F32I", u32 width/height/channels (LE), then float32 data.
void write_f32_image(const std::string& path, const float* data, int width, int height, int channels);
std::vector<float> read_f32_image(const std::string& path, int& width, int& height, int& channels);

}  // namespace gss
