#include "gss/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "gss/errors.hpp"

namespace gss {

namespace {

uint32_t crc32_update(uint32_t crc, const uint8_t* p, size_t n) {
  static uint32_t table[256];
  static bool init = false;
  if (!init) {
    for (uint32_t i = 0; i < 256; ++i) {
      uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
      table[i] = c;
    }
    init = true;
  }
  crc ^= 0xFFFFFFFFu;
  for (size_t i = 0; i < n; ++i) crc = table[(crc ^ p[i]) & 0xFF] ^ (crc >> 8);
  return crc ^ 0xFFFFFFFFu;
}

void put_u32_be(std::vector<uint8_t>& v, uint32_t x) {
  v.push_back(uint8_t(x >> 24));
  v.push_back(uint8_t(x >> 16));
  v.push_back(uint8_t(x >> 8));
  v.push_back(uint8_t(x));
}

void write_chunk(std::ofstream& out, const char type[4], const std::vector<uint8_t>& payload) {
  std::vector<uint8_t> head;
  put_u32_be(head, uint32_t(payload.size()));
  out.write(reinterpret_cast<const char*>(head.data()), 4);
  out.write(type, 4);
  if (!payload.empty()) out.write(reinterpret_cast<const char*>(payload.data()), payload.size());
  std::vector<uint8_t> crc_buf(payload.size() + 4);
  std::memcpy(crc_buf.data(), type, 4);
  if (!payload.empty()) std::memcpy(crc_buf.data() + 4, payload.data(), payload.size());
  std::vector<uint8_t> tail;
  put_u32_be(tail, crc32_update(0, crc_buf.data(), crc_buf.size()));
  out.write(reinterpret_cast<const char*>(tail.data()), 4);
}

// zlib stream with stored (uncompressed) deflate blocks.
std::vector<uint8_t> zlib_stored(const std::vector<uint8_t>& raw) {
  std::vector<uint8_t> z;
  z.push_back(0x78);
  z.push_back(0x01);
  size_t pos = 0;
  do {
    const size_t n = std::min<size_t>(raw.size() - pos, 65535);
    const bool last = pos + n == raw.size();
    z.push_back(last ? 1 : 0);
    z.push_back(uint8_t(n & 0xFF));
    z.push_back(uint8_t(n >> 8));
    z.push_back(uint8_t(~n & 0xFF));
    z.push_back(uint8_t((~n >> 8) & 0xFF));
    z.insert(z.end(), raw.begin() + pos, raw.begin() + pos + n);
    pos += n;
  } while (pos < raw.size());
  uint32_t s1 = 1, s2 = 0;
  for (uint8_t b : raw) {
    s1 = (s1 + b) % 65521;
    s2 = (s2 + s1) % 65521;
  }
  put_u32_be(z, (s2 << 16) | s1);
  return z;
}

}  // namespace

void write_png_rgb(const std::string& path, const float* data, int width, int height) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParseError("png: cannot open for writing: " + path);
  static const uint8_t sig[8] = {137, 80, 78, 71, 13, 10, 26, 10};
  out.write(reinterpret_cast<const char*>(sig), 8);

  std::vector<uint8_t> ihdr;
  put_u32_be(ihdr, uint32_t(width));
  put_u32_be(ihdr, uint32_t(height));
  ihdr.push_back(8);   // bit depth
  ihdr.push_back(2);   // color type RGB
  ihdr.push_back(0);
  ihdr.push_back(0);
  ihdr.push_back(0);
  write_chunk(out, "IHDR", ihdr);

  std::vector<uint8_t> raw;
  raw.reserve(size_t(height) * (1 + size_t(width) * 3));
  for (int y = 0; y < height; ++y) {
    raw.push_back(0);  // filter: none
    for (int x = 0; x < width; ++x)
      for (int c = 0; c < 3; ++c) {
        const float v = data[(size_t(y) * width + x) * 3 + c];
        raw.push_back(uint8_t(std::clamp(int(std::lround(v * 255.0f)), 0, 255)));
      }
  }
  write_chunk(out, "IDAT", zlib_stored(raw));
  write_chunk(out, "IEND", {});
}

void write_f32_image(const std::string& path, const float* data, int width, int height, int channels) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParseError("f32img: cannot open for writing: " + path);
  out.write("F32I", 4);
  const uint32_t dims[3] = {uint32_t(width), uint32_t(height), uint32_t(channels)};
  out.write(reinterpret_cast<const char*>(dims), 12);
  out.write(reinterpret_cast<const char*>(data), sizeof(float) * size_t(width) * height * channels);
}

std::vector<float> read_f32_image(const std::string& path, int& width, int& height, int& channels) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("f32img: cannot open: " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "F32I", 4) != 0) throw ParseError("f32img: bad magic in " + path);
  uint32_t dims[3];
  in.read(reinterpret_cast<char*>(dims), 12);
  if (!in) throw ParseError("f32img: truncated header in " + path);
  width = int(dims[0]);
  height = int(dims[1]);
  channels = int(dims[2]);
  std::vector<float> data(size_t(width) * height * channels);
  in.read(reinterpret_cast<char*>(data.data()), sizeof(float) * data.size());
  if (!in) throw ParseError("f32img: truncated data in " + path);
  return data;
}

}  // namespace gss
