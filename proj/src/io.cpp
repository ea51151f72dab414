#include "matrixkit/io.hpp"

#include <zlib.h>

#include <cctype>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <vector>

#include "matrixkit/error.hpp"

namespace matrixkit {

namespace {

std::vector<char> read_binary(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error::data("cannot open file: " + path);
  in.seekg(0, std::ios::end);
  const auto size = in.tellg();
  in.seekg(0, std::ios::beg);
  std::vector<char> buf(static_cast<std::size_t>(size));
  in.read(buf.data(), size);
  if (!in) throw Error::data("short read: " + path);
  return buf;
}

void write_binary(const std::string& path, const void* data, std::size_t size) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error::data("cannot open file for writing: " + path);
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(size));
  if (!out) throw Error::data("short write: " + path);
}

void put_u32_be(std::vector<unsigned char>& buf, std::uint32_t v) {
  buf.push_back(static_cast<unsigned char>(v >> 24));
  buf.push_back(static_cast<unsigned char>(v >> 16));
  buf.push_back(static_cast<unsigned char>(v >> 8));
  buf.push_back(static_cast<unsigned char>(v));
}

std::uint32_t get_u32_be(const unsigned char* p) {
  return (static_cast<std::uint32_t>(p[0]) << 24) |
         (static_cast<std::uint32_t>(p[1]) << 16) |
         (static_cast<std::uint32_t>(p[2]) << 8) | static_cast<std::uint32_t>(p[3]);
}

}  // namespace

void write_pfm(const std::string& path, const DepthMap& d) {
  std::vector<char> buf;
  char header[64];
  const int hn = std::snprintf(header, sizeof(header), "Pf\n%d %d\n-1.0\n",
                               d.width, d.height);
  buf.insert(buf.end(), header, header + hn);
  // PFM scanlines run bottom-up.
  for (int y = d.height - 1; y >= 0; --y) {
    for (int x = 0; x < d.width; ++x) {
      const float f = static_cast<float>(d.at(y, x));
      const char* p = reinterpret_cast<const char*>(&f);
      buf.insert(buf.end(), p, p + 4);
    }
  }
  write_binary(path, buf.data(), buf.size());
}

DepthMap read_pfm(const std::string& path) {
  const std::vector<char> buf = read_binary(path);
  std::size_t pos = 0;
  auto next_token = [&]() -> std::string {
    while (pos < buf.size() && std::isspace(static_cast<unsigned char>(buf[pos]))) ++pos;
    std::size_t start = pos;
    while (pos < buf.size() && !std::isspace(static_cast<unsigned char>(buf[pos]))) ++pos;
    if (start == pos) throw Error::data("truncated PFM header: " + path);
    return std::string(buf.begin() + start, buf.begin() + pos);
  };
  if (next_token() != "Pf")
    throw Error::data("not a single-channel PFM: " + path);
  const int w = std::stoi(next_token());
  const int h = std::stoi(next_token());
  const double scale = std::stod(next_token());
  if (w <= 0 || h <= 0) throw Error::data("bad PFM dimensions: " + path);
  if (scale >= 0) throw Error::data("big-endian PFM not supported: " + path);
  ++pos;  // single whitespace after the scale line
  const std::size_t need = static_cast<std::size_t>(w) * h * 4;
  if (buf.size() - pos < need)
    throw Error::data("truncated PFM data: " + path);
  DepthMap d(w, h);
  for (int y = h - 1; y >= 0; --y) {
    for (int x = 0; x < w; ++x) {
      float f;
      std::memcpy(&f, buf.data() + pos, 4);
      pos += 4;
      d.at(y, x) = f;
      d.valid[d.idx(y, x)] = 1;
    }
  }
  return d;
}

void write_pgm_mask(const std::string& path, const DepthMap& d) {
  std::vector<char> buf;
  char header[64];
  const int hn = std::snprintf(header, sizeof(header), "P5\n%d %d\n255\n",
                               d.width, d.height);
  buf.insert(buf.end(), header, header + hn);
  for (std::size_t i = 0; i < d.valid.size(); ++i)
    buf.push_back(d.valid[i] ? static_cast<char>(0xFF) : 0);
  write_binary(path, buf.data(), buf.size());
}

void read_pgm_mask(const std::string& path, DepthMap& d) {
  const std::vector<char> buf = read_binary(path);
  std::size_t pos = 0;
  auto next_token = [&]() -> std::string {
    while (pos < buf.size() && std::isspace(static_cast<unsigned char>(buf[pos]))) ++pos;
    std::size_t start = pos;
    while (pos < buf.size() && !std::isspace(static_cast<unsigned char>(buf[pos]))) ++pos;
    if (start == pos) throw Error::data("truncated PGM header: " + path);
    return std::string(buf.begin() + start, buf.begin() + pos);
  };
  if (next_token() != "P5") throw Error::data("not a binary PGM: " + path);
  const int w = std::stoi(next_token());
  const int h = std::stoi(next_token());
  const int maxval = std::stoi(next_token());
  ++pos;
  if (w != d.width || h != d.height)
    throw Error::data("mask dimensions do not match depth: " + path);
  if (maxval != 255) throw Error::data("unexpected PGM maxval: " + path);
  if (buf.size() - pos < static_cast<std::size_t>(w) * h)
    throw Error::data("truncated PGM data: " + path);
  for (std::size_t i = 0; i < d.valid.size(); ++i) {
    const bool v = static_cast<unsigned char>(buf[pos + i]) >= 128;
    d.valid[i] = v ? 1 : 0;
    if (!v) d.depth[i] = 0.0;
  }
}

void write_png(const std::string& path, const Image& img) {
  if (img.channels != 3) throw Error::data("write_png: expected 3 channels");
  const int w = img.width, h = img.height;

  // Raw stream: one filter byte (0 = none) per scanline, then RGB bytes.
  std::vector<unsigned char> raw;
  raw.reserve(static_cast<std::size_t>(h) * (1 + 3 * w));
  for (int y = 0; y < h; ++y) {
    raw.push_back(0);
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) raw.push_back(quantize8(img.at(y, x, c)));
  }

  uLongf comp_size = compressBound(static_cast<uLong>(raw.size()));
  std::vector<unsigned char> comp(comp_size);
  if (compress2(comp.data(), &comp_size, raw.data(),
                static_cast<uLong>(raw.size()), 6) != Z_OK)
    throw Error::data("write_png: deflate failed: " + path);
  comp.resize(comp_size);

  std::vector<unsigned char> out;
  static const unsigned char sig[8] = {0x89, 'P', 'N', 'G', 0x0D, 0x0A, 0x1A, 0x0A};
  out.insert(out.end(), sig, sig + 8);

  auto chunk = [&](const char type[4], const std::vector<unsigned char>& data) {
    put_u32_be(out, static_cast<std::uint32_t>(data.size()));
    const std::size_t type_at = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), data.begin(), data.end());
    const std::uint32_t c = static_cast<std::uint32_t>(
        crc32(0, out.data() + type_at, static_cast<uInt>(4 + data.size())));
    put_u32_be(out, c);
  };

  std::vector<unsigned char> ihdr;
  put_u32_be(ihdr, static_cast<std::uint32_t>(w));
  put_u32_be(ihdr, static_cast<std::uint32_t>(h));
  ihdr.push_back(8);   // bit depth
  ihdr.push_back(2);   // color type: truecolor
  ihdr.push_back(0);   // compression
  ihdr.push_back(0);   // filter method
  ihdr.push_back(0);   // no interlace
  chunk("IHDR", ihdr);
  chunk("IDAT", comp);
  chunk("IEND", {});
  write_binary(path, out.data(), out.size());
}

Image read_png(const std::string& path) {
  const std::vector<char> raw_file = read_binary(path);
  const auto* p = reinterpret_cast<const unsigned char*>(raw_file.data());
  const std::size_t n = raw_file.size();
  static const unsigned char sig[8] = {0x89, 'P', 'N', 'G', 0x0D, 0x0A, 0x1A, 0x0A};
  if (n < 8 || std::memcmp(p, sig, 8) != 0)
    throw Error::data("not a PNG file: " + path);

  int w = 0, h = 0;
  std::vector<unsigned char> idat;
  std::size_t pos = 8;
  while (pos + 8 <= n) {
    const std::uint32_t len = get_u32_be(p + pos);
    if (pos + 12 + len > n) throw Error::data("truncated PNG chunk: " + path);
    const char* type = reinterpret_cast<const char*>(p + pos + 4);
    const unsigned char* data = p + pos + 8;
    if (std::memcmp(type, "IHDR", 4) == 0) {
      w = static_cast<int>(get_u32_be(data));
      h = static_cast<int>(get_u32_be(data + 4));
      if (data[8] != 8 || data[9] != 2 || data[12] != 0)
        throw Error::data("unsupported PNG format (need 8-bit RGB): " + path);
    } else if (std::memcmp(type, "IDAT", 4) == 0) {
      idat.insert(idat.end(), data, data + len);
    } else if (std::memcmp(type, "IEND", 4) == 0) {
      break;
    }
    pos += 12 + len;
  }
  if (w <= 0 || h <= 0 || idat.empty())
    throw Error::data("incomplete PNG: " + path);

  const std::size_t stride = 1 + 3 * static_cast<std::size_t>(w);
  std::vector<unsigned char> raw(stride * h);
  uLongf raw_size = static_cast<uLongf>(raw.size());
  if (uncompress(raw.data(), &raw_size, idat.data(),
                 static_cast<uLong>(idat.size())) != Z_OK ||
      raw_size != raw.size())
    throw Error::data("PNG inflate failed: " + path);

  // Undo per-scanline filters (types 0-4).
  const int bpp = 3;
  for (int y = 0; y < h; ++y) {
    unsigned char* row = raw.data() + static_cast<std::size_t>(y) * stride;
    const unsigned char ft = row[0];
    unsigned char* cur = row + 1;
    const unsigned char* prev =
        y > 0 ? raw.data() + static_cast<std::size_t>(y - 1) * stride + 1 : nullptr;
    for (int i = 0; i < 3 * w; ++i) {
      const int a = i >= bpp ? cur[i - bpp] : 0;
      const int b = prev ? prev[i] : 0;
      const int c = (prev && i >= bpp) ? prev[i - bpp] : 0;
      int x = cur[i];
      switch (ft) {
        case 0: break;
        case 1: x += a; break;
        case 2: x += b; break;
        case 3: x += (a + b) / 2; break;
        case 4: {
          const int pa = std::abs(b - c), pb = std::abs(a - c),
                    pc = std::abs(a + b - 2 * c);
          x += (pa <= pb && pa <= pc) ? a : (pb <= pc ? b : c);
          break;
        }
        default:
          throw Error::data("unknown PNG filter type: " + path);
      }
      cur[i] = static_cast<unsigned char>(x & 0xFF);
    }
  }

  Image img(w, h, 3);
  for (int y = 0; y < h; ++y) {
    const unsigned char* row = raw.data() + static_cast<std::size_t>(y) * stride + 1;
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        img.at(y, x, c) = row[3 * x + c] / 255.0;
  }
  return img;
}

void write_ply(const std::string& path, const PointCloud& pc) {
  const bool colors = pc.has_colors();
  if (colors && pc.colors.size() != pc.points.size())
    throw Error::data("write_ply: color/point count mismatch");
  std::ostringstream header;
  header << "ply\nformat binary_little_endian 1.0\n"
         << "element vertex " << pc.points.size() << "\n"
         << "property float x\nproperty float y\nproperty float z\n";
  if (colors)
    header << "property uchar red\nproperty uchar green\nproperty uchar blue\n";
  header << "end_header\n";

  std::vector<char> buf;
  const std::string hs = header.str();
  buf.insert(buf.end(), hs.begin(), hs.end());
  for (std::size_t i = 0; i < pc.points.size(); ++i) {
    for (int k = 0; k < 3; ++k) {
      const float f = static_cast<float>(pc.points[i](k));
      const char* fp = reinterpret_cast<const char*>(&f);
      buf.insert(buf.end(), fp, fp + 4);
    }
    if (colors)
      for (int k = 0; k < 3; ++k)
        buf.push_back(static_cast<char>(quantize8(pc.colors[i](k))));
  }
  write_binary(path, buf.data(), buf.size());
}

PointCloud read_ply(const std::string& path) {
  const std::vector<char> buf = read_binary(path);
  std::size_t pos = 0;
  auto next_line = [&]() -> std::string {
    std::size_t start = pos;
    while (pos < buf.size() && buf[pos] != '\n') ++pos;
    if (pos >= buf.size()) throw Error::data("truncated PLY header: " + path);
    return std::string(buf.begin() + start, buf.begin() + pos++);
  };
  if (next_line() != "ply") throw Error::data("not a PLY file: " + path);
  if (next_line() != "format binary_little_endian 1.0")
    throw Error::data("unsupported PLY format: " + path);
  std::size_t count = 0;
  bool colors = false;
  for (;;) {
    const std::string line = next_line();
    if (line == "end_header") break;
    if (line.rfind("element vertex ", 0) == 0)
      count = std::stoull(line.substr(15));
    else if (line == "property uchar red")
      colors = true;
  }
  const std::size_t rec = 12 + (colors ? 3 : 0);
  if (buf.size() - pos < count * rec)
    throw Error::data("truncated PLY data: " + path);
  PointCloud pc;
  pc.points.reserve(count);
  if (colors) pc.colors.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    float xyz[3];
    std::memcpy(xyz, buf.data() + pos, 12);
    pos += 12;
    pc.points.emplace_back(xyz[0], xyz[1], xyz[2]);
    if (colors) {
      const auto* c = reinterpret_cast<const unsigned char*>(buf.data() + pos);
      pc.colors.emplace_back(c[0] / 255.0, c[1] / 255.0, c[2] / 255.0);
      pos += 3;
    }
  }
  return pc;
}

std::string read_text_file(const std::string& path) {
  const std::vector<char> buf = read_binary(path);
  return std::string(buf.begin(), buf.end());
}

void write_text_file(const std::string& path, const std::string& contents) {
  write_binary(path, contents.data(), contents.size());
}

}  // namespace matrixkit
