#pragma once

#include <string>

#include "matrixkit/depthmap.hpp"
#include "matrixkit/image.hpp"

namespace matrixkit {

// Serialized formats, all little-endian:
//  - depth:  single-channel PFM ("Pf", scale line -1.0), bottom-up scanlines
//  - mask:   binary PGM (P5, maxval 255, 255 = valid)
//  - rgb:    8-bit RGB PNG
//  - points: binary PLY, float32 x/y/z plus optional uchar r/g/b
// Depth and point coordinates are rounded to float32 on write; reads are
// bit-exact against the file.

void write_pfm(const std::string& path, const DepthMap& d);
// Fills depth only; the validity mask is all-ones (pair with read_pgm_mask).
DepthMap read_pfm(const std::string& path);

void write_pgm_mask(const std::string& path, const DepthMap& d);
void read_pgm_mask(const std::string& path, DepthMap& d);

void write_png(const std::string& path, const Image& img);
Image read_png(const std::string& path);

void write_ply(const std::string& path, const PointCloud& pc);
PointCloud read_ply(const std::string& path);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& contents);

}  // namespace matrixkit
