#include "matrixkit/depthmap.hpp"

#include <cmath>

#include "matrixkit/error.hpp"

namespace matrixkit {

DisparityMap encode_disparity(const DepthMap& d, double shift, double scale) {
  if (!std::isfinite(shift) || !std::isfinite(scale) || scale == 0.0)
    throw Error::data("encode_disparity: shift/scale must be finite, scale nonzero");
  DisparityMap out;
  out.width = d.width;
  out.height = d.height;
  out.shift = shift;
  out.scale = scale;
  out.disparity.assign(d.depth.size(), 0.0);
  out.valid.assign(d.depth.size(), 0);
  for (std::size_t i = 0; i < d.depth.size(); ++i) {
    if (!d.valid[i]) continue;
    out.disparity[i] = (1.0 / d.depth[i] - shift) / scale;
    out.valid[i] = 1;
  }
  return out;
}

DepthMap decode_disparity(const DisparityMap& dm) {
  DepthMap out(dm.width, dm.height);
  for (std::size_t i = 0; i < dm.disparity.size(); ++i) {
    if (!dm.valid[i]) continue;
    const double inv = dm.disparity[i] * dm.scale + dm.shift;
    if (!(inv > 0) || !std::isfinite(inv)) continue;  // demote to invalid
    const double depth = 1.0 / inv;
    if (!std::isfinite(depth) || depth <= 0) continue;
    out.depth[i] = depth;
    out.valid[i] = 1;
  }
  return out;
}

}  // namespace matrixkit
