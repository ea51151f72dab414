#include "matrixkit/reference.hpp"

#include <Eigen/Geometry>
#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "matrixkit/error.hpp"

namespace matrixkit::reference {

void mha_forward_serial(const Eigen::MatrixXd& q, const Eigen::MatrixXd& k,
                        const Eigen::MatrixXd& v, int heads,
                        const std::vector<TokenTag>& q_tags,
                        const std::vector<TokenTag>& k_tags, Eigen::MatrixXd& out) {
  const auto hd = q.rows() / heads;
  const auto quarter = hd / 4;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  constexpr double kRopeBase = 100.0;  // matches the production kernel

  auto rotate = [&](const Eigen::MatrixXd& x, const std::vector<TokenTag>& tags) {
    Eigen::MatrixXd r = x;
    for (int h = 0; h < heads; ++h) {
      for (Eigen::Index j = 0; j < x.cols(); ++j) {
        const double pos[2] = {static_cast<double>(tags[j].gy),
                               static_cast<double>(tags[j].gx)};
        for (int axis = 0; axis < 2; ++axis) {
          const Eigen::Index off = h * hd + axis * (hd / 2);
          for (Eigen::Index i = 0; i < quarter; ++i) {
            const double theta =
                pos[axis] * std::pow(kRopeBase, -static_cast<double>(i) / quarter);
            const double c = std::cos(theta), s = std::sin(theta);
            const double a = x(off + 2 * i, j);
            const double b = x(off + 2 * i + 1, j);
            r(off + 2 * i, j) = a * c - b * s;
            r(off + 2 * i + 1, j) = a * s + b * c;
          }
        }
      }
    }
    return r;
  };

  const Eigen::MatrixXd qr = rotate(q, q_tags);
  const Eigen::MatrixXd kr = rotate(k, k_tags);
  out.setZero(q.rows(), q.cols());
  std::vector<double> scores(static_cast<std::size_t>(k.cols()));
  for (int h = 0; h < heads; ++h) {
    for (Eigen::Index j = 0; j < q.cols(); ++j) {
      double max_s = -std::numeric_limits<double>::max();
      for (Eigen::Index kk = 0; kk < k.cols(); ++kk) {
        double s = 0.0;
        for (Eigen::Index d = 0; d < hd; ++d)
          s += qr(h * hd + d, j) * kr(h * hd + d, kk);
        scores[kk] = s * scale;
        max_s = std::max(max_s, scores[kk]);
      }
      double z = 0.0;
      for (Eigen::Index kk = 0; kk < k.cols(); ++kk) {
        scores[kk] = std::exp(scores[kk] - max_s);
        z += scores[kk];
      }
      for (Eigen::Index kk = 0; kk < k.cols(); ++kk) {
        const double p = scores[kk] / z;
        for (Eigen::Index d = 0; d < hd; ++d)
          out(h * hd + d, j) += p * v(h * hd + d, kk);
      }
    }
  }
}

double rra_bruteforce(const std::vector<Camera>& pred, const std::vector<Camera>& gt,
                      double thresh_deg) {
  if (pred.size() != gt.size() || pred.size() < 2)
    throw Error::data("rra_bruteforce: bad inputs");
  const double thresh = thresh_deg * 3.14159265358979323846 / 180.0;
  std::size_t hits = 0, total = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    for (std::size_t j = 0; j < pred.size(); ++j) {
      if (i == j) continue;
      const Eigen::Quaterniond qp(pred[i].rotation * pred[j].rotation.transpose());
      const Eigen::Quaterniond qg(gt[i].rotation * gt[j].rotation.transpose());
      hits += qp.angularDistance(qg) < thresh;
      ++total;
    }
  }
  return static_cast<double>(hits) / static_cast<double>(total);
}

DepthMetrics depth_metrics_bruteforce(const DepthMap& pred, const DepthMap& gt) {
  if (pred.width != gt.width || pred.height != gt.height)
    throw Error::data("depth_metrics_bruteforce: shape mismatch");
  const double log_125 = std::log(1.25);
  const double log_tau = std::log(1.03);
  long double abs_rel = 0, l10 = 0, sq = 0;
  std::size_t n = 0, d1 = 0, d2 = 0, d3 = 0, tau = 0;
  for (std::size_t i = 0; i < pred.depth.size(); ++i) {
    if (!pred.valid[i] || !gt.valid[i]) continue;
    const double p = pred.depth[i], g = gt.depth[i];
    ++n;
    abs_rel += std::abs(p - g) / g;
    l10 += std::abs(std::log10(p / g));
    sq += (p - g) * (p - g);
    const double lr = std::abs(std::log(p / g));
    d1 += lr < log_125;
    d2 += lr < 2.0 * log_125;
    d3 += lr < 3.0 * log_125;
    tau += lr < log_tau;
  }
  if (n == 0) throw Error::data("depth_metrics_bruteforce: no overlap");
  DepthMetrics m;
  const double dn = static_cast<double>(n);
  m.abs_rel = static_cast<double>(abs_rel) / dn;
  m.log10 = static_cast<double>(l10) / dn;
  m.rms = std::sqrt(static_cast<double>(sq) / dn);
  m.delta1 = d1 / dn;
  m.delta2 = d2 / dn;
  m.delta3 = d3 / dn;
  m.rel = m.abs_rel * 100.0;
  m.tau = tau / dn;
  return m;
}

PointCloudMetrics pointcloud_metrics_bruteforce(const PointCloud& pred,
                                                const PointCloud& gt) {
  if (pred.points.empty() || gt.points.empty())
    throw Error::data("pointcloud_metrics_bruteforce: empty cloud");
  auto mean_nn = [](const std::vector<Vec3>& from, const std::vector<Vec3>& to) {
    double sum = 0.0;
    for (const auto& p : from) {
      double best = std::numeric_limits<double>::max();
      for (const auto& q : to) best = std::min(best, (p - q).norm());
      sum += best;
    }
    return sum / static_cast<double>(from.size());
  };
  PointCloudMetrics m;
  m.accuracy = mean_nn(pred.points, gt.points);
  m.completeness = mean_nn(gt.points, pred.points);
  m.overall = 0.5 * (m.accuracy + m.completeness);
  return m;
}

double ssim_direct(const Image& pred, const Image& gt) {
  if (pred.width != gt.width || pred.height != gt.height ||
      pred.channels != gt.channels)
    throw Error::data("ssim_direct: shape mismatch");
  constexpr int kWin = 11;
  constexpr double kSigma = 1.5;
  constexpr double c1 = 0.01 * 0.01;
  constexpr double c2 = 0.03 * 0.03;
  if (pred.width < kWin || pred.height < kWin)
    throw Error::data("ssim_direct: image too small");

  double kernel[kWin][kWin];
  double ksum = 0.0;
  for (int i = 0; i < kWin; ++i)
    for (int j = 0; j < kWin; ++j) {
      const double dy = i - (kWin - 1) / 2.0;
      const double dx = j - (kWin - 1) / 2.0;
      kernel[i][j] = std::exp(-(dx * dx + dy * dy) / (2.0 * kSigma * kSigma));
      ksum += kernel[i][j];
    }
  for (auto& row : kernel)
    for (double& k : row) k /= ksum;

  double total = 0.0;
  std::size_t windows = 0;
  for (int c = 0; c < pred.channels; ++c) {
    for (int y = 0; y + kWin <= pred.height; ++y) {
      for (int x = 0; x + kWin <= pred.width; ++x) {
        double mx = 0, my = 0, xx = 0, yy = 0, xy = 0;
        for (int i = 0; i < kWin; ++i) {
          for (int j = 0; j < kWin; ++j) {
            const double a = pred.at(y + i, x + j, c);
            const double b = gt.at(y + i, x + j, c);
            mx += kernel[i][j] * a;
            my += kernel[i][j] * b;
            xx += kernel[i][j] * a * a;
            yy += kernel[i][j] * b * b;
            xy += kernel[i][j] * a * b;
          }
        }
        const double vx = xx - mx * mx;
        const double vy = yy - my * my;
        const double cxy = xy - mx * my;
        total += (2 * mx * my + c1) * (2 * cxy + c2) /
                 ((mx * mx + my * my + c1) * (vx + vy + c2));
        ++windows;
      }
    }
  }
  return total / static_cast<double>(windows);
}

double psnr_direct(const Image& pred, const Image& gt) {
  long double mse = 0.0;
  for (std::size_t i = 0; i < pred.data.size(); ++i) {
    const long double d = pred.data[i] - gt.data[i];
    mse += d * d;
  }
  mse /= static_cast<long double>(pred.data.size());
  if (mse <= 0) return 99.0;
  return std::min(99.0, static_cast<double>(-10.0L * std::log10(mse)));
}

}  // namespace matrixkit::reference
