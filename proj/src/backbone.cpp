#include "matrixkit/backbone.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "matrixkit/error.hpp"
#include "matrixkit/parallel.hpp"
#include "matrixkit/rng.hpp"

namespace matrixkit {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

const char* modality_name(Modality m) {
  switch (m) {
    case Modality::rgb: return "rgb";
    case Modality::pose: return "pose";
    case Modality::depth: return "depth";
  }
  return "rgb";
}

Modality modality_from_name(const std::string& name) {
  if (name == "rgb") return Modality::rgb;
  if (name == "pose") return Modality::pose;
  if (name == "depth") return Modality::depth;
  throw Error::data("unknown modality: " + name);
}

int modality_channels(Modality m) {
  switch (m) {
    case Modality::rgb: return 3;
    case Modality::pose: return 6;
    case Modality::depth: return 2;
  }
  return 3;
}

int ModelConfig::resolution(Modality m) const {
  switch (m) {
    case Modality::rgb: return rgb_res;
    case Modality::pose: return ray_res;
    case Modality::depth: return depth_res;
  }
  return rgb_res;
}

int ModelConfig::patch(Modality m) const {
  switch (m) {
    case Modality::rgb: return rgb_patch;
    case Modality::pose: return ray_patch;
    case Modality::depth: return depth_patch;
  }
  return rgb_patch;
}

int ModelConfig::token_grid() const {
  return rgb_res / rgb_patch;
}

int ModelConfig::tokens_per_map() const {
  return token_grid() * token_grid();
}

void ModelConfig::validate() const {
  if (hidden_enc <= 0 || hidden_dec <= 0 || enc_blocks < 1 || dec_blocks < 1 ||
      heads < 1 || time_embed_dim <= 0)
    throw Error::data("model config: sizes must be positive");
  if (max_views < 2) throw Error::data("model config: max_views must be >= 2");
  if (hidden_enc % heads || hidden_dec % heads)
    throw Error::data("model config: hidden size must divide by heads");
  if ((hidden_enc / heads) % 4 || (hidden_dec / heads) % 4)
    throw Error::data("model config: head dim must divide by 4 for 2-D RoPE");
  if (time_embed_dim % 2)
    throw Error::data("model config: time_embed_dim must be even");
  int grid = -1;
  for (Modality m : {Modality::rgb, Modality::pose, Modality::depth}) {
    const int res = resolution(m);
    const int p = patch(m);
    if (res <= 0 || p <= 0 || res % p)
      throw Error::data(std::string("model config: ") + modality_name(m) +
                        " resolution not divisible by its patch size");
    const int g = res / p;
    if (grid < 0) grid = g;
    if (g != grid)
      throw Error::data("model config: modalities disagree on the token grid");
  }
  if (view_freq_base <= 0 || modality_freq_base <= 0 || time_freq_base <= 0)
    throw Error::data("model config: frequency bases must be positive");
}

Tensor& ParamStore::add(const std::string& name, Index rows, Index cols) {
  if (index_.count(name)) throw Error::data("duplicate parameter: " + name);
  index_[name] = tensors_.size();
  tensors_.push_back({name, MatrixXd::Zero(rows, cols), MatrixXd::Zero(rows, cols)});
  return tensors_.back();
}

Tensor& ParamStore::at(const std::string& name) {
  const auto it = index_.find(name);
  if (it == index_.end()) throw Error::data("unknown parameter: " + name);
  return tensors_[it->second];
}

const Tensor& ParamStore::at(const std::string& name) const {
  const auto it = index_.find(name);
  if (it == index_.end()) throw Error::data("unknown parameter: " + name);
  return tensors_[it->second];
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors_) n += static_cast<std::size_t>(t.value.size());
  return n;
}

void ParamStore::zero_grad() {
  for (auto& t : tensors_) t.grad.setZero();
}

void ParamStore::scale_grads(double factor) {
  for (auto& t : tensors_) t.grad *= factor;
}

bool ParamStore::all_finite() const {
  for (const auto& t : tensors_)
    if (!t.value.allFinite()) return false;
  return true;
}

std::uint64_t ParamStore::value_checksum() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& t : tensors_) {
    for (Index i = 0; i < t.value.size(); ++i) {
      std::uint64_t bits;
      const double v = t.value.data()[i];
      std::memcpy(&bits, &v, 8);
      for (int b = 0; b < 8; ++b) {
        h ^= (bits >> (8 * b)) & 0xFF;
        h *= 0x100000001b3ULL;
      }
    }
  }
  return h;
}

VectorXd sinusoidal_encoding(double position, int dim, double base) {
  VectorXd out(dim);
  for (int i = 0; i < dim / 2; ++i) {
    const double freq = std::pow(base, -2.0 * i / dim);
    out(2 * i) = std::sin(position * freq);
    out(2 * i + 1) = std::cos(position * freq);
  }
  if (dim % 2) out(dim - 1) = 0.0;
  return out;
}

namespace kernels {

namespace {
constexpr double kRopeBase = 100.0;
}

void apply_rope(MatrixXd& x, int heads, const std::vector<TokenTag>& tags,
                bool inverse) {
  const Index hd = x.rows() / heads;
  const Index quarter = hd / 4;  // pairs per axis
  const double sign = inverse ? -1.0 : 1.0;

  // Rotation table over (grid position, frequency): positions are small
  // integers, so this removes all pow/trig from the inner loop.
  int max_pos = 0;
  for (const auto& t : tags) max_pos = std::max({max_pos, t.gy, t.gx});
  MatrixXd cos_tab(quarter, max_pos + 1), sin_tab(quarter, max_pos + 1);
  for (Index i = 0; i < quarter; ++i) {
    const double freq = std::pow(kRopeBase, -static_cast<double>(i) / quarter);
    for (int p = 0; p <= max_pos; ++p) {
      cos_tab(i, p) = std::cos(sign * p * freq);
      sin_tab(i, p) = std::sin(sign * p * freq);
    }
  }

  parallel_for(heads, [&](std::int64_t h) {
    for (Index j = 0; j < x.cols(); ++j) {
      const int pos[2] = {tags[j].gy, tags[j].gx};
      for (int axis = 0; axis < 2; ++axis) {
        const Index off = h * hd + axis * (hd / 2);
        for (Index i = 0; i < quarter; ++i) {
          const double c = cos_tab(i, pos[axis]);
          const double s = sin_tab(i, pos[axis]);
          const double a = x(off + 2 * i, j);
          const double b = x(off + 2 * i + 1, j);
          x(off + 2 * i, j) = a * c - b * s;
          x(off + 2 * i + 1, j) = a * s + b * c;
        }
      }
    }
  });
}

void mha_forward(const MatrixXd& q, const MatrixXd& k, const MatrixXd& v,
                 int heads, const std::vector<TokenTag>& q_tags,
                 const std::vector<TokenTag>& k_tags, MatrixXd& out,
                 AttentionCache* cache) {
  const Index hd = q.rows() / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  MatrixXd qr = q, kr = k;
  apply_rope(qr, heads, q_tags, false);
  apply_rope(kr, heads, k_tags, false);

  out.resize(q.rows(), q.cols());
  std::vector<MatrixXd> probs(heads);
  parallel_for(heads, [&](std::int64_t h) {
    const auto qh = qr.middleRows(h * hd, hd);
    const auto kh = kr.middleRows(h * hd, hd);
    const auto vh = v.middleRows(h * hd, hd);
    MatrixXd s = (kh.transpose() * qh) * scale;  // Nk x Nq
    for (Index j = 0; j < s.cols(); ++j) {
      const double m = s.col(j).maxCoeff();
      s.col(j) = (s.col(j).array() - m).exp();
      s.col(j) /= s.col(j).sum();
    }
    out.middleRows(h * hd, hd) = vh * s;
    probs[h] = std::move(s);
  });
  if (cache) {
    cache->q_rot = std::move(qr);
    cache->k_rot = std::move(kr);
    cache->probs = std::move(probs);
  }
}

namespace {

// Gradients w.r.t. q, k, v from the cached forward pass; dq/dk come out in
// the un-rotated frame.
void mha_backward(const MatrixXd& v, int heads, const AttentionCache& cache,
                  const std::vector<TokenTag>& q_tags,
                  const std::vector<TokenTag>& k_tags, const MatrixXd& dout,
                  MatrixXd& dq, MatrixXd& dk, MatrixXd& dv) {
  const Index hd = v.rows() / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  dq.resize(cache.q_rot.rows(), cache.q_rot.cols());
  dk.resize(cache.k_rot.rows(), cache.k_rot.cols());
  dv.resize(v.rows(), v.cols());
  parallel_for(heads, [&](std::int64_t h) {
    const auto vh = v.middleRows(h * hd, hd);
    const auto qh = cache.q_rot.middleRows(h * hd, hd);
    const auto kh = cache.k_rot.middleRows(h * hd, hd);
    const MatrixXd& p = cache.probs[h];
    const auto doh = dout.middleRows(h * hd, hd);

    dv.middleRows(h * hd, hd) = doh * p.transpose();
    MatrixXd dp = vh.transpose() * doh;  // Nk x Nq
    // Column-wise softmax backward.
    for (Index j = 0; j < dp.cols(); ++j) {
      const double dot = p.col(j).dot(dp.col(j));
      dp.col(j) = p.col(j).cwiseProduct((dp.col(j).array() - dot).matrix());
    }
    dq.middleRows(h * hd, hd) = (kh * dp) * scale;
    dk.middleRows(h * hd, hd) = (qh * dp.transpose()) * scale;
  });
  apply_rope(dq, heads, q_tags, true);
  apply_rope(dk, heads, k_tags, true);
}

}  // namespace

}  // namespace kernels

namespace {

constexpr double kLnEps = 1e-6;

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }
double gelu_grad(double x) {
  const double phi = std::exp(-0.5 * x * x) / std::sqrt(2.0 * 3.14159265358979323846);
  return 0.5 * (1.0 + std::erf(x / std::sqrt(2.0))) + x * phi;
}
double silu(double x) { return x / (1.0 + std::exp(-x)); }
double silu_grad(double x) {
  const double s = 1.0 / (1.0 + std::exp(-x));
  return s * (1.0 + x * (1.0 - s));
}

struct LnCache {
  MatrixXd xhat;
  VectorXd inv_std;
};

// Column-wise layer norm without affine parameters.
MatrixXd ln_forward(const MatrixXd& x, LnCache* cache) {
  MatrixXd out(x.rows(), x.cols());
  VectorXd inv_std(x.cols());
  for (Index j = 0; j < x.cols(); ++j) {
    const double mu = x.col(j).mean();
    const double var = (x.col(j).array() - mu).square().mean();
    const double is = 1.0 / std::sqrt(var + kLnEps);
    out.col(j) = (x.col(j).array() - mu) * is;
    inv_std(j) = is;
  }
  if (cache) {
    cache->xhat = out;
    cache->inv_std = std::move(inv_std);
  }
  return out;
}

MatrixXd ln_backward(const LnCache& cache, const MatrixXd& dxhat) {
  MatrixXd dx(dxhat.rows(), dxhat.cols());
  const double n = static_cast<double>(dxhat.rows());
  for (Index j = 0; j < dxhat.cols(); ++j) {
    const double mean_dy = dxhat.col(j).mean();
    const double mean_dy_xhat = dxhat.col(j).dot(cache.xhat.col(j)) / n;
    dx.col(j) = cache.inv_std(j) *
                (dxhat.col(j).array() - mean_dy -
                 cache.xhat.col(j).array() * mean_dy_xhat);
  }
  return dx;
}

struct AffineLnCache {
  LnCache ln;
};

MatrixXd affine_ln_forward(const Tensor& g, const Tensor& b, const MatrixXd& x,
                           AffineLnCache* cache) {
  const MatrixXd xhat = ln_forward(x, cache ? &cache->ln : nullptr);
  return (xhat.array().colwise() * g.value.col(0).array()).colwise() +
         b.value.col(0).array();
}

MatrixXd affine_ln_backward(Tensor& g, Tensor& b, const AffineLnCache& cache,
                            const MatrixXd& dout) {
  g.grad.col(0) += dout.cwiseProduct(cache.ln.xhat).rowwise().sum();
  b.grad.col(0) += dout.rowwise().sum();
  const MatrixXd dxhat = dout.array().colwise() * g.value.col(0).array();
  return ln_backward(cache.ln, dxhat);
}

// Token-column split across threads; every chunk is computed independently,
// so results match the serial path bit for bit.
void gemm_cols(const MatrixXd& w, const MatrixXd& x, MatrixXd& y) {
  y.resize(w.rows(), x.cols());
  const std::int64_t flops = 2ll * w.rows() * w.cols() * x.cols();
  const int nt = effective_threads();
  if (nt <= 1 || flops < (1 << 21)) {
    y.noalias() = w * x;
    return;
  }
  const Index chunk = (x.cols() + nt - 1) / nt;
  parallel_for(nt, [&](std::int64_t k) {
    const Index c0 = static_cast<Index>(k) * chunk;
    if (c0 >= x.cols()) return;
    const Index n = std::min<Index>(chunk, x.cols() - c0);
    y.middleCols(c0, n).noalias() = w * x.middleCols(c0, n);
  });
}

// Output-row split for weight-gradient accumulation.
void gemm_rows_accum(const MatrixXd& dout, const MatrixXd& input, MatrixXd& dw) {
  const std::int64_t flops = 2ll * dout.rows() * dout.cols() * input.rows();
  const int nt = effective_threads();
  if (nt <= 1 || flops < (1 << 21)) {
    dw.noalias() += dout * input.transpose();
    return;
  }
  const Index chunk = (dout.rows() + nt - 1) / nt;
  parallel_for(nt, [&](std::int64_t k) {
    const Index r0 = static_cast<Index>(k) * chunk;
    if (r0 >= dout.rows()) return;
    const Index n = std::min<Index>(chunk, dout.rows() - r0);
    dw.middleRows(r0, n).noalias() += dout.middleRows(r0, n) * input.transpose();
  });
}

MatrixXd linear_forward(const Tensor& w, const Tensor& b, const MatrixXd& x) {
  MatrixXd y;
  gemm_cols(w.value, x, y);
  y.colwise() += b.value.col(0);
  return y;
}

// dx is returned; parameter gradients accumulate.
MatrixXd linear_backward(Tensor& w, Tensor& b, const MatrixXd& input,
                         const MatrixXd& dout) {
  gemm_rows_accum(dout, input, w.grad);
  b.grad.col(0) += dout.rowwise().sum();
  MatrixXd dx;
  gemm_cols(w.value.transpose(), dout, dx);
  return dx;
}

void linear_backward_nodx(Tensor& w, Tensor& b, const MatrixXd& input,
                          const MatrixXd& dout) {
  gemm_rows_accum(dout, input, w.grad);
  b.grad.col(0) += dout.rowwise().sum();
}

// x * (1 + scale) + shift with hidden-dim vectors broadcast over columns.
MatrixXd modulate(const MatrixXd& x, const VectorXd& scale, const VectorXd& shift) {
  return (x.array().colwise() * (1.0 + scale.array())).colwise() + shift.array();
}

struct AttnLayerCache {
  MatrixXd input;  // layer input (post modulation), feeds q/k/v linears
  MatrixXd v;      // value projection, reused by the backward pass
  kernels::AttentionCache attn;
  MatrixXd attn_out;  // pre-projection concat of heads
};

struct CrossLayerCache {
  MatrixXd q_input;  // modulated decoder tokens
  MatrixXd v;        // value projection of the encoder output
  kernels::AttentionCache attn;
  MatrixXd attn_out;
  MatrixXd k_input;  // encoder output (shared across blocks)
};

struct MlpCache {
  MatrixXd input;
  MatrixXd pre_act;
  MatrixXd post_act;
};

struct EncBlockCache {
  AffineLnCache ln1;
  AttnLayerCache attn;
  AffineLnCache ln2;
  MlpCache mlp;
};

struct ModCache {
  // Nine hidden_dec-sized slices: (shift, scale, gate) x (self, cross, mlp).
  VectorXd vec;
};

struct DecBlockCache {
  ModCache mod;
  LnCache ln1;
  AttnLayerCache attn;
  MatrixXd self_out;  // gated branch value (post o-projection)
  LnCache ln2;
  CrossLayerCache cross;
  MatrixXd cross_out;
  LnCache ln3;
  MlpCache mlp;
  MatrixXd mlp_out;
};

struct Tape {
  // Condition side.
  TokenBatch cond;
  std::vector<EncBlockCache> enc_blocks;
  AffineLnCache enc_final_ln;
  MatrixXd enc_final_in;
  MatrixXd enc_out;
  std::vector<MatrixXd> cond_patch_inputs;  // per condition map

  // Timestep embedding.
  VectorXd t_sin, t_pre1, t_post1, temb;

  // Target side.
  TokenBatch target;
  std::vector<MatrixXd> target_patch_inputs;
  std::vector<DecBlockCache> dec_blocks;
  LnCache final_ln;
  MatrixXd final_in;
  VectorXd final_mod;  // 2 slices: shift, scale
  MatrixXd final_tokens;
};

}  // namespace

Backbone::Backbone(const ModelConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  const int he = cfg_.hidden_enc;
  const int hd = cfg_.hidden_dec;

  for (Modality m : {Modality::rgb, Modality::pose, Modality::depth}) {
    const std::string name = modality_name(m);
    const int pdim = cfg_.patch(m) * cfg_.patch(m) * modality_channels(m);
    params_.add("enc.embed." + name + ".w", he, pdim);
    params_.add("enc.embed." + name + ".b", he, 1);
    params_.add("dec.embed." + name + ".w", hd, pdim);
    params_.add("dec.embed." + name + ".b", hd, 1);
    params_.add("head." + name + ".w", pdim, hd);
    params_.add("head." + name + ".b", pdim, 1);
  }

  for (int i = 0; i < cfg_.enc_blocks; ++i) {
    const std::string p = "enc." + std::to_string(i) + ".";
    params_.add(p + "ln1.g", he, 1);
    params_.add(p + "ln1.b", he, 1);
    params_.add(p + "attn.wq", he, he);
    params_.add(p + "attn.bq", he, 1);
    params_.add(p + "attn.wk", he, he);
    params_.add(p + "attn.bk", he, 1);
    params_.add(p + "attn.wv", he, he);
    params_.add(p + "attn.bv", he, 1);
    params_.add(p + "attn.wo", he, he);
    params_.add(p + "attn.bo", he, 1);
    params_.add(p + "ln2.g", he, 1);
    params_.add(p + "ln2.b", he, 1);
    params_.add(p + "mlp.w1", 4 * he, he);
    params_.add(p + "mlp.b1", 4 * he, 1);
    params_.add(p + "mlp.w2", he, 4 * he);
    params_.add(p + "mlp.b2", he, 1);
  }
  params_.add("enc.ln.g", he, 1);
  params_.add("enc.ln.b", he, 1);

  params_.add("time.w1", hd, cfg_.time_embed_dim);
  params_.add("time.b1", hd, 1);
  params_.add("time.w2", hd, hd);
  params_.add("time.b2", hd, 1);

  for (int i = 0; i < cfg_.dec_blocks; ++i) {
    const std::string p = "dec." + std::to_string(i) + ".";
    params_.add(p + "mod.w", 9 * hd, hd);
    params_.add(p + "mod.b", 9 * hd, 1);
    params_.add(p + "attn.wq", hd, hd);
    params_.add(p + "attn.bq", hd, 1);
    params_.add(p + "attn.wk", hd, hd);
    params_.add(p + "attn.bk", hd, 1);
    params_.add(p + "attn.wv", hd, hd);
    params_.add(p + "attn.bv", hd, 1);
    params_.add(p + "attn.wo", hd, hd);
    params_.add(p + "attn.bo", hd, 1);
    params_.add(p + "xattn.wq", hd, hd);
    params_.add(p + "xattn.bq", hd, 1);
    params_.add(p + "xattn.wk", hd, he);
    params_.add(p + "xattn.bk", hd, 1);
    params_.add(p + "xattn.wv", hd, he);
    params_.add(p + "xattn.bv", hd, 1);
    params_.add(p + "xattn.wo", hd, hd);
    params_.add(p + "xattn.bo", hd, 1);
    params_.add(p + "mlp.w1", 4 * hd, hd);
    params_.add(p + "mlp.b1", 4 * hd, 1);
    params_.add(p + "mlp.w2", hd, 4 * hd);
    params_.add(p + "mlp.b2", hd, 1);
  }
  params_.add("dec.mod.w", 2 * hd, hd);
  params_.add("dec.mod.b", 2 * hd, 1);
}

void Backbone::init_params(std::uint64_t seed) {
  Rng rng = Rng::stream(seed, 0x1417);
  auto trunc_normal = [&](MatrixXd& m, double sigma) {
    for (Index i = 0; i < m.size(); ++i) {
      double z = rng.normal();
      while (std::abs(z) > 2.0) z = rng.normal();
      m.data()[i] = sigma * z;
    }
  };
  for (auto& t : params_.tensors()) {
    const std::string& n = t.name;
    const bool is_bias = n.size() > 2 && (n.rfind(".b") == n.size() - 2 ||
                                          n.rfind(".bq") == n.size() - 3 ||
                                          n.rfind(".bk") == n.size() - 3 ||
                                          n.rfind(".bv") == n.size() - 3 ||
                                          n.rfind(".bo") == n.size() - 3 ||
                                          n.rfind(".b1") == n.size() - 3 ||
                                          n.rfind(".b2") == n.size() - 3);
    if (n.find("ln") != std::string::npos && n.rfind(".g") == n.size() - 2) {
      t.value.setOnes();
    } else if (n.rfind("head.", 0) == 0 || n.find(".mod.") != std::string::npos ||
               n.rfind("dec.mod", 0) == 0) {
      t.value.setZero();  // zero output head and adaLN modulations
    } else if (is_bias) {
      t.value.setZero();
    } else {
      // Fan-in truncated normal. A flat sigma of 0.02 starves the attention
      // logits and the adaLN modulations at this scale; overfit convergence
      // measured ~40% slower.
      trunc_normal(t.value, 1.0 / std::sqrt(static_cast<double>(t.value.cols())));
    }
  }
}

void Backbone::randomize_all_params(std::uint64_t seed, double sigma) {
  Rng rng = Rng::stream(seed, 0x7357);
  for (auto& t : params_.tensors())
    for (Index i = 0; i < t.value.size(); ++i) t.value.data()[i] = sigma * rng.normal();
}

namespace {

// Gathers one map into patch columns: (p*p*C) x g^2.
MatrixXd gather_patches(const ModelConfig& cfg, const ViewMap& map) {
  const int res = cfg.resolution(map.modality);
  const int p = cfg.patch(map.modality);
  const int c = modality_channels(map.modality);
  const int g = res / p;
  MatrixXd out(p * p * c, g * g);
  for (int gy = 0; gy < g; ++gy)
    for (int gx = 0; gx < g; ++gx) {
      const Index col = gy * g + gx;
      for (int py = 0; py < p; ++py)
        for (int px = 0; px < p; ++px)
          for (int ch = 0; ch < c; ++ch) {
            const Index src = ((static_cast<Index>(gy * p + py) * res) + gx * p + px) * c + ch;
            out((py * p + px) * c + ch, col) = map.data(src);
          }
    }
  return out;
}

void scatter_patches(const ModelConfig& cfg, const MatrixXd& cols, ViewMap& map) {
  const int res = cfg.resolution(map.modality);
  const int p = cfg.patch(map.modality);
  const int c = modality_channels(map.modality);
  const int g = res / p;
  map.data.resize(static_cast<Index>(res) * res * c);
  for (int gy = 0; gy < g; ++gy)
    for (int gx = 0; gx < g; ++gx) {
      const Index col = gy * g + gx;
      for (int py = 0; py < p; ++py)
        for (int px = 0; px < p; ++px)
          for (int ch = 0; ch < c; ++ch) {
            const Index dst = ((static_cast<Index>(gy * p + py) * res) + gx * p + px) * c + ch;
            map.data(dst) = cols((py * p + px) * c + ch, col);
          }
    }
}

void append_tags(const ModelConfig& cfg, const ViewMap& map,
                 std::vector<TokenTag>& tags) {
  const int g = cfg.token_grid();
  for (int gy = 0; gy < g; ++gy)
    for (int gx = 0; gx < g; ++gx)
      tags.push_back({map.view_id, map.modality, gy, gx});
}

void check_view_map(const ModelConfig& cfg, const ViewMap& map) {
  if (map.view_id < 0 || map.view_id >= cfg.max_views)
    throw Error::data("view id out of range: " + std::to_string(map.view_id));
  const Index want = static_cast<Index>(cfg.resolution(map.modality)) *
                     cfg.resolution(map.modality) *
                     modality_channels(map.modality);
  if (map.data.size() != want)
    throw Error::data(std::string("map size mismatch for modality ") +
                      modality_name(map.modality));
}

}  // namespace

// Single shared forward pass; fills the tape for the backward sweep.
namespace {

struct ForwardResult {
  std::vector<ViewMap> v_maps;
};

ForwardResult run_forward(const ModelConfig& cfg, const ParamStore& params,
                          const std::vector<ViewMap>& condition,
                          const std::vector<ViewMap>& noisy_target, int t,
                          Tape& tape) {
  if (noisy_target.empty())
    throw Error::data("forward: nothing to generate (empty target set)");
  for (const auto& m : condition) check_view_map(cfg, m);
  for (const auto& m : noisy_target) check_view_map(cfg, m);

  const int tokens = cfg.tokens_per_map();
  const int he = cfg.hidden_enc;
  const int hd = cfg.hidden_dec;

  // ---- Encoder over condition tokens (may be empty). ----
  const Index nc = static_cast<Index>(condition.size()) * tokens;
  tape.cond.tokens.resize(he, nc);
  tape.cond.tags.clear();
  tape.cond_patch_inputs.clear();
  for (std::size_t i = 0; i < condition.size(); ++i) {
    const ViewMap& m = condition[i];
    const std::string name = modality_name(m.modality);
    MatrixXd patches = gather_patches(cfg, m);
    MatrixXd emb = linear_forward(params.at("enc.embed." + name + ".w"),
                                  params.at("enc.embed." + name + ".b"), patches);
    const VectorXd ve = sinusoidal_encoding(m.view_id, he, cfg.view_freq_base);
    const VectorXd me =
        sinusoidal_encoding(static_cast<int>(m.modality), he, cfg.modality_freq_base);
    emb.colwise() += (ve + me).eval();
    tape.cond.tokens.middleCols(static_cast<Index>(i) * tokens, tokens) = emb;
    append_tags(cfg, m, tape.cond.tags);
    tape.cond_patch_inputs.push_back(std::move(patches));
  }

  tape.enc_blocks.assign(cfg.enc_blocks, {});
  MatrixXd x = tape.cond.tokens;
  if (nc > 0) {
    for (int bi = 0; bi < cfg.enc_blocks; ++bi) {
      const std::string p = "enc." + std::to_string(bi) + ".";
      EncBlockCache& bc = tape.enc_blocks[bi];
      const MatrixXd h1 = affine_ln_forward(params.at(p + "ln1.g"),
                                            params.at(p + "ln1.b"), x, &bc.ln1);
      bc.attn.input = h1;
      const MatrixXd q = linear_forward(params.at(p + "attn.wq"), params.at(p + "attn.bq"), h1);
      const MatrixXd k = linear_forward(params.at(p + "attn.wk"), params.at(p + "attn.bk"), h1);
      bc.attn.v = linear_forward(params.at(p + "attn.wv"), params.at(p + "attn.bv"), h1);
      MatrixXd attn;
      kernels::mha_forward(q, k, bc.attn.v, cfg.heads, tape.cond.tags, tape.cond.tags,
                           attn, &bc.attn.attn);
      bc.attn.attn_out = attn;
      x += linear_forward(params.at(p + "attn.wo"), params.at(p + "attn.bo"), attn);
      const MatrixXd h2 = affine_ln_forward(params.at(p + "ln2.g"),
                                            params.at(p + "ln2.b"), x, &bc.ln2);
      bc.mlp.input = h2;
      bc.mlp.pre_act = linear_forward(params.at(p + "mlp.w1"), params.at(p + "mlp.b1"), h2);
      bc.mlp.post_act = bc.mlp.pre_act.unaryExpr([](double v) { return gelu(v); });
      x += linear_forward(params.at(p + "mlp.w2"), params.at(p + "mlp.b2"), bc.mlp.post_act);
    }
    tape.enc_final_in = x;
    tape.enc_out = affine_ln_forward(params.at("enc.ln.g"), params.at("enc.ln.b"),
                                     x, &tape.enc_final_ln);
  } else {
    tape.enc_out.resize(he, 0);
  }

  // ---- Timestep embedding. ----
  tape.t_sin = sinusoidal_encoding(t, cfg.time_embed_dim, cfg.time_freq_base);
  tape.t_pre1 = params.at("time.w1").value * tape.t_sin + params.at("time.b1").value.col(0);
  tape.t_post1 = tape.t_pre1.unaryExpr([](double v) { return silu(v); });
  tape.temb = params.at("time.w2").value * tape.t_post1 + params.at("time.b2").value.col(0);

  // ---- Decoder over noisy target tokens. ----
  const Index nt = static_cast<Index>(noisy_target.size()) * tokens;
  tape.target.tokens.resize(hd, nt);
  tape.target.tags.clear();
  tape.target_patch_inputs.clear();
  for (std::size_t i = 0; i < noisy_target.size(); ++i) {
    const ViewMap& m = noisy_target[i];
    const std::string name = modality_name(m.modality);
    MatrixXd patches = gather_patches(cfg, m);
    MatrixXd emb = linear_forward(params.at("dec.embed." + name + ".w"),
                                  params.at("dec.embed." + name + ".b"), patches);
    const VectorXd ve = sinusoidal_encoding(m.view_id, hd, cfg.view_freq_base);
    const VectorXd me =
        sinusoidal_encoding(static_cast<int>(m.modality), hd, cfg.modality_freq_base);
    emb.colwise() += (ve + me).eval();
    tape.target.tokens.middleCols(static_cast<Index>(i) * tokens, tokens) = emb;
    append_tags(cfg, m, tape.target.tags);
    tape.target_patch_inputs.push_back(std::move(patches));
  }

  const VectorXd temb_act = tape.temb.unaryExpr([](double v) { return silu(v); });

  tape.dec_blocks.assign(cfg.dec_blocks, {});
  MatrixXd y = tape.target.tokens;
  for (int bi = 0; bi < cfg.dec_blocks; ++bi) {
    const std::string p = "dec." + std::to_string(bi) + ".";
    DecBlockCache& bc = tape.dec_blocks[bi];
    bc.mod.vec = params.at(p + "mod.w").value * temb_act +
                 params.at(p + "mod.b").value.col(0);
    const auto slice = [&](int k) { return bc.mod.vec.segment(k * hd, hd); };

    const MatrixXd h1 = ln_forward(y, &bc.ln1);
    bc.attn.input = modulate(h1, slice(1), slice(0));
    const MatrixXd q = linear_forward(params.at(p + "attn.wq"), params.at(p + "attn.bq"), bc.attn.input);
    const MatrixXd k = linear_forward(params.at(p + "attn.wk"), params.at(p + "attn.bk"), bc.attn.input);
    bc.attn.v = linear_forward(params.at(p + "attn.wv"), params.at(p + "attn.bv"), bc.attn.input);
    MatrixXd attn;
    kernels::mha_forward(q, k, bc.attn.v, cfg.heads, tape.target.tags, tape.target.tags,
                         attn, &bc.attn.attn);
    bc.attn.attn_out = attn;
    bc.self_out = linear_forward(params.at(p + "attn.wo"), params.at(p + "attn.bo"), attn);
    y += (bc.self_out.array().colwise() * slice(2).array()).matrix();

    if (nc > 0) {
      const MatrixXd h2 = ln_forward(y, &bc.ln2);
      bc.cross.q_input = modulate(h2, slice(4), slice(3));
      bc.cross.k_input = tape.enc_out;
      const MatrixXd qx = linear_forward(params.at(p + "xattn.wq"), params.at(p + "xattn.bq"), bc.cross.q_input);
      const MatrixXd kx = linear_forward(params.at(p + "xattn.wk"), params.at(p + "xattn.bk"), tape.enc_out);
      bc.cross.v = linear_forward(params.at(p + "xattn.wv"), params.at(p + "xattn.bv"), tape.enc_out);
      MatrixXd xattn;
      kernels::mha_forward(qx, kx, bc.cross.v, cfg.heads, tape.target.tags,
                           tape.cond.tags, xattn, &bc.cross.attn);
      bc.cross.attn_out = xattn;
      bc.cross_out = linear_forward(params.at(p + "xattn.wo"), params.at(p + "xattn.bo"), xattn);
      y += (bc.cross_out.array().colwise() * slice(5).array()).matrix();
    }

    const MatrixXd h3 = ln_forward(y, &bc.ln3);
    bc.mlp.input = modulate(h3, slice(7), slice(6));
    bc.mlp.pre_act = linear_forward(params.at(p + "mlp.w1"), params.at(p + "mlp.b1"), bc.mlp.input);
    bc.mlp.post_act = bc.mlp.pre_act.unaryExpr([](double v) { return gelu(v); });
    bc.mlp_out = linear_forward(params.at(p + "mlp.w2"), params.at(p + "mlp.b2"), bc.mlp.post_act);
    y += (bc.mlp_out.array().colwise() * slice(8).array()).matrix();
  }

  tape.final_in = y;
  const MatrixXd fhat = ln_forward(y, &tape.final_ln);
  tape.final_mod = params.at("dec.mod.w").value * temb_act +
                   params.at("dec.mod.b").value.col(0);
  tape.final_tokens =
      modulate(fhat, tape.final_mod.segment(hd, hd), tape.final_mod.segment(0, hd));

  ForwardResult result;
  for (std::size_t i = 0; i < noisy_target.size(); ++i) {
    const ViewMap& m = noisy_target[i];
    const std::string name = modality_name(m.modality);
    const MatrixXd cols =
        linear_forward(params.at("head." + name + ".w"),
                       params.at("head." + name + ".b"),
                       tape.final_tokens.middleCols(static_cast<Index>(i) * tokens, tokens));
    ViewMap v;
    v.view_id = m.view_id;
    v.modality = m.modality;
    scatter_patches(cfg, cols, v);
    result.v_maps.push_back(std::move(v));
  }
  return result;
}

}  // namespace

std::vector<ViewMap> Backbone::forward(const std::vector<ViewMap>& condition,
                                       const std::vector<ViewMap>& noisy_target,
                                       int t) const {
  Tape tape;
  return run_forward(cfg_, params_, condition, noisy_target, t, tape).v_maps;
}

double masked_mse(const std::vector<ViewMap>& pred,
                  const std::vector<ViewMap>& target,
                  const std::vector<VectorXd>& weights,
                  std::vector<VectorXd>* dpred) {
  if (pred.size() != target.size() || pred.size() != weights.size())
    throw Error::data("masked_mse: list size mismatch");
  double total_weight = 0.0;
  for (const auto& w : weights) total_weight += w.sum();
  if (total_weight <= 0.0) throw Error::data("masked_mse: no supervised entries");

  double sum = 0.0;
  if (dpred) dpred->assign(pred.size(), VectorXd());
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const VectorXd diff = pred[i].data - target[i].data;
    sum += diff.cwiseProduct(diff).dot(weights[i]);
    if (dpred)
      (*dpred)[i] = 2.0 * diff.cwiseProduct(weights[i]) / total_weight;
  }
  return sum / total_weight;
}

double Backbone::loss(const Batch& batch, bool accumulate_grads) {
  Tape tape;
  ForwardResult fwd =
      run_forward(cfg_, params_, batch.condition, batch.noisy_target, batch.t, tape);

  std::vector<VectorXd> dpred;
  const double value = masked_mse(fwd.v_maps, batch.v_target, batch.loss_weight,
                                  accumulate_grads ? &dpred : nullptr);
  if (!accumulate_grads) return value;

  const int tokens = cfg_.tokens_per_map();
  const int he = cfg_.hidden_enc;
  const int hd = cfg_.hidden_dec;
  const Index nc = tape.cond.tokens.cols();

  // ---- Heads and final modulation. ----
  MatrixXd d_final_tokens = MatrixXd::Zero(hd, tape.final_tokens.cols());
  for (std::size_t i = 0; i < batch.noisy_target.size(); ++i) {
    const ViewMap& m = batch.noisy_target[i];
    const std::string name = modality_name(m.modality);
    ViewMap grad_map{m.view_id, m.modality, dpred[i]};
    // scatter_patches backward is a patch gather of the gradient map.
    const MatrixXd dcols = gather_patches(cfg_, grad_map);
    d_final_tokens.middleCols(static_cast<Index>(i) * tokens, tokens) +=
        linear_backward(params_.at("head." + name + ".w"),
                        params_.at("head." + name + ".b"),
                        tape.final_tokens.middleCols(static_cast<Index>(i) * tokens, tokens),
                        dcols);
  }

  const VectorXd temb_act = tape.temb.unaryExpr([](double v) { return silu(v); });
  VectorXd d_temb_act = VectorXd::Zero(hd);

  // final modulate: ft = fhat * (1 + scale_f) + shift_f
  const VectorXd scale_f = tape.final_mod.segment(hd, hd);
  VectorXd d_final_mod(2 * hd);
  d_final_mod.segment(0, hd) = d_final_tokens.rowwise().sum();
  d_final_mod.segment(hd, hd) =
      d_final_tokens.cwiseProduct(tape.final_ln.xhat).rowwise().sum();
  params_.at("dec.mod.w").grad += d_final_mod * temb_act.transpose();
  params_.at("dec.mod.b").grad.col(0) += d_final_mod;
  d_temb_act += params_.at("dec.mod.w").value.transpose() * d_final_mod;

  const MatrixXd d_fhat = d_final_tokens.array().colwise() * (1.0 + scale_f.array());
  MatrixXd dy = ln_backward(tape.final_ln, d_fhat);

  // ---- Decoder blocks in reverse. ----
  MatrixXd d_enc_out = MatrixXd::Zero(he, nc);
  for (int bi = cfg_.dec_blocks - 1; bi >= 0; --bi) {
    const std::string p = "dec." + std::to_string(bi) + ".";
    DecBlockCache& bc = tape.dec_blocks[bi];
    const auto slice = [&](int k) { return bc.mod.vec.segment(k * hd, hd); };
    VectorXd d_mod = VectorXd::Zero(9 * hd);

    // MLP branch: y = x_mid2 + gate3 .* mlp_out
    {
      const MatrixXd d_branch = dy;  // gradient of the block output
      d_mod.segment(8 * hd, hd) += d_branch.cwiseProduct(bc.mlp_out).rowwise().sum();
      const MatrixXd d_mlp_out = d_branch.array().colwise() * slice(8).array();
      const MatrixXd d_post = linear_backward(params_.at(p + "mlp.w2"), params_.at(p + "mlp.b2"),
                                              bc.mlp.post_act, d_mlp_out);
      const MatrixXd d_pre =
          d_post.cwiseProduct(bc.mlp.pre_act.unaryExpr([](double v) { return gelu_grad(v); }));
      const MatrixXd d_h3m = linear_backward(params_.at(p + "mlp.w1"), params_.at(p + "mlp.b1"),
                                             bc.mlp.input, d_pre);
      // modulation of h3
      const MatrixXd h3 = bc.ln3.xhat;  // ln output == xhat (no affine)
      d_mod.segment(6 * hd, hd) += d_h3m.rowwise().sum();
      d_mod.segment(7 * hd, hd) += d_h3m.cwiseProduct(h3).rowwise().sum();
      const MatrixXd d_h3 = d_h3m.array().colwise() * (1.0 + slice(7).array());
      dy += ln_backward(bc.ln3, d_h3);
    }

    // Cross-attention branch: y = x_mid1 + gate2 .* cross_out
    if (nc > 0) {
      const MatrixXd d_branch = dy;
      d_mod.segment(5 * hd, hd) += d_branch.cwiseProduct(bc.cross_out).rowwise().sum();
      const MatrixXd d_cross_out = d_branch.array().colwise() * slice(5).array();
      const MatrixXd d_attn = linear_backward(params_.at(p + "xattn.wo"), params_.at(p + "xattn.bo"),
                                              bc.cross.attn_out, d_cross_out);
      MatrixXd dqx, dkx, dvx;
      kernels::mha_backward(bc.cross.v, cfg_.heads, bc.cross.attn, tape.target.tags,
                            tape.cond.tags, d_attn, dqx, dkx, dvx);
      const MatrixXd d_qin = linear_backward(params_.at(p + "xattn.wq"), params_.at(p + "xattn.bq"),
                                             bc.cross.q_input, dqx);
      d_enc_out += linear_backward(params_.at(p + "xattn.wk"), params_.at(p + "xattn.bk"),
                                   bc.cross.k_input, dkx);
      d_enc_out += linear_backward(params_.at(p + "xattn.wv"), params_.at(p + "xattn.bv"),
                                   bc.cross.k_input, dvx);
      const MatrixXd h2 = bc.ln2.xhat;
      d_mod.segment(3 * hd, hd) += d_qin.rowwise().sum();
      d_mod.segment(4 * hd, hd) += d_qin.cwiseProduct(h2).rowwise().sum();
      const MatrixXd d_h2 = d_qin.array().colwise() * (1.0 + slice(4).array());
      dy += ln_backward(bc.ln2, d_h2);
    }

    // Self-attention branch: y = x_in + gate1 .* self_out
    {
      const MatrixXd d_branch = dy;
      d_mod.segment(2 * hd, hd) += d_branch.cwiseProduct(bc.self_out).rowwise().sum();
      const MatrixXd d_self_out = d_branch.array().colwise() * slice(2).array();
      const MatrixXd d_attn = linear_backward(params_.at(p + "attn.wo"), params_.at(p + "attn.bo"),
                                              bc.attn.attn_out, d_self_out);
      MatrixXd dq, dk, dv;
      kernels::mha_backward(bc.attn.v, cfg_.heads, bc.attn.attn, tape.target.tags,
                            tape.target.tags, d_attn, dq, dk, dv);
      MatrixXd d_h1m = linear_backward(params_.at(p + "attn.wq"), params_.at(p + "attn.bq"),
                                       bc.attn.input, dq);
      d_h1m += linear_backward(params_.at(p + "attn.wk"), params_.at(p + "attn.bk"),
                               bc.attn.input, dk);
      d_h1m += linear_backward(params_.at(p + "attn.wv"), params_.at(p + "attn.bv"),
                               bc.attn.input, dv);
      const MatrixXd h1 = bc.ln1.xhat;
      d_mod.segment(0, hd) += d_h1m.rowwise().sum();
      d_mod.segment(hd, hd) += d_h1m.cwiseProduct(h1).rowwise().sum();
      const MatrixXd d_h1 = d_h1m.array().colwise() * (1.0 + slice(1).array());
      dy += ln_backward(bc.ln1, d_h1);
    }

    params_.at(p + "mod.w").grad += d_mod * temb_act.transpose();
    params_.at(p + "mod.b").grad.col(0) += d_mod;
    d_temb_act += params_.at(p + "mod.w").value.transpose() * d_mod;
  }

  // ---- Target embeddings. ----
  for (std::size_t i = 0; i < batch.noisy_target.size(); ++i) {
    const ViewMap& m = batch.noisy_target[i];
    const std::string name = modality_name(m.modality);
    linear_backward_nodx(params_.at("dec.embed." + name + ".w"),
                         params_.at("dec.embed." + name + ".b"),
                         tape.target_patch_inputs[i],
                         dy.middleCols(static_cast<Index>(i) * tokens, tokens));
  }

  // ---- Timestep embedding chain. ----
  const VectorXd d_temb =
      d_temb_act.cwiseProduct(tape.temb.unaryExpr([](double v) { return silu_grad(v); }));
  params_.at("time.w2").grad += d_temb * tape.t_post1.transpose();
  params_.at("time.b2").grad.col(0) += d_temb;
  const VectorXd d_post1 = params_.at("time.w2").value.transpose() * d_temb;
  const VectorXd d_pre1 =
      d_post1.cwiseProduct(tape.t_pre1.unaryExpr([](double v) { return silu_grad(v); }));
  params_.at("time.w1").grad += d_pre1 * tape.t_sin.transpose();
  params_.at("time.b1").grad.col(0) += d_pre1;

  // ---- Encoder in reverse. ----
  if (nc > 0) {
    MatrixXd dx = affine_ln_backward(params_.at("enc.ln.g"), params_.at("enc.ln.b"),
                                     tape.enc_final_ln, d_enc_out);
    for (int bi = cfg_.enc_blocks - 1; bi >= 0; --bi) {
      const std::string p = "enc." + std::to_string(bi) + ".";
      EncBlockCache& bc = tape.enc_blocks[bi];
      {
        const MatrixXd d_m2 = dx;
        const MatrixXd d_post = linear_backward(params_.at(p + "mlp.w2"), params_.at(p + "mlp.b2"),
                                                bc.mlp.post_act, d_m2);
        const MatrixXd d_pre =
            d_post.cwiseProduct(bc.mlp.pre_act.unaryExpr([](double v) { return gelu_grad(v); }));
        const MatrixXd d_h2 = linear_backward(params_.at(p + "mlp.w1"), params_.at(p + "mlp.b1"),
                                              bc.mlp.input, d_pre);
        dx += affine_ln_backward(params_.at(p + "ln2.g"), params_.at(p + "ln2.b"),
                                 bc.ln2, d_h2);
      }
      {
        const MatrixXd d_o = dx;
        const MatrixXd d_attn = linear_backward(params_.at(p + "attn.wo"), params_.at(p + "attn.bo"),
                                                bc.attn.attn_out, d_o);
        MatrixXd dq, dk, dv;
        kernels::mha_backward(bc.attn.v, cfg_.heads, bc.attn.attn, tape.cond.tags,
                              tape.cond.tags, d_attn, dq, dk, dv);
        MatrixXd d_h1 = linear_backward(params_.at(p + "attn.wq"), params_.at(p + "attn.bq"),
                                        bc.attn.input, dq);
        d_h1 += linear_backward(params_.at(p + "attn.wk"), params_.at(p + "attn.bk"),
                                bc.attn.input, dk);
        d_h1 += linear_backward(params_.at(p + "attn.wv"), params_.at(p + "attn.bv"),
                                bc.attn.input, dv);
        dx += affine_ln_backward(params_.at(p + "ln1.g"), params_.at(p + "ln1.b"),
                                 bc.ln1, d_h1);
      }
    }
    for (std::size_t i = 0; i < batch.condition.size(); ++i) {
      const ViewMap& m = batch.condition[i];
      const std::string name = modality_name(m.modality);
      linear_backward_nodx(params_.at("enc.embed." + name + ".w"),
                           params_.at("enc.embed." + name + ".b"),
                           tape.cond_patch_inputs[i],
                           dx.middleCols(static_cast<Index>(i) * tokens, tokens));
    }
  }

  return value;
}

// ---- Checkpoint serialization ----

namespace {

constexpr char kCkptMagic[8] = {'M', 'X', 'K', 'C', 'K', 'P', 'T', '1'};

void put_u32(std::string& buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
void put_f64(std::string& buf, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
}

struct Reader {
  const unsigned char* p;
  std::size_t n;
  std::size_t pos = 0;
  std::uint32_t u32() {
    if (pos + 4 > n) throw Error::data("truncated checkpoint");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[pos++]) << (8 * i);
    return v;
  }
  double f64() {
    if (pos + 8 > n) throw Error::data("truncated checkpoint");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[pos++]) << (8 * i);
    double d;
    std::memcpy(&d, &v, 8);
    return d;
  }
};

std::uint32_t crc32_bytes(const void* data, std::size_t n) {
  static std::uint32_t table[256];
  static bool init = false;
  if (!init) {
    for (std::uint32_t i = 0; i < 256; ++i) {
      std::uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
      table[i] = c;
    }
    init = true;
  }
  std::uint32_t c = 0xFFFFFFFFu;
  const auto* b = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) c = table[(c ^ b[i]) & 0xFF] ^ (c >> 8);
  return c ^ 0xFFFFFFFFu;
}

void serialize_config(std::string& buf, const ModelConfig& c) {
  for (int v : {c.hidden_enc, c.hidden_dec, c.enc_blocks, c.dec_blocks, c.heads,
                c.max_views, c.rgb_res, c.rgb_patch, c.ray_res, c.ray_patch,
                c.depth_res, c.depth_patch, c.time_embed_dim})
    put_u32(buf, static_cast<std::uint32_t>(v));
  put_f64(buf, c.view_freq_base);
  put_f64(buf, c.modality_freq_base);
  put_f64(buf, c.time_freq_base);
}

ModelConfig deserialize_config(Reader& r) {
  ModelConfig c;
  int* fields[] = {&c.hidden_enc, &c.hidden_dec, &c.enc_blocks, &c.dec_blocks,
                   &c.heads, &c.max_views, &c.rgb_res, &c.rgb_patch, &c.ray_res,
                   &c.ray_patch, &c.depth_res, &c.depth_patch, &c.time_embed_dim};
  for (int*& f : fields) *f = static_cast<int>(r.u32());
  c.view_freq_base = r.f64();
  c.modality_freq_base = r.f64();
  c.time_freq_base = r.f64();
  return c;
}

}  // namespace

void Backbone::save_checkpoint(const std::string& path) const {
  std::string buf(kCkptMagic, 8);
  put_u32(buf, 1);  // format version
  serialize_config(buf, cfg_);
  put_u32(buf, static_cast<std::uint32_t>(params_.tensors().size()));
  for (const auto& t : params_.tensors()) {
    put_u32(buf, static_cast<std::uint32_t>(t.name.size()));
    buf.append(t.name);
    put_u32(buf, static_cast<std::uint32_t>(t.value.rows()));
    put_u32(buf, static_cast<std::uint32_t>(t.value.cols()));
    for (Index i = 0; i < t.value.size(); ++i) {
      const float f = static_cast<float>(t.value.data()[i]);  // column-major
      std::uint32_t bits;
      std::memcpy(&bits, &f, 4);
      put_u32(buf, bits);
    }
  }
  put_u32(buf, crc32_bytes(buf.data(), buf.size()));

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error::data("cannot write checkpoint: " + path);
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw Error::data("short checkpoint write: " + path);
}

Backbone Backbone::load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error::data("cannot open checkpoint: " + path);
  std::string buf((std::istreambuf_iterator<char>(in)),
                  std::istreambuf_iterator<char>());
  if (buf.size() < 16 || std::memcmp(buf.data(), kCkptMagic, 8) != 0)
    throw Error::data("not a checkpoint file: " + path);

  Reader tail{reinterpret_cast<const unsigned char*>(buf.data()), buf.size(),
              buf.size() - 4};
  const std::uint32_t want_crc = tail.u32();
  if (crc32_bytes(buf.data(), buf.size() - 4) != want_crc)
    throw Error::data("checkpoint checksum mismatch: " + path);

  Reader r{reinterpret_cast<const unsigned char*>(buf.data()), buf.size() - 4, 8};
  const std::uint32_t version = r.u32();
  if (version != 1) throw Error::data("unsupported checkpoint version");
  const ModelConfig cfg = deserialize_config(r);
  Backbone model(cfg);
  const std::uint32_t count = r.u32();
  if (count != model.params_.tensors().size())
    throw Error::data("checkpoint tensor count mismatch: " + path);
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t name_len = r.u32();
    if (r.pos + name_len > r.n) throw Error::data("truncated checkpoint");
    const std::string name(buf.data() + r.pos, name_len);
    r.pos += name_len;
    Tensor& t = model.params_.at(name);
    const std::uint32_t rows = r.u32();
    const std::uint32_t cols = r.u32();
    if (rows != t.value.rows() || cols != t.value.cols())
      throw Error::data("checkpoint tensor shape mismatch for " + name);
    for (Index k = 0; k < t.value.size(); ++k) {
      const std::uint32_t bits = r.u32();
      float f;
      std::memcpy(&f, &bits, 4);
      t.value.data()[k] = f;
    }
  }
  return model;
}

}  // namespace matrixkit
