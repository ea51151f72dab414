#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

namespace matrixkit {

enum class Modality : int { rgb = 0, pose = 1, depth = 2 };
constexpr int kNumModalities = 3;

const char* modality_name(Modality m);
Modality modality_from_name(const std::string& name);

// Channels fed to the model: RGB in pixel space, pose as Pluecker rays
// (direction + moment), depth as disparity + validity mask.
int modality_channels(Modality m);

struct ModelConfig {
  int hidden_enc = 128;
  int hidden_dec = 192;
  int enc_blocks = 4;
  int dec_blocks = 4;
  int heads = 4;
  int max_views = 4;

  // Map resolutions and patchify factors. All modalities must produce the
  // same token grid (resolution / patch).
  int rgb_res = 32;
  int rgb_patch = 4;
  int ray_res = 8;
  int ray_patch = 1;
  int depth_res = 16;
  int depth_patch = 2;

  int time_embed_dim = 128;
  double view_freq_base = 64.0;      // absolute sinusoidal view-id encoding
  double modality_freq_base = 8.0;   // absolute sinusoidal modality encoding
  double time_freq_base = 10000.0;   // timestep embedding

  int resolution(Modality m) const;
  int patch(Modality m) const;
  int token_grid() const;  // side of the per-map token grid
  int tokens_per_map() const;
  void validate() const;  // throws Error::data on any violated invariant
};

struct TokenTag {
  int view_id = 0;
  Modality modality = Modality::rgb;
  int gy = 0;
  int gx = 0;
};

// A single modality map of one view, flattened (y, x, c).
struct ViewMap {
  int view_id = 0;
  Modality modality = Modality::rgb;
  Eigen::VectorXd data;

  static ViewMap make(int view_id, Modality m, int res) {
    ViewMap v;
    v.view_id = view_id;
    v.modality = m;
    v.data = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(res) * res *
                                   modality_channels(m));
    return v;
  }
};

// Embedded tokens as columns plus their (view, modality, grid) tags.
struct TokenBatch {
  Eigen::MatrixXd tokens;
  std::vector<TokenTag> tags;
};

struct Tensor {
  std::string name;
  Eigen::MatrixXd value;
  Eigen::MatrixXd grad;
};

class ParamStore {
 public:
  Tensor& add(const std::string& name, Eigen::Index rows, Eigen::Index cols);
  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  std::vector<Tensor>& tensors() { return tensors_; }
  const std::vector<Tensor>& tensors() const { return tensors_; }
  std::size_t scalar_count() const;
  void zero_grad();
  void scale_grads(double factor);
  bool all_finite() const;
  std::uint64_t value_checksum() const;  // FNV-1a over raw little-endian bytes

 private:
  std::vector<Tensor> tensors_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Training batch: clean condition maps, corrupted target maps, v targets and
// per-entry loss weights (masked depth pixels carry weight 0).
struct Batch {
  std::vector<ViewMap> condition;
  std::vector<ViewMap> noisy_target;
  std::vector<ViewMap> v_target;
  std::vector<Eigen::VectorXd> loss_weight;
  int t = 0;
};

// Multi-view multi-modal diffusion transformer: a self-attention encoder over
// condition tokens and a decoder with self- plus cross-attention over noisy
// target tokens, adaptively normalized by the timestep embedding, predicting
// v per target map.
class Backbone {
 public:
  explicit Backbone(const ModelConfig& cfg);

  const ModelConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  // Truncated-normal weights (sigma 0.02), zero output heads and modulations.
  void init_params(std::uint64_t seed);

  // Test hook: every parameter random, so no gradient path is dead.
  void randomize_all_params(std::uint64_t seed, double sigma);

  // v-prediction per target map. Deterministic; the condition set may be
  // empty (unconditional branch), the target set may not.
  std::vector<ViewMap> forward(const std::vector<ViewMap>& condition,
                               const std::vector<ViewMap>& noisy_target,
                               int t) const;

  // Masked v-prediction MSE; accumulates parameter gradients when asked.
  double loss(const Batch& batch, bool accumulate_grads);

  void save_checkpoint(const std::string& path) const;
  static Backbone load_checkpoint(const std::string& path);

 private:
  ModelConfig cfg_;
  ParamStore params_;
};

// Mean of w .* (pred - target).^2 over entries with positive weight; the
// gradient w.r.t. pred is written when dpred is non-null.
double masked_mse(const std::vector<ViewMap>& pred,
                  const std::vector<ViewMap>& target,
                  const std::vector<Eigen::VectorXd>& weights,
                  std::vector<Eigen::VectorXd>* dpred = nullptr);

// Absolute sinusoidal positional encoding (sin/cos ladder) used for view and
// modality ids; exposed for tests.
Eigen::VectorXd sinusoidal_encoding(double position, int dim, double base);

namespace kernels {

// Multi-head scaled dot-product attention over token columns, parallel over
// heads. Rotary embeddings from the (gy, gx) tags are applied to q and k
// inside. Probabilities are returned per head for the backward pass.
struct AttentionCache {
  Eigen::MatrixXd q_rot, k_rot;               // post-RoPE projections
  std::vector<Eigen::MatrixXd> probs;         // per head, Nk x Nq
};

void mha_forward(const Eigen::MatrixXd& q, const Eigen::MatrixXd& k,
                 const Eigen::MatrixXd& v, int heads,
                 const std::vector<TokenTag>& q_tags,
                 const std::vector<TokenTag>& k_tags, Eigen::MatrixXd& out,
                 AttentionCache* cache);

// RoPE grid rotation for one matrix of head-stacked token columns.
void apply_rope(Eigen::MatrixXd& x, int heads, const std::vector<TokenTag>& tags,
                bool inverse);

}  // namespace kernels

}  // namespace matrixkit
