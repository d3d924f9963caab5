#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ltsfs/util.hpp"

namespace ltsfs {

struct ModelConfig {
  uint32_t n_layers = 8;
  uint32_t n_heads = 4;
  uint32_t d_model = 64;
  uint32_t d_mlp = 128;
  uint32_t vocab_size = 21;
  uint32_t max_seq_len = 288;

  uint32_t head_dim() const { return d_model / n_heads; }
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

// Ground-truth wiring request for a planted model: at each hallucination
// layer one head injects `strength` times the spurious token's unembedding
// direction whenever the trigger token is in context; task layers carry the
// scene-grounded response circuits.
struct PlantedSpec {
  std::vector<uint32_t> hallucination_layers;
  std::vector<uint32_t> task_layers;
  uint32_t trigger_token = 0;
  uint32_t spurious_token = 0;
  float strength = 0.0f;

  void validate(const ModelConfig& cfg) const;
  bool active() const { return strength > 0.0f && !hallucination_layers.empty(); }
  bool operator==(const PlantedSpec&) const = default;
};

struct LayerWeights {
  // attention, row-major [out][in]; head h owns output rows [h*dh, (h+1)*dh)
  std::vector<float> wq, wk, wv;  // d_model x d_model
  std::vector<float> bq;          // d_model (query bias)
  std::vector<float> wo;          // d_model x d_model, input index = h*dh + j
  // layernorms: ln1 wraps h_{l-1} + a_l, ln2 wraps the block output
  std::vector<float> ln1_g, ln1_b, ln2_g, ln2_b;  // d_model
  // mlp
  std::vector<float> w_in, b_in;    // d_mlp x d_model, d_mlp
  std::vector<float> w_out, b_out;  // d_model x d_mlp, d_model
};

// Immutable once built; safe to share across threads.
struct Model {
  ModelConfig config;
  std::vector<float> embed;      // vocab x d_model
  std::vector<float> pos_embed;  // max_seq_len x d_model
  std::vector<float> unembed;    // d_model x vocab
  std::vector<LayerWeights> layers;
  std::optional<PlantedSpec> planted;

  bool operator==(const Model&) const = default;
};

struct HeadMask {
  uint32_t layer = 0;
  uint32_t head = 0;
};

// Everything a teacher-forced pass produces, per position and layer.
struct ForwardTrace {
  std::vector<int> tokens;
  uint32_t n_layers = 0, n_heads = 0, d_model = 0, vocab = 0;

  std::vector<float> resid_in;   // [L][T][d]      h_{l-1}
  std::vector<float> head_out;   // [L][T][H][dh]  pre-projection head outputs
  std::vector<float> attn_out;   // [L][T][d]      a_l
  std::vector<float> block_out;  // [L][T][d]      h_l
  std::vector<float> logits;     // [T][V]
  std::vector<float> probs;      // [T][V]

  size_t seq_len() const { return tokens.size(); }
  std::span<const float> resid_at(size_t layer, size_t pos) const;
  std::span<const float> heads_at(size_t layer, size_t pos) const;  // H*dh floats
  std::span<const float> attn_at(size_t layer, size_t pos) const;
  std::span<const float> block_at(size_t layer, size_t pos) const;
  std::span<const float> logits_at(size_t pos) const;
  std::span<const float> probs_at(size_t pos) const;
};

// Per-layer intervention on block outputs during decoding (steering hook).
struct BlockOutputHook {
  virtual ~BlockOutputHook() = default;
  virtual void apply(size_t layer, std::span<float> h) const = 0;
};

Model build_random(const ModelConfig& cfg, uint64_t seed);

ForwardTrace forward_full(const Model& model, std::span<const int> tokens);

// Resume at `layer` with the attention output at `position` replaced by
// a_override, reusing the trace as cached context for every other position.
// Returns the probability vector at `position`.
std::vector<float> logits_from(const Model& model, const ForwardTrace& trace, size_t layer,
                               std::span<const float> a_override, size_t position);
// Same resume but returning raw logits (used by attribution and calibration).
std::vector<float> resume_logits(const Model& model, const ForwardTrace& trace, size_t layer,
                                 std::span<const float> a_override, size_t position);

// Stored a_l with head `mask.head`'s contribution removed (its post-projection
// share subtracted, which per-head linearity makes identical to zeroing the
// pre-projection slice).
std::vector<float> apply_head_mask(const Model& model, const ForwardTrace& trace, HeadMask mask,
                                   size_t position);

std::vector<int> generate(const Model& model, std::span<const int> prompt, size_t max_new,
                          const BlockOutputHook* hook = nullptr);

void save_weights(const Model& model, const std::string& path);
Model load_weights(const std::string& path);

// Low-level primitives shared with the planted builder and steering.
namespace kernels {
// y = W x, W row-major [rows][cols]; f64 accumulation.
void matvec(std::span<const float> w, std::span<const float> x, std::span<float> y, size_t rows,
            size_t cols);
void layernorm(std::span<const float> x, std::span<const float> gain, std::span<const float> bias,
               std::span<float> y);
void softmax_inplace(std::span<float> x);
float gelu(float x);
}  // namespace kernels

}  // namespace ltsfs
