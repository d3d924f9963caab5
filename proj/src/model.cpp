#include "ltsfs/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "ltsfs/rng.hpp"

namespace ltsfs {

namespace kernels {

void matvec(std::span<const float> w, std::span<const float> x, std::span<float> y, size_t rows,
            size_t cols) {
  for (size_t r = 0; r < rows; ++r) {
    const float* wr = w.data() + r * cols;
    double acc = 0.0;
    for (size_t c = 0; c < cols; ++c) acc += double(wr[c]) * double(x[c]);
    y[r] = float(acc);
  }
}

void layernorm(std::span<const float> x, std::span<const float> gain, std::span<const float> bias,
               std::span<float> y) {
  const size_t d = x.size();
  double mean = 0.0;
  for (size_t i = 0; i < d; ++i) mean += x[i];
  mean /= double(d);
  double var = 0.0;
  for (size_t i = 0; i < d; ++i) {
    double c = double(x[i]) - mean;
    var += c * c;
  }
  var /= double(d);
  const double inv = 1.0 / std::sqrt(var + 1e-5);
  for (size_t i = 0; i < d; ++i)
    y[i] = float((double(x[i]) - mean) * inv * double(gain[i]) + double(bias[i]));
}

void softmax_inplace(std::span<float> x) {
  double mx = -1e300;
  for (float v : x) mx = std::max(mx, double(v));
  double sum = 0.0;
  for (float& v : x) {
    double e = std::exp(double(v) - mx);
    v = float(e);
    sum += e;
  }
  for (float& v : x) v = float(double(v) / sum);
}

float gelu(float x) {
  return float(0.5 * double(x) * (1.0 + std::erf(double(x) * 0.7071067811865475244)));
}

}  // namespace kernels

void ModelConfig::validate() const {
  if (n_layers < 1 || n_heads < 1 || d_model < 1 || d_mlp < 1 || vocab_size < 1)
    throw InputError("model config fields must be >= 1");
  if (max_seq_len < 2) throw InputError("max_seq_len must be >= 2");
  if (d_model % n_heads != 0) throw InputError("d_model must be divisible by n_heads");
}

void PlantedSpec::validate(const ModelConfig& cfg) const {
  for (uint32_t l : hallucination_layers)
    if (l >= cfg.n_layers) throw InputError("hallucination layer out of range");
  for (uint32_t l : task_layers) {
    if (l >= cfg.n_layers) throw InputError("task layer out of range");
    for (uint32_t h : hallucination_layers)
      if (h == l) throw InputError("task and hallucination layers must be disjoint");
  }
  if (trigger_token >= cfg.vocab_size || spurious_token >= cfg.vocab_size)
    throw InputError("planted token id out of range");
  if (strength < 0.0f) throw InputError("planted strength must be >= 0");
}

std::span<const float> ForwardTrace::resid_at(size_t layer, size_t pos) const {
  return {resid_in.data() + (layer * seq_len() + pos) * d_model, d_model};
}
std::span<const float> ForwardTrace::heads_at(size_t layer, size_t pos) const {
  return {head_out.data() + (layer * seq_len() + pos) * d_model, d_model};
}
std::span<const float> ForwardTrace::attn_at(size_t layer, size_t pos) const {
  return {attn_out.data() + (layer * seq_len() + pos) * d_model, d_model};
}
std::span<const float> ForwardTrace::block_at(size_t layer, size_t pos) const {
  return {block_out.data() + (layer * seq_len() + pos) * d_model, d_model};
}
std::span<const float> ForwardTrace::logits_at(size_t pos) const {
  return {logits.data() + pos * vocab, vocab};
}
std::span<const float> ForwardTrace::probs_at(size_t pos) const {
  return {probs.data() + pos * vocab, vocab};
}

namespace {

// Attention for a single (layer, position). Context rows 0..t-1 provide
// cached keys/values; the query row supplies its own key/value fresh so the
// same routine serves the teacher-forced pass, the resume path and
// incremental decoding with identical arithmetic.
void attention_one(const Model& m, const LayerWeights& lw, std::span<const float> x_t,
                   const float* k_ctx, const float* v_ctx, size_t t, std::span<float> heads,
                   std::span<float> a, std::vector<double>& scores, std::vector<float>& kq_buf) {
  const uint32_t d = m.config.d_model;
  const uint32_t H = m.config.n_heads;
  const uint32_t dh = m.config.head_dim();
  const double inv_sqrt = 1.0 / std::sqrt(double(dh));

  // query/key/value of the query row itself
  float* q_t = kq_buf.data();
  float* k_t = kq_buf.data() + d;
  float* v_t = kq_buf.data() + 2 * d;
  kernels::matvec(lw.wq, x_t, {q_t, d}, d, d);
  for (uint32_t i = 0; i < d; ++i) q_t[i] += lw.bq[i];
  kernels::matvec(lw.wk, x_t, {k_t, d}, d, d);
  kernels::matvec(lw.wv, x_t, {v_t, d}, d, d);

  scores.resize(t + 1);
  for (uint32_t h = 0; h < H; ++h) {
    const float* qh = q_t + h * dh;
    // causal scores over s = 0..t
    double mx = -1e300;
    for (size_t s = 0; s <= t; ++s) {
      const float* ks = (s == t) ? k_t + h * dh : k_ctx + s * d + h * dh;
      double dot = 0.0;
      for (uint32_t j = 0; j < dh; ++j) dot += double(qh[j]) * double(ks[j]);
      scores[s] = dot * inv_sqrt;
      mx = std::max(mx, scores[s]);
    }
    double denom = 0.0;
    for (size_t s = 0; s <= t; ++s) {
      scores[s] = std::exp(scores[s] - mx);
      denom += scores[s];
    }
    float* out_h = heads.data() + h * dh;
    for (uint32_t j = 0; j < dh; ++j) {
      double acc = 0.0;
      for (size_t s = 0; s <= t; ++s) {
        const float* vs = (s == t) ? v_t + h * dh : v_ctx + s * d + h * dh;
        acc += (scores[s] / denom) * double(vs[j]);
      }
      out_h[j] = float(acc);
    }
  }
  kernels::matvec(lw.wo, heads, a, d, d);
}

// MLP-plus-double-layernorm tail of a block: given h_{l-1} and a_l, produce
// h_l. The inner norm of (h_{l-1} + a_l) is computed once and reused both as
// the MLP input and in the output residual.
void block_tail(const Model& m, const LayerWeights& lw, std::span<const float> x,
                std::span<const float> a, std::span<float> h_out, std::vector<float>& scratch) {
  const uint32_t d = m.config.d_model;
  const uint32_t dm = m.config.d_mlp;
  scratch.resize(size_t(2) * d + 2 * dm);
  float* u = scratch.data();            // h_{l-1} + a_l
  float* n1 = scratch.data() + d;       // LN(h_{l-1} + a_l)
  float* mid = scratch.data() + 2 * d;  // mlp hidden
  float* act = mid + dm;
  for (uint32_t i = 0; i < d; ++i) u[i] = float(double(x[i]) + double(a[i]));
  kernels::layernorm({u, d}, lw.ln1_g, lw.ln1_b, {n1, d});
  kernels::matvec(lw.w_in, {n1, d}, {mid, dm}, dm, d);
  for (uint32_t i = 0; i < dm; ++i) act[i] = kernels::gelu(mid[i] + lw.b_in[i]);
  // reuse u as x_l + n1
  kernels::matvec(lw.w_out, {act, dm}, {u, d}, d, dm);
  for (uint32_t i = 0; i < d; ++i) u[i] = float(double(u[i]) + double(lw.b_out[i]) + double(n1[i]));
  kernels::layernorm({u, d}, lw.ln2_g, lw.ln2_b, h_out);
}

void unembed_logits(const Model& m, std::span<const float> h, std::span<float> out) {
  const uint32_t d = m.config.d_model;
  const uint32_t v = m.config.vocab_size;
  for (uint32_t y = 0; y < v; ++y) {
    double acc = 0.0;
    for (uint32_t i = 0; i < d; ++i) acc += double(h[i]) * double(m.unembed[i * v + y]);
    out[y] = float(acc);
  }
}

// Key/value cache layered alongside a trace (not persisted).
struct KvCache {
  std::vector<float> k, v;  // [L][T][d]
};

void fill_embedding(const Model& m, int token, size_t pos, std::span<float> out) {
  const uint32_t d = m.config.d_model;
  const float* e = m.embed.data() + size_t(token) * d;
  const float* p = m.pos_embed.data() + pos * d;
  for (uint32_t i = 0; i < d; ++i) out[i] = float(double(e[i]) + double(p[i]));
}

}  // namespace

ForwardTrace forward_full(const Model& model, std::span<const int> tokens) {
  const ModelConfig& cfg = model.config;
  if (tokens.empty()) throw InputError("empty token sequence");
  if (tokens.size() > cfg.max_seq_len) throw CapacityError("sequence exceeds max_seq_len");
  for (int t : tokens)
    if (t < 0 || uint32_t(t) >= cfg.vocab_size) throw InputError("token id out of range");

  const size_t T = tokens.size();
  const uint32_t d = cfg.d_model;
  const uint32_t L = cfg.n_layers;

  ForwardTrace tr;
  tr.tokens.assign(tokens.begin(), tokens.end());
  tr.n_layers = L;
  tr.n_heads = cfg.n_heads;
  tr.d_model = d;
  tr.vocab = cfg.vocab_size;
  tr.resid_in.resize(size_t(L) * T * d);
  tr.head_out.resize(size_t(L) * T * d);
  tr.attn_out.resize(size_t(L) * T * d);
  tr.block_out.resize(size_t(L) * T * d);
  tr.logits.resize(T * cfg.vocab_size);
  tr.probs.resize(T * cfg.vocab_size);

  for (size_t t = 0; t < T; ++t)
    fill_embedding(model, tokens[t], t, {tr.resid_in.data() + t * d, d});

  std::vector<float> k_rows(T * d), v_rows(T * d), kq_buf(3 * d), scratch;
  std::vector<double> scores;
  for (uint32_t l = 0; l < L; ++l) {
    const LayerWeights& lw = model.layers[l];
    float* resid = tr.resid_in.data() + size_t(l) * T * d;
    for (size_t s = 0; s < T; ++s) {
      kernels::matvec(lw.wk, {resid + s * d, d}, {k_rows.data() + s * d, d}, d, d);
      kernels::matvec(lw.wv, {resid + s * d, d}, {v_rows.data() + s * d, d}, d, d);
    }
    for (size_t t = 0; t < T; ++t) {
      float* heads = tr.head_out.data() + (size_t(l) * T + t) * d;
      float* a = tr.attn_out.data() + (size_t(l) * T + t) * d;
      // context K/V comes from the precomputed rows; the query row's own
      // K/V is recomputed inside for parity with the incremental path.
      attention_one(model, lw, {resid + t * d, d}, k_rows.data(), v_rows.data(), t, {heads, d},
                    {a, d}, scores, kq_buf);
      float* h_out = (l + 1 < L) ? tr.resid_in.data() + (size_t(l + 1) * T + t) * d
                                 : tr.block_out.data() + (size_t(l) * T + t) * d;
      block_tail(model, lw, {resid + t * d, d}, {a, d}, {h_out, d}, scratch);
      if (l + 1 < L)
        std::memcpy(tr.block_out.data() + (size_t(l) * T + t) * d, h_out, d * sizeof(float));
    }
  }
  for (size_t t = 0; t < T; ++t) {
    float* lg = tr.logits.data() + t * cfg.vocab_size;
    unembed_logits(model, tr.block_at(L - 1, t), {lg, cfg.vocab_size});
    std::memcpy(tr.probs.data() + t * cfg.vocab_size, lg, cfg.vocab_size * sizeof(float));
    kernels::softmax_inplace({tr.probs.data() + t * cfg.vocab_size, cfg.vocab_size});
  }
  return tr;
}

std::vector<float> resume_logits(const Model& model, const ForwardTrace& trace, size_t layer,
                                 std::span<const float> a_override, size_t position) {
  const ModelConfig& cfg = model.config;
  if (layer >= cfg.n_layers) throw InputError("layer out of range");
  if (position >= trace.seq_len()) throw InputError("position out of range");
  if (a_override.size() != cfg.d_model) throw InputError("override vector has wrong dimension");

  const uint32_t d = cfg.d_model;
  const size_t T = trace.seq_len();
  std::vector<float> h(d), kq_buf(3 * d), scratch, heads(d), a(d);
  std::vector<double> scores;
  std::vector<float> k_rows(position * d), v_rows(position * d);

  block_tail(model, model.layers[layer], trace.resid_at(layer, position), a_override, {h.data(), d},
             scratch);
  for (uint32_t l = uint32_t(layer) + 1; l < cfg.n_layers; ++l) {
    const LayerWeights& lw = model.layers[l];
    const float* resid = trace.resid_in.data() + size_t(l) * T * d;
    for (size_t s = 0; s < position; ++s) {
      kernels::matvec(lw.wk, {resid + s * d, d}, {k_rows.data() + s * d, d}, d, d);
      kernels::matvec(lw.wv, {resid + s * d, d}, {v_rows.data() + s * d, d}, d, d);
    }
    attention_one(model, lw, {h.data(), d}, k_rows.data(), v_rows.data(), position,
                  {heads.data(), d}, {a.data(), d}, scores, kq_buf);
    block_tail(model, lw, {h.data(), d}, {a.data(), d}, {h.data(), d}, scratch);
  }
  std::vector<float> out(cfg.vocab_size);
  unembed_logits(model, {h.data(), d}, {out.data(), cfg.vocab_size});
  return out;
}

std::vector<float> logits_from(const Model& model, const ForwardTrace& trace, size_t layer,
                               std::span<const float> a_override, size_t position) {
  std::vector<float> out = resume_logits(model, trace, layer, a_override, position);
  kernels::softmax_inplace({out.data(), out.size()});
  return out;
}

std::vector<float> apply_head_mask(const Model& model, const ForwardTrace& trace, HeadMask mask,
                                   size_t position) {
  const ModelConfig& cfg = model.config;
  if (mask.layer >= cfg.n_layers) throw InputError("mask layer out of range");
  if (mask.head >= cfg.n_heads) throw InputError("mask head out of range");
  if (position >= trace.seq_len()) throw InputError("position out of range");

  const uint32_t d = cfg.d_model;
  const uint32_t dh = cfg.head_dim();
  std::span<const float> heads = trace.heads_at(mask.layer, position);
  const LayerWeights& lw = model.layers[mask.layer];
  // Re-project with the masked head's pre-projection slice zeroed; skipping
  // the slice inside the accumulation keeps the result bitwise equal to the
  // stored a_l whenever that head's output was already zero.
  std::vector<float> out(d);
  const size_t lo = size_t(mask.head) * dh, hi = lo + dh;
  for (uint32_t r = 0; r < d; ++r) {
    const float* wr = lw.wo.data() + size_t(r) * d;
    double acc = 0.0;
    for (uint32_t c = 0; c < d; ++c) {
      if (c >= lo && c < hi) continue;
      acc += double(wr[c]) * double(heads[c]);
    }
    out[r] = float(acc);
  }
  return out;
}

std::vector<int> generate(const Model& model, std::span<const int> prompt, size_t max_new,
                          const BlockOutputHook* hook) {
  const ModelConfig& cfg = model.config;
  if (prompt.empty()) throw InputError("empty prompt");
  if (prompt.size() + max_new > cfg.max_seq_len)
    throw CapacityError("prompt plus max_new exceeds max_seq_len");
  for (int t : prompt)
    if (t < 0 || uint32_t(t) >= cfg.vocab_size) throw InputError("token id out of range");

  const uint32_t d = cfg.d_model;
  const uint32_t L = cfg.n_layers;
  const size_t cap = prompt.size() + max_new;

  // Per-layer incremental context: block inputs h_{l-1} plus cached K/V.
  std::vector<std::vector<float>> resid(L), kc(L), vc(L);
  for (uint32_t l = 0; l < L; ++l) {
    resid[l].reserve(cap * d);
    kc[l].reserve(cap * d);
    vc[l].reserve(cap * d);
  }

  std::vector<int> seq(prompt.begin(), prompt.end());
  std::vector<float> h(d), heads(d), a(d), kq_buf(3 * d), scratch, logits(cfg.vocab_size);
  std::vector<double> scores;

  auto process_position = [&](size_t t) {
    fill_embedding(model, seq[t], t, {h.data(), d});
    for (uint32_t l = 0; l < L; ++l) {
      const LayerWeights& lw = model.layers[l];
      resid[l].insert(resid[l].end(), h.begin(), h.end());
      attention_one(model, lw, {h.data(), d}, kc[l].data(), vc[l].data(), t, {heads.data(), d},
                    {a.data(), d}, scores, kq_buf);
      // cache this row's K/V (recomputed to match attention_one's arithmetic)
      size_t off = kc[l].size();
      kc[l].resize(off + d);
      vc[l].resize(off + d);
      kernels::matvec(lw.wk, {resid[l].data() + t * d, d}, {kc[l].data() + off, d}, d, d);
      kernels::matvec(lw.wv, {resid[l].data() + t * d, d}, {vc[l].data() + off, d}, d, d);
      block_tail(model, lw, {resid[l].data() + t * d, d}, {a.data(), d}, {h.data(), d}, scratch);
      if (hook) hook->apply(l, {h.data(), d});
    }
  };

  for (size_t t = 0; t < prompt.size(); ++t) process_position(t);
  for (size_t step = 0; step < max_new; ++step) {
    unembed_logits(model, {h.data(), d}, {logits.data(), cfg.vocab_size});
    int best = 0;
    for (uint32_t y = 1; y < cfg.vocab_size; ++y)
      if (logits[y] > logits[best]) best = int(y);
    seq.push_back(best);
    process_position(seq.size() - 1);
  }
  return {seq.begin() + prompt.size(), seq.end()};
}

Model build_random(const ModelConfig& cfg, uint64_t seed) {
  cfg.validate();
  Rng rng(seed ^ 0x5151000051510000ull);
  const uint32_t d = cfg.d_model, V = cfg.vocab_size, S = cfg.max_seq_len, M = cfg.d_mlp;

  auto fill = [&](std::vector<float>& v, size_t n, double scale) {
    v.resize(n);
    for (auto& x : v) x = float(rng.next_gaussian() * scale);
  };

  Model m;
  m.config = cfg;
  fill(m.embed, size_t(V) * d, 0.8);
  fill(m.pos_embed, size_t(S) * d, 0.1);
  fill(m.unembed, size_t(d) * V, 1.0 / std::sqrt(double(d)));
  m.layers.resize(cfg.n_layers);
  const double ws = 1.0 / std::sqrt(double(d));
  for (auto& lw : m.layers) {
    fill(lw.wq, size_t(d) * d, ws);
    fill(lw.wk, size_t(d) * d, ws);
    fill(lw.wv, size_t(d) * d, ws);
    lw.bq.assign(d, 0.0f);
    fill(lw.wo, size_t(d) * d, ws);
    lw.ln1_g.resize(d);
    lw.ln1_b.resize(d);
    lw.ln2_g.resize(d);
    lw.ln2_b.resize(d);
    for (uint32_t i = 0; i < d; ++i) {
      lw.ln1_g[i] = float(1.0 + rng.next_gaussian() * 0.05);
      lw.ln1_b[i] = float(rng.next_gaussian() * 0.05);
      lw.ln2_g[i] = float(1.0 + rng.next_gaussian() * 0.05);
      lw.ln2_b[i] = float(rng.next_gaussian() * 0.05);
    }
    fill(lw.w_in, size_t(M) * d, ws);
    fill(lw.b_in, M, 0.02);
    fill(lw.w_out, size_t(d) * M, 1.0 / std::sqrt(double(M)));
    fill(lw.b_out, d, 0.02);
  }
  return m;
}

namespace {

constexpr char kWeightMagic[8] = {'L', 'T', 'S', 'F', 'W', 'G', 'T', '1'};

void push_layer_tensors(std::vector<NamedTensor>& ts, const ModelConfig& cfg, uint32_t l,
                        const LayerWeights& lw) {
  const uint32_t d = cfg.d_model, M = cfg.d_mlp;
  std::string p = "layers." + std::to_string(l) + ".";
  ts.push_back({p + "wq", {d, d}, lw.wq});
  ts.push_back({p + "wk", {d, d}, lw.wk});
  ts.push_back({p + "wv", {d, d}, lw.wv});
  ts.push_back({p + "bq", {d}, lw.bq});
  ts.push_back({p + "wo", {d, d}, lw.wo});
  ts.push_back({p + "ln1_g", {d}, lw.ln1_g});
  ts.push_back({p + "ln1_b", {d}, lw.ln1_b});
  ts.push_back({p + "ln2_g", {d}, lw.ln2_g});
  ts.push_back({p + "ln2_b", {d}, lw.ln2_b});
  ts.push_back({p + "w_in", {M, d}, lw.w_in});
  ts.push_back({p + "b_in", {M}, lw.b_in});
  ts.push_back({p + "w_out", {d, M}, lw.w_out});
  ts.push_back({p + "b_out", {d}, lw.b_out});
}

}  // namespace

void save_weights(const Model& model, const std::string& path) {
  const ModelConfig& cfg = model.config;
  ByteWriter w;
  w.raw(kWeightMagic, 8);
  w.u32(cfg.n_layers);
  w.u32(cfg.n_heads);
  w.u32(cfg.d_model);
  w.u32(cfg.d_mlp);
  w.u32(cfg.vocab_size);
  w.u32(cfg.max_seq_len);
  w.u32(model.planted ? 1u : 0u);

  std::vector<NamedTensor> ts;
  ts.push_back({"embed", {cfg.vocab_size, cfg.d_model}, model.embed});
  ts.push_back({"pos_embed", {cfg.max_seq_len, cfg.d_model}, model.pos_embed});
  ts.push_back({"unembed", {cfg.d_model, cfg.vocab_size}, model.unembed});
  for (uint32_t l = 0; l < cfg.n_layers; ++l) push_layer_tensors(ts, cfg, l, model.layers[l]);
  for (const auto& t : ts) write_tensor(w, t);

  if (model.planted) {
    const PlantedSpec& ps = *model.planted;
    w.u32(uint32_t(ps.hallucination_layers.size()));
    for (uint32_t l : ps.hallucination_layers) w.u32(l);
    w.u32(uint32_t(ps.task_layers.size()));
    for (uint32_t l : ps.task_layers) w.u32(l);
    w.u32(ps.trigger_token);
    w.u32(ps.spurious_token);
    w.f32(ps.strength);
  }
  w.u32(crc32(w.bytes.data() + 8, w.bytes.size() - 8));
  write_file_bytes(path, w.bytes);
}

Model load_weights(const std::string& path) {
  std::vector<uint8_t> bytes = read_file_bytes(path);
  if (bytes.size() < 12) throw FormatError("truncated weight file: " + path);
  if (std::memcmp(bytes.data(), kWeightMagic, 7) != 0)
    throw FormatError("bad magic in weight file: " + path);
  if (bytes[7] != uint8_t(kWeightMagic[7]))
    throw FormatError("unsupported weight file version " + std::to_string(int(bytes[7])));

  uint32_t stored_crc;
  std::memcpy(&stored_crc, bytes.data() + bytes.size() - 4, 4);
  if (crc32(bytes.data() + 8, bytes.size() - 12) != stored_crc)
    throw FormatError("checksum mismatch in weight file: " + path);

  ByteReader r{{bytes.data(), bytes.size() - 4}, 8};
  Model m;
  m.config.n_layers = r.u32();
  m.config.n_heads = r.u32();
  m.config.d_model = r.u32();
  m.config.d_mlp = r.u32();
  m.config.vocab_size = r.u32();
  m.config.max_seq_len = r.u32();
  const uint32_t planted_flag = r.u32();
  m.config.validate();

  auto expect = [&](const char* name, std::vector<uint32_t> dims) {
    NamedTensor t = read_tensor(r);
    if (t.name != name) throw FormatError("unexpected tensor '" + t.name + "', wanted " + name);
    if (t.dims != dims) throw FormatError("bad shape for tensor " + t.name);
    return std::move(t.data);
  };

  const uint32_t d = m.config.d_model, M = m.config.d_mlp;
  m.embed = expect("embed", {m.config.vocab_size, d});
  m.pos_embed = expect("pos_embed", {m.config.max_seq_len, d});
  m.unembed = expect("unembed", {d, m.config.vocab_size});
  m.layers.resize(m.config.n_layers);
  for (uint32_t l = 0; l < m.config.n_layers; ++l) {
    std::string p = "layers." + std::to_string(l) + ".";
    LayerWeights& lw = m.layers[l];
    lw.wq = expect((p + "wq").c_str(), {d, d});
    lw.wk = expect((p + "wk").c_str(), {d, d});
    lw.wv = expect((p + "wv").c_str(), {d, d});
    lw.bq = expect((p + "bq").c_str(), {d});
    lw.wo = expect((p + "wo").c_str(), {d, d});
    lw.ln1_g = expect((p + "ln1_g").c_str(), {d});
    lw.ln1_b = expect((p + "ln1_b").c_str(), {d});
    lw.ln2_g = expect((p + "ln2_g").c_str(), {d});
    lw.ln2_b = expect((p + "ln2_b").c_str(), {d});
    lw.w_in = expect((p + "w_in").c_str(), {M, d});
    lw.b_in = expect((p + "b_in").c_str(), {M});
    lw.w_out = expect((p + "w_out").c_str(), {d, M});
    lw.b_out = expect((p + "b_out").c_str(), {d});
  }
  if (planted_flag) {
    PlantedSpec ps;
    uint32_t nh = r.u32();
    for (uint32_t i = 0; i < nh; ++i) ps.hallucination_layers.push_back(r.u32());
    uint32_t nt = r.u32();
    for (uint32_t i = 0; i < nt; ++i) ps.task_layers.push_back(r.u32());
    ps.trigger_token = r.u32();
    ps.spurious_token = r.u32();
    ps.strength = r.f32();
    ps.validate(m.config);
    m.planted = ps;
  }
  return m;
}

}  // namespace ltsfs
