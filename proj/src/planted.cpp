#include "ltsfs/planted.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "ltsfs/rng.hpp"
#include "ltsfs/scene.hpp"

namespace ltsfs {

namespace {

// Score-space design targets (units of q.k/sqrt(dh), i.e. softmax logits).
constexpr double kInjTrig = 50.0, kInjSink = 18.0;
constexpr double kCopySlot = 40.0, kCopySink = 14.0;
constexpr double kScanMatch = 24.0, kScanBase = 30.0, kScanSink = 44.0;
constexpr double kNoAsk = 45.0, kNoSink = 16.0;
constexpr double kPerBos = 45.0, kPerSink = 16.0;

// Output-logit design targets. The injection target is the planted strength.
constexpr double kCopyBoost = 2.6;
constexpr double kScanBoost = 3.6;
constexpr double kNoBoost = 1.8;
constexpr double kPeriodBoost = 12.0;

constexpr double kEmbedScale = 4.0;
constexpr double kPosNoise = 0.25;
constexpr double kTagScale = 3.0;
constexpr double kJunkAttn = 0.02;

// Caption slots wired into the injection driver: only reads of these slots
// (plus the scene positions themselves) receive the spurious push, so every
// trigger caption keeps faithful sentences in the later slots.
constexpr int kInjectedSlots = 3;

struct DirectionBank {
  // residual-space orthonormal directions
  std::vector<std::vector<float>> token;   // per vocab id (embed row / scale)
  std::vector<std::vector<float>> slot;    // bankA: scene slot tags
  std::vector<std::vector<float>> sched;   // bankB: caption schedule tags
  std::vector<float> odd_tag;              // period half of the schedule
};

std::vector<std::vector<float>> orthonormal_set(size_t count, size_t d, Rng& rng) {
  std::vector<std::vector<float>> out;
  out.reserve(count);
  while (out.size() < count) {
    std::vector<double> v(d);
    for (auto& x : v) x = rng.next_gaussian();
    for (const auto& prev : out) {
      double dot = 0;
      for (size_t i = 0; i < d; ++i) dot += v[i] * prev[i];
      for (size_t i = 0; i < d; ++i) v[i] -= dot * prev[i];
    }
    double norm = 0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    if (norm < 1e-6) continue;  // retry on degenerate draw
    std::vector<float> f(d);
    for (size_t i = 0; i < d; ++i) f[i] = float(v[i] / norm);
    out.push_back(std::move(f));
  }
  return out;
}

double dot_dir(std::span<const float> h, const std::vector<float>& dir) {
  double acc = 0;
  for (size_t i = 0; i < h.size(); ++i) acc += double(h[i]) * double(dir[i]);
  return acc;
}

// Writes an outer-product term coef * (head_channel ch of head `head`) x dir
// into an attention parameter matrix (wq/wk/wv), accumulating.
void add_channel(std::vector<float>& w, const ModelConfig& cfg, uint32_t head, uint32_t ch,
                 const std::vector<float>& dir, double coef) {
  const uint32_t d = cfg.d_model;
  const uint32_t row = head * cfg.head_dim() + ch;
  for (uint32_t c = 0; c < d; ++c) w[size_t(row) * d + c] += float(coef * double(dir[c]));
}

// Output-projection column: head channel ch -> coef * dir in the residual.
void add_out_column(std::vector<float>& wo, const ModelConfig& cfg, uint32_t head, uint32_t ch,
                    const std::vector<float>& dir, double coef) {
  const uint32_t d = cfg.d_model;
  const uint32_t col = head * cfg.head_dim() + ch;
  for (uint32_t r = 0; r < d; ++r) wo[size_t(r) * d + col] += float(coef * double(dir[r]));
}

struct Builder {
  const ModelConfig& cfg;
  const PlantedSpec& spec;
  Model m;
  SceneVocab vocab;
  DirectionBank bank;
  Scene canon_scene;           // trigger-free scene used for calibration
  std::vector<int> canon_caption, canon_probe_present, canon_probe_absent;
  int canon_present_query = 0, canon_absent_query = 0;

  Builder(const ModelConfig& c, const PlantedSpec& s) : cfg(c), spec(s) { vocab.vocab_size = c.vocab_size; }

  double overlap(std::span<const int> tokens, uint32_t layer, size_t pos,
                 const std::vector<float>& dir) {
    ForwardTrace tr = forward_full(m, tokens);
    return dot_dir(tr.resid_at(layer, pos), dir);
  }

  void build_base(uint64_t seed);
  void wire_task_layers();
  void calibrate_task_outputs();
  void wire_injection_head(uint32_t layer);
  void calibrate_injection();
  void check_postconditions();
};

void Builder::build_base(uint64_t seed) {
  Rng rng(seed ^ 0x1a57f500f1e1dull);
  const uint32_t d = cfg.d_model, V = cfg.vocab_size, S = cfg.max_seq_len, M = cfg.d_mlp;

  const size_t n_dirs = size_t(V) + kSceneSlots + kSceneSlots + 1;
  if (n_dirs > d) throw ConstructionError("d_model too small for the planted direction bank");
  auto dirs = orthonormal_set(n_dirs, d, rng);
  bank.token.assign(dirs.begin(), dirs.begin() + V);
  bank.slot.assign(dirs.begin() + V, dirs.begin() + V + kSceneSlots);
  bank.sched.assign(dirs.begin() + V + kSceneSlots, dirs.begin() + V + 2 * kSceneSlots);
  bank.odd_tag = dirs[V + 2 * kSceneSlots];

  m.config = cfg;
  m.embed.assign(size_t(V) * d, 0.0f);
  for (uint32_t v = 0; v < V; ++v)
    for (uint32_t i = 0; i < d; ++i) m.embed[size_t(v) * d + i] = float(kEmbedScale * bank.token[v][i]);
  // tied unembedding: the readable feature directions double as logit axes
  m.unembed.assign(size_t(d) * V, 0.0f);
  for (uint32_t v = 0; v < V; ++v)
    for (uint32_t i = 0; i < d; ++i) m.unembed[size_t(i) * V + v] = m.embed[size_t(v) * d + i];

  m.pos_embed.assign(size_t(S) * d, 0.0f);
  for (uint32_t p = 0; p < S; ++p) {
    float* pe = m.pos_embed.data() + size_t(p) * d;
    for (uint32_t i = 0; i < d; ++i) pe[i] = float(rng.next_gaussian() * kPosNoise);
    if (p >= kSlotBase && p < kSlotBase + kSceneSlots) {
      const auto& tag = bank.slot[p - kSlotBase];
      for (uint32_t i = 0; i < d; ++i) pe[i] += float(kTagScale * tag[i]);
    }
    int slot = slot_for_position(p);
    if (slot >= 0) {
      const auto& tag = bank.sched[slot];
      for (uint32_t i = 0; i < d; ++i) pe[i] += float(kTagScale * tag[i]);
    }
    if (is_period_position(p))
      for (uint32_t i = 0; i < d; ++i) pe[i] += float(kTagScale * bank.odd_tag[i]);
  }

  m.layers.resize(cfg.n_layers);
  for (auto& lw : m.layers) {
    auto fill = [&](std::vector<float>& w, size_t n, double scale) {
      w.resize(n);
      for (auto& x : w) x = float(rng.next_gaussian() * scale);
    };
    fill(lw.wq, size_t(d) * d, kJunkAttn);
    fill(lw.wk, size_t(d) * d, kJunkAttn);
    fill(lw.wv, size_t(d) * d, kJunkAttn);
    lw.bq.assign(d, 0.0f);
    fill(lw.wo, size_t(d) * d, kJunkAttn);
    lw.ln1_g.assign(d, 1.0f);
    lw.ln1_b.assign(d, 0.0f);
    lw.ln2_g.assign(d, 1.0f);
    lw.ln2_b.assign(d, 0.0f);
    fill(lw.w_in, size_t(M) * d, 0.02);
    fill(lw.b_in, M, 0.01);
    fill(lw.w_out, size_t(d) * M, 0.02);
    fill(lw.b_out, d, 0.01);
  }

  // Calibration prompts use the three highest object ids, skipping the
  // planted pair so the canonical scene is trigger-free.
  canon_scene.id = -1;
  for (int tok = int(V) - 1; tok >= SceneVocab::kFirstObject && int(canon_scene.objects.size()) < 3;
       --tok) {
    if (tok == int(spec.trigger_token) || tok == int(spec.spurious_token)) continue;
    canon_scene.objects.push_back(tok);
  }
  std::sort(canon_scene.objects.begin(), canon_scene.objects.end());
  if (canon_scene.objects.size() < 3)
    throw ConstructionError("vocab too small for calibration scenes");
  canon_caption = make_caption_prompt(canon_scene);
  canon_present_query = canon_scene.objects[0];
  canon_absent_query = -1;
  for (int tok = SceneVocab::kFirstObject; tok < int(V); ++tok) {
    if (canon_scene.contains(tok) || tok == int(spec.trigger_token) ||
        tok == int(spec.spurious_token))
      continue;
    canon_absent_query = tok;
    break;
  }
  if (canon_absent_query < 0) throw ConstructionError("no absent object available for calibration");
  canon_probe_present = make_probe_prompt(canon_scene, canon_present_query);
  canon_probe_absent = make_probe_prompt(canon_scene, canon_absent_query);
}

void Builder::wire_task_layers() {
  if (spec.task_layers.empty()) return;
  if (cfg.n_heads < 4) throw InputError("task circuits need at least 4 heads");
  const uint32_t dh = cfg.head_dim();
  const int n_obj = vocab.n_objects();
  if (n_obj < 2) throw InputError("object vocabulary too small");
  if (uint32_t(n_obj) + 2 > dh || uint32_t(kSceneSlots) + 1 > dh)
    throw InputError("head_dim too small for the task identity maps");

  const uint32_t probe_layer = spec.task_layers.front();
  const double sq = std::sqrt(double(dh));
  const double share = 1.0 / double(spec.task_layers.size());

  // measured content/tag reads at the wiring sites (trigger-free prompts)
  const double rho_bos = overlap(canon_caption, probe_layer, 0, bank.token[SceneVocab::kBos]);
  const double rho_sep = overlap(canon_caption, probe_layer, kSepPos, bank.token[SceneVocab::kSep]);
  const double rho_ask = overlap(canon_probe_absent, probe_layer, kModePos, bank.token[SceneVocab::kAsk]);
  const double rho_slot = overlap(canon_caption, probe_layer, kSlotBase, bank.slot[0]);
  const double rho_obj = overlap(canon_caption, probe_layer, kSlotBase,
                                 bank.token[canon_scene.objects[0]]);
  const double rho_sched = overlap(canon_caption, probe_layer, kModePos, bank.sched[0]);
  const double rho_odd = overlap(canon_caption, probe_layer, kModePos + 1, bank.odd_tag);
  const double rho_query = overlap(canon_probe_present, probe_layer, kProbeAnswerPos,
                                   bank.token[canon_present_query]);
  for (double rho : {rho_bos, rho_sep, rho_ask, rho_slot, rho_obj, rho_sched, rho_odd, rho_query})
    if (rho < 0.5) throw ConstructionError("degenerate direction overlap during wiring");

  for (uint32_t layer : spec.task_layers) {
    LayerWeights& lw = m.layers[layer];

    // head 0: slot copy. Query reads the schedule tag of the position, keys
    // carry the slot tags, values map slot content to its own logit axis
    // (PAD maps to the period so short scenes emit empty sentences).
    {
      const uint32_t head = 0;
      add_channel(lw.wk, cfg, head, 0, bank.token[SceneVocab::kBos], kCopySink * sq / rho_bos);
      for (uint32_t j = 0; j < kSceneSlots; ++j) {
        double c = std::sqrt(kCopySlot * sq / (rho_sched * rho_slot));
        add_channel(lw.wq, cfg, head, 1 + j, bank.sched[j], c);
        add_channel(lw.wk, cfg, head, 1 + j, bank.slot[j], c);
      }
      lw.bq[head * dh + 0] += 1.0f;
      for (int o = 0; o < n_obj; ++o) {
        add_channel(lw.wv, cfg, head, 2 + uint32_t(o) % (dh - 2),
                    bank.token[SceneVocab::kFirstObject + o], 1.0 / rho_obj);
        add_out_column(lw.wo, cfg, head, 2 + uint32_t(o) % (dh - 2),
                       bank.token[SceneVocab::kFirstObject + o], kCopyBoost);
      }
      add_channel(lw.wv, cfg, head, 1, bank.token[SceneVocab::kPad], 1.0 / rho_obj);
      add_out_column(lw.wo, cfg, head, 1, bank.token[SceneVocab::kPeriod], kCopyBoost);
    }

    // head 1: content scan. Matching a slot's object against the current
    // content answers presence probes; a strong sink keeps the bare
    // self-match from firing outside slot positions.
    {
      const uint32_t head = 1;
      add_channel(lw.wk, cfg, head, 0, bank.token[SceneVocab::kBos], kScanSink * sq / rho_bos);
      lw.bq[head * dh + 0] += 1.0f;
      for (uint32_t j = 0; j < kSceneSlots; ++j)
        add_channel(lw.wk, cfg, head, 1, bank.slot[j], kScanBase * sq / rho_slot);
      lw.bq[head * dh + 1] += 1.0f;
      const double cm = std::sqrt(kScanMatch * sq) / rho_obj;
      for (int o = 0; o < n_obj; ++o) {
        add_channel(lw.wq, cfg, head, 2 + uint32_t(o), bank.token[SceneVocab::kFirstObject + o], cm);
        add_channel(lw.wk, cfg, head, 2 + uint32_t(o), bank.token[SceneVocab::kFirstObject + o], cm);
        add_channel(lw.wv, cfg, head, 2 + uint32_t(o), bank.token[SceneVocab::kFirstObject + o],
                    1.0 / rho_obj);
        add_out_column(lw.wo, cfg, head, 2 + uint32_t(o), bank.token[SceneVocab::kFirstObject + o],
                       kScanBoost);
      }
    }

    // head 2: default-no. Fires whenever the probe marker is in context.
    {
      const uint32_t head = 2;
      add_channel(lw.wk, cfg, head, 0, bank.token[SceneVocab::kBos], kNoSink * sq / rho_bos);
      add_channel(lw.wk, cfg, head, 1, bank.token[SceneVocab::kAsk], kNoAsk * sq / rho_ask);
      lw.bq[head * dh + 0] += 1.0f;
      lw.bq[head * dh + 1] += 1.0f;
      add_channel(lw.wv, cfg, head, 2, bank.token[SceneVocab::kAsk], 1.0 / rho_ask);
      add_out_column(lw.wo, cfg, head, 2, bank.token[SceneVocab::kNo], kNoBoost);
    }

    // head 3: period schedule. Driven by the odd-offset tag; parks on SEP
    // (zero value) when idle.
    {
      const uint32_t head = 3;
      add_channel(lw.wk, cfg, head, 0, bank.token[SceneVocab::kSep], kPerSink * sq / rho_sep);
      lw.bq[head * dh + 0] += 1.0f;
      add_channel(lw.wk, cfg, head, 1, bank.token[SceneVocab::kBos], kPerBos * sq / rho_bos);
      add_channel(lw.wq, cfg, head, 1, bank.odd_tag, 1.0 / rho_odd);
      add_channel(lw.wv, cfg, head, 2, bank.token[SceneVocab::kBos], 1.0 / rho_bos);
      add_out_column(lw.wo, cfg, head, 2, bank.token[SceneVocab::kPeriod], kPeriodBoost * share);
    }
  }
}

// Measures the logit contribution of one wired head type by re-running the
// calibration prompt with those output columns zeroed, then rescales the
// columns toward the design target. LayerNorm makes the response mildly
// sublinear, hence the fixpoint iterations.
void Builder::calibrate_task_outputs() {
  if (spec.task_layers.empty()) return;
  const uint32_t dh = cfg.head_dim();

  struct Probe {
    uint32_t head;
    std::span<const int> tokens;
    size_t pos;
    int token;
    double target;
  };
  const Probe probes[] = {
      {0, canon_caption, kModePos, canon_scene.objects[0], kCopyBoost},
      {1, canon_probe_present, kProbeAnswerPos, canon_present_query, kScanBoost},
      {2, canon_probe_absent, kProbeAnswerPos, SceneVocab::kNo, kNoBoost},
      {3, canon_caption, kModePos + 1, SceneVocab::kPeriod, kPeriodBoost},
  };

  for (int iter = 0; iter < 3; ++iter) {
    for (const Probe& p : probes) {
      ForwardTrace with = forward_full(m, p.tokens);
      // zero this head type's output columns across all task layers
      std::vector<std::pair<size_t, float>> saved;
      for (uint32_t layer : spec.task_layers) {
        LayerWeights& lw = m.layers[layer];
        for (uint32_t r = 0; r < cfg.d_model; ++r)
          for (uint32_t c = p.head * dh; c < (p.head + 1) * dh; ++c) {
            size_t idx = size_t(r) * cfg.d_model + c;
            saved.emplace_back((size_t(layer) << 32) | idx, lw.wo[idx]);
            lw.wo[idx] = 0.0f;
          }
      }
      ForwardTrace without = forward_full(m, p.tokens);
      for (auto& [key, val] : saved) m.layers[key >> 32].wo[key & 0xffffffffull] = val;

      const double measured =
          double(with.logits_at(p.pos)[p.token]) - double(without.logits_at(p.pos)[p.token]);
      if (measured <= 1e-6) throw ConstructionError("task head produced no measurable boost");
      const double scale = p.target / measured;
      for (uint32_t layer : spec.task_layers) {
        LayerWeights& lw = m.layers[layer];
        for (uint32_t r = 0; r < cfg.d_model; ++r)
          for (uint32_t c = p.head * dh; c < (p.head + 1) * dh; ++c)
            lw.wo[size_t(r) * cfg.d_model + c] = float(double(lw.wo[size_t(r) * cfg.d_model + c]) * scale);
      }
    }
  }
}

void Builder::wire_injection_head(uint32_t layer) {
  LayerWeights& lw = m.layers[layer];
  const uint32_t dh = cfg.head_dim();
  const uint32_t head = 0;
  const double sq = std::sqrt(double(dh));

  std::vector<int> canon = {SceneVocab::kBos, int(spec.trigger_token), SceneVocab::kSep};
  const double rho_bos = overlap(canon, layer, 0, bank.token[SceneVocab::kBos]);
  const double rho_trig = overlap(canon, layer, 1, bank.token[spec.trigger_token]);
  const double rho_tag = overlap(canon, layer, 1, bank.slot[0]);
  if (rho_bos < 0.5 || rho_trig < 0.5 || rho_tag < 0.5)
    throw ConstructionError("degenerate overlap while wiring the injection head");

  add_channel(lw.wk, cfg, head, 0, bank.token[SceneVocab::kBos], kInjSink * sq / rho_bos);
  lw.bq[head * dh + 0] += 1.0f;

  // The query driver fires at scene slots and at the caption offsets that
  // read the first kInjectedSlots slots; period positions stay clean so the
  // hallucinated/faithful activation contrast survives at this layer.
  std::vector<float> driver(cfg.d_model, 0.0f);
  for (uint32_t j = 0; j < kSceneSlots; ++j)
    for (uint32_t i = 0; i < cfg.d_model; ++i) driver[i] += bank.slot[j][i];
  for (int j = 0; j < kInjectedSlots; ++j)
    for (uint32_t i = 0; i < cfg.d_model; ++i) driver[i] += bank.sched[j][i];
  const double c = std::sqrt(kInjTrig * sq / (rho_tag * rho_trig));
  add_channel(lw.wq, cfg, head, 1, driver, c);
  add_channel(lw.wk, cfg, head, 1, bank.token[spec.trigger_token], c);

  add_channel(lw.wv, cfg, head, 2, bank.token[spec.trigger_token], 1.0 / rho_trig);
  // gain starts at the raw strength; calibrate_injection refines it
  add_out_column(lw.wo, cfg, head, 2, bank.token[spec.spurious_token], double(spec.strength));
}

// Logit drop of the spurious token at the trigger's own position when the
// layer's attention output is zeroed.
double injection_drop(const Model& m, const PlantedSpec& spec, uint32_t layer) {
  std::vector<int> canon = {SceneVocab::kBos, int(spec.trigger_token), SceneVocab::kSep};
  ForwardTrace tr = forward_full(m, canon);
  std::vector<float> zero(m.config.d_model, 0.0f);
  std::vector<float> masked = resume_logits(m, tr, layer, zero, 1);
  return double(tr.logits_at(1)[spec.spurious_token]) - double(masked[spec.spurious_token]);
}

void Builder::calibrate_injection() {
  if (!spec.active()) return;
  const uint32_t dh = cfg.head_dim();
  for (uint32_t layer : spec.hallucination_layers) {
    wire_injection_head(layer);
    // secant iterations on the head's output gain toward drop == strength
    for (int iter = 0; iter < 12; ++iter) {
      const double drop = injection_drop(m, spec, layer);
      if (std::abs(drop - double(spec.strength)) <= 0.03 * double(spec.strength)) break;
      if (drop <= 1e-9) throw ConstructionError("injection head produced no logit effect");
      const double scale = double(spec.strength) / drop;
      LayerWeights& lw = m.layers[layer];
      const uint32_t col = 0 * dh + 2;
      for (uint32_t r = 0; r < cfg.d_model; ++r)
        lw.wo[size_t(r) * cfg.d_model + col] = float(double(lw.wo[size_t(r) * cfg.d_model + col]) * scale);
    }
  }
}

void Builder::check_postconditions() {
  if (!spec.active()) return;
  for (uint32_t layer : spec.hallucination_layers) {
    const double drop = injection_drop(m, spec, layer);
    if (drop < 0.5 * double(spec.strength))
      throw ConstructionError("planted logit-drop check failed at layer " + std::to_string(layer) +
                              " (drop " + std::to_string(drop) + ")");
  }
  if (spec.task_layers.empty()) return;

  // behavioural contract on canonical prompts
  std::vector<int> reply = generate(m, canon_probe_present, 1);
  if (reply[0] != canon_present_query)
    throw ConstructionError("canonical present-object probe failed");
  reply = generate(m, canon_probe_absent, 1);
  if (reply[0] == canon_absent_query)
    throw ConstructionError("canonical absent-object probe answered yes");

  Scene trig_scene = canon_scene;
  trig_scene.objects.push_back(int(spec.trigger_token));
  std::sort(trig_scene.objects.begin(), trig_scene.objects.end());
  reply = generate(m, make_probe_prompt(trig_scene, int(spec.spurious_token)), 1);
  if (reply[0] != int(spec.spurious_token))
    throw ConstructionError("canonical spurious probe did not hallucinate");
  std::vector<int> caption = generate(m, make_caption_prompt(trig_scene), 2 * kSceneSlots);
  bool has_spurious = false, has_faithful_sentence = false, sentence_clean = true;
  for (int tok : caption) {
    if (tok == int(spec.spurious_token)) has_spurious = true;
    if (vocab.is_object(tok) && !trig_scene.contains(tok)) sentence_clean = false;
    if (tok == SceneVocab::kPeriod) {
      if (sentence_clean) has_faithful_sentence = true;
      sentence_clean = true;
    }
  }
  if (!has_spurious) throw ConstructionError("canonical trigger caption has no spurious mention");
  if (!has_faithful_sentence)
    throw ConstructionError("canonical trigger caption has no faithful sentence");
}

}  // namespace

Model build_planted(const ModelConfig& cfg, const PlantedSpec& spec, uint64_t seed) {
  cfg.validate();
  spec.validate(cfg);
  if (cfg.vocab_size < SceneVocab::kFirstObject + 2)
    throw InputError("vocab too small for the scene task layout");

  Builder b(cfg, spec);
  b.build_base(seed);
  b.wire_task_layers();
  b.calibrate_task_outputs();
  b.calibrate_injection();
  b.check_postconditions();
  b.m.planted = spec;
  return b.m;
}

Model build_planted_with_retry(const ModelConfig& cfg, const PlantedSpec& spec, uint64_t seed,
                               int max_attempts, uint64_t* used_seed) {
  std::string last;
  for (int i = 0; i < max_attempts; ++i) {
    uint64_t s = seed + uint64_t(i) * 1000003ull;
    try {
      Model m = build_planted(cfg, spec, s);
      if (used_seed) *used_seed = s;
      return m;
    } catch (const ConstructionError& e) {
      last = e.what();
    }
  }
  throw ConstructionError("planted construction failed after " + std::to_string(max_attempts) +
                          " attempts: " + last);
}

}  // namespace ltsfs
