#include "ltsfs/attribution.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <json.hpp>

namespace ltsfs {

using nlohmann::json;

namespace {
constexpr double kProbFloor = 1e-12;
}

void IndicatorConfig::validate() const {
  if (lambda_cue < 0 || lambda_pos < 0 || lambda_hall < 0)
    throw InputError("indicator strengths must be nonnegative");
}

bool IndicatorConfig::is_cue(int tok) const {
  return std::find(cue_tokens.begin(), cue_tokens.end(), tok) != cue_tokens.end();
}

std::vector<double> token_score(const Model& model, const ForwardTrace& trace, size_t position,
                                int y) {
  if (position >= trace.seq_len()) throw InputError("attribution position out of range");
  if (y < 0 || uint32_t(y) >= trace.vocab) throw InputError("attribution token out of range");

  const double p_base = std::max(double(trace.probs_at(position)[y]), kProbFloor);
  const uint32_t L = trace.n_layers, H = trace.n_heads;
  std::vector<double> scores(L, 0.0);
  for (uint32_t l = 0; l < L; ++l) {
    double acc = 0.0;
    for (uint32_t h = 0; h < H; ++h) {
      std::vector<float> masked = apply_head_mask(model, trace, {l, h}, position);
      std::vector<float> probs = logits_from(model, trace, l, masked, position);
      acc += std::log(p_base / std::max(double(probs[y]), kProbFloor));
    }
    scores[l] = acc;
  }
  return scores;
}

TokenIndicators token_indicators(int token, size_t index, size_t span_len, bool hallucinated,
                                 const IndicatorConfig& cfg) {
  TokenIndicators ind;
  ind.u = cfg.is_cue(token) ? 1 : 0;
  ind.r = span_len > 1 ? double(index) / double(span_len - 1) : 0.0;
  ind.v = hallucinated ? 1 : 0;
  return ind;
}

TokenWeights token_weights(std::span<const int> span_tokens, std::span<const uint8_t> labels,
                           const IndicatorConfig& cfg) {
  cfg.validate();
  if (span_tokens.empty()) throw InputError("empty sentence span");
  if (labels.size() != span_tokens.size()) throw InputError("span/label length mismatch");

  const size_t n = span_tokens.size();
  TokenWeights tw;
  tw.w.resize(n);
  double sum = 0.0;
  for (size_t i = 0; i < n; ++i) {
    TokenIndicators ind = token_indicators(span_tokens[i], i, n, labels[i] != 0, cfg);
    double raw = (1.0 + cfg.lambda_cue * ind.u) * (1.0 + cfg.lambda_pos * ind.r) *
                 (1.0 + cfg.lambda_hall * ind.v);
    tw.w[i] = raw;
    sum += raw;
  }
  for (double& w : tw.w) w /= sum;
  return tw;
}

std::vector<double> sentence_score(const Model& model, const ForwardTrace& trace,
                                   size_t prompt_len, const SpanLabel& span,
                                   std::span<const uint8_t> response_labels,
                                   const IndicatorConfig& cfg) {
  if (span.begin < 0 || span.end <= span.begin) throw InputError("bad sentence span");
  if (prompt_len + size_t(span.end) > trace.seq_len())
    throw InputError("span exceeds the trace's response region");
  if (prompt_len == 0) throw InputError("span cannot start at the first position");

  const size_t n = size_t(span.end - span.begin);
  std::vector<int> span_tokens(n);
  std::vector<uint8_t> span_labels(n);
  for (size_t i = 0; i < n; ++i) {
    span_tokens[i] = trace.tokens[prompt_len + span.begin + i];
    span_labels[i] = response_labels[span.begin + i];
  }
  TokenWeights tw = token_weights(span_tokens, span_labels, cfg);

  std::vector<double> out(trace.n_layers, 0.0);
  for (size_t i = 0; i < n; ++i) {
    const size_t pred_pos = prompt_len + span.begin + i - 1;
    std::vector<double> st = token_score(model, trace, pred_pos, span_tokens[i]);
    for (uint32_t l = 0; l < trace.n_layers; ++l) out[l] += tw.w[i] * st[l];
  }
  return out;
}

std::vector<double> attribute_sample(const Model& model, const Sample& sample,
                                     const IndicatorConfig& cfg) {
  std::vector<int> full = sample.prompt;
  full.insert(full.end(), sample.response.begin(), sample.response.end());
  ForwardTrace trace = forward_full(model, full);
  const size_t prompt_len = sample.prompt.size();
  std::vector<double> acc(model.config.n_layers, 0.0);
  int count = 0;

  if (sample.granularity == Granularity::token) {
    for (size_t i = 0; i < sample.response.size(); ++i) {
      if (!sample.token_labels[i]) continue;
      std::vector<double> st = token_score(model, trace, prompt_len + i - 1, sample.response[i]);
      for (size_t l = 0; l < acc.size(); ++l) acc[l] += st[l];
      ++count;
    }
  } else {
    for (const SpanLabel& span : sample.spans) {
      if (!span.hallucinated) continue;
      std::vector<double> ss =
          sentence_score(model, trace, prompt_len, span, sample.token_labels, cfg);
      for (size_t l = 0; l < acc.size(); ++l) acc[l] += ss[l];
      ++count;
    }
  }
  if (count > 0)
    for (double& v : acc) v /= double(count);
  return acc;
}

LayerScores pool_scores(const std::vector<std::pair<Granularity, std::vector<double>>>& per_sample,
                        ScoreMode mode) {
  if (per_sample.empty()) throw PoolingError("no score vectors to pool");
  const size_t L = per_sample.front().second.size();

  int dropped = 0;
  std::vector<double> mean_tok(L, 0.0), mean_sent(L, 0.0);
  int n_tok = 0, n_sent = 0;
  for (const auto& [gran, raw] : per_sample) {
    if (raw.size() != L) throw PoolingError("score vectors disagree on layer count");
    if (mode == ScoreMode::token && gran != Granularity::token) continue;
    if (mode == ScoreMode::sentence && gran != Granularity::sentence) continue;
    double l1 = 0.0;
    for (double v : raw) l1 += std::abs(v);
    if (l1 == 0.0) {
      ++dropped;
      continue;
    }
    auto& mean = (gran == Granularity::token) ? mean_tok : mean_sent;
    auto& n = (gran == Granularity::token) ? n_tok : n_sent;
    for (size_t l = 0; l < L; ++l) mean[l] += raw[l] / l1;
    ++n;
  }

  LayerScores out;
  out.mode = mode;
  out.dropped_zero_vectors = dropped;
  if (mode == ScoreMode::token) {
    if (n_tok == 0) throw PoolingError("no usable token-level score vectors");
    for (size_t l = 0; l < L; ++l) mean_tok[l] /= double(n_tok);
    out.scores = mean_tok;
    out.n_samples = n_tok;
  } else if (mode == ScoreMode::sentence) {
    if (n_sent == 0) throw PoolingError("no usable sentence-level score vectors");
    for (size_t l = 0; l < L; ++l) mean_sent[l] /= double(n_sent);
    out.scores = mean_sent;
    out.n_samples = n_sent;
  } else {
    if (n_tok == 0) throw PoolingError("mode 'both' is missing token-level vectors");
    if (n_sent == 0) throw PoolingError("mode 'both' is missing sentence-level vectors");
    out.scores.resize(L);
    for (size_t l = 0; l < L; ++l)
      out.scores[l] = 0.5 * (mean_tok[l] / double(n_tok) + mean_sent[l] / double(n_sent));
    out.n_samples = n_tok + n_sent;
  }
  return out;
}

LayerScores attribute_dataset(const Model& model, const std::vector<Sample>& samples,
                              const IndicatorConfig& cfg, ScoreMode mode) {
  cfg.validate();
  std::vector<const Sample*> ordered;
  for (const Sample& s : samples) {
    if (mode == ScoreMode::token && s.granularity != Granularity::token) continue;
    if (mode == ScoreMode::sentence && s.granularity != Granularity::sentence) continue;
    ordered.push_back(&s);
  }
  std::sort(ordered.begin(), ordered.end(),
            [](const Sample* a, const Sample* b) { return a->id < b->id; });
  if (ordered.empty()) throw PoolingError("no samples match the requested mode");

  std::vector<std::pair<Granularity, std::vector<double>>> per_sample(ordered.size());
#pragma omp parallel for schedule(dynamic)
  for (size_t i = 0; i < ordered.size(); ++i)
    per_sample[i] = {ordered[i]->granularity, attribute_sample(model, *ordered[i], cfg)};

  LayerScores out = pool_scores(per_sample, mode);
  out.indicator_config = cfg;
  return out;
}

const char* score_mode_name(ScoreMode m) {
  switch (m) {
    case ScoreMode::token: return "token";
    case ScoreMode::sentence: return "sentence";
    default: return "both";
  }
}

ScoreMode score_mode_from(const std::string& name) {
  if (name == "token") return ScoreMode::token;
  if (name == "sentence") return ScoreMode::sentence;
  if (name == "both") return ScoreMode::both;
  throw InputError("unknown score mode '" + name + "'");
}

void save_scores(const LayerScores& s, const std::string& path) {
  json j{{"mode", score_mode_name(s.mode)},
         {"scores", s.scores},
         {"n_samples", s.n_samples},
         {"dropped_zero_vectors", s.dropped_zero_vectors},
         {"indicator_config",
          {{"lambda_cue", s.indicator_config.lambda_cue},
           {"lambda_pos", s.indicator_config.lambda_pos},
           {"lambda_hall", s.indicator_config.lambda_hall},
           {"cue_tokens", s.indicator_config.cue_tokens}}},
         {"model_hash", s.model_hash}};
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path);
  out << j.dump(2) << "\n";
}

LayerScores load_scores(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw FormatError(path + ": " + e.what());
  }
  LayerScores s;
  try {
    s.mode = score_mode_from(j.at("mode").get<std::string>());
    s.scores = j.at("scores").get<std::vector<double>>();
    s.n_samples = j.at("n_samples").get<int>();
    s.dropped_zero_vectors = j.at("dropped_zero_vectors").get<int>();
    const json& ic = j.at("indicator_config");
    s.indicator_config.lambda_cue = ic.at("lambda_cue").get<double>();
    s.indicator_config.lambda_pos = ic.at("lambda_pos").get<double>();
    s.indicator_config.lambda_hall = ic.at("lambda_hall").get<double>();
    s.indicator_config.cue_tokens = ic.at("cue_tokens").get<std::vector<int>>();
    s.model_hash = j.at("model_hash").get<std::string>();
  } catch (const json::exception& e) {
    throw FormatError(path + ": " + e.what());
  }
  for (double v : s.scores)
    if (!std::isfinite(v)) throw FormatError(path + ": non-finite score");
  return s;
}

}  // namespace ltsfs
