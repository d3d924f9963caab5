#pragma once

#include "ltsfs/dataset.hpp"
#include "ltsfs/model.hpp"

namespace ltsfs {

struct IndicatorConfig {
  double lambda_cue = 1.0;
  double lambda_pos = 1.0;
  double lambda_hall = 1.0;
  std::vector<int> cue_tokens{SceneVocab::kPeriod, SceneVocab::kAdditional};

  void validate() const;
  bool is_cue(int tok) const;
};

struct TokenIndicators {
  int u = 0;     // summary/cue token
  double r = 0;  // in-sentence position, later is higher
  int v = 0;     // flagged factual error
};

struct TokenWeights {
  std::vector<double> w;  // normalized, sums to 1
};

enum class ScoreMode { token, sentence, both };

struct LayerScores {
  std::vector<double> scores;
  ScoreMode mode = ScoreMode::both;
  int n_samples = 0;
  int dropped_zero_vectors = 0;
  IndicatorConfig indicator_config;
  std::string model_hash;
};

// Per-layer head-masking attribution of one prediction: for each layer, the
// summed log-ratio of the predicted probability against each single-head
// ablation. `position` is the position whose next-token distribution emits y.
std::vector<double> token_score(const Model& model, const ForwardTrace& trace, size_t position,
                                int y);

TokenIndicators token_indicators(int token, size_t index, size_t span_len, bool hallucinated,
                                 const IndicatorConfig& cfg);
TokenWeights token_weights(std::span<const int> span_tokens, std::span<const uint8_t> labels,
                           const IndicatorConfig& cfg);

// Indicator-weighted aggregation of token scores across one sentence span.
std::vector<double> sentence_score(const Model& model, const ForwardTrace& trace,
                                   size_t prompt_len, const SpanLabel& span,
                                   std::span<const uint8_t> response_labels,
                                   const IndicatorConfig& cfg);

// One length-L vector per sample: hallucinated tokens (token level) or
// hallucinated sentences (sentence level), averaged. All-zero when the sample
// carries no hallucination.
std::vector<double> attribute_sample(const Model& model, const Sample& sample,
                                     const IndicatorConfig& cfg);

LayerScores pool_scores(const std::vector<std::pair<Granularity, std::vector<double>>>& per_sample,
                        ScoreMode mode);

// Parallel over samples, pooled in sample-id order.
LayerScores attribute_dataset(const Model& model, const std::vector<Sample>& samples,
                              const IndicatorConfig& cfg, ScoreMode mode);

void save_scores(const LayerScores& scores, const std::string& path);
LayerScores load_scores(const std::string& path);

const char* score_mode_name(ScoreMode m);
ScoreMode score_mode_from(const std::string& name);

}  // namespace ltsfs
