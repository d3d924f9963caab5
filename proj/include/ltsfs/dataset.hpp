#pragma once

#include <map>
#include <utility>

#include "ltsfs/model.hpp"
#include "ltsfs/scene.hpp"

namespace ltsfs {

enum class Granularity { token, sentence };
enum class Split { calibration, evaluation };

struct SpanLabel {
  int begin = 0;
  int end = 0;  // exclusive
  bool hallucinated = false;
  bool operator==(const SpanLabel&) const = default;
};

struct Sample {
  int id = 0;
  Granularity granularity = Granularity::token;
  Scene scene;
  std::vector<int> prompt;
  std::vector<int> response;
  std::vector<uint8_t> token_labels;  // 1 = hallucinated
  std::vector<SpanLabel> spans;
  Split split = Split::calibration;

  bool has_hallucination() const;
};

struct DatasetManifest {
  SceneVocab vocab;
  std::vector<int> cue_tokens{SceneVocab::kPeriod, SceneVocab::kAdditional};
  uint64_t seed = 0;
  std::map<std::string, int> counts;
};

struct ProbeOptions {
  // Default rule: an answer is hallucinated iff the model said yes for an
  // absent object. Optionally also count missed present objects.
  bool missed_present_counts = false;
  int max_attempt_factor = 50;
};

// Labeling primitives (rule-based object matching).
std::vector<uint8_t> label_caption_tokens(const Scene& scene, std::span<const int> response,
                                          const SceneVocab& vocab);
std::vector<SpanLabel> split_sentence_spans(std::span<const int> response,
                                            std::span<const uint8_t> labels);

// Teacher-free generation of one sample; labels are filled from the rules.
Sample make_caption_sample(int id, const Scene& scene, const Model& model, int max_new, Split split);
Sample make_probe_sample(int id, const Scene& scene, int query, const Model& model,
                         const ProbeOptions& opt, Split split);

// Calibration-pool generators: only samples exhibiting a hallucination are
// emitted. Throws GenerationExhaustedError if the bounded attempt budget runs
// out before n samples are found.
std::vector<Sample> gen_token_level(int n, std::span<const Scene> scenes, const Model& model,
                                    uint64_t seed, const ProbeOptions& opt = {}, int id_base = 0);
std::vector<Sample> gen_sentence_level(int n, std::span<const Scene> scenes, const Model& model,
                                       uint64_t seed, int max_new = 2 * kSceneSlots,
                                       int id_base = 0);

// Scene-disjoint partition: no scene id appears on both sides.
std::pair<std::vector<Sample>, std::vector<Sample>> split_disjoint(const std::vector<Sample>& samples,
                                                                   double calib_fraction,
                                                                   uint64_t seed);

void save_jsonl(const std::vector<Sample>& samples, const std::string& path);
std::vector<Sample> load_jsonl(const std::string& path);
void save_manifest(const DatasetManifest& man, const std::string& path);
DatasetManifest load_manifest(const std::string& path);

const char* granularity_name(Granularity g);
const char* split_name(Split s);

}  // namespace ltsfs
