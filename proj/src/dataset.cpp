#include "ltsfs/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "ltsfs/rng.hpp"

namespace ltsfs {

using nlohmann::json;

std::string SceneVocab::token_name(int tok) const {
  switch (tok) {
    case kBos: return "<bos>";
    case kPeriod: return ".";
    case kSep: return "<sep>";
    case kDescribe: return "describe";
    case kAsk: return "is_present";
    case kNo: return "no";
    case kAdditional: return "additionally";
    case kPad: return "<pad>";
    case kQuery: return "<query>";
    default: break;
  }
  if (tok >= kFirstObject && tok < int(vocab_size)) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "obj_%02d", tok - kFirstObject);
    return buf;
  }
  return "<invalid>";
}

bool Scene::contains(int tok) const {
  return std::binary_search(objects.begin(), objects.end(), tok);
}

int slot_for_position(size_t pos) {
  if (pos < kModePos) return -1;
  size_t off = pos - kModePos;
  if (off % 2 != 0) return -1;
  return int((off % kScheduleCycle) / 2);
}

bool is_period_position(size_t pos) {
  return pos > kModePos && (pos - kModePos) % 2 == 1;
}

std::vector<int> make_caption_prompt(const Scene& scene) {
  std::vector<int> p;
  p.push_back(SceneVocab::kBos);
  for (int i = 0; i < kSceneSlots; ++i)
    p.push_back(i < int(scene.objects.size()) ? scene.objects[i] : SceneVocab::kPad);
  p.push_back(SceneVocab::kSep);
  p.push_back(SceneVocab::kDescribe);
  return p;
}

std::vector<int> make_probe_prompt(const Scene& scene, int query_object) {
  std::vector<int> p;
  p.push_back(SceneVocab::kBos);
  for (int i = 0; i < kSceneSlots; ++i)
    p.push_back(i < int(scene.objects.size()) ? scene.objects[i] : SceneVocab::kPad);
  p.push_back(SceneVocab::kSep);
  p.push_back(SceneVocab::kAsk);
  p.push_back(SceneVocab::kQuery);
  p.push_back(query_object);
  return p;
}

std::vector<Scene> make_scenes(const SceneVocab& vocab, const SceneGenOptions& opt, int count,
                               uint64_t seed, int first_id) {
  if (opt.min_objects < 1 || opt.max_objects > kSceneSlots || opt.min_objects > opt.max_objects)
    throw InputError("scene size bounds out of range");
  std::vector<int> pool;
  for (int tok = SceneVocab::kFirstObject; tok < int(vocab.vocab_size); ++tok)
    if (tok != opt.trigger_token && tok != opt.spurious_token) pool.push_back(tok);
  if (int(pool.size()) < opt.max_objects) throw InputError("object vocabulary too small for scenes");

  Rng base(seed);
  std::vector<Scene> scenes(count);
  for (int i = 0; i < count; ++i) {
    Rng rng = base.fork(uint64_t(i));
    Scene& s = scenes[i];
    s.id = first_id + i;
    int size = opt.min_objects + int(rng.next_below(uint64_t(opt.max_objects - opt.min_objects + 1)));
    bool with_trigger = rng.next_bernoulli(opt.trigger_rate);
    std::vector<int> shuffled = pool;
    for (size_t j = shuffled.size(); j > 1; --j)
      std::swap(shuffled[j - 1], shuffled[rng.next_below(j)]);
    if (with_trigger) {
      s.objects.push_back(opt.trigger_token);
      for (int j = 0; j < size - 1; ++j) s.objects.push_back(shuffled[j]);
    } else {
      for (int j = 0; j < size; ++j) s.objects.push_back(shuffled[j]);
    }
    std::sort(s.objects.begin(), s.objects.end());
  }
  return scenes;
}

bool Sample::has_hallucination() const {
  return std::any_of(token_labels.begin(), token_labels.end(), [](uint8_t b) { return b != 0; });
}

std::vector<uint8_t> label_caption_tokens(const Scene& scene, std::span<const int> response,
                                          const SceneVocab& vocab) {
  std::vector<uint8_t> labels(response.size(), 0);
  for (size_t i = 0; i < response.size(); ++i)
    if (vocab.is_object(response[i]) && !scene.contains(response[i])) labels[i] = 1;
  return labels;
}

std::vector<SpanLabel> split_sentence_spans(std::span<const int> response,
                                            std::span<const uint8_t> labels) {
  std::vector<SpanLabel> spans;
  int start = 0;
  for (int i = 0; i < int(response.size()); ++i) {
    if (response[i] == SceneVocab::kPeriod) {
      spans.push_back({start, i + 1, false});
      start = i + 1;
    }
  }
  if (start < int(response.size())) spans.push_back({start, int(response.size()), false});
  for (auto& sp : spans)
    for (int i = sp.begin; i < sp.end; ++i)
      if (labels[i]) sp.hallucinated = true;
  return spans;
}

Sample make_caption_sample(int id, const Scene& scene, const Model& model, int max_new,
                           Split split) {
  SceneVocab vocab{model.config.vocab_size};
  Sample s;
  s.id = id;
  s.granularity = Granularity::sentence;
  s.scene = scene;
  s.prompt = make_caption_prompt(scene);
  s.response = generate(model, s.prompt, size_t(max_new));
  s.token_labels = label_caption_tokens(scene, s.response, vocab);
  s.spans = split_sentence_spans(s.response, s.token_labels);
  s.split = split;
  return s;
}

Sample make_probe_sample(int id, const Scene& scene, int query, const Model& model,
                         const ProbeOptions& opt, Split split) {
  Sample s;
  s.id = id;
  s.granularity = Granularity::token;
  s.scene = scene;
  s.prompt = make_probe_prompt(scene, query);
  s.response = generate(model, s.prompt, 1);
  const bool said_yes = (s.response[0] == query);
  const bool present = scene.contains(query);
  bool hallucinated = said_yes && !present;
  if (opt.missed_present_counts && !said_yes && present) hallucinated = true;
  s.token_labels = {uint8_t(hallucinated ? 1 : 0)};
  s.spans = {{0, 1, hallucinated}};
  s.split = split;
  return s;
}

namespace {

// Deterministic probe candidates for one scene: the spurious object (the
// hallucination candidate), one present object and one absent non-spurious
// object.
std::vector<int> probe_queries(const Scene& scene, const SceneVocab& vocab, uint32_t spurious,
                               Rng rng) {
  std::vector<int> q;
  q.push_back(int(spurious));
  if (!scene.objects.empty())
    q.push_back(scene.objects[rng.next_below(scene.objects.size())]);
  std::vector<int> absent;
  for (int tok = SceneVocab::kFirstObject; tok < int(vocab.vocab_size); ++tok)
    if (!scene.contains(tok) && tok != int(spurious)) absent.push_back(tok);
  if (!absent.empty()) q.push_back(absent[rng.next_below(absent.size())]);
  return q;
}

}  // namespace

std::vector<Sample> gen_token_level(int n, std::span<const Scene> scenes, const Model& model,
                                    uint64_t seed, const ProbeOptions& opt, int id_base) {
  if (n == 0) return {};
  if (!model.planted) throw InputError("token-level generation needs a planted model");
  SceneVocab vocab{model.config.vocab_size};
  const uint32_t spurious = model.planted->spurious_token;
  Rng base(seed ^ 0x70b35ull);

  // Flatten the candidate probes, evaluate them in parallel, then collect in
  // deterministic order until the pool is filled.
  struct Candidate {
    const Scene* scene;
    int query;
  };
  std::vector<Candidate> cands;
  for (const Scene& sc : scenes)
    for (int q : probe_queries(sc, vocab, spurious, base.fork(uint64_t(sc.id))))
      cands.push_back({&sc, q});
  const size_t budget = std::min(cands.size(), size_t(opt.max_attempt_factor) * size_t(n));

  std::vector<Sample> results(budget);
#pragma omp parallel for schedule(dynamic)
  for (size_t i = 0; i < budget; ++i)
    results[i] = make_probe_sample(0, *cands[i].scene, cands[i].query, model, opt,
                                   Split::calibration);

  std::vector<Sample> pool;
  for (size_t i = 0; i < budget && int(pool.size()) < n; ++i) {
    if (!results[i].has_hallucination()) continue;
    results[i].id = id_base + int(pool.size());
    pool.push_back(std::move(results[i]));
  }
  if (int(pool.size()) < n)
    throw GenerationExhaustedError("token-level pool exhausted after " + std::to_string(budget) +
                                   " probe attempts (" + std::to_string(pool.size()) + "/" +
                                   std::to_string(n) + " hallucinated samples)");
  return pool;
}

std::vector<Sample> gen_sentence_level(int n, std::span<const Scene> scenes, const Model& model,
                                       uint64_t seed, int max_new, int id_base) {
  (void)seed;
  if (n == 0) return {};
  if (!model.planted) throw InputError("sentence-level generation needs a planted model");
  const size_t budget = scenes.size();

  std::vector<Sample> results(budget);
#pragma omp parallel for schedule(dynamic)
  for (size_t i = 0; i < budget; ++i)
    results[i] = make_caption_sample(0, scenes[i], model, max_new, Split::calibration);

  std::vector<Sample> pool;
  for (size_t i = 0; i < budget && int(pool.size()) < n; ++i) {
    Sample& s = results[i];
    const bool any_hall =
        std::any_of(s.spans.begin(), s.spans.end(), [](const SpanLabel& sp) { return sp.hallucinated; });
    const bool any_faithful =
        std::any_of(s.spans.begin(), s.spans.end(), [](const SpanLabel& sp) { return !sp.hallucinated; });
    if (!any_hall || !any_faithful) continue;
    s.id = id_base + int(pool.size());
    pool.push_back(std::move(s));
  }
  if (int(pool.size()) < n)
    throw GenerationExhaustedError("sentence-level pool exhausted after " + std::to_string(budget) +
                                   " captions (" + std::to_string(pool.size()) + "/" +
                                   std::to_string(n) + " mixed samples)");
  return pool;
}

std::pair<std::vector<Sample>, std::vector<Sample>> split_disjoint(const std::vector<Sample>& samples,
                                                                   double calib_fraction,
                                                                   uint64_t seed) {
  if (calib_fraction <= 0.0 || calib_fraction >= 1.0)
    throw InputError("calib_fraction must be in (0, 1)");
  std::vector<int> scene_ids;
  for (const Sample& s : samples) scene_ids.push_back(s.scene.id);
  std::sort(scene_ids.begin(), scene_ids.end());
  scene_ids.erase(std::unique(scene_ids.begin(), scene_ids.end()), scene_ids.end());

  const size_t n_scenes = scene_ids.size();
  const size_t n_calib = size_t(std::llround(calib_fraction * double(n_scenes)));
  if (n_calib < 1 || n_calib >= n_scenes)
    throw SplitError("cannot honor calib_fraction " + std::to_string(calib_fraction) + " with " +
                     std::to_string(n_scenes) + " scenes: one side would be empty");

  Rng rng(seed ^ 0x5BA11ull);
  for (size_t j = scene_ids.size(); j > 1; --j)
    std::swap(scene_ids[j - 1], scene_ids[rng.next_below(j)]);
  std::vector<int> calib_ids(scene_ids.begin(), scene_ids.begin() + n_calib);
  std::sort(calib_ids.begin(), calib_ids.end());

  std::pair<std::vector<Sample>, std::vector<Sample>> out;
  for (const Sample& s : samples) {
    Sample copy = s;
    if (std::binary_search(calib_ids.begin(), calib_ids.end(), s.scene.id)) {
      copy.split = Split::calibration;
      out.first.push_back(std::move(copy));
    } else {
      copy.split = Split::evaluation;
      out.second.push_back(std::move(copy));
    }
  }
  return out;
}

const char* granularity_name(Granularity g) {
  return g == Granularity::token ? "token" : "sentence";
}
const char* split_name(Split s) { return s == Split::calibration ? "calib" : "eval"; }

namespace {

json sample_to_json(const Sample& s) {
  json spans = json::array();
  for (const SpanLabel& sp : s.spans) spans.push_back({sp.begin, sp.end, sp.hallucinated ? 1 : 0});
  return json{{"id", s.id},
              {"granularity", granularity_name(s.granularity)},
              {"scene", s.scene.objects},
              {"scene_id", s.scene.id},
              {"prompt", s.prompt},
              {"response", s.response},
              {"token_labels", s.token_labels},
              {"spans", spans},
              {"split", split_name(s.split)}};
}

template <typename T>
T need(const json& j, const char* field, int line) {
  if (!j.contains(field))
    throw FormatError("line " + std::to_string(line) + ": missing field '" + field + "'");
  try {
    return j.at(field).get<T>();
  } catch (const json::exception& e) {
    throw FormatError("line " + std::to_string(line) + ": bad field '" + field + "': " + e.what());
  }
}

void validate_sample(const Sample& s, int line) {
  if (s.token_labels.size() != s.response.size())
    throw FormatError("line " + std::to_string(line) + ": token_labels length mismatch");
  int cursor = 0;
  for (const SpanLabel& sp : s.spans) {
    if (sp.begin != cursor || sp.end <= sp.begin || sp.end > int(s.response.size()))
      throw FormatError("line " + std::to_string(line) + ": spans do not partition the response");
    bool any = false;
    for (int i = sp.begin; i < sp.end; ++i) any = any || s.token_labels[i];
    if (any != sp.hallucinated)
      throw FormatError("line " + std::to_string(line) +
                        ": span label disagrees with its token labels");
    cursor = sp.end;
  }
  if (cursor != int(s.response.size()))
    throw FormatError("line " + std::to_string(line) + ": spans do not cover the response");
  if (s.granularity == Granularity::token && s.spans.size() != 1)
    throw FormatError("line " + std::to_string(line) + ": token-level sample needs exactly one span");
}

}  // namespace

void save_jsonl(const std::vector<Sample>& samples, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path);
  for (const Sample& s : samples) out << sample_to_json(s).dump() << "\n";
}

std::vector<Sample> load_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path);
  std::vector<Sample> samples;
  std::string linebuf;
  int line = 0;
  while (std::getline(in, linebuf)) {
    ++line;
    if (linebuf.empty()) continue;
    json j;
    try {
      j = json::parse(linebuf);
    } catch (const json::exception& e) {
      throw FormatError("line " + std::to_string(line) + ": " + e.what());
    }
    Sample s;
    s.id = need<int>(j, "id", line);
    std::string g = need<std::string>(j, "granularity", line);
    if (g == "token")
      s.granularity = Granularity::token;
    else if (g == "sentence")
      s.granularity = Granularity::sentence;
    else
      throw FormatError("line " + std::to_string(line) + ": unknown granularity '" + g + "'");
    s.scene.objects = need<std::vector<int>>(j, "scene", line);
    s.scene.id = j.contains("scene_id") ? j.at("scene_id").get<int>() : s.id;
    s.prompt = need<std::vector<int>>(j, "prompt", line);
    s.response = need<std::vector<int>>(j, "response", line);
    s.token_labels = need<std::vector<uint8_t>>(j, "token_labels", line);
    auto spans = need<std::vector<std::vector<json>>>(j, "spans", line);
    for (auto& sp : spans) {
      if (sp.size() != 3) throw FormatError("line " + std::to_string(line) + ": bad span triple");
      s.spans.push_back({sp[0].get<int>(), sp[1].get<int>(), sp[2].get<int>() != 0});
    }
    std::string sp = need<std::string>(j, "split", line);
    if (sp == "calib")
      s.split = Split::calibration;
    else if (sp == "eval")
      s.split = Split::evaluation;
    else
      throw FormatError("line " + std::to_string(line) + ": unknown split '" + sp + "'");
    validate_sample(s, line);
    samples.push_back(std::move(s));
  }
  return samples;
}

void save_manifest(const DatasetManifest& man, const std::string& path) {
  json vocab = json::object();
  for (uint32_t tok = 0; tok < man.vocab.vocab_size; ++tok)
    vocab[std::to_string(tok)] = man.vocab.token_name(int(tok));
  std::vector<int> objects;
  for (int tok = SceneVocab::kFirstObject; tok < int(man.vocab.vocab_size); ++tok)
    objects.push_back(tok);
  json j{{"vocab", vocab},
         {"vocab_size", man.vocab.vocab_size},
         {"cue_tokens", man.cue_tokens},
         {"object_vocab", objects},
         {"seed", man.seed},
         {"counts", man.counts}};
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path);
  out << j.dump(2) << "\n";
}

DatasetManifest load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw FormatError(path + ": " + e.what());
  }
  DatasetManifest man;
  man.vocab.vocab_size = need<uint32_t>(j, "vocab_size", 0);
  man.cue_tokens = need<std::vector<int>>(j, "cue_tokens", 0);
  if (man.cue_tokens.empty()) throw FormatError("manifest cue_tokens must be nonempty");
  man.seed = need<uint64_t>(j, "seed", 0);
  if (j.contains("counts"))
    for (auto& [k, v] : j.at("counts").items()) man.counts[k] = v.get<int>();
  return man;
}

}  // namespace ltsfs
