#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ltsfs/util.hpp"

namespace ltsfs {

// Fixed token layout shared by the scene tasks and the planted circuits.
// Structural tokens occupy the low ids; the object sub-vocabulary fills the
// remainder.
struct SceneVocab {
  static constexpr int kBos = 0;
  static constexpr int kPeriod = 1;
  static constexpr int kSep = 2;
  static constexpr int kDescribe = 3;  // caption mode token
  static constexpr int kAsk = 4;       // probe mode token
  static constexpr int kNo = 5;
  static constexpr int kAdditional = 6;  // secondary cue token
  static constexpr int kPad = 7;
  static constexpr int kQuery = 8;  // probe query marker
  static constexpr int kFirstObject = 9;

  uint32_t vocab_size = 21;

  int n_objects() const { return int(vocab_size) - kFirstObject; }
  bool is_object(int tok) const { return tok >= kFirstObject && tok < int(vocab_size); }
  int object_index(int tok) const { return tok - kFirstObject; }
  std::string token_name(int tok) const;
};

// Prompt geometry: BOS, a fixed window of object slots (padded), SEP, then a
// mode token. Captions emit (object, period) pairs on an alternating
// schedule, so the slot a position reads is a function of (position - 8)
// mod 12.
constexpr int kSceneSlots = 6;
constexpr int kSlotBase = 1;              // slots occupy positions 1..6
constexpr int kSepPos = kSceneSlots + 1;  // 7
constexpr int kModePos = kSepPos + 1;     // 8: kDescribe or kAsk
constexpr int kFirstResponsePos = kModePos + 1;
constexpr int kScheduleCycle = 2 * kSceneSlots;  // 12
constexpr int kProbePromptLen = kModePos + 3;    // ... ASK, QUERY-marker, object
constexpr int kProbeAnswerPos = kProbePromptLen - 1;

// One evaluation item: the ground-truth object set.
struct Scene {
  int id = 0;
  std::vector<int> objects;  // sorted, distinct object token ids
  bool contains(int tok) const;
};

// Which scene slot (0-based) a caption position reads, or -1 for the period
// half of the schedule / positions before the response region.
int slot_for_position(size_t pos);
bool is_period_position(size_t pos);

std::vector<int> make_caption_prompt(const Scene& scene);
std::vector<int> make_probe_prompt(const Scene& scene, int query_object);

struct SceneGenOptions {
  int min_objects = 3;
  int max_objects = 5;
  double trigger_rate = 0.5;
  int trigger_token = SceneVocab::kFirstObject;
  int spurious_token = SceneVocab::kFirstObject + 1;  // never placed in scenes
};

std::vector<Scene> make_scenes(const SceneVocab& vocab, const SceneGenOptions& opt, int count,
                               uint64_t seed, int first_id = 0);

}  // namespace ltsfs
