#pragma once

#include "ltsfs/model.hpp"

namespace ltsfs {

// Builds a model with hand-wired circuits on top of a seeded low-variance
// base: scene-grounded captioning/probe heads at the task layers and, when
// the spec is active, a trigger-conditioned head per hallucination layer that
// pushes the spurious token's logit axis. Gains are calibrated numerically;
// the built-in logit-drop postcondition throws ConstructionError on failure
// (callers retry with a new seed).
Model build_planted(const ModelConfig& cfg, const PlantedSpec& spec, uint64_t seed);

Model build_planted_with_retry(const ModelConfig& cfg, const PlantedSpec& spec, uint64_t seed,
                               int max_attempts = 8, uint64_t* used_seed = nullptr);

}  // namespace ltsfs
