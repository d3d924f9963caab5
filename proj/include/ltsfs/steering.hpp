#pragma once

#include <memory>

#include "ltsfs/attribution.hpp"
#include "ltsfs/dataset.hpp"
#include "ltsfs/model.hpp"

namespace ltsfs {

enum class Gating { hard, soft };
enum class BackendKind { mean_shift, null_space };

struct SteeringPolicyConfig {
  double r_s = 0.5;
  double lambda = 1.0;
  Gating gating = Gating::hard;
  double soft_quantile = 0.5;
  BackendKind backend = BackendKind::mean_shift;
  int k = 4;

  void validate() const;
};

// Fitted per-layer steering payload. mean_shift holds a unit direction and an
// activation scale per layer (zero direction marks an inert layer);
// null_space holds an orthonormal basis per layer (layer_rank columns used).
struct SteeringBackend {
  BackendKind kind = BackendKind::mean_shift;
  uint32_t n_layers = 0;
  uint32_t d_model = 0;
  int k = 0;
  std::vector<float> directions;  // [L][d]
  std::vector<float> scales;      // [L]
  std::vector<float> bases;       // [L][k][d], rows are basis vectors
  std::vector<int> layer_rank;    // [L]

  std::span<const float> direction(size_t layer) const;
  std::span<const float> basis_vector(size_t layer, int j) const;
};

struct SteeringPlan {
  std::vector<uint8_t> mask;        // m_l
  std::vector<double> intensities;  // lambda_l
  double r_s = 0.5;
  double lambda = 1.0;
  Gating gating = Gating::hard;
  bool degenerate = false;
  int clamped_negative = 0;
  std::string scores_hash;
  std::shared_ptr<const SteeringBackend> backend;
};

// Hard sparsification plus soft weighting: tau = r_s * mean(s),
// m_l = [s_l >= tau], s~ = masked s / sum, lambda_l = lambda * (m_l + s~_l).
// Negative scores are clamped to zero first (count recorded); if every
// surviving score is zero the plan is flagged degenerate with all-zero
// intensities.
SteeringPlan make_plan(const LayerScores& scores, const SteeringPolicyConfig& cfg,
                       std::shared_ptr<const SteeringBackend> backend);

// Per-sample threshold variant: the soft_quantile-th quantile (linear
// interpolation on the sorted values) of s_l / mean(s), clamped to [0, 2].
double soft_gate_rs(std::span<const double> scores, const SteeringPolicyConfig& cfg);

// Backend fitting from calibration samples: activations are h_l at
// hallucinated-token prediction positions vs faithful-token positions.
SteeringBackend fit_mean_shift(const Model& model, const std::vector<Sample>& calib);
SteeringBackend fit_null_space(const Model& model, const std::vector<Sample>& calib, int k);

// Lower-level entry points over raw activation sets (one list per layer),
// shared by the fitters and testable without a model.
SteeringBackend fit_mean_shift_from_activations(
    const std::vector<std::vector<std::vector<float>>>& hallucinated,
    const std::vector<std::vector<std::vector<float>>>& faithful);
SteeringBackend fit_null_space_from_activations(
    const std::vector<std::vector<std::vector<float>>>& hallucinated,
    const std::vector<std::vector<std::vector<float>>>& faithful, int k);

// f(h, lambda_l): identity at masked layers; mean_shift subtracts
// lambda * sigma * v; null_space removes min(lambda, 1) of the subspace
// projection.
void apply_inplace(std::span<float> h, const SteeringPlan& plan, size_t layer);
std::vector<float> apply(std::span<const float> h, const SteeringPlan& plan, size_t layer);

// Adapter for Model::generate.
struct PlanHook final : BlockOutputHook {
  const SteeringPlan* plan;
  explicit PlanHook(const SteeringPlan* p) : plan(p) {}
  void apply(size_t layer, std::span<float> h) const override {
    if (plan) apply_inplace(h, *plan, layer);
  }
};

std::vector<int> generate_steered(const Model& model, std::span<const int> prompt, size_t max_new,
                                  const SteeringPlan* plan);

// Uniform baseline at matched total intensity: m_l = 1 and s~_l = 1/L
// everywhere, scaled so sum(lambda_l) equals `total_intensity`.
SteeringPlan make_uniform_plan(double total_intensity, uint32_t n_layers,
                               std::shared_ptr<const SteeringBackend> backend);

void save_plan(const SteeringPlan& plan, const std::string& json_path,
               const std::string& payload_path);
SteeringPlan load_plan(const std::string& json_path);

}  // namespace ltsfs
