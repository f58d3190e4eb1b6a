#pragma once

#include "linfdt/dataset.hpp"
#include "linfdt/matrix.hpp"
#include "linfdt/moments.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace linfdt {

enum class DynamicsMode {
  FullXX,    // full-batch Σ_xx, mini-batch Σ_yx
  MiniBoth,  // mini-batch Σ_xx and Σ_yx
};

std::string_view to_string(DynamicsMode mode);
DynamicsMode dynamics_mode_from_string(std::string_view name);

struct SgdConfig {
  double epsilon = 0.01;
  std::size_t batch_size = 100;
  DynamicsMode mode = DynamicsMode::MiniBoth;
  double convergence_threshold = 0.999;
  std::size_t max_steps = 2'000'000;
  std::size_t steady_samples = 30'000;
  std::size_t sample_stride = 1;
  std::uint64_t seed = 0;
  bool record_sigma_xx = false;       // only honoured in MiniBoth
  std::size_t curve_interval = 1000;  // convergence-curve sampling period
};

nlohmann::json to_json(const SgdConfig& config);
SgdConfig sgd_config_from_json(const nlohmann::json& j);

/// Throws InvalidArgument for ε ≤ 0, zero batch/sample counts, or a
/// threshold outside (0, 1].
void validate(const SgdConfig& config);

/// ε · λ_max(Σ_xx + ridge); the recursion is linearly stable below 2.
double stability_margin(const SgdConfig& config, const Matrix& sigma_xx, double ridge);

struct LearningState {
  Matrix w;
  std::size_t step = 0;
  double cos_theta = 0.0;
};

/// w' = w (I − ε Σ_xx) + ε Σ_yx.
LearningState sgd_step(const LearningState& state, const MomentPair& moments, double epsilon);

/// Frobenius cosine ⟨w, w0⟩ / (‖w‖ ‖w0‖).
double cosine_to_equilibrium(const Matrix& w, const Matrix& w0);

/// One post-convergence sample handed to a sink.
struct Snapshot {
  const Matrix& w;
  const Matrix& sigma_yx;        // mini-batch Σ_yx of the step that produced w
  const Matrix* sigma_xx;        // mini-batch Σ_xx, when recorded
  std::size_t step;
};

class SnapshotSink {
 public:
  virtual ~SnapshotSink() = default;
  virtual void consume(const Snapshot& snapshot) = 0;
};

struct TrajectoryRecord {
  std::vector<Matrix> w_snapshots;
  std::vector<Matrix> sigma_yx_snapshots;
  std::optional<std::vector<Matrix>> sigma_xx_snapshots;
  SgdConfig config;
  std::size_t converged_at = 0;
  std::vector<std::pair<std::size_t, double>> convergence_curve;

  std::size_t size() const { return w_snapshots.size(); }
};

class RecordingSink final : public SnapshotSink {
 public:
  void consume(const Snapshot& snapshot) override;
  TrajectoryRecord take() { return std::move(record_); }
  TrajectoryRecord& record() { return record_; }

 private:
  TrajectoryRecord record_;
};

/// Everything needed to continue a run exactly where it stopped.
struct RunCheckpoint {
  Matrix w;
  std::size_t step = 0;
  std::string rng_state;
  std::optional<std::size_t> converged_at;
  std::size_t samples_taken = 0;
  std::vector<std::pair<std::size_t, double>> convergence_curve;
};

struct RunOptions {
  const RunCheckpoint* resume = nullptr;
  std::optional<std::size_t> step_budget;  // stop (incomplete) after this many steps in this call
};

struct RunSummary {
  bool complete = false;
  std::optional<std::size_t> converged_at;
  std::size_t samples_taken = 0;
  LearningState final_state;
  std::vector<std::pair<std::size_t, double>> convergence_curve;
  RunCheckpoint checkpoint;
};

/// SGD from W = 0: iterate with fresh mini-batches until cos θ ≥ threshold,
/// then hand `steady_samples` snapshots, `sample_stride` steps apart, to the
/// sink. `equilibrium.ridge_lambda` enters the drift as weight decay so that
/// W₀ is the exact fixed point of the mean dynamics.
RunSummary run_to_steady_state(const LabeledDataset& data, const SgdConfig& config, const Equilibrium& equilibrium,
                               const MomentPair& full, SnapshotSink& sink, const RunOptions& options = {});

TrajectoryRecord run_to_steady_state(const LabeledDataset& data, const SgdConfig& config,
                                     const Equilibrium& equilibrium);

/// In-place update w ← w − ε(w·S_batch + decay·w) + ε·Σ_yx(batch) using the
/// batch rows directly (S_batch is never formed). With `full_dissipation`
/// set, w·(Σ_xx + decay·I) replaces the batch drift. Returns Σ_yx(batch).
Matrix batch_update(Matrix& w, const Matrix& xb, const Matrix& yb, const Matrix* full_dissipation, double epsilon,
                    double decay);

struct ModeComparison {
  Matrix sigma_ww_full_xx;
  Matrix sigma_ww_mini_both;
  double relative_difference = 0.0;  // ‖Σ_full − Σ_mini‖_F / ‖Σ_full‖_F
  std::size_t converged_full_xx = 0;
  std::size_t converged_mini_both = 0;
};

/// Runs both modes with the same seed and compares the Σ_WW estimates
/// (centered at W₀).
ModeComparison compare_modes(const LabeledDataset& data, const SgdConfig& config, std::optional<double> ridge = {});

void save_trajectory(const std::filesystem::path& path, const TrajectoryRecord& record, const nlohmann::json& extra_meta);
TrajectoryRecord load_trajectory(const std::filesystem::path& path, nlohmann::json* meta_out = nullptr);

void save_checkpoint(const std::filesystem::path& path, const RunCheckpoint& checkpoint, const nlohmann::json& extra_meta);
RunCheckpoint load_checkpoint(const std::filesystem::path& path, nlohmann::json* meta_out = nullptr);

}  // namespace linfdt
