#pragma once

#include "linfdt/dynamics.hpp"
#include "linfdt/matrix.hpp"
#include "linfdt/moments.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <optional>
#include <span>
#include <utility>
#include <vector>

namespace linfdt {

using IndexPair = std::pair<std::size_t, std::size_t>;

enum class Center { W0, EmpiricalMean };

std::string_view to_string(Center center);
Center center_from_string(std::string_view name);

struct FdtReport {
  Matrix d_hat;     // D̂, known up to an overall constant
  Matrix sigma_ww;  // Σ_WW
  Matrix lhs;       // Σ_xx Σ_WW + Σ_WW Σ_xx
  Matrix q_matrix;  // antisymmetric part of Σ_xx Σ_WW
  double proportionality = 0.0;    // c* = ⟨lhs, 2D̂⟩ / ‖2D̂‖²
  double relative_residual = 0.0;  // ‖lhs − 2c*D̂‖ / ‖lhs‖
  double q_ratio = 0.0;            // max|Q| / max|sym(Σ_xx Σ_WW)|
  double q_ratio_d_hat = 0.0;      // max|Q| / max|c* D̂|
  std::optional<double> autocorrelation_time;  // of tr(δWᵀδW), in snapshots
  std::optional<double> effective_samples;
};

struct RefinedFdtReport {
  std::vector<IndexPair> index_pairs;
  std::vector<double> per_pair_residual;
  std::vector<double> per_pair_proportionality;
  std::vector<Matrix> d_hat_pairs;  // D̂_{i,k}
  std::vector<Matrix> sigma_pairs;  // Σ_{i,k}
};

/// Streaming reductions over post-convergence snapshots. Feeding a sink
/// this way keeps memory at O(d²) per tracked quantity regardless of the
/// number of snapshots.
class SteadyStateAccumulator final : public SnapshotSink {
 public:
  SteadyStateAccumulator(const Matrix& sigma_yx_full, const Matrix& w0, std::vector<IndexPair> pairs = {});

  void consume(const Snapshot& snapshot) override;

  std::size_t samples() const { return count_; }
  Matrix d_hat() const;
  Matrix sigma_ww(Center center) const;
  Matrix mean_w() const;
  const std::vector<IndexPair>& pairs() const { return pairs_; }
  Matrix pair_d_hat(std::size_t p) const;
  Matrix pair_sigma(std::size_t p) const;
  /// tr((W − W₀)ᵀ(W − W₀)) per snapshot.
  const std::vector<double>& trace_series() const { return trace_; }

  /// Persists every sum so analysis can run without the raw snapshots.
  void save(const std::filesystem::path& path, const nlohmann::json& extra_meta) const;
  static SteadyStateAccumulator load(const std::filesystem::path& path, nlohmann::json* meta_out = nullptr);

 private:
  Matrix sigma_yx_full_;
  Matrix w0_;
  std::vector<IndexPair> pairs_;
  std::size_t count_ = 0;
  Matrix ds_sum_;  // Σ δSᵀδS
  Matrix dw_sum_;  // Σ δWᵀδW
  Matrix w_sum_;   // Σ W
  std::vector<Matrix> pair_ds_;
  std::vector<Matrix> pair_dw_;
  std::vector<double> trace_;
};

/// D̂ = ½ ⟨(Σ_yx⁽ⁿ⁾ − Σ_yx)ᵀ(Σ_yx⁽ⁿ⁾ − Σ_yx)⟩ with the full-batch Σ_yx as mean.
Matrix estimate_diffusion(const TrajectoryRecord& traj, const MomentPair& full);

/// ⟨(W⁽ⁿ⁾ − c)ᵀ(W⁽ⁿ⁾ − c)⟩ with c = W₀ or the snapshot mean.
Matrix estimate_sigma_ww(const TrajectoryRecord& traj, const Equilibrium& equilibrium, Center center = Center::W0);

/// Inputs are symmetrized before use; asymmetry above 1e-8 relative is
/// rejected as InvalidArgument.
FdtReport fdt_check(const Matrix& sigma_xx, const Matrix& sigma_ww, const Matrix& d_hat);

/// Per-output-index identity Σ_xxᵀ Σ_{i,k} + Σ_{i,k} Σ_xx = 2D̂_{i,k}, with
/// Σ_xx + λI as dissipation when the equilibrium carries a ridge.
RefinedFdtReport refined_fdt_check(const TrajectoryRecord& traj, const MomentPair& full,
                                   const Equilibrium& equilibrium, const std::vector<IndexPair>& pairs);

RefinedFdtReport refined_fdt_check(const SteadyStateAccumulator& acc, const Matrix& dissipation);

/// Sum over the (i, i) entries of a refined report: (Σ_i D̂_{i,i}, Σ_i Σ_{i,i}).
std::pair<Matrix, Matrix> contract_pairs(const RefinedFdtReport& report);

/// Integrated autocorrelation time τ = 1 + 2 Σ ρ(t) with Sokal's
/// self-consistent window (smallest M with M ≥ 5τ(M)).
double integrated_autocorrelation_time(std::span<const double> series);

/// Σ_xx + λI.
Matrix dissipation_matrix(const MomentPair& full, double ridge_lambda);

/// Report straight from an accumulator; fills the autocorrelation fields.
FdtReport fdt_check(const SteadyStateAccumulator& acc, const Matrix& dissipation, Center center = Center::W0);

/// Moments, equilibrium, run and check in one call.
struct PipelineResult {
  FdtReport report;
  MomentPair full;
  Equilibrium equilibrium;
  RunSummary run;
};

PipelineResult run_fdt_pipeline(const LabeledDataset& data, const SgdConfig& config, std::optional<double> ridge = {},
                                Center center = Center::W0);

nlohmann::json to_json(const FdtReport& report);
nlohmann::json to_json(const RefinedFdtReport& report);

}  // namespace linfdt
