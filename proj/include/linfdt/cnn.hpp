#pragma once

#include "linfdt/dataset.hpp"
#include "linfdt/dynamics.hpp"
#include "linfdt/fdt.hpp"
#include "linfdt/matrix.hpp"
#include "linfdt/moments.hpp"

#include <filesystem>
#include <optional>
#include <vector>

namespace linfdt {

struct ConvFilter {
  Matrix c;  // c_side × c_side

  std::size_t side() const { return static_cast<std::size_t>(c.rows()); }
  Vector flat() const { return Eigen::Map<const Vector>(c.data(), c.size()); }
  static ConvFilter from_flat(const Vector& v, std::size_t side);
  static ConvFilter identity();
};

struct CnnState {
  ConvFilter filter;
  Matrix w;  // n_out × (a − c + 1)²
  std::size_t step = 0;
};

/// Valid cross-correlation X[r][s] = Σ_uv C[u][v] x[r+u][s+v] on an a×a grid.
Matrix conv_forward(const ConvFilter& filter, const Matrix& x);

/// The (a−c+1)² × a² operator K with X = K x on row-major flattened grids.
Matrix filter_operator(const ConvFilter& filter, std::size_t a);

/// Every input row of `data` filtered; outputs copied.
LabeledDataset filter_dataset(const LabeledDataset& data, const ConvFilter& filter);

struct FilterGradientTerms {
  Matrix p;      // c² × c², symmetric
  Vector q_vec;  // c²
};

/// P_il = Σ_jk (WᵀW)_jk Σ^xx_{l+k, j+i} and q_i = Σ_kj W_kj Σ^yx_{k, j+i}
/// over raw-pixel moments; ∂E/∂C = P·C − q.
FilterGradientTerms compute_p_q(const Matrix& w, std::size_t c_side, const MomentPair& raw, std::size_t a);

/// Σ_XX = K Σ_xx Kᵀ, Σ_yX = Σ_yx Kᵀ.
MomentPair filtered_moments(const ConvFilter& filter, const MomentPair& raw, std::size_t a);

/// E = ½ N⁻¹ Σ_α ‖y_α − W X_α‖² evaluated on the data.
double error_function(const LabeledDataset& data, const ConvFilter& filter, const Matrix& w);

struct CnnConfig {
  SgdConfig sgd;                // ε for W, batch size, seed, step count (max_steps)
  double filter_epsilon = 0.01;
  std::size_t c_side = 3;
  bool freeze_filter = false;
  bool full_batch = false;      // deterministic gradient descent on full moments
  double ridge_lambda = 0.0;    // weight decay on W, as in the plain dynamics
  double init_noise = 0.01;     // uniform half-width added to the centered delta
  std::optional<ConvFilter> initial_filter;
  std::optional<double> gradient_tolerance;  // stop when both relative gradients fall below it
  std::size_t record_interval = 0;           // 0 records only the final state
};

struct CnnTrajectory {
  std::vector<CnnState> states;
  std::vector<double> error;  // E after every step (full-batch mode) or every recorded step
  CnnState final_state;
  std::optional<std::size_t> converged_at;
};

/// Centered delta plus uniform noise in [−noise, noise].
ConvFilter initial_filter(std::size_t c_side, double noise, std::uint64_t seed);

/// Alternating updates from W = 0: W ← W(I − εΣ_XX) + εΣ_yX on the current
/// filter, then C ← C + ε_c(q − P C), both on the same mini-batch.
CnnTrajectory joint_descent(const LabeledDataset& data, const CnnConfig& config);

struct FilteredFdtResult {
  PipelineResult pipeline;
  bool ridge_fallback = false;  // Σ_XX was numerically singular
};

/// The plain pipeline on the filtered dataset with the filter held fixed.
FilteredFdtResult fdt_check_filtered(const LabeledDataset& data, const ConvFilter& filter, const SgdConfig& config,
                                     std::optional<double> ridge = {});

void save_cnn_state(const std::filesystem::path& path, const CnnState& state, const nlohmann::json& extra_meta);
CnnState load_cnn_state(const std::filesystem::path& path, nlohmann::json* meta_out = nullptr);

}  // namespace linfdt
