#pragma once

#include "linfdt/dataset.hpp"
#include "linfdt/matrix.hpp"

#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace linfdt {

using Rng = std::mt19937_64;

enum class MomentKind { Full, Mini };

/// Σ_xx = ⟨x xᵀ⟩ and Σ_yx = ⟨y xᵀ⟩ over a batch.
struct MomentPair {
  Matrix sigma_xx;  // d × d
  Matrix sigma_yx;  // n_out × d
  std::size_t batch_size = 0;
  MomentKind kind = MomentKind::Full;
  std::vector<std::size_t> batch_indices;  // empty for FULL
};

struct Equilibrium {
  Matrix w0;  // n_out × d
  double ridge_lambda = 0.0;
  double condition_estimate = 0.0;  // λ_max / λ_min of Σ_xx + λI
};

MomentPair full_moments(const LabeledDataset& data);

/// Moments of the samples at `indices` (duplicates allowed).
MomentPair batch_moments(const LabeledDataset& data, std::span<const std::size_t> indices);

/// Draws `batch_size` distinct indices uniformly from [0, n).
std::vector<std::size_t> draw_batch(std::size_t n, std::size_t batch_size, Rng& rng);

MomentPair mini_batch_moments(const LabeledDataset& data, std::size_t batch_size, Rng& rng);

/// 1e-6 · tr(Σ_xx) / d.
double default_ridge(const Matrix& sigma_xx);

/// W₀ = Σ_yx (Σ_xx + λI)⁻¹ through a Cholesky factorization.
Equilibrium equilibrium(const MomentPair& full, double ridge_lambda);

}  // namespace linfdt
