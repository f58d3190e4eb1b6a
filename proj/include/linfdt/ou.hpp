#pragma once

#include "linfdt/matrix.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>

namespace linfdt {

/// Multidimensional Ornstein-Uhlenbeck process ẋ = −Γx + f(t) with
/// ⟨f(t) f(t')ᵀ⟩ = 2D δ(t − t').
struct OuSystem {
  Matrix gamma;      // n × n drift, spectrum in the open right half-plane
  Matrix diffusion;  // n × n symmetric positive semidefinite
};

struct StationaryResult {
  Matrix sigma;          // stationary covariance, Γ Σ + Σ Γᵀ = 2D
  Matrix q_matrix;       // antisymmetric part of Γ Σ
  Matrix symmetric_part; // symmetric part of Γ Σ; equals D up to round-off
  Matrix diffusion;      // D as given
  double residual = 0.0; // ‖ΓΣ + ΣΓᵀ − 2D‖_F / ‖2D‖_F
};

/// Solves Γ Σ + Σ Γᵀ = 2D. Symmetric Γ goes through an eigendecomposition;
/// general Γ through a complex Schur form and triangular back-substitution.
StationaryResult solve_lyapunov(const OuSystem& system);

/// Euler–Maruyama x ← x − Γx·dt + √(2dt)·L·ξ with L Lᵀ = D, started at 0.
/// Returns the time average of x xᵀ over the steps after `burn_in`.
Matrix simulate_ou(const OuSystem& system, double dt, std::size_t n_steps, std::size_t burn_in, std::uint64_t seed);

struct DetailedBalance {
  bool holds = false;
  double ratio = 0.0;  // max|Q| / max|D|
};

DetailedBalance detailed_balance_check(const StationaryResult& result, double tolerance);

/// L with L Lᵀ = D from an eigendecomposition. Eigenvalues below
/// −1e-12·tr(D) are rejected; the rest of the negative range clamps to 0.
Matrix psd_factor(const Matrix& diffusion);

/// {"gamma": [[...], ...], "diffusion": [[...], ...]}; a bare number is read as a 1×1 matrix.
OuSystem ou_system_from_json(const nlohmann::json& j);

void save_ou_system(const std::filesystem::path& path, const OuSystem& system);
/// Reads either the container written by save_ou_system or a JSON file.
OuSystem load_ou_system(const std::filesystem::path& path);

void save_stationary(const std::filesystem::path& path, const StationaryResult& result);
StationaryResult load_stationary(const std::filesystem::path& path);

}  // namespace linfdt
