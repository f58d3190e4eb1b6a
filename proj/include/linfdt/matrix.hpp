#pragma once

#include <Eigen/Dense>

#include <cstddef>

namespace linfdt {

// Row-major so that a sample matrix keeps each x_alpha contiguous and the
// on-disk layout matches memory.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

inline Matrix symmetric_part(const Matrix& m) { return 0.5 * (m + m.transpose()); }
inline Matrix antisymmetric_part(const Matrix& m) { return 0.5 * (m - m.transpose()); }

/// ‖a − b‖_F / ‖b‖_F; returns ‖a‖_F when b is exactly zero.
double relative_frobenius(const Matrix& a, const Matrix& b);

/// Largest |m_ij|, 0 for an empty matrix.
double max_abs(const Matrix& m);

bool all_finite(const Matrix& m);

/// Frobenius inner product Σ_ij a_ij b_ij.
double frobenius_dot(const Matrix& a, const Matrix& b);

/// Asymmetry ‖m − mᵀ‖_F / ‖m‖_F (0 for the zero matrix).
double asymmetry(const Matrix& m);

}  // namespace linfdt
