#pragma once

#include "linfdt/fdt.hpp"
#include "linfdt/matrix.hpp"

#include <complex>
#include <string>
#include <vector>

namespace linfdt {

using ComplexMatrix = Eigen::Matrix<std::complex<double>, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// How a d×d correlation matrix (d = a²) is read as a 2D signal.
enum class SpectrumConvention {
  // Raw (row, column) matrix indices; the cut samples F(m·a, 0).
  MatrixIndex,
  // Pixel column displacement between the two pixels of each entry; the
  // cut samples F(m·a, −m·a).
  PixelDisplacement,
};

std::string_view to_string(SpectrumConvention convention);
SpectrumConvention spectrum_convention_from_string(std::string_view name);

/// Unnormalized forward transform F(k_x, k_y) = Σ_pq M_pq e^{−2πi(k_x p + k_y q)/d}.
ComplexMatrix dft2(const Matrix& m);

struct SpectrumLine {
  std::vector<int> k_multiples;
  std::vector<double> amplitude_lhs;  // |F(m k₀)| / |F(0)|
  std::vector<double> amplitude_d;
  std::size_t side_length = 0;
  SpectrumConvention convention = SpectrumConvention::MatrixIndex;
};

/// Normalized magnitudes at k_x = m·2π/a, m = 0..max_multiple, for two
/// d×d matrices. Requires d = a² and max_multiple ≤ a/2.
SpectrumLine line_cut(const Matrix& lhs, const Matrix& d_hat, std::size_t a, std::size_t max_multiple = 4,
                      SpectrumConvention convention = SpectrumConvention::MatrixIndex);

SpectrumLine line_cut(const FdtReport& report, std::size_t a, std::size_t max_multiple = 4,
                      SpectrumConvention convention = SpectrumConvention::MatrixIndex);

/// Largest pointwise |amplitude_lhs − amplitude_d|.
double max_deviation(const SpectrumLine& line);

/// Columns: m, k_x, amplitude_lhs, amplitude_d.
std::string to_csv(const SpectrumLine& line);

}  // namespace linfdt
