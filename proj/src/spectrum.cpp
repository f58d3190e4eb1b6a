#include "linfdt/spectrum.hpp"

#include "linfdt/error.hpp"

#include <fftw3.h>

#include <cmath>
#include <cstdio>
#include <numbers>

namespace linfdt {

std::string_view to_string(SpectrumConvention convention) {
  return convention == SpectrumConvention::MatrixIndex ? "matrix" : "pixel";
}

SpectrumConvention spectrum_convention_from_string(std::string_view name) {
  if (name == "matrix" || name == "matrix-index") return SpectrumConvention::MatrixIndex;
  if (name == "pixel" || name == "pixel-displacement") return SpectrumConvention::PixelDisplacement;
  throw Error(ErrorCode::InvalidArgument, "unknown spectrum convention '" + std::string(name) + "'");
}

ComplexMatrix dft2(const Matrix& m) {
  if (m.rows() != m.cols()) {
    throw Error(ErrorCode::NotSquare, "dft2 needs a square matrix, got " + std::to_string(m.rows()) + "x" +
                                          std::to_string(m.cols()));
  }
  const int n = static_cast<int>(m.rows());
  ComplexMatrix out(n, n);
  if (n == 0) return out;
  ComplexMatrix in = m.cast<std::complex<double>>();
  auto* plan = fftw_plan_dft_2d(n, n, reinterpret_cast<fftw_complex*>(in.data()),
                                reinterpret_cast<fftw_complex*>(out.data()), FFTW_FORWARD, FFTW_ESTIMATE);
  fftw_execute(plan);
  fftw_destroy_plan(plan);
  return out;
}

SpectrumLine line_cut(const Matrix& lhs, const Matrix& d_hat, std::size_t a, std::size_t max_multiple,
                      SpectrumConvention convention) {
  const auto d = static_cast<std::size_t>(lhs.rows());
  if (a == 0 || d != a * a) {
    throw Error(ErrorCode::InvalidArgument, "matrix dimension " + std::to_string(d) + " is not a² for a = " +
                                                std::to_string(a));
  }
  if (d_hat.rows() != lhs.rows() || d_hat.cols() != lhs.cols()) throw Error(ErrorCode::ShapeMismatch, "lhs and d_hat differ");
  if (max_multiple > a / 2) {
    throw Error(ErrorCode::InvalidArgument, "max_multiple " + std::to_string(max_multiple) + " exceeds a/2 = " +
                                                std::to_string(a / 2));
  }
  const ComplexMatrix fl = dft2(lhs);
  const ComplexMatrix fd = dft2(d_hat);
  const double dc_l = std::abs(fl(0, 0));
  const double dc_d = std::abs(fd(0, 0));
  if (dc_l == 0.0 || dc_d == 0.0) throw Error(ErrorCode::ZeroDcComponent, "F(0,0) vanishes");

  SpectrumLine line;
  line.side_length = a;
  line.convention = convention;
  for (std::size_t m = 0; m <= max_multiple; ++m) {
    const auto kx = static_cast<Index>(m * a);
    const Index ky = convention == SpectrumConvention::MatrixIndex ? 0 : static_cast<Index>((d - m * a) % d);
    line.k_multiples.push_back(static_cast<int>(m));
    line.amplitude_lhs.push_back(m == 0 ? 1.0 : std::abs(fl(kx, ky)) / dc_l);
    line.amplitude_d.push_back(m == 0 ? 1.0 : std::abs(fd(kx, ky)) / dc_d);
  }
  return line;
}

SpectrumLine line_cut(const FdtReport& report, std::size_t a, std::size_t max_multiple, SpectrumConvention convention) {
  return line_cut(report.lhs, report.d_hat, a, max_multiple, convention);
}

double max_deviation(const SpectrumLine& line) {
  double worst = 0.0;
  for (std::size_t i = 0; i < line.k_multiples.size(); ++i) {
    worst = std::max(worst, std::abs(line.amplitude_lhs[i] - line.amplitude_d[i]));
  }
  return worst;
}

std::string to_csv(const SpectrumLine& line) {
  std::string out = "m,k_x,amplitude_lhs,amplitude_d\n";
  char buf[128];
  const double k0 = 2.0 * std::numbers::pi / static_cast<double>(line.side_length);
  for (std::size_t i = 0; i < line.k_multiples.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g\n", line.k_multiples[i], line.k_multiples[i] * k0,
                  line.amplitude_lhs[i], line.amplitude_d[i]);
    out += buf;
  }
  return out;
}

}  // namespace linfdt
