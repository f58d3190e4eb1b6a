#include "linfdt/matrix.hpp"

#include <cmath>

namespace linfdt {

double relative_frobenius(const Matrix& a, const Matrix& b) {
  const double denom = b.norm();
  const double num = (a - b).norm();
  return denom == 0.0 ? num : num / denom;
}

double max_abs(const Matrix& m) { return m.size() == 0 ? 0.0 : m.cwiseAbs().maxCoeff(); }

bool all_finite(const Matrix& m) { return m.allFinite(); }

double frobenius_dot(const Matrix& a, const Matrix& b) { return a.cwiseProduct(b).sum(); }

double asymmetry(const Matrix& m) {
  const double n = m.norm();
  return n == 0.0 ? 0.0 : (m - m.transpose()).norm() / n;
}

}  // namespace linfdt
