#include "linfdt/ou.hpp"

#include "linfdt/container.hpp"
#include "linfdt/error.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <complex>
#include <fstream>
#include <random>
#include <sstream>

namespace linfdt {

namespace {

using CMatrix = Eigen::MatrixXcd;

void validate(const OuSystem& system) {
  const Index n = system.gamma.rows();
  if (n == 0 || system.gamma.cols() != n || system.diffusion.rows() != n || system.diffusion.cols() != n) {
    throw Error(ErrorCode::ShapeMismatch, "gamma and diffusion must be n x n");
  }
  const double scale = std::max(1.0, max_abs(system.diffusion));
  if (max_abs(system.diffusion - system.diffusion.transpose()) > 1e-12 * scale) {
    throw Error(ErrorCode::InvalidArgument, "diffusion matrix is not symmetric");
  }
}

std::string eigenvalue_list(const Eigen::VectorXcd& ev) {
  std::ostringstream os;
  for (Index i = 0; i < ev.size(); ++i) os << (i ? ", " : "") << ev(i);
  return os.str();
}

// Γ = V Λ Vᵀ: Σ = V [F_ij / (λ_i + λ_j)] Vᵀ with F = Vᵀ 2D V.
Matrix solve_symmetric(const Matrix& gamma, const Matrix& rhs) {
  const Eigen::SelfAdjointEigenSolver<Matrix> eig(gamma);
  const Vector& lam = eig.eigenvalues();
  if (lam.minCoeff() <= 0.0) {
    throw Error(ErrorCode::UnstableDrift, "drift eigenvalues must be positive: min = " + std::to_string(lam.minCoeff()));
  }
  const Matrix& v = eig.eigenvectors();
  Matrix f = v.transpose() * rhs * v;
  for (Index i = 0; i < f.rows(); ++i) {
    for (Index j = 0; j < f.cols(); ++j) f(i, j) /= lam(i) + lam(j);
  }
  return v * f * v.transpose();
}

// Bartels–Stewart on the complex Schur form Γ = U T Uᴴ:
// T Y + Y Tᴴ = Uᴴ 2D U, solved one column at a time from the right.
Matrix solve_general(const Matrix& gamma, const Matrix& rhs) {
  const Eigen::MatrixXd g = gamma;
  const Eigen::ComplexSchur<Eigen::MatrixXd> schur(g);
  if (schur.info() != Eigen::Success) throw Error(ErrorCode::IllConditioned, "Schur decomposition failed");
  const CMatrix& t = schur.matrixT();
  const CMatrix& u = schur.matrixU();
  const Index n = t.rows();

  const Eigen::VectorXcd ev = t.diagonal();
  if (ev.real().minCoeff() <= 0.0) {
    throw Error(ErrorCode::UnstableDrift, "drift eigenvalues must have positive real part: " + eigenvalue_list(ev));
  }
  const double tnorm = t.norm();
  double min_sep = std::numeric_limits<double>::infinity();
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < n; ++j) min_sep = std::min(min_sep, std::abs(ev(i) + std::conj(ev(j))));
  }
  if (min_sep < 1e-14 * tnorm) throw Error(ErrorCode::IllConditioned, "Lyapunov operator is numerically singular");

  const CMatrix f = u.adjoint() * rhs.cast<std::complex<double>>() * u;
  CMatrix y = CMatrix::Zero(n, n);
  for (Index j = n - 1; j >= 0; --j) {
    Eigen::VectorXcd col = f.col(j);
    for (Index k = j + 1; k < n; ++k) col -= std::conj(t(j, k)) * y.col(k);
    CMatrix shifted = t;
    shifted.diagonal().array() += std::conj(t(j, j));
    y.col(j) = shifted.triangularView<Eigen::Upper>().solve(col);
  }
  const CMatrix x = u * y * u.adjoint();
  return x.real();
}

}  // namespace

StationaryResult solve_lyapunov(const OuSystem& system) {
  validate(system);
  const Matrix rhs = 2.0 * system.diffusion;
  const bool symmetric = max_abs(system.gamma - system.gamma.transpose()) <= 1e-14 * std::max(1.0, max_abs(system.gamma));

  StationaryResult r;
  r.sigma = symmetric_part(symmetric ? solve_symmetric(symmetric_part(system.gamma), rhs) : solve_general(system.gamma, rhs));
  const Matrix gs = system.gamma * r.sigma;
  r.q_matrix = antisymmetric_part(gs);
  r.symmetric_part = symmetric_part(gs);
  r.diffusion = system.diffusion;
  const Matrix resid = gs + gs.transpose() - rhs;
  const double denom = rhs.norm();
  r.residual = denom > 0.0 ? resid.norm() / denom : resid.norm();
  if (!all_finite(r.sigma) || r.residual > 1e-8) {
    throw Error(ErrorCode::IllConditioned, "Lyapunov residual " + std::to_string(r.residual) + " too large");
  }
  return r;
}

Matrix psd_factor(const Matrix& diffusion) {
  const Eigen::SelfAdjointEigenSolver<Matrix> eig(symmetric_part(diffusion));
  if (eig.info() != Eigen::Success) throw Error(ErrorCode::NonPsdDiffusion, "eigendecomposition failed");
  const double tol = 1e-12 * std::abs(diffusion.trace());
  Vector lam = eig.eigenvalues();
  for (Index i = 0; i < lam.size(); ++i) {
    if (lam(i) < -tol) {
      throw Error(ErrorCode::NonPsdDiffusion, "diffusion has negative eigenvalue " + std::to_string(lam(i)));
    }
    lam(i) = std::sqrt(std::max(lam(i), 0.0));
  }
  return eig.eigenvectors() * lam.asDiagonal();
}

Matrix simulate_ou(const OuSystem& system, double dt, std::size_t n_steps, std::size_t burn_in, std::uint64_t seed) {
  validate(system);
  if (!(dt > 0.0)) throw Error(ErrorCode::InvalidArgument, "dt must be positive");
  if (n_steps <= burn_in) throw Error(ErrorCode::InvalidArgument, "n_steps must exceed burn_in");
  const Eigen::VectorXcd ev = system.gamma.eigenvalues();
  const double max_re = ev.real().maxCoeff();
  if (dt * max_re >= 0.5) {
    throw Error(ErrorCode::UnstableDiscretization, "dt * max Re(eig) = " + std::to_string(dt * max_re) + " >= 0.5");
  }
  const Matrix l = psd_factor(system.diffusion);
  const Index n = system.gamma.rows();
  const double noise_scale = std::sqrt(2.0 * dt);
  const Matrix step = Matrix::Identity(n, n) - dt * system.gamma;

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  Vector x = Vector::Zero(n);
  Vector xi(n);
  Matrix acc = Matrix::Zero(n, n);
  for (std::size_t s = 0; s < n_steps; ++s) {
    for (Index i = 0; i < n; ++i) xi(i) = normal(rng);
    x = step * x + noise_scale * (l * xi);
    if (s >= burn_in) acc.noalias() += x * x.transpose();
  }
  return symmetric_part(acc / static_cast<double>(n_steps - burn_in));
}

DetailedBalance detailed_balance_check(const StationaryResult& result, double tolerance) {
  const double dmax = max_abs(result.diffusion);
  if (dmax == 0.0) throw Error(ErrorCode::ZeroDiffusion, "max |D| is zero");
  DetailedBalance out;
  out.ratio = max_abs(result.q_matrix) / dmax;
  out.holds = out.ratio < tolerance;
  return out;
}

namespace {

Matrix square_from_json(const nlohmann::json& j, const char* what) {
  if (j.is_number()) return Matrix::Constant(1, 1, j.get<double>());
  if (!j.is_array() || j.empty()) throw Error(ErrorCode::InvalidArgument, std::string(what) + " must be a non-empty array of rows");
  const auto n = static_cast<Index>(j.size());
  Matrix m(n, n);
  for (Index r = 0; r < n; ++r) {
    const auto& row = j[static_cast<std::size_t>(r)];
    if (!row.is_array() || static_cast<Index>(row.size()) != n) {
      throw Error(ErrorCode::ShapeMismatch, std::string(what) + " must be square");
    }
    for (Index c = 0; c < n; ++c) m(r, c) = row[static_cast<std::size_t>(c)].get<double>();
  }
  return m;
}

}  // namespace

OuSystem ou_system_from_json(const nlohmann::json& j) {
  if (!j.contains("gamma") || !j.contains("diffusion")) {
    throw Error(ErrorCode::InvalidArgument, "OU system needs \"gamma\" and \"diffusion\"");
  }
  return {square_from_json(j["gamma"], "gamma"), square_from_json(j["diffusion"], "diffusion")};
}

void save_ou_system(const std::filesystem::path& path, const OuSystem& system) {
  Container c;
  c.meta["kind"] = "ou_system";
  c.matrices.emplace_back("gamma", system.gamma);
  c.matrices.emplace_back("diffusion", system.diffusion);
  write_container(path, c);
}

OuSystem load_ou_system(const std::filesystem::path& path) {
  if (path.extension() == ".json") {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
    try {
      return ou_system_from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::InvalidArgument, path.string() + ": " + e.what());
    }
  }
  const Container c = read_container(path);
  if (c.meta.value("kind", "") != "ou_system") throw Error(ErrorCode::BadContainer, path.string() + " is not an OU system");
  return {c.matrix("gamma"), c.matrix("diffusion")};
}

void save_stationary(const std::filesystem::path& path, const StationaryResult& result) {
  Container c;
  c.meta["kind"] = "ou_stationary";
  c.meta["residual"] = result.residual;
  c.matrices.emplace_back("sigma", result.sigma);
  c.matrices.emplace_back("q_matrix", result.q_matrix);
  c.matrices.emplace_back("symmetric_part", result.symmetric_part);
  c.matrices.emplace_back("diffusion", result.diffusion);
  write_container(path, c);
}

StationaryResult load_stationary(const std::filesystem::path& path) {
  const Container c = read_container(path);
  if (c.meta.value("kind", "") != "ou_stationary") {
    throw Error(ErrorCode::BadContainer, path.string() + " is not an OU stationary result");
  }
  StationaryResult r;
  r.sigma = c.matrix("sigma");
  r.q_matrix = c.matrix("q_matrix");
  r.symmetric_part = c.matrix("symmetric_part");
  r.diffusion = c.matrix("diffusion");
  r.residual = c.meta.at("residual").get<double>();
  return r;
}

}  // namespace linfdt
