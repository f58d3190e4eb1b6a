#include "linfdt/fdt.hpp"

#include "linfdt/container.hpp"
#include "linfdt/error.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <string>

namespace linfdt {

namespace {

constexpr double kSymmetryTolerance = 1e-8;

void require_square(const Matrix& m, Index n, const char* name) {
  if (m.rows() != n || m.cols() != n) {
    throw Error(ErrorCode::ShapeMismatch, std::string(name) + " must be " + std::to_string(n) + "x" + std::to_string(n));
  }
}

void require_symmetric(const Matrix& m, const char* name) {
  if (asymmetry(m) > kSymmetryTolerance) {
    throw Error(ErrorCode::InvalidArgument, std::string(name) + " is not symmetric (asymmetry " +
                                                std::to_string(asymmetry(m)) + ")");
  }
}

struct Fit {
  double c = 0.0;
  double residual = 0.0;
};

// Least-squares c minimizing ‖lhs − c·rhs‖.
Fit scalar_fit(const Matrix& lhs, const Matrix& rhs) {
  const double rr = rhs.squaredNorm();
  if (rr == 0.0) throw Error(ErrorCode::ZeroDhat, "diffusion estimate is identically zero");
  Fit f;
  f.c = frobenius_dot(lhs, rhs) / rr;
  const double ln = lhs.norm();
  f.residual = ln > 0.0 ? (lhs - f.c * rhs).norm() / ln : 1.0;
  return f;
}

SteadyStateAccumulator accumulate(const TrajectoryRecord& traj, const Matrix& sigma_yx, const Matrix& w0,
                                  std::vector<IndexPair> pairs = {}) {
  if (traj.w_snapshots.empty()) throw Error(ErrorCode::EmptyTrajectory, "trajectory has no snapshots");
  if (traj.sigma_yx_snapshots.size() != traj.w_snapshots.size()) {
    throw Error(ErrorCode::ShapeMismatch, "snapshot sequences differ in length");
  }
  SteadyStateAccumulator acc(sigma_yx, w0, std::move(pairs));
  for (std::size_t n = 0; n < traj.size(); ++n) {
    acc.consume(Snapshot{traj.w_snapshots[n], traj.sigma_yx_snapshots[n], nullptr, n});
  }
  return acc;
}

}  // namespace

std::string_view to_string(Center center) { return center == Center::W0 ? "w0" : "mean"; }

Center center_from_string(std::string_view name) {
  if (name == "w0" || name == "W0") return Center::W0;
  if (name == "mean" || name == "empirical-mean" || name == "EMPIRICAL_MEAN") return Center::EmpiricalMean;
  throw Error(ErrorCode::InvalidArgument, "unknown center '" + std::string(name) + "'");
}

SteadyStateAccumulator::SteadyStateAccumulator(const Matrix& sigma_yx_full, const Matrix& w0, std::vector<IndexPair> pairs)
    : sigma_yx_full_(sigma_yx_full), w0_(w0), pairs_(std::move(pairs)) {
  if (sigma_yx_full.rows() != w0.rows() || sigma_yx_full.cols() != w0.cols()) {
    throw Error(ErrorCode::ShapeMismatch, "Σ_yx and W₀ differ in shape");
  }
  const Index d = w0.cols();
  const auto n_out = static_cast<std::size_t>(w0.rows());
  for (const auto& [i, k] : pairs_) {
    if (i >= n_out || k >= n_out) {
      throw Error(ErrorCode::IndexOutOfRange, "pair (" + std::to_string(i) + "," + std::to_string(k) +
                                                  ") with n_out = " + std::to_string(n_out));
    }
  }
  ds_sum_ = Matrix::Zero(d, d);
  dw_sum_ = Matrix::Zero(d, d);
  w_sum_ = Matrix::Zero(w0.rows(), d);
  pair_ds_.assign(pairs_.size(), Matrix::Zero(d, d));
  pair_dw_.assign(pairs_.size(), Matrix::Zero(d, d));
}

void SteadyStateAccumulator::consume(const Snapshot& s) {
  if (s.w.rows() != w0_.rows() || s.w.cols() != w0_.cols() || s.sigma_yx.rows() != w0_.rows() ||
      s.sigma_yx.cols() != w0_.cols()) {
    throw Error(ErrorCode::ShapeMismatch, "snapshot shape does not match W₀");
  }
  const Matrix ds = s.sigma_yx - sigma_yx_full_;
  const Matrix dw = s.w - w0_;
  ds_sum_.noalias() += ds.transpose() * ds;
  dw_sum_.noalias() += dw.transpose() * dw;
  w_sum_ += s.w;
  for (std::size_t p = 0; p < pairs_.size(); ++p) {
    const auto i = static_cast<Index>(pairs_[p].first);
    const auto k = static_cast<Index>(pairs_[p].second);
    pair_ds_[p].noalias() += ds.row(i).transpose() * ds.row(k);
    pair_dw_[p].noalias() += dw.row(i).transpose() * dw.row(k);
  }
  trace_.push_back(dw.squaredNorm());
  ++count_;
}

Matrix SteadyStateAccumulator::d_hat() const {
  if (count_ == 0) throw Error(ErrorCode::EmptyTrajectory, "no snapshots accumulated");
  return symmetric_part(ds_sum_ * (0.5 / static_cast<double>(count_)));
}

Matrix SteadyStateAccumulator::mean_w() const {
  if (count_ == 0) throw Error(ErrorCode::EmptyTrajectory, "no snapshots accumulated");
  return w_sum_ / static_cast<double>(count_);
}

Matrix SteadyStateAccumulator::sigma_ww(Center center) const {
  if (count_ == 0) throw Error(ErrorCode::EmptyTrajectory, "no snapshots accumulated");
  Matrix s = dw_sum_ / static_cast<double>(count_);
  if (center == Center::EmpiricalMean) {
    const Matrix shift = mean_w() - w0_;
    s.noalias() -= shift.transpose() * shift;
  }
  return symmetric_part(s);
}

Matrix SteadyStateAccumulator::pair_d_hat(std::size_t p) const {
  if (count_ == 0) throw Error(ErrorCode::EmptyTrajectory, "no snapshots accumulated");
  return pair_ds_.at(p) * (0.5 / static_cast<double>(count_));
}

Matrix SteadyStateAccumulator::pair_sigma(std::size_t p) const {
  if (count_ == 0) throw Error(ErrorCode::EmptyTrajectory, "no snapshots accumulated");
  return pair_dw_.at(p) / static_cast<double>(count_);
}

void SteadyStateAccumulator::save(const std::filesystem::path& path, const nlohmann::json& extra_meta) const {
  Container c;
  c.meta = extra_meta;
  c.meta["kind"] = "moments";
  c.meta["samples"] = count_;
  nlohmann::json pairs = nlohmann::json::array();
  for (const auto& [i, k] : pairs_) pairs.push_back({i, k});
  c.meta["pairs"] = pairs;
  c.matrices.emplace_back("sigma_yx_full", sigma_yx_full_);
  c.matrices.emplace_back("w0", w0_);
  c.matrices.emplace_back("ds_sum", ds_sum_);
  c.matrices.emplace_back("dw_sum", dw_sum_);
  c.matrices.emplace_back("w_sum", w_sum_);
  for (std::size_t p = 0; p < pairs_.size(); ++p) {
    c.matrices.emplace_back("pair_ds_" + std::to_string(p), pair_ds_[p]);
    c.matrices.emplace_back("pair_dw_" + std::to_string(p), pair_dw_[p]);
  }
  Matrix trace(1, static_cast<Index>(trace_.size()));
  for (std::size_t n = 0; n < trace_.size(); ++n) trace(0, static_cast<Index>(n)) = trace_[n];
  c.matrices.emplace_back("trace_series", trace);
  write_container(path, c);
}

SteadyStateAccumulator SteadyStateAccumulator::load(const std::filesystem::path& path, nlohmann::json* meta_out) {
  const Container c = read_container(path);
  if (c.meta.value("kind", "") != "moments") throw Error(ErrorCode::BadContainer, path.string() + " is not a moments file");
  std::vector<IndexPair> pairs;
  for (const auto& p : c.meta.at("pairs")) pairs.emplace_back(p.at(0).get<std::size_t>(), p.at(1).get<std::size_t>());
  SteadyStateAccumulator acc(c.matrix("sigma_yx_full"), c.matrix("w0"), pairs);
  acc.count_ = c.meta.at("samples").get<std::size_t>();
  acc.ds_sum_ = c.matrix("ds_sum");
  acc.dw_sum_ = c.matrix("dw_sum");
  acc.w_sum_ = c.matrix("w_sum");
  for (std::size_t p = 0; p < pairs.size(); ++p) {
    acc.pair_ds_[p] = c.matrix("pair_ds_" + std::to_string(p));
    acc.pair_dw_[p] = c.matrix("pair_dw_" + std::to_string(p));
  }
  const Matrix& trace = c.matrix("trace_series");
  acc.trace_.assign(trace.data(), trace.data() + trace.size());
  if (meta_out != nullptr) *meta_out = c.meta;
  return acc;
}

Matrix estimate_diffusion(const TrajectoryRecord& traj, const MomentPair& full) {
  if (traj.w_snapshots.empty()) throw Error(ErrorCode::EmptyTrajectory, "trajectory has no snapshots");
  const Matrix w0 = Matrix::Zero(full.sigma_yx.rows(), full.sigma_yx.cols());
  return accumulate(traj, full.sigma_yx, w0).d_hat();
}

Matrix estimate_sigma_ww(const TrajectoryRecord& traj, const Equilibrium& equilibrium, Center center) {
  if (traj.w_snapshots.empty()) throw Error(ErrorCode::EmptyTrajectory, "trajectory has no snapshots");
  const Matrix zero = Matrix::Zero(equilibrium.w0.rows(), equilibrium.w0.cols());
  SteadyStateAccumulator acc(zero, equilibrium.w0);
  for (std::size_t n = 0; n < traj.size(); ++n) acc.consume(Snapshot{traj.w_snapshots[n], zero, nullptr, n});
  return acc.sigma_ww(center);
}

FdtReport fdt_check(const Matrix& sigma_xx, const Matrix& sigma_ww, const Matrix& d_hat) {
  const Index d = sigma_xx.rows();
  require_square(sigma_xx, d, "sigma_xx");
  require_square(sigma_ww, d, "sigma_ww");
  require_square(d_hat, d, "d_hat");
  require_symmetric(sigma_xx, "sigma_xx");
  require_symmetric(sigma_ww, "sigma_ww");
  require_symmetric(d_hat, "d_hat");

  FdtReport r;
  const Matrix sxx = symmetric_part(sigma_xx);
  r.sigma_ww = symmetric_part(sigma_ww);
  r.d_hat = symmetric_part(d_hat);
  if (r.d_hat.norm() == 0.0) throw Error(ErrorCode::ZeroDhat, "diffusion estimate is identically zero");

  const Matrix m = sxx * r.sigma_ww;
  r.lhs = m + m.transpose();
  const Fit fit = scalar_fit(r.lhs, 2.0 * r.d_hat);
  r.proportionality = fit.c;
  r.relative_residual = fit.residual;

  r.q_matrix = antisymmetric_part(m);
  const double q_max = max_abs(r.q_matrix);
  const double sym_max = max_abs(symmetric_part(m));
  r.q_ratio = sym_max > 0.0 ? q_max / sym_max : 0.0;
  const double d_max = std::abs(fit.c) * max_abs(r.d_hat);
  r.q_ratio_d_hat = d_max > 0.0 ? q_max / d_max : 0.0;
  return r;
}

Matrix dissipation_matrix(const MomentPair& full, double ridge_lambda) {
  Matrix g = full.sigma_xx;
  g.diagonal().array() += ridge_lambda;
  return g;
}

FdtReport fdt_check(const SteadyStateAccumulator& acc, const Matrix& dissipation, Center center) {
  FdtReport r = fdt_check(dissipation, acc.sigma_ww(center), acc.d_hat());
  const double tau = integrated_autocorrelation_time(acc.trace_series());
  r.autocorrelation_time = tau;
  r.effective_samples = static_cast<double>(acc.samples()) / tau;
  return r;
}

RefinedFdtReport refined_fdt_check(const SteadyStateAccumulator& acc, const Matrix& dissipation) {
  const Index d = acc.mean_w().cols();
  require_square(dissipation, d, "dissipation");
  RefinedFdtReport r;
  r.index_pairs = acc.pairs();
  for (std::size_t p = 0; p < acc.pairs().size(); ++p) {
    Matrix dp = acc.pair_d_hat(p);
    Matrix sp = acc.pair_sigma(p);
    const Matrix lhs = dissipation.transpose() * sp + sp * dissipation;
    const Fit fit = scalar_fit(lhs, 2.0 * dp);
    r.per_pair_residual.push_back(fit.residual);
    r.per_pair_proportionality.push_back(fit.c);
    r.d_hat_pairs.push_back(std::move(dp));
    r.sigma_pairs.push_back(std::move(sp));
  }
  return r;
}

RefinedFdtReport refined_fdt_check(const TrajectoryRecord& traj, const MomentPair& full,
                                   const Equilibrium& equilibrium, const std::vector<IndexPair>& pairs) {
  const SteadyStateAccumulator acc = accumulate(traj, full.sigma_yx, equilibrium.w0, pairs);
  return refined_fdt_check(acc, dissipation_matrix(full, equilibrium.ridge_lambda));
}

std::pair<Matrix, Matrix> contract_pairs(const RefinedFdtReport& report) {
  std::pair<Matrix, Matrix> out;
  for (std::size_t p = 0; p < report.index_pairs.size(); ++p) {
    if (report.index_pairs[p].first != report.index_pairs[p].second) continue;
    if (out.first.size() == 0) {
      out.first = Matrix::Zero(report.d_hat_pairs[p].rows(), report.d_hat_pairs[p].cols());
      out.second = Matrix::Zero(out.first.rows(), out.first.cols());
    }
    out.first += report.d_hat_pairs[p];
    out.second += report.sigma_pairs[p];
  }
  return out;
}

double integrated_autocorrelation_time(std::span<const double> series) {
  const std::size_t n = series.size();
  if (n < 2) return 1.0;
  double mean = 0.0;
  for (double v : series) mean += v;
  mean /= static_cast<double>(n);

  // Autocovariance through a zero-padded FFT.
  const std::size_t len = 2 * n;
  std::vector<double> buf(len, 0.0);
  for (std::size_t t = 0; t < n; ++t) buf[t] = series[t] - mean;
  std::vector<std::complex<double>> spec(len / 2 + 1);
  auto* fwd = fftw_plan_dft_r2c_1d(static_cast<int>(len), buf.data(), reinterpret_cast<fftw_complex*>(spec.data()),
                                   FFTW_ESTIMATE);
  fftw_execute(fwd);
  fftw_destroy_plan(fwd);
  for (auto& z : spec) z = std::norm(z);
  auto* inv = fftw_plan_dft_c2r_1d(static_cast<int>(len), reinterpret_cast<fftw_complex*>(spec.data()), buf.data(),
                                   FFTW_ESTIMATE);
  fftw_execute(inv);
  fftw_destroy_plan(inv);

  const double c0 = buf[0];
  if (!(c0 > 0.0)) return 1.0;
  double tau = 1.0;
  for (std::size_t m = 1; m < n / 2; ++m) {
    tau += 2.0 * buf[m] / c0;
    if (static_cast<double>(m) >= 5.0 * tau) break;
  }
  return std::max(tau, 1.0);
}

PipelineResult run_fdt_pipeline(const LabeledDataset& data, const SgdConfig& config, std::optional<double> ridge,
                                Center center) {
  PipelineResult out;
  out.full = full_moments(data);
  out.equilibrium = equilibrium(out.full, ridge.value_or(default_ridge(out.full.sigma_xx)));
  SteadyStateAccumulator acc(out.full.sigma_yx, out.equilibrium.w0);
  out.run = run_to_steady_state(data, config, out.equilibrium, out.full, acc);
  out.report = fdt_check(acc, dissipation_matrix(out.full, out.equilibrium.ridge_lambda), center);
  return out;
}

nlohmann::json to_json(const FdtReport& r) {
  nlohmann::json j = {{"proportionality", r.proportionality},
                      {"relative_residual", r.relative_residual},
                      {"q_ratio", r.q_ratio},
                      {"q_ratio_d_hat", r.q_ratio_d_hat},
                      {"dim", r.d_hat.rows()}};
  j["autocorrelation_time"] = r.autocorrelation_time ? nlohmann::json(*r.autocorrelation_time) : nlohmann::json(nullptr);
  j["effective_samples"] = r.effective_samples ? nlohmann::json(*r.effective_samples) : nlohmann::json(nullptr);
  return j;
}

nlohmann::json to_json(const RefinedFdtReport& r) {
  nlohmann::json pairs = nlohmann::json::array();
  for (std::size_t p = 0; p < r.index_pairs.size(); ++p) {
    pairs.push_back({{"i", r.index_pairs[p].first},
                     {"k", r.index_pairs[p].second},
                     {"relative_residual", r.per_pair_residual[p]},
                     {"proportionality", r.per_pair_proportionality[p]}});
  }
  return {{"pairs", pairs}};
}

}  // namespace linfdt
