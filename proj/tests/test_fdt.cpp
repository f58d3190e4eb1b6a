#include "helpers.hpp"
#include "oracles.hpp"

#include "linfdt/fdt.hpp"
#include "linfdt/ou.hpp"

#include <cmath>

using namespace linfdt;

namespace {

TrajectoryRecord two_point(const Matrix& w0, const Matrix& delta, const Matrix& syx, const Matrix& dsyx) {
  TrajectoryRecord rec;
  rec.w_snapshots = {w0 + delta, w0 - delta};
  rec.sigma_yx_snapshots = {syx + dsyx, syx - dsyx};
  return rec;
}

LabeledDataset noisy_data(std::uint64_t seed, double rho = 0.5) {
  SyntheticSpec s;
  s.d = 4;
  s.n_out = 3;
  s.n_samples = 5000;
  s.input_covariance = random_covariance({0.5, 1.0, 1.5, 2.0}, seed);
  s.teacher = Matrix::Constant(3, 4, 0.05);
  s.label_noise_std = 1.0;
  s.label_noise_correlation = rho;
  s.continuous_labels = true;
  s.seed = seed;
  return generate_synthetic(s);
}

}  // namespace

TEST(EstimateDiffusion, NoFluctuationGivesZero) {
  MomentPair full;
  full.sigma_yx = Matrix{{1.0, 2.0}, {0.5, -1.0}};
  TrajectoryRecord rec;
  rec.w_snapshots.assign(3, Matrix::Zero(2, 2));
  rec.sigma_yx_snapshots.assign(3, full.sigma_yx);
  EXPECT_TRUE(estimate_diffusion(rec, full).isZero(0.0));
  EXPECT_CODE(estimate_diffusion(TrajectoryRecord{}, full), ErrorCode::EmptyTrajectory);
}

TEST(EstimateDiffusion, SingleSnapshotRank) {
  std::mt19937_64 rng(1);
  MomentPair full;
  full.sigma_yx = oracle::random_matrix(2, 6, rng);
  TrajectoryRecord rec;
  rec.w_snapshots = {Matrix::Zero(2, 6)};
  rec.sigma_yx_snapshots = {oracle::random_matrix(2, 6, rng)};
  const Matrix d = estimate_diffusion(rec, full);
  const Matrix ds = rec.sigma_yx_snapshots[0] - full.sigma_yx;
  EXPECT_LT(relative_frobenius(d, 0.5 * ds.transpose() * ds), 1e-14);
  const Eigen::FullPivLU<Matrix> lu(d);
  EXPECT_LE(lu.rank(), 2);
}

TEST(EstimateSigmaWw, CenteringCases) {
  std::mt19937_64 rng(2);
  Equilibrium eq;
  eq.w0 = oracle::random_matrix(2, 3, rng);
  const Matrix delta = oracle::random_matrix(2, 3, rng);
  const TrajectoryRecord rec = two_point(eq.w0, delta, Matrix::Zero(2, 3), Matrix::Zero(2, 3));
  EXPECT_LT(relative_frobenius(estimate_sigma_ww(rec, eq), delta.transpose() * delta), 1e-14);
  EXPECT_LT(relative_frobenius(estimate_sigma_ww(rec, eq, Center::EmpiricalMean), delta.transpose() * delta), 1e-13);

  TrajectoryRecord flat;
  flat.w_snapshots.assign(4, eq.w0);
  flat.sigma_yx_snapshots.assign(4, Matrix::Zero(2, 3));
  EXPECT_TRUE(estimate_sigma_ww(flat, eq).isZero(0.0));

  // A constant offset is removed by the empirical-mean center only.
  TrajectoryRecord shifted;
  shifted.w_snapshots.assign(4, eq.w0 + delta);
  shifted.sigma_yx_snapshots.assign(4, Matrix::Zero(2, 3));
  EXPECT_LT(estimate_sigma_ww(shifted, eq, Center::EmpiricalMean).norm(), 1e-13);
  EXPECT_GT(estimate_sigma_ww(shifted, eq).norm(), 0.1);
}

TEST(FdtCheck, IdentityDissipation) {
  std::mt19937_64 rng(3);
  const Matrix sww = oracle::random_spd(5, rng);
  const FdtReport r = fdt_check(Matrix::Identity(5, 5), sww, sww);
  EXPECT_NEAR(r.proportionality, 1.0, 1e-14);
  EXPECT_LT(r.relative_residual, 1e-14);
  EXPECT_LT(r.q_ratio, 1e-15);
}

TEST(FdtCheck, LyapunovInputsCloseExactly) {
  std::mt19937_64 rng(4);
  for (int t = 0; t < 10; ++t) {
    const Matrix sxx = oracle::random_spd(6, rng);
    const Matrix d = oracle::random_spd(6, rng);
    const StationaryResult st = solve_lyapunov({sxx, d});
    const FdtReport r = fdt_check(sxx, st.sigma, d);
    EXPECT_LT(r.relative_residual, 1e-9);
    EXPECT_NEAR(r.proportionality, 1.0, 1e-9);
    EXPECT_NEAR(r.q_ratio, detailed_balance_check(st, 1.0).ratio, 1e-10);
  }
}

TEST(FdtCheck, SymmetryScaleInvarianceAndErrors) {
  std::mt19937_64 rng(5);
  const Matrix sxx = oracle::random_spd(7, rng);
  const Matrix sww = oracle::random_spd(7, rng);
  const Matrix d = oracle::random_spd(7, rng);
  const FdtReport base = fdt_check(sxx, sww, d);
  EXPECT_EQ(base.lhs, base.lhs.transpose());
  EXPECT_GE(base.relative_residual, 0.0);
  EXPECT_LE(base.relative_residual, 1.0 + 1e-9);
  for (double s : {0.5, 2.0, 10.0}) {
    const FdtReport scaled = fdt_check(sxx, sww, s * d);
    EXPECT_NEAR(scaled.relative_residual, base.relative_residual, 1e-12);
    EXPECT_NEAR(scaled.proportionality * s, base.proportionality, 1e-12 * std::abs(base.proportionality));
  }
  EXPECT_CODE(fdt_check(sxx, sww, Matrix::Zero(7, 7)), ErrorCode::ZeroDhat);
  EXPECT_CODE(fdt_check(sxx, sww, Matrix::Identity(6, 6)), ErrorCode::ShapeMismatch);
  Matrix skew = sww;
  skew(0, 1) += 1.0;
  EXPECT_CODE(fdt_check(sxx, skew, d), ErrorCode::InvalidArgument);
}

TEST(Refined, ContractionReproducesAggregate) {
  const LabeledDataset data = noisy_data(6);
  const MomentPair full = full_moments(data);
  const Equilibrium eq = equilibrium(full, 0.0);
  SgdConfig c;
  c.epsilon = 0.05;
  c.batch_size = 50;
  c.steady_samples = 500;
  c.convergence_threshold = 0.9;
  const TrajectoryRecord rec = run_to_steady_state(data, c, eq);
  const RefinedFdtReport r = refined_fdt_check(rec, full, eq, {{0, 0}, {1, 1}, {2, 2}, {0, 1}});
  ASSERT_EQ(r.per_pair_residual.size(), 4u);
  const auto [d_sum, s_sum] = contract_pairs(r);
  const Matrix d_hat = estimate_diffusion(rec, full);
  const Matrix sww = estimate_sigma_ww(rec, eq);
  EXPECT_LT((d_sum - d_hat).cwiseAbs().maxCoeff(), 1e-12 * max_abs(d_hat));
  EXPECT_LT((s_sum - sww).cwiseAbs().maxCoeff(), 1e-12 * max_abs(sww));
  for (double res : r.per_pair_residual) {
    EXPECT_GE(res, 0.0);
    EXPECT_LE(res, 1.0 + 1e-9);
  }
  EXPECT_CODE(refined_fdt_check(rec, full, eq, {{0, 3}}), ErrorCode::IndexOutOfRange);
}

TEST(Refined, IndependentOutputsDoNotCoFluctuate) {
  // Uncorrelated label noise on a negligible teacher: the off-diagonal
  // blocks vanish up to sampling error.
  const LabeledDataset data = noisy_data(7, 0.0);
  const MomentPair full = full_moments(data);
  const Equilibrium eq = equilibrium(full, 0.0);
  SgdConfig c;
  c.epsilon = 0.05;
  c.batch_size = 50;
  c.steady_samples = 4000;
  c.sample_stride = 10;
  c.convergence_threshold = 0.5;
  c.mode = DynamicsMode::FullXX;
  const TrajectoryRecord rec = run_to_steady_state(data, c, eq);
  const RefinedFdtReport r = refined_fdt_check(rec, full, eq, {{0, 0}, {0, 1}});
  EXPECT_LT(r.d_hat_pairs[1].norm(), 0.1 * r.d_hat_pairs[0].norm());
  EXPECT_LT(r.sigma_pairs[1].norm(), 0.15 * r.sigma_pairs[0].norm());
}

TEST(Accumulator, PersistenceAndEquivalence) {
  const LabeledDataset data = noisy_data(8);
  const MomentPair full = full_moments(data);
  const Equilibrium eq = equilibrium(full, 0.0);
  SgdConfig c;
  c.epsilon = 0.05;
  c.batch_size = 50;
  c.steady_samples = 300;
  c.convergence_threshold = 0.9;
  SteadyStateAccumulator acc(full.sigma_yx, eq.w0, {{0, 1}});
  run_to_steady_state(data, c, eq, full, acc);
  const TrajectoryRecord rec = run_to_steady_state(data, c, eq);
  EXPECT_LT(relative_frobenius(acc.d_hat(), estimate_diffusion(rec, full)), 1e-13);
  EXPECT_LT(relative_frobenius(acc.sigma_ww(Center::W0), estimate_sigma_ww(rec, eq)), 1e-13);

  TempDir dir;
  acc.save(dir / "m.lfdt", {});
  const SteadyStateAccumulator back = SteadyStateAccumulator::load(dir / "m.lfdt");
  EXPECT_EQ(back.samples(), acc.samples());
  EXPECT_EQ(back.d_hat(), acc.d_hat());
  EXPECT_EQ(back.pair_sigma(0), acc.pair_sigma(0));
  EXPECT_EQ(back.trace_series(), acc.trace_series());
}

TEST(Autocorrelation, WhiteAndAr1) {
  std::mt19937_64 rng(9);
  std::normal_distribution<double> normal;
  std::vector<double> white(20000);
  for (auto& v : white) v = normal(rng);
  EXPECT_NEAR(integrated_autocorrelation_time(white), 1.0, 0.15);
  // AR(1) with coefficient φ has τ = (1 + φ)/(1 − φ).
  const double phi = 0.8;
  std::vector<double> ar(200000);
  double x = 0.0;
  for (auto& v : ar) v = x = phi * x + normal(rng);
  EXPECT_NEAR(integrated_autocorrelation_time(ar), (1 + phi) / (1 - phi), 0.8);
  EXPECT_EQ(integrated_autocorrelation_time(std::vector<double>(10, 3.0)), 1.0);
}

TEST(DiffusionScaling, InverseBatchSize) {
  const LabeledDataset data = noisy_data(10);
  const MomentPair full = full_moments(data);
  const Equilibrium eq = equilibrium(full, 0.0);
  std::vector<double> scaled;
  for (std::size_t b : {50u, 100u, 200u}) {
    SgdConfig c;
    c.epsilon = 0.05;
    c.batch_size = b;
    c.steady_samples = 4000;
    c.convergence_threshold = 0.5;
    const TrajectoryRecord rec = run_to_steady_state(data, c, eq);
    // Sampling without replacement from N carries the factor (N − B)/(N − 1).
    const double fpc = (5000.0 - static_cast<double>(b)) / 4999.0;
    scaled.push_back(estimate_diffusion(rec, full).trace() * static_cast<double>(b) / fpc);
  }
  EXPECT_NEAR(scaled[1] / scaled[0], 1.0, 0.06);
  EXPECT_NEAR(scaled[2] / scaled[0], 1.0, 0.06);
}
