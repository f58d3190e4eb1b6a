#include "helpers.hpp"
#include "oracles.hpp"

#include "linfdt/moments.hpp"

#include <cmath>
#include <set>

using namespace linfdt;

namespace {

LabeledDataset toy(Index n, Index d, Index n_out, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  LabeledDataset data;
  data.inputs = oracle::random_matrix(n, d, rng);
  data.outputs = oracle::random_matrix(n, n_out, rng);
  data.n_out = static_cast<std::size_t>(n_out);
  return data;
}

}  // namespace

TEST(FullMoments, SingleSampleOuterProduct) {
  LabeledDataset data;
  data.inputs = Matrix{{1.0, 0.0}};
  data.outputs = Matrix{{1.0}};
  const MomentPair m = full_moments(data);
  EXPECT_EQ(m.sigma_xx, (Matrix{{1.0, 0.0}, {0.0, 0.0}}));
  EXPECT_EQ(m.sigma_yx, (Matrix{{1.0, 0.0}}));
  EXPECT_EQ(m.kind, MomentKind::Full);
}

TEST(FullMoments, ZeroInputsAndEmpty) {
  LabeledDataset data;
  data.inputs = Matrix::Zero(5, 3);
  data.outputs = Matrix::Ones(5, 2);
  const MomentPair m = full_moments(data);
  EXPECT_TRUE(m.sigma_xx.isZero(0.0));
  EXPECT_TRUE(m.sigma_yx.isZero(0.0));
  data.inputs.resize(0, 3);
  data.outputs.resize(0, 2);
  EXPECT_CODE(full_moments(data), ErrorCode::EmptyDataset);
}

TEST(FullMoments, MatchesDoubleLoop) {
  for (Index n : {50, 63, 64, 65, 1000}) {
    const LabeledDataset data = toy(n, 6, 3, static_cast<std::uint64_t>(n));
    Matrix sxx;
    Matrix syx;
    oracle::naive_moments(data.inputs, data.outputs, sxx, syx);
    const MomentPair m = full_moments(data);
    EXPECT_LT(relative_frobenius(m.sigma_xx, sxx), 1e-12) << n;
    EXPECT_LT(relative_frobenius(m.sigma_yx, syx), 1e-12) << n;
    EXPECT_EQ(m.sigma_xx, m.sigma_xx.transpose());
  }
}

TEST(FullMoments, PositiveSemidefinite) {
  const LabeledDataset data = toy(3, 8, 1, 4);  // rank 3 in 8 dimensions
  const MomentPair m = full_moments(data);
  const Eigen::SelfAdjointEigenSolver<Matrix> eig(m.sigma_xx);
  EXPECT_GE(eig.eigenvalues().minCoeff(), -1e-10 * m.sigma_xx.trace());
}

TEST(MiniBatch, FullSizeBatchEqualsFullMoments) {
  const LabeledDataset data = toy(300, 5, 2, 1);
  Rng rng(11);
  const MomentPair mini = mini_batch_moments(data, 300, rng);
  const MomentPair full = full_moments(data);
  EXPECT_EQ(mini.sigma_xx, full.sigma_xx);
  EXPECT_EQ(mini.sigma_yx, full.sigma_yx);
  EXPECT_EQ(mini.kind, MomentKind::Mini);
}

TEST(MiniBatch, SingletonAndBounds) {
  const LabeledDataset data = toy(20, 3, 2, 2);
  const std::vector<std::size_t> idx{7};
  const MomentPair m = batch_moments(data, idx);
  EXPECT_EQ(m.sigma_xx, data.inputs.row(7).transpose() * data.inputs.row(7));
  EXPECT_EQ(m.sigma_yx, data.outputs.row(7).transpose() * data.inputs.row(7));
  Rng rng(0);
  EXPECT_CODE(mini_batch_moments(data, 21, rng), ErrorCode::BatchTooLarge);
  EXPECT_CODE(mini_batch_moments(data, 0, rng), ErrorCode::InvalidArgument);
}

TEST(MiniBatch, IndicesAreDistinctAndRecorded) {
  Rng rng(5);
  for (std::size_t b : {1u, 10u, 60u, 99u, 100u}) {
    const auto idx = draw_batch(100, b, rng);
    EXPECT_EQ(idx.size(), b);
    EXPECT_EQ(std::set<std::size_t>(idx.begin(), idx.end()).size(), b);
    for (auto i : idx) EXPECT_LT(i, 100u);
  }
  const LabeledDataset data = toy(40, 2, 1, 3);
  const MomentPair m = mini_batch_moments(data, 8, rng);
  EXPECT_EQ(m.batch_indices.size(), 8u);
  EXPECT_EQ(m.batch_size, 8u);
}

TEST(MiniBatch, MeanOfDrawsMatchesFullWithinThreeStandardErrors) {
  const LabeledDataset data = toy(500, 3, 2, 8);
  const MomentPair full = full_moments(data);
  Rng rng(21);
  const int draws = 10000;
  Matrix sum = Matrix::Zero(2, 3);
  Matrix sum_sq = Matrix::Zero(2, 3);
  for (int t = 0; t < draws; ++t) {
    const MomentPair m = mini_batch_moments(data, 25, rng);
    sum += m.sigma_yx;
    sum_sq += m.sigma_yx.cwiseProduct(m.sigma_yx);
  }
  const Matrix mean = sum / draws;
  const Matrix var = sum_sq / draws - mean.cwiseProduct(mean);
  for (Index i = 0; i < mean.size(); ++i) {
    const double se = std::sqrt(var.data()[i] / draws);
    EXPECT_LT(std::abs(mean.data()[i] - full.sigma_yx.data()[i]), 3.0 * se);
  }
}

TEST(Equilibrium, IdentityInverse) {
  MomentPair m;
  m.sigma_xx = Matrix::Identity(3, 3);
  m.sigma_yx = Matrix{{1.0, 2.0, 3.0}, {-1.0, 0.5, 4.0}};
  const Equilibrium eq = equilibrium(m, 0.0);
  EXPECT_LT(relative_frobenius(eq.w0, m.sigma_yx), 1e-15);
  EXPECT_NEAR(eq.condition_estimate, 1.0, 1e-12);
}

TEST(Equilibrium, ResidualAndRidge) {
  const LabeledDataset data = toy(200, 6, 3, 9);
  const MomentPair full = full_moments(data);
  const Equilibrium eq = equilibrium(full, 0.0);
  EXPECT_LT(relative_frobenius(eq.w0 * full.sigma_xx, full.sigma_yx), 1e-8);
  const double lam = default_ridge(full.sigma_xx);
  EXPECT_DOUBLE_EQ(lam, 1e-6 * full.sigma_xx.trace() / 6.0);
  const Equilibrium ridged = equilibrium(full, lam);
  Matrix reg = full.sigma_xx;
  reg.diagonal().array() += lam;
  EXPECT_LT(relative_frobenius(ridged.w0 * reg, full.sigma_yx), 1e-10);
}

TEST(Equilibrium, SingularAndWrongKind) {
  MomentPair m;
  m.sigma_xx = Matrix{{1.0, 0.0}, {0.0, 0.0}};
  m.sigma_yx = Matrix{{1.0, 0.0}};
  EXPECT_CODE(equilibrium(m, 0.0), ErrorCode::SingularAfterRidge);
  EXPECT_NO_THROW(equilibrium(m, 1e-3));
  m.kind = MomentKind::Mini;
  EXPECT_CODE(equilibrium(m, 1e-3), ErrorCode::InvalidArgument);
}
