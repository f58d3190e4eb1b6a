#include "linfdt/moments.hpp"

#include "linfdt/error.hpp"

#include <algorithm>
#include <numeric>

namespace linfdt {

namespace {

constexpr std::size_t kLeafSize = 64;

struct PartialSums {
  Matrix xx;
  Matrix yx;
};

// Pairwise (tree) summation over the index list; leaves use a blocked GEMM.
PartialSums accumulate(const LabeledDataset& data, std::span<const std::size_t> idx) {
  if (idx.size() <= kLeafSize) {
    const auto k = static_cast<Index>(idx.size());
    Matrix xb(k, data.inputs.cols());
    Matrix yb(k, data.outputs.cols());
    for (Index r = 0; r < k; ++r) {
      xb.row(r) = data.inputs.row(static_cast<Index>(idx[static_cast<std::size_t>(r)]));
      yb.row(r) = data.outputs.row(static_cast<Index>(idx[static_cast<std::size_t>(r)]));
    }
    return {xb.transpose() * xb, yb.transpose() * xb};
  }
  const std::size_t half = idx.size() / 2;
  PartialSums left = accumulate(data, idx.first(half));
  const PartialSums right = accumulate(data, idx.subspan(half));
  left.xx += right.xx;
  left.yx += right.yx;
  return left;
}

MomentPair finish(PartialSums sums, std::size_t count, MomentKind kind) {
  MomentPair m;
  const double inv = 1.0 / static_cast<double>(count);
  m.sigma_xx = symmetric_part(sums.xx) * inv;
  m.sigma_yx = sums.yx * inv;
  m.batch_size = count;
  m.kind = kind;
  return m;
}

}  // namespace

MomentPair full_moments(const LabeledDataset& data) {
  if (data.size() == 0) throw Error(ErrorCode::EmptyDataset, "dataset has no samples");
  std::vector<std::size_t> idx(data.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return finish(accumulate(data, idx), idx.size(), MomentKind::Full);
}

MomentPair batch_moments(const LabeledDataset& data, std::span<const std::size_t> indices) {
  if (indices.empty()) throw Error(ErrorCode::EmptyDataset, "empty batch");
  for (const auto i : indices) {
    if (i >= data.size()) throw Error(ErrorCode::IndexOutOfRange, "batch index " + std::to_string(i));
  }
  MomentPair m = finish(accumulate(data, indices), indices.size(), MomentKind::Mini);
  m.batch_indices.assign(indices.begin(), indices.end());
  return m;
}

std::vector<std::size_t> draw_batch(std::size_t n, std::size_t batch_size, Rng& rng) {
  if (batch_size == 0) throw Error(ErrorCode::InvalidArgument, "batch_size must be at least 1");
  if (batch_size > n) {
    throw Error(ErrorCode::BatchTooLarge, "batch_size " + std::to_string(batch_size) + " exceeds N = " + std::to_string(n));
  }
  std::vector<std::size_t> out;
  out.reserve(batch_size);
  if (batch_size * 4 > n) {
    // Dense regime: partial Fisher-Yates.
    std::vector<std::size_t> pool(n);
    std::iota(pool.begin(), pool.end(), std::size_t{0});
    for (std::size_t i = 0; i < batch_size; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, n - 1);
      std::swap(pool[i], pool[pick(rng)]);
    }
    out.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(batch_size));
  } else {
    // Sparse regime: rejection of duplicates.
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    while (out.size() < batch_size) {
      const std::size_t c = pick(rng);
      if (std::find(out.begin(), out.end(), c) == out.end()) out.push_back(c);
    }
  }
  // Sorted order makes batch_size == N reproduce the full-batch summation order.
  std::sort(out.begin(), out.end());
  return out;
}

MomentPair mini_batch_moments(const LabeledDataset& data, std::size_t batch_size, Rng& rng) {
  if (data.size() == 0) throw Error(ErrorCode::EmptyDataset, "dataset has no samples");
  const auto idx = draw_batch(data.size(), batch_size, rng);
  return batch_moments(data, idx);
}

double default_ridge(const Matrix& sigma_xx) {
  if (sigma_xx.rows() == 0) return 0.0;
  return 1e-6 * sigma_xx.trace() / static_cast<double>(sigma_xx.rows());
}

Equilibrium equilibrium(const MomentPair& full, double ridge_lambda) {
  if (full.kind != MomentKind::Full) throw Error(ErrorCode::InvalidArgument, "equilibrium needs full-batch moments");
  if (ridge_lambda < 0.0) throw Error(ErrorCode::InvalidArgument, "ridge_lambda must be >= 0");
  const Index d = full.sigma_xx.rows();
  if (full.sigma_yx.cols() != d) throw Error(ErrorCode::ShapeMismatch, "sigma_yx columns must equal d");

  Matrix g = full.sigma_xx;
  g.diagonal().array() += ridge_lambda;

  const Eigen::SelfAdjointEigenSolver<Matrix> eig(g, Eigen::EigenvaluesOnly);
  const double lo = eig.eigenvalues().minCoeff();
  const double hi = eig.eigenvalues().maxCoeff();
  const double floor = static_cast<double>(d) * std::numeric_limits<double>::epsilon() * std::max(hi, 0.0);
  if (!(hi > 0.0) || lo <= floor) {
    throw Error(ErrorCode::SingularAfterRidge,
                "smallest eigenvalue of sigma_xx + lambda*I is " + std::to_string(lo) + " (lambda = " +
                    std::to_string(ridge_lambda) + ")");
  }
  const Eigen::LLT<Matrix> llt(g);
  if (llt.info() != Eigen::Success) throw Error(ErrorCode::SingularAfterRidge, "Cholesky factorization failed");

  Equilibrium eq;
  eq.w0 = llt.solve(full.sigma_yx.transpose()).transpose();
  eq.ridge_lambda = ridge_lambda;
  eq.condition_estimate = hi / lo;
  if (!all_finite(eq.w0)) throw Error(ErrorCode::SingularAfterRidge, "non-finite equilibrium");
  return eq;
}

}  // namespace linfdt
