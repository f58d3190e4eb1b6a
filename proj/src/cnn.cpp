#include "linfdt/cnn.hpp"

#include "linfdt/container.hpp"
#include "linfdt/error.hpp"

#include <cmath>
#include <random>

namespace linfdt {

namespace {

std::size_t output_side(std::size_t a, std::size_t c) {
  if (c == 0) throw Error(ErrorCode::InvalidArgument, "filter side must be >= 1");
  if (c > a) throw Error(ErrorCode::FilterTooLarge, "filter side " + std::to_string(c) + " exceeds input side " + std::to_string(a));
  return a - c + 1;
}

std::size_t side_of(const LabeledDataset& data) {
  if (data.side_length == 0 || data.side_length * data.side_length != data.dim()) {
    throw Error(ErrorCode::ShapeMismatch, "dataset inputs are not square images");
  }
  return data.side_length;
}

// ½ (⟨|y|²⟩ − 2⟨W, Σ_yx Kᵀ⟩ + tr(WK Σ_xx (WK)ᵀ)).
double error_from_moments(const Matrix& w, const Matrix& k, const MomentPair& raw, double s_yy) {
  const Matrix wk = w * k;
  return 0.5 * (s_yy - 2.0 * frobenius_dot(wk, raw.sigma_yx) + frobenius_dot(wk * raw.sigma_xx, wk));
}

void filter_rows(const Matrix& x, const ConvFilter& filter, std::size_t a, Matrix& out) {
  const auto c = static_cast<Index>(filter.side());
  const auto l = static_cast<Index>(output_side(a, filter.side()));
  const auto ai = static_cast<Index>(a);
  out.resize(x.rows(), l * l);
  for (Index n = 0; n < x.rows(); ++n) {
    for (Index r = 0; r < l; ++r) {
      for (Index s = 0; s < l; ++s) {
        double acc = 0.0;
        for (Index u = 0; u < c; ++u) {
          for (Index v = 0; v < c; ++v) acc += filter.c(u, v) * x(n, (r + u) * ai + s + v);
        }
        out(n, r * l + s) = acc;
      }
    }
  }
}

}  // namespace

ConvFilter ConvFilter::from_flat(const Vector& v, std::size_t side) {
  if (static_cast<std::size_t>(v.size()) != side * side) throw Error(ErrorCode::ShapeMismatch, "filter vector length");
  ConvFilter f;
  f.c = Eigen::Map<const Matrix>(v.data(), static_cast<Index>(side), static_cast<Index>(side));
  return f;
}

ConvFilter ConvFilter::identity() {
  ConvFilter f;
  f.c = Matrix::Ones(1, 1);
  return f;
}

Matrix conv_forward(const ConvFilter& filter, const Matrix& x) {
  if (x.rows() != x.cols()) throw Error(ErrorCode::ShapeMismatch, "input grid must be square");
  const auto a = static_cast<std::size_t>(x.rows());
  const auto l = static_cast<Index>(output_side(a, filter.side()));
  const Matrix flat = Eigen::Map<const Matrix>(x.data(), 1, x.size());
  Matrix out;
  filter_rows(flat, filter, a, out);
  return Eigen::Map<const Matrix>(out.data(), l, l);
}

Matrix filter_operator(const ConvFilter& filter, std::size_t a) {
  const auto c = static_cast<Index>(filter.side());
  const auto l = static_cast<Index>(output_side(a, filter.side()));
  const auto ai = static_cast<Index>(a);
  Matrix k = Matrix::Zero(l * l, ai * ai);
  for (Index r = 0; r < l; ++r) {
    for (Index s = 0; s < l; ++s) {
      for (Index u = 0; u < c; ++u) {
        for (Index v = 0; v < c; ++v) k(r * l + s, (r + u) * ai + s + v) = filter.c(u, v);
      }
    }
  }
  return k;
}

LabeledDataset filter_dataset(const LabeledDataset& data, const ConvFilter& filter) {
  const std::size_t a = side_of(data);
  LabeledDataset out;
  filter_rows(data.inputs, filter, a, out.inputs);
  out.outputs = data.outputs;
  out.side_length = output_side(a, filter.side());
  out.n_out = data.n_out;
  out.source = data.source;
  out.one_hot = data.one_hot;
  out.preprocessing = data.preprocessing;
  out.preprocessing["filter_side"] = filter.side();
  return out;
}

FilterGradientTerms compute_p_q(const Matrix& w, std::size_t c_side, const MomentPair& raw, std::size_t a) {
  const auto c = static_cast<Index>(c_side);
  const auto l = static_cast<Index>(output_side(a, c_side));
  const auto ai = static_cast<Index>(a);
  if (raw.sigma_xx.rows() != ai * ai || raw.sigma_xx.cols() != ai * ai || raw.sigma_yx.cols() != ai * ai ||
      w.cols() != l * l || w.rows() != raw.sigma_yx.rows()) {
    throw Error(ErrorCode::ShapeMismatch, "W, Σ_xx, Σ_yx and filter side are inconsistent");
  }
  const Matrix g = w.transpose() * w;
  const auto pix = [&](Index j, Index i) { return (j / l + i / c) * ai + (j % l + i % c); };

  FilterGradientTerms t;
  t.p = Matrix::Zero(c * c, c * c);
  t.q_vec = Vector::Zero(c * c);
  for (Index i = 0; i < c * c; ++i) {
    for (Index li = i; li < c * c; ++li) {
      double acc = 0.0;
      for (Index j = 0; j < l * l; ++j) {
        const Index col = pix(j, i);
        for (Index k = 0; k < l * l; ++k) acc += g(j, k) * raw.sigma_xx(pix(k, li), col);
      }
      t.p(i, li) = acc;
      t.p(li, i) = acc;
    }
    double q = 0.0;
    for (Index k = 0; k < w.rows(); ++k) {
      for (Index j = 0; j < l * l; ++j) q += w(k, j) * raw.sigma_yx(k, pix(j, i));
    }
    t.q_vec(i) = q;
  }
  return t;
}

MomentPair filtered_moments(const ConvFilter& filter, const MomentPair& raw, std::size_t a) {
  const Matrix k = filter_operator(filter, a);
  if (raw.sigma_xx.rows() != k.cols() || raw.sigma_yx.cols() != k.cols()) {
    throw Error(ErrorCode::ShapeMismatch, "raw moments do not match a = " + std::to_string(a));
  }
  MomentPair out;
  out.sigma_xx = symmetric_part(k * raw.sigma_xx * k.transpose());
  out.sigma_yx = raw.sigma_yx * k.transpose();
  out.batch_size = raw.batch_size;
  out.kind = raw.kind;
  out.batch_indices = raw.batch_indices;
  return out;
}

double error_function(const LabeledDataset& data, const ConvFilter& filter, const Matrix& w) {
  if (data.size() == 0) throw Error(ErrorCode::EmptyDataset, "no samples");
  Matrix x;
  filter_rows(data.inputs, filter, side_of(data), x);
  if (w.cols() != x.cols() || w.rows() != data.outputs.cols()) throw Error(ErrorCode::ShapeMismatch, "W shape");
  const Matrix r = data.outputs - x * w.transpose();
  return 0.5 * r.squaredNorm() / static_cast<double>(data.size());
}

ConvFilter initial_filter(std::size_t c_side, double noise, std::uint64_t seed) {
  if (c_side == 0) throw Error(ErrorCode::InvalidArgument, "filter side must be >= 1");
  ConvFilter f;
  const auto c = static_cast<Index>(c_side);
  f.c = Matrix::Zero(c, c);
  f.c(c / 2, c / 2) = 1.0;
  if (noise > 0.0) {
    Rng rng(seed);
    std::uniform_real_distribution<double> u(-noise, noise);
    for (Index i = 0; i < f.c.size(); ++i) f.c.data()[i] += u(rng);
  }
  return f;
}

CnnTrajectory joint_descent(const LabeledDataset& data, const CnnConfig& config) {
  validate(config.sgd);
  if (!(config.filter_epsilon > 0.0)) throw Error(ErrorCode::InvalidArgument, "filter epsilon must be > 0");
  if (config.gradient_tolerance && !config.full_batch) {
    throw Error(ErrorCode::InvalidArgument, "gradient tolerance needs full-batch mode");
  }
  const std::size_t a = side_of(data);
  const std::size_t l = output_side(a, config.c_side);
  if (config.sgd.batch_size > data.size()) throw Error(ErrorCode::BatchTooLarge, "batch_size exceeds dataset size");

  CnnState st;
  st.filter = config.initial_filter ? *config.initial_filter
                                    : initial_filter(config.c_side, config.init_noise, config.sgd.seed ^ 0x6a09e667f3bcc909ULL);
  if (st.filter.side() != config.c_side) throw Error(ErrorCode::ShapeMismatch, "initial filter side");
  st.w = Matrix::Zero(static_cast<Index>(data.outputs.cols()), static_cast<Index>(l * l));

  const double eps = config.sgd.epsilon;
  const double eps_c = config.filter_epsilon;
  const double decay = config.ridge_lambda;

  MomentPair raw;
  double s_yy = 0.0;
  const bool need_moments = config.full_batch || config.record_interval > 0;
  if (need_moments) {
    raw = full_moments(data);
    s_yy = data.outputs.squaredNorm() / static_cast<double>(data.size());
  }

  CnnTrajectory out;
  const auto record = [&](bool with_error) {
    if (with_error) out.error.push_back(error_from_moments(st.w, filter_operator(st.filter, a), raw, s_yy));
    if (config.record_interval > 0 && st.step % config.record_interval == 0) out.states.push_back(st);
  };

  Rng rng(config.sgd.seed);
  Matrix xb;
  Matrix yb;
  Matrix fx;
  for (std::size_t n = 0; n < config.sgd.max_steps; ++n) {
    if (config.full_batch) {
      const MomentPair fm = filtered_moments(st.filter, raw, a);
      Matrix drift = st.w * fm.sigma_xx;
      if (decay != 0.0) drift += decay * st.w;
      st.w += eps * (fm.sigma_yx - drift);
      if (!config.freeze_filter) {
        const FilterGradientTerms t = compute_p_q(st.w, config.c_side, raw, a);
        const Vector c = st.filter.flat();
        st.filter = ConvFilter::from_flat(c + eps_c * (t.q_vec - t.p * c), config.c_side);
      }
    } else {
      const auto idx = draw_batch(data.size(), config.sgd.batch_size, rng);
      xb.resize(static_cast<Index>(idx.size()), data.inputs.cols());
      yb.resize(static_cast<Index>(idx.size()), data.outputs.cols());
      for (std::size_t r = 0; r < idx.size(); ++r) {
        xb.row(static_cast<Index>(r)) = data.inputs.row(static_cast<Index>(idx[r]));
        yb.row(static_cast<Index>(r)) = data.outputs.row(static_cast<Index>(idx[r]));
      }
      filter_rows(xb, st.filter, a, fx);
      batch_update(st.w, fx, yb, nullptr, eps, decay);
      if (!config.freeze_filter) {
        // −∂E_batch/∂C_i = B⁻¹ Σ_b Σ_j [Wᵀ(y_b − W X_b)]_j x_b[j + i]
        const Matrix g = (yb - fx * st.w.transpose()) * st.w;
        const auto c = static_cast<Index>(config.c_side);
        const auto li = static_cast<Index>(l);
        const auto ai = static_cast<Index>(a);
        Vector step = Vector::Zero(c * c);
        for (Index b = 0; b < xb.rows(); ++b) {
          for (Index i = 0; i < c * c; ++i) {
            double acc = 0.0;
            for (Index j = 0; j < li * li; ++j) acc += g(b, j) * xb(b, (j / li + i / c) * ai + j % li + i % c);
            step(i) += acc;
          }
        }
        step /= static_cast<double>(xb.rows());
        st.filter = ConvFilter::from_flat(st.filter.flat() + eps_c * step, config.c_side);
      }
    }
    ++st.step;
    if (!all_finite(st.w) || !all_finite(st.filter.c)) {
      throw Error(ErrorCode::NonFiniteUpdate, "non-finite state at step " + std::to_string(st.step));
    }
    const bool at_record = config.record_interval > 0 && st.step % config.record_interval == 0;
    if (config.full_batch || at_record) record(true);

    if (config.gradient_tolerance) {
      const MomentPair fm = filtered_moments(st.filter, raw, a);
      const double gw = (st.w * fm.sigma_xx + decay * st.w - fm.sigma_yx).norm() / fm.sigma_yx.norm();
      double gc = 0.0;
      if (!config.freeze_filter) {
        const FilterGradientTerms t = compute_p_q(st.w, config.c_side, raw, a);
        gc = (t.p * st.filter.flat() - t.q_vec).norm() / t.q_vec.norm();
      }
      if (gw < *config.gradient_tolerance && gc < *config.gradient_tolerance) {
        out.converged_at = st.step;
        break;
      }
    }
  }
  if (config.gradient_tolerance && !out.converged_at) {
    throw Error(ErrorCode::NoConvergence, "joint descent did not reach gradient tolerance in " +
                                              std::to_string(config.sgd.max_steps) + " steps");
  }
  out.final_state = st;
  return out;
}

FilteredFdtResult fdt_check_filtered(const LabeledDataset& data, const ConvFilter& filter, const SgdConfig& config,
                                     std::optional<double> ridge) {
  const LabeledDataset filtered = filter_dataset(data, filter);
  const MomentPair full = full_moments(filtered);
  const Eigen::SelfAdjointEigenSolver<Matrix> eig(full.sigma_xx, Eigen::EigenvaluesOnly);
  const double top = eig.eigenvalues().maxCoeff();
  FilteredFdtResult out;
  out.ridge_fallback = !(eig.eigenvalues().minCoeff() > 1e-10 * top);
  double lambda = ridge.value_or(default_ridge(full.sigma_xx));
  if (out.ridge_fallback && lambda == 0.0) lambda = default_ridge(full.sigma_xx);
  out.pipeline = run_fdt_pipeline(filtered, config, lambda);
  return out;
}

void save_cnn_state(const std::filesystem::path& path, const CnnState& state, const nlohmann::json& extra_meta) {
  Container c;
  c.meta = extra_meta;
  c.meta["kind"] = "cnn_state";
  c.meta["step"] = state.step;
  c.meta["c_side"] = state.filter.side();
  c.matrices.emplace_back("filter", state.filter.c);
  c.matrices.emplace_back("w", state.w);
  write_container(path, c);
}

CnnState load_cnn_state(const std::filesystem::path& path, nlohmann::json* meta_out) {
  const Container c = read_container(path);
  if (c.meta.value("kind", "") != "cnn_state") throw Error(ErrorCode::BadContainer, path.string() + " is not a CNN state");
  CnnState st;
  st.filter.c = c.matrix("filter");
  st.w = c.matrix("w");
  st.step = c.meta.at("step").get<std::size_t>();
  if (meta_out != nullptr) *meta_out = c.meta;
  return st;
}

}  // namespace linfdt
