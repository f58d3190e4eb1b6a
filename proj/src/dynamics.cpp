#include "linfdt/dynamics.hpp"

#include "linfdt/container.hpp"
#include "linfdt/error.hpp"

#include <cmath>
#include <sstream>

namespace linfdt {

namespace {

void check_shapes(const Matrix& w, const MomentPair& m) {
  if (m.sigma_xx.rows() != m.sigma_xx.cols() || w.cols() != m.sigma_xx.rows() || m.sigma_yx.rows() != w.rows() ||
      m.sigma_yx.cols() != w.cols()) {
    throw Error(ErrorCode::ShapeMismatch, "w is " + std::to_string(w.rows()) + "x" + std::to_string(w.cols()) +
                                              ", sigma_xx " + std::to_string(m.sigma_xx.rows()) + "x" +
                                              std::to_string(m.sigma_xx.cols()) + ", sigma_yx " +
                                              std::to_string(m.sigma_yx.rows()) + "x" + std::to_string(m.sigma_yx.cols()));
  }
}

std::string rng_to_string(const Rng& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

void rng_from_string(Rng& rng, const std::string& s) {
  std::istringstream is(s);
  is >> rng;
  if (!is) throw Error(ErrorCode::BadContainer, "cannot restore generator state");
}

void gather(const LabeledDataset& data, const std::vector<std::size_t>& idx, Matrix& xb, Matrix& yb) {
  const auto b = static_cast<Index>(idx.size());
  xb.resize(b, data.inputs.cols());
  yb.resize(b, data.outputs.cols());
  for (Index r = 0; r < b; ++r) {
    const auto src = static_cast<Index>(idx[static_cast<std::size_t>(r)]);
    xb.row(r) = data.inputs.row(src);
    yb.row(r) = data.outputs.row(src);
  }
}

nlohmann::json curve_to_json(const std::vector<std::pair<std::size_t, double>>& curve) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& [step, c] : curve) out.push_back({step, c});
  return out;
}

std::vector<std::pair<std::size_t, double>> curve_from_json(const nlohmann::json& j) {
  std::vector<std::pair<std::size_t, double>> out;
  for (const auto& e : j) out.emplace_back(e.at(0).get<std::size_t>(), e.at(1).get<double>());
  return out;
}

Matrix stack(const std::vector<Matrix>& blocks, Index rows, Index cols) {
  Matrix out(rows * static_cast<Index>(blocks.size()), cols);
  for (std::size_t i = 0; i < blocks.size(); ++i) out.middleRows(static_cast<Index>(i) * rows, rows) = blocks[i];
  return out;
}

std::vector<Matrix> unstack(const Matrix& m, Index rows) {
  std::vector<Matrix> out;
  if (rows == 0) return out;
  const Index count = m.rows() / rows;
  out.reserve(static_cast<std::size_t>(count));
  for (Index i = 0; i < count; ++i) out.emplace_back(m.middleRows(i * rows, rows));
  return out;
}

// Σ_WW accumulator for compare_modes.
class CenteredSink final : public SnapshotSink {
 public:
  explicit CenteredSink(const Matrix& w0) : w0_(w0), acc_(Matrix::Zero(w0.cols(), w0.cols())) {}
  void consume(const Snapshot& s) override {
    const Matrix dw = s.w - w0_;
    acc_.noalias() += dw.transpose() * dw;
    ++count_;
  }
  Matrix mean() const { return count_ ? Matrix(acc_ / static_cast<double>(count_)) : acc_; }

 private:
  const Matrix& w0_;
  Matrix acc_;
  std::size_t count_ = 0;
};

}  // namespace

std::string_view to_string(DynamicsMode mode) {
  return mode == DynamicsMode::FullXX ? "full-xx" : "mini-both";
}

DynamicsMode dynamics_mode_from_string(std::string_view name) {
  if (name == "full-xx" || name == "full_xx" || name == "FULL_XX") return DynamicsMode::FullXX;
  if (name == "mini-both" || name == "mini_both" || name == "MINI_BOTH") return DynamicsMode::MiniBoth;
  throw Error(ErrorCode::InvalidArgument, "unknown dynamics mode '" + std::string(name) + "'");
}

nlohmann::json to_json(const SgdConfig& c) {
  return {{"epsilon", c.epsilon},
          {"batch_size", c.batch_size},
          {"mode", to_string(c.mode)},
          {"convergence_threshold", c.convergence_threshold},
          {"max_steps", c.max_steps},
          {"steady_samples", c.steady_samples},
          {"sample_stride", c.sample_stride},
          {"seed", c.seed},
          {"record_sigma_xx", c.record_sigma_xx},
          {"curve_interval", c.curve_interval}};
}

SgdConfig sgd_config_from_json(const nlohmann::json& j) {
  SgdConfig c;
  c.epsilon = j.value("epsilon", c.epsilon);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.mode = dynamics_mode_from_string(j.value("mode", std::string(to_string(c.mode))));
  c.convergence_threshold = j.value("convergence_threshold", c.convergence_threshold);
  c.max_steps = j.value("max_steps", c.max_steps);
  c.steady_samples = j.value("steady_samples", c.steady_samples);
  c.sample_stride = j.value("sample_stride", c.sample_stride);
  c.seed = j.value("seed", c.seed);
  c.record_sigma_xx = j.value("record_sigma_xx", c.record_sigma_xx);
  c.curve_interval = j.value("curve_interval", c.curve_interval);
  return c;
}

void validate(const SgdConfig& c) {
  if (!(c.epsilon > 0.0) || !std::isfinite(c.epsilon)) throw Error(ErrorCode::InvalidArgument, "epsilon must be > 0");
  if (c.batch_size == 0) throw Error(ErrorCode::InvalidArgument, "batch_size must be >= 1");
  if (!(c.convergence_threshold > 0.0 && c.convergence_threshold <= 1.0)) {
    throw Error(ErrorCode::InvalidArgument, "convergence_threshold must lie in (0, 1]");
  }
  if (c.steady_samples == 0) throw Error(ErrorCode::InvalidArgument, "steady_samples must be >= 1");
  if (c.sample_stride == 0) throw Error(ErrorCode::InvalidArgument, "sample_stride must be >= 1");
  if (c.curve_interval == 0) throw Error(ErrorCode::InvalidArgument, "curve_interval must be >= 1");
}

double stability_margin(const SgdConfig& config, const Matrix& sigma_xx, double ridge) {
  const Eigen::SelfAdjointEigenSolver<Matrix> eig(sigma_xx, Eigen::EigenvaluesOnly);
  return config.epsilon * (eig.eigenvalues().maxCoeff() + ridge);
}

LearningState sgd_step(const LearningState& state, const MomentPair& moments, double epsilon) {
  check_shapes(state.w, moments);
  LearningState next;
  next.w = state.w - epsilon * (state.w * moments.sigma_xx) + epsilon * moments.sigma_yx;
  if (!all_finite(next.w)) throw Error(ErrorCode::NonFiniteUpdate, "step " + std::to_string(state.step + 1));
  next.step = state.step + 1;
  next.cos_theta = state.cos_theta;
  return next;
}

double cosine_to_equilibrium(const Matrix& w, const Matrix& w0) {
  if (w.rows() != w0.rows() || w.cols() != w0.cols()) throw Error(ErrorCode::ShapeMismatch, "w and w0 differ in shape");
  const double nw = w.norm();
  const double n0 = w0.norm();
  if (nw == 0.0 || n0 == 0.0) throw Error(ErrorCode::ZeroNorm, "cosine of a zero matrix");
  return std::clamp(frobenius_dot(w, w0) / (nw * n0), -1.0, 1.0);
}

void RecordingSink::consume(const Snapshot& s) {
  record_.w_snapshots.push_back(s.w);
  record_.sigma_yx_snapshots.push_back(s.sigma_yx);
  if (s.sigma_xx != nullptr) {
    if (!record_.sigma_xx_snapshots) record_.sigma_xx_snapshots.emplace();
    record_.sigma_xx_snapshots->push_back(*s.sigma_xx);
  }
}

Matrix batch_update(Matrix& w, const Matrix& xb, const Matrix& yb, const Matrix* full_dissipation, double epsilon,
                    double decay) {
  const double inv = 1.0 / static_cast<double>(xb.rows());
  Matrix syx = (yb.transpose() * xb) * inv;
  Matrix drift;
  if (full_dissipation != nullptr) {
    drift.noalias() = w * (*full_dissipation);
  } else {
    const Matrix proj = w * xb.transpose();
    drift.noalias() = (proj * xb) * inv;
    if (decay != 0.0) drift += decay * w;
  }
  w += epsilon * (syx - drift);
  return syx;
}

RunSummary run_to_steady_state(const LabeledDataset& data, const SgdConfig& config, const Equilibrium& equilibrium,
                               const MomentPair& full, SnapshotSink& sink, const RunOptions& options) {
  validate(config);
  const Index d = static_cast<Index>(data.dim());
  const Index n_out = data.outputs.cols();
  if (equilibrium.w0.rows() != n_out || equilibrium.w0.cols() != d) {
    throw Error(ErrorCode::ShapeMismatch, "equilibrium does not match the dataset");
  }
  if (config.batch_size > data.size()) {
    throw Error(ErrorCode::BatchTooLarge, "batch_size exceeds dataset size");
  }
  const double decay = equilibrium.ridge_lambda;
  const double w0_norm = equilibrium.w0.norm();
  if (w0_norm == 0.0) throw Error(ErrorCode::ZeroNorm, "equilibrium W0 is zero");

  Matrix dissipation;
  if (config.mode == DynamicsMode::FullXX) {
    if (full.sigma_xx.rows() != d) throw Error(ErrorCode::ShapeMismatch, "full moments do not match the dataset");
    dissipation = full.sigma_xx;
    dissipation.diagonal().array() += decay;
  }
  const Matrix* full_dissipation = config.mode == DynamicsMode::FullXX ? &dissipation : nullptr;
  const bool record_xx = config.record_sigma_xx && config.mode == DynamicsMode::MiniBoth;

  Rng rng(config.seed);
  RunSummary out;
  LearningState& st = out.final_state;
  st.w = Matrix::Zero(n_out, d);
  if (options.resume != nullptr) {
    const RunCheckpoint& cp = *options.resume;
    if (cp.w.rows() != n_out || cp.w.cols() != d) throw Error(ErrorCode::ShapeMismatch, "checkpoint shape mismatch");
    st.w = cp.w;
    st.step = cp.step;
    rng_from_string(rng, cp.rng_state);
    out.converged_at = cp.converged_at;
    out.samples_taken = cp.samples_taken;
    out.convergence_curve = cp.convergence_curve;
  }
  if (st.w.norm() > 0.0) st.cos_theta = cosine_to_equilibrium(st.w, equilibrium.w0);

  Matrix xb;
  Matrix yb;
  std::size_t executed = 0;
  while (out.samples_taken < config.steady_samples) {
    if (options.step_budget && executed >= *options.step_budget) break;
    if (!out.converged_at && st.step >= config.max_steps) {
      throw Error(ErrorCode::NoConvergence, "cos theta = " + std::to_string(st.cos_theta) + " after " +
                                                std::to_string(st.step) + " steps (threshold " +
                                                std::to_string(config.convergence_threshold) + ")");
    }
    const auto idx = draw_batch(data.size(), config.batch_size, rng);
    gather(data, idx, xb, yb);
    const Matrix syx = batch_update(st.w, xb, yb, full_dissipation, config.epsilon, decay);
    ++st.step;
    ++executed;
    if (!all_finite(st.w)) throw Error(ErrorCode::NonFiniteUpdate, "non-finite W at step " + std::to_string(st.step));

    const double nw = st.w.norm();
    st.cos_theta = nw > 0.0 ? std::clamp(frobenius_dot(st.w, equilibrium.w0) / (nw * w0_norm), -1.0, 1.0) : 0.0;

    if (!out.converged_at) {
      if (st.step % config.curve_interval == 0) out.convergence_curve.emplace_back(st.step, st.cos_theta);
      if (st.cos_theta >= config.convergence_threshold) {
        out.converged_at = st.step;
        out.convergence_curve.emplace_back(st.step, st.cos_theta);
      }
      continue;
    }
    if ((st.step - *out.converged_at) % config.sample_stride != 0) continue;

    Matrix sxx;
    if (record_xx) sxx = (xb.transpose() * xb) / static_cast<double>(xb.rows());
    sink.consume(Snapshot{st.w, syx, record_xx ? &sxx : nullptr, st.step});
    ++out.samples_taken;
  }
  out.complete = out.samples_taken >= config.steady_samples;

  out.checkpoint.w = st.w;
  out.checkpoint.step = st.step;
  out.checkpoint.rng_state = rng_to_string(rng);
  out.checkpoint.converged_at = out.converged_at;
  out.checkpoint.samples_taken = out.samples_taken;
  out.checkpoint.convergence_curve = out.convergence_curve;
  return out;
}

TrajectoryRecord run_to_steady_state(const LabeledDataset& data, const SgdConfig& config,
                                     const Equilibrium& equilibrium) {
  MomentPair full;
  if (config.mode == DynamicsMode::FullXX) full = full_moments(data);
  RecordingSink sink;
  const RunSummary summary = run_to_steady_state(data, config, equilibrium, full, sink);
  TrajectoryRecord rec = sink.take();
  rec.config = config;
  rec.converged_at = summary.converged_at.value_or(0);
  rec.convergence_curve = summary.convergence_curve;
  return rec;
}

ModeComparison compare_modes(const LabeledDataset& data, const SgdConfig& config, std::optional<double> ridge) {
  const MomentPair full = full_moments(data);
  const Equilibrium eq = equilibrium(full, ridge.value_or(default_ridge(full.sigma_xx)));
  ModeComparison out;

  SgdConfig c = config;
  c.mode = DynamicsMode::FullXX;
  CenteredSink full_sink(eq.w0);
  out.converged_full_xx = run_to_steady_state(data, c, eq, full, full_sink).converged_at.value_or(0);
  out.sigma_ww_full_xx = full_sink.mean();

  c.mode = DynamicsMode::MiniBoth;
  CenteredSink mini_sink(eq.w0);
  out.converged_mini_both = run_to_steady_state(data, c, eq, full, mini_sink).converged_at.value_or(0);
  out.sigma_ww_mini_both = mini_sink.mean();

  const double denom = out.sigma_ww_full_xx.norm();
  const double diff = (out.sigma_ww_full_xx - out.sigma_ww_mini_both).norm();
  // Deterministic runs leave only round-off in both estimates.
  const double negligible = 1e-24 * eq.w0.squaredNorm();
  out.relative_difference = denom <= negligible && diff <= negligible ? 0.0 : diff / denom;
  return out;
}

void save_trajectory(const std::filesystem::path& path, const TrajectoryRecord& record, const nlohmann::json& extra_meta) {
  if (record.w_snapshots.empty()) throw Error(ErrorCode::EmptyTrajectory, "nothing to save");
  const Index n_out = record.w_snapshots.front().rows();
  const Index d = record.w_snapshots.front().cols();
  Container c;
  c.meta = extra_meta;
  c.meta["kind"] = "trajectory";
  c.meta["config"] = to_json(record.config);
  c.meta["converged_at"] = record.converged_at;
  c.meta["convergence_curve"] = curve_to_json(record.convergence_curve);
  c.meta["n_snapshots"] = record.size();
  c.meta["n_out"] = n_out;
  c.meta["dim"] = d;
  c.matrices.emplace_back("w_snapshots", stack(record.w_snapshots, n_out, d));
  c.matrices.emplace_back("sigma_yx_snapshots", stack(record.sigma_yx_snapshots, n_out, d));
  if (record.sigma_xx_snapshots) c.matrices.emplace_back("sigma_xx_snapshots", stack(*record.sigma_xx_snapshots, d, d));
  write_container(path, c);
}

TrajectoryRecord load_trajectory(const std::filesystem::path& path, nlohmann::json* meta_out) {
  const Container c = read_container(path);
  if (c.meta.value("kind", "") != "trajectory") throw Error(ErrorCode::BadContainer, path.string() + " is not a trajectory");
  const auto n_out = c.meta.at("n_out").get<Index>();
  const auto d = c.meta.at("dim").get<Index>();
  TrajectoryRecord rec;
  rec.config = sgd_config_from_json(c.meta.at("config"));
  rec.converged_at = c.meta.at("converged_at").get<std::size_t>();
  rec.convergence_curve = curve_from_json(c.meta.at("convergence_curve"));
  rec.w_snapshots = unstack(c.matrix("w_snapshots"), n_out);
  rec.sigma_yx_snapshots = unstack(c.matrix("sigma_yx_snapshots"), n_out);
  if (c.has("sigma_xx_snapshots")) rec.sigma_xx_snapshots = unstack(c.matrix("sigma_xx_snapshots"), d);
  if (meta_out != nullptr) *meta_out = c.meta;
  return rec;
}

void save_checkpoint(const std::filesystem::path& path, const RunCheckpoint& cp, const nlohmann::json& extra_meta) {
  Container c;
  c.meta = extra_meta;
  c.meta["kind"] = "checkpoint";
  c.meta["step"] = cp.step;
  c.meta["rng_state"] = cp.rng_state;
  c.meta["converged_at"] = cp.converged_at ? nlohmann::json(*cp.converged_at) : nlohmann::json(nullptr);
  c.meta["samples_taken"] = cp.samples_taken;
  c.meta["convergence_curve"] = curve_to_json(cp.convergence_curve);
  c.matrices.emplace_back("w", cp.w);
  write_container(path, c);
}

RunCheckpoint load_checkpoint(const std::filesystem::path& path, nlohmann::json* meta_out) {
  const Container c = read_container(path);
  if (c.meta.value("kind", "") != "checkpoint") throw Error(ErrorCode::BadContainer, path.string() + " is not a checkpoint");
  RunCheckpoint cp;
  cp.w = c.matrix("w");
  cp.step = c.meta.at("step").get<std::size_t>();
  cp.rng_state = c.meta.at("rng_state").get<std::string>();
  if (!c.meta.at("converged_at").is_null()) cp.converged_at = c.meta["converged_at"].get<std::size_t>();
  cp.samples_taken = c.meta.at("samples_taken").get<std::size_t>();
  cp.convergence_curve = curve_from_json(c.meta.at("convergence_curve"));
  if (meta_out != nullptr) *meta_out = c.meta;
  return cp;
}

}  // namespace linfdt
