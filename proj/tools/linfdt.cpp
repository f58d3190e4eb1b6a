// linfdt: ingest → run → analyze → report, plus the OU oracle and the CNN
// extension. Exit codes: 0 success, 1 data or numeric error, 2 usage,
// 3 no convergence.

#include "schema.hpp"

#include "linfdt/cnn.hpp"
#include "linfdt/container.hpp"
#include "linfdt/dataset.hpp"
#include "linfdt/dynamics.hpp"
#include "linfdt/error.hpp"
#include "linfdt/fdt.hpp"
#include "linfdt/moments.hpp"
#include "linfdt/ou.hpp"
#include "linfdt/spectrum.hpp"

#include "CLI11.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <unistd.h>
#include <vector>

namespace fs = std::filesystem;
using namespace linfdt;
using nlohmann::json;

namespace {

constexpr const char* kVersion = LINFDT_VERSION;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string now_utc() {
  const std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

fs::path cache_root(const std::string& flag) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv("LINFDT_CACHE"); env != nullptr && *env != '\0') return env;
  return "linfdt-cache";
}

fs::path resolve_dataset(const std::string& name, const fs::path& cache) {
  if (fs::is_regular_file(name)) return name;
  const fs::path p = cache / "datasets" / (name + ".lfdt");
  if (!fs::is_regular_file(p)) throw Error(ErrorCode::Io, "no dataset '" + name + "' (looked for " + p.string() + ")");
  return p;
}

json read_json(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + p.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidArgument, p.string() + ": " + e.what());
  }
}

json artifact(const std::string& role, const fs::path& file, const fs::path& base) {
  return {{"role", role}, {"path", fs::relative(file, base).generic_string()}, {"sha256", sha256_file(file)}};
}

json curve_json(const std::vector<std::pair<std::size_t, double>>& curve) {
  json out = json::array();
  for (const auto& [step, cos] : curve) out.push_back({step, cos});
  return out;
}

std::vector<IndexPair> parse_pairs(const std::vector<std::string>& items) {
  std::vector<IndexPair> out;
  for (const auto& s : items) {
    std::size_t i = 0;
    std::size_t k = 0;
    char comma = 0;
    std::istringstream in(s);
    if (!(in >> i >> comma >> k) || comma != ',' || !in.eof()) throw UsageError("bad index pair '" + s + "', expected i,k");
    out.emplace_back(i, k);
  }
  return out;
}

json dataset_descriptor(const LabeledDataset& data, const fs::path& path, const std::string& name) {
  return {{"name", name},
          {"path", fs::absolute(path).lexically_normal().string()},
          {"source", to_string(data.source)},
          {"fingerprint", dataset_fingerprint(data)},
          {"dim", data.dim()},
          {"n_samples", data.size()},
          {"n_out", data.n_out},
          {"side_length", data.side_length},
          {"preprocessing", data.preprocessing}};
}

void write_manifest(const fs::path& dir, const json& manifest) {
  cli::validate_schema(manifest, cli::run_manifest_schema(), "run manifest");
  write_text_atomic(dir / "manifest.json", dump_json(manifest) + "\n");
}

json load_manifest(const fs::path& run_dir) {
  const json m = read_json(run_dir / "manifest.json");
  cli::validate_schema(m, cli::run_manifest_schema(), (run_dir / "manifest.json").string());
  return m;
}

// The dataset a manifest points at, refusing one whose contents changed.
LabeledDataset load_checked_dataset(const json& manifest) {
  const fs::path path = manifest["dataset"]["path"].get<std::string>();
  const LabeledDataset data = load_dataset(path);
  const std::string expected = manifest["dataset"]["fingerprint"].get<std::string>();
  const std::string actual = dataset_fingerprint(data);
  if (actual != expected) {
    throw Error(ErrorCode::FingerprintMismatch,
                path.string() + " has fingerprint " + actual + " but the run was made against " + expected);
  }
  return data;
}

void print_matrix(const char* label, const Matrix& m) {
  std::cout << label << " (" << m.rows() << "x" << m.cols() << "):\n" << matrix_to_csv(m);
}

// ---------------------------------------------------------------- ingest

struct IngestArgs {
  std::string mnist, emnist, cifar10, synthetic, name, cache;
  std::optional<std::size_t> crop;
};

int cmd_ingest(const IngestArgs& a) {
  LabeledDataset data;
  std::string name = a.name;
  if (!a.synthetic.empty()) {
    if (a.crop) throw UsageError("--crop does not apply to synthetic data");
    data = generate_synthetic(synthetic_spec_from_json(read_json(a.synthetic)));
    if (name.empty()) name = fs::path(a.synthetic).stem().string();
  } else {
    const auto [source, dir] = !a.mnist.empty()    ? std::pair{DataSource::Mnist, a.mnist}
                               : !a.emnist.empty() ? std::pair{DataSource::Emnist, a.emnist}
                                                   : std::pair{DataSource::Cifar10, a.cifar10};
    PreprocessOptions opts = default_preprocess(source);
    if (a.crop) opts.crop_to = *a.crop;
    data = preprocess(load_source_dir(source, dir), opts);
    if (name.empty()) name = std::string(to_string(source)) + (opts.crop_to ? "-c" + std::to_string(opts.crop_to) : "");
  }
  const fs::path dir = cache_root(a.cache) / "datasets";
  fs::create_directories(dir);
  const fs::path path = dir / (name + ".lfdt");
  save_dataset(path, data);
  const json desc = dataset_descriptor(data, path, name);
  write_text_atomic(dir / (name + ".json"), dump_json(desc) + "\n");
  std::cout << "cached " << path.string() << ": " << data.size() << " samples, d = " << data.dim()
            << ", n_out = " << data.n_out << "\nfingerprint " << desc["fingerprint"].get<std::string>() << "\n";
  return 0;
}

// ------------------------------------------------------------------- run

struct RunArgs {
  std::string dataset, out, cache, config, mode, store = "moments";
  std::vector<std::string> refined;
  std::optional<double> epsilon, threshold, ridge;
  std::optional<std::size_t> batch, max_steps, samples, stride, curve_interval;
  std::optional<std::uint64_t> seed;
  bool record_sigma_xx = false;
};

SgdConfig build_config(const RunArgs& a) {
  SgdConfig c = a.config.empty() ? SgdConfig{} : sgd_config_from_json(read_json(a.config));
  if (a.epsilon) c.epsilon = *a.epsilon;
  if (a.batch) c.batch_size = *a.batch;
  if (!a.mode.empty()) c.mode = dynamics_mode_from_string(a.mode);
  if (a.threshold) c.convergence_threshold = *a.threshold;
  if (a.max_steps) c.max_steps = *a.max_steps;
  if (a.samples) c.steady_samples = *a.samples;
  if (a.stride) c.sample_stride = *a.stride;
  if (a.seed) c.seed = *a.seed;
  if (a.curve_interval) c.curve_interval = *a.curve_interval;
  if (a.record_sigma_xx) c.record_sigma_xx = true;
  validate(c);
  return c;
}

int cmd_run(const RunArgs& a) {
  const SgdConfig config = build_config(a);
  const std::vector<IndexPair> pairs = parse_pairs(a.refined);
  const fs::path data_path = resolve_dataset(a.dataset, cache_root(a.cache));
  const LabeledDataset data = load_dataset(data_path);
  const MomentPair full = full_moments(data);
  const Equilibrium eq = equilibrium(full, a.ridge.value_or(default_ridge(full.sigma_xx)));
  if (const double m = stability_margin(config, full.sigma_xx, eq.ridge_lambda); m >= 2.0) {
    std::cerr << "warning: epsilon * lambda_max = " << m << " >= 2, the mean dynamics are unstable\n";
  }

  const fs::path out = a.out;
  fs::create_directories(out);
  const json fp_meta = {{"dataset_fingerprint", dataset_fingerprint(data)}, {"ridge_lambda", eq.ridge_lambda}};
  RunSummary summary;
  fs::path artifact_path;
  if (a.store == "snapshots") {
    RecordingSink sink;
    summary = run_to_steady_state(data, config, eq, full, sink);
    TrajectoryRecord rec = sink.take();
    rec.config = config;
    rec.converged_at = summary.converged_at.value_or(0);
    rec.convergence_curve = summary.convergence_curve;
    artifact_path = out / "trajectory.lfdt";
    save_trajectory(artifact_path, rec, fp_meta);
  } else {
    SteadyStateAccumulator acc(full.sigma_yx, eq.w0, pairs);
    summary = run_to_steady_state(data, config, eq, full, acc);
    artifact_path = out / "moments.lfdt";
    acc.save(artifact_path, fp_meta);
  }

  json pairs_json = json::array();
  for (const auto& [i, k] : pairs) pairs_json.push_back({i, k});
  const json manifest = {
      {"schema", "linfdt/run-manifest/1"},
      {"tool_version", kVersion},
      {"command", "run"},
      {"created_utc", now_utc()},
      {"seed", config.seed},
      {"dataset", dataset_descriptor(data, data_path, fs::path(data_path).stem().string())},
      {"sgd", to_json(config)},
      {"ridge_lambda", eq.ridge_lambda},
      {"store", a.store},
      {"refined_pairs", pairs_json},
      {"result",
       {{"complete", summary.complete},
        {"converged_at", summary.converged_at ? json(*summary.converged_at) : json(nullptr)},
        {"steps", summary.checkpoint.step},
        {"final_cos_theta", summary.final_state.cos_theta},
        {"samples", summary.samples_taken}}},
      {"convergence_curve", curve_json(summary.convergence_curve)},
      {"artifacts", json::array({artifact(a.store, artifact_path, out)})}};
  write_manifest(out, manifest);
  std::printf("converged at step %zu (threshold %.4g); %zu samples, %zu steps, final cos theta %.6f\n",
              summary.converged_at.value_or(0), config.convergence_threshold, summary.samples_taken, summary.checkpoint.step,
              summary.final_state.cos_theta);
  std::printf("wrote %s\n", (out / "manifest.json").c_str());
  return 0;
}

// --------------------------------------------------------------- analyze

struct AnalyzeArgs {
  std::string run, out, center = "w0", convention = "matrix";
  std::vector<std::string> refined;
  std::size_t spectrum_max = 4;
  bool no_spectrum = false;
};

SteadyStateAccumulator accumulator_for(const fs::path& run_dir, const json& manifest, const Matrix& sigma_yx_full,
                                       const Matrix& w0, const std::vector<IndexPair>& pairs) {
  const fs::path file = run_dir / manifest["artifacts"][0]["path"].get<std::string>();
  if (sha256_file(file) != manifest["artifacts"][0]["sha256"].get<std::string>()) {
    throw Error(ErrorCode::FingerprintMismatch, file.string() + " changed since the run manifest was written");
  }
  if (manifest["store"] == "moments") return SteadyStateAccumulator::load(file);
  const TrajectoryRecord rec = load_trajectory(file);
  SteadyStateAccumulator acc(sigma_yx_full, w0, pairs);
  for (std::size_t t = 0; t < rec.size(); ++t) {
    acc.consume(Snapshot{rec.w_snapshots[t], rec.sigma_yx_snapshots[t], nullptr, rec.converged_at + t});
  }
  return acc;
}

int cmd_analyze(const AnalyzeArgs& a) {
  const fs::path run_dir = a.run;
  const json manifest = load_manifest(run_dir);
  if (manifest["command"] != "run") throw UsageError(run_dir.string() + " is not an SGD run");
  const Center center = center_from_string(a.center);
  const SpectrumConvention convention = spectrum_convention_from_string(a.convention);
  std::vector<IndexPair> pairs = parse_pairs(a.refined);

  const LabeledDataset data = load_checked_dataset(manifest);
  const MomentPair full = full_moments(data);
  const Equilibrium eq = equilibrium(full, manifest["ridge_lambda"].get<double>());
  const Matrix dissipation = dissipation_matrix(full, eq.ridge_lambda);
  const SteadyStateAccumulator acc = accumulator_for(run_dir, manifest, full.sigma_yx, eq.w0, pairs);

  const FdtReport report = fdt_check(acc, dissipation, center);
  json fdt = to_json(report);
  fdt["samples"] = acc.samples();

  json refined = nullptr;
  if (pairs.empty() && manifest["store"] == "moments") pairs = acc.pairs();
  if (!pairs.empty()) {
    const RefinedFdtReport all = refined_fdt_check(acc, dissipation);
    RefinedFdtReport picked;
    for (const auto& p : pairs) {
      const auto it = std::find(all.index_pairs.begin(), all.index_pairs.end(), p);
      if (it == all.index_pairs.end()) {
        throw Error(ErrorCode::InvalidArgument, "pair " + std::to_string(p.first) + "," + std::to_string(p.second) +
                                                    " was not recorded; rerun with --refined or --store snapshots");
      }
      const auto idx = static_cast<std::size_t>(it - all.index_pairs.begin());
      picked.index_pairs.push_back(p);
      picked.per_pair_residual.push_back(all.per_pair_residual[idx]);
      picked.per_pair_proportionality.push_back(all.per_pair_proportionality[idx]);
    }
    refined = to_json(picked);
  }

  std::optional<SpectrumLine> line;
  const std::size_t a_side = data.side_length;
  if (!a.no_spectrum && a_side > 1 && a_side * a_side == data.dim() && a.spectrum_max > 0) {
    line = line_cut(report, a_side, std::min(a.spectrum_max, a_side / 2), convention);
  }
  json spectrum = nullptr;
  if (line) {
    json points = json::array();
    for (std::size_t i = 0; i < line->k_multiples.size(); ++i) {
      points.push_back({{"m", line->k_multiples[i]},
                        {"k_x", 2.0 * std::numbers::pi * line->k_multiples[i] / static_cast<double>(a_side)},
                        {"amplitude_lhs", line->amplitude_lhs[i]},
                        {"amplitude_d", line->amplitude_d[i]}});
    }
    spectrum = {{"convention", to_string(convention)},
                {"side_length", a_side},
                {"max_deviation", max_deviation(*line)},
                {"points", points}};
  }

  // Everything goes into a sibling temp directory that is renamed into
  // place only once complete.
  const fs::path out = a.out.empty() ? run_dir / "analysis" : fs::path(a.out);
  const fs::path tmp = out.string() + ".tmp-" + std::to_string(::getpid());
  fs::remove_all(tmp);
  fs::create_directories(tmp);
  try {
    Container mats;
    mats.meta = {{"kind", "fdt_matrices"}, {"center", to_string(center)}};
    mats.matrices = {{"d_hat", report.d_hat}, {"sigma_ww", report.sigma_ww}, {"lhs", report.lhs}, {"q_matrix", report.q_matrix}};
    write_container(tmp / "matrices.lfdt", mats);
    json artifacts = json::array({artifact("matrices", tmp / "matrices.lfdt", tmp)});
    for (const auto& [name, m] : mats.matrices) {
      write_text_atomic(tmp / (name + ".csv"), matrix_to_csv(m));
      artifacts.push_back(artifact(name, tmp / (name + ".csv"), tmp));
    }
    if (line) {
      write_text_atomic(tmp / "spectrum.csv", to_csv(*line));
      artifacts.push_back(artifact("spectrum", tmp / "spectrum.csv", tmp));
    }
    std::string curve = "step,cos_theta\n";
    for (const auto& point : manifest.value("convergence_curve", json::array())) {
      char buf[64];
      std::snprintf(buf, sizeof buf, "%.17g,%.17g\n", point[0].get<double>(), point[1].get<double>());
      curve += buf;
    }
    write_text_atomic(tmp / "convergence.csv", curve);
    artifacts.push_back(artifact("convergence", tmp / "convergence.csv", tmp));

    const json bundle = {{"schema", "linfdt/report-bundle/1"},
                         {"tool_version", kVersion},
                         {"created_utc", now_utc()},
                         {"run", fs::absolute(run_dir).lexically_normal().string()},
                         {"dataset_fingerprint", manifest["dataset"]["fingerprint"]},
                         {"mode", manifest["sgd"]["mode"]},
                         {"center", to_string(center)},
                         {"fdt", fdt},
                         {"refined", refined},
                         {"spectrum", spectrum},
                         {"convergence_curve", manifest.value("convergence_curve", json::array())},
                         {"artifacts", artifacts}};
    cli::validate_schema(bundle, cli::report_bundle_schema(), "report bundle");
    for (const auto& art : artifacts) {
      if (!fs::is_regular_file(tmp / art["path"].get<std::string>())) {
        throw Error(ErrorCode::Io, "bundle artifact " + art["path"].get<std::string>() + " is missing");
      }
    }
    write_text_atomic(tmp / "report.json", dump_json(bundle) + "\n");
    fs::remove_all(out);
    fs::rename(tmp, out);
  } catch (...) {
    fs::remove_all(tmp);
    throw;
  }

  std::printf("c* = %.6g, relative residual %.4f, q_ratio %.4f (vs c*D: %.4f), %zu samples\n", report.proportionality,
              report.relative_residual, report.q_ratio, report.q_ratio_d_hat, acc.samples());
  if (report.autocorrelation_time) {
    std::printf("autocorrelation time %.1f snapshots, ~%.0f effective samples\n", *report.autocorrelation_time,
                *report.effective_samples);
  }
  if (!refined.is_null()) {
    for (const auto& p : refined["pairs"]) {
      std::printf("pair (%d,%d): residual %.4f\n", p["i"].get<int>(), p["k"].get<int>(), p["relative_residual"].get<double>());
    }
  }
  if (line) std::printf("spectrum max deviation %.4f (m = 0..%zu)\n", max_deviation(*line), line->k_multiples.size() - 1);
  std::printf("wrote %s\n", out.c_str());
  return 0;
}

// ---------------------------------------------------------------- oracle

struct OracleArgs {
  std::string system, out;
  std::vector<double> scalar;
  double tolerance = 1e-8;
  std::size_t simulate = 0;
  double dt = 0.01;
  std::uint64_t seed = 0;
  bool as_json = false;
};

int cmd_oracle(const OracleArgs& a) {
  if (a.system.empty() == a.scalar.empty()) throw UsageError("give either a system file or --scalar GAMMA D");
  const OuSystem sys = a.scalar.empty() ? load_ou_system(a.system)
                                        : OuSystem{Matrix::Constant(1, 1, a.scalar[0]), Matrix::Constant(1, 1, a.scalar[1])};
  const StationaryResult r = solve_lyapunov(sys);
  const DetailedBalance db = detailed_balance_check(r, a.tolerance);
  std::optional<double> sim_err;
  if (a.simulate > 0) {
    sim_err = relative_frobenius(simulate_ou(sys, a.dt, a.simulate, a.simulate / 10, a.seed), r.sigma);
  }
  if (!a.out.empty()) save_stationary(a.out, r);

  if (a.as_json) {
    const auto rows = [](const Matrix& m) {
      json out = json::array();
      for (Index i = 0; i < m.rows(); ++i) out.push_back(std::vector<double>(m.row(i).begin(), m.row(i).end()));
      return out;
    };
    json j = {{"sigma", rows(r.sigma)},
              {"q_matrix", rows(r.q_matrix)},
              {"residual", r.residual},
              {"detailed_balance_ratio", db.ratio},
              {"detailed_balance_holds", db.holds}};
    if (sim_err) j["simulation_relative_error"] = *sim_err;
    std::cout << dump_json(j) << "\n";
    return 0;
  }
  print_matrix("sigma", r.sigma);
  print_matrix("q_matrix", r.q_matrix);
  std::printf("residual %.3e\n", r.residual);
  std::printf("detailed balance ratio %.6g (%s at tolerance %.3g)\n", db.ratio, db.holds ? "holds" : "broken", a.tolerance);
  if (sim_err) std::printf("simulated covariance relative error %.4f (%zu steps, dt %.3g)\n", *sim_err, a.simulate, a.dt);
  return 0;
}

// ------------------------------------------------------------------- cnn

struct CnnArgs {
  std::string dataset, out, cache;
  std::size_t c_side = 3, steps = 10000, batch = 100, record_interval = 0;
  double epsilon = 0.01, filter_epsilon = 0.01, ridge = 0.0, init_noise = 0.01;
  std::optional<double> tolerance;
  std::uint64_t seed = 0;
  bool full_batch = false, freeze = false, fdt = false;
  std::size_t fdt_samples = 30000, fdt_stride = 1;
};

int cmd_cnn(const CnnArgs& a) {
  const fs::path data_path = resolve_dataset(a.dataset, cache_root(a.cache));
  const LabeledDataset data = load_dataset(data_path);
  CnnConfig c;
  c.sgd.epsilon = a.epsilon;
  c.sgd.batch_size = a.batch;
  c.sgd.max_steps = a.steps;
  c.sgd.seed = a.seed;
  c.filter_epsilon = a.filter_epsilon;
  c.c_side = a.c_side;
  c.freeze_filter = a.freeze;
  c.full_batch = a.full_batch;
  c.ridge_lambda = a.ridge;
  c.init_noise = a.init_noise;
  c.gradient_tolerance = a.tolerance;
  c.record_interval = a.record_interval;
  const CnnTrajectory traj = joint_descent(data, c);

  const fs::path out = a.out;
  fs::create_directories(out);
  save_cnn_state(out / "cnn_state.lfdt", traj.final_state, {{"dataset_fingerprint", dataset_fingerprint(data)}});
  json artifacts = json::array({artifact("cnn_state", out / "cnn_state.lfdt", out)});
  if (!traj.error.empty()) {
    std::string csv = "step,error\n";
    const std::size_t every = c.full_batch ? 1 : c.record_interval;
    for (std::size_t i = 0; i < traj.error.size(); ++i) {
      char buf[64];
      std::snprintf(buf, sizeof buf, "%zu,%.17g\n", c.full_batch ? i + 1 : i * every, traj.error[i]);
      csv += buf;
    }
    write_text_atomic(out / "error.csv", csv);
    artifacts.push_back(artifact("error", out / "error.csv", out));
  }
  if (!traj.states.empty()) {
    Container states;
    states.meta = {{"kind", "cnn_states"}, {"record_interval", c.record_interval}};
    for (const auto& st : traj.states) {
      states.matrices.emplace_back("filter_" + std::to_string(st.step), st.filter.c);
      states.matrices.emplace_back("w_" + std::to_string(st.step), st.w);
    }
    write_container(out / "cnn_states.lfdt", states);
    artifacts.push_back(artifact("cnn_states", out / "cnn_states.lfdt", out));
  }

  const double final_error = error_function(data, traj.final_state.filter, traj.final_state.w);
  json cnn = {{"c_side", c.c_side},
              {"filter_epsilon", c.filter_epsilon},
              {"freeze_filter", c.freeze_filter},
              {"full_batch", c.full_batch},
              {"init_noise", c.init_noise},
              {"gradient_tolerance", a.tolerance ? json(*a.tolerance) : json(nullptr)}};
  if (a.fdt) {
    SgdConfig s = c.sgd;
    s.max_steps = SgdConfig{}.max_steps;
    s.steady_samples = a.fdt_samples;
    s.sample_stride = a.fdt_stride;
    const FilteredFdtResult f = fdt_check_filtered(data, traj.final_state.filter, s);
    cnn["fdt"] = to_json(f.pipeline.report);
    cnn["fdt"]["ridge_fallback"] = f.ridge_fallback;
    cnn["fdt"]["ridge_lambda"] = f.pipeline.equilibrium.ridge_lambda;
    std::printf("filtered FDT: relative residual %.4f, q_ratio %.4f%s\n", f.pipeline.report.relative_residual,
                f.pipeline.report.q_ratio, f.ridge_fallback ? " (Sigma_XX singular, ridge applied)" : "");
  }
  const json manifest = {
      {"schema", "linfdt/run-manifest/1"},
      {"tool_version", kVersion},
      {"command", "cnn"},
      {"created_utc", now_utc()},
      {"seed", a.seed},
      {"dataset", dataset_descriptor(data, data_path, data_path.stem().string())},
      {"sgd", to_json(c.sgd)},
      {"ridge_lambda", c.ridge_lambda},
      {"store", "cnn_state"},
      {"result",
       {{"complete", true},
        {"converged_at", traj.converged_at ? json(*traj.converged_at) : json(nullptr)},
        {"steps", traj.final_state.step},
        {"final_error", final_error}}},
      {"cnn", cnn},
      {"artifacts", artifacts}};
  write_manifest(out, manifest);
  std::printf("%zu steps, final error %.6g\nwrote %s\n", traj.final_state.step, final_error, (out / "manifest.json").c_str());
  return 0;
}

// ---------------------------------------------------------------- report

struct ReportArgs {
  std::vector<std::string> runs;
  std::string bundle = "analysis";
  bool as_json = false;
};

int cmd_report(const ReportArgs& a) {
  json rows = json::array();
  std::optional<Matrix> first_sww;
  for (const auto& r : a.runs) {
    const json m = load_manifest(r);
    json row = {{"run", r},
                {"command", m["command"]},
                {"mode", m["sgd"]["mode"]},
                {"epsilon", m["sgd"]["epsilon"]},
                {"batch_size", m["sgd"]["batch_size"]},
                {"seed", m["seed"]},
                {"converged_at", m["result"].value("converged_at", json(nullptr))}};
    const fs::path bundle = fs::path(r) / a.bundle;
    if (fs::is_regular_file(bundle / "report.json")) {
      const json b = read_json(bundle / "report.json");
      cli::validate_schema(b, cli::report_bundle_schema(), (bundle / "report.json").string());
      row["q_ratio"] = b["fdt"]["q_ratio"];
      row["relative_residual"] = b["fdt"]["relative_residual"];
      row["proportionality"] = b["fdt"]["proportionality"];
      row["spectrum_max_deviation"] = b["spectrum"].is_null() ? json(nullptr) : b["spectrum"]["max_deviation"];
      const Matrix sww = read_container(bundle / "matrices.lfdt").matrix("sigma_ww");
      if (!first_sww) {
        first_sww = sww;
      } else if (first_sww->rows() == sww.rows()) {
        row["sigma_ww_rel_diff_vs_first"] = relative_frobenius(sww, *first_sww);
      }
    }
    rows.push_back(row);
  }
  if (a.as_json) {
    std::cout << dump_json(rows) << "\n";
    return 0;
  }
  const auto num = [](const json& v, const char* f) {
    if (v.is_null()) return std::string("-");
    char buf[32];
    std::snprintf(buf, sizeof buf, f, v.get<double>());
    return std::string(buf);
  };
  std::printf("%-28s %-9s %-9s %8s %6s %10s %9s %9s %11s %9s\n", "run", "command", "mode", "epsilon", "batch", "converged",
              "q_ratio", "residual", "c*", "dSww");
  for (const auto& row : rows) {
    std::printf("%-28s %-9s %-9s %8s %6d %10s %9s %9s %11s %9s\n", row["run"].get<std::string>().c_str(),
                row["command"].get<std::string>().c_str(), row["mode"].get<std::string>().c_str(),
                num(row["epsilon"], "%.3g").c_str(), row["batch_size"].get<int>(),
                row["converged_at"].is_null() ? "-" : std::to_string(row["converged_at"].get<std::size_t>()).c_str(),
                num(row.value("q_ratio", json(nullptr)), "%.4f").c_str(),
                num(row.value("relative_residual", json(nullptr)), "%.4f").c_str(),
                num(row.value("proportionality", json(nullptr)), "%.4g").c_str(),
                num(row.value("sigma_ww_rel_diff_vs_first", json(nullptr)), "%.4f").c_str());
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Fluctuation-dissipation checks for SGD on linear maps"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  IngestArgs ia;
  auto* ingest = app.add_subcommand("ingest", "Load and preprocess a dataset into the cache");
  auto* src = ingest->add_option_group("source");
  src->add_option("--mnist", ia.mnist, "directory with MNIST IDX files")->check(CLI::ExistingDirectory);
  src->add_option("--emnist", ia.emnist, "directory with EMNIST Letters IDX files")->check(CLI::ExistingDirectory);
  src->add_option("--cifar10", ia.cifar10, "directory with CIFAR-10 binary batches")->check(CLI::ExistingDirectory);
  src->add_option("--synthetic", ia.synthetic, "synthetic dataset spec (JSON)")->check(CLI::ExistingFile);
  src->require_option(1);
  ingest->add_option("--crop", ia.crop, "center-crop side length (default 24 for MNIST/EMNIST, none for CIFAR-10)");
  ingest->add_option("--name", ia.name, "cache entry name");
  ingest->add_option("--cache", ia.cache, "cache root (default $LINFDT_CACHE, else ./linfdt-cache)");

  RunArgs ra;
  auto* run = app.add_subcommand("run", "SGD to steady state, recording snapshots or streaming moments");
  run->add_option("--dataset", ra.dataset, "cache name or dataset file")->required();
  run->add_option("--out", ra.out, "run directory")->required();
  run->add_option("--cache", ra.cache, "cache root");
  run->add_option("--config", ra.config, "SGD config JSON; flags override it")->check(CLI::ExistingFile);
  run->add_option("--epsilon", ra.epsilon, "learning rate");
  run->add_option("--batch-size", ra.batch, "mini-batch size");
  run->add_option("--mode", ra.mode, "full-xx or mini-both")->check(CLI::IsMember({"full-xx", "mini-both"}));
  run->add_option("--threshold", ra.threshold, "cos theta convergence threshold");
  run->add_option("--max-steps", ra.max_steps, "step limit before giving up");
  run->add_option("--samples", ra.samples, "steady-state snapshots");
  run->add_option("--stride", ra.stride, "steps between snapshots");
  run->add_option("--seed", ra.seed, "random seed");
  run->add_option("--curve-interval", ra.curve_interval, "steps between convergence-curve points");
  run->add_option("--ridge", ra.ridge, "ridge lambda (default 1e-6 tr(Sigma_xx)/d)");
  run->add_option("--store", ra.store, "snapshots or moments")->check(CLI::IsMember({"snapshots", "moments"}));
  run->add_option("--refined", ra.refined, "output index pairs i,k to track")->expected(1, -1);
  run->add_flag("--record-sigma-xx", ra.record_sigma_xx, "keep mini-batch Sigma_xx (snapshots, mini-both)");

  AnalyzeArgs aa;
  auto* analyze = app.add_subcommand("analyze", "FDT check, refined pairs and spectrum for a run");
  analyze->add_option("--run", aa.run, "run directory")->required()->check(CLI::ExistingDirectory);
  analyze->add_option("--out", aa.out, "bundle directory (default RUN/analysis)");
  analyze->add_option("--center", aa.center, "w0 or mean")->check(CLI::IsMember({"w0", "mean"}));
  analyze->add_option("--refined", aa.refined, "output index pairs i,k")->expected(1, -1);
  analyze->add_option("--spectrum-max", aa.spectrum_max, "largest multiple of k0 in the line cut");
  analyze->add_option("--convention", aa.convention, "matrix or pixel")->check(CLI::IsMember({"matrix", "pixel"}));
  analyze->add_flag("--no-spectrum", aa.no_spectrum, "skip the Fourier line cut");

  OracleArgs oa;
  auto* orc = app.add_subcommand("oracle", "Stationary covariance of an OU system");
  orc->add_option("system", oa.system, "system file (.json or container)")->check(CLI::ExistingFile);
  orc->add_option("--scalar", oa.scalar, "scalar system: GAMMA D")->expected(2);
  orc->add_option("--tolerance", oa.tolerance, "detailed-balance tolerance");
  orc->add_option("--simulate", oa.simulate, "also run Euler-Maruyama for this many steps");
  orc->add_option("--dt", oa.dt, "simulation time step");
  orc->add_option("--seed", oa.seed, "simulation seed");
  orc->add_option("--out", oa.out, "write the result container here");
  orc->add_flag("--json", oa.as_json, "print JSON");

  CnnArgs ca;
  auto* cnn = app.add_subcommand("cnn", "Joint filter and weight descent");
  cnn->add_option("--dataset", ca.dataset, "cache name or dataset file")->required();
  cnn->add_option("--out", ca.out, "output directory")->required();
  cnn->add_option("--cache", ca.cache, "cache root");
  cnn->add_option("--c-side", ca.c_side, "filter side length");
  cnn->add_option("--epsilon", ca.epsilon, "learning rate for W");
  cnn->add_option("--filter-epsilon", ca.filter_epsilon, "learning rate for the filter");
  cnn->add_option("--batch-size", ca.batch, "mini-batch size");
  cnn->add_option("--steps", ca.steps, "number of steps");
  cnn->add_option("--seed", ca.seed, "random seed");
  cnn->add_option("--ridge", ca.ridge, "weight decay on W");
  cnn->add_option("--init-noise", ca.init_noise, "uniform noise on the initial delta filter");
  cnn->add_option("--tolerance", ca.tolerance, "stop at this relative gradient (full batch only)");
  cnn->add_option("--record-interval", ca.record_interval, "keep every n-th state");
  cnn->add_flag("--full-batch", ca.full_batch, "deterministic full-batch descent");
  cnn->add_flag("--freeze-filter", ca.freeze, "train W only");
  cnn->add_flag("--fdt", ca.fdt, "run the FDT check with the final filter held fixed");
  cnn->add_option("--fdt-samples", ca.fdt_samples, "steady-state samples for --fdt");
  cnn->add_option("--fdt-stride", ca.fdt_stride, "snapshot stride for --fdt");

  ReportArgs pa;
  auto* rep = app.add_subcommand("report", "Summarize and compare analyzed runs");
  rep->add_option("runs", pa.runs, "run directories")->required()->check(CLI::ExistingDirectory);
  rep->add_option("--bundle", pa.bundle, "bundle subdirectory name");
  rep->add_flag("--json", pa.as_json, "print JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*ingest) return cmd_ingest(ia);
    if (*run) return cmd_run(ra);
    if (*analyze) return cmd_analyze(aa);
    if (*orc) return cmd_oracle(oa);
    if (*cnn) return cmd_cnn(ca);
    if (*rep) return cmd_report(pa);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.code() == ErrorCode::NoConvergence ? 3 : 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
