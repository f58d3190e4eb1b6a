#include "linfdt/dataset.hpp"

#include "linfdt/container.hpp"
#include "linfdt/error.hpp"

#include <zlib.h>

#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <random>

namespace linfdt {

namespace {

constexpr std::uint32_t kIdxImageMagic = 0x00000803;
constexpr std::uint32_t kIdxLabelMagic = 0x00000801;
constexpr std::size_t kCifarSide = 32;
constexpr std::size_t kCifarRecord = 1 + 3 * kCifarSide * kCifarSide;

// Reads a whole file; gzip streams are inflated, plain files pass through.
std::vector<std::uint8_t> read_maybe_gzip(const std::filesystem::path& path) {
  gzFile f = gzopen(path.string().c_str(), "rb");
  if (f == nullptr) throw Error(ErrorCode::Io, "cannot open " + path.string());
  std::vector<std::uint8_t> out;
  std::uint8_t buf[1 << 16];
  for (;;) {
    const int n = gzread(f, buf, sizeof buf);
    if (n < 0) {
      gzclose(f);
      throw Error(ErrorCode::TruncatedFile, "read error in " + path.string());
    }
    if (n == 0) break;
    out.insert(out.end(), buf, buf + n);
  }
  gzclose(f);
  return out;
}

std::uint32_t read_be32(const std::vector<std::uint8_t>& bytes, std::size_t offset, const std::filesystem::path& path) {
  if (offset + 4 > bytes.size()) throw Error(ErrorCode::TruncatedFile, path.string() + ": header truncated");
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

std::string hex32(std::uint32_t v) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "0x%08x", v);
  return buf;
}

}  // namespace

std::string_view to_string(DataSource source) {
  switch (source) {
    case DataSource::Mnist: return "mnist";
    case DataSource::Emnist: return "emnist";
    case DataSource::Cifar10: return "cifar10";
    case DataSource::Synthetic: return "synthetic";
  }
  return "unknown";
}

DataSource data_source_from_string(std::string_view name) {
  if (name == "mnist") return DataSource::Mnist;
  if (name == "emnist") return DataSource::Emnist;
  if (name == "cifar10") return DataSource::Cifar10;
  if (name == "synthetic") return DataSource::Synthetic;
  throw Error(ErrorCode::InvalidArgument, "unknown data source '" + std::string(name) + "'");
}

std::size_t class_count(DataSource source) {
  switch (source) {
    case DataSource::Emnist: return 26;
    case DataSource::Mnist:
    case DataSource::Cifar10: return 10;
    case DataSource::Synthetic: return 0;
  }
  return 0;
}

RawImageSet load_idx(const std::filesystem::path& image_path, const std::filesystem::path& label_path,
                     DataSource source) {
  const auto images = read_maybe_gzip(image_path);
  const auto labels = read_maybe_gzip(label_path);

  if (const auto magic = read_be32(images, 0, image_path); magic != kIdxImageMagic) {
    throw Error(ErrorCode::BadMagic, image_path.string() + ": expected " + hex32(kIdxImageMagic) + ", got " + hex32(magic));
  }
  if (const auto magic = read_be32(labels, 0, label_path); magic != kIdxLabelMagic) {
    throw Error(ErrorCode::BadMagic, label_path.string() + ": expected " + hex32(kIdxLabelMagic) + ", got " + hex32(magic));
  }

  RawImageSet raw;
  raw.source = source;
  const std::size_t n_images = read_be32(images, 4, image_path);
  raw.rows = read_be32(images, 8, image_path);
  raw.cols = read_be32(images, 12, image_path);
  raw.channels = 1;
  const std::size_t n_labels = read_be32(labels, 4, label_path);
  if (n_images != n_labels) {
    throw Error(ErrorCode::CountMismatch,
                std::to_string(n_images) + " images vs " + std::to_string(n_labels) + " labels");
  }
  const std::size_t pixel_bytes = n_images * raw.rows * raw.cols;
  if (images.size() < 16 + pixel_bytes) throw Error(ErrorCode::TruncatedFile, image_path.string());
  if (labels.size() < 8 + n_labels) throw Error(ErrorCode::TruncatedFile, label_path.string());

  raw.pixels.assign(images.begin() + 16, images.begin() + 16 + static_cast<std::ptrdiff_t>(pixel_bytes));
  const std::size_t n_classes = class_count(source);
  // EMNIST Letters stores classes as 1..26.
  const int shift = source == DataSource::Emnist ? 1 : 0;
  raw.labels.reserve(n_labels);
  for (std::size_t i = 0; i < n_labels; ++i) {
    const int label = static_cast<int>(labels[8 + i]) - shift;
    if (label < 0 || (n_classes > 0 && static_cast<std::size_t>(label) >= n_classes)) {
      throw Error(ErrorCode::LabelOutOfRange, "record " + std::to_string(i) + " has label " + std::to_string(labels[8 + i]));
    }
    raw.labels.push_back(static_cast<std::uint16_t>(label));
  }
  return raw;
}

RawImageSet load_cifar10(const std::vector<std::filesystem::path>& batch_paths) {
  RawImageSet raw;
  raw.source = DataSource::Cifar10;
  raw.rows = kCifarSide;
  raw.cols = kCifarSide;
  raw.channels = 3;
  for (const auto& path : batch_paths) {
    const auto bytes = read_maybe_gzip(path);
    if (bytes.size() % kCifarRecord != 0) {
      throw Error(ErrorCode::BadRecordSize,
                  path.string() + ": size " + std::to_string(bytes.size()) + " is not a multiple of 3073");
    }
    const std::size_t n = bytes.size() / kCifarRecord;
    for (std::size_t r = 0; r < n; ++r) {
      const std::uint8_t* rec = bytes.data() + r * kCifarRecord;
      if (rec[0] > 9) {
        throw Error(ErrorCode::LabelOutOfRange, path.string() + ": record " + std::to_string(r) + " label " + std::to_string(rec[0]));
      }
      raw.labels.push_back(rec[0]);
      raw.pixels.insert(raw.pixels.end(), rec + 1, rec + kCifarRecord);
    }
  }
  return raw;
}

LabeledDataset preprocess(const RawImageSet& raw, const PreprocessOptions& options) {
  if (raw.rows != raw.cols) throw Error(ErrorCode::InvalidArgument, "only square images are supported");
  const std::size_t a_raw = raw.rows;
  const std::size_t a = options.crop_to == 0 ? a_raw : options.crop_to;
  if (a > a_raw) {
    throw Error(ErrorCode::CropTooLarge, "crop " + std::to_string(a) + " exceeds side " + std::to_string(a_raw));
  }
  if (raw.channels == 3 && !options.grayscale) {
    throw Error(ErrorCode::InvalidArgument, "per-channel colour inputs are not supported; use grayscale");
  }
  if (raw.channels != 1 && raw.channels != 3) throw Error(ErrorCode::InvalidArgument, "channel count must be 1 or 3");

  const std::size_t n = raw.size();
  const std::size_t n_out = class_count(raw.source);
  const std::size_t off = (a_raw - a) / 2;
  const std::size_t plane = a_raw * a_raw;

  LabeledDataset data;
  data.source = raw.source;
  data.side_length = a;
  data.n_out = n_out;
  data.one_hot = true;
  data.inputs = Matrix::Zero(static_cast<Index>(n), static_cast<Index>(a * a));
  data.outputs = Matrix::Zero(static_cast<Index>(n), static_cast<Index>(n_out));

  for (std::size_t s = 0; s < n; ++s) {
    const std::uint8_t* img = raw.image(s);
    for (std::size_t r = 0; r < a; ++r) {
      for (std::size_t c = 0; c < a; ++c) {
        const std::size_t src_r = options.transpose ? c + off : r + off;
        const std::size_t src_c = options.transpose ? r + off : c + off;
        const std::size_t p = src_r * a_raw + src_c;
        double value;
        if (raw.channels == 3) {
          value = 0.299 * img[p] + 0.587 * img[plane + p] + 0.114 * img[2 * plane + p];
        } else {
          value = img[p];
        }
        data.inputs(static_cast<Index>(s), static_cast<Index>(r * a + c)) = value / 255.0;
      }
    }
    data.outputs(static_cast<Index>(s), raw.labels[s]) = 1.0;
  }
  data.preprocessing = {{"crop_to", a},
                        {"raw_side", a_raw},
                        {"grayscale", raw.channels == 3 && options.grayscale},
                        {"transpose", options.transpose},
                        {"crop", "center"},
                        {"scale", "divide_by_255"}};
  return data;
}

Matrix random_covariance(const std::vector<double>& eigenvalues, std::uint64_t seed) {
  const auto d = static_cast<Index>(eigenvalues.size());
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  Matrix g(d, d);
  for (Index i = 0; i < g.size(); ++i) g.data()[i] = normal(rng);
  const Eigen::HouseholderQR<Matrix> qr(g);
  const Matrix q = qr.householderQ();
  Vector ev(d);
  for (Index i = 0; i < d; ++i) ev(i) = eigenvalues[static_cast<std::size_t>(i)];
  Matrix cov = q * ev.asDiagonal() * q.transpose();
  return symmetric_part(cov);
}

LabeledDataset generate_synthetic(const SyntheticSpec& spec) {
  const auto d = static_cast<Index>(spec.d);
  const auto n_out = static_cast<Index>(spec.n_out);
  const auto n = static_cast<Index>(spec.n_samples);
  if (spec.input_covariance.rows() != d || spec.input_covariance.cols() != d) {
    throw Error(ErrorCode::ShapeMismatch, "input_covariance must be d x d");
  }
  if (spec.teacher.rows() != n_out || spec.teacher.cols() != d) {
    throw Error(ErrorCode::ShapeMismatch, "teacher must be n_out x d");
  }
  if (spec.label_noise_std < 0.0 || spec.label_noise_correlation < 0.0 || spec.label_noise_correlation >= 1.0) {
    throw Error(ErrorCode::InvalidArgument, "label noise parameters out of range");
  }
  if ((spec.input_covariance - spec.input_covariance.transpose()).cwiseAbs().maxCoeff() > 1e-12) {
    throw Error(ErrorCode::NonPositiveDefiniteCovariance, "input_covariance is not symmetric");
  }
  const Eigen::LLT<Matrix> llt(spec.input_covariance);
  if (llt.info() != Eigen::Success) {
    throw Error(ErrorCode::NonPositiveDefiniteCovariance, "input_covariance is not positive definite");
  }
  const Matrix chol = llt.matrixL();

  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal;

  LabeledDataset data;
  data.source = DataSource::Synthetic;
  data.n_out = spec.n_out;
  data.one_hot = !spec.continuous_labels;
  const auto side = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(spec.d))));
  data.side_length = side * side == spec.d ? side : 0;
  data.inputs.resize(n, d);
  data.outputs = Matrix::Zero(n, n_out);

  const double rho = spec.label_noise_correlation;
  Vector z(d);
  Vector noise(n_out);
  for (Index s = 0; s < n; ++s) {
    for (Index i = 0; i < d; ++i) z(i) = normal(rng);
    const Vector x = chol * z;
    data.inputs.row(s) = x.transpose();
    const double common = normal(rng);
    for (Index k = 0; k < n_out; ++k) {
      noise(k) = spec.label_noise_std * (std::sqrt(1.0 - rho) * normal(rng) + std::sqrt(rho) * common);
    }
    const Vector score = spec.teacher * x + noise;
    if (spec.continuous_labels) {
      data.outputs.row(s) = score.transpose();
    } else {
      Index best = 0;
      score.maxCoeff(&best);
      data.outputs(s, best) = 1.0;
    }
  }
  data.preprocessing = {{"synthetic", synthetic_spec_to_json(spec)}};
  return data;
}

void save_dataset(const std::filesystem::path& path, const LabeledDataset& data) {
  Container c;
  c.meta = {{"kind", "dataset"},
            {"source", to_string(data.source)},
            {"side_length", data.side_length},
            {"n_out", data.n_out},
            {"n_samples", data.size()},
            {"dim", data.dim()},
            {"one_hot", data.one_hot},
            {"preprocessing", data.preprocessing},
            {"fingerprint", dataset_fingerprint(data)}};
  c.matrices.emplace_back("inputs", data.inputs);
  c.matrices.emplace_back("outputs", data.outputs);
  write_container(path, c);
}

LabeledDataset load_dataset(const std::filesystem::path& path) {
  const Container c = read_container(path);
  if (c.meta.value("kind", "") != "dataset") throw Error(ErrorCode::BadContainer, path.string() + " is not a dataset cache");
  LabeledDataset data;
  data.inputs = c.matrix("inputs");
  data.outputs = c.matrix("outputs");
  data.source = data_source_from_string(c.meta.at("source").get<std::string>());
  data.side_length = c.meta.at("side_length").get<std::size_t>();
  data.n_out = c.meta.at("n_out").get<std::size_t>();
  data.one_hot = c.meta.at("one_hot").get<bool>();
  data.preprocessing = c.meta.at("preprocessing");
  if (c.meta.contains("fingerprint") && c.meta["fingerprint"].get<std::string>() != dataset_fingerprint(data)) {
    throw Error(ErrorCode::FingerprintMismatch, path.string() + ": stored fingerprint does not match contents");
  }
  return data;
}

std::string dataset_fingerprint(const LabeledDataset& data) {
  std::vector<std::uint8_t> bytes;
  const auto append_u64 = [&](std::uint64_t v) {
    for (int i = 0; i < 8; ++i) bytes.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  };
  const auto append_matrix = [&](const Matrix& m) {
    append_u64(static_cast<std::uint64_t>(m.rows()));
    append_u64(static_cast<std::uint64_t>(m.cols()));
    for (Index i = 0; i < m.size(); ++i) {
      std::uint64_t bits;
      std::memcpy(&bits, m.data() + i, 8);
      append_u64(bits);
    }
  };
  bytes.reserve(static_cast<std::size_t>(data.inputs.size() + data.outputs.size()) * 8 + 64);
  append_matrix(data.inputs);
  append_matrix(data.outputs);
  return sha256_hex(bytes);
}

nlohmann::json synthetic_spec_to_json(const SyntheticSpec& spec) {
  const auto rows = [](const Matrix& m) {
    nlohmann::json out = nlohmann::json::array();
    for (Index i = 0; i < m.rows(); ++i) {
      nlohmann::json row = nlohmann::json::array();
      for (Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
      out.push_back(row);
    }
    return out;
  };
  return {{"d", spec.d},
          {"n_out", spec.n_out},
          {"n_samples", spec.n_samples},
          {"input_covariance", rows(spec.input_covariance)},
          {"teacher", rows(spec.teacher)},
          {"label_noise_std", spec.label_noise_std},
          {"label_noise_correlation", spec.label_noise_correlation},
          {"continuous_labels", spec.continuous_labels},
          {"seed", spec.seed}};
}

namespace {

Matrix matrix_from_json(const nlohmann::json& j, Index rows, Index cols, const char* what) {
  if (!j.is_array() || static_cast<Index>(j.size()) != rows) {
    throw Error(ErrorCode::ShapeMismatch, std::string(what) + " has the wrong number of rows");
  }
  Matrix m(rows, cols);
  for (Index i = 0; i < rows; ++i) {
    const auto& row = j[static_cast<std::size_t>(i)];
    if (!row.is_array() || static_cast<Index>(row.size()) != cols) {
      throw Error(ErrorCode::ShapeMismatch, std::string(what) + " has the wrong number of columns");
    }
    for (Index k = 0; k < cols; ++k) m(i, k) = row[static_cast<std::size_t>(k)].get<double>();
  }
  return m;
}

}  // namespace

SyntheticSpec synthetic_spec_from_json(const nlohmann::json& j) {
  SyntheticSpec spec;
  spec.d = j.at("d").get<std::size_t>();
  spec.n_out = j.at("n_out").get<std::size_t>();
  spec.n_samples = j.at("n_samples").get<std::size_t>();
  spec.seed = j.value("seed", std::uint64_t{0});
  spec.label_noise_std = j.value("label_noise_std", 0.0);
  spec.label_noise_correlation = j.value("label_noise_correlation", 0.0);
  spec.continuous_labels = j.value("continuous_labels", false);
  const auto d = static_cast<Index>(spec.d);
  const auto n_out = static_cast<Index>(spec.n_out);

  // Either explicit matrices, or eigenvalues plus a seed for a random basis
  // and a Gaussian teacher.
  if (j.contains("input_covariance")) {
    spec.input_covariance = matrix_from_json(j["input_covariance"], d, d, "input_covariance");
  } else if (j.contains("covariance_eigenvalues")) {
    const auto ev = j["covariance_eigenvalues"].get<std::vector<double>>();
    if (ev.size() != spec.d) throw Error(ErrorCode::ShapeMismatch, "covariance_eigenvalues must have d entries");
    spec.input_covariance = random_covariance(ev, spec.seed ^ 0x9e3779b97f4a7c15ULL);
  } else {
    spec.input_covariance = Matrix::Identity(d, d);
  }
  if (j.contains("teacher")) {
    spec.teacher = matrix_from_json(j["teacher"], n_out, d, "teacher");
  } else {
    std::mt19937_64 rng(spec.seed ^ 0xd1b54a32d192ed03ULL);
    std::normal_distribution<double> normal(0.0, j.value("teacher_scale", 1.0));
    spec.teacher.resize(n_out, d);
    for (Index i = 0; i < spec.teacher.size(); ++i) spec.teacher.data()[i] = normal(rng);
    // Isotropic in whitened coordinates: teacher·x has covariance scale² I
    // regardless of the input spectrum.
    if (j.value("teacher_whitened", false)) {
      const Eigen::SelfAdjointEigenSolver<Matrix> eig(spec.input_covariance);
      if (eig.info() != Eigen::Success || eig.eigenvalues().minCoeff() <= 0.0) {
        throw Error(ErrorCode::NonPositiveDefiniteCovariance, "cannot whiten the teacher");
      }
      spec.teacher = spec.teacher * eig.operatorInverseSqrt();
    }
  }
  return spec;
}

namespace {

std::filesystem::path find_file(const std::filesystem::path& dir, const std::vector<std::string>& names) {
  for (const auto& name : names) {
    for (const char* ext : {"", ".gz"}) {
      const auto p = dir / (name + ext);
      if (std::filesystem::is_regular_file(p)) return p;
    }
  }
  throw Error(ErrorCode::Io, "no " + names.front() + "[.gz] in " + dir.string());
}

}  // namespace

RawImageSet load_source_dir(DataSource source, const std::filesystem::path& dir) {
  switch (source) {
    case DataSource::Mnist:
      return load_idx(find_file(dir, {"train-images-idx3-ubyte", "train-images.idx3-ubyte"}),
                      find_file(dir, {"train-labels-idx1-ubyte", "train-labels.idx1-ubyte"}), source);
    case DataSource::Emnist:
      return load_idx(find_file(dir, {"emnist-letters-train-images-idx3-ubyte"}),
                      find_file(dir, {"emnist-letters-train-labels-idx1-ubyte"}), source);
    case DataSource::Cifar10: {
      std::vector<std::filesystem::path> batches;
      for (int i = 1; i <= 5; ++i) batches.push_back(find_file(dir, {"data_batch_" + std::to_string(i) + ".bin"}));
      return load_cifar10(batches);
    }
    case DataSource::Synthetic:
      break;
  }
  throw Error(ErrorCode::InvalidArgument, "synthetic data has no source directory");
}

PreprocessOptions default_preprocess(DataSource source) {
  PreprocessOptions o;
  if (source == DataSource::Mnist || source == DataSource::Emnist) o.crop_to = 24;
  o.transpose = source == DataSource::Emnist;
  return o;
}

}  // namespace linfdt
