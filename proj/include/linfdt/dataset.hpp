#pragma once

#include "linfdt/matrix.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace linfdt {

enum class DataSource { Mnist, Emnist, Cifar10, Synthetic };

std::string_view to_string(DataSource source);
DataSource data_source_from_string(std::string_view name);

/// Number of classes for a dataset family (MNIST/CIFAR-10: 10, EMNIST Letters: 26).
std::size_t class_count(DataSource source);

/// Undecoded images as stored on disk. Pixels are laid out image-major, then
/// channel plane, then row, then column (the CIFAR-10 record order; IDX files
/// have a single plane).
struct RawImageSet {
  std::vector<std::uint8_t> pixels;
  std::vector<std::uint16_t> labels;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t channels = 1;
  DataSource source = DataSource::Mnist;

  std::size_t size() const { return labels.size(); }
  std::size_t image_bytes() const { return rows * cols * channels; }
  const std::uint8_t* image(std::size_t i) const { return pixels.data() + i * image_bytes(); }
};

struct LabeledDataset {
  Matrix inputs;   // N × d, row α is x_α
  Matrix outputs;  // N × n_out, row α is y_α
  std::size_t side_length = 0;  // a with d == a², 0 when d is not a square
  std::size_t n_out = 0;
  DataSource source = DataSource::Synthetic;
  bool one_hot = true;
  nlohmann::json preprocessing = nlohmann::json::object();

  std::size_t size() const { return static_cast<std::size_t>(inputs.rows()); }
  std::size_t dim() const { return static_cast<std::size_t>(inputs.cols()); }
};

struct SyntheticSpec {
  std::size_t d = 16;
  std::size_t n_out = 3;
  std::size_t n_samples = 20000;
  Matrix input_covariance;  // d × d, symmetric positive definite
  Matrix teacher;           // n_out × d
  double label_noise_std = 0.0;
  // Correlation between the label-noise components of different outputs.
  // Only meaningful with continuous labels.
  double label_noise_correlation = 0.0;
  bool continuous_labels = false;
  std::uint64_t seed = 0;
};

/// Reads an IDX3 image file and IDX1 label file (gzip-compressed files are
/// accepted). EMNIST Letters labels are shifted from 1..26 to 0..25.
RawImageSet load_idx(const std::filesystem::path& image_path,
                     const std::filesystem::path& label_path,
                     DataSource source = DataSource::Mnist);

/// Reads CIFAR-10 binary batches (3073-byte records, label byte first).
RawImageSet load_cifar10(const std::vector<std::filesystem::path>& batch_paths);

struct PreprocessOptions {
  std::size_t crop_to = 0;  // 0 keeps the raw side length
  bool grayscale = true;
  bool transpose = false;   // EMNIST stores images transposed
};

/// Center-crops, optionally converts RGB to luminance, scales to [0, 1] and
/// one-hot encodes the labels.
LabeledDataset preprocess(const RawImageSet& raw, const PreprocessOptions& options);

/// Gaussian inputs x ~ N(0, input_covariance). Labels are either
/// one-hot(argmax(teacher·x + noise)) or the continuous teacher·x + noise.
LabeledDataset generate_synthetic(const SyntheticSpec& spec);

/// Builds a covariance with the given eigenvalues in a random orthonormal
/// basis; a convenience for constructing SyntheticSpec instances.
Matrix random_covariance(const std::vector<double>& eigenvalues, std::uint64_t seed);

/// Finds the training files of a dataset family in `dir` under their
/// distribution names (IDX files with or without .gz; CIFAR-10
/// data_batch_1..5.bin) and loads them.
RawImageSet load_source_dir(DataSource source, const std::filesystem::path& dir);

/// MNIST and EMNIST: center crop to 24 (EMNIST also transposed). CIFAR-10:
/// full 32×32 grid converted to luminance.
PreprocessOptions default_preprocess(DataSource source);

/// Dataset cache: the shared binary container holding `inputs` and `outputs`
/// plus a JSON description of the source and preprocessing.
void save_dataset(const std::filesystem::path& path, const LabeledDataset& data);
LabeledDataset load_dataset(const std::filesystem::path& path);

/// SHA-256 (hex) over the dimensions and raw matrix bytes; stable across
/// cache rewrites.
std::string dataset_fingerprint(const LabeledDataset& data);

nlohmann::json synthetic_spec_to_json(const SyntheticSpec& spec);
SyntheticSpec synthetic_spec_from_json(const nlohmann::json& j);

}  // namespace linfdt
