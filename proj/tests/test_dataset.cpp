#include "helpers.hpp"
#include "oracles.hpp"

#include "linfdt/container.hpp"
#include "linfdt/dataset.hpp"
#include "linfdt/moments.hpp"

#include <zlib.h>

#include <cstring>
#include <fstream>

using namespace linfdt;

namespace {

void put_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<std::uint8_t>(v >> s));
}

void write_bytes(const std::filesystem::path& p, const std::vector<std::uint8_t>& bytes) {
  std::ofstream f(p, std::ios::binary);
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

std::vector<std::uint8_t> idx_images(std::uint32_t n, std::uint32_t side, const std::vector<std::uint8_t>& pixels) {
  std::vector<std::uint8_t> out;
  put_be32(out, 0x803);
  put_be32(out, n);
  put_be32(out, side);
  put_be32(out, side);
  out.insert(out.end(), pixels.begin(), pixels.end());
  return out;
}

std::vector<std::uint8_t> idx_labels(const std::vector<std::uint8_t>& labels, std::uint32_t magic = 0x801) {
  std::vector<std::uint8_t> out;
  put_be32(out, magic);
  put_be32(out, static_cast<std::uint32_t>(labels.size()));
  out.insert(out.end(), labels.begin(), labels.end());
  return out;
}

std::vector<std::uint8_t> iota_bytes(std::size_t n, std::uint8_t start = 0) {
  std::vector<std::uint8_t> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = static_cast<std::uint8_t>(start + 7 * i);
  return v;
}

SyntheticSpec small_spec() {
  SyntheticSpec s;
  s.d = 4;
  s.n_out = 2;
  s.n_samples = 10000;
  s.input_covariance = Matrix::Identity(4, 4);
  s.teacher = Matrix::Ones(2, 4);
  s.seed = 5;
  return s;
}

}  // namespace

TEST(Idx, TwoImageFixtureRoundTrips) {
  TempDir dir;
  const auto pixels = iota_bytes(2 * 3 * 3);
  write_bytes(dir / "img", idx_images(2, 3, pixels));
  write_bytes(dir / "lbl", idx_labels({4, 9}));
  const RawImageSet raw = load_idx(dir / "img", dir / "lbl");
  EXPECT_EQ(raw.size(), 2u);
  EXPECT_EQ(raw.rows, 3u);
  EXPECT_EQ(raw.cols, 3u);
  EXPECT_EQ(raw.pixels, pixels);
  EXPECT_EQ(raw.labels, (std::vector<std::uint16_t>{4, 9}));
}

TEST(Idx, GzipFilesAreInflated) {
  TempDir dir;
  const auto pixels = iota_bytes(2 * 4 * 4, 3);
  const auto img = idx_images(2, 4, pixels);
  gzFile f = gzopen((dir / "img.gz").c_str(), "wb");
  gzwrite(f, img.data(), static_cast<unsigned>(img.size()));
  gzclose(f);
  write_bytes(dir / "lbl", idx_labels({1, 2}));
  EXPECT_EQ(load_idx(dir / "img.gz", dir / "lbl").pixels, pixels);
}

TEST(Idx, WrongLabelMagicIsBadMagic) {
  TempDir dir;
  write_bytes(dir / "img", idx_images(1, 2, iota_bytes(4)));
  write_bytes(dir / "lbl", idx_labels({0}, 0x803));
  EXPECT_CODE(load_idx(dir / "img", dir / "lbl"), ErrorCode::BadMagic);
}

TEST(Idx, CountMismatchAndTruncation) {
  TempDir dir;
  write_bytes(dir / "img", idx_images(2, 2, iota_bytes(8)));
  write_bytes(dir / "lbl", idx_labels({0}));
  EXPECT_CODE(load_idx(dir / "img", dir / "lbl"), ErrorCode::CountMismatch);

  write_bytes(dir / "short", idx_images(2, 2, iota_bytes(5)));
  write_bytes(dir / "lbl2", idx_labels({0, 1}));
  EXPECT_CODE(load_idx(dir / "short", dir / "lbl2"), ErrorCode::TruncatedFile);

  write_bytes(dir / "stub", {0, 0, 8});
  EXPECT_CODE(load_idx(dir / "stub", dir / "lbl2"), ErrorCode::TruncatedFile);
}

TEST(Idx, EmnistLabelsShiftToZeroBased) {
  TempDir dir;
  write_bytes(dir / "img", idx_images(2, 2, iota_bytes(8)));
  write_bytes(dir / "lbl", idx_labels({1, 26}));
  const RawImageSet raw = load_idx(dir / "img", dir / "lbl", DataSource::Emnist);
  EXPECT_EQ(raw.labels, (std::vector<std::uint16_t>{0, 25}));

  write_bytes(dir / "bad", idx_labels({0, 3}));
  EXPECT_CODE(load_idx(dir / "img", dir / "bad", DataSource::Emnist), ErrorCode::LabelOutOfRange);
  write_bytes(dir / "bad10", idx_labels({10, 3}));
  EXPECT_CODE(load_idx(dir / "img", dir / "bad10", DataSource::Mnist), ErrorCode::LabelOutOfRange);
}

TEST(Cifar, TwoRecordFixtureRoundTrips) {
  TempDir dir;
  std::vector<std::uint8_t> bytes;
  std::vector<std::uint8_t> pixels;
  for (std::uint8_t label : {3, 7}) {
    bytes.push_back(label);
    const auto px = iota_bytes(3072, label);
    bytes.insert(bytes.end(), px.begin(), px.end());
    pixels.insert(pixels.end(), px.begin(), px.end());
  }
  write_bytes(dir / "batch.bin", bytes);
  const RawImageSet raw = load_cifar10({dir / "batch.bin"});
  EXPECT_EQ(raw.size(), 2u);
  EXPECT_EQ(raw.channels, 3u);
  EXPECT_EQ(raw.rows, 32u);
  EXPECT_EQ(raw.pixels, pixels);
  EXPECT_EQ(raw.labels, (std::vector<std::uint16_t>{3, 7}));
}

TEST(Cifar, EmptyListAndBadRecords) {
  EXPECT_EQ(load_cifar10({}).size(), 0u);
  TempDir dir;
  write_bytes(dir / "odd.bin", std::vector<std::uint8_t>(3072, 0));
  EXPECT_CODE(load_cifar10({dir / "odd.bin"}), ErrorCode::BadRecordSize);
  std::vector<std::uint8_t> rec(3073, 0);
  rec[0] = 10;
  write_bytes(dir / "label.bin", rec);
  EXPECT_CODE(load_cifar10({dir / "label.bin"}), ErrorCode::LabelOutOfRange);
}

TEST(Preprocess, CenterCropTo24) {
  RawImageSet raw;
  raw.rows = raw.cols = 28;
  raw.pixels.resize(28 * 28);
  for (std::size_t r = 0; r < 28; ++r) {
    for (std::size_t c = 0; c < 28; ++c) raw.pixels[r * 28 + c] = static_cast<std::uint8_t>(r * 9 + c);
  }
  raw.labels = {6};
  const LabeledDataset data = preprocess(raw, {.crop_to = 24});
  EXPECT_EQ(data.dim(), 576u);
  EXPECT_EQ(data.side_length, 24u);
  EXPECT_GE(data.inputs.minCoeff(), 0.0);
  EXPECT_LE(data.inputs.maxCoeff(), 1.0);
  // Pixel (0, 0) of the crop is raw pixel (2, 2).
  EXPECT_EQ(data.inputs(0, 0), (2 * 9 + 2) / 255.0);
  EXPECT_EQ(data.inputs(0, 23 * 24 + 23), (25 * 9 + 25) / 255.0);
  EXPECT_EQ(data.outputs.row(0).sum(), 1.0);
  EXPECT_EQ(data.outputs(0, 6), 1.0);
}

TEST(Preprocess, IdentityCropZeroImageAndErrors) {
  RawImageSet raw;
  raw.rows = raw.cols = 4;
  raw.pixels = iota_bytes(32);
  raw.pixels.resize(32);
  std::fill(raw.pixels.begin() + 16, raw.pixels.end(), 0);
  raw.labels = {0, 9};
  const LabeledDataset data = preprocess(raw, {.crop_to = 4});
  EXPECT_EQ(data.dim(), 16u);
  for (Index p = 0; p < 16; ++p) EXPECT_EQ(data.inputs(0, p), raw.pixels[static_cast<std::size_t>(p)] / 255.0);
  EXPECT_TRUE(data.inputs.row(1).isZero(0.0));
  EXPECT_CODE(preprocess(raw, {.crop_to = 5}), ErrorCode::CropTooLarge);
}

TEST(Preprocess, TransposeSwapsAxes) {
  RawImageSet raw;
  raw.rows = raw.cols = 3;
  raw.pixels = iota_bytes(9);
  raw.labels = {0};
  const LabeledDataset plain = preprocess(raw, {});
  const LabeledDataset flipped = preprocess(raw, {.transpose = true});
  for (Index r = 0; r < 3; ++r) {
    for (Index c = 0; c < 3; ++c) EXPECT_EQ(plain.inputs(0, r * 3 + c), flipped.inputs(0, c * 3 + r));
  }
}

TEST(Preprocess, CifarLuminance) {
  RawImageSet raw;
  raw.source = DataSource::Cifar10;
  raw.rows = raw.cols = 2;
  raw.channels = 3;
  raw.pixels = {10, 20, 30, 40, 50, 60, 70, 80, 90, 100, 110, 120};
  raw.labels = {9};
  const LabeledDataset data = preprocess(raw, {});
  EXPECT_NEAR(data.inputs(0, 0), (0.299 * 10 + 0.587 * 50 + 0.114 * 90) / 255.0, 1e-15);
  EXPECT_EQ(data.n_out, 10u);
  EXPECT_CODE(preprocess(raw, {.grayscale = false}), ErrorCode::InvalidArgument);
}

TEST(Synthetic, IdentityCovarianceIsRecovered) {
  SyntheticSpec s = small_spec();
  s.label_noise_std = 0.1;
  const LabeledDataset data = generate_synthetic(s);
  const Matrix cov = data.inputs.transpose() * data.inputs / static_cast<double>(data.size());
  EXPECT_LT(relative_frobenius(cov, Matrix::Identity(4, 4)), 0.05);
  for (Index r = 0; r < static_cast<Index>(data.size()); ++r) ASSERT_EQ(data.outputs.row(r).sum(), 1.0);
}

TEST(Synthetic, NoiselessContinuousLabelsRecoverTeacher) {
  SyntheticSpec s = small_spec();
  std::mt19937_64 rng(3);
  s.teacher = oracle::random_matrix(2, 4, rng);
  s.input_covariance = random_covariance({0.5, 1.0, 2.0, 3.0}, 9);
  s.continuous_labels = true;
  const LabeledDataset data = generate_synthetic(s);
  const MomentPair m = full_moments(data);
  const Matrix w = m.sigma_yx * m.sigma_xx.inverse();
  EXPECT_LT(relative_frobenius(w, s.teacher), 1e-10);
}

TEST(Synthetic, DeterministicAndValidated) {
  const SyntheticSpec s = small_spec();
  const LabeledDataset a = generate_synthetic(s);
  const LabeledDataset b = generate_synthetic(s);
  EXPECT_EQ(a.inputs, b.inputs);
  EXPECT_EQ(a.outputs, b.outputs);
  EXPECT_EQ(dataset_fingerprint(a), dataset_fingerprint(b));

  SyntheticSpec bad = s;
  bad.input_covariance(0, 0) = -1.0;
  EXPECT_CODE(generate_synthetic(bad), ErrorCode::NonPositiveDefiniteCovariance);
  bad = s;
  bad.input_covariance(0, 1) = 1e-9;
  EXPECT_CODE(generate_synthetic(bad), ErrorCode::NonPositiveDefiniteCovariance);
}

TEST(Synthetic, JsonSpecWithWhitenedTeacher) {
  const nlohmann::json j = {{"d", 4},
                            {"n_out", 2},
                            {"n_samples", 50},
                            {"seed", 2},
                            {"covariance_eigenvalues", {0.1, 1.0, 2.0, 4.0}},
                            {"teacher_scale", 0.5},
                            {"teacher_whitened", true}};
  const SyntheticSpec s = synthetic_spec_from_json(j);
  // Whitening right-multiplies the plain Gaussian teacher by Σ^{-1/2}.
  const Eigen::SelfAdjointEigenSolver<Matrix> eig(s.input_covariance);
  const Matrix g = s.teacher * eig.operatorSqrt();
  const SyntheticSpec plain = synthetic_spec_from_json({{"d", 4}, {"n_out", 2}, {"n_samples", 50}, {"seed", 2},
                                                        {"covariance_eigenvalues", {0.1, 1.0, 2.0, 4.0}},
                                                        {"teacher_scale", 0.5}});
  EXPECT_LT(relative_frobenius(g, plain.teacher), 1e-12);
  const SyntheticSpec back = synthetic_spec_from_json(synthetic_spec_to_json(s));
  EXPECT_EQ(back.teacher, s.teacher);
  EXPECT_EQ(back.input_covariance, s.input_covariance);
}

TEST(Cache, RoundTripIsBitIdentical) {
  TempDir dir;
  SyntheticSpec s = small_spec();
  s.n_samples = 100;
  s.label_noise_std = 0.3;
  const LabeledDataset data = generate_synthetic(s);
  save_dataset(dir / "ds.lfdt", data);
  const LabeledDataset back = load_dataset(dir / "ds.lfdt");
  EXPECT_EQ(std::memcmp(back.inputs.data(), data.inputs.data(), sizeof(double) * data.inputs.size()), 0);
  EXPECT_EQ(back.outputs, data.outputs);
  EXPECT_EQ(back.side_length, 2u);
  EXPECT_EQ(back.n_out, 2u);

  save_dataset(dir / "again.lfdt", data);
  EXPECT_EQ(sha256_file(dir / "ds.lfdt"), sha256_file(dir / "again.lfdt"));
}

TEST(Cache, TamperedPayloadFailsFingerprint) {
  TempDir dir;
  SyntheticSpec s = small_spec();
  s.n_samples = 10;
  save_dataset(dir / "ds.lfdt", generate_synthetic(s));
  std::fstream f(dir / "ds.lfdt", std::ios::in | std::ios::out | std::ios::binary);
  f.seekp(-3, std::ios::end);
  f.put('\x7f');
  f.close();
  EXPECT_CODE(load_dataset(dir / "ds.lfdt"), ErrorCode::FingerprintMismatch);
}

TEST(SourceDir, StandardFileNames) {
  TempDir dir;
  std::filesystem::create_directories(dir / "mnist");
  write_bytes(dir / "mnist/train-images-idx3-ubyte", idx_images(2, 28, iota_bytes(2 * 28 * 28)));
  write_bytes(dir / "mnist/train-labels-idx1-ubyte", idx_labels({3, 9}));
  const RawImageSet raw = load_source_dir(DataSource::Mnist, dir / "mnist");
  EXPECT_EQ(raw.size(), 2u);
  const LabeledDataset data = preprocess(raw, default_preprocess(DataSource::Mnist));
  EXPECT_EQ(data.dim(), 576u);
  EXPECT_CODE(load_source_dir(DataSource::Emnist, dir / "mnist"), ErrorCode::Io);
  EXPECT_TRUE(default_preprocess(DataSource::Emnist).transpose);
  EXPECT_EQ(default_preprocess(DataSource::Cifar10).crop_to, 0u);
  EXPECT_TRUE(default_preprocess(DataSource::Cifar10).grayscale);
}
