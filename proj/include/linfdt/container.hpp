#pragma once

#include "linfdt/matrix.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace linfdt {

/// Self-describing binary container shared by every persisted artifact.
///
/// Layout:
///   bytes 0..7    magic "LFDTBIN1"
///   bytes 8..15   header length H (uint64, little-endian)
///   next H bytes  UTF-8 JSON: {"meta": {...}, "matrices": [{"name","rows","cols"}, ...]}
///   payload       each listed matrix in order, row-major, IEEE-754 float64 little-endian
struct Container {
  nlohmann::json meta = nlohmann::json::object();
  std::vector<std::pair<std::string, Matrix>> matrices;

  const Matrix& matrix(const std::string& name) const;
  bool has(const std::string& name) const;
};

/// Writes to a sibling temp file and renames it into place.
void write_container(const std::filesystem::path& path, const Container& container);
Container read_container(const std::filesystem::path& path);

/// Atomic text write (temp file + rename).
void write_text_atomic(const std::filesystem::path& path, const std::string& text);

/// Comma-separated, 17 significant digits, one matrix row per line.
std::string matrix_to_csv(const Matrix& m);

std::string sha256_hex(std::span<const std::uint8_t> bytes);
std::string sha256_file(const std::filesystem::path& path);

/// JSON dump with numbers printed at 17 significant digits.
std::string dump_json(const nlohmann::json& j);

}  // namespace linfdt
