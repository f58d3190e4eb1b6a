#include "linfdt/container.hpp"

#include "linfdt/error.hpp"

#include <openssl/evp.h>

#include <array>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

namespace linfdt {

namespace {

constexpr std::array<char, 8> kMagic = {'L', 'F', 'D', 'T', 'B', 'I', 'N', '1'};

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

template <typename T>
T to_little(T v) {
  if constexpr (std::endian::native == std::endian::big) {
    auto bytes = std::bit_cast<std::array<std::uint8_t, sizeof(T)>>(v);
    std::reverse(bytes.begin(), bytes.end());
    return std::bit_cast<T>(bytes);
  } else {
    return v;
  }
}

void put_u64(std::string& out, std::uint64_t v) {
  v = to_little(v);
  char buf[8];
  std::memcpy(buf, &v, 8);
  out.append(buf, 8);
}

std::uint64_t get_u64(const char* p) {
  std::uint64_t v;
  std::memcpy(&v, p, 8);
  return to_little(v);
}

std::filesystem::path temp_sibling(const std::filesystem::path& path) {
  auto tmp = path;
  tmp += ".tmp";
  return tmp;
}

void write_bytes_atomic(const std::filesystem::path& path, const std::string& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = temp_sibling(path);
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::Io, "cannot open " + tmp.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(ErrorCode::Io, "write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw Error(ErrorCode::Io, "rename to " + path.string() + " failed: " + ec.message());
}

void dump_number(std::string& out, double v) {
  if (!std::isfinite(v)) {
    out += "null";
    return;
  }
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  out += buf;
}

void dump_value(std::string& out, const nlohmann::json& j, int indent, int depth) {
  const auto newline = [&](int d) {
    out += '\n';
    out.append(static_cast<std::size_t>(indent * d), ' ');
  };
  switch (j.type()) {
    case nlohmann::json::value_t::object: {
      if (j.empty()) {
        out += "{}";
        return;
      }
      out += '{';
      bool first = true;
      for (auto it = j.begin(); it != j.end(); ++it) {
        if (!first) out += ',';
        first = false;
        newline(depth + 1);
        out += nlohmann::json(it.key()).dump();
        out += ": ";
        dump_value(out, it.value(), indent, depth + 1);
      }
      newline(depth);
      out += '}';
      return;
    }
    case nlohmann::json::value_t::array: {
      if (j.empty()) {
        out += "[]";
        return;
      }
      // Flat numeric arrays stay on one line.
      const bool scalar_row = std::all_of(j.begin(), j.end(), [](const auto& e) { return e.is_primitive(); });
      out += '[';
      bool first = true;
      for (const auto& e : j) {
        if (!first) out += scalar_row ? ", " : ",";
        first = false;
        if (!scalar_row) newline(depth + 1);
        dump_value(out, e, indent, depth + 1);
      }
      if (!scalar_row) newline(depth);
      out += ']';
      return;
    }
    case nlohmann::json::value_t::number_float:
      dump_number(out, j.get<double>());
      return;
    default:
      out += j.dump();
  }
}

}  // namespace

const Matrix& Container::matrix(const std::string& name) const {
  for (const auto& [n, m] : matrices) {
    if (n == name) return m;
  }
  throw Error(ErrorCode::BadContainer, "container has no matrix named '" + name + "'");
}

bool Container::has(const std::string& name) const {
  for (const auto& entry : matrices) {
    if (entry.first == name) return true;
  }
  return false;
}

void write_container(const std::filesystem::path& path, const Container& container) {
  nlohmann::json header;
  header["meta"] = container.meta;
  header["matrices"] = nlohmann::json::array();
  std::size_t payload = 0;
  for (const auto& [name, m] : container.matrices) {
    header["matrices"].push_back({{"name", name}, {"rows", m.rows()}, {"cols", m.cols()}});
    payload += static_cast<std::size_t>(m.size()) * 8;
  }
  const std::string header_text = dump_json(header);

  std::string bytes;
  bytes.reserve(16 + header_text.size() + payload);
  bytes.append(kMagic.data(), kMagic.size());
  put_u64(bytes, header_text.size());
  bytes += header_text;
  for (const auto& entry : container.matrices) {
    const Matrix& m = entry.second;
    for (Index i = 0; i < m.size(); ++i) {
      const double v = to_little(m.data()[i]);
      char buf[8];
      std::memcpy(buf, &v, 8);
      bytes.append(buf, 8);
    }
  }
  write_bytes_atomic(path, bytes);
}

Container read_container(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic.data(), kMagic.size()) != 0) {
    throw Error(ErrorCode::BadContainer, path.string() + " is not a container file");
  }
  const std::uint64_t header_len = get_u64(bytes.data() + 8);
  if (16 + header_len > bytes.size()) throw Error(ErrorCode::TruncatedFile, path.string() + ": header truncated");

  Container c;
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(header_len));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::BadContainer, path.string() + ": bad header: " + e.what());
  }
  c.meta = header.value("meta", nlohmann::json::object());

  std::size_t offset = 16 + header_len;
  for (const auto& entry : header.at("matrices")) {
    const auto rows = entry.at("rows").get<Index>();
    const auto cols = entry.at("cols").get<Index>();
    const auto count = static_cast<std::size_t>(rows * cols);
    if (offset + count * 8 > bytes.size()) {
      throw Error(ErrorCode::TruncatedFile, path.string() + ": payload truncated");
    }
    Matrix m(rows, cols);
    for (std::size_t i = 0; i < count; ++i) {
      double v;
      std::memcpy(&v, bytes.data() + offset + i * 8, 8);
      m.data()[i] = to_little(v);
    }
    offset += count * 8;
    c.matrices.emplace_back(entry.at("name").get<std::string>(), std::move(m));
  }
  if (offset != bytes.size()) throw Error(ErrorCode::BadContainer, path.string() + ": trailing bytes");
  return c;
}

void write_text_atomic(const std::filesystem::path& path, const std::string& text) {
  write_bytes_atomic(path, text);
}

std::string matrix_to_csv(const Matrix& m) {
  std::string out;
  char buf[32];
  for (Index i = 0; i < m.rows(); ++i) {
    for (Index j = 0; j < m.cols(); ++j) {
      if (j) out += ',';
      std::snprintf(buf, sizeof buf, "%.17g", m(i, j));
      out += buf;
    }
    out += '\n';
  }
  return out;
}

std::string sha256_hex(std::span<const std::uint8_t> bytes) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest.data(), &len, EVP_sha256(), nullptr) != 1) {
    throw Error(ErrorCode::Io, "SHA-256 digest failed");
  }
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  out.reserve(len * 2);
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[digest[i] >> 4];
    out += hex[digest[i] & 0xf];
  }
  return out;
}

std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return sha256_hex(bytes);
}

std::string dump_json(const nlohmann::json& j) {
  std::string out;
  dump_value(out, j, 2, 0);
  out += '\n';
  return out;
}

}  // namespace linfdt
