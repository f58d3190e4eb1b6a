#pragma once

#include "linfdt/error.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <random>
#include <string>

#define EXPECT_CODE(stmt, expected_code)                                                  \
  do {                                                                                    \
    try {                                                                                 \
      stmt;                                                                               \
      ADD_FAILURE() << "expected " << linfdt::to_string(expected_code) << ", no throw";   \
    } catch (const linfdt::Error& e_) {                                                   \
      EXPECT_EQ(e_.code(), expected_code) << e_.what();                                   \
    }                                                                                     \
  } while (0)

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("linfdt-test-" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};
