#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "consim/types.hpp"

namespace testing {

inline consim::Matrix random_matrix(consim::Index rows, consim::Index cols, std::uint64_t seed,
                                    double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  return consim::Matrix::NullaryExpr(rows, cols, [&] { return u(rng); });
}

// Fresh scratch directory under the system temp dir, removed on scope exit.
class TempDir {
 public:
  explicit TempDir(const std::string& name)
      : path_(std::filesystem::temp_directory_path() / ("consim_test_" + name)) {
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  std::filesystem::path operator/(const std::string& leaf) const { return path_ / leaf; }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

inline std::string data_file(const std::string& name) {
  return std::string(CONSIM_TEST_DATA_DIR) + "/" + name;
}

}  // namespace testing
