#pragma once

#include <atomic>
#include <filesystem>
#include <string>

#include <unistd.h>

#include "ovps/geometry.hpp"
#include "ovps/random.hpp"
#include "ovps/synthetic.hpp"

namespace testing {

// Fresh directory under the system temp dir, removed on scope exit.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("ovps_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline ovps::Box random_box(ovps::Rng& rng, double extent = 100.0) {
  const double x = rng.uniform(0.0, extent), y = rng.uniform(0.0, extent);
  return {x, y, x + rng.uniform(1.0, extent / 2), y + rng.uniform(1.0, extent / 2)};
}

// Small world for fast tests; same generator as the full-size one.
inline ovps::SyntheticConfig small_world(std::uint64_t seed = 0, std::size_t n_images = 60) {
  ovps::SyntheticConfig cfg;
  cfg.seed = seed;
  cfg.n_images = n_images;
  return cfg;
}

}  // namespace testing
