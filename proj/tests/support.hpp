#pragma once

#include <atomic>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

#include "hrapr/hrapr.hpp"

namespace hrapr::test {

// Scratch directory removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("hrapr_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
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

inline Quat random_quat(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  for (;;) {
    Quat q(n(rng), n(rng), n(rng), n(rng));
    if (q.norm() > 1e-3) return q;
  }
}

inline Vec3 random_vec(std::mt19937_64& rng, double half_extent) {
  std::uniform_real_distribution<double> u(-half_extent, half_extent);
  return Vec3(u(rng), u(rng), u(rng));
}

inline Pose random_pose(std::mt19937_64& rng, double half_extent = 10.0) {
  return Pose(random_vec(rng, half_extent), random_quat(rng));
}

inline std::vector<float> random_features(std::mt19937_64& rng, std::size_t dim) {
  std::normal_distribution<float> n(0.0f, 1.0f);
  std::vector<float> v(dim);
  for (auto& x : v) x = n(rng);
  return v;
}

inline std::vector<DBRecord> random_records(std::mt19937_64& rng, std::size_t count, std::size_t dim,
                                            double half_extent) {
  std::vector<DBRecord> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    out.push_back({"r" + std::to_string(i), random_pose(rng, half_extent), random_features(rng, dim)});
  }
  return out;
}

// A quick scene for tests that need realistic queries.
inline SceneSpec small_spec(std::uint64_t seed = 7) {
  SceneSpec s;
  s.seed = seed;
  s.dim = 64;
  s.num_train = 300;
  s.num_test_near = 60;
  s.num_test_far = 60;
  return s;
}

}  // namespace hrapr::test
