#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "hrapr/errors.hpp"

namespace hrapr {

/// Dense feature vector with its Euclidean norm cached at construction.
/// Stored embeddings use float (the on-disk width); the synthetic field
/// produces double-precision ones.
template <typename Scalar>
class BasicEmbedding {
 public:
  using value_type = Scalar;

  BasicEmbedding() = default;

  explicit BasicEmbedding(std::vector<Scalar> values) : values_(std::move(values)) {
    double sq = 0.0;
    for (std::size_t i = 0; i < values_.size(); ++i) {
      const double v = static_cast<double>(values_[i]);
      if (!std::isfinite(v)) {
        throw Error("embedding component " + std::to_string(i) + " is not finite");
      }
      sq += v * v;
    }
    norm_ = std::sqrt(sq);
  }

  template <typename Other>
  static BasicEmbedding converted(const BasicEmbedding<Other>& other) {
    std::vector<Scalar> v(other.values().begin(), other.values().end());
    return BasicEmbedding(std::move(v));
  }

  std::size_t dim() const noexcept { return values_.size(); }
  double norm() const noexcept { return norm_; }
  std::span<const Scalar> values() const noexcept { return values_; }
  Scalar operator[](std::size_t i) const { return values_[i]; }

  friend bool operator==(const BasicEmbedding& a, const BasicEmbedding& b) {
    return a.values_ == b.values_;
  }

 private:
  std::vector<Scalar> values_;
  double norm_ = 0.0;
};

using FeatureEmbedding = BasicEmbedding<float>;

}  // namespace hrapr
