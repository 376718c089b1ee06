#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "hrapr/embedding.hpp"
#include "hrapr/errors.hpp"
#include "hrapr/feature_store.hpp"
#include "hrapr/geometry.hpp"
#include "hrapr/io.hpp"
#include "hrapr/query_file.hpp"
#include "hrapr/uncertainty.hpp"

namespace hrapr {

/// Parameters of a synthetic benchmark scene. Distances in meters, angles in
/// degrees.
struct SceneSpec {
  std::uint64_t seed = 42;
  std::size_t dim = 1024;
  std::size_t num_train = 2000;
  std::size_t num_test_near = 1000;
  std::size_t num_test_far = 1000;
  double extent = 60.0;  // side of the square holding the trajectory waypoints
  double height = 3.0;   // vertical span of the waypoints
  std::size_t num_waypoints = 12;
  double near_radius = 2.0;
  double near_angle = 10.0;
  double far_max_distance = 10.0;  // far queries stay within this of their anchor
  double freq_scale = 0.3;         // std of the field frequencies
  double feature_noise = 0.1;      // std of query embedding noise
  double apr_trans_floor = 0.3;
  double apr_trans_gain = 0.4;
  double apr_rot_floor = 0.5;
  double apr_rot_gain = 2.0;

  void validate() const {
    if (dim == 0) throw GenerationError("dim must be positive");
    if (!(near_radius > 0.0)) throw GenerationError("near_radius must be positive");
    if (!(near_angle > 0.0 && near_angle < 60.0)) throw GenerationError("near_angle must be in (0, 60)");
    if (!(freq_scale >= 0.0) || !(feature_noise >= 0.0)) {
      throw GenerationError("frequency scale and feature noise must be nonnegative");
    }
    if (!(apr_trans_floor >= 0.0 && apr_trans_gain >= 0.0 && apr_rot_floor >= 0.0 && apr_rot_gain >= 0.0)) {
      throw GenerationError("APR noise coefficients must be nonnegative");
    }
    if (!(extent >= 0.0 && height >= 0.0)) throw GenerationError("extent and height must be nonnegative");
    if ((num_test_near > 0 || num_test_far > 0) && num_train == 0) {
      throw GenerationError("test queries need at least one training pose");
    }
    if (num_waypoints < 2) throw GenerationError("need at least two waypoints");
  }

  // Large-scene defaults; near/far split at 2 m / 10 degrees.
  static SceneSpec outdoor() { return SceneSpec{}; }

  // Room-scale scene.
  static SceneSpec indoor() {
    SceneSpec s;
    s.extent = 4.0;
    s.height = 1.0;
    s.num_waypoints = 8;
    s.near_radius = 0.3;
    s.near_angle = 10.0;
    s.far_max_distance = 1.5;
    s.freq_scale = 2.0;
    s.apr_trans_floor = 0.04;
    s.apr_trans_gain = 0.4;
    s.apr_rot_floor = 1.5;
    s.apr_rot_gain = 8.0;
    return s;
  }
};

/// Random-Fourier-feature field over poses: component i is
/// sin(w_i . z(p) + phi_i) with z(p) = (tx, ty, tz, qw, qx, qy, qz).
class FeatureField {
 public:
  static constexpr int kPoseCoords = 7;
  using Jacobian = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

  FeatureField(Eigen::Matrix<double, Eigen::Dynamic, kPoseCoords, Eigen::RowMajor> freqs,
               Eigen::VectorXd phases)
      : freqs_(std::move(freqs)), phases_(std::move(phases)) {
    if (freqs_.rows() != phases_.size()) throw Error("field frequency/phase size mismatch");
    // RMS frequency; generate() draws entries with exactly this std.
    freq_scale_ = freqs_.size() == 0 ? 0.0 : std::sqrt(freqs_.squaredNorm() / static_cast<double>(freqs_.size()));
  }

  /// The field is a function of (seed, dim, freq_scale) only.
  static FeatureField generate(std::uint64_t seed, std::size_t dim, double freq_scale) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), 0xF1E1Du};
    std::mt19937_64 rng(seq);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
    Eigen::Matrix<double, Eigen::Dynamic, kPoseCoords, Eigen::RowMajor> w(static_cast<Eigen::Index>(dim),
                                                                             kPoseCoords);
    Eigen::VectorXd phi(static_cast<Eigen::Index>(dim));
    for (Eigen::Index i = 0; i < w.rows(); ++i) {
      for (int k = 0; k < kPoseCoords; ++k) w(i, k) = freq_scale * normal(rng);
      phi[i] = phase(rng);
    }
    FeatureField f(std::move(w), std::move(phi));
    f.freq_scale_ = freq_scale;
    return f;
  }

  std::size_t dim() const noexcept { return static_cast<std::size_t>(phases_.size()); }
  double freq_scale() const noexcept { return freq_scale_; }

  static Eigen::Matrix<double, kPoseCoords, 1> coords(const Pose& p) {
    const auto a = p.to_array();
    return Eigen::Map<const Eigen::Matrix<double, kPoseCoords, 1>>(a.data());
  }

  void evaluate_into(const Pose& p, std::span<double> out) const {
    const auto z = coords(p);
    for (Eigen::Index i = 0; i < phases_.size(); ++i) {
      out[static_cast<std::size_t>(i)] = std::sin(freqs_.row(i).dot(z) + phases_[i]);
    }
  }

  BasicEmbedding<double> evaluate(const Pose& p) const {
    std::vector<double> v(dim());
    evaluate_into(p, v);
    return BasicEmbedding<double>(std::move(v));
  }

  /// Float32 embedding as stored in a database.
  FeatureEmbedding embedding(const Pose& p) const {
    const auto v = evaluate(p);
    return FeatureEmbedding::converted(v);
  }

  /// d field / d z, dim x 7.
  Jacobian coord_jacobian(const Pose& p) const {
    const auto z = coords(p);
    Jacobian j(phases_.size(), kPoseCoords);
    for (Eigen::Index i = 0; i < phases_.size(); ++i) {
      j.row(i) = std::cos(freqs_.row(i).dot(z) + phases_[i]) * freqs_.row(i);
    }
    return j;
  }

  /// d field / d (t, body rotation vector), dim x 6. The rotation block is the
  /// derivative of q * exp(delta) at delta = 0, i.e. dq/d delta_k = q * (0, e_k) / 2.
  Jacobian pose_jacobian(const Pose& p) const {
    const Jacobian jz = coord_jacobian(p);
    Eigen::Matrix<double, kPoseCoords, 6> dz = Eigen::Matrix<double, kPoseCoords, 6>::Zero();
    dz.block<3, 3>(0, 0).setIdentity();
    const Quat& q = p.rotation();
    for (int k = 0; k < 3; ++k) {
      Eigen::Vector3d e = Eigen::Vector3d::Zero();
      e[k] = 1.0;
      const Quat d = q * Quat(0.0, e.x(), e.y(), e.z());
      dz(3, 3 + k) = 0.5 * d.w();
      dz(4, 3 + k) = 0.5 * d.x();
      dz(5, 3 + k) = 0.5 * d.y();
      dz(6, 3 + k) = 0.5 * d.z();
    }
    return jz * dz;
  }

  /// Largest |w_i| row norm; bounds the Lipschitz constant of each component.
  double max_frequency_norm() const {
    return phases_.size() == 0 ? 0.0 : freqs_.rowwise().norm().maxCoeff();
  }

 private:
  Eigen::Matrix<double, Eigen::Dynamic, kPoseCoords, Eigen::RowMajor> freqs_;
  Eigen::VectorXd phases_;
  double freq_scale_ = 0.0;
};

struct SynthQuery {
  QueryInput input;  // predicted pose, noisy embedding, ground truth
  bool near = false;
  double dist_to_train = 0.0;
};

struct SynthScene {
  SceneSpec spec;
  std::shared_ptr<const FeatureField> field;
  std::vector<DBRecord> train;
  std::vector<SynthQuery> queries;

  PoseFeatureDB database(IndexOptions opts = {}) const { return build_database(train, opts, spec.dim); }

  std::vector<QueryInput> query_inputs() const {
    std::vector<QueryInput> out;
    out.reserve(queries.size());
    for (const auto& q : queries) out.push_back(q.input);
    return out;
  }

  QuerySet query_set() const {
    QuerySet s;
    s.dim = spec.dim;
    s.has_gt = true;
    s.queries = query_inputs();
    return s;
  }
};

namespace detail {

inline Vec3 random_unit(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  for (;;) {
    Vec3 v(n(rng), n(rng), n(rng));
    const double len = v.norm();
    if (len > 1e-12) return v / len;
  }
}

inline std::vector<Pose> sample_trajectory(const SceneSpec& spec, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> tilt(0.0, 5.0 * kDegToRad);
  std::vector<Pose> waypoints;
  waypoints.reserve(spec.num_waypoints);
  for (std::size_t i = 0; i < spec.num_waypoints; ++i) {
    const Vec3 t(spec.extent * unit(rng), spec.extent * unit(rng), spec.height * unit(rng));
    const double yaw = (2.0 * unit(rng) - 1.0) * std::numbers::pi;
    const Quat q = Quat(Eigen::AngleAxisd(yaw, Vec3::UnitZ())) * Quat(Eigen::AngleAxisd(tilt(rng), Vec3::UnitY())) *
                   Quat(Eigen::AngleAxisd(tilt(rng), Vec3::UnitX()));
    waypoints.emplace_back(t, q);
  }
  std::vector<Pose> train;
  train.reserve(spec.num_train);
  const double segments = static_cast<double>(spec.num_waypoints - 1);
  for (std::size_t i = 0; i < spec.num_train; ++i) {
    const double u = spec.num_train == 1 ? 0.0 : segments * static_cast<double>(i) / static_cast<double>(spec.num_train - 1);
    const auto k = std::min(static_cast<std::size_t>(u), spec.num_waypoints - 2);
    train.push_back(slerp(waypoints[k], waypoints[k + 1], u - static_cast<double>(k)));
  }
  return train;
}

inline double min_distance(const std::vector<DBRecord>& train, const Vec3& x) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& r : train) best = std::min(best, (r.pose.translation() - x).norm());
  return best;
}

}  // namespace detail

/// Builds a deterministic scene from `spec`. Training embeddings are the exact
/// field values (rounded to float); noise only touches test queries.
inline SynthScene generate_scene(const SceneSpec& spec) {
  spec.validate();
  const double far_min = 1.25 * spec.near_radius;
  if (spec.num_test_far > 0 && spec.far_max_distance <= far_min) {
    throw GenerationError("far queries requested but far_max_distance <= 1.25 * near_radius");
  }

  SynthScene scene;
  scene.spec = spec;
  scene.field = std::make_shared<const FeatureField>(FeatureField::generate(spec.seed, spec.dim, spec.freq_scale));

  std::seed_seq seq{static_cast<std::uint32_t>(spec.seed), static_cast<std::uint32_t>(spec.seed >> 32), 0x5CE4Eu};
  std::mt19937_64 rng(seq);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);

  const auto train_poses = detail::sample_trajectory(spec, rng);
  scene.train.reserve(train_poses.size());
  for (std::size_t i = 0; i < train_poses.size(); ++i) {
    const auto e = scene.field->embedding(train_poses[i]);
    scene.train.push_back(
        DBRecord{"train_" + std::to_string(i), train_poses[i], std::vector<float>(e.values().begin(), e.values().end())});
  }

  auto pick_anchor = [&]() -> const Pose& {
    const auto j = static_cast<std::size_t>(unit(rng) * static_cast<double>(train_poses.size()));
    return train_poses[std::min(j, train_poses.size() - 1)];
  };

  struct GroundTruth {
    Pose pose;
    bool near;
  };
  std::vector<GroundTruth> truths;
  truths.reserve(spec.num_test_near + spec.num_test_far);
  for (std::size_t i = 0; i < spec.num_test_near; ++i) {
    const Pose& a = pick_anchor();
    const Vec3 t = a.translation() + detail::random_unit(rng) * (0.9 * spec.near_radius * unit(rng));
    const double angle = 0.9 * spec.near_angle * unit(rng) * kDegToRad;
    truths.push_back({Pose(t, a.rotation() * axis_angle(detail::random_unit(rng), angle)), true});
  }
  const std::size_t max_attempts = 1000 * spec.num_test_far + 1000;
  std::size_t attempts = 0;
  for (std::size_t i = 0; i < spec.num_test_far;) {
    if (++attempts > max_attempts) {
      throw GenerationError("could not place far queries; scene extent too small for the near radius");
    }
    const Pose& a = pick_anchor();
    const double r = far_min + (spec.far_max_distance - far_min) * unit(rng);
    const Vec3 t = a.translation() + detail::random_unit(rng) * r;
    if (detail::min_distance(scene.train, t) <= far_min) continue;
    const double angle = spec.near_angle * (1.25 + 1.75 * unit(rng)) * kDegToRad;
    truths.push_back({Pose(t, a.rotation() * axis_angle(detail::random_unit(rng), angle)), false});
    ++i;
  }

  scene.queries.reserve(truths.size());
  std::size_t near_id = 0, far_id = 0;
  for (const auto& gt : truths) {
    const double dist = detail::min_distance(scene.train, gt.pose.translation());
    const double trans_std = spec.apr_trans_floor + spec.apr_trans_gain * dist;
    const double rot_std = spec.apr_rot_floor + spec.apr_rot_gain * dist;
    const Vec3 dt(normal(rng) * trans_std, normal(rng) * trans_std, normal(rng) * trans_std);
    const double dr = std::abs(normal(rng) * rot_std) * kDegToRad;
    const Pose predicted(gt.pose.translation() + dt, gt.pose.rotation() * axis_angle(detail::random_unit(rng), dr));

    std::vector<double> f(spec.dim);
    scene.field->evaluate_into(gt.pose, f);
    std::vector<float> noisy(spec.dim);
    for (std::size_t k = 0; k < spec.dim; ++k) {
      const double eps = spec.feature_noise > 0.0 ? spec.feature_noise * normal(rng) : 0.0;
      noisy[k] = static_cast<float>(f[k] + eps);
    }

    SynthQuery q;
    q.input.id = gt.near ? "near_" + std::to_string(near_id++) : "far_" + std::to_string(far_id++);
    q.input.predicted = predicted;
    q.input.embedding = FeatureEmbedding(std::move(noisy));
    q.input.gt = gt.pose;
    q.input.label = gt.near ? "near" : "far";
    q.near = gt.near;
    q.dist_to_train = dist;
    scene.queries.push_back(std::move(q));
  }
  return scene;
}

// ---------------------------------------------------------------------------
// Manifest: `key = value` lines describing the spec and run defaults.

inline std::string scene_manifest(const SceneSpec& s, const std::map<std::string, std::string>& extra = {}) {
  std::map<std::string, std::string> kv = extra;
  kv["seed"] = std::to_string(s.seed);
  kv["dim"] = std::to_string(s.dim);
  kv["num_train"] = std::to_string(s.num_train);
  kv["num_test_near"] = std::to_string(s.num_test_near);
  kv["num_test_far"] = std::to_string(s.num_test_far);
  kv["num_waypoints"] = std::to_string(s.num_waypoints);
  kv["extent"] = io::format_real(s.extent);
  kv["height"] = io::format_real(s.height);
  kv["near_radius"] = io::format_real(s.near_radius);
  kv["near_angle"] = io::format_real(s.near_angle);
  kv["far_max_distance"] = io::format_real(s.far_max_distance);
  kv["freq_scale"] = io::format_real(s.freq_scale);
  kv["feature_noise"] = io::format_real(s.feature_noise);
  kv["apr_trans_floor"] = io::format_real(s.apr_trans_floor);
  kv["apr_trans_gain"] = io::format_real(s.apr_trans_gain);
  kv["apr_rot_floor"] = io::format_real(s.apr_rot_floor);
  kv["apr_rot_gain"] = io::format_real(s.apr_rot_gain);
  std::string out;
  for (const auto& [k, v] : kv) out += k + " = " + v + "\n";
  return out;
}

inline std::map<std::string, std::string> parse_key_values(std::string_view text, const std::string& path) {
  std::map<std::string, std::string> kv;
  LineReader lines(text);
  std::string_view line;
  while (lines.next(line)) {
    const auto trimmed = io::split_ws(line);
    if (trimmed.front().starts_with('#') || trimmed.front().starts_with(';')) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw FormatError(path, lines.offset(), "expected key = value");
    const auto key = io::split_ws(line.substr(0, eq));
    const auto val = io::split_ws(line.substr(eq + 1));
    if (key.size() != 1 || val.size() > 1) throw FormatError(path, lines.offset(), "expected key = value");
    kv[std::string(key[0])] = val.empty() ? std::string() : std::string(val[0]);
  }
  return kv;
}

/// Applies recognised keys of `kv` onto `spec`; unknown keys are ignored.
inline SceneSpec apply_spec_overrides(SceneSpec spec, const std::map<std::string, std::string>& kv) {
  auto real = [&](const char* key, double& dst) {
    if (auto it = kv.find(key); it != kv.end()) {
      const auto v = io::parse_real(it->second);
      if (!v) throw Error(std::string("bad value for ") + key);
      dst = *v;
    }
  };
  auto count = [&](const char* key, auto& dst) {
    if (auto it = kv.find(key); it != kv.end()) {
      const auto v = io::parse_uint(it->second);
      if (!v) throw Error(std::string("bad value for ") + key);
      dst = static_cast<std::remove_reference_t<decltype(dst)>>(*v);
    }
  };
  count("seed", spec.seed);
  count("dim", spec.dim);
  count("num_train", spec.num_train);
  count("num_test_near", spec.num_test_near);
  count("num_test_far", spec.num_test_far);
  count("num_waypoints", spec.num_waypoints);
  real("extent", spec.extent);
  real("height", spec.height);
  real("near_radius", spec.near_radius);
  real("near_angle", spec.near_angle);
  real("far_max_distance", spec.far_max_distance);
  real("freq_scale", spec.freq_scale);
  real("feature_noise", spec.feature_noise);
  real("apr_trans_floor", spec.apr_trans_floor);
  real("apr_trans_gain", spec.apr_trans_gain);
  real("apr_rot_floor", spec.apr_rot_floor);
  real("apr_rot_gain", spec.apr_rot_gain);
  return spec;
}

/// Writes the training database (`.poses`/`.feat`), the queries
/// (`.queries`/`.qfeat`) and `<stem>.manifest`.
inline void export_scene(const SynthScene& scene, const std::filesystem::path& stem,
                         const std::map<std::string, std::string>& manifest_extra = {}) {
  save_db(scene.database(), stem);
  save_queries(scene.query_set(), stem);
  io::write_file_atomic(with_suffix(stem, ".manifest"), scene_manifest(scene.spec, manifest_extra));
}

}  // namespace hrapr
