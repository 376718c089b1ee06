#pragma once

#include <array>
#include <cmath>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hrapr/embedding.hpp"
#include "hrapr/errors.hpp"
#include "hrapr/feature_store.hpp"
#include "hrapr/geometry.hpp"
#include "hrapr/io.hpp"
#include "hrapr/parallel.hpp"
#include "hrapr/synthbench.hpp"
#include "hrapr/uncertainty.hpp"

namespace hrapr {

struct StepResult {
  Pose pose;
  double loss = 0.0;
};

/// Test-time pose refiner. loss() must be deterministic for a fixed query and
/// step() must return a finite pose.
class Refiner {
 public:
  virtual ~Refiner() = default;
  virtual StepResult step(const Pose& p) = 0;
  virtual double loss(const Pose& p) const = 0;
};

struct TraceRow {
  Pose pose;
  double loss = 0.0;
  std::optional<double> trans_err_m;
  std::optional<double> rot_err_deg;
};

struct RefineTrace {
  std::string id;
  Pose initial;
  std::vector<TraceRow> rows;  // iteration 0 is the start pose
  int steps_used = 0;
  bool early_stopped = false;

  const Pose& final_pose() const { return rows.back().pose; }
  bool has_errors() const { return !rows.empty() && rows.front().trans_err_m.has_value(); }
};

// Thrown when a refiner step fails; carries the iterations completed so far.
class RefineFailure : public Error {
 public:
  RefineFailure(const std::string& what, RefineTrace partial) : Error(what), partial_(std::move(partial)) {}
  const RefineTrace& partial() const noexcept { return partial_; }

 private:
  RefineTrace partial_;
};

struct RefineOptions {
  // Stop once the loss has decreased by less than `early_stop_tol` on
  // `early_stop_patience` consecutive steps. Off for fixed-budget runs.
  bool early_stop = false;
  double early_stop_tol = 1e-10;
  int early_stop_patience = 3;
};

namespace detail {

inline TraceRow make_row(const Pose& p, double loss, const std::optional<Pose>& gt) {
  TraceRow r{p, loss, std::nullopt, std::nullopt};
  if (gt) {
    r.trans_err_m = trans_error(p, *gt);
    r.rot_err_deg = rot_error(p, *gt);
  }
  return r;
}

}  // namespace detail

/// Runs up to `budget` refiner steps from `start`, recording the loss (and
/// errors against `gt` when given) at every iteration.
inline RefineTrace refine(Refiner& refiner, const Pose& start, int budget, const std::optional<Pose>& gt = std::nullopt,
                          const RefineOptions& opts = {}, std::string id = {}) {
  if (budget < 0) throw Error("refinement budget must be >= 0");
  RefineTrace trace;
  trace.id = std::move(id);
  trace.initial = start;
  trace.rows.reserve(static_cast<std::size_t>(budget) + 1);
  double loss = refiner.loss(start);
  trace.rows.push_back(detail::make_row(start, loss, gt));

  Pose current = start;
  int stalled = 0;
  for (int k = 0; k < budget; ++k) {
    StepResult next;
    try {
      next = refiner.step(current);
    } catch (const std::exception& e) {
      throw RefineFailure(std::string("refiner step ") + std::to_string(k + 1) + " failed: " + e.what(), trace);
    }
    if (!next.pose.translation().allFinite() || !next.pose.rotation().coeffs().allFinite() ||
        !std::isfinite(next.loss)) {
      throw RefineFailure("refiner step " + std::to_string(k + 1) + " returned a non-finite result", trace);
    }
    const double decrease = loss - next.loss;
    current = next.pose;
    loss = next.loss;
    trace.rows.push_back(detail::make_row(current, loss, gt));
    trace.steps_used = k + 1;
    if (opts.early_stop) {
      stalled = decrease < opts.early_stop_tol ? stalled + 1 : 0;
      if (stalled >= opts.early_stop_patience) {
        trace.early_stopped = true;
        break;
      }
    }
  }
  return trace;
}

/// 1 - cos(field(p), target); in [0, 2].
template <typename Scalar>
double synthetic_field_loss(const FeatureField& field, const BasicEmbedding<Scalar>& target, const Pose& p) {
  if (field.dim() != target.dim()) {
    throw DimensionMismatch("field dim " + std::to_string(field.dim()) + " != target dim " +
                            std::to_string(target.dim()));
  }
  return 1.0 - cosine_similarity(field.evaluate(p), target);
}

struct FieldRefinerOptions {
  double fd_trans_step = 1e-3;  // meters
  double fd_rot_step = 1e-3;    // radians
  double shrink = 0.5;
  int max_backtracks = 20;
  // First trial step length along the negative gradient; <= 0 picks
  // 1.5 / freq_scale^2, the inverse curvature of the field kernel at its peak.
  double initial_step = 0.0;
  // Gradients shorter than this are treated as zero.
  double grad_tol = 1e-10;
};

/// Gradient descent on the synthetic field loss with central finite
/// differences over three translation axes and three body-frame rotation axes,
/// and a backtracking line search that only accepts strict decreases.
class SyntheticFieldRefiner : public Refiner {
 public:
  using Gradient = std::array<double, 6>;

  template <typename Scalar>
  SyntheticFieldRefiner(std::shared_ptr<const FeatureField> field, const BasicEmbedding<Scalar>& target,
                        FieldRefinerOptions opts = {})
      : field_(std::move(field)), target_(BasicEmbedding<double>::converted(target)), opts_(opts) {
    if (!field_) throw Error("refiner needs a feature field");
    if (field_->dim() != target_.dim()) throw DimensionMismatch("refiner target dim does not match field");
    if (!(opts_.fd_trans_step > 0.0 && opts_.fd_rot_step > 0.0)) throw Error("finite-difference steps must be > 0");
    if (!(opts_.shrink > 0.0 && opts_.shrink < 1.0)) throw Error("line-search shrink must be in (0, 1)");
    if (opts_.max_backtracks < 0) throw Error("max_backtracks must be >= 0");
    if (target_.norm() == 0.0) throw DegenerateEmbedding("refiner target has zero norm");
    if (opts_.initial_step <= 0.0) {
      const double freq_scale = field_->freq_scale();
      opts_.initial_step = freq_scale > 0.0 ? 1.5 / (freq_scale * freq_scale) : 1.0;
    }
  }

  const FieldRefinerOptions& options() const noexcept { return opts_; }

  double loss(const Pose& p) const override { return synthetic_field_loss(*field_, target_, p); }

  static Pose perturb(const Pose& p, int axis, double delta) {
    if (axis < 3) {
      Vec3 t = p.translation();
      t[axis] += delta;
      return p.with_translation(t);
    }
    Vec3 r = Vec3::Zero();
    r[axis - 3] = delta;
    return p.rotated_body(r);
  }

  static Pose apply_update(const Pose& p, const Gradient& g, double alpha) {
    const Vec3 t = p.translation() - alpha * Vec3(g[0], g[1], g[2]);
    return Pose(t, p.rotation() * exp_map(-alpha * Vec3(g[3], g[4], g[5])));
  }

  /// Central-difference gradient of loss() in (t, body rotation vector).
  Gradient gradient(const Pose& p) const {
    Gradient g{};
    for (int a = 0; a < 6; ++a) {
      const double h = a < 3 ? opts_.fd_trans_step : opts_.fd_rot_step;
      g[a] = (loss(perturb(p, a, h)) - loss(perturb(p, a, -h))) / (2.0 * h);
      if (!std::isfinite(g[a])) throw Error("non-finite finite-difference gradient");
    }
    return g;
  }

  StepResult step(const Pose& p) override {
    const double l0 = loss(p);
    const Gradient g = gradient(p);
    double gnorm = 0.0;
    for (const double v : g) gnorm += v * v;
    if (std::sqrt(gnorm) <= opts_.grad_tol) return {p, l0};
    double alpha = opts_.initial_step;
    for (int k = 0; k <= opts_.max_backtracks; ++k, alpha *= opts_.shrink) {
      const Pose candidate = apply_update(p, g, alpha);
      const double l = loss(candidate);
      if (l < l0) return {candidate, l};
    }
    return {p, l0};
  }

 private:
  std::shared_ptr<const FeatureField> field_;
  BasicEmbedding<double> target_;
  FieldRefinerOptions opts_;
};

// ---------------------------------------------------------------------------
// Scheduled batch refinement.

using RefinerFactory = std::function<std::unique_ptr<Refiner>(const ScoredQuery&, std::size_t index)>;

struct RefinedQuery {
  std::size_t query_index = 0;  // position in the scored input
  RefineTrace trace;
};

struct BatchRefineResult {
  std::vector<RefinedQuery> refined;  // input order; dropped and failed queries omitted
  std::vector<QueryFailure> failures;
  double avg_steps = 0.0;  // over refined (non-dropped) queries
};

/// Refines each non-dropped query with its scheduled step budget.
inline BatchRefineResult scheduled_refine_batch(std::span<const ScoredQuery> scored, const RefinerFactory& factory,
                                                const GatingPolicy& policy, const RefineOptions& opts = {},
                                                unsigned threads = thread_budget()) {
  policy.validate();
  std::vector<std::optional<RefineTrace>> traces(scored.size());
  std::vector<std::string> errors(scored.size());
  parallel_for(
      scored.size(),
      [&](std::size_t i) {
        const ScoredQuery& q = scored[i];
        if (q.dropped) return;
        try {
          auto refiner = factory(q, i);
          traces[i] = refine(*refiner, q.predicted, q.steps, q.gt, opts, q.id);
        } catch (const std::exception& e) {
          errors[i] = e.what();
        }
      },
      threads);

  BatchRefineResult out;
  double total = 0.0;
  for (std::size_t i = 0; i < scored.size(); ++i) {
    if (scored[i].dropped) continue;
    if (!traces[i]) {
      out.failures.push_back({i, scored[i].id, errors[i]});
      continue;
    }
    total += traces[i]->steps_used;
    out.refined.push_back({i, std::move(*traces[i])});
  }
  out.avg_steps = out.refined.empty() ? 0.0 : total / static_cast<double>(out.refined.size());
  return out;
}

/// Factory producing SyntheticFieldRefiner instances that pull the target
/// embedding of query i from `targets[i]`.
inline RefinerFactory synthetic_refiner_factory(std::shared_ptr<const FeatureField> field,
                                                std::span<const FeatureEmbedding> targets,
                                                FieldRefinerOptions opts = {}) {
  return [field = std::move(field), targets, opts](const ScoredQuery&, std::size_t i) {
    return std::make_unique<SyntheticFieldRefiner>(field, targets[i], opts);
  };
}

/// `iter,loss,tx,ty,tz,qw,qx,qy,qz[,terr_m,rerr_deg]`
inline std::string trace_csv(const RefineTrace& trace) {
  const bool errs = trace.has_errors();
  std::string out = errs ? "iter,loss,tx,ty,tz,qw,qx,qy,qz,terr_m,rerr_deg\n" : "iter,loss,tx,ty,tz,qw,qx,qy,qz\n";
  for (std::size_t k = 0; k < trace.rows.size(); ++k) {
    const TraceRow& r = trace.rows[k];
    out += std::to_string(k) + ',' + io::format_real(r.loss);
    for (const double v : r.pose.to_array()) out += ',' + io::format_real(v);
    if (errs) out += ',' + io::format_real(*r.trans_err_m) + ',' + io::format_real(*r.rot_err_deg);
    out += '\n';
  }
  return out;
}

/// `id,score,reliable,steps_used,pre_terr,pre_rerr,post_terr,post_rerr`;
/// error columns are empty without ground truth.
inline std::string refine_summary_csv(std::span<const ScoredQuery> scored, const BatchRefineResult& batch) {
  std::string out = "id,score,reliable,steps_used,pre_terr,pre_rerr,post_terr,post_rerr\n";
  for (const RefinedQuery& r : batch.refined) {
    const ScoredQuery& q = scored[r.query_index];
    out += q.id + ',' + io::format_fixed(q.score.value, 6) + (q.reliable ? ",1," : ",0,") +
           std::to_string(r.trace.steps_used);
    if (q.gt) {
      out += ',' + io::format_real(trans_error(q.predicted, *q.gt)) + ',' + io::format_real(rot_error(q.predicted, *q.gt)) +
             ',' + io::format_real(trans_error(r.trace.final_pose(), *q.gt)) + ',' +
             io::format_real(rot_error(r.trace.final_pose(), *q.gt));
    } else {
      out += ",,,,";
    }
    out += '\n';
  }
  return out;
}

}  // namespace hrapr
