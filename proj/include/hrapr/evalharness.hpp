#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hrapr/errors.hpp"
#include "hrapr/geometry.hpp"
#include "hrapr/io.hpp"
#include "hrapr/refinement.hpp"
#include "hrapr/uncertainty.hpp"

namespace hrapr {

struct PosePair {
  Pose pred;
  Pose gt;
};

/// Median of `v` (mean of the two middle values for even counts).
inline double median(std::vector<double> v) {
  if (v.empty()) throw Error("median of an empty set");
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  const double upper = v[mid];
  if (v.size() % 2 == 1) return upper;
  const double lower = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lower + upper);
}

inline double mean(std::span<const double> v) {
  if (v.empty()) throw Error("mean of an empty set");
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

inline std::vector<PoseError> pose_errors(std::span<const PosePair> pairs) {
  std::vector<PoseError> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) out.push_back(pose_error(p.pred, p.gt));
  return out;
}

/// Componentwise medians. Throws on empty input.
inline PoseError median_errors(std::span<const PoseError> errors) {
  if (errors.empty()) throw Error("median_errors needs at least one result");
  std::vector<double> t, r;
  t.reserve(errors.size());
  r.reserve(errors.size());
  for (const auto& e : errors) {
    t.push_back(e.trans_m);
    r.push_back(e.rot_deg);
  }
  return {median(std::move(t)), median(std::move(r))};
}

inline PoseError median_errors(std::span<const PosePair> pairs) { return median_errors(pose_errors(pairs)); }

struct AccuracyThreshold {
  double meters;
  double degrees;
};

// High / medium / low accuracy bands.
inline constexpr std::array<AccuracyThreshold, 3> kDefaultAccuracyThresholds{{{0.25, 2.0}, {0.5, 5.0}, {5.0, 10.0}}};

struct AccuracyLevels {
  double high = 0.0;  // percent
  double medium = 0.0;
  double low = 0.0;
  std::array<AccuracyThreshold, 3> thresholds = kDefaultAccuracyThresholds;
};

/// Percent of results with trans <= m AND rot <= deg per band; nullopt for an
/// empty set.
inline std::optional<AccuracyLevels> accuracy_levels(
    std::span<const PoseError> errors, const std::array<AccuracyThreshold, 3>& thresholds = kDefaultAccuracyThresholds) {
  for (std::size_t i = 1; i < 3; ++i) {
    if (thresholds[i].meters < thresholds[i - 1].meters || thresholds[i].degrees < thresholds[i - 1].degrees) {
      throw Error("accuracy thresholds must be nested");
    }
  }
  if (errors.empty()) return std::nullopt;
  std::array<std::size_t, 3> hits{};
  for (const auto& e : errors) {
    for (std::size_t i = 0; i < 3; ++i) {
      if (e.trans_m <= thresholds[i].meters && e.rot_deg <= thresholds[i].degrees) ++hits[i];
    }
  }
  const double n = static_cast<double>(errors.size());
  return AccuracyLevels{100.0 * hits[0] / n, 100.0 * hits[1] / n, 100.0 * hits[2] / n, thresholds};
}

inline std::string format_levels(const std::optional<AccuracyLevels>& a) {
  if (!a) return "undefined";
  return io::format_fixed(a->high, 1) + "/" + io::format_fixed(a->medium, 1) + "/" + io::format_fixed(a->low, 1);
}

// ---------------------------------------------------------------------------
// Threshold sweep.

struct SweepPoint {
  double gamma = 0.0;
  double retained_ratio = 0.0;
  std::size_t retained = 0;
  // Empty when nothing is retained (or, for norm_*, when the anchor is zero).
  std::optional<double> mean_terr, mean_rerr, median_terr, median_rerr, norm_terr, norm_rerr;
};

/// For each gamma keeps queries with score > gamma and reports their error
/// statistics. norm_* divide by the mean error at the first grid point.
inline std::vector<SweepPoint> threshold_sweep(std::span<const ScoredQuery> scored, std::span<const double> gammas) {
  if (gammas.empty()) throw Error("threshold sweep needs a nonempty gamma grid");
  if (!std::is_sorted(gammas.begin(), gammas.end())) throw Error("gamma grid must be ascending");
  std::vector<PoseError> errs;
  errs.reserve(scored.size());
  for (const auto& q : scored) {
    if (!q.gt) throw Error("threshold sweep needs ground truth for query '" + q.id + "'");
    errs.push_back(pose_error(q.predicted, *q.gt));
  }

  std::vector<SweepPoint> out;
  out.reserve(gammas.size());
  std::optional<double> anchor_t, anchor_r;
  for (std::size_t g = 0; g < gammas.size(); ++g) {
    SweepPoint p;
    p.gamma = gammas[g];
    std::vector<double> t, r;
    for (std::size_t i = 0; i < scored.size(); ++i) {
      if (scored[i].score.value > p.gamma) {
        t.push_back(errs[i].trans_m);
        r.push_back(errs[i].rot_deg);
      }
    }
    p.retained = t.size();
    p.retained_ratio = scored.empty() ? 0.0 : static_cast<double>(t.size()) / static_cast<double>(scored.size());
    if (!t.empty()) {
      p.mean_terr = mean(t);
      p.mean_rerr = mean(r);
      p.median_terr = median(t);
      p.median_rerr = median(r);
    }
    if (g == 0) {
      anchor_t = p.mean_terr;
      anchor_r = p.mean_rerr;
    }
    if (p.mean_terr && anchor_t && *anchor_t > 0.0) p.norm_terr = *p.mean_terr / *anchor_t;
    if (p.mean_rerr && anchor_r && *anchor_r > 0.0) p.norm_rerr = *p.mean_rerr / *anchor_r;
    out.push_back(p);
  }
  return out;
}

inline std::string sweep_csv(std::span<const SweepPoint> sweep) {
  auto opt = [](const std::optional<double>& v) { return v ? io::format_real(*v) : std::string("nan"); };
  std::string out = "gamma,retained_ratio,mean_terr,mean_rerr,median_terr,median_rerr,norm_terr,norm_rerr\n";
  for (const auto& p : sweep) {
    out += io::format_real(p.gamma) + ',' + io::format_real(p.retained_ratio) + ',' + opt(p.mean_terr) + ',' +
           opt(p.mean_rerr) + ',' + opt(p.median_terr) + ',' + opt(p.median_rerr) + ',' + opt(p.norm_terr) + ',' +
           opt(p.norm_rerr) + '\n';
  }
  return out;
}

// ---------------------------------------------------------------------------
// Convergence curves.

struct CurvePoint {
  double mean_terr = 0.0;
  double mean_rerr = 0.0;
};

struct ConvergenceCurves {
  std::vector<CurvePoint> hs;  // empty when the class has no traces
  std::vector<CurvePoint> ls;
};

namespace detail {

inline std::vector<CurvePoint> class_curve(std::span<const RefineTrace* const> traces) {
  if (traces.empty()) return {};
  std::size_t len = 0;
  for (const auto* t : traces) {
    if (!t->has_errors()) throw Error("convergence curves need traces with ground-truth errors");
    len = std::max(len, t->rows.size());
  }
  std::vector<CurvePoint> curve(len);
  for (std::size_t k = 0; k < len; ++k) {
    double st = 0.0, sr = 0.0;
    for (const auto* t : traces) {
      // Shorter traces hold their final value.
      const TraceRow& row = t->rows[std::min(k, t->rows.size() - 1)];
      st += *row.trans_err_m;
      sr += *row.rot_err_deg;
    }
    curve[k] = {st / static_cast<double>(traces.size()), sr / static_cast<double>(traces.size())};
  }
  return curve;
}

}  // namespace detail

/// Mean error per iteration for the hs (reliable[i] true) and ls classes.
inline ConvergenceCurves convergence_curves(std::span<const RefineTrace> traces, const std::vector<bool>& reliable) {
  if (traces.size() != reliable.size()) throw Error("one class label per trace required");
  std::vector<const RefineTrace*> hs, ls;
  for (std::size_t i = 0; i < traces.size(); ++i) (reliable[i] ? hs : ls).push_back(&traces[i]);
  return {detail::class_curve(hs), detail::class_curve(ls)};
}

inline std::string convergence_csv(const ConvergenceCurves& c) {
  std::string out = "iter,class,mean_terr,mean_rerr\n";
  auto emit = [&](const std::vector<CurvePoint>& curve, const char* cls) {
    for (std::size_t k = 0; k < curve.size(); ++k) {
      out += std::to_string(k) + ',' + cls + ',' + io::format_real(curve[k].mean_terr) + ',' +
             io::format_real(curve[k].mean_rerr) + '\n';
    }
  };
  emit(c.hs, "hs");
  emit(c.ls, "ls");
  return out;
}

// ---------------------------------------------------------------------------
// Overhead accounting.

struct OverheadReport {
  double avg_steps = 0.0;
  double reduction_pct = 0.0;  // versus refining every query with ls steps
};

inline OverheadReport overhead_from_average(double avg_steps, int ls_steps) {
  OverheadReport r;
  r.avg_steps = avg_steps;
  r.reduction_pct = ls_steps > 0 ? (ls_steps - avg_steps) / ls_steps * 100.0 : 0.0;
  return r;
}

/// Fixed-budget accounting for reliable fraction r: avg = r*hs + (1-r)*ls.
inline OverheadReport overhead_from_fraction(double r, int hs_steps, int ls_steps) {
  return overhead_from_average(r * hs_steps + (1.0 - r) * ls_steps, ls_steps);
}

/// Scheduled budgets averaged over non-dropped queries.
inline OverheadReport overhead_report(std::span<const ScoredQuery> scored, const GatingPolicy& policy) {
  if (policy.mode != GatingMode::refine) throw Error("overhead_report needs a refine-mode policy");
  double total = 0.0;
  std::size_t n = 0;
  for (const auto& q : scored) {
    if (q.dropped) continue;
    total += q.steps;
    ++n;
  }
  return overhead_from_average(n ? total / static_cast<double>(n) : 0.0, policy.ls_steps);
}

// ---------------------------------------------------------------------------

/// 1-based ranks with ties sharing their average rank.
inline std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

/// Spearman rank correlation (Pearson correlation of average ranks).
inline double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw Error("spearman needs two equal-length samples of size >= 2");
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  const double mx = mean(rx), my = mean(ry);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return std::numeric_limits<double>::quiet_NaN();
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace hrapr
