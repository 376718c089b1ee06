#pragma once

#include <algorithm>
#include <cstddef>
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

namespace hrapr {

/// cos(a, b) = a.b / (|a| |b|), clamped to [-1, 1].
/// Throws DimensionMismatch on unequal lengths and DegenerateEmbedding when
/// either operand has zero norm.
template <typename A, typename B>
double cosine_similarity(const BasicEmbedding<A>& a, const BasicEmbedding<B>& b) {
  if (a.dim() != b.dim()) {
    throw DimensionMismatch("embedding dims differ: " + std::to_string(a.dim()) + " vs " +
                            std::to_string(b.dim()));
  }
  if (a.norm() == 0.0 || b.norm() == 0.0) throw DegenerateEmbedding("zero-norm embedding");
  const auto av = a.values();
  const auto bv = b.values();
  double dot = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) {
    dot += static_cast<double>(av[i]) * static_cast<double>(bv[i]);
  }
  return std::clamp(dot / (a.norm() * b.norm()), -1.0, 1.0);
}

struct SimilarityScore {
  double value = 0.0;
  std::size_t retrieved_count = 0;
  std::optional<std::string> best_match_id;
};

/// Max cosine between `query` and every database entry within `d_th` meters
/// of the predicted position. Only the predicted translation is used. An
/// empty neighbourhood scores 0 with no best match.
inline SimilarityScore similarity_score(const PoseFeatureDB& db, const FeatureEmbedding& query,
                                        const Pose& predicted, double d_th) {
  if (query.dim() != db.dim()) {
    throw DimensionMismatch("query dim " + std::to_string(query.dim()) + " != database dim " +
                            std::to_string(db.dim()));
  }
  if (query.norm() == 0.0) throw DegenerateEmbedding("query embedding has zero norm");
  const auto neighbors = db.retrieve_by_position(predicted.translation(), d_th);
  SimilarityScore s;
  s.retrieved_count = neighbors.size();
  if (neighbors.empty()) return s;
  std::size_t best = neighbors.front().index;
  double best_cos = cosine_similarity(query, db.entry(best).embedding);
  // Strict > keeps the nearest entry on ties.
  for (std::size_t k = 1; k < neighbors.size(); ++k) {
    const double c = cosine_similarity(query, db.entry(neighbors[k].index).embedding);
    if (c > best_cos) {
      best_cos = c;
      best = neighbors[k].index;
    }
  }
  s.value = best_cos;
  s.best_match_id = db.entry(best).id;
  return s;
}

enum class GatingMode { refine, filter };

inline const char* to_string(GatingMode m) { return m == GatingMode::refine ? "refine" : "filter"; }

// Reliability threshold plus per-class refinement budgets.
struct GatingPolicy {
  double gamma = 0.95;
  int hs_steps = 10;
  int ls_steps = 50;
  GatingMode mode = GatingMode::refine;

  void validate() const {
    if (hs_steps < 0 || ls_steps < 0) throw Error("step budgets must be nonnegative");
    if (mode == GatingMode::refine && hs_steps > ls_steps) {
      throw Error("refine policy needs hs_steps <= ls_steps");
    }
  }

  // Indoor and outdoor step schemes: hs10/ls50 and hs30/ls50.
  static GatingPolicy indoor() { return {0.95, 10, 50, GatingMode::refine}; }
  static GatingPolicy outdoor() { return {0.95, 30, 50, GatingMode::refine}; }
};

struct Schedule {
  bool reliable = false;
  bool dropped = false;
  int steps = 0;
};

/// reliable iff score > gamma. Refine mode assigns hs/ls budgets; filter mode
/// assigns no steps and drops unreliable queries.
inline Schedule classify_and_schedule(const SimilarityScore& score, const GatingPolicy& policy) {
  Schedule s;
  s.reliable = score.value > policy.gamma;
  if (policy.mode == GatingMode::filter) {
    s.dropped = !s.reliable;
    s.steps = 0;
  } else {
    s.steps = s.reliable ? policy.hs_steps : policy.ls_steps;
  }
  return s;
}

struct QueryInput {
  std::string id;
  Pose predicted;
  FeatureEmbedding embedding;
  std::optional<Pose> gt;
  std::string label = "-";
};

struct ScoredQuery {
  std::string id;
  Pose predicted;
  SimilarityScore score;
  bool reliable = false;
  bool dropped = false;
  int steps = 0;
  std::optional<Pose> gt;
};

struct QueryFailure {
  std::size_t index = 0;
  std::string id;
  std::string message;
};

struct ScoreBatchResult {
  std::vector<ScoredQuery> scored;  // input order, failed queries omitted
  std::vector<std::size_t> input_index;  // scored[k] came from queries[input_index[k]]
  std::vector<QueryFailure> failures;
};

struct BatchOptions {
  bool strict = false;
  unsigned threads = thread_budget();
};

inline ScoredQuery score_query(const PoseFeatureDB& db, const QueryInput& q, const GatingPolicy& policy,
                               double d_th) {
  ScoredQuery out;
  out.id = q.id;
  out.predicted = q.predicted;
  out.gt = q.gt;
  out.score = similarity_score(db, q.embedding, q.predicted, d_th);
  const Schedule s = classify_and_schedule(out.score, policy);
  out.reliable = s.reliable;
  out.dropped = s.dropped;
  out.steps = s.steps;
  return out;
}

/// Scores every query. In strict mode the first failure (by input order) is
/// rethrown as QueryError; otherwise failures are collected and skipped.
inline ScoreBatchResult score_batch(const PoseFeatureDB& db, std::span<const QueryInput> queries,
                                    const GatingPolicy& policy, double d_th, BatchOptions opts = {}) {
  policy.validate();
  std::vector<std::optional<ScoredQuery>> slots(queries.size());
  std::vector<std::string> errors(queries.size());
  parallel_for(
      queries.size(),
      [&](std::size_t i) {
        try {
          slots[i] = score_query(db, queries[i], policy, d_th);
        } catch (const Error& e) {
          errors[i] = e.what();
        }
      },
      opts.threads);

  ScoreBatchResult result;
  result.scored.reserve(queries.size());
  result.input_index.reserve(queries.size());
  for (std::size_t i = 0; i < queries.size(); ++i) {
    if (slots[i]) {
      result.scored.push_back(std::move(*slots[i]));
      result.input_index.push_back(i);
      continue;
    }
    if (opts.strict) throw QueryError(queries[i].id, errors[i]);
    result.failures.push_back({i, queries[i].id, errors[i]});
  }
  return result;
}

/// `id,score,retrieved,reliable,steps,best_match`
inline std::string scored_csv(std::span<const ScoredQuery> scored) {
  std::string out = "id,score,retrieved,reliable,steps,best_match\n";
  for (const ScoredQuery& q : scored) {
    out += q.id;
    out += ',';
    out += io::format_fixed(q.score.value, 6);
    out += ',';
    out += std::to_string(q.score.retrieved_count);
    out += q.reliable ? ",1," : ",0,";
    out += std::to_string(q.steps);
    out += ',';
    out += q.score.best_match_id.value_or("");
    out += '\n';
  }
  return out;
}

inline double reliable_fraction(std::span<const ScoredQuery> scored) {
  if (scored.empty()) return 0.0;
  const auto n = std::count_if(scored.begin(), scored.end(), [](const ScoredQuery& q) { return q.reliable; });
  return static_cast<double>(n) / static_cast<double>(scored.size());
}

}  // namespace hrapr
