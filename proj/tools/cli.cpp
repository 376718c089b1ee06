#include "cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "hrapr/hrapr.hpp"

namespace hrapr::cli {
namespace {

namespace fs = std::filesystem;

class UsageError : public Error {
 public:
  using Error::Error;
};

// Scene-spec keys accepted by `synth --set` and ignored elsewhere when they
// arrive through a config file or manifest.
const std::set<std::string>& spec_keys() {
  static const std::set<std::string> keys = [] {
    std::set<std::string> k;
    for (const auto& [key, value] : parse_key_values(scene_manifest(SceneSpec{}), "<defaults>")) k.insert(key);
    return k;
  }();
  return keys;
}

struct Preset {
  double d_th;
  GatingPolicy policy;
};

Preset preset_named(const std::string& name) {
  if (name == "indoor") return {0.2, GatingPolicy::indoor()};
  if (name == "outdoor") return {1.5, GatingPolicy::outdoor()};
  throw UsageError("unknown preset '" + name + "' (expected indoor or outdoor)");
}

std::pair<int, int> parse_policy(const std::string& text) {
  const auto slash = text.find('/');
  const auto hs = io::parse_uint(std::string_view(text).substr(0, slash));
  const auto ls = slash == std::string::npos ? std::nullopt : io::parse_uint(std::string_view(text).substr(slash + 1));
  if (!hs || !ls || *hs > 1000000 || *ls > 1000000) {
    throw UsageError("--policy expects HS/LS step counts, got '" + text + "'");
  }
  return {static_cast<int>(*hs), static_cast<int>(*ls)};
}

// Run parameters shared by the commands that score queries.
struct RunArgs {
  std::string preset = "outdoor";
  double dth = 0.0;
  double gamma = 0.0;
  int hs = 0;
  int ls = 0;
  std::string policy;
  std::string mode = "refine";
  CLI::Option* dth_opt = nullptr;
  CLI::Option* gamma_opt = nullptr;
  CLI::Option* hs_opt = nullptr;
  CLI::Option* ls_opt = nullptr;
  CLI::Option* policy_opt = nullptr;

  void add_to(CLI::App* sub, bool with_mode) {
    sub->add_option("--preset", preset, "indoor (d_th 0.2, hs10/ls50) or outdoor (d_th 1.5, hs30/ls50)")
        ->capture_default_str();
    dth_opt = sub->add_option("--dth", dth, "retrieval radius in meters (overrides the preset)");
    gamma_opt = sub->add_option("--gamma", gamma, "reliability threshold (overrides the preset)");
    hs_opt = sub->add_option("--hs", hs, "steps for reliable queries");
    ls_opt = sub->add_option("--ls", ls, "steps for unreliable queries");
    policy_opt = sub->add_option("--policy", policy, "step budgets as HS/LS, e.g. 10/50");
    if (with_mode) sub->add_option("--mode", mode, "refine or filter")->capture_default_str();
  }

  Preset resolve() const {
    Preset p = preset_named(preset);
    if (dth_opt->count()) p.d_th = dth;
    if (!(p.d_th >= 0.0) || !std::isfinite(p.d_th)) throw UsageError("--dth must be a finite nonnegative distance");
    if (gamma_opt->count()) p.policy.gamma = gamma;
    if (!std::isfinite(p.policy.gamma)) throw UsageError("--gamma must be finite");
    if (policy_opt->count()) std::tie(p.policy.hs_steps, p.policy.ls_steps) = parse_policy(policy);
    if (hs_opt->count()) p.policy.hs_steps = hs;
    if (ls_opt->count()) p.policy.ls_steps = ls;
    if (mode == "refine") {
      p.policy.mode = GatingMode::refine;
    } else if (mode == "filter") {
      p.policy.mode = GatingMode::filter;
    } else {
      throw UsageError("--mode must be refine or filter, got '" + mode + "'");
    }
    try {
      p.policy.validate();
    } catch (const Error& e) {
      throw UsageError(e.what());
    }
    return p;
  }
};

struct Inputs {
  PoseFeatureDB db;
  QuerySet queries;
};

Inputs load_inputs(const std::string& db_stem, const std::string& query_stem, std::optional<double> cell_size) {
  Inputs in{load_db(db_stem, IndexOptions{cell_size}), load_queries(query_stem)};
  if (in.db.dim() != in.queries.dim) {
    throw DimensionMismatch("database dim " + std::to_string(in.db.dim()) + " != query dim " +
                            std::to_string(in.queries.dim));
  }
  return in;
}

ScoreBatchResult score_inputs(const Inputs& in, const Preset& p, bool strict, std::ostream& err) {
  BatchOptions opts;
  opts.strict = strict;
  auto res = score_batch(in.db, in.queries.queries, p.policy, p.d_th, opts);
  for (const auto& f : res.failures) {
    err << "warning: query #" << f.index << " '" << f.id << "' failed: " << f.message << "\n";
  }
  return res;
}

std::vector<PoseError> errors_of(std::span<const ScoredQuery> scored) {
  std::vector<PoseError> out;
  out.reserve(scored.size());
  for (const auto& q : scored) out.push_back(pose_error(q.predicted, *q.gt));
  return out;
}

std::string fixed(double v, int digits) { return io::format_fixed(v, digits); }

std::string pad_left(std::string s, std::size_t w) { return s.size() >= w ? s : std::string(w - s.size(), ' ') + s; }
std::string pad_right(std::string s, std::size_t w) { return s.size() >= w ? s : s + std::string(w - s.size(), ' '); }

fs::path manifest_path(const std::string& scene) {
  fs::path p(scene);
  if (p.extension() == ".manifest" || fs::is_regular_file(p)) return p;
  return with_suffix(p, ".manifest");
}

SceneSpec load_scene_spec(const std::string& scene) {
  const fs::path path = manifest_path(scene);
  return apply_spec_overrides(SceneSpec{}, parse_key_values(io::read_file(path), path.string()));
}

std::string safe_file_name(std::string id) {
  std::replace_if(id.begin(), id.end(), [](char c) { return c == '/' || c == '\\' || c == ':'; }, '_');
  return id;
}

// Refines `scored` against a synthetic field; targets are the query embeddings.
BatchRefineResult refine_scored(const Inputs& in, const ScoreBatchResult& res, const SceneSpec& spec,
                                const GatingPolicy& policy, const RefineOptions& ropts) {
  if (spec.dim != in.db.dim()) {
    throw DimensionMismatch("scene dim " + std::to_string(spec.dim) + " != database dim " +
                            std::to_string(in.db.dim()));
  }
  auto field = std::make_shared<const FeatureField>(FeatureField::generate(spec.seed, spec.dim, spec.freq_scale));
  std::vector<FeatureEmbedding> targets;
  targets.reserve(res.scored.size());
  for (const std::size_t i : res.input_index) targets.push_back(in.queries.queries[i].embedding);
  return scheduled_refine_batch(res.scored, synthetic_refiner_factory(field, targets), policy, ropts);
}

// ---------------------------------------------------------------------------
// build-db

struct BuildDbArgs {
  std::string poses, features, out;
  double cell_size = 0.0;
  CLI::Option* cell_opt = nullptr;
};

struct PoseList {
  std::optional<HeaderFields> header;
  std::vector<std::pair<std::string, Pose>> records;
};

PoseList read_pose_list(const std::string& path) {
  const std::string text = io::read_file(path);
  PoseList out;
  LineReader lines(text);
  std::string_view line;
  bool first = true;
  while (lines.next(line)) {
    const auto tok = io::split_ws(line);
    if (first && tok.front() == "hrapr-db") {
      out.header = parse_header(line, "hrapr-db", false, path);
      first = false;
      continue;
    }
    first = false;
    const auto pose = tok.size() == 8 ? parse_pose(std::span(tok).subspan(1)) : std::nullopt;
    if (!pose) {
      throw FormatError(path, lines.offset(),
                        "line " + std::to_string(lines.line_no()) + ": expected 'id tx ty tz qw qx qy qz'");
    }
    out.records.emplace_back(std::string(tok[0]), *pose);
  }
  return out;
}

// `.feat` binary, or text with one whitespace/comma separated row per line.
FeatureMatrix read_features(const std::string& path) {
  const std::string bytes = io::read_file(path);
  if (bytes.size() >= 4 && std::string_view(bytes).substr(0, 4) == std::string_view(kFeatureMagic, 4)) {
    return decode_feature_matrix(bytes, path);
  }
  FeatureMatrix m;
  LineReader lines(bytes);
  std::string_view line;
  while (lines.next(line)) {
    std::string row(line);
    std::replace(row.begin(), row.end(), ',', ' ');
    const auto tok = io::split_ws(row);
    if (m.count == 0) m.dim = static_cast<std::uint32_t>(tok.size());
    if (tok.size() != m.dim) {
      throw FormatError(path, lines.offset(),
                        "line " + std::to_string(lines.line_no()) + ": row has " + std::to_string(tok.size()) +
                            " values, expected " + std::to_string(m.dim));
    }
    for (const auto t : tok) {
      const auto v = io::parse_real(t);
      if (!v) {
        throw FormatError(path, lines.offset(),
                          "line " + std::to_string(lines.line_no()) + ": bad number '" + std::string(t) + "'");
      }
      m.data.push_back(static_cast<float>(*v));
    }
    ++m.count;
  }
  return m;
}

int cmd_build_db(const BuildDbArgs& a, std::ostream& out) {
  const PoseList poses = read_pose_list(a.poses);
  const FeatureMatrix feats = read_features(a.features);
  if (poses.header && poses.header->dim != feats.dim) {
    throw DimensionMismatch("dim mismatch: " + a.poses + " declares dim " + std::to_string(poses.header->dim) +
                            ", " + a.features + " has dim " + std::to_string(feats.dim));
  }
  if (poses.header && poses.header->count != poses.records.size()) {
    throw FormatError(a.poses, 0, "header count " + std::to_string(poses.header->count) + " but " +
                                      std::to_string(poses.records.size()) + " records");
  }
  if (feats.count != poses.records.size()) {
    throw FormatError(a.features, 0, "count mismatch: " + std::to_string(feats.count) + " feature rows vs " +
                                         std::to_string(poses.records.size()) + " poses in " + a.poses);
  }
  std::vector<DBRecord> records;
  records.reserve(poses.records.size());
  for (std::size_t i = 0; i < poses.records.size(); ++i) {
    const auto row = feats.row(i);
    records.push_back({poses.records[i].first, poses.records[i].second, std::vector<float>(row.begin(), row.end())});
  }
  IndexOptions opts;
  if (a.cell_opt->count()) opts.cell_size = a.cell_size;
  const PoseFeatureDB db = build_database(std::move(records), opts, feats.dim);
  save_db(db, a.out);
  out << "built " << a.out << ": count " << db.size() << ", dim " << db.dim() << ", payload " << db.payload_bytes()
      << " bytes\n";
  return kOk;
}

// ---------------------------------------------------------------------------
// score / sweep / refine / evaluate

struct ScoreArgs {
  std::string db, queries, out;
  RunArgs run;
  bool strict = false;
  double cell_size = 0.0;
  CLI::Option* cell_opt = nullptr;

  std::optional<double> cell() const { return cell_opt->count() ? std::optional(cell_size) : std::nullopt; }
};

int cmd_score(const ScoreArgs& a, std::ostream& out, std::ostream& err) {
  const Preset p = a.run.resolve();
  const Inputs in = load_inputs(a.db, a.queries, a.cell());
  const auto res = score_inputs(in, p, a.strict, err);
  io::write_file_atomic(a.out, scored_csv(res.scored));
  const auto n_rel = std::count_if(res.scored.begin(), res.scored.end(), [](const auto& q) { return q.reliable; });
  out << "scored " << res.scored.size() << " of " << in.queries.queries.size() << " queries: reliable " << n_rel
      << " (r = " << fixed(reliable_fraction(res.scored), 4) << "), d_th " << io::format_real(p.d_th)
      << " m, gamma " << io::format_real(p.policy.gamma) << ", mode " << to_string(p.policy.mode) << "\n";
  if (!res.failures.empty()) {
    out << "failed " << res.failures.size() << " queries\n";
    return kItemFailures;
  }
  return kOk;
}

struct SweepArgs {
  ScoreArgs s;
  std::string grid = "0,0.5,0.8,0.9,0.95,0.98";
};

std::vector<double> parse_grid(const std::string& text) {
  std::vector<double> g;
  std::string item;
  std::istringstream ss(text);
  while (std::getline(ss, item, ',')) {
    const auto tok = io::split_ws(item);
    const auto v = tok.size() == 1 ? io::parse_real(tok[0]) : std::nullopt;
    if (!v || !std::isfinite(*v)) throw UsageError("bad gamma grid value '" + item + "'");
    g.push_back(*v);
  }
  if (g.empty()) throw UsageError("gamma grid is empty");
  if (!std::is_sorted(g.begin(), g.end())) throw UsageError("gamma grid must be ascending");
  return g;
}

int cmd_sweep(const SweepArgs& a, std::ostream& out, std::ostream& err) {
  const auto grid = parse_grid(a.grid);
  const Preset p = a.s.run.resolve();
  const Inputs in = load_inputs(a.s.db, a.s.queries, a.s.cell());
  if (!in.queries.has_gt) throw UsageError("sweep needs queries with ground truth (gt=1)");
  const auto res = score_inputs(in, p, a.s.strict, err);
  const auto sweep = threshold_sweep(res.scored, grid);
  io::write_file_atomic(a.s.out, sweep_csv(sweep));
  auto opt = [](const std::optional<double>& v) { return v ? fixed(*v, 3) : std::string("nan"); };
  out << "gamma  retained  norm_terr  norm_rerr\n";
  for (const auto& pt : sweep) {
    out << pad_right(io::format_real(pt.gamma), 6) << ' ' << pad_left(fixed(pt.retained_ratio, 4), 8) << ' '
        << pad_left(opt(pt.norm_terr), 10) << ' ' << pad_left(opt(pt.norm_rerr), 10) << "\n";
    if (pt.retained_ratio < 0.01) {
      err << "warning: gamma " << io::format_real(pt.gamma) << " retains " << pt.retained
          << " queries (< 1%); statistics are unreliable\n";
    }
  }
  if (!res.failures.empty()) {
    out << "failed " << res.failures.size() << " queries\n";
    return kItemFailures;
  }
  return kOk;
}

struct RefineArgs {
  ScoreArgs s;
  std::string scene;
  bool early_stop = false;
};

int cmd_refine(const RefineArgs& a, std::ostream& out, std::ostream& err) {
  const Preset p = a.s.run.resolve();
  if (p.policy.mode != GatingMode::refine) throw UsageError("refine needs --mode refine");
  const SceneSpec spec = load_scene_spec(a.scene);
  const Inputs in = load_inputs(a.s.db, a.s.queries, a.s.cell());
  const auto res = score_inputs(in, p, a.s.strict, err);
  RefineOptions ropts;
  ropts.early_stop = a.early_stop;
  const auto batch = refine_scored(in, res, spec, p.policy, ropts);

  for (const auto& f : batch.failures) {
    err << "warning: refinement of '" << f.id << "' failed: " << f.message << "\n";
  }
  if (a.s.strict && !batch.failures.empty()) {
    throw QueryError(batch.failures.front().id, batch.failures.front().message);
  }

  const fs::path dir(a.s.out);
  io::write_file_atomic(dir / "summary.csv", refine_summary_csv(res.scored, batch));
  for (const auto& r : batch.refined) {
    io::write_file_atomic(dir / "traces" / (safe_file_name(r.trace.id) + ".csv"), trace_csv(r.trace));
  }
  if (in.queries.has_gt && !batch.refined.empty()) {
    std::vector<RefineTrace> traces;
    std::vector<bool> rel;
    for (const auto& r : batch.refined) {
      traces.push_back(r.trace);
      rel.push_back(res.scored[r.query_index].reliable);
    }
    io::write_file_atomic(dir / "convergence.csv", convergence_csv(convergence_curves(traces, rel)));
  }

  const auto n_rel = std::count_if(res.scored.begin(), res.scored.end(), [](const auto& q) { return q.reliable; });
  const auto report = overhead_from_average(batch.avg_steps, p.policy.ls_steps);
  out << "refined " << batch.refined.size() << " queries (hs " << n_rel << ", ls "
      << res.scored.size() - static_cast<std::size_t>(n_rel) << ") with hs" << p.policy.hs_steps << "/ls"
      << p.policy.ls_steps << "\n";
  out << "avg_steps " << fixed(report.avg_steps, 2) << ", reduction " << fixed(report.reduction_pct, 1)
      << "% vs uniform " << p.policy.ls_steps << " steps\n";
  if (in.queries.has_gt && !batch.refined.empty()) {
    std::vector<PoseError> pre, post;
    for (const auto& r : batch.refined) {
      const auto& q = res.scored[r.query_index];
      pre.push_back(pose_error(q.predicted, *q.gt));
      post.push_back(pose_error(r.trace.final_pose(), *q.gt));
    }
    const auto mp = median_errors(pre), mq = median_errors(post);
    out << "median error before " << fixed(mp.trans_m, 4) << " m / " << fixed(mp.rot_deg, 3) << " deg, after "
        << fixed(mq.trans_m, 4) << " m / " << fixed(mq.rot_deg, 3) << " deg\n";
  }
  if (!batch.failures.empty()) out << "FLAGGED: " << batch.failures.size() << " refinement failures\n";
  if (!res.failures.empty()) {
    out << "failed " << res.failures.size() << " queries at scoring\n";
    return kItemFailures;
  }
  return kOk;
}

struct EvaluateArgs {
  ScoreArgs s;
  std::string scene;
  bool early_stop = false;
};

int cmd_evaluate(const EvaluateArgs& a, std::ostream& out, std::ostream& err) {
  const Preset p = a.s.run.resolve();
  const Inputs in = load_inputs(a.s.db, a.s.queries, a.s.cell());
  if (!in.queries.has_gt) throw UsageError("evaluate needs queries with ground truth (gt=1)");
  std::optional<SceneSpec> spec;
  if (!a.scene.empty()) spec = load_scene_spec(a.scene);
  const auto res = score_inputs(in, p, a.s.strict, err);
  if (res.scored.empty()) throw UsageError("no query could be scored");

  const auto all = errors_of(res.scored);
  std::vector<PoseError> kept;
  for (std::size_t i = 0; i < res.scored.size(); ++i) {
    if (res.scored[i].reliable) kept.push_back(all[i]);
  }
  const double n = static_cast<double>(all.size());
  const double retained = 100.0 * static_cast<double>(kept.size()) / n;

  std::ostringstream t;
  auto row = [&](const std::string& name, double ret, const std::optional<PoseError>& med,
                 const std::optional<AccuracyLevels>& acc, const std::string& steps) {
    t << pad_right(name, 26) << pad_left(fixed(ret, 1) + "%", 9)
      << pad_left(med ? fixed(med->trans_m, 3) : "-", 11) << pad_left(med ? fixed(med->rot_deg, 2) : "-", 11) << "  "
      << pad_right(format_levels(acc), 18) << pad_left(steps, 9) << "\n";
  };

  t << "queries           " << res.scored.size() << " scored, " << res.failures.size() << " failed\n";
  t << "d_th / gamma      " << io::format_real(p.d_th) << " m / " << io::format_real(p.policy.gamma) << "\n";
  t << "policy            hs" << p.policy.hs_steps << "/ls" << p.policy.ls_steps << "\n";
  t << "reliable          " << kept.size() << " (r = " << fixed(reliable_fraction(res.scored), 4) << ")\n\n";
  t << pad_right("method", 26) << pad_left("retained", 9) << pad_left("med_t(m)", 11) << pad_left("med_r(deg)", 11)
    << "  " << pad_right("acc high/med/low", 18) << pad_left("steps", 9) << "\n";

  row("APR", 100.0, median_errors(all), accuracy_levels(all), "-");
  row("APR+Filter", retained, kept.empty() ? std::nullopt : std::optional(median_errors(kept)),
      accuracy_levels(kept), "-");
  std::optional<AccuracyLevels> full = AccuracyLevels{};
  if (auto k = accuracy_levels(kept)) {
    const double s = static_cast<double>(kept.size()) / n;
    full = AccuracyLevels{k->high * s, k->medium * s, k->low * s, k->thresholds};
  }
  row("APR+Filter (full set)", retained, std::nullopt, full, "-");

  GatingPolicy sched = p.policy;
  sched.mode = GatingMode::refine;
  const auto planned = overhead_report(res.scored, sched);
  std::vector<QueryFailure> refine_failures;
  if (spec) {
    RefineOptions ropts;
    ropts.early_stop = a.early_stop;
    const auto batch = refine_scored(in, res, *spec, sched, ropts);
    refine_failures = batch.failures;
    for (const auto& f : batch.failures) {
      err << "warning: refinement of '" << f.id << "' failed: " << f.message << "\n";
    }
    std::vector<PoseError> post = all;  // failed refinements keep the APR pose
    for (const auto& r : batch.refined) {
      post[r.query_index] = pose_error(r.trace.final_pose(), *res.scored[r.query_index].gt);
    }
    row("APR+Refine hs" + std::to_string(sched.hs_steps) + "/ls" + std::to_string(sched.ls_steps), 100.0,
        median_errors(post), accuracy_levels(post), fixed(batch.avg_steps, 2));
  }
  t << "\nscheduled avg_steps " << fixed(planned.avg_steps, 2) << ", reduction " << fixed(planned.reduction_pct, 1)
    << "% vs uniform " << sched.ls_steps << " steps\n";
  if (!refine_failures.empty()) t << "FLAGGED: " << refine_failures.size() << " refinement failures\n";

  if (!a.s.out.empty()) io::write_file_atomic(a.s.out, t.str());
  out << t.str();
  if (a.s.strict && !refine_failures.empty()) {
    throw QueryError(refine_failures.front().id, refine_failures.front().message);
  }
  return res.failures.empty() ? kOk : kItemFailures;
}

// ---------------------------------------------------------------------------
// synth

struct SynthArgs {
  std::uint64_t seed = 42;
  std::string out_stem;
  std::vector<std::string> sets;
  RunArgs run;
};

int cmd_synth(const SynthArgs& a, std::ostream& out) {
  const Preset p = a.run.resolve();  // also validates the preset name
  SceneSpec spec = a.run.preset == "indoor" ? SceneSpec::indoor() : SceneSpec::outdoor();
  spec.seed = a.seed;

  std::map<std::string, std::string> kv;
  for (const auto& s : a.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + s + "'");
    const auto key = io::split_ws(std::string_view(s).substr(0, eq));
    const auto val = io::split_ws(std::string_view(s).substr(eq + 1));
    if (key.size() != 1 || val.size() != 1) throw UsageError("--set expects key=value, got '" + s + "'");
    if (!spec_keys().contains(std::string(key[0]))) throw UsageError("unknown scene key '" + std::string(key[0]) + "'");
    kv[std::string(key[0])] = std::string(val[0]);
  }
  try {
    spec = apply_spec_overrides(spec, kv);
  } catch (const GenerationError&) {
    throw;
  } catch (const Error& e) {
    throw UsageError(e.what());
  }

  const SynthScene scene = generate_scene(spec);
  export_scene(scene, a.out_stem,
               {{"preset", a.run.preset},
                {"dth", io::format_real(p.d_th)},
                {"gamma", io::format_real(p.policy.gamma)},
                {"hs", std::to_string(p.policy.hs_steps)},
                {"ls", std::to_string(p.policy.ls_steps)}});

  std::vector<PoseError> near, far;
  for (const auto& q : scene.queries) (q.near ? near : far).push_back(pose_error(q.input.predicted, *q.input.gt));
  out << "wrote " << a.out_stem << ": train " << scene.train.size() << ", near " << near.size() << ", far "
      << far.size() << ", dim " << spec.dim << ", seed " << spec.seed << "\n";
  std::optional<PoseError> mn, mf;
  if (!near.empty()) {
    mn = median_errors(near);
    out << "near median error " << fixed(mn->trans_m, 4) << " m / " << fixed(mn->rot_deg, 3) << " deg\n";
  }
  if (!far.empty()) {
    mf = median_errors(far);
    out << "far median error  " << fixed(mf->trans_m, 4) << " m / " << fixed(mf->rot_deg, 3) << " deg\n";
  }
  if (mn && mf && mn->trans_m > 0.0 && mn->rot_deg > 0.0) {
    out << "far/near ratio    " << fixed(mf->trans_m / mn->trans_m, 2) << "x trans, "
        << fixed(mf->rot_deg / mn->rot_deg, 2) << "x rot\n";
  }
  return kOk;
}

// ---------------------------------------------------------------------------
// Config files: `key = value` lines become flags placed right after the
// subcommand, so explicit flags (which come later) win under TakeLast.

std::vector<std::string> expand_config(std::vector<std::string> args) {
  std::optional<std::string> config;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config") {
      if (i + 1 >= args.size()) throw UsageError("--config needs a file");
      config = args[i + 1];
      args.erase(args.begin() + static_cast<std::ptrdiff_t>(i), args.begin() + static_cast<std::ptrdiff_t>(i + 2));
      break;
    }
    if (args[i].starts_with("--config=")) {
      config = args[i].substr(9);
      args.erase(args.begin() + static_cast<std::ptrdiff_t>(i));
      break;
    }
  }
  if (!config) return args;
  const auto sub = std::find_if(args.begin(), args.end(), [](const std::string& s) { return !s.starts_with("-"); });
  if (sub == args.end()) throw UsageError("--config needs a subcommand");
  const bool synth = *sub == "synth";

  std::vector<std::string> flags;
  for (const auto& [key, value] : parse_key_values(io::read_file(*config), *config)) {
    if (key == "config") throw UsageError(*config + ": nested config is not supported");
    if (spec_keys().contains(key)) {
      if (synth) {
        flags.push_back("--set");
        flags.push_back(key + "=" + value);
      }
      continue;
    }
    std::string flag = "--" + key;
    std::replace(flag.begin(), flag.end(), '_', '-');
    flags.push_back(flag + "=" + value);
  }
  args.insert(sub + 1, flags.begin(), flags.end());
  return args;
}

void add_score_common(CLI::App* sub, ScoreArgs& a, bool with_mode, bool out_required, const char* out_help) {
  sub->add_option("--db", a.db, "database stem (<stem>.poses, <stem>.feat)")->required();
  sub->add_option("--queries", a.queries, "query stem (<stem>.queries, <stem>.qfeat)")->required();
  auto* o = sub->add_option("--out", a.out, out_help);
  if (out_required) o->required();
  a.run.add_to(sub, with_mode);
  sub->add_flag("--strict", a.strict, "abort on the first per-query failure");
  a.cell_opt = sub->add_option("--cell-size", a.cell_size, "grid index cell size in meters");
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"hrapr: pose-indexed retrieval, uncertainty gating and scheduled refinement", "hrapr"};
  app.require_subcommand(1);
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  app.set_help_all_flag("--help-all", "show help for every subcommand");
  app.add_option("--config", "key = value file applied before the command-line flags");

  BuildDbArgs build;
  auto* c_build = app.add_subcommand("build-db", "build a database from pose and feature files");
  c_build->add_option("--poses", build.poses, "text file of 'id tx ty tz qw qx qy qz' lines")->required();
  c_build->add_option("--features", build.features, ".feat binary or text rows")->required();
  c_build->add_option("--out", build.out, "output stem")->required();
  build.cell_opt = c_build->add_option("--cell-size", build.cell_size, "validate a grid index with this cell size");

  ScoreArgs score;
  auto* c_score = app.add_subcommand("score", "score queries and classify them as reliable or not");
  add_score_common(c_score, score, true, true, "scored CSV path");

  SweepArgs sweep;
  auto* c_sweep = app.add_subcommand("sweep", "sweep the reliability threshold");
  add_score_common(c_sweep, sweep.s, false, true, "sweep CSV path");
  c_sweep->add_option("--grid", sweep.grid, "comma-separated ascending gamma values")->capture_default_str();

  RefineArgs refine;
  auto* c_refine = app.add_subcommand("refine", "run scheduled refinement against a synthetic scene");
  add_score_common(c_refine, refine.s, false, true, "output directory");
  c_refine->add_option("--scene", refine.scene, "scene manifest (or its stem)")->required();
  c_refine->add_flag("--early-stop", refine.early_stop, "stop when the loss stalls");

  EvaluateArgs eval;
  auto* c_eval = app.add_subcommand("evaluate", "print the evaluation summary");
  add_score_common(c_eval, eval.s, false, false, "also write the summary here");
  c_eval->add_option("--scene", eval.scene, "scene manifest; adds a refined row");
  c_eval->add_flag("--early-stop", eval.early_stop, "stop when the loss stalls");

  SynthArgs synth;
  auto* c_synth = app.add_subcommand("synth", "generate a synthetic benchmark scene");
  c_synth->add_option("--seed", synth.seed, "random seed")->capture_default_str();
  synth.run.add_to(c_synth, false);
  c_synth->add_option("--out-stem", synth.out_stem, "output stem")->required();
  c_synth->add_option("--set", synth.sets, "scene override key=value (repeatable)")
      ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);

  try {
    std::vector<std::string> args(argv + 1, argv + argc);
    args = expand_config(std::move(args));
    std::reverse(args.begin(), args.end());  // CLI11 consumes from the back
    app.parse(args);

    if (c_build->parsed()) return cmd_build_db(build, out);
    if (c_score->parsed()) return cmd_score(score, out, err);
    if (c_sweep->parsed()) return cmd_sweep(sweep, out, err);
    if (c_refine->parsed()) return cmd_refine(refine, out, err);
    if (c_eval->parsed()) return cmd_evaluate(eval, out, err);
    if (c_synth->parsed()) return cmd_synth(synth, out);
    return kUsageOrFormat;
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsageOrFormat;
  } catch (const QueryError& e) {
    err << "error: " << e.what() << "\n";
    return kItemFailures;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kUsageOrFormat;
  }
}

}  // namespace hrapr::cli
