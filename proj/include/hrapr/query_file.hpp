#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "hrapr/feature_store.hpp"
#include "hrapr/io.hpp"
#include "hrapr/uncertainty.hpp"

namespace hrapr {

// Query container: `<stem>.queries` text records plus `<stem>.qfeat`
// embeddings in the `.feat` binary layout.
//
//   hrapr-q v1 dim=<D> count=<C> gt=<0|1>
//   id ptx pty ptz pqw pqx pqy pqz [gtx gty gtz gqw gqx gqy gqz] label
struct QuerySet {
  std::size_t dim = 0;
  bool has_gt = false;
  std::vector<QueryInput> queries;
};

inline void save_queries(const QuerySet& set, const std::filesystem::path& stem) {
  std::string text = "hrapr-q v1 dim=" + std::to_string(set.dim) + " count=" + std::to_string(set.queries.size()) +
                     " gt=" + (set.has_gt ? "1" : "0") + "\n";
  std::vector<float> data;
  data.reserve(set.queries.size() * set.dim);
  for (const QueryInput& q : set.queries) {
    if (!detail::valid_id(q.id)) throw Error("query id '" + q.id + "' is not a whitespace-free token");
    if (q.embedding.dim() != set.dim) throw DimensionMismatch("query '" + q.id + "' has wrong embedding dim");
    if (set.has_gt && !q.gt) throw Error("query '" + q.id + "' lacks ground truth in a gt=1 set");
    text += q.id + ' ' + format_pose(q.predicted);
    if (set.has_gt) text += ' ' + format_pose(*q.gt);
    const std::string label = q.label.empty() ? "-" : q.label;
    if (!detail::valid_id(label)) throw Error("query '" + q.id + "' label contains whitespace");
    text += ' ' + label + '\n';
    data.insert(data.end(), q.embedding.values().begin(), q.embedding.values().end());
  }
  io::write_file_atomic(with_suffix(stem, ".qfeat"),
                        encode_feature_matrix(static_cast<std::uint32_t>(set.dim), set.queries.size(), data));
  io::write_file_atomic(with_suffix(stem, ".queries"), text);
}

inline QuerySet load_queries(const std::filesystem::path& stem) {
  const auto text_path = with_suffix(stem, ".queries");
  const auto feat_path = with_suffix(stem, ".qfeat");
  const std::string tp = text_path.string();
  const std::string fp = feat_path.string();
  const std::string text = io::read_file(text_path);
  const std::string bytes = io::read_file(feat_path);

  LineReader lines(text);
  std::string_view line;
  if (!lines.next(line)) throw FormatError(tp, 0, "empty file");
  const HeaderFields h = parse_header(line, "hrapr-q", true, tp);
  if (*h.gt > 1) throw FormatError(tp, 0, "gt flag must be 0 or 1");

  const FeatureMatrix m = decode_feature_matrix(bytes, fp);
  if (m.dim != h.dim) {
    throw FormatError(fp, 8, "dim " + std::to_string(m.dim) + " disagrees with .queries dim " + std::to_string(h.dim));
  }
  if (m.count != h.count) {
    throw FormatError(fp, 12,
                      "count " + std::to_string(m.count) + " disagrees with .queries count " + std::to_string(h.count));
  }

  QuerySet set;
  set.dim = h.dim;
  set.has_gt = *h.gt == 1;
  const std::size_t columns = set.has_gt ? 16 : 9;
  set.queries.reserve(h.count);
  for (std::uint64_t i = 0; i < h.count; ++i) {
    if (!lines.next(line)) {
      throw FormatError(tp, text.size(),
                        "truncated: expected " + std::to_string(h.count) + " queries, found " + std::to_string(i));
    }
    const auto tok = io::split_ws(line);
    if (tok.size() != columns) {
      throw FormatError(tp, lines.offset(),
                        "expected " + std::to_string(columns) + " columns, got " + std::to_string(tok.size()));
    }
    const std::span<const std::string_view> cols(tok);
    const auto predicted = parse_pose(cols.subspan(1, 7));
    if (!predicted) throw FormatError(tp, lines.offset(), "malformed predicted pose");
    QueryInput q;
    q.id = std::string(tok[0]);
    q.predicted = *predicted;
    if (set.has_gt) {
      const auto gt = parse_pose(cols.subspan(8, 7));
      if (!gt) throw FormatError(tp, lines.offset(), "malformed ground-truth pose");
      q.gt = *gt;
    }
    q.label = std::string(tok.back());
    const auto row = m.row(i);
    try {
      q.embedding = FeatureEmbedding(std::vector<float>(row.begin(), row.end()));
    } catch (const Error& e) {
      throw FormatError(fp, kFeatureHeaderBytes + i * m.dim * sizeof(float), e.what());
    }
    set.queries.push_back(std::move(q));
  }
  if (lines.next(line)) throw FormatError(tp, lines.offset(), "records beyond header count");
  return set;
}

}  // namespace hrapr
