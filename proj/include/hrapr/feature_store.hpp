#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "hrapr/embedding.hpp"
#include "hrapr/errors.hpp"
#include "hrapr/geometry.hpp"
#include "hrapr/io.hpp"

namespace hrapr {

/// Raw input to build_database.
struct DBRecord {
  std::string id;
  Pose pose;
  std::vector<float> values;
};

struct DBEntry {
  std::string id;
  Pose pose;
  FeatureEmbedding embedding;
};

struct IndexOptions {
  // Uniform grid cell edge in meters; nullopt selects the exhaustive scan.
  std::optional<double> cell_size;
};

struct Neighbor {
  std::size_t index = 0;
  double distance = 0.0;
};

namespace detail {

// Ids travel as whitespace-delimited tokens in the text containers.
inline bool valid_id(const std::string& id) {
  if (id.empty()) return false;
  return std::none_of(id.begin(), id.end(), [](unsigned char c) { return std::isspace(c) != 0; });
}

struct CellKey {
  std::int64_t x, y, z;
  friend bool operator==(const CellKey&, const CellKey&) = default;
};

struct CellKeyHash {
  std::size_t operator()(const CellKey& k) const noexcept {
    std::uint64_t h = static_cast<std::uint64_t>(k.x) * 0x9E3779B97F4A7C15ULL;
    h ^= static_cast<std::uint64_t>(k.y) * 0xC2B2AE3D27D4EB4FULL + (h << 6) + (h >> 2);
    h ^= static_cast<std::uint64_t>(k.z) * 0x165667B19E3779F9ULL + (h << 6) + (h >> 2);
    return static_cast<std::size_t>(h);
  }
};

inline std::int64_t cell_coord(double v, double cell) {
  return static_cast<std::int64_t>(std::floor(v / cell));
}

}  // namespace detail

/// Immutable store of training (pose, embedding) pairs with a position index.
class PoseFeatureDB {
 public:
  PoseFeatureDB() = default;

  /// Validates and indexes `records`, preserving their order. `dim` is only
  /// consulted when `records` is empty.
  static PoseFeatureDB build(std::vector<DBRecord> records, IndexOptions opts = {},
                             std::size_t dim = 0) {
    PoseFeatureDB db;
    db.options_ = opts;
    if (opts.cell_size && !(*opts.cell_size > 0.0 && std::isfinite(*opts.cell_size))) {
      throw BuildError("grid cell size must be a positive finite number of meters");
    }
    db.dim_ = records.empty() ? dim : records.front().values.size();
    std::unordered_set<std::string> seen;
    db.entries_.reserve(records.size());
    for (std::size_t i = 0; i < records.size(); ++i) {
      DBRecord& r = records[i];
      const std::string where = "record " + std::to_string(i) + " ('" + r.id + "')";
      if (!detail::valid_id(r.id)) throw BuildError(where + ": id must be a nonempty token without whitespace");
      if (!seen.insert(r.id).second) throw BuildError(where + ": duplicate id");
      if (r.values.size() != db.dim_) {
        throw BuildError(where + ": dimension " + std::to_string(r.values.size()) + " != " +
                         std::to_string(db.dim_));
      }
      if (!r.pose.translation().allFinite()) throw BuildError(where + ": non-finite translation");
      try {
        db.entries_.push_back(DBEntry{std::move(r.id), r.pose, FeatureEmbedding(std::move(r.values))});
      } catch (const Error& e) {
        throw BuildError(where + ": " + e.what());
      }
    }
    if (opts.cell_size) db.build_grid();
    return db;
  }

  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }
  std::size_t dim() const noexcept { return dim_; }
  const IndexOptions& index_options() const noexcept { return options_; }
  const DBEntry& entry(std::size_t i) const { return entries_.at(i); }
  std::span<const DBEntry> entries() const noexcept { return entries_; }

  /// Serialized embedding bytes (float32 per component).
  std::uint64_t payload_bytes() const noexcept {
    return static_cast<std::uint64_t>(entries_.size()) * dim_ * sizeof(float);
  }

  /// Entries with ||t - x|| <= d_th, nearest first (ties keep input order).
  std::vector<Neighbor> retrieve_by_position(const Vec3& x, double d_th) const {
    if (!(d_th >= 0.0)) throw Error("retrieval radius must be >= 0");
    if (!x.allFinite()) return {};
    if (!options_.cell_size) return linear_scan(x, d_th);

    const double cell = *options_.cell_size;
    // Padding keeps boundary points whose bounding-box test would round the wrong way.
    const double pad = d_th * 1e-12 + 1e-12 * (x.cwiseAbs().maxCoeff() + 1.0);
    const double r = d_th + pad;
    std::int64_t lo[3], hi[3];
    double cells = 1.0;
    for (int a = 0; a < 3; ++a) {
      lo[a] = detail::cell_coord(x[a] - r, cell);
      hi[a] = detail::cell_coord(x[a] + r, cell);
      cells *= static_cast<double>(hi[a] - lo[a] + 1);
    }
    if (cells > static_cast<double>(std::max<std::size_t>(grid_.size(), 1))) {
      return linear_scan(x, d_th);
    }
    std::vector<Neighbor> out;
    for (std::int64_t i = lo[0]; i <= hi[0]; ++i) {
      for (std::int64_t j = lo[1]; j <= hi[1]; ++j) {
        for (std::int64_t k = lo[2]; k <= hi[2]; ++k) {
          const auto it = grid_.find(detail::CellKey{i, j, k});
          if (it == grid_.end()) continue;
          for (const std::size_t idx : it->second) {
            const double d = (entries_[idx].pose.translation() - x).norm();
            if (d <= d_th) out.push_back({idx, d});
          }
        }
      }
    }
    sort_neighbors(out);
    return out;
  }

  /// Exhaustive reference retrieval; same contract as retrieve_by_position.
  std::vector<Neighbor> linear_scan(const Vec3& x, double d_th) const {
    std::vector<Neighbor> out;
    for (std::size_t idx = 0; idx < entries_.size(); ++idx) {
      const double d = (entries_[idx].pose.translation() - x).norm();
      if (d <= d_th) out.push_back({idx, d});
    }
    sort_neighbors(out);
    return out;
  }

  friend bool operator==(const PoseFeatureDB& a, const PoseFeatureDB& b) {
    if (a.dim_ != b.dim_ || a.entries_.size() != b.entries_.size()) return false;
    for (std::size_t i = 0; i < a.entries_.size(); ++i) {
      const DBEntry& x = a.entries_[i];
      const DBEntry& y = b.entries_[i];
      if (x.id != y.id || !(x.pose == y.pose) || !(x.embedding == y.embedding)) return false;
    }
    return true;
  }

 private:
  static void sort_neighbors(std::vector<Neighbor>& v) {
    std::sort(v.begin(), v.end(), [](const Neighbor& a, const Neighbor& b) {
      return a.distance != b.distance ? a.distance < b.distance : a.index < b.index;
    });
  }

  void build_grid() {
    const double cell = *options_.cell_size;
    for (std::size_t idx = 0; idx < entries_.size(); ++idx) {
      const Vec3& t = entries_[idx].pose.translation();
      grid_[detail::CellKey{detail::cell_coord(t.x(), cell), detail::cell_coord(t.y(), cell),
                            detail::cell_coord(t.z(), cell)}]
          .push_back(idx);
    }
  }

  std::vector<DBEntry> entries_;
  std::size_t dim_ = 0;
  IndexOptions options_;
  std::unordered_map<detail::CellKey, std::vector<std::size_t>, detail::CellKeyHash> grid_;
};

inline PoseFeatureDB build_database(std::vector<DBRecord> records, IndexOptions opts = {},
                                    std::size_t dim = 0) {
  return PoseFeatureDB::build(std::move(records), opts, dim);
}

// ---------------------------------------------------------------------------
// Binary feature matrix: "HRFE", u32 version, u32 dim, u64 count, then count
// rows of dim little-endian float32.

inline constexpr char kFeatureMagic[4] = {'H', 'R', 'F', 'E'};
inline constexpr std::uint32_t kFeatureVersion = 1;
inline constexpr std::size_t kFeatureHeaderBytes = 4 + 4 + 4 + 8;

struct FeatureMatrix {
  std::uint32_t dim = 0;
  std::uint64_t count = 0;
  std::vector<float> data;  // row-major

  std::span<const float> row(std::size_t i) const {
    return std::span<const float>(data).subspan(i * dim, dim);
  }
};

inline std::string encode_feature_matrix(std::uint32_t dim, std::uint64_t count,
                                         std::span<const float> data) {
  std::string out;
  out.reserve(kFeatureHeaderBytes + data.size() * sizeof(float));
  out.append(kFeatureMagic, 4);
  io::put_le<std::uint32_t>(out, kFeatureVersion);
  io::put_le<std::uint32_t>(out, dim);
  io::put_le<std::uint64_t>(out, count);
  for (const float v : data) io::put_le<float>(out, v);
  return out;
}

inline FeatureMatrix decode_feature_matrix(std::string_view bytes, const std::string& path) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kFeatureMagic, 4) != 0) {
    throw FormatError(path, 0, "bad magic, expected HRFE");
  }
  if (bytes.size() < kFeatureHeaderBytes) throw FormatError(path, bytes.size(), "truncated header");
  FeatureMatrix m;
  const auto version = io::get_le<std::uint32_t>(bytes, 4);
  if (version != kFeatureVersion) {
    throw FormatError(path, 4, "unsupported version " + std::to_string(version));
  }
  m.dim = io::get_le<std::uint32_t>(bytes, 8);
  m.count = io::get_le<std::uint64_t>(bytes, 12);
  const std::uint64_t payload = bytes.size() - kFeatureHeaderBytes;
  const std::uint64_t row_bytes = static_cast<std::uint64_t>(m.dim) * sizeof(float);
  if (row_bytes != 0 && m.count > payload / row_bytes) {
    throw FormatError(path, bytes.size(),
                      "truncated payload: header count " + std::to_string(m.count) + " but only " +
                          std::to_string(payload / row_bytes) + " complete rows");
  }
  const std::uint64_t expected = m.count * row_bytes;
  if (payload != expected) {
    throw FormatError(path, kFeatureHeaderBytes + expected,
                      std::to_string(payload - expected) + " trailing bytes after payload");
  }
  m.data.resize(static_cast<std::size_t>(m.count * m.dim));
  for (std::size_t i = 0; i < m.data.size(); ++i) {
    m.data[i] = io::get_le<float>(bytes, kFeatureHeaderBytes + i * sizeof(float));
  }
  return m;
}

// ---------------------------------------------------------------------------
// Text pose records: `tx ty tz qw qx qy qz`.

inline std::string format_pose(const Pose& p) {
  std::string s;
  const auto v = p.to_array();
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ' ';
    s += io::format_real(v[i]);
  }
  return s;
}

/// Parses the first seven tokens of `tok`; nullopt when malformed.
inline std::optional<Pose> parse_pose(std::span<const std::string_view> tok) {
  if (tok.size() < 7) return std::nullopt;
  std::array<double, 7> v{};
  for (std::size_t i = 0; i < 7; ++i) {
    const auto x = io::parse_real(tok[i]);
    if (!x || !std::isfinite(*x)) return std::nullopt;
    v[i] = *x;
  }
  try {
    return Pose::from_array(v);
  } catch (const InvalidQuaternion&) {
    return std::nullopt;
  }
}

// Line cursor that remembers byte offsets for diagnostics.
class LineReader {
 public:
  explicit LineReader(std::string_view text) : text_(text) {}

  bool next(std::string_view& line) {
    while (pos_ < text_.size()) {
      line_offset_ = pos_;
      const std::size_t nl = text_.find('\n', pos_);
      const std::size_t end = nl == std::string_view::npos ? text_.size() : nl;
      line = text_.substr(pos_, end - pos_);
      pos_ = nl == std::string_view::npos ? text_.size() : nl + 1;
      ++line_no_;
      if (!io::split_ws(line).empty()) return true;
    }
    line_offset_ = text_.size();
    return false;
  }

  std::uint64_t offset() const noexcept { return line_offset_; }
  std::size_t line_no() const noexcept { return line_no_; }

 private:
  std::string_view text_;
  std::size_t pos_ = 0;
  std::uint64_t line_offset_ = 0;
  std::size_t line_no_ = 0;
};

struct HeaderFields {
  std::uint64_t dim = 0;
  std::uint64_t count = 0;
  std::optional<std::uint64_t> gt;
};

/// Parses `<magic> v1 dim=D count=C [gt=G]`.
inline HeaderFields parse_header(std::string_view line, std::string_view magic, bool want_gt,
                                 const std::string& path) {
  const auto tok = io::split_ws(line);
  if (tok.empty() || tok[0] != magic) {
    throw FormatError(path, 0, "bad header, expected '" + std::string(magic) + "'");
  }
  if (tok.size() < 2 || tok[1] != "v1") throw FormatError(path, 0, "unsupported version");
  HeaderFields h;
  bool have_dim = false, have_count = false;
  for (std::size_t i = 2; i < tok.size(); ++i) {
    const auto eq = tok[i].find('=');
    if (eq == std::string_view::npos) throw FormatError(path, 0, "bad header field");
    const auto key = tok[i].substr(0, eq);
    const auto val = io::parse_uint(tok[i].substr(eq + 1));
    if (!val) throw FormatError(path, 0, "bad header value for " + std::string(key));
    if (key == "dim") {
      h.dim = *val;
      have_dim = true;
    } else if (key == "count") {
      h.count = *val;
      have_count = true;
    } else if (key == "gt" && want_gt) {
      h.gt = *val;
    } else {
      throw FormatError(path, 0, "unknown header field " + std::string(key));
    }
  }
  if (!have_dim || !have_count) throw FormatError(path, 0, "header missing dim or count");
  if (want_gt && !h.gt) throw FormatError(path, 0, "header missing gt flag");
  return h;
}

inline std::filesystem::path with_suffix(const std::filesystem::path& stem, const char* suffix) {
  std::filesystem::path p = stem;
  p += suffix;
  return p;
}

/// Writes `<stem>.poses` and `<stem>.feat`.
inline void save_db(const PoseFeatureDB& db, const std::filesystem::path& stem) {
  std::string poses = "hrapr-db v1 dim=" + std::to_string(db.dim()) +
                      " count=" + std::to_string(db.size()) + "\n";
  std::vector<float> data;
  data.reserve(db.size() * db.dim());
  for (const DBEntry& e : db.entries()) {
    poses += e.id;
    poses += ' ';
    poses += format_pose(e.pose);
    poses += '\n';
    data.insert(data.end(), e.embedding.values().begin(), e.embedding.values().end());
  }
  io::write_file_atomic(with_suffix(stem, ".feat"),
                        encode_feature_matrix(static_cast<std::uint32_t>(db.dim()), db.size(), data));
  io::write_file_atomic(with_suffix(stem, ".poses"), poses);
}

inline PoseFeatureDB load_db(const std::filesystem::path& stem, IndexOptions opts = {}) {
  const auto poses_path = with_suffix(stem, ".poses");
  const auto feat_path = with_suffix(stem, ".feat");
  const std::string text = io::read_file(poses_path);
  const std::string bytes = io::read_file(feat_path);
  const std::string pp = poses_path.string();
  const std::string fp = feat_path.string();

  LineReader lines(text);
  std::string_view line;
  if (!lines.next(line)) throw FormatError(pp, 0, "empty file");
  const HeaderFields h = parse_header(line, "hrapr-db", false, pp);

  const FeatureMatrix m = decode_feature_matrix(bytes, fp);
  if (m.dim != h.dim) {
    throw FormatError(fp, 8, "dim " + std::to_string(m.dim) + " disagrees with .poses dim " +
                                 std::to_string(h.dim));
  }
  if (m.count != h.count) {
    throw FormatError(fp, 12, "count " + std::to_string(m.count) + " disagrees with .poses count " +
                                  std::to_string(h.count));
  }

  std::vector<DBRecord> records;
  records.reserve(h.count);
  for (std::uint64_t i = 0; i < h.count; ++i) {
    if (!lines.next(line)) {
      throw FormatError(pp, text.size(), "truncated: expected " + std::to_string(h.count) +
                                             " records, found " + std::to_string(i));
    }
    const auto tok = io::split_ws(line);
    const auto pose = tok.size() == 8 ? parse_pose(std::span(tok).subspan(1)) : std::nullopt;
    if (!pose) throw FormatError(pp, lines.offset(), "malformed record line");
    const auto row = m.row(i);
    records.push_back(DBRecord{std::string(tok[0]), *pose, std::vector<float>(row.begin(), row.end())});
  }
  if (lines.next(line)) throw FormatError(pp, lines.offset(), "records beyond header count");
  return PoseFeatureDB::build(std::move(records), opts, h.dim);
}

}  // namespace hrapr
