#pragma once

// Embedding store: an immutable count x dim matrix of 32-bit vectors with
// per-row occurrence metadata, persisted as `<stem>.vec` + `<stem>.meta.jsonl`.
//
// .vec layout (little-endian):
//   offset 0  "SCDE"
//   offset 4  u16 version (1)
//   offset 6  u16 reserved (0)
//   offset 8  u32 dim
//   offset 12 u32 count
//   offset 16 count*dim f32, row-major

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include <json.hpp>

#include "scd/error.hpp"
#include "scd/matrix.hpp"

namespace scd {

inline constexpr std::array<char, 4> kVecMagic{'S', 'C', 'D', 'E'};
inline constexpr std::uint16_t kVecVersion = 1;
inline constexpr std::size_t kVecHeaderSize = 16;
inline constexpr int kMinYear = 1000;
inline constexpr int kMaxYear = 9999;

struct EmbeddingRecord {
  std::uint64_t occurrence_id = 0;
  std::string doc_id;
  int year = 0;
  std::string journal;
  std::string token;
  std::size_t row = 0;

  friend bool operator==(const EmbeddingRecord&, const EmbeddingRecord&) = default;
};

/// Row indices of one year, strictly increasing.
struct TimeSlice {
  int year = 0;
  std::vector<std::size_t> indices;

  std::size_t size() const noexcept { return indices.size(); }
  bool empty() const noexcept { return indices.empty(); }
};

class EmbeddingStore {
 public:
  EmbeddingStore() = default;

  /// Takes ownership of a row-major matrix and one record per row. Every
  /// record's `row` must equal its position. Throws invariant_violation.
  EmbeddingStore(std::size_t dim, std::vector<float> matrix, std::vector<EmbeddingRecord> records)
      : dim_(dim), matrix_(std::move(matrix)), records_(std::move(records)) {
    validate();
  }

  std::size_t dim() const noexcept { return dim_; }
  std::size_t count() const noexcept { return records_.size(); }
  bool empty() const noexcept { return records_.empty(); }

  const std::vector<EmbeddingRecord>& records() const noexcept { return records_; }
  const EmbeddingRecord& record(std::size_t i) const { return records_.at(i); }
  const std::vector<float>& matrix() const noexcept { return matrix_; }

  std::span<const float> row(std::size_t i) const noexcept {
    return {matrix_.data() + i * dim_, dim_};
  }

  /// Widens the given rows to 64-bit, in the order given.
  Matrix to_matrix(std::span<const std::size_t> rows) const {
    Matrix out(rows.size(), dim_);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      detail::require(rows[i] < count(), Errc::invalid_argument, "row index out of range");
      auto src = row(rows[i]);
      auto dst = out.row(i);
      for (std::size_t k = 0; k < dim_; ++k) dst[k] = static_cast<double>(src[k]);
    }
    return out;
  }

  Matrix to_matrix() const {
    Matrix out(count(), dim_);
    for (std::size_t i = 0; i < matrix_.size(); ++i) out.data()[i] = static_cast<double>(matrix_[i]);
    return out;
  }

  /// Distinct years, ascending.
  std::vector<int> years() const {
    std::set<int> ys;
    for (const auto& r : records_) ys.insert(r.year);
    return {ys.begin(), ys.end()};
  }

  std::map<int, std::size_t> year_counts() const {
    std::map<int, std::size_t> counts;
    for (const auto& r : records_) ++counts[r.year];
    return counts;
  }

  /// Bitwise vector equality plus field-wise metadata equality.
  friend bool operator==(const EmbeddingStore& a, const EmbeddingStore& b) {
    if (a.dim_ != b.dim_ || a.records_ != b.records_ || a.matrix_.size() != b.matrix_.size())
      return false;
    return a.matrix_.empty() ||
           std::memcmp(a.matrix_.data(), b.matrix_.data(), a.matrix_.size() * sizeof(float)) == 0;
  }

 private:
  void validate() const {
    using detail::require;
    require(dim_ > 0, Errc::invariant_violation, "dim must be positive");
    require(matrix_.size() == records_.size() * dim_, Errc::invariant_violation,
            "matrix size does not equal count * dim");
    for (float v : matrix_)
      require(std::isfinite(v), Errc::invariant_violation, "non-finite vector component");
    std::unordered_set<std::uint64_t> ids;
    ids.reserve(records_.size());
    for (std::size_t i = 0; i < records_.size(); ++i) {
      const auto& r = records_[i];
      require(r.row == i, Errc::invariant_violation, "record row does not match its position");
      require(r.year >= kMinYear && r.year <= kMaxYear, Errc::invariant_violation,
              "year " + std::to_string(r.year) + " outside [1000, 9999]");
      require(ids.insert(r.occurrence_id).second, Errc::invariant_violation,
              "duplicate occurrence_id " + std::to_string(r.occurrence_id));
    }
  }

  std::size_t dim_ = 1;
  std::vector<float> matrix_;
  std::vector<EmbeddingRecord> records_;
};

/// Accumulates rows and assigns `row` fields in insertion order.
class StoreBuilder {
 public:
  explicit StoreBuilder(std::size_t dim) : dim_(dim) {}

  void reserve(std::size_t n) {
    matrix_.reserve(n * dim_);
    records_.reserve(n);
  }

  void add(EmbeddingRecord record, std::span<const float> vec) {
    detail::require(vec.size() == dim_, Errc::invalid_argument, "vector dimension mismatch");
    record.row = records_.size();
    records_.push_back(std::move(record));
    matrix_.insert(matrix_.end(), vec.begin(), vec.end());
  }

  std::size_t count() const noexcept { return records_.size(); }

  EmbeddingStore build() && { return EmbeddingStore(dim_, std::move(matrix_), std::move(records_)); }

 private:
  std::size_t dim_;
  std::vector<float> matrix_;
  std::vector<EmbeddingRecord> records_;
};

namespace detail {

template <typename T>
void put_le(std::string& out, T value) {
  using U = std::make_unsigned_t<T>;
  auto u = static_cast<U>(value);
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((u >> (8 * i)) & 0xFF));
}

template <typename T>
T get_le(const unsigned char* p) {
  using U = std::make_unsigned_t<T>;
  U u = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) u |= static_cast<U>(static_cast<U>(p[i]) << (8 * i));
  return static_cast<T>(u);
}

inline std::filesystem::path vec_path(const std::filesystem::path& stem) {
  return std::filesystem::path(stem.string() + ".vec");
}

inline std::filesystem::path meta_path(const std::filesystem::path& stem) {
  return std::filesystem::path(stem.string() + ".meta.jsonl");
}

inline void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::io_error, "cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(Errc::io_error, "write failed for " + path.string());
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::io_error, "cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw Error(Errc::io_error, "read failed for " + path.string());
  return bytes;
}

}  // namespace detail

/// Serializes a bare count x dim float matrix in the .vec layout.
inline std::string encode_vec(std::size_t dim, std::size_t count, std::span<const float> data) {
  detail::require(dim <= std::numeric_limits<std::uint32_t>::max() &&
                      count <= std::numeric_limits<std::uint32_t>::max(),
                  Errc::invalid_argument, "dim/count exceed the 32-bit header fields");
  detail::require(data.size() == dim * count, Errc::invalid_argument, "payload size mismatch");
  std::string out;
  out.reserve(kVecHeaderSize + data.size() * 4);
  out.append(kVecMagic.data(), kVecMagic.size());
  detail::put_le<std::uint16_t>(out, kVecVersion);
  detail::put_le<std::uint16_t>(out, 0);
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(dim));
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(count));
  for (float v : data) detail::put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(v));
  return out;
}

struct VecPayload {
  std::size_t dim = 0;
  std::size_t count = 0;
  std::vector<float> data;
};

inline VecPayload decode_vec(const std::string& bytes) {
  using detail::require;
  require(bytes.size() >= kVecHeaderSize, Errc::truncated_payload, "file shorter than header");
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  require(std::memcmp(p, kVecMagic.data(), kVecMagic.size()) == 0, Errc::bad_magic,
          "expected \"SCDE\"");
  const auto version = detail::get_le<std::uint16_t>(p + 4);
  require(version == kVecVersion, Errc::unsupported_version,
          "version " + std::to_string(version));
  VecPayload out;
  out.dim = detail::get_le<std::uint32_t>(p + 8);
  out.count = detail::get_le<std::uint32_t>(p + 12);
  require(out.dim > 0, Errc::invariant_violation, "dim must be positive");
  const std::size_t expected = kVecHeaderSize + out.dim * out.count * 4;
  require(bytes.size() >= expected, Errc::truncated_payload,
          "payload has " + std::to_string(bytes.size() - kVecHeaderSize) + " bytes, expected " +
              std::to_string(expected - kVecHeaderSize));
  require(bytes.size() == expected, Errc::invariant_violation, "trailing bytes after payload");
  out.data.resize(out.dim * out.count);
  for (std::size_t i = 0; i < out.data.size(); ++i)
    out.data[i] = std::bit_cast<float>(detail::get_le<std::uint32_t>(p + kVecHeaderSize + 4 * i));
  return out;
}

inline std::string encode_meta(const EmbeddingStore& store) {
  std::string out;
  for (const auto& r : store.records()) {
    nlohmann::ordered_json j;
    j["occurrence_id"] = r.occurrence_id;
    j["doc_id"] = r.doc_id;
    j["year"] = r.year;
    j["journal"] = r.journal;
    j["token"] = r.token;
    out += j.dump();
    out += '\n';
  }
  return out;
}

/// Writes `<stem>.vec` and `<stem>.meta.jsonl`. The store is re-validated
/// before anything touches the filesystem.
inline void write_store(const EmbeddingStore& store, const std::filesystem::path& stem) {
  // A default-constructed or moved-from store may not satisfy the invariants.
  EmbeddingStore checked(store.dim(), store.matrix(), store.records());
  const std::string vec = encode_vec(checked.dim(), checked.count(), checked.matrix());
  const std::string meta = encode_meta(checked);
  detail::write_file(detail::vec_path(stem), vec);
  detail::write_file(detail::meta_path(stem), meta);
}

inline EmbeddingStore read_store(const std::filesystem::path& stem) {
  using detail::require;
  VecPayload vec = decode_vec(detail::read_file(detail::vec_path(stem)));

  std::ifstream meta(detail::meta_path(stem));
  if (!meta) throw Error(Errc::io_error, "cannot open " + detail::meta_path(stem).string());
  std::vector<EmbeddingRecord> records;
  records.reserve(vec.count);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(meta, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    require(records.size() < vec.count, Errc::metadata_mismatch,
            "more metadata lines than vectors (" + std::to_string(vec.count) + ")");
    EmbeddingRecord r;
    try {
      auto j = nlohmann::json::parse(line);
      r.occurrence_id = j.at("occurrence_id").get<std::uint64_t>();
      r.doc_id = j.at("doc_id").get<std::string>();
      r.year = j.at("year").get<int>();
      r.journal = j.at("journal").get<std::string>();
      r.token = j.at("token").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      throw Error(Errc::malformed_metadata, "line " + std::to_string(line_no) + ": " + e.what());
    }
    r.row = records.size();
    records.push_back(std::move(r));
  }
  require(records.size() == vec.count, Errc::metadata_mismatch,
          std::to_string(records.size()) + " metadata lines for " + std::to_string(vec.count) +
              " vectors");
  return EmbeddingStore(vec.dim, std::move(vec.data), std::move(records));
}

inline TimeSlice slice_by_year(const EmbeddingStore& store, int year) {
  TimeSlice slice{year, {}};
  for (const auto& r : store.records())
    if (r.year == year) slice.indices.push_back(r.row);
  return slice;
}

/// One slice per distinct year, ascending.
inline std::vector<TimeSlice> slices_by_year(const EmbeddingStore& store) {
  std::map<int, TimeSlice> by_year;
  for (const auto& r : store.records()) {
    auto& s = by_year[r.year];
    s.year = r.year;
    s.indices.push_back(r.row);
  }
  std::vector<TimeSlice> out;
  out.reserve(by_year.size());
  for (auto& [year, s] : by_year) out.push_back(std::move(s));
  return out;
}

struct StoreFilter {
  std::optional<std::set<std::string>> journals;
  std::optional<std::pair<int, int>> year_range;  // inclusive
  std::optional<std::string> token;
};

/// Keeps rows of `rows` (ascending) in a new compacted store.
inline EmbeddingStore select_rows(const EmbeddingStore& store, std::span<const std::size_t> rows) {
  StoreBuilder builder(store.dim());
  builder.reserve(rows.size());
  for (std::size_t i : rows) builder.add(store.record(i), store.row(i));
  return std::move(builder).build();
}

inline EmbeddingStore filter_store(const EmbeddingStore& store, const StoreFilter& filter) {
  if (filter.year_range)
    detail::require(filter.year_range->first <= filter.year_range->second, Errc::invalid_argument,
                    "year range lo > hi");
  std::vector<std::size_t> keep;
  for (const auto& r : store.records()) {
    if (filter.journals && !filter.journals->contains(r.journal)) continue;
    if (filter.year_range && (r.year < filter.year_range->first || r.year > filter.year_range->second))
      continue;
    if (filter.token && r.token != *filter.token) continue;
    keep.push_back(r.row);
  }
  return select_rows(store, keep);
}

}  // namespace scd
