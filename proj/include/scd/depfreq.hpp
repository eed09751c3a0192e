#pragma once

// Adjective -> head-noun dependency shares per decade or per journal.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "scd/error.hpp"
#include "scd/metrics.hpp"

namespace scd {

struct DependencyRecord {
  std::string adj_lemma;
  std::string head_lemma;
  int year = 0;
  std::string journal;
  std::string doc_id;
};

enum class GroupBy { decade, journal };

inline GroupBy parse_group_by(const std::string& s) {
  if (s == "decade") return GroupBy::decade;
  if (s == "journal") return GroupBy::journal;
  throw Error(Errc::invalid_argument, "group_by must be 'decade' or 'journal', got '" + s + "'");
}

struct DepRow {
  std::string group;
  std::size_t rank = 0;
  std::string head_lemma;
  std::size_t count = 0;
  double share = 0.0;
};

struct DepTable {
  std::vector<DepRow> rows;
};

inline int decade_of(int year) { return year >= 0 ? (year / 10) * 10 : -(((-year) + 9) / 10) * 10; }

inline std::vector<DependencyRecord> read_dependency_records(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::io_error, "cannot open " + path.string());
  std::vector<DependencyRecord> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    DependencyRecord r;
    try {
      auto j = nlohmann::json::parse(line);
      r.adj_lemma = j.at("adj_lemma").get<std::string>();
      r.head_lemma = j.at("head_lemma").get<std::string>();
      r.year = j.at("year").get<int>();
      r.journal = j.at("journal").get<std::string>();
      r.doc_id = j.at("doc_id").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      throw Error(Errc::malformed_metadata, path.string() + " line " + std::to_string(line_no) + ": " + e.what());
    }
    detail::require(!r.adj_lemma.empty() && !r.head_lemma.empty(), Errc::malformed_metadata,
                    path.string() + " line " + std::to_string(line_no) + ": empty lemma");
    out.push_back(std::move(r));
  }
  return out;
}

/// Top-k head lemmas per group with their share of the group's records.
/// Decades ascend numerically, journals lexicographically; equal counts are
/// ordered by lemma.
inline DepTable tabulate_top_dependencies(const std::vector<DependencyRecord>& records, GroupBy group_by,
                                          std::size_t k) {
  detail::require(k >= 1, Errc::invalid_argument, "k must be at least 1");
  std::map<int, std::map<std::string, std::size_t>> by_decade;
  std::map<std::string, std::map<std::string, std::size_t>> by_journal;
  for (const auto& r : records) {
    if (group_by == GroupBy::decade)
      ++by_decade[decade_of(r.year)][r.head_lemma];
    else
      ++by_journal[r.journal][r.head_lemma];
  }

  DepTable table;
  auto emit = [&](const std::string& group, const std::map<std::string, std::size_t>& counts) {
    std::vector<std::pair<std::string, std::size_t>> sorted(counts.begin(), counts.end());
    std::size_t total = 0;
    for (const auto& [lemma, c] : sorted) total += c;
    std::ranges::stable_sort(sorted, [](const auto& a, const auto& b) { return a.second > b.second; });
    for (std::size_t i = 0; i < std::min(k, sorted.size()); ++i)
      table.rows.push_back({group, i + 1, sorted[i].first, sorted[i].second,
                            static_cast<double>(sorted[i].second) / static_cast<double>(total)});
  };
  for (const auto& [decade, counts] : by_decade) emit(std::to_string(decade) + "s", counts);
  for (const auto& [journal, counts] : by_journal) emit(journal, counts);
  return table;
}

inline std::string to_csv(const DepTable& table) {
  std::string out = "group,rank,head_lemma,count,share\n";
  for (const auto& r : table.rows)
    out += r.group + "," + std::to_string(r.rank) + "," + r.head_lemma + "," + std::to_string(r.count) +
           "," + format_double(r.share) + "\n";
  return out;
}

}  // namespace scd
