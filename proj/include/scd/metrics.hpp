#pragma once

// Semantic change metrics over time slices of one target word.
//   form-based:  PRT (inverted cosine similarity of yearly prototypes), AID
//   sense-based: normalized Shannon entropy and JSD of cluster distributions

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "scd/cluster.hpp"
#include "scd/embedstore.hpp"
#include "scd/error.hpp"
#include "scd/matrix.hpp"
#include "scd/parallel.hpp"

namespace scd {

struct Prototype {
  int year = 0;
  std::vector<double> vector;
  std::size_t support = 0;
};

struct ClusterDistribution {
  int year = 0;
  std::vector<double> probs;
  std::size_t support = 0;
};

enum class Metric { prt, jsd, entropy, aid };

enum class AidMode {
  paper,     // pair-sum divided by the slice size
  pair_mean  // pair-sum divided by the number of pairs
};

inline const char* to_string(Metric m) {
  switch (m) {
    case Metric::prt: return "PRT";
    case Metric::jsd: return "JSD";
    case Metric::entropy: return "entropy";
    case Metric::aid: return "AID";
  }
  return "?";
}

inline Metric parse_metric(std::string s) {
  std::ranges::transform(s, s.begin(), [](unsigned char c) { return std::tolower(c); });
  if (s == "prt") return Metric::prt;
  if (s == "jsd") return Metric::jsd;
  if (s == "entropy") return Metric::entropy;
  if (s == "aid") return Metric::aid;
  throw Error(Errc::invalid_argument, "unknown metric '" + s + "'");
}

inline const char* to_string(AidMode m) { return m == AidMode::paper ? "paper" : "pair_mean"; }

inline AidMode parse_aid_mode(const std::string& s) {
  if (s == "paper") return AidMode::paper;
  if (s == "pair_mean") return AidMode::pair_mean;
  throw Error(Errc::invalid_argument, "unknown AID mode '" + s + "'");
}

/// Mean of the given rows, accumulated in 64-bit in row order.
inline std::vector<double> mean_of_rows(const EmbeddingStore& store, std::span<const std::size_t> rows) {
  detail::require(!rows.empty(), Errc::empty_slice, "cannot average an empty slice");
  std::vector<double> acc(store.dim(), 0.0);
  for (std::size_t i : rows) {
    auto v = store.row(i);
    for (std::size_t d = 0; d < acc.size(); ++d) acc[d] += static_cast<double>(v[d]);
  }
  const double n = static_cast<double>(rows.size());
  for (double& v : acc) v /= n;
  return acc;
}

inline Prototype prototype(const EmbeddingStore& store, const TimeSlice& slice) {
  return {slice.year, mean_of_rows(store, slice.indices), slice.size()};
}

inline double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  detail::require(a.size() == b.size(), Errc::length_mismatch, "vector lengths differ");
  const double aa = dot(a, a);
  const double bb = dot(b, b);
  detail::require(aa > 0.0 && bb > 0.0, Errc::zero_norm, "cosine similarity of a zero vector");
  // sqrt(aa * bb) rather than sqrt(aa) * sqrt(bb): equals aa exactly when a == b.
  return std::clamp(dot(a, b) / std::sqrt(aa * bb), -1.0, 1.0);
}

/// Inverted cosine similarity of two prototypes; >= 1, and 1 for parallel
/// vectors. Throws non_positive_similarity when CS <= 0.
inline double prt(std::span<const double> a, std::span<const double> b) {
  detail::require(a.size() == b.size(), Errc::length_mismatch, "prototype lengths differ");
  const double aa = dot(a, a);
  const double bb = dot(b, b);
  detail::require(aa > 0.0 && bb > 0.0, Errc::zero_norm, "PRT of a zero prototype");
  const double ab = dot(a, b);
  detail::require(ab > 0.0, Errc::non_positive_similarity,
                  "prototypes have cosine similarity <= 0; PRT undefined");
  return std::max(1.0, std::sqrt(aa * bb) / ab);
}

inline double prt(const Prototype& a, const Prototype& b) { return prt(a.vector, b.vector); }

inline ClusterDistribution cluster_distribution(const ClusterModel& model, const TimeSlice& slice) {
  detail::require(!slice.empty(), Errc::empty_slice, "cluster distribution of an empty slice");
  ClusterDistribution dist{slice.year, std::vector<double>(model.n_clusters, 0.0), slice.size()};
  std::vector<std::size_t> counts(model.n_clusters, 0);
  for (std::size_t i : slice.indices) {
    detail::require(i < model.labels.size(), Errc::invalid_argument,
                    "slice row " + std::to_string(i) + " has no cluster label");
    ++counts[model.labels[i]];
  }
  const double n = static_cast<double>(slice.size());
  for (std::size_t c = 0; c < counts.size(); ++c) dist.probs[c] = static_cast<double>(counts[c]) / n;
  return dist;
}

/// H(P) / ln N with 0 ln 0 = 0; N = 1 gives 0.
inline double entropy_normalized(std::span<const double> probs) {
  detail::require(!probs.empty(), Errc::invalid_argument, "empty distribution");
  double total = 0.0;
  for (double p : probs) {
    detail::require(p >= 0.0 && std::isfinite(p), Errc::invalid_argument, "negative probability");
    total += p;
  }
  detail::require(std::abs(total - 1.0) <= 1e-9, Errc::invalid_argument,
                  "probabilities do not sum to 1");
  if (probs.size() == 1) return 0.0;
  double h = 0.0;
  for (double p : probs)
    if (p > 0.0) h -= p * std::log(p);
  return std::clamp(h / std::log(static_cast<double>(probs.size())), 0.0, 1.0);
}

inline double entropy_normalized(const ClusterDistribution& p) { return entropy_normalized(p.probs); }

/// Jensen-Shannon divergence on normalized entropy:
/// eta((P+Q)/2) - (eta(P) + eta(Q)) / 2, in [0, 1].
inline double jsd(std::span<const double> p, std::span<const double> q) {
  detail::require(p.size() == q.size(), Errc::length_mismatch, "distribution lengths differ");
  detail::require(p.size() >= 2, Errc::invalid_argument, "JSD needs at least 2 clusters");
  std::vector<double> mixture(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) mixture[i] = 0.5 * (p[i] + q[i]);
  const double value =
      entropy_normalized(mixture) - 0.5 * (entropy_normalized(p) + entropy_normalized(q));
  return std::clamp(value, 0.0, 1.0);
}

inline double jsd(const ClusterDistribution& p, const ClusterDistribution& q) {
  return jsd(p.probs, q.probs);
}

namespace detail {
inline constexpr std::size_t kAidBlock = 32;
}

/// Sum of Euclidean distances over all unordered pairs of rows of x.
/// Row blocks are reduced in block order, so the result does not depend on
/// the worker count.
inline double pairwise_distance_sum(const Matrix& x) {
  const std::size_t n = x.rows();
  const std::size_t dim = x.cols();
  constexpr std::size_t tile = 64;
  std::vector<double> block_sums(parallel::block_count(n, detail::kAidBlock), 0.0);
  parallel::for_each_block(block_sums.size(), [&](std::size_t b) {
    auto r = parallel::block_range(n, detail::kAidBlock, b);
    double sum = 0.0;
    // j tiles are shared by the whole i block so they stay cached
    for (std::size_t t0 = r.begin; t0 < n; t0 += tile) {
      const std::size_t t1 = std::min(n, t0 + tile);
      for (std::size_t i = r.begin; i < r.end; ++i) {
        const double* xi = x.row(i).data();
        std::size_t j = std::max(t0, i + 1);
        for (; j + 4 <= t1; j += 4) {
          const double* a = x.row(j).data();
          const double* b1 = x.row(j + 1).data();
          const double* c = x.row(j + 2).data();
          const double* d = x.row(j + 3).data();
          double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
#pragma omp simd reduction(+ : s0, s1, s2, s3)
          for (std::size_t k = 0; k < dim; ++k) {
            const double v = xi[k];
            s0 += (v - a[k]) * (v - a[k]);
            s1 += (v - b1[k]) * (v - b1[k]);
            s2 += (v - c[k]) * (v - c[k]);
            s3 += (v - d[k]) * (v - d[k]);
          }
          sum += std::sqrt(s0) + std::sqrt(s1) + std::sqrt(s2) + std::sqrt(s3);
        }
        for (; j < t1; ++j) sum += std::sqrt(squared_distance(x.row(i), x.row(j)));
      }
    }
    block_sums[b] = sum;
  });
  double total = 0.0;
  for (double s : block_sums) total += s;
  return total;
}

/// Average inner distance of a slice; see AidMode for the normalization.
inline double aid(const EmbeddingStore& store, const TimeSlice& slice, AidMode mode = AidMode::paper) {
  detail::require(slice.size() >= 2, Errc::empty_slice, "AID needs at least 2 embeddings");
  const double total = pairwise_distance_sum(store.to_matrix(slice.indices));
  const double n = static_cast<double>(slice.size());
  return mode == AidMode::paper ? total / n : total / (n * (n - 1.0) / 2.0);
}

// ---------------------------------------------------------------------------
// Yearly series

struct SeriesPoint {
  std::optional<int> from_year;  // set for year-pair metrics (PRT, JSD)
  int year = 0;
  double value = 0.0;

  friend bool operator==(const SeriesPoint&, const SeriesPoint&) = default;
};

struct MetricSeries {
  Metric metric = Metric::prt;
  std::string variant;
  std::vector<SeriesPoint> points;  // ascending by year
  std::vector<int> gaps;            // years in range without embeddings
  std::string params_digest;

  bool is_pair_series() const noexcept { return metric == Metric::prt || metric == Metric::jsd; }
};

struct SeriesRequest {
  Metric metric = Metric::prt;
  AidMode aid_mode = AidMode::paper;
  std::optional<std::pair<int, int>> year_range;
  std::string params_digest;
};

/// Computes one metric across the populated years of the store. Pair
/// metrics compare each populated year with the previous populated year;
/// per-year metrics report each populated year. Years in range with no data
/// are listed in `gaps`.
inline MetricSeries compute_series(const EmbeddingStore& store, const ClusterModel* model,
                                   const SeriesRequest& request) {
  using detail::require;
  const bool needs_model = request.metric == Metric::jsd || request.metric == Metric::entropy;
  require(!needs_model || model != nullptr, Errc::invalid_argument,
          std::string(to_string(request.metric)) + " requires a cluster model");
  require(needs_model || model == nullptr, Errc::invalid_argument,
          std::string(to_string(request.metric)) + " does not use a cluster model");
  if (model)
    require(model->labels.size() == store.count(), Errc::invalid_argument,
            "cluster model labels do not match the store rows");

  MetricSeries series;
  series.metric = request.metric;
  series.params_digest = request.params_digest;
  switch (request.metric) {
    case Metric::prt: series.variant = "prototype"; break;
    case Metric::aid: series.variant = to_string(request.aid_mode); break;
    default: series.variant = to_string(model->method); break;
  }

  std::vector<TimeSlice> slices;
  for (auto& s : slices_by_year(store)) {
    if (request.year_range && (s.year < request.year_range->first || s.year > request.year_range->second))
      continue;
    slices.push_back(std::move(s));
  }
  if (!slices.empty() || request.year_range) {
    const int lo = request.year_range ? request.year_range->first : slices.front().year;
    const int hi = request.year_range ? request.year_range->second : slices.back().year;
    std::size_t k = 0;
    for (int y = lo; y <= hi; ++y) {
      while (k < slices.size() && slices[k].year < y) ++k;
      if (k == slices.size() || slices[k].year != y) series.gaps.push_back(y);
    }
  }

  switch (request.metric) {
    case Metric::prt: {
      std::optional<Prototype> prev;
      for (const auto& s : slices) {
        Prototype cur = prototype(store, s);
        if (prev) series.points.push_back({prev->year, s.year, prt(*prev, cur)});
        prev = std::move(cur);
      }
      break;
    }
    case Metric::jsd: {
      std::optional<ClusterDistribution> prev;
      for (const auto& s : slices) {
        ClusterDistribution cur = cluster_distribution(*model, s);
        if (prev) series.points.push_back({prev->year, s.year, jsd(*prev, cur)});
        prev = std::move(cur);
      }
      break;
    }
    case Metric::entropy:
      for (const auto& s : slices)
        series.points.push_back({std::nullopt, s.year, entropy_normalized(cluster_distribution(*model, s))});
      break;
    case Metric::aid:
      for (const auto& s : slices) {
        if (s.size() < 2) {
          series.gaps.push_back(s.year);
          continue;
        }
        series.points.push_back({std::nullopt, s.year, aid(store, s, request.aid_mode)});
      }
      std::ranges::sort(series.gaps);
      break;
  }
  return series;
}

/// Shortest decimal that round-trips the double.
inline std::string format_double(double v) {
  char buf[32];
  for (int precision = 15; precision <= 17; ++precision) {
    std::snprintf(buf, sizeof buf, "%.*g", precision, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return buf;
}

inline std::string series_key(const SeriesPoint& p) {
  if (p.from_year) return std::to_string(*p.from_year) + "-" + std::to_string(p.year);
  return std::to_string(p.year);
}

/// CSV columns: year (or year_pair), value, metric, variant.
inline std::string to_csv(const MetricSeries& s) {
  std::string out = s.is_pair_series() ? "year_pair,value,metric,variant\n" : "year,value,metric,variant\n";
  for (const auto& p : s.points)
    out += series_key(p) + "," + format_double(p.value) + "," + to_string(s.metric) + "," + s.variant + "\n";
  return out;
}

inline nlohmann::ordered_json to_json(const MetricSeries& s) {
  nlohmann::ordered_json j;
  j["metric"] = to_string(s.metric);
  j["variant"] = s.variant;
  j["params_digest"] = s.params_digest;
  auto points = nlohmann::ordered_json::array();
  for (const auto& p : s.points) {
    nlohmann::ordered_json pj;
    if (p.from_year) pj["from_year"] = *p.from_year;
    pj["year"] = p.year;
    pj["value"] = p.value;
    points.push_back(std::move(pj));
  }
  j["points"] = std::move(points);
  j["gaps"] = s.gaps;
  return j;
}

}  // namespace scd
