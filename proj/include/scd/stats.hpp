#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "scd/embedstore.hpp"
#include "scd/error.hpp"
#include "scd/metrics.hpp"
#include "scd/parallel.hpp"
#include "scd/random.hpp"

namespace scd {

struct PermutationResult {
  std::pair<int, int> year_pair{0, 0};
  double observed = 0.0;
  std::size_t r = 0;
  std::size_t count_ge = 0;
  double p_raw = 1.0;
  std::optional<double> p_adj;
};

struct PermutationOptions {
  std::size_t r_max = 100'000;
  std::optional<std::size_t> budget;  // caps r below r_max when set
  std::uint64_t seed = 0;
};

namespace detail {
inline constexpr std::size_t kPermBlock = 64;
}

/// One-sided permutation test of PRT between two slices. Each permutation
/// pools both slices and re-splits them at the original sizes; permutation i
/// draws from a stream derived from (seed, i). p = (count_ge + 1) / (r + 1).
inline PermutationResult permutation_test_prt(const EmbeddingStore& store, const TimeSlice& first,
                                              const TimeSlice& second,
                                              const PermutationOptions& options = {}) {
  detail::require(first.size() >= 2 && second.size() >= 2, Errc::empty_slice,
                  "permutation test needs at least 2 embeddings per slice");
  PermutationResult result;
  result.year_pair = {first.year, second.year};
  result.observed = prt(mean_of_rows(store, first.indices), mean_of_rows(store, second.indices));
  result.r = options.budget ? std::min(options.r_max, *options.budget) : options.r_max;

  std::vector<std::size_t> pooled(first.indices);
  pooled.insert(pooled.end(), second.indices.begin(), second.indices.end());
  const Matrix x = store.to_matrix(pooled);
  const std::size_t n = pooled.size();
  const std::size_t n_first = first.size();
  const std::size_t dim = x.cols();

  std::vector<double> total(dim, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t d = 0; d < dim; ++d) total[d] += x(i, d);

  std::vector<std::size_t> block_counts(parallel::block_count(result.r, detail::kPermBlock), 0);
  parallel::for_each_block(block_counts.size(), [&](std::size_t b) {
    auto range = parallel::block_range(result.r, detail::kPermBlock, b);
    std::vector<std::size_t> order(n);
    std::vector<double> sum_a(dim), mean_a(dim), mean_b(dim);
    std::size_t count = 0;
    for (std::size_t perm = range.begin; perm < range.end; ++perm) {
      Rng rng = make_rng(options.seed, perm);
      std::iota(order.begin(), order.end(), std::size_t{0});
      // Partial Fisher-Yates: the first n_first positions form group A.
      for (std::size_t i = 0; i < n_first; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, n - 1);
        std::swap(order[i], order[pick(rng)]);
      }
      std::fill(sum_a.begin(), sum_a.end(), 0.0);
      for (std::size_t i = 0; i < n_first; ++i) {
        auto row = x.row(order[i]);
        for (std::size_t d = 0; d < dim; ++d) sum_a[d] += row[d];
      }
      for (std::size_t d = 0; d < dim; ++d) {
        mean_a[d] = sum_a[d] / static_cast<double>(n_first);
        mean_b[d] = (total[d] - sum_a[d]) / static_cast<double>(n - n_first);
      }
      try {
        if (prt(mean_a, mean_b) >= result.observed) ++count;
      } catch (const Error&) {
        ++count;  // undefined statistic counts against significance
      }
    }
    block_counts[b] = count;
  });
  result.count_ge = std::accumulate(block_counts.begin(), block_counts.end(), std::size_t{0});
  result.p_raw = static_cast<double>(result.count_ge + 1) / static_cast<double>(result.r + 1);
  return result;
}

/// Benjamini-Hochberg step-up adjustment, returned in input order.
inline std::vector<double> bh_adjust(std::span<const double> p) {
  for (double v : p)
    detail::require(v > 0.0 && v <= 1.0, Errc::invalid_argument, "p-values must lie in (0, 1]");
  const std::size_t m = p.size();
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::ranges::stable_sort(order, [&](std::size_t a, std::size_t b) { return p[a] < p[b]; });
  std::vector<double> adjusted(m);
  double running = 1.0;
  for (std::size_t rank = m; rank >= 1; --rank) {
    const std::size_t idx = order[rank - 1];
    const double scaled = rank == m ? p[idx] : p[idx] * static_cast<double>(m) / static_cast<double>(rank);
    running = std::min(running, scaled);
    // p * m / rank >= p holds exactly; the max only absorbs rounding.
    adjusted[idx] = std::max(p[idx], running);
  }
  return adjusted;
}

/// Fills p_adj across all results jointly.
inline void bh_adjust(std::vector<PermutationResult>& results) {
  std::vector<double> raw;
  raw.reserve(results.size());
  for (const auto& r : results) raw.push_back(r.p_raw);
  auto adj = bh_adjust(raw);
  for (std::size_t i = 0; i < results.size(); ++i) results[i].p_adj = adj[i];
}

/// Permutation tests for every consecutive populated year pair, BH-adjusted
/// jointly. Pair i uses seed stream i of the root seed.
inline std::vector<PermutationResult> permutation_series(const EmbeddingStore& store,
                                                         const PermutationOptions& options) {
  auto slices = slices_by_year(store);
  std::vector<PermutationResult> results;
  for (std::size_t i = 1; i < slices.size(); ++i) {
    PermutationOptions pair_options = options;
    pair_options.seed = mix_seed(options.seed, i);
    results.push_back(permutation_test_prt(store, slices[i - 1], slices[i], pair_options));
  }
  if (!results.empty()) bh_adjust(results);
  return results;
}

inline std::string to_csv(const std::vector<PermutationResult>& results) {
  std::string out = "year_pair,observed,r,p_raw,p_adj\n";
  for (const auto& r : results) {
    out += std::to_string(r.year_pair.first) + "-" + std::to_string(r.year_pair.second) + "," +
           format_double(r.observed) + "," + std::to_string(r.r) + "," + format_double(r.p_raw) + "," +
           (r.p_adj ? format_double(*r.p_adj) : std::string()) + "\n";
  }
  return out;
}

/// Sample Pearson correlation.
inline double pearson(std::span<const double> x, std::span<const double> y) {
  detail::require(x.size() == y.size(), Errc::length_mismatch, "series lengths differ");
  detail::require(x.size() >= 2, Errc::invalid_argument, "pearson needs at least 2 points");
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx;
    const double dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  detail::require(sxx > 0.0 && syy > 0.0, Errc::zero_variance, "series has zero variance");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

/// Pearson over the points the two series share (same year or year pair).
inline double pearson(const MetricSeries& a, const MetricSeries& b) {
  std::map<std::string, double> lookup;
  for (const auto& p : b.points) lookup[series_key(p)] = p.value;
  std::vector<double> x, y;
  for (const auto& p : a.points) {
    auto it = lookup.find(series_key(p));
    if (it == lookup.end()) continue;
    x.push_back(p.value);
    y.push_back(it->second);
  }
  detail::require(x.size() >= 2, Errc::invalid_argument, "fewer than 2 shared points");
  return pearson(x, y);
}

/// Centered rolling mean over calendar years: each point averages the present
/// points whose year lies within +/- window/2. Edges shrink; gaps stay gaps.
inline MetricSeries rolling_mean(const MetricSeries& series, int window = 3) {
  detail::require(window >= 1 && window % 2 == 1, Errc::invalid_argument,
                  "rolling window must be odd and positive");
  const int half = window / 2;
  MetricSeries out = series;
  if (window > 1) out.variant += "_rolling" + std::to_string(window);
  for (std::size_t i = 0; i < series.points.size(); ++i) {
    // Offsets from the centre value keep constant stretches exactly constant.
    const double centre = series.points[i].value;
    double offset = 0.0;
    std::size_t n = 0;
    for (const auto& q : series.points) {
      if (std::abs(q.year - series.points[i].year) <= half) {
        offset += q.value - centre;
        ++n;
      }
    }
    out.points[i].value = centre + offset / static_cast<double>(n);
  }
  return out;
}

}  // namespace scd
