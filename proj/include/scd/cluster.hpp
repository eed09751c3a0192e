#pragma once

// Sense-cluster induction: K-Means (greedy k-means++ seeding, Lloyd updates)
// and Affinity Propagation over negative squared Euclidean similarities, plus
// the per-year stratified sampler used to bound AP's quadratic memory.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "scd/embedstore.hpp"
#include "scd/error.hpp"
#include "scd/matrix.hpp"
#include "scd/parallel.hpp"
#include "scd/random.hpp"

namespace scd {

enum class ClusterMethod { kmeans, affinity_propagation };

inline const char* to_string(ClusterMethod m) {
  return m == ClusterMethod::kmeans ? "kmeans" : "affinity_propagation";
}

inline ClusterMethod parse_cluster_method(const std::string& s) {
  if (s == "kmeans" || s == "km") return ClusterMethod::kmeans;
  if (s == "affinity_propagation" || s == "ap") return ClusterMethod::affinity_propagation;
  throw Error(Errc::invalid_argument, "unknown cluster method '" + s + "'");
}

struct KMeansParams {
  std::size_t k = 10;
  std::uint64_t seed = 0;
  std::size_t max_iter = 300;
  double tol = 1e-6;      // max centroid shift that counts as converged
  std::size_t n_init = 4;  // independent seedings; lowest inertia wins
};

struct APParams {
  double damping = 0.5;
  std::size_t max_iter = 1000;
  std::size_t convergence_iter = 50;
  std::optional<double> preference;  // nullopt: median of pairwise similarities
  std::uint64_t seed = 0;
  std::size_t max_rows = 50'000;
};

inline nlohmann::ordered_json to_json(const KMeansParams& p) {
  return {{"k", p.k}, {"seed", p.seed}, {"max_iter", p.max_iter}, {"tol", p.tol}, {"n_init", p.n_init}};
}

inline nlohmann::ordered_json to_json(const APParams& p) {
  nlohmann::ordered_json j{{"damping", p.damping},
                           {"max_iter", p.max_iter},
                           {"convergence_iter", p.convergence_iter}};
  if (p.preference)
    j["preference"] = *p.preference;
  else
    j["preference"] = "median";
  j["seed"] = p.seed;
  j["max_rows"] = p.max_rows;
  return j;
}

struct ClusterModel {
  ClusterMethod method = ClusterMethod::kmeans;
  std::size_t n_clusters = 0;
  std::vector<std::uint32_t> labels;  // one per input row
  Matrix centers;                     // n_clusters x dim
  std::vector<std::size_t> exemplar_rows;  // AP only
  std::size_t iterations = 0;
  bool converged = false;
  double inertia = 0.0;                 // K-Means: within-cluster sum of squares
  std::vector<double> inertia_history;  // K-Means: objective after each assignment
  nlohmann::ordered_json params;        // effective parameters, incl. resolved AP preference
};

namespace detail {

struct Assignment {
  std::vector<std::uint32_t> labels;
  std::vector<double> dist2;
  double inertia = 0.0;
};

inline constexpr std::size_t kAssignBlock = 256;

inline Assignment assign_nearest(const Matrix& x, const Matrix& centers) {
  const std::size_t n = x.rows();
  Assignment a;
  a.labels.resize(n);
  a.dist2.resize(n);
  std::vector<double> block_sums(parallel::block_count(n, kAssignBlock), 0.0);
  parallel::for_each_block(block_sums.size(), [&](std::size_t b) {
    auto r = parallel::block_range(n, kAssignBlock, b);
    double sum = 0.0;
    for (std::size_t i = r.begin; i < r.end; ++i) {
      double best = std::numeric_limits<double>::infinity();
      std::uint32_t best_c = 0;
      for (std::size_t c = 0; c < centers.rows(); ++c) {
        double d = squared_distance(x.row(i), centers.row(c));
        if (d < best) {
          best = d;
          best_c = static_cast<std::uint32_t>(c);
        }
      }
      a.labels[i] = best_c;
      a.dist2[i] = best;
      sum += best;
    }
    block_sums[b] = sum;
  });
  for (double s : block_sums) a.inertia += s;
  return a;
}

/// Member means in row order; counts returned alongside.
inline Matrix cluster_means(const Matrix& x, std::span<const std::uint32_t> labels, std::size_t k,
                            std::vector<std::size_t>& counts) {
  Matrix sums(k, x.cols());
  counts.assign(k, 0);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto dst = sums.row(labels[i]);
    auto src = x.row(i);
    for (std::size_t d = 0; d < x.cols(); ++d) dst[d] += src[d];
    ++counts[labels[i]];
  }
  for (std::size_t c = 0; c < k; ++c) {
    if (counts[c] == 0) continue;
    const double inv = 1.0 / static_cast<double>(counts[c]);
    for (double& v : sums.row(c)) v *= inv;
  }
  return sums;
}

inline double pairwise_potential(const Matrix& x, std::span<const double> closest,
                                 std::span<const double> candidate_row, std::vector<double>& out) {
  const std::size_t n = x.rows();
  out.resize(n);
  std::vector<double> block_sums(parallel::block_count(n, kAssignBlock), 0.0);
  parallel::for_each_block(block_sums.size(), [&](std::size_t b) {
    auto r = parallel::block_range(n, kAssignBlock, b);
    double sum = 0.0;
    for (std::size_t i = r.begin; i < r.end; ++i) {
      out[i] = std::min(closest[i], squared_distance(x.row(i), candidate_row));
      sum += out[i];
    }
    block_sums[b] = sum;
  });
  double total = 0.0;
  for (double s : block_sums) total += s;
  return total;
}

/// Greedy k-means++: each new center is the best (lowest potential) of
/// 2 + floor(ln k) D^2-weighted candidates.
inline Matrix kmeans_plusplus(const Matrix& x, std::size_t k, Rng& rng) {
  const std::size_t n = x.rows();
  Matrix centers(k, x.cols());
  const std::size_t trials = 2 + static_cast<std::size_t>(std::log(static_cast<double>(k)));

  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  std::size_t first = pick(rng);
  std::ranges::copy(x.row(first), centers.row(0).begin());

  std::vector<double> closest(n, std::numeric_limits<double>::infinity());
  double potential = pairwise_potential(x, closest, x.row(first), closest);

  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<double> cumulative(n);
  std::vector<double> candidate_dist, best_dist;
  for (std::size_t c = 1; c < k; ++c) {
    std::partial_sum(closest.begin(), closest.end(), cumulative.begin());
    double best_pot = std::numeric_limits<double>::infinity();
    std::size_t best_idx = 0;
    for (std::size_t t = 0; t < trials; ++t) {
      const double target = unit(rng) * potential;
      auto it = std::upper_bound(cumulative.begin(), cumulative.end(), target);
      std::size_t idx = std::min<std::size_t>(static_cast<std::size_t>(it - cumulative.begin()), n - 1);
      double pot = pairwise_potential(x, closest, x.row(idx), candidate_dist);
      if (pot < best_pot) {
        best_pot = pot;
        best_idx = idx;
        best_dist.swap(candidate_dist);
      }
    }
    std::ranges::copy(x.row(best_idx), centers.row(c).begin());
    closest.swap(best_dist);
    potential = best_pot;
  }
  return centers;
}

/// Lloyd iterations from the given centers until the labels repeat, the
/// largest centroid shift drops to `tol`, or max_iter is reached. Empty
/// clusters are re-seeded at the point farthest from its own centroid.
inline ClusterModel lloyd(const Matrix& x, Matrix centers, const KMeansParams& params) {
  const std::size_t k = centers.rows();
  ClusterModel model;
  model.method = ClusterMethod::kmeans;
  model.n_clusters = k;

  std::vector<std::uint32_t> previous;
  std::vector<std::size_t> counts;
  Assignment a;
  for (std::size_t it = 1; it <= params.max_iter; ++it) {
    model.iterations = it;
    a = assign_nearest(x, centers);
    model.inertia_history.push_back(a.inertia);

    Matrix means = cluster_means(x, a.labels, k, counts);
    if (std::ranges::find(counts, std::size_t{0}) != counts.end()) {
      std::vector<bool> taken(x.rows(), false);
      for (std::size_t c = 0; c < k; ++c) {
        if (counts[c] != 0) continue;
        std::size_t far = x.rows();
        double far_d = -1.0;
        for (std::size_t i = 0; i < x.rows(); ++i) {
          if (taken[i] || counts[a.labels[i]] <= 1) continue;
          if (a.dist2[i] > far_d) {
            far_d = a.dist2[i];
            far = i;
          }
        }
        if (far == x.rows()) break;
        taken[far] = true;
        --counts[a.labels[far]];
        a.labels[far] = static_cast<std::uint32_t>(c);
        counts[c] = 1;
      }
      centers = cluster_means(x, a.labels, k, counts);
      previous.clear();
      continue;
    }

    if (a.labels == previous) {
      model.converged = true;
      break;
    }
    double shift = 0.0;
    for (std::size_t c = 0; c < k; ++c)
      shift = std::max(shift, std::sqrt(squared_distance(means.row(c), centers.row(c))));
    centers = std::move(means);
    previous = a.labels;
    if (shift <= params.tol) {
      model.converged = true;
      break;
    }
  }

  model.centers = cluster_means(x, a.labels, k, counts);
  model.labels = std::move(a.labels);
  model.inertia = 0.0;
  for (std::size_t i = 0; i < x.rows(); ++i)
    model.inertia += squared_distance(x.row(i), model.centers.row(model.labels[i]));
  if (std::ranges::find(counts, std::size_t{0}) != counts.end())
    model.inertia = std::numeric_limits<double>::infinity();
  return model;
}

inline Matrix rows_of(const Matrix& x, std::span<const std::size_t> rows) {
  Matrix out(rows.size(), x.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) std::ranges::copy(x.row(rows[i]), out.row(i).begin());
  return out;
}

/// One split-merge move: merge the pair of clusters that is cheapest to
/// merge, split the cluster whose 2-means split gains the most, then rerun
/// Lloyd. Returns the new model only if the objective strictly drops.
inline std::optional<ClusterModel> split_merge(const Matrix& x, const ClusterModel& model,
                                               const KMeansParams& params, Rng& rng) {
  const std::size_t k = model.n_clusters;
  if (k < 3) return std::nullopt;
  std::vector<std::vector<std::size_t>> members(k);
  for (std::size_t i = 0; i < x.rows(); ++i) members[model.labels[i]].push_back(i);

  // Merge cost n_a n_b / (n_a + n_b) |c_a - c_b|^2.
  double merge_cost = std::numeric_limits<double>::infinity();
  std::size_t ma = 0, mb = 0;
  for (std::size_t a = 0; a < k; ++a)
    for (std::size_t b = a + 1; b < k; ++b) {
      const double na = static_cast<double>(members[a].size());
      const double nb = static_cast<double>(members[b].size());
      const double cost = na * nb / (na + nb) * squared_distance(model.centers.row(a), model.centers.row(b));
      if (cost < merge_cost) {
        merge_cost = cost;
        ma = a;
        mb = b;
      }
    }

  double best_gain = 0.0;
  std::size_t split = k;
  Matrix split_centers;
  const KMeansParams two{.k = 2, .seed = 0, .max_iter = params.max_iter, .tol = params.tol, .n_init = 1};
  for (std::size_t c = 0; c < k; ++c) {
    if (c == ma || c == mb || members[c].size() < 2) continue;
    const Matrix sub = rows_of(x, members[c]);
    double before = 0.0;
    for (std::size_t i = 0; i < sub.rows(); ++i) before += squared_distance(sub.row(i), model.centers.row(c));
    const ClusterModel halves = lloyd(sub, kmeans_plusplus(sub, 2, rng), two);
    const double gain = before - halves.inertia;
    if (gain > best_gain) {
      best_gain = gain;
      split = c;
      split_centers = halves.centers;
    }
  }
  if (split == k || best_gain <= merge_cost) return std::nullopt;

  Matrix centers = model.centers;
  const double na = static_cast<double>(members[ma].size());
  const double nb = static_cast<double>(members[mb].size());
  for (std::size_t d = 0; d < x.cols(); ++d) {
    centers(ma, d) = (na * model.centers(ma, d) + nb * model.centers(mb, d)) / (na + nb);
    centers(mb, d) = split_centers(0, d);
    centers(split, d) = split_centers(1, d);
  }
  ClusterModel next = lloyd(x, std::move(centers), params);
  if (!(next.inertia < model.inertia)) return std::nullopt;
  return next;
}

inline ClusterModel kmeans_single(const Matrix& x, const KMeansParams& params, Rng& rng) {
  ClusterModel model = lloyd(x, kmeans_plusplus(x, params.k, rng), params);
  for (std::size_t round = 0; round < params.k; ++round) {
    auto next = split_merge(x, model, params, rng);
    if (!next) break;
    std::vector<double> history = std::move(model.inertia_history);
    history.insert(history.end(), next->inertia_history.begin(), next->inertia_history.end());
    const std::size_t iterations = model.iterations + next->iterations;
    model = std::move(*next);
    model.inertia_history = std::move(history);
    model.iterations = iterations;
  }
  detail::require(std::isfinite(model.inertia), Errc::invalid_argument,
                  "could not populate " + std::to_string(params.k) + " non-empty clusters");
  return model;
}

}  // namespace detail

inline ClusterModel kmeans_fit(const Matrix& x, const KMeansParams& params) {
  using detail::require;
  require(params.k >= 1, Errc::invalid_argument, "k must be at least 1");
  require(x.rows() >= params.k, Errc::invalid_argument,
          "need at least k=" + std::to_string(params.k) + " vectors, got " + std::to_string(x.rows()));
  require(params.max_iter >= 1 && params.n_init >= 1, Errc::invalid_argument,
          "max_iter and n_init must be positive");
  for (double v : x.data()) require(std::isfinite(v), Errc::invalid_argument, "non-finite input");

  std::optional<ClusterModel> best;
  std::optional<Error> last_error;
  for (std::size_t run = 0; run < params.n_init; ++run) {
    Rng rng = make_rng(params.seed, run);
    try {
      ClusterModel m = detail::kmeans_single(x, params, rng);
      if (!best || m.inertia < best->inertia) best = std::move(m);
    } catch (const Error& e) {
      last_error = e;
    }
  }
  if (!best) throw *last_error;
  best->params = to_json(params);
  return std::move(*best);
}

inline ClusterModel kmeans_fit(const EmbeddingStore& store, const KMeansParams& params) {
  return kmeans_fit(store.to_matrix(), params);
}

namespace detail {

inline constexpr std::size_t kApRowBlock = 64;

/// Median of the off-diagonal entries of a square matrix.
inline double offdiag_median(const Matrix& s) {
  const std::size_t n = s.rows();
  std::vector<double> values;
  values.reserve(n * (n - 1));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (i != j) values.push_back(s(i, j));
  const std::size_t mid = values.size() / 2;
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid), values.end());
  double upper = values[mid];
  if (values.size() % 2 == 1) return upper;
  double lower = *std::max_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lower + upper);
}

inline ClusterModel ap_model_from_exemplars(const Matrix& x, const Matrix& s,
                                            std::vector<std::size_t> exemplars) {
  const std::size_t n = x.rows();
  auto nearest_exemplar = [&](std::size_t i) {
    std::size_t best = 0;
    for (std::size_t e = 1; e < exemplars.size(); ++e)
      if (s(i, exemplars[e]) > s(i, exemplars[best])) best = e;
    return best;
  };
  std::vector<std::size_t> c(n);
  for (std::size_t i = 0; i < n; ++i) c[i] = nearest_exemplar(i);
  for (std::size_t e = 0; e < exemplars.size(); ++e) c[exemplars[e]] = e;

  // Refine: each cluster's exemplar becomes the member with the largest
  // summed similarity to the other members.
  for (std::size_t e = 0; e < exemplars.size(); ++e) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < n; ++i)
      if (c[i] == e) members.push_back(i);
    double best_score = -std::numeric_limits<double>::infinity();
    for (std::size_t j : members) {
      double score = 0.0;
      for (std::size_t i : members) score += s(i, j);
      if (score > best_score) {
        best_score = score;
        exemplars[e] = j;
      }
    }
  }
  std::ranges::sort(exemplars);
  exemplars.erase(std::unique(exemplars.begin(), exemplars.end()), exemplars.end());
  for (std::size_t i = 0; i < n; ++i) c[i] = nearest_exemplar(i);
  for (std::size_t e = 0; e < exemplars.size(); ++e) c[exemplars[e]] = e;

  ClusterModel model;
  model.method = ClusterMethod::affinity_propagation;
  model.n_clusters = exemplars.size();
  model.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) model.labels[i] = static_cast<std::uint32_t>(c[i]);
  model.centers = Matrix(exemplars.size(), x.cols());
  for (std::size_t e = 0; e < exemplars.size(); ++e)
    std::ranges::copy(x.row(exemplars[e]), model.centers.row(e).begin());
  model.exemplar_rows = std::move(exemplars);
  return model;
}

}  // namespace detail

/// Affinity propagation with damped responsibility/availability updates.
/// Throws ConvergenceError (with the last exemplar set) if the exemplar set
/// has not been stable for `convergence_iter` iterations by `max_iter`.
inline ClusterModel ap_fit(const Matrix& x, const APParams& params) {
  using detail::require;
  const std::size_t n = x.rows();
  require(n >= 2, Errc::invalid_argument, "affinity propagation needs at least 2 vectors");
  require(params.damping >= 0.5 && params.damping < 1.0, Errc::invalid_argument,
          "damping must be in [0.5, 1)");
  require(params.max_iter >= 1 && params.convergence_iter >= 1, Errc::invalid_argument,
          "max_iter and convergence_iter must be positive");
  require(n <= params.max_rows, Errc::too_many_rows,
          std::to_string(n) + " rows exceed the affinity propagation cap of " +
              std::to_string(params.max_rows) + "; sample the store first");
  for (double v : x.data()) require(std::isfinite(v), Errc::invalid_argument, "non-finite input");

  Matrix s(n, n);
  parallel::for_range(n, detail::kApRowBlock, [&](std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i)
      for (std::size_t j = 0; j < n; ++j) s(i, j) = -squared_distance(x.row(i), x.row(j));
  });

  const double preference = params.preference ? *params.preference : detail::offdiag_median(s);
  auto params_json = to_json(params);
  params_json["preference_value"] = preference;

  bool all_equal = true;
  const double first_sim = s(0, 1);
  for (std::size_t i = 0; i < n && all_equal; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (i != j && s(i, j) != first_sim) {
        all_equal = false;
        break;
      }
  if (all_equal) {
    std::vector<std::size_t> exemplars;
    if (preference > first_sim) {
      exemplars.resize(n);
      std::iota(exemplars.begin(), exemplars.end(), std::size_t{0});
    } else {
      exemplars.push_back(0);
    }
    for (std::size_t i = 0; i < n; ++i) s(i, i) = preference;
    ClusterModel m = detail::ap_model_from_exemplars(x, s, std::move(exemplars));
    m.converged = true;
    m.params = std::move(params_json);
    return m;
  }

  for (std::size_t i = 0; i < n; ++i) s(i, i) = preference;

  // Tiny seeded noise breaks exact ties between equally good exemplars.
  constexpr double eps = std::numeric_limits<double>::epsilon();
  constexpr double tiny = std::numeric_limits<double>::min();
  parallel::for_range(n, detail::kApRowBlock, [&](std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) {
      Rng rng = make_rng(params.seed, i);
      std::normal_distribution<double> normal;
      for (std::size_t j = 0; j < n; ++j) s(i, j) += (eps * s(i, j) + tiny * 100.0) * normal(rng);
    }
  });

  Matrix r(n, n), a(n, n);
  const double keep = params.damping;
  const double take = 1.0 - params.damping;
  std::vector<double> colsum(n);
  std::vector<std::vector<unsigned char>> history(params.convergence_iter,
                                                  std::vector<unsigned char>(n, 0));
  std::vector<unsigned char> is_exemplar(n, 0);

  for (std::size_t it = 0; it < params.max_iter; ++it) {
    parallel::for_range(n, detail::kApRowBlock, [&](std::size_t b, std::size_t e) {
      for (std::size_t i = b; i < e; ++i) {
        auto si = s.row(i);
        auto ai = a.row(i);
        auto ri = r.row(i);
        double first = -std::numeric_limits<double>::infinity();
        double second = first;
        std::size_t arg = 0;
        for (std::size_t k = 0; k < n; ++k) {
          const double v = ai[k] + si[k];
          if (v > first) {
            second = first;
            first = v;
            arg = k;
          } else if (v > second) {
            second = v;
          }
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double fresh = si[k] - (k == arg ? second : first);
          ri[k] = keep * ri[k] + take * fresh;
        }
      }
    });

    // Column sums of max(R, 0) with R's diagonal kept as-is, accumulated in
    // row order per column block.
    parallel::for_range(n, 256, [&](std::size_t cb, std::size_t ce) {
      for (std::size_t k = cb; k < ce; ++k) colsum[k] = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        auto ri = r.row(i);
        for (std::size_t k = cb; k < ce; ++k) colsum[k] += (i == k) ? ri[k] : std::max(ri[k], 0.0);
      }
    });

    parallel::for_range(n, detail::kApRowBlock, [&](std::size_t b, std::size_t e) {
      for (std::size_t i = b; i < e; ++i) {
        auto ri = r.row(i);
        auto ai = a.row(i);
        for (std::size_t k = 0; k < n; ++k) {
          double fresh;
          if (i == k) {
            fresh = colsum[k] - ri[k];
          } else {
            fresh = std::min(colsum[k] - std::max(ri[k], 0.0), 0.0);
          }
          ai[k] = keep * ai[k] + take * fresh;
        }
      }
    });

    std::size_t n_exemplars = 0;
    for (std::size_t k = 0; k < n; ++k) {
      is_exemplar[k] = (a(k, k) + r(k, k)) > 0.0 ? 1 : 0;
      n_exemplars += is_exemplar[k];
    }
    history[it % params.convergence_iter] = is_exemplar;

    if (it + 1 >= params.convergence_iter && n_exemplars > 0) {
      bool stable = true;
      for (std::size_t k = 0; k < n && stable; ++k) {
        std::size_t votes = 0;
        for (const auto& h : history) votes += h[k];
        stable = votes == 0 || votes == params.convergence_iter;
      }
      if (stable) {
        std::vector<std::size_t> exemplars;
        for (std::size_t k = 0; k < n; ++k)
          if (is_exemplar[k]) exemplars.push_back(k);
        ClusterModel m = detail::ap_model_from_exemplars(x, s, std::move(exemplars));
        m.iterations = it + 1;
        m.converged = true;
        m.params = std::move(params_json);
        return m;
      }
    }
  }

  std::vector<std::size_t> partial;
  for (std::size_t k = 0; k < n; ++k)
    if (is_exemplar[k]) partial.push_back(k);
  throw ConvergenceError("affinity propagation did not converge within " +
                             std::to_string(params.max_iter) + " iterations",
                         std::move(partial));
}

inline ClusterModel ap_fit(const EmbeddingStore& store, const APParams& params) {
  detail::require(store.count() <= params.max_rows, Errc::too_many_rows,
                  std::to_string(store.count()) + " rows exceed the affinity propagation cap of " +
                      std::to_string(params.max_rows) + "; sample the store first");
  return ap_fit(store.to_matrix(), params);
}

/// Rows kept for a year of n embeddings: min(n, max(ceil(fraction * n), min_per_year)).
inline std::size_t stratified_quota(std::size_t n, double fraction, std::size_t min_per_year) {
  // The relative nudge keeps products like 0.1 * 30 from rounding up past 3.
  const double scaled = fraction * static_cast<double>(n);
  auto proportional = static_cast<std::size_t>(std::ceil(scaled * (1.0 - 1e-12)));
  return std::min(n, std::max(proportional, min_per_year));
}

/// Per-year uniform sampling without replacement; surviving rows keep their
/// original relative order.
inline EmbeddingStore stratified_sample(const EmbeddingStore& store, double fraction = 0.25,
                                        std::size_t min_per_year = 400, std::uint64_t seed = 0) {
  detail::require(fraction > 0.0 && fraction <= 1.0, Errc::invalid_argument,
                  "fraction must be in (0, 1]");
  std::vector<std::size_t> keep;
  for (const TimeSlice& slice : slices_by_year(store)) {
    const std::size_t m = stratified_quota(slice.size(), fraction, min_per_year);
    Rng rng = make_rng(seed, static_cast<std::uint64_t>(slice.year));
    std::sample(slice.indices.begin(), slice.indices.end(), std::back_inserter(keep), m, rng);
  }
  std::ranges::sort(keep);
  return select_rows(store, keep);
}

/// Writes `<stem>.json`, `<stem>.labels.bin` (u32 LE per row) and
/// `<stem>.centers.vec`.
inline void write_cluster_model(const ClusterModel& model, const std::filesystem::path& stem) {
  nlohmann::ordered_json j;
  j["method"] = to_string(model.method);
  j["params"] = model.params;
  j["n_clusters"] = model.n_clusters;
  j["n_rows"] = model.labels.size();
  j["exemplar_rows"] = model.exemplar_rows;
  j["iterations"] = model.iterations;
  j["converged"] = model.converged;
  if (model.method == ClusterMethod::kmeans) j["inertia"] = model.inertia;
  detail::write_file(stem.string() + ".json", j.dump(2) + "\n");

  std::string labels;
  labels.reserve(model.labels.size() * 4);
  for (auto l : model.labels) detail::put_le<std::uint32_t>(labels, l);
  detail::write_file(stem.string() + ".labels.bin", labels);

  std::vector<float> centers(model.centers.data().begin(), model.centers.data().end());
  detail::write_file(stem.string() + ".centers.vec",
                     encode_vec(model.centers.cols(), model.centers.rows(), centers));
}

inline ClusterModel read_cluster_model(const std::filesystem::path& stem) {
  using detail::require;
  ClusterModel model;
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(detail::read_file(stem.string() + ".json"));
    model.method = parse_cluster_method(j.at("method").get<std::string>());
    model.n_clusters = j.at("n_clusters").get<std::size_t>();
    model.exemplar_rows = j.at("exemplar_rows").get<std::vector<std::size_t>>();
    model.iterations = j.at("iterations").get<std::size_t>();
    model.converged = j.at("converged").get<bool>();
    model.inertia = j.value("inertia", 0.0);
    model.params = j.at("params");
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::malformed_metadata, stem.string() + ".json: " + e.what());
  }
  const std::string labels = detail::read_file(stem.string() + ".labels.bin");
  require(labels.size() % 4 == 0, Errc::truncated_payload, "labels file not a multiple of 4 bytes");
  model.labels.resize(labels.size() / 4);
  const auto* p = reinterpret_cast<const unsigned char*>(labels.data());
  for (std::size_t i = 0; i < model.labels.size(); ++i) {
    model.labels[i] = detail::get_le<std::uint32_t>(p + 4 * i);
    require(model.labels[i] < model.n_clusters, Errc::invariant_violation, "label out of range");
  }
  VecPayload centers = decode_vec(detail::read_file(stem.string() + ".centers.vec"));
  require(centers.count == model.n_clusters, Errc::metadata_mismatch, "center count mismatch");
  model.centers = Matrix(centers.count, centers.dim,
                         std::vector<double>(centers.data.begin(), centers.data.end()));
  return model;
}

}  // namespace scd
