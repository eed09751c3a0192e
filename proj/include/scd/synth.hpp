#pragma once

// Synthetic diachronic corpus with known ground truth: Gaussian sense
// components whose yearly weights follow a schedule, plus abrupt drift events
// that displace every component from a given year on.

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "scd/embedstore.hpp"
#include "scd/error.hpp"
#include "scd/random.hpp"

namespace scd {

struct SynthComponent {
  std::vector<double> weights;  // one per year, first_year..last_year
};

struct DriftEvent {
  int year = 0;
  double shift_sigmas = 0.0;  // displacement magnitude in units of sigma
};

struct SynthSpec {
  int first_year = 2001;
  int last_year = 2030;
  std::size_t per_year = 200;
  std::size_t dim = 16;
  double sigma = 1.0;
  double separation_sigmas = 10.0;  // pairwise distance between component centers
  double offset_sigmas = 10.0;      // distance of the corpus center from the origin
  std::vector<SynthComponent> components;
  std::vector<DriftEvent> drifts;
  std::string token = "virtual";
  std::string journal = "SYN";

  std::size_t n_years() const { return static_cast<std::size_t>(last_year - first_year + 1); }
};

struct SynthResult {
  EmbeddingStore store;
  std::vector<std::uint32_t> labels;  // generating component per row
  std::vector<int> event_years;
};

inline void validate(const SynthSpec& spec) {
  using detail::require;
  require(spec.first_year >= kMinYear && spec.last_year <= kMaxYear && spec.first_year <= spec.last_year,
          Errc::invalid_argument, "synthetic year range must lie within [1000, 9999]");
  require(spec.dim >= 2, Errc::invalid_argument, "dim must be at least 2");
  require(spec.sigma > 0.0 && std::isfinite(spec.sigma), Errc::invalid_argument, "sigma must be positive");
  require(!spec.components.empty(), Errc::invalid_argument, "need at least one component");
  require(spec.components.size() <= spec.dim, Errc::invalid_argument,
          "component count may not exceed dim (centers sit on orthogonal axes)");
  for (std::size_t y = 0; y < spec.n_years(); ++y) {
    double total = 0.0;
    for (const auto& c : spec.components) {
      require(c.weights.size() == spec.n_years(), Errc::invalid_argument,
              "each component needs one weight per year");
      require(c.weights[y] >= 0.0, Errc::invalid_argument, "negative weight");
      total += c.weights[y];
    }
    require(std::abs(total - 1.0) <= 1e-9, Errc::invalid_argument,
            "weights of year " + std::to_string(spec.first_year + static_cast<int>(y)) + " do not sum to 1");
  }
  for (const auto& d : spec.drifts)
    require(d.year >= spec.first_year && d.year <= spec.last_year, Errc::invalid_argument,
            "drift year outside the synthetic range");
}

/// Splits n into integer counts proportional to weights (largest remainder,
/// ties to the lower index).
inline std::vector<std::size_t> apportion(std::size_t n, const std::vector<double>& weights) {
  std::vector<std::size_t> counts(weights.size());
  std::vector<std::pair<double, std::size_t>> remainders;
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const double exact = weights[i] * static_cast<double>(n);
    counts[i] = static_cast<std::size_t>(std::floor(exact + 1e-9));
    assigned += counts[i];
    remainders.emplace_back(exact - static_cast<double>(counts[i]), i);
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t k = 0; assigned < n; ++k, ++assigned) ++counts[remainders[k % remainders.size()].second];
  return counts;
}

inline SynthResult generate_synthetic(const SynthSpec& spec, std::uint64_t seed) {
  validate(spec);
  const std::size_t dim = spec.dim;
  const double sigma = spec.sigma;

  std::vector<double> base_dir(dim, 1.0 / std::sqrt(static_cast<double>(dim)));
  std::vector<std::vector<double>> centers(spec.components.size(), std::vector<double>(dim));
  for (std::size_t c = 0; c < centers.size(); ++c) {
    for (std::size_t d = 0; d < dim; ++d) centers[c][d] = spec.offset_sigmas * sigma * base_dir[d];
    centers[c][c] += spec.separation_sigmas * sigma / std::sqrt(2.0);
  }

  // Drift directions: seeded unit vectors orthogonal to the corpus offset.
  std::vector<std::vector<double>> drift_dirs;
  for (std::size_t e = 0; e < spec.drifts.size(); ++e) {
    Rng rng = make_rng(seed, 0xD1F7000000ULL + e);
    std::normal_distribution<double> normal;
    std::vector<double> v(dim);
    for (;;) {
      for (double& x : v) x = normal(rng);
      double along = 0.0;
      for (std::size_t d = 0; d < dim; ++d) along += v[d] * base_dir[d];
      double norm2 = 0.0;
      for (std::size_t d = 0; d < dim; ++d) {
        v[d] -= along * base_dir[d];
        norm2 += v[d] * v[d];
      }
      if (norm2 > 1e-12) {
        for (double& x : v) x /= std::sqrt(norm2);
        break;
      }
    }
    drift_dirs.push_back(std::move(v));
  }

  SynthResult result;
  StoreBuilder builder(dim);
  builder.reserve(spec.per_year * spec.n_years());
  std::vector<float> vec(dim);
  std::vector<double> shift(dim);
  for (std::size_t y = 0; y < spec.n_years(); ++y) {
    const int year = spec.first_year + static_cast<int>(y);
    std::fill(shift.begin(), shift.end(), 0.0);
    for (std::size_t e = 0; e < spec.drifts.size(); ++e)
      if (spec.drifts[e].year <= year)
        for (std::size_t d = 0; d < dim; ++d) shift[d] += spec.drifts[e].shift_sigmas * sigma * drift_dirs[e][d];

    std::vector<double> weights;
    for (const auto& c : spec.components) weights.push_back(c.weights[y]);
    const auto counts = apportion(spec.per_year, weights);

    Rng rng = make_rng(seed, static_cast<std::uint64_t>(year));
    std::normal_distribution<double> noise(0.0, sigma);
    std::size_t within_year = 0;
    for (std::size_t c = 0; c < counts.size(); ++c) {
      for (std::size_t i = 0; i < counts[c]; ++i) {
        for (std::size_t d = 0; d < dim; ++d)
          vec[d] = static_cast<float>(centers[c][d] + shift[d] + noise(rng));
        EmbeddingRecord rec;
        rec.occurrence_id = builder.count();
        rec.doc_id = "syn-" + std::to_string(year) + "-" + std::to_string(within_year++);
        rec.year = year;
        rec.journal = spec.journal;
        rec.token = spec.token;
        builder.add(std::move(rec), vec);
        result.labels.push_back(static_cast<std::uint32_t>(c));
      }
    }
  }
  result.store = std::move(builder).build();
  for (const auto& d : spec.drifts) result.event_years.push_back(d.year);
  return result;
}

/// Single sense over the whole range, one abrupt shift at `event_year`.
inline SynthSpec drift_spec(int first_year, int last_year, std::size_t per_year, std::size_t dim,
                            int event_year, double shift_sigmas) {
  SynthSpec spec;
  spec.first_year = first_year;
  spec.last_year = last_year;
  spec.per_year = per_year;
  spec.dim = dim;
  spec.components = {SynthComponent{std::vector<double>(spec.n_years(), 1.0)}};
  spec.drifts = {DriftEvent{event_year, shift_sigmas}};
  return spec;
}

/// Year i (0-based) draws equally from components 0..i, so the sense count
/// grows by one per year.
inline SynthSpec polysemy_ramp_spec(int first_year, std::size_t n_years, std::size_t per_year, std::size_t dim,
                                    double separation_sigmas) {
  SynthSpec spec;
  spec.first_year = first_year;
  spec.last_year = first_year + static_cast<int>(n_years) - 1;
  spec.per_year = per_year;
  spec.dim = dim;
  spec.separation_sigmas = separation_sigmas;
  spec.components.resize(n_years);
  for (std::size_t c = 0; c < n_years; ++c) {
    spec.components[c].weights.assign(n_years, 0.0);
    for (std::size_t y = c; y < n_years; ++y) spec.components[c].weights[y] = 1.0 / static_cast<double>(y + 1);
  }
  return spec;
}

/// JSON form. Components are either explicit ("components": [{"weights": [...]}])
/// or generated from "schedule": "constant" (with "n_components") or "ramp".
inline SynthSpec synth_spec_from_json(const nlohmann::json& j) {
  SynthSpec spec;
  try {
    spec.first_year = j.value("first_year", spec.first_year);
    spec.last_year = j.value("last_year", spec.last_year);
    spec.per_year = j.value("per_year", spec.per_year);
    spec.dim = j.value("dim", spec.dim);
    spec.sigma = j.value("sigma", spec.sigma);
    spec.separation_sigmas = j.value("separation_sigmas", spec.separation_sigmas);
    spec.offset_sigmas = j.value("offset_sigmas", spec.offset_sigmas);
    spec.token = j.value("token", spec.token);
    spec.journal = j.value("journal", spec.journal);
    detail::require(spec.first_year <= spec.last_year, Errc::invalid_argument, "first_year > last_year");
    if (j.contains("components")) {
      for (const auto& c : j.at("components"))
        spec.components.push_back({c.at("weights").get<std::vector<double>>()});
    } else {
      const std::string schedule = j.value("schedule", std::string("constant"));
      if (schedule == "ramp") {
        auto ramp = polysemy_ramp_spec(spec.first_year, spec.n_years(), spec.per_year, spec.dim,
                                       spec.separation_sigmas);
        spec.components = ramp.components;
      } else if (schedule == "constant") {
        const std::size_t k = j.value("n_components", std::size_t{1});
        detail::require(k >= 1, Errc::invalid_argument, "n_components must be positive");
        spec.components.assign(k, {std::vector<double>(spec.n_years(), 1.0 / static_cast<double>(k))});
      } else {
        throw Error(Errc::invalid_argument, "unknown schedule '" + schedule + "'");
      }
    }
    if (j.contains("drifts"))
      for (const auto& d : j.at("drifts"))
        spec.drifts.push_back({d.at("year").get<int>(), d.at("shift_sigmas").get<double>()});
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::invalid_argument, std::string("synth spec: ") + e.what());
  }
  return spec;
}

}  // namespace scd
