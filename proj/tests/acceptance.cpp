// Acceptance checks. One PASS/FAIL line per criterion; exit status is nonzero
// if any selected criterion fails.
//
//   acceptance [--criterion N]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "scd/pipeline.hpp"

namespace fs = std::filesystem;

namespace {

// Tolerances and limits.
constexpr double kAidRelTol = 1e-9;
constexpr double kFormulaTol = 1e-12;
constexpr double kThreadTol = 1e-6;
constexpr double kCalibrationLo = 0.02;
constexpr double kCalibrationHi = 0.09;
constexpr double kMinCorrelation = 0.7;
constexpr double kDriftSeconds = 60.0;
constexpr double kAidSeconds1 = 10.0;
constexpr double kAidSeconds8 = 3.0;
constexpr double kKMeansSeconds = 120.0;

constexpr std::uint64_t kSeed = 20240;

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void check(bool ok, const std::string& what) {
    if (!ok) pass = false;
    detail << (ok ? "" : "!") << what << "; ";
  }
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

// 30 years x 200, dim 16, single sense, 5 sigma shift at the 16th year.
scd::EmbeddingStore drift_corpus() {
  return scd::generate_synthetic(scd::drift_spec(2001, 2030, 200, 16, 2016, 5.0), kSeed).store;
}

std::pair<int, int> argmax_pair(const scd::MetricSeries& s) {
  auto it = std::ranges::max_element(s.points, {}, &scd::SeriesPoint::value);
  return {it->from_year.value_or(0), it->year};
}

std::vector<double> values(const scd::MetricSeries& s) {
  std::vector<double> v;
  for (const auto& p : s.points) v.push_back(p.value);
  return v;
}

// --- independent oracles -----------------------------------------------------

double oracle_aid_sum(const std::vector<std::vector<double>>& rows) {
  double sum = 0.0;
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = i + 1; j < rows.size(); ++j) {
      double d2 = 0.0;
      for (std::size_t k = 0; k < rows[i].size(); ++k) d2 += (rows[i][k] - rows[j][k]) * (rows[i][k] - rows[j][k]);
      sum += std::sqrt(d2);
    }
  return sum;
}

double oracle_cos(const std::vector<double>& a, const std::vector<double>& b) {
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  return ab / (std::sqrt(aa) * std::sqrt(bb));
}

double oracle_eta(const std::vector<double>& p) {
  double h = 0.0;
  for (double v : p)
    if (v > 0) h += v * std::log(1.0 / v);
  return h / std::log(static_cast<double>(p.size()));
}

double oracle_jsd(const std::vector<double>& p, const std::vector<double>& q) {
  std::vector<double> m(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) m[i] = (p[i] + q[i]) / 2.0;
  return oracle_eta(m) - (oracle_eta(p) + oracle_eta(q)) / 2.0;
}

std::vector<double> oracle_bh(const std::vector<double>& p) {
  const std::size_t m = p.size();
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::ranges::stable_sort(order, {}, [&](std::size_t i) { return p[i]; });
  std::vector<double> adj(m);
  for (std::size_t r = 0; r < m; ++r) {
    double best = 1.0;
    for (std::size_t s = r; s < m; ++s)
      best = std::min(best, p[order[s]] * static_cast<double>(m) / static_cast<double>(s + 1));
    adj[order[r]] = std::max(best, p[order[r]]);
  }
  return adj;
}

std::vector<double> ranks(const std::vector<double>& v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::ranges::sort(order, {}, [&](std::size_t i) { return v[i]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    for (std::size_t k = i; k <= j; ++k) r[order[k]] = (static_cast<double>(i + j) / 2.0) + 1.0;
    i = j + 1;
  }
  return r;
}

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  return scd::pearson(ranks(a), ranks(b));
}

// --- criteria ------------------------------------------------------------------

void criterion_1(Outcome& out) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto store = drift_corpus();
  const std::pair<int, int> event{2015, 2016};

  const auto prt = scd::compute_series(store, nullptr, {scd::Metric::prt});
  const auto km = scd::kmeans_fit(store, {.k = 2, .seed = kSeed});
  const auto jsd = scd::compute_series(store, &km, {scd::Metric::jsd});
  out.check(argmax_pair(prt) == event, "PRT argmax " + std::to_string(argmax_pair(prt).first) + "-" +
                                           std::to_string(argmax_pair(prt).second));
  out.check(argmax_pair(jsd) == event, "JSD-KM argmax " + std::to_string(argmax_pair(jsd).first) + "-" +
                                           std::to_string(argmax_pair(jsd).second));

  const auto perm = scd::permutation_series(store, {.r_max = 1000, .seed = kSeed});
  double event_p = 1.0;
  int null_hits = 0;
  for (const auto& r : perm) {
    if (r.year_pair == event)
      event_p = *r.p_adj;
    else if (*r.p_adj < 0.05)
      ++null_hits;
  }
  out.check(perm.size() == 29, std::to_string(perm.size()) + " pairs tested");
  out.check(event_p < 0.01, "event p_adj " + fmt(event_p) + " < 0.01");
  out.check(null_hits <= 1, std::to_string(null_hits) + " null pairs with p_adj < 0.05");
  const double t = seconds_since(t0);
  out.check(t < kDriftSeconds, "runtime " + fmt(t) + " s");
}

void criterion_2(Outcome& out) {
  const auto spec = scd::polysemy_ramp_spec(2001, 10, 200, 16, 10.0);
  const auto store = scd::generate_synthetic(spec, kSeed).store;
  const auto km = scd::kmeans_fit(store, {.k = 10, .seed = kSeed});
  const auto eta = values(scd::compute_series(store, &km, {scd::Metric::entropy}));
  bool increasing = eta.size() == 10;
  for (std::size_t i = 1; i < eta.size(); ++i) increasing = increasing && eta[i] > eta[i - 1];
  std::string trace;
  for (double v : eta) trace += fmt(v) + " ";
  out.check(increasing, "entropy strictly increasing [" + trace + "]");

  const auto aid = values(scd::compute_series(store, nullptr, {scd::Metric::aid, scd::AidMode::pair_mean}));
  std::vector<double> index(aid.size());
  std::iota(index.begin(), index.end(), 1.0);
  const double rho = aid.size() == 10 ? spearman(aid, index) : 0.0;
  out.check(rho == 1.0, "AID Spearman " + fmt(rho));
}

void criterion_3(Outcome& out) {
  std::mt19937_64 rng(kSeed);
  std::uniform_int_distribution<std::size_t> n_dist(2, 500), dim_dist(2, 64), k_dist(2, 12);
  std::normal_distribution<float> normal;
  double worst_aid = 0.0, worst_formula = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = n_dist(rng), dim = dim_dist(rng);
    scd::StoreBuilder builder(dim);
    std::vector<std::vector<double>> rows;
    std::vector<float> v(dim);
    for (std::size_t i = 0; i < n; ++i) {
      for (auto& x : v) x = 0.5f + normal(rng);
      builder.add({.occurrence_id = i, .doc_id = "d", .year = 2000 + static_cast<int>(i % 2), .journal = "J",
                   .token = "t"},
                  v);
      rows.emplace_back(v.begin(), v.end());
    }
    const auto store = std::move(builder).build();
    std::vector<std::size_t> all(n);
    std::iota(all.begin(), all.end(), 0);
    const scd::TimeSlice slice{2000, all};
    const double expect_sum = oracle_aid_sum(rows);
    for (auto mode : {scd::AidMode::paper, scd::AidMode::pair_mean}) {
      const double denom = mode == scd::AidMode::paper ? static_cast<double>(n) : n * (n - 1.0) / 2.0;
      const double expect = expect_sum / denom;
      worst_aid = std::max(worst_aid, std::abs(scd::aid(store, slice, mode) - expect) / std::abs(expect));
    }

    // prototypes of the two year halves
    const auto slices = scd::slices_by_year(store);
    const auto a = scd::mean_of_rows(store, slices[0].indices);
    const auto b = scd::mean_of_rows(store, slices[1].indices);
    std::vector<double> oa(dim, 0.0), ob(dim, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t d = 0; d < dim; ++d) (i % 2 ? ob : oa)[d] += rows[i][d];
    for (std::size_t d = 0; d < dim; ++d) {
      oa[d] /= static_cast<double>(slices[0].size());
      ob[d] /= static_cast<double>(slices[1].size());
    }
    const double cs = oracle_cos(oa, ob);
    worst_formula = std::max(worst_formula, std::abs(scd::cosine_similarity(a, b) - cs));
    worst_formula = std::max(worst_formula, std::abs(scd::prt(a, b) - std::max(1.0, 1.0 / cs)) / std::max(1.0, 1.0 / cs));

    // distributions with some empty clusters
    const std::size_t k = k_dist(rng);
    auto draw = [&] {
      std::vector<double> p(k);
      std::uniform_real_distribution<double> u(0.0, 1.0);
      for (auto& x : p) x = u(rng) < 0.2 ? 0.0 : u(rng);
      if (std::accumulate(p.begin(), p.end(), 0.0) == 0.0) p[0] = 1.0;
      const double total = std::accumulate(p.begin(), p.end(), 0.0);
      for (auto& x : p) x /= total;
      return p;
    };
    const auto p = draw(), q = draw();
    worst_formula = std::max(worst_formula, std::abs(scd::entropy_normalized(p) - oracle_eta(p)));
    worst_formula = std::max(worst_formula, std::abs(scd::jsd(p, q) - std::clamp(oracle_jsd(p, q), 0.0, 1.0)));
  }
  out.check(worst_aid <= kAidRelTol, "AID max rel err " + fmt(worst_aid));
  out.check(worst_formula <= kFormulaTol, "entropy/JSD/CS/PRT max err " + fmt(worst_formula));
}

void criterion_4(Outcome& out) {
  const std::vector<double> p{0.01, 0.02, 0.03, 0.04};
  const auto adj = scd::bh_adjust(p);
  out.check(adj == std::vector<double>(4, 0.04), "[0.01..0.04] -> all 0.04 exactly");

  std::mt19937_64 rng(kSeed);
  std::uniform_int_distribution<std::size_t> m_dist(1, 60);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  int bad_props = 0;
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<double> v(m_dist(rng));
    for (auto& x : v) x = trial % 3 == 0 ? std::pow(u(rng), 4.0) : u(rng);
    if (trial % 5 == 0 && v.size() > 1) v[1] = v[0];  // ties
    const auto a = scd::bh_adjust(v);
    std::vector<std::size_t> order(v.size());
    std::iota(order.begin(), order.end(), 0);
    std::ranges::stable_sort(order, {}, [&](std::size_t i) { return v[i]; });
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (a[i] < v[i] || a[i] > 1.0) ++bad_props;
      if (i > 0 && a[order[i]] < a[order[i - 1]]) ++bad_props;
    }
    const auto o = oracle_bh(v);
    for (std::size_t i = 0; i < v.size(); ++i) worst = std::max(worst, std::abs(a[i] - o[i]));
  }
  out.check(bad_props == 0, std::to_string(bad_props) + " monotonicity / >=-input violations");
  out.check(worst <= 1e-15, "max deviation from oracle " + fmt(worst));
}

void criterion_5(Outcome& out) {
  int hits = 0;
  constexpr int trials = 200;
  std::normal_distribution<float> normal;
  for (int t = 0; t < trials; ++t) {
    std::mt19937_64 rng(scd::mix_seed(kSeed, static_cast<std::uint64_t>(t)));
    scd::StoreBuilder builder(8);
    std::vector<float> v(8);
    for (std::size_t i = 0; i < 400; ++i) {
      // A common nonzero mean keeps the prototypes away from the origin.
      for (auto& x : v) x = 3.0f + normal(rng);
      builder.add({.occurrence_id = i, .doc_id = "d", .year = i < 200 ? 2000 : 2001, .journal = "J",
                   .token = "t"},
                  v);
    }
    const auto store = std::move(builder).build();
    const auto slices = scd::slices_by_year(store);
    const auto r = scd::permutation_test_prt(store, slices[0], slices[1],
                                             {.r_max = 1000, .seed = scd::mix_seed(kSeed + 1, t)});
    if (r.p_raw <= 0.05) ++hits;
  }
  const double frac = static_cast<double>(hits) / trials;
  out.check(frac >= kCalibrationLo && frac <= kCalibrationHi, "fraction p_raw <= 0.05: " + fmt(frac));
}

void criterion_6(Outcome& out) {
  const auto store = drift_corpus();
  const auto prt = scd::compute_series(store, nullptr, {scd::Metric::prt});
  const auto km = scd::kmeans_fit(store, {.k = 2, .seed = kSeed});
  const auto jsd_km = scd::compute_series(store, &km, {scd::Metric::jsd});
  const auto sample = scd::stratified_sample(store, 0.25, 400, kSeed);
  // damping 0.5 oscillates on a single dense mode of 6000 points
  const auto ap = scd::ap_fit(sample, {.damping = 0.9, .seed = kSeed});
  const auto jsd_ap = scd::compute_series(sample, &ap, {scd::Metric::jsd});
  const double r_km_ap = scd::pearson(jsd_km, jsd_ap);
  const double r_prt_km = scd::pearson(prt, jsd_km);
  out.check(r_km_ap >= kMinCorrelation, "r(JSD-KM, JSD-AP) " + fmt(r_km_ap) + " (AP k=" +
                                            std::to_string(ap.n_clusters) + ")");
  out.check(r_prt_km >= kMinCorrelation, "r(PRT, JSD-KM) " + fmt(r_prt_km));
}

std::map<std::string, std::string> read_tree(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    std::ifstream in(e.path(), std::ios::binary);
    files[fs::relative(e.path(), root).string()] = {std::istreambuf_iterator<char>(in), {}};
  }
  return files;
}

void criterion_7(Outcome& out) {
  const auto root = fs::temp_directory_path() / ("scd_acceptance_" + std::to_string(std::random_device{}()));
  fs::remove_all(root);

  nlohmann::json j{{"seed", kSeed},
                   {"synth",
                    {{"first_year", 2001},
                     {"last_year", 2010},
                     {"per_year", 100},
                     {"dim", 16},
                     {"drifts", {{{"year", 2006}, {"shift_sigmas", 5.0}}}}}},
                   {"kmeans", {{"k", 2}}},
                   {"sampling", {{"fraction", 0.5}, {"min_per_year", 50}}},
                   {"metrics",
                    {"PRT",
                     {{"metric", "JSD"}, {"method", "kmeans"}},
                     {{"metric", "entropy"}, {"method", "kmeans"}},
                     {{"metric", "JSD"}, {"method", "affinity_propagation"}},
                     {{"metric", "AID"}, {"mode", "paper"}}}},
                   {"permutation", {{"r_max", 200}}}};
  std::map<std::string, std::string> reference;
  std::map<std::size_t, std::vector<double>> numbers;
  bool identical = true;
  for (std::size_t threads : {1u, 1u, 4u, 8u}) {
    auto config = scd::parse_config(j);
    config.threads = threads;
    config.output_dir = root / ("run" + std::to_string(reference.empty() ? 0 : threads));
    const auto report = scd::run_pipeline(config);
    scd::parallel::set_num_threads(0);
    auto files = read_tree(config.output_dir);
    files.erase("manifest.json");
    if (reference.empty()) {
      reference = files;
    } else if (threads == 1) {
      identical = identical && files == reference;
    }
    std::vector<double>& nums = numbers[threads];
    nums.clear();
    for (const auto& s : report.series)
      for (const auto& p : s.points) nums.push_back(p.value);
    for (const auto& r : report.permutation) nums.push_back(*r.p_adj);
  }
  out.check(identical && !reference.empty(),
            "re-run byte-identical (" + std::to_string(reference.size()) + " CSV/JSON/.vec files)");

  double worst = 0.0;
  bool same_shape = true;
  for (std::size_t threads : {4u, 8u}) {
    same_shape = same_shape && numbers[threads].size() == numbers[1].size();
    for (std::size_t i = 0; same_shape && i < numbers[1].size(); ++i)
      worst = std::max(worst, std::abs(numbers[threads][i] - numbers[1][i]));
  }
  out.check(same_shape && worst <= kThreadTol, "1/4/8 threads max diff " + fmt(worst));

  // Roundtrip: read then write reproduces the bytes and the values.
  const auto store = scd::read_store(root / "run0/synth/store");
  scd::write_store(store, root / "copy");
  const auto again = scd::read_store(root / "copy");
  auto slurp = [](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
  };
  out.check(slurp(root / "copy.vec") == reference.at("synth/store.vec") &&
                slurp(root / "copy.meta.jsonl") == reference.at("synth/store.meta.jsonl") && again == store,
            "store roundtrip bit-exact");
  fs::remove_all(root);
}

void criterion_8(Outcome& out) {
  {
    std::mt19937_64 rng(kSeed);
    std::normal_distribution<float> normal;
    scd::StoreBuilder builder(768);
    std::vector<float> v(768);
    for (std::size_t i = 0; i < 5000; ++i) {
      for (auto& x : v) x = normal(rng);
      builder.add({.occurrence_id = i, .doc_id = "d", .year = 2000, .journal = "J", .token = "t"}, v);
    }
    const auto store = std::move(builder).build();
    const auto slice = scd::slice_by_year(store, 2000);
    double value[2];
    for (std::size_t threads : {1u, 8u}) {
      scd::parallel::set_num_threads(threads);
      const auto t0 = std::chrono::steady_clock::now();
      value[threads == 8] = scd::aid(store, slice, scd::AidMode::paper);
      const double t = seconds_since(t0);
      out.check(t < (threads == 1 ? kAidSeconds1 : kAidSeconds8),
                "AID 5000x768 " + std::to_string(threads) + " thread(s) " + fmt(t) + " s");
    }
    scd::parallel::set_num_threads(0);
    out.check(value[0] == value[1], "AID identical across thread counts");
  }
  {
    constexpr std::size_t n = 50000, dim = 768, k = 10;
    std::mt19937_64 rng(kSeed + 1);
    std::normal_distribution<double> normal;
    scd::Matrix centers(k, dim), x(n, dim);
    for (std::size_t c = 0; c < k; ++c)
      for (std::size_t d = 0; d < dim; ++d) centers(c, d) = 0.3 * normal(rng);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t d = 0; d < dim; ++d) x(i, d) = centers(i % k, d) + normal(rng);
    const auto t0 = std::chrono::steady_clock::now();
    const auto model = scd::kmeans_fit(x, {.k = k, .seed = kSeed});
    const double t = seconds_since(t0);
    out.check(model.converged, "K-Means converged in " + std::to_string(model.iterations) + " iterations");
    out.check(t < kKMeansSeconds, "K-Means 50000x768 k=10 " + fmt(t) + " s");
  }
}

void criterion_9(Outcome& out) {
  scd::StoreBuilder builder(2);
  std::uint64_t id = 0;
  const std::map<int, std::size_t> counts{{2001, 100}, {2002, 1000}, {2003, 2000}};
  for (const auto& [year, count] : counts)
    for (std::size_t i = 0; i < count; ++i) {
      const float v[2] = {static_cast<float>(i), 1.0f};
      builder.add({.occurrence_id = id++, .doc_id = "d", .year = year, .journal = "J", .token = "t"}, v);
    }
  const auto store = std::move(builder).build();
  const auto sample = scd::stratified_sample(store, 0.25, 400, kSeed);
  const auto got = sample.year_counts();
  const std::map<int, std::size_t> want{{2001, 100}, {2002, 400}, {2003, 500}};
  std::string trace;
  for (const auto& [year, n] : got) trace += std::to_string(n) + " ";
  out.check(std::map<int, std::size_t>(got.begin(), got.end()) == want, "per-year rows " + trace);
}

}  // namespace

int main(int argc, char** argv) {
  int only = 0;
  for (int i = 1; i < argc; ++i) {
    if (std::strcmp(argv[i], "--criterion") == 0 && i + 1 < argc) {
      only = std::atoi(argv[++i]);
    } else {
      std::cerr << "usage: acceptance [--criterion N]\n";
      return 2;
    }
  }
  const std::vector<std::pair<std::string, std::function<void(Outcome&)>>> criteria{
      {"drift detection", criterion_1},         {"polysemy monotonicity", criterion_2},
      {"oracle equivalence", criterion_3},      {"BH exactness", criterion_4},
      {"permutation calibration", criterion_5}, {"cross-method consistency", criterion_6},
      {"determinism & format", criterion_7},    {"performance", criterion_8},
      {"sampling policy", criterion_9},
  };
  if (only < 0 || only > static_cast<int>(criteria.size())) {
    std::cerr << "unknown criterion " << only << "\n";
    return 2;
  }
  bool all = true;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    if (only != 0 && static_cast<int>(i + 1) != only) continue;
    Outcome out;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      criteria[i].second(out);
    } catch (const std::exception& e) {
      out.check(false, std::string("exception: ") + e.what());
    }
    all = all && out.pass;
    std::cout << "criterion " << i + 1 << " (" << criteria[i].first << "): " << (out.pass ? "PASS" : "FAIL")
              << "  [" << out.detail.str() << fmt(seconds_since(t0)) << " s]" << std::endl;
  }
  return all ? 0 : 1;
}
