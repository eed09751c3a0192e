#pragma once

// Orchestration: JSON configuration, subcommand stages, artifact emission and
// the run manifest. Every artifact is a pure function of (inputs, config,
// seeds); nothing time- or thread-dependent is written.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "scd/cluster.hpp"
#include "scd/depfreq.hpp"
#include "scd/embedstore.hpp"
#include "scd/error.hpp"
#include "scd/metrics.hpp"
#include "scd/parallel.hpp"
#include "scd/stats.hpp"
#include "scd/synth.hpp"

namespace scd {

inline constexpr const char* kVersion = "1.0.0";

struct MetricRequest {
  Metric metric = Metric::prt;
  std::optional<ClusterMethod> method;  // JSD / entropy
  AidMode aid_mode = AidMode::paper;    // AID
};

struct DependencyConfig {
  std::filesystem::path path;
  GroupBy group_by = GroupBy::decade;
  std::size_t k = 4;
};

struct SamplingConfig {
  double fraction = 0.25;
  std::size_t min_per_year = 400;
  std::optional<std::uint64_t> seed;
};

struct PipelineConfig {
  std::optional<std::filesystem::path> store;  // path stem
  std::optional<std::string> target_token;
  std::optional<std::pair<int, int>> year_range;
  std::optional<std::set<std::string>> journals;
  std::optional<KMeansParams> kmeans;
  std::optional<APParams> affinity_propagation;
  SamplingConfig sampling;
  std::vector<MetricRequest> metrics;
  std::optional<PermutationOptions> permutation;
  double alpha = 0.05;
  int smoothing_window = 3;
  std::uint64_t seed = 0;
  std::filesystem::path output_dir = "scd_out";
  std::size_t threads = 0;
  std::optional<SynthSpec> synth;
  std::optional<DependencyConfig> dependencies;
};

/// A failure inside one pipeline stage.
class StageError : public std::runtime_error {
 public:
  StageError(std::string stage, const std::string& what)
      : std::runtime_error(what), stage_(std::move(stage)) {}
  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

inline std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex_digest(const std::string& bytes) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(bytes)));
  return buf;
}

// ---------------------------------------------------------------------------
// Config parsing

namespace detail {

inline std::filesystem::path resolve(const std::filesystem::path& base, const std::filesystem::path& p) {
  return p.is_absolute() || base.empty() ? p : base / p;
}

inline MetricRequest parse_metric_request(const nlohmann::json& j) {
  MetricRequest m;
  if (j.is_string()) {
    m.metric = parse_metric(j.get<std::string>());
  } else {
    m.metric = parse_metric(j.at("metric").get<std::string>());
    if (j.contains("method")) m.method = parse_cluster_method(j.at("method").get<std::string>());
    if (j.contains("mode")) m.aid_mode = parse_aid_mode(j.at("mode").get<std::string>());
  }
  if ((m.metric == Metric::jsd || m.metric == Metric::entropy) && !m.method) m.method = ClusterMethod::kmeans;
  return m;
}

}  // namespace detail

/// Parses a config object; relative paths are resolved against `base_dir`.
inline PipelineConfig parse_config(const nlohmann::json& j, const std::filesystem::path& base_dir = {}) {
  PipelineConfig c;
  try {
    if (j.contains("store")) c.store = detail::resolve(base_dir, j.at("store").get<std::string>());
    if (j.contains("target_token")) c.target_token = j.at("target_token").get<std::string>();
    if (j.contains("year_range")) {
      auto r = j.at("year_range").get<std::vector<int>>();
      detail::require(r.size() == 2 && r[0] <= r[1], Errc::invalid_argument, "year_range must be [lo, hi]");
      c.year_range = std::pair{r[0], r[1]};
    }
    if (j.contains("journals")) {
      auto v = j.at("journals").get<std::vector<std::string>>();
      c.journals = std::set<std::string>(v.begin(), v.end());
    }
    c.seed = j.value("seed", c.seed);
    if (j.contains("kmeans")) {
      const auto& k = j.at("kmeans");
      KMeansParams p;
      p.k = k.value("k", p.k);
      p.seed = k.value("seed", c.seed);
      p.max_iter = k.value("max_iter", p.max_iter);
      p.tol = k.value("tol", p.tol);
      p.n_init = k.value("n_init", p.n_init);
      c.kmeans = p;
    }
    if (j.contains("affinity_propagation")) {
      const auto& a = j.at("affinity_propagation");
      APParams p;
      p.damping = a.value("damping", p.damping);
      p.max_iter = a.value("max_iter", p.max_iter);
      p.convergence_iter = a.value("convergence_iter", p.convergence_iter);
      if (a.contains("preference") && a.at("preference").is_number())
        p.preference = a.at("preference").get<double>();
      else if (a.contains("preference"))
        detail::require(a.at("preference") == "median", Errc::invalid_argument,
                        "preference must be a number or \"median\"");
      p.seed = a.value("seed", c.seed);
      p.max_rows = a.value("max_rows", p.max_rows);
      c.affinity_propagation = p;
    }
    if (j.contains("sampling")) {
      const auto& s = j.at("sampling");
      c.sampling.fraction = s.value("fraction", c.sampling.fraction);
      c.sampling.min_per_year = s.value("min_per_year", c.sampling.min_per_year);
      if (s.contains("seed")) c.sampling.seed = s.at("seed").get<std::uint64_t>();
    }
    if (j.contains("metrics"))
      for (const auto& m : j.at("metrics")) c.metrics.push_back(detail::parse_metric_request(m));
    if (j.contains("permutation")) {
      const auto& p = j.at("permutation");
      PermutationOptions o;
      o.r_max = p.value("r_max", o.r_max);
      if (p.contains("budget")) o.budget = p.at("budget").get<std::size_t>();
      o.seed = p.value("seed", c.seed);
      c.alpha = p.value("alpha", c.alpha);
      c.permutation = o;
    }
    c.smoothing_window = j.value("smoothing_window", c.smoothing_window);
    if (j.contains("output_dir")) c.output_dir = detail::resolve(base_dir, j.at("output_dir").get<std::string>());
    c.threads = j.value("threads", c.threads);
    if (j.contains("synth")) c.synth = synth_spec_from_json(j.at("synth"));
    if (j.contains("dependencies")) {
      const auto& d = j.at("dependencies");
      DependencyConfig dc;
      dc.path = detail::resolve(base_dir, d.at("path").get<std::string>());
      dc.group_by = parse_group_by(d.value("group_by", std::string("decade")));
      dc.k = d.value("k", dc.k);
      c.dependencies = dc;
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::invalid_argument, std::string("config: ") + e.what());
  }
  for (const auto& m : c.metrics) {
    if (m.method == ClusterMethod::kmeans && !c.kmeans) c.kmeans = KMeansParams{.seed = c.seed};
    if (m.method == ClusterMethod::affinity_propagation && !c.affinity_propagation)
      c.affinity_propagation = APParams{.seed = c.seed};
  }
  detail::require(c.smoothing_window >= 1 && c.smoothing_window % 2 == 1, Errc::invalid_argument,
                  "smoothing_window must be odd and positive");
  return c;
}

inline PipelineConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::io_error, "cannot open config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::invalid_argument, "config " + path.string() + ": " + e.what());
  }
  return parse_config(j, path.parent_path());
}

/// Effective configuration as JSON; sufficient to re-run the same pipeline.
inline nlohmann::ordered_json to_json(const PipelineConfig& c) {
  nlohmann::ordered_json j;
  if (c.store) j["store"] = c.store->string();
  if (c.target_token) j["target_token"] = *c.target_token;
  if (c.year_range) j["year_range"] = {c.year_range->first, c.year_range->second};
  if (c.journals) j["journals"] = std::vector<std::string>(c.journals->begin(), c.journals->end());
  j["seed"] = c.seed;
  if (c.kmeans) j["kmeans"] = to_json(*c.kmeans);
  if (c.affinity_propagation) j["affinity_propagation"] = to_json(*c.affinity_propagation);
  j["sampling"] = {{"fraction", c.sampling.fraction},
                   {"min_per_year", c.sampling.min_per_year},
                   {"seed", c.sampling.seed.value_or(c.seed)}};
  auto metrics = nlohmann::ordered_json::array();
  for (const auto& m : c.metrics) {
    nlohmann::ordered_json mj{{"metric", to_string(m.metric)}};
    if (m.method) mj["method"] = to_string(*m.method);
    if (m.metric == Metric::aid) mj["mode"] = to_string(m.aid_mode);
    metrics.push_back(std::move(mj));
  }
  j["metrics"] = std::move(metrics);
  if (c.permutation) {
    nlohmann::ordered_json p{{"r_max", c.permutation->r_max}, {"seed", c.permutation->seed}, {"alpha", c.alpha}};
    if (c.permutation->budget) p["budget"] = *c.permutation->budget;
    j["permutation"] = std::move(p);
  }
  j["smoothing_window"] = c.smoothing_window;
  if (c.dependencies)
    j["dependencies"] = {{"path", c.dependencies->path.string()},
                         {"group_by", c.dependencies->group_by == GroupBy::decade ? "decade" : "journal"},
                         {"k", c.dependencies->k}};
  if (c.synth) {
    const auto& s = *c.synth;
    nlohmann::ordered_json sj{{"first_year", s.first_year},     {"last_year", s.last_year},
                              {"per_year", s.per_year},         {"dim", s.dim},
                              {"sigma", s.sigma},               {"separation_sigmas", s.separation_sigmas},
                              {"offset_sigmas", s.offset_sigmas}, {"token", s.token},
                              {"journal", s.journal}};
    auto comps = nlohmann::ordered_json::array();
    for (const auto& comp : s.components) comps.push_back({{"weights", comp.weights}});
    sj["components"] = std::move(comps);
    auto drifts = nlohmann::ordered_json::array();
    for (const auto& d : s.drifts) drifts.push_back({{"year", d.year}, {"shift_sigmas", d.shift_sigmas}});
    sj["drifts"] = std::move(drifts);
    j["synth"] = std::move(sj);
  }
  return j;
}

// ---------------------------------------------------------------------------
// Stages

enum class Command { ingest, synth, cluster, metrics, permtest, deps, report };

inline Command parse_command(const std::string& s) {
  static const std::map<std::string, Command> names{
      {"ingest", Command::ingest},     {"synth", Command::synth},   {"cluster", Command::cluster},
      {"metrics", Command::metrics},   {"permtest", Command::permtest}, {"deps", Command::deps},
      {"report", Command::report}};
  auto it = names.find(s);
  if (it == names.end()) throw Error(Errc::invalid_argument, "unknown subcommand '" + s + "'");
  return it->second;
}

inline const char* to_string(Command c) {
  switch (c) {
    case Command::ingest: return "ingest";
    case Command::synth: return "synth";
    case Command::cluster: return "cluster";
    case Command::metrics: return "metrics";
    case Command::permtest: return "permtest";
    case Command::deps: return "deps";
    case Command::report: return "report";
  }
  return "?";
}

struct PipelineReport {
  std::filesystem::path output_dir;
  std::vector<std::string> artifacts;  // relative to output_dir, in write order
  std::vector<std::pair<std::string, std::string>> stages;  // (stage, status)
  std::vector<MetricSeries> series;
  std::vector<PermutationResult> permutation;
  bool partial = false;
};

namespace detail {

class Run {
 public:
  Run(const PipelineConfig& config, Command command) : config_(config), command_(command) {
    report_.output_dir = config.output_dir;
  }

  PipelineReport execute() {
    check_inputs();
    std::filesystem::create_directories(config_.output_dir);
    try {
      switch (command_) {
        case Command::ingest: stage("ingest", [&] { ingest(); }); break;
        case Command::synth: stage("synth", [&] { synth(/*write=*/true); }); break;
        case Command::cluster:
          stage("load", [&] { load(); });
          stage("cluster", [&] { cluster(); });
          break;
        case Command::metrics:
          stage("load", [&] { load(); });
          stage("cluster", [&] { cluster(); });
          stage("metrics", [&] { metrics(); });
          break;
        case Command::permtest:
          stage("load", [&] { load(); });
          stage("permtest", [&] { permtest(); });
          break;
        case Command::deps: stage("deps", [&] { deps(); }); break;
        case Command::report:
          if (config_.store) {
            stage("ingest", [&] { ingest(); });
          } else {
            stage("synth", [&] { synth(true); });
          }
          if (!config_.metrics.empty() || config_.kmeans || config_.affinity_propagation)
            stage("cluster", [&] { cluster(); });
          if (!config_.metrics.empty()) stage("metrics", [&] { metrics(); });
          if (config_.permutation) stage("permtest", [&] { permtest(); });
          if (config_.dependencies) stage("deps", [&] { deps(); });
          if (report_.series.size() >= 2) stage("correlations", [&] { correlations(); });
          break;
      }
    } catch (...) {
      report_.partial = true;
      write_manifest();
      throw;
    }
    write_manifest();
    return report_;
  }

 private:
  void check_inputs() const {
    const bool uses_store = command_ != Command::synth && command_ != Command::deps;
    if (uses_store && config_.store) {
      for (const auto& p : {vec_path(*config_.store), meta_path(*config_.store)})
        if (!std::filesystem::exists(p)) throw StageError("config", "store file not found: " + p.string());
    } else if (uses_store) {
      require(config_.synth.has_value(), Errc::invalid_argument,
              "no store path configured (and no synth section to generate one)");
    }
    if (command_ == Command::synth)
      require(config_.synth.has_value(), Errc::invalid_argument, "synth needs a \"synth\" section");
    if (command_ == Command::metrics)
      require(!config_.metrics.empty(), Errc::invalid_argument, "at least one metric must be requested");
    if (command_ == Command::permtest)
      require(config_.permutation.has_value(), Errc::invalid_argument, "permtest needs a \"permutation\" section");
    if (command_ == Command::deps)
      require(config_.dependencies.has_value(), Errc::invalid_argument,
              "deps needs a \"dependencies\" section");
    if (config_.dependencies && (command_ == Command::deps || command_ == Command::report) &&
        !std::filesystem::exists(config_.dependencies->path))
      throw StageError("config", "dependency file not found: " + config_.dependencies->path.string());
  }

  template <typename F>
  void stage(const std::string& name, F&& body) {
    try {
      body();
      report_.stages.emplace_back(name, "ok");
    } catch (const StageError&) {
      report_.stages.emplace_back(name, "failed");
      throw;
    } catch (const std::exception& e) {
      report_.stages.emplace_back(name, std::string("failed: ") + e.what());
      throw StageError(name, e.what());
    }
  }

  void emit(const std::string& relative, const std::string& bytes) {
    const auto path = config_.output_dir / relative;
    std::filesystem::create_directories(path.parent_path());
    write_file(path, bytes);
    report_.artifacts.push_back(relative);
  }

  void emit_store(const std::string& relative_stem, const EmbeddingStore& store) {
    const auto stem = config_.output_dir / relative_stem;
    std::filesystem::create_directories(stem.parent_path());
    write_store(store, stem);
    report_.artifacts.push_back(relative_stem + ".vec");
    report_.artifacts.push_back(relative_stem + ".meta.jsonl");
  }

  StoreFilter filter() const { return {config_.journals, config_.year_range, config_.target_token}; }

  void load() {
    if (store_) return;
    if (!config_.store) {
      synth(/*write=*/false);
      return;
    }
    store_ = filter_store(read_store(*config_.store), filter());
  }

  void ingest() {
    load();
    const auto counts = store_->year_counts();
    nlohmann::ordered_json summary{{"source", config_.store ? config_.store->string() : std::string("synth")},
                                   {"dim", store_->dim()},
                                   {"count", store_->count()}};
    nlohmann::ordered_json years = nlohmann::ordered_json::object();
    std::string csv = "year,count\n";
    for (const auto& [year, n] : counts) {
      years[std::to_string(year)] = n;
      csv += std::to_string(year) + "," + std::to_string(n) + "\n";
    }
    summary["year_counts"] = std::move(years);
    emit("ingest/summary.json", summary.dump(2) + "\n");
    emit("ingest/year_counts.csv", csv);
    if (command_ == Command::ingest) emit_store("ingest/store", *store_);
  }

  void synth(bool write) {
    require(config_.synth.has_value(), Errc::invalid_argument, "no synth section configured");
    SynthResult result = generate_synthetic(*config_.synth, config_.seed);
    store_ = filter_store(result.store, filter());
    if (!write) return;
    emit_store("synth/store", result.store);
    nlohmann::ordered_json truth{{"event_years", result.event_years}, {"labels", result.labels}};
    emit("synth/ground_truth.json", truth.dump() + "\n");
  }

  bool wants(ClusterMethod m) const {
    for (const auto& r : config_.metrics)
      if (r.method == m) return true;
    if (command_ == Command::cluster || command_ == Command::report)
      return m == ClusterMethod::kmeans ? config_.kmeans.has_value() : config_.affinity_propagation.has_value();
    return false;
  }

  void cluster() {
    load();
    if (wants(ClusterMethod::kmeans)) {
      kmeans_ = kmeans_fit(*store_, config_.kmeans.value_or(KMeansParams{.seed = config_.seed}));
      write_cluster_model(*kmeans_, ensure_dir("clusters") / "kmeans");
      for (const char* ext : {".json", ".labels.bin", ".centers.vec"})
        report_.artifacts.push_back(std::string("clusters/kmeans") + ext);
    }
    if (wants(ClusterMethod::affinity_propagation)) {
      ap_store_ = stratified_sample(*store_, config_.sampling.fraction, config_.sampling.min_per_year,
                                    config_.sampling.seed.value_or(config_.seed));
      ap_ = ap_fit(*ap_store_, config_.affinity_propagation.value_or(APParams{.seed = config_.seed}));
      emit_store("clusters/ap_sample", *ap_store_);
      write_cluster_model(*ap_, ensure_dir("clusters") / "affinity_propagation");
      for (const char* ext : {".json", ".labels.bin", ".centers.vec"})
        report_.artifacts.push_back(std::string("clusters/affinity_propagation") + ext);
    }
  }

  std::filesystem::path ensure_dir(const std::string& relative) {
    auto p = config_.output_dir / relative;
    std::filesystem::create_directories(p);
    return p;
  }

  void metrics() {
    for (const auto& m : config_.metrics) {
      SeriesRequest req{m.metric, m.aid_mode, config_.year_range, {}};
      const EmbeddingStore* store = &*store_;
      const ClusterModel* model = nullptr;
      nlohmann::ordered_json provenance{{"metric", to_string(m.metric)}};
      if (m.method == ClusterMethod::kmeans) {
        model = &*kmeans_;
        provenance["clustering"] = model->params;
      } else if (m.method == ClusterMethod::affinity_propagation) {
        model = &*ap_;
        store = &*ap_store_;
        provenance["clustering"] = model->params;
        provenance["sampling"] = {{"fraction", config_.sampling.fraction},
                                  {"min_per_year", config_.sampling.min_per_year}};
      }
      if (m.metric == Metric::aid) provenance["mode"] = to_string(m.aid_mode);
      req.params_digest = hex_digest(provenance.dump());
      MetricSeries s = compute_series(*store, model, req);
      write_series(s);
      if (config_.smoothing_window > 1) write_series(rolling_mean(s, config_.smoothing_window));
      report_.series.push_back(std::move(s));
    }
  }

  void write_series(const MetricSeries& s) {
    const std::string name = std::string("series/") + to_string(s.metric) + "_" + s.variant;
    emit(name + ".csv", to_csv(s));
    emit(name + ".json", to_json(s).dump(2) + "\n");
  }

  void permtest() {
    load();
    report_.permutation = permutation_series(*store_, *config_.permutation);
    emit("permtest/prt_permutation.csv", to_csv(report_.permutation));
    std::size_t significant = 0;
    for (const auto& r : report_.permutation)
      if (r.p_adj && *r.p_adj < config_.alpha) ++significant;
    nlohmann::ordered_json summary{{"alpha", config_.alpha},
                                   {"pairs", report_.permutation.size()},
                                   {"significant_adjusted", significant}};
    emit("permtest/summary.json", summary.dump(2) + "\n");
  }

  void deps() {
    const auto records = read_dependency_records(config_.dependencies->path);
    const auto table = tabulate_top_dependencies(records, config_.dependencies->group_by, config_.dependencies->k);
    emit(std::string("deps/top_dependencies_") +
             (config_.dependencies->group_by == GroupBy::decade ? "decade" : "journal") + ".csv",
         to_csv(table));
  }

  void correlations() {
    nlohmann::ordered_json out = nlohmann::ordered_json::array();
    const auto& s = report_.series;
    for (std::size_t i = 0; i < s.size(); ++i) {
      for (std::size_t k = i + 1; k < s.size(); ++k) {
        if (s[i].is_pair_series() != s[k].is_pair_series()) continue;
        nlohmann::ordered_json row{{"a", std::string(to_string(s[i].metric)) + "_" + s[i].variant},
                                   {"b", std::string(to_string(s[k].metric)) + "_" + s[k].variant}};
        try {
          row["pearson"] = pearson(s[i], s[k]);
        } catch (const Error& e) {
          row["pearson"] = nullptr;
          row["note"] = e.what();
        }
        out.push_back(std::move(row));
      }
    }
    emit("series/correlations.json", out.dump(2) + "\n");
  }

  void write_manifest() {
    const auto cfg = to_json(config_);
    nlohmann::ordered_json m;
    m["tool"] = "scd";
    m["version"] = kVersion;
    m["subcommand"] = to_string(command_);
    m["config_digest"] = hex_digest(cfg.dump());
    nlohmann::ordered_json seeds{{"root", config_.seed}};
    if (config_.kmeans) seeds["kmeans"] = config_.kmeans->seed;
    if (config_.affinity_propagation) seeds["affinity_propagation"] = config_.affinity_propagation->seed;
    seeds["sampling"] = config_.sampling.seed.value_or(config_.seed);
    if (config_.permutation) seeds["permutation"] = config_.permutation->seed;
    m["seeds"] = std::move(seeds);
    auto stages = nlohmann::ordered_json::array();
    for (const auto& [name, status] : report_.stages) stages.push_back({{"stage", name}, {"status", status}});
    m["stages"] = std::move(stages);
    m["artifacts"] = report_.artifacts;
    m["partial"] = report_.partial;
    m["config"] = cfg;
    write_file(config_.output_dir / "manifest.json", m.dump(2) + "\n");
  }

  const PipelineConfig& config_;
  Command command_;
  PipelineReport report_;
  std::optional<EmbeddingStore> store_;
  std::optional<EmbeddingStore> ap_store_;
  std::optional<ClusterModel> kmeans_;
  std::optional<ClusterModel> ap_;
};

}  // namespace detail

/// Runs the stages behind one subcommand (Command::report runs them all) and
/// writes artifacts plus `manifest.json` under config.output_dir. Throws
/// StageError tagged with the failing stage; the manifest is still written
/// with `partial: true` once the output directory exists.
inline PipelineReport run_pipeline(const PipelineConfig& config, Command command = Command::report) {
  if (config.threads > 0) parallel::set_num_threads(config.threads);
  return detail::Run(config, command).execute();
}

}  // namespace scd
