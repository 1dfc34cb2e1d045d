// Subcommands of the `drl` tool. Each takes a parsed configuration (with
// command-line overrides already applied) and writes CSV/JSON outputs.
#pragma once

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "drl/config.hpp"
#include "drl/dgp.hpp"
#include "drl/harness.hpp"
#include "drl/metalearners.hpp"
#include "drl/verify.hpp"

namespace drl {

namespace fs = std::filesystem;

struct RunOptions {
  unsigned jobs = default_jobs();
  bool resume = false;
  std::ostream* log = nullptr;
};

namespace detail {

inline void say(const RunOptions& o, const std::string& msg) {
  if (o.log) *o.log << msg << std::endl;
}

inline Interval interval_from(const KeyValueConfig& c, const std::string& prefix, Interval def) {
  return {c.get_double(prefix + "_lo", def.lo), c.get_double(prefix + "_hi", def.hi)};
}

inline std::string fnv_hex(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) h = (h ^ c) * 0x100000001b3ull;
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline std::vector<int> parse_orders(const std::vector<std::string>& items) {
  std::vector<int> out;
  for (const auto& s : items) {
    if (s != "1" && s != "2" && s != "3") throw FormatError("inter_order must be 1, 2 or 3, got " + s);
    out.push_back(std::stoi(s));
  }
  return out;
}

inline std::vector<bool> parse_bools(const std::vector<std::string>& items, const std::string& key) {
  std::vector<bool> out;
  for (const auto& s : items) out.push_back(KeyValueConfig::parse_bool(s, key));
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// gen-dgp

inline const std::set<std::string> kGenKeys = {
    "seed", "out", "count", "inter_orders", "tx_inter", "max_attempts", "npoints",
    "conf_bias_lo", "conf_bias_hi", "eta_lo", "eta_hi", "rho_lo", "rho_hi", "pos_bound", "tol",
    "max_rejection_iters", "max_restarts", "outcome_clamp_lo", "outcome_clamp_hi"};

inline DGPConfig dgp_config_from(const KeyValueConfig& c) {
  DGPConfig d;
  d.npoints = static_cast<int>(c.get_int("npoints", d.npoints));
  d.conf_bias_range = detail::interval_from(c, "conf_bias", d.conf_bias_range);
  d.eta_range = detail::interval_from(c, "eta", d.eta_range);
  d.rho_range = detail::interval_from(c, "rho", d.rho_range);
  d.pos_bound = c.get_double("pos_bound", d.pos_bound);
  d.tol = c.get_double("tol", d.tol);
  d.max_rejection_iters = static_cast<int>(c.get_int("max_rejection_iters", d.max_rejection_iters));
  d.max_restarts = static_cast<int>(c.get_int("max_restarts", d.max_restarts));
  d.outcome_clamp = detail::interval_from(c, "outcome_clamp", d.outcome_clamp);
  return d;
}

inline std::string distribution_id(int order, bool tx, int k) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "o%d_%s_%03d", order, tx ? "T" : "F", k);
  return buf;
}

/// Generates `count` distributions per (inter_order, tx_inter) combination.
/// Slot k of a combination tries seeds derived from (master, order, tx, k,
/// attempt) until one is feasible or max_attempts is spent, so the output
/// does not depend on the number of jobs. Returns the manifest digest.
inline std::string cmd_gen_dgp(const KeyValueConfig& c, const RunOptions& opt) {
  c.check_known(kGenKeys);
  const std::uint64_t seed = c.get_u64("seed", 0);
  if (!c.has("seed")) throw FormatError("gen-dgp: seed is mandatory");
  const fs::path out = c.require("out");
  const int count = static_cast<int>(c.get_int("count", 10));
  const int max_attempts = static_cast<int>(c.get_int("max_attempts", 20));
  const auto orders = detail::parse_orders(c.get_list("inter_orders", {"1", "2", "3"}));
  const auto txs = detail::parse_bools(c.get_list("tx_inter", {"TRUE", "FALSE"}), "tx_inter");
  if (count < 1 || max_attempts < 1) throw FormatError("gen-dgp: count and max_attempts must be >= 1");
  DGPConfig base = dgp_config_from(c);
  base.validate();
  fs::create_directories(out);

  struct Slot {
    int order;
    bool tx;
    int k;
    int attempts = 0;
    std::optional<SyntheticDistribution> dist;
    DGPConfig config;
  };
  std::vector<Slot> slots;
  for (int o : orders)
    for (bool tx : txs)
      for (int k = 0; k < count; ++k) slots.push_back(Slot{o, tx, k, 0, std::nullopt, base});

  const auto t0 = std::chrono::steady_clock::now();
  parallel_for(slots.size(), opt.jobs, [&](std::size_t i) {
    auto& s = slots[i];
    for (int a = 0; a < max_attempts && !s.dist; ++a) {
      s.config = base;
      s.config.inter_order = s.order;
      s.config.tx_inter = s.tx;
      s.config.seed = derive_seed(seed, {static_cast<std::uint64_t>(StreamRole::kDistribution),
                                         std::uint64_t(s.order), std::uint64_t(s.tx),
                                         std::uint64_t(s.k), std::uint64_t(a)});
      ++s.attempts;
      try {
        s.dist = generate(s.config);
      } catch (const InfeasibleDraw&) {
      }
    }
  });

  nlohmann::json manifest;
  manifest["config_digest"] = c.digest();
  manifest["seed"] = seed;
  manifest["combos"] = nlohmann::json::array();
  manifest["distributions"] = nlohmann::json::array();
  for (int o : orders)
    for (bool tx : txs) {
      int generated = 0, attempts = 0;
      for (const auto& s : slots) {
        if (s.order != o || s.tx != tx) continue;
        attempts += s.attempts;
        if (!s.dist) continue;
        ++generated;
        const std::string id = distribution_id(o, tx, s.k);
        const std::string file = id + ".csv";
        save_csv(*s.dist, (out / file).string());
        const auto side = sidecar_json(*s.dist, s.config);
        std::ofstream(sidecar_path((out / file).string())) << side.dump(2) << '\n';
        manifest["distributions"].push_back({{"id", id},
                                             {"file", file},
                                             {"inter_order", o},
                                             {"tx_inter", tx},
                                             {"seed", s.config.seed},
                                             {"attempts", s.attempts},
                                             {"target_bias", s.dist->provenance.target_bias},
                                             {"achieved_bias", s.dist->provenance.achieved_bias},
                                             {"hte", side.at("hte")}});
      }
      manifest["combos"].push_back({{"inter_order", o},
                                    {"tx_inter", tx},
                                    {"requested", count},
                                    {"generated", generated},
                                    {"attempts", attempts}});
      if (generated < count)
        detail::say(opt, "gen-dgp: combo (" + std::to_string(o) + ", " + (tx ? "TRUE" : "FALSE") +
                             ") produced " + std::to_string(generated) + " of " +
                             std::to_string(count) + " after " + std::to_string(attempts) +
                             " attempts");
    }
  const std::string text = manifest.dump(2) + "\n";
  std::ofstream(out / "manifest.json") << text;
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  detail::say(opt, "gen-dgp: wrote " + std::to_string(manifest["distributions"].size()) +
                       " distributions to " + out.string() + " in " + std::to_string(secs) + " s");
  return detail::fnv_hex(text);
}

// ---------------------------------------------------------------------------
// simulate

inline const std::set<std::string> kSimKeys = {
    "manifest", "seed", "out", "sizes", "reps", "estimators", "params", "inter_orders",
    "tx_inter", "hte", "hte_param", "max_distributions", "second_stage", "folds",
    "outcome_clamp_lo", "outcome_clamp_hi", "propensity_clamp_lo", "propensity_clamp_hi"};

inline const std::vector<std::string> kDefaultEstimators = {
    "LR", "LR-T", "SL", "SL-T", "DR-P", "DR-CATE", "DR-LOR", "DR-LRR", "R-CATE", "R-LOR", "R-LRR"};

inline LearnerConfig learner_from_name(const std::string& name, int folds) {
  LearnerConfig l;
  l.folds = folds;
  if (name == "stack") return l;
  for (const auto& spec : default_library())
    if (spec.name() == name) {
      l.library = {spec};
      return l;
    }
  throw FormatError("second_stage must be 'stack', 'glm', 'boosted_stumps' or 'kernel_smoother'");
}

inline MetaConfig meta_config_from(const KeyValueConfig& c) {
  MetaConfig m;
  const int folds = static_cast<int>(c.get_int("folds", 5));
  if (folds < 2) throw FormatError("folds must be >= 2");
  m.policy = TruncationPolicy(detail::interval_from(c, "outcome_clamp", {0.05, 0.95}),
                              detail::interval_from(c, "propensity_clamp", {0.01, 0.99}));
  m.super_learner.folds = folds;
  m.second_stage = learner_from_name(c.get("second_stage", "stack"), folds);
  return m;
}

struct ManifestEntry {
  std::string id;
  fs::path file;
  int inter_order = 0;
  bool tx_inter = false;
};

inline std::vector<ManifestEntry> read_manifest(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw FormatError("cannot read manifest " + path.string());
  const auto j = nlohmann::json::parse(is);
  std::vector<ManifestEntry> out;
  for (const auto& d : j.at("distributions"))
    out.push_back({d.at("id").get<std::string>(), path.parent_path() / d.at("file").get<std::string>(),
                   d.at("inter_order").get<int>(), d.at("tx_inter").get<bool>()});
  return out;
}

/// Runs every (distribution, estimator, n) cell and writes out/metrics.csv.
/// Completed cells are appended to out/progress.log; with resume they are
/// skipped, so an interrupted run can be continued without duplicate rows.
inline std::vector<MetricsRecord> cmd_simulate(const KeyValueConfig& c, const RunOptions& opt) {
  c.check_known(kSimKeys);
  if (!c.has("seed")) throw FormatError("simulate: seed is mandatory");
  const std::uint64_t seed = c.get_u64("seed", 0);
  const fs::path out = c.require("out");
  const fs::path manifest_path = c.require("manifest");

  std::vector<EstimatorSpec> estimators;
  for (const auto& name : c.get_list("estimators", kDefaultEstimators)) {
    auto s = find_estimator(name);
    if (!s) throw FormatError("unknown estimator '" + name + "'; valid names: " + estimator_names());
    estimators.push_back(*s);
  }
  std::vector<TargetParameter> params;
  for (const auto& p : c.get_list("params", {"ATE", "LogOR", "LogRR"})) {
    auto v = parse_parameter(p);
    if (!v) throw FormatError("unknown parameter '" + p + "'");
    params.push_back(*v);
  }
  std::vector<std::size_t> sizes;
  for (const auto& s : c.get_list("sizes", {"200", "500", "1000", "2000"})) {
    const long long v = std::stoll(s);
    if (v < 2) throw FormatError("sizes must be >= 2");
    sizes.push_back(static_cast<std::size_t>(v));
  }
  if (sizes.empty()) throw FormatError("sizes must be nonempty");
  const int reps = static_cast<int>(c.get_int("reps", 100));
  if (reps < 1) throw FormatError("reps must be >= 1");
  const MetaConfig meta = meta_config_from(c);

  // filters
  const auto orders = detail::parse_orders(c.get_list("inter_orders", {"1", "2", "3"}));
  const auto txs = detail::parse_bools(c.get_list("tx_inter", {"TRUE", "FALSE"}), "tx_inter");
  const std::string hte = c.get("hte", "any");
  if (hte != "any" && hte != "High" && hte != "Low") throw FormatError("hte must be any, High or Low");
  const auto hte_param = parse_parameter(c.get("hte_param", "OR"));
  if (!hte_param) throw FormatError("unknown hte_param");
  const auto max_dists = static_cast<std::size_t>(c.get_int("max_distributions", 0));

  const auto entries = read_manifest(manifest_path);
  std::string missing;
  for (const auto& e : entries)
    if (!fs::exists(e.file)) missing += "\n  " + e.file.string();
  if (!missing.empty()) throw FormatError("simulate: missing distribution files:" + missing);

  struct Selected {
    ManifestEntry entry;
    std::size_t index;
    SyntheticDistribution dist;
  };
  std::vector<Selected> selected;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& e = entries[i];
    if (std::find(orders.begin(), orders.end(), e.inter_order) == orders.end()) continue;
    if (std::find(txs.begin(), txs.end(), e.tx_inter) == txs.end()) continue;
    if (max_dists && selected.size() >= max_dists) break;
    auto d = load_csv(e.file.string());
    if (hte != "any" && std::string(to_string(hte_label(d, *hte_param).label)) != hte) continue;
    selected.push_back({e, i, std::move(d)});
  }
  if (selected.empty()) throw FormatError("simulate: no distribution matches the filters");

  fs::create_directories(out);
  const fs::path log_path = out / "progress.log";
  std::map<std::string, std::vector<MetricsRecord>> done;
  if (opt.resume && fs::exists(log_path)) {
    std::ifstream is(log_path);
    std::string line;
    std::map<std::string, std::vector<MetricsRecord>> pending;
    bool first = true;
    while (std::getline(is, line)) {
      const auto tab = line.find('\t');
      if (tab == std::string::npos) continue;  // torn final line
      const std::string tag = line.substr(0, tab);
      const std::string rest = line.substr(tab + 1);
      if (first) {
        if (tag != "CONFIG" || rest != c.digest())
          throw FormatError("simulate: progress log belongs to a different configuration");
        first = false;
        continue;
      }
      const auto tab2 = rest.find('\t');
      if (tag == "ROW" && tab2 != std::string::npos) {
        std::istringstream row(std::string(kMetricsHeader) + "\n" + rest.substr(tab2 + 1) + "\n");
        try {
          auto recs = read_metrics_csv(row);
          pending[rest.substr(0, tab2)].push_back(recs.at(0));
        } catch (const FormatError&) {
        }
      } else if (tag == "DONE" && !pending[rest].empty()) {
        done[rest] = pending[rest];
      }
    }
    // terminate a torn final line so appended records start cleanly
    is.clear();
    is.seekg(0, std::ios::end);
    if (is.tellg() > 0) {
      is.seekg(-1, std::ios::end);
      if (is.get() != '\n') std::ofstream(log_path, std::ios::app) << '\n';
    }
  } else {
    std::ofstream(log_path, std::ios::trunc) << "CONFIG\t" << c.digest() << '\n';
  }
  std::ofstream log(log_path, std::ios::app);

  EvalOptions eo;
  eo.meta = meta;
  eo.master_seed = seed;
  eo.jobs = opt.jobs;
  std::vector<MetricsRecord> all;
  std::size_t skipped = 0, ran = 0;
  for (const auto& s : selected)
    for (const auto& spec : estimators)
      for (std::size_t n : sizes) {
        const std::string cell = s.entry.id + "|" + spec.label + "|" + std::to_string(n);
        if (auto it = done.find(cell); it != done.end()) {
          all.insert(all.end(), it->second.begin(), it->second.end());
          ++skipped;
          continue;
        }
        DistributionRef ref{s.entry.id, s.index, &s.dist};
        const auto t0 = std::chrono::steady_clock::now();
        auto recs = evaluate(ref, spec, params, n, reps, eo);
        for (const auto& r : recs) {
          std::ostringstream row;
          write_metrics_row(row, r);
          std::string text = row.str();
          text.pop_back();
          log << "ROW\t" << cell << '\t' << text << '\n';
        }
        log << "DONE\t" << cell << '\n';
        log.flush();
        all.insert(all.end(), recs.begin(), recs.end());
        ++ran;
        const double secs =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        char msg[160];
        std::snprintf(msg, sizeof msg, "simulate: %s done in %.1f s", cell.c_str(), secs);
        detail::say(opt, msg);
      }
  std::ofstream os(out / "metrics.csv");
  write_metrics_csv(os, all);
  detail::say(opt, "simulate: " + std::to_string(ran) + " cells run, " + std::to_string(skipped) +
                       " resumed; wrote " + (out / "metrics.csv").string());
  return all;
}

// ---------------------------------------------------------------------------
// summarize

inline const std::set<std::string> kSummaryKeys = {"metrics", "out", "split_tx_inter"};

inline std::vector<SummaryRow> cmd_summarize(const KeyValueConfig& c, const RunOptions& opt) {
  c.check_known(kSummaryKeys);
  const fs::path in = c.require("metrics");
  const fs::path out = c.require("out");
  std::ifstream is(in);
  if (!is) throw FormatError("cannot read " + in.string());
  const auto records = read_metrics_csv(is);
  if (records.empty()) throw FormatError("summarize: metrics file has no rows");
  const auto rows = aggregate(records, c.get_bool("split_tx_inter", false));
  fs::create_directories(out / "reliability");
  {
    std::ofstream os(out / "summary.csv");
    write_summary_csv(os, rows);
  }
  // reliability curves per (stratum, metric), one CSV each
  using Stratum = std::tuple<int, std::size_t, HteLevel, TargetParameter>;
  std::map<Stratum, std::map<std::string, std::array<std::vector<double>, 3>>> groups;
  for (const auto& r : records) {
    if (r.reps_used < 1 || !std::isfinite(r.imse)) continue;
    auto& g = groups[{r.inter_order, r.n, r.hte_label, r.param}][r.estimator];
    g[0].push_back(r.ibias2);
    g[1].push_back(r.ivariance);
    g[2].push_back(r.imse);
  }
  const char* names[3] = {"iBias2", "iVariance", "iMSE"};
  for (const auto& [key, byest] : groups)
    for (int m = 0; m < 3; ++m) {
      const auto& [order, n, hte, param] = key;
      const std::string file = "o" + std::to_string(order) + "_n" + std::to_string(n) + "_" +
                               std::string(to_string(hte)) + "_" + std::string(to_string(param)) +
                               "_" + names[m] + ".csv";
      std::ofstream os(out / "reliability" / file);
      os << "estimator,t,survival\n";
      for (const auto& [est, vals] : byest) {
        const auto curve = reliability_curve(vals[static_cast<std::size_t>(m)]);
        for (std::size_t k = 0; k < curve.steps.size(); ++k)
          os << est << ',' << format_double(curve.steps[k]) << ','
             << format_double(curve.survival[k]) << '\n';
      }
    }
  detail::say(opt, "summarize: " + std::to_string(rows.size()) + " summary rows written to " +
                       out.string());
  return rows;
}

// ---------------------------------------------------------------------------
// verify

inline const std::set<std::string> kVerifyKeys = {
    "seed", "out", "identity_points", "exponent_paths", "ortho_distributions",
    "ortho_directions", "bound_cases", "risk_distributions", "outcome_clamp_lo",
    "outcome_clamp_hi", "propensity_clamp_lo", "propensity_clamp_hi"};

/// Runs the probe suite; returns true when every probe passes.
inline bool cmd_verify(const KeyValueConfig& c, const RunOptions& opt) {
  c.check_known(kVerifyKeys);
  VerifyConfig v;
  v.seed = c.get_u64("seed", v.seed);
  v.identity_points = static_cast<int>(c.get_int("identity_points", v.identity_points));
  v.exponent_paths = static_cast<int>(c.get_int("exponent_paths", v.exponent_paths));
  v.ortho_distributions = static_cast<int>(c.get_int("ortho_distributions", v.ortho_distributions));
  v.ortho_directions = static_cast<int>(c.get_int("ortho_directions", v.ortho_directions));
  v.bound_cases = static_cast<int>(c.get_int("bound_cases", v.bound_cases));
  v.risk_distributions = static_cast<int>(c.get_int("risk_distributions", v.risk_distributions));
  v.policy = TruncationPolicy(detail::interval_from(c, "outcome_clamp", {0.05, 0.95}),
                              detail::interval_from(c, "propensity_clamp", {0.01, 0.99}));
  const auto rows = run_verify(v);
  const fs::path out = c.get("out", ".");
  fs::create_directories(out);
  std::ofstream os(out / "verify.csv");
  write_probe_csv(os, rows);
  bool ok = true;
  for (const auto& r : rows) {
    ok = ok && r.pass;
    if (!r.pass) detail::say(opt, "verify: FAIL " + r.check + " " + r.param + " worst=" + format_double(r.worst));
  }
  detail::say(opt, std::string("verify: ") + (ok ? "all probes passed" : "failures found") +
                       "; report at " + (out / "verify.csv").string());
  return ok;
}

}  // namespace drl
