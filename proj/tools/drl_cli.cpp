// drl: generate synthetic laws, run Monte Carlo studies, summarize them, and
// self-check the pseudo-outcome identities.
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "drl/commands.hpp"

namespace {

struct CommonFlags {
  std::string config;
  std::string seed;
  std::string out;
  unsigned jobs = drl::default_jobs();
  bool resume = false;
};

void add_common(CLI::App* sub, CommonFlags& f, bool with_resume) {
  sub->add_option("--config", f.config, "key = value configuration file");
  sub->add_option("--seed", f.seed, "master seed (overrides the config)");
  sub->add_option("--out", f.out, "output directory (overrides the config)");
  sub->add_option("--jobs", f.jobs, "worker threads")->check(CLI::PositiveNumber);
  if (with_resume) sub->add_flag("--resume", f.resume, "skip cells already in progress.log");
}

drl::KeyValueConfig load(const CommonFlags& f) {
  auto c = f.config.empty() ? drl::KeyValueConfig{} : drl::KeyValueConfig::from_file(f.config);
  if (!f.seed.empty()) c.set("seed", f.seed);
  if (!f.out.empty()) c.set("out", f.out);
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Doubly robust and R-learner simulation toolkit"};
  app.require_subcommand(1);
  CommonFlags gen, sim, sum, ver;
  std::string metrics;
  auto* g = app.add_subcommand("gen-dgp", "generate synthetic distributions and a manifest");
  add_common(g, gen, false);
  auto* s = app.add_subcommand("simulate", "run the Monte Carlo plan over a manifest");
  add_common(s, sim, true);
  auto* m = app.add_subcommand("summarize", "median/IQR tables and reliability curves");
  add_common(m, sum, false);
  m->add_option("--metrics", metrics, "metrics CSV (overrides the config)");
  auto* v = app.add_subcommand("verify", "probe the pseudo-outcome identities");
  add_common(v, ver, false);
  CLI11_PARSE(app, argc, argv);

  try {
    drl::RunOptions opt;
    opt.log = &std::cerr;
    if (g->parsed()) {
      opt.jobs = gen.jobs;
      std::cout << "manifest digest " << drl::cmd_gen_dgp(load(gen), opt) << '\n';
    } else if (s->parsed()) {
      opt.jobs = sim.jobs;
      opt.resume = sim.resume;
      drl::cmd_simulate(load(sim), opt);
    } else if (m->parsed()) {
      auto c = load(sum);
      if (!metrics.empty()) c.set("metrics", metrics);
      drl::cmd_summarize(c, opt);
    } else if (v->parsed()) {
      auto c = load(ver);
      return drl::cmd_verify(c, opt) ? 0 : 1;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
