// Command-line driver: run, resume, export, truth.

#include <cstdio>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "anchored/archive.hpp"

using namespace anchored;

namespace {

void print_header() { std::cout << export_header("diagnostics") << '\n'; }

Json final_extra(const Experiment& ex, const InversionEngine& engine, const InversionState& st) {
  Json extra;
  extra["fields"] = ex.config.ensemble_fields;
  if (ex.config.example == "linear-oracle") {
    const auto exact = linear_oracle_posterior(ex, st.anchors);
    const auto [mean, cov] = mixture_moments(st.posterior);
    const int n1 = engine.theta1_dim();
    Json rows = Json::array();
    for (int s = 0; s < st.anchors.size(); ++s) {
      const double sd = std::sqrt(exact.cov(s, s));
      const double est_sd = std::sqrt(cov(n1 + s, n1 + s));
      rows.push_back({{"anchor", s},
                      {"exact_mean", exact.mean(s)},
                      {"exact_sd", sd},
                      {"mean", mean(n1 + s)},
                      {"sd", est_sd},
                      {"mean_error_in_sd", (mean(n1 + s) - exact.mean(s)) / sd},
                      {"sd_ratio", est_sd / sd}});
    }
    extra["oracle"] = rows;
  }
  return extra;
}

void finish(const Experiment& ex, const InversionEngine& engine, const InversionState& st, const RunArchive& ar) {
  const auto fields = engine.posterior_field_ensemble(st, ex.config.ensemble_fields, substream(st.seed, "ensemble")());
  const auto summary = summarize_ensemble(fields, ex.data.truth);
  const Json extra = final_extra(ex, engine, st);
  ar.write_final(summary, ex.data.truth, extra);
  std::printf("ensemble: mean |dev| %.6g, mean sd %.6g, truth range %.6g, 90%% coverage %.3f\n",
              summary.mean_abs_dev, summary.mean_sd, summary.truth_range, summary.coverage90);
  if (extra.contains("oracle"))
    for (const auto& r : extra.at("oracle"))
      std::printf("oracle anchor %d: mean error %.3f sd, sd ratio %.3f\n", r.at("anchor").get<int>(),
                  r.at("mean_error_in_sd").get<double>(), r.at("sd_ratio").get<double>());
}

void drive(const Experiment& ex, const InversionEngine& engine, InversionState& st, const RunArchive& ar) {
  const auto labels_for = [&](const InversionState& s) { return engine.labels(s.anchors); };
  engine.run(st, [&](const InversionState& s, const IterationSummary& sum) {
    ar.write_iteration(s, sum, labels_for(s));
    std::cout << diagnostics_row(sum.record) << std::endl;
  });
  finish(ex, engine, st, ar);
}

EngineConfig engine_config(const Experiment& ex, int threads) {
  EngineConfig e = ex.engine_config();
  if (threads > 0) e.threads = threads;
  e.log = [](const std::string& m) { std::cerr << "note: " << m << '\n'; };
  return e;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Anchored inversion of spatial fields"};
  app.require_subcommand(1);

  std::string config_path, archive_dir, out_path, kind;
  std::uint64_t seed_truth = 0, seed_run = 0;
  int threads = 0;

  auto* run = app.add_subcommand("run", "Run all iterations of an experiment and write an archive");
  run->add_option("--config", config_path, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
  run->add_option("--archive,--out", archive_dir, "Archive directory (default: config 'output')");
  auto* st_opt = run->add_option("--seed-truth", seed_truth, "Override the truth seed");
  auto* sr_opt = run->add_option("--seed-run", seed_run, "Override the run seed");
  run->add_option("--threads", threads, "Worker threads");

  auto* resume = app.add_subcommand("resume", "Continue an archive from its last completed iteration");
  resume->add_option("--archive", archive_dir, "Archive directory")->required()->check(CLI::ExistingDirectory);
  resume->add_option("--threads", threads, "Worker threads");

  auto* exp = app.add_subcommand("export", "Write a delimiter-separated table from an archive");
  exp->add_option("kind", kind, "diagnostics | ensemble | anchors | predictions")->required();
  exp->add_option("--archive", archive_dir, "Archive directory")->required()->check(CLI::ExistingDirectory);
  exp->add_option("--out", out_path, "Output file (default: stdout)");

  auto* truth = app.add_subcommand("truth", "Generate the synthetic truth and data of a config");
  truth->add_option("--config", config_path, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
  auto* tt_opt = truth->add_option("--seed-truth", seed_truth, "Override the truth seed");
  truth->add_option("--out", out_path, "Write truth JSON here");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) {
      ExperimentConfig cfg = load_config(config_path);
      if (st_opt->count()) cfg.truth_seed = seed_truth;
      if (sr_opt->count()) cfg.run_seed = seed_run;
      if (threads > 0) cfg.engine.threads = threads;
      if (archive_dir.empty()) archive_dir = cfg.output;
      if (archive_dir.empty()) throw UsageError("run: no archive directory (use --archive or set 'output')");
      const Experiment ex = build_experiment(cfg);
      const InversionEngine engine(ex.problem, *ex.forward, engine_config(ex, threads));
      const RunArchive ar(archive_dir);
      ar.create(cfg, ex);
      InversionState st = engine.init_state();
      print_header();
      drive(ex, engine, st, ar);
    } else if (resume->parsed()) {
      const RunArchive ar(archive_dir);
      ExperimentConfig cfg = ar.config();
      const Experiment ex = build_experiment(cfg);
      const InversionEngine engine(ex.problem, *ex.forward, engine_config(ex, threads));
      InversionState st = ar.load_state(ex, engine);
      if (st.iteration >= cfg.engine.iterations && ar.manifest().value("final", false)) {
        std::cout << "archive already complete (" << st.iteration << " iterations); nothing to do\n";
        return 0;
      }
      print_header();
      for (const auto& r : st.history) std::cout << diagnostics_row(r) << '\n';
      drive(ex, engine, st, ar);
    } else if (exp->parsed()) {
      const std::string table = export_table(RunArchive(archive_dir), kind);
      if (out_path.empty()) {
        std::cout << table;
      } else {
        std::ofstream out(out_path);
        if (!out) throw UsageError("export: cannot write " + out_path);
        out << table;
      }
    } else if (truth->parsed()) {
      ExperimentConfig cfg = load_config(config_path);
      if (tt_opt->count()) cfg.truth_seed = seed_truth;
      const Experiment ex = build_experiment(cfg);
      const Json j = RunArchive::truth_json(ex);
      std::printf("%s truth: %d cells, range [%.6g, %.6g], %d observations\n", cfg.example.c_str(),
                  static_cast<int>(ex.data.truth.size()), ex.data.truth.minCoeff(), ex.data.truth.maxCoeff(),
                  static_cast<int>(ex.data.z_obs.size()));
      if (!out_path.empty()) {
        std::ofstream out(out_path);
        if (!out) throw UsageError("truth: cannot write " + out_path);
        out << j.dump(1) << '\n';
      }
    }
  } catch (const Error& e) {
    std::cerr << "error [" << e.kind() << "]: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
