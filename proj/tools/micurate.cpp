// micurate: score, select and train on MI-curated subsets from a JSON config.
//
//   micurate validate --config exp.json
//   micurate run --config exp.json --out results --threads 4

#include <cstdint>
#include <cstdio>
#include <exception>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"

#include "micurate/experiment.hpp"

namespace ex = micurate::experiment;

namespace {

struct Flags {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  unsigned threads = 1;
};

void add_common(CLI::App* cmd, Flags& f, bool with_run_flags) {
  cmd->add_option("--config", f.config, "experiment config (JSON)")->required()->check(CLI::ExistingFile);
  if (!with_run_flags) return;
  cmd->add_option("--out", f.out, "output directory (overrides config output_dir)");
  cmd->add_option("--seed", f.seed, "master seed (overrides config seed)");
  cmd->add_option("--threads", f.threads, "worker threads")->check(CLI::Range(1u, 1024u));
}

int validate(const Flags& f) {
  const auto violations = ex::validate_config(f.config);
  if (violations.empty()) {
    std::cout << f.config << ": ok\n";
    return 0;
  }
  for (const auto& v : violations) std::cerr << f.config << ": " << v.field << ": " << v.message << "\n";
  return 1;
}

int execute(const Flags& f, ex::Command command) {
  auto cfg = ex::load_config(f.config);
  if (f.seed) cfg.seed = *f.seed;
  const std::filesystem::path out = f.out.empty() ? cfg.output_dir : std::filesystem::path(f.out);
  ex::RunOptions opts;
  opts.threads = f.threads;
  const auto r = ex::run_command(cfg, command, out, opts);
  std::cout << "global_mi " << ex::fmt_double(r.scores.global_mi) << " nats, n=" << r.scores.n << "\n";
  for (const auto& c : r.cells) {
    if (command == ex::Command::select) {
      std::cout << c.plan.strategy() << " " << ex::fmt_double(c.plan.retention_ratio) << " retained "
                << c.selection.retained_indices.size() << "\n";
    } else if (command != ex::Command::score) {
      std::cout << c.plan.strategy() << " " << ex::fmt_double(c.plan.retention_ratio) << " accuracy "
                << ex::fmt_double(c.accuracy) << "\n";
    }
  }
  std::cout << "outputs in " << out.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"KSG mutual-information data curation"};
  app.require_subcommand(1);
  Flags flags;

  auto* v = app.add_subcommand("validate", "check a config and report every violation");
  add_common(v, flags, false);
  auto* sc = app.add_subcommand("score", "run through scoring; writes scores.csv");
  add_common(sc, flags, true);
  auto* se = app.add_subcommand("select", "run through selection; writes selections/");
  add_common(se, flags, true);
  auto* tr = app.add_subcommand("train", "run through training; writes accuracy.csv");
  add_common(tr, flags, true);
  auto* run = app.add_subcommand("run", "full grid with report.json");
  add_common(run, flags, true);

  CLI11_PARSE(app, argc, argv);

  try {
    if (v->parsed()) return validate(flags);
    if (sc->parsed()) return execute(flags, ex::Command::score);
    if (se->parsed()) return execute(flags, ex::Command::select);
    if (tr->parsed()) return execute(flags, ex::Command::train);
    return execute(flags, ex::Command::run);
  } catch (const ex::StageError& e) {
    std::cerr << "error: " << flags.config << ": " << e.what() << "\n";
    return 2;
  } catch (const micurate::ConfigError& e) {
    std::cerr << "error: [config] " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << flags.config << ": " << e.what() << "\n";
    return 3;
  }
}
