#include <cstdio>
#include <exception>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "rankalign/harness.hpp"

namespace {

struct Overrides {
  std::string config;
  std::optional<std::string> seed, mode, scheme, gamma, mu, steps, out;
};

void add_common(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config, "key = value config file");
  cmd->add_option("--seed", o.seed, "run seed");
  cmd->add_option("--mode", o.mode, "grpo | gspo | rank_grpo");
  cmd->add_option("--scheme", o.scheme, "seq_dcg | causal_dcg | exp_decay");
  cmd->add_option("--gamma", o.gamma, "exp_decay base (inf allowed)");
  cmd->add_option("--mu", o.mu, "updates per sampling batch");
  cmd->add_option("--steps", o.steps, "training steps of this stage");
  cmd->add_option("--out", o.out, "run directory");
}

rankalign::RunConfig resolve(const Overrides& o, const std::string& command) {
  rankalign::RunConfig cfg = o.config.empty()
                                 ? rankalign::RunConfig{}
                                 : rankalign::RunConfig::from_file(o.config);
  if (o.seed) cfg.set("seed", *o.seed);
  if (o.mode) cfg.set("rl.mode", *o.mode);
  if (o.scheme) cfg.set("rl.scheme", *o.scheme);
  if (o.gamma) cfg.set("rl.gamma", *o.gamma);
  if (o.mu) cfg.set("rl.mu", *o.mu);
  if (o.steps) {
    if (command == "sft") cfg.set("sft.steps", *o.steps);
    else if (command == "rl") cfg.set("rl.steps", *o.steps);
    else if (command == "distill") cfg.set("distill.adjust_steps", *o.steps);
    else throw rankalign::ConfigError("--steps does not apply to " + command);
  }
  if (o.out) cfg.set("out", *o.out);
  cfg.validate();
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"rank-aligned list generation: env, distillation, SFT, RL, eval"};
  app.require_subcommand(1);

  Overrides o;
  struct Command {
    const char* name;
    const char* help;
    void (*run)(const rankalign::RunConfig&);
  };
  const Command commands[] = {
      {"gen-env", "generate catalog and tasks", rankalign::run_gen_env},
      {"distill", "build SFT demonstrations", rankalign::run_distill},
      {"sft", "behavior cloning on demonstrations", rankalign::run_sft},
      {"rl", "group-sampled policy optimization", rankalign::run_rl},
      {"eval", "greedy evaluation of a checkpoint", rankalign::run_eval},
  };
  for (const Command& c : commands) add_common(app.add_subcommand(c.name, c.help), o);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  for (const Command& c : commands) {
    if (!app.got_subcommand(c.name)) continue;
    try {
      c.run(resolve(o, c.name));
      return 0;
    } catch (const rankalign::ConfigError& e) {
      std::fprintf(stderr, "config error: %s\n", e.what());
      return 2;
    } catch (const std::exception& e) {
      std::fprintf(stderr, "error: %s\n", e.what());
      return 1;
    }
  }
  return 2;
}
