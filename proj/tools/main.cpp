#include "commands.hpp"

#include <CLI11.hpp>

#include <iostream>

namespace cli = masslearn::cli;

int main(int argc, char** argv) {
  CLI::App app{"MASS learning and conserved differential information tools"};
  app.require_subcommand(1);

  cli::Common common;
  std::uint64_t seed = 0;
  std::string out;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--seed", seed, "Root seed (overrides the config)");
    sub->add_option("--threads", common.threads, "Worker threads")->check(CLI::PositiveNumber);
    sub->add_option("--out", out, "Output directory (overrides the config)");
  };

  std::string config;
  std::string model;
  std::string ood_config;
  std::string method;
  std::string split = "test";
  std::size_t n = 50000;
  std::size_t k = 3;

  CLI::App* train = app.add_subcommand("train", "Train a model; writes model.ckpt, curves.csv, config.echo");
  train->add_option("--config", config, "Run configuration")->required();
  add_common(train);

  CLI::App* eval = app.add_subcommand("eval", "Score a checkpoint on a dataset split");
  eval->add_option("--model", model, "Checkpoint")->required();
  eval->add_option("--config", config, "Run configuration naming the dataset")->required();
  eval->add_option("--split", split, "train or test");
  add_common(eval);

  CLI::App* ood = app.add_subcommand("ood", "Out-of-distribution detection metrics");
  ood->add_option("--model", model, "Checkpoint")->required();
  ood->add_option("--config", config, "Configuration of the in-distribution dataset")->required();
  ood->add_option("--ood-config", ood_config, "Configuration of the out-of-distribution dataset")->required();
  ood->add_option("--method", method, "entropy, max_q or marginal_q");
  ood->add_option("--split", split, "train or test");
  add_common(ood);

  CLI::App* cdi = app.add_subcommand("cdi-demo", "CDI estimates over the analytic map catalog");
  cdi->add_option("--n", n, "Samples per estimate");
  cdi->add_option("--k", k, "Nearest-neighbour order");
  add_common(cdi);

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return cli::kExitInvalid;
  }

  CLI::App* sub = app.get_subcommands().front();
  if (sub->count("--seed")) common.seed = seed;
  if (!out.empty()) common.out = out;

  if (sub == train) return cli::cmd_train(config, common, std::cerr);
  if (sub == eval) return cli::cmd_eval(model, config, split, common, std::cerr);
  if (sub == ood) {
    std::optional<std::string> m;
    if (!method.empty()) m = method;
    return cli::cmd_ood(model, config, ood_config, m, split, common, std::cerr);
  }
  return cli::cmd_cdi_demo(n, k, common, std::cerr);
}
