// rbsgfn: train, evaluate, verify and ablate goal-conditioned flow networks.

#include <iostream>

#include <CLI11.hpp>

#include "rbs/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Goal-conditioned flow networks with retrospective backward synthesis"};
  app.require_subcommand(1);

  std::string config;
  std::string matrix = "modes";
  std::uint64_t seed = 0;
  std::string out, checkpoint, map;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config,-c", config, "run configuration file")->required()->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "override run.seed");
    sub->add_option("--out", out, "override run.out_dir");
  };
  auto* train = app.add_subcommand("train", "train a model");
  common(train);
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  common(eval);
  eval->add_option("--checkpoint", checkpoint, "checkpoint file (default: run directory)");
  eval->add_option("--map", map, "obstacle map for unseen-map evaluation")->check(CLI::ExistingFile);
  auto* verify = app.add_subcommand("verify", "run exact consistency checks");
  common(verify);
  verify->add_option("--checkpoint", checkpoint, "also check goal concentration of this checkpoint");
  auto* ablate = app.add_subcommand("ablate", "run a named config matrix");
  common(ablate);
  ablate->add_option("--matrix", matrix, "modes | intensification | kl | baselines");

  CLI11_PARSE(app, argc, argv);

  rbs::CliOverrides o;
  for (auto* sub : {train, eval, verify, ablate}) {
    if (!sub->parsed()) continue;
    if (sub->count("--seed")) o.seed = seed;
    if (sub->count("--out")) o.out_dir = out;
  }
  if (!checkpoint.empty()) o.checkpoint = checkpoint;
  if (!map.empty()) o.map = map;

  if (train->parsed()) return rbs::run_train(config, o, std::cout, std::cerr);
  if (eval->parsed()) return rbs::run_eval(config, o, std::cout, std::cerr);
  if (verify->parsed()) return rbs::run_verify(config, o, std::cout, std::cerr);
  return rbs::run_ablate(config, matrix, o, std::cout, std::cerr);
}
