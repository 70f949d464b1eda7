#include <CLI11.hpp>
#include <string>

#include "rssm/config.hpp"

int main(int argc, char** argv) {
  CLI::App app{"recurrent state-space model toolkit"};
  app.require_subcommand(1);

  std::string config_path, seed_override, out_override;
  bool print_only = false;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "configuration file")->required();
    sub->add_option("--seed", seed_override, "override the config seed");
    sub->add_option("--out", out_override, "override the output directory");
    sub->add_flag("--print-config", print_only,
                  "echo the fully resolved configuration and exit");
  };

  CLI::App* generate = app.add_subcommand("generate", "write synthetic dataset files");
  CLI::App* train = app.add_subcommand("train", "train a model and write checkpoints");
  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint and write metrics");
  add_common(generate);
  add_common(train);
  add_common(eval);

  CLI11_PARSE(app, argc, argv);

  std::string command;
  if (generate->parsed()) command = "generate";
  if (train->parsed()) command = "train";
  if (eval->parsed()) command = "eval";
  return rssm::cli::run_command(command, config_path, seed_override, out_override, print_only);
}
