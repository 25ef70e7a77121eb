// amom: command-line front end.
//
//   amom <command> [--config PATH] [--set key=value]... [--seed N] [--out DIR] [--dry-run]
//
// Exit status: 0 success, 2 config error, 3 data error, 4 numeric failure,
// 1 anything else.

#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "amom/commands.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Adaptive masking for conditional masked language models"};
  app.require_subcommand(1);
  std::string config_path, out_dir;
  std::vector<std::string> overrides;
  long long seed = -1;
  bool dry_run = false;
  for (const auto& name : amom::command_names()) {
    auto* sub = app.add_subcommand(name);
    sub->add_option("--config", config_path, "config file of key = value lines");
    sub->add_option("--set", overrides, "override one key (repeatable)")->take_all();
    sub->add_option("--seed", seed, "experiment seed");
    sub->add_option("--out", out_dir, "run directory (default runs/<command>)");
    sub->add_flag("--dry-run", dry_run, "validate config and data, write nothing");
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }
  const std::string command = app.get_subcommands().front()->get_name();
  try {
    amom::RunContext ctx;
    ctx.config = amom::parse_config(config_path, overrides);
    if (seed >= 0) ctx.config.set("seed", std::to_string(seed));
    ctx.out = out_dir.empty() ? std::filesystem::path("runs") / command : std::filesystem::path(out_dir);
    ctx.dry_run = dry_run;
    return amom::run_command(command, ctx);
  } catch (const std::exception& e) {
    std::cerr << "amom " << command << ": " << e.what() << '\n';
    return amom::exit_code_for(e);
  }
}
