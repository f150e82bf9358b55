#include <CLI11.hpp>
#include <algorithm>
#include <iostream>
#include <map>

#include "commands.hpp"
#include "hourglass/error.hpp"
#include "hourglass/runtime.hpp"

namespace {

using hourglass::cli::ExitCode;

int run(int argc, char** argv) {
  CLI::App app{"Hourglass hierarchical transformer: train, evaluate, audit, cost and synthetic experiments"};
  app.set_help_all_flag("--help-all", "Print help for every subcommand");
  app.footer(
      "Every key may also be set in a --config file as `key = value`; flags override the file. "
      "HOURGLASS_PRECISION=f32|f64 selects compute precision (audits always use f64). "
      "Exit codes: 0 success, 1 usage, 2 runtime, 3 audit failure.");

  std::string config_file;
  app.add_option("--config", config_file, "Flat `key = value` configuration file")->check(CLI::ExistingFile);

  std::map<std::string, std::string> values;
  std::map<std::string, CLI::Option*> overrides;
  for (const auto& key : hourglass::config_keys()) {
    std::string names = "--" + key.name;
    std::string dashed = key.name;
    std::replace(dashed.begin(), dashed.end(), '_', '-');
    if (dashed != key.name) names += ",--" + dashed;
    const std::string def = key.get(hourglass::RunConfig{});
    CLI::Option* opt = app.add_option(names, values[key.name], key.help + (def.empty() ? "" : " [default: " + def + "]"))
                           ->type_name("VALUE")
                           ->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    overrides[key.name] = opt;
  }

  struct Sub {
    const char* name;
    const char* help;
    int (*fn)(const hourglass::RunConfig&, std::ostream&, std::ostream&);
  };
  const Sub subs[] = {
      {"train", "Train a model on a byte corpus; writes metrics.csv and checkpoints", hourglass::cli::cmd_train},
      {"eval", "Overlapping-window evaluation of a checkpoint; prints BPC", hourglass::cli::cmd_eval},
      {"audit", "Jacobian leak audit of one configuration or the full grid", hourglass::cli::cmd_audit},
      {"cost", "Closed-form operation and activation counts per stage", hourglass::cli::cmd_cost},
      {"synth", "Repeats-task expressivity experiment with and without vanilla layers", hourglass::cli::cmd_synth},
  };
  for (const auto& s : subs) app.add_subcommand(s.name, s.help)->fallthrough();
  app.require_subcommand(1);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return ExitCode::kUsage;
  }

  hourglass::RunConfig cfg;
  if (!config_file.empty()) hourglass::apply_config_file(cfg, config_file);
  for (const auto& [name, opt] : overrides) {
    if (opt->count() > 0) hourglass::set_config_value(cfg, name, values[name]);
  }
  for (const auto& s : subs) {
    if (app.got_subcommand(s.name)) return s.fn(cfg, std::cout, std::cerr);
  }
  return ExitCode::kUsage;
}

}  // namespace

int main(int argc, char** argv) {
  hourglass::tune_allocator();
  try {
    return run(argc, argv);
  } catch (const hourglass::ParseError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return ExitCode::kUsage;
  } catch (const hourglass::DimensionError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return ExitCode::kRuntime;
  } catch (const std::invalid_argument& e) {
    // UsageError, ConfigError and ValidationError.
    std::cerr << "error: " << e.what() << '\n';
    return ExitCode::kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return ExitCode::kRuntime;
  }
}
