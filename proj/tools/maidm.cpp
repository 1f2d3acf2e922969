// maidm: synth | extract | calibrate | simulate | ring | evaluate
//
// Exit codes: 0 success, 2 config/validation error, 3 numeric or diagnostic
// failure, 4 I/O error.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"

#include "maidm/cli/commands.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;
constexpr int kExitIo = 4;

struct Flags {
  std::string config;
  std::string out = "out";
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;
  bool force = false;
};

int run(const std::string& name, const Flags& f) {
  using namespace maidm;
  RunConfig cfg = load_config(f.config);
  if (f.seed) cfg.apply_seed(*f.seed);
  if (f.threads) {
    if (*f.threads < 1) throw InvalidArgument("--threads must be >= 1");
    cfg.apply_threads(*f.threads);
  }
  const cli::Options opt{f.out, f.force};
  static const std::map<std::string, std::function<void(const RunConfig&, const cli::Options&)>> commands = {
      {"synth", cli::cmd_synth},       {"extract", cli::cmd_extract},   {"calibrate", cli::cmd_calibrate},
      {"simulate", cli::cmd_simulate}, {"evaluate", cli::cmd_evaluate}, {"ring", cli::cmd_ring}};
  commands.at(name)(cfg, opt);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bayesian IDM calibration with GP residuals, stochastic and ring-road simulation"};
  app.require_subcommand(1);
  Flags flags;
  const std::map<std::string, std::string> descriptions = {
      {"synth", "generate synthetic leader-follower episodes"},
      {"extract", "cut leader-follower episodes from a trajectory table"},
      {"calibrate", "sample the posterior of a B-IDM / MA-IDM model"},
      {"simulate", "roll out posterior draws against an episode's leader"},
      {"evaluate", "score existing simulation output against an episode"},
      {"ring", "single-lane ring road simulation and fundamental diagram"}};
  for (const auto& [name, desc] : descriptions) {
    auto* sub = app.add_subcommand(name, desc);
    sub->add_option("--config", flags.config, "JSON config file")->required()->check(CLI::ExistingFile);
    sub->add_option("--out", flags.out, "output directory")->capture_default_str();
    sub->add_option("--seed", flags.seed, "master seed (overrides the config)");
    sub->add_option("--threads", flags.threads, "worker threads (overrides the config)");
    sub->add_flag("--force", flags.force, "write summaries even when diagnostics fail");
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  }

  const std::string name = app.get_subcommands().front()->get_name();
  try {
    return run(name, flags);
  } catch (const maidm::IoError& e) {
    std::cerr << "maidm " << name << ": I/O error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "maidm " << name << ": I/O error: " << e.what() << "\n";
    return kExitIo;
  } catch (const maidm::NumericError& e) {
    std::cerr << "maidm " << name << ": " << e.what() << "\n";
    return kExitNumeric;
  } catch (const maidm::InvalidArgument& e) {
    std::cerr << "maidm " << name << ": invalid input: " << e.what() << "\n";
    return kExitConfig;
  } catch (const maidm::DomainError& e) {
    std::cerr << "maidm " << name << ": " << e.what() << "\n";
    return kExitConfig;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "maidm " << name << ": config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "maidm " << name << ": " << e.what() << "\n";
    return kExitNumeric;
  }
}
