#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ufm/commands.hpp"

namespace {

std::string seeded_prefix(const std::string& prefix, std::uint64_t seed) {
  return prefix + "_seed" + std::to_string(seed);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Unconstrained-features models: optimize, check against closed forms, measure collapse."};
  app.require_subcommand(1);

  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::vector<std::uint64_t> seed_list;
  bool quiet = false;
  bool center = false;
  std::string features;
  std::string weights;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--out", out, "Output path prefix (overrides output_path)");
    sub->add_flag("--quiet", quiet, "Suppress progress output");
  };
  auto add_config = [&](CLI::App* sub) {
    sub->add_option("--config", config, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "Seed override");
    add_common(sub);
  };

  auto* run = app.add_subcommand("run", "Run gradient descent and write the trace and summary");
  add_config(run);
  run->add_option("--seed-list", seed_list, "Run once per seed; outputs get a _seed<N> suffix")
      ->delimiter(',')
      ->excludes("--seed");
  auto* verify = app.add_subcommand("verify", "Run and compare against the closed-form minimizer");
  add_config(verify);
  verify->add_option("--seed-list", seed_list, "Verify once per seed; outputs get a _seed<N> suffix")
      ->delimiter(',')
      ->excludes("--seed");
  auto* oracle = app.add_subcommand("oracle", "Write the closed-form minimizer and its diagnostics");
  add_config(oracle);
  auto* asym = app.add_subcommand("asymptotic", "Ridge-weight attenuation experiment on noisy features");
  add_config(asym);
  auto* metrics = app.add_subcommand("metrics", "Neural-collapse metrics of a feature file");
  metrics->add_option("--features", features, "Feature file (.csv or .bin)")->required();
  metrics->add_option("--weights", weights, "Classifier weights K x d (.csv or .bin)");
  metrics->add_flag("--center", center, "Center class means before the ETF comparison");
  add_common(metrics);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : ufm::kExitInvalid;
  }

  ufm::CommandOptions opt;
  opt.log = quiet ? ufm::LogLevel::Quiet : ufm::log_level_from_env();
  opt.center = center;
  if (!out.empty()) opt.out = out;
  opt.seed = seed;

  auto per_seed = [&](auto&& command) {
    if (seed_list.empty()) return command(config, opt);
    int worst = ufm::kExitOk;
    for (std::uint64_t s : seed_list) {
      ufm::CommandOptions o = opt;
      o.seed = s;
      if (out.empty()) {
        try {
          const auto cfg = ufm::parse_experiment_config(ufm::read_json_file(config));
          o.out = seeded_prefix(cfg.output_path, s);
        } catch (const std::exception& e) {
          opt.error(e.what());
          return int{ufm::kExitInvalid};
        }
      } else {
        o.out = seeded_prefix(out, s);
      }
      worst = std::max(worst, command(config, o));
    }
    return worst;
  };

  if (*run) return per_seed([](const auto& c, const auto& o) { return ufm::cmd_run(c, o); });
  if (*verify) return per_seed([](const auto& c, const auto& o) { return ufm::cmd_verify(c, o); });
  if (*oracle) return ufm::cmd_oracle(config, opt);
  if (*asym) return ufm::cmd_asymptotic(config, opt);
  std::optional<std::filesystem::path> wpath;
  if (!weights.empty()) wpath = weights;
  return ufm::cmd_metrics(features, wpath, opt);
}
