// SPDX-License-Identifier: Apache-2.0
// srppo: run, report, compare and validate experiment runs.
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "srppo/errors.hpp"
#include "srppo/run_directory.hpp"

namespace {

std::vector<std::string> split_stages(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Coherent-reward PPO experiments on synthetic token worlds"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir;
  std::uint64_t seed = 0;
  std::string stages;

  auto add_config_flags = [&](CLI::App* sub) {
    sub->add_option("-c,--config", config_path, "JSON experiment config")->required()->check(CLI::ExistingFile);
    sub->add_option("-o,--out", out_dir, "Output directory (overrides output_dir)");
    sub->add_option("-s,--seed", seed, "Global seed (overrides seed)");
    sub->add_option("--stages", stages, "Comma-separated stages, e.g. pretrain,sft,ppo,eval");
  };

  auto* run = app.add_subcommand("run", "Run the configured stages into a fresh run directory");
  add_config_flags(run);
  auto* validate = app.add_subcommand("validate", "Check a config and print it with defaults filled in");
  add_config_flags(validate);

  std::string run_dir;
  auto* report = app.add_subcommand("report", "Write report/summary.csv and SVG curves for a run");
  report->add_option("run_dir", run_dir, "Run directory")->required();

  std::vector<std::string> dirs;
  std::string compare_out;
  auto* compare = app.add_subcommand("compare", "Merge the eval tables of several runs");
  compare->add_option("run_dirs", dirs, "Run directories")->required();
  compare->add_option("-o,--out", compare_out, "Write the merged CSV here instead of stdout");

  CLI11_PARSE(app, argc, argv);

  auto overrides = [&](CLI::App* sub) {
    srppo::RunOverrides o;
    if (sub->count("--out")) o.output_dir = out_dir;
    if (sub->count("--seed")) o.seed = seed;
    if (sub->count("--stages")) o.stages = split_stages(stages);
    return o;
  };

  try {
    if (*run) {
      const auto config = srppo::load_config(config_path, overrides(run));
      const auto dir = srppo::run_experiment(config);
      std::cout << "run complete: " << dir.string() << '\n';
    } else if (*validate) {
      const auto config = srppo::load_config(config_path, overrides(validate));
      std::cout << srppo::to_json(config).dump(2) << '\n';
    } else if (*report) {
      const auto r = srppo::generate_report(run_dir);
      for (const auto& f : r.files) std::cout << f.string() << '\n';
      if (!r.absent_stages.empty()) {
        std::cerr << "absent stages:";
        for (const auto& s : r.absent_stages) std::cerr << ' ' << s;
        std::cerr << '\n';
      }
    } else if (*compare) {
      std::vector<srppo::fs::path> paths(dirs.begin(), dirs.end());
      const auto table = srppo::compare_runs(paths);
      if (compare_out.empty()) {
        srppo::write_compare_csv(std::cout, table);
      } else {
        std::ofstream f(compare_out);
        if (!f) throw srppo::InputError("cannot write '" + compare_out + "'");
        srppo::write_compare_csv(f, table);
      }
    }
  } catch (const srppo::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
