/*
 * Copyright 2026 The fairmp Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

// fairmp command-line front end.

#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "fairmp/errors.h"
#include "fairmp/pipeline.h"

namespace {

struct CommonFlags {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string out;
  std::string mode;
  long long seed = -1;
  long long num_seeds = -1;
  long long epochs = -1;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("-c,--config", f.config_path, "JSON config file");
  cmd->add_option("--set", f.overrides, "Override a config value, e.g. dataset.shift=0.5");
  cmd->add_option("-o,--out", f.out, "Output root (default: $FAIRMP_OUTPUT_ROOT or ./fairmp-out)");
  cmd->add_option("--mode", f.mode, "fp32 | uniform-<b> | fairquant-qat | fairquant-baq | ptq-uniform-<b>");
  cmd->add_option("--seed", f.seed, "Root seed");
  cmd->add_option("--num-seeds", f.num_seeds, "Number of consecutive root seeds");
  cmd->add_option("--epochs", f.epochs, "Fine-tuning epochs");
}

fairmp::ExperimentConfig resolve(const CommonFlags& f) {
  std::vector<std::string> overrides = f.overrides;
  // Dedicated flags are applied last so they win over --set and the file.
  if (!f.out.empty()) overrides.push_back("output_dir=\"" + f.out + "\"");
  if (!f.mode.empty()) overrides.push_back("mode=\"" + f.mode + "\"");
  if (f.seed >= 0) overrides.push_back("seed=" + std::to_string(f.seed));
  if (f.num_seeds >= 0) overrides.push_back("num_seeds=" + std::to_string(f.num_seeds));
  if (f.epochs >= 0) overrides.push_back("epochs=" + std::to_string(f.epochs));
  return fairmp::load_config(f.config_path, overrides);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Fairness-aware mixed-precision quantization experiments"};
  app.require_subcommand(1);

  CommonFlags gen_flags, pre_flags, cal_flags, run_flags, sweep_flags;
  auto* gen = app.add_subcommand("generate-data", "Write the synthetic dataset manifest");
  add_common(gen, gen_flags);
  auto* pre = app.add_subcommand("pretrain", "Train the full-precision checkpoint per seed");
  add_common(pre, pre_flags);
  auto* cal = app.add_subcommand("calibrate-allocate",
                                 "Group importance calibration and bit allocation per seed");
  add_common(cal, cal_flags);
  auto* run = app.add_subcommand("run", "Evaluate or fine-tune one mode per seed");
  add_common(run, run_flags);
  auto* sweep = app.add_subcommand("sweep", "Sweep lambda_fair, lambda_baq_b or baq_lr");
  add_common(sweep, sweep_flags);
  std::string axis;
  std::vector<double> values;
  long long sweep_seeds = -1;
  sweep->add_option("--axis", axis, "lambda_fair | lambda_baq_b | baq_lr");
  sweep->add_option("--values", values, "Axis values")->delimiter(',');
  sweep->add_option("--sweep-seeds", sweep_seeds, "Seeds per value (default 5)");
  auto* report = app.add_subcommand("report", "Markdown table of run results");
  std::string report_dir;
  report->add_option("dir", report_dir, "Directory searched for result.json files")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      const auto out = fairmp::cmd_generate_data(resolve(gen_flags));
      std::cout << out.manifest.string() << "\nsha256 " << out.checksum << "\n";
    } else if (pre->parsed()) {
      for (const auto& p : fairmp::cmd_pretrain(resolve(pre_flags))) std::cout << p.string() << "\n";
    } else if (cal->parsed()) {
      for (const auto& p : fairmp::cmd_calibrate_allocate(resolve(cal_flags))) {
        std::cout << p.string() << "\n";
      }
    } else if (run->parsed()) {
      for (const auto& p : fairmp::cmd_run(resolve(run_flags))) std::cout << p.string() << "\n";
    } else if (sweep->parsed()) {
      if (!axis.empty()) sweep_flags.overrides.push_back("sweep.axis=\"" + axis + "\"");
      if (!values.empty()) {
        std::string list = "[";
        for (std::size_t i = 0; i < values.size(); ++i) {
          list += (i ? "," : "") + nlohmann::json(values[i]).dump();
        }
        sweep_flags.overrides.push_back("sweep.values=" + list + "]");
      }
      if (sweep_seeds >= 0) {
        sweep_flags.overrides.push_back("sweep.num_seeds=" + std::to_string(sweep_seeds));
      }
      const auto out = fairmp::cmd_sweep(resolve(sweep_flags));
      for (const auto& f : out.failures) std::cerr << "failed: " << f << "\n";
      std::cout << out.csv.string() << "\n";
    } else if (report->parsed()) {
      std::vector<std::string> warnings;
      std::cout << fairmp::cmd_report(report_dir, &warnings);
      for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
    }
  } catch (const fairmp::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const fairmp::DivergenceError& e) {
    std::cerr << "diverged: " << e.what() << "\n";
    return 3;
  } catch (const fairmp::IoError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
