#include <CLI11.hpp>
#include <iostream>

#include "commands.hpp"

namespace fs = std::filesystem;
using namespace anchorlab::cli;

namespace {

struct Flags {
  std::string config;
  std::string out;
  std::string method;
  double w = 0.0;
  std::uint64_t seed = 0;
  double tau = 0.0;
  std::vector<std::string> runs;
};

void add_common(CLI::App* cmd, Flags& f, bool with_method) {
  cmd->add_option("--config", f.config, "run configuration file")->required();
  cmd->add_option("--out", f.out, "run directory")->required();
  if (with_method) cmd->add_option("--method", f.method, "recon, recon_ppl, anchored, anchored_ft or beyond");
  cmd->add_option("--w", f.w, "anchor weight");
  cmd->add_option("--seed", f.seed, "run seed");
  cmd->add_option("--tau", f.tau, "switching fraction for beyond");
}

Overrides overrides(CLI::App* cmd, const Flags& f) {
  Overrides o;
  if (cmd->get_option_no_throw("--method") && cmd->count("--method")) o.method = f.method;
  if (cmd->count("--w")) o.w = f.w;
  if (cmd->count("--seed")) o.seed = f.seed;
  if (cmd->count("--tau")) o.tau = f.tau;
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"anchorlab: semantic-anchoring personalization laboratory"};
  app.require_subcommand(1);
  Flags f;

  auto* pre = app.add_subcommand("pretrain", "train the base denoiser on a fresh world");
  add_common(pre, f, false);
  auto* per = app.add_subcommand("personalize", "adapt the pretrained model to the subject");
  add_common(per, f, true);
  auto* swp = app.add_subcommand("sweep", "anchor-weight sweep over grid x seeds");
  add_common(swp, f, false);
  auto* evl = app.add_subcommand("evaluate", "score personalized models");
  add_common(evl, f, true);
  auto* rep = app.add_subcommand("report", "comparison table and figures from run directories");
  rep->add_option("runs", f.runs, "run directories")->required();
  rep->add_option("--out", f.out, "report directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kConfigError;
  }

  if (pre->parsed()) return cmd_pretrain(f.config, f.out, overrides(pre, f), std::cout, std::cerr);
  if (per->parsed()) return cmd_personalize(f.config, f.out, overrides(per, f), std::cout, std::cerr);
  if (swp->parsed()) return cmd_sweep(f.config, f.out, overrides(swp, f), std::cout, std::cerr);
  if (evl->parsed()) return cmd_evaluate(f.config, f.out, overrides(evl, f), std::cout, std::cerr);
  std::vector<fs::path> runs(f.runs.begin(), f.runs.end());
  return cmd_report(runs, f.out, std::cout, std::cerr);
}
