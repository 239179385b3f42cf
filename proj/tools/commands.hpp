#pragma once

// Command implementations behind the anchorlab executable. Each returns a
// process exit code and reports problems on `err`.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace anchorlab::cli {

enum ExitCode : int {
  kOk = 0,
  kFailure = 1,
  kConfigError = 2,
  kDivergence = 3,
  kMissingArtifact = 4,
};

struct Overrides {
  std::optional<std::string> method;
  std::optional<double> w;
  std::optional<std::uint64_t> seed;
  std::optional<double> tau;
};

// Runs `body`, mapping library exceptions to exit codes.
int guarded(const std::function<int()>& body, std::ostream& err);

int cmd_pretrain(const std::filesystem::path& config, const std::filesystem::path& out, const Overrides& o,
                 std::ostream& log, std::ostream& err);

int cmd_personalize(const std::filesystem::path& config, const std::filesystem::path& out, const Overrides& o,
                    std::ostream& log, std::ostream& err);

int cmd_sweep(const std::filesystem::path& config, const std::filesystem::path& out, const Overrides& o,
              std::ostream& log, std::ostream& err);

// Without --method, evaluates every method directory under `out` that holds a
// checkpoint, plus `beyond` when its directory exists.
int cmd_evaluate(const std::filesystem::path& config, const std::filesystem::path& out, const Overrides& o,
                 std::ostream& log, std::ostream& err);

int cmd_report(const std::vector<std::filesystem::path>& run_dirs, const std::filesystem::path& out,
               std::ostream& log, std::ostream& err);

struct MethodSummary {
  std::string method;
  double fidelity_nn = 0.0;
  double fidelity_mmd = 0.0;
  double alignment = 0.0;
  double rank_fidelity_nn = 0.0;
  double rank_fidelity_mmd = 0.0;
  double rank_alignment = 0.0;
  double rank = 0.0;
};

// Per-metric ranks (1 = best, ties averaged) and their mean.
void assign_ranks(std::vector<MethodSummary>& rows);

inline const std::vector<std::string> kComparisonHeader{
    "method", "fidelity_nn", "fidelity_mmd", "alignment", "rank_fidelity_nn", "rank_fidelity_mmd",
    "rank_alignment", "Rank"};

inline const std::vector<std::string> kSweepHeader{"w", "seed", "fidelity_nn", "fidelity_mmd", "alignment",
                                                   "unseen_alignment", "final_D2"};

}  // namespace anchorlab::cli
