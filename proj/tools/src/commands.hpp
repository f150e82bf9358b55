#pragma once

#include <ostream>

#include "hourglass/config.hpp"

namespace hourglass::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kRuntime = 2, kAuditFailure = 3 };

// Each command writes artifacts under `out_dir/<config hash>-s<seed>` and
// returns an exit code; errors propagate as exceptions.
int cmd_train(const RunConfig& cfg, std::ostream& out, std::ostream& err);
int cmd_eval(const RunConfig& cfg, std::ostream& out, std::ostream& err);
int cmd_audit(const RunConfig& cfg, std::ostream& out, std::ostream& err);
int cmd_cost(const RunConfig& cfg, std::ostream& out, std::ostream& err);
int cmd_synth(const RunConfig& cfg, std::ostream& out, std::ostream& err);

}  // namespace hourglass::cli
