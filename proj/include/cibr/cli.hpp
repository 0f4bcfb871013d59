#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "cibr/gradcheck.hpp"

namespace cibr::cli {

/// Process exit codes. Stable: scripts depend on them.
enum ExitCode : int {
    kOk = 0,
    kGradcheckFailed = 1,
    kConfigError = 2,  // bad config, bad flags, dimension mismatch
    kDiverged = 3,
    kIoError = 4,
};

/// Entry point without argv[0]. Progress goes to `out`, diagnostics to `err`;
/// results are only ever written to files.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Runs `cases` and prints one line per case; kGradcheckFailed names the
/// failures.
int cmd_gradcheck(const std::vector<GradCase>& cases, std::ostream& out, std::ostream& err,
                  const GradSuiteOptions& options = {});

/// "0,0.5,1" -> {0, 0.5, 1}. ConfigError on empty lists or bad numbers.
std::vector<double> parse_lambda_list(const std::string& text);

}  // namespace cibr::cli
