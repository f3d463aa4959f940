#pragma once

#include <iosfwd>
#include <string>

#include "covsteer/config.hpp"
#include "covsteer/covcon.hpp"

namespace covsteer {

/// Execute a configured solve and write the requested artifacts into out_dir
/// (created if missing): nominal.csv, gains.csv, samples.csv, moments.csv,
/// multipliers.csv and result.json. Returns the process exit status:
/// 0 on constraint convergence, 2 when the outer loop stopped with residuals
/// above tolerance. Hard errors propagate as exceptions (exit 1 in the CLI).
int run_config(const RunConfig& config, const std::string& out_dir,
               std::ostream& log);

/// Parse and validate a config file; prints either the normalized config
/// with defaults resolved or the validation error. Returns 0/1.
int validate_config_file(const std::string& path, std::ostream& out);

}  // namespace covsteer
