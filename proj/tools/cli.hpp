#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace rccm::cli {

struct CommandResult {
  int exit_code = 0;
  std::vector<std::string> artifacts;  // files written, present on disk on success
  std::string summary;                 // one line
};

// Dispatches one subcommand. On success the last line written to `out` is
// `RESULT <json>`; domain errors return 1 with a message on `err`, usage
// errors return 2.
CommandResult run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace rccm::cli
