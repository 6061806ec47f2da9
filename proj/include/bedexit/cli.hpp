#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace bedexit::cli {

/// Runs one CLI invocation (`args` excludes the program name). Errors are reported on
/// `err` as `error: <CODE>: <message>`; the return value is the process exit code
/// (0 on success, the ErrorCode value otherwise).
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace bedexit::cli
