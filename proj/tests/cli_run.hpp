#pragma once

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#ifndef AM_CLI_PATH
#error "AM_CLI_PATH must name the CLI executable"
#endif

namespace clirun {

struct Run {
  int code = -1;
  std::string out, err;
};

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

inline std::string quote(const std::string& s) {
  std::string q = "'";
  for (char c : s) {
    if (c == '\'') q += "'\\''";
    else q += c;
  }
  return q + "'";
}

// Runs the CLI with the given (already quoted where needed) argument string.
// env is prepended verbatim, e.g. "ANATOMATCH_SEED=3".
inline Run run(const std::string& args, const std::filesystem::path& scratch, const std::string& env = "") {
  const auto out = scratch / "stdout.txt", err = scratch / "stderr.txt";
  const std::string cmd = (env.empty() ? "" : env + " ") + quote(AM_CLI_PATH) + " " + args + " > " +
                          quote(out.string()) + " 2> " + quote(err.string());
  const int status = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(out);
  r.err = slurp(err);
  return r;
}

}  // namespace clirun
