#pragma once

// Runs the mapguide binary as a child process and captures its output.

#include "mapguide/io.hpp"

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <string>
#include <vector>

namespace testing {

struct CliResult {
  int exit_code = -1;
  std::string out;
  std::string err;
};

inline std::string shell_quote(const std::string& s) {
  std::string q = "'";
  for (char c : s) {
    if (c == '\'') q += "'\\''";
    else q += c;
  }
  return q + "'";
}

// `scratch` holds the captured streams; `run_root` becomes $MAPGUIDE_RUN_ROOT.
inline CliResult run_cli(const std::vector<std::string>& args, const std::filesystem::path& scratch,
                         const std::filesystem::path& run_root) {
  const auto out = scratch / "cli.stdout";
  const auto err = scratch / "cli.stderr";
  std::string cmd = "MAPGUIDE_RUN_ROOT=" + shell_quote(run_root.string()) + " " + shell_quote(MAPGUIDE_CLI);
  for (const auto& a : args) cmd += " " + shell_quote(a);
  cmd += " >" + shell_quote(out.string()) + " 2>" + shell_quote(err.string());
  const int status = std::system(cmd.c_str());
  CliResult r;
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = mapguide::read_text_file(out);
  r.err = mapguide::read_text_file(err);
  return r;
}

// Small enough that the whole chain runs in a couple of seconds.
inline const char* kTinyConfig = R"({
  "synth": {"n_trs": 300, "n_words": 600, "voxels": 100, "test_trs": 60,
            "corpus_stories": 40, "story_length": 40, "vocab_size": 20},
  "lm": {"epochs": 2},
  "mapper": {"max_epochs": 5, "patch_size": 50, "learning_rate": 0.001},
  "evaluate": {"n_baselines": 20}
})";

}  // namespace testing
