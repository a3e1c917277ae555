#pragma once

// Runs the hsrl binary as a child process and compares its output trees.

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#ifndef HSRL_CLI
#error "HSRL_CLI must name the hsrl executable"
#endif

namespace cli {

namespace fs = std::filesystem;

struct Result {
  int exit_code = -1;
  std::string output;  // stdout and stderr interleaved
};

inline std::string quote(const std::string& s) {
  std::string out = "'";
  for (char ch : s) out += ch == '\'' ? std::string("'\\''") : std::string(1, ch);
  return out + "'";
}

inline std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

/// Runs `hsrl <args>` with SOURCE_DATE_EPOCH pinned unless `pin_time` is false.
inline Result run(const std::vector<std::string>& args, const fs::path& log, bool pin_time = true) {
  std::string cmd = pin_time ? "SOURCE_DATE_EPOCH=0 " : "";
  cmd += quote(HSRL_CLI);
  for (const std::string& a : args) cmd += " " + quote(a);
  cmd += " > " + quote(log.string()) + " 2>&1";
  const int status = std::system(cmd.c_str());
  Result r;
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.output = slurp(log);
  return r;
}

/// Relative path -> contents for every regular file under `root`.
inline std::map<std::string, std::string> tree(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = slurp(e.path());
  }
  return out;
}

inline fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

/// Small but complete end-to-end settings shared by the CLI tests.
struct Workspace {
  fs::path root;
  fs::path data() const { return root / "data"; }
  fs::path topics() const { return root / "topics"; }

  std::vector<std::string> synth_args(const fs::path& out) const {
    return {"synth-data", "--seed", "7", "--num-records", "24", "--valid-records", "6", "--topics", "3",
            "--d-v", "6", "--slots", "3", "--out", out.string()};
  }
  std::vector<std::string> fit_args(const fs::path& out) const {
    return {"fit-topics", "--train", (data() / "train.jsonl").string(), "--valid",
            (data() / "valid.jsonl").string(), "--vocab", (data() / "vocab.txt").string(), "--topics", "3",
            "--seed", "1", "--out", out.string()};
  }
  std::vector<std::string> model_flags() const {
    return {"--topics", "3", "--worker-hidden", "8", "--embed", "6", "--factors", "5", "--manager-hidden", "6",
            "--epochs", "3", "--manager-epochs", "2", "--warmup-epochs", "1", "--ramp-epochs", "1",
            "--batch-size", "8", "--t-max", "10", "--seed", "3"};
  }
  std::vector<std::string> train_args(const fs::path& out, const std::string& scheme = "joint") const {
    std::vector<std::string> a = {"train", "--train", (topics() / "train.jsonl").string(), "--valid",
                                  (topics() / "valid.jsonl").string(), "--vocab", (data() / "vocab.txt").string(),
                                  "--scheme", scheme, "--gamma1", "0.7", "--gamma2", "0.9", "--out", out.string()};
    for (const auto& f : model_flags()) a.push_back(f);
    return a;
  }
  std::vector<std::string> generate_args(const fs::path& ckpt, const fs::path& out) const {
    return {"generate", "--checkpoint", ckpt.string(), "--corpus", (topics() / "valid.jsonl").string(), "--vocab",
            (data() / "vocab.txt").string(), "--seed", "5", "--mode", "sample", "--t-max", "10", "--out",
            out.string()};
  }
  std::vector<std::string> evaluate_args(const fs::path& out, const std::string& variant) const {
    std::vector<std::string> a = {"evaluate", "--train", (topics() / "train.jsonl").string(), "--corpus",
                                  (topics() / "valid.jsonl").string(), "--vocab", (data() / "vocab.txt").string(),
                                  "--variant", variant, "--out", out.string()};
    for (const auto& f : model_flags()) a.push_back(f);
    return a;
  }
  std::vector<std::string> grad_args(const fs::path& out) const {
    return {"grad-check", "--seed", "2", "--out", out.string()};
  }

  /// Creates data/ and topics/ under root; returns false on failure.
  bool prepare() const {
    return run(synth_args(data()), root / "synth.log").exit_code == 0 &&
           run(fit_args(topics()), root / "fit.log").exit_code == 0;
  }
};

}  // namespace cli
