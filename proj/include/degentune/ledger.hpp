#pragma once

#include <json.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "degentune/errors.hpp"
#include "degentune/sha256.hpp"

namespace dgt {

/// Append-only record of CLI invocations under an output root: command,
/// argv, input and output fingerprints, wall time. Directory artifacts are
/// fingerprinted file by file; the ledger file itself is excluded.
class RunLedger {
 public:
  explicit RunLedger(std::string output_root)
      : root_(std::move(output_root)), path_(std::filesystem::path(root_) / "ledger.jsonl") {
    std::filesystem::create_directories(root_);
  }

  const std::string& path() const { return path_; }

  /// Fingerprints a path; directories expand to their contained files
  /// (sorted), keeping the map deterministic.
  static std::map<std::string, std::string> fingerprints(const std::string& p) {
    namespace fs = std::filesystem;
    std::map<std::string, std::string> out;
    if (fs::is_directory(p)) {
      std::vector<std::string> files;
      for (const auto& e : fs::recursive_directory_iterator(p))
        if (e.is_regular_file()) files.push_back(e.path().string());
      std::sort(files.begin(), files.end());
      for (const auto& f : files) out[f] = sha256_file(f);
    } else if (fs::exists(p)) {
      out[p] = sha256_file(p);
    }
    return out;
  }

  void record(const std::string& command, const std::vector<std::string>& argv,
              const std::vector<std::string>& input_paths,
              const std::vector<std::string>& output_paths, double wall_ms) {
    nlohmann::json j;
    j["command"] = command;
    j["argv"] = argv;
    j["wall_ms"] = wall_ms;
    nlohmann::json ins = nlohmann::json::array();
    for (const auto& p : input_paths)
      for (const auto& [f, h] : fingerprints(p)) ins.push_back({{"path", f}, {"sha256", h}});
    nlohmann::json outs = nlohmann::json::array();
    for (const auto& p : output_paths)
      for (const auto& [f, h] : fingerprints(p)) {
        if (f == path_) continue;
        outs.push_back({{"path", f}, {"sha256", h}});
      }
    j["inputs"] = ins;
    j["outputs"] = outs;
    std::ofstream out(path_, std::ios::app);
    if (!out) throw RuntimeError("ledger: cannot append to " + path_);
    out << j.dump() << "\n";
  }

 private:
  std::string root_;
  std::string path_;
};

class WallTimer {
 public:
  WallTimer() : start_(std::chrono::steady_clock::now()) {}
  double ms() const {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start_)
        .count();
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

}  // namespace dgt
