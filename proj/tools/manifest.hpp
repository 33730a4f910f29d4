#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace nowcast::cli {

std::string sha256_file(const std::filesystem::path& path);

/// key=value run record written next to a command's primary output.
class RunManifest {
 public:
  explicit RunManifest(std::string command);

  void set(const std::string& key, const std::string& value);
  void input(const std::filesystem::path& path);
  void output(const std::filesystem::path& path);
  /// Hashes every input and output, stamps the wall time, and writes
  /// the manifest to `path`.
  void write(const std::filesystem::path& path, double wall_seconds) const;

 private:
  std::string command_;
  std::vector<std::pair<std::string, std::string>> config_;
  std::vector<std::filesystem::path> inputs_;
  std::vector<std::filesystem::path> outputs_;
};

}  // namespace nowcast::cli
