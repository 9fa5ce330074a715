#pragma once

#include <nlohmann/json.hpp>

#include <filesystem>
#include <map>
#include <mutex>
#include <string>
#include <vector>

namespace interp::cli {

/// Directory of run artifacts with a content-hashed manifest.json. Files are
/// append-only: rewriting a path with identical bytes is a no-op, with
/// different bytes an IoError.
class RunArchive {
 public:
  /// Opens `root`, creating it when missing and loading any manifest.
  static RunArchive create(const std::filesystem::path& root);
  /// Opens an existing archive; throws NotFoundError without a manifest.
  static RunArchive open(const std::filesystem::path& root);

  RunArchive(RunArchive&& other) noexcept;

  const std::filesystem::path& root() const { return root_; }
  void write(const std::string& rel, const std::string& content);
  void write_json(const std::string& rel, const nlohmann::json& j);
  bool exists(const std::string& rel) const;
  std::string read(const std::string& rel) const;
  nlohmann::json read_json(const std::string& rel) const;
  /// Relative paths under `dir` present in the manifest, sorted.
  std::vector<std::string> list(const std::string& dir) const;

  std::map<std::string, std::string> files() const;
  /// SHA-256 over the sorted "path\tsha256\n" lines of the manifest.
  std::string root_hash() const;
  /// Files whose bytes no longer match the manifest, or are missing.
  std::vector<std::string> verify() const;

 private:
  explicit RunArchive(std::filesystem::path root);
  void save_manifest() const;
  std::filesystem::path checked(const std::string& rel) const;

  std::filesystem::path root_;
  std::map<std::string, std::string> files_;
  mutable std::mutex mu_;
};

}  // namespace interp::cli
