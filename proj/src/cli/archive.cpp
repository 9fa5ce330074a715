#include "interp/cli/archive.hpp"

#include <fstream>
#include <sstream>

#include "interp/error.hpp"
#include "interp/util/text.hpp"

namespace interp::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

const char* const kManifest = "manifest.json";

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot read " + p.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void spit(const fs::path& p, const std::string& content) {
  fs::create_directories(p.parent_path());
  const auto tmp = p.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + p.string());
    out << content;
    if (!out) throw IoError("cannot write " + p.string());
  }
  fs::rename(tmp, p);
}

}  // namespace

RunArchive::RunArchive(fs::path root) : root_(std::move(root)) {}

RunArchive::RunArchive(RunArchive&& other) noexcept : root_(std::move(other.root_)), files_(std::move(other.files_)) {}

RunArchive RunArchive::create(const fs::path& root) {
  std::error_code ec;
  fs::create_directories(root, ec);
  if (ec) throw IoError("cannot create archive " + root.string() + ": " + ec.message());
  if (fs::exists(root / kManifest)) return open(root);
  RunArchive a(root);
  a.save_manifest();
  return a;
}

RunArchive RunArchive::open(const fs::path& root) {
  if (!fs::exists(root / kManifest)) throw NotFoundError("no archive manifest in " + root.string());
  RunArchive a(root);
  try {
    const auto j = json::parse(slurp(root / kManifest));
    if (j.value("schema", "") != "interp.archive") throw IoError("not an archive manifest");
    a.files_ = j.at("files").get<std::map<std::string, std::string>>();
  } catch (const json::exception& e) {
    throw IoError("unreadable archive manifest: " + std::string(e.what()));
  }
  return a;
}

fs::path RunArchive::checked(const std::string& rel) const {
  const fs::path p(rel);
  if (rel.empty() || p.is_absolute() || rel == kManifest) throw IoError("invalid archive path '" + rel + "'");
  for (const auto& part : p) {
    if (part == "..") throw IoError("invalid archive path '" + rel + "'");
  }
  return root_ / p;
}

void RunArchive::write(const std::string& rel, const std::string& content) {
  const auto path = checked(rel);
  const auto hash = util::sha256_hex(content);
  std::lock_guard lock(mu_);
  auto it = files_.find(rel);
  if (it != files_.end()) {
    if (it->second == hash) return;
    throw IoError("archive is append-only: " + rel + " already holds different content");
  }
  if (fs::exists(path)) throw IoError("archive file " + rel + " exists but is not in the manifest");
  spit(path, content);
  files_[rel] = hash;
  save_manifest();
}

void RunArchive::write_json(const std::string& rel, const json& j) { write(rel, j.dump(2) + "\n"); }

bool RunArchive::exists(const std::string& rel) const {
  std::lock_guard lock(mu_);
  return files_.count(rel) > 0;
}

std::string RunArchive::read(const std::string& rel) const {
  if (!exists(rel)) throw NotFoundError("archive has no " + rel);
  return slurp(checked(rel));
}

json RunArchive::read_json(const std::string& rel) const {
  try {
    return json::parse(read(rel));
  } catch (const json::parse_error& e) {
    throw IoError("archive file " + rel + " is not valid JSON: " + e.what());
  }
}

std::vector<std::string> RunArchive::list(const std::string& dir) const {
  std::lock_guard lock(mu_);
  std::vector<std::string> out;
  const auto prefix = dir.empty() || dir.back() == '/' ? dir : dir + "/";
  for (const auto& [rel, hash] : files_) {
    if (rel.rfind(prefix, 0) == 0) out.push_back(rel);
  }
  return out;
}

std::map<std::string, std::string> RunArchive::files() const {
  std::lock_guard lock(mu_);
  return files_;
}

std::string RunArchive::root_hash() const {
  std::string lines;
  for (const auto& [rel, hash] : files()) lines += rel + "\t" + hash + "\n";
  return util::sha256_hex(lines);
}

std::vector<std::string> RunArchive::verify() const {
  std::vector<std::string> bad;
  for (const auto& [rel, hash] : files()) {
    const auto path = root_ / rel;
    if (!fs::exists(path) || util::sha256_hex(slurp(path)) != hash) bad.push_back(rel);
  }
  return bad;
}

void RunArchive::save_manifest() const {
  std::string lines;
  for (const auto& [rel, hash] : files_) lines += rel + "\t" + hash + "\n";
  const json j{{"schema", "interp.archive"}, {"schema_version", 1}, {"root", util::sha256_hex(lines)}, {"files", files_}};
  spit(root_ / kManifest, j.dump(2) + "\n");
}

}  // namespace interp::cli
