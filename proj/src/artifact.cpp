#include "tactile/artifact.hpp"

#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <fstream>

#include "tactile/errors.hpp"
#include "tactile/seed.hpp"

namespace tactile {

std::string config_hash(const nlohmann::json& config) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fnv1a64(config.dump())));
  return buf;
}

void verify_hash(const nlohmann::json& doc, const std::string& expected) {
  const std::string got = doc.is_object() ? doc.value("config_hash", "") : "";
  if (got != expected) {
    throw HashMismatch("artifact config hash '" + got + "' does not match '" + expected + "'");
  }
}

void write_json_file(const std::filesystem::path& path, const nlohmann::json& doc) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw InvalidArgument("cannot write " + path.string());
  out << doc.dump(2) << '\n';
}

nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot read " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigInvalid(path.string() + ": " + e.what());
  }
}

std::string csv_hash_line(const std::string& hash) { return "# config_hash: " + hash; }

void verify_file_hash(const std::filesystem::path& path, const std::string& expected) {
  std::ifstream in(path);
  std::string line;
  if (!in || !std::getline(in, line)) throw HashMismatch(path.string() + " has no header line");
  if (line != csv_hash_line(expected)) {
    throw HashMismatch(path.string() + ": '" + line + "' does not match hash " + expected);
  }
}

std::string fmt(double v) {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc()) return "nan";
  return std::string(buf, end);
}

std::filesystem::path data_root() {
  if (const char* env = std::getenv("TACTILE_DATA_ROOT"); env && *env) return env;
  return "tactile-data";
}

}  // namespace tactile
