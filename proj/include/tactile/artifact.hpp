#pragma once

// Persisted artifacts carry the hash of the config that produced them.
// JSON documents hold it in a top-level "config_hash" field; CSV and JSONL
// files start with a "# config_hash: <hex>" line.

#include <filesystem>
#include <iosfwd>
#include <json.hpp>
#include <string>

namespace tactile {

/// 16 hex digits of FNV-1a over the compact dump (object keys sorted).
std::string config_hash(const nlohmann::json& config);

/// Throws HashMismatch when doc["config_hash"] differs from `expected`.
void verify_hash(const nlohmann::json& doc, const std::string& expected);

void write_json_file(const std::filesystem::path& path, const nlohmann::json& doc);
nlohmann::json read_json_file(const std::filesystem::path& path);

std::string csv_hash_line(const std::string& hash);
/// Reads the leading hash line of a CSV/JSONL file; throws HashMismatch
/// when it is absent or differs from `expected`.
void verify_file_hash(const std::filesystem::path& path, const std::string& expected);

/// Shortest round-trip text for a double, for CSV cells.
std::string fmt(double v);

/// Root for generated data: $TACTILE_DATA_ROOT, else ./tactile-data.
std::filesystem::path data_root();

}  // namespace tactile
