#pragma once

// Strict reading of key-value config objects: every key present must be known,
// and known keys that are absent keep their default.

#include <initializer_list>
#include <json.hpp>
#include <string>

#include "tactile/errors.hpp"

namespace tactile::json_fields {

using nlohmann::json;

inline void require_object(const json& j, const std::string& where) {
  if (!j.is_object()) throw ConfigInvalid(where + " must be a JSON object");
}

inline void reject_unknown(const json& j, std::initializer_list<const char*> known,
                           const std::string& where) {
  require_object(j, where);
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool found = false;
    for (const char* k : known) found = found || it.key() == k;
    if (!found) throw ConfigInvalid("unknown key '" + it.key() + "' in " + where);
  }
}

template <typename T>
void read(const json& j, const char* key, T& out, const std::string& where) {
  auto it = j.find(key);
  if (it == j.end()) return;
  try {
    out = it->template get<T>();
  } catch (const json::exception& e) {
    throw ConfigInvalid(where + "." + key + ": " + e.what());
  }
}

}  // namespace tactile::json_fields
