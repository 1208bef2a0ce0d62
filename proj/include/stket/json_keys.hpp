#pragma once

#include <string>

#include "json.hpp"
#include "stket/errors.hpp"

namespace stket {

// Throws ConfigError for any key of `j` that `known` lacks.
inline void reject_unknown_keys(const nlohmann::json& j, const nlohmann::json& known,
                                const std::string& what) {
  if (!j.is_object()) throw ConfigError(what + ": expected a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (!known.contains(key)) throw ConfigError(what + ": unknown key '" + key + "'");
  }
}

}  // namespace stket
