#pragma once

#include <initializer_list>
#include <string>
#include <string_view>

#include <json.hpp>

#include "drscreen/error.hpp"

namespace drscreen::json_util {

/// Throws ConfigError naming the first key of `j` not in `allowed`.
inline void reject_unknown_keys(const nlohmann::json& j, std::string_view section,
                                std::initializer_list<std::string_view> allowed) {
  if (!j.is_object()) throw ConfigError(std::string(section) + " must be an object");
  for (const auto& item : j.items()) {
    bool known = false;
    for (auto key : allowed) known = known || key == item.key();
    if (!known) {
      throw ConfigError("unknown key '" + item.key() + "' in section '" + std::string(section) + "'");
    }
  }
}

template <class T>
void read_if_present(const nlohmann::json& j, const char* key, T& out) {
  auto it = j.find(key);
  if (it == j.end()) return;
  try {
    out = it->template get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad value for '") + key + "': " + e.what());
  }
}

}  // namespace drscreen::json_util
