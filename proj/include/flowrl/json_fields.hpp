/// @file json_fields.hpp
/// @brief Helpers for strict JSON config sections: unknown keys and wrongly
/// typed values are reported as ConfigError with the offending key path.

#pragma once

#include <initializer_list>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "flowrl/errors.hpp"

namespace flowrl::json_fields {

inline void require_object(const nlohmann::json& j, std::string_view section) {
    if (!j.is_object()) throw ConfigError("config section '" + std::string(section) + "' must be an object");
}

inline void reject_unknown(const nlohmann::json& j, std::string_view section,
                           std::initializer_list<std::string_view> known) {
    require_object(j, section);
    for (const auto& item : j.items()) {
        bool ok = false;
        for (auto k : known) ok = ok || item.key() == k;
        if (!ok) throw ConfigError("unknown config key '" + std::string(section) + "." + item.key() + "'");
    }
}

/// Reads j[key] into @p out when present.
template <typename T>
void read(const nlohmann::json& j, std::string_view section, const char* key, T& out) {
    auto it = j.find(key);
    if (it == j.end()) return;
    try {
        out = it->get<T>();
    } catch (const nlohmann::json::exception&) {
        throw ConfigError("config key '" + std::string(section) + "." + key + "' has the wrong type");
    }
}

}  // namespace flowrl::json_fields
