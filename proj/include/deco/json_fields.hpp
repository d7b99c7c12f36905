#pragma once

#include <set>
#include <string>

#include <json.hpp>

#include "deco/error.hpp"

// Strict reading of config objects: unknown keys and type mismatches are ConfigErrors.
namespace deco::json_fields {

inline void require_object(const nlohmann::json& j, const std::set<std::string>& keys, const std::string& what) {
    if (!j.is_object()) throw ConfigError(what + " must be an object");
    for (const auto& item : j.items())
        if (!keys.count(item.key())) throw ConfigError(what + ": unknown key '" + item.key() + "'");
}

template <typename T>
void read(const nlohmann::json& j, const std::string& key, T& field, const std::string& what) {
    if (!j.contains(key)) return;
    try {
        field = j.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(what + "." + key + ": " + e.what());
    }
}

}  // namespace deco::json_fields
