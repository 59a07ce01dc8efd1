#pragma once

#include <set>
#include <string>

#include <json.hpp>

#include "dwiqc/core/error.hpp"

namespace dwiqc {

/// Reads an object section key by key; absent keys keep their defaults and
/// finish() rejects any key that was never asked for.
class JsonSection {
public:
    JsonSection(const nlohmann::json& j, std::string context) : j_(j), context_(std::move(context))
    {
        if (!j_.is_object()) throw ConfigError(context_ + ": expected a JSON object");
    }

    template <class T>
    bool read(const std::string& key, T& out)
    {
        seen_.insert(key);
        auto it = j_.find(key);
        if (it == j_.end()) return false;
        try {
            out = it->template get<T>();
        } catch (const nlohmann::json::exception&) {
            throw ConfigError(context_ + "." + key + ": wrong type (got " + it->dump() + ")");
        }
        return true;
    }

    /// Nested object, or nullptr when absent.
    const nlohmann::json* section(const std::string& key)
    {
        seen_.insert(key);
        auto it = j_.find(key);
        return it == j_.end() ? nullptr : &*it;
    }

    std::string path(const std::string& key) const { return context_ + "." + key; }

    void finish() const
    {
        for (const auto& [key, value] : j_.items()) {
            if (!seen_.count(key)) throw ConfigError(context_ + ": unknown key '" + key + "'");
        }
    }

private:
    const nlohmann::json& j_;
    std::string context_;
    std::set<std::string> seen_;
};

}  // namespace dwiqc
