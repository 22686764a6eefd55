#pragma once

#include <nlohmann/json.hpp>
#include <set>
#include <string>

#include "otsvad/core/error.hpp"

namespace otsvad {

// Strict reader over one JSON object. Every key that is read is marked;
// finish() rejects whatever was left unread, so a misspelt key is an
// error instead of a silently ignored default.
class JsonSection {
 public:
  JsonSection(const nlohmann::json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_null() && !j_.is_object()) throw ConfigError(path_ + ": expected an object");
  }

  template <class V>
  void get(const std::string& key, V& out) {
    seen_.insert(key);
    if (j_.is_null() || !j_.contains(key)) return;
    try {
      out = j_.at(key).get<V>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(path_ + "." + key + ": " + e.what());
    }
  }

  JsonSection section(const std::string& key) {
    seen_.insert(key);
    static const nlohmann::json kNull;
    if (j_.is_null() || !j_.contains(key)) return JsonSection(kNull, path_ + "." + key);
    return JsonSection(j_.at(key), path_ + "." + key);
  }

  bool has(const std::string& key) const { return !j_.is_null() && j_.contains(key); }
  const std::string& path() const { return path_; }
  const nlohmann::json& json() const { return j_; }
  void mark(const std::string& key) { seen_.insert(key); }

  void finish() const {
    if (j_.is_null()) return;
    for (const auto& [k, _] : j_.items())
      if (!seen_.count(k)) throw ConfigError("unknown config key: " + path_ + "." + k);
  }

 private:
  const nlohmann::json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

}  // namespace otsvad
