#pragma once

#include <set>
#include <stdexcept>
#include <string>

#include <json.hpp>

namespace hitdvae {

/// Raised for malformed configuration documents. The message names the offending key path.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Reads a JSON object where every key must be consumed exactly once; finish()
/// rejects leftovers so a typo never turns into a silent default.
class StrictObject {
 public:
  StrictObject(const nlohmann::json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + ": expected an object");
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  const nlohmann::json& raw(const std::string& key) {
    if (!j_.contains(key)) throw ConfigError(path_ + "." + key + ": missing required key");
    used_.insert(key);
    return j_.at(key);
  }

  template <class T>
  T get(const std::string& key) {
    const auto& v = raw(key);
    try {
      return v.get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(path_ + "." + key + ": " + e.what());
    }
  }

  std::size_t get_count(const std::string& key, bool allow_zero = false) {
    const auto& v = raw(key);
    if (!v.is_number_integer() || v.get<long long>() < (allow_zero ? 0 : 1)) {
      throw ConfigError(path_ + "." + key + ": expected a " + (allow_zero ? "non-negative" : "positive") + " integer");
    }
    return v.get<std::size_t>();
  }

  double get_number(const std::string& key) {
    const auto& v = raw(key);
    if (!v.is_number()) throw ConfigError(path_ + "." + key + ": expected a number");
    return v.get<double>();
  }

  StrictObject object(const std::string& key) { return StrictObject(raw(key), path_ + "." + key); }

  void finish() const {
    for (const auto& item : j_.items()) {
      if (!used_.count(item.key())) throw ConfigError(path_ + "." + item.key() + ": unknown key");
    }
  }

  const std::string& path() const { return path_; }

 private:
  const nlohmann::json& j_;
  std::string path_;
  std::set<std::string> used_;
};

}  // namespace hitdvae
