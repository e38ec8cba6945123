#pragma once

#include <map>
#include <string>
#include <vector>

namespace sfill {

// Flat "section.key" -> raw string store with typed accessors. Sources are
// layered: defaults < TOML file < environment (STRUCTFILL_SECTION_KEY) <
// explicit flag overrides.
class ConfigMap {
 public:
  static ConfigMap from_file(const std::string& path);
  static ConfigMap from_string(const std::string& text);

  void set(const std::string& key, const std::string& value) { kv_[key] = value; }
  bool has(const std::string& key) const { return kv_.count(key) != 0; }

  std::string get_str(const std::string& key, const std::string& def) const;
  int64_t get_int(const std::string& key, int64_t def) const;
  double get_double(const std::string& key, double def) const;
  bool get_bool(const std::string& key, bool def) const;

  // STRUCTFILL_TRAIN_STEPS=200 -> key "train.steps" (section = text up to the
  // first underscore, lowercased)
  void apply_env(const char* prefix = "STRUCTFILL_");
  void merge_from(const ConfigMap& higher_priority);

  const std::map<std::string, std::string>& entries() const { return kv_; }

 private:
  std::map<std::string, std::string> kv_;
};

}  // namespace sfill
