#pragma once

#include <cstdint>
#include <map>
#include <string>

namespace s3f {

// Flat key=value configuration with typed accessors. Every key is registered
// with a default, unit and description (including the full-scale value where
// one exists); unknown keys are rejected.
class Config {
  public:
    Config();

    void set(const std::string& key, const std::string& value);
    void load_file(const std::string& path);

    double num(const std::string& key) const;
    int integer(const std::string& key) const;
    uint64_t seed(const std::string& key) const;
    bool flag(const std::string& key) const;
    const std::string& str(const std::string& key) const;

    bool known(const std::string& key) const { return entries_.count(key) > 0; }
    std::string help() const;

  private:
    struct Entry {
        std::string value;
        std::string def;
        std::string unit;
        std::string desc;
    };
    std::map<std::string, Entry> entries_;
};

}  // namespace s3f
