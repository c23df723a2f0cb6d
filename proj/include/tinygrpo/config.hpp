#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace tinygrpo {

// Human-readable key-value configuration:
//
//   # full-line comment
//   seed = 42
//   [stage warmup]
//   steps = 200
//
// Keys before the first section header belong to the global section.
// Section headers repeat (one per stage, kept in file order). Values are
// the trimmed text after '='; there are no quoting or escape rules and no
// trailing comments. Duplicate keys within one section are an error.
struct ConfigSection {
    std::string name; // "" for the global section, else the text inside [ ]
    std::vector<std::pair<std::string, std::string>> entries; // file order

    bool has(const std::string& key) const;
    // Throwing getters; *_or variants fall back when the key is absent.
    std::string get_string(const std::string& key) const;
    std::string get_string_or(const std::string& key, const std::string& fallback) const;
    int64_t get_int(const std::string& key) const;
    int64_t get_int_or(const std::string& key, int64_t fallback) const;
    double get_double(const std::string& key) const;
    double get_double_or(const std::string& key, double fallback) const;
    bool get_bool(const std::string& key) const;
    bool get_bool_or(const std::string& key, bool fallback) const;

    std::vector<std::string> keys() const;
    // Throws if any key is outside `allowed` — catches config typos early.
    void check_allowed_keys(const std::vector<std::string>& allowed) const;

private:
    const std::string* find(const std::string& key) const;
    [[noreturn]] void fail(const std::string& key, const std::string& why) const;
};

struct ConfigFile {
    ConfigSection globals;
    std::vector<ConfigSection> sections;
};

ConfigFile parse_config(std::istream& is);
ConfigFile parse_config_text(const std::string& text);
ConfigFile parse_config_file(const std::string& path);

} // namespace tinygrpo
