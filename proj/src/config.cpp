#include "tinygrpo/config.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace tinygrpo {
namespace {

std::string trim(const std::string& s) {
    size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

std::string section_label(const std::string& name) {
    return name.empty() ? "global section" : "[" + name + "]";
}

} // namespace

const std::string* ConfigSection::find(const std::string& key) const {
    for (const auto& [k, v] : entries)
        if (k == key) return &v;
    return nullptr;
}

void ConfigSection::fail(const std::string& key, const std::string& why) const {
    throw std::runtime_error("config key '" + key + "' in " + section_label(name) +
                             ": " + why);
}

bool ConfigSection::has(const std::string& key) const { return find(key) != nullptr; }

std::string ConfigSection::get_string(const std::string& key) const {
    const std::string* v = find(key);
    if (!v) fail(key, "missing");
    return *v;
}

std::string ConfigSection::get_string_or(const std::string& key,
                                         const std::string& fallback) const {
    const std::string* v = find(key);
    return v ? *v : fallback;
}

int64_t ConfigSection::get_int(const std::string& key) const {
    const std::string& v = get_string(key);
    try {
        size_t used = 0;
        int64_t parsed = std::stoll(v, &used);
        if (used != v.size()) throw std::invalid_argument("trailing text");
        return parsed;
    } catch (const std::exception&) {
        fail(key, "not an integer: '" + v + "'");
    }
}

int64_t ConfigSection::get_int_or(const std::string& key, int64_t fallback) const {
    return has(key) ? get_int(key) : fallback;
}

double ConfigSection::get_double(const std::string& key) const {
    const std::string& v = get_string(key);
    try {
        size_t used = 0;
        double parsed = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument("trailing text");
        return parsed;
    } catch (const std::exception&) {
        fail(key, "not a number: '" + v + "'");
    }
}

double ConfigSection::get_double_or(const std::string& key, double fallback) const {
    return has(key) ? get_double(key) : fallback;
}

bool ConfigSection::get_bool(const std::string& key) const {
    std::string v = get_string(key);
    std::transform(v.begin(), v.end(), v.begin(),
                   [](unsigned char c) { return std::tolower(c); });
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    fail(key, "not a boolean: '" + v + "'");
}

bool ConfigSection::get_bool_or(const std::string& key, bool fallback) const {
    return has(key) ? get_bool(key) : fallback;
}

std::vector<std::string> ConfigSection::keys() const {
    std::vector<std::string> out;
    out.reserve(entries.size());
    for (const auto& [k, v] : entries) out.push_back(k);
    return out;
}

void ConfigSection::check_allowed_keys(const std::vector<std::string>& allowed) const {
    for (const auto& [k, v] : entries)
        if (std::find(allowed.begin(), allowed.end(), k) == allowed.end())
            fail(k, "unknown key");
}

ConfigFile parse_config(std::istream& is) {
    ConfigFile file;
    ConfigSection* current = &file.globals;
    std::string raw;
    int line_no = 0;
    while (std::getline(is, raw)) {
        ++line_no;
        std::string line = trim(raw);
        if (line.empty() || line[0] == '#') continue;
        if (line.front() == '[') {
            if (line.back() != ']')
                throw std::runtime_error("config line " + std::to_string(line_no) +
                                         ": unterminated section header");
            std::string name = trim(line.substr(1, line.size() - 2));
            if (name.empty())
                throw std::runtime_error("config line " + std::to_string(line_no) +
                                         ": empty section name");
            file.sections.push_back(ConfigSection{name, {}});
            current = &file.sections.back();
            continue;
        }
        size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw std::runtime_error("config line " + std::to_string(line_no) +
                                     ": expected 'key = value'");
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        if (key.empty())
            throw std::runtime_error("config line " + std::to_string(line_no) +
                                     ": empty key");
        if (current->has(key))
            throw std::runtime_error("config line " + std::to_string(line_no) +
                                     ": duplicate key '" + key + "' in " +
                                     section_label(current->name));
        current->entries.emplace_back(std::move(key), std::move(value));
    }
    return file;
}

ConfigFile parse_config_text(const std::string& text) {
    std::istringstream is(text);
    return parse_config(is);
}

ConfigFile parse_config_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open config: " + path);
    return parse_config(is);
}

} // namespace tinygrpo
