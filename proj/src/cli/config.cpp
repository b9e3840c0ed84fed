#include "config.hpp"

#include <cctype>
#include <cstdlib>
#include <fstream>

namespace corners::cli {

namespace {

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

bool valid_name(const std::string& s) {
    if (s.empty()) return false;
    for (char c : s)
        if (!std::isalnum(static_cast<unsigned char>(c)) && c != '_') return false;
    return true;
}

double parse_double(const std::string& key, const std::string& raw) {
    const std::string v = trim(raw);
    if (v.empty()) throw ConfigError("empty value for " + key);
    char* end = nullptr;
    double x = std::strtod(v.c_str(), &end);
    if (end != v.c_str() + v.size())
        throw ConfigError("cannot parse '" + v + "' as a number for " + key);
    return x;
}

long parse_int(const std::string& key, const std::string& raw) {
    const std::string v = trim(raw);
    if (v.empty()) throw ConfigError("empty value for " + key);
    char* end = nullptr;
    long x = std::strtol(v.c_str(), &end, 10);
    if (end != v.c_str() + v.size())
        throw ConfigError("cannot parse '" + v + "' as an integer for " + key);
    return x;
}

std::vector<std::string> split_list(const std::string& raw) {
    std::vector<std::string> items;
    std::string cur;
    for (char c : raw) {
        if (c == ' ' || c == '\t' || c == ',') {
            if (!cur.empty()) items.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    if (!cur.empty()) items.push_back(cur);
    return items;
}

}  // namespace

void Config::insert(const std::string& key, const std::string& value, const std::string& where) {
    if (!values_.emplace(key, value).second)
        throw ConfigError("duplicate key " + key + " (" + where + ")");
}

Config Config::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);

    Config cfg;
    std::string line, section;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string where = path + ":" + std::to_string(lineno);
        size_t hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;

        if (line.front() == '[') {
            if (line.back() != ']') throw ConfigError("unterminated section header (" + where + ")");
            section = trim(line.substr(1, line.size() - 2));
            if (!valid_name(section)) throw ConfigError("bad section name (" + where + ")");
            continue;
        }

        size_t eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError("expected key = value (" + where + ")");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (!valid_name(key)) throw ConfigError("bad key name '" + key + "' (" + where + ")");
        if (section.empty()) throw ConfigError("key before any [section] header (" + where + ")");
        cfg.insert(section + "." + key, value, where);
    }
    return cfg;
}

void Config::apply_override(const std::string& assignment, const std::string& default_section) {
    size_t eq = assignment.find('=');
    if (eq == std::string::npos)
        throw ConfigError("expected key=value, got '" + assignment + "'");
    std::string key = trim(assignment.substr(0, eq));
    const std::string value = trim(assignment.substr(eq + 1));

    size_t dot = key.find('.');
    std::string section, name;
    if (dot == std::string::npos) {
        section = default_section;
        name = key;
    } else {
        section = key.substr(0, dot);
        name = key.substr(dot + 1);
    }
    if (!valid_name(section) || !valid_name(name))
        throw ConfigError("bad key '" + key + "' in command-line override");
    values_[section + "." + name] = value;  // overrides beat the config file
}

std::string Config::get_string(const std::string& key, const std::string& fallback) const {
    consumed_.insert(key);
    auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
}

std::string Config::require_string(const std::string& key) const {
    consumed_.insert(key);
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("missing required key " + key);
    return it->second;
}

long Config::get_int(const std::string& key, long fallback) const {
    consumed_.insert(key);
    auto it = values_.find(key);
    return it == values_.end() ? fallback : parse_int(key, it->second);
}

long Config::require_int(const std::string& key) const {
    return parse_int(key, require_string(key));
}

double Config::get_double(const std::string& key, double fallback) const {
    consumed_.insert(key);
    auto it = values_.find(key);
    return it == values_.end() ? fallback : parse_double(key, it->second);
}

bool Config::get_bool(const std::string& key, bool fallback) const {
    consumed_.insert(key);
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    const std::string v = trim(it->second);
    if (v == "true" || v == "yes" || v == "1") return true;
    if (v == "false" || v == "no" || v == "0") return false;
    throw ConfigError("cannot parse '" + v + "' as a boolean for " + key);
}

std::uint64_t Config::get_u64(const std::string& key, std::uint64_t fallback) const {
    consumed_.insert(key);
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    const std::string v = trim(it->second);
    char* end = nullptr;
    unsigned long long x = std::strtoull(v.c_str(), &end, 10);
    if (v.empty() || end != v.c_str() + v.size())
        throw ConfigError("cannot parse '" + v + "' as an unsigned integer for " + key);
    return x;
}

std::vector<double> Config::get_double_list(const std::string& key,
                                            const std::vector<double>& fallback) const {
    consumed_.insert(key);
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    std::vector<double> out;
    for (const std::string& item : split_list(it->second)) out.push_back(parse_double(key, item));
    if (out.empty()) throw ConfigError("empty list for " + key);
    return out;
}

std::vector<int> Config::get_int_list(const std::string& key,
                                      const std::vector<int>& fallback) const {
    consumed_.insert(key);
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    std::vector<int> out;
    for (const std::string& item : split_list(it->second))
        out.push_back(static_cast<int>(parse_int(key, item)));
    if (out.empty()) throw ConfigError("empty list for " + key);
    return out;
}

std::vector<std::string> Config::unconsumed() const {
    std::vector<std::string> out;
    for (const auto& [key, value] : values_)
        if (consumed_.count(key) == 0) out.push_back(key);
    return out;
}

std::vector<std::string> Config::keys_in_section(const std::string& section) const {
    std::vector<std::string> out;
    const std::string prefix = section + ".";
    for (const auto& [key, value] : values_)
        if (key.rfind(prefix, 0) == 0) out.push_back(key);
    return out;
}

}  // namespace corners::cli
