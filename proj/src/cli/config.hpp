#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

namespace corners::cli {

// Anything wrong with the request itself (unreadable file, bad syntax, a key
// that does not parse, a missing or unknown key).  main turns these into
// exit code 2.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Flat key=value store with [section] headers; keys are addressed as
// "section.key".  Every getter records the key as consumed so a command can
// reject leftovers after it has pulled everything it understands.
class Config {
  public:
    Config() = default;

    // # starts a comment; blank lines are skipped; a key before any [section]
    // header or a duplicate key is an error.
    static Config from_file(const std::string& path);

    // "section.key=value" or, with a default section, "key=value".
    void apply_override(const std::string& assignment, const std::string& default_section);

    bool has(const std::string& key) const { return values_.count(key) != 0; }

    std::string get_string(const std::string& key, const std::string& fallback) const;
    std::string require_string(const std::string& key) const;
    long get_int(const std::string& key, long fallback) const;
    long require_int(const std::string& key) const;
    double get_double(const std::string& key, double fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;
    std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;

    // list values are separated by spaces or commas
    std::vector<double> get_double_list(const std::string& key, const std::vector<double>& fallback) const;
    std::vector<int> get_int_list(const std::string& key, const std::vector<int>& fallback) const;

    // keys never asked for by the command that ran; nonempty means the request
    // contained something no handler understands
    std::vector<std::string> unconsumed() const;

    // keys with the given section prefix, in sorted order, consumption
    // untouched (for the points_<level> family, where names are data)
    std::vector<std::string> keys_in_section(const std::string& section) const;

  private:
    void insert(const std::string& key, const std::string& value, const std::string& where);

    std::map<std::string, std::string> values_;
    mutable std::set<std::string> consumed_;
};

// Everything one process run needs: the subcommand, the merged key-value
// parameters, and the shared flags.
struct RunConfig {
    std::string command;
    Config params;
    std::uint64_t seed = 1;
    std::optional<double> tol;
    int threads = 1;
    std::string out;     // empty = stdout
    std::string format = "json";
};

}  // namespace corners::cli
