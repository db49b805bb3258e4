#pragma once
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace cotcap::toml {

// Minimal TOML subset: tables (possibly dotted), string / integer / float /
// boolean values, basic and multiline-basic and literal strings, comments.
// Enough for backends.toml and template override files; not a general parser.

using Value = std::variant<std::string, std::int64_t, double, bool>;
using Table = std::map<std::string, Value>;

struct Document {
    // Keys outside any [table] header.
    Table root;
    // Table name (dotted path joined with '.') -> key/value pairs.
    std::map<std::string, Table> tables;

    bool has(const std::string& table, const std::string& key) const;
    std::string get_string(const std::string& table, const std::string& key,
                           const std::string& fallback = "") const;
    std::int64_t get_int(const std::string& table, const std::string& key,
                         std::int64_t fallback = 0) const;
    double get_double(const std::string& table, const std::string& key,
                      double fallback = 0.0) const;
    bool get_bool(const std::string& table, const std::string& key,
                  bool fallback = false) const;
};

struct ParseError : std::runtime_error {
    explicit ParseError(const std::string& msg) : std::runtime_error(msg) {}
};

Document parse(const std::string& text);
Document parse_file(const std::string& path);

}  // namespace cotcap::toml
