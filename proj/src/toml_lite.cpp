#include "cotcap/toml_lite.hpp"

#include <cctype>
#include <fstream>
#include <sstream>

namespace cotcap::toml {

namespace {

struct Cursor {
    const std::string& text;
    std::size_t pos = 0;
    int line = 1;

    bool eof() const { return pos >= text.size(); }
    char peek() const { return text[pos]; }
    char next() {
        char c = text[pos++];
        if (c == '\n') ++line;
        return c;
    }
    [[noreturn]] void fail(const std::string& msg) const {
        throw ParseError("toml: line " + std::to_string(line) + ": " + msg);
    }
};

void skip_ws(Cursor& c) {
    while (!c.eof() && (c.peek() == ' ' || c.peek() == '\t')) c.next();
}

void skip_to_eol(Cursor& c) {
    while (!c.eof() && c.peek() != '\n') c.next();
    if (!c.eof()) c.next();
}

void expect_line_end(Cursor& c) {
    skip_ws(c);
    if (c.eof()) return;
    if (c.peek() == '#') { skip_to_eol(c); return; }
    if (c.peek() == '\n' || c.peek() == '\r') { skip_to_eol(c); return; }
    c.fail("trailing characters after value");
}

std::string parse_basic_string(Cursor& c, bool multiline) {
    std::string out;
    if (multiline && !c.eof() && c.peek() == '\n') c.next();  // trim first newline
    while (true) {
        if (c.eof()) c.fail("unterminated string");
        char ch = c.next();
        if (ch == '"') {
            if (!multiline) return out;
            if (!c.eof() && c.peek() == '"') {
                c.next();
                if (!c.eof() && c.peek() == '"') { c.next(); return out; }
                out += "\"\"";
                continue;
            }
            out += '"';
            continue;
        }
        if (ch == '\\') {
            if (c.eof()) c.fail("dangling escape");
            char e = c.next();
            switch (e) {
                case 'n': out += '\n'; break;
                case 't': out += '\t'; break;
                case 'r': out += '\r'; break;
                case '"': out += '"'; break;
                case '\\': out += '\\'; break;
                case '\n':
                    // line-ending backslash in multiline strings eats whitespace
                    if (!multiline) c.fail("invalid escape");
                    while (!c.eof() && std::isspace(static_cast<unsigned char>(c.peek()))) c.next();
                    break;
                default: c.fail(std::string("unsupported escape \\") + e);
            }
            continue;
        }
        if (ch == '\n' && !multiline) c.fail("newline in basic string");
        out += ch;
    }
}

std::string parse_literal_string(Cursor& c) {
    std::string out;
    while (true) {
        if (c.eof()) c.fail("unterminated literal string");
        char ch = c.next();
        if (ch == '\'') return out;
        if (ch == '\n') c.fail("newline in literal string");
        out += ch;
    }
}

Value parse_scalar(Cursor& c) {
    std::string raw;
    while (!c.eof() && c.peek() != '\n' && c.peek() != '#') raw += c.next();
    while (!raw.empty() && (raw.back() == ' ' || raw.back() == '\t' || raw.back() == '\r'))
        raw.pop_back();
    if (raw == "true") return true;
    if (raw == "false") return false;
    if (raw.empty()) c.fail("empty value");
    bool floaty = raw.find_first_of(".eE") != std::string::npos &&
                  raw.find_first_not_of("+-0123456789.eE_") == std::string::npos;
    try {
        if (!floaty) {
            std::size_t used = 0;
            std::int64_t v = std::stoll(raw, &used);
            if (used == raw.size()) return v;
        }
        std::size_t used = 0;
        double d = std::stod(raw, &used);
        if (used == raw.size()) return d;
    } catch (...) {
    }
    c.fail("unparsable value: " + raw);
}

std::string parse_key(Cursor& c) {
    skip_ws(c);
    std::string key;
    if (!c.eof() && (c.peek() == '"' || c.peek() == '\'')) {
        char q = c.next();
        key = (q == '"') ? parse_basic_string(c, false) : parse_literal_string(c);
    } else {
        while (!c.eof()) {
            char ch = c.peek();
            if (std::isalnum(static_cast<unsigned char>(ch)) || ch == '_' || ch == '-' || ch == '.') {
                key += c.next();
            } else {
                break;
            }
        }
    }
    if (key.empty()) c.fail("expected key");
    return key;
}

}  // namespace

bool Document::has(const std::string& table, const std::string& key) const {
    if (table.empty()) return root.count(key) > 0;
    auto it = tables.find(table);
    return it != tables.end() && it->second.count(key) > 0;
}

namespace {
const Value* lookup(const Document& doc, const std::string& table, const std::string& key) {
    const Table* t = nullptr;
    if (table.empty()) {
        t = &doc.root;
    } else {
        auto it = doc.tables.find(table);
        if (it == doc.tables.end()) return nullptr;
        t = &it->second;
    }
    auto kit = t->find(key);
    return kit == t->end() ? nullptr : &kit->second;
}
}  // namespace

std::string Document::get_string(const std::string& table, const std::string& key,
                                 const std::string& fallback) const {
    const Value* v = lookup(*this, table, key);
    if (!v) return fallback;
    if (auto* s = std::get_if<std::string>(v)) return *s;
    return fallback;
}

std::int64_t Document::get_int(const std::string& table, const std::string& key,
                               std::int64_t fallback) const {
    const Value* v = lookup(*this, table, key);
    if (!v) return fallback;
    if (auto* i = std::get_if<std::int64_t>(v)) return *i;
    if (auto* d = std::get_if<double>(v)) return static_cast<std::int64_t>(*d);
    return fallback;
}

double Document::get_double(const std::string& table, const std::string& key,
                            double fallback) const {
    const Value* v = lookup(*this, table, key);
    if (!v) return fallback;
    if (auto* d = std::get_if<double>(v)) return *d;
    if (auto* i = std::get_if<std::int64_t>(v)) return static_cast<double>(*i);
    return fallback;
}

bool Document::get_bool(const std::string& table, const std::string& key, bool fallback) const {
    const Value* v = lookup(*this, table, key);
    if (!v) return fallback;
    if (auto* b = std::get_if<bool>(v)) return *b;
    return fallback;
}

Document parse(const std::string& text) {
    Document doc;
    Cursor c{text};
    std::string current_table;
    while (!c.eof()) {
        skip_ws(c);
        if (c.eof()) break;
        char ch = c.peek();
        if (ch == '\n' || ch == '\r') { skip_to_eol(c); continue; }
        if (ch == '#') { skip_to_eol(c); continue; }
        if (ch == '[') {
            c.next();
            std::string name = parse_key(c);
            skip_ws(c);
            if (c.eof() || c.next() != ']') c.fail("expected ']'");
            expect_line_end(c);
            current_table = name;
            doc.tables[current_table];  // register even if empty
            continue;
        }
        std::string key = parse_key(c);
        skip_ws(c);
        if (c.eof() || c.next() != '=') c.fail("expected '=' after key " + key);
        skip_ws(c);
        if (c.eof()) c.fail("missing value for key " + key);
        Value val;
        if (c.peek() == '"') {
            c.next();
            bool multiline = false;
            if (!c.eof() && c.peek() == '"') {
                c.next();
                if (!c.eof() && c.peek() == '"') { c.next(); multiline = true; }
                else { val = std::string(); goto store; }  // empty ""
            }
            val = parse_basic_string(c, multiline);
        } else if (c.peek() == '\'') {
            c.next();
            val = parse_literal_string(c);
        } else {
            val = parse_scalar(c);
        }
    store:
        expect_line_end(c);
        Table& t = current_table.empty() ? doc.root : doc.tables[current_table];
        t[key] = std::move(val);
    }
    return doc;
}

Document parse_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("toml: cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse(ss.str());
}

}  // namespace cotcap::toml
