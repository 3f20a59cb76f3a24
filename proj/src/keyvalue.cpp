#include "deephedge/keyvalue.hpp"

#include "deephedge/errors.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

namespace dh {

namespace {

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

bool parse_double(const std::string& token, double& out) {
    const char* first = token.data();
    const char* last = first + token.size();
    auto [ptr, ec] = std::from_chars(first, last, out);
    return ec == std::errc() && ptr == last;
}

}  // namespace

KeyValueFile KeyValueFile::parse(std::string_view text, std::string source) {
    KeyValueFile kv;
    kv.source_ = std::move(source);
    std::string section;
    std::istringstream in{std::string(text)};
    std::string raw;
    int line_no = 0;
    while (std::getline(in, raw)) {
        ++line_no;
        const auto hash = raw.find('#');
        const std::string line = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']')
                throw ConfigError(kv.source_ + ":" + std::to_string(line_no) + ": malformed section header");
            section = trim(std::string_view(line).substr(1, line.size() - 2));
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(kv.source_ + ":" + std::to_string(line_no) + ": expected 'key = value'");
        std::string key = trim(std::string_view(line).substr(0, eq));
        if (key.empty()) throw ConfigError(kv.source_ + ":" + std::to_string(line_no) + ": empty key");
        if (!section.empty()) key = section + "." + key;
        if (kv.entries_.count(key))
            throw ConfigError(kv.source_ + ":" + std::to_string(line_no) + ": duplicate key '" + key + "'");
        kv.entries_[key] = Entry{trim(std::string_view(line).substr(eq + 1)), line_no};
    }
    return kv;
}

KeyValueFile KeyValueFile::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path.string());
    std::stringstream buffer;
    buffer << in.rdbuf();
    return parse(buffer.str(), path.string());
}

bool KeyValueFile::has(const std::string& key) const { return entries_.count(key) != 0; }

const KeyValueFile::Entry* KeyValueFile::find(const std::string& key) const {
    auto it = entries_.find(key);
    if (it == entries_.end()) return nullptr;
    used_.insert(key);
    return &it->second;
}

void KeyValueFile::fail(const std::string& key, const std::string& what) const {
    const auto it = entries_.find(key);
    const std::string where = it == entries_.end() ? source_ : source_ + ":" + std::to_string(it->second.line);
    throw ConfigError(where + ": key '" + key + "': " + what);
}

double KeyValueFile::get_double(const std::string& key, double fallback) const {
    const Entry* e = find(key);
    if (!e) return fallback;
    double v = 0.0;
    if (!parse_double(e->value, v)) fail(key, "expected a number, got '" + e->value + "'");
    return v;
}

long long KeyValueFile::get_int(const std::string& key, long long fallback) const {
    const Entry* e = find(key);
    if (!e) return fallback;
    long long v = 0;
    auto [ptr, ec] = std::from_chars(e->value.data(), e->value.data() + e->value.size(), v);
    if (ec != std::errc() || ptr != e->value.data() + e->value.size()) fail(key, "expected an integer, got '" + e->value + "'");
    return v;
}

bool KeyValueFile::get_bool(const std::string& key, bool fallback) const {
    const Entry* e = find(key);
    if (!e) return fallback;
    if (e->value == "true" || e->value == "1" || e->value == "yes") return true;
    if (e->value == "false" || e->value == "0" || e->value == "no") return false;
    fail(key, "expected true/false, got '" + e->value + "'");
}

std::string KeyValueFile::get_string(const std::string& key, const std::string& fallback) const {
    const Entry* e = find(key);
    return e ? e->value : fallback;
}

std::optional<std::vector<double>> KeyValueFile::find_doubles(const std::string& key) const {
    const Entry* e = find(key);
    if (!e) return std::nullopt;
    std::vector<double> out;
    std::string token;
    std::istringstream in(e->value);
    while (in >> token) {
        if (!token.empty() && token.back() == ',') token.pop_back();
        if (token.empty()) continue;
        double v = 0.0;
        if (!parse_double(token, v)) fail(key, "expected a list of numbers, bad token '" + token + "'");
        out.push_back(v);
    }
    return out;
}

std::vector<double> KeyValueFile::get_doubles(const std::string& key, std::size_t expected_count) const {
    auto values = find_doubles(key);
    if (!values) fail(key, "missing");
    if (expected_count != 0 && values->size() != expected_count)
        fail(key, "expected " + std::to_string(expected_count) + " values, got " + std::to_string(values->size()));
    return *values;
}

void KeyValueFile::reject_unused() const {
    for (const auto& [key, entry] : entries_)
        if (!used_.count(key))
            throw ConfigError(source_ + ":" + std::to_string(entry.line) + ": unknown key '" + key + "'");
}

}  // namespace dh
