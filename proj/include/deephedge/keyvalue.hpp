#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace dh {

/// `key = value` text file. '#' starts a comment, `[section]` prefixes the
/// following keys with "section.". Every lookup error names file and line.
class KeyValueFile {
public:
    struct Entry {
        std::string value;
        int line = 0;
    };

    static KeyValueFile parse(std::string_view text, std::string source = "<string>");
    static KeyValueFile load(const std::filesystem::path& path);

    [[nodiscard]] bool has(const std::string& key) const;
    [[nodiscard]] const std::string& source() const { return source_; }

    double get_double(const std::string& key, double fallback) const;
    long long get_int(const std::string& key, long long fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;
    std::string get_string(const std::string& key, const std::string& fallback) const;
    std::vector<double> get_doubles(const std::string& key, std::size_t expected_count) const;
    std::optional<std::vector<double>> find_doubles(const std::string& key) const;

    /// Throws ConfigError naming the first key never consumed by a getter.
    void reject_unused() const;

private:
    const Entry* find(const std::string& key) const;
    [[noreturn]] void fail(const std::string& key, const std::string& what) const;

    std::string source_;
    std::map<std::string, Entry> entries_;
    mutable std::set<std::string> used_;
};

}  // namespace dh
