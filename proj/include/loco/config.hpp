#pragma once

// Flat "key = value" text with '#' comments and [section] headers. Used for
// experiment configs and world manifests.

#include <cstddef>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace loco {

class KeyValueFile {
public:
    // Throws ArgumentError with the offending line number on malformed input
    // or a repeated key within a section.
    static KeyValueFile parse(std::string_view text);

    bool has(const std::string& section, const std::string& key) const;
    const std::string& get(const std::string& section, const std::string& key) const;
    std::string get_or(const std::string& section, const std::string& key,
                       const std::string& fallback) const;

    double get_double(const std::string& section, const std::string& key) const;
    std::uint64_t get_u64(const std::string& section, const std::string& key) const;
    std::size_t get_size(const std::string& section, const std::string& key) const;
    std::vector<std::size_t> get_size_list(const std::string& section, const std::string& key) const;

    std::vector<std::string> sections() const;
    // Rejects keys or sections outside the allowed sets, naming the first.
    void require_known(const std::map<std::string, std::set<std::string>>& allowed) const;

    void set(const std::string& section, const std::string& key, const std::string& value);
    // Sections and keys in insertion order.
    std::string serialize() const;

private:
    struct Section {
        std::string name;
        std::vector<std::pair<std::string, std::string>> entries;
    };
    std::vector<Section> sections_;

    const Section* find(const std::string& name) const;
};

double parse_double(std::string_view text, std::string_view what);
std::uint64_t parse_u64(std::string_view text, std::string_view what);
std::vector<std::size_t> parse_size_list(std::string_view text, std::string_view what);

}  // namespace loco
