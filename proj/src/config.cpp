#include "loco/config.hpp"

#include <cerrno>
#include <cmath>
#include <cstdlib>

#include "loco/errors.hpp"

namespace loco {

namespace {

std::string_view trim(std::string_view s) {
    const auto is_space = [](char c) { return c == ' ' || c == '\t' || c == '\r'; };
    while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
    while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
    return s;
}

bool valid_name(std::string_view s) {
    if (s.empty()) return false;
    for (char c : s) {
        const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') ||
                        c == '_' || c == '.' || c == '-';
        if (!ok) return false;
    }
    return true;
}

}  // namespace

KeyValueFile KeyValueFile::parse(std::string_view text) {
    KeyValueFile file;
    file.sections_.push_back({"", {}});
    std::size_t line_no = 0;
    while (!text.empty()) {
        ++line_no;
        const auto nl = text.find('\n');
        std::string_view line = text.substr(0, nl);
        text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);

        const auto hash = line.find('#');
        if (hash != std::string_view::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;

        const std::string where = "line " + std::to_string(line_no) + ": ";
        if (line.front() == '[') {
            if (line.back() != ']') throw ArgumentError(where + "unterminated section header");
            const auto name = trim(line.substr(1, line.size() - 2));
            if (!valid_name(name)) throw ArgumentError(where + "bad section name '" + std::string(name) + "'");
            if (file.find(std::string(name)) != nullptr)
                throw ArgumentError(where + "section [" + std::string(name) + "] repeated");
            file.sections_.push_back({std::string(name), {}});
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) throw ArgumentError(where + "expected 'key = value'");
        const auto key = trim(line.substr(0, eq));
        const auto value = trim(line.substr(eq + 1));
        if (!valid_name(key)) throw ArgumentError(where + "bad key '" + std::string(key) + "'");
        auto& section = file.sections_.back();
        for (const auto& [k, v] : section.entries) {
            if (k == key) throw ArgumentError(where + "key '" + std::string(key) + "' repeated");
        }
        section.entries.emplace_back(std::string(key), std::string(value));
    }
    return file;
}

const KeyValueFile::Section* KeyValueFile::find(const std::string& name) const {
    for (const auto& s : sections_)
        if (s.name == name) return &s;
    return nullptr;
}

bool KeyValueFile::has(const std::string& section, const std::string& key) const {
    const Section* s = find(section);
    if (s == nullptr) return false;
    for (const auto& [k, v] : s->entries)
        if (k == key) return true;
    return false;
}

const std::string& KeyValueFile::get(const std::string& section, const std::string& key) const {
    const Section* s = find(section);
    if (s != nullptr) {
        for (const auto& [k, v] : s->entries)
            if (k == key) return v;
    }
    throw ArgumentError("missing key '" + key + "' in section [" + section + "]");
}

std::string KeyValueFile::get_or(const std::string& section, const std::string& key,
                                 const std::string& fallback) const {
    return has(section, key) ? get(section, key) : fallback;
}

double KeyValueFile::get_double(const std::string& section, const std::string& key) const {
    return parse_double(get(section, key), "[" + section + "] " + key);
}

std::uint64_t KeyValueFile::get_u64(const std::string& section, const std::string& key) const {
    return parse_u64(get(section, key), "[" + section + "] " + key);
}

std::size_t KeyValueFile::get_size(const std::string& section, const std::string& key) const {
    return static_cast<std::size_t>(get_u64(section, key));
}

std::vector<std::size_t> KeyValueFile::get_size_list(const std::string& section,
                                                     const std::string& key) const {
    return parse_size_list(get(section, key), "[" + section + "] " + key);
}

std::vector<std::string> KeyValueFile::sections() const {
    std::vector<std::string> names;
    for (const auto& s : sections_)
        if (!s.name.empty() || !s.entries.empty()) names.push_back(s.name);
    return names;
}

void KeyValueFile::require_known(const std::map<std::string, std::set<std::string>>& allowed) const {
    for (const auto& s : sections_) {
        if (s.name.empty() && s.entries.empty()) continue;
        const auto it = allowed.find(s.name);
        if (it == allowed.end()) {
            throw ArgumentError(s.name.empty() ? "keys outside any section are not allowed"
                                               : "unknown section [" + s.name + "]");
        }
        for (const auto& [k, v] : s.entries) {
            if (!it->second.count(k)) throw ArgumentError("unknown key '" + k + "' in section [" + s.name + "]");
        }
    }
}

void KeyValueFile::set(const std::string& section, const std::string& key, const std::string& value) {
    Section* target = nullptr;
    for (auto& s : sections_)
        if (s.name == section) target = &s;
    if (target == nullptr) {
        sections_.push_back({section, {}});
        target = &sections_.back();
    }
    for (auto& [k, v] : target->entries) {
        if (k == key) {
            v = value;
            return;
        }
    }
    target->entries.emplace_back(key, value);
}

std::string KeyValueFile::serialize() const {
    std::string out;
    for (const auto& s : sections_) {
        if (s.entries.empty() && s.name.empty()) continue;
        if (!s.name.empty()) {
            if (!out.empty()) out += '\n';
            out += "[" + s.name + "]\n";
        }
        for (const auto& [k, v] : s.entries) out += k + " = " + v + "\n";
    }
    return out;
}

double parse_double(std::string_view text, std::string_view what) {
    const std::string s(trim(text));
    if (s.empty()) throw ArgumentError(std::string(what) + ": empty value");
    char* end = nullptr;
    errno = 0;
    const double v = std::strtod(s.c_str(), &end);
    if (end != s.c_str() + s.size() || errno == ERANGE || !std::isfinite(v)) {
        throw ArgumentError(std::string(what) + ": '" + s + "' is not a finite number");
    }
    return v;
}

std::uint64_t parse_u64(std::string_view text, std::string_view what) {
    const std::string s(trim(text));
    if (s.empty() || s.front() == '-' || s.front() == '+') {
        throw ArgumentError(std::string(what) + ": '" + s + "' is not a non-negative integer");
    }
    char* end = nullptr;
    errno = 0;
    const unsigned long long v = std::strtoull(s.c_str(), &end, 10);
    if (end != s.c_str() + s.size() || errno == ERANGE) {
        throw ArgumentError(std::string(what) + ": '" + s + "' is not a non-negative integer");
    }
    return static_cast<std::uint64_t>(v);
}

std::vector<std::size_t> parse_size_list(std::string_view text, std::string_view what) {
    std::vector<std::size_t> out;
    text = trim(text);
    if (text.empty()) return out;
    while (true) {
        const auto comma = text.find(',');
        out.push_back(static_cast<std::size_t>(parse_u64(text.substr(0, comma), what)));
        if (comma == std::string_view::npos) break;
        text = text.substr(comma + 1);
    }
    return out;
}

}  // namespace loco
