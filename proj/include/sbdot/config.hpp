#ifndef SBDOT_CONFIG_HPP
#define SBDOT_CONFIG_HPP

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "sbdot/core.hpp"

namespace sbdot {

/// Plain-text run configuration: one `key = value` pair per line, `#` starts
/// a comment, keys are dotted paths. See the README for the schema.
class Config {
  public:
    Config() = default;

    static Config parse(const std::string& text) {
        Config c;
        std::istringstream is(text);
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(is, line)) {
            ++lineno;
            const auto hash = line.find('#');
            if (hash != std::string::npos) line = line.substr(0, hash);
            line = trim(line);
            if (line.empty()) continue;
            const auto eq = line.find('=');
            if (eq == std::string::npos)
                throw ConfigError("config line " + std::to_string(lineno) +
                                  ": expected 'key = value'");
            const std::string key = trim(line.substr(0, eq));
            const std::string value = trim(line.substr(eq + 1));
            if (key.empty())
                throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
            c.kv_[key] = value;
        }
        return c;
    }

    static Config load(const std::string& path) {
        std::ifstream is(path);
        if (!is) throw IoError("cannot open config " + path);
        std::stringstream ss;
        ss << is.rdbuf();
        return parse(ss.str());
    }

    bool has(const std::string& key) const { return kv_.count(key) > 0; }

    void set(const std::string& key, const std::string& value) { kv_[key] = value; }

    std::string get_string(const std::string& key) const {
        auto it = kv_.find(key);
        if (it == kv_.end()) throw ConfigError("missing config key '" + key + "'");
        return it->second;
    }

    std::string get_string(const std::string& key, const std::string& fallback) const {
        auto it = kv_.find(key);
        return it == kv_.end() ? fallback : it->second;
    }

    double get_double(const std::string& key) const { return parse_double(key, get_string(key)); }
    double get_double(const std::string& key, double fallback) const {
        return has(key) ? get_double(key) : fallback;
    }

    std::uint64_t get_u64(const std::string& key) const {
        const std::string v = get_string(key);
        try {
            std::size_t pos = 0;
            const auto out = std::stoull(v, &pos);
            if (pos != v.size()) throw std::invalid_argument(v);
            return out;
        } catch (const std::exception&) {
            throw ConfigError("config key '" + key + "': '" + v + "' is not an unsigned integer");
        }
    }
    std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const {
        return has(key) ? get_u64(key) : fallback;
    }

    bool get_bool(const std::string& key, bool fallback) const {
        if (!has(key)) return fallback;
        const std::string v = get_string(key);
        if (v == "true" || v == "1" || v == "yes") return true;
        if (v == "false" || v == "0" || v == "no") return false;
        throw ConfigError("config key '" + key + "': '" + v + "' is not a boolean");
    }

    /// Canonical serialization: sorted keys, normalized spacing. The digest is
    /// computed from this form, so key order in the file does not matter.
    std::string canonical_text() const {
        std::string out;
        for (const auto& [k, v] : kv_) out += k + " = " + v + "\n";
        return out;
    }

    /// FNV-1a 64-bit digest of the canonical text, as 16 hex characters.
    std::string digest() const {
        const std::string text = canonical_text();
        std::uint64_t h = 0xcbf29ce484222325ULL;
        for (unsigned char ch : text) {
            h ^= ch;
            h *= 0x100000001b3ULL;
        }
        static const char* hex = "0123456789abcdef";
        std::string s(16, '0');
        for (int i = 15; i >= 0; --i) {
            s[static_cast<std::size_t>(i)] = hex[h & 0xf];
            h >>= 4;
        }
        return s;
    }

    const std::map<std::string, std::string>& entries() const { return kv_; }

  private:
    static std::string trim(const std::string& s) {
        const auto b = s.find_first_not_of(" \t\r");
        if (b == std::string::npos) return "";
        const auto e = s.find_last_not_of(" \t\r");
        return s.substr(b, e - b + 1);
    }

    double parse_double(const std::string& key, const std::string& v) const {
        try {
            std::size_t pos = 0;
            const double out = std::stod(v, &pos);
            if (pos != v.size()) throw std::invalid_argument(v);
            return out;
        } catch (const std::exception&) {
            throw ConfigError("config key '" + key + "': '" + v + "' is not a number");
        }
    }

    std::map<std::string, std::string> kv_;
};

/// Sidecar metadata written next to every artifact (digest, seed, method...).
inline void write_meta(const std::string& path,
                       const std::vector<std::pair<std::string, std::string>>& pairs) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot open " + path + " for writing");
    for (const auto& [k, v] : pairs) os << k << " = " << v << "\n";
}

inline std::map<std::string, std::string> read_meta(const std::string& path) {
    return Config::load(path).entries();
}

}  // namespace sbdot

#endif
