#pragma once
// Strict sectioned key/value config files:
//   [section.subsection]
//   key = value        # trailing comments allowed
// Values stay strings until a typed getter asks for them; unknown keys are
// rejected by require_known(), and a stable FNV-1a hash of the normalized
// contents is stamped into every output artifact.

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace milne {

struct ConfigError : std::runtime_error {
    ConfigError(const std::string& msg, int line, int col)
        : std::runtime_error(msg + " (line " + std::to_string(line) + ", column " +
                             std::to_string(col) + ")"),
          line(line),
          col(col) {}
    int line, col;
};

class Config {
  public:
    struct Entry {
        std::string value;
        int line = 0;
    };

    static Config parse_string(const std::string& text) {
        Config cfg;
        std::istringstream in(text);
        std::string raw, section;
        int lineno = 0;
        while (std::getline(in, raw)) {
            ++lineno;
            std::string line = strip_comment(raw);
            const auto [lo, hi] = trim_span(line);
            if (lo >= hi) continue;
            if (line[lo] == '[') {
                if (line[hi - 1] != ']')
                    throw ConfigError("unterminated section header", lineno,
                                      static_cast<int>(hi));
                section = line.substr(lo + 1, hi - lo - 2);
                if (section.empty())
                    throw ConfigError("empty section name", lineno,
                                      static_cast<int>(lo + 1));
                continue;
            }
            const auto eq = line.find('=', lo);
            if (eq == std::string::npos || eq >= hi)
                throw ConfigError("expected 'key = value'", lineno,
                                  static_cast<int>(lo + 1));
            std::string key = trimmed(line.substr(lo, eq - lo));
            std::string value = trimmed(line.substr(eq + 1, hi - eq - 1));
            if (key.empty())
                throw ConfigError("empty key", lineno, static_cast<int>(lo + 1));
            const std::string full = section.empty() ? key : section + "." + key;
            if (cfg.entries_.count(full))
                throw ConfigError("duplicate key '" + full + "'", lineno,
                                  static_cast<int>(lo + 1));
            cfg.entries_[full] = {value, lineno};
        }
        return cfg;
    }

    static Config parse_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw std::runtime_error("cannot open config file: " + path);
        std::ostringstream buf;
        buf << in.rdbuf();
        return parse_string(buf.str());
    }

    bool has(const std::string& key) const { return entries_.count(key) > 0; }

    std::string get_string(const std::string& key) const {
        return entry(key).value;
    }
    std::string get_string(const std::string& key, const std::string& dflt) const {
        return has(key) ? entries_.at(key).value : dflt;
    }

    double get_double(const std::string& key) const {
        return to_double(entry(key));
    }
    double get_double(const std::string& key, double dflt) const {
        return has(key) ? to_double(entries_.at(key)) : dflt;
    }

    long get_long(const std::string& key, long dflt) const {
        if (!has(key)) return dflt;
        const Entry& e = entries_.at(key);
        std::size_t pos = 0;
        long v = 0;
        try {
            v = std::stol(e.value, &pos);
        } catch (const std::exception&) {
            throw ConfigError("expected an integer for '" + key + "'", e.line, 1);
        }
        if (pos != e.value.size())
            throw ConfigError("expected an integer for '" + key + "'", e.line, 1);
        return v;
    }
    long get_long(const std::string& key) const {
        entry(key);  // require presence
        return get_long(key, 0);
    }

    bool get_bool(const std::string& key, bool dflt) const {
        if (!has(key)) return dflt;
        const Entry& e = entries_.at(key);
        if (e.value == "true" || e.value == "1") return true;
        if (e.value == "false" || e.value == "0") return false;
        throw ConfigError("expected true/false for '" + key + "'", e.line, 1);
    }

    std::vector<double> get_list(const std::string& key) const {
        const Entry& e = entry(key);
        std::vector<double> out;
        std::istringstream in(e.value);
        std::string tok;
        while (std::getline(in, tok, ',')) {
            tok = trimmed(tok);
            if (tok.empty())
                throw ConfigError("empty list element in '" + key + "'", e.line, 1);
            out.push_back(to_double(Entry{tok, e.line}));
        }
        if (out.empty())
            throw ConfigError("empty list for '" + key + "'", e.line, 1);
        return out;
    }

    // strict parsing contract: every present key must be in the allowed set
    void require_known(const std::vector<std::string>& allowed) const {
        for (const auto& [key, e] : entries_) {
            bool ok = false;
            for (const auto& a : allowed)
                if (key == a) { ok = true; break; }
            if (!ok) throw ConfigError("unknown key '" + key + "'", e.line, 1);
        }
    }

    // FNV-1a over sorted normalized "key=value" lines (map iteration is sorted)
    std::uint64_t hash() const {
        std::uint64_t h = 1469598103934665603ULL;
        auto mix = [&](const std::string& s) {
            for (unsigned char c : s) {
                h ^= c;
                h *= 1099511628211ULL;
            }
        };
        for (const auto& [key, e] : entries_) {
            mix(key);
            mix("=");
            mix(e.value);
            mix("\n");
        }
        return h;
    }

    std::string hash_hex() const {
        static const char* d = "0123456789abcdef";
        std::uint64_t h = hash();
        std::string s(16, '0');
        for (int i = 15; i >= 0; --i, h >>= 4) s[i] = d[h & 0xf];
        return s;
    }

    const std::map<std::string, Entry>& entries() const { return entries_; }

  private:
    std::map<std::string, Entry> entries_;

    const Entry& entry(const std::string& key) const {
        auto it = entries_.find(key);
        if (it == entries_.end())
            throw std::runtime_error("missing required config key '" + key + "'");
        return it->second;
    }

    static double to_double(const Entry& e) {
        std::size_t pos = 0;
        double v = 0.0;
        try {
            v = std::stod(e.value, &pos);
        } catch (const std::exception&) {
            throw ConfigError("expected a number, got '" + e.value + "'", e.line, 1);
        }
        if (pos != e.value.size())
            throw ConfigError("trailing characters after number '" + e.value + "'",
                              e.line, 1);
        return v;
    }

    static std::string strip_comment(const std::string& s) {
        const auto p = s.find('#');
        return p == std::string::npos ? s : s.substr(0, p);
    }
    static std::pair<std::size_t, std::size_t> trim_span(const std::string& s) {
        std::size_t lo = 0, hi = s.size();
        while (lo < hi && std::isspace(static_cast<unsigned char>(s[lo]))) ++lo;
        while (hi > lo && std::isspace(static_cast<unsigned char>(s[hi - 1]))) --hi;
        return {lo, hi};
    }
    static std::string trimmed(const std::string& s) {
        const auto [lo, hi] = trim_span(s);
        return s.substr(lo, hi - lo);
    }
};

}  // namespace milne
