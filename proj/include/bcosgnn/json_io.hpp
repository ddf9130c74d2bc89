#pragma once

// JSON emission with a fixed float format (%.17g) and insertion-ordered keys.
// Parsing goes through nlohmann::json directly.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "bcosgnn/error.hpp"

namespace bcosgnn {

using ojson = nlohmann::ordered_json;

namespace detail {

inline void write_double(std::string& out, double v) {
    if (!std::isfinite(v)) {
        out += "null";
        return;
    }
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    out += buf;
}

inline void write_json(std::string& out, const ojson& j, int indent, int level) {
    auto newline = [&](int lvl) {
        if (indent < 0) return;
        out += '\n';
        out.append(static_cast<std::size_t>(indent * lvl), ' ');
    };
    switch (j.type()) {
        case ojson::value_t::object: {
            if (j.empty()) {
                out += "{}";
                return;
            }
            out += '{';
            bool first = true;
            for (auto it = j.begin(); it != j.end(); ++it) {
                if (!first) out += ',';
                first = false;
                newline(level + 1);
                out += ojson(it.key()).dump();
                out += indent < 0 ? ":" : ": ";
                write_json(out, it.value(), indent, level + 1);
            }
            newline(level);
            out += '}';
            return;
        }
        case ojson::value_t::array: {
            if (j.empty()) {
                out += "[]";
                return;
            }
            // Arrays of scalars stay on one line even when indenting.
            const bool flat = std::all_of(j.begin(), j.end(), [](const ojson& e) { return e.is_primitive(); });
            out += '[';
            bool first = true;
            for (const auto& e : j) {
                if (!first) out += indent >= 0 && flat ? ", " : ",";
                first = false;
                if (!flat) newline(level + 1);
                write_json(out, e, indent, level + 1);
            }
            if (!flat) newline(level);
            out += ']';
            return;
        }
        case ojson::value_t::number_float:
            write_double(out, j.get<double>());
            return;
        default:
            out += j.dump();
    }
}

}  // namespace detail

/// Serialize with every float printed at 17 significant digits. indent < 0 means compact.
inline std::string to_json_text(const ojson& j, int indent = -1) {
    std::string out;
    detail::write_json(out, j, indent, 0);
    return out;
}

inline void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path + " for writing");
    f << text;
    if (!f) throw std::runtime_error("write failed: " + path);
}

inline std::string read_text_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw FormatError("cannot open " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

inline nlohmann::json parse_json_file(const std::string& path) {
    try {
        return nlohmann::json::parse(read_text_file(path));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path + ": " + e.what());
    }
}

}  // namespace bcosgnn
