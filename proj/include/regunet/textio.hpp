// Shortest round-trip double formatting and atomic text-file writes.
#pragma once

#include <charconv>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>

namespace regunet {

/// Shortest decimal representation that parses back to the same double.
inline std::string fmt_double(double v) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

/// Writes via a sibling temp file and renames it into place.
inline void atomic_write_text(const std::string& path, const std::string& content) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot open '" + tmp + "' for writing");
        out << content;
        out.flush();
        if (!out) throw std::runtime_error("write to '" + tmp + "' failed");
    }
    std::filesystem::rename(tmp, path);
}

} // namespace regunet
