#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>
#include <unistd.h>

#include "utd/error.hpp"

namespace utd {

using json = nlohmann::json;

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        fail(ErrorKind::Io, "cannot open for reading", path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

/// Writes through a sibling temp file and renames, so readers never observe
/// a half-written artifact.
inline void write_file_atomic(const std::filesystem::path& path, std::string_view content) {
    if (path.has_parent_path())
        std::filesystem::create_directories(path.parent_path());
    // Unique per writer: concurrent writers of the same file each rename a
    // complete copy.
    static std::atomic<std::uint64_t> counter{0};
    auto tmp = path;
    tmp += ".tmp" + std::to_string(::getpid()) + "." + std::to_string(counter.fetch_add(1));
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out)
            fail(ErrorKind::Io, "cannot open for writing", tmp.string());
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        if (!out)
            fail(ErrorKind::Io, "short write", tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec)
        fail(ErrorKind::Io, "rename failed: " + ec.message(), path.string());
}

inline json parse_json(std::string_view text, const std::string& origin) {
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        fail(ErrorKind::Parse, e.what(), origin);
    }
}

inline json read_json(const std::filesystem::path& path) {
    return parse_json(read_file(path), path.string());
}

// nlohmann::json objects are std::map backed, so dump() already emits keys in
// lexicographic order. Two-space indent plus trailing newline for diffability.
inline std::string canonical_dump(const json& doc) { return doc.dump(2) + "\n"; }

inline void write_json(const std::filesystem::path& path, const json& doc) {
    write_file_atomic(path, canonical_dump(doc));
}

// Typed field access that reports schema problems with the json path.
template <class T>
T field(const json& obj, const char* name, const std::string& where) {
    auto it = obj.find(name);
    if (it == obj.end())
        fail(ErrorKind::Schema, std::string("missing field '") + name + "'", where);
    try {
        return it->get<T>();
    } catch (const json::exception& e) {
        fail(ErrorKind::Schema, std::string("bad field '") + name + "': " + e.what(), where);
    }
}

} // namespace utd
