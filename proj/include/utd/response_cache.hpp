#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "utd/hashing.hpp"
#include "utd/json_io.hpp"

namespace utd {

/// Directory of endpoint responses, one JSON record per request key. The
/// file name is the hex SHA-256 of (input hash, prompt hash, model id), so
/// distinct keys never touch the same file and concurrent inserts are safe.
class ResponseCache {
public:
    ResponseCache() = default;
    explicit ResponseCache(std::filesystem::path dir) : dir_(std::move(dir)) {
        std::filesystem::create_directories(dir_);
    }

    bool enabled() const { return !dir_.empty(); }

    struct Key {
        std::string input_hash;
        std::string prompt_hash;
        std::string model;

        std::string file_name() const {
            Digest d = Sha256().field(input_hash).field(prompt_hash).field(model).finish();
            return to_hex(d);
        }
    };

    std::optional<std::string> get(const Key& key) const {
        if (!enabled())
            return std::nullopt;
        auto path = dir_ / (key.file_name() + ".json");
        std::error_code ec;
        if (!std::filesystem::exists(path, ec))
            return std::nullopt;
        auto doc = read_json(path);
        if (doc.value("model", "") != key.model || doc.value("input_hash", "") != key.input_hash ||
            doc.value("prompt_hash", "") != key.prompt_hash)
            return std::nullopt;
        return doc.at("response").get<std::string>();
    }

    void put(const Key& key, const std::string& response) const {
        if (!enabled())
            return;
        write_json(dir_ / (key.file_name() + ".json"),
                   json{{"model", key.model}, {"input_hash", key.input_hash},
                        {"prompt_hash", key.prompt_hash}, {"response", response}});
    }

private:
    std::filesystem::path dir_;
};

} // namespace utd
