#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <fcntl.h>
#include <sys/mman.h>
#include <sys/stat.h>
#include <unistd.h>

#include <spdlog/spdlog.h>

#include "utd/binary_io.hpp"
#include "utd/endpoint.hpp"
#include "utd/error.hpp"
#include "utd/hashing.hpp"
#include "utd/parallel.hpp"
#include "utd/prompts.hpp"

namespace utd {

using Embedding = std::vector<float>;

inline constexpr double kZeroNormThreshold = 1e-9;

/// L2-normalized copy. Accumulates in double.
inline Embedding normalized(std::span<const float> v) {
    double sq = 0.0;
    for (float x : v) {
        if (!std::isfinite(x))
            fail(ErrorKind::DegenerateInput, "embedding has a non-finite entry");
        sq += static_cast<double>(x) * x;
    }
    double norm = std::sqrt(sq);
    if (norm < kZeroNormThreshold)
        fail(ErrorKind::ZeroNorm, "cannot normalize a zero vector");
    Embedding out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i)
        out[i] = static_cast<float>(v[i] / norm);
    return out;
}

inline double dot(std::span<const float> u, std::span<const float> v) {
    double s = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i)
        s += static_cast<double>(u[i]) * v[i];
    return s;
}

/// dot(u,v) / (|u||v|), clamped to [-1, 1]. Symmetric bit for bit: each
/// product is commutative and the summation order is the index order.
inline double cosine(std::span<const float> u, std::span<const float> v) {
    if (u.size() != v.size())
        fail(ErrorKind::DimensionMismatch,
             "cosine of " + std::to_string(u.size()) + "-d and " + std::to_string(v.size()) + "-d vectors");
    double nu = std::sqrt(dot(u, u));
    double nv = std::sqrt(dot(v, v));
    if (!std::isfinite(nu) || !std::isfinite(nv))
        fail(ErrorKind::DegenerateInput, "non-finite vector in cosine");
    if (nu < kZeroNormThreshold || nv < kZeroNormThreshold)
        fail(ErrorKind::ZeroNorm, "cosine with a zero vector");
    return std::clamp(dot(u, v) / (nu * nv), -1.0, 1.0);
}

/// Mean of frame vectors, renormalized. The inputs are summed in
/// lexicographic order of their values, so any permutation of the same
/// vectors gives a bitwise-identical result.
inline Embedding aggregate_avg(std::span<const Embedding> frames) {
    if (frames.empty())
        fail(ErrorKind::Precondition, "aggregate_avg needs at least one vector");
    const std::size_t dim = frames.front().size();
    std::vector<const Embedding*> order;
    for (const auto& f : frames) {
        if (f.size() != dim)
            fail(ErrorKind::DimensionMismatch, "frame vectors differ in dimension");
        order.push_back(&f);
    }
    std::stable_sort(order.begin(), order.end(), [](const Embedding* a, const Embedding* b) {
        return std::lexicographical_compare(a->begin(), a->end(), b->begin(), b->end());
    });
    std::vector<double> sum(dim, 0.0);
    for (const auto* f : order)
        for (std::size_t i = 0; i < dim; ++i)
            sum[i] += (*f)[i];
    double sq = 0.0;
    for (auto& s : sum) {
        s /= static_cast<double>(frames.size());
        sq += s * s;
    }
    double norm = std::sqrt(sq);
    if (norm < kZeroNormThreshold)
        fail(ErrorKind::ZeroNorm, "frame vectors average to (nearly) zero");
    Embedding out(dim);
    for (std::size_t i = 0; i < dim; ++i)
        out[i] = static_cast<float>(sum[i] / norm);
    return out;
}

// ---------------------------------------------------------------------------
// Cache file
//
//   "UTDE" | version u16 | dim u32 | model id (u32 length + bytes)
//   records: 32-byte SHA-256 key | dim x f32
//
// All integers and floats little-endian. The header is written with the
// first record, when the dimension becomes known.

inline constexpr std::uint16_t kCacheVersion = 1;

struct DigestHash {
    std::size_t operator()(const Digest& d) const noexcept {
        std::size_t h;
        std::memcpy(&h, d.data(), sizeof(h));
        return h;
    }
};

inline Digest embedding_key(std::string_view model, std::string_view instruction, std::string_view text) {
    return Sha256().field("utd-embedding-v1").field(model).field(instruction).field(text).finish();
}

/// Read-only memory map of a whole file.
class MappedFile {
public:
    explicit MappedFile(const std::filesystem::path& path) {
        fd_ = ::open(path.c_str(), O_RDONLY);
        if (fd_ < 0)
            fail(ErrorKind::Io, "cannot open", path.string());
        struct stat st {};
        if (::fstat(fd_, &st) != 0) {
            ::close(fd_);
            fail(ErrorKind::Io, "cannot stat", path.string());
        }
        size_ = static_cast<std::size_t>(st.st_size);
        if (size_ > 0) {
            void* p = ::mmap(nullptr, size_, PROT_READ, MAP_PRIVATE, fd_, 0);
            if (p == MAP_FAILED) {
                ::close(fd_);
                fail(ErrorKind::Io, "mmap failed", path.string());
            }
            data_ = static_cast<const char*>(p);
        }
    }
    ~MappedFile() {
        if (data_)
            ::munmap(const_cast<char*>(data_), size_);
        if (fd_ >= 0)
            ::close(fd_);
    }
    MappedFile(const MappedFile&) = delete;
    MappedFile& operator=(const MappedFile&) = delete;

    const char* data() const { return data_; }
    std::size_t size() const { return size_; }

private:
    int fd_ = -1;
    const char* data_ = nullptr;
    std::size_t size_ = 0;
};

/// Persistent map from embedding key to unit vector. Concurrent readers,
/// exclusive appends. An empty path keeps everything in memory.
class EmbeddingCache {
public:
    EmbeddingCache() = default;

    EmbeddingCache(std::filesystem::path path, std::string model)
        : path_(std::move(path)), model_(std::move(model)) {
        std::error_code ec;
        if (!path_.empty() && std::filesystem::exists(path_, ec) && std::filesystem::file_size(path_) > 0)
            load();
    }

    /// Conventional per-model file name inside a cache directory.
    static std::filesystem::path file_for(const std::filesystem::path& dir, std::string_view model) {
        return dir / (sha256_hex(model).substr(0, 16) + ".utde");
    }

    const std::string& model() const { return model_; }
    const std::filesystem::path& path() const { return path_; }

    std::optional<std::size_t> dim() const {
        std::shared_lock lock(mu_);
        return dim_;
    }

    std::size_t size() const {
        std::shared_lock lock(mu_);
        return entries_.size();
    }

    std::optional<Embedding> get(const Digest& key) const {
        std::shared_lock lock(mu_);
        auto it = entries_.find(key);
        if (it == entries_.end())
            return std::nullopt;
        return it->second;
    }

    /// Appends records in the given order, skipping keys already present.
    void append(const std::vector<std::pair<Digest, Embedding>>& records) {
        std::unique_lock lock(mu_);
        std::string buf;
        auto dim = dim_;
        for (const auto& [key, vec] : records) {
            if (!dim)
                dim = vec.size();
            if (vec.size() != *dim)
                fail(ErrorKind::DimensionMismatch,
                     "vector of length " + std::to_string(vec.size()) + " for a " + std::to_string(*dim) +
                         "-d cache",
                     path_.string());
        }
        bool need_header = !dim_ && dim;
        dim_ = dim;
        if (need_header) {
            binary::put<std::uint8_t>(buf, 'U');
            binary::put<std::uint8_t>(buf, 'T');
            binary::put<std::uint8_t>(buf, 'D');
            binary::put<std::uint8_t>(buf, 'E');
            binary::put<std::uint16_t>(buf, kCacheVersion);
            binary::put<std::uint32_t>(buf, static_cast<std::uint32_t>(*dim_));
            binary::put_string(buf, model_);
        }
        for (const auto& [key, vec] : records) {
            if (!entries_.emplace(key, vec).second)
                continue;
            buf.append(reinterpret_cast<const char*>(key.data()), key.size());
            for (float x : vec)
                binary::put<float>(buf, x);
        }
        if (path_.empty() || buf.empty())
            return;
        if (path_.has_parent_path())
            std::filesystem::create_directories(path_.parent_path());
        std::ofstream out(path_, std::ios::binary | std::ios::app);
        out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
        if (!out)
            fail(ErrorKind::Io, "cache append failed", path_.string());
    }

private:
    void load() {
        MappedFile file(path_);
        binary::Reader r(file.data(), file.size(), path_.string());
        if (r.bytes(4) != "UTDE")
            fail(ErrorKind::Parse, "not an embedding cache (bad magic)", path_.string());
        auto version = r.get<std::uint16_t>();
        if (version != kCacheVersion)
            fail(ErrorKind::Parse, "unsupported cache version " + std::to_string(version), path_.string());
        dim_ = r.get<std::uint32_t>();
        auto model = r.get_string();
        if (model != model_)
            fail(ErrorKind::Schema, "cache holds embeddings of model '" + model + "', not '" + model_ + "'",
                 path_.string());
        const std::size_t record = 32 + 4 * *dim_;
        const std::size_t header = r.position();
        while (r.remaining() >= record) {
            Digest key;
            auto kb = r.bytes(32);
            std::memcpy(key.data(), kb.data(), 32);
            Embedding v(*dim_);
            for (auto& x : v)
                x = r.get<float>();
            entries_.emplace(key, std::move(v));
        }
        if (r.remaining() != 0) {
            spdlog::warn("embedding cache {} ends in a torn record; truncating", path_.string());
            auto keep = header + entries_.size() * record;
            std::filesystem::resize_file(path_, keep);
        }
    }

    std::filesystem::path path_;
    std::string model_;
    mutable std::shared_mutex mu_;
    std::optional<std::size_t> dim_;
    std::unordered_map<Digest, Embedding, DigestHash> entries_;
};

/// Instruction-prompted text embeddings backed by the cache. Without a
/// client the embedder is cache-only and misses raise MissingEmbedding.
class Embedder {
public:
    Embedder(std::optional<EmbeddingClient> client, std::shared_ptr<EmbeddingCache> cache)
        : client_(std::move(client)), cache_(std::move(cache)) {
        if (!cache_)
            cache_ = std::make_shared<EmbeddingCache>(std::filesystem::path{},
                                                      client_ ? client_->config().model : std::string());
    }

    const std::string& model() const { return cache_->model(); }
    EmbeddingCache& cache() { return *cache_; }
    std::size_t endpoint_requests() const { return requests_.load(); }

    Embedding embed_text(std::string_view text, const InstructionPrompt& instruction) {
        return embed_many({std::string(text)}, instruction).front();
    }

    /// One vector per text, in input order. Misses are deduplicated, sent in
    /// batches (up to max_in_flight concurrently) and appended to the cache
    /// in first-occurrence order, so the cache file is deterministic.
    std::vector<Embedding> embed_many(const std::vector<std::string>& texts, const InstructionPrompt& instruction) {
        std::vector<Digest> keys;
        keys.reserve(texts.size());
        std::vector<std::size_t> misses;
        std::unordered_map<Digest, std::size_t, DigestHash> first;
        for (std::size_t i = 0; i < texts.size(); ++i) {
            if (texts[i].empty())
                fail(ErrorKind::Precondition, "cannot embed an empty text");
            keys.push_back(embedding_key(model(), instruction.text, texts[i]));
            if (!cache_->get(keys.back()) && first.emplace(keys.back(), i).second)
                misses.push_back(i);
        }
        if (!misses.empty())
            fetch(texts, keys, misses, instruction);
        std::vector<Embedding> out;
        out.reserve(texts.size());
        for (std::size_t i = 0; i < texts.size(); ++i) {
            auto v = cache_->get(keys[i]);
            if (!v)
                fail(ErrorKind::MissingEmbedding, "embedding not cached", texts[i].substr(0, 80));
            out.push_back(std::move(*v));
        }
        return out;
    }

    /// Rows for labels or captions, in order.
    std::vector<Embedding> embed_label_set(const std::vector<std::string>& items, const InstructionPrompt& instruction) {
        require(!items.empty(), "embed_label_set needs at least one label or caption");
        return embed_many(items, instruction);
    }

private:
    void fetch(const std::vector<std::string>& texts, const std::vector<Digest>& keys,
               const std::vector<std::size_t>& misses, const InstructionPrompt& instruction) {
        if (!client_)
            fail(ErrorKind::MissingEmbedding, "embedding not cached and no endpoint configured",
                 texts[misses.front()].substr(0, 80));
        const auto& cfg = client_->config();
        const std::size_t batch = static_cast<std::size_t>(cfg.batch_size);
        const std::size_t nbatches = (misses.size() + batch - 1) / batch;
        std::vector<std::vector<std::vector<float>>> results(nbatches);
        parallel_for_each(nbatches, static_cast<std::size_t>(cfg.max_in_flight), [&](std::size_t b) {
            std::vector<std::string> inputs;
            for (std::size_t j = b * batch; j < std::min(misses.size(), (b + 1) * batch); ++j)
                inputs.push_back(embedding_input(instruction.text, texts[misses[j]]));
            ++requests_;
            results[b] = client_->embed(inputs);
        });
        auto expected = cache_->dim();
        std::vector<std::pair<Digest, Embedding>> records;
        records.reserve(misses.size());
        for (std::size_t j = 0; j < misses.size(); ++j) {
            const auto& raw = results[j / batch][j % batch];
            if (expected && raw.size() != *expected)
                fail(ErrorKind::DimensionMismatch,
                     "endpoint returned " + std::to_string(raw.size()) + " dims, cache holds " +
                         std::to_string(*expected));
            if (!expected)
                expected = raw.size();
            records.emplace_back(keys[misses[j]], normalized(raw));
        }
        cache_->append(records);
    }

    std::optional<EmbeddingClient> client_;
    std::shared_ptr<EmbeddingCache> cache_;
    std::atomic<std::size_t> requests_{0};
};

} // namespace utd
