#pragma once

#include <algorithm>
#include <filesystem>
#include <mutex>
#include <regex>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <spdlog/spdlog.h>

#include "utd/corpus.hpp"
#include "utd/endpoint.hpp"
#include "utd/hashing.hpp"
#include "utd/parallel.hpp"
#include "utd/prompts.hpp"
#include "utd/response_cache.hpp"

namespace utd {

inline std::string trim(std::string_view s) {
    auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos)
        return {};
    auto e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
}

namespace detail {

inline std::string strip_parenthesized(std::string_view line) {
    std::string out;
    int depth = 0;
    for (char c : line) {
        if (c == '(') {
            ++depth;
        } else if (c == ')' && depth > 0) {
            --depth;
        } else if (depth == 0) {
            out.push_back(c);
        }
    }
    return out;
}

inline std::string collapse_spaces(std::string_view s) {
    std::string out;
    bool space = false;
    for (char c : s) {
        if (c == ' ' || c == '\t') {
            space = true;
            continue;
        }
        if (space && !out.empty())
            out.push_back(' ');
        space = false;
        out.push_back(c);
    }
    return out;
}

inline std::string clean_item(std::string line) {
    static const std::regex enumeration(R"(^\s*\d+[.)]\s*)");
    // Applied to a fixpoint so that cleaning a cleaned item is a no-op.
    for (;;) {
        std::string next = std::regex_replace(line, enumeration, "", std::regex_constants::format_first_only);
        next = collapse_spaces(trim(strip_parenthesized(next)));
        if (next == line)
            return line;
        line = std::move(next);
    }
}

} // namespace detail

/// Turns an enumerated LLM answer into list items: one item per line, with
/// leading "N." / "N)" numbering and any (...) groups removed, whitespace
/// trimmed, and empty lines dropped. Square brackets are kept.
inline std::vector<std::string> postprocess_list(std::string_view raw) {
    std::vector<std::string> items;
    std::size_t start = 0;
    while (start <= raw.size()) {
        auto end = raw.find('\n', start);
        if (end == std::string_view::npos)
            end = raw.size();
        auto item = detail::clean_item(std::string(raw.substr(start, end - start)));
        if (!item.empty())
            items.push_back(std::move(item));
        start = end + 1;
    }
    return items;
}

inline std::string enumerate_list(const std::vector<std::string>& items) {
    std::string out;
    for (std::size_t i = 0; i < items.size(); ++i) {
        if (i)
            out += "\n";
        out += std::to_string(i + 1) + ". " + items[i];
    }
    return out;
}

inline bool is_no_activity(std::string_view item) {
    return trim(item) == kNoActivitySentinel || trim(item) == "No activity is visible";
}

inline std::string image_mime(std::string_view bytes) {
    auto starts = [&](std::string_view magic) { return bytes.substr(0, magic.size()) == magic; };
    if (starts("\x89PNG\r\n\x1a\n")) return "image/png";
    if (starts("\xff\xd8\xff")) return "image/jpeg";
    if (starts("GIF87a") || starts("GIF89a")) return "image/gif";
    if (starts("BM")) return "image/bmp";
    if (bytes.size() >= 12 && starts("RIFF") && bytes.substr(8, 4) == "WEBP") return "image/webp";
    return {};
}

/// Frame description and concept extraction against a VLM and a text LLM,
/// with responses cached on disk.
class Annotator {
public:
    Annotator(ChatClient vlm, ChatClient llm, PromptLibrary lib, ResponseCache cache = {})
        : vlm_(std::move(vlm)), llm_(std::move(llm)), lib_(std::move(lib)), cache_(std::move(cache)) {
        lib_.check();
    }

    const PromptLibrary& prompts() const { return lib_; }
    const ChatClient& vlm() const { return vlm_; }
    const ChatClient& llm() const { return llm_; }

    /// VLM description of one frame, returned verbatim.
    std::string describe_frame(const std::filesystem::path& frame) {
        std::string bytes;
        try {
            bytes = read_file(frame);
        } catch (const Error&) {
            fail(ErrorKind::Image, "cannot read frame", frame.string());
        }
        auto mime = image_mime(bytes);
        if (mime.empty())
            fail(ErrorKind::Image, "not a recognized image format", frame.string());
        ResponseCache::Key key{sha256_hex(bytes), sha256_hex(lib_.vlm_describe), vlm_.config().model};
        if (auto hit = cache_.get(key))
            return *hit;
        auto text = vlm_.chat_with_image(lib_.vlm_describe, mime, bytes);
        cache_.put(key, text);
        return text;
    }

    /// Objects or activities named in a description.
    std::vector<std::string> extract_concept(std::string_view description, Concept family) {
        require(!trim(description).empty(), "extract_concept needs a nonempty description");
        if (family != Concept::objects && family != Concept::activities)
            fail(ErrorKind::Precondition, "extract_concept handles objects or activities only");
        const bool objects = family == Concept::objects;
        auto raw = run_llm(objects ? lib_.extract_objects : lib_.extract_activities, kDescriptionSlot,
                           objects ? lib_.object_shots : lib_.activity_shots, description);
        auto items = postprocess_list(raw);
        if (!objects)
            std::erase_if(items, [](const std::string& s) { return is_no_activity(s); });
        return items;
    }

    /// Activities with object information removed. An empty activity list
    /// stays empty without an endpoint call.
    std::vector<std::string> derive_verbs(const std::vector<std::string>& activities) {
        if (activities.empty())
            return {};
        auto raw = run_llm(lib_.derive_verbs, kActivitiesSlot, lib_.verb_shots, enumerate_list(activities));
        auto items = postprocess_list(raw);
        std::erase_if(items, [](const std::string& s) { return is_no_activity(s); });
        return items;
    }

    /// Short summary used in frame sequences. No word count is enforced.
    std::string summarize_15w(std::string_view description) {
        require(!trim(description).empty(), "summarize_15w needs a nonempty description");
        static const std::vector<Exemplar> no_shots;
        return trim(run_llm(lib_.summarize_15w, kDescriptionSlot, no_shots, description));
    }

private:
    std::string run_llm(std::string_view templ, std::string_view slot, const std::vector<Exemplar>& shots,
                        std::string_view input) {
        const auto& cfg = llm_.config();
        ResponseCache::Key key{sha256_hex(input), sha256_hex(cfg.api + "\x1d" + lib_.fingerprint(templ, shots)),
                               cfg.model};
        if (auto hit = cache_.get(key))
            return *hit;
        std::string text = cfg.api == "completions" ? llm_.complete(render_completion(templ, slot, shots, input))
                                                    : llm_.chat(render_chat(templ, slot, shots, input));
        cache_.put(key, text);
        return text;
    }

    ChatClient vlm_;
    ChatClient llm_;
    PromptLibrary lib_;
    ResponseCache cache_;
};

struct AnnotationFailure {
    DescKey key;
    std::string message;
};

struct AnnotateResult {
    DescriptionStore store;
    std::vector<AnnotationFailure> failures;
};

namespace detail {

inline bool concept_complete(const DescriptionStore& store, const DatasetManifest& manifest, Concept c) {
    for (const auto& v : manifest.videos)
        for (std::size_t f = 0; f < v.frame_count(); ++f)
            if (!store.contains({v.id, f, c}))
                return false;
    return true;
}

} // namespace detail

/// Fills `concepts` for every frame of every manifest video, starting from
/// `existing` (entries already present are never re-requested). Stages run
/// in dependency order: descriptions, then objects/activities/summaries,
/// then verbs. Per-key endpoint failures are collected, not thrown.
inline AnnotateResult annotate_dataset(const DatasetManifest& manifest, Annotator& annotator,
                                       const std::set<Concept>& concepts, DescriptionStore existing = {},
                                       std::size_t max_in_flight = 1) {
    auto available = [&](Concept c) {
        return concepts.count(c) || detail::concept_complete(existing, manifest, c);
    };
    for (auto c : {Concept::objects, Concept::activities, Concept::obj_comp_act_15w})
        if (concepts.count(c) && !available(Concept::obj_comp_act))
            fail(ErrorKind::Precondition,
                 std::string(to_string(c)) + " requires obj_comp_act descriptions (request or provide them)");
    if (concepts.count(Concept::verbs) && !available(Concept::activities))
        fail(ErrorKind::Precondition, "verbs require activities (request or provide them)");

    AnnotateResult result{std::move(existing), {}};
    std::mutex mu;

    auto run_stage = [&](const std::vector<Concept>& stage) {
        std::vector<DescKey> todo;
        for (auto c : stage) {
            if (!concepts.count(c))
                continue;
            for (const auto& v : manifest.videos)
                for (std::size_t f = 0; f < v.frame_count(); ++f)
                    if (!result.store.contains({v.id, f, c}))
                        todo.push_back({v.id, f, c});
        }
        std::sort(todo.begin(), todo.end());
        auto lookup = [&](const DescKey& k) -> std::optional<Payload> {
            std::lock_guard lock(mu);
            if (auto* p = result.store.find(k))
                return *p;
            return std::nullopt;
        };
        auto errors = parallel_for(todo.size(), max_in_flight, [&](std::size_t i) {
            const auto& key = todo[i];
            Payload payload;
            if (key.family == Concept::obj_comp_act) {
                payload = annotator.describe_frame(manifest.frame_file(manifest.video(key.video), key.frame));
            } else if (key.family == Concept::verbs) {
                auto acts = lookup({key.video, key.frame, Concept::activities});
                if (!acts)
                    fail(ErrorKind::MissingEntry, "activities unavailable", to_string(key));
                payload = annotator.derive_verbs(std::get<std::vector<std::string>>(*acts));
            } else {
                auto desc = lookup({key.video, key.frame, Concept::obj_comp_act});
                if (!desc)
                    fail(ErrorKind::MissingEntry, "description unavailable", to_string(key));
                const auto& text = std::get<std::string>(*desc);
                if (key.family == Concept::obj_comp_act_15w)
                    payload = annotator.summarize_15w(text);
                else
                    payload = annotator.extract_concept(text, key.family);
            }
            std::lock_guard lock(mu);
            result.store.put(key, std::move(payload));
        });
        for (std::size_t i = 0; i < todo.size(); ++i) {
            if (!errors[i])
                continue;
            try {
                std::rethrow_exception(errors[i]);
            } catch (const std::exception& e) {
                spdlog::error("annotation of {} failed: {}", to_string(todo[i]), e.what());
                result.failures.push_back({todo[i], e.what()});
            }
        }
    };

    run_stage({Concept::obj_comp_act});
    run_stage({Concept::objects, Concept::activities, Concept::obj_comp_act_15w});
    run_stage({Concept::verbs});
    return result;
}

} // namespace utd
