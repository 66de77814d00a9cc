#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "utd/corpus.hpp"
#include "utd/error.hpp"
#include "utd/prompts.hpp"

namespace utd {

enum class Temporal { middle_frame, max_score_frame, avg_over_frames, seq_of_frames };

inline constexpr std::array kAllTemporals{Temporal::middle_frame, Temporal::max_score_frame,
                                          Temporal::avg_over_frames, Temporal::seq_of_frames};
inline constexpr std::array kRepresentationConcepts{Concept::obj_comp_act, Concept::objects,
                                                    Concept::activities, Concept::verbs};

constexpr std::string_view to_string(Temporal t) {
    switch (t) {
    case Temporal::middle_frame: return "middle_frame";
    case Temporal::max_score_frame: return "max_score_frame";
    case Temporal::avg_over_frames: return "avg_over_frames";
    case Temporal::seq_of_frames: return "seq_of_frames";
    }
    return "?";
}

inline std::optional<Temporal> parse_temporal(std::string_view s) {
    for (auto t : kAllTemporals)
        if (to_string(t) == s)
            return t;
    return std::nullopt;
}

/// Frames are embedded one at a time for every temporal setup except the
/// sequence template.
constexpr Arity arity_of(Temporal t) {
    return t == Temporal::seq_of_frames ? Arity::multi_frame : Arity::single_frame;
}

struct RepresentationSpec {
    Concept family = Concept::objects;
    Temporal temporal = Temporal::seq_of_frames;

    bool operator==(const RepresentationSpec&) const = default;
};

inline std::string to_string(const RepresentationSpec& s) {
    return std::string(to_string(s.family)) + "/" + std::string(to_string(s.temporal));
}

/// A single text (middle_frame, seq_of_frames) or one text per frame in
/// frame order (avg_over_frames, max_score_frame).
using RepresentationText = std::variant<std::string, std::vector<std::string>>;

// Rendering of empty list payloads, so every frame has nonempty text.
inline constexpr std::string_view kNoObjectsText = "No objects are visible.";

/// Text of one stored entry: list payloads joined with ", ", free text as is.
inline std::string frame_text(const DescriptionStore& store, std::string_view video, std::size_t frame,
                              Concept family) {
    DescKey key{std::string(video), frame, family};
    const Payload* p = store.find(key);
    if (!p)
        fail(ErrorKind::MissingEntry, "no description entry", to_string(key));
    if (const auto* text = std::get_if<std::string>(p))
        return *text;
    const auto& items = std::get<std::vector<std::string>>(*p);
    if (items.empty())
        return std::string(family == Concept::objects ? kNoObjectsText : kNoActivitySentinel);
    std::string out;
    for (std::size_t i = 0; i < items.size(); ++i) {
        if (i)
            out += ", ";
        out += items[i];
    }
    return out;
}

/// 0-based index of the middle frame: floor(frame_count / 2).
constexpr std::size_t middle_frame(std::size_t frame_count) { return frame_count / 2; }

/// "Frame 1: x1 Frame 2: x2 ..." over all frames. Full descriptions are
/// replaced by their 15-word summaries here.
inline std::string sequence_of_frames(const DescriptionStore& store, const VideoEntry& video,
                                      Concept family) {
    Concept source = family == Concept::obj_comp_act ? Concept::obj_comp_act_15w : family;
    std::string out;
    for (std::size_t f = 0; f < video.frame_count(); ++f) {
        if (f)
            out += " ";
        out += "Frame " + std::to_string(f + 1) + ": " + frame_text(store, video.id, f, source);
    }
    return out;
}

inline std::vector<std::string> per_frame_texts(const DescriptionStore& store, const VideoEntry& video,
                                                Concept family) {
    std::vector<std::string> out;
    out.reserve(video.frame_count());
    for (std::size_t f = 0; f < video.frame_count(); ++f)
        out.push_back(frame_text(store, video.id, f, family));
    return out;
}

inline RepresentationText build(const DescriptionStore& store, const VideoEntry& video,
                                const RepresentationSpec& spec) {
    if (spec.family == Concept::obj_comp_act_15w)
        fail(ErrorKind::Precondition, "summaries are not a standalone representation concept");
    switch (spec.temporal) {
    case Temporal::middle_frame:
        return frame_text(store, video.id, middle_frame(video.frame_count()), spec.family);
    case Temporal::seq_of_frames:
        return sequence_of_frames(store, video, spec.family);
    case Temporal::avg_over_frames:
    case Temporal::max_score_frame:
        return per_frame_texts(store, video, spec.family);
    }
    fail(ErrorKind::Precondition, "unknown temporal setup");
}

} // namespace utd
