#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <variant>
#include <vector>

#include "utd/error.hpp"
#include "utd/json_io.hpp"

namespace utd {

enum class Task { classification, retrieval };
enum class SplitRole { train, test };

/// Concept families stored per frame. `obj_comp_act_15w` holds the 15-word
/// summaries that stand in for full descriptions inside frame sequences.
enum class Concept { obj_comp_act, objects, activities, verbs, obj_comp_act_15w };

inline constexpr std::array kAllConcepts{Concept::obj_comp_act, Concept::objects,
                                         Concept::activities, Concept::verbs,
                                         Concept::obj_comp_act_15w};

constexpr std::string_view to_string(Task t) {
    return t == Task::classification ? "classification" : "retrieval";
}

constexpr std::string_view to_string(SplitRole s) { return s == SplitRole::train ? "train" : "test"; }

constexpr std::string_view to_string(Concept c) {
    switch (c) {
    case Concept::obj_comp_act: return "obj_comp_act";
    case Concept::objects: return "objects";
    case Concept::activities: return "activities";
    case Concept::verbs: return "verbs";
    case Concept::obj_comp_act_15w: return "obj_comp_act_15w";
    }
    return "?";
}

inline std::optional<Concept> parse_concept(std::string_view s) {
    for (auto c : kAllConcepts)
        if (to_string(c) == s)
            return c;
    return std::nullopt;
}

inline std::optional<Task> parse_task(std::string_view s) {
    if (s == "classification") return Task::classification;
    if (s == "retrieval") return Task::retrieval;
    return std::nullopt;
}

/// Objects, activities and verbs are stored as lists; the other two as text.
constexpr bool is_list_concept(Concept c) {
    return c == Concept::objects || c == Concept::activities || c == Concept::verbs;
}

// ---------------------------------------------------------------------------
// Manifest

struct VideoEntry {
    std::string id;
    std::vector<std::string> frame_paths;
    std::optional<std::size_t> label_index;
    std::optional<std::vector<std::string>> captions;
    SplitRole split = SplitRole::test;

    std::size_t frame_count() const { return frame_paths.size(); }
};

/// One retrieval query: a single caption of a test video. Ids are
/// "<video_id>#<caption index>".
struct Query {
    std::string id;
    std::string video_id;
    std::string text;
};

inline std::string query_id(std::string_view video_id, std::size_t caption_index) {
    return std::string(video_id) + "#" + std::to_string(caption_index);
}

class DatasetManifest {
public:
    std::string name;
    Task task = Task::classification;
    std::vector<std::string> classes;
    std::vector<VideoEntry> videos;
    // Directory relative frame paths resolve against; not serialized.
    std::filesystem::path base_dir;

    std::filesystem::path frame_file(const VideoEntry& v, std::size_t frame) const {
        std::filesystem::path p(v.frame_paths.at(frame));
        return p.is_absolute() || base_dir.empty() ? p : base_dir / p;
    }

    /// Rebuilds the id index and checks every invariant. Throws SchemaError.
    void validate();

    bool contains(std::string_view id) const { return index_.count(std::string(id)) != 0; }

    const VideoEntry& video(std::string_view id) const {
        auto it = index_.find(std::string(id));
        if (it == index_.end())
            fail(ErrorKind::UnknownVideo, "video not in manifest", std::string(id));
        return videos[it->second];
    }

    /// Entries of one split role, sorted by id.
    std::vector<const VideoEntry*> videos_in(SplitRole role) const {
        std::vector<const VideoEntry*> out;
        for (const auto& v : videos)
            if (v.split == role)
                out.push_back(&v);
        std::sort(out.begin(), out.end(), [](auto* a, auto* b) { return a->id < b->id; });
        return out;
    }

    /// Retrieval queries over the test split, sorted by query id.
    std::vector<Query> test_queries() const {
        std::vector<Query> out;
        for (const auto* v : videos_in(SplitRole::test))
            for (std::size_t k = 0; v->captions && k < v->captions->size(); ++k)
                out.push_back({query_id(v->id, k), v->id, (*v->captions)[k]});
        std::sort(out.begin(), out.end(), [](const Query& a, const Query& b) { return a.id < b.id; });
        return out;
    }

    /// Evaluation sample ids: test videos for classification, queries for
    /// retrieval. Sorted.
    std::vector<std::string> test_sample_ids() const {
        std::vector<std::string> ids;
        if (task == Task::classification) {
            for (const auto* v : videos_in(SplitRole::test))
                ids.push_back(v->id);
        } else {
            for (auto& q : test_queries())
                ids.push_back(q.id);
        }
        return ids;
    }

private:
    std::unordered_map<std::string, std::size_t> index_;
};

inline void DatasetManifest::validate() {
    if (videos.empty())
        fail(ErrorKind::Schema, "EmptyDataset: manifest lists no videos", name);
    if (task == Task::classification && classes.empty())
        fail(ErrorKind::Schema, "classification manifest has no classes", name);
    index_.clear();
    for (std::size_t i = 0; i < videos.size(); ++i) {
        const auto& v = videos[i];
        if (v.id.empty())
            fail(ErrorKind::Schema, "empty video id", "videos[" + std::to_string(i) + "]");
        if (!index_.emplace(v.id, i).second)
            fail(ErrorKind::Schema, "duplicate video id", v.id);
        if (v.frame_paths.empty())
            fail(ErrorKind::Schema, "video has no frames", v.id);
        if (task == Task::classification) {
            if (!v.label_index || v.captions)
                fail(ErrorKind::Schema, "classification video needs label_index and no captions", v.id);
            if (*v.label_index >= classes.size())
                fail(ErrorKind::Schema,
                     "label_index " + std::to_string(*v.label_index) + " out of range for " +
                         std::to_string(classes.size()) + " classes",
                     v.id);
        } else {
            if (!v.captions || v.label_index)
                fail(ErrorKind::Schema, "retrieval video needs captions and no label_index", v.id);
            if (v.split == SplitRole::test && v.captions->empty())
                fail(ErrorKind::Schema, "retrieval test video has no caption", v.id);
            for (const auto& c : *v.captions)
                if (c.empty())
                    fail(ErrorKind::Schema, "empty caption", v.id);
        }
    }
}

inline DatasetManifest manifest_from_json(const json& doc, const std::string& origin) {
    if (!doc.is_object())
        fail(ErrorKind::Schema, "manifest must be a JSON object", origin);
    DatasetManifest m;
    m.name = field<std::string>(doc, "name", origin);
    auto task = parse_task(field<std::string>(doc, "task", origin));
    if (!task)
        fail(ErrorKind::Schema, "task must be classification or retrieval", origin);
    m.task = *task;
    if (doc.contains("classes"))
        m.classes = field<std::vector<std::string>>(doc, "classes", origin);
    const auto& vids = doc.contains("videos") ? doc.at("videos") : json();
    if (!vids.is_array())
        fail(ErrorKind::Schema, "videos must be an array", origin);
    for (std::size_t i = 0; i < vids.size(); ++i) {
        const auto& jv = vids[i];
        std::string where = origin + ":videos[" + std::to_string(i) + "]";
        VideoEntry v;
        v.id = field<std::string>(jv, "id", where);
        v.frame_paths = field<std::vector<std::string>>(jv, "frames", where);
        if (jv.contains("label_index")) {
            auto li = field<long long>(jv, "label_index", where);
            if (li < 0)
                fail(ErrorKind::Schema, "negative label_index", v.id);
            v.label_index = static_cast<std::size_t>(li);
        }
        if (jv.contains("captions"))
            v.captions = field<std::vector<std::string>>(jv, "captions", where);
        auto split = field<std::string>(jv, "split", where);
        if (split == "train")
            v.split = SplitRole::train;
        else if (split == "test")
            v.split = SplitRole::test;
        else
            fail(ErrorKind::Schema, "split must be train or test", v.id);
        m.videos.push_back(std::move(v));
    }
    m.validate();
    return m;
}

inline json to_json(const DatasetManifest& m) {
    json doc{{"name", m.name}, {"task", to_string(m.task)}};
    if (m.task == Task::classification)
        doc["classes"] = m.classes;
    json vids = json::array();
    for (const auto& v : m.videos) {
        json jv{{"id", v.id}, {"frames", v.frame_paths}, {"split", to_string(v.split)}};
        if (v.label_index)
            jv["label_index"] = *v.label_index;
        if (v.captions)
            jv["captions"] = *v.captions;
        vids.push_back(std::move(jv));
    }
    doc["videos"] = std::move(vids);
    return doc;
}

inline DatasetManifest load_manifest(const std::filesystem::path& path) {
    auto m = manifest_from_json(read_json(path), path.string());
    m.base_dir = path.parent_path();
    return m;
}

inline void write_manifest(const DatasetManifest& m, const std::filesystem::path& path) {
    write_json(path, to_json(m));
}

// ---------------------------------------------------------------------------
// Descriptions

struct DescKey {
    std::string video;
    std::size_t frame = 0;
    Concept family = Concept::obj_comp_act;

    auto operator<=>(const DescKey&) const = default;
};

inline std::string to_string(const DescKey& k) {
    return k.video + "/" + std::to_string(k.frame) + "/" + std::string(to_string(k.family));
}

using Payload = std::variant<std::string, std::vector<std::string>>;

class DescriptionStore {
public:
    /// Inserts or replaces one entry. Enforces payload kind per concept and
    /// rejects empty list items.
    void put(DescKey key, Payload payload) {
        bool is_list = std::holds_alternative<std::vector<std::string>>(payload);
        if (is_list != is_list_concept(key.family))
            fail(ErrorKind::Schema, "payload kind does not match concept", to_string(key));
        if (is_list)
            for (const auto& s : std::get<std::vector<std::string>>(payload))
                if (s.empty())
                    fail(ErrorKind::Schema, "EmptyString: list payload contains \"\"", to_string(key));
        entries_[std::move(key)] = std::move(payload);
    }

    const Payload* find(const DescKey& key) const {
        auto it = entries_.find(key);
        return it == entries_.end() ? nullptr : &it->second;
    }

    bool contains(const DescKey& key) const { return entries_.count(key) != 0; }
    bool erase(const DescKey& key) { return entries_.erase(key) != 0; }
    std::size_t size() const { return entries_.size(); }
    auto begin() const { return entries_.begin(); }
    auto end() const { return entries_.end(); }

    bool operator==(const DescriptionStore&) const = default;

private:
    std::map<DescKey, Payload> entries_;
};

/// Parses a descriptions document against a manifest. `null` slots mean the
/// entry is absent; they are never fabricated.
inline DescriptionStore descriptions_from_json(const json& doc, const DatasetManifest& manifest,
                                               const std::string& origin) {
    if (!doc.is_object())
        fail(ErrorKind::Schema, "descriptions must be a JSON object", origin);
    DescriptionStore store;
    for (const auto& [vid, per_concept] : doc.items()) {
        if (!manifest.contains(vid))
            fail(ErrorKind::UnknownVideo, "descriptions reference a video absent from the manifest", vid);
        const auto& video = manifest.video(vid);
        if (!per_concept.is_object())
            fail(ErrorKind::Schema, "per-video entry must be an object", vid);
        for (const auto& [cname, frames] : per_concept.items()) {
            auto family = parse_concept(cname);
            if (!family)
                fail(ErrorKind::Schema, "unknown concept '" + cname + "'", vid);
            if (!frames.is_array())
                fail(ErrorKind::Schema, "concept payload must be a per-frame array", vid + "/" + cname);
            if (frames.size() > video.frame_count())
                fail(ErrorKind::Schema, "more frames than the manifest lists", vid + "/" + cname);
            for (std::size_t f = 0; f < frames.size(); ++f) {
                const auto& p = frames[f];
                DescKey key{vid, f, *family};
                if (p.is_null())
                    continue;
                if (is_list_concept(*family)) {
                    if (!p.is_array())
                        fail(ErrorKind::Schema, "expected a list of strings", to_string(key));
                    std::vector<std::string> items;
                    for (const auto& s : p) {
                        if (!s.is_string())
                            fail(ErrorKind::Schema, "expected a list of strings", to_string(key));
                        items.push_back(s.get<std::string>());
                    }
                    store.put(std::move(key), std::move(items));
                } else {
                    if (!p.is_string())
                        fail(ErrorKind::Schema, "expected a string", to_string(key));
                    store.put(std::move(key), p.get<std::string>());
                }
            }
        }
    }
    return store;
}

inline json to_json(const DescriptionStore& store, const DatasetManifest& manifest) {
    json doc = json::object();
    for (const auto& [key, payload] : store) {
        auto& frames = doc[key.video][std::string(to_string(key.family))];
        if (frames.is_null())
            frames = json::array();
        std::size_t n = manifest.contains(key.video) ? manifest.video(key.video).frame_count()
                                                     : key.frame + 1;
        while (frames.size() < std::max(n, key.frame + 1))
            frames.push_back(nullptr);
        std::visit([&](const auto& v) { frames[key.frame] = v; }, payload);
    }
    return doc;
}

inline DescriptionStore load_descriptions(const std::filesystem::path& path,
                                          const DatasetManifest& manifest) {
    return descriptions_from_json(read_json(path), manifest, path.string());
}

inline void write_descriptions(const DescriptionStore& store, const DatasetManifest& manifest,
                               const std::filesystem::path& path) {
    write_json(path, to_json(store, manifest));
}

struct ValidationReport {
    struct ConceptStatus {
        std::size_t complete_videos = 0;
        std::vector<DescKey> missing;
    };
    std::map<Concept, ConceptStatus> concepts;
    std::vector<std::string> warnings;

    std::size_t total_missing() const {
        std::size_t n = 0;
        for (const auto& [c, s] : concepts)
            n += s.missing.size();
        return n;
    }
    bool complete() const { return total_missing() == 0; }
};

/// Reports completeness per required concept. Entries for concepts outside
/// `required` are ignored and listed as warnings.
inline ValidationReport validate_store(const DescriptionStore& store, const DatasetManifest& manifest,
                                       std::span<const Concept> required = kAllConcepts) {
    ValidationReport report;
    std::set<Concept> wanted(required.begin(), required.end());
    for (auto c : wanted) {
        auto& status = report.concepts[c];
        for (const auto& v : manifest.videos) {
            bool complete = true;
            for (std::size_t f = 0; f < v.frame_count(); ++f) {
                DescKey key{v.id, f, c};
                if (!store.contains(key)) {
                    status.missing.push_back(std::move(key));
                    complete = false;
                }
            }
            if (complete)
                ++status.complete_videos;
        }
    }
    std::set<Concept> extras;
    for (const auto& [key, payload] : store)
        if (!wanted.count(key.family))
            extras.insert(key.family);
    for (auto c : extras)
        report.warnings.push_back("entries for unrequested concept '" + std::string(to_string(c)) +
                                  "' ignored");
    return report;
}

// ---------------------------------------------------------------------------
// Split files

inline constexpr std::size_t kPanelSize = 9;

enum class SplitType { utd, utd_balanced };

constexpr std::string_view to_string(SplitType t) { return t == SplitType::utd ? "utd" : "utd_balanced"; }

struct RemovedSample {
    std::string id;
    std::array<bool, kPanelSize> verdicts{};
    double mean_confidence = 0.0;

    bool operator==(const RemovedSample&) const = default;
};

struct PanelInfo {
    std::string mode;         // "cs" or "ds"
    std::string composition;  // how the nine predictors were formed
    std::vector<std::uint64_t> seeds;
    std::vector<std::string> prompt_variants;

    bool operator==(const PanelInfo&) const = default;
};

struct SplitFile {
    std::string dataset;
    SplitType split_type = SplitType::utd;
    std::vector<std::string> retained;
    std::vector<RemovedSample> removed;
    double removal_fraction = 0.0;
    PanelInfo panel;

    std::size_t test_size() const { return retained.size() + removed.size(); }
    bool operator==(const SplitFile&) const = default;
};

/// Internal consistency: no duplicates, retained and removed disjoint,
/// removal_fraction matching the counts.
inline void check_split(const SplitFile& s) {
    std::set<std::string> seen;
    for (const auto& id : s.retained)
        if (!seen.insert(id).second)
            fail(ErrorKind::Schema, "id listed twice in retained", id);
    for (const auto& r : s.removed)
        if (!seen.insert(r.id).second)
            fail(ErrorKind::Schema, "id is both retained and removed (or removed twice)", r.id);
    double expected = s.test_size() == 0 ? 0.0
                                         : static_cast<double>(s.removed.size()) /
                                               static_cast<double>(s.test_size());
    if (!(s.removal_fraction >= 0.0 && s.removal_fraction <= 1.0) ||
        std::abs(s.removal_fraction - expected) > 1e-12)
        fail(ErrorKind::Schema, "removal_fraction does not match |removed| / |test set|", s.dataset);
}

/// Checks that the split partitions exactly `test_ids`.
inline void check_split_against(const SplitFile& s, std::span<const std::string> test_ids) {
    check_split(s);
    std::set<std::string> expect(test_ids.begin(), test_ids.end());
    std::set<std::string> got(s.retained.begin(), s.retained.end());
    for (const auto& r : s.removed)
        got.insert(r.id);
    if (got != expect)
        fail(ErrorKind::Schema, "split does not partition the test set", s.dataset);
}

inline json to_json(const SplitFile& s) {
    json removed = json::array();
    for (const auto& r : s.removed)
        removed.push_back({{"id", r.id},
                           {"verdicts", std::vector<bool>(r.verdicts.begin(), r.verdicts.end())},
                           {"mean_confidence", r.mean_confidence}});
    return json{{"dataset", s.dataset},
                {"split_type", to_string(s.split_type)},
                {"retained", s.retained},
                {"removed", std::move(removed)},
                {"removal_fraction", s.removal_fraction},
                {"panel",
                 {{"mode", s.panel.mode},
                  {"composition", s.panel.composition},
                  {"seeds", s.panel.seeds},
                  {"prompt_variants", s.panel.prompt_variants}}}};
}

inline SplitFile split_from_json(const json& doc, const std::string& origin) {
    SplitFile s;
    s.dataset = field<std::string>(doc, "dataset", origin);
    auto type = field<std::string>(doc, "split_type", origin);
    if (type == "utd")
        s.split_type = SplitType::utd;
    else if (type == "utd_balanced")
        s.split_type = SplitType::utd_balanced;
    else
        fail(ErrorKind::Schema, "unknown split_type '" + type + "'", origin);
    s.retained = field<std::vector<std::string>>(doc, "retained", origin);
    auto removed = field<json>(doc, "removed", origin);
    if (!removed.is_array())
        fail(ErrorKind::Schema, "removed must be an array", origin);
    for (const auto& jr : removed) {
        RemovedSample r;
        r.id = field<std::string>(jr, "id", origin);
        auto verdicts = field<std::vector<bool>>(jr, "verdicts", r.id);
        if (verdicts.size() != kPanelSize)
            fail(ErrorKind::Schema, "expected 9 verdicts", r.id);
        std::copy(verdicts.begin(), verdicts.end(), r.verdicts.begin());
        r.mean_confidence = field<double>(jr, "mean_confidence", r.id);
        s.removed.push_back(std::move(r));
    }
    s.removal_fraction = field<double>(doc, "removal_fraction", origin);
    auto panel = field<json>(doc, "panel", origin);
    s.panel.mode = panel.value("mode", "");
    s.panel.composition = panel.value("composition", "");
    s.panel.seeds = field<std::vector<std::uint64_t>>(panel, "seeds", origin);
    s.panel.prompt_variants = field<std::vector<std::string>>(panel, "prompt_variants", origin);
    check_split(s);
    return s;
}

/// Sorts ids so identical splits serialize to identical bytes.
inline SplitFile canonicalized(SplitFile s) {
    std::sort(s.retained.begin(), s.retained.end());
    std::sort(s.removed.begin(), s.removed.end(),
              [](const RemovedSample& a, const RemovedSample& b) { return a.id < b.id; });
    return s;
}

inline void write_split(const SplitFile& split, const std::filesystem::path& path) {
    check_split(split);
    write_json(path, to_json(canonicalized(split)));
}

inline SplitFile load_split(const std::filesystem::path& path) {
    return split_from_json(read_json(path), path.string());
}

} // namespace utd
