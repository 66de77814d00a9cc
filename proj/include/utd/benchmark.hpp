#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "utd/biaseval.hpp"
#include "utd/corpus.hpp"
#include "utd/error.hpp"
#include "utd/json_io.hpp"

namespace utd {

/// Externally produced predictions for one model over a full test set.
struct PredictionSet {
    std::string model;
    Task task = Task::classification;
    std::map<std::string, std::size_t> labels;              // classification: id -> class
    std::map<std::string, std::vector<std::string>> ranked; // retrieval: query id -> video ids

    std::size_t size() const { return task == Task::classification ? labels.size() : ranked.size(); }
    bool contains(const std::string& id) const {
        return task == Task::classification ? labels.contains(id) : ranked.contains(id);
    }
};

/// Parses JSONL predictions. An optional first record `{"model": name}`
/// names the model; otherwise the file stem does.
inline PredictionSet parse_predictions(std::string_view text, const DatasetManifest& manifest,
                                       const std::string& origin, std::string default_model) {
    PredictionSet ps;
    ps.task = manifest.task;
    ps.model = std::move(default_model);

    std::set<std::string> videos, queries;
    for (const auto* v : manifest.videos_in(SplitRole::test))
        videos.insert(v->id);
    for (const auto& q : manifest.test_queries())
        queries.insert(q.id);

    std::size_t line_no = 0;
    std::istringstream in{std::string(text)};
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos)
            continue;
        const auto where = origin + ":" + std::to_string(line_no);
        json rec = parse_json(line, where);
        if (!rec.is_object())
            fail(ErrorKind::Parse, "prediction record must be an object", where);
        if (first && rec.contains("model") && !rec.contains("id") && !rec.contains("query_id")) {
            ps.model = field<std::string>(rec, "model", where);
            first = false;
            continue;
        }
        first = false;
        if (ps.task == Task::classification) {
            auto id = field<std::string>(rec, "id", where);
            if (!videos.contains(id))
                fail(ErrorKind::UnknownVideo, "prediction for an id outside the test set", id);
            const auto& pred = rec.contains("pred") ? rec.at("pred") : json();
            if (!pred.is_number_integer())
                fail(ErrorKind::Schema, "pred must be an integer class index", id);
            auto k = pred.get<long long>();
            if (k < 0 || static_cast<std::size_t>(k) >= manifest.classes.size())
                fail(ErrorKind::UnknownClass,
                     "class index " + std::to_string(k) + " with " + std::to_string(manifest.classes.size()) +
                         " classes",
                     id);
            if (!ps.labels.emplace(id, static_cast<std::size_t>(k)).second)
                fail(ErrorKind::Schema, "duplicate prediction", id);
        } else {
            auto id = field<std::string>(rec, "query_id", where);
            if (!queries.contains(id))
                fail(ErrorKind::UnknownVideo, "prediction for a query outside the test set", id);
            auto list = field<std::vector<std::string>>(rec, "ranked", id);
            if (list.empty())
                fail(ErrorKind::Schema, "ranked list is empty", id);
            for (const auto& v : list)
                if (!videos.contains(v))
                    fail(ErrorKind::UnknownVideo, "ranked video is not a test video", v);
            if (!ps.ranked.emplace(id, std::move(list)).second)
                fail(ErrorKind::Schema, "duplicate prediction", id);
        }
    }
    for (const auto& id : manifest.test_sample_ids())
        if (!ps.contains(id))
            fail(ErrorKind::MissingSample, "prediction file misses a test sample", id);
    return ps;
}

inline PredictionSet load_predictions(const std::filesystem::path& path, const DatasetManifest& manifest) {
    return parse_predictions(read_file(path), manifest, path.string(), path.stem().string());
}

/// Accuracy (classification) or recall@1 (retrieval) over exactly `members`.
inline double eval_on_split(const PredictionSet& preds, std::span<const std::string> members,
                            const DatasetManifest& manifest) {
    std::map<std::string, std::string> query_video;
    if (preds.task == Task::retrieval)
        for (const auto& q : manifest.test_queries())
            query_video.emplace(q.id, q.video_id);
    std::vector<PerSampleResult> results;
    results.reserve(members.size());
    for (const auto& id : members) {
        if (!preds.contains(id))
            fail(ErrorKind::MissingSample, "no prediction for split member", id);
        bool correct;
        if (preds.task == Task::classification)
            correct = preds.labels.at(id) == *manifest.video(id).label_index;
        else
            correct = preds.ranked.at(id).front() == query_video.at(id);
        results.push_back({id, 0, 0, correct, 0.0});
    }
    return dataset_metric(results);
}

struct NamedSplit {
    std::string name;
    SplitFile split;
};

struct DeltaRow {
    std::string model;
    std::string split;
    double full = 0.0;
    double split_metric = 0.0;
    double delta = 0.0;

    bool operator==(const DeltaRow&) const = default;
};

struct DeltaTable {
    std::string dataset;
    std::string metric;
    std::vector<DeltaRow> rows;

    bool operator==(const DeltaTable&) const = default;
};

inline DeltaTable delta_table(std::span<const PredictionSet> preds, const DatasetManifest& manifest,
                              std::span<const NamedSplit> splits) {
    DeltaTable t;
    t.dataset = manifest.name;
    t.metric = manifest.task == Task::classification ? "accuracy" : "recall@1";
    const auto full_ids = manifest.test_sample_ids();
    for (const auto& s : splits) {
        if (s.split.dataset != manifest.name)
            fail(ErrorKind::Precondition,
                 "split '" + s.name + "' belongs to dataset '" + s.split.dataset + "', not '" + manifest.name + "'");
        check_split_against(s.split, full_ids);
    }
    for (const auto& p : preds) {
        const double full = eval_on_split(p, full_ids, manifest);
        for (const auto& s : splits) {
            const double split = eval_on_split(p, s.split.retained, manifest);
            t.rows.push_back({p.model, s.name, full, split, split - full});
        }
    }
    return t;
}

// ---------------------------------------------------------------------------
// Rendering

namespace detail {

inline std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n\r") == std::string::npos)
        return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"')
            out += '"';
        out += c;
    }
    return out + "\"";
}

inline std::vector<std::string> csv_split_line(const std::string& line, const std::string& where) {
    std::vector<std::string> out;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        char c = line[i];
        if (quoted) {
            if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                cur += '"';
                ++i;
            } else if (c == '"') {
                quoted = false;
            } else {
                cur += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            out.push_back(std::move(cur));
            cur.clear();
        } else {
            cur += c;
        }
    }
    if (quoted)
        fail(ErrorKind::Parse, "unterminated quote", where);
    out.push_back(std::move(cur));
    return out;
}

inline double parse_double(const std::string& s, const std::string& where) {
    std::size_t used = 0;
    double v;
    try {
        v = std::stod(s, &used);
    } catch (const std::exception&) {
        fail(ErrorKind::Parse, "not a number: '" + s + "'", where);
    }
    if (used != s.size())
        fail(ErrorKind::Parse, "trailing characters after number: '" + s + "'", where);
    return v;
}

} // namespace detail

inline constexpr std::string_view kDeltaCsvHeader = "model,split,full,split_metric,delta";

inline std::string render_csv(const DeltaTable& t) {
    std::string out(kDeltaCsvHeader);
    out += '\n';
    for (const auto& r : t.rows)
        out += detail::csv_field(r.model) + ',' + detail::csv_field(r.split) + ',' + format_full(r.full) + ',' +
               format_full(r.split_metric) + ',' + format_full(r.delta) + '\n';
    return out;
}

inline DeltaTable parse_delta_csv(std::string_view text, const std::string& origin = "<csv>") {
    DeltaTable t;
    std::istringstream in{std::string(text)};
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
        ++n;
        if (!line.empty() && line.back() == '\r')
            line.pop_back();
        if (n == 1) {
            if (line != kDeltaCsvHeader)
                fail(ErrorKind::Parse, "unexpected CSV header", origin);
            continue;
        }
        if (line.empty())
            continue;
        const auto where = origin + ":" + std::to_string(n);
        auto f = detail::csv_split_line(line, where);
        if (f.size() != 5)
            fail(ErrorKind::Parse, "expected 5 fields", where);
        t.rows.push_back({f[0], f[1], detail::parse_double(f[2], where), detail::parse_double(f[3], where),
                          detail::parse_double(f[4], where)});
    }
    if (n == 0)
        fail(ErrorKind::Parse, "empty CSV", origin);
    return t;
}

inline std::string render_markdown(const DeltaTable& t) {
    std::vector<std::string> models, splits;
    std::map<std::pair<std::string, std::string>, const DeltaRow*> at;
    std::map<std::string, double> full;
    for (const auto& r : t.rows) {
        if (std::find(models.begin(), models.end(), r.model) == models.end())
            models.push_back(r.model);
        if (std::find(splits.begin(), splits.end(), r.split) == splits.end())
            splits.push_back(r.split);
        at[{r.model, r.split}] = &r;
        full[r.model] = r.full;
    }
    std::string out = "| model | full |";
    std::string rule = "|---|---:|";
    for (const auto& s : splits) {
        out += " " + s + " | delta |";
        rule += "---:|---:|";
    }
    out += "\n" + rule + "\n";
    char buf[32];
    for (const auto& m : models) {
        out += "| " + m + " | " + format_1(full[m]) + " |";
        for (const auto& s : splits) {
            auto it = at.find({m, s});
            if (it == at.end()) {
                out += " - | - |";
                continue;
            }
            std::snprintf(buf, sizeof buf, "%+.1f", it->second->delta);
            out += " " + format_1(it->second->split_metric) + " | " + buf + " |";
        }
        out += "\n";
    }
    return out;
}

inline json to_json(const DeltaTable& t) {
    json rows = json::array();
    for (const auto& r : t.rows)
        rows.push_back({{"model", r.model},
                        {"split", r.split},
                        {"full", r.full},
                        {"split_metric", r.split_metric},
                        {"delta", r.delta}});
    return json{{"dataset", t.dataset}, {"metric", t.metric}, {"rows", std::move(rows)}};
}

} // namespace utd
