#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <cstdio>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "utd/corpus.hpp"
#include "utd/embed.hpp"
#include "utd/error.hpp"
#include "utd/json_io.hpp"
#include "utd/prompts.hpp"
#include "utd/represent.hpp"
#include "utd/trainlin.hpp"

namespace utd {

enum class BiasMode { common_sense, dataset_bias };

constexpr std::string_view to_string(BiasMode m) {
    return m == BiasMode::common_sense ? "common_sense" : "dataset_bias";
}

/// Accepts "cs"/"ds" as well as the long names.
inline std::optional<BiasMode> parse_bias_mode(std::string_view s) {
    if (s == "cs" || s == "common_sense") return BiasMode::common_sense;
    if (s == "ds" || s == "dataset_bias") return BiasMode::dataset_bias;
    return std::nullopt;
}

struct Top1 {
    std::size_t index = 0;
    double score = 0.0;
};

/// Highest-cosine candidate; the lowest index wins exact ties.
inline Top1 best_match(std::span<const float> query, std::span<const Embedding> candidates) {
    require(!candidates.empty(), "no candidates to rank");
    Top1 best{0, cosine(query, candidates[0])};
    for (std::size_t i = 1; i < candidates.size(); ++i) {
        double s = cosine(query, candidates[i]);
        if (s > best.score)
            best = {i, s};
    }
    return best;
}

inline Top1 classify_zero_shot(std::span<const float> video, std::span<const Embedding> classes) {
    require(!classes.empty(), "class matrix is empty");
    return best_match(video, classes);
}

inline Top1 retrieve_top1(std::span<const float> query, std::span<const Embedding> videos) {
    require(!videos.empty(), "retrieval gallery is empty");
    return best_match(query, videos);
}

struct PerSampleResult {
    std::string id;
    std::size_t predicted = 0;
    std::size_t truth = 0;
    bool correct = false;
    double score = 0.0;

    bool operator==(const PerSampleResult&) const = default;
};

/// 100 x mean correctness.
inline double dataset_metric(std::span<const PerSampleResult> results) {
    if (results.empty())
        fail(ErrorKind::EmptyResults, "no per-sample results to aggregate");
    std::size_t correct = 0;
    for (const auto& r : results)
        correct += r.correct ? 1 : 0;
    return 100.0 * static_cast<double>(correct) / static_cast<double>(results.size());
}

struct EvalContext {
    const DatasetManifest& manifest;
    const DescriptionStore& store;
    Embedder& embedder;
    TrainConfig train{};
};

namespace detail {

/// One vector per video (middle, average, sequence) or one per frame
/// (max-score frame).
inline std::vector<std::vector<Embedding>> represent_videos(EvalContext& ctx,
                                                            const std::vector<const VideoEntry*>& videos,
                                                            const RepresentationSpec& spec,
                                                            const InstructionPrompt& instruction) {
    std::vector<std::string> texts;
    std::vector<std::size_t> offsets{0};
    for (const auto* v : videos) {
        auto rep = build(ctx.store, *v, spec);
        if (auto* single = std::get_if<std::string>(&rep)) {
            texts.push_back(std::move(*single));
        } else {
            for (auto& t : std::get<std::vector<std::string>>(rep))
                texts.push_back(std::move(t));
        }
        offsets.push_back(texts.size());
    }
    auto vecs = ctx.embedder.embed_many(texts, instruction);
    std::vector<std::vector<Embedding>> out(videos.size());
    for (std::size_t i = 0; i < videos.size(); ++i) {
        std::vector<Embedding> frames(std::make_move_iterator(vecs.begin() + static_cast<long>(offsets[i])),
                                      std::make_move_iterator(vecs.begin() + static_cast<long>(offsets[i + 1])));
        if (spec.temporal == Temporal::avg_over_frames)
            out[i] = {aggregate_avg(frames)};
        else
            out[i] = std::move(frames);
    }
    return out;
}

/// Max-score frame for one sample: the best-scoring frame among those
/// predicted correctly, else the best-scoring frame overall.
inline PerSampleResult pick_max_frame(std::string id, std::size_t truth, const std::vector<Top1>& per_frame) {
    std::optional<std::size_t> chosen;
    for (std::size_t f = 0; f < per_frame.size(); ++f)
        if (per_frame[f].index == truth && (!chosen || per_frame[f].score > per_frame[*chosen].score))
            chosen = f;
    if (!chosen) {
        chosen = 0;
        for (std::size_t f = 1; f < per_frame.size(); ++f)
            if (per_frame[f].score > per_frame[*chosen].score)
                chosen = f;
    }
    const auto& t = per_frame[*chosen];
    return {std::move(id), t.index, truth, t.index == truth, t.score};
}

inline Top1 probe_top1(const LinearModel& model, std::span<const float> x) {
    auto p = predict_proba(model, x);
    auto k = argmax(p);
    return {k, p[k]};
}

} // namespace detail

/// Per-sample correctness of one concept x temporal representation.
inline std::vector<PerSampleResult> eval_temporal(EvalContext& ctx, const RepresentationSpec& spec,
                                                  BiasMode mode) {
    const auto& m = ctx.manifest;
    const auto arity = arity_of(spec.temporal);
    const auto video_instr = video_instruction(m.task, spec.family, arity);
    const auto test = m.videos_in(SplitRole::test);
    if (test.empty())
        fail(ErrorKind::EmptyTestSet, "manifest has no test videos", m.name);
    const bool per_frame = spec.temporal == Temporal::max_score_frame;
    std::vector<PerSampleResult> results;

    if (m.task == Task::classification) {
        auto test_vecs = detail::represent_videos(ctx, test, spec, video_instr);
        std::function<Top1(std::span<const float>)> score;
        LinearModel probe;
        std::vector<Embedding> classes;
        if (mode == BiasMode::common_sense) {
            classes = ctx.embedder.embed_label_set(m.classes, target_instruction(m.task, arity));
            score = [&](std::span<const float> x) { return classify_zero_shot(x, classes); };
        } else {
            auto train = m.videos_in(SplitRole::train);
            if (train.empty())
                fail(ErrorKind::Precondition, "dataset bias needs a train split", m.name);
            // The max-score frame reuses the middle-frame probe, so every
            // frame is scored by the same classifier.
            RepresentationSpec train_spec = spec;
            if (per_frame)
                train_spec.temporal = Temporal::middle_frame;
            auto train_vecs = detail::represent_videos(ctx, train, train_spec, video_instr);
            std::vector<Embedding> xs;
            std::vector<std::size_t> ys;
            for (std::size_t i = 0; i < train.size(); ++i) {
                xs.push_back(train_vecs[i].front());
                ys.push_back(*train[i]->label_index);
            }
            probe = train_softmax(xs, ys, m.classes.size(), ctx.train);
            score = [&](std::span<const float> x) { return detail::probe_top1(probe, x); };
        }
        for (std::size_t i = 0; i < test.size(); ++i) {
            const auto truth = *test[i]->label_index;
            if (per_frame) {
                std::vector<Top1> frames;
                for (const auto& f : test_vecs[i])
                    frames.push_back(score(f));
                results.push_back(detail::pick_max_frame(test[i]->id, truth, frames));
            } else {
                auto t = score(test_vecs[i].front());
                results.push_back({test[i]->id, t.index, truth, t.index == truth, t.score});
            }
        }
        return results;
    }

    if (mode == BiasMode::dataset_bias)
        fail(ErrorKind::Precondition, "dataset bias is defined for classification datasets only");
    auto queries = m.test_queries();
    std::vector<std::string> qtexts;
    for (const auto& q : queries)
        qtexts.push_back(q.text);
    auto qvecs = ctx.embedder.embed_many(qtexts, target_instruction(m.task, arity));
    auto video_vecs = detail::represent_videos(ctx, test, spec, video_instr);
    std::map<std::string, std::size_t> gallery_index;
    for (std::size_t i = 0; i < test.size(); ++i)
        gallery_index[test[i]->id] = i;

    std::vector<Embedding> gallery(test.size());
    for (std::size_t i = 0; i < test.size(); ++i) {
        if (!per_frame) {
            gallery[i] = video_vecs[i].front();
            continue;
        }
        // Oracle frame: the one closest to any of the video's own captions.
        std::size_t best_frame = 0;
        double best = -2.0;
        for (std::size_t f = 0; f < video_vecs[i].size(); ++f)
            for (std::size_t q = 0; q < queries.size(); ++q) {
                if (queries[q].video_id != test[i]->id)
                    continue;
                double s = cosine(qvecs[q], video_vecs[i][f]);
                if (s > best) {
                    best = s;
                    best_frame = f;
                }
            }
        gallery[i] = video_vecs[i][best_frame];
    }
    for (std::size_t q = 0; q < queries.size(); ++q) {
        auto t = retrieve_top1(qvecs[q], gallery);
        auto truth = gallery_index.at(queries[q].video_id);
        results.push_back({queries[q].id, t.index, truth, t.index == truth, t.score});
    }
    return results;
}

// ---------------------------------------------------------------------------
// Bias grid

struct GridCell {
    RepresentationSpec spec;
    double value = 0.0;
    std::optional<double> delta_vs_anchor;
    std::vector<PerSampleResult> results;
};

struct BiasReport {
    std::string dataset;
    Task task = Task::classification;
    BiasMode mode = BiasMode::common_sense;
    std::string metric;  // "accuracy" or "recall@1"
    std::string embedding_model;
    std::vector<GridCell> cells;

    const GridCell* cell(const RepresentationSpec& s) const {
        for (const auto& c : cells)
            if (c.spec == s)
                return &c;
        return nullptr;
    }
};

inline constexpr RepresentationSpec kAnchorSpec{Concept::obj_comp_act, Temporal::seq_of_frames};

inline BiasReport bias_grid(EvalContext& ctx, std::span<const Concept> concepts, std::span<const Temporal> temporals,
                            BiasMode mode) {
    BiasReport report;
    report.dataset = ctx.manifest.name;
    report.task = ctx.manifest.task;
    report.mode = mode;
    report.metric = ctx.manifest.task == Task::classification ? "accuracy" : "recall@1";
    report.embedding_model = ctx.embedder.model();
    for (auto c : concepts)
        for (auto t : temporals) {
            GridCell cell;
            cell.spec = {c, t};
            cell.results = eval_temporal(ctx, cell.spec, mode);
            cell.value = dataset_metric(cell.results);
            report.cells.push_back(std::move(cell));
        }
    if (const auto* anchor = report.cell(kAnchorSpec)) {
        const double a = anchor->value;
        for (auto& cell : report.cells)
            cell.delta_vs_anchor = cell.value - a;
    }
    return report;
}

inline json to_json(const BiasReport& r) {
    json cells = json::array();
    for (const auto& c : r.cells) {
        json results = json::array();
        for (const auto& s : c.results)
            results.push_back({{"id", s.id}, {"predicted", s.predicted}, {"truth", s.truth},
                               {"correct", s.correct}, {"score", s.score}});
        cells.push_back({{"concept", to_string(c.spec.family)},
                         {"temporal", to_string(c.spec.temporal)},
                         {"value", c.value},
                         {"delta_vs_anchor", c.delta_vs_anchor ? json(*c.delta_vs_anchor) : json(nullptr)},
                         {"results", std::move(results)}});
    }
    return json{{"dataset", r.dataset},
                {"task", to_string(r.task)},
                {"mode", to_string(r.mode)},
                {"metric", r.metric},
                {"anchor", to_string(kAnchorSpec)},
                {"strong_model", {{"embedding_model", r.embedding_model},
                                  {"predictor", r.mode == BiasMode::common_sense
                                                    ? "zero-shot cosine top-1"
                                                    : "linear softmax probe on train split"}}},
                {"cells", std::move(cells)}};
}

inline std::string format_full(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline std::string format_1(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.1f", v);
    return buf;
}

inline std::string render_csv(const BiasReport& r) {
    std::string out = "concept,temporal," + r.metric + ",delta_vs_anchor\n";
    for (const auto& c : r.cells)
        out += std::string(to_string(c.spec.family)) + "," + std::string(to_string(c.spec.temporal)) + "," +
               format_full(c.value) + "," + (c.delta_vs_anchor ? format_full(*c.delta_vs_anchor) : "") + "\n";
    return out;
}

/// Concepts as rows, temporal setups as columns; deltas against the
/// obj_comp_act / seq_of_frames cell in parentheses.
inline std::string render_markdown(const BiasReport& r) {
    std::vector<Concept> concepts;
    std::vector<Temporal> temporals;
    for (const auto& c : r.cells) {
        if (std::find(concepts.begin(), concepts.end(), c.spec.family) == concepts.end())
            concepts.push_back(c.spec.family);
        if (std::find(temporals.begin(), temporals.end(), c.spec.temporal) == temporals.end())
            temporals.push_back(c.spec.temporal);
    }
    std::ostringstream out;
    out << "## " << r.dataset << " - " << to_string(r.mode) << " (" << r.metric << ")\n\n| concept |";
    for (auto t : temporals)
        out << " " << to_string(t) << " |";
    out << "\n|---|";
    for (std::size_t i = 0; i < temporals.size(); ++i)
        out << "---:|";
    out << "\n";
    for (auto c : concepts) {
        out << "| " << to_string(c) << " |";
        for (auto t : temporals) {
            const auto* cell = r.cell({c, t});
            if (!cell) {
                out << " |";
                continue;
            }
            out << " " << format_1(cell->value);
            if (cell->delta_vs_anchor && !(cell->spec == kAnchorSpec)) {
                auto d = *cell->delta_vs_anchor;
                out << " (" << (d >= 0 ? "+" : "") << format_1(d) << ")";
            }
            out << " |";
        }
        out << "\n";
    }
    return out.str();
}

} // namespace utd
