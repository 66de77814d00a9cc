#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "utd/biaseval.hpp"
#include "utd/corpus.hpp"
#include "utd/embed.hpp"
#include "utd/prompts.hpp"
#include "utd/represent.hpp"
#include "utd/trainlin.hpp"

namespace utd {

inline constexpr std::array<std::uint64_t, 3> kDefaultPanelSeeds{1, 2, 3};

/// Splits are built on objects over the frame sequence unless another
/// concept is requested.
inline constexpr Concept kDebiasConcept = Concept::objects;

struct PanelMember {
    std::string id;
    int video_variant = 0;
    std::optional<int> query_variant;      // retrieval
    std::optional<std::uint64_t> seed;     // classification
    std::optional<LinearModel> model;      // classification
};

/// Nine predictors. Classification: 3 video-instruction variants x 3
/// bootstrap-trained probes. Retrieval: 3 caption variants x 3 video
/// variants, zero-shot.
struct PredictorPanel {
    Task task = Task::classification;
    BiasMode mode = BiasMode::dataset_bias;
    Concept family = kDebiasConcept;
    std::array<std::uint64_t, 3> seeds = kDefaultPanelSeeds;
    std::vector<PanelMember> members;

    std::string composition() const {
        return task == Task::classification ? "3 video-instruction variants x 3 bootstrap probes"
                                            : "3 caption-instruction variants x 3 video-instruction variants";
    }

    std::vector<std::string> prompt_variants() const {
        std::vector<std::string> out;
        for (const auto& p : panel_video_instructions(task))
            out.push_back("video:" + p.text);
        if (task == Task::retrieval)
            for (const auto& p : panel_query_instructions())
                out.push_back("query:" + p.text);
        return out;
    }

    PanelInfo info() const {
        return {mode == BiasMode::common_sense ? "cs" : "ds", composition(),
                std::vector<std::uint64_t>(seeds.begin(), seeds.end()), prompt_variants()};
    }
};

/// The task's default debiasing mode: dataset bias for classification,
/// common-sense bias for retrieval.
constexpr BiasMode default_debias_mode(Task t) {
    return t == Task::classification ? BiasMode::dataset_bias : BiasMode::common_sense;
}

namespace detail {

inline std::vector<Embedding> debias_video_vectors(EvalContext& ctx, const std::vector<const VideoEntry*>& videos,
                                                   Concept family, const InstructionPrompt& instruction) {
    std::vector<std::string> texts;
    texts.reserve(videos.size());
    for (const auto* v : videos)
        texts.push_back(sequence_of_frames(ctx.store, *v, family));
    return ctx.embedder.embed_many(texts, instruction);
}

} // namespace detail

inline PredictorPanel build_panel(EvalContext& ctx, BiasMode mode,
                                  const std::array<std::uint64_t, 3>& seeds = kDefaultPanelSeeds,
                                  Concept family = kDebiasConcept) {
    const auto& m = ctx.manifest;
    PredictorPanel panel;
    panel.task = m.task;
    panel.mode = mode;
    panel.seeds = seeds;
    panel.family = family;
    if (mode != default_debias_mode(m.task))
        fail(ErrorKind::Precondition,
             m.task == Task::classification
                 ? "classification splits are built against dataset bias (mode ds)"
                 : "retrieval splits are built against common-sense bias (mode cs)");

    if (m.task == Task::retrieval) {
        for (int q = 0; q < 3; ++q)
            for (int v = 0; v < 3; ++v)
                panel.members.push_back({"q" + std::to_string(q) + "-v" + std::to_string(v), v, q, {}, {}});
        return panel;
    }

    auto train = m.videos_in(SplitRole::train);
    if (train.empty())
        fail(ErrorKind::Precondition, "classification panel needs a train split", m.name);
    std::vector<std::size_t> labels;
    for (const auto* v : train)
        labels.push_back(*v->label_index);
    auto instructions = panel_video_instructions(m.task);
    for (int v = 0; v < 3; ++v) {
        auto features = detail::debias_video_vectors(ctx, train, family, instructions[v]);
        for (auto seed : seeds) {
            auto idx = bootstrap_sample(features.size(), seed);
            std::vector<Embedding> xs;
            std::vector<std::size_t> ys;
            xs.reserve(idx.size());
            for (auto i : idx) {
                xs.push_back(features[i]);
                ys.push_back(labels[i]);
            }
            TrainConfig cfg = ctx.train;
            cfg.seed = seed;
            LinearModel model;
            try {
                model = train_softmax(xs, ys, m.classes.size(), cfg);
            } catch (const Error& e) {
                fail(ErrorKind::TrainFailure, e.what(), "variant " + std::to_string(v));
            }
            panel.members.push_back(
                {"v" + std::to_string(v) + "-seed" + std::to_string(seed), v, {}, seed, std::move(model)});
        }
    }
    return panel;
}

struct VerdictMatrix {
    std::vector<std::string> sample_ids;
    std::vector<std::string> predictor_ids;
    std::vector<std::array<bool, kPanelSize>> correct;
    // Classification: probability of the true class. Retrieval: cosine of the
    // true video minus the best other video.
    std::vector<std::array<double, kPanelSize>> confidence;

    std::size_t rows() const { return sample_ids.size(); }

    bool unanimous_correct(std::size_t row) const {
        return std::all_of(correct[row].begin(), correct[row].end(), [](bool b) { return b; });
    }

    double mean_confidence(std::size_t row) const {
        double s = 0.0;
        for (double c : confidence[row])
            s += c;
        return s / static_cast<double>(kPanelSize);
    }
};

struct Verdict {
    bool correct = false;
    double confidence = 0.0;
};

/// Fills an N x 9 matrix from a per-(sample, predictor) judgement.
inline VerdictMatrix assemble_verdicts(std::vector<std::string> sample_ids, std::vector<std::string> predictor_ids,
                                       const std::function<Verdict(std::size_t, std::size_t)>& judge) {
    if (sample_ids.empty())
        fail(ErrorKind::EmptyTestSet, "no test samples to judge");
    if (predictor_ids.size() != kPanelSize)
        fail(ErrorKind::Precondition, "a panel has exactly nine predictors");
    VerdictMatrix vm;
    vm.sample_ids = std::move(sample_ids);
    vm.predictor_ids = std::move(predictor_ids);
    vm.correct.resize(vm.sample_ids.size());
    vm.confidence.resize(vm.sample_ids.size());
    for (std::size_t i = 0; i < vm.sample_ids.size(); ++i)
        for (std::size_t j = 0; j < kPanelSize; ++j) {
            auto v = judge(i, j);
            vm.correct[i][j] = v.correct;
            vm.confidence[i][j] = v.confidence;
        }
    return vm;
}

inline VerdictMatrix verdicts(const PredictorPanel& panel, EvalContext& ctx) {
    const auto& m = ctx.manifest;
    if (panel.members.size() != kPanelSize)
        fail(ErrorKind::Precondition, "panel must hold nine predictors");
    auto test = m.videos_in(SplitRole::test);
    if (test.empty())
        fail(ErrorKind::EmptyTestSet, "manifest has no test videos", m.name);
    std::vector<std::string> predictor_ids;
    for (const auto& p : panel.members)
        predictor_ids.push_back(p.id);

    std::array<std::vector<Embedding>, 3> video_vecs;
    auto video_instr = panel_video_instructions(m.task);
    for (int v = 0; v < 3; ++v)
        video_vecs[v] = detail::debias_video_vectors(ctx, test, panel.family, video_instr[v]);

    if (m.task == Task::classification) {
        std::vector<std::string> ids;
        for (const auto* v : test)
            ids.push_back(v->id);
        return assemble_verdicts(std::move(ids), std::move(predictor_ids), [&](std::size_t i, std::size_t j) {
            const auto& member = panel.members[j];
            auto p = predict_proba(*member.model, video_vecs[member.video_variant][i]);
            auto truth = *test[i]->label_index;
            return Verdict{argmax(p) == truth, p[truth]};
        });
    }

    auto queries = m.test_queries();
    std::vector<std::string> qtexts, ids;
    for (const auto& q : queries) {
        qtexts.push_back(q.text);
        ids.push_back(q.id);
    }
    std::array<std::vector<Embedding>, 3> query_vecs;
    auto query_instr = panel_query_instructions();
    for (int q = 0; q < 3; ++q)
        query_vecs[q] = ctx.embedder.embed_many(qtexts, query_instr[q]);
    std::map<std::string, std::size_t> gallery_index;
    for (std::size_t i = 0; i < test.size(); ++i)
        gallery_index[test[i]->id] = i;
    return assemble_verdicts(std::move(ids), std::move(predictor_ids), [&](std::size_t i, std::size_t j) {
        const auto& member = panel.members[j];
        const auto& qv = query_vecs[*member.query_variant][i];
        const auto& gallery = video_vecs[member.video_variant];
        auto truth = gallery_index.at(queries[i].video_id);
        auto top = retrieve_top1(qv, gallery);
        double best_other = -1.0;
        for (std::size_t g = 0; g < gallery.size(); ++g)
            if (g != truth)
                best_other = std::max(best_other, cosine(qv, gallery[g]));
        double margin = cosine(qv, gallery[truth]) - (gallery.size() > 1 ? best_other : -1.0);
        return Verdict{top.index == truth, margin};
    });
}

// ---------------------------------------------------------------------------
// Agreement

/// Fleiss' kappa over an items x categories count table with the same number
/// of raters per item. Returns 1.0 when expected agreement is 1 (every
/// rating falls in one category), where the ratio is undefined.
inline double fleiss_kappa(const std::vector<std::vector<std::size_t>>& counts) {
    require(!counts.empty(), "fleiss_kappa needs at least one item");
    const std::size_t k = counts.front().size();
    std::size_t n = 0;
    for (auto c : counts.front())
        n += c;
    require(n >= 2 && k >= 2, "fleiss_kappa needs at least two raters and two categories");
    const double N = static_cast<double>(counts.size());
    const double nd = static_cast<double>(n);
    std::vector<double> category_totals(k, 0.0);
    double p_bar = 0.0;
    for (const auto& row : counts) {
        require(row.size() == k, "ragged count table");
        std::size_t total = 0;
        double sq = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
            total += row[j];
            sq += static_cast<double>(row[j]) * static_cast<double>(row[j]);
            category_totals[j] += static_cast<double>(row[j]);
        }
        require(total == n, "every item needs the same number of ratings");
        p_bar += (sq - nd) / (nd * (nd - 1.0));
    }
    p_bar /= N;
    double p_e = 0.0;
    for (double t : category_totals) {
        double p = t / (N * nd);
        p_e += p * p;
    }
    if (1.0 - p_e <= 1e-15)
        return 1.0;
    return (p_bar - p_e) / (1.0 - p_e);
}

/// Kappa of the nine predictors with categories correct / incorrect.
inline double fleiss_kappa(const VerdictMatrix& vm) {
    std::vector<std::vector<std::size_t>> counts;
    counts.reserve(vm.rows());
    for (const auto& row : vm.correct) {
        auto c = static_cast<std::size_t>(std::count(row.begin(), row.end(), true));
        counts.push_back({c, kPanelSize - c});
    }
    return fleiss_kappa(counts);
}

// ---------------------------------------------------------------------------
// Splits

/// Removes every sample all nine predictors get right.
inline SplitFile build_utd_split(const VerdictMatrix& vm, std::string dataset, PanelInfo panel) {
    SplitFile s;
    s.dataset = std::move(dataset);
    s.split_type = SplitType::utd;
    s.panel = std::move(panel);
    for (std::size_t i = 0; i < vm.rows(); ++i) {
        if (vm.unanimous_correct(i))
            s.removed.push_back({vm.sample_ids[i], vm.correct[i], vm.mean_confidence(i)});
        else
            s.retained.push_back(vm.sample_ids[i]);
    }
    s.removal_fraction = vm.rows() == 0 ? 0.0 : static_cast<double>(s.removed.size()) / static_cast<double>(vm.rows());
    return canonicalized(std::move(s));
}

/// Largest-remainder apportionment of `total` over groups of the given
/// sizes. Equal remainders go to the smaller group first, then the lower
/// index. Every quota stays within its group size.
inline std::vector<std::size_t> apportion(std::size_t total, std::span<const std::size_t> sizes) {
    std::size_t n = 0;
    for (auto s : sizes)
        n += s;
    if (total > n)
        fail(ErrorKind::InfeasibleQuota, "cannot remove " + std::to_string(total) + " of " + std::to_string(n));
    std::vector<std::size_t> quota(sizes.size(), 0);
    if (total == 0)
        return quota;
    std::vector<unsigned __int128> remainder(sizes.size());
    std::size_t assigned = 0;
    for (std::size_t c = 0; c < sizes.size(); ++c) {
        unsigned __int128 prod = static_cast<unsigned __int128>(total) * sizes[c];
        quota[c] = static_cast<std::size_t>(prod / n);
        remainder[c] = prod % n;
        assigned += quota[c];
    }
    std::vector<std::size_t> order(sizes.size());
    for (std::size_t c = 0; c < order.size(); ++c)
        order[c] = c;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (remainder[a] != remainder[b])
            return remainder[a] > remainder[b];
        if (sizes[a] != sizes[b])
            return sizes[a] < sizes[b];
        return a < b;
    });
    for (std::size_t i = 0; assigned < total; ++i, ++assigned)
        ++quota[order[i]];
    return quota;
}

/// Same removal count as the UTD split, spread over classes in proportion to
/// their test counts; inside a class the most confidently solved samples go
/// first (ties by id).
inline SplitFile build_balanced_split(const VerdictMatrix& vm, const DatasetManifest& manifest, PanelInfo panel) {
    if (manifest.task != Task::classification)
        fail(ErrorKind::Precondition, "balanced splits are defined for classification only");
    std::size_t removal = 0;
    for (std::size_t i = 0; i < vm.rows(); ++i)
        removal += vm.unanimous_correct(i) ? 1 : 0;

    std::vector<std::vector<std::size_t>> by_class(manifest.classes.size());
    for (std::size_t i = 0; i < vm.rows(); ++i)
        by_class[*manifest.video(vm.sample_ids[i]).label_index].push_back(i);
    std::vector<std::size_t> sizes;
    for (const auto& rows : by_class)
        sizes.push_back(rows.size());
    auto quota = apportion(removal, sizes);

    SplitFile s;
    s.dataset = manifest.name;
    s.split_type = SplitType::utd_balanced;
    s.panel = std::move(panel);
    for (std::size_t c = 0; c < by_class.size(); ++c) {
        auto rows = by_class[c];
        std::sort(rows.begin(), rows.end(), [&](std::size_t a, std::size_t b) {
            double ca = vm.mean_confidence(a), cb = vm.mean_confidence(b);
            if (ca != cb)
                return ca > cb;
            return vm.sample_ids[a] < vm.sample_ids[b];
        });
        for (std::size_t r = 0; r < rows.size(); ++r) {
            auto i = rows[r];
            if (r < quota[c])
                s.removed.push_back({vm.sample_ids[i], vm.correct[i], vm.mean_confidence(i)});
            else
                s.retained.push_back(vm.sample_ids[i]);
        }
    }
    s.removal_fraction = vm.rows() == 0 ? 0.0 : static_cast<double>(s.removed.size()) / static_cast<double>(vm.rows());
    return canonicalized(std::move(s));
}

struct SplitStats {
    double kappa = 0.0;
    double percent_biased = 0.0;
    double percent_retained = 0.0;
    std::size_t removed = 0;
    std::size_t test_size = 0;
};

inline SplitStats split_stats(const VerdictMatrix& vm, const SplitFile& utd) {
    SplitStats st;
    st.kappa = fleiss_kappa(vm);
    st.removed = utd.removed.size();
    st.test_size = utd.test_size();
    st.percent_biased = 100.0 * utd.removal_fraction;
    st.percent_retained = 100.0 - st.percent_biased;
    return st;
}

inline json to_json(const SplitStats& st) {
    return json{{"kappa", st.kappa}, {"percent_object_biased", st.percent_biased},
                {"percent_retained", st.percent_retained}, {"removed", st.removed}, {"test_size", st.test_size}};
}

inline json to_json(const VerdictMatrix& vm) {
    json rows = json::array();
    for (std::size_t i = 0; i < vm.rows(); ++i)
        rows.push_back({{"id", vm.sample_ids[i]},
                        {"correct", std::vector<bool>(vm.correct[i].begin(), vm.correct[i].end())},
                        {"confidence", std::vector<double>(vm.confidence[i].begin(), vm.confidence[i].end())}});
    return json{{"predictors", vm.predictor_ids}, {"samples", std::move(rows)}};
}

inline VerdictMatrix verdicts_from_json(const json& doc, const std::string& origin) {
    VerdictMatrix vm;
    vm.predictor_ids = field<std::vector<std::string>>(doc, "predictors", origin);
    if (vm.predictor_ids.size() != kPanelSize)
        fail(ErrorKind::Schema, "verdict matrix needs nine predictors", origin);
    for (const auto& row : field<json>(doc, "samples", origin)) {
        auto id = field<std::string>(row, "id", origin);
        auto correct = field<std::vector<bool>>(row, "correct", id);
        auto conf = row.contains("confidence") ? field<std::vector<double>>(row, "confidence", id)
                                               : std::vector<double>(kPanelSize, 0.0);
        if (correct.size() != kPanelSize || conf.size() != kPanelSize)
            fail(ErrorKind::Schema, "row needs nine verdicts", id);
        vm.sample_ids.push_back(std::move(id));
        vm.correct.emplace_back();
        vm.confidence.emplace_back();
        std::copy(correct.begin(), correct.end(), vm.correct.back().begin());
        std::copy(conf.begin(), conf.end(), vm.confidence.back().begin());
    }
    return vm;
}

} // namespace utd
