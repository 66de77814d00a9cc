// Embeddings, bias evaluation, linear probes, debiasing panels and benchmark
// deltas.

#include <gtest/gtest.h>

#include <cmath>
#include <fstream>

#include "support.hpp"

using namespace utd;
using utd::test::TempDir;

namespace {

#define EXPECT_UTD_ERROR(stmt, k)                                                   \
    do {                                                                            \
        try {                                                                       \
            stmt;                                                                   \
            ADD_FAILURE() << "expected " << to_string(k);                           \
        } catch (const utd::Error& e) {                                             \
            EXPECT_EQ(e.kind(), k) << e.what();                                     \
        }                                                                           \
    } while (0)

/// Embedding endpoint that answers every input with `vec`.
std::shared_ptr<FunctionTransport> constant_embeddings(std::vector<float> vec) {
    return std::make_shared<FunctionTransport>([vec](const std::string& route, const json& body) {
        EXPECT_EQ(route, "/embeddings");
        json data = json::array();
        for (std::size_t i = 0; i < body.at("input").size(); ++i)
            data.push_back({{"index", i}, {"embedding", vec}});
        return json{{"data", data}};
    });
}

Embedder embedder_over(std::shared_ptr<Transport> t, std::shared_ptr<EmbeddingCache> cache = nullptr) {
    auto cfg = test::stub_config(4);
    return Embedder(EmbeddingClient(cfg, std::move(t)), std::move(cache));
}

InstructionPrompt instr(std::string text = "Find it.") {
    InstructionPrompt p;
    p.text = std::move(text);
    return p;
}

Embedding e(std::size_t i, std::size_t dim) {
    Embedding v(dim, 0.0f);
    v[i] = 1.0f;
    return v;
}

} // namespace

// ---------------------------------------------------------------------------
// embed

TEST(Embed, NormalizesEndpointVectors) {
    auto t = constant_embeddings({3, 4});
    auto emb = embedder_over(t);
    auto v = emb.embed_text("x", instr());
    EXPECT_FLOAT_EQ(v[0], 0.6f);
    EXPECT_FLOAT_EQ(v[1], 0.8f);
    EXPECT_UTD_ERROR(normalized(std::vector<float>{0, 0}), ErrorKind::ZeroNorm);
}

TEST(Embed, CacheHitSkipsEndpoint) {
    TempDir dir;
    auto t = constant_embeddings({1, 2, 3, 4});
    auto cache = std::make_shared<EmbeddingCache>(dir / "c.utde", "stub-embed");
    auto emb = embedder_over(t, cache);
    emb.embed_many({"a", "b", "a"}, instr());
    EXPECT_EQ(t->calls(), 1u);
    EXPECT_EQ(cache->size(), 2u);
    emb.embed_many({"b", "a"}, instr());
    EXPECT_EQ(t->calls(), 1u);
    emb.embed_text("a", instr("Other instruction."));
    EXPECT_EQ(t->calls(), 2u);

    auto reopened = std::make_shared<EmbeddingCache>(dir / "c.utde", "stub-embed");
    EXPECT_EQ(reopened->size(), 3u);
    Embedder offline(std::nullopt, reopened);
    EXPECT_EQ(offline.embed_text("a", instr()), emb.embed_text("a", instr()));
    EXPECT_UTD_ERROR(offline.embed_text("zzz", instr()), ErrorKind::MissingEmbedding);
    EXPECT_UTD_ERROR(EmbeddingCache(dir / "c.utde", "other-model"), ErrorKind::Schema);
}

TEST(Embed, DimensionMismatchAgainstCache) {
    TempDir dir;
    auto cache = std::make_shared<EmbeddingCache>(dir / "c.utde", "stub-embed");
    embedder_over(constant_embeddings({1, 0, 0, 0}), cache).embed_text("x", instr());
    auto five = embedder_over(constant_embeddings({1, 0, 0, 0, 0}), cache);
    EXPECT_UTD_ERROR(five.embed_text("y", instr()), ErrorKind::DimensionMismatch);
}

TEST(Embed, TornTailIsTruncated) {
    TempDir dir;
    const auto path = dir / "c.utde";
    {
        auto cache = std::make_shared<EmbeddingCache>(path, "stub-embed");
        embedder_over(constant_embeddings({1, 2, 3, 4}), cache).embed_many({"a", "b"}, instr());
    }
    const auto good = std::filesystem::file_size(path);
    std::ofstream(path, std::ios::binary | std::ios::app) << "torn!";
    EmbeddingCache reopened(path, "stub-embed");
    EXPECT_EQ(reopened.size(), 2u);
    EXPECT_EQ(std::filesystem::file_size(path), good);
}

TEST(Embed, CacheFileIsDeterministic) {
    TempDir dir;
    auto write = [&](const std::string& name) {
        auto emb = test::stub_embedder(32, dir / name);
        emb.embed_many({"one", "two", "three", "two"}, instr());
        emb.embed_many({"four"}, instr("Other."));
        std::ifstream in(dir / name, std::ios::binary);
        return std::string(std::istreambuf_iterator<char>(in), {});
    };
    EXPECT_EQ(write("a.utde"), write("b.utde"));
}

TEST(Embed, CosineExamples) {
    EXPECT_DOUBLE_EQ(cosine(std::vector<float>{1, 0}, std::vector<float>{0, 1}), 0.0);
    EXPECT_DOUBLE_EQ(cosine(std::vector<float>{1, 1}, std::vector<float>{2, 2}), 1.0);
    EXPECT_DOUBLE_EQ(cosine(std::vector<float>{1, 0}, std::vector<float>{-3, 0}), -1.0);
    EXPECT_UTD_ERROR(cosine(std::vector<float>{1, 0}, std::vector<float>{1, 0, 0}), ErrorKind::DimensionMismatch);
    EXPECT_UTD_ERROR(cosine(std::vector<float>{0, 0}, std::vector<float>{1, 0}), ErrorKind::ZeroNorm);

    std::mt19937_64 rng(3);
    for (int i = 0; i < 100; ++i) {
        auto u = test::random_unit(rng, 17), v = test::random_unit(rng, 17);
        EXPECT_EQ(cosine(u, v), cosine(v, u));
    }
}

TEST(Embed, AggregateAverage) {
    auto avg = aggregate_avg(std::vector<Embedding>{e(0, 2), e(1, 2)});
    EXPECT_NEAR(avg[0], 1 / std::sqrt(2.0), 1e-7);
    EXPECT_NEAR(avg[1], 1 / std::sqrt(2.0), 1e-7);
    EXPECT_EQ(aggregate_avg(std::vector<Embedding>{e(1, 3)}), e(1, 3));
    EXPECT_UTD_ERROR(aggregate_avg(std::vector<Embedding>{{1, 0}, {-1, 0}}), ErrorKind::ZeroNorm);
    EXPECT_UTD_ERROR(aggregate_avg(std::vector<Embedding>{}), ErrorKind::Precondition);

    std::mt19937_64 rng(11);
    std::vector<Embedding> frames;
    for (int i = 0; i < 7; ++i)
        frames.push_back(test::random_unit(rng, 9));
    auto ref = aggregate_avg(frames);
    for (int trial = 0; trial < 10; ++trial) {
        std::shuffle(frames.begin(), frames.end(), rng);
        EXPECT_EQ(aggregate_avg(frames), ref);
    }
}

TEST(Embed, LabelSetKeepsOrderAndDuplicates) {
    auto emb = test::stub_embedder(64);
    auto rows = emb.embed_label_set({"swim", "run", "swim"}, instr());
    ASSERT_EQ(rows.size(), 3u);
    EXPECT_EQ(rows[0], rows[2]);
    EXPECT_NE(rows[0], rows[1]);
    EXPECT_EQ(rows[1], emb.embed_text("run", instr()));
    EXPECT_UTD_ERROR(emb.embed_label_set({}, instr()), ErrorKind::Precondition);
    EXPECT_UTD_ERROR(emb.embed_text("", instr()), ErrorKind::Precondition);
}

TEST(Embed, StubVectorsAreBagOfWords) {
    auto a = stub_embedding("red cup on table", 64);
    auto b = stub_embedding("table on cup red", 64);
    EXPECT_EQ(a, b);
    EXPECT_EQ(stub_embedding("x", 64).size(), 64u);
}

// ---------------------------------------------------------------------------
// biaseval

TEST(ZeroShot, ArgmaxAndTies) {
    std::vector<Embedding> identity{e(0, 3), e(1, 3), e(2, 3)};
    EXPECT_EQ(classify_zero_shot(e(2, 3), identity).index, 2u);
    EXPECT_EQ(classify_zero_shot(std::vector<float>{1, 1, 0}, identity).index, 0u);
    EXPECT_UTD_ERROR(classify_zero_shot(e(0, 3), std::vector<Embedding>{}), ErrorKind::Precondition);
    EXPECT_UTD_ERROR(classify_zero_shot(e(0, 2), identity), ErrorKind::DimensionMismatch);

    std::vector<Embedding> gallery{e(1, 3), {0.5f, std::sqrt(0.75f), 0}, e(2, 3)};
    EXPECT_EQ(retrieve_top1(e(0, 3), gallery).index, 1u);
    std::vector<Embedding> twins{e(2, 3), e(0, 3), e(0, 3)};
    EXPECT_EQ(retrieve_top1(e(0, 3), twins).index, 1u);
}

TEST(ZeroShot, AgreesWithOracleAndIgnoresScale) {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<float> scale(0.01f, 100.0f);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<Embedding> cands;
        for (int i = 0; i < 12; ++i)
            cands.push_back(test::random_unit(rng, 16));
        auto q = test::random_unit(rng, 16);
        const auto expect = test::oracle_argmax_cosine(q, cands);
        EXPECT_EQ(classify_zero_shot(q, cands).index, expect);
        auto k = rng() % cands.size();
        const float s = scale(rng);
        for (auto& x : cands[k])
            x *= s;
        EXPECT_EQ(retrieve_top1(q, cands).index, expect);
    }
}

TEST(Metric, Examples) {
    auto results = [](std::initializer_list<bool> c) {
        std::vector<PerSampleResult> r;
        for (bool b : c)
            r.push_back({"s" + std::to_string(r.size()), 0, 0, b, 0});
        return r;
    };
    EXPECT_DOUBLE_EQ(dataset_metric(results({true, true, false, false})), 50.0);
    EXPECT_DOUBLE_EQ(dataset_metric(results({true, true, true})), 100.0);
    EXPECT_DOUBLE_EQ(dataset_metric(results({false})), 0.0);
    EXPECT_UTD_ERROR(dataset_metric(results({})), ErrorKind::EmptyResults);
    auto r = results({true, false, false});
    auto doubled = r;
    doubled.insert(doubled.end(), r.begin(), r.end());
    EXPECT_DOUBLE_EQ(dataset_metric(doubled), dataset_metric(r));
}

TEST(MaxScoreFrame, AnyCorrectFrameCounts) {
    std::vector<Top1> frames(8, Top1{1, 0.9});
    frames[2] = {0, 0.2};
    auto r = detail::pick_max_frame("s", 0, frames);
    EXPECT_TRUE(r.correct);
    EXPECT_EQ(r.predicted, 0u);
    frames[2] = {2, 0.2};
    EXPECT_FALSE(detail::pick_max_frame("s", 0, frames).correct);
}

TEST(BiasGrid, LabelsAsObjectsGiveFullMarks) {
    test::Synthetic s;
    s.manifest.name = "labels";
    s.manifest.classes = {"piano", "guitar", "violin", "drum"};
    for (std::size_t c = 0; c < 4; ++c) {
        VideoEntry v;
        v.id = "v" + std::to_string(c);
        v.label_index = c;
        v.frame_paths = {"f0", "f1", "f2"};
        for (std::size_t f = 0; f < 3; ++f)
            test::fill_frame(s.store, v.id, f, {s.manifest.classes[c]}, "playing");
        s.manifest.videos.push_back(v);
    }
    s.manifest.validate();
    auto emb = test::stub_embedder(256);
    EvalContext ctx{s.manifest, s.store, emb};

    // Oracle: brute-force argmax over the same stub vectors.
    auto classes = emb.embed_label_set(s.manifest.classes, target_instruction(Task::classification, Arity::multi_frame));
    for (const auto* v : s.manifest.videos_in(SplitRole::test)) {
        auto q = emb.embed_text(sequence_of_frames(s.store, *v, Concept::objects),
                                video_instruction(Task::classification, Concept::objects, Arity::multi_frame));
        EXPECT_EQ(test::oracle_argmax_cosine(q, classes), *v->label_index);
    }
    const std::array concepts{Concept::objects, Concept::obj_comp_act};
    auto report = bias_grid(ctx, concepts, kAllTemporals, BiasMode::common_sense);
    EXPECT_DOUBLE_EQ(report.cell({Concept::objects, Temporal::seq_of_frames})->value, 100.0);
    EXPECT_DOUBLE_EQ(*report.cell(kAnchorSpec)->delta_vs_anchor, 0.0);
    EXPECT_EQ(report.cells.size(), 8u);
}

TEST(BiasGrid, IdenticalTextsGiveEqualRows) {
    test::Synthetic s;
    s.manifest.name = "same";
    s.manifest.classes = {"cup", "box"};
    for (std::size_t i = 0; i < 6; ++i) {
        VideoEntry v;
        v.id = "v" + std::to_string(i);
        v.label_index = i % 2;
        v.frame_paths = {"f0", "f1"};
        for (std::size_t f = 0; f < 2; ++f) {
            const std::string text = i % 3 ? "cup" : "box";
            for (auto c : {Concept::objects, Concept::activities, Concept::verbs})
                s.store.put({v.id, f, c}, std::vector<std::string>{text});
            s.store.put({v.id, f, Concept::obj_comp_act}, text);
            s.store.put({v.id, f, Concept::obj_comp_act_15w}, text);
        }
        s.manifest.videos.push_back(v);
    }
    s.manifest.validate();
    auto emb = test::stub_embedder(64);
    EvalContext ctx{s.manifest, s.store, emb};
    auto report = bias_grid(ctx, kRepresentationConcepts, kAllTemporals, BiasMode::common_sense);
    for (auto t : kAllTemporals) {
        std::vector<bool> ref;
        for (const auto& r : report.cell({Concept::objects, t})->results)
            ref.push_back(r.correct);
        for (auto c : {Concept::activities, Concept::verbs}) {
            std::vector<bool> got;
            for (const auto& r : report.cell({c, t})->results)
                got.push_back(r.correct);
            EXPECT_EQ(got, ref) << to_string(c) << " " << to_string(t);
        }
    }
}

TEST(Temporal, DegenerateEqualities) {
    std::mt19937_64 rng(21);
    // One frame per video: max-score frame reduces to the middle frame.
    auto ret = test::random_retrieval(rng, 10);
    for (auto& v : ret.manifest.videos)
        v.frame_paths.resize(1);
    ret.manifest.validate();
    auto emb = test::stub_embedder(64);
    EvalContext rctx{ret.manifest, ret.store, emb};
    EXPECT_EQ(eval_temporal(rctx, {Concept::objects, Temporal::max_score_frame}, BiasMode::common_sense),
              eval_temporal(rctx, {Concept::objects, Temporal::middle_frame}, BiasMode::common_sense));

    // Identical frames: average equals the middle frame.
    auto cls = test::random_classification(rng);
    for (const auto& v : cls.manifest.videos) {
        const auto copy = *cls.store.find({v.id, middle_frame(v.frame_count()), Concept::objects});
        for (std::size_t f = 0; f < v.frame_count(); ++f)
            cls.store.put({v.id, f, Concept::objects}, copy);
    }
    EvalContext cctx{cls.manifest, cls.store, emb};
    for (auto mode : {BiasMode::common_sense, BiasMode::dataset_bias}) {
        auto avg = eval_temporal(cctx, {Concept::objects, Temporal::avg_over_frames}, mode);
        auto mid = eval_temporal(cctx, {Concept::objects, Temporal::middle_frame}, mode);
        ASSERT_EQ(avg.size(), mid.size());
        for (std::size_t i = 0; i < avg.size(); ++i)
            EXPECT_EQ(avg[i].predicted, mid[i].predicted);
    }
}

TEST(Temporal, MaxScoreDominatesMiddle) {
    std::mt19937_64 rng(99);
    auto emb = test::stub_embedder(64);
    for (int trial = 0; trial < 15; ++trial) {
        auto s = test::random_classification(rng);
        EvalContext ctx{s.manifest, s.store, emb};
        for (auto mode : {BiasMode::common_sense, BiasMode::dataset_bias}) {
            auto mx = eval_temporal(ctx, {Concept::objects, Temporal::max_score_frame}, mode);
            auto mid = eval_temporal(ctx, {Concept::objects, Temporal::middle_frame}, mode);
            for (std::size_t i = 0; i < mx.size(); ++i)
                EXPECT_GE(mx[i].correct, mid[i].correct) << mx[i].id;
        }
    }
}

TEST(Temporal, RetrievalRejectsDatasetBias) {
    std::mt19937_64 rng(1);
    auto s = test::random_retrieval(rng, 4);
    auto emb = test::stub_embedder(32);
    EvalContext ctx{s.manifest, s.store, emb};
    EXPECT_UTD_ERROR(eval_temporal(ctx, {Concept::objects, Temporal::seq_of_frames}, BiasMode::dataset_bias),
                     ErrorKind::Precondition);
}

// ---------------------------------------------------------------------------
// trainlin

namespace {

/// Regularized cross-entropy written out directly, for checking the library.
double oracle_loss(const std::vector<Embedding>& xs, const std::vector<std::size_t>& ys, std::size_t k,
                   const std::vector<double>& w, const std::vector<double>& b, double l2) {
    const std::size_t d = xs[0].size();
    double loss = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        std::vector<double> z(k);
        for (std::size_t c = 0; c < k; ++c) {
            z[c] = b[c];
            for (std::size_t j = 0; j < d; ++j)
                z[c] += w[c * d + j] * xs[i][j];
        }
        double s = 0;
        for (double v : z)
            s += std::exp(v);
        loss += std::log(s) - z[ys[i]];
    }
    double reg = 0;
    for (double v : w)
        reg += v * v;
    for (double v : b)
        reg += v * v;
    return loss / static_cast<double>(xs.size()) + 0.5 * l2 * reg;
}

} // namespace

TEST(Bootstrap, SizeRangeDeterminism) {
    auto a = bootstrap_sample(5, 42);
    EXPECT_EQ(a.size(), 5u);
    for (auto i : a)
        EXPECT_LT(i, 5u);
    EXPECT_EQ(a, bootstrap_sample(5, 42));
    EXPECT_NE(bootstrap_sample(50, 1), bootstrap_sample(50, 2));
    EXPECT_EQ(bootstrap_sample(1, 9), std::vector<std::size_t>{0});
    EXPECT_UTD_ERROR(bootstrap_sample(0, 1), ErrorKind::Precondition);
}

TEST(Softmax, TwoPointsSeparableMatchesOracle) {
    std::vector<Embedding> xs{e(0, 2), e(1, 2)};
    std::vector<std::size_t> ys{0, 1};
    TrainConfig cfg;
    auto m = train_softmax(xs, ys, 2, cfg);
    EXPECT_DOUBLE_EQ(m.train_accuracy, 1.0);

    // Independent oracle: plain gradient descent on the same convex objective.
    std::vector<double> w(4, 0.0), b(2, 0.0);
    for (int it = 0; it < 20000; ++it) {
        std::vector<double> gw(4, 0.0), gb(2, 0.0);
        for (std::size_t i = 0; i < 2; ++i) {
            double z0 = w[0] * xs[i][0] + w[1] * xs[i][1] + b[0];
            double z1 = w[2] * xs[i][0] + w[3] * xs[i][1] + b[1];
            double p1 = 1 / (1 + std::exp(z0 - z1));
            double p[2] = {1 - p1, p1};
            for (std::size_t c = 0; c < 2; ++c) {
                double r = (p[c] - (ys[i] == c ? 1.0 : 0.0)) / 2.0;
                gw[c * 2] += r * xs[i][0];
                gw[c * 2 + 1] += r * xs[i][1];
                gb[c] += r;
            }
        }
        for (std::size_t j = 0; j < 4; ++j)
            w[j] -= 5.0 * (gw[j] + cfg.l2 * w[j]);
        for (std::size_t c = 0; c < 2; ++c)
            b[c] -= 5.0 * (gb[c] + cfg.l2 * b[c]);
    }
    std::vector<double> mw(m.weights.begin(), m.weights.end()), mb(m.bias.begin(), m.bias.end());
    const double ours = oracle_loss(xs, ys, 2, mw, mb, cfg.l2);
    const double theirs = oracle_loss(xs, ys, 2, w, b, cfg.l2);
    EXPECT_LE(ours, theirs + 1e-6);
    EXPECT_EQ(predict(m, xs[0]), 0u);
    EXPECT_EQ(predict(m, xs[1]), 1u);
}

TEST(Softmax, Degenerate) {
    std::vector<Embedding> xs{e(0, 2), {std::nanf(""), 0.0f}};
    std::vector<std::size_t> ys{0, 1};
    EXPECT_UTD_ERROR(train_softmax(xs, ys, 2, {}), ErrorKind::DegenerateInput);

    std::vector<Embedding> same{e(0, 3), e(1, 3), e(2, 3)};
    std::vector<std::size_t> zeros{1, 1, 1};
    auto m = train_softmax(same, zeros, 2, {});
    for (const auto& x : same)
        EXPECT_EQ(predict(m, x), 1u);
    EXPECT_UTD_ERROR(train_softmax(same, zeros, 1, {}), ErrorKind::DegenerateInput);
}

TEST(Softmax, GradientMatchesFiniteDifferences) {
    std::mt19937_64 rng(8);
    std::normal_distribution<double> g(0.0, 0.5);
    for (int trial = 0; trial < 5; ++trial) {
        const std::size_t n = 20, d = 8, k = 5;
        Eigen::MatrixXd x(n, d);
        std::vector<std::size_t> y(n);
        for (std::size_t i = 0; i < n; ++i) {
            auto v = test::random_unit(rng, d);
            for (std::size_t j = 0; j < d; ++j)
                x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = v[j];
            y[i] = rng() % k;
        }
        SoftmaxObjective f(x, y, k, 1e-2);
        Eigen::VectorXd theta(static_cast<Eigen::Index>(f.parameter_count()));
        for (auto& t : theta)
            t = g(rng);
        Eigen::VectorXd grad, scratch;
        f.value_and_gradient(theta, grad);
        for (Eigen::Index p = 0; p < theta.size(); ++p) {
            auto plus = theta, minus = theta;
            plus(p) += 1e-5;
            minus(p) -= 1e-5;
            double fd = (f.value_and_gradient(plus, scratch) - f.value_and_gradient(minus, scratch)) / 2e-5;
            EXPECT_LT(std::abs(fd - grad(p)), 1e-4 * std::max(1.0, std::abs(fd))) << "parameter " << p;
        }
    }
}

TEST(Softmax, LossNeverIncreasesAndTrainingIsDeterministic) {
    std::mt19937_64 rng(12);
    std::vector<Embedding> xs;
    std::vector<std::size_t> ys;
    for (int i = 0; i < 60; ++i) {
        xs.push_back(test::random_unit(rng, 10));
        ys.push_back(rng() % 4);
    }
    OptimizerTrace trace;
    auto a = train_softmax(xs, ys, 4, {}, &trace);
    ASSERT_GE(trace.losses.size(), 2u);
    for (std::size_t i = 1; i < trace.losses.size(); ++i)
        EXPECT_LE(trace.losses[i], trace.losses[i - 1]);
    EXPECT_EQ(train_softmax(xs, ys, 4, {}), a);
}

TEST(Softmax, ProbabilitiesAndPrediction) {
    LinearModel m;
    m.classes = 4;
    m.dim = 3;
    m.weights.assign(12, 0.0f);
    m.bias.assign(4, 0.0f);
    for (double p : predict_proba(m, e(0, 3)))
        EXPECT_DOUBLE_EQ(p, 0.25);
    EXPECT_EQ(predict(m, e(1, 3)), 0u);
    m.bias = {0, 0, 3, 0};
    EXPECT_EQ(predict(m, e(1, 3)), 2u);
    EXPECT_UTD_ERROR(predict_proba(m, e(0, 2)), ErrorKind::DimensionMismatch);

    LinearModel two;
    two.classes = 2;
    two.dim = 1;
    two.weights = {0, 0};
    two.bias = {10, -10};
    EXPECT_NEAR(predict_proba(two, std::vector<float>{1})[0], 1 / (1 + std::exp(-20.0)), 1e-12);

    LinearModel one;
    one.classes = 1;
    one.dim = 2;
    one.weights = {1, 1};
    one.bias = {0};
    EXPECT_EQ(predict(one, e(0, 2)), 0u);

    std::mt19937_64 rng(4);
    LinearModel r;
    r.classes = 5;
    r.dim = 6;
    std::normal_distribution<float> g;
    for (int i = 0; i < 30; ++i)
        r.weights.push_back(g(rng));
    for (int i = 0; i < 5; ++i)
        r.bias.push_back(g(rng));
    auto x = test::random_unit(rng, 6);
    auto p = predict_proba(r, x);
    double sum = 0;
    for (double v : p) {
        EXPECT_GT(v, 0.0);
        sum += v;
    }
    EXPECT_NEAR(sum, 1.0, 1e-9);
    auto shifted = r;
    for (auto& b : shifted.bias)
        b += 7.0f;
    EXPECT_EQ(predict(shifted, x), predict(r, x));
}

TEST(Softmax, ModelFileRoundTrip) {
    TempDir dir;
    std::mt19937_64 rng(2);
    std::vector<Embedding> xs;
    std::vector<std::size_t> ys;
    for (int i = 0; i < 12; ++i) {
        xs.push_back(test::random_unit(rng, 5));
        ys.push_back(static_cast<std::size_t>(i % 3));
    }
    TrainConfig cfg;
    cfg.seed = 77;
    auto m = train_softmax(xs, ys, 3, cfg);
    write_model(m, dir / "m.bin");
    EXPECT_EQ(load_model(dir / "m.bin"), m);
    auto bytes = serialize(m);
    EXPECT_EQ(bytes.substr(0, 4), "UTDM");
    EXPECT_UTD_ERROR(deserialize_model(bytes + "x", "m"), ErrorKind::Parse);
    EXPECT_THROW(deserialize_model(bytes.substr(0, bytes.size() - 1), "m"), Error);
}

// ---------------------------------------------------------------------------
// debias

namespace {

VerdictMatrix matrix_from_counts(const std::vector<std::size_t>& correct_counts) {
    std::vector<std::string> ids, preds;
    for (std::size_t i = 0; i < correct_counts.size(); ++i) {
        std::string id = std::to_string(i);
        ids.push_back(std::string(4 - id.size(), '0') + id);
    }
    for (std::size_t j = 0; j < kPanelSize; ++j)
        preds.push_back("p" + std::to_string(j));
    return assemble_verdicts(ids, preds, [&](std::size_t i, std::size_t j) {
        return Verdict{j < correct_counts[i], 0.5};
    });
}

} // namespace

TEST(Fleiss, Examples) {
    const double worked = fleiss_kappa(std::vector<std::vector<std::size_t>>{{9, 0}, {5, 4}, {0, 9}});
    EXPECT_NEAR(worked, test::oracle_fleiss({{9, 0}, {5, 4}, {0, 9}}), 1e-12);
    EXPECT_NEAR(worked, 0.6291, 5e-5);
    EXPECT_DOUBLE_EQ(fleiss_kappa(matrix_from_counts({9, 0, 9, 0})), 1.0);
    EXPECT_DOUBLE_EQ(fleiss_kappa(matrix_from_counts({9, 9, 9})), 1.0);
    EXPECT_DOUBLE_EQ(fleiss_kappa(matrix_from_counts({0, 0})), 1.0);
}

TEST(Fleiss, MatchesOracleAndPermutationInvariant) {
    std::mt19937_64 rng(6);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n = 2 + rng() % 30;
        std::vector<std::size_t> counts(n);
        std::vector<std::vector<int>> table;
        for (auto& c : counts) {
            c = rng() % 10;
            table.push_back({static_cast<int>(c), static_cast<int>(9 - c)});
        }
        auto vm = matrix_from_counts(counts);
        const double k = fleiss_kappa(vm);
        bool degenerate = std::all_of(counts.begin(), counts.end(), [&](auto c) { return c == counts[0]; }) &&
                          (counts[0] == 0 || counts[0] == 9);
        if (!degenerate)
            EXPECT_NEAR(k, test::oracle_fleiss(table), 1e-12);
        EXPECT_GE(k, -1.0 / 8.0 - 1e-12);
        EXPECT_LE(k, 1.0 + 1e-12);

        auto shuffled = vm;
        std::shuffle(shuffled.correct.begin(), shuffled.correct.end(), rng);
        for (auto& row : shuffled.correct)
            std::reverse(row.begin(), row.end());
        EXPECT_NEAR(fleiss_kappa(shuffled), k, 1e-12);
    }
}

TEST(Verdicts, AssemblyContract) {
    std::vector<std::string> preds(kPanelSize, "p");
    auto oracle = assemble_verdicts({"a", "b"}, preds, [](std::size_t, std::size_t) { return Verdict{true, 1.0}; });
    EXPECT_TRUE(oracle.unanimous_correct(0));
    EXPECT_TRUE(oracle.unanimous_correct(1));
    EXPECT_UTD_ERROR(assemble_verdicts({}, preds, [](auto, auto) { return Verdict{}; }), ErrorKind::EmptyTestSet);
    EXPECT_UTD_ERROR(assemble_verdicts({"a"}, {"p"}, [](auto, auto) { return Verdict{}; }), ErrorKind::Precondition);
}

TEST(UtdSplit, UnanimityRule) {
    auto vm = matrix_from_counts({9, 8, 0});
    auto s = build_utd_split(vm, "toy", {});
    ASSERT_EQ(s.removed.size(), 1u);
    EXPECT_EQ(s.removed[0].id, "0000");
    EXPECT_EQ(s.retained, (std::vector<std::string>{"0001", "0002"}));
    EXPECT_DOUBLE_EQ(s.removal_fraction, 1.0 / 3.0);
    EXPECT_EQ(s.split_type, SplitType::utd);

    auto all = build_utd_split(matrix_from_counts({9, 9}), "toy", {});
    EXPECT_TRUE(all.retained.empty());
    EXPECT_DOUBLE_EQ(all.removal_fraction, 1.0);
    auto none = build_utd_split(matrix_from_counts({1, 0, 8}), "toy", {});
    EXPECT_EQ(none.retained.size(), 3u);
    EXPECT_DOUBLE_EQ(none.removal_fraction, 0.0);
}

TEST(Apportion, LargestRemainder) {
    EXPECT_EQ(apportion(6, std::vector<std::size_t>{10, 10}), (std::vector<std::size_t>{3, 3}));
    // 9 and 1 with R=5: exact shares 4.5 and 0.5, both remainders equal,
    // the smaller class takes the spare seat.
    EXPECT_EQ(apportion(5, std::vector<std::size_t>{9, 1}), (std::vector<std::size_t>{4, 1}));
    EXPECT_EQ(apportion(0, std::vector<std::size_t>{4, 2}), (std::vector<std::size_t>{0, 0}));
    EXPECT_EQ(apportion(4, std::vector<std::size_t>{3, 3, 3}), (std::vector<std::size_t>{2, 1, 1}));
    EXPECT_UTD_ERROR(apportion(5, std::vector<std::size_t>{2, 2}), ErrorKind::InfeasibleQuota);

    std::mt19937_64 rng(10);
    for (int trial = 0; trial < 300; ++trial) {
        std::vector<std::size_t> sizes(1 + rng() % 6);
        std::size_t n = 0;
        for (auto& s : sizes)
            n += (s = rng() % 20);
        const std::size_t r = n ? rng() % (n + 1) : 0;
        auto q = apportion(r, sizes);
        std::size_t sum = 0;
        for (std::size_t c = 0; c < sizes.size(); ++c) {
            sum += q[c];
            EXPECT_LE(q[c], sizes[c]);
            if (n) {
                const double exact = static_cast<double>(r) * static_cast<double>(sizes[c]) / static_cast<double>(n);
                EXPECT_LE(std::abs(static_cast<double>(q[c]) - exact), 1.0);
            }
        }
        EXPECT_EQ(sum, r);
    }
}

TEST(BalancedSplit, KeepsClassProportions) {
    DatasetManifest m;
    m.name = "bal";
    m.classes = {"a", "b"};
    std::vector<std::string> ids;
    for (int i = 0; i < 20; ++i) {
        VideoEntry v;
        v.id = "s" + std::to_string(100 + i);
        v.label_index = i < 10 ? 0 : 1;
        v.frame_paths = {"f"};
        m.videos.push_back(v);
        ids.push_back(v.id);
    }
    m.validate();
    std::vector<std::string> preds(kPanelSize, "p");
    // Six unanimous rows, all in class 0; confidence falls with the index.
    auto vm = assemble_verdicts(ids, preds, [](std::size_t i, std::size_t) {
        return Verdict{i < 6, 1.0 - 0.01 * static_cast<double>(i % 10)};
    });
    auto utd = build_utd_split(vm, m.name, {});
    auto bal = build_balanced_split(vm, m, {});
    EXPECT_EQ(bal.removed.size(), utd.removed.size());
    EXPECT_EQ(bal.split_type, SplitType::utd_balanced);
    std::vector<std::string> removed;
    for (const auto& r : bal.removed)
        removed.push_back(r.id);
    EXPECT_EQ(removed, (std::vector<std::string>{"s100", "s101", "s102", "s110", "s111", "s112"}));

    auto none = build_balanced_split(matrix_from_counts({0, 3}), [] {
        DatasetManifest d;
        d.name = "z";
        d.classes = {"a"};
        for (auto id : {"0000", "0001"}) {
            VideoEntry v;
            v.id = id;
            v.label_index = 0;
            v.frame_paths = {"f"};
            d.videos.push_back(v);
        }
        d.validate();
        return d;
    }(), {});
    EXPECT_TRUE(none.removed.empty());
    EXPECT_EQ(none.retained.size(), 2u);
}

TEST(Panel, ClassificationNeedsTrainSplit) {
    std::mt19937_64 rng(3);
    auto s = test::random_classification(rng);
    for (auto& v : s.manifest.videos)
        v.split = SplitRole::test;
    s.manifest.validate();
    auto emb = test::stub_embedder(32);
    EvalContext ctx{s.manifest, s.store, emb};
    EXPECT_UTD_ERROR(build_panel(ctx, BiasMode::dataset_bias), ErrorKind::Precondition);
}

TEST(Panel, CompositionAndDeterminism) {
    auto s = test::make_planted_classification(17, 3, 6, 4, 6, 3);
    auto emb = test::stub_embedder(64);
    EvalContext ctx{s.manifest, s.store, emb};
    auto panel = build_panel(ctx, BiasMode::dataset_bias);
    ASSERT_EQ(panel.members.size(), kPanelSize);
    std::set<std::pair<int, std::uint64_t>> combos;
    for (const auto& p : panel.members)
        combos.insert({p.video_variant, *p.seed});
    EXPECT_EQ(combos.size(), kPanelSize);
    EXPECT_EQ(panel.info().seeds, (std::vector<std::uint64_t>{1, 2, 3}));
    auto vm = verdicts(panel, ctx);
    EXPECT_EQ(vm.rows(), 18u);
    auto again = verdicts(build_panel(ctx, BiasMode::dataset_bias), ctx);
    EXPECT_EQ(vm.correct, again.correct);
    EXPECT_EQ(vm.confidence, again.confidence);

    std::mt19937_64 rng(5);
    auto r = test::random_retrieval(rng, 6);
    EvalContext rctx{r.manifest, r.store, emb};
    auto rp = build_panel(rctx, BiasMode::common_sense);
    ASSERT_EQ(rp.members.size(), kPanelSize);
    std::set<std::pair<int, int>> pairs;
    for (const auto& p : rp.members)
        pairs.insert({*p.query_variant, p.video_variant});
    EXPECT_EQ(pairs.size(), kPanelSize);
    EXPECT_EQ(verdicts(rp, rctx).rows(), r.manifest.test_sample_ids().size());
}

TEST(Panel, MissingDescriptionIsReported) {
    auto s = test::make_planted_classification(4, 2, 3, 3, 0, 2);
    s.store.erase({"te0_1", 1, Concept::objects});
    auto emb = test::stub_embedder(32);
    EvalContext ctx{s.manifest, s.store, emb};
    auto panel = build_panel(ctx, BiasMode::dataset_bias);
    try {
        verdicts(panel, ctx);
        FAIL();
    } catch (const Error& e) {
        EXPECT_NE(e.key().find("te0_1"), std::string::npos) << e.what();
    }
}

TEST(Verdicts, JsonRoundTrip) {
    auto vm = matrix_from_counts({9, 4, 0});
    auto back = verdicts_from_json(to_json(vm), "vm");
    EXPECT_EQ(back.sample_ids, vm.sample_ids);
    EXPECT_EQ(back.correct, vm.correct);
    EXPECT_EQ(back.confidence, vm.confidence);
}

// ---------------------------------------------------------------------------
// benchmark

namespace {

DatasetManifest bench_manifest() {
    DatasetManifest m;
    m.name = "bench";
    m.classes = {"a", "b", "c", "d", "e"};
    for (int i = 0; i < 4; ++i) {
        VideoEntry v;
        v.id = "t" + std::to_string(i);
        v.label_index = static_cast<std::size_t>(i % 5);
        v.frame_paths = {"f"};
        m.videos.push_back(v);
    }
    m.validate();
    return m;
}

} // namespace

TEST(Benchmark, PredictionFileErrors) {
    auto m = bench_manifest();
    const std::string ok = "{\"id\":\"t0\",\"pred\":0}\n{\"id\":\"t1\",\"pred\":1}\n{\"id\":\"t2\",\"pred\":0}\n";
    EXPECT_UTD_ERROR(parse_predictions(ok, m, "p", "x"), ErrorKind::MissingSample);
    EXPECT_UTD_ERROR(parse_predictions(ok + "{\"id\":\"t3\",\"pred\":7}\n", m, "p", "x"), ErrorKind::UnknownClass);
    EXPECT_UTD_ERROR(parse_predictions(ok + "{\"id\":\"zz\",\"pred\":1}\n", m, "p", "x"), ErrorKind::UnknownVideo);
    EXPECT_UTD_ERROR(parse_predictions(ok + "{\"id\":\"t0\",\"pred\":1}\n", m, "p", "x"), ErrorKind::Schema);
    auto ps = parse_predictions("{\"model\":\"m1\"}\n" + ok + "{\"id\":\"t3\",\"pred\":3}\n", m, "p", "x");
    EXPECT_EQ(ps.model, "m1");
    EXPECT_EQ(ps.size(), 4u);
}

TEST(Benchmark, MetricsOnSplits) {
    auto m = bench_manifest();
    auto ps = parse_predictions("{\"id\":\"t0\",\"pred\":0}\n{\"id\":\"t1\",\"pred\":1}\n"
                                "{\"id\":\"t2\",\"pred\":0}\n{\"id\":\"t3\",\"pred\":0}\n",
                                m, "p", "model");
    const std::vector<std::string> all = m.test_sample_ids();
    EXPECT_DOUBLE_EQ(eval_on_split(ps, all, m), 50.0);
    const std::vector<std::string> hard{"t2", "t3"};
    EXPECT_DOUBLE_EQ(eval_on_split(ps, hard, m), 0.0);
    const std::vector<std::string> unknown{"nope"};
    EXPECT_UTD_ERROR(eval_on_split(ps, unknown, m), ErrorKind::MissingSample);

    SplitFile split;
    split.dataset = "bench";
    split.retained = {"t2", "t3"};
    split.removed = {RemovedSample{"t0", {}, 0}, RemovedSample{"t1", {}, 0}};
    split.removal_fraction = 0.5;
    const std::vector<PredictionSet> preds{ps};
    const std::vector<NamedSplit> splits{{"utd", split}};
    auto table = delta_table(preds, m, splits);
    ASSERT_EQ(table.rows.size(), 1u);
    EXPECT_DOUBLE_EQ(table.rows[0].delta, -50.0);
    EXPECT_EQ(parse_delta_csv(render_csv(table)).rows, table.rows);
    EXPECT_NE(render_markdown(table).find("-50.0"), std::string::npos);

    auto foreign = splits;
    foreign[0].split.dataset = "other";
    EXPECT_UTD_ERROR(delta_table(preds, m, foreign), ErrorKind::Precondition);
    auto partial = splits;
    partial[0].split.removed.pop_back();
    partial[0].split.removal_fraction = 1.0 / 3.0;
    EXPECT_UTD_ERROR(delta_table(preds, m, partial), ErrorKind::Schema);
}

TEST(Benchmark, RetrievalUsesTopRank) {
    DatasetManifest m;
    m.name = "ret";
    m.task = Task::retrieval;
    for (auto id : {"x", "y"}) {
        VideoEntry v;
        v.id = id;
        v.captions = std::vector<std::string>{std::string("caption of ") + id};
        v.frame_paths = {"f"};
        m.videos.push_back(v);
    }
    m.validate();
    auto ps = parse_predictions("{\"query_id\":\"x#0\",\"ranked\":[\"x\",\"y\"]}\n"
                                "{\"query_id\":\"y#0\",\"ranked\":[\"x\",\"y\"]}\n",
                                m, "p", "r");
    EXPECT_DOUBLE_EQ(eval_on_split(ps, m.test_sample_ids(), m), 50.0);
}
