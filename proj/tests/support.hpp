#pragma once

// Fixture builders and independent oracles shared by the test binaries.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "utd/utd.hpp"

namespace utd::test {

namespace fs = std::filesystem;

class TempDir {
public:
    TempDir() {
        static int counter = 0;
        std::random_device rd;
        path_ = fs::temp_directory_path() /
                ("utd-test-" + std::to_string(rd()) + "-" + std::to_string(counter++));
        fs::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const fs::path& path() const { return path_; }
    fs::path operator/(const std::string& name) const { return path_ / name; }

private:
    fs::path path_;
};

inline EndpointConfig stub_config(std::size_t dim = 64, std::string model = "stub-embed") {
    EndpointConfig cfg;
    cfg.kind = "stub";
    cfg.model = std::move(model);
    cfg.stub_dim = dim;
    cfg.max_in_flight = 1;
    return cfg;
}

inline Embedder stub_embedder(std::size_t dim = 64, const fs::path& cache_file = {}) {
    auto cfg = stub_config(dim);
    return Embedder(EmbeddingClient(cfg, make_transport(cfg)), std::make_shared<EmbeddingCache>(cache_file, cfg.model));
}

inline std::vector<float> random_unit(std::mt19937_64& rng, std::size_t dim) {
    std::normal_distribution<float> g(0.0f, 1.0f);
    std::vector<float> v(dim);
    for (auto& x : v)
        x = g(rng);
    return normalized(v);
}

// ---------------------------------------------------------------------------
// Oracles. Written from the textbook definitions without reusing library code.

/// Cosine argmax in double precision; first maximum wins.
inline std::size_t oracle_argmax_cosine(const std::vector<float>& q, const std::vector<std::vector<float>>& cands) {
    auto norm = [](const std::vector<float>& v) {
        double s = 0;
        for (float x : v)
            s += static_cast<double>(x) * x;
        return std::sqrt(s);
    };
    const double nq = norm(q);
    std::size_t best = 0;
    double best_score = -2.0;
    for (std::size_t i = 0; i < cands.size(); ++i) {
        double d = 0;
        for (std::size_t j = 0; j < q.size(); ++j)
            d += static_cast<double>(q[j]) * cands[i][j];
        double s = d / (nq * norm(cands[i]));
        if (s > best_score) {
            best_score = s;
            best = i;
        }
    }
    return best;
}

/// Fleiss' kappa straight from the definition, for (agree, disagree) style
/// rows of any width.
inline double oracle_fleiss(const std::vector<std::vector<int>>& table) {
    const double N = static_cast<double>(table.size());
    double n = 0;
    for (int c : table[0])
        n += c;
    const std::size_t k = table[0].size();
    double P = 0;
    std::vector<double> pj(k, 0.0);
    for (const auto& row : table) {
        double s = 0;
        for (std::size_t j = 0; j < k; ++j) {
            s += row[j] * (row[j] - 1.0);
            pj[j] += row[j];
        }
        P += s / (n * (n - 1));
    }
    P /= N;
    double Pe = 0;
    for (double t : pj)
        Pe += (t / (N * n)) * (t / (N * n));
    return (P - Pe) / (1 - Pe);
}

// ---------------------------------------------------------------------------
// Synthetic datasets on top of the stub embedding.

struct Synthetic {
    DatasetManifest manifest;
    DescriptionStore store;
    std::set<std::string> planted;
};

inline const std::vector<std::string>& generic_objects() {
    static const std::vector<std::string> pool{"table", "chair", "wall",  "floor", "window", "person",
                                               "shirt", "door",  "lamp",  "tree",  "car",    "cup",
                                               "bag",   "sky",   "grass", "road",  "shelf",  "box"};
    return pool;
}

inline void fill_frame(DescriptionStore& store, const std::string& vid, std::size_t f,
                       const std::vector<std::string>& objects, const std::string& activity) {
    std::string desc = "A scene with";
    for (const auto& o : objects)
        desc += " " + o;
    desc += ".";
    store.put({vid, f, Concept::objects}, objects);
    store.put({vid, f, Concept::obj_comp_act}, desc + " Someone is " + activity + ".");
    store.put({vid, f, Concept::obj_comp_act_15w}, desc);
    store.put({vid, f, Concept::activities}, std::vector<std::string>{activity});
    store.put({vid, f, Concept::verbs}, std::vector<std::string>{activity});
}

/// Classification fixture with `planted` test samples whose object lists
/// carry their label text verbatim. Train videos are all planted so the
/// probes learn the label tokens.
inline Synthetic make_planted_classification(std::uint64_t seed, std::size_t classes = 5,
                                             std::size_t test_per_class = 20, std::size_t train_per_class = 10,
                                             std::size_t planted = 40, std::size_t frames = 4) {
    static const std::vector<std::string> names{"archery", "bowling", "fencing", "juggling", "surfing",
                                                "rowing",  "skating", "boxing",  "diving",   "climbing"};
    std::mt19937_64 rng(seed);
    Synthetic s;
    s.manifest.name = "planted";
    s.manifest.task = Task::classification;
    s.manifest.classes.assign(names.begin(), names.begin() + static_cast<long>(classes));
    const auto& pool = generic_objects();
    std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);

    std::vector<std::string> test_ids;
    auto add = [&](const std::string& vid, std::size_t label, SplitRole role) {
        VideoEntry v;
        v.id = vid;
        v.label_index = label;
        v.split = role;
        for (std::size_t f = 0; f < frames; ++f)
            v.frame_paths.push_back(vid + "_" + std::to_string(f) + ".jpg");
        s.manifest.videos.push_back(std::move(v));
        if (role == SplitRole::test)
            test_ids.push_back(vid);
    };
    for (std::size_t c = 0; c < classes; ++c) {
        for (std::size_t i = 0; i < train_per_class; ++i)
            add("tr" + std::to_string(c) + "_" + std::to_string(i), c, SplitRole::train);
        for (std::size_t i = 0; i < test_per_class; ++i)
            add("te" + std::to_string(c) + "_" + std::to_string(i), c, SplitRole::test);
    }
    std::vector<std::string> shuffled = test_ids;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    s.planted.insert(shuffled.begin(), shuffled.begin() + static_cast<long>(std::min(planted, shuffled.size())));

    for (const auto& v : s.manifest.videos) {
        const bool plant = v.split == SplitRole::train || s.planted.contains(v.id);
        for (std::size_t f = 0; f < frames; ++f) {
            std::vector<std::string> objects;
            for (int k = 0; k < 3; ++k)
                objects.push_back(pool[pick(rng)]);
            if (plant)
                objects.push_back(s.manifest.classes[*v.label_index]);
            fill_frame(s.store, v.id, f, objects, "moving");
        }
    }
    s.manifest.validate();
    return s;
}

/// Small random classification dataset: label words appear in some frames
/// of some videos, everything else is noise.
inline Synthetic random_classification(std::mt19937_64& rng) {
    static const std::vector<std::string> names{"cooking", "running", "painting", "swimming", "singing", "dancing"};
    Synthetic s;
    s.manifest.name = "random";
    s.manifest.task = Task::classification;
    std::uniform_int_distribution<std::size_t> nclass(2, names.size());
    const auto classes = nclass(rng);
    s.manifest.classes.assign(names.begin(), names.begin() + static_cast<long>(classes));
    const auto& pool = generic_objects();
    std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1), frames_d(1, 8), count_d(8, 24);
    std::bernoulli_distribution coin(0.35);
    const auto n = count_d(rng);
    for (std::size_t i = 0; i < n; ++i) {
        VideoEntry v;
        v.id = "v" + std::to_string(i);
        v.label_index = rng() % classes;
        v.split = i % 2 ? SplitRole::test : SplitRole::train;
        const auto frames = frames_d(rng);
        for (std::size_t f = 0; f < frames; ++f) {
            v.frame_paths.push_back(v.id + "_" + std::to_string(f));
            std::vector<std::string> objects{pool[pick(rng)], pool[pick(rng)]};
            if (coin(rng))
                objects.push_back(s.manifest.classes[rng() % classes]);
            if (coin(rng))
                objects.push_back(s.manifest.classes[*v.label_index]);
            fill_frame(s.store, v.id, f, objects, pool[pick(rng)]);
        }
        s.manifest.videos.push_back(std::move(v));
    }
    // Every class present in train keeps the probe well posed.
    for (std::size_t c = 0; c < classes; ++c) {
        VideoEntry v;
        v.id = "anchor" + std::to_string(c);
        v.label_index = c;
        v.split = SplitRole::train;
        v.frame_paths = {"a"};
        fill_frame(s.store, v.id, 0, {s.manifest.classes[c]}, "waiting");
        s.manifest.videos.push_back(std::move(v));
    }
    s.manifest.validate();
    return s;
}

inline Synthetic random_retrieval(std::mt19937_64& rng, std::size_t videos = 12) {
    Synthetic s;
    s.manifest.name = "random-ret";
    s.manifest.task = Task::retrieval;
    const auto& pool = generic_objects();
    std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1), frames_d(1, 6);
    for (std::size_t i = 0; i < videos; ++i) {
        VideoEntry v;
        v.id = "r" + std::to_string(i);
        v.split = SplitRole::test;
        std::vector<std::string> caps;
        std::string key = pool[pick(rng)];
        caps.push_back("a video about " + key + " and " + pool[pick(rng)]);
        if (rng() % 2)
            caps.push_back("someone near a " + key);
        v.captions = caps;
        const auto frames = frames_d(rng);
        for (std::size_t f = 0; f < frames; ++f) {
            v.frame_paths.push_back(v.id + "_" + std::to_string(f));
            std::vector<std::string> objects{pool[pick(rng)], pool[pick(rng)]};
            if (rng() % 2)
                objects.push_back(key);
            fill_frame(s.store, v.id, f, objects, "standing");
        }
        s.manifest.videos.push_back(std::move(v));
    }
    s.manifest.validate();
    return s;
}

} // namespace utd::test
