#pragma once

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <array>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "utd/annotate.hpp"
#include "utd/benchmark.hpp"
#include "utd/biaseval.hpp"
#include "utd/corpus.hpp"
#include "utd/debias.hpp"
#include "utd/embed.hpp"
#include "utd/endpoint.hpp"
#include "utd/error.hpp"
#include "utd/hashing.hpp"
#include "utd/json_io.hpp"
#include "utd/prompts.hpp"
#include "utd/represent.hpp"
#include "utd/response_cache.hpp"
#include "utd/trainlin.hpp"

namespace utd::cli {

namespace fs = std::filesystem;

inline constexpr std::string_view kDefaultVlmModel = "llava-v1.6-mistral-7b";
inline constexpr std::string_view kDefaultLlmModel = "Mistral-7B-Instruct-v0.2";
inline constexpr std::string_view kDefaultEmbedModel = "SFR-Embedding-Mistral";

/// Flags shared by every subcommand plus the merged config document.
struct Common {
    std::string config_path;
    bool stub = false;
    json config = json::object();

    json section(const char* name) const {
        if (config.contains(name) && config.at(name).is_object())
            return config.at(name);
        return json::object();
    }

    EndpointConfig endpoint(const char* name, std::string_view default_model) const {
        json s = section("endpoints");
        json e = s.contains(name) ? s.at(name) : json::object();
        if (stub)
            e["kind"] = "stub";
        return EndpointConfig::from_json(e, std::string(default_model));
    }

    /// Flag value if given, else config key, else fallback.
    std::string pick(const CLI::Option* opt, const std::string& flag, const char* key,
                     const std::string& fallback = {}) const {
        if (opt && opt->count() > 0)
            return flag;
        if (config.contains(key) && config.at(key).is_string())
            return config.at(key).get<std::string>();
        return fallback;
    }

    TrainConfig train() const {
        TrainConfig t;
        json s = section("train");
        t.l2 = s.value("l2", t.l2);
        t.max_iterations = s.value("max_iterations", t.max_iterations);
        t.gradient_tolerance = s.value("gradient_tolerance", t.gradient_tolerance);
        t.history = s.value("history", t.history);
        return t;
    }
};

inline std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == ',') {
            if (!cur.empty())
                out.push_back(trim(cur));
            cur.clear();
        } else {
            cur += c;
        }
    }
    if (!trim(cur).empty())
        out.push_back(trim(cur));
    return out;
}

inline std::vector<Concept> parse_concepts(const std::string& s, std::span<const Concept> fallback) {
    if (s.empty())
        return {fallback.begin(), fallback.end()};
    std::vector<Concept> out;
    for (const auto& name : split_list(s)) {
        auto c = parse_concept(name);
        if (!c)
            fail(ErrorKind::Precondition, "unknown concept", name);
        out.push_back(*c);
    }
    return out;
}

inline std::vector<Temporal> parse_temporals(const std::string& s) {
    if (s.empty())
        return {kAllTemporals.begin(), kAllTemporals.end()};
    std::vector<Temporal> out;
    for (const auto& name : split_list(s)) {
        auto t = parse_temporal(name);
        if (!t)
            fail(ErrorKind::Precondition, "unknown temporal representation", name);
        out.push_back(*t);
    }
    return out;
}

inline std::array<std::uint64_t, 3> parse_seeds(const std::string& s) {
    auto parts = split_list(s);
    if (parts.size() != 3)
        fail(ErrorKind::Precondition, "--seeds takes exactly three integers", s);
    std::array<std::uint64_t, 3> out{};
    for (std::size_t i = 0; i < 3; ++i) {
        try {
            std::size_t used = 0;
            out[i] = std::stoull(parts[i], &used);
            if (used != parts[i].size())
                throw std::invalid_argument(parts[i]);
        } catch (const std::exception&) {
            fail(ErrorKind::Precondition, "seed is not an unsigned integer", parts[i]);
        }
    }
    return out;
}

inline std::string file_digest(const fs::path& p) { return sha256_hex(read_file(p)); }

/// Writes "<output>.provenance.json". Holds only content digests and
/// settings, never paths or times, so identical runs match byte for byte.
inline void write_provenance(const fs::path& output, const std::string& command, const json& settings,
                             const json& inputs, const json& models, const json& seeds = json::array()) {
    json record{{"command", command},
                {"config_hash", sha256_hex(settings.dump())},
                {"settings", settings},
                {"inputs", inputs},
                {"models", models},
                {"seeds", seeds}};
    write_json(fs::path(output.string() + ".provenance.json"), record);
}

inline json train_json(const TrainConfig& t) {
    return json{{"l2", t.l2},
                {"max_iterations", t.max_iterations},
                {"gradient_tolerance", t.gradient_tolerance},
                {"history", t.history}};
}

/// Embedder backed by the per-model file in `cache_dir` (in-memory when empty).
inline Embedder make_embedder(const Common& common, const std::string& cache_dir) {
    auto cfg = common.endpoint("embed", kDefaultEmbedModel);
    fs::path file;
    if (!cache_dir.empty()) {
        fs::create_directories(cache_dir);
        file = EmbeddingCache::file_for(cache_dir, cfg.model);
    }
    auto cache = std::make_shared<EmbeddingCache>(file, cfg.model);
    return Embedder(EmbeddingClient(cfg, make_transport(cfg)), std::move(cache));
}

inline std::string extension(const fs::path& p) {
    auto e = p.extension().string();
    for (auto& c : e)
        c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return e;
}

inline json report_json(const ValidationReport& r) {
    json concepts = json::object();
    for (const auto& [c, st] : r.concepts) {
        json missing = json::array();
        for (const auto& k : st.missing)
            missing.push_back(to_string(k));
        concepts[std::string(to_string(c))] = {{"complete_videos", st.complete_videos}, {"missing", missing}};
    }
    return json{{"concepts", concepts}, {"total_missing", r.total_missing()}, {"warnings", r.warnings}};
}

// ---------------------------------------------------------------------------
// Subcommands

struct AnnotateArgs {
    std::string manifest, descriptions, out, concepts, response_cache, fewshot;
    int max_in_flight = 0;
};

inline int run_annotate(const Common& common, const AnnotateArgs& a, bool extract_only,
                        const std::map<std::string, const CLI::Option*>& opts) {
    const auto manifest_path = common.pick(opts.at("manifest"), a.manifest, "manifest");
    const auto desc_path = common.pick(opts.at("descriptions"), a.descriptions, "descriptions");
    const auto cache_dir = common.pick(opts.at("response-cache"), a.response_cache, "response_cache");
    const auto fewshot = common.pick(opts.at("fewshot"), a.fewshot, "fewshot");
    if (manifest_path.empty())
        fail(ErrorKind::Precondition, "--manifest is required");
    if (extract_only && desc_path.empty())
        fail(ErrorKind::Precondition, "extract needs --descriptions with frame descriptions");

    auto manifest = load_manifest(manifest_path);
    DescriptionStore existing;
    json inputs{{"manifest", file_digest(manifest_path)}};
    if (!desc_path.empty() && fs::exists(desc_path)) {
        existing = load_descriptions(desc_path, manifest);
        inputs["descriptions"] = file_digest(desc_path);
    }

    static constexpr std::array kExtractConcepts{Concept::objects, Concept::activities, Concept::verbs,
                                                 Concept::obj_comp_act_15w};
    auto list = extract_only ? parse_concepts(a.concepts, kExtractConcepts) : parse_concepts(a.concepts, kAllConcepts);
    std::set<Concept> concepts(list.begin(), list.end());
    if (extract_only && concepts.contains(Concept::obj_comp_act))
        fail(ErrorKind::Precondition, "extract derives concepts from existing descriptions; use annotate for frames");

    auto vlm_cfg = common.endpoint("vlm", kDefaultVlmModel);
    auto llm_cfg = common.endpoint("llm", kDefaultLlmModel);
    auto lib = PromptLibrary::defaults();
    if (!fewshot.empty()) {
        lib.load_exemplars(fewshot);
        inputs["fewshot"] = file_digest(fewshot);
    }
    Annotator annotator(ChatClient(vlm_cfg, make_transport(vlm_cfg)), ChatClient(llm_cfg, make_transport(llm_cfg)),
                        lib, cache_dir.empty() ? ResponseCache{} : ResponseCache{cache_dir});
    const auto workers = static_cast<std::size_t>(a.max_in_flight > 0 ? a.max_in_flight : llm_cfg.max_in_flight);
    auto result = annotate_dataset(manifest, annotator, concepts, std::move(existing), workers);

    fs::path out = a.out.empty() ? fs::path(desc_path) : fs::path(a.out);
    if (out.empty())
        fail(ErrorKind::Precondition, "--out is required");
    write_descriptions(result.store, manifest, out);

    json names = json::array();
    for (auto c : concepts)
        names.push_back(to_string(c));
    json settings{{"concepts", names},
                  {"vlm", vlm_cfg.describe()},
                  {"llm", llm_cfg.describe()},
                  {"prompts", lib.fingerprint(lib.extract_objects, lib.object_shots)}};
    write_provenance(out, extract_only ? "extract" : "annotate", settings, inputs,
                     json{{"vlm", vlm_cfg.model}, {"llm", llm_cfg.model}});

    if (!result.failures.empty()) {
        json failures = json::array();
        for (const auto& f : result.failures)
            failures.push_back({{"key", to_string(f.key)}, {"error", f.message}});
        write_json(fs::path(out.string() + ".failures.json"), failures);
        std::cerr << result.failures.size() << " annotation(s) failed; see " << out.string() << ".failures.json\n";
        return 1;
    }
    std::cout << "wrote " << result.store.size() << " entries to " << out.string() << "\n";
    return 0;
}

struct EvalArgs {
    std::string manifest, descriptions, embed_cache, concepts, temporals, mode, out, seeds, family;
    bool balanced = false;
};

struct LoadedInputs {
    DatasetManifest manifest;
    DescriptionStore store;
    json inputs;
};

inline LoadedInputs load_inputs(const std::string& manifest_path, const std::string& desc_path) {
    if (manifest_path.empty())
        fail(ErrorKind::Precondition, "--manifest is required");
    if (desc_path.empty())
        fail(ErrorKind::Precondition, "--descriptions is required");
    LoadedInputs in{load_manifest(manifest_path), {}, {}};
    in.store = load_descriptions(desc_path, in.manifest);
    in.inputs = {{"manifest", file_digest(manifest_path)}, {"descriptions", file_digest(desc_path)}};
    return in;
}

inline int run_embed(const Common& common, const EvalArgs& a, const std::map<std::string, const CLI::Option*>& opts) {
    auto in = load_inputs(common.pick(opts.at("manifest"), a.manifest, "manifest"),
                          common.pick(opts.at("descriptions"), a.descriptions, "descriptions"));
    const auto cache_dir = common.pick(opts.at("embed-cache"), a.embed_cache, "embed_cache");
    if (cache_dir.empty())
        fail(ErrorKind::Precondition, "--embed-cache is required");
    auto embedder = make_embedder(common, cache_dir);
    EvalContext ctx{in.manifest, in.store, embedder, common.train()};
    const auto& m = in.manifest;
    const auto concepts = parse_concepts(a.concepts, kRepresentationConcepts);
    const auto temporals = parse_temporals(a.temporals);

    std::vector<const VideoEntry*> all;
    for (const auto& v : m.videos)
        all.push_back(&v);
    for (auto c : concepts)
        for (auto t : temporals) {
            RepresentationSpec spec{c, t};
            detail::represent_videos(ctx, all, spec, video_instruction(m.task, c, arity_of(t)));
        }
    for (auto arity : {Arity::single_frame, Arity::multi_frame}) {
        if (m.task == Task::classification) {
            embedder.embed_label_set(m.classes, target_instruction(m.task, arity));
        } else {
            std::vector<std::string> captions;
            for (const auto& q : m.test_queries())
                captions.push_back(q.text);
            if (!captions.empty())
                embedder.embed_many(captions, target_instruction(m.task, arity));
        }
    }
    const auto cache_file = embedder.cache().path();
    json settings{{"endpoint", common.endpoint("embed", kDefaultEmbedModel).describe()}};
    write_provenance(cache_file, "embed", settings, in.inputs, json{{"embed", embedder.model()}});
    std::cout << "cache " << cache_file.string() << ": " << embedder.cache().size() << " vectors, "
              << embedder.endpoint_requests() << " endpoint requests\n";
    return 0;
}

inline int run_bias(const Common& common, const EvalArgs& a, const std::map<std::string, const CLI::Option*>& opts) {
    auto in = load_inputs(common.pick(opts.at("manifest"), a.manifest, "manifest"),
                          common.pick(opts.at("descriptions"), a.descriptions, "descriptions"));
    auto embedder = make_embedder(common, common.pick(opts.at("embed-cache"), a.embed_cache, "embed_cache"));
    const auto mode_name = common.pick(opts.at("mode"), a.mode, "mode", "cs");
    auto mode = parse_bias_mode(mode_name);
    if (!mode)
        fail(ErrorKind::Precondition, "--mode must be cs or ds", mode_name);
    const auto train = common.train();
    EvalContext ctx{in.manifest, in.store, embedder, train};
    const auto concepts = parse_concepts(a.concepts, kRepresentationConcepts);
    const auto temporals = parse_temporals(a.temporals);
    auto report = bias_grid(ctx, concepts, temporals, *mode);

    fs::path out = a.out.empty() ? fs::path("bias_report.json") : fs::path(a.out);
    const auto ext = extension(out);
    if (ext == ".csv")
        write_file_atomic(out, render_csv(report));
    else if (ext == ".md")
        write_file_atomic(out, render_markdown(report));
    else
        write_json(out, to_json(report));

    json cn = json::array(), tn = json::array();
    for (auto c : concepts)
        cn.push_back(to_string(c));
    for (auto t : temporals)
        tn.push_back(to_string(t));
    json settings{{"mode", to_string(*mode)},
                  {"concepts", cn},
                  {"temporals", tn},
                  {"train", train_json(train)},
                  {"endpoint", common.endpoint("embed", kDefaultEmbedModel).describe()}};
    write_provenance(out, "bias", settings, in.inputs, json{{"embed", embedder.model()}},
                     json::array({train.seed}));
    std::cout << render_markdown(report);
    return 0;
}

inline int run_split(const Common& common, const EvalArgs& a, const std::map<std::string, const CLI::Option*>& opts) {
    auto in = load_inputs(common.pick(opts.at("manifest"), a.manifest, "manifest"),
                          common.pick(opts.at("descriptions"), a.descriptions, "descriptions"));
    const auto& m = in.manifest;
    auto embedder = make_embedder(common, common.pick(opts.at("embed-cache"), a.embed_cache, "embed_cache"));
    auto mode_name = common.pick(opts.at("mode"), a.mode, "mode");
    BiasMode mode = default_debias_mode(m.task);
    if (!mode_name.empty()) {
        auto parsed = parse_bias_mode(mode_name);
        if (!parsed)
            fail(ErrorKind::Precondition, "--mode must be cs or ds", mode_name);
        mode = *parsed;
    }
    std::array<std::uint64_t, 3> seeds = kDefaultPanelSeeds;
    if (opts.at("seeds")->count() > 0)
        seeds = parse_seeds(a.seeds);
    else if (common.config.contains("seeds"))
        seeds = common.config.at("seeds").get<std::array<std::uint64_t, 3>>();
    Concept family = kDebiasConcept;
    if (!a.family.empty()) {
        auto c = parse_concept(a.family);
        if (!c || *c == Concept::obj_comp_act_15w)
            fail(ErrorKind::Precondition, "unsupported split concept", a.family);
        family = *c;
    }
    const auto train = common.train();
    EvalContext ctx{m, in.store, embedder, train};
    auto panel = build_panel(ctx, mode, seeds, family);
    auto vm = verdicts(panel, ctx);
    auto info = panel.info();
    auto utd_split = build_utd_split(vm, m.name, info);
    auto split = a.balanced ? build_balanced_split(vm, m, info) : utd_split;
    auto stats = split_stats(vm, utd_split);

    if (a.out.empty())
        fail(ErrorKind::Precondition, "--out is required");
    fs::path out(a.out);
    write_split(split, out);
    auto sibling = [&](const char* suffix) {
        return out.parent_path() / (out.stem().string() + suffix);
    };
    write_json(sibling(".stats.json"), to_json(stats));
    write_json(sibling(".verdicts.json"), to_json(vm));

    json settings{{"mode", to_string(mode)},
                  {"balanced", a.balanced},
                  {"concept", to_string(family)},
                  {"seeds", seeds},
                  {"train", train_json(train)},
                  {"endpoint", common.endpoint("embed", kDefaultEmbedModel).describe()}};
    write_provenance(out, "split", settings, in.inputs, json{{"embed", embedder.model()}}, json(seeds));
    char line[160];
    std::snprintf(line, sizeof line, "%s: kappa %.1f, %.1f%% object-biased, %.1f%% retained (%zu of %zu)\n",
                  std::string(to_string(split.split_type)).c_str(), 100.0 * stats.kappa, stats.percent_biased,
                  stats.percent_retained, split.retained.size(), split.test_size());
    std::cout << line;
    return 0;
}

inline int run_kappa(const std::string& verdicts_path, const std::string& out) {
    if (verdicts_path.empty())
        fail(ErrorKind::Precondition, "--verdicts is required");
    auto vm = verdicts_from_json(read_json(verdicts_path), verdicts_path);
    if (vm.rows() == 0)
        fail(ErrorKind::EmptyTestSet, "verdict matrix has no rows", verdicts_path);
    const double kappa = fleiss_kappa(vm);
    std::size_t unanimous = 0;
    for (std::size_t i = 0; i < vm.rows(); ++i)
        unanimous += vm.unanimous_correct(i) ? 1 : 0;
    json result{{"kappa", kappa}, {"items", vm.rows()}, {"raters", kPanelSize}, {"unanimous_correct", unanimous}};
    if (!out.empty()) {
        write_json(out, result);
        write_provenance(out, "kappa", json::object(), json{{"verdicts", file_digest(verdicts_path)}}, json::object());
    }
    std::cout << format_full(kappa) << "\n";
    return 0;
}

struct BenchArgs {
    std::string preds, manifest, splits, out;
};

inline int run_benchmark(const Common& common, const BenchArgs& a, const CLI::Option* manifest_opt) {
    const auto manifest_path = common.pick(manifest_opt, a.manifest, "manifest");
    if (manifest_path.empty())
        fail(ErrorKind::Precondition, "--manifest is required");
    auto manifest = load_manifest(manifest_path);
    json inputs{{"manifest", file_digest(manifest_path)}, {"predictions", json::array()}, {"splits", json::array()}};
    std::vector<PredictionSet> preds;
    for (const auto& p : split_list(a.preds)) {
        preds.push_back(load_predictions(p, manifest));
        inputs["predictions"].push_back(file_digest(p));
    }
    std::vector<NamedSplit> splits;
    for (const auto& s : split_list(a.splits)) {
        splits.push_back({fs::path(s).stem().string(), load_split(s)});
        inputs["splits"].push_back(file_digest(s));
    }
    if (preds.empty() || splits.empty())
        fail(ErrorKind::Precondition, "benchmark needs --preds and --splits");
    auto table = delta_table(preds, manifest, splits);

    fs::path out = a.out.empty() ? fs::path("benchmark.csv") : fs::path(a.out);
    const auto ext = extension(out);
    if (ext == ".md")
        write_file_atomic(out, render_markdown(table));
    else if (ext == ".json")
        write_json(out, to_json(table));
    else
        write_file_atomic(out, render_csv(table));
    json models = json::array();
    for (const auto& p : preds)
        models.push_back(p.model);
    write_provenance(out, "benchmark", json{{"metric", table.metric}}, inputs, json{{"predictions", models}});
    std::cout << render_markdown(table);
    return 0;
}

struct ValidateArgs {
    std::string manifest, descriptions, split, concepts, out;
};

inline int run_validate(const Common& common, const ValidateArgs& a,
                        const std::map<std::string, const CLI::Option*>& opts) {
    const auto manifest_path = common.pick(opts.at("manifest"), a.manifest, "manifest");
    if (manifest_path.empty())
        fail(ErrorKind::Precondition, "--manifest is required");
    auto manifest = load_manifest(manifest_path);
    json result{{"manifest", {{"name", manifest.name},
                              {"task", to_string(manifest.task)},
                              {"videos", manifest.videos.size()},
                              {"test_samples", manifest.test_sample_ids().size()}}}};
    const auto desc_path = common.pick(opts.at("descriptions"), a.descriptions, "descriptions");
    if (!desc_path.empty()) {
        auto store = load_descriptions(desc_path, manifest);
        auto concepts = parse_concepts(a.concepts, kAllConcepts);
        result["descriptions"] = report_json(validate_store(store, manifest, concepts));
    }
    if (!a.split.empty()) {
        auto split = load_split(a.split);
        check_split_against(split, manifest.test_sample_ids());
        result["split"] = {{"split_type", to_string(split.split_type)},
                           {"retained", split.retained.size()},
                           {"removed", split.removed.size()}};
    }
    if (!a.out.empty()) {
        write_json(a.out, result);
        write_provenance(a.out, "validate", json::object(), json{{"manifest", file_digest(manifest_path)}},
                         json::object());
    }
    std::cout << canonical_dump(result);
    return 0;
}

// ---------------------------------------------------------------------------

inline void configure_logging() {
    static bool done = false;
    if (done)
        return;
    done = true;
    auto logger = spdlog::stderr_color_mt("utd");
    spdlog::set_default_logger(logger);
    spdlog::set_pattern("[%l] %v");
    spdlog::set_level(spdlog::level::warn);
    if (const char* lvl = std::getenv("UTD_LOG"); lvl && *lvl)
        spdlog::set_level(spdlog::level::from_str(lvl));
}

/// Runs one `utd` invocation. Returns 0 on success, 1 on a domain error and
/// 2 on a usage error.
inline int dispatch(int argc, const char* const* argv) {
    configure_logging();
    CLI::App app{"utd: representation-bias analysis and debiased evaluation splits"};
    app.require_subcommand(1);
    Common common;
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", common.config_path, "JSON config file; flags win over its keys")
            ->check(CLI::ExistingFile);
        sub->add_flag("--stub", common.stub, "use the built-in deterministic stub endpoints");
    };
    std::map<std::string, const CLI::Option*> opts;

    AnnotateArgs ann;
    auto add_annotate = [&](const char* name, const char* help) {
        auto* sub = app.add_subcommand(name, help);
        add_common(sub);
        return sub;
    };
    auto* annotate_cmd = add_annotate("annotate", "describe frames and extract concepts");
    auto* extract_cmd = add_annotate("extract", "derive concept lists and summaries from existing descriptions");
    std::map<std::string, const CLI::Option*> ann_opts_a, ann_opts_e;
    for (auto [sub, o] : {std::pair{annotate_cmd, &ann_opts_a}, std::pair{extract_cmd, &ann_opts_e}}) {
        (*o)["manifest"] = sub->add_option("--manifest", ann.manifest, "dataset manifest");
        (*o)["descriptions"] = sub->add_option("--descriptions", ann.descriptions, "existing descriptions file");
        sub->add_option("--out", ann.out, "output descriptions file");
        sub->add_option("--concepts", ann.concepts, "comma-separated concepts");
        (*o)["response-cache"] = sub->add_option("--response-cache", ann.response_cache, "endpoint response cache dir");
        (*o)["fewshot"] = sub->add_option("--fewshot", ann.fewshot, "few-shot exemplar file")->check(CLI::ExistingFile);
        sub->add_option("--max-in-flight", ann.max_in_flight, "concurrent requests");
    }

    EvalArgs ev;
    std::map<std::string, const CLI::Option*> ev_opts_embed, ev_opts_bias, ev_opts_split;
    auto add_eval = [&](const char* name, const char* help, std::map<std::string, const CLI::Option*>& o) {
        auto* sub = app.add_subcommand(name, help);
        add_common(sub);
        o["manifest"] = sub->add_option("--manifest,--dataset", ev.manifest, "dataset manifest");
        o["descriptions"] = sub->add_option("--descriptions", ev.descriptions, "descriptions file");
        o["embed-cache"] = sub->add_option("--embed-cache", ev.embed_cache, "embedding cache directory");
        return sub;
    };
    auto* embed_cmd = add_eval("embed", "embed every representation text into the cache", ev_opts_embed);
    embed_cmd->add_option("--concepts", ev.concepts, "comma-separated concepts");
    embed_cmd->add_option("--temporals", ev.temporals, "comma-separated temporal representations");

    auto* bias_cmd = add_eval("bias", "concept x temporal bias grid", ev_opts_bias);
    ev_opts_bias["mode"] = bias_cmd->add_option("--mode", ev.mode, "cs (common-sense) or ds (dataset)");
    bias_cmd->add_option("--concepts,--concept", ev.concepts, "comma-separated concepts");
    bias_cmd->add_option("--temporals,--temporal", ev.temporals, "comma-separated temporal representations");
    bias_cmd->add_option("--out", ev.out, "report file (.json, .csv or .md)");

    auto* split_cmd = add_eval("split", "build a UTD or UTD-balanced split", ev_opts_split);
    ev_opts_split["mode"] = split_cmd->add_option("--mode", ev.mode, "cs or ds (default by task)");
    ev_opts_split["seeds"] = split_cmd->add_option("--seeds", ev.seeds, "three bootstrap seeds a,b,c (default 1,2,3)");
    split_cmd->add_flag("--balanced", ev.balanced, "keep the class distribution");
    split_cmd->add_option("--concept", ev.family, "concept to debias against (default objects)");
    split_cmd->add_option("--out", ev.out, "split file")->required();

    std::string verdicts_path, kappa_out;
    auto* kappa_cmd = app.add_subcommand("kappa", "Fleiss' kappa of a verdict matrix");
    add_common(kappa_cmd);
    kappa_cmd->add_option("--verdicts", verdicts_path, "verdict matrix written by split")
        ->required()
        ->check(CLI::ExistingFile);
    kappa_cmd->add_option("--out", kappa_out, "optional JSON result file");

    BenchArgs bench;
    auto* bench_cmd = app.add_subcommand("benchmark", "score predictions on full vs. debiased splits");
    add_common(bench_cmd);
    bench_cmd->add_option("--preds", bench.preds, "prediction files, comma-separated")->required();
    auto* bench_manifest = bench_cmd->add_option("--manifest", bench.manifest, "dataset manifest");
    bench_cmd->add_option("--splits", bench.splits, "split files, comma-separated")->required();
    bench_cmd->add_option("--out", bench.out, "report file (.csv, .md or .json)");

    ValidateArgs val;
    std::map<std::string, const CLI::Option*> val_opts;
    auto* validate_cmd = app.add_subcommand("validate", "check manifest, descriptions and split files");
    add_common(validate_cmd);
    val_opts["manifest"] = validate_cmd->add_option("--manifest", val.manifest, "dataset manifest");
    val_opts["descriptions"] = validate_cmd->add_option("--descriptions", val.descriptions, "descriptions file");
    validate_cmd->add_option("--split", val.split, "split file");
    validate_cmd->add_option("--concepts", val.concepts, "concepts required to be complete");
    validate_cmd->add_option("--out", val.out, "optional JSON report file");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (!common.config_path.empty()) {
            common.config = read_json(common.config_path);
            if (!common.config.is_object())
                fail(ErrorKind::Schema, "config must be a JSON object", common.config_path);
        }
        if (annotate_cmd->parsed())
            return run_annotate(common, ann, false, ann_opts_a);
        if (extract_cmd->parsed())
            return run_annotate(common, ann, true, ann_opts_e);
        if (embed_cmd->parsed())
            return run_embed(common, ev, ev_opts_embed);
        if (bias_cmd->parsed())
            return run_bias(common, ev, ev_opts_bias);
        if (split_cmd->parsed())
            return run_split(common, ev, ev_opts_split);
        if (kappa_cmd->parsed())
            return run_kappa(verdicts_path, kappa_out);
        if (bench_cmd->parsed())
            return run_benchmark(common, bench, bench_manifest);
        if (validate_cmd->parsed())
            return run_validate(common, val, val_opts);
    } catch (const Error& e) {
        std::cerr << "utd: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "utd: " << e.what() << "\n";
        return 1;
    }
    return 2;
}

} // namespace utd::cli
