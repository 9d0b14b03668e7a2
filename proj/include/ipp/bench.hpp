#pragma once

#include <chrono>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "ipp/corpus.hpp"
#include "ipp/gateway.hpp"
#include "ipp/metrics.hpp"
#include "ipp/parallel.hpp"
#include "ipp/planners.hpp"
#include "ipp/simulator.hpp"
#include "ipp/version.hpp"

namespace ipp {

// Planner selector, parsed from strings like "pop", "seqgen-fix" or
// "llm:cot@planner" (kind[:variant][@provider-role]).
struct PlannerSpec {
    enum class Kind { pop, seqgen, seqgen_fix, llm };
    Kind kind = Kind::pop;
    PromptVariant variant = PromptVariant::base;
    std::string provider_role = "planner";

    std::string id() const {
        switch (kind) {
            case Kind::pop: return "pop";
            case Kind::seqgen: return "seqgen";
            case Kind::seqgen_fix: return "seqgen-fix";
            case Kind::llm: return "llm-" + prompt_variant_name(variant);
        }
        return "?";
    }

    static PlannerSpec parse(const std::string& text) {
        PlannerSpec spec;
        std::string body = text;
        if (auto at = body.find('@'); at != std::string::npos) {
            spec.provider_role = body.substr(at + 1);
            body = body.substr(0, at);
        }
        std::string kind = body, variant;
        if (auto colon = body.find(':'); colon != std::string::npos) {
            kind = body.substr(0, colon);
            variant = body.substr(colon + 1);
        }
        if (kind == "pop") spec.kind = Kind::pop;
        else if (kind == "seqgen") spec.kind = Kind::seqgen;
        else if (kind == "seqgen-fix") spec.kind = Kind::seqgen_fix;
        else if (kind == "llm") spec.kind = Kind::llm;
        else throw ConfigError("unknown planner '" + text + "'");
        if (!variant.empty()) {
            if (spec.kind != Kind::llm)
                throw ConfigError("only llm planners take a prompt variant: '" + text + "'");
            spec.variant = prompt_variant_from_name(variant);
        }
        return spec;
    }
};

struct ExperimentConfig {
    Dataset dataset = Dataset::movielens_1m;
    std::filesystem::path data_dir;
    std::filesystem::path output_dir;
    GatewayMode mode = GatewayMode::replay;
    std::vector<PlannerSpec> planners;
    std::vector<std::string> judges;            // provider role names
    std::set<std::string> metrics;              // empty = all
    int case_sample = 500;                      // -1 = all test cases
    std::uint64_t split_seed = 1, target_seed = 2, train_seed = 3;
    double train_fraction = 0.2;
    int min_intermediate = 5;
    std::optional<int> year_cap;                // dataset default when unset
    int min_seq_len = 20;                       // MovieLens length filter
    int lastfm_target_seqs = 1297;              // Last.FM threshold-sweep target
    double seqgen_blend = 0.5;
    int pop_length = 0;                         // 0 -> min_intermediate + 1
    bool coherence_literal_norm = false;
    SimulatorConfig sim;
    std::map<std::string, ProviderConfig> providers;
    std::map<std::string, GatewayMode> provider_mode_override;
    std::string embed_provider = "simulator";   // provider role or "simulator"
    std::filesystem::path cache_path;           // default: output_dir/cache.jsonl

    int effective_year_cap_or(int fallback) const {
        if (year_cap) return *year_cap;
        (void)fallback;
        return dataset == Dataset::movielens_1m ? 2001 : 2011;
    }

    std::optional<int> effective_year_cap() const {
        if (year_cap) return year_cap;
        return dataset == Dataset::movielens_1m ? std::optional<int>(2001)
                                                : std::optional<int>(2011);
    }

    int effective_pop_length() const { return pop_length > 0 ? pop_length : min_intermediate + 1; }

    std::filesystem::path effective_cache_path() const {
        return cache_path.empty() ? output_dir / "cache.jsonl" : cache_path;
    }

    bool metric_enabled(const std::string& name) const {
        return metrics.empty() || metrics.count(name) != 0;
    }

    void validate() const {
        if (output_dir.empty()) throw ConfigError("output_dir is required");
        if (!(train_fraction > 0 && train_fraction < 1))
            throw ConfigError("train_fraction must lie in (0,1)");
        if (min_intermediate < 1) throw ConfigError("min_intermediate must be >= 1");
        if (case_sample == 0 || case_sample < -1)
            throw ConfigError("case_sample must be positive or -1 (all)");
        sim.validate();
        for (const auto& [role, mode_override] : provider_mode_override) {
            if (mode == GatewayMode::replay && mode_override == GatewayMode::live)
                throw ConfigError("replay mode forbids live provider role '" + role + "'");
        }
        for (const auto& p : planners) {
            if (p.kind == PlannerSpec::Kind::llm && !providers.count(p.provider_role))
                throw ConfigError("planner '" + p.id() + "' needs provider role '" +
                                  p.provider_role + "'");
        }
        for (const auto& j : judges)
            if (!providers.count(j)) throw ConfigError("judge provider role '" + j + "' missing");
        if (embed_provider != "simulator" && !providers.count(embed_provider))
            throw ConfigError("embed provider role '" + embed_provider + "' missing");
    }

    json to_json() const {
        json planners_j = json::array();
        for (const auto& p : planners) {
            std::string s = p.id();
            if (p.kind == PlannerSpec::Kind::llm) s = "llm:" + prompt_variant_name(p.variant);
            if (p.provider_role != "planner") s += "@" + p.provider_role;
            planners_j.push_back(s);
        }
        json providers_j = json::object();
        for (const auto& [role, p] : providers) {
            providers_j[role] = json{{"endpoint", p.endpoint},
                                     {"embed_endpoint", p.embed_endpoint},
                                     {"model_id", p.model_id},
                                     {"temperature", p.temperature},
                                     {"max_in_flight", p.max_in_flight},
                                     {"retry_budget", p.retry_budget},
                                     {"timeout_seconds", p.timeout_seconds},
                                     {"api_key_env", p.api_key_env},
                                     {"backoff_base_seconds", p.backoff_base_seconds},
                                     {"backoff_cap_seconds", p.backoff_cap_seconds}};
            auto it = provider_mode_override.find(role);
            if (it != provider_mode_override.end())
                providers_j[role]["mode"] = gateway_mode_name(it->second);
        }
        json j{{"dataset", dataset_name(dataset)},
               {"data_dir", data_dir.string()},
               {"output_dir", output_dir.string()},
               {"mode", gateway_mode_name(mode)},
               {"planners", planners_j},
               {"judges", judges},
               {"metrics", std::vector<std::string>(metrics.begin(), metrics.end())},
               {"case_sample", case_sample},
               {"seeds", {{"split", split_seed}, {"target", target_seed}, {"train", train_seed}}},
               {"train_fraction", train_fraction},
               {"min_intermediate", min_intermediate},
               {"min_seq_len", min_seq_len},
               {"lastfm_target_seqs", lastfm_target_seqs},
               {"seqgen_blend", seqgen_blend},
               {"pop_length", pop_length},
               {"coherence_literal_norm", coherence_literal_norm},
               {"simulator", sim.to_json()},
               {"providers", providers_j},
               {"embed_provider", embed_provider},
               {"cache_path", cache_path.string()}};
        if (year_cap) j["year_cap"] = *year_cap;
        return j;
    }

    static ExperimentConfig from_json(const json& j) {
        ExperimentConfig c;
        if (j.contains("dataset")) c.dataset = dataset_from_name(j.at("dataset").get<std::string>());
        if (j.contains("data_dir")) c.data_dir = j.at("data_dir").get<std::string>();
        if (j.contains("output_dir")) c.output_dir = j.at("output_dir").get<std::string>();
        if (j.contains("mode")) c.mode = gateway_mode_from_name(j.at("mode").get<std::string>());
        if (j.contains("planners"))
            for (const auto& p : j.at("planners"))
                c.planners.push_back(PlannerSpec::parse(p.get<std::string>()));
        if (j.contains("judges")) c.judges = j.at("judges").get<std::vector<std::string>>();
        if (j.contains("metrics"))
            for (const auto& m : j.at("metrics")) c.metrics.insert(m.get<std::string>());
        if (j.contains("case_sample")) {
            if (j.at("case_sample").is_string()) {
                if (j.at("case_sample").get<std::string>() != "all")
                    throw ConfigError("case_sample must be a number or \"all\"");
                c.case_sample = -1;
            } else {
                c.case_sample = j.at("case_sample").get<int>();
            }
        }
        if (j.contains("seeds")) {
            c.split_seed = j.at("seeds").value("split", c.split_seed);
            c.target_seed = j.at("seeds").value("target", c.target_seed);
            c.train_seed = j.at("seeds").value("train", c.train_seed);
        }
        if (j.contains("train_fraction")) c.train_fraction = j.at("train_fraction").get<double>();
        if (j.contains("min_intermediate")) c.min_intermediate = j.at("min_intermediate").get<int>();
        if (j.contains("year_cap")) c.year_cap = j.at("year_cap").get<int>();
        if (j.contains("min_seq_len")) c.min_seq_len = j.at("min_seq_len").get<int>();
        if (j.contains("lastfm_target_seqs"))
            c.lastfm_target_seqs = j.at("lastfm_target_seqs").get<int>();
        if (j.contains("seqgen_blend")) c.seqgen_blend = j.at("seqgen_blend").get<double>();
        if (j.contains("pop_length")) c.pop_length = j.at("pop_length").get<int>();
        if (j.contains("coherence_literal_norm"))
            c.coherence_literal_norm = j.at("coherence_literal_norm").get<bool>();
        if (j.contains("simulator")) {
            json full = c.sim.to_json();
            full.update(j.at("simulator"));
            c.sim = SimulatorConfig::from_json(full);
        }
        if (j.contains("providers")) {
            for (const auto& [role, pj] : j.at("providers").items()) {
                ProviderConfig p;
                p.endpoint = pj.value("endpoint", "");
                p.embed_endpoint = pj.value("embed_endpoint", "");
                p.model_id = pj.value("model_id", "");
                p.temperature = pj.value("temperature", 0.0);
                p.max_in_flight = pj.value("max_in_flight", 4);
                p.retry_budget = pj.value("retry_budget", 3);
                p.timeout_seconds = pj.value("timeout_seconds", 60.0);
                p.api_key_env = pj.value("api_key_env", "");
                p.backoff_base_seconds = pj.value("backoff_base_seconds", 1.0);
                p.backoff_cap_seconds = pj.value("backoff_cap_seconds", 60.0);
                c.providers[role] = p;
                if (pj.contains("mode"))
                    c.provider_mode_override[role] =
                        gateway_mode_from_name(pj.at("mode").get<std::string>());
            }
        }
        if (j.contains("embed_provider"))
            c.embed_provider = j.at("embed_provider").get<std::string>();
        if (j.contains("cache_path")) c.cache_path = j.at("cache_path").get<std::string>();
        return c;
    }

    std::string config_hash() const { return sha256_hex(to_json().dump()); }
};

struct RunManifest {
    std::string config_hash;
    std::string tool_version = kToolVersion;
    std::map<std::string, std::string> fingerprints;  // catalog, cases, model, cache
    std::map<std::string, double> stage_seconds;
    json extra = json::object();  // counts, thresholds, fix_path fires, exclusions

    json to_json() const {
        return json{{"config_hash", config_hash},
                    {"tool_version", tool_version},
                    {"fingerprints", fingerprints},
                    {"stage_seconds", stage_seconds},
                    {"extra", extra}};
    }
};

namespace benchdetail {

struct StageTimer {
    std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    }
};

inline std::filesystem::path catalog_path(const ExperimentConfig& c) {
    return c.output_dir / "catalog.jsonl";
}
inline std::filesystem::path train_seqs_path(const ExperimentConfig& c) {
    return c.output_dir / "train_seqs.jsonl";
}
inline std::filesystem::path cases_path(const ExperimentConfig& c) {
    return c.output_dir / "cases.jsonl";
}
inline std::filesystem::path model_path(const ExperimentConfig& c) {
    return c.output_dir / "model.bin";
}
inline std::filesystem::path paths_path(const ExperimentConfig& c, const std::string& planner) {
    return c.output_dir / ("paths-" + planner + ".jsonl");
}
inline std::filesystem::path scores_path(const ExperimentConfig& c, const std::string& planner) {
    return c.output_dir / ("scores-" + planner + ".jsonl");
}

}  // namespace benchdetail

// Data + config fingerprint identifying one training run; lets the train
// stage skip retraining when a matching checkpoint is already on disk.
inline std::string training_fingerprint(const std::vector<InteractionSeq>& train_seqs,
                                        const Catalog& catalog, const SimulatorConfig& config) {
    Sha256 h;
    std::string cfg = config.to_json().dump();
    h.update(cfg);
    for (const auto& s : train_seqs) {
        h.update(&s.user_id, sizeof(s.user_id));
        h.update(s.items.data(), s.items.size() * sizeof(ItemId));
    }
    for (const auto& [id, rec] : catalog.items()) h.update(&id, sizeof(id));
    return h.hex_digest();
}

struct IngestResult {
    std::size_t users = 0;
    std::size_t catalog_items = 0;
    std::size_t raw_seqs = 0;
    std::size_t filtered_seqs = 0;
    std::size_t train_seqs = 0;
    std::size_t cases = 0;
    std::optional<ThresholdSweep> lastfm_sweep;
};

/// ingest: parse the dataset directory, filter sequences, split, sample
/// targets, persist catalog / training sequences / evaluation cases.
inline IngestResult stage_ingest(const ExperimentConfig& config) {
    config.validate();
    if (config.data_dir.empty()) throw ConfigError("ingest needs data_dir");
    std::filesystem::create_directories(config.output_dir);

    ParsedCorpus corpus = config.dataset == Dataset::movielens_1m
                              ? parse_movielens(config.data_dir)
                              : parse_lastfm(config.data_dir);
    IngestResult result;
    result.users = corpus.users.size();
    result.catalog_items = corpus.catalog.size();
    result.raw_seqs = corpus.seqs.size();

    std::vector<InteractionSeq> filtered;
    if (config.dataset == Dataset::movielens_1m) {
        filtered = filter_min_length(corpus.seqs, static_cast<std::size_t>(config.min_seq_len));
    } else {
        auto sweep = sweep_length_threshold(corpus.seqs,
                                            static_cast<std::size_t>(config.lastfm_target_seqs));
        filtered = filter_min_length(corpus.seqs, sweep.threshold);
        result.lastfm_sweep = sweep;
    }
    result.filtered_seqs = filtered.size();
    if (filtered.empty()) throw DomainError("ingest: no sequences survive the length filter");

    auto [train, test] = split_sequences(filtered, config.train_fraction, config.split_seed);
    result.train_seqs = train.size();

    auto cases = sample_targets(test, corpus.catalog, corpus.users, config.target_seed);
    if (config.case_sample > 0 && cases.size() > static_cast<std::size_t>(config.case_sample))
        cases.resize(static_cast<std::size_t>(config.case_sample));
    result.cases = cases.size();

    save_catalog(corpus.catalog, benchdetail::catalog_path(config));
    save_seqs(train, benchdetail::train_seqs_path(config));
    save_cases(cases, config.dataset, benchdetail::cases_path(config));
    return result;
}

/// train: fit the simulator on the persisted training split, or reuse the
/// existing checkpoint when its fingerprint already matches data + config.
inline TrainReport stage_train(const ExperimentConfig& config) {
    config.validate();
    Catalog catalog = load_catalog(benchdetail::catalog_path(config));
    auto train_seqs = load_seqs(benchdetail::train_seqs_path(config));
    auto expected = training_fingerprint(train_seqs, catalog, config.sim);

    auto ckpt = benchdetail::model_path(config);
    if (std::filesystem::exists(ckpt)) {
        auto existing = SimulatorModel::load(ckpt);
        if (existing.train_fingerprint == expected) {
            TrainReport cached;
            auto report_path = config.output_dir / "train_report.json";
            if (std::filesystem::exists(report_path)) {
                auto j = read_jsonl(report_path);
                if (!j.empty()) {
                    cached.hit_at_10 = j.front().value("hit_at_10", 0.0);
                    cached.epoch_loss = j.front().value("epoch_loss", std::vector<double>{});
                }
            }
            return cached;
        }
    }

    auto [model, report] = train_simulator(train_seqs, catalog, config.sim);
    model.save(ckpt);
    json rj{{"epoch_loss", report.epoch_loss},
            {"hit_at_10", report.hit_at_10},
            {"wall_seconds", report.wall_seconds}};
    write_jsonl(config.output_dir / "train_report.json", {rj});
    return report;
}

struct PlannerRuntime {
    const Catalog* catalog = nullptr;
    const SimulatorModel* model = nullptr;           // for seqgen
    std::map<std::string, std::shared_ptr<Gateway>> gateways;  // per provider role
};

inline PathRequest make_request(const ExperimentConfig& config, const EvalCase& c) {
    PathRequest req;
    req.eval_case = c;
    req.min_intermediate = config.min_intermediate;
    req.year_cap = config.effective_year_cap();
    req.exclude_history = true;
    return req;
}

/// Runs one planner on one case, validation diagnostics included.
inline InfluencePath run_planner(const PlannerSpec& spec, const ExperimentConfig& config,
                                 const PlannerRuntime& rt, const EvalCase& c) {
    PathRequest req = make_request(config, c);
    InfluencePath path;
    switch (spec.kind) {
        case PlannerSpec::Kind::pop:
            path = plan_pop(*rt.catalog, req, config.effective_pop_length());
            break;
        case PlannerSpec::Kind::seqgen:
            if (!rt.model) throw StateError("seqgen planner needs a trained simulator");
            path = plan_seqgen(*rt.model, req, config.seqgen_blend);
            break;
        case PlannerSpec::Kind::seqgen_fix:
            if (!rt.model) throw StateError("seqgen planner needs a trained simulator");
            path = fix_path(plan_seqgen(*rt.model, req, config.seqgen_blend), c.target);
            path.planner_id = "seqgen-fix";
            break;
        case PlannerSpec::Kind::llm: {
            auto it = rt.gateways.find(spec.provider_role);
            if (it == rt.gateways.end())
                throw ConfigError("no gateway for provider role '" + spec.provider_role + "'");
            path = plan_llm(*it->second, req, spec.variant, *rt.catalog);
            break;
        }
    }
    path.planner_id = spec.id();
    if (spec.kind != PlannerSpec::Kind::llm) {  // llm already validated inside plan_llm
        auto violations = validate_path(path, req, *rt.catalog);
        path.diagnostics.insert(path.diagnostics.end(), violations.begin(), violations.end());
    }
    return path;
}

struct PlanStageResult {
    std::map<std::string, std::size_t> planner_errors;
    std::map<std::string, std::size_t> fix_fired;
    std::vector<std::string> replay_misses;
};

/// plan: produce and persist one path per case per planner. Per-case
/// planner failures are recorded in the path file, never fatal; replay
/// cache misses are collected and reported together.
inline PlanStageResult stage_plan(const ExperimentConfig& config,
                                  std::shared_ptr<Transport> transport) {
    config.validate();
    Catalog catalog = load_catalog(benchdetail::catalog_path(config));
    auto cases = load_cases(benchdetail::cases_path(config));

    PlannerRuntime rt;
    rt.catalog = &catalog;
    SimulatorModel model;
    bool needs_model = false, needs_gateway = false;
    for (const auto& p : config.planners) {
        needs_model |= p.kind == PlannerSpec::Kind::seqgen ||
                       p.kind == PlannerSpec::Kind::seqgen_fix;
        needs_gateway |= p.kind == PlannerSpec::Kind::llm;
    }
    if (needs_model) {
        model = SimulatorModel::load(benchdetail::model_path(config));
        rt.model = &model;
    }
    auto cache = std::make_shared<ResponseCache>(config.effective_cache_path());
    if (needs_gateway) {
        for (const auto& p : config.planners) {
            if (p.kind != PlannerSpec::Kind::llm || rt.gateways.count(p.provider_role)) continue;
            auto mode = config.mode;
            if (auto it = config.provider_mode_override.find(p.provider_role);
                it != config.provider_mode_override.end())
                mode = it->second;
            rt.gateways[p.provider_role] = std::make_shared<Gateway>(
                config.providers.at(p.provider_role), mode, cache, transport);
        }
    }

    PlanStageResult result;
    std::mutex result_mu;
    for (const auto& spec : config.planners) {
        std::vector<json> records(cases.size());
        std::size_t workers = spec.kind == PlannerSpec::Kind::llm
                                  ? static_cast<std::size_t>(
                                        config.providers.count(spec.provider_role)
                                            ? config.providers.at(spec.provider_role).max_in_flight
                                            : 1)
                                  : std::thread::hardware_concurrency();
        parallel_for(cases.size(), workers, [&](std::size_t i) {
            try {
                InfluencePath path = run_planner(spec, config, rt, cases[i]);
                {
                    std::lock_guard lock(result_mu);
                    if (!path.items.empty() &&
                        path.provenance.back() == Provenance::appended)
                        result.fix_fired[spec.id()] += 1;
                }
                records[i] = path_to_json(path, cases[i].case_id);
            } catch (const CacheMissError& e) {
                std::lock_guard lock(result_mu);
                result.replay_misses.push_back(e.key());
                records[i] = json{{"record", "path"},
                                  {"case_id", cases[i].case_id},
                                  {"planner", spec.id()},
                                  {"items", json::array()},
                                  {"provenance", json::array()},
                                  {"diagnostics", json::array()},
                                  {"error", std::string("cache miss: ") + e.key()}};
            } catch (const Error& e) {
                std::lock_guard lock(result_mu);
                result.planner_errors[spec.id()] += 1;
                records[i] = json{{"record", "path"},
                                  {"case_id", cases[i].case_id},
                                  {"planner", spec.id()},
                                  {"items", json::array()},
                                  {"provenance", json::array()},
                                  {"diagnostics", json::array()},
                                  {"error", e.what()}};
            }
        });
        std::vector<json> file;
        auto header = make_header("ipp.paths", kPathsSchemaVersion);
        header["planner"] = spec.id();
        file.push_back(std::move(header));
        for (auto& r : records) file.push_back(std::move(r));
        write_jsonl(benchdetail::paths_path(config, spec.id()), file);
    }
    return result;
}

struct ScoreStageResult {
    std::map<std::string, std::size_t> judge_failures;
    std::vector<std::string> replay_misses;
};

/// score: compute every enabled metric for every persisted path.
inline ScoreStageResult stage_score(const ExperimentConfig& config,
                                    std::shared_ptr<Transport> transport) {
    config.validate();
    auto catalog = std::make_shared<Catalog>(load_catalog(benchdetail::catalog_path(config)));
    auto cases = load_cases(benchdetail::cases_path(config));
    auto model = std::make_shared<SimulatorModel>(
        SimulatorModel::load(benchdetail::model_path(config)));

    auto cache = std::make_shared<ResponseCache>(config.effective_cache_path());
    auto gateway_for = [&](const std::string& role) {
        auto mode = config.mode;
        if (auto it = config.provider_mode_override.find(role);
            it != config.provider_mode_override.end())
            mode = it->second;
        return std::make_shared<Gateway>(config.providers.at(role), mode, cache, transport);
    };

    std::unique_ptr<Embedder> embedder;
    if (config.metric_enabled("coherence_embed")) {
        if (config.embed_provider == "simulator")
            embedder = std::make_unique<SimulatorEmbedder>(model, catalog);
        else
            embedder = std::make_unique<GatewayEmbedder>(gateway_for(config.embed_provider));
    }
    std::map<std::string, std::shared_ptr<Gateway>> judges;
    for (const auto& role : config.judges) judges[role] = gateway_for(role);

    ScoreStageResult result;
    std::mutex result_mu;
    std::map<int, std::size_t> case_index;
    for (std::size_t i = 0; i < cases.size(); ++i) case_index[cases[i].case_id] = i;

    for (const auto& spec : config.planners) {
        auto records = read_jsonl(benchdetail::paths_path(config, spec.id()));
        check_header(records, "ipp.paths", benchdetail::paths_path(config, spec.id()));
        std::vector<CaseScore> scores(records.size() - 1);
        parallel_for(records.size() - 1, 4, [&](std::size_t k) {
            const json& rec = records[k + 1];
            CaseScore cs;
            cs.case_id = rec.at("case_id").get<int>();
            cs.planner_id = spec.id();
            auto idx_it = case_index.find(cs.case_id);
            if (idx_it == case_index.end())
                throw DomainError("paths file references unknown case " +
                                  std::to_string(cs.case_id));
            const EvalCase& c = cases[idx_it->second];
            if (rec.contains("error")) {
                // planner failed on this case: SR miss, metrics missing
                for (const auto& role : config.judges) {
                    cs.accept_judge[role] = std::nullopt;
                    cs.coherence_judge[role] = std::nullopt;
                }
                scores[k] = std::move(cs);
                return;
            }
            auto [path, case_id] = path_from_json(rec);
            (void)case_id;
            cs.sr_hit = path.contains(c.target);
            if (config.metric_enabled("ioi"))
                cs.ioi = case_increase_of_interest(*model, c, path);
            if (config.metric_enabled("ior"))
                cs.ior = case_increase_of_rank(*model, c, path);
            if (config.metric_enabled("accept_sim"))
                cs.accept_sim = case_acceptability_sim(*model, c, path);
            if (embedder) {
                try {
                    cs.coherence_embed =
                        case_coherence_embed(*embedder, *catalog, path,
                                             config.coherence_literal_norm);
                } catch (const CacheMissError& e) {
                    std::lock_guard lock(result_mu);
                    result.replay_misses.push_back(e.key());
                }
            }
            for (const auto& [role, gw] : judges) {
                if (config.metric_enabled("accept_judge")) {
                    try {
                        cs.accept_judge[role] =
                            case_acceptability_judge(*gw, *catalog, c, path);
                    } catch (const CacheMissError& e) {
                        std::lock_guard lock(result_mu);
                        result.replay_misses.push_back(e.key());
                        cs.accept_judge[role] = std::nullopt;
                    } catch (const Error&) {
                        std::lock_guard lock(result_mu);
                        result.judge_failures[role] += 1;
                        cs.accept_judge[role] = std::nullopt;  // missing, never zero
                    }
                }
                if (config.metric_enabled("coherence_judge")) {
                    try {
                        if (path.items.size() >= 2)
                            cs.coherence_judge[role] = case_coherence_judge(*gw, *catalog, path);
                        else
                            cs.coherence_judge[role] = std::nullopt;
                    } catch (const CacheMissError& e) {
                        std::lock_guard lock(result_mu);
                        result.replay_misses.push_back(e.key());
                        cs.coherence_judge[role] = std::nullopt;
                    } catch (const Error&) {
                        std::lock_guard lock(result_mu);
                        result.judge_failures[role] += 1;
                        cs.coherence_judge[role] = std::nullopt;
                    }
                }
            }
            scores[k] = std::move(cs);
        });
        save_case_scores(scores, benchdetail::scores_path(config, spec.id()));
    }
    return result;
}

/// report: aggregate persisted per-case scores into one AggregateReport per
/// planner. Means are recomputed from the score files, so a metric re-run
/// from persisted paths reproduces them bit-for-bit.
inline std::vector<AggregateReport> stage_report(const ExperimentConfig& config) {
    config.validate();
    std::vector<AggregateReport> reports;
    json deterministic_manifest{
        {"config_hash", config.config_hash()},
        {"seeds",
         {{"split", config.split_seed}, {"target", config.target_seed},
          {"train", config.train_seed}}}};
    for (const auto& name : {"catalog", "cases"}) {
        auto p = config.output_dir / (std::string(name) + ".jsonl");
        if (std::filesystem::exists(p)) deterministic_manifest[std::string(name) + "_sha256"] =
            file_sha256(p);
    }
    if (std::filesystem::exists(benchdetail::model_path(config)))
        deterministic_manifest["model_fingerprint"] =
            SimulatorModel::load(benchdetail::model_path(config)).train_fingerprint;
    if (std::filesystem::exists(config.effective_cache_path()))
        deterministic_manifest["cache_sha256"] = file_sha256(config.effective_cache_path());

    for (const auto& spec : config.planners) {
        auto scores = load_case_scores(benchdetail::scores_path(config, spec.id()));
        auto report = aggregate_scores(scores, spec.id(), dataset_name(config.dataset));
        report.manifest = deterministic_manifest;
        reports.push_back(std::move(report));
    }
    return reports;
}

// --- report rendering ---------------------------------------------------------

enum class ReportFormat { csv, markdown, jsonl };

namespace benchdetail {

inline std::string fmt_num(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    return buf;
}

struct ReportColumn {
    std::string name;
    bool lower_is_better = false;
    // value extractor; nullopt renders as empty cell
    std::function<std::optional<double>(const AggregateReport&)> get;
};

inline std::vector<ReportColumn> report_columns(const std::vector<AggregateReport>& reports) {
    std::set<std::string> judge_roles;
    for (const auto& r : reports) {
        for (const auto& [role, m] : r.accept_judge) judge_roles.insert(role);
        for (const auto& [role, m] : r.coherence_judge) judge_roles.insert(role);
    }
    std::vector<ReportColumn> cols;
    for (const auto& role : judge_roles)
        cols.push_back({"accept[" + role + "]", false, [role](const AggregateReport& r) {
                            auto it = r.accept_judge.find(role);
                            if (it == r.accept_judge.end() || it->second.used == 0)
                                return std::optional<double>();
                            return std::optional<double>(it->second.mean);
                        }});
    for (const auto& role : judge_roles)
        cols.push_back({"coher[" + role + "]", false, [role](const AggregateReport& r) {
                            auto it = r.coherence_judge.find(role);
                            if (it == r.coherence_judge.end() || it->second.used == 0)
                                return std::optional<double>();
                            return std::optional<double>(it->second.mean);
                        }});
    cols.push_back({"accept_sim", true, [](const AggregateReport& r) {
                        return r.accept_sim.used ? std::optional<double>(r.accept_sim.mean)
                                                 : std::nullopt;
                    }});
    cols.push_back({"coher_embed", false, [](const AggregateReport& r) {
                        return r.coherence_embed.used
                                   ? std::optional<double>(r.coherence_embed.mean)
                                   : std::nullopt;
                    }});
    cols.push_back({"ioi", false, [](const AggregateReport& r) {
                        return r.ioi.used ? std::optional<double>(r.ioi.mean) : std::nullopt;
                    }});
    cols.push_back({"ior", false, [](const AggregateReport& r) {
                        return r.ior.used ? std::optional<double>(r.ior.mean) : std::nullopt;
                    }});
    cols.push_back({"sr", false, [](const AggregateReport& r) {
                        return std::optional<double>(r.success_rate);
                    }});
    return cols;
}

}  // namespace benchdetail

/// Renders one row per planner. Column order: per-judge acceptability,
/// per-judge coherence, simulator acceptability, embedding coherence, IoI,
/// IoR, SR. The best value per column is marked (direction-aware; ties all
/// marked): "**bold**" in markdown, a trailing '*' in csv, a "best" array
/// in jsonl.
inline std::string render_report(const std::vector<AggregateReport>& reports,
                                 ReportFormat format) {
    if (reports.empty()) throw DomainError("render_report: no reports");
    for (const auto& r : reports)
        if (r.dataset != reports.front().dataset)
            throw DomainError("render_report: reports mix datasets " + reports.front().dataset +
                              " and " + r.dataset);

    auto cols = benchdetail::report_columns(reports);
    // direction-aware best per column
    std::vector<std::optional<double>> best(cols.size());
    for (std::size_t ci = 0; ci < cols.size(); ++ci) {
        for (const auto& r : reports) {
            auto v = cols[ci].get(r);
            if (!v) continue;
            if (!best[ci] || (cols[ci].lower_is_better ? *v < *best[ci] : *v > *best[ci]))
                best[ci] = *v;
        }
    }
    auto is_best = [&](std::size_t ci, std::optional<double> v) {
        return v && best[ci] && *v == *best[ci];
    };

    std::string out;
    if (format == ReportFormat::csv) {
        out += "planner";
        for (const auto& c : cols) out += "," + c.name;
        out += "\n";
        for (const auto& r : reports) {
            out += r.planner_id;
            for (std::size_t ci = 0; ci < cols.size(); ++ci) {
                auto v = cols[ci].get(r);
                out += ",";
                if (v) {
                    out += benchdetail::fmt_num(*v);
                    if (is_best(ci, v)) out += "*";
                }
            }
            out += "\n";
        }
    } else if (format == ReportFormat::markdown) {
        out += "| planner |";
        for (const auto& c : cols) out += " " + c.name + " |";
        out += "\n|---|";
        for (std::size_t ci = 0; ci < cols.size(); ++ci) out += "---|";
        out += "\n";
        for (const auto& r : reports) {
            out += "| " + r.planner_id + " |";
            for (std::size_t ci = 0; ci < cols.size(); ++ci) {
                auto v = cols[ci].get(r);
                if (!v) {
                    out += " |";
                } else if (is_best(ci, v)) {
                    out += " **" + benchdetail::fmt_num(*v) + "** |";
                } else {
                    out += " " + benchdetail::fmt_num(*v) + " |";
                }
            }
            out += "\n";
        }
    } else {
        for (const auto& r : reports) {
            json row{{"planner", r.planner_id},
                     {"dataset", r.dataset},
                     {"case_count", r.case_count}};
            json cells = json::object();
            json best_cols = json::array();
            for (std::size_t ci = 0; ci < cols.size(); ++ci) {
                auto v = cols[ci].get(r);
                cells[cols[ci].name] = v ? json(*v) : json(nullptr);
                if (is_best(ci, v)) best_cols.push_back(cols[ci].name);
            }
            row["cells"] = cells;
            row["best"] = best_cols;
            out += row.dump() + "\n";
        }
    }
    return out;
}

/// run_experiment: ingest -> train -> plan -> score -> report, all driven by
/// the three named seeds. Per-case planner failures are recorded, not
/// fatal; incomplete replay caches abort with the full list of missing keys.
inline std::pair<std::vector<AggregateReport>, RunManifest> run_experiment(
    const ExperimentConfig& config, std::shared_ptr<Transport> transport = nullptr) {
    config.validate();
    RunManifest manifest;
    manifest.config_hash = config.config_hash();

    benchdetail::StageTimer t_ingest;
    auto ingest = stage_ingest(config);
    manifest.stage_seconds["ingest"] = t_ingest.seconds();
    manifest.extra["ingest"] = json{{"users", ingest.users},
                                    {"catalog_items", ingest.catalog_items},
                                    {"raw_seqs", ingest.raw_seqs},
                                    {"filtered_seqs", ingest.filtered_seqs},
                                    {"train_seqs", ingest.train_seqs},
                                    {"cases", ingest.cases}};
    if (ingest.lastfm_sweep)
        manifest.extra["lastfm_threshold"] = json{{"threshold", ingest.lastfm_sweep->threshold},
                                                  {"count", ingest.lastfm_sweep->count},
                                                  {"exact", ingest.lastfm_sweep->exact}};

    bool needs_model = false;
    for (const auto& p : config.planners)
        needs_model |= p.kind == PlannerSpec::Kind::seqgen ||
                       p.kind == PlannerSpec::Kind::seqgen_fix;
    needs_model |= config.metric_enabled("ioi") || config.metric_enabled("ior") ||
                   config.metric_enabled("accept_sim") || config.embed_provider == "simulator";
    if (needs_model) {
        benchdetail::StageTimer t_train;
        auto report = stage_train(config);
        manifest.stage_seconds["train"] = t_train.seconds();
        manifest.extra["train"] = json{{"hit_at_10", report.hit_at_10},
                                       {"epochs", report.epoch_loss.size()}};
    }

    benchdetail::StageTimer t_plan;
    auto plan = stage_plan(config, transport);
    manifest.stage_seconds["plan"] = t_plan.seconds();
    manifest.extra["planner_errors"] = plan.planner_errors;
    manifest.extra["fix_path_fired"] = plan.fix_fired;

    benchdetail::StageTimer t_score;
    auto score = stage_score(config, transport);
    manifest.stage_seconds["score"] = t_score.seconds();
    manifest.extra["judge_failures"] = score.judge_failures;

    std::vector<std::string> misses = plan.replay_misses;
    misses.insert(misses.end(), score.replay_misses.begin(), score.replay_misses.end());
    if (!misses.empty()) {
        std::string msg = "replay cache incomplete; missing keys:";
        for (const auto& k : misses) msg += "\n  " + k;
        throw CacheMissError(msg);
    }

    benchdetail::StageTimer t_report;
    auto reports = stage_report(config);
    manifest.stage_seconds["report"] = t_report.seconds();

    manifest.fingerprints["catalog"] = file_sha256(benchdetail::catalog_path(config));
    manifest.fingerprints["cases"] = file_sha256(benchdetail::cases_path(config));
    if (std::filesystem::exists(benchdetail::model_path(config)))
        manifest.fingerprints["model"] =
            SimulatorModel::load(benchdetail::model_path(config)).train_fingerprint;
    if (std::filesystem::exists(config.effective_cache_path()))
        manifest.fingerprints["cache"] = file_sha256(config.effective_cache_path());

    // persisted outputs
    std::ofstream csv(config.output_dir / "aggregate.csv", std::ios::binary | std::ios::trunc);
    csv << render_report(reports, ReportFormat::csv);
    std::ofstream md(config.output_dir / "aggregate.md", std::ios::binary | std::ios::trunc);
    md << render_report(reports, ReportFormat::markdown);
    std::ofstream jl(config.output_dir / "aggregate.jsonl", std::ios::binary | std::ios::trunc);
    jl << render_report(reports, ReportFormat::jsonl);
    std::ofstream mf(config.output_dir / "manifest.json", std::ios::binary | std::ios::trunc);
    mf << manifest.to_json().dump(2) << "\n";

    return {reports, manifest};
}

/// Renders one case as a small name/genre table: last history item, the
/// planned path, then the target as a separated final row. Diagnostics, if
/// any, get a warnings section.
inline std::string case_study(const ExperimentConfig& config, int case_id,
                              const PlannerSpec& spec,
                              std::shared_ptr<Transport> transport = nullptr) {
    config.validate();
    Catalog catalog = load_catalog(benchdetail::catalog_path(config));
    auto cases = load_cases(benchdetail::cases_path(config));
    const EvalCase* the_case = nullptr;
    for (const auto& c : cases)
        if (c.case_id == case_id) the_case = &c;
    if (!the_case) throw DomainError("unknown case_id " + std::to_string(case_id));

    // reuse the persisted path when the plan stage already produced it
    std::optional<InfluencePath> path;
    auto ppath = benchdetail::paths_path(config, spec.id());
    if (std::filesystem::exists(ppath)) {
        auto records = read_jsonl(ppath);
        for (std::size_t i = 1; i < records.size(); ++i) {
            if (records[i].at("case_id").get<int>() == case_id && !records[i].contains("error")) {
                path = path_from_json(records[i]).first;
                break;
            }
        }
    }
    if (!path) {
        PlannerRuntime rt;
        rt.catalog = &catalog;
        SimulatorModel model;
        if (spec.kind == PlannerSpec::Kind::seqgen || spec.kind == PlannerSpec::Kind::seqgen_fix) {
            model = SimulatorModel::load(benchdetail::model_path(config));
            rt.model = &model;
        }
        auto cache = std::make_shared<ResponseCache>(config.effective_cache_path());
        if (spec.kind == PlannerSpec::Kind::llm)
            rt.gateways[spec.provider_role] = std::make_shared<Gateway>(
                config.providers.at(spec.provider_role), config.mode, cache, transport);
        path = run_planner(spec, config, rt, *the_case);
    }

    auto row = [&](ItemId id) {
        const auto& rec = catalog.item(id);
        std::string line = display_title(rec.title);
        if (!rec.tags.empty()) line += " / " + join(rec.tags, ", ");
        return line;
    };
    const std::string noun = catalog.item_noun();
    const std::string history_name =
        catalog.dataset == Dataset::movielens_1m ? "viewing history" : "listening history";

    std::string out;
    out += "Name / Genre\n";
    out += "== The last " + noun + " in the " + history_name + " ==\n";
    out += row(the_case->history.items.back()) + "\n";
    out += "== Influence path ==\n";
    for (std::size_t i = 0; i < path->items.size(); ++i) {
        if (path->items[i] == the_case->target && i + 1 == path->items.size()) break;
        out += row(path->items[i]) + "\n";
    }
    out += "--\n";
    out += row(the_case->target) + "\n";
    if (!path->diagnostics.empty()) {
        out += "Warnings:\n";
        for (const auto& d : path->diagnostics)
            out += "  [" + violation_kind_name(d.kind) + "] " + d.detail + "\n";
    }
    return out;
}

struct PairwiseExport {
    std::filesystem::path sheet_path;
    std::filesystem::path key_path;
    std::size_t entries = 0;
};

/// Blinded side-by-side export for human comparison: n cases, two paths per
/// case in seeded random order, answer key written separately.
inline PairwiseExport export_pairwise(const ExperimentConfig& config, const PlannerSpec& a,
                                      const PlannerSpec& b, int n, std::uint64_t seed,
                                      std::shared_ptr<Transport> transport = nullptr) {
    config.validate();
    if (n < 1) throw DomainError("export_pairwise: n must be >= 1");
    Catalog catalog = load_catalog(benchdetail::catalog_path(config));
    auto cases = load_cases(benchdetail::cases_path(config));
    if (static_cast<std::size_t>(n) > cases.size())
        throw DomainError("export_pairwise: only " + std::to_string(cases.size()) +
                          " cases available, need " + std::to_string(n));

    PlannerRuntime rt;
    rt.catalog = &catalog;
    SimulatorModel model;
    bool needs_model = false;
    for (const auto* s : {&a, &b})
        needs_model |= s->kind == PlannerSpec::Kind::seqgen ||
                       s->kind == PlannerSpec::Kind::seqgen_fix;
    if (needs_model) {
        model = SimulatorModel::load(benchdetail::model_path(config));
        rt.model = &model;
    }
    auto cache = std::make_shared<ResponseCache>(config.effective_cache_path());
    for (const auto* s : {&a, &b}) {
        if (s->kind == PlannerSpec::Kind::llm && !rt.gateways.count(s->provider_role))
            rt.gateways[s->provider_role] = std::make_shared<Gateway>(
                config.providers.at(s->provider_role), config.mode, cache, transport);
    }

    std::mt19937_64 rng(seed);
    std::vector<std::size_t> idx(cases.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    deterministic_shuffle(idx, rng);
    idx.resize(static_cast<std::size_t>(n));

    auto titles = [&](const InfluencePath& p) {
        std::vector<std::string> out;
        for (auto id : p.items) out.push_back(display_title(catalog.item(id).title));
        return out;
    };

    std::vector<json> sheet, key;
    auto sheet_header = make_header("ipp.pairwise_sheet", 1);
    auto key_header = make_header("ipp.pairwise_key", 1);
    sheet.push_back(sheet_header);
    key.push_back(key_header);
    int pair_id = 0;
    for (auto i : idx) {
        const auto& c = cases[i];
        InfluencePath pa = run_planner(a, config, rt, c);
        InfluencePath pb = run_planner(b, config, rt, c);
        bool swap = bounded_uniform(rng, 2) == 1;
        const InfluencePath& first = swap ? pb : pa;
        const InfluencePath& second = swap ? pa : pb;
        std::vector<std::string> history;
        for (auto id : c.history.items) history.push_back(display_title(catalog.item(id).title));
        sheet.push_back(json{{"record", "pair"},
                             {"pair_id", pair_id},
                             {"case_id", c.case_id},
                             {"profile", prompts::demographic_slot(c.user)},
                             {"history", history},
                             {"target", display_title(catalog.item(c.target).title)},
                             {"path_1", titles(first)},
                             {"path_2", titles(second)}});
        key.push_back(json{{"record", "key"},
                           {"pair_id", pair_id},
                           {"case_id", c.case_id},
                           {"path_1", swap ? b.id() : a.id()},
                           {"path_2", swap ? a.id() : b.id()}});
        ++pair_id;
    }
    PairwiseExport out;
    out.sheet_path = config.output_dir / "pairwise_sheet.jsonl";
    out.key_path = config.output_dir / "pairwise_key.jsonl";
    out.entries = static_cast<std::size_t>(n);
    write_jsonl(out.sheet_path, sheet);
    write_jsonl(out.key_path, key);
    return out;
}

}  // namespace ipp
