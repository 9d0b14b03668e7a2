#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <memory>
#include <string>

#include "ipp/bench.hpp"
#include "ipp/gateway_http.hpp"
#include "ipp/version.hpp"

namespace {

struct CliOptions {
    std::string config_file;
    std::string mode;
    std::string dataset;
    std::string data_dir;
    std::string output_dir;
    std::string planners;
    std::string judges;
    int case_sample = 0;
    std::string cache_path;
};

ipp::ExperimentConfig load_config(const CliOptions& opt) {
    ipp::ExperimentConfig config;
    if (!opt.config_file.empty()) {
        std::ifstream in(opt.config_file);
        if (!in) throw ipp::ConfigError("cannot open config file: " + opt.config_file);
        ipp::json j = ipp::json::parse(in, nullptr, false);
        if (j.is_discarded())
            throw ipp::ConfigError("config file is not valid JSON: " + opt.config_file);
        config = ipp::ExperimentConfig::from_json(j);
    }
    if (!opt.mode.empty()) config.mode = ipp::gateway_mode_from_name(opt.mode);
    if (!opt.dataset.empty()) config.dataset = ipp::dataset_from_name(opt.dataset);
    if (!opt.data_dir.empty()) config.data_dir = opt.data_dir;
    if (!opt.output_dir.empty()) config.output_dir = opt.output_dir;
    if (!opt.cache_path.empty()) config.cache_path = opt.cache_path;
    if (opt.case_sample != 0) config.case_sample = opt.case_sample;
    if (!opt.planners.empty()) {
        config.planners.clear();
        for (const auto& p : ipp::split(opt.planners, ","))
            config.planners.push_back(ipp::PlannerSpec::parse(std::string(ipp::trim(p))));
    }
    if (!opt.judges.empty()) {
        config.judges.clear();
        for (const auto& j : ipp::split(opt.judges, ","))
            config.judges.push_back(std::string(ipp::trim(j)));
    }
    return config;
}

std::shared_ptr<ipp::Transport> make_transport(const ipp::ExperimentConfig& config) {
    // replay never needs the network; leaving the transport unset makes any
    // accidental network call a hard error
    if (config.mode == ipp::GatewayMode::replay) return nullptr;
    return std::make_shared<ipp::HttplibTransport>();
}

void write_manifest_patch(const ipp::ExperimentConfig& config, const std::string& stage,
                          const ipp::json& patch) {
    auto path = config.output_dir / "manifest.json";
    ipp::json manifest = ipp::json::object();
    if (std::filesystem::exists(path)) {
        std::ifstream in(path);
        manifest = ipp::json::parse(in, nullptr, false);
        if (manifest.is_discarded()) manifest = ipp::json::object();
    }
    manifest["tool_version"] = ipp::kToolVersion;
    manifest["config_hash"] = config.config_hash();
    manifest[stage] = patch;
    std::ofstream out(path, std::ios::trunc);
    out << manifest.dump(2) << "\n";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"influence path planning & evaluation toolkit"};
    app.set_version_flag("--version", ipp::kToolVersion);
    app.require_subcommand(1);

    CliOptions opt;
    app.add_option("--config", opt.config_file, "experiment config JSON file");
    app.add_option("--mode", opt.mode, "gateway mode: live|record|replay")
        ->check(CLI::IsMember({"live", "record", "replay"}));
    app.add_option("--dataset", opt.dataset, "movielens-1m|lastfm");
    app.add_option("--data-dir", opt.data_dir, "dataset directory");
    app.add_option("--output-dir", opt.output_dir, "run output directory");
    app.add_option("--planners", opt.planners,
                   "comma list: pop,seqgen,seqgen-fix,llm:base,llm:cot,llm:tot");
    app.add_option("--judges", opt.judges, "comma list of judge provider roles");
    app.add_option("--case-sample", opt.case_sample, "number of evaluation cases (-1 = all)");
    app.add_option("--cache", opt.cache_path, "response cache file");

    auto* ingest = app.add_subcommand("ingest", "parse dataset, split, sample targets");
    auto* train = app.add_subcommand("train", "train (or reuse) the user simulator");
    auto* plan = app.add_subcommand("plan", "produce influence paths for every case");
    auto* score = app.add_subcommand("score", "compute metrics for persisted paths");

    auto* report = app.add_subcommand("report", "aggregate scores into the results table");
    std::string report_format = "markdown";
    report->add_option("--format", report_format, "csv|markdown|jsonl")
        ->check(CLI::IsMember({"csv", "markdown", "jsonl"}));

    auto* study = app.add_subcommand("case-study", "render one case as a path table");
    int study_case_id = 0;
    std::string study_planner = "pop";
    study->add_option("--case-id", study_case_id, "case id")->required();
    study->add_option("--planner", study_planner, "planner spec");

    auto* pairwise = app.add_subcommand("export-pairwise", "blinded A/B comparison sheet");
    std::string pw_a = "seqgen-fix", pw_b = "llm:base";
    int pw_n = 100;
    std::uint64_t pw_seed = 7;
    pairwise->add_option("--a", pw_a, "first planner spec");
    pairwise->add_option("--b", pw_b, "second planner spec");
    pairwise->add_option("-n,--count", pw_n, "number of comparison pairs");
    pairwise->add_option("--seed", pw_seed, "blinding seed");

    CLI11_PARSE(app, argc, argv);

    try {
        ipp::ExperimentConfig config = load_config(opt);

        if (ingest->parsed()) {
            auto result = ipp::stage_ingest(config);
            ipp::json patch{{"users", result.users},
                            {"catalog_items", result.catalog_items},
                            {"raw_seqs", result.raw_seqs},
                            {"filtered_seqs", result.filtered_seqs},
                            {"train_seqs", result.train_seqs},
                            {"cases", result.cases}};
            if (result.lastfm_sweep)
                patch["lastfm_threshold"] = ipp::json{{"threshold", result.lastfm_sweep->threshold},
                                                      {"count", result.lastfm_sweep->count},
                                                      {"exact", result.lastfm_sweep->exact}};
            write_manifest_patch(config, "ingest", patch);
            std::cout << "ingested " << result.catalog_items << " items, " << result.users
                      << " users, " << result.filtered_seqs << " sequences ("
                      << result.train_seqs << " train), " << result.cases << " cases\n";
        } else if (train->parsed()) {
            auto result = ipp::stage_train(config);
            write_manifest_patch(config, "train",
                                 ipp::json{{"hit_at_10", result.hit_at_10},
                                           {"epochs", result.epoch_loss.size()},
                                           {"wall_seconds", result.wall_seconds}});
            std::cout << "simulator ready; held-out hit@10 = " << result.hit_at_10 << "\n";
        } else if (plan->parsed()) {
            auto result = ipp::stage_plan(config, make_transport(config));
            if (!result.replay_misses.empty()) {
                std::cerr << "replay cache incomplete; missing keys:\n";
                for (const auto& k : result.replay_misses) std::cerr << "  " << k << "\n";
                return 1;
            }
            write_manifest_patch(config, "plan",
                                 ipp::json{{"planner_errors", result.planner_errors},
                                           {"fix_path_fired", result.fix_fired}});
            std::cout << "planned paths for " << config.planners.size() << " planner(s)\n";
        } else if (score->parsed()) {
            auto result = ipp::stage_score(config, make_transport(config));
            if (!result.replay_misses.empty()) {
                std::cerr << "replay cache incomplete; missing keys:\n";
                for (const auto& k : result.replay_misses) std::cerr << "  " << k << "\n";
                return 1;
            }
            write_manifest_patch(config, "score",
                                 ipp::json{{"judge_failures", result.judge_failures}});
            std::cout << "scored " << config.planners.size() << " planner(s)\n";
        } else if (report->parsed()) {
            auto reports = ipp::stage_report(config);
            auto fmt = report_format == "csv"
                           ? ipp::ReportFormat::csv
                           : report_format == "jsonl" ? ipp::ReportFormat::jsonl
                                                      : ipp::ReportFormat::markdown;
            std::string rendered = ipp::render_report(reports, fmt);
            std::cout << rendered;
            std::ofstream csv(config.output_dir / "aggregate.csv", std::ios::trunc);
            csv << ipp::render_report(reports, ipp::ReportFormat::csv);
            std::ofstream md(config.output_dir / "aggregate.md", std::ios::trunc);
            md << ipp::render_report(reports, ipp::ReportFormat::markdown);
            std::ofstream jl(config.output_dir / "aggregate.jsonl", std::ios::trunc);
            jl << ipp::render_report(reports, ipp::ReportFormat::jsonl);
        } else if (study->parsed()) {
            std::cout << ipp::case_study(config, study_case_id,
                                         ipp::PlannerSpec::parse(study_planner),
                                         make_transport(config));
        } else if (pairwise->parsed()) {
            auto result = ipp::export_pairwise(config, ipp::PlannerSpec::parse(pw_a),
                                               ipp::PlannerSpec::parse(pw_b), pw_n, pw_seed,
                                               make_transport(config));
            std::cout << "wrote " << result.entries << " pairs to " << result.sheet_path.string()
                      << " (key: " << result.key_path.string() << ")\n";
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
