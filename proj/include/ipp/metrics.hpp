#pragma once

#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ipp/corpus.hpp"
#include "ipp/gateway.hpp"
#include "ipp/planners.hpp"
#include "ipp/prompts.hpp"
#include "ipp/simulator.hpp"

namespace ipp {

// Per-case scores for one planner. Judge metrics are optional because an
// unparseable judge response marks the case missing for that metric — it is
// never imputed as zero.
struct CaseScore {
    int case_id = 0;
    std::string planner_id;
    bool sr_hit = false;
    std::optional<double> ioi;
    std::optional<double> ior;
    std::optional<double> accept_sim;       // mean rank, in [1, |I|]
    std::optional<double> coherence_embed;  // in [-1, 1]
    std::map<std::string, std::optional<double>> accept_judge;     // per judge role
    std::map<std::string, std::optional<double>> coherence_judge;  // per judge role
};

struct MetricMean {
    double mean = 0.0;
    std::size_t used = 0;
    std::size_t missing = 0;
};

struct AggregateReport {
    std::string planner_id;
    std::string dataset;
    std::size_t case_count = 0;
    double success_rate = 0.0;
    MetricMean ioi, ior, accept_sim, coherence_embed;
    std::map<std::string, MetricMean> accept_judge;
    std::map<std::string, MetricMean> coherence_judge;
    json manifest;  // seeds, config hash, cache/corpus fingerprints
};

namespace metricdetail {

inline void check_aligned(std::size_t paths, std::size_t cases) {
    if (paths != cases)
        throw DomainError("paths and cases must align one-to-one (" + std::to_string(paths) +
                          " vs " + std::to_string(cases) + ")");
}

inline std::vector<ItemId> concat(const std::vector<ItemId>& a, const std::vector<ItemId>& b) {
    std::vector<ItemId> out;
    out.reserve(a.size() + b.size());
    out.insert(out.end(), a.begin(), a.end());
    out.insert(out.end(), b.begin(), b.end());
    return out;
}

}  // namespace metricdetail

/// IoI for one case: log P(target | history + path) - log P(target | history),
/// natural log, computed in log space from logits. Exactly 0 for an empty
/// path since both terms coincide.
inline double case_increase_of_interest(const SimulatorModel& model, const EvalCase& c,
                                        const InfluencePath& path) {
    if (path.items.empty()) return 0.0;
    double before = model.log_prob(c.target, c.history.items);
    double after = model.log_prob(c.target, metricdetail::concat(c.history.items, path.items));
    return after - before;
}

/// IoR for one case: rank(target | history) - rank(target | history + path);
/// positive means the target moved up.
inline double case_increase_of_rank(const SimulatorModel& model, const EvalCase& c,
                                    const InfluencePath& path) {
    if (path.items.empty()) return 0.0;
    int before = model.rank_of(c.target, c.history.items);
    int after = model.rank_of(c.target, metricdetail::concat(c.history.items, path.items));
    return static_cast<double>(before - after);
}

/// Mean rank of the path items under the original history; lower is better.
/// Missing for an empty path.
inline std::optional<double> case_acceptability_sim(const SimulatorModel& model, const EvalCase& c,
                                                    const InfluencePath& path) {
    if (path.items.empty()) return std::nullopt;
    double sum = 0.0;
    for (auto id : path.items)
        sum += static_cast<double>(model.rank_of(id, c.history.items));
    return sum / static_cast<double>(path.items.size());
}

/// Mean cosine similarity of adjacent item-title embeddings. The default
/// denominator is the pair count so that a path of identical items scores
/// exactly 1; `literal_norm` divides by the item count instead. Missing for
/// paths with fewer than two items.
inline std::optional<double> case_coherence_embed(Embedder& embedder, const Catalog& catalog,
                                                  const InfluencePath& path,
                                                  bool literal_norm = false) {
    if (path.items.size() < 2) return std::nullopt;
    std::vector<std::string> titles;
    titles.reserve(path.items.size());
    for (auto id : path.items) titles.push_back(catalog.item(id).title);
    auto vectors = embedder.embed(titles);
    double sum = 0.0;
    for (std::size_t i = 0; i + 1 < vectors.size(); ++i)
        sum += cosine_similarity(vectors[i].values, vectors[i + 1].values);
    double denom = literal_norm ? static_cast<double>(path.items.size())
                                : static_cast<double>(path.items.size() - 1);
    return sum / denom;
}

/// Judge-rated acceptability: one probability in [0,1] per path item,
/// averaged. Throws on unparseable responses; callers downgrade to missing.
inline double case_acceptability_judge(Gateway& gateway, const Catalog& catalog,
                                       const EvalCase& c, const InfluencePath& path) {
    if (path.items.empty()) throw DomainError("acceptability judge: empty path");
    std::string prompt = prompts::acceptability_judge_prompt(catalog, c.user, c.history.items,
                                                             path.items);
    std::string response = gateway.chat(prompt);
    auto scores = parse_scores(response, static_cast<int>(path.items.size()), 0.0, 1.0);
    double sum = 0.0;
    for (double s : scores) sum += s;
    return sum / static_cast<double>(scores.size());
}

/// Judge-rated coherence: one score in [-1,1] per adjacent pair, averaged.
/// Requires at least two path items.
inline double case_coherence_judge(Gateway& gateway, const Catalog& catalog,
                                   const InfluencePath& path) {
    if (path.items.size() < 2)
        throw DomainError("coherence judge: path needs at least two items");
    std::string prompt = prompts::coherence_judge_prompt(catalog, path.items);
    std::string response = gateway.chat(prompt);
    auto scores = parse_scores(response, static_cast<int>(path.items.size() - 1), -1.0, 1.0);
    double sum = 0.0;
    for (double s : scores) sum += s;
    return sum / static_cast<double>(scores.size());
}

// --- whole-case-set operations ----------------------------------------------

inline double success_rate(const std::vector<InfluencePath>& paths,
                           const std::vector<EvalCase>& cases) {
    metricdetail::check_aligned(paths.size(), cases.size());
    if (cases.empty()) return 0.0;
    std::size_t hits = 0;
    for (std::size_t i = 0; i < cases.size(); ++i)
        if (paths[i].contains(cases[i].target)) ++hits;
    return static_cast<double>(hits) / static_cast<double>(cases.size());
}

inline double increase_of_interest(const SimulatorModel& model,
                                   const std::vector<EvalCase>& cases,
                                   const std::vector<InfluencePath>& paths) {
    metricdetail::check_aligned(paths.size(), cases.size());
    if (cases.empty()) return 0.0;
    double sum = 0.0;
    for (std::size_t i = 0; i < cases.size(); ++i)
        sum += case_increase_of_interest(model, cases[i], paths[i]);
    return sum / static_cast<double>(cases.size());
}

inline double increase_of_rank(const SimulatorModel& model, const std::vector<EvalCase>& cases,
                               const std::vector<InfluencePath>& paths) {
    metricdetail::check_aligned(paths.size(), cases.size());
    if (cases.empty()) return 0.0;
    double sum = 0.0;
    for (std::size_t i = 0; i < cases.size(); ++i)
        sum += case_increase_of_rank(model, cases[i], paths[i]);
    return sum / static_cast<double>(cases.size());
}

/// Mean over cases of the per-case mean rank; cases with an empty effective
/// path are excluded from the mean (the exclusion count lands in reports).
inline MetricMean acceptability_sim(const SimulatorModel& model,
                                    const std::vector<EvalCase>& cases,
                                    const std::vector<InfluencePath>& paths) {
    metricdetail::check_aligned(paths.size(), cases.size());
    MetricMean out;
    double sum = 0.0;
    for (std::size_t i = 0; i < cases.size(); ++i) {
        auto v = case_acceptability_sim(model, cases[i], paths[i]);
        if (v) {
            sum += *v;
            ++out.used;
        } else {
            ++out.missing;
        }
    }
    out.mean = out.used ? sum / static_cast<double>(out.used) : 0.0;
    return out;
}

inline MetricMean coherence_embed(Embedder& embedder, const Catalog& catalog,
                                  const std::vector<InfluencePath>& paths,
                                  bool literal_norm = false) {
    MetricMean out;
    double sum = 0.0;
    for (const auto& p : paths) {
        auto v = case_coherence_embed(embedder, catalog, p, literal_norm);
        if (v) {
            sum += *v;
            ++out.used;
        } else {
            ++out.missing;
        }
    }
    out.mean = out.used ? sum / static_cast<double>(out.used) : 0.0;
    return out;
}

// --- aggregation & persistence ------------------------------------------------

inline AggregateReport aggregate_scores(const std::vector<CaseScore>& scores,
                                        const std::string& planner_id,
                                        const std::string& dataset) {
    AggregateReport r;
    r.planner_id = planner_id;
    r.dataset = dataset;
    r.case_count = scores.size();

    std::size_t hits = 0;
    auto fold = [](MetricMean& m, double& sum, const std::optional<double>& v) {
        if (v) {
            sum += *v;
            ++m.used;
        } else {
            ++m.missing;
        }
    };
    double s_ioi = 0, s_ior = 0, s_acc = 0, s_coh = 0;
    std::map<std::string, double> s_aj, s_cj;
    for (const auto& cs : scores) {
        if (cs.sr_hit) ++hits;
        fold(r.ioi, s_ioi, cs.ioi);
        fold(r.ior, s_ior, cs.ior);
        fold(r.accept_sim, s_acc, cs.accept_sim);
        fold(r.coherence_embed, s_coh, cs.coherence_embed);
        for (const auto& [judge, v] : cs.accept_judge) fold(r.accept_judge[judge], s_aj[judge], v);
        for (const auto& [judge, v] : cs.coherence_judge)
            fold(r.coherence_judge[judge], s_cj[judge], v);
    }
    r.success_rate = scores.empty() ? 0.0 : static_cast<double>(hits) / scores.size();
    auto close = [](MetricMean& m, double sum) {
        m.mean = m.used ? sum / static_cast<double>(m.used) : 0.0;
    };
    close(r.ioi, s_ioi);
    close(r.ior, s_ior);
    close(r.accept_sim, s_acc);
    close(r.coherence_embed, s_coh);
    for (auto& [judge, m] : r.accept_judge) close(m, s_aj[judge]);
    for (auto& [judge, m] : r.coherence_judge) close(m, s_cj[judge]);
    return r;
}

inline constexpr int kScoresSchemaVersion = 1;

inline json case_score_to_json(const CaseScore& s) {
    auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
    json aj = json::object(), cj = json::object();
    for (const auto& [judge, v] : s.accept_judge) aj[judge] = opt(v);
    for (const auto& [judge, v] : s.coherence_judge) cj[judge] = opt(v);
    return json{{"record", "score"},
                {"case_id", s.case_id},
                {"planner", s.planner_id},
                {"sr_hit", s.sr_hit},
                {"ioi", opt(s.ioi)},
                {"ior", opt(s.ior)},
                {"accept_sim", opt(s.accept_sim)},
                {"coherence_embed", opt(s.coherence_embed)},
                {"accept_judge", aj},
                {"coherence_judge", cj}};
}

inline CaseScore case_score_from_json(const json& j) {
    auto opt = [](const json& v) -> std::optional<double> {
        if (v.is_null()) return std::nullopt;
        return v.get<double>();
    };
    CaseScore s;
    s.case_id = j.at("case_id").get<int>();
    s.planner_id = j.at("planner").get<std::string>();
    s.sr_hit = j.at("sr_hit").get<bool>();
    s.ioi = opt(j.at("ioi"));
    s.ior = opt(j.at("ior"));
    s.accept_sim = opt(j.at("accept_sim"));
    s.coherence_embed = opt(j.at("coherence_embed"));
    for (const auto& [judge, v] : j.at("accept_judge").items()) s.accept_judge[judge] = opt(v);
    for (const auto& [judge, v] : j.at("coherence_judge").items())
        s.coherence_judge[judge] = opt(v);
    return s;
}

inline void save_case_scores(const std::vector<CaseScore>& scores,
                             const std::filesystem::path& path) {
    std::vector<json> records;
    records.push_back(make_header("ipp.scores", kScoresSchemaVersion));
    for (const auto& s : scores) records.push_back(case_score_to_json(s));
    write_jsonl(path, records);
}

inline std::vector<CaseScore> load_case_scores(const std::filesystem::path& path) {
    auto records = read_jsonl(path);
    check_header(records, "ipp.scores", path);
    std::vector<CaseScore> out;
    for (std::size_t i = 1; i < records.size(); ++i)
        out.push_back(case_score_from_json(records[i]));
    return out;
}

}  // namespace ipp
