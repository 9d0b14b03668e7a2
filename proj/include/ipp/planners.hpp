#pragma once

#include <algorithm>
#include <optional>
#include <string>
#include <unordered_set>
#include <vector>

#include "ipp/corpus.hpp"
#include "ipp/gateway.hpp"
#include "ipp/prompts.hpp"
#include "ipp/simulator.hpp"

namespace ipp {

struct PathRequest {
    EvalCase eval_case;
    int min_intermediate = 5;
    std::optional<int> year_cap;  // 2001 for MovieLens-1M, 2011 for Last.FM
    bool exclude_history = true;

    void validate() const {
        if (min_intermediate < 1) throw DomainError("min_intermediate must be >= 1");
    }
};

enum class Provenance { generated, appended };

enum class ViolationKind { too_short, history_reuse, year_violation, off_catalog, missing_target };

inline std::string violation_kind_name(ViolationKind k) {
    switch (k) {
        case ViolationKind::too_short: return "too_short";
        case ViolationKind::history_reuse: return "history_reuse";
        case ViolationKind::year_violation: return "year_violation";
        case ViolationKind::off_catalog: return "off_catalog";
        case ViolationKind::missing_target: return "missing_target";
    }
    return "?";
}

struct Violation {
    ViolationKind kind;
    std::string detail;
};

struct InfluencePath {
    std::vector<ItemId> items;            // no consecutive duplicates
    std::vector<Provenance> provenance;   // same length as items
    std::string planner_id;
    std::optional<std::string> raw_response;
    std::vector<Violation> diagnostics;

    bool contains(ItemId id) const {
        return std::find(items.begin(), items.end(), id) != items.end();
    }
};

/// Popularity baseline: the `length` globally most frequent catalog items
/// (ties by item id), skipping the user's history when requested. The
/// target gets no special treatment, so the output is independent of it.
inline InfluencePath plan_pop(const Catalog& catalog, const PathRequest& request, int length) {
    request.validate();
    if (length < request.min_intermediate)
        throw DomainError("plan_pop: length must be >= min_intermediate");
    std::unordered_set<ItemId> hist(request.eval_case.history.items.begin(),
                                    request.eval_case.history.items.end());
    std::vector<const ItemRecord*> ranked;
    ranked.reserve(catalog.size());
    for (const auto& [id, rec] : catalog.items()) {
        if (request.exclude_history && hist.count(id)) continue;
        ranked.push_back(&rec);
    }
    if (static_cast<int>(ranked.size()) < length)
        throw DomainError("plan_pop: catalog has only " + std::to_string(ranked.size()) +
                          " eligible items, need " + std::to_string(length));
    std::stable_sort(ranked.begin(), ranked.end(), [](const ItemRecord* a, const ItemRecord* b) {
        return a->occurrence != b->occurrence ? a->occurrence > b->occurrence : a->id < b->id;
    });
    InfluencePath path;
    path.planner_id = "pop";
    for (int i = 0; i < length; ++i) {
        path.items.push_back(ranked[static_cast<std::size_t>(i)]->id);
        path.provenance.push_back(Provenance::generated);
    }
    return path;
}

/// Simulator-driven greedy decoder (sequential-baseline stand-in). At each
/// of min_intermediate steps the candidate score is
///   (1 - blend) * log P(i | seq so far) + blend * cos(emb(i), emb(target)),
/// excluding history items, already chosen items and the target itself.
inline InfluencePath plan_seqgen(const SimulatorModel& model, const PathRequest& request,
                                 double blend) {
    request.validate();
    if (!(blend >= 0.0 && blend <= 1.0)) throw DomainError("plan_seqgen: blend must be in [0,1]");
    if (model.train_fingerprint.empty())
        throw StateError("plan_seqgen: model has no training fingerprint (untrained?)");

    const auto& hist = request.eval_case.history.items;
    const ItemId target = request.eval_case.target;
    std::unordered_set<ItemId> hist_set(hist.begin(), hist.end());
    std::unordered_set<ItemId> banned{target};  // target + already chosen

    VectorXd target_emb = model.item_embedding(target);
    double target_norm = target_emb.norm();

    std::vector<ItemId> seq(hist.begin(), hist.end());
    InfluencePath path;
    path.planner_id = "seqgen";
    for (int step = 0; step < request.min_intermediate; ++step) {
        VectorXd logits = model.final_logits(seq);
        double mx = logits.maxCoeff();
        double lse = mx + std::log((logits.array() - mx).exp().sum());
        double best_score = -std::numeric_limits<double>::infinity();
        ItemId best_id = 0;
        bool found = false;
        for (int i = 0; i < model.vocab(); ++i) {
            ItemId id = model.item_ids[static_cast<std::size_t>(i)];
            if (banned.count(id)) continue;
            if (request.exclude_history && hist_set.count(id)) continue;
            double score = 0.0;
            if (blend < 1.0) score += (1.0 - blend) * (logits(i) - lse);
            if (blend > 0.0) {
                double denom = target_norm * model.item_emb.row(i).norm();
                double cos = denom > 0 ? model.item_emb.row(i).dot(target_emb.transpose()) / denom
                                       : 0.0;
                score += blend * cos;
            }
            if (score > best_score) {  // ties fall to the smaller item id
                best_score = score;
                best_id = id;
                found = true;
            }
        }
        if (!found) throw DomainError("plan_seqgen: no eligible candidate left");
        path.items.push_back(best_id);
        path.provenance.push_back(Provenance::generated);
        banned.insert(best_id);
        seq.push_back(best_id);
    }
    return path;
}

/// Target-appending fix: if the path does not already contain the target,
/// append it tagged `appended`. Idempotent; forces success rate 1.
inline InfluencePath fix_path(InfluencePath path, ItemId target) {
    if (!path.contains(target)) {
        path.items.push_back(target);
        path.provenance.push_back(Provenance::appended);
    }
    return path;
}

inline std::string build_prompt(const PathRequest& request, PromptVariant variant,
                                const Catalog& catalog) {
    request.validate();
    return prompts::planner_prompt(catalog, request.eval_case.user,
                                   request.eval_case.history.items, request.eval_case.target,
                                   request.min_intermediate, request.year_cap, variant);
}

/// Checks a path against the prompt-constraint set. Returns one Violation
/// per violated constraint; an empty list means the path is compliant.
inline std::vector<Violation> validate_path(const InfluencePath& path, const PathRequest& request,
                                            const Catalog& catalog) {
    std::vector<Violation> out;
    const ItemId target = request.eval_case.target;

    int generated_intermediate = 0;
    for (std::size_t i = 0; i < path.items.size(); ++i)
        if (path.provenance[i] == Provenance::generated && path.items[i] != target)
            ++generated_intermediate;
    if (generated_intermediate < request.min_intermediate)
        out.push_back({ViolationKind::too_short,
                       std::to_string(generated_intermediate) + " generated items, need " +
                           std::to_string(request.min_intermediate)});

    std::unordered_set<ItemId> hist(request.eval_case.history.items.begin(),
                                    request.eval_case.history.items.end());
    for (auto id : path.items) {
        if (hist.count(id)) {
            out.push_back({ViolationKind::history_reuse,
                           "item " + std::to_string(id) + " appears in the history"});
            break;
        }
    }

    if (request.year_cap) {
        for (auto id : path.items) {
            if (!catalog.contains(id)) continue;
            const auto& rec = catalog.item(id);
            if (rec.year && *rec.year >= *request.year_cap) {
                out.push_back({ViolationKind::year_violation,
                               rec.title + " is from " + std::to_string(*rec.year) +
                                   ", cap is " + std::to_string(*request.year_cap)});
                break;
            }
        }
    }

    for (auto id : path.items) {
        if (!catalog.contains(id)) {
            out.push_back({ViolationKind::off_catalog,
                           "item " + std::to_string(id) + " is not in the catalog"});
            break;
        }
    }

    if (!path.contains(target))
        out.push_back({ViolationKind::missing_target,
                       "target " + std::to_string(target) + " missing from the path"});
    return out;
}

/// LLM planner: prompt -> chat -> parse -> resolve -> fix. Unresolved
/// mentions become off_catalog diagnostics (the soft-skip policy keeps the
/// resolved items); consecutive duplicates are collapsed; the target is
/// appended when the model forgot it. The raw response is retained.
inline InfluencePath plan_llm(Gateway& gateway, const PathRequest& request, PromptVariant variant,
                              const Catalog& catalog) {
    request.validate();
    const std::string prompt = build_prompt(request, variant, catalog);
    const std::string response = gateway.chat(prompt);

    std::vector<PathMention> mentions;
    try {
        mentions = parse_path_response(response, catalog);
    } catch (const ParseError& e) {
        throw PlannerError(std::string("LLM path response unparseable: ") + e.what(), response);
    }

    InfluencePath path;
    path.planner_id = "llm-" + prompt_variant_name(variant);
    path.raw_response = response;
    for (const auto& m : mentions) {
        if (!m.resolved) {
            path.diagnostics.push_back(
                {ViolationKind::off_catalog, "unresolved mention: " + m.mention});
            continue;
        }
        if (!path.items.empty() && path.items.back() == *m.resolved) continue;  // collapse dupes
        path.items.push_back(*m.resolved);
        path.provenance.push_back(Provenance::generated);
    }
    if (path.items.empty())
        throw PlannerError("LLM response resolved to zero catalog items", response);

    path = fix_path(std::move(path), request.eval_case.target);
    auto violations = validate_path(path, request, catalog);
    path.diagnostics.insert(path.diagnostics.end(), violations.begin(), violations.end());
    return path;
}

// --- persistence -------------------------------------------------------------

inline constexpr int kPathsSchemaVersion = 1;

inline json path_to_json(const InfluencePath& path, int case_id) {
    json prov = json::array();
    for (auto p : path.provenance)
        prov.push_back(p == Provenance::generated ? "generated" : "appended");
    json diags = json::array();
    for (const auto& d : path.diagnostics)
        diags.push_back(json{{"kind", violation_kind_name(d.kind)}, {"detail", d.detail}});
    json j{{"record", "path"},
           {"case_id", case_id},
           {"planner", path.planner_id},
           {"items", path.items},
           {"provenance", prov},
           {"diagnostics", diags}};
    if (path.raw_response) {
        j["raw_response"] = *path.raw_response;
        j["raw_sha256"] = sha256_hex(*path.raw_response);
    }
    return j;
}

inline ViolationKind violation_kind_from_name(const std::string& s) {
    for (auto k : {ViolationKind::too_short, ViolationKind::history_reuse,
                   ViolationKind::year_violation, ViolationKind::off_catalog,
                   ViolationKind::missing_target})
        if (violation_kind_name(k) == s) return k;
    throw ParseError("unknown violation kind '" + s + "'");
}

inline std::pair<InfluencePath, int> path_from_json(const json& j) {
    InfluencePath path;
    int case_id = j.at("case_id").get<int>();
    path.planner_id = j.at("planner").get<std::string>();
    path.items = j.at("items").get<std::vector<ItemId>>();
    for (const auto& p : j.at("provenance"))
        path.provenance.push_back(p.get<std::string>() == "appended" ? Provenance::appended
                                                                     : Provenance::generated);
    for (const auto& d : j.at("diagnostics"))
        path.diagnostics.push_back({violation_kind_from_name(d.at("kind").get<std::string>()),
                                    d.at("detail").get<std::string>()});
    if (j.contains("raw_response")) path.raw_response = j.at("raw_response").get<std::string>();
    return {std::move(path), case_id};
}

}  // namespace ipp
