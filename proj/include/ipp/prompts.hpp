#pragma once

#include <string>
#include <vector>

#include "ipp/corpus.hpp"
#include "ipp/text.hpp"

namespace ipp {

// All prompt text lives here so the exact wording is snapshot-testable in
// one place. Planner templates follow the paper-style recommender
// instruction; judge templates elicit per-item interest probabilities and
// per-pair relevance scores.

enum class PromptVariant { base, cot, tot };

inline std::string prompt_variant_name(PromptVariant v) {
    switch (v) {
        case PromptVariant::base: return "base";
        case PromptVariant::cot: return "cot";
        case PromptVariant::tot: return "tot";
    }
    return "base";
}

inline PromptVariant prompt_variant_from_name(const std::string& s) {
    if (s == "base") return PromptVariant::base;
    if (s == "cot") return PromptVariant::cot;
    if (s == "tot") return PromptVariant::tot;
    throw ConfigError("unknown prompt variant '" + s + "'");
}

inline constexpr const char* kTotPrefix =
    "Imagine three different experts answering this question. All experts will write down 1 "
    "step of their thinking and then share it with the group. Then all experts will go on to "
    "the next step, etc. And show me the result in the end. The question is:";

inline constexpr const char* kCotSuffix = "Think step by step and make sure.";

namespace prompts {

// "<Title, Genre1, Genre2>"
inline std::string item_slot(const Catalog& catalog, ItemId id) {
    const auto& rec = catalog.item(id);
    std::string out = "<" + display_title(rec.title);
    if (!rec.tags.empty()) out += ", " + join(rec.tags, ", ");
    out += ">";
    return out;
}

inline std::string item_sequence_slot(const Catalog& catalog, const std::vector<ItemId>& items) {
    std::vector<std::string> slots;
    slots.reserve(items.size());
    for (auto id : items) slots.push_back(item_slot(catalog, id));
    return join(slots, ", ");
}

inline std::string demographic_slot(const UserRecord& user) {
    if (user.gender.empty() && user.age.empty() && user.occupation.empty()) return "N/A";
    return user.gender + "/" + user.age + "/" + user.occupation;
}

inline std::string planner_instruction(const Catalog& catalog, int min_intermediate,
                                       std::optional<int> year_cap) {
    const std::string noun = catalog.item_noun();
    const std::string nouns = catalog.item_noun_plural();
    std::string s = "You are a recommender system. Given the user profile and historical data, "
                    "analyze the user's interests. Your task is to add no less than " +
                    count_words(min_intermediate) + " " + nouns + " between the last " + noun +
                    " of historical data and the target " + noun +
                    " to connect them. Any adjacent " + nouns +
                    " should have a strong relation (share the same genre, theme, title, etc.) "
                    "with each other and make sure the " + nouns +
                    " are not included in the historical data.";
    if (year_cap) {
        if (catalog.dataset == Dataset::movielens_1m)
            s += " The release date of the movies should be before " +
                 std::to_string(*year_cap) + ".";
        else
            s += " The musical artists should be before " + std::to_string(*year_cap) + ".";
    }
    return s;
}

inline std::string planner_prompt(const Catalog& catalog, const UserRecord& user,
                                  const std::vector<ItemId>& history, ItemId target,
                                  int min_intermediate, std::optional<int> year_cap,
                                  PromptVariant variant) {
    std::string s;
    if (variant == PromptVariant::tot) s += std::string(kTotPrefix) + "\n";
    s += planner_instruction(catalog, min_intermediate, year_cap);
    s += "\n<User's demographic feature>: " + demographic_slot(user);
    s += "\n<Historical data>: " + item_sequence_slot(catalog, history);
    s += "\n<Target item>: " + item_slot(catalog, target);
    if (variant == PromptVariant::cot) s += std::string("\n") + kCotSuffix;
    return s;
}

inline std::string acceptability_judge_prompt(const Catalog& catalog, const UserRecord& user,
                                              const std::vector<ItemId>& history,
                                              const std::vector<ItemId>& path) {
    const std::string noun = catalog.item_noun();
    const std::string nouns = catalog.item_noun_plural();
    std::string s = "Given the user profile and the historical data, analyze the user's "
                    "interest. Based on this information, would the user be interested in the " +
                    nouns + " in the influence path step by step? Answer with a probability for each " +
                    noun + " between 0 and 1, where 0 means \"definitely not interested\" and 1 "
                    "means \"definitely interested\". Please explain the reason for each score. "
                    "If uncertain, make your best guess.";
    s += "\n<User's demographic feature>: " + demographic_slot(user);
    s += "\n<historical data>: " + item_sequence_slot(catalog, history);
    s += "\n<influence path>: " + item_sequence_slot(catalog, path);
    return s;
}

inline std::string coherence_judge_prompt(const Catalog& catalog,
                                          const std::vector<ItemId>& path) {
    std::string s = "Given the influence path in the format of A,B,C..., what's the relevance "
                    "of each adjacent item? Answer with a score between -1 and 1, where -1 "
                    "means \"definitely not related\" and 1 means \"definitely related\". "
                    "Please explain the reason for each score. If uncertain, make your best guess";
    s += "\n<influence path>: " + item_sequence_slot(catalog, path);
    return s;
}

}  // namespace prompts
}  // namespace ipp
