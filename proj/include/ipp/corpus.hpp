#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "ipp/errors.hpp"
#include "ipp/jsonl.hpp"
#include "ipp/rng.hpp"
#include "ipp/text.hpp"

namespace ipp {

using ItemId = std::int32_t;
using UserId = std::int32_t;

enum class Dataset { movielens_1m, lastfm };

inline std::string dataset_name(Dataset d) {
    return d == Dataset::movielens_1m ? "movielens-1m" : "lastfm";
}

inline Dataset dataset_from_name(const std::string& name) {
    if (name == "movielens-1m") return Dataset::movielens_1m;
    if (name == "lastfm") return Dataset::lastfm;
    throw ConfigError("unknown dataset '" + name + "'");
}

struct ItemRecord {
    ItemId id = 0;
    std::string title;
    std::vector<std::string> tags;
    std::optional<int> year;       // absent for Last.FM artists
    std::int64_t occurrence = 0;   // number of interaction events

    bool operator==(const ItemRecord&) const = default;
};

struct UserRecord {
    UserId id = 0;
    std::string gender;      // empty when the dataset has no demographics
    std::string age;
    std::string occupation;
};

struct InteractionSeq {
    UserId user_id = 0;
    std::vector<ItemId> items;            // chronological
    std::vector<std::int64_t> timestamps; // non-decreasing, same length
};

// The item universe plus a normalized-title index for mapping free-text
// item mentions (typically LLM output) back onto catalog ids.
class Catalog {
public:
    Dataset dataset = Dataset::movielens_1m;

    void add(ItemRecord rec) {
        auto [it, inserted] = items_.emplace(rec.id, std::move(rec));
        if (!inserted) throw DomainError("duplicate item id " + std::to_string(it->first));
    }

    void build_index() {
        title_index_.clear();
        for (const auto& [id, rec] : items_)
            title_index_[normalize_title(rec.title)].push_back(id);
    }

    bool contains(ItemId id) const { return items_.count(id) != 0; }

    const ItemRecord& item(ItemId id) const {
        auto it = items_.find(id);
        if (it == items_.end())
            throw DomainError("unknown item id " + std::to_string(id));
        return it->second;
    }

    std::size_t size() const { return items_.size(); }
    const std::map<ItemId, ItemRecord>& items() const { return items_; }
    std::map<ItemId, ItemRecord>& mutable_items() { return items_; }
    const std::map<std::string, std::vector<ItemId>>& title_index() const { return title_index_; }

    std::string item_noun() const {
        return dataset == Dataset::movielens_1m ? "movie" : "musical artist";
    }
    std::string item_noun_plural() const {
        return dataset == Dataset::movielens_1m ? "movies" : "musical artists";
    }

private:
    std::map<ItemId, ItemRecord> items_;
    std::map<std::string, std::vector<ItemId>> title_index_;
};

struct EvalCase {
    int case_id = 0;
    UserRecord user;
    InteractionSeq history;
    ItemId target = 0;
};

struct ParsedCorpus {
    Catalog catalog;
    std::vector<UserRecord> users;
    std::vector<InteractionSeq> seqs;
};

namespace detail {

inline std::ifstream open_or_throw(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw ConfigError("missing dataset file: " + p.string());
    return in;
}

[[noreturn]] inline void malformed(const std::filesystem::path& file, std::size_t lineno,
                                   const std::string& why) {
    throw ParseError(file.filename().string() + " line " + std::to_string(lineno) + ": " + why);
}

inline long to_long(const std::string& field, const std::filesystem::path& file,
                    std::size_t lineno) {
    try {
        std::size_t used = 0;
        long v = std::stol(field, &used);
        if (used != field.size()) malformed(file, lineno, "non-numeric field '" + field + "'");
        return v;
    } catch (const ParseError&) {
        throw;
    } catch (const std::exception&) {
        malformed(file, lineno, "non-numeric field '" + field + "'");
    }
}

inline const char* ml_age_label(long code) {
    switch (code) {
        case 1: return "Under 18";
        case 18: return "18-24";
        case 25: return "25-34";
        case 35: return "35-44";
        case 45: return "45-49";
        case 50: return "50-55";
        case 56: return "56+";
        default: return nullptr;
    }
}

inline const char* ml_occupation_label(long code) {
    static const char* names[] = {
        "other", "academic/educator", "artist", "clerical/admin", "college/grad student",
        "customer service", "doctor/health care", "executive/managerial", "farmer",
        "homemaker", "K-12 student", "lawyer", "programmer", "retired", "sales/marketing",
        "scientist", "self-employed", "technician/engineer", "tradesman/craftsman",
        "unemployed", "writer"};
    if (code < 0 || code > 20) return nullptr;
    return names[code];
}

struct Event {
    std::int64_t ts;
    ItemId item;
};

}  // namespace detail

// MovieLens-1M: users.dat / movies.dat / ratings.dat, "::"-delimited,
// ISO-8859-1 encoded. Titles keep their "(YYYY)" suffix; the year is also
// extracted into ItemRecord::year. One sequence per user with at least one
// rating, ordered by timestamp (file order breaks ties).
inline ParsedCorpus parse_movielens(const std::filesystem::path& data_dir) {
    ParsedCorpus out;
    out.catalog.dataset = Dataset::movielens_1m;

    {
        auto file = data_dir / "movies.dat";
        auto in = detail::open_or_throw(file);
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (line.empty()) continue;
            auto fields = split(line, "::");
            if (fields.size() != 3) detail::malformed(file, lineno, "expected 3 '::' fields");
            ItemRecord rec;
            rec.id = static_cast<ItemId>(detail::to_long(fields[0], file, lineno));
            rec.title = latin1_to_utf8(fields[1]);
            rec.year = split_year_suffix(rec.title).second;
            for (auto& g : split(fields[2], "|"))
                if (!g.empty()) rec.tags.push_back(g);
            out.catalog.add(std::move(rec));
        }
    }

    {
        auto file = data_dir / "users.dat";
        auto in = detail::open_or_throw(file);
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (line.empty()) continue;
            auto fields = split(line, "::");
            if (fields.size() != 5) detail::malformed(file, lineno, "expected 5 '::' fields");
            UserRecord u;
            u.id = static_cast<UserId>(detail::to_long(fields[0], file, lineno));
            u.gender = fields[1];
            const char* age = detail::ml_age_label(detail::to_long(fields[2], file, lineno));
            const char* occ = detail::ml_occupation_label(detail::to_long(fields[3], file, lineno));
            if (!age) detail::malformed(file, lineno, "unknown age code '" + fields[2] + "'");
            if (!occ) detail::malformed(file, lineno, "unknown occupation code '" + fields[3] + "'");
            u.age = age;
            u.occupation = occ;
            out.users.push_back(std::move(u));
        }
    }

    {
        auto file = data_dir / "ratings.dat";
        auto in = detail::open_or_throw(file);
        std::string line;
        std::size_t lineno = 0;
        std::unordered_map<UserId, std::vector<detail::Event>> events;
        while (std::getline(in, line)) {
            ++lineno;
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (line.empty()) continue;
            auto fields = split(line, "::");
            if (fields.size() != 4) detail::malformed(file, lineno, "expected 4 '::' fields");
            auto user = static_cast<UserId>(detail::to_long(fields[0], file, lineno));
            auto item = static_cast<ItemId>(detail::to_long(fields[1], file, lineno));
            auto ts = detail::to_long(fields[3], file, lineno);
            if (!out.catalog.contains(item))
                detail::malformed(file, lineno, "rating references unknown movie id " + fields[1]);
            out.catalog.mutable_items().at(item).occurrence += 1;
            events[user].push_back({ts, item});
        }
        for (const auto& u : out.users) {
            auto it = events.find(u.id);
            if (it == events.end()) continue;
            auto& evs = it->second;
            std::stable_sort(evs.begin(), evs.end(),
                             [](const auto& a, const auto& b) { return a.ts < b.ts; });
            InteractionSeq seq;
            seq.user_id = u.id;
            seq.items.reserve(evs.size());
            seq.timestamps.reserve(evs.size());
            for (const auto& e : evs) {
                seq.items.push_back(e.item);
                seq.timestamps.push_back(e.ts);
            }
            out.seqs.push_back(std::move(seq));
        }
    }

    out.catalog.build_index();
    return out;
}

// Last.FM (hetrec-2011): tab-separated artists.dat / user_artists.dat /
// user_taggedartists.dat / tags.dat, each with a header row. The listening
// file carries no timestamps, so a user's artists are ordered by descending
// listen weight with artist id as tie-break, and synthetic timestamps
// 0,1,2,... are attached. Artist tags come from the tagging file (top five
// by frequency).
inline ParsedCorpus parse_lastfm(const std::filesystem::path& data_dir) {
    ParsedCorpus out;
    out.catalog.dataset = Dataset::lastfm;

    auto read_tsv = [](const std::filesystem::path& file,
                       std::size_t expected_min_fields,
                       auto&& on_row) {
        auto in = detail::open_or_throw(file);
        std::string line;
        std::size_t lineno = 0;
        bool first = true;
        while (std::getline(in, line)) {
            ++lineno;
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (line.empty()) continue;
            if (first) {
                first = false;
                // hetrec files start with a column-name row
                if (!line.empty() && !std::isdigit(static_cast<unsigned char>(line[0]))) continue;
            }
            auto fields = split(line, "\t");
            if (fields.size() < expected_min_fields)
                detail::malformed(file, lineno, "expected at least " +
                                  std::to_string(expected_min_fields) + " tab fields");
            on_row(fields, lineno);
        }
    };

    {
        auto file = data_dir / "artists.dat";
        read_tsv(file, 2, [&](const std::vector<std::string>& f, std::size_t lineno) {
            ItemRecord rec;
            rec.id = static_cast<ItemId>(detail::to_long(f[0], file, lineno));
            rec.title = f[1];
            out.catalog.add(std::move(rec));
        });
    }

    std::map<long, std::string> tag_names;
    {
        auto file = data_dir / "tags.dat";
        read_tsv(file, 2, [&](const std::vector<std::string>& f, std::size_t lineno) {
            tag_names[detail::to_long(f[0], file, lineno)] = f[1];
        });
    }

    {
        auto file = data_dir / "user_taggedartists.dat";
        std::map<ItemId, std::map<long, int>> tag_counts;
        read_tsv(file, 3, [&](const std::vector<std::string>& f, std::size_t lineno) {
            auto artist = static_cast<ItemId>(detail::to_long(f[1], file, lineno));
            auto tag = detail::to_long(f[2], file, lineno);
            if (out.catalog.contains(artist)) tag_counts[artist][tag] += 1;
        });
        for (auto& [artist, counts] : tag_counts) {
            std::vector<std::pair<long, int>> ranked(counts.begin(), counts.end());
            std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
                return a.second != b.second ? a.second > b.second : a.first < b.first;
            });
            auto& tags = out.catalog.mutable_items().at(artist).tags;
            for (std::size_t i = 0; i < ranked.size() && i < 5; ++i) {
                auto it = tag_names.find(ranked[i].first);
                if (it != tag_names.end()) tags.push_back(it->second);
            }
        }
    }

    {
        auto file = data_dir / "user_artists.dat";
        struct Listen {
            ItemId artist;
            long weight;
        };
        std::map<UserId, std::vector<Listen>> listens;
        read_tsv(file, 3, [&](const std::vector<std::string>& f, std::size_t lineno) {
            auto user = static_cast<UserId>(detail::to_long(f[0], file, lineno));
            auto artist = static_cast<ItemId>(detail::to_long(f[1], file, lineno));
            auto weight = detail::to_long(f[2], file, lineno);
            if (!out.catalog.contains(artist))
                detail::malformed(file, lineno, "listen references unknown artist id " + f[1]);
            out.catalog.mutable_items().at(artist).occurrence += 1;
            listens[user].push_back({artist, weight});
        });
        for (auto& [user, ls] : listens) {
            std::sort(ls.begin(), ls.end(), [](const Listen& a, const Listen& b) {
                return a.weight != b.weight ? a.weight > b.weight : a.artist < b.artist;
            });
            UserRecord u;
            u.id = user;
            out.users.push_back(u);
            InteractionSeq seq;
            seq.user_id = user;
            for (std::size_t i = 0; i < ls.size(); ++i) {
                seq.items.push_back(ls[i].artist);
                seq.timestamps.push_back(static_cast<std::int64_t>(i));
            }
            out.seqs.push_back(std::move(seq));
        }
    }

    out.catalog.build_index();
    return out;
}

inline std::vector<InteractionSeq> filter_min_length(const std::vector<InteractionSeq>& seqs,
                                                     std::size_t min_len) {
    std::vector<InteractionSeq> out;
    for (const auto& s : seqs)
        if (s.items.size() >= min_len) out.push_back(s);
    return out;
}

struct ThresholdSweep {
    std::size_t threshold = 0;
    std::size_t count = 0;
    bool exact = false;
};

// The Last.FM sequence-length cutoff is not published; sweep integer
// thresholds and pick the one whose surviving-sequence count lands closest
// to the requested count (smaller threshold wins ties). The result goes
// into the run manifest.
inline ThresholdSweep sweep_length_threshold(const std::vector<InteractionSeq>& seqs,
                                             std::size_t target_count) {
    std::size_t max_len = 0;
    for (const auto& s : seqs) max_len = std::max(max_len, s.items.size());
    ThresholdSweep best;
    bool have = false;
    for (std::size_t t = 1; t <= max_len + 1; ++t) {
        std::size_t count = 0;
        for (const auto& s : seqs)
            if (s.items.size() >= t) ++count;
        auto gap = count > target_count ? count - target_count : target_count - count;
        auto best_gap = best.count > target_count ? best.count - target_count
                                                  : target_count - best.count;
        if (!have || gap < best_gap) {
            best = {t, count, count == target_count};
            have = true;
        }
        if (count == 0) break;
    }
    return best;
}

// Disjoint whole-sequence partition; |train| = round(train_fraction * N).
inline std::pair<std::vector<InteractionSeq>, std::vector<InteractionSeq>> split_sequences(
    const std::vector<InteractionSeq>& seqs, double train_fraction, std::uint64_t seed) {
    if (!(train_fraction > 0.0 && train_fraction < 1.0))
        throw DomainError("train_fraction must lie in (0,1)");
    if (seqs.empty()) throw DomainError("split_sequences: empty input");
    std::vector<std::size_t> idx(seqs.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::mt19937_64 rng(seed);
    deterministic_shuffle(idx, rng);
    auto n_train = static_cast<std::size_t>(
        std::llround(train_fraction * static_cast<double>(seqs.size())));
    std::vector<std::size_t> train_idx(idx.begin(), idx.begin() + n_train);
    std::vector<std::size_t> test_idx(idx.begin() + n_train, idx.end());
    std::sort(train_idx.begin(), train_idx.end());
    std::sort(test_idx.begin(), test_idx.end());
    std::pair<std::vector<InteractionSeq>, std::vector<InteractionSeq>> out;
    for (auto i : train_idx) out.first.push_back(seqs[i]);
    for (auto i : test_idx) out.second.push_back(seqs[i]);
    return out;
}

// One EvalCase per test sequence, target drawn uniformly from the catalog
// minus the user's history.
inline std::vector<EvalCase> sample_targets(const std::vector<InteractionSeq>& test_seqs,
                                            const Catalog& catalog,
                                            const std::vector<UserRecord>& users,
                                            std::uint64_t seed) {
    if (catalog.size() == 0) throw DomainError("sample_targets: empty catalog");
    std::map<UserId, const UserRecord*> by_id;
    for (const auto& u : users) by_id[u.id] = &u;
    std::vector<ItemId> all_items;
    all_items.reserve(catalog.size());
    for (const auto& [id, rec] : catalog.items()) all_items.push_back(id);

    std::mt19937_64 rng(seed);
    std::vector<EvalCase> cases;
    cases.reserve(test_seqs.size());
    int case_id = 0;
    for (const auto& seq : test_seqs) {
        std::unordered_set<ItemId> hist(seq.items.begin(), seq.items.end());
        std::vector<ItemId> candidates;
        candidates.reserve(all_items.size());
        for (auto id : all_items)
            if (!hist.count(id)) candidates.push_back(id);
        if (candidates.empty())
            throw DomainError("sample_targets: user " + std::to_string(seq.user_id) +
                              " already covers the whole catalog");
        EvalCase c;
        c.case_id = case_id++;
        auto it = by_id.find(seq.user_id);
        c.user = it != by_id.end() ? *it->second : UserRecord{seq.user_id, "", "", ""};
        c.history = seq;
        c.target = candidates[bounded_uniform(rng, candidates.size())];
        cases.push_back(std::move(c));
    }
    return cases;
}

// Maps a free-text item mention onto the catalog. Exact normalized match
// first (a "(YYYY)" suffix narrows candidates when present), then a
// Levenshtein fallback within distance 2 that must produce a unique winner.
// Returns nothing when no match survives; throws TitleAmbiguityError when
// several candidates tie.
inline std::optional<ItemId> resolve_title(std::string_view text, const Catalog& catalog) {
    auto [stem, qyear] = split_year_suffix(text);
    (void)stem;
    std::string norm = normalize_title(text);
    if (norm.empty()) return std::nullopt;

    auto pick = [&](const std::vector<ItemId>& ids) -> std::optional<ItemId> {
        if (ids.empty()) return std::nullopt;
        if (qyear) {
            std::vector<ItemId> with_year;
            for (auto id : ids)
                if (catalog.item(id).year == qyear) with_year.push_back(id);
            if (with_year.size() == 1) return with_year.front();
            if (with_year.size() > 1)
                throw TitleAmbiguityError("title '" + std::string(text) + "' matches " +
                                          std::to_string(with_year.size()) + " catalog items");
        }
        if (ids.size() == 1) return ids.front();
        throw TitleAmbiguityError("title '" + std::string(text) + "' matches " +
                                  std::to_string(ids.size()) + " catalog items");
    };

    auto exact = catalog.title_index().find(norm);
    if (exact != catalog.title_index().end()) return pick(exact->second);

    constexpr int kMaxDist = 2;
    int best = kMaxDist + 1;
    std::vector<ItemId> best_ids;
    for (const auto& [key, ids] : catalog.title_index()) {
        auto len_gap = key.size() > norm.size() ? key.size() - norm.size()
                                                : norm.size() - key.size();
        if (len_gap > kMaxDist) continue;
        int d = edit_distance_capped(norm, key, kMaxDist);
        if (d < best) {
            best = d;
            best_ids = ids;
        } else if (d == best && d <= kMaxDist) {
            best_ids.insert(best_ids.end(), ids.begin(), ids.end());
        }
    }
    if (best > kMaxDist) return std::nullopt;
    return pick(best_ids);
}

// --- persistence -----------------------------------------------------------

inline constexpr int kCatalogSchemaVersion = 1;
inline constexpr int kCasesSchemaVersion = 1;
inline constexpr int kSeqsSchemaVersion = 1;

inline void save_catalog(const Catalog& catalog, const std::filesystem::path& path) {
    std::vector<json> records;
    auto header = make_header("ipp.catalog", kCatalogSchemaVersion);
    header["dataset"] = dataset_name(catalog.dataset);
    records.push_back(std::move(header));
    for (const auto& [id, rec] : catalog.items()) {
        json j{{"record", "item"},
               {"id", rec.id},
               {"title", rec.title},
               {"tags", rec.tags},
               {"occurrence", rec.occurrence}};
        if (rec.year) j["year"] = *rec.year;
        records.push_back(std::move(j));
    }
    write_jsonl(path, records);
}

inline Catalog load_catalog(const std::filesystem::path& path) {
    auto records = read_jsonl(path);
    check_header(records, "ipp.catalog", path);
    Catalog catalog;
    catalog.dataset = dataset_from_name(records.front().at("dataset").get<std::string>());
    for (std::size_t i = 1; i < records.size(); ++i) {
        const auto& j = records[i];
        ItemRecord rec;
        rec.id = j.at("id").get<ItemId>();
        rec.title = j.at("title").get<std::string>();
        rec.tags = j.at("tags").get<std::vector<std::string>>();
        rec.occurrence = j.at("occurrence").get<std::int64_t>();
        if (j.contains("year")) rec.year = j.at("year").get<int>();
        catalog.add(std::move(rec));
    }
    catalog.build_index();
    return catalog;
}

inline void save_cases(const std::vector<EvalCase>& cases, Dataset dataset,
                       const std::filesystem::path& path) {
    std::vector<json> records;
    auto header = make_header("ipp.cases", kCasesSchemaVersion);
    header["dataset"] = dataset_name(dataset);
    records.push_back(std::move(header));
    for (const auto& c : cases) {
        records.push_back(json{{"record", "case"},
                               {"case_id", c.case_id},
                               {"user",
                                {{"id", c.user.id},
                                 {"gender", c.user.gender},
                                 {"age", c.user.age},
                                 {"occupation", c.user.occupation}}},
                               {"items", c.history.items},
                               {"timestamps", c.history.timestamps},
                               {"target", c.target}});
    }
    write_jsonl(path, records);
}

inline std::vector<EvalCase> load_cases(const std::filesystem::path& path) {
    auto records = read_jsonl(path);
    check_header(records, "ipp.cases", path);
    std::vector<EvalCase> cases;
    for (std::size_t i = 1; i < records.size(); ++i) {
        const auto& j = records[i];
        EvalCase c;
        c.case_id = j.at("case_id").get<int>();
        c.user.id = j.at("user").at("id").get<UserId>();
        c.user.gender = j.at("user").at("gender").get<std::string>();
        c.user.age = j.at("user").at("age").get<std::string>();
        c.user.occupation = j.at("user").at("occupation").get<std::string>();
        c.history.user_id = c.user.id;
        c.history.items = j.at("items").get<std::vector<ItemId>>();
        c.history.timestamps = j.at("timestamps").get<std::vector<std::int64_t>>();
        c.target = j.at("target").get<ItemId>();
        cases.push_back(std::move(c));
    }
    return cases;
}

inline void save_seqs(const std::vector<InteractionSeq>& seqs,
                      const std::filesystem::path& path) {
    std::vector<json> records;
    records.push_back(make_header("ipp.seqs", kSeqsSchemaVersion));
    for (const auto& s : seqs)
        records.push_back(json{{"record", "seq"},
                               {"user", s.user_id},
                               {"items", s.items},
                               {"timestamps", s.timestamps}});
    write_jsonl(path, records);
}

inline std::vector<InteractionSeq> load_seqs(const std::filesystem::path& path) {
    auto records = read_jsonl(path);
    check_header(records, "ipp.seqs", path);
    std::vector<InteractionSeq> seqs;
    for (std::size_t i = 1; i < records.size(); ++i) {
        const auto& j = records[i];
        InteractionSeq s;
        s.user_id = j.at("user").get<UserId>();
        s.items = j.at("items").get<std::vector<ItemId>>();
        s.timestamps = j.at("timestamps").get<std::vector<std::int64_t>>();
        seqs.push_back(std::move(s));
    }
    return seqs;
}

}  // namespace ipp
