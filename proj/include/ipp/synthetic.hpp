#pragma once

#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "ipp/corpus.hpp"
#include "ipp/rng.hpp"

namespace ipp::synthetic {

// Deterministic corpus generators. They write byte-format-faithful
// MovieLens-1M / hetrec-Last.FM directories (exercised through the real
// parsers) and small in-memory corpora with known structure for training
// tests. Item interactions follow a clustered Markov walk so that a
// sequence model has real signal to learn while a popularity baseline
// does not.

struct LengthGroup {
    int users = 0;
    int min_len = 0;
    int max_len = 0;
};

struct MovielensSpec {
    int n_movies = 900;
    std::vector<LengthGroup> groups = {{3000, 21, 50}};
    int n_clusters = 25;
    double p_succ = 0.6;         // follow the in-cluster successor ring
    double p_same_cluster = 0.25;
    int min_year = 1930;
    int max_year = 2000;
};

struct LastfmSpec {
    int n_artists = 2000;
    std::vector<LengthGroup> groups = {{400, 50, 50}, {200, 20, 49}};
    int n_tags = 60;
};

namespace worddetail {

inline const std::vector<std::string>& adjectives() {
    static const std::vector<std::string> v{
        "Crimson", "Silent",  "Golden",  "Broken",  "Electric", "Hidden",  "Burning",
        "Frozen",  "Midnight", "Scarlet", "Hollow",  "Savage",  "Gentle",  "Distant",
        "Iron",    "Velvet",  "Wild",    "Shattered", "Lonely", "Radiant", "Obsidian",
        "Pale",    "Thunder", "Rusty",   "Sapphire", "Crooked", "Faded",  "Grim",
        "Lucky",   "Neon",    "Quiet",   "Restless", "Stormy",  "Twisted", "Vivid",
        "Wandering", "Azure", "Bitter",  "Clever",   "Daring",  "Emerald", "Fearless",
        "Glass",   "Humble",  "Ivory",   "Jagged",   "Crystal", "Luminous", "Majestic",
        "Noble",   "Opal",    "Phantom", "Rebel",    "Solar",   "Tidal",   "Umber",
        "Violet",  "Winter",  "Liquid",  "Zealous"};
    return v;
}

inline const std::vector<std::string>& nouns() {
    static const std::vector<std::string> v{
        "Horizon", "River",   "Empire",  "Garden",  "Station", "Harbor",  "Mirror",
        "Canyon",  "Voyage",  "Circus",  "Letter",  "Bridge",  "Train",   "Island",
        "Meadow",  "Tower",   "Shadow",  "Compass", "Lantern", "Orchard", "Parade",
        "Quarry",  "Rocket",  "Caravan", "Tempest", "Anthem",  "Ballad",  "Carnival",
        "Dynasty", "Embassy", "Falcon",  "Gallery", "Harvest", "Inferno", "Journey",
        "Kingdom", "Labyrinth", "Monsoon", "Nocturne", "Oasis", "Pioneer", "Quartet",
        "Reverie", "Sonata",  "Twilight", "Utopia",  "Vertigo", "Waltz",  "Expanse",
        "Yonder",  "Zenith",  "Archive", "Beacon",  "Cascade", "Dominion", "Eclipse",
        "Frontier", "Glacier", "Hamlet", "Illusion"};
    return v;
}

inline std::string unique_name(int i) {
    const auto& adj = adjectives();
    const auto& nn = nouns();
    int a = i % static_cast<int>(adj.size());
    int b = (i / static_cast<int>(adj.size())) % static_cast<int>(nn.size());
    int round = i / static_cast<int>(adj.size() * nn.size());
    std::string name = adj[static_cast<std::size_t>(a)] + " " + nn[static_cast<std::size_t>(b)];
    if (round > 0) name += " " + std::to_string(round + 1);
    return name;
}

inline const std::vector<std::string>& movie_genres() {
    static const std::vector<std::string> v{
        "Action",    "Adventure", "Animation", "Comedy",  "Crime",   "Documentary",
        "Drama",     "Fantasy",   "Film-Noir", "Horror",  "Musical", "Mystery",
        "Romance",   "Sci-Fi",    "Thriller",  "War",     "Western", "Children's"};
    return v;
}

inline const std::vector<std::string>& music_tags() {
    static const std::vector<std::string> v{
        "rock",  "pop",   "electronic", "jazz",    "metal",  "folk",    "indie",
        "blues", "punk",  "ambient",    "hip-hop", "soul",   "country", "classical",
        "funk",  "house", "reggae",     "disco",   "techno", "grunge"};
    return v;
}

}  // namespace worddetail

// Clustered Markov walk over dense item indices [0, n_items).
class MarkovWalk {
public:
    MarkovWalk(int n_items, int n_clusters, double p_succ, double p_same)
        : n_items_(n_items), n_clusters_(n_clusters), p_succ_(p_succ), p_same_(p_same) {}

    int cluster_of(int item) const { return item % n_clusters_; }

    int cluster_size(int cluster) const {
        return (n_items_ - cluster + n_clusters_ - 1) / n_clusters_;
    }

    // next item of the in-cluster ring
    int succ(int item) const {
        int next = item + n_clusters_;
        return next < n_items_ ? next : cluster_of(item);
    }

    int zipf_in_cluster(int cluster, std::mt19937_64& rng) const {
        int size = cluster_size(cluster);
        // weight 1/(k+1): cheap inverse-CDF by rejection
        while (true) {
            int k = static_cast<int>(bounded_uniform(rng, static_cast<std::uint64_t>(size)));
            double accept = 1.0 / static_cast<double>(k + 1);
            if (uniform_real(rng) < accept * 2.0) return cluster + k * n_clusters_;
        }
    }

    std::vector<int> walk(int length, std::mt19937_64& rng) const {
        std::vector<int> items;
        items.reserve(static_cast<std::size_t>(length));
        int cluster = static_cast<int>(bounded_uniform(rng, static_cast<std::uint64_t>(n_clusters_)));
        int current = zipf_in_cluster(cluster, rng);
        items.push_back(current);
        std::vector<char> seen(static_cast<std::size_t>(n_items_), 0);
        seen[static_cast<std::size_t>(current)] = 1;
        while (static_cast<int>(items.size()) < length) {
            double roll = uniform_real(rng);
            int next;
            if (roll < p_succ_) {
                next = succ(current);
            } else if (roll < p_succ_ + p_same_) {
                next = zipf_in_cluster(cluster_of(current), rng);
            } else {
                int jump = (cluster_of(current) + 1) % n_clusters_;
                next = zipf_in_cluster(jump, rng);
            }
            if (seen[static_cast<std::size_t>(next)]) {
                // user already consumed it; move along the ring until free
                int tries = 0;
                while (seen[static_cast<std::size_t>(next)] && tries++ < n_items_)
                    next = succ(next);
                if (seen[static_cast<std::size_t>(next)]) break;
            }
            seen[static_cast<std::size_t>(next)] = 1;
            items.push_back(next);
            current = next;
        }
        return items;
    }

private:
    int n_items_;
    int n_clusters_;
    double p_succ_;
    double p_same_;
};

inline void write_movielens_dir(const std::filesystem::path& dir, const MovielensSpec& spec,
                                std::uint64_t seed) {
    std::filesystem::create_directories(dir);
    std::mt19937_64 rng(seed);
    const auto& genres = worddetail::movie_genres();

    {
        std::ofstream movies(dir / "movies.dat", std::ios::binary | std::ios::trunc);
        for (int i = 0; i < spec.n_movies; ++i) {
            int id = i + 1;
            int year = spec.min_year +
                       static_cast<int>(bounded_uniform(
                           rng, static_cast<std::uint64_t>(spec.max_year - spec.min_year + 1)));
            int cluster = i % spec.n_clusters;
            std::string genre = genres[static_cast<std::size_t>(cluster) % genres.size()];
            if (i % 3 == 0)
                genre += "|" + genres[(static_cast<std::size_t>(cluster) + 7) % genres.size()];
            movies << id << "::" << worddetail::unique_name(i) << " (" << year << ")::" << genre
                   << "\n";
        }
    }

    int total_users = 0;
    for (const auto& g : spec.groups) total_users += g.users;
    {
        std::ofstream users(dir / "users.dat", std::ios::binary | std::ios::trunc);
        static const int ages[] = {1, 18, 25, 35, 45, 50, 56};
        for (int u = 1; u <= total_users; ++u) {
            const char* gender = bounded_uniform(rng, 2) ? "M" : "F";
            int age = ages[bounded_uniform(rng, 7)];
            int occupation = static_cast<int>(bounded_uniform(rng, 21));
            users << u << "::" << gender << "::" << age << "::" << occupation << "::00000\n";
        }
    }

    MarkovWalk walk(spec.n_movies, spec.n_clusters, spec.p_succ, spec.p_same_cluster);
    {
        std::ofstream ratings(dir / "ratings.dat", std::ios::binary | std::ios::trunc);
        int user = 1;
        for (const auto& g : spec.groups) {
            for (int k = 0; k < g.users; ++k, ++user) {
                int span = g.max_len - g.min_len + 1;
                int length = g.min_len +
                             static_cast<int>(bounded_uniform(rng, static_cast<std::uint64_t>(span)));
                auto items = walk.walk(length, rng);
                std::int64_t ts = 960000000 + static_cast<std::int64_t>(user) * 100000;
                for (std::size_t t = 0; t < items.size(); ++t) {
                    int rating = 3 + static_cast<int>(bounded_uniform(rng, 3));
                    ratings << user << "::" << items[t] + 1 << "::" << rating << "::"
                            << ts + static_cast<std::int64_t>(t) * 60 << "\n";
                }
            }
        }
    }
}

inline void write_lastfm_dir(const std::filesystem::path& dir, const LastfmSpec& spec,
                             std::uint64_t seed) {
    std::filesystem::create_directories(dir);
    std::mt19937_64 rng(seed);

    {
        std::ofstream artists(dir / "artists.dat", std::ios::binary | std::ios::trunc);
        artists << "id\tname\turl\tpictureURL\n";
        for (int i = 0; i < spec.n_artists; ++i) {
            int id = i + 1;
            artists << id << "\t" << worddetail::unique_name(i)
                    << "\thttp://example.invalid/artist/" << id
                    << "\thttp://example.invalid/art/" << id << ".jpg\n";
        }
    }

    const auto& tag_pool = worddetail::music_tags();
    {
        std::ofstream tags(dir / "tags.dat", std::ios::binary | std::ios::trunc);
        tags << "tagID\ttagValue\n";
        for (int i = 0; i < spec.n_tags; ++i) {
            std::string value = tag_pool[static_cast<std::size_t>(i) % tag_pool.size()];
            if (i >= static_cast<int>(tag_pool.size()))
                value += "-" + std::to_string(i / static_cast<int>(tag_pool.size()));
            tags << i + 1 << "\t" << value << "\n";
        }
    }

    int total_users = 0;
    for (const auto& g : spec.groups) total_users += g.users;

    {
        std::ofstream ua(dir / "user_artists.dat", std::ios::binary | std::ios::trunc);
        std::ofstream uta(dir / "user_taggedartists.dat", std::ios::binary | std::ios::trunc);
        ua << "userID\tartistID\tweight\n";
        uta << "userID\tartistID\ttagID\tday\tmonth\tyear\n";
        int user = 1;
        for (const auto& g : spec.groups) {
            for (int k = 0; k < g.users; ++k, ++user) {
                int span = g.max_len - g.min_len + 1;
                int count = g.min_len +
                            static_cast<int>(bounded_uniform(rng, static_cast<std::uint64_t>(span)));
                // popularity-skewed sample without replacement
                std::vector<char> seen(static_cast<std::size_t>(spec.n_artists), 0);
                int picked = 0;
                long weight = 10000;
                while (picked < count) {
                    auto raw = bounded_uniform(rng, static_cast<std::uint64_t>(spec.n_artists));
                    auto sq = static_cast<int>(
                        (raw * raw) / static_cast<std::uint64_t>(spec.n_artists));
                    int artist = sq;  // quadratic skew toward low ids
                    if (seen[static_cast<std::size_t>(artist)]) {
                        artist = static_cast<int>(bounded_uniform(
                            rng, static_cast<std::uint64_t>(spec.n_artists)));
                        if (seen[static_cast<std::size_t>(artist)]) continue;
                    }
                    seen[static_cast<std::size_t>(artist)] = 1;
                    ++picked;
                    weight -= static_cast<long>(bounded_uniform(rng, 17)) + 3;
                    ua << user << "\t" << artist + 1 << "\t" << weight << "\n";
                    if (picked % 7 == 1) {
                        int tag = 1 + (artist % spec.n_tags);
                        uta << user << "\t" << artist + 1 << "\t" << tag << "\t1\t6\t2010\n";
                    }
                }
            }
        }
    }
}

// In-memory corpus where every sequence follows the fixed ring
// 0 -> 1 -> ... -> n-1 -> 0 from a random phase, with lengths varying in
// [seq_len, seq_len + 4]. The next item is fully determined by the current
// one, so a converged next-item model must reach hit@1 = 1 on the held-out
// tails.
inline ParsedCorpus cycle_corpus(int n_items, int n_seqs, int seq_len, std::uint64_t seed) {
    ParsedCorpus out;
    out.catalog.dataset = Dataset::movielens_1m;
    for (int i = 0; i < n_items; ++i) {
        ItemRecord rec;
        rec.id = i + 1;
        rec.title = "Cycle Stop " + std::to_string(i + 1) + " (1980)";
        rec.year = 1980;
        rec.tags = {"Drama"};
        out.catalog.add(std::move(rec));
    }
    std::mt19937_64 rng(seed);
    for (int s = 0; s < n_seqs; ++s) {
        UserRecord u;
        u.id = s + 1;
        u.gender = "M";
        u.age = "25-34";
        u.occupation = "other";
        out.users.push_back(u);
        int phase = static_cast<int>(bounded_uniform(rng, static_cast<std::uint64_t>(n_items)));
        int length = seq_len + static_cast<int>(bounded_uniform(rng, 5));
        InteractionSeq seq;
        seq.user_id = u.id;
        for (int t = 0; t < length; ++t) {
            int item = (phase + t) % n_items;
            seq.items.push_back(item + 1);
            seq.timestamps.push_back(t);
            out.catalog.mutable_items().at(item + 1).occurrence += 1;
        }
        out.seqs.push_back(std::move(seq));
    }
    out.catalog.build_index();
    return out;
}

}  // namespace ipp::synthetic
