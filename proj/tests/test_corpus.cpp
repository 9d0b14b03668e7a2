#include <catch2/catch_amalgamated.hpp>

#include <fstream>
#include <set>

#include "ipp/corpus.hpp"
#include "ipp/synthetic.hpp"
#include "support/tempdir.hpp"

using namespace ipp;
using ipp::testing::TempDir;

namespace {

void write_file(const std::filesystem::path& p, const std::string& content) {
    std::ofstream out(p, std::ios::binary);
    out << content;
}

// minimal but format-faithful MovieLens directory
void write_tiny_movielens(const std::filesystem::path& dir) {
    write_file(dir / "movies.dat",
               "1::Toy Story (1995)::Animation|Children's|Comedy\n"
               "2::Jumanji (1995)::Adventure|Children's|Fantasy\n");
    write_file(dir / "users.dat", "1::F::25::20::55117\n");
    write_file(dir / "ratings.dat",
               "1::1::5::978300760\n"
               "1::2::4::978302109\n");
}

void write_tiny_lastfm(const std::filesystem::path& dir) {
    write_file(dir / "artists.dat",
               "id\tname\turl\tpictureURL\n"
               "1\tMetallica\thttp://x/1\thttp://x/1.jpg\n"
               "2\tPortishead\thttp://x/2\thttp://x/2.jpg\n"
               "3\tAutechre\thttp://x/3\thttp://x/3.jpg\n");
    write_file(dir / "tags.dat",
               "tagID\ttagValue\n"
               "1\tmetal\n"
               "2\ttrip-hop\n");
    write_file(dir / "user_taggedartists.dat",
               "userID\tartistID\ttagID\tday\tmonth\tyear\n"
               "9\t1\t1\t1\t4\t2009\n"
               "9\t2\t2\t1\t4\t2009\n");
    write_file(dir / "user_artists.dat",
               "userID\tartistID\tweight\n"
               "9\t2\t500\n"
               "9\t1\t900\n"
               "9\t3\t500\n");
}

}  // namespace

TEST_CASE("movielens: three-line fixture yields one two-item sequence") {
    TempDir dir("ml-tiny");
    write_tiny_movielens(dir.path());
    auto corpus = parse_movielens(dir.path());
    REQUIRE(corpus.catalog.size() == 2);
    REQUIRE(corpus.users.size() == 1);
    REQUIRE(corpus.seqs.size() == 1);
    CHECK(corpus.seqs[0].items == std::vector<ItemId>{1, 2});
    CHECK(corpus.users[0].gender == "F");
    CHECK(corpus.users[0].age == "25-34");
    CHECK(corpus.users[0].occupation == "writer");
    // titles keep the year suffix; the year is extracted separately
    CHECK(corpus.catalog.item(1).title == "Toy Story (1995)");
    CHECK(corpus.catalog.item(1).year == 1995);
    CHECK(corpus.catalog.item(1).occurrence == 1);
    CHECK(corpus.catalog.item(2).tags ==
          std::vector<std::string>{"Adventure", "Children's", "Fantasy"});
}

TEST_CASE("movielens: malformed line reports file and line number") {
    TempDir dir("ml-bad");
    write_tiny_movielens(dir.path());
    write_file(dir.path() / "ratings.dat", "1::1::5::978300760\n1::oops\n");
    try {
        parse_movielens(dir.path());
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        std::string msg = e.what();
        CHECK(msg.find("ratings.dat") != std::string::npos);
        CHECK(msg.find("line 2") != std::string::npos);
    }
}

TEST_CASE("movielens: missing file is a configuration error") {
    TempDir dir("ml-missing");
    write_tiny_movielens(dir.path());
    std::filesystem::remove(dir.path() / "users.dat");
    CHECK_THROWS_AS(parse_movielens(dir.path()), ConfigError);
}

TEST_CASE("movielens: rating for unknown movie is a parse error") {
    TempDir dir("ml-unknown");
    write_tiny_movielens(dir.path());
    write_file(dir.path() / "ratings.dat", "1::99::5::978300760\n");
    CHECK_THROWS_AS(parse_movielens(dir.path()), ParseError);
}

TEST_CASE("lastfm: artists ordered by listen weight, ties by artist id") {
    TempDir dir("fm-tiny");
    write_tiny_lastfm(dir.path());
    auto corpus = parse_lastfm(dir.path());
    REQUIRE(corpus.catalog.size() == 3);
    REQUIRE(corpus.users.size() == 1);
    REQUIRE(corpus.seqs.size() == 1);
    // weight 900 first, then the 500-500 tie resolved by artist id
    CHECK(corpus.seqs[0].items == std::vector<ItemId>{1, 2, 3});
    CHECK(corpus.seqs[0].timestamps == std::vector<std::int64_t>{0, 1, 2});
    CHECK(corpus.catalog.item(1).tags == std::vector<std::string>{"metal"});
    CHECK_FALSE(corpus.catalog.item(1).year.has_value());
}

TEST_CASE("lastfm: empty listening file yields zero sequences without error") {
    TempDir dir("fm-empty");
    write_tiny_lastfm(dir.path());
    write_file(dir.path() / "user_artists.dat", "userID\tartistID\tweight\n");
    auto corpus = parse_lastfm(dir.path());
    CHECK(corpus.catalog.size() == 3);
    CHECK(corpus.seqs.empty());
}

TEST_CASE("split_sequences: partition properties hold for any seed") {
    std::vector<InteractionSeq> seqs;
    for (int i = 0; i < 10; ++i) {
        InteractionSeq s;
        s.user_id = i;
        s.items = {1};
        s.timestamps = {0};
        seqs.push_back(s);
    }
    for (std::uint64_t seed : {1ull, 7ull, 42ull, 1234ull}) {
        auto [train, test] = split_sequences(seqs, 0.5, seed);
        CHECK(train.size() == 5);
        CHECK(test.size() == 5);
        std::set<UserId> train_users, test_users;
        for (const auto& s : train) train_users.insert(s.user_id);
        for (const auto& s : test) test_users.insert(s.user_id);
        CHECK(train_users.size() + test_users.size() == 10);
        for (auto u : train_users) CHECK_FALSE(test_users.count(u));
    }
}

TEST_CASE("split_sequences: rounding matches the published sequence count") {
    std::vector<InteractionSeq> seqs(5084);
    for (std::size_t i = 0; i < seqs.size(); ++i) {
        seqs[i].user_id = static_cast<UserId>(i);
        seqs[i].items = {1};
        seqs[i].timestamps = {0};
    }
    auto [train, test] = split_sequences(seqs, 0.2, 99);
    CHECK(train.size() == 1017);
    CHECK(test.size() == 4067);
}

TEST_CASE("split_sequences: deterministic per seed, fraction domain-checked") {
    std::vector<InteractionSeq> seqs(20);
    for (std::size_t i = 0; i < seqs.size(); ++i) {
        seqs[i].user_id = static_cast<UserId>(i);
        seqs[i].items = {1};
        seqs[i].timestamps = {0};
    }
    auto [a_train, a_test] = split_sequences(seqs, 0.2, 5);
    auto [b_train, b_test] = split_sequences(seqs, 0.2, 5);
    REQUIRE(a_train.size() == b_train.size());
    for (std::size_t i = 0; i < a_train.size(); ++i)
        CHECK(a_train[i].user_id == b_train[i].user_id);
    CHECK_THROWS_AS(split_sequences(seqs, 0.0, 1), DomainError);
    CHECK_THROWS_AS(split_sequences(seqs, 1.0, 1), DomainError);
}

namespace {

Catalog three_item_catalog() {
    Catalog catalog;
    catalog.dataset = Dataset::movielens_1m;
    for (int i = 1; i <= 3; ++i) {
        ItemRecord rec;
        rec.id = i;
        rec.title = "Item " + std::to_string(i) + " (1990)";
        rec.year = 1990;
        catalog.add(std::move(rec));
    }
    catalog.build_index();
    return catalog;
}

}  // namespace

TEST_CASE("sample_targets: exclusion forces the only remaining item") {
    auto catalog = three_item_catalog();
    InteractionSeq seq;
    seq.user_id = 7;
    seq.items = {1, 2};
    seq.timestamps = {0, 1};
    auto cases = sample_targets({seq}, catalog, {}, 123);
    REQUIRE(cases.size() == 1);
    CHECK(cases[0].target == 3);
    CHECK(cases[0].case_id == 0);
}

TEST_CASE("sample_targets: deterministic per seed; full-coverage history errors") {
    auto catalog = three_item_catalog();
    InteractionSeq seq;
    seq.user_id = 7;
    seq.items = {1};
    seq.timestamps = {0};
    auto a = sample_targets({seq}, catalog, {}, 55);
    auto b = sample_targets({seq}, catalog, {}, 55);
    CHECK(a[0].target == b[0].target);

    InteractionSeq full;
    full.user_id = 8;
    full.items = {1, 2, 3};
    full.timestamps = {0, 1, 2};
    try {
        sample_targets({full}, catalog, {}, 1);
        FAIL("expected DomainError");
    } catch (const DomainError& e) {
        CHECK(std::string(e.what()).find("8") != std::string::npos);
    }
}

TEST_CASE("sample_targets: empirical distribution is approximately uniform") {
    // oracle: uniform sampling over the catalog minus a small history
    TempDir dir("ml-uniform");
    synthetic::MovielensSpec spec;
    spec.n_movies = 900;
    spec.groups = {{40, 21, 40}};
    synthetic::write_movielens_dir(dir.path(), spec, 77);
    auto corpus = parse_movielens(dir.path());

    // repeat the 40 histories to get 2000 draws
    std::vector<InteractionSeq> many;
    for (int rep = 0; rep < 50; ++rep)
        for (const auto& s : corpus.seqs) many.push_back(s);
    auto cases = sample_targets(many, corpus.catalog, corpus.users, 20240601 + 1);

    constexpr int kBins = 20;
    std::vector<double> observed(kBins, 0.0);
    for (const auto& c : cases) observed[static_cast<std::size_t>((c.target - 1) * kBins / 900)] += 1;
    double expected = static_cast<double>(cases.size()) / kBins;
    double chi2 = 0;
    for (double o : observed) chi2 += (o - expected) * (o - expected) / expected;
    // df = 19; 43.8 is the 0.001 quantile — use a generous bound
    CHECK(chi2 < 60.0);
}

TEST_CASE("resolve_title: exact, normalized and fuzzy forms") {
    Catalog catalog;
    catalog.dataset = Dataset::movielens_1m;
    auto add = [&](ItemId id, const std::string& title, std::optional<int> year) {
        ItemRecord rec;
        rec.id = id;
        rec.title = title;
        rec.year = year;
        catalog.add(std::move(rec));
    };
    add(1, "Dr. Strangelove (1964)", 1964);
    add(2, "Great Dictator, The (1940)", 1940);
    add(3, "Sabrina (1954)", 1954);
    add(4, "Sabrina (1995)", 1995);
    catalog.build_index();

    CHECK(resolve_title("Dr. Strangelove (1964)", catalog) == 1);
    CHECK(resolve_title("Dr. Strangelove (1964)", catalog) ==
          resolve_title("dr strangelove", catalog));
    CHECK(resolve_title("The Great Dictator (1940)", catalog) == 2);
    CHECK(resolve_title("The Great Dictator", catalog) == 2);
    // year disambiguates titles that normalize identically
    CHECK(resolve_title("Sabrina (1954)", catalog) == 3);
    CHECK(resolve_title("Sabrina (1995)", catalog) == 4);
    CHECK_THROWS_AS(resolve_title("Sabrina", catalog), TitleAmbiguityError);
    // small typo falls back to edit distance
    CHECK(resolve_title("dr stranglove", catalog) == 1);
    CHECK_FALSE(resolve_title("Completely Different Film", catalog).has_value());
}

TEST_CASE("resolve_title: edit-distance ties are signaled, not chosen") {
    Catalog catalog;
    catalog.dataset = Dataset::movielens_1m;
    for (auto [id, title] : std::vector<std::pair<ItemId, std::string>>{
             {1, "Alien (1979)"}, {2, "Aliens (1986)"}}) {
        ItemRecord rec;
        rec.id = id;
        rec.title = title;
        rec.year = split_year_suffix(title).second;
        catalog.add(std::move(rec));
    }
    catalog.build_index();
    // distance 2 to both "alien" and "aliens"
    CHECK_THROWS_AS(resolve_title("alien z", catalog), TitleAmbiguityError);
    CHECK(resolve_title("Alien", catalog) == 1);   // exact normalized hit wins
    CHECK(resolve_title("alien s", catalog) == 2); // unique best at distance 1
}

TEST_CASE("catalog: serialize then parse is identity") {
    TempDir dir("cat-rt");
    synthetic::MovielensSpec spec;
    spec.n_movies = 120;
    spec.groups = {{25, 21, 30}};
    synthetic::write_movielens_dir(dir.path(), spec, 3);
    auto corpus = parse_movielens(dir.path());

    auto path = dir / "catalog.jsonl";
    save_catalog(corpus.catalog, path);
    auto loaded = load_catalog(path);
    REQUIRE(loaded.size() == corpus.catalog.size());
    CHECK(loaded.dataset == corpus.catalog.dataset);
    for (const auto& [id, rec] : corpus.catalog.items()) CHECK(loaded.item(id) == rec);
}

TEST_CASE("corpus: referential integrity and resolve round-trip over the catalog") {
    TempDir dir("ml-desk-small");
    synthetic::MovielensSpec spec;
    spec.n_movies = 300;
    spec.groups = {{60, 21, 40}};
    synthetic::write_movielens_dir(dir.path(), spec, 9);
    auto corpus = parse_movielens(dir.path());

    for (const auto& s : corpus.seqs) {
        REQUIRE_FALSE(s.items.empty());
        REQUIRE(s.items.size() == s.timestamps.size());
        for (std::size_t i = 1; i < s.timestamps.size(); ++i)
            CHECK(s.timestamps[i] >= s.timestamps[i - 1]);
        for (auto id : s.items) CHECK(corpus.catalog.contains(id));
    }
    for (const auto& [id, rec] : corpus.catalog.items())
        CHECK(resolve_title(rec.title, corpus.catalog) == id);
}

TEST_CASE("movielens ingest at reference scale") {
    TempDir dir("ml-ref");
    synthetic::MovielensSpec spec;
    spec.n_movies = 3883;
    spec.groups = {{5084, 21, 60}, {954, 5, 19}};
    spec.n_clusters = 40;
    synthetic::write_movielens_dir(dir.path(), spec, 11);
    auto corpus = parse_movielens(dir.path());
    CHECK(corpus.catalog.size() == 3883);
    CHECK(corpus.users.size() == 6038);
    auto filtered = filter_min_length(corpus.seqs, 20);
    CHECK(filtered.size() == 5084);
    auto [train, test] = split_sequences(filtered, 0.2, 42);
    CHECK(train.size() == 1017);
    CHECK(test.size() == 4067);
}

TEST_CASE("lastfm ingest at reference scale with threshold sweep") {
    TempDir dir("fm-ref");
    synthetic::LastfmSpec spec;
    spec.n_artists = 17632;
    spec.groups = {{1297, 50, 50}, {595, 20, 49}};
    synthetic::write_lastfm_dir(dir.path(), spec, 13);
    auto corpus = parse_lastfm(dir.path());
    CHECK(corpus.catalog.size() == 17632);
    CHECK(corpus.users.size() == 1892);

    auto sweep = sweep_length_threshold(corpus.seqs, 1297);
    CHECK(sweep.exact);
    CHECK(sweep.count == 1297);
    auto filtered = filter_min_length(corpus.seqs, sweep.threshold);
    CHECK(filtered.size() == 1297);
}

TEST_CASE("sweep_length_threshold picks the closest count when no exact match") {
    std::vector<InteractionSeq> seqs;
    for (int len : {3, 3, 5, 9}) {
        InteractionSeq s;
        s.user_id = len;
        for (int i = 0; i < len; ++i) {
            s.items.push_back(1 + i % 2);
            s.timestamps.push_back(i);
        }
        seqs.push_back(s);
    }
    auto sweep = sweep_length_threshold(seqs, 3);
    // counts by threshold: 1..3 -> 4, 4..5 -> 2, 6..9 -> 1;  closest to 3 is 4 or 2,
    // the tie resolves to the smaller threshold (count 4 at threshold 1)
    CHECK(sweep.count == 4);
    CHECK(sweep.threshold == 1);
    CHECK_FALSE(sweep.exact);
    auto exact = sweep_length_threshold(seqs, 2);
    CHECK(exact.exact);
    CHECK(exact.threshold == 4);
}
