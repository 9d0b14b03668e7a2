#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <map>
#include <set>

#include "ipp/simulator.hpp"
#include "ipp/synthetic.hpp"
#include "support/tempdir.hpp"

using namespace ipp;
using ipp::testing::TempDir;

namespace {

Catalog small_catalog(int n) {
    Catalog catalog;
    catalog.dataset = Dataset::movielens_1m;
    for (int i = 1; i <= n; ++i) {
        ItemRecord rec;
        rec.id = i;
        rec.title = "Probe " + std::to_string(i) + " (1990)";
        rec.year = 1990;
        catalog.add(std::move(rec));
    }
    catalog.build_index();
    return catalog;
}

SimulatorConfig tiny_config(int d, int blocks, int heads, int L, std::uint64_t seed) {
    SimulatorConfig c;
    c.embed_dim = d;
    c.num_blocks = blocks;
    c.num_heads = heads;
    c.max_seq_len = L;
    c.dropout = 0.0;
    c.learning_rate = 1e-3;
    c.epochs = 1;
    c.batch_size = 8;
    c.seed = seed;
    return c;
}

}  // namespace

TEST_CASE("gradient check: analytic gradients match central finite differences") {
    auto catalog = small_catalog(5);
    auto model = init_simulator(catalog, tiny_config(4, 2, 1, 8, 20240917));

    std::vector<TrainingSample> batch = {
        {{0, 1, 2, 3}, {1, 2, 3, 4}},
        {{4, 3, 2, 1, 0}, {3, 2, 1, 0, 4}},
        {{2, 2, 4}, {2, 4, 0}},
    };

    auto [loss, grads] = simulator_batch_grad(model, batch);
    REQUIRE(std::isfinite(loss));
    auto analytic = flatten_grads(grads);
    auto params = flatten_params(model);
    REQUIRE(analytic.size() == params.size());

    const double h = 1e-5;
    double worst = 0.0;
    for (std::size_t k = 0; k < params.size(); ++k) {
        auto perturbed = params;
        perturbed[k] = params[k] + h;
        unflatten_params(model, perturbed);
        double up = simulator_batch_loss(model, batch);
        perturbed[k] = params[k] - h;
        unflatten_params(model, perturbed);
        double down = simulator_batch_loss(model, batch);
        double fd = (up - down) / (2 * h);
        double err = std::abs(analytic[k] - fd) /
                     std::max({1e-6, std::abs(analytic[k]), std::abs(fd)});
        worst = std::max(worst, err);
    }
    unflatten_params(model, params);
    INFO("worst relative gradient error: " << worst << " over " << params.size() << " params");
    CHECK(worst < 1e-4);
}

TEST_CASE("training is deterministic for a fixed seed") {
    auto corpus = synthetic::cycle_corpus(8, 40, 10, 5);
    SimulatorConfig config = tiny_config(8, 1, 1, 12, 77);
    config.epochs = 3;
    config.dropout = 0.2;  // dropout draws come from the seeded stream too
    auto [m1, r1] = train_simulator(corpus.seqs, corpus.catalog, config);
    auto [m2, r2] = train_simulator(corpus.seqs, corpus.catalog, config);
    CHECK(m1.params_sha256() == m2.params_sha256());
    CHECK(m1.train_fingerprint == m2.train_fingerprint);
    CHECK(r1.epoch_loss == r2.epoch_loss);

    SimulatorConfig other = config;
    other.seed = 78;
    auto [m3, r3] = train_simulator(corpus.seqs, corpus.catalog, other);
    CHECK(m3.params_sha256() != m1.params_sha256());
}

TEST_CASE("training loss decreases on a learnable corpus") {
    auto corpus = synthetic::cycle_corpus(10, 120, 12, 21);
    SimulatorConfig config = tiny_config(16, 2, 1, 16, 31);
    config.epochs = 8;
    config.learning_rate = 3e-3;
    auto [model, report] = train_simulator(corpus.seqs, corpus.catalog, config);
    REQUIRE(report.epoch_loss.size() == 8);
    CHECK(report.epoch_loss.back() < report.epoch_loss.front());
    for (double l : report.epoch_loss) CHECK(std::isfinite(l));
}

TEST_CASE("cycle corpus: converged model predicts the successor exactly") {
    auto corpus = synthetic::cycle_corpus(10, 200, 12, 42);
    SimulatorConfig config = tiny_config(16, 2, 1, 16, 4242);
    config.epochs = 30;
    config.learning_rate = 3e-3;
    config.batch_size = 64;
    auto [model, report] = train_simulator(corpus.seqs, corpus.catalog, config);

    CHECK(hit_at_k(model, corpus.seqs, 1) == 1.0);

    // the step after item a (id 1) is item b (id 2)
    std::vector<ItemId> seq{9, 10, 1};
    auto dist = model.next_item_dist(seq);
    auto argmax = std::distance(dist.begin(), std::max_element(dist.begin(), dist.end()));
    CHECK(model.item_ids[static_cast<std::size_t>(argmax)] == 2);

    // adjacent cycle items sit closer in embedding space than random pairs
    double adjacent = 0.0;
    for (int i = 0; i < 10; ++i) {
        VectorXd a = model.item_embedding(1 + i);
        VectorXd b = model.item_embedding(1 + (i + 1) % 10);
        adjacent += a.dot(b) / (a.norm() * b.norm());
    }
    adjacent /= 10;
    double all_pairs = 0.0;
    int count = 0;
    for (int i = 0; i < 10; ++i)
        for (int j = i + 1; j < 10; ++j) {
            VectorXd a = model.item_embedding(1 + i);
            VectorXd b = model.item_embedding(1 + j);
            all_pairs += a.dot(b) / (a.norm() * b.norm());
            ++count;
        }
    all_pairs /= count;
    CHECK(adjacent > all_pairs);
}

TEST_CASE("trained sequence model beats the popularity predictor at hit@10") {
    TempDir dir("ml-markov");
    synthetic::MovielensSpec spec;
    spec.n_movies = 200;
    spec.groups = {{300, 21, 35}};
    spec.n_clusters = 10;
    synthetic::write_movielens_dir(dir.path(), spec, 17);
    auto corpus = parse_movielens(dir.path());

    SimulatorConfig config = tiny_config(16, 2, 1, 40, 99);
    config.epochs = 5;
    config.learning_rate = 3e-3;
    config.batch_size = 32;
    auto [model, report] = train_simulator(corpus.seqs, corpus.catalog, config);

    // popularity oracle: top-10 items by event count over the training
    // portions (every sequence minus its held-out last item)
    std::map<ItemId, long> counts;
    for (const auto& s : corpus.seqs)
        for (std::size_t i = 0; i + 1 < s.items.size(); ++i) counts[s.items[i]] += 1;
    std::vector<std::pair<ItemId, long>> ranked(counts.begin(), counts.end());
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        return a.second != b.second ? a.second > b.second : a.first < b.first;
    });
    std::set<ItemId> top10;
    for (std::size_t i = 0; i < 10 && i < ranked.size(); ++i) top10.insert(ranked[i].first);
    long pop_hits = 0;
    for (const auto& s : corpus.seqs)
        if (top10.count(s.items.back())) ++pop_hits;
    double pop_hit10 = static_cast<double>(pop_hits) / static_cast<double>(corpus.seqs.size());

    INFO("model hit@10 = " << report.hit_at_10 << ", popularity hit@10 = " << pop_hit10);
    CHECK(report.hit_at_10 > pop_hit10);
    CHECK(report.hit_at_10 == hit_at_k(model, corpus.seqs, 10));
}

TEST_CASE("next_item_dist is a proper distribution and shift-invariant") {
    auto catalog = small_catalog(12);
    auto model = init_simulator(catalog, tiny_config(8, 2, 2, 10, 3));
    model.train_fingerprint = "test";

    std::vector<ItemId> seq{3, 5, 7, 1};
    auto dist = model.next_item_dist(seq);
    REQUIRE(dist.size() == 12);
    double sum = 0;
    for (double p : dist) {
        CHECK(p >= 0.0);
        sum += p;
    }
    CHECK(std::abs(sum - 1.0) < 1e-6);

    // adding a constant to every logit leaves the softmax unchanged
    VectorXd logits = model.final_logits(seq);
    VectorXd shifted = logits.array() + 123.456;
    double mx = shifted.maxCoeff();
    VectorXd ex = (shifted.array() - mx).exp();
    double z = ex.sum();
    for (Eigen::Index i = 0; i < ex.size(); ++i)
        CHECK(std::abs(dist[static_cast<std::size_t>(i)] - ex(i) / z) < 1e-12);
}

TEST_CASE("ranks form a bijection and respect the probability order") {
    auto catalog = small_catalog(9);
    auto model = init_simulator(catalog, tiny_config(4, 1, 1, 8, 8));
    std::vector<ItemId> seq{2, 4, 6};

    auto dist = model.next_item_dist(seq);
    std::set<int> ranks;
    for (int i = 1; i <= 9; ++i) ranks.insert(model.rank_of(i, seq));
    CHECK(ranks == std::set<int>{1, 2, 3, 4, 5, 6, 7, 8, 9});

    auto argmax =
        std::distance(dist.begin(), std::max_element(dist.begin(), dist.end()));
    CHECK(model.rank_of(model.item_ids[static_cast<std::size_t>(argmax)], seq) == 1);

    for (int i = 1; i <= 9; ++i)
        for (int j = 1; j <= 9; ++j) {
            if (dist[static_cast<std::size_t>(i - 1)] > dist[static_cast<std::size_t>(j - 1)])
                CHECK(model.rank_of(i, seq) < model.rank_of(j, seq));
        }
}

TEST_CASE("equal logits break ties toward the smaller item id") {
    auto catalog = small_catalog(6);
    auto model = init_simulator(catalog, tiny_config(4, 1, 1, 8, 12));
    // identical embedding rows give identical logits for items 2 and 5
    model.item_emb.row(4) = model.item_emb.row(1);
    std::vector<ItemId> seq{1, 3};
    int r2 = model.rank_of(2, seq);
    int r5 = model.rank_of(5, seq);
    CHECK(r2 + 1 == r5);
}

TEST_CASE("sequences longer than max_seq_len use exactly the last window") {
    auto catalog = small_catalog(15);
    auto model = init_simulator(catalog, tiny_config(8, 2, 1, 6, 5));
    std::vector<ItemId> long_seq{1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12};
    std::vector<ItemId> window(long_seq.end() - 6, long_seq.end());
    VectorXd a = model.final_logits(long_seq);
    VectorXd b = model.final_logits(window);
    CHECK(a == b);
}

TEST_CASE("unknown items are rejected") {
    auto catalog = small_catalog(4);
    auto model = init_simulator(catalog, tiny_config(4, 1, 1, 8, 6));
    CHECK_THROWS_AS(model.next_item_dist(std::vector<ItemId>{99}), DomainError);
    CHECK_THROWS_AS(model.rank_of(99, std::vector<ItemId>{1}), DomainError);
    CHECK_THROWS_AS(model.item_embedding(99), DomainError);
    CHECK(model.item_embedding(2).size() == 4);
}

TEST_CASE("checkpoint round-trip preserves inference bit-for-bit") {
    TempDir dir("ckpt");
    auto corpus = synthetic::cycle_corpus(8, 30, 8, 15);
    SimulatorConfig config = tiny_config(8, 2, 2, 10, 25);
    config.epochs = 2;
    auto [model, report] = train_simulator(corpus.seqs, corpus.catalog, config);

    auto path = dir / "model.bin";
    model.save(path);
    auto loaded = SimulatorModel::load(path);
    CHECK(loaded.params_sha256() == model.params_sha256());
    CHECK(loaded.train_fingerprint == model.train_fingerprint);
    for (auto probe : {std::vector<ItemId>{1, 2}, std::vector<ItemId>{5, 4, 3},
                       std::vector<ItemId>{8}}) {
        VectorXd a = model.final_logits(probe);
        VectorXd b = loaded.final_logits(probe);
        CHECK(a == b);
    }
}

TEST_CASE("diverging training aborts with epoch and batch location") {
    auto corpus = synthetic::cycle_corpus(6, 30, 8, 33);
    SimulatorConfig config = tiny_config(8, 1, 1, 16, 44);
    // an unbounded step poisons the parameters, so the next batch's loss
    // must come back non-finite and abort
    config.learning_rate = std::numeric_limits<double>::infinity();
    config.batch_size = 4;
    config.epochs = 6;
    try {
        train_simulator(corpus.seqs, corpus.catalog, config);
        FAIL("expected StateError");
    } catch (const StateError& e) {
        std::string msg = e.what();
        CHECK(msg.find("epoch") != std::string::npos);
        CHECK(msg.find("batch") != std::string::npos);
    }
}

TEST_CASE("train rejects degenerate inputs") {
    auto corpus = synthetic::cycle_corpus(6, 5, 8, 1);
    SimulatorConfig config = tiny_config(8, 1, 1, 10, 1);
    CHECK_THROWS_AS(train_simulator({}, corpus.catalog, config), DomainError);
    InteractionSeq one;
    one.user_id = 1;
    one.items = {1};
    one.timestamps = {0};
    CHECK_THROWS_AS(train_simulator({one}, corpus.catalog, config), DomainError);

    SimulatorConfig bad = config;
    bad.embed_dim = 6;
    bad.num_heads = 4;
    CHECK_THROWS_AS(train_simulator(corpus.seqs, corpus.catalog, bad), ConfigError);
}
