#include <CLI11.hpp>

#include <iostream>
#include <string>

#include "ipp/synthetic.hpp"

// Writes deterministic demo datasets in the published MovieLens-1M /
// hetrec-Last.FM byte formats so the pipeline can be exercised without the
// real downloads.
int main(int argc, char** argv) {
    CLI::App app{"synthetic dataset generator (MovieLens-1M / Last.FM file formats)"};
    std::string dataset = "movielens-1m";
    std::string out_dir;
    std::string preset = "desk";
    std::uint64_t seed = 1234;
    app.add_option("--dataset", dataset, "movielens-1m|lastfm")
        ->check(CLI::IsMember({"movielens-1m", "lastfm"}));
    app.add_option("--out", out_dir, "output directory")->required();
    app.add_option("--preset", preset, "desk (small) | reference (published shape)")
        ->check(CLI::IsMember({"desk", "reference"}));
    app.add_option("--seed", seed, "generator seed");
    CLI11_PARSE(app, argc, argv);

    try {
        if (dataset == "movielens-1m") {
            ipp::synthetic::MovielensSpec spec;
            if (preset == "reference") {
                spec.n_movies = 3883;
                spec.groups = {{5084, 21, 60}, {954, 5, 19}};  // 6,038 users
                spec.n_clusters = 40;
            }
            ipp::synthetic::write_movielens_dir(out_dir, spec, seed);
        } else {
            ipp::synthetic::LastfmSpec spec;
            if (preset == "reference") {
                spec.n_artists = 17632;
                spec.groups = {{1297, 50, 50}, {595, 20, 49}};  // 1,892 users
            }
            ipp::synthetic::write_lastfm_dir(out_dir, spec, seed);
        }
        std::cout << "wrote " << dataset << " (" << preset << ") files to " << out_dir << "\n";
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
