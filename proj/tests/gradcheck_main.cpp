// Finite-difference gradient check in double precision. Prints one JSON
// object; used by the acceptance runner.

#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <json.hpp>

#include "gradcheck.hpp"

int main(int argc, char** argv) {
    CLI::App app{"Gradient check of the total loss on a 32x32, K=3 instance"};
    int samples = 200;
    double h = 1e-3, tol = 1e-3;
    std::uint64_t seed = 3;
    std::optional<double> slope;
    app.add_option("--samples", samples);
    app.add_option("--step", h);
    app.add_option("--tolerance", tol);
    app.add_option("--seed", seed);
    app.add_option("--leaky-slope", slope);
    CLI11_PARSE(app, argc, argv);

    const gradcheck::Result r = gradcheck::run(samples, h, tol, seed, slope);
    nlohmann::json worst = nlohmann::json::array();
    for (const auto& s : r.worst)
        worst.push_back({{"network", s.network + 1}, {"index", s.index}, {"analytic", s.analytic},
                         {"numeric", s.numeric}, {"rel_error", s.rel_error}});
    std::cout << nlohmann::json{{"samples", r.samples},         {"failures", r.failures},
                                {"max_rel_error", r.max_rel_error}, {"seconds", r.seconds},
                                {"step", h},                     {"failing", worst}}
                     .dump()
              << "\n";
    return 0;
}
