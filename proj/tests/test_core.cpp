#include <doctest.h>

#include <cmath>
#include <random>

#include "stableconf/core.hpp"
#include "test_support.hpp"

using namespace stableconf;
using test_support::make_question;

TEST_CASE("question validation") {
    CHECK_NOTHROW(make_question(4, 'B').validate());
    CHECK_NOTHROW(make_question(2, 'A').validate());

    Question one = make_question(4, 'B');
    one.options.resize(1);
    CHECK_THROWS_AS(one.validate(), Error);

    Question bad_gold = make_question(3, 'D');  // D not among A..C
    CHECK_THROWS_AS(bad_gold.validate(), Error);

    Question gap = make_question(3, 'A');
    gap.options[1].label = 'C';  // not contiguous from A
    CHECK_THROWS_AS(gap.validate(), Error);
}

TEST_CASE("softmax_over_labels") {
    SUBCASE("symmetry") {
        auto dist = softmax_over_labels({{'A', 0.0}, {'B', 0.0}}, {'A', 'B'});
        CHECK(dist.prob('A') == doctest::Approx(0.5).epsilon(1e-12));
        CHECK(dist.prob('B') == doctest::Approx(0.5).epsilon(1e-12));
    }
    SUBCASE("exp inverts log") {
        auto dist = softmax_over_labels(
            {{'A', std::log(0.7)}, {'B', std::log(0.3)}}, {'A', 'B'});
        CHECK(dist.prob('A') == doctest::Approx(0.7).epsilon(1e-12));
        CHECK(dist.prob('B') == doctest::Approx(0.3).epsilon(1e-12));
    }
    SUBCASE("three-way values") {
        auto dist = softmax_over_labels({{'A', 1.0}, {'B', 0.0}, {'C', 0.0}},
                                        {'A', 'B', 'C'});
        CHECK(dist.prob('A') == doctest::Approx(0.5761).epsilon(1e-4));
        CHECK(dist.prob('B') == doctest::Approx(0.2119).epsilon(1e-4));
        CHECK(dist.prob('C') == doctest::Approx(0.2119).epsilon(1e-4));
    }
    SUBCASE("errors") {
        CHECK_THROWS_AS(softmax_over_labels({}, {}), Error);
        CHECK_THROWS_AS(softmax_over_labels({{'A', 0.0}}, {'A', 'B'}), Error);
    }
    SUBCASE("overflow safety via max shift") {
        auto dist = softmax_over_labels({{'A', 1000.0}, {'B', 999.0}}, {'A', 'B'});
        CHECK_NOTHROW(dist.validate());
        CHECK(dist.prob('A') > dist.prob('B'));
    }
}

TEST_CASE("mix_distributions") {
    AnswerDistribution ab{{{'A', 0.8}, {'B', 0.2}}};
    AnswerDistribution ba{{{'A', 0.2}, {'B', 0.8}}};

    SUBCASE("single element") {
        auto out = mix_distributions({1.0}, {AnswerDistribution{{{'A', 0.6}, {'B', 0.4}}}});
        CHECK(out.prob('A') == doctest::Approx(0.6).epsilon(1e-12));
    }
    SUBCASE("symmetry") {
        auto out = mix_distributions(
            {1.0, 1.0}, {AnswerDistribution{{{'A', 1.0}, {'B', 0.0}}},
                         AnswerDistribution{{{'A', 0.0}, {'B', 1.0}}}});
        CHECK(out.prob('A') == doctest::Approx(0.5).epsilon(1e-12));
    }
    SUBCASE("weighted mean against an oracle loop") {
        std::vector<double> weights{0.3, 0.7};
        std::vector<AnswerDistribution> dists{ab, ba};
        auto out = mix_distributions(weights, dists);

        double z = weights[0] + weights[1];
        for (char label : {'A', 'B'}) {
            double expected = 0.0;
            for (size_t n = 0; n < dists.size(); ++n)
                expected += (weights[n] / z) * dists[n].prob(label);
            CHECK(out.prob(label) == doctest::Approx(expected).epsilon(1e-12));
        }
        CHECK(out.prob('A') == doctest::Approx(0.38).epsilon(1e-12));
        CHECK(out.prob('B') == doctest::Approx(0.62).epsilon(1e-12));
    }
    SUBCASE("zero weights are degenerate") {
        CHECK_THROWS_AS(mix_distributions({0.0, 0.0}, {ab, ba}), Error);
        try {
            mix_distributions({0.0}, {ab});
        } catch (const Error& err) {
            CHECK(err.kind() == ErrorKind::DegenerateWeights);
        }
    }
    SUBCASE("mismatched label sets rejected") {
        AnswerDistribution abc{{{'A', 0.5}, {'B', 0.3}, {'C', 0.2}}};
        CHECK_THROWS_AS(mix_distributions({1.0, 1.0}, {ab, abc}), Error);
    }
}

TEST_CASE("mix_distributions invariances") {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> u(0.01, 1.0);

    for (int trial = 0; trial < 50; ++trial) {
        int labels = 2 + static_cast<int>(rng() % 4);
        int n = 1 + static_cast<int>(rng() % 5);
        std::vector<double> weights;
        std::vector<AnswerDistribution> dists;
        for (int i = 0; i < n; ++i) {
            weights.push_back(u(rng));
            AnswerDistribution d;
            double total = 0.0;
            for (int l = 0; l < labels; ++l) {
                double v = u(rng);
                d.probs[static_cast<char>('A' + l)] = v;
                total += v;
            }
            for (auto& [_, p] : d.probs) p /= total;
            dists.push_back(std::move(d));
        }

        auto base = mix_distributions(weights, dists);
        CHECK_NOTHROW(base.validate());

        // Invariant: positive rescaling of all weights changes nothing.
        auto scaled_weights = weights;
        double scale = u(rng) * 10.0;
        for (auto& w : scaled_weights) w *= scale;
        auto scaled = mix_distributions(scaled_weights, dists);
        for (const auto& [label, p] : base.probs)
            CHECK(scaled.prob(label) == doctest::Approx(p).epsilon(1e-12));

        // Invariant: simultaneous permutation of (weights, dists).
        std::vector<size_t> perm(static_cast<size_t>(n));
        for (size_t i = 0; i < perm.size(); ++i) perm[i] = i;
        std::shuffle(perm.begin(), perm.end(), rng);
        std::vector<double> pw;
        std::vector<AnswerDistribution> pd;
        for (size_t i : perm) {
            pw.push_back(weights[i]);
            pd.push_back(dists[i]);
        }
        auto permuted = mix_distributions(pw, pd);
        for (const auto& [label, p] : base.probs)
            CHECK(permuted.prob(label) == doctest::Approx(p).epsilon(1e-12));
    }
}

TEST_CASE("argmax ties resolve to the lowest label") {
    AnswerDistribution tied{{{'A', 0.25}, {'B', 0.25}, {'C', 0.25}, {'D', 0.25}}};
    CHECK(tied.argmax_label() == 'A');
    AnswerDistribution bc{{{'A', 0.1}, {'B', 0.45}, {'C', 0.45}}};
    CHECK(bc.argmax_label() == 'B');
}

TEST_CASE("method and plausibility names round-trip") {
    for (auto m : {Method::TokenProb, Method::Linguistic, Method::TopK,
                   Method::CotConsistency, Method::Stability, Method::CotStability,
                   Method::StabilityEntailOnly, Method::StabilityDistributionOnly,
                   Method::Tta})
        CHECK(parse_method(method_name(m)) == m);
    for (auto p : {Plausibility::Entailment, Plausibility::MostLikely,
                   Plausibility::CompleteDescription, Plausibility::Uniform})
        CHECK(parse_plausibility(plausibility_name(p)) == p);
    CHECK_THROWS_AS(parse_method("nope"), Error);
}
