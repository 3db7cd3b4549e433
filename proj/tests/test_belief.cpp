#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <e2bki/belief.hpp>
#include <e2bki/rng.hpp>

#include <vector>

using namespace e2bki;

namespace {

Eigen::VectorXd vec2(double a, double b) {
    Eigen::VectorXd v(2);
    v << a, b;
    return v;
}

// Random valid mass over C classes: non-negative entries summing to 1.
BeliefMass random_mass(Rng& rng, int c) {
    Eigen::VectorXd parts(c + 1);
    double sum = 0.0;
    for (int i = 0; i <= c; ++i) {
        parts[i] = -std::log(1.0 - rng.uniform());
        sum += parts[i];
    }
    parts /= sum;
    return BeliefMass(parts.head(c), parts[c]);
}

// Independent evaluation of the combination rule, written out longhand.
BeliefMass combine_oracle(const BeliefMass& m1, const BeliefMass& m2) {
    const int c = m1.class_count();
    double delta = 0.0;
    for (int x = 0; x < c; ++x)
        for (int y = 0; y < c; ++y)
            if (x != y) delta += m1.beliefs()[x] * m2.beliefs()[y];
    Eigen::VectorXd b(c);
    for (int i = 0; i < c; ++i)
        b[i] = (m1.beliefs()[i] * m2.beliefs()[i] + m1.beliefs()[i] * m2.uncertainty() +
                m2.beliefs()[i] * m1.uncertainty()) /
               (1.0 - delta);
    return BeliefMass(b, m1.uncertainty() * m2.uncertainty() / (1.0 - delta));
}

} // namespace

TEST_CASE("prob_to_belief basic conversion") {
    const BeliefMass m = prob_to_belief(ClassProbability(vec2(0.7, 0.3)), 0.2);
    CHECK(m.beliefs()[0] == doctest::Approx(0.6).epsilon(1e-12));
    CHECK(m.beliefs()[1] == doctest::Approx(0.2).epsilon(1e-12));
    CHECK(m.uncertainty() == doctest::Approx(0.2).epsilon(1e-12));
}

TEST_CASE("prob_to_belief fully uncertain input gives the vacuous mass") {
    const BeliefMass m = prob_to_belief(ClassProbability::uniform(3), 1.0);
    CHECK(m.beliefs().cwiseAbs().maxCoeff() == doctest::Approx(0.0));
    CHECK(m.uncertainty() == doctest::Approx(1.0));
}

TEST_CASE("prob_to_belief fully confident input keeps the one-hot") {
    const BeliefMass m = prob_to_belief(ClassProbability(vec2(1.0, 0.0)), 0.0);
    CHECK(m.beliefs()[0] == doctest::Approx(1.0));
    CHECK(m.beliefs()[1] == doctest::Approx(0.0));
    CHECK(m.uncertainty() == doctest::Approx(0.0));
}

TEST_CASE("prob_to_belief rejects uncertainty outside [0,1]") {
    CHECK_THROWS_AS(prob_to_belief(ClassProbability(vec2(0.5, 0.5)), -0.1),
                    std::invalid_argument);
    CHECK_THROWS_AS(prob_to_belief(ClassProbability(vec2(0.5, 0.5)), 1.1),
                    std::invalid_argument);
}

TEST_CASE("prob_to_belief clamps components below u/C and renormalizes") {
    long warnings = 0;
    const BeliefMass m = prob_to_belief(ClassProbability(vec2(0.9, 0.1)), 0.6, &warnings);
    CHECK(warnings == 1);
    CHECK(m.beliefs()[0] == doctest::Approx(0.6).epsilon(1e-12));
    CHECK(m.beliefs()[1] == doctest::Approx(0.0));
    CHECK(m.uncertainty() == doctest::Approx(0.4).epsilon(1e-12));
    CHECK(m.beliefs().sum() + m.uncertainty() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("belief_to_prob inverts the conversion") {
    const ClassProbability p = belief_to_prob(BeliefMass(vec2(0.6, 0.2), 0.2));
    CHECK(p.values()[0] == doctest::Approx(0.7).epsilon(1e-12));
    CHECK(p.values()[1] == doctest::Approx(0.3).epsilon(1e-12));

    const ClassProbability vac = belief_to_prob(BeliefMass::vacuous(3));
    for (int i = 0; i < 3; ++i)
        CHECK(vac.values()[i] == doctest::Approx(1.0 / 3.0).epsilon(1e-15));

    const ClassProbability hot = belief_to_prob(BeliefMass(vec2(1.0, 0.0), 0.0));
    CHECK(hot.values()[0] == doctest::Approx(1.0));
}

TEST_CASE("prob->belief->prob round trip without clamping") {
    Rng rng(7);
    for (int i = 0; i < 2000; ++i) {
        const int c = 2 + static_cast<int>(rng.index(5));
        Eigen::VectorXd p(c);
        double sum = 0.0;
        for (int j = 0; j < c; ++j) {
            p[j] = 0.05 + rng.uniform();
            sum += p[j];
        }
        p /= sum;
        const double u = rng.uniform() * c * p.minCoeff(); // keeps p^c >= u/C
        const ClassProbability back =
            belief_to_prob(prob_to_belief(ClassProbability(p), u));
        CHECK((back.values() - p).cwiseAbs().maxCoeff() <= 1e-12);
    }
}

TEST_CASE("combine matches the hand-evaluated example") {
    const BeliefMass m(vec2(0.6, 0.2), 0.2);
    const BeliefMass out = combine(m, m);
    // delta = 0.24, so (0.36+0.12+0.12)/0.76 etc.
    CHECK(out.beliefs()[0] == doctest::Approx(0.7895).epsilon(1e-4));
    CHECK(out.beliefs()[1] == doctest::Approx(0.1579).epsilon(1e-4));
    CHECK(out.uncertainty() == doctest::Approx(0.0526).epsilon(1e-4));
}

TEST_CASE("combine treats the vacuous mass as identity") {
    const BeliefMass m(vec2(0.6, 0.2), 0.2);
    const BeliefMass out = combine(m, BeliefMass::vacuous(2));
    CHECK(out.beliefs()[0] == doctest::Approx(0.6).epsilon(1e-15));
    CHECK(out.beliefs()[1] == doctest::Approx(0.2).epsilon(1e-15));
    CHECK(out.uncertainty() == doctest::Approx(0.2).epsilon(1e-15));
}

TEST_CASE("combine detects total conflict") {
    const BeliefMass a(vec2(1.0, 0.0), 0.0);
    const BeliefMass b(vec2(0.0, 1.0), 0.0);
    CHECK_THROWS_AS(combine(a, b), TotalConflictError);
}

TEST_CASE("combine closure, commutativity and uncertainty monotonicity") {
    Rng rng(42);
    for (int i = 0; i < 10000; ++i) {
        const int c = 2 + static_cast<int>(rng.index(4));
        const BeliefMass m1 = random_mass(rng, c);
        const BeliefMass m2 = random_mass(rng, c);
        BeliefMass ab = BeliefMass::vacuous(c);
        try {
            ab = combine(m1, m2);
        } catch (const TotalConflictError&) {
            continue;
        }
        const BeliefMass ba = combine(m2, m1);
        // closure: the constructor re-validates sum-to-one and non-negativity
        CHECK(ab.beliefs().sum() + ab.uncertainty() == doctest::Approx(1.0).epsilon(1e-12));
        CHECK((ab.beliefs() - ba.beliefs()).cwiseAbs().maxCoeff() <= 1e-12);
        CHECK(std::abs(ab.uncertainty() - ba.uncertainty()) <= 1e-12);

        const double umin = std::min(m1.uncertainty(), m2.uncertainty());
        const double s1 = m1.beliefs().sum(), s2 = m2.beliefs().sum();
        const double delta = s1 * s2 - m1.beliefs().dot(m2.beliefs());
        CHECK(ab.uncertainty() <= umin / (1.0 - delta) + 1e-12);
        CHECK(ab.uncertainty() <= 1.0 + 1e-12);
    }
}

TEST_CASE("combine_all folds in input order") {
    Rng rng(3);
    const BeliefMass m = random_mass(rng, 3);

    SUBCASE("single element") {
        const BeliefMass out = combine_all(std::vector<BeliefMass>{m});
        CHECK((out.beliefs() - m.beliefs()).cwiseAbs().maxCoeff() == 0.0);
    }
    SUBCASE("vacuous operands are absorbed") {
        const std::vector<BeliefMass> seq{m, BeliefMass::vacuous(3), BeliefMass::vacuous(3)};
        const BeliefMass out = combine_all(seq);
        CHECK((out.beliefs() - m.beliefs()).cwiseAbs().maxCoeff() <= 1e-15);
        CHECK(out.uncertainty() == doctest::Approx(m.uncertainty()).epsilon(1e-15));
    }
    SUBCASE("matches a brute-force fold") {
        for (int trial = 0; trial < 200; ++trial) {
            const std::vector<BeliefMass> seq{random_mass(rng, 3), random_mass(rng, 3),
                                              random_mass(rng, 3)};
            const BeliefMass expect =
                combine_oracle(combine_oracle(seq[0], seq[1]), seq[2]);
            const BeliefMass out = combine_all(seq);
            CHECK((out.beliefs() - expect.beliefs()).cwiseAbs().maxCoeff() <= 1e-12);
            CHECK(std::abs(out.uncertainty() - expect.uncertainty()) <= 1e-12);
        }
    }
    SUBCASE("empty input is rejected") {
        CHECK_THROWS_AS(combine_all(std::vector<BeliefMass>{}), std::invalid_argument);
    }
    SUBCASE("total-conflict operands are skipped and counted") {
        const std::vector<BeliefMass> seq{BeliefMass(vec2(1.0, 0.0), 0.0),
                                          BeliefMass(vec2(0.0, 1.0), 0.0)};
        long skips = 0;
        const BeliefMass out = combine_all(seq, &skips);
        CHECK(skips == 1);
        CHECK(out.beliefs()[0] == doctest::Approx(1.0));
    }
}
