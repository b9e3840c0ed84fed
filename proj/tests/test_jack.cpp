#include "cornerslab/jack.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

#include "cornerslab/state_space.hpp"
#include "doctest.h"

namespace {

using corners::Partition;

// Weyl dimension formula: at theta = 1 the principal value collapses to
// prod_{i<j} (lambda_i - lambda_j + j - i)/(j - i).
double weyl_dimension(const Partition& lam, int N) {
    double v = 1;
    for (int i = 1; i <= N; ++i)
        for (int j = i + 1; j <= N; ++j)
            v *= static_cast<double>(lam.part(i) - lam.part(j) + j - i) / (j - i);
    return v;
}

std::vector<Partition> partitions_in_box(int rows, int cap) {
    std::vector<Partition> out;
    corners::SignatureEnumerator en(rows, cap);
    do {
        out.emplace_back(en.current().parts);
    } while (en.next());
    return out;
}

}  // namespace

TEST_SUITE("jack") {

TEST_CASE("partition construction validates and strips zeros") {
    Partition p{3, 1, 0, 0};
    CHECK(p.n_parts() == 2);
    CHECK(p.weight() == 4);
    CHECK(p.part(1) == 3);
    CHECK(p.part(2) == 1);
    CHECK(p.part(5) == 0);
    CHECK(Partition{} == Partition{0, 0});
    CHECK_THROWS_AS(Partition({1, 2}), std::invalid_argument);
    CHECK_THROWS_AS(Partition({2, -1}), std::invalid_argument);
    CHECK_THROWS_AS(p.part(0), std::out_of_range);
}

TEST_CASE("conjugate, arm, and leg on hand-drawn diagrams") {
    Partition p{4, 2, 1};
    CHECK(p.conjugate() == Partition{3, 2, 1, 1});
    CHECK(p.conjugate().conjugate() == p);

    // Box (1,1) of (4,2,1): the rest of row 1 has 3 boxes, column 1 below has 2.
    CHECK(p.arm(1, 1) == 3);
    CHECK(p.leg(1, 1) == 2);
    CHECK(p.arm(1, 4) == 0);
    CHECK(p.leg(1, 4) == 0);
    CHECK(p.arm(2, 1) == 1);
    CHECK(p.leg(2, 1) == 1);
    CHECK(p.contains_box(3, 1));
    CHECK_FALSE(p.contains_box(3, 2));
    CHECK_THROWS_AS(p.arm(3, 2), std::out_of_range);

    for (const Partition& lam : partitions_in_box(4, 4))
        CHECK(lam.conjugate().conjugate() == lam);
}

TEST_CASE("interlacing predicate") {
    CHECK(corners::partitions_interlace(Partition{3, 1}, Partition{2}));
    CHECK(corners::partitions_interlace(Partition{3, 1}, Partition{1}));
    CHECK(corners::partitions_interlace(Partition{1, 1}, Partition{1}));
    CHECK(corners::partitions_interlace(Partition{}, Partition{}));
    CHECK_FALSE(corners::partitions_interlace(Partition{1, 1}, Partition{2}));
    CHECK_FALSE(corners::partitions_interlace(Partition{2, 2}, Partition{1}));
    CHECK(corners::partitions_interlace(Partition{3, 1}, Partition{3, 1}));
    CHECK_FALSE(corners::partitions_interlace(Partition{3, 1}, Partition{2, 2}));
}

TEST_CASE("principal specialization on pinned monomial cases") {
    for (double theta : {0.5, 1.0, 1.3, 2.0}) {
        CHECK(corners::jack_principal(Partition{}, 3, theta) == 1.0);
        // J_(1) = x1 + x2 and J_(2,1) = x1 x2 (x1 + x2) for every theta.
        CHECK(corners::jack_principal(Partition{1}, 2, theta) ==
              doctest::Approx(2.0).epsilon(1e-13));
        CHECK(corners::jack_principal(Partition{2, 1}, 2, theta) ==
              doctest::Approx(2.0).epsilon(1e-13));
    }
    CHECK(corners::jack_principal(Partition{1, 1, 1}, 2, 0.7) == 0.0);
    CHECK_THROWS_AS(corners::jack_principal(Partition{1}, 0, 1.0), std::invalid_argument);
    CHECK_THROWS_AS(corners::jack_principal(Partition{1}, 2, 0.0), std::invalid_argument);
}

TEST_CASE("principal specialization matches the Weyl dimension formula at theta = 1") {
    for (const Partition& lam : partitions_in_box(4, 4)) {
        for (int N : {2, 3, 4}) {
            if (lam.n_parts() > N) continue;
            const double expected = weyl_dimension(lam, N);
            CHECK(corners::jack_principal(lam, N, 1.0) ==
                  doctest::Approx(expected).epsilon(1e-12));
        }
    }
}

TEST_CASE("one-variable skew factor: indicator and Schur reduction") {
    CHECK(corners::skew_jack_one(Partition{1, 1}, Partition{2}, 0.7) == 0.0);
    CHECK(corners::skew_jack_one(Partition{2, 2}, Partition{1}, 1.3) == 0.0);

    // theta = 1 is the Schur case: adding one variable contributes coefficient
    // one for every interlacing pair.
    for (const Partition& lam : partitions_in_box(2, 4)) {
        for (const Partition& mu : partitions_in_box(2, 4)) {
            if (!corners::partitions_interlace(lam, mu)) continue;
            CHECK(corners::skew_jack_one(lam, mu, 1.0) ==
                  doctest::Approx(1.0).epsilon(1e-13));
        }
    }
}

TEST_CASE("one-variable skew factor: coefficients frozen from monomial expansions") {
    // From P_(2)(x,y) = m_(2) + (2 theta/(theta+1)) m_(11) and
    // P_(21)(x,y,z) = m_(21) + (6 theta/(1+2 theta)) m_(111), matching the
    // z-degree layers against P_mu(x,y) pins the one-step coefficients.
    for (double theta : {0.5, 1.0, 1.3, 2.0}) {
        CHECK(corners::skew_jack_one(Partition{2}, Partition{1}, theta) ==
              doctest::Approx(2 * theta / (1 + theta)).epsilon(1e-13));
        CHECK(corners::skew_jack_one(Partition{2, 1}, Partition{1, 1}, theta) ==
              doctest::Approx(6 * theta / (1 + 2 * theta) - 2 * theta / (1 + theta))
                  .epsilon(1e-13));
        for (Partition mu : {Partition{1}, Partition{2}}) {
            CHECK(corners::skew_jack_one(Partition{2, 1}, mu, theta) ==
                  doctest::Approx(1.0).epsilon(1e-13));
        }
        CHECK(corners::skew_jack_one(Partition{1}, Partition{}, theta) == 1.0);
        CHECK(corners::skew_jack_one(Partition{1}, Partition{1}, theta) ==
              doctest::Approx(1.0).epsilon(1e-13));
        CHECK(corners::skew_jack_one(Partition{2, 2}, Partition{2}, theta) ==
              doctest::Approx(1.0).epsilon(1e-13));
    }
}

TEST_CASE("branching closes on two-row cases") {
    CHECK(corners::verify_branching(Partition{}, 3, 0.7) == 0.0);
    for (double theta : {0.5, 1.0, 1.3, 2.0})
        CHECK(corners::verify_branching(Partition{1}, 2, theta) < 1e-12);
    for (double theta : {0.5, 1.0, 2.0})
        CHECK(corners::verify_branching(Partition{2, 1}, 2, theta) < 1e-10);
}

TEST_CASE("branching closes for every partition in the 3x3 box at N = 3") {
    for (const Partition& lam : partitions_in_box(3, 3))
        for (double theta : {0.5, 1.0, 1.3, 2.0})
            CHECK(corners::verify_branching(lam, 3, theta) < 1e-10);
}

TEST_CASE("dual principal value: one-row closed form and self-duality") {
    CHECK(corners::dual_jack_principal(Partition{}, 2, 0.7) == 1.0);

    for (double theta : {0.5, 1.3}) {
        // One variable: dual-J_(m)(1) = (theta)_m / m!, built up recursively.
        double expected = 1;
        for (int m = 0; m <= 6; ++m) {
            Partition lam = m > 0 ? Partition{m} : Partition{};
            CHECK(corners::dual_jack_principal(lam, 1, theta) ==
                  doctest::Approx(expected).epsilon(1e-13));
            expected *= (theta + m) / (m + 1);
        }
    }

    for (const Partition& lam : partitions_in_box(3, 3)) {
        CHECK(corners::dual_jack_principal(lam, 3, 1.0) ==
              doctest::Approx(corners::jack_principal(lam, 3, 1.0)).epsilon(1e-12));
    }
}

TEST_CASE("dual principal value agrees with the arm-leg box product") {
    for (double theta : {0.5, 1.3, 2.0}) {
        for (int N : {2, 3}) {
            for (const Partition& lam : partitions_in_box(N, 3)) {
                const double via_boxes = corners::jack_principal(lam, N, theta) *
                                         corners::dual_correction(lam, theta);
                CHECK(corners::dual_jack_principal(lam, N, theta) ==
                      doctest::Approx(via_boxes).epsilon(1e-12));
            }
        }
    }
}

TEST_CASE("Cauchy identity: q = 0 is exact") {
    auto r = corners::verify_cauchy(2, 0.7, 0.0, 5);
    CHECK(r.truncated_sum == 1.0);
    CHECK(r.target == 1.0);
    CHECK(r.residual == 0.0);
    CHECK(r.within_bound);
}

TEST_CASE("Cauchy identity at N = 1 with binomial-series cross-check") {
    const double q = 0.1;
    const int T = 60;
    for (double theta : {0.3, 0.7, 1.0, 1.9}) {
        auto r = corners::verify_cauchy(1, theta, q, T);
        CHECK(r.within_bound);
        CHECK(r.residual < r.tail_bound);
        CHECK(r.tail_bound < 1e-10);

        double series = 0, term = 1;
        for (int m = 0; m <= T; ++m) {
            series += term;
            term *= q * (theta + m) / (m + 1);
        }
        CHECK(r.truncated_sum == doctest::Approx(series).epsilon(1e-13));
    }
}

TEST_CASE("Cauchy identity at N = 2") {
    for (double q : {0.1, 0.2}) {
        auto r = corners::verify_cauchy(2, 0.7, q, 40);
        CHECK(r.within_bound);
        CHECK(r.residual < r.tail_bound);
        CHECK(r.shell_ratio < 1.0);
    }
}

TEST_CASE("Cauchy check rejects bad arguments") {
    CHECK_THROWS_AS(corners::verify_cauchy(0, 0.7, 0.1, 10), std::invalid_argument);
    CHECK_THROWS_AS(corners::verify_cauchy(1, 0.7, 1.0, 10), std::invalid_argument);
    CHECK_THROWS_AS(corners::verify_cauchy(1, 0.7, -0.1, 10), std::invalid_argument);
    CHECK_THROWS_AS(corners::verify_cauchy(1, 0.7, 0.1, 0), std::invalid_argument);
}

}  // TEST_SUITE
