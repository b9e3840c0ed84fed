#include "cornerslab/nekrasov.hpp"

#include <cmath>
#include <complex>
#include <map>
#include <stdexcept>
#include <vector>

#include "cornerslab/numerics.hpp"
#include "doctest.h"

namespace {

using corners::AnalyticFamily;
using corners::BijectionVariant;
using corners::cplx;
using corners::ContourSpec;
using corners::GeometricWeight;
using corners::MaterializedMeasure;
using corners::MeasureSpec;
using corners::NekrasovEvaluator;
using corners::PhiFunction;
using corners::PoleCandidate;
using corners::ThetaBranch;
using corners::WhichR;

double rel_err(cplx got, cplx want) {
    return std::abs(got - want) / std::max(1.0, std::abs(want));
}

// (1/2pi i) * contour integral over a small circle, i.e. the enclosed residue.
cplx residue_at(const std::function<cplx(cplx)>& f, double s, double r) {
    ContourSpec c;
    c.center = cplx{s, 0.0};
    c.semi_axis_x = r;
    c.semi_axis_y = r;
    c.nodes = 32;
    return corners::contour_integral(f, c).value;
}

// Direct single-level sum: for N = k = 1 the measure lives on lambda in
// [0, M] with P(lambda) proportional to q^lambda, and every expectation is a
// plain weighted average over M + 1 states.  Assembles R_1/R_2 from the
// two-term formula with the residual part spelled out, nothing shared with
// the library evaluation path beyond the phi callables themselves.
struct SingleLevelOracle {
    double theta;
    int M;
    double q;
    std::vector<double> P;

    SingleLevelOracle(double theta_, int M_, double q_) : theta(theta_), M(M_), q(q_) {
        double Z = 0.0;
        for (int l = 0; l <= M; ++l) Z += std::pow(q, l);
        for (int l = 0; l <= M; ++l) P.push_back(std::pow(q, l) / Z);
    }

    cplx expect(const std::function<cplx(double)>& f) const {
        cplx acc{0.0, 0.0};
        for (int l = 0; l <= M; ++l) acc += P[l] * f(l - theta);
        return acc;
    }

    cplx r1(const AnalyticFamily& fam, cplx z) const {
        const double sM = M + 1 - theta;
        const cplx e1 = expect([&](double l) { return (z - l - theta) / (z - l); });
        const cplx e2 = expect([&](double l) { return (z - l + theta - 1.0) / (z - l - 1.0); });
        const cplx res = -theta * fam.eval_phi1(2, cplx{-theta, 0.0}) / (z + theta) * P[0] +
                         theta * fam.eval_phi1(1, cplx{sM, 0.0}) / (z - sM) * P[M];
        return fam.eval_phi1(2, z) * e1 + fam.eval_phi1(1, z) * e2 - res;
    }

    cplx r2(const AnalyticFamily& fam, cplx z) const {
        const double sM = M + 1 - theta;
        const cplx e1 = expect([&](double l) { return (z - l + theta - 1.0) / (z - l - 1.0); });
        const cplx e2 = expect([&](double l) { return (z - l - theta) / (z - l); });
        const cplx res = theta * fam.eval_phi2(2, cplx{sM, 0.0}) / (z - sM) * P[M] -
                         theta * fam.eval_phi2(1, cplx{-theta, 0.0}) / (z + theta) * P[0];
        return fam.eval_phi2(2, z) * e1 + fam.eval_phi2(1, z) * e2 - res;
    }
};

MeasureSpec single_level_spec(double theta, int M, double q) {
    return MeasureSpec::top_weight(theta, 1, 1, M, GeometricWeight{cplx{q, 0.0}});
}

AnalyticFamily arbitrary_family_1() {
    AnalyticFamily fam;
    fam.N = 1;
    fam.k = 1;
    fam.phi1 = {PhiFunction{cplx{1.3, 0.0}, cplx{0.0, 0.0}, {cplx{0.4, 0.0}}},
                PhiFunction{cplx{0.7, 0.0}, cplx{0.2, 0.0}, {cplx{-1.1, 0.0}}}};
    fam.phi2 = {PhiFunction{cplx{-0.6, 0.0}, cplx{0.0, 0.0}, {cplx{2.3, 0.0}}},
                PhiFunction{cplx{1.1, 0.0}, cplx{-0.1, 0.0}, {cplx{0.9, 0.0}}}};
    return fam;
}

}  // namespace

TEST_SUITE("nekrasov") {

TEST_CASE("pole candidates enumerate the shifted integer grid") {
    const auto spec = corners::geometric_setup(0.7, 2, 1, 3, {cplx{0.8, 0.0}, cplx{1.2, 0.0}});
    const auto cands = corners::pole_candidates(spec.measure);
    REQUIRE(cands.size() == (3 + 2) * 2);
    for (const auto& c : cands) {
        CHECK(c.a >= 0);
        CHECK(c.a <= 4);
        CHECK(c.b >= 1);
        CHECK(c.b <= 2);
        CHECK(c.s == doctest::Approx(c.a - 0.7 * c.b).epsilon(1e-15));
    }
    CHECK(cands.front().a == 0);
    CHECK(cands.front().b == 1);
    CHECK(cands.back().a == 4);
    CHECK(cands.back().b == 2);
}

TEST_CASE("compatible families validate below 1e-10, corrupted ones do not") {
    const auto kr = corners::krawtchouk_setup(3, 1, 5, 0.7, 0.6);
    CHECK(corners::validate_family(kr.measure, kr.family) < 1e-10);

    const auto geo =
        corners::geometric_setup(1.3, 3, 1, 3, {cplx{0.8, 0.0}, cplx{1.2, 0.0}, cplx{0.65, 0.0}});
    CHECK(corners::validate_family(geo.measure, geo.family) < 1e-12);

    auto bad = kr.family;
    bad.phi1[0].prefactor *= 1.01;
    CHECK(corners::validate_family(kr.measure, bad) > 1e-4);
}

TEST_CASE("weights derived from the first-kind ratios reproduce the measure") {
    const auto geo =
        corners::geometric_setup(1.3, 3, 1, 3, {cplx{0.8, 0.0}, cplx{1.2, 0.0}, cplx{0.65, 0.0}});
    const auto derived = corners::derive_weights(1.3, 3, 1, 3, geo.family);
    MaterializedMeasure a(geo.measure), b(derived);
    REQUIRE(a.size() == b.size());
    for (int idx = 0; idx < a.size(); ++idx)
        CHECK(std::abs(a.prob(idx) - b.prob(idx)) < 1e-12);

    const auto kr = corners::krawtchouk_setup(3, 1, 5, 0.7, 0.6);
    const auto derived_kr = corners::derive_weights(0.7, 3, 1, 5, kr.family);
    MaterializedMeasure c(kr.measure), d(derived_kr);
    REQUIRE(c.size() == d.size());
    for (int idx = 0; idx < c.size(); ++idx)
        CHECK(std::abs(c.prob(idx) - d.prob(idx)) < 1e-10);
}

TEST_CASE("single-level geometric weight gives the constant Liouville value") {
    // With constant phis both R's are entire and tend to 1 + q at infinity,
    // so they equal 1 + q identically; 1.55 is the frozen direct-sum value.
    const double q = 0.55;
    const AnalyticFamily fam = AnalyticFamily::from_top_pair(
        1, 1, PhiFunction{cplx{q, 0.0}}, PhiFunction{cplx{1.0, 0.0}});
    const std::vector<cplx> zs = {cplx{2.3, 1.1}, cplx{-1.7, 0.3}};
    for (double theta : {0.7, 1.3}) {
        const auto spec = single_level_spec(theta, 6, q);
        for (cplx z : zs) {
            CHECK(rel_err(corners::eval_R1(spec, fam, z, ThetaBranch::general),
                          cplx{1.55, 0.0}) < 1e-12);
            CHECK(rel_err(corners::eval_R2(spec, fam, z, ThetaBranch::general),
                          cplx{1.55, 0.0}) < 1e-12);
        }
    }
    const auto spec1 = single_level_spec(1.0, 6, q);
    for (cplx z : zs) {
        CHECK(rel_err(corners::eval_R1(spec1, fam, z, ThetaBranch::one), cplx{1.55, 0.0}) <
              1e-12);
        CHECK(rel_err(corners::eval_R2(spec1, fam, z, ThetaBranch::one), cplx{1.55, 0.0}) <
              1e-12);
    }
}

TEST_CASE("single-level assembly matches a direct sum with arbitrary phi data") {
    const double q = 0.55;
    const AnalyticFamily fam = arbitrary_family_1();
    const std::vector<cplx> zs = {cplx{2.3, 1.1}, cplx{-0.8, -1.6}, cplx{4.2, 0.5}};
    for (double theta : {0.7, 1.3}) {
        const auto spec = single_level_spec(theta, 6, q);
        const SingleLevelOracle oracle(theta, 6, q);
        for (cplx z : zs) {
            CHECK(rel_err(corners::eval_R1(spec, fam, z, ThetaBranch::general),
                          oracle.r1(fam, z)) < 1e-12);
            CHECK(rel_err(corners::eval_R2(spec, fam, z, ThetaBranch::general),
                          oracle.r2(fam, z)) < 1e-12);
        }
    }
    // At theta = 1 the two-term shape is unchanged, only the products collapse.
    const auto spec1 = single_level_spec(1.0, 6, q);
    const SingleLevelOracle oracle1(1.0, 6, q);
    for (cplx z : zs) {
        CHECK(rel_err(corners::eval_R1(spec1, fam, z, ThetaBranch::one), oracle1.r1(fam, z)) <
              1e-12);
        CHECK(rel_err(corners::eval_R2(spec1, fam, z, ThetaBranch::one), oracle1.r2(fam, z)) <
              1e-12);
    }
}

TEST_CASE("two-particle single level matches the Gamma-interaction oracle") {
    const double q = 0.8;
    const int M = 3;
    AnalyticFamily fam;
    fam.N = 2;
    fam.k = 2;
    fam.phi1 = {PhiFunction{cplx{0.9, 0.0}, cplx{0.0, 0.0}, {cplx{-0.3, 0.0}}},
                PhiFunction{cplx{1.4, 0.0}, cplx{0.1, 0.0}, {}}};
    fam.phi2 = {PhiFunction{cplx{-1.2, 0.0}, cplx{0.0, 0.0}, {cplx{1.7, 0.0}}},
                PhiFunction{cplx{0.6, 0.0}, cplx{-0.2, 0.0}, {}}};

    for (double theta : {0.7, 1.0}) {
        const auto spec =
            MeasureSpec::top_weight(theta, 2, 2, M, GeometricWeight{cplx{q, 0.0}});

        // Direct enumeration of the ten ordered pairs with the explicit
        // Gamma-ratio interaction, probabilities normalized by hand.
        std::vector<std::pair<int, int>> states;
        std::vector<double> P;
        double Z = 0.0;
        for (int l1 = 0; l1 <= M; ++l1)
            for (int l2 = 0; l2 <= l1; ++l2) {
                const double d = (l1 - theta) - (l2 - 2 * theta);
                const double w = std::tgamma(d + 1.0) / std::tgamma(d + 1.0 - theta) *
                                 std::tgamma(d + theta) / std::tgamma(d) *
                                 std::pow(q, l1 - theta) * std::pow(q, l2 - 2 * theta);
                states.push_back({l1, l2});
                P.push_back(w);
                Z += w;
            }
        for (auto& p : P) p /= Z;

        auto expect = [&](const std::function<cplx(double, double, int, int)>& f) {
            cplx acc{0.0, 0.0};
            for (size_t t = 0; t < states.size(); ++t)
                acc += P[t] * f(states[t].first - theta, states[t].second - 2 * theta,
                                states[t].first, states[t].second);
            return acc;
        };

        const double sM = M + 1 - theta;
        const cplx sMc{sM, 0.0}, low{-2 * theta, 0.0};
        const std::vector<cplx> zs = {cplx{1.9, 1.2}, cplx{-1.3, -0.9}};
        for (cplx z : zs) {
            const cplx e1 = expect([&](double a, double b, int, int) {
                return (z - a - theta) / (z - a) * (z - b - theta) / (z - b);
            });
            const cplx e2 = expect([&](double a, double b, int, int) {
                return (z - a + theta - 1.0) / (z - a - 1.0) * (z - b + theta - 1.0) /
                       (z - b - 1.0);
            });
            const cplx top1 = expect([&](double a, double, int, int l2) {
                return l2 == 0 ? cplx{(a + 3 * theta) / (a + 2 * theta), 0.0} : cplx{0.0, 0.0};
            });
            const cplx bot1 = expect([&](double, double b, int l1, int) {
                return l1 == M ? (sMc - b + theta - 1.0) / (sMc - b - 1.0) : cplx{0.0, 0.0};
            });
            const cplx res1 = -theta * fam.eval_phi1(3, low) / (z + 2 * theta) * top1 +
                              theta * fam.eval_phi1(2, sMc) / (z - sM) * bot1;
            const cplx want1 = fam.eval_phi1(3, z) * e1 + fam.eval_phi1(2, z) * e2 - res1;
            const cplx res2 = theta * fam.eval_phi2(3, sMc) / (z - sM) * bot1 -
                              theta * fam.eval_phi2(2, low) / (z + 2 * theta) * top1;
            const cplx want2 = fam.eval_phi2(3, z) * e2 + fam.eval_phi2(2, z) * e1 - res2;

            const auto branch = theta == 1.0 ? ThetaBranch::one : ThetaBranch::general;
            CHECK(rel_err(corners::eval_R1(spec, fam, z, branch), want1) < 1e-12);
            CHECK(rel_err(corners::eval_R2(spec, fam, z, branch), want2) < 1e-12);
        }
    }
}

TEST_CASE("Krawtchouk residual parts vanish identically") {
    for (double theta : {0.7, 1.3}) {
        const auto kr = corners::krawtchouk_setup(3, 1, 5, theta, 0.6);
        for (cplx z : {cplx{2.2, 0.9}, cplx{-1.4, 1.1}}) {
            const cplx r1 = corners::eval_Res1(kr.measure, kr.family, z, ThetaBranch::general);
            const cplx r2 = corners::eval_Res2(kr.measure, kr.family, z, ThetaBranch::general);
            CHECK(r1.real() == 0.0);
            CHECK(r1.imag() == 0.0);
            CHECK(r2.real() == 0.0);
            CHECK(r2.imag() == 0.0);
        }
    }
    const auto kr1 = corners::krawtchouk_setup(3, 1, 5, 1.0, 0.6);
    const cplx z{2.2, 0.9};
    CHECK(corners::eval_Res1(kr1.measure, kr1.family, z, ThetaBranch::one) == cplx{0.0, 0.0});
    CHECK(corners::eval_Res2(kr1.measure, kr1.family, z, ThetaBranch::one) == cplx{0.0, 0.0});
}

TEST_CASE("far field approaches the constant term sum") {
    const auto geo =
        corners::geometric_setup(0.7, 3, 1, 3, {cplx{0.8, 0.0}, cplx{1.2, 0.0}, cplx{0.65, 0.0}});
    const double th = 0.7;
    const cplx probe{100.0, 0.0};  // the phis are constants, any argument works
    auto limit = [&](const AnalyticFamily& fam, bool first_kind) {
        cplx lim = first_kind ? fam.eval_phi1(4, probe) + fam.eval_phi1(1, probe)
                              : fam.eval_phi2(4, probe) + fam.eval_phi2(1, probe);
        for (int j = 2; j <= 3; ++j)
            lim += th / (1.0 - th) *
                   (first_kind ? fam.eval_phi1(j, probe) : fam.eval_phi2(j, probe));
        return lim;
    };
    const cplx z6{1e6, 0.3}, z9{1e9, 0.3};

    // Compatible constant phis: both R's are entire with a constant far-field
    // limit, hence constant outright, so the deviation sits at roundoff.
    CHECK(std::abs(corners::eval_R1(geo.measure, geo.family, z6, ThetaBranch::general) -
                   limit(geo.family, true)) < 1e-10);
    CHECK(std::abs(corners::eval_R2(geo.measure, geo.family, z9, ThetaBranch::general) -
                   limit(geo.family, false)) < 1e-10);

    // Incompatible constant phis leave a genuine 1/z tail behind the same
    // limit, visible as a hundredfold drop between |z| = 1e6 and 1e9.
    AnalyticFamily off;
    off.N = 3;
    off.k = 1;
    for (double c : {1.1, 0.9, 1.3, 0.7}) off.phi1.push_back(PhiFunction{cplx{c, 0.0}});
    for (double c : {0.8, 1.2, 0.6, 1.4}) off.phi2.push_back(PhiFunction{cplx{c, 0.0}});
    const double d16 =
        std::abs(corners::eval_R1(geo.measure, off, z6, ThetaBranch::general) - limit(off, true));
    const double d19 =
        std::abs(corners::eval_R1(geo.measure, off, z9, ThetaBranch::general) - limit(off, true));
    const double d26 =
        std::abs(corners::eval_R2(geo.measure, off, z6, ThetaBranch::general) - limit(off, false));
    const double d29 =
        std::abs(corners::eval_R2(geo.measure, off, z9, ThetaBranch::general) - limit(off, false));
    CHECK(d16 > 1e-9);
    CHECK(d16 < 1e-3);
    CHECK(d19 < d16 / 100.0);
    CHECK(d26 > 1e-9);
    CHECK(d26 < 1e-3);
    CHECK(d29 < d26 / 100.0);
}

TEST_CASE("analyticity certification passes for the Krawtchouk family") {
    for (double theta : {0.7, 1.0}) {
        const auto kr = corners::krawtchouk_setup(3, 1, 5, theta, 0.6);
        for (WhichR which : {WhichR::R1, WhichR::R2}) {
            const auto rep = corners::certify_analyticity(kr.measure, kr.family, which);
            CAPTURE(theta);
            CAPTURE(rep.max_abs_residue);
            CAPTURE(rep.max_abs_moment);
            CHECK(rep.quadrature_ok);
            CHECK(rep.max_abs_residue < 1e-8);
            CHECK(rep.max_abs_moment < 1e-8);
            CHECK(rep.abs_residue_sum < 1e-8);
            CHECK(rep.pass);
            CHECK(rep.poles.size() == (theta == 1.0 ? 9u : 21u));
            const auto json = corners::to_json(rep);
            CHECK(json.find("\"pass\"") != std::string::npos);
        }
    }
}

TEST_CASE("corrupted family is flagged with a residue above 1e-4") {
    const auto kr = corners::krawtchouk_setup(3, 1, 5, 0.7, 0.6);
    auto bad = kr.family;
    bad.phi1[0].prefactor *= 1.01;
    const auto rep = corners::certify_analyticity(kr.measure, bad, WhichR::R1);
    CAPTURE(rep.max_abs_residue);
    CHECK_FALSE(rep.pass);
    CHECK(rep.max_abs_residue > 1e-4);
}

TEST_CASE("string shifts reproduce every expectation-term residue") {
    // The group terms attached to the pole sets must add up, level by level,
    // to the true contour residues of the individual expectation terms.  The
    // anchored phi values differ from the family's by one constant per
    // coordinate index, restored here before comparing.
    const double th = 0.7;
    const int N = 3, k = 1, M = 4;
    const std::vector<cplx> qs = {cplx{0.8, 0.0}, cplx{1.2, 0.0}, cplx{0.65, 0.0}};
    const auto setup = corners::geometric_setup(th, N, k, M, qs);
    const MeasureSpec& spec = setup.measure;
    MaterializedMeasure mm(spec);

    auto prod = [&](int idx, int j, cplx z, double cnum, double cden) {
        cplx acc{1.0, 0.0};
        for (double l : mm.ells(idx, j)) acc *= (z - l + cnum) / (z - l + cden);
        return acc;
    };
    // First-kind expectation terms, top / bottom / middle.
    auto e1_top = [&](cplx z) {
        return mm.expect([&](int idx) { return prod(idx, N, z, -th, 0.0); });
    };
    auto e1_bot = [&](cplx z) {
        return mm.expect([&](int idx) { return prod(idx, k, z, th - 1.0, -1.0); });
    };
    auto e1_mid = [&](int j, cplx z) {
        return th / (1.0 - th) * mm.expect([&](int idx) {
                   return prod(idx, j, z, -th, -1.0) * prod(idx, j - 1, z, th - 1.0, 0.0);
               });
    };
    // Second-kind terms, shifted by (N - j) * theta.
    auto e2_top = [&](cplx z) {
        return mm.expect([&](int idx) { return prod(idx, N, z, th - 1.0, -1.0); });
    };
    auto e2_bot = [&](cplx z) {
        return mm.expect(
            [&](int idx) { return prod(idx, k, z, (N - k - 1) * th, (N - k) * th); });
    };
    auto e2_mid = [&](int j, cplx z) {
        return th / (1.0 - th) * mm.expect([&](int idx) {
                   return prod(idx, j, z, (N - j + 1) * th - 1.0, (N - j) * th) *
                          prod(idx, j - 1, z, (N - j) * th, (N - j + 1) * th - 1.0);
               });
    };

    // Per-index anchor constants: the family's phi at level max(i, k).
    auto c1 = [&](int i) {
        cplx c{1.0, 0.0};
        for (int m = k; m <= std::max(i, k) - 1; ++m) c /= qs[m - k];
        return c;
    };
    const cplx c2 = qs[0] * qs[1] * qs[2];  // phi_2^{N+1} of the family

    int nonempty = 0;
    for (const auto& cand : corners::pole_candidates(spec)) {
        if ((cand.a == 0 && cand.b == N) || (cand.a == M + 1 && cand.b == 1)) continue;
        const double s = cand.s;

        for (BijectionVariant variant :
             {BijectionVariant::horizontal, BijectionVariant::diagonal}) {
            std::map<int, cplx> by_plus, by_minus;
            for (int i = 1; i <= N; ++i) {
                const auto rep = corners::check_bijection(spec, variant, cand, i);
                CAPTURE(cand.a);
                CAPTURE(cand.b);
                CAPTURE(i);
                REQUIRE(rep.pass);
                const cplx c = variant == BijectionVariant::horizontal ? c1(i) : c2;
                for (const auto& pr : rep.pairs) {
                    by_plus[pr.source_level] += c * th * pr.term_source;
                    by_minus[pr.image_level] += c * th * pr.term_image;
                    ++nonempty;
                }
            }
            auto close = [&](cplx got, cplx want) {
                return std::abs(got - want) < 1e-8 * std::max(1.0, std::abs(want));
            };
            if (variant == BijectionVariant::horizontal) {
                const cplx f1 = setup.family.eval_phi1(N + 1, cplx{s, 0.0});
                const cplx fk = setup.family.eval_phi1(k, cplx{s, 0.0});
                CHECK(close(by_plus[N], f1 * residue_at(e1_top, s, 0.1)));
                CHECK(close(by_minus[k], fk * residue_at(e1_bot, s, 0.1)));
                for (int j = k + 1; j <= N; ++j) {
                    const cplx fj = setup.family.eval_phi1(j, cplx{s, 0.0});
                    const cplx want =
                        fj * residue_at([&](cplx z) { return e1_mid(j, z); }, s, 0.1);
                    CHECK(close(by_minus[j] + by_plus[j - 1], want));
                }
            } else {
                const cplx f1 = setup.family.eval_phi2(N + 1, cplx{s, 0.0});
                const cplx fk = setup.family.eval_phi2(k, cplx{s, 0.0});
                CHECK(close(by_minus[N], f1 * residue_at(e2_top, s, 0.1)));
                CHECK(close(by_plus[k], fk * residue_at(e2_bot, s, 0.1)));
                for (int j = k + 1; j <= N; ++j) {
                    const cplx fj = setup.family.eval_phi2(j, cplx{s, 0.0});
                    const cplx want =
                        fj * residue_at([&](cplx z) { return e2_mid(j, z); }, s, 0.1);
                    CHECK(close(by_plus[j] + by_minus[j - 1], want));
                }
            }
        }
    }
    CHECK(nonempty > 0);
}

TEST_CASE("exhaustive bijection sweep passes termwise") {
    const auto setup = corners::geometric_setup(0.7, 3, 1, 4,
                                                {cplx{0.8, 0.0}, cplx{1.2, 0.0}, cplx{0.65, 0.0}});
    int with_pairs = 0;
    for (BijectionVariant variant : {BijectionVariant::horizontal, BijectionVariant::diagonal}) {
        const auto reports = corners::check_all_bijections(setup.measure, variant);
        CHECK(reports.size() == 16 * 3);
        for (const auto& rep : reports) {
            CAPTURE(rep.pole.a);
            CAPTURE(rep.pole.b);
            CAPTURE(rep.i);
            REQUIRE(rep.pass);
            CHECK(rep.n_plus == rep.n_minus);
            CHECK(rep.max_residual < 1e-10);
            CHECK(rep.residue_sum_abs < 1e-8);
            if (!rep.pairs.empty()) ++with_pairs;
        }
    }
    CHECK(with_pairs > 0);
}

TEST_CASE("bijection preconditions and vacuous sets") {
    const auto one = corners::geometric_setup(1.0, 2, 1, 3, {cplx{0.8, 0.0}, cplx{1.2, 0.0}});
    PoleCandidate pc{2, 1, 2.0 - 1.0};
    CHECK_THROWS_AS(corners::check_bijection(one.measure, BijectionVariant::horizontal, pc, 1),
                    std::invalid_argument);

    const auto geo = corners::geometric_setup(0.7, 3, 1, 4,
                                              {cplx{0.8, 0.0}, cplx{1.2, 0.0}, cplx{0.65, 0.0}});
    PoleCandidate low{0, 3, -2.1};
    CHECK_THROWS_AS(corners::check_bijection(geo.measure, BijectionVariant::horizontal, low, 1),
                    std::invalid_argument);
    PoleCandidate high{5, 1, 5.0 - 0.7};
    CHECK_THROWS_AS(corners::check_bijection(geo.measure, BijectionVariant::diagonal, high, 2),
                    std::invalid_argument);
    PoleCandidate ok{2, 1, 2.0 - 0.7};
    CHECK_THROWS_AS(corners::check_bijection(geo.measure, BijectionVariant::horizontal, ok, 0),
                    std::invalid_argument);
    CHECK_THROWS_AS(corners::check_bijection(geo.measure, BijectionVariant::horizontal, ok, 4),
                    std::invalid_argument);

    // i = 3 with b = 1 cannot solve a - b*theta = lambda - i*theta over the
    // integers, so both pole sets are empty and the check holds vacuously.
    const auto rep = corners::check_bijection(geo.measure, BijectionVariant::horizontal, ok, 3);
    CHECK(rep.pass);
    CHECK(rep.n_plus == 0);
    CHECK(rep.n_minus == 0);
    CHECK(rep.pairs.empty());
}

TEST_CASE("theta continuity across the branch point") {
    // Away from theta = 1 the middle sum carries the diverging constant
    // G^theta = theta/(1-theta) * sum of middle phis; subtracting it leaves a
    // function of theta with a removable singularity whose limit is the
    // theta = 1 branch.  Pair-averaging kills the odd term, one Richardson
    // step in delta^2 the even one.
    const int N = 3, k = 1, M = 3;
    const std::vector<cplx> qs = {cplx{0.8, 0.0}, cplx{1.25, 0.0}, cplx{0.6, 0.0}};
    const std::vector<cplx> zs = {cplx{2.4, 1.9}, cplx{-1.2, -1.6}};

    auto value = [&](double theta, cplx z, bool first_kind) {
        const auto st = corners::geometric_setup(theta, N, k, M, qs);
        cplx g{0.0, 0.0};
        for (int j = k + 1; j <= N; ++j)
            g += first_kind ? st.family.eval_phi1(j, z) : st.family.eval_phi2(j, z);
        g *= theta / (1.0 - theta);
        const cplx r = first_kind
                           ? corners::eval_R1(st.measure, st.family, z, ThetaBranch::general)
                           : corners::eval_R2(st.measure, st.family, z, ThetaBranch::general);
        return r - g;
    };

    const auto st1 = corners::geometric_setup(1.0, N, k, M, qs);
    for (bool first_kind : {true, false}) {
        for (cplx z : zs) {
            const double d1 = 1e-3, d2 = 1e-4;
            const cplx g1 = 0.5 * (value(1 + d1, z, first_kind) + value(1 - d1, z, first_kind));
            const cplx g2 = 0.5 * (value(1 + d2, z, first_kind) + value(1 - d2, z, first_kind));
            const cplx lim = (g2 * d1 * d1 - g1 * d2 * d2) / (d1 * d1 - d2 * d2);
            const cplx direct =
                first_kind ? corners::eval_R1(st1.measure, st1.family, z, ThetaBranch::one)
                           : corners::eval_R2(st1.measure, st1.family, z, ThetaBranch::one);
            CAPTURE(first_kind);
            CHECK(std::abs(lim - direct) < 1e-6);
        }
    }
}

TEST_CASE("evaluator matches the direct formulas") {
    const auto kr = corners::krawtchouk_setup(3, 1, 5, 0.7, 0.6);
    MaterializedMeasure mm(kr.measure);
    const NekrasovEvaluator ev1(mm, kr.family, WhichR::R1);
    const NekrasovEvaluator ev2(mm, kr.family, WhichR::R2);
    for (cplx z : {cplx{1.7, 0.9}, cplx{-2.3, 0.4}}) {
        CHECK(rel_err(ev1(z), corners::eval_R1(kr.measure, kr.family, z, ThetaBranch::general)) <
              1e-12);
        CHECK(rel_err(ev2(z), corners::eval_R2(kr.measure, kr.family, z, ThetaBranch::general)) <
              1e-12);
    }

    const auto kr1 = corners::krawtchouk_setup(3, 1, 5, 1.0, 0.6);
    MaterializedMeasure mm1(kr1.measure);
    const NekrasovEvaluator ev11(mm1, kr1.family, WhichR::R1);
    const cplx z{1.6, 1.1};
    CHECK(rel_err(ev11(z), corners::eval_R1(kr1.measure, kr1.family, z, ThetaBranch::one)) <
          1e-12);
}

TEST_CASE("evaluation guards") {
    const auto kr = corners::krawtchouk_setup(3, 1, 5, 0.7, 0.6);
    CHECK_THROWS_AS(
        corners::eval_R1(kr.measure, kr.family, cplx{2.0 - 0.7, 0.0}, ThetaBranch::general),
        std::domain_error);
    CHECK_THROWS_AS(
        corners::eval_R1(kr.measure, kr.family, cplx{1.9, 0.4}, ThetaBranch::one),
        std::invalid_argument);
    const auto kr1 = corners::krawtchouk_setup(3, 1, 5, 1.0, 0.6);
    CHECK_THROWS_AS(
        corners::eval_R2(kr1.measure, kr1.family, cplx{1.9, 0.4}, ThetaBranch::general),
        std::invalid_argument);
}

}  // TEST_SUITE
