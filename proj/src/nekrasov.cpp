#include "cornerslab/nekrasov.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>
#include <stdexcept>
#include <thread>
#include <utility>

#include "json.hpp"

namespace corners {

namespace {

constexpr double kLatticeGuard = 1e-12;
// Separates vanishing from nonvanishing among the linear factors u + v*theta
// that qualify a candidate pole.  The nonzero ones stay above 0.1 for every
// theta of interest, so the margin is wide.
constexpr double kFactorTol = 1e-9;
constexpr double kClusterTol = 1e-6;
constexpr double kTermTol = 1e-10;

double s_boundary(const MeasureSpec& spec) { return spec.M + 1.0 - spec.theta; }

// prod over p in [from, to], p != skip, of (z - l_p + cnum) / (z - l_p + cden)
cplx shift_product(const std::vector<double>& ells, int from, int to, cplx z, double cnum,
                   double cden, int skip = 0) {
    cplx acc{1.0, 0.0};
    for (int p = from; p <= to; ++p) {
        if (p == skip) continue;
        acc *= (z - ells[p - 1] + cnum) / (z - ells[p - 1] + cden);
    }
    return acc;
}

// prod over p in [from, to] of (l_p + cnum) / (l_p + cden)
double offset_product(const std::vector<double>& ells, int from, int to, double cnum,
                      double cden) {
    double acc = 1.0;
    for (int p = from; p <= to; ++p) acc *= (ells[p - 1] + cnum) / (ells[p - 1] + cden);
    return acc;
}

cplx resolvent_sum(const std::vector<double>& ells, cplx z, double c) {
    cplx acc{0.0, 0.0};
    for (double l : ells) acc += 1.0 / (z - l + c);
    return acc;
}

std::vector<double> level_ells(const CornersPattern& p, int j) {
    std::vector<double> out(static_cast<size_t>(j));
    for (int i = 1; i <= j; ++i) out[i - 1] = p.ell(j, i);
    return out;
}

bool theta_is_one(double theta) { return std::abs(theta - 1.0) < 1e-9; }

void require_branch(const MeasureSpec& spec, ThetaBranch branch) {
    if (branch == ThetaBranch::one && !theta_is_one(spec.theta))
        throw std::invalid_argument("theta branch 'one' requires theta = 1");
    if (branch == ThetaBranch::general && theta_is_one(spec.theta))
        throw std::invalid_argument("theta branch 'general' requires theta != 1");
}

void require_off_lattice(const MeasureSpec& spec, cplx z) {
    for (int a = 0; a <= spec.M + 1; ++a)
        for (int b = 1; b <= spec.N; ++b)
            if (std::abs(z - cplx(a - b * spec.theta, 0.0)) < kLatticeGuard)
                throw std::domain_error("z collides with a lattice point a - b*theta");
}

}  // namespace

cplx PhiFunction::operator()(cplx z) const {
    cplx acc = prefactor;
    if (exp_rate != cplx{0.0, 0.0}) acc *= std::exp(exp_rate * z);
    for (const cplx& r : roots) acc *= z - r;
    return acc;
}

cplx AnalyticFamily::eval_phi1(int j, cplx z) const {
    if (j < k || j > N + 1) throw std::out_of_range("phi_1 level outside [k, N+1]");
    return phi1[j - k](z);
}

cplx AnalyticFamily::eval_phi2(int j, cplx z) const {
    if (j < k || j > N + 1) throw std::out_of_range("phi_2 level outside [k, N+1]");
    return phi2[j - k](z);
}

AnalyticFamily AnalyticFamily::from_top_pair(int N, int k, PhiFunction plus, PhiFunction minus) {
    AnalyticFamily fam;
    fam.N = N;
    fam.k = k;
    for (int j = k; j <= N; ++j) {
        fam.phi1.push_back(plus);
        fam.phi2.push_back(minus);
    }
    fam.phi1.push_back(minus);
    fam.phi2.push_back(plus);
    return fam;
}

NekrasovSetup krawtchouk_setup(int N, int k, int M, double theta, double q) {
    NekrasovSetup setup;
    setup.measure = MeasureSpec::top_weight(
        theta, N, k, M, GammaRatioWeight{q, N * theta + 1.0, M + 1.0 - theta});
    PhiFunction plus;  // q * (M + 1 - theta - z)
    plus.prefactor = cplx{-q, 0.0};
    plus.roots = {cplx{M + 1.0 - theta, 0.0}};
    PhiFunction minus;  // z + N*theta
    minus.roots = {cplx{-N * theta, 0.0}};
    setup.family = AnalyticFamily::from_top_pair(N, k, plus, minus);
    return setup;
}

NekrasovSetup geometric_setup(double theta, int N, int k, int M, const std::vector<cplx>& qs) {
    if (static_cast<int>(qs.size()) != N - k + 1)
        throw std::invalid_argument("geometric_setup needs one ratio per level");
    NekrasovSetup setup;
    setup.measure.theta = theta;
    setup.measure.N = N;
    setup.measure.k = k;
    setup.measure.M = M;
    AnalyticFamily& fam = setup.family;
    fam.N = N;
    fam.k = k;
    cplx c1{1.0, 0.0}, c2{1.0, 0.0};
    for (int j = k; j <= N; ++j) {
        setup.measure.weights.push_back(GeometricWeight{qs[j - k]});
        fam.phi1.push_back(PhiFunction{c1, {0.0, 0.0}, {}});
        fam.phi2.push_back(PhiFunction{c2, {0.0, 0.0}, {}});
        c1 /= qs[j - k];
        c2 *= qs[j - k];
    }
    fam.phi1.push_back(PhiFunction{c1, {0.0, 0.0}, {}});
    fam.phi2.push_back(PhiFunction{c2, {0.0, 0.0}, {}});
    return setup;
}

std::vector<PoleCandidate> pole_candidates(const MeasureSpec& spec) {
    std::vector<PoleCandidate> out;
    out.reserve((spec.M + 2) * spec.N);
    for (int a = 0; a <= spec.M + 1; ++a)
        for (int b = 1; b <= spec.N; ++b)
            out.push_back(PoleCandidate{a, b, a - b * spec.theta});
    return out;
}

double validate_family(const MeasureSpec& spec, const AnalyticFamily& family) {
    const double th = spec.theta;
    const int N = spec.N, k = spec.k, M = spec.M;
    const double edge = 1e-9;
    double worst = 0.0;
    auto update = [&worst](cplx lhs, cplx rhs) {
        const double den = std::max(std::abs(lhs), std::abs(rhs));
        if (den > 1e-300) worst = std::max(worst, std::abs(lhs - rhs) / den);
    };
    for (int j = k; j <= N; ++j) {
        const Weight& w = spec.weight(j);
        const bool tabulated = std::holds_alternative<TabulatedWeight>(w);
        for (int b = 1; b <= N; ++b) {
            for (int a = 1; a <= M; ++a) {
                const double z = a - b * th;
                if (z >= 1.0 - j * th - edge && z <= M - th + edge && !(tabulated && b > j)) {
                    const cplx wr = weight_ratio(w, th, a - 1, b, a, b);
                    update(family.eval_phi1(j + 1, {z, 0.0}), family.eval_phi1(j, {z, 0.0}) * wr);
                }
                const int b2 = b - (N - j);
                if (z >= 1.0 - N * th - edge && z <= M - (N - j + 1) * th + edge &&
                    !(tabulated && (b2 < 1 || b2 > j))) {
                    const cplx wr = weight_ratio(w, th, a - 1, b2, a, b2);
                    update(family.eval_phi2(j, {z, 0.0}), family.eval_phi2(j + 1, {z, 0.0}) * wr);
                }
            }
        }
    }
    return worst;
}

MeasureSpec derive_weights(double theta, int N, int k, int M, const AnalyticFamily& family) {
    MeasureSpec spec;
    spec.theta = theta;
    spec.N = N;
    spec.k = k;
    spec.M = M;
    for (int j = k; j <= N; ++j) {
        TabulatedWeight tw;
        for (int b = 1; b <= j; ++b) {
            cplx val{1.0, 0.0};
            tw.values[{M, b}] = val;
            for (int a = M; a >= 1; --a) {
                const cplx z{a - b * theta, 0.0};
                const cplx den = family.eval_phi1(j, z);
                if (std::abs(den) < 1e-300)
                    throw std::domain_error("weight recursion hit a zero of phi_1");
                val *= family.eval_phi1(j + 1, z) / den;
                tw.values[{a - 1, b}] = val;
            }
        }
        spec.weights.push_back(tw);
    }
    return spec;
}

cplx eval_Res1(const MeasureSpec& spec, const AnalyticFamily& family, cplx z, ThetaBranch branch) {
    require_branch(spec, branch);
    const double th = spec.theta;
    const int N = spec.N, k = spec.k, M = spec.M;
    const cplx sM{s_boundary(spec), 0.0};
    const cplx e_top = expectation(spec, [&](const CornersPattern& p) -> cplx {
        if (p.level(N).parts[N - 1] != 0) return {0.0, 0.0};
        return {offset_product(level_ells(p, N), 1, N - 1, (N + 1) * th, N * th), 0.0};
    });
    cplx wall = family.eval_phi1(k, sM) * expectation(spec, [&](const CornersPattern& p) -> cplx {
                    if (p.level(k).parts[0] != M) return {0.0, 0.0};
                    return shift_product(level_ells(p, k), 2, k, sM, th - 1.0, -1.0);
                });
    for (int j = k + 1; j <= N; ++j) {
        wall += family.eval_phi1(j, sM) * expectation(spec, [&](const CornersPattern& p) -> cplx {
                    if (p.level(j).parts[0] != M) return {0.0, 0.0};
                    return shift_product(level_ells(p, j), 2, j, sM, -th, -1.0) *
                           shift_product(level_ells(p, j - 1), 1, j - 1, sM, th - 1.0, 0.0);
                });
    }
    return -th * family.eval_phi1(N + 1, {-N * th, 0.0}) * e_top / (z + N * th) +
           th * wall / (z - sM);
}

cplx eval_Res2(const MeasureSpec& spec, const AnalyticFamily& family, cplx z, ThetaBranch branch) {
    require_branch(spec, branch);
    const double th = spec.theta;
    const int N = spec.N, k = spec.k, M = spec.M;
    const cplx sM{s_boundary(spec), 0.0};
    const cplx low{-N * th, 0.0};
    const cplx e_top = expectation(spec, [&](const CornersPattern& p) -> cplx {
        if (p.level(N).parts[0] != M) return {0.0, 0.0};
        return shift_product(level_ells(p, N), 2, N, sM, th - 1.0, -1.0);
    });
    cplx wall = family.eval_phi2(k, low) * expectation(spec, [&](const CornersPattern& p) -> cplx {
                    if (p.level(k).parts[k - 1] != 0) return {0.0, 0.0};
                    return {offset_product(level_ells(p, k), 1, k - 1, (k + 1) * th, k * th), 0.0};
                });
    for (int j = k + 1; j <= N; ++j) {
        wall += family.eval_phi2(j, low) * expectation(spec, [&](const CornersPattern& p) -> cplx {
                    if (p.level(j).parts[j - 1] != 0) return {0.0, 0.0};
                    const auto lj = level_ells(p, j);
                    const auto lm = level_ells(p, j - 1);
                    return {offset_product(lj, 1, j - 1, (j - 1) * th + 1.0, j * th) *
                                offset_product(lm, 1, j - 1, j * th, (j - 1) * th + 1.0),
                            0.0};
                });
    }
    return th * family.eval_phi2(N + 1, sM) * e_top / (z - sM) - th * wall / (z + N * th);
}

cplx eval_R1(const MeasureSpec& spec, const AnalyticFamily& family, cplx z, ThetaBranch branch) {
    require_branch(spec, branch);
    require_off_lattice(spec, z);
    const double th = spec.theta;
    const int N = spec.N, k = spec.k;
    const cplx e_top = expectation(spec, [&](const CornersPattern& p) {
        return shift_product(level_ells(p, N), 1, N, z, -th, 0.0);
    });
    const cplx e_bot = expectation(spec, [&](const CornersPattern& p) {
        return shift_product(level_ells(p, k), 1, k, z, th - 1.0, -1.0);
    });
    cplx mid{0.0, 0.0};
    for (int j = k + 1; j <= N; ++j) {
        const cplx e_mid = expectation(spec, [&](const CornersPattern& p) -> cplx {
            if (branch == ThetaBranch::one)
                return resolvent_sum(level_ells(p, j), z, -1.0) -
                       resolvent_sum(level_ells(p, j - 1), z, 0.0);
            return shift_product(level_ells(p, j), 1, j, z, -th, -1.0) *
                   shift_product(level_ells(p, j - 1), 1, j - 1, z, th - 1.0, 0.0);
        });
        mid += family.eval_phi1(j, z) * e_mid;
    }
    const cplx coef = branch == ThetaBranch::one ? cplx{1.0, 0.0} : cplx{th / (1.0 - th), 0.0};
    return family.eval_phi1(N + 1, z) * e_top + family.eval_phi1(k, z) * e_bot + coef * mid -
           eval_Res1(spec, family, z, branch);
}

cplx eval_R2(const MeasureSpec& spec, const AnalyticFamily& family, cplx z, ThetaBranch branch) {
    require_branch(spec, branch);
    require_off_lattice(spec, z);
    const double th = spec.theta;
    const int N = spec.N, k = spec.k;
    const cplx e_top = expectation(spec, [&](const CornersPattern& p) {
        return shift_product(level_ells(p, N), 1, N, z, th - 1.0, -1.0);
    });
    const cplx e_bot = expectation(spec, [&](const CornersPattern& p) {
        return shift_product(level_ells(p, k), 1, k, z, (N - k - 1) * th, (N - k) * th);
    });
    cplx mid{0.0, 0.0};
    for (int j = k + 1; j <= N; ++j) {
        const cplx e_mid = expectation(spec, [&](const CornersPattern& p) -> cplx {
            if (branch == ThetaBranch::one)
                return resolvent_sum(level_ells(p, j - 1), z, static_cast<double>(N - j)) -
                       resolvent_sum(level_ells(p, j), z, static_cast<double>(N - j));
            return shift_product(level_ells(p, j), 1, j, z, (N - j + 1) * th - 1.0,
                                 (N - j) * th) *
                   shift_product(level_ells(p, j - 1), 1, j - 1, z, (N - j) * th,
                                 (N - j + 1) * th - 1.0);
        });
        mid += family.eval_phi2(j, z) * e_mid;
    }
    const cplx coef = branch == ThetaBranch::one ? cplx{1.0, 0.0} : cplx{th / (1.0 - th), 0.0};
    return family.eval_phi2(N + 1, z) * e_top + family.eval_phi2(k, z) * e_bot + coef * mid -
           eval_Res2(spec, family, z, branch);
}

NekrasovEvaluator::NekrasovEvaluator(const MaterializedMeasure& mm, const AnalyticFamily& family,
                                     WhichR which)
    : mm_(mm), family_(family), which_(which) {
    const MeasureSpec& spec = mm.spec();
    const double th = spec.theta;
    const int N = spec.N, k = spec.k, M = spec.M;
    theta_one_ = theta_is_one(th);
    pole_low_ = -N * th;
    pole_high_ = s_boundary(spec);
    const cplx sM{pole_high_, 0.0};
    const cplx low{pole_low_, 0.0};
    cplx e_top{0.0, 0.0}, e_bot{0.0, 0.0};
    std::vector<cplx> e_mid(static_cast<size_t>(N - k), cplx{0.0, 0.0});
    for (int idx = 0; idx < mm.size(); ++idx) {
        const cplx P = mm.prob(idx);
        const CornersPattern& p = mm.pattern(idx);
        if (which_ == WhichR::R1) {
            if (p.level(N).parts[N - 1] == 0)
                e_top += P * offset_product(mm.ells(idx, N), 1, N - 1, (N + 1) * th, N * th);
            if (p.level(k).parts[0] == M)
                e_bot += P * shift_product(mm.ells(idx, k), 2, k, sM, th - 1.0, -1.0);
            for (int j = k + 1; j <= N; ++j)
                if (p.level(j).parts[0] == M)
                    e_mid[j - k - 1] += P *
                                        shift_product(mm.ells(idx, j), 2, j, sM, -th, -1.0) *
                                        shift_product(mm.ells(idx, j - 1), 1, j - 1, sM,
                                                      th - 1.0, 0.0);
        } else {
            if (p.level(N).parts[0] == M)
                e_top += P * shift_product(mm.ells(idx, N), 2, N, sM, th - 1.0, -1.0);
            if (p.level(k).parts[k - 1] == 0)
                e_bot += P * offset_product(mm.ells(idx, k), 1, k - 1, (k + 1) * th, k * th);
            for (int j = k + 1; j <= N; ++j)
                if (p.level(j).parts[j - 1] == 0)
                    e_mid[j - k - 1] +=
                        P *
                        offset_product(mm.ells(idx, j), 1, j - 1, (j - 1) * th + 1.0, j * th) *
                        offset_product(mm.ells(idx, j - 1), 1, j - 1, j * th,
                                       (j - 1) * th + 1.0);
        }
    }
    if (which_ == WhichR::R1) {
        res_top_num_ = -th * family_.eval_phi1(N + 1, low) * e_top;
        res_bot_num_ = th * family_.eval_phi1(k, sM) * e_bot;
        res_mid_num_.resize(e_mid.size());
        for (int j = k + 1; j <= N; ++j)
            res_mid_num_[j - k - 1] = th * family_.eval_phi1(j, sM) * e_mid[j - k - 1];
    } else {
        res_top_num_ = th * family_.eval_phi2(N + 1, sM) * e_top;
        res_bot_num_ = -th * family_.eval_phi2(k, low) * e_bot;
        res_mid_num_.resize(e_mid.size());
        for (int j = k + 1; j <= N; ++j)
            res_mid_num_[j - k - 1] = -th * family_.eval_phi2(j, low) * e_mid[j - k - 1];
    }
}

cplx NekrasovEvaluator::operator()(cplx z) const {
    const MeasureSpec& spec = mm_.spec();
    const double th = spec.theta;
    const int N = spec.N, k = spec.k;
    cplx e_top{0.0, 0.0}, e_bot{0.0, 0.0};
    std::vector<cplx> e_mid(static_cast<size_t>(N - k), cplx{0.0, 0.0});
    for (int idx = 0; idx < mm_.size(); ++idx) {
        const cplx P = mm_.prob(idx);
        if (which_ == WhichR::R1) {
            e_top += P * shift_product(mm_.ells(idx, N), 1, N, z, -th, 0.0);
            e_bot += P * shift_product(mm_.ells(idx, k), 1, k, z, th - 1.0, -1.0);
            for (int j = k + 1; j <= N; ++j) {
                if (theta_one_)
                    e_mid[j - k - 1] += P * (resolvent_sum(mm_.ells(idx, j), z, -1.0) -
                                             resolvent_sum(mm_.ells(idx, j - 1), z, 0.0));
                else
                    e_mid[j - k - 1] += P *
                                        shift_product(mm_.ells(idx, j), 1, j, z, -th, -1.0) *
                                        shift_product(mm_.ells(idx, j - 1), 1, j - 1, z,
                                                      th - 1.0, 0.0);
            }
        } else {
            e_top += P * shift_product(mm_.ells(idx, N), 1, N, z, th - 1.0, -1.0);
            e_bot += P * shift_product(mm_.ells(idx, k), 1, k, z, (N - k - 1) * th, (N - k) * th);
            for (int j = k + 1; j <= N; ++j) {
                if (theta_one_)
                    e_mid[j - k - 1] +=
                        P * (resolvent_sum(mm_.ells(idx, j - 1), z, static_cast<double>(N - j)) -
                             resolvent_sum(mm_.ells(idx, j), z, static_cast<double>(N - j)));
                else
                    e_mid[j - k - 1] += P *
                                        shift_product(mm_.ells(idx, j), 1, j, z,
                                                      (N - j + 1) * th - 1.0, (N - j) * th) *
                                        shift_product(mm_.ells(idx, j - 1), 1, j - 1, z,
                                                      (N - j) * th, (N - j + 1) * th - 1.0);
            }
        }
    }
    const cplx coef = theta_one_ ? cplx{1.0, 0.0} : cplx{th / (1.0 - th), 0.0};
    cplx acc{0.0, 0.0};
    if (which_ == WhichR::R1) {
        acc = family_.eval_phi1(N + 1, z) * e_top + family_.eval_phi1(k, z) * e_bot;
        for (int j = k + 1; j <= N; ++j) acc += coef * family_.eval_phi1(j, z) * e_mid[j - k - 1];
    } else {
        acc = family_.eval_phi2(N + 1, z) * e_top + family_.eval_phi2(k, z) * e_bot;
        for (int j = k + 1; j <= N; ++j) acc += coef * family_.eval_phi2(j, z) * e_mid[j - k - 1];
    }
    cplx res = res_top_num_ / (z - pole_low_) + res_bot_num_ / (z - pole_high_);
    for (const cplx& num : res_mid_num_)
        res += num / (z - (which_ == WhichR::R1 ? pole_high_ : pole_low_));
    return acc - res;
}

namespace {

struct Cluster {
    std::vector<PoleCandidate> members;
    double s = 0.0;
    bool excluded = false;
};

std::vector<Cluster> cluster_candidates(const MeasureSpec& spec) {
    auto cands = pole_candidates(spec);
    std::sort(cands.begin(), cands.end(),
              [](const PoleCandidate& x, const PoleCandidate& y) { return x.s < y.s; });
    std::vector<Cluster> out;
    for (const auto& c : cands) {
        if (out.empty() || c.s - out.back().members.back().s > kClusterTol)
            out.push_back(Cluster{});
        out.back().members.push_back(c);
    }
    for (auto& cl : out) {
        double acc = 0.0;
        for (const auto& c : cl.members) {
            acc += c.s;
            if ((c.a == 0 && c.b == spec.N) || (c.a == spec.M + 1 && c.b == 1)) cl.excluded = true;
        }
        cl.s = acc / static_cast<double>(cl.members.size());
    }
    return out;
}

}  // namespace

CertificationReport certify_analyticity(const MeasureSpec& spec, const AnalyticFamily& family,
                                        WhichR which, double tol, int threads) {
    MaterializedMeasure mm(spec);
    NekrasovEvaluator R(mm, family, which);
    CertificationReport rep;
    rep.which = which;
    rep.theta = spec.theta;
    rep.N = spec.N;
    rep.k = spec.k;
    rep.M = spec.M;
    rep.tol = tol;

    const auto clusters = cluster_candidates(spec);
    double min_gap = 1e300;
    for (size_t i = 1; i < clusters.size(); ++i)
        min_gap = std::min(min_gap, clusters[i].s - clusters[i - 1].s);
    const double radius = std::min(0.1, 0.5 * min_gap);

    const double smin = clusters.front().s, smax = clusters.back().s;
    const double center = 0.5 * (smin + smax);
    const double rho = 0.5 * (smax - smin) + 0.75;
    ContourSpec big;
    big.center = cplx{center, 0.0};
    big.semi_axis_x = rho;
    big.semi_axis_y = 0.75;
    big.nodes = 64;

    std::map<std::pair<double, double>, cplx> cache;
    auto cached_R = [&](cplx z) {
        const auto key = std::make_pair(z.real(), z.imag());
        auto it = cache.find(key);
        if (it != cache.end()) return it->second;
        const cplx v = R(z);
        cache.emplace(key, v);
        return v;
    };
    double rough = 0.0;
    for (int t = 0; t < 16; ++t) {
        const double phi = 2.0 * M_PI * t / 16.0;
        rough = std::max(rough, std::abs(cached_R(
                                    big.center + cplx{rho * std::cos(phi),
                                                      big.semi_axis_y * std::sin(phi)})));
    }
    const double quad_tol = 1e-11 * std::max(1.0, rough);

    // One scaled moment per candidate plus the plain integral: together they
    // overdetermine the vector of residues inside the contour through a
    // Vandermonde system, so all of them small certifies all residues small.
    const int n_moments = static_cast<int>(pole_candidates(spec).size());
    rep.moments.reserve(n_moments + 1);
    for (int m = 0; m <= n_moments; ++m) {
        const auto q = contour_integral(
            [&](cplx z) { return cached_R(z) * std::pow((z - big.center) / rho, m); }, big,
            quad_tol);
        MomentCheck mc;
        mc.m = m;
        mc.abs_value = std::abs(q.value);
        mc.converged = q.converged;
        rep.moments.push_back(mc);
    }
    double scale = 0.0;
    for (const auto& kv : cache) scale = std::max(scale, std::abs(kv.second));
    if (scale < 1e-300) scale = 1.0;
    rep.scale = scale;
    for (auto& mc : rep.moments) {
        mc.abs_value /= scale;
        rep.max_abs_moment = std::max(rep.max_abs_moment, mc.abs_value);
        rep.quadrature_ok = rep.quadrature_ok && mc.converged;
    }

    rep.poles.resize(clusters.size());
    const int n_workers =
        std::max(1, std::min(threads, static_cast<int>(clusters.size())));
    auto work = [&](int w) {
        for (size_t c = w; c < clusters.size(); c += n_workers) {
            ContourSpec circle;
            circle.center = cplx{clusters[c].s, 0.0};
            circle.semi_axis_x = radius;
            circle.semi_axis_y = radius;
            circle.nodes = 32;
            const auto q = contour_integral([&R](cplx z) { return R(z); }, circle, quad_tol);
            PoleResidue pr;
            pr.members = clusters[c].members;
            pr.s = clusters[c].s;
            pr.excluded = clusters[c].excluded;
            pr.radius = radius;
            pr.residue = q.value;
            pr.abs_residue = std::abs(q.value) / scale;
            pr.nodes = q.node_count_used;
            pr.converged = q.converged;
            rep.poles[c] = pr;
        }
    };
    if (n_workers == 1) {
        work(0);
    } else {
        std::vector<std::thread> pool;
        for (int w = 0; w < n_workers; ++w) pool.emplace_back(work, w);
        for (auto& t : pool) t.join();
    }

    cplx residue_sum{0.0, 0.0};
    for (const auto& pr : rep.poles) {
        rep.max_abs_residue = std::max(rep.max_abs_residue, pr.abs_residue);
        rep.quadrature_ok = rep.quadrature_ok && pr.converged;
        residue_sum += pr.residue;
    }
    rep.abs_residue_sum = std::abs(residue_sum) / scale;
    rep.pass = rep.quadrature_ok && rep.max_abs_residue < tol && rep.max_abs_moment < tol;
    return rep;
}

std::string to_json(const CertificationReport& r) {
    nlohmann::json j;
    j["which"] = r.which == WhichR::R1 ? "R1" : "R2";
    j["theta"] = r.theta;
    j["N"] = r.N;
    j["k"] = r.k;
    j["M"] = r.M;
    j["tol"] = r.tol;
    j["scale"] = r.scale;
    j["pass"] = r.pass;
    j["quadrature_ok"] = r.quadrature_ok;
    j["max_abs_residue"] = r.max_abs_residue;
    j["max_abs_moment"] = r.max_abs_moment;
    j["abs_residue_sum"] = r.abs_residue_sum;
    j["poles"] = nlohmann::json::array();
    for (const auto& p : r.poles) {
        nlohmann::json jp;
        jp["s"] = p.s;
        jp["radius"] = p.radius;
        jp["excluded"] = p.excluded;
        jp["abs_residue"] = p.abs_residue;
        jp["residue_re"] = p.residue.real();
        jp["residue_im"] = p.residue.imag();
        jp["nodes"] = p.nodes;
        jp["converged"] = p.converged;
        jp["members"] = nlohmann::json::array();
        for (const auto& m : p.members) jp["members"].push_back({m.a, m.b});
        j["poles"].push_back(jp);
    }
    j["moments"] = nlohmann::json::array();
    for (const auto& m : r.moments)
        j["moments"].push_back({{"m", m.m}, {"abs_value", m.abs_value}, {"converged", m.converged}});
    return j.dump(2);
}

namespace {

// Pole-set membership, verbatim from the product shapes: the denominator
// factor indexed by the candidate must vanish at s while every numerator
// factor of the same product stays away from zero.
bool member_plus(const CornersPattern& p, int j, int i, double s, const MeasureSpec& spec,
                 BijectionVariant v) {
    const double th = spec.theta;
    const int N = spec.N, k = spec.k;
    if (v == BijectionVariant::horizontal) {
        if (i < 1 || i > j) return false;
        if (std::abs(s - p.ell(j, i)) >= kFactorTol) return false;
        if (j == N) {
            for (int q = 1; q <= N; ++q)
                if (std::abs(s - p.ell(N, q) - th) < kFactorTol) return false;
        } else {
            for (int q = 1; q <= j + 1; ++q)
                if (std::abs(s - p.ell(j + 1, q) - th) < kFactorTol) return false;
        }
        return true;
    }
    const int pos = j - i + 1;
    if (pos < 1 || pos > j) return false;
    if (std::abs(s - p.ell(j, pos) + (N - j) * th) >= kFactorTol) return false;
    if (j == k) {
        for (int q = 1; q <= k; ++q)
            if (std::abs(s - p.ell(k, q) + (N - k - 1) * th) < kFactorTol) return false;
    } else {
        for (int q = 1; q <= j - 1; ++q)
            if (std::abs(s - p.ell(j - 1, q) + (N - j) * th) < kFactorTol) return false;
    }
    return true;
}

bool member_minus(const CornersPattern& p, int j, int i, double s, const MeasureSpec& spec,
                  BijectionVariant v) {
    const double th = spec.theta;
    const int N = spec.N, k = spec.k;
    if (v == BijectionVariant::horizontal) {
        if (i < 1 || i > j) return false;
        if (std::abs(s - p.ell(j, i) - 1.0) >= kFactorTol) return false;
        if (j == k) {
            for (int q = 1; q <= k; ++q)
                if (std::abs(s - p.ell(k, q) + th - 1.0) < kFactorTol) return false;
        } else {
            for (int q = 1; q <= j - 1; ++q)
                if (std::abs(s - p.ell(j - 1, q) + th - 1.0) < kFactorTol) return false;
        }
        return true;
    }
    const int pos = j - i + 1;
    if (pos < 1 || pos > j) return false;
    if (std::abs(s - p.ell(j, pos) + (N - j) * th - 1.0) >= kFactorTol) return false;
    if (j == N) {
        for (int q = 1; q <= N; ++q)
            if (std::abs(s - p.ell(N, q) + th - 1.0) < kFactorTol) return false;
    } else {
        for (int q = 1; q <= j + 1; ++q)
            if (std::abs(s - p.ell(j + 1, q) + (N - j) * th - 1.0) < kFactorTol) return false;
    }
    return true;
}

// Equal-string walks in the integer coordinates.  The shifted string runs from
// the starting level to the last level carrying the same value, with the
// bottom fallback when it reaches level k.
int b1_string_bottom(const CornersPattern& p, int n, int i, int a, int k) {
    int m = n;
    while (m - 1 >= k && m - 1 >= i && p.level(m - 1).parts[i - 1] == a) --m;
    return m;
}

int b1_string_top(const CornersPattern& p, int n_tilde, int i, int a, int N) {
    int m = n_tilde;
    while (m + 1 <= N && p.level(m + 1).parts[i - 1] == a - 1) ++m;
    return m;
}

int b2_string_top(const CornersPattern& p, int n, int i, int a, int N) {
    int m = n;
    while (m + 1 <= N && p.level(m + 1).parts[m + 1 - i] == a) ++m;
    return m;
}

int b2_string_bottom(const CornersPattern& p, int n_tilde, int i, int a, int k) {
    int m = n_tilde;
    while (m - 1 >= k && m - 1 >= i && p.level(m - 1).parts[m - 1 - i] == a - 1) --m;
    return m;
}

// The cancellation identities involve the phi's only through their values at
// s, and those follow from the weights themselves: telescoping the ratio
// identities along the lattice coset of s determines every phi at s up to one
// overall constant per kind, which multiplies both members of a cancelling
// pair and therefore drops out.  Values are anchored to 1 at level max(i, k);
// entries below that level are never referenced.
struct PhiAtS {
    int k = 1;
    std::vector<cplx> phi1;  // phi1[j - k], j in [k, N+1]
    std::vector<cplx> phi2;

    cplx p1(int j) const { return phi1[j - k]; }
    cplx p2(int j) const { return phi2[j - k]; }
};

PhiAtS phi_at_s(const MeasureSpec& spec, const PoleCandidate& pole, int i) {
    const int N = spec.N, k = spec.k;
    const int j_min = std::max(i, k);
    PhiAtS out;
    out.k = k;
    out.phi1.assign(static_cast<size_t>(N + 2 - k), cplx{1.0, 0.0});
    out.phi2.assign(static_cast<size_t>(N + 2 - k), cplx{1.0, 0.0});
    for (int j = j_min; j <= N; ++j)
        out.phi1[j + 1 - k] = out.phi1[j - k] * weight_ratio(spec.weight(j), spec.theta,
                                                             pole.a - 1, pole.b, pole.a, pole.b);
    for (int j = N; j >= j_min; --j) {
        const int b2 = pole.b - (N - j);
        out.phi2[j - k] = out.phi2[j + 1 - k] *
                          weight_ratio(spec.weight(j), spec.theta, pole.a - 1, b2, pole.a, b2);
    }
    return out;
}

// Weighted residue contribution of one pole-set element, the expansion term
// whose pairwise cancellation proves analyticity at s.
cplx group_term(const MaterializedMeasure& mm, const PhiAtS& phi, BijectionVariant v, bool plus,
                int idx, int level, int i, double s_val) {
    const MeasureSpec& spec = mm.spec();
    const double th = spec.theta;
    const int N = spec.N, k = spec.k;
    const cplx P = mm.prob(idx);
    const cplx s{s_val, 0.0};
    if (v == BijectionVariant::horizontal) {
        if (plus) {
            if (level == N)
                return -th * phi.p1(N + 1) * P *
                       shift_product(mm.ells(idx, N), 1, N, s, -th, 0.0, i);
            return -th * phi.p1(level + 1) * P *
                   shift_product(mm.ells(idx, level + 1), 1, level + 1, s, -th, -1.0) *
                   shift_product(mm.ells(idx, level), 1, level, s, th - 1.0, 0.0, i);
        }
        if (level == k)
            return th * phi.p1(k) * P *
                   shift_product(mm.ells(idx, k), 1, k, s, th - 1.0, -1.0, i);
        return th * phi.p1(level) * P *
               shift_product(mm.ells(idx, level), 1, level, s, -th, -1.0, i) *
               shift_product(mm.ells(idx, level - 1), 1, level - 1, s, th - 1.0, 0.0);
    }
    const int pos = level - i + 1;
    if (plus) {
        if (level == k)
            return -th * phi.p2(k) * P *
                   shift_product(mm.ells(idx, k), 1, k, s, (N - k - 1) * th, (N - k) * th, pos);
        return -th * phi.p2(level) * P *
               shift_product(mm.ells(idx, level), 1, level, s, (N - level + 1) * th - 1.0,
                             (N - level) * th, pos) *
               shift_product(mm.ells(idx, level - 1), 1, level - 1, s, (N - level) * th,
                             (N - level + 1) * th - 1.0);
    }
    if (level == N)
        return th * phi.p2(N + 1) * P *
               shift_product(mm.ells(idx, N), 1, N, s, th - 1.0, -1.0, pos);
    return th * phi.p2(level + 1) * P *
           shift_product(mm.ells(idx, level + 1), 1, level + 1, s, (N - level) * th - 1.0,
                         (N - level - 1) * th) *
           shift_product(mm.ells(idx, level), 1, level, s, (N - level - 1) * th,
                         (N - level) * th - 1.0, pos);
}

std::vector<int> flatten(const CornersPattern& p) {
    std::vector<int> out;
    for (const auto& lv : p.levels) out.insert(out.end(), lv.parts.begin(), lv.parts.end());
    return out;
}

std::string pattern_str(const CornersPattern& p) {
    std::ostringstream os;
    for (int j = p.N; j >= p.k; --j) {
        os << '(';
        for (int q = 1; q <= j; ++q) {
            if (q > 1) os << ',';
            os << p.level(j).parts[q - 1];
        }
        os << ')';
    }
    return os.str();
}

BijectionReport check_bijection_impl(const MaterializedMeasure& mm,
                                     const std::map<std::vector<int>, int>& index,
                                     BijectionVariant variant, const PoleCandidate& pole, int i) {
    const MeasureSpec& spec = mm.spec();
    const double th = spec.theta;
    const int N = spec.N, k = spec.k;
    const double s = pole.a - pole.b * th;

    BijectionReport rep;
    rep.variant = variant;
    rep.pole = pole;
    rep.pole.s = s;
    rep.i = i;

    std::vector<std::pair<int, int>> plus, minus;  // (pattern index, level)
    for (int idx = 0; idx < mm.size(); ++idx) {
        const CornersPattern& p = mm.pattern(idx);
        for (int j = k; j <= N; ++j) {
            if (member_plus(p, j, i, s, spec, variant)) plus.emplace_back(idx, j);
            if (member_minus(p, j, i, s, spec, variant)) minus.emplace_back(idx, j);
        }
    }
    rep.n_plus = static_cast<int>(plus.size());
    rep.n_minus = static_cast<int>(minus.size());
    if (plus.empty() && minus.empty()) {
        rep.pass = true;
        return rep;
    }
    const PhiAtS phi = phi_at_s(spec, pole, i);

    std::vector<std::pair<int, int>> images;
    double max_term = 0.0;
    for (const auto& [idx, n] : plus) {
        const CornersPattern& p = mm.pattern(idx);
        CornersPattern img = p;
        int n_tilde;
        if (variant == BijectionVariant::horizontal) {
            n_tilde = b1_string_bottom(p, n, i, pole.a, k);
            for (int m = n_tilde; m <= n; ++m) img.level(m).parts[i - 1] -= 1;
        } else {
            n_tilde = b2_string_top(p, n, i, pole.a, N);
            for (int m = n; m <= n_tilde; ++m) img.level(m).parts[m - i] -= 1;
        }
        const bool contained = variant == BijectionVariant::horizontal
                                   ? (n_tilde >= k && n_tilde <= n)
                                   : (n_tilde >= n && n_tilde <= N);
        if (!contained) {
            rep.containment_ok = false;
            rep.failures.push_back("string end outside the level ordering at " + pattern_str(p));
        }
        const auto it = img.valid() ? index.find(flatten(img)) : index.end();
        if (it == index.end()) {
            rep.bijective = false;
            rep.failures.push_back("image of " + pattern_str(p) + " leaves the state space");
            continue;
        }
        const int img_idx = it->second;
        if (!member_minus(img, n_tilde, i, s, spec, variant)) {
            rep.bijective = false;
            rep.failures.push_back("image " + pattern_str(img) + " at level " +
                                   std::to_string(n_tilde) + " misses the minus set");
            continue;
        }
        const int n_back = variant == BijectionVariant::horizontal
                               ? b1_string_top(img, n_tilde, i, pole.a, N)
                               : b2_string_bottom(img, n_tilde, i, pole.a, k);
        if (n_back != n) {
            rep.inverse_ok = false;
            rep.failures.push_back("inverse walk from " + pattern_str(img) + " returns level " +
                                   std::to_string(n_back) + ", expected " + std::to_string(n));
        }
        images.emplace_back(img_idx, n_tilde);

        const cplx t_src = group_term(mm, phi, variant, true, idx, n, i, s);
        const cplx t_img = group_term(mm, phi, variant, false, img_idx, n_tilde, i, s);
        TermCancellation tc;
        tc.source_index = idx;
        tc.source_level = n;
        tc.image_index = img_idx;
        tc.image_level = n_tilde;
        tc.term_source = t_src / th;
        tc.term_image = t_img / th;
        const double big = std::max(std::abs(tc.term_source), std::abs(tc.term_image));
        tc.residual = big > 1e-300 ? std::abs(tc.term_source + tc.term_image) / big : 0.0;
        rep.max_residual = std::max(rep.max_residual, tc.residual);
        if (tc.residual >= kTermTol)
            rep.failures.push_back("cancellation residual " + std::to_string(tc.residual) +
                                   " for the pair " + pattern_str(p) + " -> " + pattern_str(img));
        rep.pairs.push_back(tc);
        max_term = std::max({max_term, std::abs(t_src), std::abs(t_img)});
    }

    auto sorted_images = images;
    auto sorted_minus = minus;
    std::sort(sorted_images.begin(), sorted_images.end());
    std::sort(sorted_minus.begin(), sorted_minus.end());
    if (sorted_images != sorted_minus) {
        rep.bijective = false;
        rep.failures.push_back("images do not exhaust the minus set");
    }

    cplx total{0.0, 0.0};
    for (const auto& [idx, j] : plus) total += group_term(mm, phi, variant, true, idx, j, i, s);
    for (const auto& [idx, j] : minus)
        total += group_term(mm, phi, variant, false, idx, j, i, s);
    rep.signed_term_sum = total;
    rep.residue_sum_abs = max_term > 1e-300 ? std::abs(total) / max_term : std::abs(total);

    rep.pass = rep.containment_ok && rep.bijective && rep.inverse_ok &&
               rep.max_residual < kTermTol && rep.failures.empty();
    return rep;
}

void require_bijection_pre(const MeasureSpec& spec, const PoleCandidate& pole) {
    if (theta_is_one(spec.theta))
        throw std::invalid_argument("string-shift bijections require theta != 1");
    const double s = pole.a - pole.b * spec.theta;
    if (std::abs(s + spec.N * spec.theta) < kFactorTol ||
        std::abs(s - s_boundary(spec)) < kFactorTol)
        throw std::invalid_argument(
            "the two boundary locations belong to the residual part, not the bijections");
}

std::map<std::vector<int>, int> pattern_index(const MaterializedMeasure& mm) {
    std::map<std::vector<int>, int> index;
    for (int idx = 0; idx < mm.size(); ++idx) index.emplace(flatten(mm.pattern(idx)), idx);
    return index;
}

}  // namespace

BijectionReport check_bijection(const MeasureSpec& spec, BijectionVariant variant,
                                const PoleCandidate& pole, int i) {
    require_bijection_pre(spec, pole);
    if (i < 1 || i > spec.N) throw std::invalid_argument("coordinate index outside [1, N]");
    MaterializedMeasure mm(spec);
    return check_bijection_impl(mm, pattern_index(mm), variant, pole, i);
}

std::vector<BijectionReport> check_all_bijections(const MeasureSpec& spec,
                                                  BijectionVariant variant) {
    MaterializedMeasure mm(spec);
    const auto index = pattern_index(mm);
    std::vector<BijectionReport> out;
    for (const auto& c : pole_candidates(spec)) {
        if ((c.a == 0 && c.b == spec.N) || (c.a == spec.M + 1 && c.b == 1)) continue;
        for (int i = 1; i <= spec.N; ++i)
            out.push_back(check_bijection_impl(mm, index, variant, c, i));
    }
    return out;
}

std::string to_json(const BijectionReport& r) {
    nlohmann::json j;
    j["variant"] = r.variant == BijectionVariant::horizontal ? "horizontal" : "diagonal";
    j["a"] = r.pole.a;
    j["b"] = r.pole.b;
    j["s"] = r.pole.s;
    j["i"] = r.i;
    j["n_plus"] = r.n_plus;
    j["n_minus"] = r.n_minus;
    j["containment_ok"] = r.containment_ok;
    j["bijective"] = r.bijective;
    j["inverse_ok"] = r.inverse_ok;
    j["max_residual"] = r.max_residual;
    j["residue_sum_abs"] = r.residue_sum_abs;
    j["pass"] = r.pass;
    j["pairs"] = nlohmann::json::array();
    for (const auto& p : r.pairs)
        j["pairs"].push_back({{"source_index", p.source_index},
                              {"source_level", p.source_level},
                              {"image_index", p.image_index},
                              {"image_level", p.image_level},
                              {"residual", p.residual}});
    j["failures"] = r.failures;
    return j.dump(2);
}

}  // namespace corners
