#include "cornerslab/cumulants.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <stdexcept>
#include <utility>

#include "json.hpp"

namespace corners {

namespace {

constexpr double kZFloor = 1e-8;
constexpr double kFactorFloor = 1e-12;

// (-1)^{r-1} (r-1)! for r = 0..6; index 0 unused
constexpr double kPartitionWeight[7] = {0.0, 1.0, -1.0, 2.0, -6.0, 24.0, -120.0};

double ellipse_coordinate(const ContourSpec& c, cplx p) {
    const double dx = (p.real() - c.center.real()) / c.semi_axis_x;
    const double dy = (p.imag() - c.center.imag()) / c.semi_axis_y;
    return dx * dx + dy * dy;
}

}  // namespace

int ObservableSet::m(int r) const {
    const int off = r - k;
    if (off < 0 || off >= static_cast<int>(points.size())) return 0;
    return static_cast<int>(points[off].size());
}

int ObservableSet::total() const {
    int n = 0;
    for (const auto& lvl : points) n += static_cast<int>(lvl.size());
    return n;
}

cplx stieltjes(const CornersPattern& p, int level, double L, cplx z) {
    cplx acc{0.0, 0.0};
    for (int i = 1; i <= level; ++i) acc += 1.0 / (z - p.ell(level, i) / L);
    return acc;
}

RandomVariable stieltjes_variable(const MaterializedMeasure& mm, int level, double L, cplx z) {
    RandomVariable var(mm.size());
    for (int idx = 0; idx < mm.size(); ++idx) {
        const std::vector<double>& ells = mm.ells(idx, level);
        cplx acc{0.0, 0.0};
        for (double l : ells) acc += 1.0 / (z - l / L);
        var[idx] = acc;
    }
    return var;
}

const std::vector<std::vector<unsigned>>& set_partitions(int n) {
    if (n < 0 || n > 6)
        throw std::invalid_argument("set_partitions: supported range is 0 <= n <= 6");
    static const std::vector<std::vector<std::vector<unsigned>>> cache = [] {
        std::vector<std::vector<std::vector<unsigned>>> all(7);
        all[0].push_back({});
        for (int n = 1; n <= 6; ++n) {
            std::vector<int> rgs(n, 0);
            std::function<void(int, int)> extend = [&](int i, int mx) {
                if (i == n) {
                    std::vector<unsigned> blocks(mx + 1, 0u);
                    for (int j = 0; j < n; ++j) blocks[rgs[j]] |= 1u << j;
                    all[n].push_back(std::move(blocks));
                    return;
                }
                for (int v = 0; v <= mx + 1; ++v) {
                    rgs[i] = v;
                    extend(i + 1, std::max(mx, v));
                }
            };
            extend(1, 0);
        }
        return all;
    }();
    return cache[n];
}

cplx expect_product(const MaterializedMeasure& mm, const std::vector<const RandomVariable*>& vars) {
    for (const RandomVariable* v : vars)
        if (static_cast<int>(v->size()) != mm.size())
            throw std::invalid_argument("expect_product: variable not aligned with the support");
    return mm.expect([&](int idx) {
        cplx prod{1.0, 0.0};
        for (const RandomVariable* v : vars) prod *= (*v)[idx];
        return prod;
    });
}

cplx cumulant_from_moment_table(int n, const std::function<cplx(unsigned)>& moment_of) {
    if (n < 1 || n > 6)
        throw std::invalid_argument("cumulant_from_moment_table: 1 to 6 variables");
    cplx acc{0.0, 0.0};
    for (const auto& partition : set_partitions(n)) {
        cplx term{kPartitionWeight[partition.size()], 0.0};
        for (unsigned block : partition) term *= moment_of(block);
        acc += term;
    }
    return acc;
}

namespace {

// moment callback over subsets of vars, memoized across the partition sum
std::function<cplx(unsigned)> memoized_moments(const MaterializedMeasure& mm,
                                               const std::vector<const RandomVariable*>& vars,
                                               std::vector<cplx>& memo, std::vector<char>& have) {
    memo.assign(1u << vars.size(), cplx{0.0, 0.0});
    have.assign(1u << vars.size(), 0);
    return [&mm, &vars, &memo, &have](unsigned mask) {
        if (!have[mask]) {
            std::vector<const RandomVariable*> sub;
            for (unsigned t = 0; t < vars.size(); ++t)
                if (mask & (1u << t)) sub.push_back(vars[t]);
            memo[mask] = expect_product(mm, sub);
            have[mask] = 1;
        }
        return memo[mask];
    };
}

}  // namespace

cplx cumulant_from_moments(const MaterializedMeasure& mm,
                           const std::vector<const RandomVariable*>& vars) {
    const int n = static_cast<int>(vars.size());
    if (n < 1 || n > 6)
        throw std::invalid_argument("cumulant_from_moments: 1 to 6 variables");
    std::vector<cplx> memo;
    std::vector<char> have;
    return cumulant_from_moment_table(n, memoized_moments(mm, vars, memo, have));
}

cplx moment_from_cumulants(const MaterializedMeasure& mm,
                           const std::vector<const RandomVariable*>& vars) {
    const int n = static_cast<int>(vars.size());
    if (n > 6) throw std::invalid_argument("moment_from_cumulants: at most 6 variables");
    if (n == 0) return cplx{1.0, 0.0};
    std::vector<cplx> cum_memo(1u << n);
    std::vector<char> cum_have(1u << n, 0);
    auto block_cumulant = [&](unsigned mask) {
        if (!cum_have[mask]) {
            std::vector<const RandomVariable*> sub;
            for (int t = 0; t < n; ++t)
                if (mask & (1u << t)) sub.push_back(vars[t]);
            cum_memo[mask] = cumulant_from_moments(mm, sub);
            cum_have[mask] = 1;
        }
        return cum_memo[mask];
    };
    cplx acc{0.0, 0.0};
    for (const auto& partition : set_partitions(n)) {
        cplx term{1.0, 0.0};
        for (unsigned block : partition) term *= block_cumulant(block);
        acc += term;
    }
    return acc;
}

double verify_product_formula(const MaterializedMeasure& mm, const RandomVariable& X,
                              const RandomVariable& Y,
                              const std::vector<const RandomVariable*>& others) {
    const int n = static_cast<int>(others.size());
    if (n > 4) throw std::invalid_argument("verify_product_formula: at most 4 extra variables");
    if (static_cast<int>(X.size()) != mm.size() || static_cast<int>(Y.size()) != mm.size())
        throw std::invalid_argument("verify_product_formula: variable not aligned with the support");

    RandomVariable XY(mm.size());
    for (int idx = 0; idx < mm.size(); ++idx) XY[idx] = X[idx] * Y[idx];

    std::vector<const RandomVariable*> lhs_vars{&XY};
    lhs_vars.insert(lhs_vars.end(), others.begin(), others.end());
    const cplx lhs = cumulant_from_moments(mm, lhs_vars);

    std::vector<const RandomVariable*> split_vars{&X, &Y};
    split_vars.insert(split_vars.end(), others.begin(), others.end());
    cplx rhs = cumulant_from_moments(mm, split_vars);

    for (unsigned mask = 0; mask < (1u << n); ++mask) {
        std::vector<const RandomVariable*> with_x{&X}, with_y{&Y};
        for (int t = 0; t < n; ++t)
            ((mask & (1u << t)) ? with_x : with_y).push_back(others[t]);
        rhs += cumulant_from_moments(mm, with_x) * cumulant_from_moments(mm, with_y);
    }
    return std::abs(lhs - rhs);
}

DeformationParams DeformationParams::zeros_like(const ObservableSet& obs) {
    DeformationParams out;
    out.t.resize(obs.points.size());
    for (std::size_t r = 0; r < obs.points.size(); ++r)
        out.t[r].assign(obs.points[r].size(), cplx{0.0, 0.0});
    return out;
}

cplx deformed_expectation(const MaterializedMeasure& mm, const ObservableSet& obs,
                          const DeformationParams& t, const RandomVariable& observable) {
    const MeasureSpec& spec = mm.spec();
    if (obs.k != spec.k || static_cast<int>(obs.points.size()) != spec.N - spec.k + 1)
        throw std::invalid_argument("deformed_expectation: observables not shaped like the levels");
    if (!(obs.L > 0.0)) throw std::invalid_argument("deformed_expectation: L must be positive");
    if (t.t.size() != obs.points.size())
        throw std::invalid_argument("deformed_expectation: deformation shape mismatch");
    for (std::size_t r = 0; r < t.t.size(); ++r)
        if (t.t[r].size() != obs.points[r].size())
            throw std::invalid_argument("deformed_expectation: deformation shape mismatch");
    if (static_cast<int>(observable.size()) != mm.size())
        throw std::invalid_argument("deformed_expectation: observable not aligned with the support");

    cplx num{0.0, 0.0}, den{0.0, 0.0};
    for (int idx = 0; idx < mm.size(); ++idx) {
        cplx defo{1.0, 0.0};
        for (int r = spec.k; r <= spec.N; ++r) {
            const auto& vr = obs.points[r - spec.k];
            if (vr.empty()) continue;
            const std::vector<double>& ells = mm.ells(idx, r);
            for (std::size_t f = 0; f < vr.size(); ++f) {
                const cplx tf = t.t[r - spec.k][f];
                for (double l : ells) {
                    const cplx denom = vr[f] - l / obs.L;
                    if (std::abs(denom) < kFactorFloor)
                        throw std::domain_error(
                            "deformed_expectation: observation point touches the support");
                    const cplx factor = 1.0 + tf / denom;
                    if (std::abs(factor) < kFactorFloor)
                        throw std::domain_error(
                            "deformed_expectation: deformation factor vanishes on the support");
                    defo *= factor;
                }
            }
        }
        const cplx w = mm.prob(idx) * defo;
        num += w * observable[idx];
        den += w;
    }
    if (std::abs(den) < kZFloor)
        throw std::domain_error("deformed_expectation: deformed partition sum below threshold");
    return num / den;
}

ShiftFactorization top_shift_factors(const AnalyticFamily& family) {
    if (family.phi1.size() < 2)
        throw std::invalid_argument("top_shift_factors: family has no levels");
    return {family.phi1.front(), family.phi1.back()};
}

double validate_shift_factorization(const MeasureSpec& spec, const ShiftFactorization& fac) {
    double worst = 0.0;
    for (int b = 1; b <= spec.N; ++b) {
        for (int a = 1; a <= spec.M; ++a) {
            const cplx want = weight_ratio(spec.weight(spec.N), spec.theta, a, b, a - 1, b);
            const cplx x{a - b * spec.theta, 0.0};
            const cplx md = fac.minus(x);
            if (std::abs(md) < 1e-300) return std::numeric_limits<double>::infinity();
            const cplx got = fac.plus(x) / md;
            worst = std::max(worst,
                             std::abs(got - want) / std::max(1.0, std::abs(want)));
        }
    }
    return worst;
}

ContourSpec default_loop_contour(const MeasureSpec& spec, double L) {
    const double lo = -spec.theta * spec.N / L;
    const double hi = (spec.M - spec.theta) / L;
    ContourSpec c;
    c.center = cplx{(lo + hi) / 2.0, 0.0};
    c.semi_axis_x = (hi - lo) / 2.0 + 0.25;
    c.semi_axis_y = 0.5;
    c.nodes = 16;
    return c;
}

namespace {

// One line-group of the loop equation: which entire factor multiplies it,
// which levels are forced to contribute their full point sets, and which
// particle-ratio product sits inside the cumulant.
struct LineGroup {
    std::string tag;
    bool top = false;       // uses the minus factor and the level-N ratio product
    int mid_level = 0;      // 0 for top/bottom, j for the middle term at level j
};

}  // namespace

LoopEquationReport verify_discrete_loop_equation(const MaterializedMeasure& mm,
                                                 const ShiftFactorization& fac,
                                                 const ObservableSet& obs, cplx v,
                                                 const ContourSpec& contour, ThetaBranch branch,
                                                 double tol, double adaptive_tol) {
    const MeasureSpec& spec = mm.spec();
    const double theta = spec.theta;
    const int N = spec.N, k = spec.k, M = spec.M;
    const double L = obs.L;

    if ((branch == ThetaBranch::one) != (theta == 1.0))
        throw std::invalid_argument("verify_discrete_loop_equation: branch must match theta");
    if (obs.k != k || static_cast<int>(obs.points.size()) != N - k + 1)
        throw std::invalid_argument(
            "verify_discrete_loop_equation: observables not shaped like the levels");
    if (!(L > 0.0)) throw std::invalid_argument("verify_discrete_loop_equation: L must be positive");
    if (obs.total() > 3)
        throw std::invalid_argument(
            "verify_discrete_loop_equation: at most three observation points");

    for (int j = k; j < N; ++j) {
        const cplx ref = log_eval(spec.weight(j), theta, 0, 1).value();
        for (int b = 1; b <= j; ++b)
            for (int a = 0; a <= M; ++a) {
                const cplx w = log_eval(spec.weight(j), theta, a, b).value();
                if (std::abs(w - ref) > 1e-12 * std::max(1.0, std::abs(ref)))
                    throw std::invalid_argument(
                        "verify_discrete_loop_equation: weights below the top level must be "
                        "constant");
            }
    }
    if (validate_shift_factorization(spec, fac) > 1e-8)
        throw std::invalid_argument(
            "verify_discrete_loop_equation: shift factorization does not match the top weight");

    const double lo = -theta * N / L;
    const double hi = (M - theta) / L;
    if (ellipse_coordinate(contour, cplx{lo, 0.0}) >= 1.0 ||
        ellipse_coordinate(contour, cplx{hi, 0.0}) >= 1.0)
        throw std::invalid_argument(
            "verify_discrete_loop_equation: contour must enclose the particle interval");
    if (ellipse_coordinate(contour, v) <= 1.0)
        throw std::invalid_argument("verify_discrete_loop_equation: v must lie outside the contour");

    // flattened observation points
    std::vector<cplx> vpt;
    std::vector<int> lvl, fidx;
    for (int r = k; r <= N; ++r) {
        const auto& vr = obs.points[r - k];
        for (std::size_t f = 0; f < vr.size(); ++f) {
            if (ellipse_coordinate(contour, vr[f]) <= 1.0 ||
                ellipse_coordinate(contour, vr[f] + 1.0 / L) <= 1.0)
                throw std::invalid_argument(
                    "verify_discrete_loop_equation: observation points must lie outside the "
                    "contour");
            vpt.push_back(vr[f]);
            lvl.push_back(r);
            fidx.push_back(static_cast<int>(f) + 1);
        }
    }
    const int T = static_cast<int>(vpt.size());
    const unsigned full_mask = (T == 0) ? 0u : ((1u << T) - 1u);

    std::vector<RandomVariable> gvar(T);
    for (int t = 0; t < T; ++t) gvar[t] = stieltjes_variable(mm, lvl[t], L, vpt[t]);

    std::vector<LineGroup> groups;
    groups.push_back({"top", true, 0});
    groups.push_back({"bottom", false, 0});
    for (int j = k + 1; j <= N; ++j)
        groups.push_back({"mid " + std::to_string(j), false, j});

    const cplx mid_coeff =
        (branch == ThetaBranch::one) ? cplx{1.0, 0.0} : cplx{theta / (1.0 - theta), 0.0};

    LoopEquationReport rep;
    rep.theta = theta;
    rep.L = L;
    rep.v = v;
    rep.tol = tol;
    rep.quadrature_ok = true;

    RandomVariable xi(mm.size());
    const int size = mm.size();

    for (const LineGroup& group : groups) {
        // levels whose point sets are forced to enter the cumulant in full
        unsigned forced = 0u;
        for (int t = 0; t < T; ++t) {
            const bool must = group.top || (group.mid_level > 0 && lvl[t] < group.mid_level);
            if (must) forced |= 1u << t;
        }
        unsigned loose = full_mask & ~forced;
        if (group.top) loose = 0u;  // every point forced

        // iterate subsets of the unforced points
        unsigned sub = 0u;
        while (true) {
            const unsigned fmask = forced | sub;
            std::vector<int> chosen;  // flattened indices in the cumulant, ascending
            for (int t = 0; t < T; ++t)
                if (fmask & (1u << t)) chosen.push_back(t);
            const int nf = static_cast<int>(chosen.size());

            // per-support products of the chosen Stieltjes variables, one per subset
            std::vector<RandomVariable> gprod(1u << nf, RandomVariable(size, cplx{1.0, 0.0}));
            for (unsigned s = 1; s < (1u << nf); ++s) {
                const int low = __builtin_ctz(s);
                const RandomVariable& rest = gprod[s & (s - 1)];
                const RandomVariable& g = gvar[chosen[low]];
                for (int idx = 0; idx < size; ++idx) gprod[s][idx] = rest[idx] * g[idx];
            }
            std::vector<cplx> gmom(1u << nf);
            for (unsigned s = 0; s < (1u << nf); ++s)
                gmom[s] = mm.expect([&](int idx) { return gprod[s][idx]; });

            std::vector<cplx> aug(1u << nf);
            auto integrand = [&](cplx z) {
                const cplx Lz = L * z;
                const cplx sv = L * (z - v) / ((Lz + N * theta) * (Lz - (M + 1.0 - theta)));
                cplx pref = (group.top ? fac.minus(Lz) : fac.plus(Lz)) / sv;
                if (group.mid_level > 0) pref *= mid_coeff;
                for (int t = 0; t < T; ++t)
                    if (!(fmask & (1u << t)))
                        pref /= L * (vpt[t] - z) * (vpt[t] - z + 1.0 / L);

                for (int idx = 0; idx < size; ++idx) {
                    cplx val{1.0, 0.0};
                    if (group.top) {
                        for (double l : mm.ells(idx, N)) val *= (Lz - l - theta) / (Lz - l);
                    } else if (group.mid_level == 0) {
                        for (double l : mm.ells(idx, k))
                            val *= (Lz - l + theta - 1.0) / (Lz - l - 1.0);
                    } else if (branch == ThetaBranch::one) {
                        cplx diff{0.0, 0.0};
                        for (double l : mm.ells(idx, group.mid_level)) diff += 1.0 / (Lz - l - 1.0);
                        for (double l : mm.ells(idx, group.mid_level - 1)) diff -= 1.0 / (Lz - l);
                        val = diff;
                    } else {
                        for (double l : mm.ells(idx, group.mid_level))
                            val *= (Lz - l - theta) / (Lz - l - 1.0);
                        for (double l : mm.ells(idx, group.mid_level - 1))
                            val *= (Lz - l + theta - 1.0) / (Lz - l);
                    }
                    xi[idx] = val;
                }

                std::fill(aug.begin(), aug.end(), cplx{0.0, 0.0});
                for (int idx = 0; idx < size; ++idx) {
                    const cplx w = mm.prob(idx) * xi[idx];
                    for (unsigned s = 0; s < (1u << nf); ++s) aug[s] += w * gprod[s][idx];
                }

                const cplx cum = cumulant_from_moment_table(nf + 1, [&](unsigned mask) {
                    return (mask & 1u) ? aug[mask >> 1] : gmom[mask >> 1];
                });
                return pref * cum;
            };

            const QuadratureResult qr = contour_integral(integrand, contour, adaptive_tol);

            LoopTerm term;
            term.key.extra = group.tag;
            term.key.subsets.assign(N - k + 1, {});
            for (int t : chosen) term.key.subsets[lvl[t] - k].push_back(fidx[t]);
            term.value = qr.value;
            term.converged = qr.converged;
            term.node_count_used = qr.node_count_used;
            rep.terms.push_back(std::move(term));
            rep.total += qr.value;
            rep.quadrature_ok = rep.quadrature_ok && qr.converged;

            if (sub == loose) break;
            sub = (sub - loose) & loose;  // next subset of the unforced bits
        }
    }

    rep.residual = std::abs(rep.total);
    rep.pass = rep.quadrature_ok && rep.residual < tol;
    return rep;
}

std::string to_json(const LoopEquationReport& r) {
    nlohmann::json j;
    j["theta"] = r.theta;
    j["L"] = r.L;
    j["v_re"] = r.v.real();
    j["v_im"] = r.v.imag();
    j["tol"] = r.tol;
    j["total_re"] = r.total.real();
    j["total_im"] = r.total.imag();
    j["residual"] = r.residual;
    j["quadrature_ok"] = r.quadrature_ok;
    j["pass"] = r.pass;
    j["terms"] = nlohmann::json::array();
    for (const auto& t : r.terms) {
        nlohmann::json jt;
        jt["group"] = t.key.extra;
        jt["subsets"] = t.key.subsets;
        jt["value_re"] = t.value.real();
        jt["value_im"] = t.value.imag();
        jt["abs"] = std::abs(t.value);
        jt["converged"] = t.converged;
        jt["nodes"] = t.node_count_used;
        j["terms"].push_back(std::move(jt));
    }
    return j.dump(2);
}

}  // namespace corners
