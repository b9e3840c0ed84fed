#pragma once

#include <functional>
#include <string>
#include <vector>

#include "cornerslab/discrete_measure.hpp"
#include "cornerslab/nekrasov.hpp"
#include "cornerslab/numerics.hpp"

namespace corners {

// Observation points v^r_f, r = k..N, f = 1..m_r, at which the level Stieltjes
// transforms are read off; L is the common particle rescaling.  Levels with no
// points keep an empty slot so points[r - k] always addresses level r.
struct ObservableSet {
    double L = 1.0;
    int k = 1;
    std::vector<std::vector<cplx>> points;

    int m(int r) const;
    int total() const;
};

// A bounded observable tabulated over the support of a materialized measure,
// aligned with its pattern indexing.
using RandomVariable = std::vector<cplx>;

// G^n_L(z) = sum_i 1/(z - l^n_i/L), the Stieltjes transform of the level-n
// empirical measure rescaled by L.
cplx stieltjes(const CornersPattern& p, int level, double L, cplx z);

// the tabulated G^level_L(z) over the support of mm
RandomVariable stieltjes_variable(const MaterializedMeasure& mm, int level, double L, cplx z);

// All set partitions of {0, ..., n-1}, each a list of blocks encoded as
// bitmasks.  Enumerated through restricted growth strings, cached per n; the
// count is the Bell number B_n.  n > 6 throws std::invalid_argument (the
// partition count growth is the reason joint cumulants are capped at six
// variables throughout this module).
const std::vector<std::vector<unsigned>>& set_partitions(int n);

// E[prod vars] by exact enumeration.
cplx expect_product(const MaterializedMeasure& mm, const std::vector<const RandomVariable*>& vars);

// Joint cumulant assembled from subset moments: the partition sum with weight
// (-1)^{r-1} (r-1)! over r-block partitions, each block contributing
// moment_of(block bitmask).  The one partition-sum core behind every cumulant
// this module produces.
cplx cumulant_from_moment_table(int n, const std::function<cplx(unsigned)>& moment_of);

// M(vars...) from exactly enumerated moments.  1 to 6 variables.
cplx cumulant_from_moments(const MaterializedMeasure& mm, const std::vector<const RandomVariable*>& vars);

// E[prod vars] rebuilt the other way around, from joint cumulants of the
// partition blocks; the inverse expansion to cumulant_from_moments and its
// round-trip check.
cplx moment_from_cumulants(const MaterializedMeasure& mm, const std::vector<const RandomVariable*>& vars);

// |M(X*Y, others...) - M(X, Y, others...) - sum_I M(X; I) M(Y; I^c)| with I
// running over subsets of others: the product formula splitting a product
// entry of a joint cumulant.  others holds at most 4 variables.
double verify_product_formula(const MaterializedMeasure& mm, const RandomVariable& X,
                              const RandomVariable& Y,
                              const std::vector<const RandomVariable*>& others);

// Deformation amounts t^r_f, shaped like an ObservableSet.
struct DeformationParams {
    std::vector<std::vector<cplx>> t;

    static DeformationParams zeros_like(const ObservableSet& obs);
};

// Expectation under the reweighted measure
//   P^t(l) = Z(t,v)^{-1} P(l) prod_{r,f} prod_{particles p of level r} (1 + t^r_f/(v^r_f - l^r_p/L)),
// a complex-valued measure normalized by its own partition sum.  Throws
// std::domain_error when some deformation factor degenerates on the support or
// when |Z(t,v)| falls below 1e-8 (the deformation is strong enough to cancel
// the measure; derivatives taken through such a Z are meaningless).
cplx deformed_expectation(const MaterializedMeasure& mm, const ObservableSet& obs,
                          const DeformationParams& t, const RandomVariable& observable);

// Entire factor pair (plus, minus) whose ratio continues the one-step shift
// ratio of the top weight: w_N(x)/w_N(x-1) = plus(x)/minus(x) on the lattice.
struct ShiftFactorization {
    PhiFunction plus;
    PhiFunction minus;
};

// Read the pair off a single-top-weight family (w_j == 1 below level N):
// plus is the common first-kind function at levels <= N, minus the one at N+1.
ShiftFactorization top_shift_factors(const AnalyticFamily& family);

// Largest relative mismatch of plus(x)/minus(x) against the tabulated
// w_N(x)/w_N(x-1) over the lattice points x = a - b*theta, a in [1, M],
// b in [1, N].  A correct pair stays below 1e-10.
double validate_shift_factorization(const MeasureSpec& spec, const ShiftFactorization& fac);

// Names one cumulant M(xi; F_k, ..., F_N): extra tags the leading observable,
// subsets[r - k] lists the chosen point indices F_r (1-based, sorted).
struct CumulantKey {
    std::string extra;
    std::vector<std::vector<int>> subsets;
};

// One integral term of the discrete loop equation, prefactors included.
struct LoopTerm {
    CumulantKey key;
    cplx value{0.0, 0.0};
    bool converged = false;
    int node_count_used = 0;
};

struct LoopEquationReport {
    double theta = 1.0;
    double L = 1.0;
    cplx v{0.0, 0.0};
    double tol = 0.0;
    cplx total{0.0, 0.0};
    double residual = 0.0;
    bool quadrature_ok = false;
    bool pass = false;
    std::vector<LoopTerm> terms;
};

// Ellipse around the rescaled particle interval [-theta*N/L, (M-theta)/L]:
// margin 0.25 beyond each end horizontally, semi-minor axis 0.5, 16 starting
// nodes.
ContourSpec default_loop_contour(const MeasureSpec& spec, double L);

// Certifies the multi-level cumulant identity: the subset-tuple sum of the
// top, bottom, and middle contour-integral groups, with weighting function
// S_v(Lz) = L(z-v)/((Lz + N*theta)(Lz - M - 1 + theta)), adds to zero.  Every
// cumulant is evaluated exactly by enumeration; every integral adaptively on
// the given contour.  Requires w_j constant below the top level, a shift
// factorization matching the top weight, obs.total() <= 3, the contour
// enclosing the particle interval, and v, every v^r_f, and every v^r_f + 1/L
// outside it; violations throw std::invalid_argument.  The branch must match
// theta exactly as in the Nekrasov evaluators.
LoopEquationReport verify_discrete_loop_equation(const MaterializedMeasure& mm,
                                                 const ShiftFactorization& fac,
                                                 const ObservableSet& obs, cplx v,
                                                 const ContourSpec& contour, ThetaBranch branch,
                                                 double tol = 1e-8, double adaptive_tol = 1e-10);

std::string to_json(const LoopEquationReport& report);

}  // namespace corners
