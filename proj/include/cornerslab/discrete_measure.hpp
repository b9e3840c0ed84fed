#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <utility>
#include <variant>
#include <vector>

#include "cornerslab/numerics.hpp"
#include "cornerslab/rng.hpp"
#include "cornerslab/state_space.hpp"

namespace corners {

// Per-level weight functions w_j on [-j*theta, M-theta].  Four closed
// constructors (instead of opaque callables) so that the Nekrasov and
// cumulant modules can derive analytic continuations mechanically.

struct GeometricWeight {
    cplx q{1.0, 0.0};  // w(x) = q^x
};

struct ExpPolynomialWeight {
    std::vector<double> coeffs;  // w(x) = exp(c_0 + c_1 x + c_2 x^2 + ...)
};

// w(x) = q^x / (Gamma(x + alpha) * Gamma(beta - x)); Krawtchouk-type
struct GammaRatioWeight {
    double q = 1.0;
    double alpha = 0.0;
    double beta = 0.0;
};

// values keyed by the lattice coordinates (a, b) of x = a - b*theta
struct TabulatedWeight {
    std::map<std::pair<int, int>, cplx> values;
};

using Weight = std::variant<GeometricWeight, ExpPolynomialWeight, GammaRatioWeight, TabulatedWeight>;

struct LogWeight {
    double log_modulus = 0.0;
    cplx phase{1.0, 0.0};  // unit modulus; stays 1 for probability measures
    cplx value() const;
};

// log w(x) at the lattice point x = a - b*theta
LogWeight log_eval(const Weight& w, double theta, int a, int b);

// w(a1 - b1*theta) / w(a0 - b0*theta)
cplx weight_ratio(const Weight& w, double theta, int a1, int b1, int a0, int b0);

struct MeasureSpec {
    double theta = 1.0;
    int N = 1, k = 1, M = 0;
    std::vector<Weight> weights;  // weights[j - k] is w_j

    const Weight& weight(int j) const { return weights[j - k]; }

    // w_j == 1 on every level
    static MeasureSpec uniform(double theta, int N, int k, int M);
    // w_N as given, w_j == 1 below the top
    static MeasureSpec top_weight(double theta, int N, int k, int M, Weight w_top);
};

// Unnormalized log-weight of a pattern: H^t(l^N) * H^b(l^k) * prod_j I(l^{j+1}, l^j),
// every Gamma ratio accumulated in log space.  Throws std::domain_error if a
// Gamma argument is nonpositive (broken interlacing upstream).
LogWeight log_weight(const MeasureSpec& spec, const CornersPattern& p);

// Z by exact summation over the pattern stream (streaming log-sum-exp).
cplx partition_function(const MeasureSpec& spec);

// E[obs] by exact enumeration; refuses when |Z| < 1e-8 * sum |w| (numerically
// degenerate complex measure).
cplx expectation(const MeasureSpec& spec,
                 const std::function<cplx(const CornersPattern&)>& obs);

// Moves push a string of particle coordinates down by one (direction = -1, the
// native closed-form direction) or up (direction = +1, evaluated through the
// reciprocal of the down ratio from the shifted pattern).
//
// horizontal: l^j_i = s for all j in [j2, j1], each shifted to s-1
// diagonal:   l^m_{i+(m-j2)} = s-(m-j2)*theta for m in [j2, j1], each shifted by -1
struct HorizontalMove {
    int i = 1, j1 = 1, j2 = 1;
    int direction = -1;
};
struct DiagonalMove {
    int i = 1, j1 = 1, j2 = 1;
    int direction = -1;
};
using Move = std::variant<HorizontalMove, DiagonalMove>;

struct RatioResult {
    bool rejected = false;  // the shifted configuration left the state space
    cplx ratio{0.0, 0.0};
};

// apply the move; nullopt when the result is not an interlaced stack
std::optional<CornersPattern> apply_move(const CornersPattern& p, const Move& move);

// P(shifted)/P(current) through the closed-form string/staircase formulas,
// dispatched on (j1 == N, j2 == k).  Preconditions (the equal-value string,
// index ranges) violated -> std::invalid_argument; move leaving the state
// space -> rejected result.
RatioResult shift_ratio(const MeasureSpec& spec, const CornersPattern& p, const Move& move);

// One-coordinate change l^j_i -> l^j_i + direction, the MCMC proposal ratio,
// composed from the single-shift factor formulas.
RatioResult single_site_ratio(const MeasureSpec& spec, const CornersPattern& p,
                              int j, int i, int direction);

// Metropolis chain over patterns: proposals uniform over (level, index, +-1),
// accepted with min(1, ratio).  Requires positive weights.
class McmcSampler {
  public:
    McmcSampler(const MeasureSpec& spec, std::uint64_t seed);
    const CornersPattern& state() const { return state_; }
    void step();
    long accepted() const { return accepted_; }

  private:
    MeasureSpec spec_;
    CornersPattern state_;
    Rng rng_;
    long accepted_ = 0;
    int total_sites_ = 0;
};

std::vector<CornersPattern> mcmc_sample(const MeasureSpec& spec, long chain_length,
                                        long burn_in, std::uint64_t seed);

// Exact marginal of (lambda^N, ..., lambda^m) for a k=1 spec, keyed by the
// concatenated parts of the kept levels (top level first).
std::map<std::vector<int>, cplx> marginal_measure(const MeasureSpec& spec, int m);

// The full measure materialized once: normalized probabilities plus cached
// particle positions, for the many-expectations workloads (Nekrasov
// certification, loop equations).  Desk-scale only by design.
class MaterializedMeasure {
  public:
    explicit MaterializedMeasure(const MeasureSpec& spec);

    const MeasureSpec& spec() const { return spec_; }
    int size() const { return static_cast<int>(patterns_.size()); }
    const CornersPattern& pattern(int idx) const { return patterns_[idx]; }
    cplx prob(int idx) const { return prob_[idx]; }
    cplx Z() const { return Z_; }

    // particle positions of pattern idx at level j (1-based level index j in [k,N])
    const std::vector<double>& ells(int idx, int j) const {
        return ells_[idx][j - spec_.k];
    }

    template <class F>
    cplx expect(F&& obs) const {
        cplx acc{0.0, 0.0};
        for (int idx = 0; idx < size(); ++idx) acc += prob_[idx] * obs(idx);
        return acc;
    }

  private:
    MeasureSpec spec_;
    std::vector<CornersPattern> patterns_;
    std::vector<cplx> prob_;
    std::vector<std::vector<std::vector<double>>> ells_;
    cplx Z_{0.0, 0.0};
};

}  // namespace corners
