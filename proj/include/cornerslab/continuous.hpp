#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "cornerslab/numerics.hpp"

namespace corners {

// Polynomial potential, evaluable on the real interval and on the complex
// neighborhood the loop-equation contour lives in, with an exact derivative.
struct Potential {
    std::vector<double> coeffs;  // V(y) = coeffs[0] + coeffs[1]*y + coeffs[2]*y^2 + ...

    double operator()(double y) const;
    cplx operator()(cplx z) const;
    double derivative(double y) const;
    cplx derivative(cplx z) const;
};

struct ContinuousSpec {
    double theta = 1.0;
    int N = 1, k = 1;
    double a_minus = -1.0, a_plus = 1.0;
    Potential V;
};

// stack[j - k] is level j with exactly j coordinates, ascending
using LevelStack = std::vector<std::vector<double>>;

// Unnormalized log of the joint density of levels k..N: the top Vandermonde,
// the (2*theta-1) power on the bottom kept level, the (2-2*theta) in-level and
// (theta-1) cross-level powers between consecutive kept levels, the potential
// on the top level, and the Gamma-factor constant from integrating the dropped
// levels out.  Returns -infinity off the open interlacing cone or when the top
// level leaves (a_minus, a_plus).  Shape mismatches throw std::invalid_argument.
double log_density(const ContinuousSpec& spec, const LevelStack& y);

// Gauss-Jacobi rule for the weight (1-t)^alpha (1+t)^beta on [-1,1], computed
// by the Golub-Welsch eigenvalue method.  Requires alpha, beta > -1.
struct JacobiRule {
    std::vector<double> nodes;
    std::vector<double> weights;
};
JacobiRule jacobi_rule(int n, double alpha, double beta);

// Relative residual of the Dixon-Anderson integral over the interlacing cell
// of x_1 < ... < x_N against its Gamma-factor closed form.  Each panel
// (x_i, x_{i+1}) is mapped to [-1,1] so the endpoint singularities are
// absorbed into the Gauss-Jacobi weight; the node count doubles until the
// quadrature stabilizes.
double verify_dixon_anderson(const std::vector<double>& x, double theta);

struct SampleBatch {
    double theta = 1.0;
    int N = 1, k = 1;
    double a_minus = -1.0, a_plus = 1.0;
    std::uint64_t seed = 0;
    int count = 0;
    // per sample: levels k..N in that order, each level's coordinates ascending
    std::vector<double> data;
    double acceptance_rate = 0.0;
    double autocorr_lag1 = 0.0;

    int stack_size() const;
    double y(int sample, int level, int i) const;  // i in [1, level]
    SampleBatch head(int m) const;
};

// MCMC sampler for the continuous measure: random-walk Metropolis on the top
// level, inverse-CDF Gibbs draws (512-cell grid, endpoint-clustered) for every
// lower coordinate, run on the full stack down to level 1 and projected to
// levels k..N on output.  At theta == 1 every lower-coordinate conditional is
// exactly uniform on its admissible interval and is drawn directly.  One
// sample is retained per full sweep after burn_in sweeps.
SampleBatch sample(const ContinuousSpec& spec, int n_samples, int burn_in, std::uint64_t seed);

cplx sample_stieltjes(const SampleBatch& b, int sample, int level, cplx z);
cplx sample_stieltjes_derivative(const SampleBatch& b, int sample, int level, cplx z);

// Flat binary batch file (header: theta, N, k, a-, a+, count, seed; body:
// little-endian doubles, level-major per sample) plus a JSON diagnostics
// sidecar at path + ".json".
void save_batch(const SampleBatch& b, const std::string& path);
SampleBatch load_batch(const std::string& path);

using SampleFunctional = std::function<cplx(const SampleBatch&, int)>;

struct CumulantEstimate {
    cplx value{0.0, 0.0};
    double std_error = 0.0;
    int batch_count = 0;
};

// Joint cumulant of 1..6 sample functionals: empirical moments plugged into
// the partition-sum expansion, the spread of 20 batch-means estimates giving
// the standard error.
CumulantEstimate estimate_cumulant(const SampleBatch& b, const std::vector<SampleFunctional>& vars);

// Observation points of the continuous loop equation, points[r - k] holding
// the complex points paired with level r.
struct PointSet {
    int k = 1;
    std::vector<std::vector<cplx>> points;
    int total() const;
};

// Ellipse around [a_minus, a_plus] with margin 0.25 and semi-minor axis 0.5,
// sized for entire potentials.
ContourSpec default_continuous_contour(const ContinuousSpec& spec);

struct ContinuousLoopReport {
    double theta = 1.0;
    int N = 1, k = 1;
    cplx v{0.0, 0.0};
    double residual = 0.0;
    double std_error = 0.0;
    double quadrature_delta = 0.0;  // change when the node count is halved
    int node_count = 0;
    int batch_count = 0;
    bool within_four_sigma = false;
};

// Monte Carlo certification of the continuous multi-level loop equation: the
// contour integral of (z-a-)(z-a+)/(z-v) times [kappa(S(z); points)/2 +
// sum over points of kappa(G^r(z); points minus one)/(z-v_f^r)^2], with S(z)
// assembled from the level Stieltjes transforms, their exact derivatives, and
// the potential's derivative.  Cumulants are estimated from the batch at each
// quadrature node; the residual is the modulus of the integral and the
// standard error comes from batch means.
ContinuousLoopReport verify_continuous_loop_equation(const ContinuousSpec& spec,
                                                     const PointSet& points, cplx v,
                                                     const ContourSpec& contour,
                                                     const SampleBatch& batch);
std::string to_json(const ContinuousLoopReport& rep);

struct DiffuseLimitRow {
    int L = 0;
    int M = 0;
    bool exact = true;  // exact enumeration vs discrete MCMC
    double discrete_m1 = 0.0, discrete_m2 = 0.0;
    double discrete_err1 = 0.0, discrete_err2 = 0.0;
    double gap1 = 0.0, gap2 = 0.0;
};

struct DiffuseLimitTable {
    double continuous_m1 = 0.0, continuous_m2 = 0.0;
    double continuous_err1 = 0.0, continuous_err2 = 0.0;
    std::vector<DiffuseLimitRow> rows;
};

// For each lattice density L: build the discrete measure on [0, floor((a+ - a-)L)]
// whose top weight is exp(-N*theta*V(a_- + x/L)), compute the first two moments
// of the top-level empirical measure under X_i = a_- + particle/L, and tabulate
// the gaps against the continuous Monte Carlo estimates.  Rows whose top-level
// support is at most support_cap are enumerated exactly; larger rows run the
// discrete Metropolis chain, thinned by N*(M+1) single-site steps per retained
// sample so the walk can cross the lattice between samples.
DiffuseLimitTable diffuse_limit_experiment(const ContinuousSpec& spec,
                                           const std::vector<int>& L_values, int n_samples,
                                           int burn_in, std::uint64_t seed,
                                           double support_cap = 2.0e6);
std::string to_csv(const DiffuseLimitTable& table);
std::string to_json(const DiffuseLimitTable& table);

}  // namespace corners
