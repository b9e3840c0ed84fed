#pragma once

#include <complex>
#include <string>
#include <vector>

#include "cornerslab/discrete_measure.hpp"
#include "cornerslab/numerics.hpp"

namespace corners {

// Entire closed-form factor: prefactor * exp(exp_rate * z) * prod_i (z - roots[i]).
// Covers constants, polynomials with known roots, and the exponential-linear
// ratios produced by geometric and exp-polynomial weights.
struct PhiFunction {
    cplx prefactor{1.0, 0.0};
    cplx exp_rate{0.0, 0.0};
    std::vector<cplx> roots;

    cplx operator()(cplx z) const;
};

// The function pairs phi_1^j, phi_2^j for j = k..N+1 encoding the weight
// ratios w_j(z-1)/w_j(z) (first kind) and, for the second kind, the ratios
// taken at the argument shifted by (N-j)*theta.
struct AnalyticFamily {
    int N = 1, k = 1;
    std::vector<PhiFunction> phi1;  // phi1[j - k] is phi_1^j, j in [k, N+1]
    std::vector<PhiFunction> phi2;

    cplx eval_phi1(int j, cplx z) const;
    cplx eval_phi2(int j, cplx z) const;

    // Single nontrivial top weight, w_j == 1 below level N: the ratio
    // constraints then force phi_1^j = plus and phi_2^j = minus for j <= N,
    // with phi_1^{N+1} = minus and phi_2^{N+1} = plus.
    static AnalyticFamily from_top_pair(int N, int k, PhiFunction plus, PhiFunction minus);
};

// A measure together with a compatible family.
struct NekrasovSetup {
    MeasureSpec measure;
    AnalyticFamily family;
};

// Krawtchouk-type top weight w_N(x) = q^x / (Gamma(x + N*theta + 1) *
// Gamma(M + 1 - theta - x)) with the linear pair plus(x) = q*(M+1-theta-x),
// minus(x) = x + N*theta.  Both residual-part coefficients vanish at the
// boundary points -N*theta and M+1-theta, so Res_1 = Res_2 = 0.
NekrasovSetup krawtchouk_setup(int N, int k, int M, double theta, double q);

// Per-level geometric weights w_j(x) = q_j^x; the phi's are the cumulative
// constants q_k^{-1}...q_{j-1}^{-1} (first kind) and q_k...q_{j-1} (second).
// qs[j - k] is q_j and must have size N - k + 1.
NekrasovSetup geometric_setup(double theta, int N, int k, int M, const std::vector<cplx>& qs);

// Candidate pole location s = a - b*theta of R_1/R_2.
struct PoleCandidate {
    int a = 0;  // in [0, M+1]
    int b = 1;  // in [1, N]
    double s = 0.0;
};

// All (M+2)*N candidates, row-major in (a, b).
std::vector<PoleCandidate> pole_candidates(const MeasureSpec& spec);

// Largest relative mismatch of the two ratio identities over every lattice
// point a - b*theta inside their stated real intervals.  A compatible family
// stays below 1e-10.
double validate_family(const MeasureSpec& spec, const AnalyticFamily& family);

// Rebuild the per-level weights from the first-kind phi ratios: on each
// lattice coset a - b*theta (b fixed) the ratio determines w_j up to a
// per-coset constant, which cancels in the normalized measure, so the
// recursion anchors w_j = 1 at the coset maximum a = M and walks a downward.
MeasureSpec derive_weights(double theta, int N, int k, int M, const AnalyticFamily& family);

// The theta = 1 equations replace the singular theta/(1-theta) middle sum by
// its finite limit, so evaluation dispatches on the branch explicitly.
enum class ThetaBranch { general, one };

// Residual parts: the boundary-indicator expectations with their 1/(z+N*theta)
// and 1/(z-s_M) prefactors.  Indicators are evaluated exactly on the integer
// coordinates.
cplx eval_Res1(const MeasureSpec& spec, const AnalyticFamily& family, cplx z, ThetaBranch branch);
cplx eval_Res2(const MeasureSpec& spec, const AnalyticFamily& family, cplx z, ThetaBranch branch);

// R_1(z), R_2(z): the expectation terms minus the residual part, expectations
// through discrete_measure's exact enumeration.  Throws std::domain_error when
// z is within 1e-12 of a lattice point a - b*theta (an expectation pole) and
// std::invalid_argument when the branch does not match spec.theta.
cplx eval_R1(const MeasureSpec& spec, const AnalyticFamily& family, cplx z, ThetaBranch branch);
cplx eval_R2(const MeasureSpec& spec, const AnalyticFamily& family, cplx z, ThetaBranch branch);

enum class WhichR { R1, R2 };

// Same values as eval_R1/eval_R2 (branch chosen from the measure's theta), but
// over a prebuilt MaterializedMeasure so that repeated evaluations, as in the
// contour scans, cost one pass over the cached patterns.  Holds a reference to
// the measure; keep it alive.
class NekrasovEvaluator {
  public:
    NekrasovEvaluator(const MaterializedMeasure& mm, const AnalyticFamily& family, WhichR which);
    cplx operator()(cplx z) const;

  private:
    const MaterializedMeasure& mm_;
    AnalyticFamily family_;
    WhichR which_;
    bool theta_one_;
    cplx res_top_num_{0.0, 0.0};  // residue numerators at the two boundary poles
    cplx res_bot_num_{0.0, 0.0};
    std::vector<cplx> res_mid_num_;
    double pole_low_ = 0.0;   // -N*theta
    double pole_high_ = 0.0;  // s_M
};

// One tested pole location (a cluster of candidates coinciding within 1e-6).
struct PoleResidue {
    std::vector<PoleCandidate> members;
    double s = 0.0;
    bool excluded = false;  // the two locations where R's own poles are cancelled by Res
    double radius = 0.0;
    cplx residue{0.0, 0.0};   // raw contour value
    double abs_residue = 0.0; // |residue| / scale
    int nodes = 0;
    bool converged = true;
};

struct MomentCheck {
    int m = 0;
    double abs_value = 0.0;  // |contour moment| / scale
    bool converged = true;
};

struct CertificationReport {
    WhichR which = WhichR::R1;
    double theta = 1.0;
    int N = 1, k = 1, M = 0;
    double tol = 1e-8;
    double scale = 1.0;  // max |R| on the enclosing contour, the normalization
    std::vector<PoleResidue> poles;
    std::vector<MomentCheck> moments;
    double max_abs_residue = 0.0;
    double max_abs_moment = 0.0;
    double abs_residue_sum = 0.0;  // |sum of raw residues| / scale
    bool quadrature_ok = true;
    bool pass = false;
};

// Numerical analyticity certificate: every candidate pole (the two excluded
// boundary points included) carries a circle of radius min(0.1, half the
// minimal cluster gap), and the residues plus the scaled moments on one
// enclosing contour must all stay below tol after normalizing by scale.
// Clusters are independent; threads > 1 splits them across std::thread.
CertificationReport certify_analyticity(const MeasureSpec& spec, const AnalyticFamily& family,
                                        WhichR which, double tol = 1e-8, int threads = 1);

std::string to_json(const CertificationReport& report);

// The two string-shift bijections behind the residue cancellation: the
// horizontal one moves coordinate i down a run of consecutive levels, the
// diagonal one moves the staircase positions (m - i + 1).
enum class BijectionVariant { horizontal, diagonal };

// One matched pair with its termwise cancellation.
struct TermCancellation {
    int source_index = 0, source_level = 0;  // pattern index in measure order
    int image_index = 0, image_level = 0;
    cplx term_source{0.0, 0.0};  // printed-identity terms (group weight / theta)
    cplx term_image{0.0, 0.0};
    double residual = 0.0;  // |sum| relative to the larger term
};

struct BijectionReport {
    BijectionVariant variant = BijectionVariant::horizontal;
    PoleCandidate pole;
    int i = 1;
    int n_plus = 0, n_minus = 0;
    bool containment_ok = true;
    bool bijective = true;
    bool inverse_ok = true;
    double max_residual = 0.0;
    cplx signed_term_sum{0.0, 0.0};  // sum of all weighted group terms, both sets
    double residue_sum_abs = 0.0;    // |signed_term_sum| relative to the largest term
    std::vector<TermCancellation> pairs;
    std::vector<std::string> failures;
    bool pass = false;
};

// Executes one bijection at pole (a, b) and coordinate index i: enumerates the
// plus and minus pole sets by scanning every pattern, applies the equal-string
// shift, and asserts the level containments, bijectivity (with the explicit
// inverse walk), and each cancellation identity termwise to 1e-10.  Requires
// theta != 1 and s outside {-N*theta, s_M}.  Empty sets pass vacuously.
BijectionReport check_bijection(const MeasureSpec& spec, BijectionVariant variant,
                                const PoleCandidate& pole, int i);

// Every non-excluded candidate crossed with i in [1, N].
std::vector<BijectionReport> check_all_bijections(const MeasureSpec& spec, BijectionVariant variant);

std::string to_json(const BijectionReport& report);

}  // namespace corners
