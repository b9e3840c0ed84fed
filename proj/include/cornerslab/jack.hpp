#pragma once

#include <initializer_list>
#include <vector>

namespace corners {

// An integer partition: weakly decreasing positive parts (trailing zeros are
// stripped on construction, so (2,1,0) and (2,1) are the same partition).
struct Partition {
    std::vector<int> parts;

    Partition() = default;
    Partition(std::initializer_list<int> p);
    explicit Partition(std::vector<int> p);

    int n_parts() const { return static_cast<int>(parts.size()); }
    int weight() const;           // |lambda|, the number of boxes
    int part(int i) const;        // 1-based; 0 beyond the last part
    Partition conjugate() const;
    bool contains_box(int i, int j) const;  // 1-based row i, column j
    int arm(int i, int j) const;  // lambda_i - j, box must lie in the diagram
    int leg(int i, int j) const;  // lambda'_j - i
    bool operator==(const Partition& other) const { return parts == other.parts; }
};

// true iff lambda_1 >= mu_1 >= lambda_2 >= mu_2 >= ... >= lambda_n, i.e. the
// pair may sit on adjacent rows of an interlaced stack.
bool partitions_interlace(const Partition& lambda, const Partition& mu);

// Principal specialization J_lambda(1^N) in the P-normalization:
//   prod_i Gamma(theta)/Gamma(i theta) * prod_{i<j} Gamma(l_i-l_j+theta)/Gamma(l_i-l_j)
// with l_i = lambda_i - i*theta.  Zero when lambda has more than N parts.
double jack_principal(const Partition& lambda, int N, double theta);

// One-variable skew specialization J_{lambda/mu}(1): the branching coefficient
// multiplying x^{|lambda|-|mu|} J_mu when one variable is split off.  Zero
// unless lambda and mu interlace.  Four Gamma-factor products over the shifted
// coordinates l_i = lambda_i - i*theta, m_i = mu_i - i*theta; the second
// product runs over i <= j (diagonal included) since dropping the i = j terms
// rescales every factor by Gamma(theta) and breaks the branching identity.
double skew_jack_one(const Partition& lambda, const Partition& mu, double theta);

// The box product prod_{box in lambda} (a + theta*l + theta)/(a + theta*l + 1)
// relating the dual principal value to the plain one.
double dual_correction(const Partition& lambda, double theta);

// Dual principal specialization:
//   prod_i 1/Gamma(i theta) * prod_{i<j} Gamma(l_i-l_j+1)/Gamma(l_i-l_j+1-theta)
//   * prod_i Gamma(l_i+theta N+theta)/Gamma(l_i+theta N+1).
// Equals jack_principal * dual_correction; zero when lambda has > N parts.
double dual_jack_principal(const Partition& lambda, int N, double theta);

// Relative gap |J_lambda(1^N) - sum over interlacing chains of skew factors|
// divided by J_lambda(1^N).  Exactly zero for the empty partition.
double verify_branching(const Partition& lambda, int N, double theta);

struct CauchyCheck {
    double truncated_sum = 0;      // sum over lambda in the T^N box of q^|lambda| J * dual-J
    double target = 0;             // (1-q)^(-theta N^2)
    double residual = 0;           // |truncated_sum - target|
    double geometric_tail = 0;     // bound on the mass outside the box
    double roundoff_allowance = 0; // first-order summation/evaluation error
    double tail_bound = 0;         // geometric_tail + roundoff_allowance
    double shell_ratio = 0;        // ratio bound used for the geometric tail
    bool within_bound = false;     // residual <= tail_bound
};

// Truncated Cauchy identity check: sums q^|lambda| J_lambda(1^N) dual-J over
// all lambda with at most N parts and lambda_1 <= truncation, compares with
// (1-q)^(-theta N^2), and bounds the truncation error geometrically.  Shells
// of fixed |lambda| are complete inside the box up to |lambda| = truncation,
// and consecutive complete-shell ratios validate the geometric ratio used.
CauchyCheck verify_cauchy(int N, double theta, double q, int truncation);

}  // namespace corners
