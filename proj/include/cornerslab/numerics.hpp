#pragma once

#include <complex>
#include <functional>
#include <vector>

namespace corners {

using cplx = std::complex<double>;

// ln Gamma(x) for x > 0.  Throws std::domain_error for x <= 0; a nonpositive
// Gamma argument in this codebase always means an interlacing precondition
// was violated upstream, so failing loudly is the right behavior.
double log_gamma(double x);

// Positively oriented ellipse z(t) = center + a*cos(t) + i*b*sin(t), t in [0, 2pi).
struct ContourSpec {
    cplx center{0.0, 0.0};
    double semi_axis_x = 1.0;
    double semi_axis_y = 1.0;
    int nodes = 64;  // starting node count; even, at least 8
};

struct QuadratureResult {
    cplx value{0.0, 0.0};
    int node_count_used = 0;
    double last_refinement_delta = 0.0;  // |change| under the final node doubling
    bool converged = false;
};

// (1/2pi i) * integral of f over the contour, trapezoid rule on the periodic
// parameterization (spectrally accurate for integrands analytic in an annulus
// around the contour).  Node count is doubled, reusing previous evaluations,
// until successive values differ by less than adaptive_tol; cap 2^16 nodes.
// A cap hit is not an exception: the result carries converged=false and the
// last refinement delta.
QuadratureResult contour_integral(const std::function<cplx(cplx)>& f,
                                  const ContourSpec& c,
                                  double adaptive_tol = 1e-10);

// Mixed partial derivative of f at the origin, one differentiation per axis
// with order_per_axis[i] in {0,1} and total order at most 4.  Central
// differences at step h combined with one Richardson step: (4*D(h/2) - D(h))/3.
cplx mixed_partial(const std::function<cplx(const std::vector<double>&)>& f,
                   const std::vector<int>& order_per_axis,
                   double step = 1e-3);

}  // namespace corners
