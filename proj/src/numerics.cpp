#include "cornerslab/numerics.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace corners {

double log_gamma(double x) {
    if (!(x > 0.0))
        throw std::domain_error("log_gamma: argument must be positive");
    return std::lgamma(x);
}

namespace {

constexpr int kNodeCap = 1 << 16;

cplx trapezoid_value(const std::vector<cplx>& terms) {
    // terms[j] = f(z(t_j)) * z'(t_j) on the uniform grid t_j = 2pi j / n.
    // (1/2pi i) * (2pi/n) * sum = sum / (i n).
    cplx s{0.0, 0.0};
    for (const cplx& t : terms) s += t;
    return s / (cplx(0.0, 1.0) * static_cast<double>(terms.size()));
}

}  // namespace

QuadratureResult contour_integral(const std::function<cplx(cplx)>& f,
                                  const ContourSpec& c,
                                  double adaptive_tol) {
    if (c.nodes < 8 || c.nodes % 2 != 0)
        throw std::invalid_argument("contour_integral: nodes must be even and >= 8");
    if (!(c.semi_axis_x > 0.0) || !(c.semi_axis_y > 0.0))
        throw std::invalid_argument("contour_integral: semi-axes must be positive");
    if (!(adaptive_tol > 0.0))
        throw std::invalid_argument("contour_integral: adaptive_tol must be positive");

    const double a = c.semi_axis_x, b = c.semi_axis_y;
    auto term_at = [&](double t) -> cplx {
        const cplx z = c.center + cplx(a * std::cos(t), b * std::sin(t));
        const cplx dz(-a * std::sin(t), b * std::cos(t));
        return f(z) * dz;
    };

    const double two_pi = 2.0 * std::numbers::pi;
    int n = c.nodes;
    std::vector<cplx> terms(n);
    for (int j = 0; j < n; ++j) terms[j] = term_at(two_pi * j / n);

    QuadratureResult res;
    res.value = trapezoid_value(terms);
    res.node_count_used = n;

    while (n < kNodeCap) {
        const int n2 = 2 * n;
        std::vector<cplx> refined(n2);
        for (int j = 0; j < n; ++j) {
            refined[2 * j] = terms[j];
            refined[2 * j + 1] = term_at(two_pi * (2 * j + 1) / n2);
        }
        terms.swap(refined);
        n = n2;

        const cplx value2 = trapezoid_value(terms);
        res.last_refinement_delta = std::abs(value2 - res.value);
        res.value = value2;
        res.node_count_used = n;
        if (res.last_refinement_delta < adaptive_tol) {
            res.converged = true;
            break;
        }
    }
    return res;
}

namespace {

// plain central-difference tensor stencil at step h
cplx central_difference(const std::function<cplx(const std::vector<double>&)>& f,
                        const std::vector<int>& order, double h) {
    std::vector<int> active;
    for (int i = 0; i < static_cast<int>(order.size()); ++i)
        if (order[i] == 1) active.push_back(i);
    const int d = static_cast<int>(active.size());

    std::vector<double> t(order.size(), 0.0);
    cplx acc{0.0, 0.0};
    for (int mask = 0; mask < (1 << d); ++mask) {
        double sign = 1.0;
        for (int i = 0; i < d; ++i) {
            const bool plus = (mask >> i) & 1;
            t[active[i]] = plus ? h : -h;
            if (!plus) sign = -sign;
        }
        acc += sign * f(t);
    }
    for (int i = 0; i < d; ++i) t[active[i]] = 0.0;
    return acc / std::pow(2.0 * h, d);
}

}  // namespace

cplx mixed_partial(const std::function<cplx(const std::vector<double>&)>& f,
                   const std::vector<int>& order_per_axis,
                   double step) {
    int total = 0;
    for (int o : order_per_axis) {
        if (o != 0 && o != 1)
            throw std::invalid_argument("mixed_partial: orders must be 0 or 1");
        total += o;
    }
    if (total > 4)
        throw std::invalid_argument("mixed_partial: total order must be at most 4");
    if (!(step > 0.0))
        throw std::invalid_argument("mixed_partial: step must be positive");

    if (total == 0) return f(std::vector<double>(order_per_axis.size(), 0.0));

    const cplx coarse = central_difference(f, order_per_axis, step);
    const cplx fine = central_difference(f, order_per_axis, step / 2.0);
    return (4.0 * fine - coarse) / 3.0;
}

}  // namespace corners
