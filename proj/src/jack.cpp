#include "cornerslab/jack.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>

#include "cornerslab/numerics.hpp"
#include "cornerslab/state_space.hpp"

namespace corners {

namespace {

void check_weakly_decreasing(const std::vector<int>& p) {
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (p[i] < 0) throw std::invalid_argument("partition parts must be nonnegative");
        if (i > 0 && p[i] > p[i - 1])
            throw std::invalid_argument("partition parts must be weakly decreasing");
    }
}

void strip_trailing_zeros(std::vector<int>& p) {
    while (!p.empty() && p.back() == 0) p.pop_back();
}

}  // namespace

Partition::Partition(std::initializer_list<int> p) : parts(p) {
    check_weakly_decreasing(parts);
    strip_trailing_zeros(parts);
}

Partition::Partition(std::vector<int> p) : parts(std::move(p)) {
    check_weakly_decreasing(parts);
    strip_trailing_zeros(parts);
}

int Partition::weight() const {
    int w = 0;
    for (int p : parts) w += p;
    return w;
}

int Partition::part(int i) const {
    if (i < 1) throw std::out_of_range("partition rows are 1-based");
    return i <= n_parts() ? parts[i - 1] : 0;
}

Partition Partition::conjugate() const {
    std::vector<int> conj;
    if (!parts.empty()) {
        conj.resize(parts[0]);
        for (int j = 1; j <= parts[0]; ++j) {
            int count = 0;
            for (int p : parts)
                if (p >= j) ++count;
            conj[j - 1] = count;
        }
    }
    return Partition(std::move(conj));
}

bool Partition::contains_box(int i, int j) const {
    return i >= 1 && j >= 1 && i <= n_parts() && j <= parts[i - 1];
}

int Partition::arm(int i, int j) const {
    if (!contains_box(i, j)) throw std::out_of_range("box outside the diagram");
    return parts[i - 1] - j;
}

int Partition::leg(int i, int j) const {
    if (!contains_box(i, j)) throw std::out_of_range("box outside the diagram");
    int count = 0;
    for (int r = i + 1; r <= n_parts(); ++r)
        if (parts[r - 1] >= j) ++count;
    return count;
}

bool partitions_interlace(const Partition& lambda, const Partition& mu) {
    int rows = std::max(lambda.n_parts(), mu.n_parts() + 1);
    for (int i = 1; i < rows; ++i) {
        if (lambda.part(i) < mu.part(i)) return false;
        if (mu.part(i) < lambda.part(i + 1)) return false;
    }
    return true;
}

double jack_principal(const Partition& lambda, int N, double theta) {
    if (N < 1) throw std::invalid_argument("need N >= 1");
    if (theta <= 0) throw std::invalid_argument("need theta > 0");
    if (lambda.n_parts() > N) return 0.0;
    if (lambda.weight() == 0) return 1.0;

    double log_v = 0;
    for (int i = 1; i <= N; ++i) log_v += log_gamma(theta) - log_gamma(i * theta);
    for (int i = 1; i <= N; ++i) {
        for (int j = i + 1; j <= N; ++j) {
            double d = lambda.part(i) - lambda.part(j) + (j - i) * theta;
            log_v += log_gamma(d + theta) - log_gamma(d);
        }
    }
    return std::exp(log_v);
}

double skew_jack_one(const Partition& lambda, const Partition& mu, double theta) {
    if (theta <= 0) throw std::invalid_argument("need theta > 0");
    if (!partitions_interlace(lambda, mu)) return 0.0;

    // The value is independent of zero-padding, so the smallest row count
    // accommodating both diagrams is used.
    int N = std::max(lambda.n_parts(), mu.n_parts() + 1);
    if (N == 1) return 1.0;

    std::vector<double> l(N + 1), m(N);
    for (int i = 1; i <= N; ++i) l[i] = lambda.part(i) - i * theta;
    for (int i = 1; i <= N - 1; ++i) m[i] = mu.part(i) - i * theta;

    double log_v = 0;
    for (int i = 1; i <= N; ++i)
        for (int j = i + 1; j <= N; ++j)
            log_v += log_gamma(l[i] - l[j] + 1 - theta) - log_gamma(l[i] - l[j]);
    for (int i = 1; i <= N - 1; ++i)
        for (int j = i; j <= N - 1; ++j)
            log_v += log_gamma(m[i] - m[j] + 1) - log_gamma(m[i] - m[j] + theta);
    for (int i = 1; i <= N - 1; ++i)
        for (int j = i + 1; j <= N; ++j)
            log_v += log_gamma(m[i] - l[j]) - log_gamma(m[i] - l[j] + 1 - theta);
    for (int i = 1; i <= N - 1; ++i)
        for (int j = i; j <= N - 1; ++j)
            log_v += log_gamma(l[i] - m[j] + theta) - log_gamma(l[i] - m[j] + 1);
    return std::exp(log_v);
}

double dual_correction(const Partition& lambda, double theta) {
    if (theta <= 0) throw std::invalid_argument("need theta > 0");
    double v = 1;
    for (int i = 1; i <= lambda.n_parts(); ++i) {
        for (int j = 1; j <= lambda.part(i); ++j) {
            double al = lambda.arm(i, j) + theta * lambda.leg(i, j);
            v *= (al + theta) / (al + 1);
        }
    }
    return v;
}

double dual_jack_principal(const Partition& lambda, int N, double theta) {
    if (N < 1) throw std::invalid_argument("need N >= 1");
    if (theta <= 0) throw std::invalid_argument("need theta > 0");
    if (lambda.n_parts() > N) return 0.0;
    if (lambda.weight() == 0) return 1.0;

    double log_v = 0;
    for (int i = 1; i <= N; ++i) log_v -= log_gamma(i * theta);
    for (int i = 1; i <= N; ++i) {
        double li = lambda.part(i) - i * theta;
        log_v += log_gamma(li + theta * N + theta) - log_gamma(li + theta * N + 1);
        for (int j = i + 1; j <= N; ++j) {
            double d = lambda.part(i) - lambda.part(j) + (j - i) * theta;
            log_v += log_gamma(d + 1) - log_gamma(d + 1 - theta);
        }
    }
    return std::exp(log_v);
}

namespace {

// Sums prod of skew factors over all interlacing chains below `level` (given
// as a padded row vector), recursing one row count at a time.
double chain_sum(const std::vector<int>& level, double theta) {
    int rows = static_cast<int>(level.size());
    if (rows <= 1) return 1.0;

    Partition upper(level);
    std::vector<int> lower(rows - 1);
    double total = 0;
    // Odometer over mu_i in [level[i+1], level[i]].
    for (int i = 0; i < rows - 1; ++i) lower[i] = level[i + 1];
    for (;;) {
        total += skew_jack_one(upper, Partition(lower), theta) * chain_sum(lower, theta);
        int i = rows - 2;
        while (i >= 0 && lower[i] == level[i]) {
            lower[i] = level[i + 1];
            --i;
        }
        if (i < 0) break;
        ++lower[i];
        // Restore weak decrease: entries right of i were reset to their minima,
        // which are automatically <= lower[i].
    }
    return total;
}

}  // namespace

double verify_branching(const Partition& lambda, int N, double theta) {
    if (lambda.n_parts() > N) throw std::invalid_argument("lambda has more than N parts");
    double closed = jack_principal(lambda, N, theta);
    std::vector<int> top(N);
    for (int i = 1; i <= N; ++i) top[i - 1] = lambda.part(i);
    double summed = chain_sum(top, theta);
    return std::abs(closed - summed) / closed;
}

CauchyCheck verify_cauchy(int N, double theta, double q, int truncation) {
    if (N < 1) throw std::invalid_argument("need N >= 1");
    if (theta <= 0) throw std::invalid_argument("need theta > 0");
    if (q < 0 || q >= 1) throw std::invalid_argument("need q in [0,1)");
    if (truncation < 1) throw std::invalid_argument("need truncation >= 1");

    // Shell sums by |lambda|; shells up to |lambda| = truncation are complete
    // inside the box since lambda_1 <= |lambda|.
    std::vector<double> shell(static_cast<std::size_t>(N) * truncation + 1, 0.0);
    std::int64_t n_terms = 0;
    SignatureEnumerator en(N, truncation);
    do {
        std::vector<int> parts = en.current().parts;
        Partition lam(std::move(parts));
        int w = lam.weight();
        shell[w] += std::pow(q, w) * jack_principal(lam, N, theta) *
                    dual_jack_principal(lam, N, theta);
        ++n_terms;
    } while (en.next());

    CauchyCheck out;
    for (double a : shell) out.truncated_sum += a;
    out.target = std::pow(1 - q, -theta * N * N);
    out.residual = std::abs(out.truncated_sum - out.target);

    // Complete shells decay asymptotically like q*(theta N^2 + s)/(s + 1) per
    // step; rho bounds that ratio for every s >= truncation.
    int T = truncation;
    double rho = q * std::max(1.0, (theta * N * N + T) / (T + 1));
    // Cross-check against the last few observed complete-shell ratios.
    for (int s = std::max(0, T - 5); s < T; ++s) {
        if (shell[s] > 0 && shell[s + 1] / shell[s] > rho * (1 + 1e-9))
            rho = shell[s + 1] / shell[s];
    }
    out.shell_ratio = rho;
    out.geometric_tail = rho < 1 ? shell[T] * rho / (1 - rho)
                                 : std::numeric_limits<double>::infinity();
    double scale = std::max(std::abs(out.truncated_sum), std::abs(out.target));
    out.roundoff_allowance = (static_cast<double>(n_terms) + 200.0) * 1e-15 * scale;
    out.tail_bound = out.geometric_tail + out.roundoff_allowance;
    out.within_bound = out.residual <= out.tail_bound;
    return out;
}

}  // namespace corners
