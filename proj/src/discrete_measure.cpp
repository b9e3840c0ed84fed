#include "cornerslab/discrete_measure.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace corners {

cplx LogWeight::value() const { return phase * std::exp(log_modulus); }

LogWeight log_eval(const Weight& w, double theta, int a, int b) {
    const double x = a - b * theta;
    LogWeight out;
    if (const auto* g = std::get_if<GeometricWeight>(&w)) {
        if (g->q == cplx{0.0, 0.0})
            throw std::invalid_argument("log_eval: geometric base must be nonzero");
        out.log_modulus = x * std::log(std::abs(g->q));
        const double arg = std::arg(g->q);
        out.phase = std::polar(1.0, x * arg);
    } else if (const auto* e = std::get_if<ExpPolynomialWeight>(&w)) {
        double v = 0.0;
        for (auto it = e->coeffs.rbegin(); it != e->coeffs.rend(); ++it) v = v * x + *it;
        out.log_modulus = v;
    } else if (const auto* gr = std::get_if<GammaRatioWeight>(&w)) {
        if (!(gr->q > 0.0))
            throw std::invalid_argument("log_eval: Gamma-ratio weight needs q > 0");
        out.log_modulus = x * std::log(gr->q) - log_gamma(x + gr->alpha) - log_gamma(gr->beta - x);
    } else {
        const auto& tab = std::get<TabulatedWeight>(w);
        auto it = tab.values.find({a, b});
        if (it == tab.values.end())
            throw std::invalid_argument("log_eval: lattice point outside tabulated domain");
        const cplx v = it->second;
        const double m = std::abs(v);
        if (m == 0.0)
            throw std::invalid_argument("log_eval: tabulated weight vanishes at a lattice point");
        out.log_modulus = std::log(m);
        out.phase = v / m;
    }
    return out;
}

cplx weight_ratio(const Weight& w, double theta, int a1, int b1, int a0, int b0) {
    const LogWeight num = log_eval(w, theta, a1, b1);
    const LogWeight den = log_eval(w, theta, a0, b0);
    return num.phase * std::conj(den.phase) * std::exp(num.log_modulus - den.log_modulus);
}

MeasureSpec MeasureSpec::uniform(double theta, int N, int k, int M) {
    MeasureSpec s;
    s.theta = theta;
    s.N = N;
    s.k = k;
    s.M = M;
    s.weights.assign(N - k + 1, GeometricWeight{cplx{1.0, 0.0}});
    return s;
}

MeasureSpec MeasureSpec::top_weight(double theta, int N, int k, int M, Weight w_top) {
    MeasureSpec s = uniform(theta, N, k, M);
    s.weights[N - k] = std::move(w_top);
    return s;
}

namespace {

void check_dims(const MeasureSpec& spec, const CornersPattern& p) {
    if (p.N != spec.N || p.k != spec.k || p.M != spec.M || p.theta != spec.theta ||
        static_cast<int>(spec.weights.size()) != spec.N - spec.k + 1)
        throw std::invalid_argument("pattern/spec dimension mismatch");
}

// streaming log-sum-exp with online rescaling; tracks sum|term| for the
// degenerate-Z refusal
class StreamingLogSum {
  public:
    void add(double lm, cplx factor) {
        if (lm > shift_) {
            const double r = std::exp(shift_ - lm);
            acc_ *= r;
            abs_acc_ *= r;
            shift_ = lm;
        }
        const double e = std::exp(lm - shift_);
        acc_ += e * factor;
        abs_acc_ += e * std::abs(factor);
    }
    cplx scaled() const { return acc_; }
    double abs_scaled() const { return abs_acc_; }
    double shift() const { return shift_; }
    cplx total() const { return acc_ * std::exp(shift_); }

  private:
    double shift_ = -std::numeric_limits<double>::infinity();
    cplx acc_{0.0, 0.0};
    double abs_acc_ = 0.0;
};

constexpr double kDegenerateZ = 1e-8;

}  // namespace

LogWeight log_weight(const MeasureSpec& spec, const CornersPattern& p) {
    check_dims(spec, p);
    const double th = spec.theta;
    const int N = spec.N, k = spec.k;

    double lm = 0.0;
    cplx phase{1.0, 0.0};
    auto gamma_ratio = [&lm](double num, double den) { lm += log_gamma(num) - log_gamma(den); };
    auto weight_factor = [&](int j, int a, int b) {
        const LogWeight lw = log_eval(spec.weight(j), th, a, b);
        lm += lw.log_modulus;
        phase *= lw.phase;
    };

    // H^t on the top level
    for (int q = 2; q <= N; ++q)
        for (int pp = 1; pp < q; ++pp) {
            const double d = p.ell(N, pp) - p.ell(N, q);
            gamma_ratio(d + 1.0, d + 1.0 - th);
        }
    for (int pp = 1; pp <= N; ++pp) weight_factor(N, p.level(N).parts[pp - 1], pp);

    // H^b on the bottom level
    for (int q = 2; q <= k; ++q)
        for (int pp = 1; pp < q; ++pp) {
            const double d = p.ell(k, pp) - p.ell(k, q);
            gamma_ratio(d + th, d);
        }

    // transition blocks I(l^{j+1}, l^j)
    for (int j = k; j <= N - 1; ++j) {
        for (int q = 2; q <= j + 1; ++q)
            for (int pp = 1; pp < q; ++pp) {
                const double d = p.ell(j + 1, pp) - p.ell(j + 1, q);
                gamma_ratio(d + 1.0 - th, d);
            }
        for (int q = 2; q <= j; ++q)
            for (int pp = 1; pp < q; ++pp) {
                const double d = p.ell(j, pp) - p.ell(j, q);
                gamma_ratio(d + 1.0, d + th);
            }
        for (int q = 2; q <= j + 1; ++q)
            for (int pp = 1; pp < q; ++pp) {
                const double c = p.ell(j, pp) - p.ell(j + 1, q);
                gamma_ratio(c, c + 1.0 - th);
            }
        for (int pp = 1; pp <= j; ++pp)
            for (int q = pp; q <= j; ++q) {
                const double c = p.ell(j + 1, pp) - p.ell(j, q);
                gamma_ratio(c + th, c + 1.0);
            }
        for (int pp = 1; pp <= j; ++pp) weight_factor(j, p.level(j).parts[pp - 1], pp);
    }

    return LogWeight{lm, phase};
}

cplx partition_function(const MeasureSpec& spec) {
    StreamingLogSum z;
    auto e = enumerate_patterns(spec.theta, spec.N, spec.k, spec.M);
    do {
        const LogWeight lw = log_weight(spec, e.current());
        z.add(lw.log_modulus, lw.phase);
    } while (e.next());
    return z.total();
}

cplx expectation(const MeasureSpec& spec,
                 const std::function<cplx(const CornersPattern&)>& obs) {
    StreamingLogSum num, den;
    auto e = enumerate_patterns(spec.theta, spec.N, spec.k, spec.M);
    do {
        const LogWeight lw = log_weight(spec, e.current());
        den.add(lw.log_modulus, lw.phase);
        num.add(lw.log_modulus, lw.phase * obs(e.current()));
    } while (e.next());
    if (std::abs(den.scaled()) < kDegenerateZ * den.abs_scaled())
        throw std::runtime_error("expectation: partition function numerically degenerate "
                                 "(|Z| below 1e-8 of the total weight mass)");
    return num.scaled() / den.scaled() * std::exp(num.shift() - den.shift());
}

namespace {

// prod over p in [from, to] \ {skip} of (s - ells[p-1] + cnum) / (s - ells[p-1] + cden)
cplx frac_product(const std::vector<double>& ells, int from, int to, int skip, double s,
                  double cnum, double cden) {
    cplx out{1.0, 0.0};
    for (int p = from; p <= to; ++p) {
        if (p == skip) continue;
        const double l = ells[p - 1];
        out *= (s - l + cnum) / (s - l + cden);
    }
    return out;
}

std::vector<double> ells_of(const CornersPattern& pat, int j) {
    std::vector<double> out(j);
    for (int i = 1; i <= j; ++i) out[i - 1] = pat.ell(j, i);
    return out;
}

// the four single-shift factor ratios, each for the move s -> s-1 at (level, i)

cplx ht_rat(const MeasureSpec& spec, const CornersPattern& pat, int i, double s, int a) {
    const int N = spec.N;
    const auto ln = ells_of(pat, N);
    return frac_product(ln, 1, i - 1, 0, s, -1.0, spec.theta - 1.0) *
           frac_product(ln, i + 1, N, 0, s, -spec.theta, 0.0) *
           weight_ratio(spec.weight(N), spec.theta, a - 1, i, a, i);
}

cplx hb_rat(const MeasureSpec& spec, const CornersPattern& pat, int i, double s) {
    const int k = spec.k;
    const auto lk = ells_of(pat, k);
    return frac_product(lk, 1, i - 1, 0, s, -spec.theta, 0.0) *
           frac_product(lk, i + 1, k, 0, s, -1.0, spec.theta - 1.0);
}

// shift in the upper member of the pair (j+1, j); no weight factor
cplx ileft_rat(const MeasureSpec& spec, const CornersPattern& pat, int j, int i, double s) {
    const double th = spec.theta;
    const auto lu = ells_of(pat, j + 1);
    const auto ll = ells_of(pat, j);
    return frac_product(lu, 1, i - 1, 0, s, th - 1.0, 0.0) *
           frac_product(lu, i + 1, j + 1, 0, s, -1.0, -th) *
           frac_product(ll, 1, j, 0, s, 0.0, th - 1.0);
}

// shift in the lower member of the pair (j+1, j); carries w_j(s-1)/w_j(s)
cplx iright_rat(const MeasureSpec& spec, const CornersPattern& pat, int j, int i, double s,
                int a) {
    const double th = spec.theta;
    const auto lu = ells_of(pat, j + 1);
    const auto ll = ells_of(pat, j);
    return frac_product(ll, 1, i - 1, 0, s, -1.0, -th) *
           frac_product(ll, i + 1, j, 0, s, th - 1.0, 0.0) *
           frac_product(lu, 1, j + 1, 0, s, -th, -1.0) *
           weight_ratio(spec.weight(j), th, a - 1, i, a, i);
}

cplx single_site_down(const MeasureSpec& spec, const CornersPattern& pat, int j, int i) {
    const double s = pat.ell(j, i);
    const int a = pat.level(j).parts[i - 1];
    const int N = spec.N, k = spec.k;
    if (N == k) return ht_rat(spec, pat, i, s, a) * hb_rat(spec, pat, i, s);
    if (j == N) return ht_rat(spec, pat, i, s, a) * ileft_rat(spec, pat, N - 1, i, s);
    if (j == k) return hb_rat(spec, pat, i, s) * iright_rat(spec, pat, k, i, s, a);
    return ileft_rat(spec, pat, j - 1, i, s) * iright_rat(spec, pat, j, i, s, a);
}

}  // namespace

std::optional<CornersPattern> apply_move(const CornersPattern& p, const Move& move) {
    CornersPattern out = p;
    if (const auto* h = std::get_if<HorizontalMove>(&move)) {
        for (int j = h->j2; j <= h->j1; ++j) out.level(j).parts[h->i - 1] += h->direction;
    } else {
        const auto& d = std::get<DiagonalMove>(move);
        for (int m = d.j2; m <= d.j1; ++m) out.level(m).parts[d.i + m - d.j2 - 1] += d.direction;
    }
    if (!out.valid()) return std::nullopt;
    return out;
}

namespace {

cplx horizontal_down_ratio(const MeasureSpec& spec, const CornersPattern& pat,
                           int i, int j1, int j2) {
    const double th = spec.theta;
    const int N = spec.N, k = spec.k;
    const double s = pat.ell(j2, i);
    const int a = pat.level(j2).parts[i - 1];

    cplx w{1.0, 0.0};
    for (int j = j2; j <= j1; ++j) w *= weight_ratio(spec.weight(j), th, a - 1, i, a, i);

    if (j1 < N && j2 > k) {
        return w * frac_product(ells_of(pat, j1), 1, j1, i, s, th - 1.0, 0.0) *
               frac_product(ells_of(pat, j2), 1, j2, i, s, -1.0, -th) *
               frac_product(ells_of(pat, j2 - 1), 1, j2 - 1, 0, s, 0.0, th - 1.0) *
               frac_product(ells_of(pat, j1 + 1), 1, j1 + 1, 0, s, -th, -1.0);
    }
    if (j1 == N && j2 > k) {
        return w * frac_product(ells_of(pat, N), 1, N, i, s, -th, 0.0) *
               frac_product(ells_of(pat, j2), 1, j2, i, s, -1.0, -th) *
               frac_product(ells_of(pat, j2 - 1), 1, j2 - 1, 0, s, 0.0, th - 1.0);
    }
    if (j1 < N && j2 == k) {
        return w * frac_product(ells_of(pat, j1), 1, j1, i, s, th - 1.0, 0.0) *
               frac_product(ells_of(pat, j1 + 1), 1, j1 + 1, 0, s, -th, -1.0) *
               frac_product(ells_of(pat, k), 1, k, i, s, -1.0, th - 1.0);
    }
    return w * frac_product(ells_of(pat, N), 1, N, i, s, -th, 0.0) *
           frac_product(ells_of(pat, k), 1, k, i, s, -1.0, th - 1.0);
}

cplx diagonal_down_ratio(const MeasureSpec& spec, const CornersPattern& pat,
                         int i, int j1, int j2) {
    const double th = spec.theta;
    const int N = spec.N, k = spec.k;
    const double s = pat.ell(j2, i);
    const int a = pat.level(j2).parts[i - 1];
    const double drop = th * (j1 - j2);  // staircase depth at the top of the string

    cplx w{1.0, 0.0};
    for (int j = j2; j <= j1; ++j)
        w *= weight_ratio(spec.weight(j), th, a - 1, i + j - j2, a, i + j - j2);

    if (j1 < N && j2 > k) {
        return w * frac_product(ells_of(pat, j1), 1, j1, i + j1 - j2, s, -drop - 1.0, -drop - th) *
               frac_product(ells_of(pat, j2), 1, j2, i, s, th - 1.0, 0.0) *
               frac_product(ells_of(pat, j2 - 1), 1, j2 - 1, 0, s, 0.0, th - 1.0) *
               frac_product(ells_of(pat, j1 + 1), 1, j1 + 1, 0, s, -drop - th, -drop - 1.0);
    }
    if (j1 == N && j2 > k) {
        return w * frac_product(ells_of(pat, j2), 1, j2, i, s, th - 1.0, 0.0) *
               frac_product(ells_of(pat, N), 1, N, i + N - j2, s, -drop - 1.0,
                            -th * (N - j2 - 1) - 1.0) *
               frac_product(ells_of(pat, j2 - 1), 1, j2 - 1, 0, s, 0.0, th - 1.0);
    }
    if (j1 < N && j2 == k) {
        return w * frac_product(ells_of(pat, j1 + 1), 1, j1 + 1, 0, s, -drop - th, -drop - 1.0) *
               frac_product(ells_of(pat, j1), 1, j1, i + j1 - k, s, -drop - 1.0, -drop - th) *
               frac_product(ells_of(pat, k), 1, k, i, s, -th, 0.0);
    }
    return w * frac_product(ells_of(pat, N), 1, N, i + N - k, s, -drop - 1.0,
                            -th * (N - k - 1) - 1.0) *
           frac_product(ells_of(pat, k), 1, k, i, s, -th, 0.0);
}

}  // namespace

RatioResult shift_ratio(const MeasureSpec& spec, const CornersPattern& p, const Move& move) {
    check_dims(spec, p);
    const int N = spec.N, k = spec.k;

    int i, j1, j2, direction;
    bool horizontal;
    if (const auto* h = std::get_if<HorizontalMove>(&move)) {
        i = h->i;
        j1 = h->j1;
        j2 = h->j2;
        direction = h->direction;
        horizontal = true;
    } else {
        const auto& d = std::get<DiagonalMove>(move);
        i = d.i;
        j1 = d.j1;
        j2 = d.j2;
        direction = d.direction;
        horizontal = false;
    }
    if (direction != -1 && direction != 1)
        throw std::invalid_argument("shift_ratio: direction must be -1 or +1");
    if (i < 1 || j2 > j1 || j1 > N || j2 < std::max(k, i))
        throw std::invalid_argument("shift_ratio: need N >= j1 >= j2 >= max(k, i), i >= 1");

    // the moved coordinates must sit on a common value
    const int a = p.level(j2).parts[i - 1];
    for (int j = j2; j <= j1; ++j) {
        const int idx = horizontal ? i : i + (j - j2);
        if (p.level(j).parts[idx - 1] != a)
            throw std::invalid_argument("shift_ratio: string precondition not met");
    }

    auto shifted = apply_move(p, move);
    if (!shifted) return RatioResult{true, cplx{0.0, 0.0}};

    if (direction == -1) {
        const cplx r = horizontal ? horizontal_down_ratio(spec, p, i, j1, j2)
                                  : diagonal_down_ratio(spec, p, i, j1, j2);
        return RatioResult{false, r};
    }
    // up move: reciprocal of the down ratio evaluated from the shifted stack
    const cplx r = horizontal ? horizontal_down_ratio(spec, *shifted, i, j1, j2)
                              : diagonal_down_ratio(spec, *shifted, i, j1, j2);
    return RatioResult{false, 1.0 / r};
}

RatioResult single_site_ratio(const MeasureSpec& spec, const CornersPattern& p,
                              int j, int i, int direction) {
    check_dims(spec, p);
    if (j < spec.k || j > spec.N || i < 1 || i > j)
        throw std::invalid_argument("single_site_ratio: site out of range");
    if (direction != -1 && direction != 1)
        throw std::invalid_argument("single_site_ratio: direction must be -1 or +1");

    CornersPattern shifted = p;
    shifted.level(j).parts[i - 1] += direction;
    if (!shifted.valid()) return RatioResult{true, cplx{0.0, 0.0}};

    if (direction == -1) return RatioResult{false, single_site_down(spec, p, j, i)};
    return RatioResult{false, 1.0 / single_site_down(spec, shifted, j, i)};
}

McmcSampler::McmcSampler(const MeasureSpec& spec, std::uint64_t seed)
    : spec_(spec), rng_(seed) {
    state_.theta = spec.theta;
    state_.N = spec.N;
    state_.k = spec.k;
    state_.M = spec.M;
    state_.levels.resize(spec.N - spec.k + 1);
    for (int j = spec.k; j <= spec.N; ++j) {
        state_.level(j).parts.assign(j, 0);
        state_.level(j).M = spec.M;
    }
    for (int j = spec.k; j <= spec.N; ++j) total_sites_ += j;
}

void McmcSampler::step() {
    // uniform site (j, i), uniform direction
    int r = static_cast<int>(rng_.next_below(static_cast<std::uint64_t>(total_sites_)));
    int j = spec_.k;
    while (r >= j) {
        r -= j;
        ++j;
    }
    const int i = r + 1;
    const int direction = rng_.next_below(2) == 0 ? -1 : 1;

    const RatioResult rr = single_site_ratio(spec_, state_, j, i, direction);
    if (rr.rejected) return;
    const double ratio = rr.ratio.real();
    if (ratio >= 1.0 || rng_.next_double() < ratio) {
        state_.level(j).parts[i - 1] += direction;
        ++accepted_;
    }
}

std::vector<CornersPattern> mcmc_sample(const MeasureSpec& spec, long chain_length,
                                        long burn_in, std::uint64_t seed) {
    McmcSampler sampler(spec, seed);
    for (long t = 0; t < burn_in; ++t) sampler.step();
    std::vector<CornersPattern> out;
    out.reserve(chain_length);
    for (long t = 0; t < chain_length; ++t) {
        sampler.step();
        out.push_back(sampler.state());
    }
    return out;
}

std::map<std::vector<int>, cplx> marginal_measure(const MeasureSpec& spec, int m) {
    if (spec.k != 1 || m < 1 || m > spec.N)
        throw std::invalid_argument("marginal_measure: need k = 1 and 1 <= m <= N");

    // pass 1: global max log-modulus for stable scaling
    double shift = -std::numeric_limits<double>::infinity();
    {
        auto e = enumerate_patterns(spec.theta, spec.N, spec.k, spec.M);
        do {
            shift = std::max(shift, log_weight(spec, e.current()).log_modulus);
        } while (e.next());
    }

    std::map<std::vector<int>, cplx> table;
    cplx zs{0.0, 0.0};
    double abs_zs = 0.0;
    auto e = enumerate_patterns(spec.theta, spec.N, spec.k, spec.M);
    do {
        const auto& pat = e.current();
        const LogWeight lw = log_weight(spec, pat);
        const cplx wv = lw.phase * std::exp(lw.log_modulus - shift);
        zs += wv;
        abs_zs += std::abs(wv);
        std::vector<int> key;
        for (int j = spec.N; j >= m; --j)
            key.insert(key.end(), pat.level(j).parts.begin(), pat.level(j).parts.end());
        table[key] += wv;
    } while (e.next());

    if (std::abs(zs) < kDegenerateZ * abs_zs)
        throw std::runtime_error("marginal_measure: partition function numerically degenerate");
    for (auto& [key, val] : table) val /= zs;
    return table;
}

MaterializedMeasure::MaterializedMeasure(const MeasureSpec& spec) : spec_(spec) {
    std::vector<double> lms;
    std::vector<cplx> phases;
    auto e = enumerate_patterns(spec.theta, spec.N, spec.k, spec.M);
    do {
        patterns_.push_back(e.current());
        const LogWeight lw = log_weight(spec, e.current());
        lms.push_back(lw.log_modulus);
        phases.push_back(lw.phase);
    } while (e.next());

    double shift = -std::numeric_limits<double>::infinity();
    for (double lm : lms) shift = std::max(shift, lm);

    prob_.resize(patterns_.size());
    cplx zs{0.0, 0.0};
    double abs_zs = 0.0;
    for (size_t idx = 0; idx < patterns_.size(); ++idx) {
        prob_[idx] = phases[idx] * std::exp(lms[idx] - shift);
        zs += prob_[idx];
        abs_zs += std::abs(prob_[idx]);
    }
    if (std::abs(zs) < kDegenerateZ * abs_zs)
        throw std::runtime_error("MaterializedMeasure: partition function numerically degenerate");
    for (auto& pv : prob_) pv /= zs;
    Z_ = zs * std::exp(shift);

    ells_.resize(patterns_.size());
    for (size_t idx = 0; idx < patterns_.size(); ++idx) {
        ells_[idx].resize(spec.N - spec.k + 1);
        for (int j = spec.k; j <= spec.N; ++j) ells_[idx][j - spec.k] = ells_of(patterns_[idx], j);
    }
}

}  // namespace corners
