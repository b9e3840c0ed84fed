#include "cornerslab/continuous.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "cornerslab/cumulants.hpp"
#include "cornerslab/discrete_measure.hpp"
#include "cornerslab/rng.hpp"
#include "json.hpp"

namespace corners {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr int kGridCells = 512;
constexpr int kBatches = 20;

void check_spec(const ContinuousSpec& spec) {
    if (!(spec.theta > 0.0)) throw std::invalid_argument("theta must be positive");
    if (spec.N < 1 || spec.k < 1 || spec.k > spec.N)
        throw std::invalid_argument("need 1 <= k <= N");
    if (!(spec.a_minus < spec.a_plus)) throw std::invalid_argument("need a_minus < a_plus");
}

int stack_size_for(int N, int k) { return (N * (N + 1) - (k - 1) * k) / 2; }

// warp [0,1] -> [0,1] with quadratic clustering at both ends, so the grid
// resolves the integrable endpoint singularities of the conditionals
const std::array<double, kGridCells + 1>& grid_warp() {
    static const std::array<double, kGridCells + 1> w = [] {
        std::array<double, kGridCells + 1> a{};
        for (int c = 0; c <= kGridCells; ++c) {
            double s = double(c) / kGridCells;
            a[c] = s - std::sin(2.0 * kPi * s) / (2.0 * kPi);
        }
        a[0] = 0.0;
        a[kGridCells] = 1.0;
        return a;
    }();
    return w;
}

template <typename F>
double grid_draw(Rng& rng, double lo, double hi, F&& log_f) {
    const auto& warp = grid_warp();
    const double span = hi - lo;
    std::array<double, kGridCells + 1> edge;
    for (int c = 0; c <= kGridCells; ++c) edge[c] = lo + span * warp[c];
    std::array<double, kGridCells> logv;
    double mx = -std::numeric_limits<double>::infinity();
    for (int c = 0; c < kGridCells; ++c) {
        logv[c] = log_f(0.5 * (edge[c] + edge[c + 1]));
        mx = std::max(mx, logv[c]);
    }
    double total = 0.0;
    std::array<double, kGridCells> mass;
    for (int c = 0; c < kGridCells; ++c) {
        mass[c] = std::exp(logv[c] - mx) * (edge[c + 1] - edge[c]);
        total += mass[c];
    }
    double target = rng.next_double() * total;
    int c = 0;
    double cum = 0.0;
    for (; c < kGridCells - 1; ++c) {
        if (cum + mass[c] >= target) break;
        cum += mass[c];
    }
    double frac = mass[c] > 0.0 ? (target - cum) / mass[c] : 0.5;
    frac = std::clamp(frac, 0.0, 1.0);
    double u = edge[c] + frac * (edge[c + 1] - edge[c]);
    double eps = 1e-12 * span;
    return std::clamp(u, lo + eps, hi - eps);
}

double lag1_autocorr(const std::vector<double>& f) {
    const int n = int(f.size());
    if (n < 3) return 0.0;
    double m = 0.0;
    for (double v : f) m += v;
    m /= n;
    double num = 0.0, den = 0.0;
    for (int s = 0; s < n; ++s) {
        den += (f[s] - m) * (f[s] - m);
        if (s + 1 < n) num += (f[s] - m) * (f[s + 1] - m);
    }
    return den > 0.0 ? num / den : 0.0;
}

double ellipse_coordinate(const ContourSpec& c, cplx z) {
    double dx = (z.real() - c.center.real()) / c.semi_axis_x;
    double dy = (z.imag() - c.center.imag()) / c.semi_axis_y;
    return dx * dx + dy * dy;
}

}  // namespace

double Potential::operator()(double y) const {
    double v = 0.0;
    for (std::size_t i = coeffs.size(); i-- > 0;) v = v * y + coeffs[i];
    return v;
}

cplx Potential::operator()(cplx z) const {
    cplx v{0.0, 0.0};
    for (std::size_t i = coeffs.size(); i-- > 0;) v = v * z + coeffs[i];
    return v;
}

double Potential::derivative(double y) const {
    double v = 0.0;
    for (std::size_t i = coeffs.size(); i-- > 1;) v = v * y + double(i) * coeffs[i];
    return v;
}

cplx Potential::derivative(cplx z) const {
    cplx v{0.0, 0.0};
    for (std::size_t i = coeffs.size(); i-- > 1;) v = v * z + double(i) * coeffs[i];
    return v;
}

double log_density(const ContinuousSpec& spec, const LevelStack& y) {
    check_spec(spec);
    const int N = spec.N, k = spec.k;
    const double th = spec.theta;
    if (int(y.size()) != N - k + 1) throw std::invalid_argument("level count mismatch");
    for (int j = k; j <= N; ++j)
        if (int(y[j - k].size()) != j) throw std::invalid_argument("level size mismatch");

    const double ninf = -std::numeric_limits<double>::infinity();
    for (const auto& level : y)
        for (std::size_t i = 0; i + 1 < level.size(); ++i)
            if (!(level[i] < level[i + 1])) return ninf;
    for (int j = k + 1; j <= N; ++j) {
        const auto& upper = y[j - k];
        const auto& lower = y[j - 1 - k];
        for (int i = 0; i + 1 < j; ++i)
            if (!(upper[i] < lower[i] && lower[i] < upper[i + 1])) return ninf;
    }
    const auto& top = y[N - k];
    if (!(spec.a_minus < top.front() && top.back() < spec.a_plus)) return ninf;

    double s = 0.0;
    for (int j = 1; j <= k; ++j) s += j * log_gamma(th) - log_gamma(j * th);
    for (int i = 0; i < N; ++i)
        for (int j = i + 1; j < N; ++j) s += std::log(top[j] - top[i]);
    const auto& bottom = y[0];
    for (int i = 0; i < k; ++i)
        for (int j = i + 1; j < k; ++j) s += (2.0 * th - 1.0) * std::log(bottom[j] - bottom[i]);
    for (int j = k; j <= N - 1; ++j) {
        const auto& a = y[j - k];
        const auto& b = y[j + 1 - k];
        for (int p = 0; p < j; ++p)
            for (int q = p + 1; q < j; ++q) s += (2.0 - 2.0 * th) * std::log(a[q] - a[p]);
        for (int p = 0; p < j; ++p)
            for (int q = 0; q <= j; ++q) s += (th - 1.0) * std::log(std::abs(a[p] - b[q]));
    }
    for (int i = 0; i < N; ++i) s -= double(N) * th * spec.V(top[i]);
    return s;
}

JacobiRule jacobi_rule(int n, double alpha, double beta) {
    if (n < 1) throw std::invalid_argument("rule size must be positive");
    if (!(alpha > -1.0) || !(beta > -1.0))
        throw std::invalid_argument("jacobi exponents must exceed -1");
    const double ab = alpha + beta;
    Eigen::MatrixXd J = Eigen::MatrixXd::Zero(n, n);
    J(0, 0) = (beta - alpha) / (ab + 2.0);
    for (int i = 1; i < n; ++i) {
        double two = 2.0 * i + ab;
        J(i, i) = (beta * beta - alpha * alpha) / (two * (two + 2.0));
        double b = i == 1 ? 4.0 * (alpha + 1.0) * (beta + 1.0) / ((ab + 2.0) * (ab + 2.0) * (ab + 3.0))
                          : 4.0 * i * (i + alpha) * (i + beta) * (i + ab) /
                                (two * two * (two + 1.0) * (two - 1.0));
        J(i, i - 1) = J(i - 1, i) = std::sqrt(b);
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(J);
    double mu0 = std::exp((ab + 1.0) * std::log(2.0) + log_gamma(alpha + 1.0) +
                          log_gamma(beta + 1.0) - log_gamma(ab + 2.0));
    JacobiRule rule;
    rule.nodes.resize(n);
    rule.weights.resize(n);
    for (int i = 0; i < n; ++i) {
        rule.nodes[i] = es.eigenvalues()(i);
        double v = es.eigenvectors()(0, i);
        rule.weights[i] = mu0 * v * v;
    }
    return rule;
}

double verify_dixon_anderson(const std::vector<double>& x, double theta) {
    const int n = int(x.size());
    if (n < 2) throw std::invalid_argument("need at least two outer nodes");
    if (!(theta > 0.0)) throw std::invalid_argument("theta must be positive");
    for (int i = 0; i + 1 < n; ++i)
        if (!(x[i] < x[i + 1])) throw std::invalid_argument("outer nodes must increase strictly");
    const int m = n - 1;

    auto evaluate = [&](int nodes) {
        JacobiRule rule = jacobi_rule(nodes, theta - 1.0, theta - 1.0);
        std::vector<int> d(m, 0);
        std::vector<double> y(m);
        double sum = 0.0;
        for (;;) {
            double w = 1.0;
            for (int i = 0; i < m; ++i) {
                double half = 0.5 * (x[i + 1] - x[i]);
                y[i] = x[i] + half * (1.0 + rule.nodes[d[i]]);
                w *= rule.weights[d[i]];
            }
            double f = 1.0;
            for (int i = 0; i < m; ++i)
                for (int j = i + 1; j < m; ++j) f *= y[j] - y[i];
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j)
                    if (j != i && j != i + 1) f *= std::pow(std::abs(y[i] - x[j]), theta - 1.0);
            sum += w * f;
            int c = 0;
            while (c < m && ++d[c] == nodes) {
                d[c] = 0;
                ++c;
            }
            if (c == m) break;
        }
        double scale = 0.0;
        for (int i = 0; i < m; ++i) scale += (2.0 * theta - 1.0) * std::log(0.5 * (x[i + 1] - x[i]));
        return sum * std::exp(scale);
    };

    double prev = evaluate(16);
    double lhs = evaluate(32);
    for (int nodes = 64;
         nodes <= 256 && std::abs(lhs - prev) > 1e-10 * std::max(1.0, std::abs(lhs)); nodes *= 2) {
        prev = lhs;
        lhs = evaluate(nodes);
    }

    double lr = double(n) * log_gamma(theta) - log_gamma(double(n) * theta);
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) lr += (2.0 * theta - 1.0) * std::log(x[j] - x[i]);
    double rhs = std::exp(lr);
    return std::abs(lhs - rhs) / std::abs(rhs);
}

int SampleBatch::stack_size() const { return stack_size_for(N, k); }

double SampleBatch::y(int sample, int level, int i) const {
    if (sample < 0 || sample >= count) throw std::out_of_range("sample index");
    if (level < k || level > N) throw std::out_of_range("level index");
    if (i < 1 || i > level) throw std::out_of_range("coordinate index");
    int off = ((level - 1) * level - (k - 1) * k) / 2;
    return data[std::size_t(sample) * stack_size() + off + (i - 1)];
}

SampleBatch SampleBatch::head(int m) const {
    if (m < 1 || m > count) throw std::invalid_argument("prefix length out of range");
    SampleBatch b = *this;
    b.count = m;
    b.data.assign(data.begin(), data.begin() + std::size_t(m) * stack_size());
    return b;
}

SampleBatch sample(const ContinuousSpec& spec, int n_samples, int burn_in, std::uint64_t seed) {
    check_spec(spec);
    if (n_samples < 1) throw std::invalid_argument("need at least one sample");
    if (burn_in < 0) throw std::invalid_argument("burn_in must be nonnegative");

    const int N = spec.N, k = spec.k;
    const double th = spec.theta;
    const double span = spec.a_plus - spec.a_minus;
    const bool single = (k == N);
    Rng rng(seed);

    // chain state: full stack down to level 1 when k < N, just the top level
    // when k == N; st[j-1] holds level j ascending
    std::vector<std::vector<double>> st;
    if (single) {
        st.resize(1);
        st[0].resize(N);
        for (int i = 1; i <= N; ++i) st[0][i - 1] = spec.a_minus + span * i / (N + 1);
    } else {
        st.resize(N);
        for (int j = 1; j <= N; ++j) st[j - 1].resize(j);
        for (int i = 1; i <= N; ++i) st[N - 1][i - 1] = spec.a_minus + span * i / (N + 1);
        for (int j = N - 1; j >= 1; --j)
            for (int i = 1; i <= j; ++i) st[j - 1][i - 1] = 0.5 * (st[j][i - 1] + st[j][i]);
    }

    const double e_top_same = single ? 2.0 * th : 1.0;
    auto top_logf = [&](double u, int i) {
        double s = -double(N) * th * spec.V(u);
        const auto& t = st.back();
        for (int a = 0; a < N; ++a)
            if (a != i - 1) s += e_top_same * std::log(std::abs(u - t[a]));
        if (!single && N >= 2)
            for (double p : st[N - 2]) s += (th - 1.0) * std::log(std::abs(u - p));
        return s;
    };
    auto top_bounds = [&](int i) {
        double lo = spec.a_minus, hi = spec.a_plus;
        if (single) {
            const auto& t = st[0];
            if (i >= 2) lo = std::max(lo, t[i - 2]);
            if (i <= N - 1) hi = std::min(hi, t[i]);
        } else if (N >= 2) {
            const auto& b = st[N - 2];
            if (i >= 2) lo = std::max(lo, b[i - 2]);
            if (i <= N - 1) hi = std::min(hi, b[i - 1]);
        }
        return std::pair<double, double>{lo, hi};
    };

    const double step = span / (4.0 * N);
    long proposals = 0, accepted = 0;
    auto sweep_top = [&]() {
        for (int i = 1; i <= N; ++i) {
            auto [lo, hi] = top_bounds(i);
            double& u = st.back()[i - 1];
            double up = u + step * (2.0 * rng.next_double() - 1.0);
            ++proposals;
            if (up <= lo || up >= hi) continue;
            double dl = top_logf(up, i) - top_logf(u, i);
            if (dl >= 0.0 || rng.next_double() < std::exp(dl)) {
                u = up;
                ++accepted;
            }
        }
    };

    auto lower_bounds = [&](int j, int i) {
        const auto& up = st[j];
        double lo = up[i - 1], hi = up[i];
        if (j >= 2) {
            const auto& dn = st[j - 2];
            if (i >= 2) lo = std::max(lo, dn[i - 2]);
            if (i <= j - 1) hi = std::min(hi, dn[i - 1]);
        }
        return std::pair<double, double>{lo, hi};
    };
    auto sweep_lower = [&]() {
        for (int j = N - 1; j >= 1; --j) {
            for (int i = 1; i <= j; ++i) {
                auto [lo, hi] = lower_bounds(j, i);
                if (!(hi > lo)) continue;
                if (th == 1.0) {
                    double eps = 1e-12 * (hi - lo);
                    st[j - 1][i - 1] =
                        std::clamp(lo + (hi - lo) * rng.next_double(), lo + eps, hi - eps);
                    continue;
                }
                st[j - 1][i - 1] = grid_draw(rng, lo, hi, [&](double u) {
                    double s = 0.0;
                    if (j >= 2) {
                        const auto& same = st[j - 1];
                        for (int a = 0; a < j; ++a)
                            if (a != i - 1) s += (2.0 - 2.0 * th) * std::log(std::abs(u - same[a]));
                        for (double p : st[j - 2]) s += (th - 1.0) * std::log(std::abs(u - p));
                    }
                    for (double p : st[j]) s += (th - 1.0) * std::log(std::abs(u - p));
                    return s;
                });
            }
        }
    };

    SampleBatch batch;
    batch.theta = th;
    batch.N = N;
    batch.k = k;
    batch.a_minus = spec.a_minus;
    batch.a_plus = spec.a_plus;
    batch.seed = seed;
    batch.count = n_samples;
    const int stack = stack_size_for(N, k);
    batch.data.resize(std::size_t(n_samples) * stack);
    std::vector<double> top_sums;
    top_sums.reserve(n_samples);

    for (int sweep = 0; sweep < burn_in + n_samples; ++sweep) {
        sweep_top();
        if (!single) sweep_lower();
        if (sweep < burn_in) continue;
        double* out = batch.data.data() + std::size_t(sweep - burn_in) * stack;
        if (single) {
            std::copy(st[0].begin(), st[0].end(), out);
        } else {
            for (int j = k; j <= N; ++j) {
                std::copy(st[j - 1].begin(), st[j - 1].end(), out);
                out += j;
            }
        }
        double ts = 0.0;
        for (double v : st.back()) ts += v;
        top_sums.push_back(ts);
    }

    batch.acceptance_rate = proposals > 0 ? double(accepted) / double(proposals) : 0.0;
    batch.autocorr_lag1 = lag1_autocorr(top_sums);
    return batch;
}

cplx sample_stieltjes(const SampleBatch& b, int sample, int level, cplx z) {
    cplx s{0.0, 0.0};
    for (int i = 1; i <= level; ++i) s += 1.0 / (z - b.y(sample, level, i));
    return s;
}

cplx sample_stieltjes_derivative(const SampleBatch& b, int sample, int level, cplx z) {
    cplx s{0.0, 0.0};
    for (int i = 1; i <= level; ++i) {
        cplx w = 1.0 / (z - b.y(sample, level, i));
        s -= w * w;
    }
    return s;
}

void save_batch(const SampleBatch& b, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + path);
    auto put = [&](const void* p, std::size_t n) {
        out.write(static_cast<const char*>(p), std::streamsize(n));
    };
    std::int64_t N = b.N, k = b.k, count = b.count;
    put(&b.theta, 8);
    put(&N, 8);
    put(&k, 8);
    put(&b.a_minus, 8);
    put(&b.a_plus, 8);
    put(&count, 8);
    put(&b.seed, 8);
    put(b.data.data(), b.data.size() * 8);
    if (!out) throw std::runtime_error("short write on " + path);
    out.close();

    nlohmann::json j;
    j["schema"] = 1;
    j["theta"] = b.theta;
    j["N"] = b.N;
    j["k"] = b.k;
    j["a_minus"] = b.a_minus;
    j["a_plus"] = b.a_plus;
    j["count"] = b.count;
    j["seed"] = b.seed;
    j["acceptance_rate"] = b.acceptance_rate;
    j["autocorr_lag1"] = b.autocorr_lag1;
    std::ofstream side(path + ".json", std::ios::trunc);
    if (!side) throw std::runtime_error("cannot open " + path + ".json");
    side << j.dump(2) << '\n';
}

SampleBatch load_batch(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    SampleBatch b;
    std::int64_t N = 0, k = 0, count = 0;
    auto get = [&](void* p, std::size_t n) { in.read(static_cast<char*>(p), std::streamsize(n)); };
    get(&b.theta, 8);
    get(&N, 8);
    get(&k, 8);
    get(&b.a_minus, 8);
    get(&b.a_plus, 8);
    get(&count, 8);
    get(&b.seed, 8);
    if (!in) throw std::runtime_error("truncated header in " + path);
    if (N < 1 || k < 1 || k > N || N > 1024 || count < 0 || !(b.a_minus < b.a_plus) ||
        !(b.theta > 0.0))
        throw std::runtime_error("corrupt header in " + path);
    b.N = int(N);
    b.k = int(k);
    b.count = int(count);
    std::size_t want = std::size_t(count) * b.stack_size();
    b.data.resize(want);
    in.read(reinterpret_cast<char*>(b.data.data()), std::streamsize(want * 8));
    if (std::size_t(in.gcount()) != want * 8) throw std::runtime_error("truncated data in " + path);

    std::ifstream side(path + ".json");
    if (side) {
        try {
            nlohmann::json j = nlohmann::json::parse(side);
            b.acceptance_rate = j.value("acceptance_rate", 0.0);
            b.autocorr_lag1 = j.value("autocorr_lag1", 0.0);
        } catch (const nlohmann::json::exception&) {
        }
    }
    return b;
}

CumulantEstimate estimate_cumulant(const SampleBatch& b,
                                   const std::vector<SampleFunctional>& vars) {
    const int n = int(vars.size());
    if (n < 1 || n > 6) throw std::invalid_argument("need 1 to 6 functionals");
    if (b.count < 2 * kBatches) throw std::invalid_argument("need at least 40 samples");
    const int bs = b.count / kBatches;
    const int used = bs * kBatches;
    const unsigned full = 1u << n;

    std::vector<cplx> acc_full(full, cplx{0.0, 0.0});
    std::vector<std::vector<cplx>> acc_batch(kBatches, std::vector<cplx>(full, cplx{0.0, 0.0}));
    std::vector<cplx> vals(n), prod(full);
    prod[0] = cplx{1.0, 0.0};
    for (int s = 0; s < used; ++s) {
        for (int i = 0; i < n; ++i) vals[i] = vars[i](b, s);
        auto& ab = acc_batch[s / bs];
        for (unsigned mask = 1; mask < full; ++mask) {
            unsigned low = mask & (~mask + 1u);
            prod[mask] = prod[mask ^ low] * vals[std::countr_zero(low)];
            acc_full[mask] += prod[mask];
            ab[mask] += prod[mask];
        }
    }

    CumulantEstimate est;
    est.batch_count = kBatches;
    est.value = cumulant_from_moment_table(
        n, [&](unsigned mask) { return acc_full[mask] / double(used); });
    std::vector<cplx> kb(kBatches);
    cplx mean{0.0, 0.0};
    for (int q = 0; q < kBatches; ++q) {
        kb[q] = cumulant_from_moment_table(
            n, [&](unsigned mask) { return acc_batch[q][mask] / double(bs); });
        mean += kb[q];
    }
    mean /= double(kBatches);
    double var = 0.0;
    for (int q = 0; q < kBatches; ++q) var += std::norm(kb[q] - mean);
    est.std_error = std::sqrt(var / (kBatches - 1) / kBatches);
    return est;
}

int PointSet::total() const {
    int t = 0;
    for (const auto& level : points) t += int(level.size());
    return t;
}

ContourSpec default_continuous_contour(const ContinuousSpec& spec) {
    ContourSpec c;
    c.center = cplx{0.5 * (spec.a_minus + spec.a_plus), 0.0};
    c.semi_axis_x = 0.5 * (spec.a_plus - spec.a_minus) + 0.25;
    c.semi_axis_y = 0.5;
    return c;
}

ContinuousLoopReport verify_continuous_loop_equation(const ContinuousSpec& spec,
                                                     const PointSet& points, cplx v,
                                                     const ContourSpec& contour,
                                                     const SampleBatch& batch) {
    check_spec(spec);
    const int N = spec.N, k = spec.k;
    const double th = spec.theta;
    if (batch.N != N || batch.k != k || std::abs(batch.theta - th) > 1e-12 ||
        std::abs(batch.a_minus - spec.a_minus) > 1e-12 ||
        std::abs(batch.a_plus - spec.a_plus) > 1e-12)
        throw std::invalid_argument("batch was drawn from a different measure");
    if (points.k != k || int(points.points.size()) != N - k + 1)
        throw std::invalid_argument("observation point shape mismatch");
    const int T = points.total();
    if (T > 2) throw std::invalid_argument("at most two observation points are supported");
    if (batch.count < 2 * kBatches) throw std::invalid_argument("need at least 40 samples");
    if (ellipse_coordinate(contour, cplx{spec.a_minus, 0.0}) >= 1.0 ||
        ellipse_coordinate(contour, cplx{spec.a_plus, 0.0}) >= 1.0)
        throw std::invalid_argument("contour must enclose the support interval");
    if (ellipse_coordinate(contour, v) <= 1.0)
        throw std::invalid_argument("the probe point must lie outside the contour");

    std::vector<int> lvl;
    std::vector<cplx> vf;
    for (int r = k; r <= N; ++r)
        for (cplx p : points.points[r - k]) {
            if (ellipse_coordinate(contour, p) <= 1.0)
                throw std::invalid_argument("observation points must lie outside the contour");
            lvl.push_back(r);
            vf.push_back(p);
        }

    const int Mn = std::max(8, contour.nodes % 2 == 0 ? contour.nodes : contour.nodes + 1);
    const int bs = batch.count / kBatches;
    const int used = bs * kBatches;
    const int stack = batch.stack_size();
    const int levels = N - k + 1;

    std::vector<cplx> znode(Mn), zprime(Mn);
    for (int m = 0; m < Mn; ++m) {
        double t = 2.0 * kPi * m / Mn;
        znode[m] = contour.center + cplx{contour.semi_axis_x * std::cos(t),
                                         contour.semi_axis_y * std::sin(t)};
        zprime[m] = cplx{-contour.semi_axis_x * std::sin(t), contour.semi_axis_y * std::cos(t)};
    }

    const int nA = 1 + T;
    const unsigned fullA = 1u << nA;
    const unsigned fullB = T > 0 ? 1u << T : 1u;
    std::vector<cplx> accA(std::size_t(Mn) * kBatches * fullA, cplx{0.0, 0.0});
    std::vector<std::vector<cplx>> accB(T,
                                        std::vector<cplx>(std::size_t(Mn) * kBatches * fullB));

    std::vector<cplx> G(levels), dG(levels), slots(3), prod(fullA);
    prod[0] = cplx{1.0, 0.0};
    std::vector<int> off(levels);
    for (int j = k; j <= N; ++j) off[j - k] = ((j - 1) * j - (k - 1) * k) / 2;

    for (int s = 0; s < used; ++s) {
        const double* ys = batch.data.data() + std::size_t(s) * stack;
        const int q = s / bs;
        cplx gv[2];
        for (int t = 0; t < T; ++t) {
            cplx g{0.0, 0.0};
            const double* lv = ys + off[lvl[t] - k];
            for (int i = 0; i < lvl[t]; ++i) g += 1.0 / (vf[t] - lv[i]);
            gv[t] = g;
        }
        for (int m = 0; m < Mn; ++m) {
            const cplx z = znode[m];
            for (int j = k; j <= N; ++j) {
                cplx g{0.0, 0.0}, dg{0.0, 0.0};
                const double* lv = ys + off[j - k];
                for (int i = 0; i < j; ++i) {
                    cplx w = 1.0 / (z - lv[i]);
                    g += w;
                    dg -= w * w;
                }
                G[j - k] = g;
                dG[j - k] = dg;
            }
            cplx S = -2.0 * N * th * spec.V.derivative(z) * G[N - k] + th * dG[N - k] +
                     th * G[N - k] * G[N - k] + (th - 2.0) * dG[0] + th * G[0] * G[0];
            for (int j = k + 1; j <= N; ++j) {
                cplx d = G[j - k] - G[j - 1 - k];
                S += -(th + 1.0) * dG[j - k] + (1.0 - th) * d * d + (1.0 - th) * dG[j - 1 - k];
            }

            slots[0] = S;
            for (int t = 0; t < T; ++t) slots[1 + t] = gv[t];
            cplx* aa = accA.data() + (std::size_t(m) * kBatches + q) * fullA;
            for (unsigned mask = 1; mask < fullA; ++mask) {
                unsigned low = mask & (~mask + 1u);
                prod[mask] = prod[mask ^ low] * slots[std::countr_zero(low)];
                aa[mask] += prod[mask];
            }
            for (int t = 0; t < T; ++t) {
                slots[0] = G[lvl[t] - k];
                int pos = 1;
                for (int u = 0; u < T; ++u)
                    if (u != t) slots[pos++] = gv[u];
                cplx* ab = accB[t].data() + (std::size_t(m) * kBatches + q) * fullB;
                for (unsigned mask = 1; mask < fullB; ++mask) {
                    unsigned low = mask & (~mask + 1u);
                    prod[mask] = prod[mask ^ low] * slots[std::countr_zero(low)];
                    ab[mask] += prod[mask];
                }
            }
        }
    }

    auto integrand = [&](int m, int q) {
        // q == -1 pools every batch
        auto momA = [&](unsigned mask) {
            if (q >= 0) return accA[(std::size_t(m) * kBatches + q) * fullA + mask] / double(bs);
            cplx t{0.0, 0.0};
            for (int b = 0; b < kBatches; ++b)
                t += accA[(std::size_t(m) * kBatches + b) * fullA + mask];
            return t / double(used);
        };
        cplx bracket = 0.5 * cumulant_from_moment_table(nA, momA);
        for (int t = 0; t < T; ++t) {
            auto momB = [&](unsigned mask) {
                if (q >= 0)
                    return accB[t][(std::size_t(m) * kBatches + q) * fullB + mask] / double(bs);
                cplx s{0.0, 0.0};
                for (int b = 0; b < kBatches; ++b)
                    s += accB[t][(std::size_t(m) * kBatches + b) * fullB + mask];
                return s / double(used);
            };
            cplx dz = znode[m] - vf[t];
            bracket += cumulant_from_moment_table(T, momB) / (dz * dz);
        }
        cplx z = znode[m];
        return (z - spec.a_minus) * (z - spec.a_plus) / (z - v) * bracket;
    };

    cplx total{0.0, 0.0}, total_half{0.0, 0.0};
    std::vector<cplx> node_full(Mn);
    for (int m = 0; m < Mn; ++m) {
        node_full[m] = integrand(m, -1) * zprime[m];
        total += node_full[m];
        if (m % 2 == 0) total_half += node_full[m];
    }
    total /= cplx{0.0, double(Mn)};
    total_half /= cplx{0.0, double(Mn / 2)};

    cplx mean{0.0, 0.0};
    std::vector<cplx> per_batch(kBatches, cplx{0.0, 0.0});
    for (int q = 0; q < kBatches; ++q) {
        for (int m = 0; m < Mn; ++m) per_batch[q] += integrand(m, q) * zprime[m];
        per_batch[q] /= cplx{0.0, double(Mn)};
        mean += per_batch[q];
    }
    mean /= double(kBatches);
    double var = 0.0;
    for (int q = 0; q < kBatches; ++q) var += std::norm(per_batch[q] - mean);

    ContinuousLoopReport rep;
    rep.theta = th;
    rep.N = N;
    rep.k = k;
    rep.v = v;
    rep.residual = std::abs(total);
    rep.std_error = std::sqrt(var / (kBatches - 1) / kBatches);
    rep.quadrature_delta = std::abs(total - total_half);
    rep.node_count = Mn;
    rep.batch_count = kBatches;
    rep.within_four_sigma = rep.residual < 4.0 * rep.std_error;
    return rep;
}

std::string to_json(const ContinuousLoopReport& rep) {
    nlohmann::json j;
    j["schema"] = 1;
    j["theta"] = rep.theta;
    j["N"] = rep.N;
    j["k"] = rep.k;
    j["v"] = {rep.v.real(), rep.v.imag()};
    j["residual"] = rep.residual;
    j["std_error"] = rep.std_error;
    j["quadrature_delta"] = rep.quadrature_delta;
    j["node_count"] = rep.node_count;
    j["batch_count"] = rep.batch_count;
    j["within_four_sigma"] = rep.within_four_sigma;
    return j.dump(2);
}

DiffuseLimitTable diffuse_limit_experiment(const ContinuousSpec& spec,
                                           const std::vector<int>& L_values, int n_samples,
                                           int burn_in, std::uint64_t seed, double support_cap) {
    check_spec(spec);
    if (L_values.empty()) throw std::invalid_argument("need at least one lattice density");
    for (int L : L_values)
        if (L < 1) throw std::invalid_argument("lattice densities must be positive");
    if (n_samples < 2 * kBatches) throw std::invalid_argument("need at least 40 samples");

    const int N = spec.N;
    const double th = spec.theta;
    const double span = spec.a_plus - spec.a_minus;

    SampleBatch batch = sample(spec, n_samples, burn_in, seed);
    SampleFunctional f1 = [](const SampleBatch& b, int s) {
        double m = 0.0;
        for (int i = 1; i <= b.N; ++i) m += b.y(s, b.N, i);
        return cplx{m / b.N, 0.0};
    };
    SampleFunctional f2 = [](const SampleBatch& b, int s) {
        double m = 0.0;
        for (int i = 1; i <= b.N; ++i) {
            double u = b.y(s, b.N, i);
            m += u * u;
        }
        return cplx{m / b.N, 0.0};
    };
    CumulantEstimate e1 = estimate_cumulant(batch, {f1});
    CumulantEstimate e2 = estimate_cumulant(batch, {f2});

    DiffuseLimitTable table;
    table.continuous_m1 = e1.value.real();
    table.continuous_m2 = e2.value.real();
    table.continuous_err1 = e1.std_error;
    table.continuous_err2 = e2.std_error;

    for (int L : L_values) {
        DiffuseLimitRow row;
        row.L = L;
        row.M = int(std::floor(span * L + 1e-9));

        // the top-level marginal does not depend on how far down the stack is
        // kept, so the discrete moments come from the single-level measure
        TabulatedWeight tw;
        for (int bi = 1; bi <= N; ++bi)
            for (int a = 0; a <= row.M; ++a)
                tw.values[{a, bi}] =
                    cplx{std::exp(-double(N) * th * spec.V(spec.a_minus + (a - bi * th) / L)),
                         0.0};
        MeasureSpec d = MeasureSpec::top_weight(th, N, N, row.M, tw);

        auto top_moments = [&](const CornersPattern& p) {
            double m1 = 0.0, m2 = 0.0;
            for (int i = 1; i <= N; ++i) {
                double x = spec.a_minus + p.ell(N, i) / L;
                m1 += x;
                m2 += x * x;
            }
            return cplx{m1 / N, m2 / N};
        };

        double support = std::exp(log_gamma(double(row.M + N + 1)) -
                                  log_gamma(double(N + 1)) - log_gamma(double(row.M + 1)));
        if (support <= support_cap) {
            cplx packed = expectation(d, top_moments);
            row.exact = true;
            row.discrete_m1 = packed.real();
            row.discrete_m2 = packed.imag();
        } else {
            McmcSampler chain(d, seed ^ (0x9e3779b97f4a7c15ULL * std::uint64_t(L + 1)));
            const long thin = long(N) * (row.M + 1);
            for (long t = 0; t < long(burn_in) * thin; ++t) chain.step();
            const int bs = n_samples / kBatches;
            const int used = bs * kBatches;
            double s1 = 0.0, s2 = 0.0;
            std::vector<double> b1(kBatches, 0.0), b2(kBatches, 0.0);
            for (int s = 0; s < used; ++s) {
                for (long t = 0; t < thin; ++t) chain.step();
                cplx m = top_moments(chain.state());
                s1 += m.real();
                s2 += m.imag();
                b1[s / bs] += m.real();
                b2[s / bs] += m.imag();
            }
            row.exact = false;
            row.discrete_m1 = s1 / used;
            row.discrete_m2 = s2 / used;
            double v1 = 0.0, v2 = 0.0;
            for (int q = 0; q < kBatches; ++q) {
                v1 += (b1[q] / bs - row.discrete_m1) * (b1[q] / bs - row.discrete_m1);
                v2 += (b2[q] / bs - row.discrete_m2) * (b2[q] / bs - row.discrete_m2);
            }
            row.discrete_err1 = std::sqrt(v1 / (kBatches - 1) / kBatches);
            row.discrete_err2 = std::sqrt(v2 / (kBatches - 1) / kBatches);
        }
        row.gap1 = std::abs(row.discrete_m1 - table.continuous_m1);
        row.gap2 = std::abs(row.discrete_m2 - table.continuous_m2);
        table.rows.push_back(row);
    }
    return table;
}

std::string to_csv(const DiffuseLimitTable& table) {
    std::ostringstream out;
    out.precision(17);
    out << "L,M,exact,discrete_m1,discrete_m2,discrete_err1,discrete_err2,"
           "continuous_m1,continuous_m2,gap1,gap2\n";
    for (const auto& r : table.rows)
        out << r.L << ',' << r.M << ',' << (r.exact ? 1 : 0) << ',' << r.discrete_m1 << ','
            << r.discrete_m2 << ',' << r.discrete_err1 << ',' << r.discrete_err2 << ','
            << table.continuous_m1 << ',' << table.continuous_m2 << ',' << r.gap1 << ','
            << r.gap2 << '\n';
    return out.str();
}

std::string to_json(const DiffuseLimitTable& table) {
    nlohmann::json j;
    j["schema"] = 1;
    j["continuous_m1"] = table.continuous_m1;
    j["continuous_m2"] = table.continuous_m2;
    j["continuous_err1"] = table.continuous_err1;
    j["continuous_err2"] = table.continuous_err2;
    j["rows"] = nlohmann::json::array();
    for (const auto& r : table.rows) {
        nlohmann::json row;
        row["L"] = r.L;
        row["M"] = r.M;
        row["exact"] = r.exact;
        row["discrete_m1"] = r.discrete_m1;
        row["discrete_m2"] = r.discrete_m2;
        row["discrete_err1"] = r.discrete_err1;
        row["discrete_err2"] = r.discrete_err2;
        row["gap1"] = r.gap1;
        row["gap2"] = r.gap2;
        j["rows"].push_back(row);
    }
    return j.dump(2);
}

}  // namespace corners
