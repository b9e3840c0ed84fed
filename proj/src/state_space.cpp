#include "cornerslab/state_space.hpp"

#include <stdexcept>

namespace corners {

bool Signature::valid() const {
    for (int i = 0; i < n(); ++i) {
        if (parts[i] < 0 || parts[i] > M) return false;
        if (i > 0 && parts[i - 1] < parts[i]) return false;
    }
    return true;
}

std::vector<double> ShiftedLevel::positions() const {
    std::vector<double> out(signature.n());
    for (int i = 1; i <= signature.n(); ++i) out[i - 1] = ell(i);
    return out;
}

bool interlaces(const Signature& upper, const Signature& lower) {
    if (upper.n() != lower.n() + 1)
        throw std::invalid_argument("interlaces: upper must have exactly one more part than lower");
    for (int i = 0; i < lower.n(); ++i) {
        if (!(upper.parts[i] >= lower.parts[i] && lower.parts[i] >= upper.parts[i + 1]))
            return false;
    }
    return true;
}

bool CornersPattern::valid() const {
    if (static_cast<int>(levels.size()) != N - k + 1) return false;
    for (int j = k; j <= N; ++j) {
        if (level(j).n() != j || !level(j).valid()) return false;
    }
    for (int j = k; j < N; ++j) {
        if (!interlaces(level(j + 1), level(j))) return false;
    }
    return true;
}

SignatureEnumerator::SignatureEnumerator(int n, int M) {
    if (n < 1 || M < 0) throw std::invalid_argument("SignatureEnumerator: need n >= 1, M >= 0");
    sig_.parts.assign(n, 0);
    sig_.M = M;
}

bool SignatureEnumerator::next() {
    // ascending lex successor: bump the rightmost part that can grow, zero the rest
    auto& p = sig_.parts;
    const int n = sig_.n();
    for (int i = n - 1; i >= 0; --i) {
        const int cap = (i == 0) ? sig_.M : p[i - 1];
        if (p[i] < cap) {
            ++p[i];
            for (int q = i + 1; q < n; ++q) p[q] = 0;
            return true;
        }
    }
    return false;
}

PatternEnumerator::PatternEnumerator(double theta, int N, int k, int M) {
    if (!(theta > 0.0)) throw std::invalid_argument("PatternEnumerator: theta must be positive");
    if (k < 1 || k > N) throw std::invalid_argument("PatternEnumerator: need 1 <= k <= N");
    pat_.theta = theta;
    pat_.N = N;
    pat_.k = k;
    pat_.M = M;
    pat_.levels.resize(N - k + 1);
    for (int j = k; j <= N; ++j) {
        pat_.level(j).parts.assign(j, 0);
        pat_.level(j).M = M;
    }
}

bool PatternEnumerator::advance_level(int j) {
    auto& p = pat_.level(j).parts;
    if (j == pat_.N) {
        // unconstrained from above: plain signature successor
        for (int i = j - 1; i >= 0; --i) {
            const int cap = (i == 0) ? pat_.M : p[i - 1];
            if (p[i] < cap) {
                ++p[i];
                for (int q = i + 1; q < j; ++q) p[q] = 0;
                return true;
            }
        }
        return false;
    }
    // below the top the coordinates are independent: lambda^{j+1}_{i+1} <= mu_i <= lambda^{j+1}_i
    const auto& up = pat_.level(j + 1).parts;
    for (int i = j - 1; i >= 0; --i) {
        if (p[i] < up[i]) {
            ++p[i];
            for (int q = i + 1; q < j; ++q) p[q] = up[q + 1];
            return true;
        }
    }
    return false;
}

void PatternEnumerator::reset_below(int j) {
    for (int m = j - 1; m >= pat_.k; --m) {
        const auto& up = pat_.level(m + 1).parts;
        auto& p = pat_.level(m).parts;
        for (int i = 0; i < m; ++i) p[i] = up[i + 1];
    }
}

bool PatternEnumerator::next() {
    for (int j = pat_.k; j <= pat_.N; ++j) {
        if (advance_level(j)) {
            reset_below(j);
            return true;
        }
    }
    return false;
}

}  // namespace corners
