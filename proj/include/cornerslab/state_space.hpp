#pragma once

#include <vector>

namespace corners {

// A signature in Lambda^M_n: weakly decreasing nonnegative integers capped by M.
struct Signature {
    std::vector<int> parts;
    int M = 0;

    int n() const { return static_cast<int>(parts.size()); }
    bool valid() const;
    bool operator==(const Signature& other) const { return parts == other.parts; }
};

// A level together with its theta-shifted particle positions l_i = lambda_i - i*theta.
struct ShiftedLevel {
    double theta = 1.0;
    Signature signature;

    // 1-based index, matching the convention l_1 > l_2 > ... > l_n
    double ell(int i) const { return signature.parts[i - 1] - i * theta; }
    std::vector<double> positions() const;
};

// true iff lambda_1 >= mu_1 >= lambda_2 >= mu_2 >= ... (upper has one more part)
bool interlaces(const Signature& upper, const Signature& lower);

// An interlaced stack lambda^N >= lambda^{N-1} >= ... >= lambda^k with level j
// holding j parts.  Levels are stored bottom-up: levels[j - k] is level j.
struct CornersPattern {
    double theta = 1.0;
    int N = 1, k = 1, M = 0;
    std::vector<Signature> levels;

    const Signature& level(int j) const { return levels[j - k]; }
    Signature& level(int j) { return levels[j - k]; }
    double ell(int j, int i) const { return level(j).parts[i - 1] - i * theta; }
    bool valid() const;
};

// Streams Lambda^M_n in ascending lexicographic order ((0,...,0) first,
// (M,...,M) last); constant memory.
class SignatureEnumerator {
  public:
    SignatureEnumerator(int n, int M);
    const Signature& current() const { return sig_; }
    bool next();  // advance; false once the stream is exhausted

  private:
    Signature sig_;
};

// Streams all interlaced stacks, ordered lexicographically on the
// concatenation (lambda^N, lambda^{N-1}, ..., lambda^k).  Implemented as an
// odometer: the bottom level spins fastest, and when a level advances all
// levels below it reset to their minimal interlacing completion.
class PatternEnumerator {
  public:
    PatternEnumerator(double theta, int N, int k, int M);
    const CornersPattern& current() const { return pat_; }
    bool next();

  private:
    bool advance_level(int j);  // lex successor of level j under level j+1
    void reset_below(int j);    // minimal completion of levels j-1, ..., k
    CornersPattern pat_;
};

inline SignatureEnumerator enumerate_signatures(int n, int M) { return {n, M}; }
inline PatternEnumerator enumerate_patterns(double theta, int N, int k, int M) {
    return {theta, N, k, M};
}

}  // namespace corners
