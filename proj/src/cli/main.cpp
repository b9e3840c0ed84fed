#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "config.hpp"
#include "cornerslab/continuous.hpp"
#include "cornerslab/cumulants.hpp"
#include "cornerslab/discrete_measure.hpp"
#include "cornerslab/jack.hpp"
#include "cornerslab/nekrasov.hpp"
#include "cornerslab/numerics.hpp"
#include "cornerslab/report.hpp"
#include "cornerslab/rng.hpp"
#include "cornerslab/state_space.hpp"

namespace {

using corners::cplx;
using corners::cli::Config;
using corners::cli::ConfigError;
using corners::cli::RunConfig;
using nlohmann::json;

std::string fmt(double x) {
    std::ostringstream os;
    os << std::scientific << std::setprecision(3) << x;
    return os.str();
}

std::string num(double x) {
    std::ostringstream os;
    os << x;
    return os.str();
}

void reject_unknown(const Config& cfg) {
    const std::vector<std::string> left = cfg.unconsumed();
    if (left.empty()) return;
    std::string msg = left.size() == 1 ? "unknown key:" : "unknown keys:";
    for (const std::string& k : left) msg += " " + k;
    throw ConfigError(msg);
}

// Renders the report (JSON envelope, or raw CSV when asked and available),
// writes it to --out or stdout, prints every failing term to stderr, and maps
// pass/fail onto the exit code.
int finish(const RunConfig& rc, json body, bool pass, const std::vector<std::string>& failures,
           const std::string& csv = "") {
    body["command"] = rc.command;
    body["pass"] = pass;
    body["failures"] = failures;

    std::string rendered;
    if (rc.format == "csv") {
        if (csv.empty()) throw ConfigError("--format csv is not available for " + rc.command);
        rendered = csv;
    } else {
        rendered = corners::wrap_report(body.dump());
    }
    if (rc.out.empty())
        std::cout << rendered;
    else
        corners::write_text_file(rc.out, rendered);

    const size_t cap = 25;
    for (size_t i = 0; i < failures.size() && i < cap; ++i) std::cerr << "FAIL: " << failures[i] << "\n";
    if (failures.size() > cap) std::cerr << "FAIL: (+" << failures.size() - cap << " more)\n";
    return pass ? 0 : 1;
}

struct MeasureDefaults {
    double theta;
    int N, k, M;
    const char* weight;
};

struct Basics {
    double theta;
    int N, k, M;
    std::string weight;
};

Basics read_basics(const Config& cfg, const MeasureDefaults& d) {
    Basics b;
    b.theta = cfg.get_double("measure.theta", d.theta);
    b.N = static_cast<int>(cfg.get_int("measure.N", d.N));
    b.k = static_cast<int>(cfg.get_int("measure.k", d.k));
    b.M = static_cast<int>(cfg.get_int("measure.M", d.M));
    b.weight = cfg.get_string("measure.weight", d.weight);
    if (b.theta <= 0.0) throw ConfigError("measure.theta must be positive");
    if (b.N < 1 || b.k < 1 || b.k > b.N || b.M < 0)
        throw ConfigError("need 1 <= measure.k <= measure.N and measure.M >= 0");
    return b;
}

json basics_json(const Basics& b) {
    return {{"theta", b.theta}, {"N", b.N}, {"k", b.k}, {"M", b.M}, {"weight", b.weight}};
}

std::vector<double> read_geometric_qs(const Config& cfg, const Basics& b) {
    if (!cfg.has("measure.qs"))
        throw ConfigError("missing required key measure.qs (one entry per level, bottom first)");
    const std::vector<double> qs = cfg.get_double_list("measure.qs", {});
    if (static_cast<int>(qs.size()) != b.N - b.k + 1)
        throw ConfigError("measure.qs needs N - k + 1 entries");
    for (double q : qs)
        if (q <= 0.0) throw ConfigError("measure.qs entries must be positive");
    return qs;
}

struct MeasureBuild {
    corners::MeasureSpec spec;
    json params;
};

MeasureBuild build_measure(const Config& cfg, const MeasureDefaults& d) {
    const Basics b = read_basics(cfg, d);
    MeasureBuild out;
    out.params = basics_json(b);
    if (b.weight == "uniform") {
        out.spec = corners::MeasureSpec::uniform(b.theta, b.N, b.k, b.M);
    } else if (b.weight == "krawtchouk") {
        const double q = cfg.get_double("measure.q", 0.8);
        if (q <= 0.0) throw ConfigError("measure.q must be positive");
        out.params["q"] = q;
        out.spec = corners::krawtchouk_setup(b.N, b.k, b.M, b.theta, q).measure;
    } else if (b.weight == "geometric") {
        const std::vector<double> qs = read_geometric_qs(cfg, b);
        out.params["qs"] = qs;
        out.spec = corners::MeasureSpec::uniform(b.theta, b.N, b.k, b.M);
        for (size_t j = 0; j < qs.size(); ++j)
            out.spec.weights[j] = corners::GeometricWeight{cplx{qs[j], 0.0}};
    } else if (b.weight == "exp_poly") {
        if (!cfg.has("measure.coeffs"))
            throw ConfigError("missing required key measure.coeffs (ascending powers)");
        const std::vector<double> coeffs = cfg.get_double_list("measure.coeffs", {});
        out.params["coeffs"] = coeffs;
        out.spec = corners::MeasureSpec::top_weight(b.theta, b.N, b.k, b.M,
                                                    corners::ExpPolynomialWeight{coeffs});
    } else {
        throw ConfigError("unknown weight kind '" + b.weight +
                          "' (use uniform, krawtchouk, geometric, or exp_poly)");
    }
    return out;
}

struct SetupBuild {
    corners::NekrasovSetup setup;
    json params;
};

// Weight kinds with a mechanical analytic continuation of their shift ratios.
SetupBuild build_setup(const Config& cfg, const MeasureDefaults& d) {
    const Basics b = read_basics(cfg, d);
    SetupBuild out;
    out.params = basics_json(b);
    if (b.weight == "krawtchouk") {
        const double q = cfg.get_double("measure.q", 0.8);
        if (q <= 0.0) throw ConfigError("measure.q must be positive");
        out.params["q"] = q;
        out.setup = corners::krawtchouk_setup(b.N, b.k, b.M, b.theta, q);
    } else if (b.weight == "uniform" || b.weight == "geometric") {
        std::vector<cplx> qs(b.N - b.k + 1, cplx{1.0, 0.0});
        if (b.weight == "geometric") {
            const std::vector<double> raw = read_geometric_qs(cfg, b);
            out.params["qs"] = raw;
            for (size_t j = 0; j < raw.size(); ++j) qs[j] = cplx{raw[j], 0.0};
        }
        out.setup = corners::geometric_setup(b.theta, b.N, b.k, b.M, qs);
    } else {
        throw ConfigError("no analytic function family for weight kind '" + b.weight +
                          "'; use krawtchouk or geometric");
    }
    return out;
}

corners::ContourSpec build_contour(const Config& cfg, corners::ContourSpec base) {
    base.center = cplx{cfg.get_double("contour.center_re", base.center.real()),
                       cfg.get_double("contour.center_im", base.center.imag())};
    base.semi_axis_x = cfg.get_double("contour.semi_x", base.semi_axis_x);
    base.semi_axis_y = cfg.get_double("contour.semi_y", base.semi_axis_y);
    base.nodes = static_cast<int>(cfg.get_int("contour.nodes", base.nodes));
    if (base.semi_axis_x <= 0.0 || base.semi_axis_y <= 0.0)
        throw ConfigError("contour semi-axes must be positive");
    if (base.nodes < 8 || base.nodes % 2 != 0)
        throw ConfigError("contour.nodes must be even and at least 8");
    return base;
}

json contour_json(const corners::ContourSpec& c) {
    return {{"center_re", c.center.real()},
            {"center_im", c.center.imag()},
            {"semi_x", c.semi_axis_x},
            {"semi_y", c.semi_axis_y},
            {"nodes", c.nodes}};
}

int level_from_key(const std::string& key, const std::string& prefix) {
    const std::string digits = key.substr(prefix.size());
    if (digits.empty()) throw ConfigError("bad level suffix in " + key);
    for (char c : digits)
        if (!std::isdigit(static_cast<unsigned char>(c))) throw ConfigError("bad level suffix in " + key);
    return std::atoi(digits.c_str());
}

// Observation points arrive as loop.points_<level> = x1 x2 ... with real
// entries; levels without a key stay empty.
std::vector<std::vector<cplx>> read_level_points(const Config& cfg, int k, int N, json& echo) {
    std::vector<std::vector<cplx>> pts(N - k + 1);
    const std::string prefix = "loop.points_";
    for (const std::string& key : cfg.keys_in_section("loop")) {
        if (key.rfind(prefix, 0) != 0) continue;
        const int r = level_from_key(key, prefix);
        if (r < k || r > N)
            throw ConfigError(key + ": level outside [" + std::to_string(k) + ", " +
                              std::to_string(N) + "]");
        json values = json::array();
        for (double x : cfg.get_double_list(key, {})) {
            pts[r - k].push_back(cplx{x, 0.0});
            values.push_back(x);
        }
        echo["points_" + std::to_string(r)] = std::move(values);
    }
    return pts;
}

struct ContinuousDefaults {
    double theta;
    int N, k;
    double a_minus, a_plus;
};

struct ContinuousBuild {
    corners::ContinuousSpec spec;
    json params;
};

ContinuousBuild build_continuous(const Config& cfg, const ContinuousDefaults& d) {
    ContinuousBuild out;
    corners::ContinuousSpec& s = out.spec;
    s.theta = cfg.get_double("continuous.theta", d.theta);
    s.N = static_cast<int>(cfg.get_int("continuous.N", d.N));
    s.k = static_cast<int>(cfg.get_int("continuous.k", d.k));
    s.a_minus = cfg.get_double("continuous.a_minus", d.a_minus);
    s.a_plus = cfg.get_double("continuous.a_plus", d.a_plus);
    s.V.coeffs = cfg.get_double_list("continuous.V", {0.0, 0.0, 0.5});
    if (s.theta <= 0.0) throw ConfigError("continuous.theta must be positive");
    if (s.N < 1 || s.k < 1 || s.k > s.N) throw ConfigError("need 1 <= continuous.k <= continuous.N");
    if (!(s.a_minus < s.a_plus)) throw ConfigError("need continuous.a_minus < continuous.a_plus");
    out.params = {{"theta", s.theta}, {"N", s.N},
                  {"k", s.k},         {"a_minus", s.a_minus},
                  {"a_plus", s.a_plus}, {"V", s.V.coeffs}};
    return out;
}

// ---------------------------------------------------------------------------

int cmd_enumerate(const RunConfig& rc) {
    const Config& cfg = rc.params;
    const double theta = cfg.get_double("measure.theta", 1.0);
    const int N = static_cast<int>(cfg.get_int("measure.N", 2));
    const int k = static_cast<int>(cfg.get_int("measure.k", 1));
    const int M = static_cast<int>(cfg.get_int("measure.M", 2));
    reject_unknown(cfg);
    if (theta <= 0.0) throw ConfigError("measure.theta must be positive");
    if (N < 1 || k < 1 || k > N || M < 0)
        throw ConfigError("need 1 <= measure.k <= measure.N and measure.M >= 0");

    const long listing_cap = 2000;
    long count = 0;
    json patterns = json::array();
    auto en = corners::enumerate_patterns(theta, N, k, M);
    do {
        if (count < listing_cap) {
            const corners::CornersPattern& p = en.current();
            json levels = json::array();
            for (int j = N; j >= k; --j) levels.push_back(p.level(j).parts);
            patterns.push_back(std::move(levels));
        }
        ++count;
    } while (en.next());

    json body;
    body["params"] = {{"theta", theta}, {"N", N}, {"k", k}, {"M", M}};
    body["count"] = count;
    body["truncated"] = count > listing_cap;
    body["patterns"] = std::move(patterns);

    std::string csv;
    if (rc.format == "csv") {
        std::ostringstream os;
        os << "index,level,parts\n";
        long idx = 0;
        auto again = corners::enumerate_patterns(theta, N, k, M);
        do {
            const corners::CornersPattern& p = again.current();
            for (int j = N; j >= k; --j) {
                os << idx << "," << j << ",";
                const std::vector<int>& parts = p.level(j).parts;
                for (size_t i = 0; i < parts.size(); ++i) os << (i ? " " : "") << parts[i];
                os << "\n";
            }
            ++idx;
        } while (again.next());
        csv = os.str();
    }
    return finish(rc, std::move(body), true, {}, csv);
}

int cmd_measure(const RunConfig& rc) {
    const Config& cfg = rc.params;
    MeasureBuild mb = build_measure(cfg, {1.0, 2, 1, 2, "uniform"});
    reject_unknown(cfg);

    const corners::MaterializedMeasure mm(mb.spec);
    cplx sum{0.0, 0.0};
    double prob_min = HUGE_VAL, prob_max = 0.0;
    for (int i = 0; i < mm.size(); ++i) {
        sum += mm.prob(i);
        prob_min = std::min(prob_min, std::abs(mm.prob(i)));
        prob_max = std::max(prob_max, std::abs(mm.prob(i)));
    }
    const cplx top_mean = mm.expect([&](int idx) {
        double acc = 0.0;
        for (double l : mm.ells(idx, mb.spec.N)) acc += l;
        return cplx{acc / mb.spec.N, 0.0};
    });

    const double tol = rc.tol.value_or(1e-10);
    const double norm_gap = std::abs(sum - cplx{1.0, 0.0});
    std::vector<std::string> failures;
    if (norm_gap >= tol)
        failures.push_back("probability normalization: |sum - 1| = " + fmt(norm_gap) +
                           " exceeds tol " + fmt(tol));

    json body;
    body["params"] = mb.params;
    body["params"]["tol"] = tol;
    body["count"] = mm.size();
    body["Z_re"] = mm.Z().real();
    body["Z_im"] = mm.Z().imag();
    body["normalization_gap"] = norm_gap;
    body["prob_min"] = prob_min;
    body["prob_max"] = prob_max;
    body["top_mean_re"] = top_mean.real();
    body["top_mean_im"] = top_mean.imag();

    std::string csv;
    if (rc.format == "csv") {
        std::ostringstream os;
        os << std::setprecision(17) << "index,prob_re,prob_im,pattern\n";
        for (int i = 0; i < mm.size(); ++i) {
            os << i << "," << mm.prob(i).real() << "," << mm.prob(i).imag() << ",";
            const corners::CornersPattern& p = mm.pattern(i);
            for (int j = mb.spec.N; j >= mb.spec.k; --j) {
                if (j < mb.spec.N) os << "|";
                const std::vector<int>& parts = p.level(j).parts;
                for (size_t t = 0; t < parts.size(); ++t) os << (t ? " " : "") << parts[t];
            }
            os << "\n";
        }
        csv = os.str();
    }
    return finish(rc, std::move(body), failures.empty(), failures, csv);
}

void harvest_certification(const std::string& name, const corners::CertificationReport& rep,
                           double tol, std::vector<std::string>& failures) {
    for (const auto& p : rep.poles) {
        if (p.abs_residue > tol)
            failures.push_back(name + " pole s=" + num(p.s) + ": |residue| " + fmt(p.abs_residue) +
                               " exceeds tol " + fmt(tol));
        else if (!p.converged)
            failures.push_back(name + " pole s=" + num(p.s) + ": residue quadrature stalled");
    }
    for (const auto& m : rep.moments) {
        if (m.abs_value > tol)
            failures.push_back(name + " contour moment " + std::to_string(m.m) + ": " +
                               fmt(m.abs_value) + " exceeds tol " + fmt(tol));
        else if (!m.converged)
            failures.push_back(name + " contour moment " + std::to_string(m.m) +
                               ": quadrature stalled");
    }
}

int cmd_verify_nekrasov(const RunConfig& rc) {
    const Config& cfg = rc.params;
    SetupBuild sb = build_setup(cfg, {0.7, 2, 1, 4, "krawtchouk"});
    const bool corrupt = cfg.get_bool("nekrasov.corrupt", false);
    const std::string which = cfg.get_string("nekrasov.which", "both");
    reject_unknown(cfg);
    if (which != "r1" && which != "r2" && which != "both")
        throw ConfigError("nekrasov.which must be r1, r2, or both");

    corners::AnalyticFamily family = sb.setup.family;
    if (corrupt) family.phi1[0].prefactor *= 1.05;

    const double tol = rc.tol.value_or(1e-8);
    const double mismatch = corners::validate_family(sb.setup.measure, family);

    json body;
    body["params"] = sb.params;
    body["params"]["corrupt"] = corrupt;
    body["params"]["which"] = which;
    body["params"]["tol"] = tol;
    body["params"]["threads"] = rc.threads;
    body["family_mismatch"] = mismatch;

    bool pass = true;
    std::vector<std::string> failures;
    if (mismatch > std::max(tol, 1e-10)) {
        pass = false;
        failures.push_back("weight-ratio identities: family mismatch " + fmt(mismatch));
    }
    if (which != "r2") {
        const auto rep = corners::certify_analyticity(sb.setup.measure, family,
                                                      corners::WhichR::R1, tol, rc.threads);
        body["r1"] = json::parse(corners::to_json(rep));
        if (!rep.pass) {
            pass = false;
            harvest_certification("R1", rep, tol, failures);
        }
    }
    if (which != "r1") {
        const auto rep = corners::certify_analyticity(sb.setup.measure, family,
                                                      corners::WhichR::R2, tol, rc.threads);
        body["r2"] = json::parse(corners::to_json(rep));
        if (!rep.pass) {
            pass = false;
            harvest_certification("R2", rep, tol, failures);
        }
    }
    return finish(rc, std::move(body), pass, failures);
}

int cmd_verify_bijection(const RunConfig& rc) {
    const Config& cfg = rc.params;
    MeasureBuild mb = build_measure(cfg, {0.7, 2, 1, 3, "krawtchouk"});
    const std::string variant = cfg.get_string("bijection.variant", "both");
    const bool single = cfg.has("bijection.pole_a");
    int pole_a = 0, pole_b = 0, coord = 0;
    if (single) {
        pole_a = static_cast<int>(cfg.get_int("bijection.pole_a", 0));
        pole_b = static_cast<int>(cfg.require_int("bijection.pole_b"));
        coord = static_cast<int>(cfg.require_int("bijection.i"));
    }
    reject_unknown(cfg);
    if (variant != "horizontal" && variant != "diagonal" && variant != "both")
        throw ConfigError("bijection.variant must be horizontal, diagonal, or both");
    if (mb.spec.theta == 1.0)
        throw ConfigError("the string bijections require measure.theta != 1");
    if (single && (pole_a < 0 || pole_a > mb.spec.M + 1 || pole_b < 1 || pole_b > mb.spec.N ||
                   coord < 1 || coord > mb.spec.N))
        throw ConfigError("bijection pole needs 0 <= pole_a <= M+1, 1 <= pole_b <= N, 1 <= i <= N");

    std::vector<corners::BijectionVariant> variants;
    if (variant != "diagonal") variants.push_back(corners::BijectionVariant::horizontal);
    if (variant != "horizontal") variants.push_back(corners::BijectionVariant::diagonal);

    json rows = json::array();
    std::vector<std::string> failures;
    bool pass = true;
    double max_residual = 0.0;
    long matched_pairs = 0;
    for (corners::BijectionVariant var : variants) {
        const char* var_name = var == corners::BijectionVariant::horizontal ? "horizontal" : "diagonal";
        std::vector<corners::BijectionReport> reports;
        if (single) {
            const corners::PoleCandidate cand{pole_a, pole_b, pole_a - pole_b * mb.spec.theta};
            reports.push_back(corners::check_bijection(mb.spec, var, cand, coord));
        } else {
            reports = corners::check_all_bijections(mb.spec, var);
        }
        for (const auto& rep : reports) {
            matched_pairs += static_cast<long>(rep.pairs.size());
            max_residual = std::max(max_residual, rep.max_residual);
            rows.push_back({{"variant", var_name},
                            {"a", rep.pole.a},
                            {"b", rep.pole.b},
                            {"s", rep.pole.s},
                            {"i", rep.i},
                            {"n_plus", rep.n_plus},
                            {"n_minus", rep.n_minus},
                            {"max_residual", rep.max_residual},
                            {"pass", rep.pass}});
            if (!rep.pass) {
                pass = false;
                const std::string where =
                    std::string(var_name) + " pole s=" + num(rep.pole.s) + " i=" + std::to_string(rep.i);
                for (const std::string& f : rep.failures) failures.push_back(where + ": " + f);
                if (rep.failures.empty())
                    failures.push_back(where + ": max residual " + fmt(rep.max_residual));
            }
        }
    }

    json body;
    body["params"] = mb.params;
    body["params"]["variant"] = variant;
    if (single) {
        body["params"]["pole_a"] = pole_a;
        body["params"]["pole_b"] = pole_b;
        body["params"]["i"] = coord;
    }
    body["checks"] = rows.size();
    body["matched_pairs"] = matched_pairs;
    body["max_residual"] = max_residual;
    body["results"] = std::move(rows);
    return finish(rc, std::move(body), pass, failures);
}

int cmd_verify_jack(const RunConfig& rc) {
    const Config& cfg = rc.params;
    const int N = static_cast<int>(cfg.get_int("jack.N", 3));
    const int box = static_cast<int>(cfg.get_int("jack.box", 3));
    const std::vector<double> thetas = cfg.get_double_list("jack.theta_values", {0.5, 1.0, 1.3, 2.0});
    const std::vector<int> cauchy_N = cfg.get_int_list("jack.cauchy_N", {1, 2});
    const std::vector<double> q_values = cfg.get_double_list("jack.q_values", {0.1, 0.2});
    const int truncation = static_cast<int>(cfg.get_int("jack.truncation", 40));
    reject_unknown(cfg);
    if (N < 1 || box < 0) throw ConfigError("need jack.N >= 1 and jack.box >= 0");
    if (truncation < 1) throw ConfigError("jack.truncation must be at least 1");
    for (double th : thetas)
        if (th <= 0.0) throw ConfigError("jack.theta_values must be positive");
    for (int n : cauchy_N)
        if (n < 1) throw ConfigError("jack.cauchy_N entries must be at least 1");
    for (double q : q_values)
        if (q < 0.0 || q >= 1.0) throw ConfigError("jack.q_values must lie in [0, 1)");

    const double tol = rc.tol.value_or(1e-10);
    bool pass = true;
    std::vector<std::string> failures;

    json branching = json::array();
    for (double theta : thetas) {
        double worst = 0.0;
        std::string worst_lambda;
        corners::SignatureEnumerator en(N, box);
        do {
            const corners::Partition lambda(en.current().parts);
            const double r = corners::verify_branching(lambda, N, theta);
            if (r > worst) {
                worst = r;
                std::string s;
                for (int p : lambda.parts) s += (s.empty() ? "" : " ") + std::to_string(p);
                worst_lambda = s;
            }
        } while (en.next());
        branching.push_back(
            {{"theta", theta}, {"max_residual", worst}, {"worst_lambda", worst_lambda}});
        if (worst > tol) {
            pass = false;
            failures.push_back("branching at theta=" + num(theta) + ", lambda=(" + worst_lambda +
                               "): residual " + fmt(worst) + " exceeds tol " + fmt(tol));
        }
    }

    json cauchy = json::array();
    for (int n : cauchy_N) {
        for (double theta : thetas) {
            for (double q : q_values) {
                const corners::CauchyCheck r = corners::verify_cauchy(n, theta, q, truncation);
                cauchy.push_back({{"N", n},
                                  {"theta", theta},
                                  {"q", q},
                                  {"residual", r.residual},
                                  {"tail_bound", r.tail_bound},
                                  {"within_bound", r.within_bound}});
                if (!r.within_bound) {
                    pass = false;
                    failures.push_back("Cauchy sum at N=" + std::to_string(n) + ", theta=" +
                                       num(theta) + ", q=" + num(q) + ": residual " +
                                       fmt(r.residual) + " exceeds tail bound " + fmt(r.tail_bound));
                }
            }
        }
    }

    json body;
    body["params"] = {{"N", N},
                      {"box", box},
                      {"theta_values", thetas},
                      {"cauchy_N", cauchy_N},
                      {"q_values", q_values},
                      {"truncation", truncation},
                      {"tol", tol}};
    body["branching"] = std::move(branching);
    body["cauchy"] = std::move(cauchy);
    return finish(rc, std::move(body), pass, failures);
}

int cmd_verify_discrete_loop(const RunConfig& rc) {
    const Config& cfg = rc.params;
    SetupBuild sb = build_setup(cfg, {0.7, 2, 1, 4, "krawtchouk"});
    const corners::MeasureSpec& spec = sb.setup.measure;

    const double L = cfg.get_double("loop.L", 1.0);
    if (L <= 0.0) throw ConfigError("loop.L must be positive");
    const double v_re = cfg.get_double("loop.v", (spec.M + 2.0) / L);
    const double v_im = cfg.get_double("loop.v_im", 0.0);
    const double adaptive_tol = cfg.get_double("loop.adaptive_tol", 1e-10);

    json points_echo = json::object();
    corners::ObservableSet obs;
    obs.L = L;
    obs.k = spec.k;
    obs.points = read_level_points(cfg, spec.k, spec.N, points_echo);
    const corners::ContourSpec contour =
        build_contour(cfg, corners::default_loop_contour(spec, L));
    reject_unknown(cfg);
    if (obs.total() > 3)
        throw ConfigError("at most three observation points in total");

    const double tol = rc.tol.value_or(1e-8);
    const corners::ThetaBranch branch =
        spec.theta == 1.0 ? corners::ThetaBranch::one : corners::ThetaBranch::general;

    const corners::MaterializedMeasure mm(spec);
    const corners::ShiftFactorization fac = corners::top_shift_factors(sb.setup.family);
    const corners::LoopEquationReport rep = corners::verify_discrete_loop_equation(
        mm, fac, obs, cplx{v_re, v_im}, contour, branch, tol, adaptive_tol);

    bool pass = rep.pass;
    std::vector<std::string> failures;
    if (!rep.quadrature_ok) {
        for (const auto& term : rep.terms)
            if (!term.converged)
                failures.push_back("term " + term.key.extra + " " + json(term.key.subsets).dump() +
                                   ": quadrature stalled at " + std::to_string(term.node_count_used) +
                                   " nodes");
    }
    if (rep.residual >= tol) {
        const corners::LoopTerm* largest = nullptr;
        for (const auto& term : rep.terms)
            if (largest == nullptr || std::abs(term.value) > std::abs(largest->value))
                largest = &term;
        std::string msg = "loop total " + fmt(rep.residual) + " exceeds tol " + fmt(tol);
        if (largest != nullptr)
            msg += "; largest term " + largest->key.extra + " " + json(largest->key.subsets).dump() +
                   " = " + fmt(std::abs(largest->value));
        failures.push_back(msg);
    }

    json body;
    body["params"] = sb.params;
    body["params"]["L"] = L;
    body["params"]["v"] = v_re;
    body["params"]["v_im"] = v_im;
    body["params"]["adaptive_tol"] = adaptive_tol;
    body["params"]["tol"] = tol;
    body["params"]["points"] = std::move(points_echo);
    body["params"]["contour"] = contour_json(contour);
    body["loop"] = json::parse(corners::to_json(rep));
    return finish(rc, std::move(body), pass, failures);
}

corners::SampleFunctional top_mean_functional() {
    return [](const corners::SampleBatch& b, int s) {
        double acc = 0.0;
        for (int i = 1; i <= b.N; ++i) acc += b.y(s, b.N, i);
        return cplx{acc / b.N, 0.0};
    };
}

int cmd_sample_continuous(const RunConfig& rc) {
    const Config& cfg = rc.params;
    ContinuousBuild cb = build_continuous(cfg, {1.0, 1, 1, -2.0, 2.0});
    const long samples = cfg.get_int("continuous.samples", 20000);
    const long burn_in = cfg.get_int("continuous.burn_in", 2000);
    const std::string batch_out = cfg.get_string(
        "continuous.batch_out", rc.out.empty() ? "sample.batch" : rc.out + ".batch");
    reject_unknown(cfg);
    if (samples < 40) throw ConfigError("continuous.samples must be at least 40");
    if (burn_in < 0) throw ConfigError("continuous.burn_in must be nonnegative");

    const corners::SampleBatch batch =
        corners::sample(cb.spec, static_cast<int>(samples), static_cast<int>(burn_in), rc.seed);
    corners::save_batch(batch, batch_out);
    const corners::CumulantEstimate est = corners::estimate_cumulant(batch, {top_mean_functional()});

    json body;
    body["params"] = cb.params;
    body["params"]["samples"] = samples;
    body["params"]["burn_in"] = burn_in;
    body["params"]["seed"] = rc.seed;
    body["batch_file"] = batch_out;
    body["sidecar_file"] = batch_out + ".json";
    body["count"] = batch.count;
    body["acceptance_rate"] = batch.acceptance_rate;
    body["autocorr_lag1"] = batch.autocorr_lag1;
    body["top_mean"] = est.value.real();
    body["top_mean_std_error"] = est.std_error;
    return finish(rc, std::move(body), true, {});
}

int cmd_verify_continuous_loop(const RunConfig& rc) {
    const Config& cfg = rc.params;
    ContinuousBuild cb = build_continuous(cfg, {1.0, 1, 1, -2.0, 2.0});
    const long samples = cfg.get_int("continuous.samples", 20000);
    const long burn_in = cfg.get_int("continuous.burn_in", 2000);
    const std::string batch_in = cfg.get_string("continuous.batch_in", "");
    const double v_re = cfg.get_double("loop.v", cb.spec.a_plus + 1.2);
    const double v_im = cfg.get_double("loop.v_im", 0.0);

    json points_echo = json::object();
    corners::PointSet pts;
    pts.k = cb.spec.k;
    pts.points = read_level_points(cfg, cb.spec.k, cb.spec.N, points_echo);
    const corners::ContourSpec contour =
        build_contour(cfg, corners::default_continuous_contour(cb.spec));
    reject_unknown(cfg);
    if (samples < 40) throw ConfigError("continuous.samples must be at least 40");
    if (burn_in < 0) throw ConfigError("continuous.burn_in must be nonnegative");

    const corners::SampleBatch batch =
        batch_in.empty()
            ? corners::sample(cb.spec, static_cast<int>(samples), static_cast<int>(burn_in), rc.seed)
            : corners::load_batch(batch_in);
    const corners::ContinuousLoopReport rep =
        corners::verify_continuous_loop_equation(cb.spec, pts, cplx{v_re, v_im}, contour, batch);

    std::vector<std::string> failures;
    if (!rep.within_four_sigma)
        failures.push_back("contour residual " + fmt(rep.residual) + " exceeds 4 x std error " +
                           fmt(4.0 * rep.std_error) + " at v=" + num(v_re));

    json loop = json::parse(corners::to_json(rep));
    loop.erase("schema");

    json body;
    body["params"] = cb.params;
    if (batch_in.empty()) {
        body["params"]["samples"] = samples;
        body["params"]["burn_in"] = burn_in;
        body["params"]["seed"] = rc.seed;
    } else {
        body["params"]["batch_in"] = batch_in;
    }
    body["params"]["v"] = v_re;
    body["params"]["v_im"] = v_im;
    body["params"]["points"] = std::move(points_echo);
    body["params"]["contour"] = contour_json(contour);
    body["acceptance_rate"] = batch.acceptance_rate;
    body["autocorr_lag1"] = batch.autocorr_lag1;
    body["loop"] = std::move(loop);
    return finish(rc, std::move(body), rep.within_four_sigma, failures);
}

int cmd_diffuse_limit(const RunConfig& rc) {
    const Config& cfg = rc.params;
    ContinuousBuild cb = build_continuous(cfg, {1.0, 1, 1, -2.0, 2.0});
    const std::vector<int> L_values = cfg.get_int_list("diffuse.L_values", {5, 10, 20, 40});
    const long samples = cfg.get_int("diffuse.samples", 50000);
    const long burn_in = cfg.get_int("diffuse.burn_in", 2000);
    const double support_cap = cfg.get_double("diffuse.support_cap", 2.0e6);
    reject_unknown(cfg);
    for (int L : L_values)
        if (L < 1) throw ConfigError("diffuse.L_values must be positive");
    if (samples < 40) throw ConfigError("diffuse.samples must be at least 40");
    if (burn_in < 0) throw ConfigError("diffuse.burn_in must be nonnegative");
    if (support_cap < 1.0) throw ConfigError("diffuse.support_cap must be at least 1");

    const corners::DiffuseLimitTable table = corners::diffuse_limit_experiment(
        cb.spec, L_values, static_cast<int>(samples), static_cast<int>(burn_in), rc.seed,
        support_cap);

    bool gap1_decreasing = true, gap2_decreasing = true;
    for (size_t i = 1; i < table.rows.size(); ++i) {
        gap1_decreasing = gap1_decreasing && table.rows[i].gap1 < table.rows[i - 1].gap1;
        gap2_decreasing = gap2_decreasing && table.rows[i].gap2 < table.rows[i - 1].gap2;
    }
    const corners::DiffuseLimitRow& last = table.rows.back();
    const double combined1 = table.continuous_err1 + last.discrete_err1;
    const double combined2 = table.continuous_err2 + last.discrete_err2;
    const bool final1 = last.gap1 < 3.0 * combined1;
    const bool final2 = last.gap2 < 3.0 * combined2;

    std::vector<std::string> failures;
    if (!final1)
        failures.push_back("top-level mean at L=" + std::to_string(last.L) + ": gap " +
                           fmt(last.gap1) + " exceeds 3 x combined uncertainty " +
                           fmt(3.0 * combined1));
    if (!final2)
        failures.push_back("top-level mean square at L=" + std::to_string(last.L) + ": gap " +
                           fmt(last.gap2) + " exceeds 3 x combined uncertainty " +
                           fmt(3.0 * combined2));

    json tbl = json::parse(corners::to_json(table));
    tbl.erase("schema");

    json body;
    body["params"] = cb.params;
    body["params"]["L_values"] = L_values;
    body["params"]["samples"] = samples;
    body["params"]["burn_in"] = burn_in;
    body["params"]["support_cap"] = support_cap;
    body["params"]["seed"] = rc.seed;
    body["table"] = std::move(tbl);
    body["gap1_decreasing"] = gap1_decreasing;
    body["gap2_decreasing"] = gap2_decreasing;
    body["final_gap1_within"] = final1;
    body["final_gap2_within"] = final2;

    const std::string csv = rc.format == "csv" ? corners::to_csv(table) : "";
    return finish(rc, std::move(body), final1 && final2, failures, csv);
}

int cmd_verify_cumulants(const RunConfig& rc) {
    const Config& cfg = rc.params;
    MeasureBuild mb = build_measure(cfg, {0.7, 2, 1, 3, "uniform"});
    const int n_vars = static_cast<int>(cfg.get_int("cumulants.n_vars", 3));
    const double fd_tol = cfg.get_double("cumulants.fd_tol", 1e-6);
    reject_unknown(cfg);
    if (n_vars < 1 || n_vars > 4) throw ConfigError("cumulants.n_vars must be between 1 and 4");
    if (fd_tol <= 0.0) throw ConfigError("cumulants.fd_tol must be positive");

    const double tol = rc.tol.value_or(1e-12);
    const corners::MaterializedMeasure mm(mb.spec);
    corners::Rng rng(rc.seed);
    std::vector<corners::RandomVariable> vars(n_vars);
    for (auto& var : vars) {
        var.resize(mm.size());
        for (cplx& x : var)
            x = cplx{2.0 * rng.next_double() - 1.0, 2.0 * rng.next_double() - 1.0};
    }

    bool pass = true;
    std::vector<std::string> failures;

    json roundtrip = json::array();
    for (int s = 1; s <= n_vars; ++s) {
        std::vector<const corners::RandomVariable*> ptrs;
        for (int i = 0; i < s; ++i) ptrs.push_back(&vars[i]);
        const cplx direct = corners::expect_product(mm, ptrs);
        const cplx rebuilt = corners::moment_from_cumulants(mm, ptrs);
        const double residual = std::abs(rebuilt - direct) / std::max(1.0, std::abs(direct));
        roundtrip.push_back({{"order", s}, {"residual", residual}});
        if (residual > tol) {
            pass = false;
            failures.push_back("moment-cumulant round trip at order " + std::to_string(s) +
                               ": residual " + fmt(residual) + " exceeds tol " + fmt(tol));
        }
    }

    json body;
    body["params"] = mb.params;
    body["params"]["n_vars"] = n_vars;
    body["params"]["seed"] = rc.seed;
    body["params"]["tol"] = tol;
    body["params"]["fd_tol"] = fd_tol;
    body["roundtrip"] = std::move(roundtrip);

    if (n_vars >= 2) {
        std::vector<const corners::RandomVariable*> others;
        for (int i = 2; i < n_vars; ++i) others.push_back(&vars[i]);
        const double residual = corners::verify_product_formula(mm, vars[0], vars[1], others);
        body["product_formula_residual"] = residual;
        if (residual > tol) {
            pass = false;
            failures.push_back("product-entry splitting: residual " + fmt(residual) +
                               " exceeds tol " + fmt(tol));
        }
    }

    // Mixed derivatives of the deformed expectation against the same cumulants
    // computed algebraically, at observation points clear of the support.
    const corners::MeasureSpec& spec = mb.spec;
    const double v_right = spec.M + 2.0;
    const double v_left = -(spec.N * spec.theta + 2.0);
    const corners::RandomVariable& xi = vars[0];

    corners::ObservableSet one_pt;
    one_pt.L = 1.0;
    one_pt.k = spec.k;
    one_pt.points.assign(spec.N - spec.k + 1, {});
    one_pt.points[spec.N - spec.k].push_back(cplx{v_right, 0.0});
    const corners::RandomVariable g_top =
        corners::stieltjes_variable(mm, spec.N, 1.0, cplx{v_right, 0.0});
    const cplx exact1 = corners::cumulant_from_moments(mm, {&xi, &g_top});
    const cplx fd1 = corners::mixed_partial(
        [&](const std::vector<double>& h) {
            corners::DeformationParams t = corners::DeformationParams::zeros_like(one_pt);
            t.t[spec.N - spec.k][0] = h[0];
            return corners::deformed_expectation(mm, one_pt, t, xi);
        },
        {1});
    const double fd1_residual = std::abs(fd1 - exact1) / std::max(1.0, std::abs(exact1));

    corners::ObservableSet two_pt = one_pt;
    two_pt.points[0].push_back(cplx{v_left, 0.0});
    const int f_left = static_cast<int>(two_pt.points[0].size()) - 1;
    const corners::RandomVariable g_bottom =
        corners::stieltjes_variable(mm, spec.k, 1.0, cplx{v_left, 0.0});
    const cplx exact2 = corners::cumulant_from_moments(mm, {&xi, &g_top, &g_bottom});
    const cplx fd2 = corners::mixed_partial(
        [&](const std::vector<double>& h) {
            corners::DeformationParams t = corners::DeformationParams::zeros_like(two_pt);
            t.t[spec.N - spec.k][0] = h[0];
            t.t[0][f_left] = h[1];
            return corners::deformed_expectation(mm, two_pt, t, xi);
        },
        {1, 1});
    const double fd2_residual = std::abs(fd2 - exact2) / std::max(1.0, std::abs(exact2));

    body["deformation"] = json::array();
    body["deformation"].push_back({{"order", 1},
                                   {"exact_re", exact1.real()},
                                   {"exact_im", exact1.imag()},
                                   {"fd_re", fd1.real()},
                                   {"fd_im", fd1.imag()},
                                   {"residual", fd1_residual}});
    body["deformation"].push_back({{"order", 2},
                                   {"exact_re", exact2.real()},
                                   {"exact_im", exact2.imag()},
                                   {"fd_re", fd2.real()},
                                   {"fd_im", fd2.imag()},
                                   {"residual", fd2_residual}});
    if (fd1_residual > fd_tol) {
        pass = false;
        failures.push_back("deformation derivative at order 1: residual " + fmt(fd1_residual) +
                           " exceeds tol " + fmt(fd_tol));
    }
    if (fd2_residual > fd_tol) {
        pass = false;
        failures.push_back("deformation derivative at order 2: residual " + fmt(fd2_residual) +
                           " exceeds tol " + fmt(fd_tol));
    }
    return finish(rc, std::move(body), pass, failures);
}

// ---------------------------------------------------------------------------

struct CommandInfo {
    const char* name;
    const char* help;
    const char* bare_section;  // section for key=value overrides without a dot
    int (*run)(const RunConfig&);
};

const CommandInfo kCommands[] = {
    {"enumerate", "count and list the interlaced stacks of a lattice window", "measure",
     cmd_enumerate},
    {"measure", "materialize a discrete measure and report its normalization", "measure",
     cmd_measure},
    {"verify-nekrasov", "certify analyticity of the two Nekrasov combinations", "measure",
     cmd_verify_nekrasov},
    {"verify-bijection", "check the residue-cancelling string bijections termwise", "measure",
     cmd_verify_bijection},
    {"verify-jack", "check Jack branching and the truncated Cauchy identity", "jack",
     cmd_verify_jack},
    {"verify-discrete-loop", "certify one multi-level discrete loop equation", "measure",
     cmd_verify_discrete_loop},
    {"sample-continuous", "draw interlaced particle stacks from a continuous density",
     "continuous", cmd_sample_continuous},
    {"verify-continuous-loop", "test a continuous loop equation against sampled stacks",
     "continuous", cmd_verify_continuous_loop},
    {"diffuse-limit", "compare fine lattice measures against their continuum limit", "continuous",
     cmd_diffuse_limit},
    {"verify-cumulants", "exercise the joint-cumulant algebra on random observables", "measure",
     cmd_verify_cumulants},
};

int resolve_threads(int flag_value) {
    if (flag_value > 0) return flag_value;
    if (const char* env = std::getenv("CORNERS_LAB_THREADS")) {
        char* end = nullptr;
        const long n = std::strtol(env, &end, 10);
        if (*env == '\0' || *end != '\0' || n < 1)
            throw ConfigError("CORNERS_LAB_THREADS must be a positive integer");
        return static_cast<int>(n);
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"verification laboratory for multi-level corners measures"};
    app.require_subcommand(1);

    std::string config_path, out, format = "json";
    std::uint64_t seed = 1;
    double tol = 0.0;
    int threads = 0;
    app.add_option("--config", config_path, "key=value config file with [section] headers");
    app.add_option("--seed", seed, "random seed (default 1)");
    CLI::Option* tol_opt = app.add_option("--tol", tol, "override the command's tolerance");
    app.add_option("--threads", threads,
                   "worker threads (default: CORNERS_LAB_THREADS, then all cores)");
    app.add_option("--out", out, "report file (default: stdout)");
    app.add_option("--format", format, "report format")
        ->check(CLI::IsMember({"json", "csv"}));

    std::map<std::string, std::vector<std::string>> overrides;
    for (const CommandInfo& info : kCommands) {
        CLI::App* sub = app.add_subcommand(info.name, info.help);
        sub->fallthrough();
        sub->add_option("overrides", overrides[info.name],
                        "parameter overrides, key=value or section.key=value");
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    const std::string command = app.get_subcommands().front()->get_name();
    const CommandInfo* info = nullptr;
    for (const CommandInfo& c : kCommands)
        if (command == c.name) info = &c;

    try {
        RunConfig rc;
        rc.command = command;
        rc.seed = seed;
        if (tol_opt->count() > 0) {
            if (tol <= 0.0) throw ConfigError("--tol must be positive");
            rc.tol = tol;
        }
        if (threads < 0) throw ConfigError("--threads must be positive");
        rc.threads = resolve_threads(threads);
        rc.out = out;
        rc.format = format;

        Config cfg = config_path.empty() ? Config{} : Config::from_file(config_path);
        for (const std::string& assignment : overrides[command])
            cfg.apply_override(assignment, info->bare_section);
        rc.params = std::move(cfg);
        return info->run(rc);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::invalid_argument& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::domain_error& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
