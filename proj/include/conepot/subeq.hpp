#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "conepot/geometry.hpp"
#include "conepot/symmat.hpp"

namespace conepot {

/// Catalog of rotation-invariant cone constraint sets F in Sym(R^n),
/// each represented by a scalar gauge g with F = { g >= 0 } and
/// Int F = { g > 0 }. The gauge is nondecreasing under positive
/// semidefinite increments and strictly increasing along the identity,
/// which makes duality computable as g(-A) <= 0.
enum class SubeqKind : std::uint8_t {
    PartialSum,   // lam_1 + ... + lam_[p] + (p-[p]) lam_[p]+1 >= 0, p in [1,n]
    DeltaCone,    // lam_1 + (delta/n) tr A >= 0
    MinMax,       // lam_min + (p-1) lam_max >= 0
    MinSecond,    // lam_min + (p-1) lam_2 >= 0
    SigmaK,       // sigma_1 >= 0, ..., sigma_k >= 0 (gauge: min of them)
    TracePower,   // tr(A^q) >= 0, q odd
    Pucci,        // extremal operator with ellipticity bounds 0 < lam <= Lam
    MaxEig,       // lam_max >= 0; degenerate, fails the line-projection test.
                  // Kept for tests only, never used for PDE stepping.
};

struct SubequationSpec {
    SubeqKind kind = SubeqKind::MinMax;
    int n = 2;
    double p = 2.0;       // PartialSum, MinMax, MinSecond
    double delta = 0.0;   // DeltaCone
    int k = 1;            // SigmaK
    int q = 1;            // TracePower (odd)
    double lam = 1.0;     // Pucci
    double Lam = 1.0;     // Pucci

    static SubequationSpec partial_sum(int n, double p) {
        validate_dim(n);
        if (p < 1.0 || p > double(n)) throw std::invalid_argument("PartialSum: p must be in [1,n]");
        SubequationSpec s;
        s.kind = SubeqKind::PartialSum, s.n = n, s.p = p;
        return s;
    }
    static SubequationSpec delta_cone(int n, double delta) {
        validate_dim(n);
        if (delta < 0.0) throw std::invalid_argument("DeltaCone: delta must be >= 0");
        SubequationSpec s;
        s.kind = SubeqKind::DeltaCone, s.n = n, s.delta = delta;
        return s;
    }
    static SubequationSpec min_max(int n, double p) {
        validate_dim(n);
        if (p < 1.0) throw std::invalid_argument("MinMax: p must be >= 1");
        SubequationSpec s;
        s.kind = SubeqKind::MinMax, s.n = n, s.p = p;
        return s;
    }
    static SubequationSpec min_second(int n, double p) {
        validate_dim(n);
        if (p < 1.0) throw std::invalid_argument("MinSecond: p must be >= 1");
        SubequationSpec s;
        s.kind = SubeqKind::MinSecond, s.n = n, s.p = p;
        return s;
    }
    static SubequationSpec sigma_k(int n, int k) {
        validate_dim(n);
        if (k < 1 || k > n) throw std::invalid_argument("SigmaK: k must be in [1,n]");
        SubequationSpec s;
        s.kind = SubeqKind::SigmaK, s.n = n, s.k = k;
        return s;
    }
    static SubequationSpec trace_power(int n, int q) {
        validate_dim(n);
        if (q < 1 || q % 2 == 0) throw std::invalid_argument("TracePower: q must be odd and >= 1");
        SubequationSpec s;
        s.kind = SubeqKind::TracePower, s.n = n, s.q = q;
        return s;
    }
    static SubequationSpec pucci(int n, double lam, double Lam) {
        validate_dim(n);
        if (!(0.0 < lam && lam <= Lam)) throw std::invalid_argument("Pucci: need 0 < lam <= Lam");
        SubequationSpec s;
        s.kind = SubeqKind::Pucci, s.n = n, s.lam = lam, s.Lam = Lam;
        return s;
    }
    static SubequationSpec max_eig(int n) {
        validate_dim(n);
        SubequationSpec s;
        s.kind = SubeqKind::MaxEig, s.n = n;
        return s;
    }

    /// F convex as a subset of Sym(R^n). Needed for multi-pole runs and
    /// the finite-case family, where sums of admissibles must stay
    /// admissible.
    bool is_convex() const {
        switch (kind) {
            case SubeqKind::PartialSum:
            case SubeqKind::DeltaCone:
            case SubeqKind::MinSecond: return true;
            case SubeqKind::MinMax: return p <= 2.0;  // in general only lam_min + (p-1)lam_2 is convex
            case SubeqKind::SigmaK: return true;
            default: return false;
        }
    }

    std::string describe() const;

private:
    static void validate_dim(int n) {
        if (n < 2 || n > SymMatrix::kMaxDim) throw std::invalid_argument("SubequationSpec: n must be in [2,8]");
    }
};

namespace detail {

inline std::vector<double> elementary_symmetric(const std::vector<double>& lam) {
    std::vector<double> e(lam.size() + 1, 0.0);
    e[0] = 1.0;
    for (double l : lam)
        for (int j = int(lam.size()); j >= 1; --j) e[j] += l * e[j - 1];
    return e;
}

}  // namespace detail

inline double gauge_from_eigs(const SubequationSpec& s, const std::vector<double>& lam) {
    switch (s.kind) {
        case SubeqKind::PartialSum: {
            int f = int(std::floor(s.p));
            if (f >= s.n) f = s.n;
            double g = 0.0;
            for (int i = 0; i < f; ++i) g += lam[i];
            if (f < s.n) g += (s.p - double(f)) * lam[f];
            return g;
        }
        case SubeqKind::DeltaCone: {
            double tr = 0.0;
            for (double l : lam) tr += l;
            return lam[0] + (s.delta / double(s.n)) * tr;
        }
        case SubeqKind::MinMax: return lam[0] + (s.p - 1.0) * lam[s.n - 1];
        case SubeqKind::MinSecond: return lam[0] + (s.p - 1.0) * lam[1];
        case SubeqKind::SigmaK: {
            const auto e = detail::elementary_symmetric(lam);
            double g = e[1];
            for (int j = 2; j <= s.k; ++j) g = std::min(g, e[j]);
            return g;
        }
        case SubeqKind::TracePower: {
            double g = 0.0;
            for (double l : lam) g += std::pow(l, double(s.q));
            return g;
        }
        case SubeqKind::Pucci: {
            // Extremal weighting: Lam on the positive part, lam on the
            // negative part, so the invariant radial solution has exponent
            // 1 + (Lam/lam)(n-1).
            double g = 0.0;
            for (double l : lam) g += (l > 0.0 ? s.Lam : s.lam) * l;
            return g;
        }
        case SubeqKind::MaxEig: return lam[s.n - 1];
    }
    throw std::logic_error("gauge_from_eigs: unknown kind");
}

inline double gauge(const SubequationSpec& s, const SymMatrix& A) {
    if (A.dim() != s.n) throw std::invalid_argument("gauge: dimension mismatch");
    return gauge_from_eigs(s, eigvals(A));
}

inline bool is_member(const SubequationSpec& s, const SymMatrix& A, double tol = 1e-9) {
    return gauge(s, A) >= -tol;
}

/// Membership in the dual set ~(-F): -A must not lie in the interior of F.
inline bool dual_is_member(const SubequationSpec& s, const SymMatrix& A, double tol = 1e-9) {
    return gauge(s, -A) <= tol;
}

namespace detail {

// Gauge along the one-parameter family diag(-(q-1), 1, ..., 1); decreasing
// in q for every catalog kind.
inline double line_gauge(const SubequationSpec& s, double q) {
    std::vector<double> lam(s.n, 1.0);
    lam[0] = -(q - 1.0);
    if (lam[0] > 1.0) std::swap(lam[0], lam[s.n - 1]);  // q < 0 never happens here, kept for safety
    return gauge_from_eigs(s, lam);
}

}  // namespace detail

inline constexpr double kInfiniteCharacteristic = std::numeric_limits<double>::infinity();

/// sup{ q : diag(-(q-1), 1, ..., 1) stays in F }, located by bisection.
/// Returns infinity when the whole ray stays inside.
inline double riesz_characteristic(const SubequationSpec& s) {
    const double q_max = 1e6;
    if (detail::line_gauge(s, q_max) >= 0.0) return kInfiniteCharacteristic;
    double lo = 1.0, hi = q_max;
    if (detail::line_gauge(s, lo) < 0.0) return 1.0;
    for (int it = 0; it < 120 && (hi - lo) > 1e-9; ++it) {
        const double mid = 0.5 * (lo + hi);
        (detail::line_gauge(s, mid) >= 0.0 ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

/// Closed-form characteristic where one exists; used to cross-check the
/// bisection.
inline std::optional<double> closed_form_characteristic(const SubequationSpec& s) {
    switch (s.kind) {
        case SubeqKind::PartialSum: return s.p;
        case SubeqKind::MinMax: return s.p;
        case SubeqKind::MinSecond: return s.p;
        case SubeqKind::DeltaCone: return 1.0 + s.delta * double(s.n - 1) / (double(s.n) + s.delta);
        case SubeqKind::SigmaK: return double(s.n) / double(s.k);
        case SubeqKind::TracePower: return 1.0 + std::pow(double(s.n - 1), 1.0 / double(s.q));
        case SubeqKind::Pucci: return 1.0 + (s.Lam / s.lam) * double(s.n - 1);
        case SubeqKind::MaxEig: return std::nullopt;
    }
    return std::nullopt;
}

/// Line-projection test: -P_e must lie strictly outside F. Equivalent to
/// the characteristic being finite for every catalog kind.
inline bool check_f3(const SubequationSpec& s) {
    std::vector<double> e(s.n, 0.0);
    e[0] = 1.0;
    return gauge(s, -proj_line(UnitVector(e))) < 0.0;
}

struct InclusionReport {
    bool holds = true;
    int samples_checked = 0;
    std::optional<SymMatrix> counterexample;
    double worst_gauge_b = 0.0;
};

namespace detail {

template <class Engine>
SymMatrix random_symmetric(Engine& eng, int n, double lo = -1.0, double hi = 1.0) {
    SymMatrix A(n);
    for (int i = 0; i < n; ++i)
        for (int j = i; j < n; ++j) A.set(i, j, uniform(eng, lo, hi));
    return A;
}

// Shift A along the identity onto the zero set of the gauge; the gauge is
// strictly increasing in the shift, so bisection applies.
inline SymMatrix shift_to_boundary(const SubequationSpec& s, const SymMatrix& A) {
    const double span = 4.0 * double(s.n) * (1.0 + A.frobenius_norm());
    double lo = -span, hi = span;
    for (int it = 0; it < 200 && (hi - lo) > 1e-13 * span; ++it) {
        const double mid = 0.5 * (lo + hi);
        (gauge(s, A.plus_scaled_identity(mid)) >= 0.0 ? hi : lo) = mid;
    }
    return A.plus_scaled_identity(0.5 * (lo + hi));
}

}  // namespace detail

/// Sampling check for F_a subset F_b: random symmetric matrices plus
/// boundary points of F_a found by shifting along the identity.
inline InclusionReport inclusion_check(const SubequationSpec& a, const SubequationSpec& b,
                                       int sample_count = 500, std::uint64_t seed = 1) {
    if (a.n != b.n) throw std::invalid_argument("inclusion_check: dimension mismatch");
    InclusionReport rep;
    std::mt19937_64 eng(seed);
    for (int i = 0; i < sample_count; ++i) {
        SymMatrix A = detail::random_symmetric(eng, a.n);
        const SymMatrix boundary = detail::shift_to_boundary(a, A);
        for (const SymMatrix* cand : {&A, &boundary}) {
            ++rep.samples_checked;
            if (gauge(a, *cand) < 0.0) continue;
            const double gb = gauge(b, *cand);
            if (gb < -1e-9) {
                rep.holds = false;
                if (!rep.counterexample) rep.counterexample = *cand;
                rep.worst_gauge_b = std::min(rep.worst_gauge_b, gb);
            }
        }
    }
    return rep;
}

inline std::string SubequationSpec::describe() const {
    std::ostringstream os;
    switch (kind) {
        case SubeqKind::PartialSum: os << "kind=partialsum n=" << n << " p=" << p; break;
        case SubeqKind::DeltaCone: os << "kind=deltacone n=" << n << " delta=" << delta; break;
        case SubeqKind::MinMax: os << "kind=minmax n=" << n << " p=" << p; break;
        case SubeqKind::MinSecond: os << "kind=minsecond n=" << n << " p=" << p; break;
        case SubeqKind::SigmaK: os << "kind=sigmak n=" << n << " k=" << k; break;
        case SubeqKind::TracePower: os << "kind=tracepower n=" << n << " q=" << q; break;
        case SubeqKind::Pucci: os << "kind=pucci n=" << n << " lam=" << lam << " Lam=" << Lam; break;
        case SubeqKind::MaxEig: os << "kind=maxeig n=" << n; break;
    }
    return os.str();
}

/// Parse the key=value line produced by describe().
inline SubequationSpec parse_subequation(const std::string& line) {
    std::istringstream is(line);
    std::string tok, kind;
    int n = 0, k = 1, q = 1;
    double p = 0.0, delta = 0.0, lam = 1.0, Lam = 1.0;
    bool have_p = false;
    while (is >> tok) {
        const auto eq = tok.find('=');
        if (eq == std::string::npos) throw std::invalid_argument("subequation spec: expected key=value, got '" + tok + "'");
        const std::string key = tok.substr(0, eq), val = tok.substr(eq + 1);
        try {
            if (key == "kind") kind = val;
            else if (key == "n") n = std::stoi(val);
            else if (key == "p") p = std::stod(val), have_p = true;
            else if (key == "delta") delta = std::stod(val);
            else if (key == "k") k = std::stoi(val);
            else if (key == "q") q = std::stoi(val);
            else if (key == "lam") lam = std::stod(val);
            else if (key == "Lam") Lam = std::stod(val);
            else throw std::invalid_argument("subequation spec: unknown key '" + key + "'");
        } catch (const std::invalid_argument&) {
            throw;
        } catch (const std::exception&) {
            throw std::invalid_argument("subequation spec: bad value for '" + key + "'");
        }
    }
    if (kind.empty() || n == 0) throw std::invalid_argument("subequation spec: kind and n are required");
    if (kind == "partialsum") return SubequationSpec::partial_sum(n, p);
    if (kind == "deltacone") return SubequationSpec::delta_cone(n, delta);
    if (kind == "minmax") return SubequationSpec::min_max(n, have_p ? p : 2.0);
    if (kind == "minsecond") return SubequationSpec::min_second(n, have_p ? p : 2.0);
    if (kind == "sigmak") return SubequationSpec::sigma_k(n, k);
    if (kind == "tracepower") return SubequationSpec::trace_power(n, q);
    if (kind == "pucci") return SubequationSpec::pucci(n, lam, Lam);
    if (kind == "maxeig") return SubequationSpec::max_eig(n);
    throw std::invalid_argument("subequation spec: unknown kind '" + kind + "'");
}

}  // namespace conepot
