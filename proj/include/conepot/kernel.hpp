#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "conepot/geometry.hpp"

namespace conepot {

/// Two coexisting radial-kernel normalizations. `Classic` carries the
/// 1/(p-2) factor so its Hessian is exactly |x|^-p (P_perp - (p-1) P_line);
/// `Plain` is the bare power used by the tangent flow and by the value
/// machinery. Conversions are explicit everywhere; every solver entry
/// point takes Classic.
enum class KernelNorm { Classic, Plain };

inline double kernel_radial(double p, KernelNorm norm, double r) {
    if (p < 1.0) throw std::invalid_argument("kernel_radial: p must be >= 1");
    if (r < 0.0) throw std::invalid_argument("kernel_radial: negative radius");
    if (p == 2.0) return std::log(r);  // -inf at r = 0
    if (norm == KernelNorm::Classic) return -1.0 / ((p - 2.0) * std::pow(r, p - 2.0));
    return (p > 2.0 ? -1.0 : 1.0) * std::pow(r, 2.0 - p);
}

/// True when the kernel value at the center is -infinity.
inline bool kernel_is_polar(double p) { return p >= 2.0; }

struct KernelSpec {
    double p = 2.0;
    KernelNorm norm = KernelNorm::Classic;
    Point2 center{0.0, 0.0};
    double theta = 1.0;
    double offset = 0.0;
};

inline double eval_kernel(const KernelSpec& k, Point2 x) {
    const double r = dist(x, k.center);
    if (r == 0.0 && kernel_is_polar(k.p)) return -std::numeric_limits<double>::infinity();
    return k.theta * kernel_radial(k.p, k.norm, r) + k.offset;
}

/// Scalar function on a ball, given by an evaluation callback. `radius`
/// is the guaranteed evaluation domain around `center`; infinity when the
/// callback is entire.
struct SampledFunction {
    std::function<double(Point2)> eval;
    Point2 center{0.0, 0.0};
    double radius = std::numeric_limits<double>::infinity();

    double operator()(Point2 x) const { return eval(x); }
};

struct KernelTerm {
    double theta = 1.0;
    Point2 center{0.0, 0.0};
};

/// Superposition sum_j theta_j K_p(x - x_j) + C.
inline SampledFunction kernel_sum(const std::vector<KernelTerm>& terms, double p, double C = 0.0,
                                  KernelNorm norm = KernelNorm::Classic) {
    if (terms.empty()) throw std::invalid_argument("kernel_sum: no terms");
    for (size_t i = 0; i < terms.size(); ++i) {
        if (terms[i].theta <= 0.0) throw std::invalid_argument("kernel_sum: weights must be positive");
        for (size_t j = i + 1; j < terms.size(); ++j)
            if (dist(terms[i].center, terms[j].center) == 0.0)
                throw std::invalid_argument("kernel_sum: duplicate centers");
    }
    SampledFunction f;
    f.center = terms.front().center;
    f.eval = [terms, p, C, norm](Point2 x) {
        double s = C;
        for (const auto& t : terms) {
            const double r = dist(x, t.center);
            if (r == 0.0 && kernel_is_polar(p)) return -std::numeric_limits<double>::infinity();
            s += t.theta * kernel_radial(p, norm, r);
        }
        return s;
    };
    return f;
}

/// Rescaling flow around u's center:
///   u_r(x) = r^(p-2) u(rx)            for p >= 2,
///   u_r(x) = (u(rx) - u(0)) / r^(2-p) for p < 2.
/// Plain kernels are fixed points for every r (p != 2).
inline SampledFunction tangent_rescale(const SampledFunction& u, double r, double p,
                                       double target_radius = 0.0) {
    if (r <= 0.0) throw std::invalid_argument("tangent_rescale: scale must be positive");
    if (target_radius <= 0.0) target_radius = u.radius / r;
    if (r * target_radius > u.radius) throw std::domain_error("tangent_rescale: domain too small for requested radius");
    SampledFunction out;
    out.center = u.center;
    out.radius = target_radius;
    const Point2 c = u.center;
    if (p >= 2.0) {
        const double scale = std::pow(r, p - 2.0);
        out.eval = [u, r, c, scale](Point2 x) { return scale * u.eval(c + (x - c) * r); };
    } else {
        const double inv = std::pow(r, -(2.0 - p));
        const double u0 = u.eval(c);
        out.eval = [u, r, c, inv, u0](Point2 x) { return (u.eval(c + (x - c) * r) - u0) * inv; };
    }
    return out;
}

enum class DensityStatus { Ok, NoDensityDetected };

struct DensityRow {
    double rho = 0.0;
    double sup = 0.0;    // max of u over the circle of radius rho
    double ratio = 0.0;  // sup (minus u(x0) in the finite regime) over the kernel
};

struct DensityReport {
    DensityStatus status = DensityStatus::Ok;
    double theta_hat = 0.0;
    std::vector<DensityRow> rows;
};

/// Density of u at x0 against the radial kernel of exponent p:
/// per-radius ratios sup_{|x-x0|=rho} u / K_p(rho) (polar regime) or
/// (sup - u(x0)) / K_p(rho) (finite regime), extrapolated to rho -> 0 by a
/// linear fit in the regime-appropriate variable. `denom_scale` rescales
/// the comparison kernel, e.g. to normalize it to 1 on the outer boundary.
inline DensityReport density_estimate(const SampledFunction& u, Point2 x0, double p,
                                      const std::vector<double>& radii,
                                      KernelNorm norm = KernelNorm::Classic,
                                      int samples_per_circle = 64, double denom_scale = 1.0) {
    if (radii.size() < 3) throw std::invalid_argument("density_estimate: need at least 3 radii");
    for (size_t i = 1; i < radii.size(); ++i)
        if (radii[i] >= radii[i - 1]) throw std::invalid_argument("density_estimate: radii must be strictly decreasing");
    if (radii.front() > u.radius) throw std::domain_error("density_estimate: radius outside the function's domain");

    const bool polar = kernel_is_polar(p);
    const double u0 = polar ? 0.0 : u.eval(x0);
    DensityReport rep;
    for (double rho : radii) {
        DensityRow row;
        row.rho = rho;
        double sup = -std::numeric_limits<double>::infinity();
        for (int i = 0; i < samples_per_circle; ++i) {
            const double ang = 2.0 * M_PI * double(i) / double(samples_per_circle);
            sup = std::max(sup, u.eval({x0.x + rho * std::cos(ang), x0.y + rho * std::sin(ang)}));
        }
        row.sup = sup;
        const double denom = denom_scale * kernel_radial(p, norm, rho);
        row.ratio = (sup - u0) / denom;
        rep.rows.push_back(row);
    }

    double prev = std::abs(rep.rows.front().ratio);
    for (const auto& row : rep.rows) {
        const double cur = std::abs(row.ratio);
        if (!std::isfinite(row.ratio) || cur > 10.0 * std::max(1.0, prev)) {
            rep.status = DensityStatus::NoDensityDetected;
            return rep;
        }
        prev = cur;
    }

    // Regression variable that tends to 0 with rho; the intercept is the
    // reported density.
    auto fit_var = [&](double rho) {
        if (p > 2.0) return 1.0 / kernel_radial(p, norm, rho);
        if (p == 2.0) return -1.0 / std::log(rho);  // radii < 1 in practice; variable -> 0 as rho -> 0
        return std::pow(rho, std::min(1.0, 2.0 - p));
    };
    double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
    const double m = double(rep.rows.size());
    for (const auto& row : rep.rows) {
        const double z = fit_var(row.rho);
        sx += z, sy += row.ratio, sxx += z * z, sxy += z * row.ratio;
    }
    const double det = m * sxx - sx * sx;
    if (std::abs(det) < 1e-300) {
        rep.theta_hat = sy / m;
    } else {
        const double slope = (m * sxy - sx * sy) / det;
        rep.theta_hat = (sy - slope * sx) / m;
    }
    return rep;
}

enum class AsymMode { Polar, Finite };

struct AsymReport {
    bool equivalent = false;
    std::vector<double> trace;  // per-probe sup|u-h| (polar) or worst ratio deviation (finite)
    double bound = 0.0;         // polar: last sup|u-h|
};

/// Polar mode: u and h are asymptotically equivalent when u - h stays
/// bounded; detected as no growth beyond factor 1.05 across the last three
/// probe circles. Finite mode: (u - u(x0)) / (h - h(x0)) must approach 1
/// within 2% at the smallest probes.
inline AsymReport asym_equiv_check(const SampledFunction& u, const SampledFunction& h, AsymMode mode,
                                   const std::vector<double>& probe_radii, int samples_per_circle = 64) {
    if (probe_radii.size() < 3) throw std::invalid_argument("asym_equiv_check: need at least 3 probe radii");
    for (double r : probe_radii)
        if (r > u.radius || r > h.radius) throw std::domain_error("asym_equiv_check: probe outside domain");
    const Point2 c = u.center;
    AsymReport rep;
    if (mode == AsymMode::Polar) {
        for (double rho : probe_radii) {
            double sup = 0.0;
            for (int i = 0; i < samples_per_circle; ++i) {
                const double ang = 2.0 * M_PI * double(i) / double(samples_per_circle);
                const Point2 x{c.x + rho * std::cos(ang), c.y + rho * std::sin(ang)};
                sup = std::max(sup, std::abs(u.eval(x) - h.eval(x)));
            }
            rep.trace.push_back(sup);
        }
        const size_t k = rep.trace.size();
        const double b1 = rep.trace[k - 3], b2 = rep.trace[k - 2], b3 = rep.trace[k - 1];
        rep.bound = b3;
        rep.equivalent = (b2 <= 1.05 * std::max(b1, 1e-300)) && (b3 <= 1.05 * std::max(b2, 1e-300));
        if (b1 == 0.0 && b2 == 0.0 && b3 == 0.0) rep.equivalent = true;
    } else {
        const double u0 = u.eval(c), h0 = h.eval(c);
        for (double rho : probe_radii) {
            double worst = 0.0;
            for (int i = 0; i < samples_per_circle; ++i) {
                const double ang = 2.0 * M_PI * double(i) / double(samples_per_circle);
                const Point2 x{c.x + rho * std::cos(ang), c.y + rho * std::sin(ang)};
                const double ratio = (u.eval(x) - u0) / (h.eval(x) - h0);
                worst = std::max(worst, std::abs(ratio - 1.0));
            }
            rep.trace.push_back(worst);
        }
        const size_t k = rep.trace.size();
        rep.bound = rep.trace[k - 1];
        rep.equivalent = rep.trace[k - 1] <= 0.02 && rep.trace[k - 2] <= 0.02;
    }
    return rep;
}

enum class SingularityClass { DownwardPointing, Not };

/// Classification of a homogeneous profile |x|^alpha g(x/|x|) (log form
/// when alpha = 0) by the sign pattern of g on the sphere.
inline SingularityClass classify_homogeneous(const std::vector<double>& g_on_sphere, double alpha) {
    if (alpha > 1.0) throw std::invalid_argument("classify_homogeneous: homogeneity above 1 is unsupported");
    if (g_on_sphere.empty()) throw std::invalid_argument("classify_homogeneous: empty sphere sample");
    for (double v : g_on_sphere)
        if (!std::isfinite(v)) throw std::invalid_argument("classify_homogeneous: non-finite sample");
    if (alpha == 0.0) return SingularityClass::DownwardPointing;
    double mn = g_on_sphere.front(), mx = g_on_sphere.front();
    for (double v : g_on_sphere) mn = std::min(mn, v), mx = std::max(mx, v);
    if (alpha > 0.0) return mn > 0.0 ? SingularityClass::DownwardPointing : SingularityClass::Not;
    return mx < 0.0 ? SingularityClass::DownwardPointing : SingularityClass::Not;
}

}  // namespace conepot
