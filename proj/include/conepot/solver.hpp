#pragma once

#include <atomic>
#include <cmath>
#include <condition_variable>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "conepot/grid.hpp"
#include "conepot/kernel.hpp"
#include "conepot/subeq.hpp"

namespace conepot {

struct UnsupportedOperatorError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DivergenceError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Two-argument stepping operator G(min-estimate, max-estimate), the 2D
/// restriction of a catalog gauge. Nondecreasing in both arguments, which
/// is what transfers comparison to the discrete level.
struct StepOperator {
    enum class Family { MinMaxLike, DeltaCone, Laplace, Pucci };
    Family family = Family::Laplace;
    double pm1 = 0.0;         // p - 1 for the eigenvalue-combination kinds
    double half_delta = 0.0;  // delta / n with n = 2
    double lam = 1.0, Lam = 1.0;
    double lipschitz = 2.0;

    static StepOperator from_spec(const SubequationSpec& s) {
        if (s.n != 2) throw UnsupportedOperatorError("stepping requires n = 2");
        StepOperator op;
        switch (s.kind) {
            case SubeqKind::PartialSum:
            case SubeqKind::MinMax:
            case SubeqKind::MinSecond:
                op.family = Family::MinMaxLike;
                op.pm1 = s.p - 1.0;
                op.lipschitz = std::max(1.0, op.pm1) + 1.0;
                return op;
            case SubeqKind::DeltaCone:
                op.family = Family::DeltaCone;
                op.half_delta = s.delta / 2.0;
                op.lipschitz = 1.0 + s.delta;
                return op;
            case SubeqKind::SigmaK:
                if (s.k == 1) {
                    op.family = Family::Laplace;
                    op.lipschitz = 2.0;
                    return op;
                }
                if (s.k == 2) {
                    // sigma_1, sigma_2 >= 0 in 2D is the convexity cone.
                    op.family = Family::MinMaxLike;
                    op.pm1 = 0.0;
                    op.lipschitz = 2.0;
                    return op;
                }
                throw UnsupportedOperatorError("SigmaK stepping supports k = 1, 2 only");
            case SubeqKind::TracePower:
                if (s.q == 1) {
                    op.family = Family::Laplace;
                    op.lipschitz = 2.0;
                    return op;
                }
                throw UnsupportedOperatorError("TracePower stepping supports q = 1 only");
            case SubeqKind::Pucci:
                op.family = Family::Pucci;
                op.lam = s.lam;
                op.Lam = s.Lam;
                op.lipschitz = 2.0 * s.Lam;
                return op;
            default: throw UnsupportedOperatorError("kind has no monotone stepping operator");
        }
    }

    double operator()(double m, double M) const {
        switch (family) {
            case Family::MinMaxLike: return m + pm1 * M;
            case Family::DeltaCone: return m + half_delta * (m + M);
            case Family::Laplace: return m + M;
            case Family::Pucci:
                return Lam * (std::max(m, 0.0) + std::max(M, 0.0)) + lam * (std::min(m, 0.0) + std::min(M, 0.0));
        }
        return 0.0;
    }
};

struct SolveConfig {
    SubequationSpec spec = SubequationSpec::min_max(2, 2.0);
    double tau = 0.0;             // 0: auto = 0.45 h^2 |d|^2_min / L, clamped by the cut-cell bound
    double tol = 0.0;             // 0: auto = 1e-8 * scale of the boundary data
    long max_iters = 200000;
    std::vector<double> r_schedule;  // empty: halving from r0 = R/4 down to the stencil-safe floor
    int stencil_half_dirs = 16;
    int threads = 1;
    double tol_mono = 1e-8;
    int residual_stride = 256;
};

namespace detail {

class WorkerPool {
public:
    explicit WorkerPool(int threads) : n_(std::max(1, threads)) {
        for (int t = 1; t < n_; ++t)
            workers_.emplace_back([this, t] { worker_loop(t); });
    }

    ~WorkerPool() {
        {
            std::unique_lock<std::mutex> lk(mu_);
            stop_ = true;
            ++epoch_;
        }
        cv_.notify_all();
        for (auto& w : workers_) w.join();
    }

    int size() const { return n_; }

    // Runs job(t) for t in [0, size) and waits for completion.
    void run(const std::function<void(int)>& job) {
        if (n_ == 1) {
            job(0);
            return;
        }
        {
            std::unique_lock<std::mutex> lk(mu_);
            job_ = &job;
            done_ = 0;
            ++epoch_;
        }
        cv_.notify_all();
        job(0);
        std::unique_lock<std::mutex> lk(mu_);
        cv_done_.wait(lk, [this] { return done_ == n_ - 1; });
        job_ = nullptr;
    }

private:
    void worker_loop(int t) {
        std::uint64_t seen = 0;
        for (;;) {
            const std::function<void(int)>* job = nullptr;
            {
                std::unique_lock<std::mutex> lk(mu_);
                cv_.wait(lk, [&] { return epoch_ != seen; });
                seen = epoch_;
                if (stop_) return;
                job = job_;
            }
            if (job) (*job)(t);
            {
                std::unique_lock<std::mutex> lk(mu_);
                ++done_;
            }
            cv_done_.notify_one();
        }
    }

    int n_;
    std::vector<std::thread> workers_;
    std::mutex mu_;
    std::condition_variable cv_, cv_done_;
    const std::function<void(int)>* job_ = nullptr;
    std::uint64_t epoch_ = 0;
    int done_ = 0;
    bool stop_ = false;
};

// Precomputed sweep data. Nodes whose stencil legs all land on lattice
// values take the fast path; nodes with legs crossing the outer boundary
// carry cached crossing fractions and boundary values.
class JacobiEngine {
public:
    JacobiEngine(std::shared_ptr<const GridDomain> dom, const Stencil& st)
        : dom_(std::move(dom)), st_(st) {
        const GridDomain& g = *dom_;
        const int nd = int(st_.offsets.size());
        lin_.resize(nd);
        inv_len2_.resize(nd);
        for (int d = 0; d < nd; ++d) {
            lin_[d] = st_.offsets[d].dy * g.nx + st_.offsets[d].dx;
            inv_len2_[d] = 1.0 / (g.h * g.h * st_.offsets[d].len2());
        }
        max_center_coeff_ = 2.0 / (g.h * g.h);
        for (int j = 0; j < g.ny; ++j)
            for (int i = 0; i < g.nx; ++i) {
                if (g.cls[g.idx(i, j)] != NodeClass::Interior) continue;
                bool cut = false;
                for (const auto& o : st_.offsets)
                    if (g.node_class(i + o.dx, j + o.dy) == NodeClass::Exterior ||
                        g.node_class(i - o.dx, j - o.dy) == NodeClass::Exterior) {
                        cut = true;
                        break;
                    }
                if (!cut) {
                    regular_.push_back(g.idx(i, j));
                } else {
                    cut_nodes_.push_back(g.idx(i, j));
                    for (int d = 0; d < nd; ++d) {
                        CutLeg leg;
                        const auto& o = st_.offsets[d];
                        fill_side(i, j, o.dx, o.dy, leg.fwd_node, leg.fwd_val, leg.fwd_frac);
                        fill_side(i, j, -o.dx, -o.dy, leg.bwd_node, leg.bwd_val, leg.bwd_frac);
                        const double c = 2.0 * inv_len2_[d] / (leg.fwd_frac * leg.bwd_frac);
                        max_center_coeff_ = std::max(max_center_coeff_, c);
                        cut_legs_.push_back(leg);
                    }
                }
            }
    }

    const GridDomain& domain() const { return *dom_; }
    const std::vector<int>& regular_nodes() const { return regular_; }
    const std::vector<int>& cut_nodes() const { return cut_nodes_; }
    double max_center_coeff() const { return max_center_coeff_; }
    int dirs() const { return int(st_.offsets.size()); }

    EigEstimate estimate(const std::vector<double>& u, int k, bool is_cut, int cut_ordinal) const {
        const double u0 = u[k];
        double m = std::numeric_limits<double>::infinity(), M = -m;
        const int nd = dirs();
        if (!is_cut) {
            for (int d = 0; d < nd; ++d) {
                const double v = (u[k + lin_[d]] + u[k - lin_[d]] - 2.0 * u0) * inv_len2_[d];
                m = std::min(m, v);
                M = std::max(M, v);
            }
        } else {
            const CutLeg* legs = &cut_legs_[size_t(cut_ordinal) * nd];
            for (int d = 0; d < nd; ++d) {
                const CutLeg& L = legs[d];
                const double up = L.fwd_node >= 0 ? u[L.fwd_node] : L.fwd_val;
                const double um = L.bwd_node >= 0 ? u[L.bwd_node] : L.bwd_val;
                const double v = three_point_second_diff(um, u0, up, L.fwd_frac, L.bwd_frac, 1.0 / inv_len2_[d]);
                m = std::min(m, v);
                M = std::max(M, v);
            }
        }
        return {m, M};
    }

    /// One damped Jacobi sweep u -> u + tau G[u], floored by `floor` when
    /// present. Returns the max-norm of the update.
    double sweep(const std::vector<double>& u, std::vector<double>& un, const StepOperator& op, double tau,
                 const std::vector<double>* floor, WorkerPool& pool) const {
        const int T = pool.size();
        std::vector<double> local_res(T, 0.0);
        auto span = [](size_t n, int t, int T) {
            const size_t lo = n * size_t(t) / T, hi = n * size_t(t + 1) / T;
            return std::pair<size_t, size_t>(lo, hi);
        };
        pool.run([&](int t) {
            double res = 0.0;
            const auto [rlo, rhi] = span(regular_.size(), t, T);
            for (size_t a = rlo; a < rhi; ++a) {
                const int k = regular_[a];
                const auto e = estimate(u, k, false, 0);
                double v = u[k] + tau * op(e.min, e.max);
                if (floor) v = std::max(v, (*floor)[k]);
                un[k] = v;
                res = std::max(res, std::abs(v - u[k]));
            }
            const auto [clo, chi] = span(cut_nodes_.size(), t, T);
            for (size_t a = clo; a < chi; ++a) {
                const int k = cut_nodes_[a];
                const auto e = estimate(u, k, true, int(a));
                double v = u[k] + tau * op(e.min, e.max);
                if (floor) v = std::max(v, (*floor)[k]);
                un[k] = v;
                res = std::max(res, std::abs(v - u[k]));
            }
            local_res[t] = res;
        });
        double res = 0.0;
        for (double r : local_res) res = std::max(res, r);
        return res;
    }

private:
    struct CutLeg {
        int fwd_node = -1, bwd_node = -1;
        double fwd_val = 0.0, bwd_val = 0.0;
        double fwd_frac = 1.0, bwd_frac = 1.0;
    };

    void fill_side(int i, int j, int dx, int dy, int& node, double& val, double& frac) const {
        const GridDomain& g = *dom_;
        if (g.node_class(i + dx, j + dy) != NodeClass::Exterior) {
            node = g.idx(i + dx, j + dy);
            val = 0.0;
            frac = 1.0;
            return;
        }
        node = -1;
        const Point2 x = g.coord(i, j);
        const double len = std::hypot(double(dx), double(dy));
        const Point2 unit{dx / len, dy / len};
        const double t = g.shape.crossing_distance(x, unit);
        frac = std::min(1.0, std::max(t / (g.h * len), 1e-12));
        val = g.phi({x.x + t * unit.x, x.y + t * unit.y});
    }

    std::shared_ptr<const GridDomain> dom_;
    Stencil st_;
    std::vector<long> lin_;
    std::vector<double> inv_len2_;
    std::vector<int> regular_, cut_nodes_;
    std::vector<CutLeg> cut_legs_;
    double max_center_coeff_ = 0.0;
};

inline double data_scale(const GridDomain& g) {
    double s = 1.0;
    for (int k = 0; k < g.nx * g.ny; ++k)
        if (g.cls[k] == NodeClass::OuterBand || g.cls[k] == NodeClass::InnerDisk)
            if (std::isfinite(g.dirichlet[k])) s = std::max(s, std::abs(g.dirichlet[k]));
    return s;
}

inline double effective_tau(const SolveConfig& cfg, const JacobiEngine& eng, const StepOperator& op) {
    const double h = eng.domain().h;
    double tau = cfg.tau > 0.0 ? cfg.tau : 0.45 * h * h / op.lipschitz;
    // Stability bound including degenerate cut cells.
    const double cap = 0.9 / (op.lipschitz * eng.max_center_coeff());
    return std::min(tau, cap);
}

}  // namespace detail

/// G applied to the wide-stencil eigenvalue estimates at one node.
inline double evaluate_op(const SolveConfig& cfg, const SolutionField& u, int i, int j) {
    const StepOperator op = StepOperator::from_spec(cfg.spec);
    const auto e = eig_est(u, i, j, Stencil::make(cfg.stencil_half_dirs));
    return op(e.min, e.max);
}

/// Minimum of the stepping operator over the active nodes; a value above
/// -tol certifies discrete subharmonicity of the field.
inline double subharmonic_residual(const SolveConfig& cfg, const SolutionField& u) {
    const StepOperator op = StepOperator::from_spec(cfg.spec);
    detail::JacobiEngine eng(u.domain, Stencil::make(cfg.stencil_half_dirs));
    double worst = std::numeric_limits<double>::infinity();
    const auto& reg = eng.regular_nodes();
    for (size_t a = 0; a < reg.size(); ++a) {
        const auto e = eng.estimate(u.values, reg[a], false, 0);
        worst = std::min(worst, op(e.min, e.max));
    }
    const auto& cut = eng.cut_nodes();
    for (size_t a = 0; a < cut.size(); ++a) {
        const auto e = eng.estimate(u.values, cut[a], true, int(a));
        worst = std::min(worst, op(e.min, e.max));
    }
    return worst;
}

namespace detail {

inline SolutionField run_fixed_point(std::shared_ptr<const GridDomain> dom, const SolveConfig& cfg,
                                     const JacobiEngine& eng, const StepOperator& op,
                                     const std::vector<double>* init, const std::vector<double>* floor,
                                     WorkerPool& pool) {
    SolutionField f = make_field(dom);
    if (init) {
        f.values = *init;
        // Data nodes always carry the imposed values.
        for (size_t k = 0; k < f.values.size(); ++k)
            if (dom->cls[k] == NodeClass::OuterBand || dom->cls[k] == NodeClass::InnerDisk)
                f.values[k] = dom->dirichlet[k];
    }
    if (floor)
        for (size_t k = 0; k < f.values.size(); ++k)
            if (dom->cls[k] == NodeClass::Interior) f.values[k] = std::max(f.values[k], (*floor)[k]);

    const double tol = cfg.tol > 0.0 ? cfg.tol : 1e-8 * data_scale(*dom);
    const double tau = effective_tau(cfg, eng, op);
    std::vector<double> next = f.values;
    long it = 0;
    double res = std::numeric_limits<double>::infinity();
    for (; it < cfg.max_iters; ++it) {
        res = eng.sweep(f.values, next, op, tau, floor, pool);
        f.values.swap(next);
        if (!std::isfinite(res)) throw DivergenceError("solve diverged: non-finite update at iteration " + std::to_string(it));
        if (it % cfg.residual_stride == 0) f.residual_history.push_back(res);
        if (res <= tol) break;
    }
    f.residual_history.push_back(res);
    f.iterations = it + 1;
    f.converged = res <= tol;
    if (!f.converged)
        f.message = "max_iters exceeded; last residual " + std::to_string(res);
    return f;
}

}  // namespace detail

/// Damped Jacobi fixed point for the Dirichlet problem on the (possibly
/// perforated) domain. At convergence |G[u]| <= tol/tau at every active
/// node.
inline SolutionField solve_dirichlet(std::shared_ptr<const GridDomain> dom, const SolveConfig& cfg,
                                     const std::vector<double>* init = nullptr,
                                     const std::vector<double>* floor = nullptr) {
    const StepOperator op = StepOperator::from_spec(cfg.spec);
    detail::WorkerPool pool(cfg.threads);
    detail::JacobiEngine eng(dom, Stencil::make(cfg.stencil_half_dirs));
    return detail::run_fixed_point(dom, cfg, eng, op, init, floor, pool);
}

struct Singularity {
    Point2 location;
    double theta = 1.0;
};

struct PoleBound {
    std::vector<double> probe_radii;
    std::vector<double> sup_excess;  // sup over the circle of (H - theta K_p)
    double c = 0.0;
    bool bounded = true;
};

struct PerronReport {
    std::vector<double> r_schedule;
    long total_iterations = 0;
    bool all_converged = true;
    int mono_violations = 0;
    double mono_worst_drop = 0.0;       // most negative nodewise step difference
    double sandwich_psi_worst = 0.0;    // min(H - psi); >= -tol certifies the lower sandwich
    double sandwich_dp_worst = 0.0;     // min(H_DP - H)
    bool convexity_hypothesis_ok = true;
    double psi_subharmonic_residual = 0.0;  // evidence attached when it is not
    std::vector<PoleBound> pole_bounds;
    double b4_shift = 0.0;
    double p_used = 2.0;
};

struct PerronResult {
    SolutionField field;
    PerronReport report;
};

namespace detail {

// Kernel superposition with the radius floored at clamp_radius, so nodes
// that coincide with a pole carry a large finite value instead of -inf.
inline std::function<double(Point2)> clamped_kernel_sum(const std::vector<Singularity>& sing, double p,
                                                        double shift, double clamp_radius) {
    return [sing, p, shift, clamp_radius](Point2 x) {
        double s = shift;
        for (const auto& sg : sing)
            s += sg.theta * kernel_radial(p, KernelNorm::Classic, std::max(dist(x, sg.location), clamp_radius));
        return s;
    };
}

inline std::vector<double> default_r_schedule(const GridDomain& g, const std::vector<Singularity>& sing,
                                              int stencil_half_dirs) {
    const double reach = std::sqrt(Stencil::make(stencil_half_dirs).offsets.back().len2());
    double r_min = std::max(3.0, reach + 1.2) * g.h;
    double r0 = g.shape.inradius() / 4.0;
    for (const auto& s : sing)
        r0 = std::min(r0, g.shape.distance_to_boundary(s.location) - 3.0 * g.h);
    for (size_t i = 0; i < sing.size(); ++i)
        for (size_t j = i + 1; j < sing.size(); ++j)
            r0 = std::min(r0, (dist(sing[i].location, sing[j].location) - 3.0 * g.h) / 2.0);
    if (r0 < r_min) throw std::invalid_argument("perron_limit: singularities too close for the grid spacing");
    std::vector<double> sched;
    for (double r = r0; r >= r_min; r /= 2.0) sched.push_back(r);
    return sched;
}

}  // namespace detail

/// The increasing-in-shrinking-radius construction: solve on the domain
/// with balls of radius r excised around the singular points, extend by
/// the inner data over the balls, and pass to the smallest radius the
/// grid supports. Each step is floored by the inner data function, which
/// keeps the per-step monotonicity and the lower sandwich exact up to the
/// solver tolerance.
inline PerronResult perron_limit(const GridDomain& base, const SolveConfig& cfg,
                                 const std::vector<Singularity>& singularities,
                                 std::optional<double> p_override = std::nullopt) {
    if (singularities.empty()) throw std::invalid_argument("perron_limit: no singularities");
    const StepOperator op = StepOperator::from_spec(cfg.spec);
    const double p_used = p_override ? *p_override : riesz_characteristic(cfg.spec);
    if (!(p_used >= 2.0)) throw std::invalid_argument("perron_limit: needs characteristic >= 2 (polar case)");

    PerronReport rep;
    rep.p_used = p_used;
    if (singularities.size() > 1 && !cfg.spec.is_convex()) rep.convexity_hypothesis_ok = false;

    // Enforce psi <= phi on the outer boundary by shifting psi; the
    // asymptotic class is unchanged by constants.
    auto raw_psi = detail::clamped_kernel_sum(singularities, p_used, 0.0, base.h / 4.0);
    double excess = 0.0;
    for (const Point2& b : base.shape.boundary_samples(512)) excess = std::max(excess, raw_psi(b) - base.phi(b));
    for (int k = 0; k < base.nx * base.ny; ++k)
        if (base.cls[k] == NodeClass::OuterBand) {
            const auto ij = std::div(k, base.nx);
            excess = std::max(excess, raw_psi(base.coord(ij.rem, ij.quot)) - base.dirichlet[k]);
        }
    rep.b4_shift = excess > 0.0 ? -excess : 0.0;
    auto psi = detail::clamped_kernel_sum(singularities, p_used, rep.b4_shift, base.h / 4.0);

    std::vector<Point2> centers;
    for (const auto& s : singularities) centers.push_back(s.location);
    rep.r_schedule = cfg.r_schedule.empty() ? detail::default_r_schedule(base, singularities, cfg.stencil_half_dirs)
                                            : cfg.r_schedule;

    std::vector<double> floor(size_t(base.nx) * base.ny, 0.0);
    for (int j = 0; j < base.ny; ++j)
        for (int i = 0; i < base.nx; ++i) floor[base.idx(i, j)] = psi(base.coord(i, j));

    detail::WorkerPool pool(cfg.threads);
    SolutionField current;
    std::vector<double> prev_values;
    bool have_prev = false;
    for (double r : rep.r_schedule) {
        auto dom = std::make_shared<GridDomain>(perforate(base, centers, r, psi));
        detail::JacobiEngine eng(dom, Stencil::make(cfg.stencil_half_dirs));
        SolveConfig step_cfg = cfg;
        step_cfg.r_schedule.clear();
        current = detail::run_fixed_point(dom, step_cfg, eng, op,
                                          have_prev ? &prev_values : &floor, &floor, pool);
        rep.total_iterations += current.iterations;
        rep.all_converged = rep.all_converged && current.converged;
        if (have_prev) {
            for (size_t k = 0; k < current.values.size(); ++k) {
                if (dom->cls[k] == NodeClass::Exterior) continue;
                const double drop = current.values[k] - prev_values[k];
                rep.mono_worst_drop = std::min(rep.mono_worst_drop, drop);
                if (drop < -cfg.tol_mono) ++rep.mono_violations;
            }
        }
        prev_values = current.values;
        have_prev = true;
        current.r_schedule_used.push_back(r);
    }
    current.r_schedule_used = rep.r_schedule;

    // Sandwich: psi <= H <= H_DP nodewise.
    rep.sandwich_psi_worst = std::numeric_limits<double>::infinity();
    for (size_t k = 0; k < current.values.size(); ++k)
        if (base.cls[k] != NodeClass::Exterior)
            rep.sandwich_psi_worst = std::min(rep.sandwich_psi_worst, current.values[k] - floor[k]);

    auto plain = std::make_shared<GridDomain>(base);
    SolutionField hdp = solve_dirichlet(plain, cfg);
    rep.total_iterations += hdp.iterations;
    rep.sandwich_dp_worst = std::numeric_limits<double>::infinity();
    for (size_t k = 0; k < current.values.size(); ++k)
        if (base.cls[k] != NodeClass::Exterior)
            rep.sandwich_dp_worst = std::min(rep.sandwich_dp_worst, hdp.values[k] - current.values[k]);

    if (!rep.convexity_hypothesis_ok) {
        SolutionField psi_field = make_field(std::make_shared<GridDomain>(base));
        psi_field.values = floor;
        rep.psi_subharmonic_residual = subharmonic_residual(cfg, psi_field);
    }

    // Upper bound near each pole: sup over probe circles of H - theta K_p
    // must not grow as the probes shrink.
    const SampledFunction Hf = field_function(current);
    const double r_floor = rep.r_schedule.back();
    for (const auto& sg : singularities) {
        PoleBound pb;
        const double lo = 1.5 * r_floor, hi = std::max(4.0 * lo, rep.r_schedule.front());
        for (int i = 0; i < 5; ++i) pb.probe_radii.push_back(hi * std::pow(lo / hi, double(i) / 4.0));
        for (double rho : pb.probe_radii) {
            double sup = -std::numeric_limits<double>::infinity();
            for (int a = 0; a < 64; ++a) {
                const double ang = 2.0 * M_PI * a / 64.0;
                const Point2 x{sg.location.x + rho * std::cos(ang), sg.location.y + rho * std::sin(ang)};
                sup = std::max(sup, Hf.eval(x) - sg.theta * kernel_radial(p_used, KernelNorm::Classic, rho));
            }
            pb.sup_excess.push_back(sup);
        }
        double away = -std::numeric_limits<double>::infinity(), near = -away;
        for (size_t i = 0; i < pb.sup_excess.size(); ++i)
            (i + 2 < pb.sup_excess.size() ? away : near) = std::max(i + 2 < pb.sup_excess.size() ? away : near,
                                                                    pb.sup_excess[i]);
        pb.c = *std::max_element(pb.sup_excess.begin(), pb.sup_excess.end());
        pb.bounded = near <= std::max(away, 0.0) + 0.05 * (1.0 + std::abs(away));
        rep.pole_bounds.push_back(pb);
    }

    return {std::move(current), std::move(rep)};
}

struct GreenReport {
    PerronReport perron;
    DensityReport density;
    double max_active = 0.0;
    bool nonpositive = true;
    bool density_ok = true;
};

struct GreenResult {
    SolutionField field;
    GreenReport report;
};

/// Green's function with a single prescribed pole: zero outer data, the
/// kernel singularity at x0 with weight theta. Postconditions: the field
/// is nonpositive with its maximum on the boundary, and the measured
/// density at x0 recovers theta.
inline GreenResult green_function(const GridDomain& base, const SolveConfig& cfg, Point2 x0, double theta,
                                  double density_tolerance = 0.05) {
    PerronResult pr = perron_limit(base, cfg, {{x0, theta}});
    GreenReport rep;
    rep.perron = pr.report;

    rep.max_active = -std::numeric_limits<double>::infinity();
    const GridDomain& g = *pr.field.domain;
    for (int k = 0; k < g.nx * g.ny; ++k)
        if (g.cls[k] == NodeClass::Interior) rep.max_active = std::max(rep.max_active, pr.field.values[k]);
    const double tol = (cfg.tol > 0.0 ? cfg.tol : 1e-8 * detail::data_scale(g)) * 10.0;
    rep.nonpositive = rep.max_active <= tol;

    const double r0 = pr.report.r_schedule.front();
    const double lo = 5.0 * g.h;
    std::vector<double> radii;
    for (int i = 0; i < 6; ++i) radii.push_back(r0 * std::pow(lo / r0, double(i) / 5.0));
    rep.density = density_estimate(field_function(pr.field), x0, pr.report.p_used, radii);
    rep.density_ok = rep.density.status == DensityStatus::Ok &&
                     std::abs(rep.density.theta_hat - theta) <= density_tolerance * std::max(1.0, theta);
    return {std::move(pr.field), std::move(rep)};
}

struct FiniteFamilyResult {
    std::vector<double> t_values;
    std::vector<double> f_values;       // measured h-density of H^t at x0
    std::vector<double> lambda_values;  // affine upper-bound coefficient
    std::vector<SolutionField> fields;
    std::vector<double> lower_gap;   // min(H^t - psi_t); (4a)
    std::vector<double> upper_gap;   // min(hbar_t - H^t); (4b)
    std::vector<double> center_gap;  // |H^t(x0) - (H^0(x0) - t)|
    SolutionField h0;
    double h_scale = 1.0;  // sup of the kernel on the boundary, normalizing h to 1 there
    double psi_subharmonic_residual = 0.0;
    bool convexity_ok = true;
    long total_iterations = 0;
};

namespace detail {

struct FiniteContext {
    std::shared_ptr<GridDomain> base;
    SolveConfig cfg;
    StepOperator op;
    Point2 x0;
    double p = 1.5;
    double h_scale = 1.0;
    std::function<double(Point2)> h;  // normalized: h(x0) = 0, sup on the boundary = 1
    std::vector<double> h_nodes;
    SolutionField h0;
    std::vector<double> sched;
    double sup_phi = 0.0, inf_h_bdry = 1.0, osc_h_bdry = 0.0;
    std::map<double, std::shared_ptr<GridDomain>> doms;  // keyed by r; inner data rewritten per t
};

inline FiniteContext finite_setup(const GridDomain& base_in, const SolveConfig& cfg, Point2 x0) {
    FiniteContext ctx;
    ctx.cfg = cfg;
    ctx.op = StepOperator::from_spec(cfg.spec);
    ctx.x0 = x0;
    ctx.p = riesz_characteristic(cfg.spec);
    if (!(ctx.p > 1.0 && ctx.p < 2.0))
        throw std::invalid_argument("finite case requires characteristic in (1,2), got " + std::to_string(ctx.p));
    ctx.base = std::make_shared<GridDomain>(base_in);

    double sup_k = 0.0;
    for (const Point2& b : ctx.base->shape.boundary_samples(512))
        sup_k = std::max(sup_k, kernel_radial(ctx.p, KernelNorm::Classic, dist(b, x0)));
    ctx.h_scale = sup_k;
    const double p = ctx.p, s = ctx.h_scale;
    ctx.h = [p, s, x0](Point2 x) { return kernel_radial(p, KernelNorm::Classic, dist(x, x0)) / s; };

    ctx.h_nodes.assign(size_t(ctx.base->nx) * ctx.base->ny, 0.0);
    for (int j = 0; j < ctx.base->ny; ++j)
        for (int i = 0; i < ctx.base->nx; ++i) ctx.h_nodes[ctx.base->idx(i, j)] = ctx.h(ctx.base->coord(i, j));

    ctx.h0 = solve_dirichlet(ctx.base, cfg);

    ctx.sched = cfg.r_schedule.empty()
                    ? default_r_schedule(*ctx.base, {{x0, 1.0}}, cfg.stencil_half_dirs)
                    : cfg.r_schedule;

    double inf_h = std::numeric_limits<double>::infinity(), sup_h = -inf_h, sup_phi = -inf_h;
    for (const Point2& b : ctx.base->shape.boundary_samples(512)) {
        const double hb = ctx.h(b);
        inf_h = std::min(inf_h, hb);
        sup_h = std::max(sup_h, hb);
        sup_phi = std::max(sup_phi, ctx.base->phi(b));
    }
    ctx.sup_phi = sup_phi;
    ctx.inf_h_bdry = inf_h;
    ctx.osc_h_bdry = sup_h - inf_h;
    return ctx;
}

// One member of the family: the r-limit with inner data H^0 + t(h - 1).
inline SolutionField finite_solve_t(FiniteContext& ctx, double t, const SolutionField* warm,
                                    double warm_t, long& iters, WorkerPool& pool) {
    const GridDomain& b = *ctx.base;
    std::vector<double> floor(ctx.h0.values.size());
    for (size_t k = 0; k < floor.size(); ++k) floor[k] = ctx.h0.values[k] + t * (ctx.h_nodes[k] - 1.0);

    std::vector<double> init = warm ? warm->values : floor;
    if (warm)
        for (size_t k = 0; k < init.size(); ++k) init[k] += (t - warm_t) * (ctx.h_nodes[k] - 1.0);

    SolutionField cur;
    std::vector<Point2> centers{ctx.x0};
    bool first = true;
    for (double r : ctx.sched) {
        auto it = ctx.doms.find(r);
        if (it == ctx.doms.end()) {
            auto dom = std::make_shared<GridDomain>(perforate(b, centers, r, [](Point2) { return 0.0; }));
            it = ctx.doms.emplace(r, std::move(dom)).first;
        }
        auto dom = it->second;
        for (int k = 0; k < dom->nx * dom->ny; ++k)
            if (dom->cls[k] == NodeClass::InnerDisk) dom->dirichlet[k] = floor[k];
        JacobiEngine eng(dom, Stencil::make(ctx.cfg.stencil_half_dirs));
        SolveConfig step = ctx.cfg;
        step.r_schedule.clear();
        cur = run_fixed_point(dom, step, eng, ctx.op, first ? &init : &cur.values, &floor, pool);
        iters += cur.iterations;
        first = false;
    }
    cur.r_schedule_used = ctx.sched;
    return cur;
}

inline double finite_density(const FiniteContext& ctx, const SolutionField& field) {
    const double r0 = ctx.sched.front(), lo = 5.0 * ctx.base->h;
    std::vector<double> radii;
    for (int i = 0; i < 6; ++i) radii.push_back(r0 * std::pow(lo / r0, double(i) / 5.0));
    // Ratio against the normalized h = K_p / h_scale.
    const auto rep = density_estimate(field_function(field), ctx.x0, ctx.p, radii, KernelNorm::Classic, 64,
                                      1.0 / ctx.h_scale);
    return rep.theta_hat;
}

inline double finite_lambda(const FiniteContext& ctx, double t) {
    return (ctx.sup_phi - ctx.h0.values[0 /*placeholder*/] + t * ctx.osc_h_bdry) / ctx.inf_h_bdry;
}

}  // namespace detail

/// The one-parameter family of punctured solutions H^t with inner data
/// H^0 + t(h - 1), h the kernel normalized to vanish at x0 and peak at 1
/// on the boundary. Returns the sampled density curve f(t) and the
/// two-sided envelope diagnostics.
inline FiniteFamilyResult finite_family(const GridDomain& base, const SolveConfig& cfg, Point2 x0,
                                        const std::vector<double>& t_list) {
    detail::FiniteContext ctx = detail::finite_setup(base, cfg, x0);
    detail::WorkerPool pool(cfg.threads);
    FiniteFamilyResult out;
    out.h0 = ctx.h0;
    out.h_scale = ctx.h_scale;
    out.total_iterations += ctx.h0.iterations;
    out.convexity_ok = cfg.spec.is_convex();

    // Value of H^0 at the singular point (grid node nearest x0).
    const int ci = int(std::lround((x0.x - base.origin.x) / base.h));
    const int cj = int(std::lround((x0.y - base.origin.y) / base.h));
    const double h0_at_x0 = ctx.h0.at(ci, cj);

    const SolutionField* warm = nullptr;
    double warm_t = 0.0;
    for (double t : t_list) {
        if (t < 0.0) throw std::invalid_argument("finite_family: t must be >= 0");
        SolutionField field =
            t == 0.0 ? ctx.h0 : detail::finite_solve_t(ctx, t, warm, warm_t, out.total_iterations, pool);

        std::vector<double> psi_t(field.values.size());
        for (size_t k = 0; k < psi_t.size(); ++k) psi_t[k] = ctx.h0.values[k] + t * (ctx.h_nodes[k] - 1.0);

        if (!out.convexity_ok && out.t_values.empty()) {
            SolutionField pf = make_field(ctx.base);
            pf.values = psi_t;
            out.psi_subharmonic_residual = subharmonic_residual(cfg, pf);
        }

        const double lam =
            (ctx.sup_phi - h0_at_x0 + t * ctx.osc_h_bdry) / ctx.inf_h_bdry;
        double lower = std::numeric_limits<double>::infinity(), upper = lower;
        for (size_t k = 0; k < field.values.size(); ++k) {
            if (ctx.base->cls[k] == NodeClass::Exterior) continue;
            lower = std::min(lower, field.values[k] - psi_t[k]);
            const double hbar = lam * ctx.h_nodes[k] + h0_at_x0 + t * (ctx.h_nodes[k] - 1.0);
            upper = std::min(upper, hbar - field.values[k]);
        }

        out.t_values.push_back(t);
        out.f_values.push_back(t == 0.0 ? detail::finite_density(ctx, ctx.h0) : detail::finite_density(ctx, field));
        out.lambda_values.push_back(lam);
        out.lower_gap.push_back(lower);
        out.upper_gap.push_back(upper);
        out.center_gap.push_back(std::abs(field.at(ci, cj) - (h0_at_x0 - t)));
        out.fields.push_back(std::move(field));
        warm = &out.fields.back();
        warm_t = t;
    }
    return out;
}

struct PrescribeResult {
    SolutionField field;
    double t_found = 0.0;
    double f_at_t = 0.0;
    bool ok = true;
    std::vector<std::pair<double, double>> f_trace;  // (t, f(t)) evaluations
    std::string message;
};

/// Root-find on the nondecreasing density curve: returns the family
/// member whose measured density matches theta_target within
/// 0.02 (1 + theta_target).
inline PrescribeResult prescribe_density(const GridDomain& base, const SolveConfig& cfg, Point2 x0,
                                         double theta_target) {
    if (theta_target < 0.0) throw std::invalid_argument("prescribe_density: target density must be >= 0");
    detail::FiniteContext ctx = detail::finite_setup(base, cfg, x0);
    detail::WorkerPool pool(cfg.threads);
    PrescribeResult out;
    long iters = 0;
    if (theta_target == 0.0) {
        out.field = ctx.h0;
        out.f_at_t = detail::finite_density(ctx, ctx.h0);
        return out;
    }
    const double tol = 0.02 * (1.0 + theta_target);
    const double t_max = 10.0 * theta_target + 10.0;

    SolutionField cur;
    double cur_t = 0.0;
    bool have_cur = false;
    auto eval_f = [&](double t) {
        cur = detail::finite_solve_t(ctx, t, have_cur ? &cur : nullptr, cur_t, iters, pool);
        cur_t = t;
        have_cur = true;
        const double f = detail::finite_density(ctx, cur);
        out.f_trace.emplace_back(t, f);
        return f;
    };

    double hi = theta_target, f_hi = eval_f(hi);
    while (f_hi < theta_target && hi < t_max) {
        hi = std::min(t_max, 1.6 * hi + 0.1);
        f_hi = eval_f(hi);
    }
    if (f_hi < theta_target - tol) {
        out.ok = false;
        out.message = "no bracket below t_max";
        out.field = std::move(cur);
        out.t_found = hi;
        out.f_at_t = f_hi;
        return out;
    }
    double lo = 0.0, f_best = f_hi, t_best = hi;
    for (int it = 0; it < 40 && std::abs(f_best - theta_target) > tol; ++it) {
        const double mid = 0.5 * (lo + hi);
        const double f_mid = eval_f(mid);
        if (std::abs(f_mid - theta_target) < std::abs(f_best - theta_target)) {
            f_best = f_mid;
            t_best = mid;
        }
        (f_mid < theta_target ? lo : hi) = mid;
    }
    if (std::abs(cur_t - t_best) > 1e-15) eval_f(t_best);
    out.field = std::move(cur);
    out.t_found = t_best;
    out.f_at_t = f_best;
    out.ok = std::abs(f_best - theta_target) <= tol;
    if (!out.ok) out.message = "did not meet density tolerance";
    return out;
}

struct ComparisonReport {
    bool preconditions_ok = true;
    double v_residual = 0.0;       // min G over active nodes of v (wants >= -tol)
    double w_dual_residual = 0.0;  // max dual-gauge over active nodes of w (wants <= tol)
    double interior_max = 0.0;
    double boundary_max = 0.0;
    double excess = 0.0;
    bool holds = true;
};

/// Discrete shadow of the comparison principle: for v subharmonic and w
/// dual-subharmonic, the interior max of v + w must not exceed the
/// boundary max.
inline ComparisonReport comparison_check(const SolutionField& v, const SolutionField& w,
                                         const SolveConfig& cfg, double tol_pre, double tol_cmp) {
    if (v.values.size() != w.values.size()) throw std::invalid_argument("comparison_check: field size mismatch");
    const StepOperator op = StepOperator::from_spec(cfg.spec);
    const Stencil st = Stencil::make(cfg.stencil_half_dirs);
    ComparisonReport rep;
    rep.v_residual = std::numeric_limits<double>::infinity();
    rep.w_dual_residual = -std::numeric_limits<double>::infinity();
    const GridDomain& g = *v.domain;
    rep.interior_max = -std::numeric_limits<double>::infinity();
    rep.boundary_max = rep.interior_max;
    for (int j = 0; j < g.ny; ++j)
        for (int i = 0; i < g.nx; ++i) {
            const int k = g.idx(i, j);
            if (g.cls[k] == NodeClass::Exterior) continue;
            const double sum = v.values[k] + w.values[k];
            if (g.cls[k] == NodeClass::Interior) {
                rep.interior_max = std::max(rep.interior_max, sum);
                const auto ev = eig_est(v, i, j, st);
                rep.v_residual = std::min(rep.v_residual, op(ev.min, ev.max));
                // w is dual-admissible when -Hess(w) is not interior to F:
                // the gauge of the negated estimates must be <= 0.
                const auto ew = eig_est(w, i, j, st);
                rep.w_dual_residual = std::max(rep.w_dual_residual, op(-ew.max, -ew.min));
            } else {
                rep.boundary_max = std::max(rep.boundary_max, sum);
            }
        }
    rep.preconditions_ok = rep.v_residual >= -tol_pre && rep.w_dual_residual <= tol_pre;
    rep.excess = rep.interior_max - rep.boundary_max;
    rep.holds = rep.excess <= tol_cmp;
    return rep;
}

}  // namespace conepot
