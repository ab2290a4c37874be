#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "conepot/geometry.hpp"
#include "conepot/io.hpp"
#include "conepot/kernel.hpp"

namespace conepot {

enum class NodeClass : std::uint8_t { Exterior, Interior, OuterBand, InnerDisk };

struct GridOffset {
    int dx = 0;
    int dy = 0;
    double len2() const { return double(dx * dx + dy * dy); }
};

/// Wide stencil of lattice offsets; each offset stands for both of its
/// half-directions. Pairwise non-parallel, closed under reflection across
/// the axes, and containing both axes.
struct Stencil {
    std::vector<GridOffset> offsets;

    /// `half_directions` in {8, 16, 24, 48}; 16 is the default layout
    /// with angular resolution 26.6 degrees, the larger sets refine it
    /// to 18.4 and 14.0 degrees.
    static Stencil make(int half_directions = 16) {
        Stencil s;
        auto add = [&s](int a, int b) { s.offsets.push_back({a, b}); };
        add(1, 0);
        add(0, 1);
        add(1, 1);
        add(1, -1);
        if (half_directions == 8) return s;
        add(2, 1);
        add(1, 2);
        add(2, -1);
        add(1, -2);
        if (half_directions == 16) return s;
        add(3, 1);
        add(1, 3);
        add(3, -1);
        add(1, -3);
        if (half_directions == 24) return s;
        add(3, 2);
        add(2, 3);
        add(3, -2);
        add(2, -3);
        add(4, 1);
        add(1, 4);
        add(4, -1);
        add(1, -4);
        add(4, 3);
        add(3, 4);
        add(4, -3);
        add(3, -4);
        if (half_directions == 48) return s;
        throw std::invalid_argument("Stencil::make: supported half-direction counts are 8, 16, 24, 48");
    }

    int max_component() const {
        int m = 0;
        for (auto o : offsets) m = std::max({m, std::abs(o.dx), std::abs(o.dy)});
        return m;
    }
};

struct Excision {
    Point2 center;
    double radius = 0.0;
};

/// Lattice discretization of a strictly convex domain. Nodes fall into
/// four classes:
///   Exterior   - outside the closed domain, never read;
///   OuterBand  - inside, but an axis neighbor leaves the domain; carries
///                Dirichlet data interpolated along boundary chords;
///   InnerDisk  - covered by an excised ball; carries data sampled from
///                the inner boundary function;
///   Interior   - active unknowns.
/// Longer stencil legs from Interior nodes may still exit the domain;
/// those reads go through exact boundary crossings (cut cells) rather
/// than through node values.
class GridDomain {
public:
    ConvexShape shape;
    double h = 0.0;
    int nx = 0, ny = 0;
    Point2 origin;  // lattice node (0,0)
    std::vector<NodeClass> cls;
    std::vector<double> dirichlet;    // meaningful on OuterBand / InnerDisk nodes
    std::vector<int> excision_of;     // InnerDisk -> excision index, else -1
    std::vector<Excision> excisions;
    std::function<double(Point2)> phi;  // outer boundary data
    std::function<double(Point2)> psi;  // inner data (set by perforate)

    int idx(int i, int j) const { return j * nx + i; }
    Point2 coord(int i, int j) const { return {origin.x + h * double(i), origin.y + h * double(j)}; }
    bool on_lattice(int i, int j) const { return i >= 0 && i < nx && j >= 0 && j < ny; }

    NodeClass node_class(int i, int j) const {
        return on_lattice(i, j) ? cls[idx(i, j)] : NodeClass::Exterior;
    }

    int count_class(NodeClass c) const {
        int n = 0;
        for (auto v : cls) n += (v == c);
        return n;
    }

    std::vector<int> active_nodes() const {
        std::vector<int> out;
        for (int k = 0; k < nx * ny; ++k)
            if (cls[k] == NodeClass::Interior) out.push_back(k);
        return out;
    }
};

namespace detail {

// Dirichlet value for a band node: along each default stencil ray whose
// h-step leaves the domain, interpolate phi linearly between the two
// boundary crossings of the full line through the node. Exact for
// restrictions of affine functions; the results are averaged over the
// qualifying rays.
inline double band_value(const ConvexShape& shape, const std::function<double(Point2)>& phi, Point2 x,
                         double h) {
    static const GridOffset dirs[8] = {{1, 0}, {0, 1}, {1, 1}, {1, -1}, {2, 1}, {1, 2}, {2, -1}, {1, -2}};
    double acc = 0.0;
    int used = 0;
    for (const auto& d : dirs) {
        const double len = std::sqrt(d.len2());
        const Point2 unit{d.dx / len, d.dy / len};
        const Point2 fwd{x.x + h * d.dx, x.y + h * d.dy};
        const Point2 bwd{x.x - h * d.dx, x.y - h * d.dy};
        if (shape.contains(fwd) && shape.contains(bwd)) continue;
        const double tp = shape.crossing_distance(x, unit);
        const double tm = shape.crossing_distance(x, {-unit.x, -unit.y});
        const double vp = phi({x.x + tp * unit.x, x.y + tp * unit.y});
        const double vm = phi({x.x - tm * unit.x, x.y - tm * unit.y});
        acc += (tm * vp + tp * vm) / (tp + tm);
        ++used;
    }
    if (used == 0) throw std::logic_error("band_value: node has no exiting ray");
    return acc / double(used);
}

}  // namespace detail

/// Classify the lattice for the given shape and spacing and impose the
/// outer Dirichlet data on the boundary band.
inline GridDomain build_domain(const ConvexShape& shape, double h, std::function<double(Point2)> phi) {
    if (h <= 0.0) throw std::invalid_argument("build_domain: h must be positive");
    if (2.0 * shape.inradius() / h < 16.0)
        throw std::invalid_argument("build_domain: h too coarse, need at least 16 interior nodes across");

    GridDomain g;
    g.shape = shape;
    g.h = h;
    g.phi = std::move(phi);
    const auto bb = shape.bounding_box();
    const double margin = 2.0 * h;
    g.origin = {bb[0].x - margin, bb[0].y - margin};
    g.nx = int(std::ceil((bb[1].x + margin - g.origin.x) / h)) + 1;
    g.ny = int(std::ceil((bb[1].y + margin - g.origin.y) / h)) + 1;
    g.cls.assign(size_t(g.nx) * g.ny, NodeClass::Exterior);
    g.dirichlet.assign(size_t(g.nx) * g.ny, 0.0);
    g.excision_of.assign(size_t(g.nx) * g.ny, -1);

    for (int j = 0; j < g.ny; ++j)
        for (int i = 0; i < g.nx; ++i) {
            const Point2 x = g.coord(i, j);
            if (!shape.contains(x)) continue;
            const bool band = !shape.contains({x.x + h, x.y}) || !shape.contains({x.x - h, x.y}) ||
                              !shape.contains({x.x, x.y + h}) || !shape.contains({x.x, x.y - h});
            g.cls[g.idx(i, j)] = band ? NodeClass::OuterBand : NodeClass::Interior;
        }

    for (int j = 0; j < g.ny; ++j)
        for (int i = 0; i < g.nx; ++i)
            if (g.cls[g.idx(i, j)] == NodeClass::OuterBand)
                g.dirichlet[g.idx(i, j)] = detail::band_value(g.shape, g.phi, g.coord(i, j), h);

    return g;
}

/// Excise closed balls of radius r around the given centers and impose
/// psi, sampled at the covered nodes, as inner Dirichlet data.
inline GridDomain perforate(const GridDomain& base, const std::vector<Point2>& centers, double r,
                            std::function<double(Point2)> psi) {
    if (r < 3.0 * base.h) throw std::invalid_argument("perforate: radius below 3h");
    for (size_t i = 0; i < centers.size(); ++i) {
        if (base.shape.distance_to_boundary(centers[i]) < r + 3.0 * base.h)
            throw std::invalid_argument("perforate: excision too close to the outer boundary");
        for (size_t j = i + 1; j < centers.size(); ++j)
            if (dist(centers[i], centers[j]) < 2.0 * r + 3.0 * base.h)
                throw std::invalid_argument("perforate: excisions overlap or violate clearance");
    }
    GridDomain g = base;
    g.psi = std::move(psi);
    g.excisions.clear();
    for (Point2 c : centers) g.excisions.push_back({c, r});
    for (int j = 0; j < g.ny; ++j)
        for (int i = 0; i < g.nx; ++i) {
            const int k = g.idx(i, j);
            if (g.cls[k] == NodeClass::Exterior) continue;
            const Point2 x = g.coord(i, j);
            for (size_t e = 0; e < centers.size(); ++e)
                if (dist(x, centers[e]) <= r) {
                    g.cls[k] = NodeClass::InnerDisk;
                    g.excision_of[k] = int(e);
                    g.dirichlet[k] = g.psi(x);
                    break;
                }
        }
    return g;
}

/// Grid function plus solve metadata.
struct SolutionField {
    std::shared_ptr<const GridDomain> domain;
    std::vector<double> values;
    std::vector<double> residual_history;
    std::vector<double> r_schedule_used;
    long iterations = 0;
    bool converged = true;
    std::string message;

    double at(int i, int j) const { return values[domain->idx(i, j)]; }
};

inline SolutionField make_field(std::shared_ptr<const GridDomain> dom, double fill = 0.0) {
    SolutionField f;
    f.domain = std::move(dom);
    f.values.assign(f.domain->cls.size(), fill);
    for (size_t k = 0; k < f.values.size(); ++k)
        if (f.domain->cls[k] == NodeClass::OuterBand || f.domain->cls[k] == NodeClass::InnerDisk)
            f.values[k] = f.domain->dirichlet[k];
    return f;
}

namespace detail {

struct LegRead {
    double value = 0.0;   // node value or boundary value at the crossing
    double frac = 1.0;    // step fraction actually used, in (0,1]
};

inline LegRead read_leg(const GridDomain& g, const std::vector<double>& u, int i, int j, int dx, int dy) {
    const int ti = i + dx, tj = j + dy;
    if (g.node_class(ti, tj) != NodeClass::Exterior) return {u[g.idx(ti, tj)], 1.0};
    // The step leaves the domain: read phi at the exact boundary crossing.
    const Point2 x = g.coord(i, j);
    const double len = std::hypot(double(dx), double(dy));
    const Point2 unit{dx / len, dy / len};
    const double t = g.shape.crossing_distance(x, unit);
    const double full = g.h * len;
    const double frac = std::min(1.0, std::max(t / full, 1e-12));
    const Point2 cross{x.x + t * unit.x, x.y + t * unit.y};
    return {g.phi(cross), frac};
}

// Second difference from values at parameter positions (-b, 0, +a) in
// units of the full leg length; exact on quadratics for any a, b.
inline double three_point_second_diff(double um, double u0, double up, double a, double b, double len2) {
    return 2.0 * (um / (b * (a + b)) - u0 / (a * b) + up / (a * (a + b))) / len2;
}

}  // namespace detail

/// Directional second difference at an interior node, with one-sided
/// cut-cell interpolation where the leg leaves the domain. Units:
/// value / length^2.
inline double second_diff(const SolutionField& u, int i, int j, GridOffset d) {
    const GridDomain& g = *u.domain;
    if (g.node_class(i, j) != NodeClass::Interior) throw std::invalid_argument("second_diff: node not interior");
    const auto fwd = detail::read_leg(g, u.values, i, j, d.dx, d.dy);
    const auto bwd = detail::read_leg(g, u.values, i, j, -d.dx, -d.dy);
    const double len2 = g.h * g.h * d.len2();
    return detail::three_point_second_diff(bwd.value, u.values[g.idx(i, j)], fwd.value, fwd.frac, bwd.frac, len2);
}

struct EigEstimate {
    double min = 0.0;
    double max = 0.0;
};

/// Monotone wide-stencil bracket for the extreme eigenvalues of the
/// Hessian: the min and max directional second differences. Exact for
/// quadratics whose eigenvectors align with a stencil direction.
inline EigEstimate eig_est(const SolutionField& u, int i, int j, const Stencil& st) {
    EigEstimate e{std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
    for (const auto& d : st.offsets) {
        const double v = second_diff(u, i, j, d);
        e.min = std::min(e.min, v);
        e.max = std::max(e.max, v);
    }
    return e;
}

/// CSV export: header comments with the lattice metadata, then one
/// x,y,value row per non-exterior node, 17 significant digits.
inline std::string field_csv(const SolutionField& f) {
    const GridDomain& g = *f.domain;
    std::ostringstream os;
    os << "# nx=" << g.nx << " ny=" << g.ny << " h=" << format_g17(g.h) << " shape=" << g.shape.describe() << "\n";
    os << "x,y,value\n";
    for (int j = 0; j < g.ny; ++j)
        for (int i = 0; i < g.nx; ++i) {
            if (g.cls[g.idx(i, j)] == NodeClass::Exterior) continue;
            const Point2 p = g.coord(i, j);
            os << format_g17(p.x) << ',' << format_g17(p.y) << ',' << format_g17(f.values[g.idx(i, j)]) << "\n";
        }
    return os.str();
}

inline void write_field_csv(const SolutionField& f, const std::string& path) {
    atomic_write_file(path, field_csv(f));
}

struct PgmScale {
    double min = 0.0;
    double max = 0.0;
};

/// 8-bit P2 grayscale; exterior renders as 0, values are min-max scaled.
/// The scaling bounds are returned for the run summary.
inline PgmScale write_field_pgm(const SolutionField& f, const std::string& path) {
    const GridDomain& g = *f.domain;
    double mn = std::numeric_limits<double>::infinity(), mx = -mn;
    for (int k = 0; k < g.nx * g.ny; ++k)
        if (g.cls[k] != NodeClass::Exterior) {
            mn = std::min(mn, f.values[k]);
            mx = std::max(mx, f.values[k]);
        }
    const double span = (mx > mn) ? (mx - mn) : 1.0;
    std::ostringstream os;
    os << "P2\n" << g.nx << ' ' << g.ny << "\n255\n";
    for (int j = g.ny - 1; j >= 0; --j) {
        for (int i = 0; i < g.nx; ++i) {
            int v = 0;
            if (g.cls[g.idx(i, j)] != NodeClass::Exterior)
                v = int(std::lround(255.0 * (f.values[g.idx(i, j)] - mn) / span));
            os << v << (i + 1 == g.nx ? '\n' : ' ');
        }
    }
    atomic_write_file(path, os.str());
    return {mn, mx};
}

/// Bilinear interpolation view of a field, for circle sampling and the
/// density machinery. All four surrounding nodes must carry values.
inline SampledFunction field_function(const SolutionField& f) {
    auto dom = f.domain;
    auto values = f.values;  // detach from the field's lifetime
    SampledFunction s;
    s.center = dom->shape.center();
    s.radius = dom->shape.inradius();
    s.eval = [dom, values](Point2 p) {
        const GridDomain& g = *dom;
        const double fx = (p.x - g.origin.x) / g.h, fy = (p.y - g.origin.y) / g.h;
        const int i = int(std::floor(fx)), j = int(std::floor(fy));
        if (i < 0 || j < 0 || i + 1 >= g.nx || j + 1 >= g.ny)
            throw std::domain_error("field_function: point outside the lattice");
        for (int dj = 0; dj <= 1; ++dj)
            for (int di = 0; di <= 1; ++di)
                if (g.cls[g.idx(i + di, j + dj)] == NodeClass::Exterior)
                    throw std::domain_error("field_function: point touches exterior nodes");
        const double tx = fx - i, ty = fy - j;
        const double v00 = values[g.idx(i, j)], v10 = values[g.idx(i + 1, j)];
        const double v01 = values[g.idx(i, j + 1)], v11 = values[g.idx(i + 1, j + 1)];
        return (1 - tx) * (1 - ty) * v00 + tx * (1 - ty) * v10 + (1 - tx) * ty * v01 + tx * ty * v11;
    };
    return s;
}

}  // namespace conepot
