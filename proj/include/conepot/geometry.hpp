#pragma once

#include <array>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace conepot {

struct Point2 {
    double x = 0.0;
    double y = 0.0;

    Point2 operator+(Point2 o) const { return {x + o.x, y + o.y}; }
    Point2 operator-(Point2 o) const { return {x - o.x, y - o.y}; }
    Point2 operator*(double s) const { return {x * s, y * s}; }
    double dot(Point2 o) const { return x * o.x + y * o.y; }
    double norm() const { return std::hypot(x, y); }
};

inline double dist(Point2 a, Point2 b) { return (a - b).norm(); }

/// Strictly convex planar domain: a disk or an axis-aligned ellipse.
/// Strict convexity makes every boundary point usable for Dirichlet
/// barriers, so no boundary 2-jet tests are needed anywhere.
class ConvexShape {
public:
    enum class Kind { Disk, Ellipse };

    static ConvexShape disk(double radius, Point2 center = {0.0, 0.0}) {
        if (radius <= 0.0) throw std::invalid_argument("disk radius must be positive");
        ConvexShape s;
        s.kind_ = Kind::Disk;
        s.a_ = s.b_ = radius;
        s.center_ = center;
        return s;
    }

    static ConvexShape ellipse(double a, double b, Point2 center = {0.0, 0.0}) {
        if (a <= 0.0 || b <= 0.0) throw std::invalid_argument("ellipse semiaxes must be positive");
        ConvexShape s;
        s.kind_ = Kind::Ellipse;
        s.a_ = a;
        s.b_ = b;
        s.center_ = center;
        return s;
    }

    Kind kind() const { return kind_; }
    Point2 center() const { return center_; }
    double semi_a() const { return a_; }
    double semi_b() const { return b_; }

    // Implicit gauge: q(p) < 1 inside, = 1 on the boundary.
    double implicit(Point2 p) const {
        const double u = (p.x - center_.x) / a_;
        const double v = (p.y - center_.y) / b_;
        return u * u + v * v;
    }

    bool contains(Point2 p) const { return implicit(p) < 1.0; }

    /// Distance from an inside point `p` along unit direction `dir` to the
    /// boundary crossing. The line meets the ellipse in two points; the
    /// positive root is returned.
    double crossing_distance(Point2 p, Point2 dir) const {
        const double ux = (p.x - center_.x) / a_, uy = (p.y - center_.y) / b_;
        const double dx = dir.x / a_, dy = dir.y / b_;
        const double A = dx * dx + dy * dy;
        const double B = ux * dx + uy * dy;
        const double C = ux * ux + uy * uy - 1.0;
        const double disc = B * B - A * C;
        if (disc < 0.0 || A == 0.0) throw std::runtime_error("crossing_distance: ray does not reach the boundary");
        return (-B + std::sqrt(disc)) / A;
    }

    Point2 boundary_point(double angle) const {
        return {center_.x + a_ * std::cos(angle), center_.y + b_ * std::sin(angle)};
    }

    std::vector<Point2> boundary_samples(int count) const {
        std::vector<Point2> pts;
        pts.reserve(count);
        for (int i = 0; i < count; ++i) {
            const double ang = 2.0 * M_PI * double(i) / double(count);
            pts.push_back(boundary_point(ang));
        }
        return pts;
    }

    /// Inradius: minimal distance from the center to the boundary.
    double inradius() const { return std::min(a_, b_); }

    double max_distance_to_boundary(Point2 p) const {
        double best = 0.0;
        for (int i = 0; i < 1024; ++i) {
            const double ang = 2.0 * M_PI * double(i) / 1024.0;
            best = std::max(best, dist(p, boundary_point(ang)));
        }
        return best;
    }

    /// Lower bound for the distance from an inside point to the boundary.
    double distance_to_boundary(Point2 p) const {
        double best = std::numeric_limits<double>::infinity();
        for (int i = 0; i < 1024; ++i) {
            const double ang = 2.0 * M_PI * double(i) / 1024.0;
            best = std::min(best, dist(p, boundary_point(ang)));
        }
        return best;
    }

    std::array<Point2, 2> bounding_box() const {
        return {Point2{center_.x - a_, center_.y - b_}, Point2{center_.x + a_, center_.y + b_}};
    }

    std::string describe() const {
        if (kind_ == Kind::Disk) return "disk(R=" + std::to_string(a_) + ")";
        return "ellipse(a=" + std::to_string(a_) + ",b=" + std::to_string(b_) + ")";
    }

private:
    Kind kind_ = Kind::Disk;
    double a_ = 1.0, b_ = 1.0;
    Point2 center_{0.0, 0.0};
};

/// Deterministic uniform doubles from a raw 64-bit engine. The standard
/// distributions are implementation-defined, which would break bit-exact
/// reproducibility of seeded runs across toolchains.
template <class Engine>
double uniform01(Engine& eng) {
    return double(eng() >> 11) * 0x1.0p-53;
}

template <class Engine>
double uniform(Engine& eng, double lo, double hi) {
    return lo + (hi - lo) * uniform01(eng);
}

}  // namespace conepot
