#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <initializer_list>
#include <stdexcept>
#include <vector>

namespace conepot {

/// Dense symmetric matrix of dimension 2..8. Everything downstream is
/// eigenvalue-based, so the representation favors exactness over scale:
/// entries are stored fully and kept symmetric by construction.
class SymMatrix {
public:
    static constexpr int kMaxDim = 8;

    explicit SymMatrix(int n) : n_(n) {
        if (n < 2 || n > kMaxDim) throw std::invalid_argument("SymMatrix: dimension must be in [2,8]");
        e_.fill(0.0);
    }

    SymMatrix(int n, std::initializer_list<double> rowmajor) : SymMatrix(n) {
        if (int(rowmajor.size()) != n * n) throw std::invalid_argument("SymMatrix: bad initializer size");
        int k = 0;
        for (double v : rowmajor) e_[k++] = v;
        for (int i = 0; i < n_; ++i)
            for (int j = 0; j < i; ++j)
                if (e_[i * n_ + j] != e_[j * n_ + i]) throw std::invalid_argument("SymMatrix: initializer not symmetric");
    }

    static SymMatrix identity(int n) {
        SymMatrix m(n);
        for (int i = 0; i < n; ++i) m.e_[i * n + i] = 1.0;
        return m;
    }

    static SymMatrix diag(std::initializer_list<double> d) {
        SymMatrix m(int(d.size()));
        int i = 0;
        for (double v : d) m.e_[i * m.n_ + i] = v, ++i;
        return m;
    }

    int dim() const { return n_; }

    double operator()(int i, int j) const { return e_[i * n_ + j]; }

    void set(int i, int j, double v) {
        e_[i * n_ + j] = v;
        e_[j * n_ + i] = v;
    }

    SymMatrix operator+(const SymMatrix& o) const {
        check_dim(o);
        SymMatrix r(n_);
        for (int k = 0; k < n_ * n_; ++k) r.e_[k] = e_[k] + o.e_[k];
        return r;
    }

    SymMatrix operator-(const SymMatrix& o) const {
        check_dim(o);
        SymMatrix r(n_);
        for (int k = 0; k < n_ * n_; ++k) r.e_[k] = e_[k] - o.e_[k];
        return r;
    }

    SymMatrix operator*(double s) const {
        SymMatrix r(n_);
        for (int k = 0; k < n_ * n_; ++k) r.e_[k] = e_[k] * s;
        return r;
    }

    SymMatrix operator-() const { return (*this) * -1.0; }

    SymMatrix plus_scaled_identity(double t) const {
        SymMatrix r = *this;
        for (int i = 0; i < n_; ++i) r.e_[i * n_ + i] += t;
        return r;
    }

    double trace() const {
        double t = 0.0;
        for (int i = 0; i < n_; ++i) t += e_[i * n_ + i];
        return t;
    }

    double frobenius_norm() const {
        double s = 0.0;
        for (int k = 0; k < n_ * n_; ++k) s += e_[k] * e_[k];
        return std::sqrt(s);
    }

private:
    void check_dim(const SymMatrix& o) const {
        if (o.n_ != n_) throw std::invalid_argument("SymMatrix: dimension mismatch");
    }

    int n_;
    std::array<double, kMaxDim * kMaxDim> e_{};
};

class UnitVector {
public:
    explicit UnitVector(std::vector<double> comps) : c_(std::move(comps)) {
        if (c_.size() < 2 || c_.size() > SymMatrix::kMaxDim) throw std::invalid_argument("UnitVector: dimension must be in [2,8]");
        double s = 0.0;
        for (double v : c_) s += v * v;
        if (std::abs(std::sqrt(s) - 1.0) > 1e-12) throw std::invalid_argument("UnitVector: not unit length");
    }

    static UnitVector normalized(std::vector<double> comps) {
        double s = 0.0;
        for (double v : comps) s += v * v;
        s = std::sqrt(s);
        if (s == 0.0) throw std::invalid_argument("UnitVector: zero vector");
        for (double& v : comps) v /= s;
        return UnitVector(std::move(comps));
    }

    int dim() const { return int(c_.size()); }
    double operator[](int i) const { return c_[i]; }

private:
    std::vector<double> c_;
};

namespace detail {

inline std::vector<double> eigvals2(const SymMatrix& m) {
    const double a = m(0, 0), b = m(0, 1), c = m(1, 1);
    const double mean = 0.5 * (a + c);
    const double r = std::hypot(0.5 * (a - c), b);
    return {mean - r, mean + r};
}

// Trigonometric solution of the cubic characteristic polynomial.
inline std::vector<double> eigvals3(const SymMatrix& m) {
    const double q = m.trace() / 3.0;
    double p2 = 0.0;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
            const double v = m(i, j) - (i == j ? q : 0.0);
            p2 += v * v;
        }
    const double p = std::sqrt(p2 / 6.0);
    if (p < 1e-300) return {q, q, q};
    // r = det(B)/2 with B = (A - qI)/p, clamped into [-1,1].
    double B[3][3];
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) B[i][j] = (m(i, j) - (i == j ? q : 0.0)) / p;
    const double detB = B[0][0] * (B[1][1] * B[2][2] - B[1][2] * B[2][1]) -
                        B[0][1] * (B[1][0] * B[2][2] - B[1][2] * B[2][0]) +
                        B[0][2] * (B[1][0] * B[2][1] - B[1][1] * B[2][0]);
    double r = std::clamp(detB / 2.0, -1.0, 1.0);
    const double phi = std::acos(r) / 3.0;
    const double l1 = q + 2.0 * p * std::cos(phi);
    const double l3 = q + 2.0 * p * std::cos(phi + 2.0 * M_PI / 3.0);
    const double l2 = 3.0 * q - l1 - l3;
    std::vector<double> ev{l1, l2, l3};
    std::sort(ev.begin(), ev.end());
    return ev;
}

// Cyclic Jacobi, eigenvalues only. Converges quadratically; the sweep
// count below is far beyond what dimension <= 8 needs.
inline std::vector<double> eigvals_jacobi(const SymMatrix& m) {
    const int n = m.dim();
    double a[SymMatrix::kMaxDim][SymMatrix::kMaxDim];
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) a[i][j] = m(i, j);
    const double scale = std::max(m.frobenius_norm(), 1e-300);
    for (int sweep = 0; sweep < 64; ++sweep) {
        double off = 0.0;
        for (int i = 0; i < n; ++i)
            for (int j = i + 1; j < n; ++j) off += a[i][j] * a[i][j];
        if (std::sqrt(off) <= 1e-12 * scale * 1e-3) break;
        for (int p = 0; p < n - 1; ++p)
            for (int q = p + 1; q < n; ++q) {
                if (a[p][q] == 0.0) continue;
                const double theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                const double t = (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                const double tau = s / (1.0 + c);
                const double apq = a[p][q];
                a[p][p] -= t * apq;
                a[q][q] += t * apq;
                a[p][q] = a[q][p] = 0.0;
                for (int k = 0; k < n; ++k) {
                    if (k == p || k == q) continue;
                    const double akp = a[k][p], akq = a[k][q];
                    a[k][p] = a[p][k] = akp - s * (akq + tau * akp);
                    a[k][q] = a[q][k] = akq + s * (akp - tau * akq);
                }
            }
    }
    std::vector<double> ev(n);
    for (int i = 0; i < n; ++i) ev[i] = a[i][i];
    std::sort(ev.begin(), ev.end());
    return ev;
}

}  // namespace detail

/// Eigenvalues sorted ascending. Closed forms for n = 2, 3, cyclic Jacobi
/// rotations above that.
inline std::vector<double> eigvals(const SymMatrix& m) {
    switch (m.dim()) {
        case 2: return detail::eigvals2(m);
        case 3: return detail::eigvals3(m);
        default: return detail::eigvals_jacobi(m);
    }
}

/// Rank-one orthogonal projection e e^T onto the line through e.
inline SymMatrix proj_line(const UnitVector& e) {
    SymMatrix m(e.dim());
    for (int i = 0; i < e.dim(); ++i)
        for (int j = i; j < e.dim(); ++j) m.set(i, j, e[i] * e[j]);
    return m;
}

/// I - e e^T, projection onto the hyperplane orthogonal to e.
inline SymMatrix proj_perp(const UnitVector& e) {
    return SymMatrix::identity(e.dim()) - proj_line(e);
}

/// Hessian of the radial kernel with exponent p at the point x != 0:
///   |x|^-p (P_perp - (p-1) P_line)
/// with spectrum { |x|^-p (n-1 times), -(p-1)|x|^-p }.
inline SymMatrix riesz_hessian(const std::vector<double>& x, double p) {
    const int n = int(x.size());
    if (n < 2 || n > SymMatrix::kMaxDim) throw std::invalid_argument("riesz_hessian: dimension must be in [2,8]");
    double r2 = 0.0;
    for (double v : x) r2 += v * v;
    if (r2 == 0.0) throw std::domain_error("riesz_hessian: singular point x = 0");
    const double r = std::sqrt(r2);
    std::vector<double> unit(x);
    for (double& v : unit) v /= r;
    const UnitVector e = UnitVector(unit);
    const SymMatrix h = (proj_perp(e) - proj_line(e) * (p - 1.0)) * std::pow(r, -p);
    return h;
}

}  // namespace conepot
