#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>

#include "e2bki/gaussian.hpp"

namespace e2bki {

/// Regularized lower incomplete gamma P(a, x); series expansion for
/// x < a + 1, Lentz continued fraction otherwise.
inline double regularized_lower_gamma(double a, double x) {
    if (!(a > 0.0) || !(x >= 0.0))
        throw std::invalid_argument("regularized_lower_gamma: bad arguments");
    if (x == 0.0) return 0.0;
    if (x < a + 1.0) {
        double ap = a;
        double sum = 1.0 / a;
        double del = sum;
        for (int i = 0; i < 500; ++i) {
            ap += 1.0;
            del *= x / ap;
            sum += del;
            if (std::abs(del) < std::abs(sum) * 1e-16) break;
        }
        return sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
    }
    double b = x + 1.0 - a;
    double c = 1e300;
    double d = 1.0 / b;
    double h = d;
    for (int i = 1; i <= 500; ++i) {
        const double an = -static_cast<double>(i) * (static_cast<double>(i) - a);
        b += 2.0;
        d = an * d + b;
        if (std::abs(d) < 1e-300) d = 1e-300;
        c = b + an / c;
        if (std::abs(c) < 1e-300) c = 1e-300;
        d = 1.0 / d;
        const double delta = d * c;
        h *= delta;
        if (std::abs(delta - 1.0) < 1e-16) break;
    }
    return 1.0 - std::exp(-x + a * std::log(x) - std::lgamma(a)) * h;
}

/// Inverse chi-squared CDF for 2 or 3 degrees of freedom. dof = 2 has the
/// closed form -2*ln(1 - mass); dof = 3 inverts P(3/2, x/2) by bracketed
/// bisection seeded with the small-x asymptote, which stays accurate down
/// to masses near the double underflow limit.
inline double chi2_quantile(int dof, double mass) {
    if (dof != 2 && dof != 3)
        throw std::invalid_argument("chi2_quantile: dof must be 2 or 3");
    if (!(mass > 0.0 && mass < 1.0))
        throw std::invalid_argument("chi2_quantile: mass must lie in (0,1)");
    if (dof == 2) return -2.0 * std::log1p(-mass);
    const double a = 1.5;
    double guess = 2.0 * std::exp((std::log(mass) + std::lgamma(a + 1.0)) / a);
    if (!(guess > 0.0)) guess = 1e-300;
    double lo = guess, hi = guess;
    while (lo > 1e-300 && regularized_lower_gamma(a, lo / 2.0) >= mass) lo *= 0.25;
    while (hi < 1e300 && regularized_lower_gamma(a, hi / 2.0) < mass) hi *= 4.0;
    for (int i = 0; i < 400 && (hi - lo) > 1e-15 * hi; ++i) {
        const double mid = 0.5 * (lo + hi);
        if (regularized_lower_gamma(a, mid / 2.0) < mass)
            lo = mid;
        else
            hi = mid;
    }
    return 0.5 * (lo + hi);
}

/// Confidence ellipsoid of a Gaussian at Mahalanobis threshold tau:
/// { x | (x - center)^T Sigma^-1 (x - center) <= tau }. Axes are the
/// eigenvectors of Sigma (columns, ascending eigenvalue order) and
/// semi_axes(i) = sqrt(tau * lambda_i).
template <int Dim>
struct Ellipsoid {
    static_assert(Dim == 2 || Dim == 3, "Ellipsoid supports 2D and 3D only");
    using Vec = Eigen::Matrix<double, Dim, 1>;
    using Mat = Eigen::Matrix<double, Dim, Dim>;

    Vec center = Vec::Zero();
    Mat axes = Mat::Identity();
    Vec semi_axes = Vec::Ones();
    double tau = 1.0;
};

template <int Dim>
Ellipsoid<Dim> make_ellipsoid(const typename Ellipsoid<Dim>::Vec& center,
                              const typename Ellipsoid<Dim>::Mat& covariance,
                              double tau) {
    if (!(tau > 0.0))
        throw std::invalid_argument("make_ellipsoid: tau must be positive");
    Eigen::SelfAdjointEigenSolver<typename Ellipsoid<Dim>::Mat> solver(covariance);
    if (solver.info() != Eigen::Success)
        throw std::runtime_error("make_ellipsoid: eigendecomposition failed");
    if (!(solver.eigenvalues().minCoeff() > 0.0))
        throw std::runtime_error(
            "make_ellipsoid: covariance not positive definite after regularization");
    Ellipsoid<Dim> e;
    e.center = center;
    e.axes = solver.eigenvectors();
    e.semi_axes = (tau * solver.eigenvalues().array()).sqrt();
    e.tau = tau;
    return e;
}

/// Regularized covariance of a primitive as a 3D confidence ellipsoid.
inline Ellipsoid<3> to_ellipsoid(const GaussianPrimitive& g, double tau) {
    return make_ellipsoid<3>(g.mean(), g.covariance(), tau);
}

template <int Dim>
double mahalanobis_sq(const typename Ellipsoid<Dim>::Vec& query,
                      const Ellipsoid<Dim>& e) {
    const typename Ellipsoid<Dim>::Vec y = e.axes.transpose() * (query - e.center);
    double s = 0.0;
    for (int i = 0; i < Dim; ++i) {
        const double r = y[i] / e.semi_axes[i];
        s += r * r;
    }
    return e.tau * s;
}

/// Closest point on the ellipsoid boundary. Queries inside (Mahalanobis^2
/// within 1e-12 of tau counts as inside) are returned unchanged.
///
/// In the principal frame the minimizer is v_i = y_i a_i^2 / (a_i^2 + t) with
/// t > 0 the unique root of f(t) = sum (y_i a_i / (a_i^2 + t))^2 - 1. f is
/// convex and strictly decreasing, so Newton from the f > 0 side approaches
/// the root monotonically; a bisection bracket guards the iteration anyway.
template <int Dim>
typename Ellipsoid<Dim>::Vec closest_surface_point(
    const typename Ellipsoid<Dim>::Vec& query, const Ellipsoid<Dim>& e) {
    using Vec = typename Ellipsoid<Dim>::Vec;
    const Vec y = e.axes.transpose() * (query - e.center);
    double s = 0.0;
    for (int i = 0; i < Dim; ++i) {
        const double r = y[i] / e.semi_axes[i];
        s += r * r;
    }
    if (e.tau * s <= e.tau + 1e-12) return query;

    const double a_max = e.semi_axes.maxCoeff();
    double lo = 0.0;
    double hi = y.norm() * a_max + a_max * a_max;
    const double tol = 1e-12 * a_max * a_max;
    double t = 0.0;
    for (int iter = 0; iter < 200; ++iter) {
        double f = -1.0;
        double fp = 0.0;
        for (int i = 0; i < Dim; ++i) {
            const double den = e.semi_axes[i] * e.semi_axes[i] + t;
            const double w = y[i] * e.semi_axes[i] / den;
            f += w * w;
            fp -= 2.0 * w * w / den;
        }
        if (f > 0.0)
            lo = t;
        else
            hi = t;
        double t_next = (fp != 0.0) ? t - f / fp : 0.5 * (lo + hi);
        if (!(t_next > lo && t_next < hi)) t_next = 0.5 * (lo + hi);
        const bool done = std::abs(t_next - t) < tol;
        t = t_next;
        if (done) break;
    }
    Vec v;
    for (int i = 0; i < Dim; ++i) {
        const double a2 = e.semi_axes[i] * e.semi_axes[i];
        v[i] = y[i] * a2 / (a2 + t);
    }
    return e.center + e.axes * v;
}

/// Euclidean distance from a query to the ellipsoid boundary; zero for
/// queries inside or on the boundary.
template <int Dim>
double surface_distance(const typename Ellipsoid<Dim>::Vec& query,
                        const Ellipsoid<Dim>& e) {
    return (query - closest_surface_point<Dim>(query, e)).norm();
}

} // namespace e2bki
