#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <span>
#include <stdexcept>
#include <vector>

namespace e2bki {

/// Sparse-kernel and adaptive-kernel parameters. length_scale is the base
/// support radius; beta scales the uncertainty-adaptive support
/// l * beta * e^(1 - gamma*u); u_percentile is the fraction of the most
/// uncertain inputs filtered per mapping step.
struct KernelParams {
    double length_scale = 0.2; // meters
    double sigma0 = 1.0;
    double beta = 0.75;
    double gamma = 1.0;
    double u_percentile = 0.10;

    void validate() const {
        if (!(length_scale > 0.0))
            throw std::invalid_argument("KernelParams: length_scale must be positive");
        if (!(beta > 0.0))
            throw std::invalid_argument("KernelParams: beta must be positive");
        if (!(sigma0 > 0.0 && sigma0 <= 1.0))
            throw std::invalid_argument("KernelParams: sigma0 must lie in (0,1]");
        if (!(gamma > 0.0))
            throw std::invalid_argument("KernelParams: gamma must be positive");
        if (!(u_percentile >= 0.0 && u_percentile <= 1.0))
            throw std::invalid_argument("KernelParams: u_percentile outside [0,1]");
    }

    // Largest support any observation can have (u = 0).
    double max_support() const { return length_scale * beta * std::exp(1.0); }
};

/// Compactly supported sparse kernel:
///   k(d, l) = (2 + cos(2*pi*d/l))/3 * (1 - d/l) + sin(2*pi*d/l)/(2*pi)
/// for d < l, zero beyond. Equals 1 at d = 0 and decays smoothly to 0 at d = l.
///
/// Near the support edge the two terms cancel to O((1-r)^5), so the edge is
/// evaluated in mirrored coordinates s = 1 - d/l, with a series fallback that
/// keeps the value positive and strictly decreasing all the way to zero.
template <typename Scalar>
Scalar sparse_kernel(Scalar d, Scalar length_scale) {
    if (!(d >= Scalar(0)))
        throw std::invalid_argument("sparse_kernel: distance must be non-negative");
    if (!(length_scale > Scalar(0)))
        throw std::invalid_argument("sparse_kernel: length scale must be positive");
    if (d >= length_scale) return Scalar(0);
    constexpr Scalar two_pi = Scalar(2) * std::numbers::pi_v<Scalar>;
    const Scalar r = d / length_scale;
    if (r <= Scalar(0.5)) {
        return (Scalar(2) + std::cos(two_pi * r)) / Scalar(3) * (Scalar(1) - r) +
               std::sin(two_pi * r) / two_pi;
    }
    const Scalar s = Scalar(1) - r;
    const Scalar y = two_pi * s;
    if (s < Scalar(1e-3)) {
        // f = s*y^4/180 * (1 - y^2/21 + O(y^4))
        return s * y * y * y * y / Scalar(180) * (Scalar(1) - y * y / Scalar(21));
    }
    const Scalar v =
        s * (Scalar(2) + std::cos(y)) / Scalar(3) - std::sin(y) / two_pi;
    return std::max(Scalar(0), v);
}

/// Dynamic uncertainty threshold: the (1 - u_percentile) quantile of the
/// batch under a linearly interpolated empirical CDF (1-based position
/// h = (1 - u_percentile) * N). With distinct values, exactly
/// ceil(u_percentile * N) members lie strictly above the returned threshold.
inline double u_threshold(std::span<const double> uncertainties, double u_percentile) {
    if (uncertainties.empty())
        throw std::invalid_argument("u_threshold: empty batch");
    if (!(u_percentile >= 0.0 && u_percentile <= 1.0))
        throw std::invalid_argument("u_threshold: percentile outside [0,1]");
    std::vector<double> sorted;
    sorted.reserve(uncertainties.size());
    for (double u : uncertainties) {
        if (!(u >= -1e-12 && u <= 1.0 + 1e-12))
            throw std::invalid_argument("u_threshold: uncertainty outside [0,1]");
        sorted.push_back(std::clamp(u, 0.0, 1.0));
    }
    std::sort(sorted.begin(), sorted.end());
    const double n = static_cast<double>(sorted.size());
    const double h = (1.0 - u_percentile) * n;
    if (h <= 1.0) return sorted.front();
    if (h >= n) return sorted.back();
    const std::size_t lo = static_cast<std::size_t>(std::floor(h));
    const double frac = h - static_cast<double>(lo);
    return sorted[lo - 1] + frac * (sorted[lo] - sorted[lo - 1]);
}

/// Uncertainty-adaptive kernel: zero for observations above the dynamic
/// threshold, otherwise the sparse kernel with support shrunk as
/// l * beta * e^(1 - gamma*u).
inline double adaptive_kernel(double d, double u, const KernelParams& params,
                              double u_thr) {
    if (!(u >= 0.0 && u <= 1.0))
        throw std::invalid_argument("adaptive_kernel: uncertainty outside [0,1]");
    if (u > u_thr) return 0.0;
    const double scale =
        params.length_scale * params.beta * std::exp(1.0 - params.gamma * u);
    return params.sigma0 * sparse_kernel(d, scale);
}

} // namespace e2bki
