#pragma once
// Characteristic machinery of the corrected transport operator: conserved
// energy, region classification, turning depth, the angle-along-path map,
// and the attenuation integral G with a sqrt substitution at turning points.

#include <cmath>
#include <limits>
#include <stdexcept>

#include "geometry.hpp"

namespace milne {

enum class Region { I, II, III };

struct CharPoint {
    double eta = 0.0, phi = 0.0, psi = 0.0;
    double energy = 0.0;                                   // e^{-V(eta,psi)} cos(phi)
    Region region = Region::I;
    double eta_plus = std::numeric_limits<double>::infinity();  // region III only
};

inline double energy(const Geometry& geom, double eta, double phi, double psi) {
    return geom.exp_minus_V(eta, psi) * std::cos(phi);
}

namespace detail {
inline double clip_unit(double x) {
    // floating-point drift near turning points: allow 1e-14 slack, then clamp
    if (x > 1.0) {
        if (x > 1.0 + 1e-14 * std::max(1.0, std::abs(x)))
            throw std::domain_error("characteristic does not reach the target depth");
        return 1.0;
    }
    if (x < -1.0) return -1.0;
    return x;
}
}  // namespace detail

// cos(phi') at depth eta_target along the characteristic of energy E.
inline double cos_phi_prime(const Geometry& geom, double E, double eta_target, double psi) {
    return detail::clip_unit(E * std::exp(geom.potential(eta_target, psi)));
}

// phi'(E, eta', psi) in [0, pi/2]; sin(phi') >= 0 by convention.
inline double phi_prime(const Geometry& geom, double E, double eta_target, double psi) {
    return std::acos(cos_phi_prime(geom, std::abs(E), eta_target, psi));
}

// sin^2(phi') evaluated relative to a reference node, cancellation-free:
// sin^2 phi' = sin^2 phi - cos^2 phi expm1(2 (V(xi)-V(eta))).
inline double sin2_phi_prime_rel(const Geometry& geom, double sin_phi, double cos_phi,
                                 double xi, double eta_ref, double psi) {
    const double dv = geom.potential_diff(xi, eta_ref, psi);
    return sin_phi * sin_phi - cos_phi * cos_phi * std::expm1(2.0 * dv);
}

// Turning depth: root of e^{-V(eta,psi)} = |E| on [0, eta_ub] by bisection.
// The map is strictly decreasing; 80 iterations pin the root past 1e-12.
inline double eta_plus_on(const Geometry& geom, double E, double psi,
                          double eta_lo, double eta_ub) {
    const double absE = std::abs(E);
    double a = eta_lo, b = eta_ub;
    for (int it = 0; it < 80; ++it) {
        const double m = 0.5 * (a + b);
        if (geom.exp_minus_V(m, psi) >= absE) a = m; else b = m;
    }
    return 0.5 * (a + b);
}

inline double eta_plus(const Geometry& geom, double E, double psi) {
    const double absE = std::abs(E);
    if (absE >= 1.0) return 0.0;
    if (absE < geom.exp_minus_V(geom.L(), psi))
        throw std::domain_error("no turning point: |E| < e^{-V(L)} (region II)");
    return eta_plus_on(geom, E, psi, 0.0, geom.L());
}

// Turning depth allowed to exceed L (used to regularize near-tie region II
// quadrature); returns +inf when the characteristic never turns before the
// radii degenerate.
inline double eta_plus_extended(const Geometry& geom, double E, double psi) {
    const double absE = std::abs(E);
    if (absE >= 1.0) return 0.0;
    if (absE <= 0.0) return std::numeric_limits<double>::infinity();
    const double eta_ub = 0.999999 * std::min(geom.R1(), geom.R2()) / geom.eps();
    if (geom.exp_minus_V(eta_ub, psi) >= absE)
        return std::numeric_limits<double>::infinity();
    return eta_plus_on(geom, E, psi, 0.0, eta_ub);
}

inline CharPoint classify(const Geometry& geom, double eta, double phi, double psi) {
    CharPoint p;
    p.eta = eta;
    p.phi = phi;
    p.psi = psi;
    p.energy = energy(geom, eta, phi, psi);
    if (std::sin(phi) > 0.0) {
        p.region = Region::I;
    } else if (std::abs(p.energy) <= geom.exp_minus_V(geom.L(), psi)) {
        p.region = Region::II;  // tie |E| = e^{-V(L)} lands here by convention
    } else {
        p.region = Region::III;
        p.eta_plus = eta_plus(geom, p.energy, psi);
    }
    return p;
}

namespace detail {

// Composite adaptive Gauss-Legendre (12-point panels, bisect until the
// two-half refinement agrees). Integrand must be smooth on [a,b].
template <class F>
double adaptive_gl(const F& f, double a, double b, double tol, int depth = 0) {
    static const double gx[6] = {0.1252334085114689, 0.3678314989981802,
                                 0.5873179542866175, 0.7699026741943047,
                                 0.9041172563704749, 0.9815606342467192};
    static const double gw[6] = {0.2491470458134028, 0.2334925365383548,
                                 0.2031674267230659, 0.1600783285433462,
                                 0.1069393259953184, 0.0471753363865118};
    auto gl12 = [&](double lo, double hi) {
        const double c = 0.5 * (lo + hi), h = 0.5 * (hi - lo);
        double s = 0.0;
        for (int i = 0; i < 6; ++i) s += gw[i] * (f(c - h * gx[i]) + f(c + h * gx[i]));
        return s * h;
    };
    const double whole = gl12(a, b);
    const double m = 0.5 * (a + b);
    const double halves = gl12(a, m) + gl12(m, b);
    if (std::abs(whole - halves) <= tol * std::max(1.0, std::abs(halves)) || depth >= 16)
        return halves;
    return adaptive_gl(f, a, m, 0.5 * tol, depth + 1) +
           adaptive_gl(f, m, b, 0.5 * tol, depth + 1);
}

}  // namespace detail

// G(E,psi; lo, hi) = Int_lo^hi d(xi) / sin(phi'(xi)). Near a turning point
// sin(phi') ~ c sqrt(eta_plus - xi); substituting u = sqrt(eta_plus - xi)
// makes the integrand smooth before quadrature.
inline double g_integral(const Geometry& geom, double E, double psi,
                         double eta_lo, double eta_hi, double tol = 1e-11) {
    if (eta_hi < eta_lo) throw std::invalid_argument("g_integral: reversed interval");
    if (eta_hi == eta_lo) return 0.0;
    const double absE = std::abs(E);
    if (absE <= 0.0) return eta_hi - eta_lo;  // phi' == pi/2 throughout

    auto sin_pp = [&](double xi) {
        const double c = absE * std::exp(geom.potential(xi, psi));
        const double s2 = (1.0 - c) * (1.0 + c);
        if (s2 <= 0.0) return 0.0;
        return std::sqrt(s2);
    };

    const double margin = 1.0 - detail::clip_unit(absE * std::exp(geom.potential(eta_hi, psi)));
    double etap = std::numeric_limits<double>::infinity();
    if (margin <= 0.05) {
        etap = eta_plus_extended(geom, E, psi);
        if (!(eta_hi <= etap + 1e-12))
            throw std::domain_error("characteristic does not reach eta_hi");
    }
    // Use the sqrt substitution only when the turning point actually crowds
    // the interval; a distant (possibly astronomically large) eta_plus means
    // sin(phi') is small but nearly constant, where direct quadrature is both
    // accurate and free of the eta_plus - u^2 cancellation.
    if (margin > 0.05 || etap - eta_hi > (eta_hi - eta_lo)) {
        return detail::adaptive_gl([&](double xi) { return 1.0 / sin_pp(xi); },
                                   eta_lo, eta_hi, tol);
    }
    // u = sqrt(eta_plus - xi): d(xi) = -2u du, integrand 2u/sin(phi') smooth.
    // Since e^{-V(eta_plus)} = |E|, sin^2(phi'(xi)) = -expm1(-2 (V(eta_plus)-V(xi)))
    // which is cancellation-free near the turning point.
    const double u_hi = std::sqrt(std::max(etap - eta_hi, 0.0));
    const double u_lo = std::sqrt(etap - eta_lo);
    return detail::adaptive_gl(
        [&](double u) {
            const double xi = etap - u * u;
            const double s2 = -std::expm1(-2.0 * geom.potential_diff(etap, xi, psi));
            if (s2 <= 0.0) {
                // exactly at the turning point: use the analytic slope limit
                const double f_here = -geom.force(std::min(etap, geom.L()), psi);
                const double c = std::sqrt(std::max(2.0 * f_here, 1e-300));
                return 2.0 / c;
            }
            return 2.0 * u / std::sqrt(s2);
        },
        u_hi, u_lo, tol);
}

// Move along the characteristic through pt by delta_eta, keeping the sign of
// sin(phi) (no crossing of the turning point within one trace call).
inline CharPoint trace(const Geometry& geom, const CharPoint& pt, double delta_eta) {
    const double target = pt.eta + delta_eta;
    if (target < 0.0 || target > geom.L())
        throw std::domain_error("trace: target depth outside [0,L]");
    const double c = cos_phi_prime(geom, std::abs(pt.energy), target, pt.psi);
    const double mag = std::acos(c);  // in [0, pi/2]
    const double phi_new = (std::sin(pt.phi) >= 0.0) ? mag : -mag;
    return classify(geom, target, phi_new, pt.psi);
}

}  // namespace milne
