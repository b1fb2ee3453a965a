#pragma once
// Geometric closures for the curvature-corrected Milne boundary layer:
// principal-radii profiles, the O(eps) force and its 2D/source split, the
// potential V, the kinetic weight zeta, and the smooth depth cutoff.

#include <array>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>

namespace milne {

using Tau = std::array<double, 2>;

struct CurvatureProfile {
    // Principal curvature radii as closures over the tangential coordinates.
    std::function<double(const Tau&)> r1;
    std::function<double(const Tau&)> r2;
    // dr*_dtau[i] = partial of the radius with respect to tau_i.
    std::array<std::function<double(const Tau&)>, 2> dr1_dtau;
    std::array<std::function<double(const Tau&)>, 2> dr2_dtau;
    double r_min = 0.0;  // global lower bound over both radii
    std::string name;

    static CurvatureProfile constant(double R1, double R2) {
        auto zero = [](const Tau&) { return 0.0; };
        CurvatureProfile p;
        p.r1 = [R1](const Tau&) { return R1; };
        p.r2 = [R2](const Tau&) { return R2; };
        p.dr1_dtau = {zero, zero};
        p.dr2_dtau = {zero, zero};
        p.r_min = std::min(R1, R2);
        p.name = "constant";
        return p;
    }

    // Flat-boundary limit: huge radii make the force vanish to round-off,
    // recovering the classical (uncorrected) Milne problem.
    static CurvatureProfile planar() {
        auto p = constant(1e30, 1e30);
        p.name = "planar";
        return p;
    }

    // Smooth tau-dependent radii for exercising the tangential derivative
    // problem. Kept strictly positive for |b| < a.
    static CurvatureProfile wavy(double a1, double b1, double a2, double b2) {
        CurvatureProfile p;
        p.r1 = [=](const Tau& t) { return a1 + b1 * std::sin(t[0] + 0.3 * t[1]); };
        p.r2 = [=](const Tau& t) { return a2 + b2 * std::cos(0.7 * t[0] - t[1]); };
        p.dr1_dtau[0] = [=](const Tau& t) { return b1 * std::cos(t[0] + 0.3 * t[1]); };
        p.dr1_dtau[1] = [=](const Tau& t) { return 0.3 * b1 * std::cos(t[0] + 0.3 * t[1]); };
        p.dr2_dtau[0] = [=](const Tau& t) { return -0.7 * b2 * std::sin(0.7 * t[0] - t[1]); };
        p.dr2_dtau[1] = [=](const Tau& t) { return b2 * std::sin(0.7 * t[0] - t[1]); };
        p.r_min = std::min(a1 - std::abs(b1), a2 - std::abs(b2));
        p.name = "wavy";
        return p;
    }
};

struct MilneConfig {
    double epsilon = 0.1;          // Knudsen number, in (0,1)
    double n_exponent = 0.25;      // slab-length exponent, in (0, 2/5)
    double slab_length = 0.0;      // L = epsilon^(-n_exponent) unless overridden
    double fixed_point_tol = 1e-9;
    int max_iterations = 5000;
    double decay_rate_k0 = 0.1;    // candidate rate for weighted norms
    bool allow_any_n = false;      // escape hatch for out-of-range exponents

    void finalize() {
        if (!(epsilon > 0.0 && epsilon < 1.0))
            throw std::invalid_argument("epsilon must lie in (0,1)");
        if (!allow_any_n && !(n_exponent > 0.0 && n_exponent < 0.4))
            throw std::invalid_argument("n_exponent must lie in (0, 2/5)");
        if (slab_length <= 0.0) slab_length = std::pow(epsilon, -n_exponent);
    }
};

// Geometry at a fixed surface point: radii frozen at tau, everything else a
// closed form in (eta, phi, psi). This is the object the solver carries.
class Geometry {
public:
    Geometry() = default;
    Geometry(const MilneConfig& cfg, const CurvatureProfile& prof, const Tau& tau)
        : cfg_(cfg), tau_(tau), R1_(prof.r1(tau)), R2_(prof.r2(tau)) {
        cfg_.finalize();
        if (R1_ <= 0.0 || R2_ <= 0.0)
            throw std::invalid_argument("curvature radii must be positive");
        if (cfg_.epsilon * cfg_.slab_length >= std::min(R1_, R2_))
            throw std::invalid_argument("eps*L must stay below min(R1,R2)");
    }

    double eps() const { return cfg_.epsilon; }
    double L() const { return cfg_.slab_length; }
    double R1() const { return R1_; }
    double R2() const { return R2_; }
    const MilneConfig& cfg() const { return cfg_; }
    const Tau& tau() const { return tau_; }

    void check_depth(double eta) const {
        if (cfg_.epsilon * eta >= std::min(R1_, R2_))
            throw std::domain_error("depth eta leaves the domain of the radii");
    }

    // F(eps; eta, psi) = -eps (sin^2 psi/(R1-eps eta) + cos^2 psi/(R2-eps eta))
    double force(double eta, double psi) const {
        check_depth(eta);
        const double s2 = sq(std::sin(psi)), c2 = 1.0 - s2;
        return -cfg_.epsilon * (s2 / (R1_ - cfg_.epsilon * eta) + c2 / (R2_ - cfg_.epsilon * eta));
    }

    // F = F_tilde(eta) + G(eta) cos^2(psi)
    struct ForceSplit { double f_tilde, g_source; };
    ForceSplit force_split(double eta) const {
        check_depth(eta);
        const double d1 = R1_ - cfg_.epsilon * eta, d2 = R2_ - cfg_.epsilon * eta;
        return {-cfg_.epsilon / d1, -cfg_.epsilon * (R1_ - R2_) / (d1 * d2)};
    }

    // V(eta,psi) = sin^2 psi ln(R1/(R1-eps eta)) + cos^2 psi ln(R2/(R2-eps eta))
    // computed with log1p so the planar limit keeps full precision.
    double potential(double eta, double psi) const {
        check_depth(eta);
        const double s2 = sq(std::sin(psi)), c2 = 1.0 - s2;
        return -(s2 * std::log1p(-cfg_.epsilon * eta / R1_) +
                 c2 * std::log1p(-cfg_.epsilon * eta / R2_));
    }

    // V(eta_to,psi) - V(eta_from,psi), cancellation-free in eta_to - eta_from.
    double potential_diff(double eta_to, double eta_from, double psi) const {
        const double s2 = sq(std::sin(psi)), c2 = 1.0 - s2;
        const double d = eta_to - eta_from;
        return -(s2 * std::log1p(-cfg_.epsilon * d / (R1_ - cfg_.epsilon * eta_from)) +
                 c2 * std::log1p(-cfg_.epsilon * d / (R2_ - cfg_.epsilon * eta_from)));
    }

    double exp_minus_V(double eta, double psi) const { return std::exp(-potential(eta, psi)); }

    // zeta = sqrt(1 - (e^{-V} cos phi)^2) >= |sin phi|, stable near grazing.
    double weight_zeta(double eta, double phi, double psi) const {
        const double c = std::cos(phi), s = std::sin(phi);
        const double z2 = s * s - c * c * std::expm1(-2.0 * potential(eta, psi));
        return std::sqrt(std::max(z2, 0.0));
    }

private:
    static double sq(double x) { return x * x; }
    MilneConfig cfg_;
    Tau tau_{0.0, 0.0};
    double R1_ = 1.0, R2_ = 1.0;
};

// C-infinity cutoff: 1 on [0, r_min/4], 0 on [r_min/2, inf), glued with the
// standard exp(-1/x) bump partition.
inline double cutoff_upsilon0(double mu, const CurvatureProfile& prof) {
    if (mu < 0.0) throw std::domain_error("cutoff argument must be nonnegative");
    const double lo = prof.r_min / 4.0, hi = prof.r_min / 2.0;
    if (mu <= lo) return 1.0;
    if (mu >= hi) return 0.0;
    auto bump = [](double x) { return x > 0.0 ? std::exp(-1.0 / x) : 0.0; };
    const double x = (hi - mu) / (hi - lo);  // 1 at the plateau edge, 0 at the tail
    return bump(x) / (bump(x) + bump(1.0 - x));
}

}  // namespace milne
