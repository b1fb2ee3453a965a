#pragma once
// Analytical functionals on converged solutions: the quadratic flux alpha,
// the limit moment beta, the first flux moment and its quasi-orthogonality
// closure, the energy identity, exponential-decay fits, and weighted
// derivative sup norms for the regularity probes.

#include <cmath>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "geometry.hpp"
#include "milne_solver.hpp"
#include "phase_grid.hpp"

namespace milne {

// alpha(eta) = (1/2) <f, f sin(phi)>
inline double alpha(const MilneSolution& sol, int i) {
    const PhaseGrid& g = *sol.grid;
    double acc = 0.0;
    for (int j = 0; j < g.n_phi(); ++j)
        for (int k = 0; k < g.n_psi(); ++k) {
            const double f = sol.f.at(i, j, k);
            acc += g.w_phi[j] * g.w_psi * f * f * g.s_phi[j];
        }
    return 0.5 * acc;
}

// beta(eta) = <sin^2 phi, f>
inline double beta(const MilneSolution& sol, int i) {
    const PhaseGrid& g = *sol.grid;
    double acc = 0.0;
    for (int j = 0; j < g.n_phi(); ++j)
        for (int k = 0; k < g.n_psi(); ++k)
            acc += g.w_phi[j] * g.w_psi * g.s_phi[j] * g.s_phi[j] * sol.f.at(i, j, k);
    return acc;
}

// m(eta) = <sin(phi), f>
inline std::vector<double> first_flux_moment(const MilneSolution& sol) {
    const PhaseGrid& g = *sol.grid;
    std::vector<double> m(g.n_eta(), 0.0);
    for (int i = 0; i < g.n_eta(); ++i) {
        double acc = 0.0;
        for (int j = 0; j < g.n_phi(); ++j)
            for (int k = 0; k < g.n_psi(); ++k)
                acc += g.w_phi[j] * g.w_psi * g.s_phi[j] * sol.f.at(i, j, k);
        m[i] = acc;
    }
    return m;
}

// Quasi-orthogonality closure residual per eta node:
//   m(eta) - 2 e^{2 Vt(eta)} int_eta^L e^{-2 Vt(y)} G(y) <sin phi cos^2 psi, f>(y) dy
// with Vt(eta) = ln(R1/(R1 - eps eta)); for equal radii G = 0 and the residual
// collapses to m(eta) itself.
inline std::vector<double> quasi_orthogonality_residual(const MilneSolution& sol) {
    const PhaseGrid& g = *sol.grid;
    const Geometry& geom = *sol.geom;
    const int ne = g.n_eta();
    std::vector<double> m = first_flux_moment(sol);

    // integrand e^{-2 Vt(y)} G(y) <sin phi cos^2 psi, f>(y) on the nodes
    std::vector<double> integrand(ne, 0.0), vt(ne, 0.0);
    for (int i = 0; i < ne; ++i) {
        const double y = g.eta[i];
        vt[i] = -std::log1p(-geom.eps() * y / geom.R1());
        const double G = geom.force_split(y).g_source;
        double w = 0.0;
        for (int j = 0; j < g.n_phi(); ++j)
            for (int k = 0; k < g.n_psi(); ++k) {
                const double c = std::cos(g.psi[k]);
                w += g.w_phi[j] * g.w_psi * g.s_phi[j] * c * c * sol.f.at(i, j, k);
            }
        integrand[i] = std::exp(-2.0 * vt[i]) * G * w;
    }
    // cumulative integral from L downward (trapezoid on the nonuniform nodes)
    std::vector<double> tail(ne, 0.0);
    for (int i = ne - 2; i >= 0; --i)
        tail[i] = tail[i + 1] +
                  0.5 * (g.eta[i + 1] - g.eta[i]) * (integrand[i] + integrand[i + 1]);
    std::vector<double> res(ne);
    for (int i = 0; i < ne; ++i)
        res[i] = m[i] - 2.0 * std::exp(2.0 * vt[i]) * tail[i];
    return res;
}

// L2-over-eta residual of the energy identity
//   (1/2) d/deta <f, f sin phi> + Ft <f, f sin phi> + G <f cos^2 psi, f sin phi>
//   + ||f - fbar||^2 - <S, f> = 0
inline double energy_identity_residual(const MilneSolution& sol, const Source& S = nullptr) {
    const PhaseGrid& g = *sol.grid;
    const Geometry& geom = *sol.geom;
    const int ne = g.n_eta();
    std::vector<double> a2(ne);  // <f, f sin phi>
    for (int i = 0; i < ne; ++i) a2[i] = 2.0 * alpha(sol, i);

    double acc = 0.0, vol = 0.0;
    for (int i = 0; i < ne; ++i) {
        // d(a2)/deta on the nonuniform nodes
        double da;
        if (i == 0)
            da = detail::d1_onesided(a2[0], a2[1], a2[2], g.eta[1] - g.eta[0],
                                     g.eta[2] - g.eta[1]);
        else if (i == ne - 1)
            da = -detail::d1_onesided(a2[ne - 1], a2[ne - 2], a2[ne - 3],
                                      g.eta[ne - 1] - g.eta[ne - 2],
                                      g.eta[ne - 2] - g.eta[ne - 3]);
        else
            da = detail::d1_nonuniform(a2[i - 1], a2[i], a2[i + 1],
                                       g.eta[i] - g.eta[i - 1], g.eta[i + 1] - g.eta[i]);
        const auto fs = geom.force_split(g.eta[i]);
        double g_term = 0.0, r2 = 0.0, sf = 0.0;
        for (int j = 0; j < g.n_phi(); ++j)
            for (int k = 0; k < g.n_psi(); ++k) {
                const double f = sol.f.at(i, j, k);
                const double w = g.w_phi[j] * g.w_psi;
                const double c = std::cos(g.psi[k]);
                g_term += w * c * c * f * f * g.s_phi[j];
                const double r = f - sol.fbar[i];
                r2 += w * r * r;
                if (S) sf += w * S(g.eta[i], g.phi[j], g.psi[k]) * f;
            }
        const double res = 0.5 * da + fs.f_tilde * a2[i] + fs.g_source * g_term + r2 - sf;
        acc += g.w_eta[i] * res * res;
        vol += g.w_eta[i];
    }
    return std::sqrt(acc / vol);
}

struct DecayFit {
    double k0_fitted = 0.0;
    double window_lo = 0.0, window_hi = 0.0;
    double r_squared = 0.0;
    double sup_weighted = 0.0;  // sup over window of e^{K0 eta} linf(f - f_L)
    bool degenerate = false;    // f - f_L below round-off everywhere
    bool valid = false;         // r_squared >= 0.9 and not degenerate
};

// log-linear fit of ln linf(f - f_L) over [0.2 L, 0.8 L]
inline DecayFit decay_fit(const MilneSolution& sol, double k0_candidate) {
    const PhaseGrid& g = *sol.grid;
    const int ne = g.n_eta();
    DecayFit out;
    out.window_lo = 0.2 * g.L;
    out.window_hi = 0.8 * g.L;

    std::vector<double> linf(ne, 0.0);
    double overall = 0.0;
    for (int i = 0; i < ne; ++i) {
        for (int j = 0; j < g.n_phi(); ++j)
            for (int k = 0; k < g.n_psi(); ++k)
                linf[i] = std::max(linf[i], std::abs(sol.f.at(i, j, k) - sol.f_L));
        overall = std::max(overall, linf[i]);
    }
    if (overall < 1e-12) {
        out.degenerate = true;
        return out;
    }
    double sx = 0, sy = 0, sxx = 0, sxy = 0, syy = 0;
    int n = 0;
    for (int i = 0; i < ne; ++i) {
        const double x = g.eta[i];
        if (x < out.window_lo || x > out.window_hi || linf[i] <= 0.0) continue;
        const double y = std::log(linf[i]);
        sx += x; sy += y; sxx += x * x; sxy += x * y; syy += y * y;
        ++n;
        out.sup_weighted = std::max(out.sup_weighted, std::exp(k0_candidate * x) * linf[i]);
    }
    if (n < 3) {
        out.degenerate = true;
        return out;
    }
    const double den = n * sxx - sx * sx;
    const double slope = (n * sxy - sx * sy) / den;
    out.k0_fitted = -slope;
    const double sse_num = (n * sxy - sx * sy) * (n * sxy - sx * sy);
    const double sst = (n * syy - sy * sy) * den;
    out.r_squared = sst > 0.0 ? sse_num / sst : 0.0;
    out.valid = std::isfinite(out.k0_fitted) && out.r_squared >= 0.9;
    return out;
}

struct DerivativeNorms {
    double sup_zeta_deta = 0.0;   // || e^{K0 eta} zeta df/deta ||_inf
    double sup_zeta_dphi = 0.0;   // || e^{K0 eta} zeta df/dphi ||_inf
    double sup_dpsi = 0.0;        // || e^{K0 eta} df/dpsi ||_inf
    double sup_dphi_plain = 0.0;  // unweighted sup |df/dphi|, whole grid
    double sup_dphi_grazing = 0.0;  // unweighted sup |df/dphi| near sin(phi)=0
    double lnnorm_context = 0.0;  // |ln eps|^8, reported for scale only
};

inline double lnnorm_context(double eps) {
    const double l = std::abs(std::log(eps));
    return std::pow(l, 8);
}

inline DerivativeNorms weighted_derivative_norms(const MilneSolution& sol) {
    const PhaseGrid& g = *sol.grid;
    const Geometry& geom = *sol.geom;
    const double k0 = geom.cfg().decay_rate_k0;
    Field de = d_eta(sol.f), dp = d_phi(sol.f), ds = d_psi(sol.f);
    DerivativeNorms out;
    out.lnnorm_context = lnnorm_context(geom.eps());
    // grazing band: the four phi nodes closest to sin(phi) = 0
    const int half = g.n_phi() / 2;
    for (int i = 0; i < g.n_eta(); ++i) {
        const double wexp = std::exp(k0 * g.eta[i]);
        for (int j = 0; j < g.n_phi(); ++j)
            for (int k = 0; k < g.n_psi(); ++k) {
                const double z = geom.weight_zeta(g.eta[i], g.phi[j], g.psi[k]);
                out.sup_zeta_deta = std::max(out.sup_zeta_deta,
                                             wexp * z * std::abs(de.at(i, j, k)));
                out.sup_zeta_dphi = std::max(out.sup_zeta_dphi,
                                             wexp * z * std::abs(dp.at(i, j, k)));
                out.sup_dpsi = std::max(out.sup_dpsi, wexp * std::abs(ds.at(i, j, k)));
                out.sup_dphi_plain = std::max(out.sup_dphi_plain, std::abs(dp.at(i, j, k)));
                if (j >= half - 2 && j <= half + 1)
                    out.sup_dphi_grazing =
                        std::max(out.sup_dphi_grazing, std::abs(dp.at(i, j, k)));
            }
    }
    return out;
}

// per-eta diagnostic table for report artifacts
inline void write_diagnostics_csv(const MilneSolution& sol, const std::string& path) {
    const PhaseGrid& g = *sol.grid;
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path);
    out.precision(17);
    auto qo = quasi_orthogonality_residual(sol);
    out << "eta,alpha,beta,qo_residual,linf_f_minus_fL\n";
    for (int i = 0; i < g.n_eta(); ++i) {
        double linf = 0.0;
        for (int j = 0; j < g.n_phi(); ++j)
            for (int k = 0; k < g.n_psi(); ++k)
                linf = std::max(linf, std::abs(sol.f.at(i, j, k) - sol.f_L));
        out << g.eta[i] << ',' << alpha(sol, i) << ',' << beta(sol, i) << ','
            << qo[i] << ',' << linf << '\n';
    }
}

}  // namespace milne
