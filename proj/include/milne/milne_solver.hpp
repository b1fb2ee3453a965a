#pragma once
// Source-iteration solver for the slab transport problem with the geometric
// force correction: sin(phi) df/deta + F cos(phi) df/dphi + f - fbar = S on
// [0,L] x [-pi/2,pi/2] x [-pi,pi), inflow datum h at eta=0 on sin(phi)>0 and
// specular reflection at eta=L. Each sweep evaluates the mild (integrated
// along characteristics) form f = K[h] + T[fbar + S] with fbar lagged; paths
// are precomputed once per problem. The per-cell quadrature integrates
// q(t) e^{-t} dt in the attenuation coordinate t with a quadratic fit of q,
// so constant data are reproduced to round-off by telescoping.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "characteristics.hpp"
#include "geometry.hpp"
#include "phase_grid.hpp"
#include "threading.hpp"

namespace milne {

using Datum = std::function<double(double phi, double psi)>;
using Source = std::function<double(double eta, double phi, double psi)>;

enum class BoundaryKind { inflow, diffusive };

struct MilneProblem {
    MilneConfig cfg;
    CurvatureProfile prof = CurvatureProfile::constant(1.0, 1.0);
    Tau tau{0.0, 0.0};
    Datum h;   // null means 0
    Source S;  // null means 0
    BoundaryKind boundary_kind = BoundaryKind::inflow;
    int n_eta = 128, n_phi_half = 16, n_psi = 8;
    int threads = 1;
    // diffusive only: shift an incompatible datum by the constant that zeroes
    // the compatibility defect instead of erroring
    bool allow_constant_shift = false;
};

struct MilneSolution {
    std::shared_ptr<const PhaseGrid> grid;
    std::shared_ptr<const Geometry> geom;
    Field f;
    std::vector<double> fbar;
    double f_L = 0.0;              // beta-moment estimate (authoritative)
    double f_L_tail = 0.0;         // fbar averaged over the last 10% of eta
    double f_L_discrepancy = 0.0;  // |beta estimate - tail estimate|
    double constant_shift = 0.0;   // applied datum shift (diffusive variant)
    int iterations = 0;
    std::vector<double> residual_history;
    double mild_residual_l2 = 0.0;
    double boundary_net_flux = 0.0;  // incoming minus outgoing p-flux at eta=0
};

struct IncompatibleData : std::runtime_error {
    explicit IncompatibleData(double d)
        : std::runtime_error("boundary/source data violate the compatibility condition, defect = " +
                             std::to_string(d)),
          defect(d) {}
    double defect;
};

struct NonConvergence : std::runtime_error {
    NonConvergence(int iters, std::vector<double> hist)
        : std::runtime_error("source iteration failed to converge after " +
                             std::to_string(iters) + " sweeps"),
          iterations(iters), residual_history(std::move(hist)) {}
    int iterations;
    std::vector<double> residual_history;
};

namespace detail {

// A path cell: one quadrature interval of the walk from a grid node backward
// along its characteristic to the inflow boundary. dt1/dt2 are the attenuation
// increments over the two halves; xi0/xi1/xi2 the sample depths in walk order.
struct PathCell {
    double dt1 = 0.0, dt2 = 0.0;
    double xi0 = 0.0, xi1 = 0.0, xi2 = 0.0;
    std::int32_t m = -1;    // aligned eta interval index, or -1 (free cell)
    std::int8_t dir = 0;    // aligned only: -1 walked toward 0, +1 toward L
    std::int8_t sign = +1;  // sign of sin(phi') on this stretch
};

struct NodePath {
    double energy = 0.0;
    double phi_at_0 = 0.0;   // incidence angle at the inflow boundary
    std::uint32_t begin = 0, end = 0;  // cell range
    Region region = Region::I;
};

// Exponential moments over one cell: I0 = int_0^D e^-t, I1 = int t e^-t,
// I2 = int t^2 e^-t, series at small D to dodge cancellation.
inline void exp_moments(double D, double& I0, double& I1, double& I2) {
    I0 = -std::expm1(-D);
    if (D < 1e-3) {
        const double D2 = D * D, D3 = D2 * D;
        I1 = D2 / 2.0 - D3 / 3.0 + D2 * D2 / 8.0 - D3 * D2 / 30.0;
        I2 = D3 / 3.0 - D2 * D2 / 4.0 + D3 * D2 / 10.0 - D3 * D3 / 36.0;
    } else {
        const double ed = 1.0 - I0;  // e^{-D}
        I1 = I0 - D * ed;
        I2 = 2.0 * I1 - D * D * ed;
    }
}

}  // namespace detail

// Precomputed-path engine: builds all characteristic walks for one problem,
// then serves K/T applications and the fixed-point solve.
class MilneEngine {
  public:
    explicit MilneEngine(MilneProblem pb) : pb_(std::move(pb)) {
        pb_.cfg.finalize();
        grid_ = std::make_shared<PhaseGrid>(PhaseGrid::make(
            pb_.cfg.slab_length, pb_.n_eta, pb_.n_phi_half, pb_.n_psi));
        geom_ = std::make_shared<Geometry>(pb_.cfg, pb_.prof, pb_.tau);
        // with equal radii the potential is psi-independent and every psi
        // plane shares the same path geometry
        psi_collapsed_ = std::abs(geom_->R1() - geom_->R2()) == 0.0;
        build_paths();
    }

    const PhaseGrid& grid() const { return *grid_; }
    const Geometry& geom() const { return *geom_; }
    std::shared_ptr<const PhaseGrid> grid_ptr() const { return grid_; }
    std::shared_ptr<const Geometry> geom_ptr() const { return geom_; }

    // K[p]: boundary datum propagated along each characteristic with pure
    // attenuation.
    Field apply_K(const Datum& p) const {
        Field out(*grid_);
        sweep_generic(nullptr, nullptr, &p, out);
        return out;
    }

    // T[q]: Duhamel integral of a (possibly phi-dependent) source along each
    // characteristic.
    Field apply_T(const Source& q) const {
        Field out(*grid_);
        sweep_generic(nullptr, &q, nullptr, out);
        return out;
    }

    // One mild-formulation application f = K[h] + T[fbar + S].
    Field sweep(const std::vector<double>& fbar) const {
        Field out(*grid_);
        sweep_generic(&fbar, pb_.S ? &pb_.S : nullptr, pb_.h ? &pb_.h : nullptr, out);
        return out;
    }

    MilneSolution solve() const {
        const int n_eta = grid_->n_eta();
        // start from the flux average of the datum (exact for constants)
        double havg = 0.0;
        if (pb_.h) {
            for (int j = 0; j < grid_->n_phi(); ++j) {
                if (grid_->s_phi[j] <= 0.0) continue;
                for (int k = 0; k < grid_->n_psi(); ++k)
                    havg += grid_->w_phi[j] * grid_->w_psi * grid_->s_phi[j] *
                            pb_.h(grid_->phi[j], grid_->psi[k]);
            }
            havg /= PI;
        }
        std::vector<double> fbar(n_eta, havg);
        std::vector<double> fb0, fb1;  // Aitken history
        std::vector<double> residuals;
        Field f;
        const double hsup = datum_sup();
        int it = 0;
        double res = std::numeric_limits<double>::infinity();
        for (it = 1; it <= pb_.cfg.max_iterations; ++it) {
            f = sweep(fbar);
            check_max_principle(f, fbar, hsup);
            std::vector<double> fb = bar(f);
            res = 0.0;
            for (int i = 0; i < n_eta; ++i) res = std::max(res, std::abs(fb[i] - fbar[i]));
            residuals.push_back(res);
            if (res <= pb_.cfg.fixed_point_tol) { fbar = std::move(fb); break; }
            // Aitken delta-squared on fbar every 5 sweeps
            if (it % 5 == 0 && !fb1.empty()) {
                for (int i = 0; i < n_eta; ++i) {
                    const double d1 = fb1[i] - fb0[i], d2 = fb[i] - fb1[i];
                    const double den = d2 - d1;
                    if (std::abs(den) > 1e-14 * std::max(1.0, std::abs(fb[i])))
                        fb[i] = fb[i] - d2 * d2 / den;
                }
                fb0.clear(); fb1.clear();
            } else {
                fb0 = fb1;
                fb1 = fb;
            }
            fbar = std::move(fb);
        }
        if (res > pb_.cfg.fixed_point_tol)
            throw NonConvergence(pb_.cfg.max_iterations, residuals);

        MilneSolution sol;
        sol.grid = grid_;
        sol.geom = geom_;
        sol.f = std::move(f);
        sol.fbar = fbar;
        sol.iterations = it;
        sol.residual_history = std::move(residuals);
        fill_limits(sol);
        // mild residual: one extra application against the converged fbar
        {
            Field g = sweep(sol.fbar);
            double acc = 0.0, vol = 0.0;
            for (int i = 0; i < n_eta; ++i)
                for (int j = 0; j < grid_->n_phi(); ++j)
                    for (int k = 0; k < grid_->n_psi(); ++k) {
                        const double w = grid_->w_eta[i] * grid_->w_phi[j] * grid_->w_psi;
                        const double d = g.at(i, j, k) - sol.f.at(i, j, k);
                        acc += w * d * d;
                        vol += w;
                    }
            sol.mild_residual_l2 = std::sqrt(acc / vol);
        }
        sol.boundary_net_flux = p_flux(sol.f, 0, FluxSide::incoming) -
                                p_flux(sol.f, 0, FluxSide::outgoing);
        return sol;
    }

  private:
    // cells whose attenuation increment exceeds this are bisected; the
    // per-cell quadratic fit converges ~O(dt^4), so the cap controls the
    // quadrature floor of the whole sweep
    static constexpr double kDtSplit = 0.4;

    MilneProblem pb_;
    std::shared_ptr<PhaseGrid> grid_;
    std::shared_ptr<Geometry> geom_;
    bool psi_collapsed_ = false;
    std::vector<detail::PathCell> cells_;
    std::vector<detail::NodePath> paths_;

    double datum_sup() const {
        if (!pb_.h) return 0.0;
        double s = 0.0;
        for (int j = 0; j < grid_->n_phi(); ++j)
            for (int k = 0; k < grid_->n_psi(); ++k)
                s = std::max(s, std::abs(pb_.h(grid_->phi[j], grid_->psi[k])));
        return s;
    }

    void check_max_principle(const Field& f, const std::vector<double>& fbar,
                             double hsup) const {
        double rhs = hsup;
        for (int i = 0; i < grid_->n_eta(); ++i) {
            double s_max = 0.0;
            if (pb_.S)
                for (int j = 0; j < grid_->n_phi(); ++j)
                    for (int k = 0; k < grid_->n_psi(); ++k)
                        s_max = std::max(s_max, std::abs(pb_.S(grid_->eta[i], grid_->phi[j],
                                                               grid_->psi[k])));
            rhs = std::max(rhs, std::abs(fbar[i]) + s_max);
        }
        double lhs = 0.0;
        for (double x : f.v) lhs = std::max(lhs, std::abs(x));
        // slack covers the quadratic-fit quadrature, which is not variation
        // diminishing at the last digit
        if (lhs > rhs * (1.0 + 1e-6) + 1e-300)
            throw std::logic_error("sweep violated the iteration maximum principle");
    }

    // ---- path construction -------------------------------------------------

    void build_paths() {
        const int ne = grid_->n_eta(), np = grid_->n_phi(),
                  ns = psi_collapsed_ ? 1 : grid_->n_psi();
        paths_.resize(static_cast<std::size_t>(ne) * np * ns);
        cells_.clear();
        cells_.reserve(paths_.size() * 8);
        for (int k = 0; k < ns; ++k)
            for (int j = 0; j < np; ++j)
                for (int i = 0; i < ne; ++i)
                    build_node(i, j, k);
    }

    std::size_t node_path(int i, int j, int k) const {
        const int ns = psi_collapsed_ ? 1 : grid_->n_psi();
        const int kk = psi_collapsed_ ? 0 : k;
        return (static_cast<std::size_t>(i) * grid_->n_phi() + j) * ns + kk;
    }

    void build_node(int i, int j, int k) {
        const double eta = grid_->eta[i], phi = grid_->phi[j], psi = grid_->psi[k];
        CharPoint pt = classify(*geom_, eta, phi, psi);
        detail::NodePath np;
        np.energy = pt.energy;
        np.region = pt.region;
        np.phi_at_0 = std::acos(detail_clip(std::abs(pt.energy)));
        np.begin = static_cast<std::uint32_t>(cells_.size());

        const double absE = std::abs(pt.energy);
        const double etap_ext = (absE > 0.0) ? eta_plus_extended(*geom_, absE, psi)
                                             : std::numeric_limits<double>::infinity();
        double t_acc = 0.0;
        if (pt.region == Region::I) {
            emit_leg(eta, 0.0, +1, absE, psi, etap_ext, t_acc);
        } else if (pt.region == Region::II) {
            emit_leg(eta, grid_->L, -1, absE, psi, etap_ext, t_acc);
            emit_leg(grid_->L, 0.0, +1, absE, psi, etap_ext, t_acc);
        } else {
            emit_leg(eta, pt.eta_plus, -1, absE, psi, etap_ext, t_acc);
            emit_leg(pt.eta_plus, 0.0, +1, absE, psi, etap_ext, t_acc);
        }
        np.end = static_cast<std::uint32_t>(cells_.size());
        paths_[node_path(i, j, k)] = np;
    }

    static double detail_clip(double x) { return std::min(std::max(x, -1.0), 1.0); }

    double sin_pp(double xi, double absE, double psi) const {
        const double c = absE * std::exp(geom_->potential(xi, psi));
        const double s2 = (1.0 - c) * (1.0 + c);
        return s2 > 0.0 ? std::sqrt(s2) : 0.0;
    }
    // stable near the turning point: relative to eta_plus
    double sin_pp_turn(double xi, double etap, double psi) const {
        const double s2 = -std::expm1(-2.0 * geom_->potential_diff(etap, xi, psi));
        return s2 > 0.0 ? std::sqrt(s2) : 0.0;
    }

    // walk one leg from xi_from to xi_to (either direction), chopping at grid
    // interval boundaries; sign is the sin(phi') branch on the stretch
    void emit_leg(double xi_from, double xi_to, int sign, double absE, double psi,
                  double etap, double& t_acc) {
        if (xi_from == xi_to) return;
        const auto& e = grid_->eta;
        const int ne = grid_->n_eta();
        const bool down = xi_to < xi_from;
        // index of the interval containing the current position
        auto interval_of = [&](double x) {
            int m = static_cast<int>(std::upper_bound(e.begin(), e.end(), x) - e.begin()) - 1;
            return std::min(std::max(m, 0), ne - 2);
        };
        double cur = xi_from;
        while (t_acc < 41.5 && (down ? cur > xi_to : cur < xi_to)) {
            int m = interval_of(down ? std::nextafter(cur, -1.0) : cur);
            double nxt = down ? std::max(e[m], xi_to) : std::min(e[m + 1], xi_to);
            const bool aligned = (cur == e[down ? m + 1 : m]) && (nxt == e[down ? m : m + 1]);
            emit_cell(cur, nxt, m, aligned, sign, absE, psi, etap, t_acc, 0);
            cur = nxt;
        }
    }

    // emit one cell [a -> b] in walk order; subdivide near turning points and
    // cap the attenuation increment per cell
    void emit_cell(double a, double b, int m, bool aligned, int sign, double absE,
                   double psi, double etap, double& t_acc, int depth) {
        if (t_acc > 41.5) return;
        const double lo = std::min(a, b), hi = std::max(a, b), width = hi - lo;
        if (width <= 0.0) return;
        // near-turning test at the endpoint closer to eta_plus (larger eta)
        const bool near_turn =
            std::isfinite(etap) &&
            sin_pp(hi, absE, psi) * sin_pp(hi, absE, psi) < 0.04 &&
            (etap - lo) <= 8.0 * width && depth == 0;
        if (near_turn) {
            // split into 8 subcells uniform in u = sqrt(etap - xi)
            const double ua = std::sqrt(std::max(etap - a, 0.0));
            const double ub = std::sqrt(std::max(etap - b, 0.0));
            const int nsub = 8;
            for (int s = 0; s < nsub; ++s) {
                const double u0 = ua + (ub - ua) * s / nsub;
                const double u1 = ua + (ub - ua) * (s + 1) / nsub;
                emit_ucell(u0, u1, sign, absE, psi, etap, t_acc, 0);
            }
            return;
        }
        const double mid = 0.5 * (a + b);
        const double dt1 = gl4_dt(a, mid, absE, psi, etap);
        const double dt2 = gl4_dt(mid, b, absE, psi, etap);
        if (dt1 + dt2 > kDtSplit && depth < 14 && width > 1e-12) {
            emit_cell(a, mid, m, false, sign, absE, psi, etap, t_acc, depth + 1);
            emit_cell(mid, b, m, false, sign, absE, psi, etap, t_acc, depth + 1);
            return;
        }
        detail::PathCell c;
        c.dt1 = dt1; c.dt2 = dt2;
        c.xi0 = a; c.xi1 = mid; c.xi2 = b;
        c.sign = static_cast<std::int8_t>(sign);
        if (aligned && depth == 0) {
            c.m = m;
            c.dir = static_cast<std::int8_t>(b > a ? +1 : -1);
        }
        cells_.push_back(c);
        t_acc += dt1 + dt2;
    }

    // one subcell in the u coordinate, walk order u0 -> u1
    void emit_ucell(double u0, double u1, int sign, double absE, double psi,
                    double etap, double& t_acc, int depth) {
        if (t_acc > 41.5 || u0 == u1) return;
        const double um = 0.5 * (u0 + u1);
        const double dt1 = gl4_dt_u(u0, um, psi, etap);
        const double dt2 = gl4_dt_u(um, u1, psi, etap);
        if (dt1 + dt2 > kDtSplit && depth < 14 && std::abs(u1 - u0) > 1e-12) {
            emit_ucell(u0, um, sign, absE, psi, etap, t_acc, depth + 1);
            emit_ucell(um, u1, sign, absE, psi, etap, t_acc, depth + 1);
            return;
        }
        detail::PathCell c;
        c.dt1 = dt1; c.dt2 = dt2;
        c.xi0 = etap - u0 * u0;
        c.xi1 = etap - um * um;
        c.xi2 = etap - u1 * u1;
        c.sign = static_cast<std::int8_t>(sign);
        cells_.push_back(c);
        t_acc += dt1 + dt2;
    }

    // GL4 attenuation increment over [a,b] in depth coordinate
    double gl4_dt(double a, double b, double absE, double psi, double etap) const {
        static const double gx[2] = {0.3399810435848563, 0.8611363115940526};
        static const double gw[2] = {0.6521451548625461, 0.3478548451374538};
        const double c = 0.5 * (a + b), h = 0.5 * (b - a);
        double s = 0.0;
        for (int i = 0; i < 2; ++i) {
            for (double x : {c - h * gx[i], c + h * gx[i]}) {
                double sp = (std::isfinite(etap) && etap - x < 1.0)
                                ? sin_pp_turn(x, etap, psi)
                                : sin_pp(x, absE, psi);
                s += gw[i] / std::max(sp, 1e-300);
            }
        }
        return std::abs(h) * s;
    }

    // GL4 attenuation increment in the u coordinate (integrand 2u / sin(phi'))
    double gl4_dt_u(double ua, double ub, double psi, double etap) const {
        static const double gx[2] = {0.3399810435848563, 0.8611363115940526};
        static const double gw[2] = {0.6521451548625461, 0.3478548451374538};
        const double c = 0.5 * (ua + ub), h = 0.5 * (ub - ua);
        double s = 0.0;
        for (int i = 0; i < 2; ++i) {
            for (double u : {c - h * gx[i], c + h * gx[i]}) {
                const double xi = etap - u * u;
                const double sp = sin_pp_turn(xi, etap, psi);
                if (sp > 0.0) {
                    s += gw[i] * 2.0 * u / sp;
                } else {
                    // analytic limit 2/sqrt(2|F|) exactly at the turning point
                    const double fh = -geom_->force(std::min(etap, grid_->L), psi);
                    s += gw[i] * 2.0 / std::sqrt(std::max(2.0 * fh, 1e-300));
                }
            }
        }
        return std::abs(h) * s;
    }

    // ---- sweeps ------------------------------------------------------------

    // generic walk: f = K[p] + T[fbar + S]; any of fbar, S, p may be absent
    void sweep_generic(const std::vector<double>* fbar, const Source* S,
                       const Datum* p, Field& out) const {
        // fbar sampled at nodes, interval midpoints, and (rarely) anywhere
        std::vector<double> fbar_mid;
        MonotoneCubic fbar_curve;
        if (fbar) {
            fbar_curve = MonotoneCubic(grid_->eta, *fbar);
            fbar_mid.resize(grid_->n_eta() - 1);
            for (int m = 0; m + 1 < grid_->n_eta(); ++m)
                fbar_mid[m] = fbar_curve(0.5 * (grid_->eta[m] + grid_->eta[m + 1]));
        }
        const int ne = grid_->n_eta(), np = grid_->n_phi(), ns = grid_->n_psi();
        parallel_for(static_cast<std::size_t>(np) * ns, pb_.threads, [&](std::size_t jk) {
            const int j = static_cast<int>(jk / ns), k = static_cast<int>(jk % ns);
            const double psi = grid_->psi[k];
            for (int i = 0; i < ne; ++i) {
                const auto& nd = paths_[node_path(i, j, k)];
                if (grid_->s_phi[j] > 0.0 && i == 0) {
                    // inflow node: datum reproduced exactly
                    out.at(i, j, k) = p ? (*p)(grid_->phi[j], psi) : 0.0;
                    continue;
                }
                double A = 1.0, acc = 0.0;
                for (std::uint32_t ci = nd.begin; ci < nd.end && A > 1e-18; ++ci) {
                    const auto& c = cells_[ci];
                    double q0, q1, q2;
                    sample_q(c, psi, nd.energy, fbar, fbar_mid, fbar_curve, S, q0, q1, q2);
                    const double D = c.dt1 + c.dt2;
                    double I0, I1, I2;
                    detail::exp_moments(D, I0, I1, I2);
                    // quadratic Newton form through (0,q0), (dt1,q1), (D,q2)
                    double contrib;
                    if (c.dt1 > 0.0 && c.dt2 > 0.0) {
                        const double c1 = (q1 - q0) / c.dt1;
                        const double c2 = ((q2 - q1) / c.dt2 - c1) / D;
                        contrib = q0 * I0 + c1 * I1 + c2 * (I2 - c.dt1 * I1);
                    } else {
                        contrib = q1 * I0;  // degenerate cell: midpoint value
                    }
                    acc += A * contrib;
                    A -= A * I0;  // A <- A e^{-D}, telescoping with contrib
                }
                double bval = 0.0;
                if (p) bval = (*p)(nd.phi_at_0, psi);
                out.at(i, j, k) = acc + A * bval;
            }
        });
        out.check_finite();
    }

    void sample_q(const detail::PathCell& c, double psi, double E,
                  const std::vector<double>* fbar, const std::vector<double>& fbar_mid,
                  const MonotoneCubic& fbar_curve, const Source* S,
                  double& q0, double& q1, double& q2) const {
        q0 = q1 = q2 = 0.0;
        if (fbar) {
            if (c.m >= 0) {
                const int lo = c.m, hi = c.m + 1;
                q0 = (*fbar)[c.dir > 0 ? lo : hi];
                q1 = fbar_mid[c.m];
                q2 = (*fbar)[c.dir > 0 ? hi : lo];
            } else {
                q0 = fbar_curve(clamp_eta(c.xi0));
                q1 = fbar_curve(clamp_eta(c.xi1));
                q2 = fbar_curve(clamp_eta(c.xi2));
            }
        }
        if (S) {
            q0 += (*S)(c.xi0, signed_phi(c.xi0, c.sign, E, psi), psi);
            q1 += (*S)(c.xi1, signed_phi(c.xi1, c.sign, E, psi), psi);
            q2 += (*S)(c.xi2, signed_phi(c.xi2, c.sign, E, psi), psi);
        }
    }

    double clamp_eta(double x) const {
        return std::min(std::max(x, 0.0), grid_->L);
    }

    double signed_phi(double xi, int sign, double absE, double psi) const {
        const double cc = detail_clip(absE * std::exp(geom_->potential(clamp_eta(xi), psi)));
        const double mag = std::acos(cc);
        return sign > 0 ? mag : -mag;
    }

    void fill_limits(MilneSolution& sol) const {
        const int ne = grid_->n_eta();
        // beta moment at eta = L
        double beta = 0.0;
        for (int j = 0; j < grid_->n_phi(); ++j)
            for (int k = 0; k < grid_->n_psi(); ++k)
                beta += grid_->w_phi[j] * grid_->w_psi * grid_->s_phi[j] * grid_->s_phi[j] *
                        sol.f.at(ne - 1, j, k);
        sol.f_L = beta / (4.0 * PI / 3.0);
        const int tail = std::max(1, ne / 10);
        double tavg = 0.0;
        for (int i = ne - tail; i < ne; ++i) tavg += sol.fbar[i];
        sol.f_L_tail = tavg / tail;
        sol.f_L_discrepancy = std::abs(sol.f_L - sol.f_L_tail);
    }
};

// LHS of the compatibility condition under grid quadrature:
// int_{sin phi>0} h sin phi cos phi dphi dpsi + int_0^L int e^{-V} S cos phi.
inline double check_compatibility(const MilneProblem& pb) {
    PhaseGrid g = PhaseGrid::make(pb.cfg.slab_length, pb.n_eta, pb.n_phi_half, pb.n_psi);
    Geometry geom(pb.cfg, pb.prof, pb.tau);
    double acc = 0.0;
    if (pb.h)
        for (int j = 0; j < g.n_phi(); ++j) {
            if (g.s_phi[j] <= 0.0) continue;
            for (int k = 0; k < g.n_psi(); ++k)
                acc += g.w_phi[j] * g.w_psi * g.s_phi[j] * pb.h(g.phi[j], g.psi[k]);
        }
    if (pb.S)
        for (int i = 0; i < g.n_eta(); ++i)
            for (int j = 0; j < g.n_phi(); ++j)
                for (int k = 0; k < g.n_psi(); ++k)
                    acc += g.w_eta[i] * g.w_phi[j] * g.w_psi *
                           geom.exp_minus_V(g.eta[i], g.psi[k]) *
                           pb.S(g.eta[i], g.phi[j], g.psi[k]);
    return acc;
}

inline MilneSolution solve_inflow(const MilneProblem& pb) {
    MilneProblem p = pb;
    p.boundary_kind = BoundaryKind::inflow;
    return MilneEngine(p).solve();
}

inline MilneSolution solve_diffusive(const MilneProblem& pb) {
    const double defect = check_compatibility(pb);
    const double scale = 1.0;  // defect is an absolute flux balance
    double shift = 0.0;
    MilneProblem p = pb;
    if (std::abs(defect) > 1e-6 * scale) {
        if (!pb.allow_constant_shift) throw IncompatibleData(defect);
        shift = defect / PI;
        Datum h0 = pb.h;
        p.h = [h0, shift](double phi, double psi) {
            return (h0 ? h0(phi, psi) : 0.0) - shift;
        };
    }
    MilneSolution sol = MilneEngine(p).solve();
    if (shift != 0.0) {
        for (double& x : sol.f.v) x += shift;
        for (double& x : sol.fbar) x += shift;
        sol.f_L += shift;
        sol.f_L_tail += shift;
        sol.constant_shift = shift;
        sol.boundary_net_flux = p_flux(sol.f, 0, FluxSide::incoming) -
                                p_flux(sol.f, 0, FluxSide::outgoing);
    }
    return sol;
}

inline double estimate_fL(const MilneSolution& sol) { return sol.f_L; }

// ---- hydrodynamic lift ------------------------------------------------------
// a(eta) solving -a' - Fbar a + 3 S_Q = 0 with Fbar = -eps (1/(R1-eps eta) +
// 1/(R2-eps eta)), picked so that a(L) decays with S_Q. Then f = a(eta) sin(phi)
// cancels the angular average of the free-streaming terms against S_Q.
struct HydroLift {
    std::vector<double> a;        // on the grid's eta nodes
    std::vector<double> a_prime;  // analytic derivative 3 S_Q - Fbar a
};

inline HydroLift hydro_lift(const MilneProblem& pb,
                            const std::function<double(double)>& S_Q,
                            const std::vector<double>& eta_nodes) {
    Geometry geom(pb.cfg, pb.prof, pb.tau);
    const double eps = pb.cfg.epsilon, R1 = geom.R1(), R2 = geom.R2();
    const double L = pb.cfg.slab_length;
    // integrating factor exp(int_0^y Fbar) = (1 - eps y/R1)(1 - eps y/R2)
    auto W = [&](double y) { return (1.0 - eps * y / R1) * (1.0 - eps * y / R2); };
    auto WS = [&](double y) { return W(y) * S_Q(y); };
    const double a0 = -3.0 * detail::adaptive_gl(WS, 0.0, L, 1e-12);
    HydroLift out;
    out.a.resize(eta_nodes.size());
    out.a_prime.resize(eta_nodes.size());
    double cum = 0.0, prev = 0.0;
    for (std::size_t i = 0; i < eta_nodes.size(); ++i) {
        const double y = eta_nodes[i];
        cum += detail::adaptive_gl(WS, prev, y, 1e-12);
        prev = y;
        out.a[i] = (a0 + 3.0 * cum) / W(y);
        const double fbar_eff = -eps * (1.0 / (R1 - eps * y) + 1.0 / (R2 - eps * y));
        out.a_prime[i] = 3.0 * S_Q(y) - fbar_eff * out.a[i];
    }
    return out;
}

// ---- derivative problems ----------------------------------------------------

// characteristics never move in psi, so sampled psi is always (numerically) a
// grid node; recover its index
inline int nearest_psi(const PhaseGrid& g, double psi) {
    const int n = g.n_psi();
    int k = static_cast<int>(std::lround((psi - g.psi[0]) / g.w_psi));
    return std::min(std::max(k, 0), n - 1);
}

// interpolate a grid field at arbitrary (eta, phi) on a fixed psi plane:
// monotone cubic in eta per column, 4-point Lagrange in phi across columns
class FieldInterpolator {
  public:
    explicit FieldInterpolator(const Field& f) : grid_(f.grid) {
        const int np = grid_->n_phi(), ns = grid_->n_psi();
        curves_.resize(static_cast<std::size_t>(np) * ns);
        std::vector<double> col(grid_->n_eta());
        for (int j = 0; j < np; ++j)
            for (int k = 0; k < ns; ++k) {
                for (int i = 0; i < grid_->n_eta(); ++i) col[i] = f.at(i, j, k);
                curves_[static_cast<std::size_t>(j) * ns + k] =
                    MonotoneCubic(grid_->eta, col);
            }
    }

    double eval(double eta, double phi, int k) const {
        const auto& ph = grid_->phi;
        const int np = grid_->n_phi(), ns = grid_->n_psi();
        eta = std::min(std::max(eta, 0.0), grid_->L);
        phi = std::min(std::max(phi, ph.front()), ph.back());
        int j = static_cast<int>(std::upper_bound(ph.begin(), ph.end(), phi) - ph.begin()) - 1;
        j = std::min(std::max(j, 0), np - 2);
        int j0 = std::min(std::max(j - 1, 0), np - 4);
        double y[4], x[4];
        for (int s = 0; s < 4; ++s) {
            x[s] = ph[j0 + s];
            y[s] = curves_[static_cast<std::size_t>(j0 + s) * ns + k](eta);
        }
        double acc = 0.0;
        for (int s = 0; s < 4; ++s) {
            double l = 1.0;
            for (int r = 0; r < 4; ++r)
                if (r != s) l *= (phi - x[r]) / (x[s] - x[r]);
            acc += y[s] * l;
        }
        return acc;
    }

  private:
    const PhaseGrid* grid_;
    std::vector<MonotoneCubic> curves_;
};

// w = dv/dtau_i: full solve with the tau-differentiated datum and the
// curvature-drift source built from cos(phi) dv/dphi of the base solution.
inline MilneSolution solve_tangential(const MilneProblem& pb, const MilneSolution& base,
                                      int tangent_index,
                                      const Datum& dh_dtau = nullptr,
                                      const Source& dS_dtau = nullptr) {
    Geometry geom(pb.cfg, pb.prof, pb.tau);
    const double eps = pb.cfg.epsilon, R1 = geom.R1(), R2 = geom.R2();
    const double dR1 = pb.prof.dr1_dtau[tangent_index](pb.tau);
    const double dR2 = pb.prof.dr2_dtau[tangent_index](pb.tau);
    auto dvdphi = std::make_shared<FieldInterpolator>(d_phi(base.f));
    const PhaseGrid* g = base.grid.get();
    MilneProblem p = pb;
    p.h = dh_dtau;
    p.S = [=](double eta, double phi, double psi) {
        const double s2 = std::sin(psi) * std::sin(psi), c2 = 1.0 - s2;
        const double r1 = R1 - eps * eta, r2 = R2 - eps * eta;
        const double drift = -eps * (dR1 * s2 / (r1 * r1) + dR2 * c2 / (r2 * r2));
        int k = nearest_psi(*g, psi);
        double src = drift * std::cos(phi) * dvdphi->eval(eta, phi, k);
        if (dS_dtau) src += dS_dtau(eta, phi, psi);
        return src;
    };
    return MilneEngine(p).solve();

}

// w' = dv/dpsi: the no-bar transport equation, a single K + T application.
inline MilneSolution solve_psi_derivative(const MilneProblem& pb, const MilneSolution& base,
                                          const Datum& dh_dpsi = nullptr,
                                          const Source& dS_dpsi = nullptr) {
    Geometry geom(pb.cfg, pb.prof, pb.tau);
    const double eps = pb.cfg.epsilon, R1 = geom.R1(), R2 = geom.R2();
    auto dvdphi = std::make_shared<FieldInterpolator>(d_phi(base.f));
    const PhaseGrid* g = base.grid.get();
    MilneProblem p = pb;
    p.h = dh_dpsi;
    p.S = [=](double eta, double phi, double psi) {
        const double r1 = R1 - eps * eta, r2 = R2 - eps * eta;
        const double gpsi = eps * std::sin(2.0 * psi) * (1.0 / r1 - 1.0 / r2);
        int k = nearest_psi(*g, psi);
        double src = gpsi * std::cos(phi) * dvdphi->eval(eta, phi, k);
        if (dS_dpsi) src += dS_dpsi(eta, phi, psi);
        return src;
    };
    MilneEngine eng(p);
    MilneSolution sol;
    sol.grid = eng.grid_ptr();
    sol.geom = eng.geom_ptr();
    sol.f = eng.apply_K(p.h ? p.h : Datum([](double, double) { return 0.0; }));
    Field t = eng.apply_T(p.S);
    for (std::size_t n = 0; n < sol.f.v.size(); ++n) sol.f.v[n] += t.v[n];
    sol.fbar = bar(sol.f);
    sol.iterations = 1;
    // limit estimates as in the full solve
    const int ne = sol.grid->n_eta();
    double beta = 0.0;
    for (int j = 0; j < sol.grid->n_phi(); ++j)
        for (int k = 0; k < sol.grid->n_psi(); ++k)
            beta += sol.grid->w_phi[j] * sol.grid->w_psi * sol.grid->s_phi[j] *
                    sol.grid->s_phi[j] * sol.f.at(ne - 1, j, k);
    sol.f_L = beta / (4.0 * PI / 3.0);
    const int tail = std::max(1, ne / 10);
    double tavg = 0.0;
    for (int i = ne - tail; i < ne; ++i) tavg += sol.fbar[i];
    sol.f_L_tail = tavg / tail;
    sol.f_L_discrepancy = std::abs(sol.f_L - sol.f_L_tail);
    return sol;
}

}  // namespace milne
