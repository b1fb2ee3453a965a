#pragma once
// Tensor grid over [0,L] x (-pi/2,pi/2) x [-pi,pi) with the cos(phi)
// Jacobian folded into the angular weights, plus fields, quadrature
// functionals, monotone cubic interpolation, and CSV/JSON serialization.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "geometry.hpp"

namespace milne {

inline constexpr double PI = std::numbers::pi;

// Gauss-Legendre nodes/weights on [-1,1] by Newton iteration on P_n.
inline void gauss_legendre(int n, std::vector<double>& x, std::vector<double>& w) {
    x.assign(n, 0.0);
    w.assign(n, 0.0);
    const int m = (n + 1) / 2;
    for (int i = 0; i < m; ++i) {
        double z = std::cos(PI * (i + 0.75) / (n + 0.5));
        double pp = 0.0;
        for (int it = 0; it < 100; ++it) {
            double p1 = 1.0, p2 = 0.0;
            for (int j = 0; j < n; ++j) {
                const double p3 = p2;
                p2 = p1;
                p1 = ((2.0 * j + 1.0) * z * p2 - j * p3) / (j + 1.0);
            }
            pp = n * (z * p1 - p2) / (z * z - 1.0);
            const double z1 = z;
            z = z1 - p1 / pp;
            if (std::abs(z - z1) < 1e-15) break;
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = w[n - 1 - i] = 2.0 / ((1.0 - z * z) * pp * pp);
    }
}

struct PhaseGrid {
    std::vector<double> eta;     // ascending, eta.front()=0, eta.back()=L
    std::vector<double> w_eta;   // trapezoid weights on the nonuniform nodes
    std::vector<double> phi;     // ascending, +/- paired, excludes 0 and +-pi/2
    std::vector<double> s_phi;   // sin(phi), the quadrature variable
    std::vector<double> w_phi;   // GL weights in s (cos(phi) Jacobian absorbed)
    std::vector<double> psi;     // uniform in [-pi, pi)
    double w_psi = 0.0;          // 2 pi / n_psi
    double L = 0.0;

    int n_eta() const { return static_cast<int>(eta.size()); }
    int n_phi() const { return static_cast<int>(phi.size()); }
    int n_psi() const { return static_cast<int>(psi.size()); }
    std::size_t size() const {
        return eta.size() * phi.size() * psi.size();
    }
    std::size_t idx(int i, int j, int k) const {
        return (static_cast<std::size_t>(i) * phi.size() + j) * psi.size() + k;
    }
    // phi nodes are stored ascending; the mirror of index j is n_phi-1-j.
    int mirror_phi(int j) const { return n_phi() - 1 - j; }

    // Geometrically graded near eta=0 (ratio ~1.15), uniform tail.
    static PhaseGrid make(double L, int n_eta, int n_phi_half, int n_psi,
                          double grading_ratio = 1.15) {
        if (n_eta < 4 || n_phi_half < 2 || n_psi < 2)
            throw std::invalid_argument("grid too small");
        PhaseGrid g;
        g.L = L;

        // eta spacings proportional to ratio^min(i, cap), rescaled to sum L.
        const int cap = static_cast<int>(std::ceil(std::log(20.0) / std::log(grading_ratio)));
        std::vector<double> d(n_eta - 1);
        double sum = 0.0;
        for (int i = 0; i < n_eta - 1; ++i) {
            d[i] = std::pow(grading_ratio, std::min(i, cap));
            sum += d[i];
        }
        g.eta.resize(n_eta);
        g.eta[0] = 0.0;
        for (int i = 1; i < n_eta; ++i) g.eta[i] = g.eta[i - 1] + d[i - 1] * (L / sum);
        g.eta.back() = L;
        g.w_eta.assign(n_eta, 0.0);
        for (int i = 0; i + 1 < n_eta; ++i) {
            const double h = g.eta[i + 1] - g.eta[i];
            g.w_eta[i] += 0.5 * h;
            g.w_eta[i + 1] += 0.5 * h;
        }

        // phi: Gauss-Legendre in s = sin(phi) on (0,1], mirrored to [-1,0).
        std::vector<double> xs, ws;
        gauss_legendre(n_phi_half, xs, ws);
        g.phi.resize(2 * n_phi_half);
        g.s_phi.resize(2 * n_phi_half);
        g.w_phi.resize(2 * n_phi_half);
        for (int j = 0; j < n_phi_half; ++j) {
            const double s = 0.5 * (xs[j] + 1.0);      // in (0,1)
            const double wj = 0.5 * ws[j];
            g.s_phi[n_phi_half + j] = s;
            g.w_phi[n_phi_half + j] = wj;
            g.s_phi[n_phi_half - 1 - j] = -s;
            g.w_phi[n_phi_half - 1 - j] = wj;
        }
        for (int j = 0; j < 2 * n_phi_half; ++j) g.phi[j] = std::asin(g.s_phi[j]);

        // psi: uniform midpoint rule (periodic, spectrally accurate).
        g.psi.resize(n_psi);
        g.w_psi = 2.0 * PI / n_psi;
        for (int k = 0; k < n_psi; ++k) g.psi[k] = -PI + (k + 0.5) * g.w_psi;

        // construction-time sanity: specular pairing and measure.
        for (int j = 0; j < g.n_phi(); ++j) {
            const int jm = g.mirror_phi(j);
            if (std::abs(g.s_phi[j] + g.s_phi[jm]) > 1e-14 ||
                std::abs(g.w_phi[j] - g.w_phi[jm]) > 1e-14)
                throw std::logic_error("phi nodes lost specular pairing");
        }
        double meas = 0.0;
        for (int j = 0; j < g.n_phi(); ++j) meas += g.w_phi[j];
        if (std::abs(meas * n_psi * g.w_psi / (2.0 * PI) - 2.0) > 1e-12)
            throw std::logic_error("angular measure mismatch");
        return g;
    }
};

struct Field {
    const PhaseGrid* grid = nullptr;
    std::vector<double> v;

    Field() = default;
    explicit Field(const PhaseGrid& g, double fill = 0.0)
        : grid(&g), v(g.size(), fill) {}

    double& at(int i, int j, int k) { return v[grid->idx(i, j, k)]; }
    double at(int i, int j, int k) const { return v[grid->idx(i, j, k)]; }

    void check_finite() const {
        for (double x : v)
            if (!std::isfinite(x)) throw std::runtime_error("field contains non-finite entries");
    }
};

// fbar(eta) = (1/4pi) Int f cos(phi) dphi dpsi, per eta node.
inline std::vector<double> bar(const Field& f) {
    const PhaseGrid& g = *f.grid;
    std::vector<double> out(g.n_eta(), 0.0);
    for (int i = 0; i < g.n_eta(); ++i) {
        double acc = 0.0;
        for (int j = 0; j < g.n_phi(); ++j) {
            double row = 0.0;
            for (int k = 0; k < g.n_psi(); ++k) row += f.at(i, j, k);
            acc += row * g.w_phi[j];
        }
        out[i] = acc * g.w_psi / (4.0 * PI);
    }
    return out;
}

// <f,g>(eta) with the cos(phi) Jacobian.
inline double inner(const Field& f, const Field& h, int i) {
    if (f.grid != h.grid) throw std::invalid_argument("inner: grid mismatch");
    const PhaseGrid& g = *f.grid;
    double acc = 0.0;
    for (int j = 0; j < g.n_phi(); ++j) {
        double row = 0.0;
        for (int k = 0; k < g.n_psi(); ++k) row += f.at(i, j, k) * h.at(i, j, k);
        acc += row * g.w_phi[j];
    }
    return acc * g.w_psi;
}

struct Norms {
    double l2_total = 0.0, linf_total = 0.0;
    std::vector<double> l2_at, linf_at;
};

inline Norms norms(const Field& f) {
    const PhaseGrid& g = *f.grid;
    Norms n;
    n.l2_at.resize(g.n_eta());
    n.linf_at.resize(g.n_eta());
    double total = 0.0;
    for (int i = 0; i < g.n_eta(); ++i) {
        double acc = 0.0, mx = 0.0;
        for (int j = 0; j < g.n_phi(); ++j) {
            double row = 0.0;
            for (int k = 0; k < g.n_psi(); ++k) {
                const double x = f.at(i, j, k);
                row += x * x;
                mx = std::max(mx, std::abs(x));
            }
            acc += row * g.w_phi[j];
        }
        acc *= g.w_psi;
        n.l2_at[i] = std::sqrt(acc);
        n.linf_at[i] = mx;
        n.linf_total = std::max(n.linf_total, mx);
        total += g.w_eta[i] * acc;
    }
    n.l2_total = std::sqrt(total);
    return n;
}

namespace detail {
// second-order first derivative on a nonuniform 1D stencil
inline double d1_nonuniform(double fm, double f0, double fp, double hm, double hp) {
    return (fp * hm * hm - fm * hp * hp + f0 * (hp * hp - hm * hm)) /
           (hm * hp * (hm + hp));
}
inline double d1_onesided(double f0, double f1, double f2, double h1, double h2) {
    // derivative at x0 from x0, x0+h1, x0+h1+h2
    const double a = -(2.0 * h1 + h2) / (h1 * (h1 + h2));
    const double b = (h1 + h2) / (h1 * h2);
    const double c = -h1 / (h2 * (h1 + h2));
    return a * f0 + b * f1 + c * f2;
}
}  // namespace detail

// d/deta by central differences on the nonuniform eta nodes (one-sided ends).
inline Field d_eta(const Field& f) {
    const PhaseGrid& g = *f.grid;
    Field out(g);
    const int n = g.n_eta();
    for (int j = 0; j < g.n_phi(); ++j)
        for (int k = 0; k < g.n_psi(); ++k) {
            out.at(0, j, k) = detail::d1_onesided(
                f.at(0, j, k), f.at(1, j, k), f.at(2, j, k),
                g.eta[1] - g.eta[0], g.eta[2] - g.eta[1]);
            for (int i = 1; i + 1 < n; ++i)
                out.at(i, j, k) = detail::d1_nonuniform(
                    f.at(i - 1, j, k), f.at(i, j, k), f.at(i + 1, j, k),
                    g.eta[i] - g.eta[i - 1], g.eta[i + 1] - g.eta[i]);
            out.at(n - 1, j, k) = -detail::d1_onesided(
                f.at(n - 1, j, k), f.at(n - 2, j, k), f.at(n - 3, j, k),
                g.eta[n - 1] - g.eta[n - 2], g.eta[n - 2] - g.eta[n - 3]);
        }
    return out;
}

// d/dphi by central differences on the nonuniform phi nodes (one-sided ends).
inline Field d_phi(const Field& f) {
    const PhaseGrid& g = *f.grid;
    Field out(g);
    const int n = g.n_phi();
    for (int i = 0; i < g.n_eta(); ++i)
        for (int k = 0; k < g.n_psi(); ++k) {
            out.at(i, 0, k) = detail::d1_onesided(
                f.at(i, 0, k), f.at(i, 1, k), f.at(i, 2, k),
                g.phi[1] - g.phi[0], g.phi[2] - g.phi[1]);
            for (int j = 1; j + 1 < n; ++j)
                out.at(i, j, k) = detail::d1_nonuniform(
                    f.at(i, j - 1, k), f.at(i, j, k), f.at(i, j + 1, k),
                    g.phi[j] - g.phi[j - 1], g.phi[j + 1] - g.phi[j]);
            out.at(i, n - 1, k) = -detail::d1_onesided(
                f.at(i, n - 1, k), f.at(i, n - 2, k), f.at(i, n - 3, k),
                g.phi[n - 1] - g.phi[n - 2], g.phi[n - 2] - g.phi[n - 3]);
        }
    return out;
}

// d/dpsi by the periodic spectral differentiation matrix on the uniform grid.
inline Field d_psi(const Field& f) {
    const PhaseGrid& g = *f.grid;
    Field out(g);
    const int n = g.n_psi();
    const double h = g.w_psi;
    std::vector<double> col(n);
    // D[k][l] depends only on k-l; precompute the kernel.
    std::vector<double> kern(n, 0.0);
    for (int d = 1; d < n; ++d) {
        if (n % 2 == 0)
            kern[d] = 0.5 * std::pow(-1.0, d) / std::tan(0.5 * d * h);
        else
            kern[d] = 0.5 * std::pow(-1.0, d) / std::sin(0.5 * d * h);
    }
    for (int i = 0; i < g.n_eta(); ++i)
        for (int j = 0; j < g.n_phi(); ++j) {
            for (int k = 0; k < n; ++k) col[k] = f.at(i, j, k);
            for (int k = 0; k < n; ++k) {
                double acc = 0.0;
                for (int l = 0; l < n; ++l)
                    if (l != k) acc += kern[((k - l) % n + n) % n] * col[l];
                out.at(i, j, k) = acc;
            }
        }
    return out;
}

enum class FluxSide { incoming, outgoing };

// Half-range flux functional. Incoming: -(1/4pi) Int_{sin phi<0} f sin cos;
// outgoing: +(1/4pi) Int_{sin phi>0}. Both return 1/4 for f == 1.
inline double p_flux(const Field& f, int i, FluxSide side = FluxSide::incoming) {
    const PhaseGrid& g = *f.grid;
    double acc = 0.0;
    for (int j = 0; j < g.n_phi(); ++j) {
        const double s = g.s_phi[j];
        if (side == FluxSide::incoming ? s >= 0.0 : s <= 0.0) continue;
        double row = 0.0;
        for (int k = 0; k < g.n_psi(); ++k) row += f.at(i, j, k);
        acc += row * g.w_phi[j] * s;
    }
    const double sign = (side == FluxSide::incoming) ? -1.0 : 1.0;
    return sign * acc * g.w_psi / (4.0 * PI);
}

// Monotone cubic (Fritsch-Carlson) interpolant on nonuniform nodes.
class MonotoneCubic {
public:
    MonotoneCubic() = default;
    MonotoneCubic(const std::vector<double>& x, const std::vector<double>& y)
        : x_(x), y_(y), m_(x.size(), 0.0) {
        const std::size_t n = x.size();
        if (n < 2 || y.size() != n) throw std::invalid_argument("pchip: bad sizes");
        std::vector<double> d(n - 1), h(n - 1);
        for (std::size_t i = 0; i + 1 < n; ++i) {
            h[i] = x[i + 1] - x[i];
            d[i] = (y[i + 1] - y[i]) / h[i];
        }
        m_[0] = d[0];
        m_[n - 1] = d[n - 2];
        for (std::size_t i = 1; i + 1 < n; ++i) {
            if (d[i - 1] * d[i] <= 0.0) {
                m_[i] = 0.0;
            } else {
                const double w1 = 2.0 * h[i] + h[i - 1];
                const double w2 = h[i] + 2.0 * h[i - 1];
                m_[i] = (w1 + w2) / (w1 / d[i - 1] + w2 / d[i]);
            }
        }
        // clamp endpoint slopes to preserve monotonicity in the end cells
        for (std::size_t e : {std::size_t{0}, n - 1}) {
            const std::size_t c = (e == 0) ? 0 : n - 2;
            if (d[c] == 0.0) m_[e] = 0.0;
            else if (m_[e] / d[c] < 0.0) m_[e] = 0.0;
            else if (std::abs(m_[e]) > 3.0 * std::abs(d[c])) m_[e] = 3.0 * d[c];
        }
    }

    double operator()(double xq) const {
        const std::size_t n = x_.size();
        if (xq <= x_.front()) return y_.front() + m_.front() * (xq - x_.front());
        if (xq >= x_.back()) return y_.back() + m_.back() * (xq - x_.back());
        std::size_t lo = std::upper_bound(x_.begin(), x_.end(), xq) - x_.begin() - 1;
        if (lo >= n - 1) lo = n - 2;
        const double h = x_[lo + 1] - x_[lo], t = (xq - x_[lo]) / h;
        const double t2 = t * t, t3 = t2 * t;
        return y_[lo] * (2 * t3 - 3 * t2 + 1) + h * m_[lo] * (t3 - 2 * t2 + t) +
               y_[lo + 1] * (-2 * t3 + 3 * t2) + h * m_[lo + 1] * (t3 - t2);
    }

private:
    std::vector<double> x_, y_, m_;
};

// ---------------------------------------------------------------------------
// Serialization: CSV body plus a JSON sidecar with the grid metadata.

inline void write_field_csv(const Field& f, const std::string& path) {
    const PhaseGrid& g = *f.grid;
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path);
    out.precision(17);
    out << "eta,phi,psi,value\n";
    for (int i = 0; i < g.n_eta(); ++i)
        for (int j = 0; j < g.n_phi(); ++j)
            for (int k = 0; k < g.n_psi(); ++k)
                out << g.eta[i] << ',' << g.phi[j] << ',' << g.psi[k] << ','
                    << f.at(i, j, k) << '\n';
}

inline nlohmann::json grid_sidecar(const PhaseGrid& g, const std::string& config_hash) {
    nlohmann::json j;
    j["eta_nodes"] = g.eta;
    j["w_eta"] = g.w_eta;
    j["phi_nodes"] = g.phi;
    j["w_phi"] = g.w_phi;
    j["psi_nodes"] = g.psi;
    j["w_psi"] = g.w_psi;
    j["L"] = g.L;
    j["config_hash"] = config_hash;
    return j;
}

inline void write_field(const Field& f, const std::string& csv_path,
                        const std::string& sidecar_path, const std::string& config_hash) {
    write_field_csv(f, csv_path);
    std::ofstream out(sidecar_path);
    if (!out) throw std::runtime_error("cannot open " + sidecar_path);
    out << grid_sidecar(*f.grid, config_hash).dump(2) << '\n';
}

inline Field read_field_csv(const PhaseGrid& g, const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::string line;
    std::getline(in, line);
    if (line != "eta,phi,psi,value") throw std::runtime_error("bad field CSV header");
    Field f(g);
    std::size_t count = 0;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto c1 = line.find(','), c2 = line.find(',', c1 + 1), c3 = line.find(',', c2 + 1);
        if (c3 == std::string::npos) throw std::runtime_error("bad field CSV row");
        if (count >= f.v.size()) throw std::runtime_error("field CSV longer than grid");
        f.v[count++] = std::stod(line.substr(c3 + 1));
    }
    if (count != f.v.size()) throw std::runtime_error("field CSV shorter than grid");
    return f;
}

}  // namespace milne
