#pragma once
// Diffusive-limit study on the unit ball: backward Monte Carlo transport
// solve for eps w.grad u + u - ubar = 0 with diffuse (albedo-1) wall
// reflection plus an eps-scaled boundary source, the analytic leading-order
// interior solution it should approach, and the boundary-layer datum that
// couples the two.

#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "rng.hpp"
#include "threading.hpp"

namespace milne {

struct Vec3 {
    double x = 0.0, y = 0.0, z = 0.0;
};

inline Vec3 operator+(Vec3 a, Vec3 b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
inline Vec3 operator-(Vec3 a, Vec3 b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
inline Vec3 operator*(double s, Vec3 a) { return {s * a.x, s * a.y, s * a.z}; }
inline double dot(Vec3 a, Vec3 b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
inline double norm(Vec3 a) { return std::sqrt(dot(a, a)); }
inline Vec3 normalized(Vec3 a) {
    const double n = norm(a);
    if (n == 0.0) throw std::domain_error("cannot normalize the zero vector");
    return (1.0 / n) * a;
}

struct BallProblem {
    double epsilon = 0.1;
    std::string g_mode = "cos_theta";  // zero | cos_theta | p2
    long n_samples = 100000;           // histories per tally point
    std::uint64_t seed = 1;
    std::vector<Vec3> tally_points;
    int threads = 1;
    double t_max = 0.0;  // 0 -> max(40, 4.2/eps^2), see horizon()
    long max_reflections = 1000000;

    // The walk mixes on the diffusive time scale ~1/eps^2, so the horizon
    // must grow as eps shrinks for the truncation bias to stay below the
    // statistical error.
    double horizon() const {
        return t_max > 0.0 ? t_max : std::max(40.0, 4.2 / (epsilon * epsilon));
    }
};

// boundary datum families g(x0) on the unit sphere (direction-independent)
inline std::function<double(const Vec3&)> boundary_g(const std::string& mode) {
    if (mode == "zero") return [](const Vec3&) { return 0.0; };
    if (mode == "cos_theta") return [](const Vec3& p) { return p.z; };
    if (mode == "p2") return [](const Vec3& p) { return 0.5 * (3.0 * p.z * p.z - 1.0); };
    throw std::invalid_argument("unsupported boundary datum family: " + mode);
}

// incoming-flux balance: integral over the sphere and the incoming
// hemisphere of g (w.n) dw dS; zero is required for a bounded solution.
// For direction-independent g this is -pi * int_S2 g dS.
inline double ball_compatibility_defect(const BallProblem& pb) {
    auto g = boundary_g(pb.g_mode);
    // product Gauss-Legendre in cos(theta) x uniform azimuth
    static const double gx[8] = {-0.9602898564975363, -0.7966664774136267,
                                 -0.5255324099163290, -0.1834346424956498,
                                 0.1834346424956498,  0.5255324099163290,
                                 0.7966664774136267,  0.9602898564975363};
    static const double gw[8] = {0.1012285362903763, 0.2223810344533745,
                                 0.3137066458778873, 0.3626837833783620,
                                 0.3626837833783620, 0.3137066458778873,
                                 0.2223810344533745, 0.1012285362903763};
    double surf = 0.0;
    const int naz = 16;
    for (int i = 0; i < 8; ++i)
        for (int k = 0; k < naz; ++k) {
            const double mu = gx[i], az = 2.0 * M_PI * (k + 0.5) / naz;
            const double s = std::sqrt(1.0 - mu * mu);
            surf += gw[i] * (2.0 * M_PI / naz) *
                    g({s * std::cos(az), s * std::sin(az), mu});
        }
    return -M_PI * surf;
}

// leading-order interior solution (flux-consistent Neumann constant 3/(4 pi))
inline std::function<double(const Vec3&)> interior_u0(const BallProblem& pb) {
    if (pb.g_mode == "zero") return [](const Vec3&) { return 0.0; };
    if (pb.g_mode == "cos_theta") return [](const Vec3& p) { return 0.75 * p.z; };
    if (pb.g_mode == "p2")
        return [](const Vec3& p) {
            return (3.0 / 16.0) * (2.0 * p.z * p.z - p.x * p.x - p.y * p.y);
        };
    throw std::invalid_argument("unsupported boundary datum family: " + pb.g_mode);
}

// gradient of interior_u0 (needed by the boundary-layer datum)
inline std::function<Vec3(const Vec3&)> interior_u0_grad(const BallProblem& pb) {
    if (pb.g_mode == "zero") return [](const Vec3&) { return Vec3{}; };
    if (pb.g_mode == "cos_theta") return [](const Vec3&) { return Vec3{0.0, 0.0, 0.75}; };
    if (pb.g_mode == "p2")
        return [](const Vec3& p) {
            return Vec3{-(3.0 / 8.0) * p.x, -(3.0 / 8.0) * p.y, (3.0 / 4.0) * p.z};
        };
    throw std::invalid_argument("unsupported boundary datum family: " + pb.g_mode);
}

// literature variant of the interior limit (Neumann constant 1/pi^2),
// reported alongside the flux-consistent one for comparison
inline std::function<double(const Vec3&)> interior_u0_pi_normalized(const BallProblem& pb) {
    if (pb.g_mode == "zero") return [](const Vec3&) { return 0.0; };
    if (pb.g_mode == "cos_theta")
        return [](const Vec3& p) { return p.z / M_PI; };
    if (pb.g_mode == "p2")
        return [](const Vec3& p) {
            return (2.0 * p.z * p.z - p.x * p.x - p.y * p.y) / (4.0 * M_PI);
        };
    throw std::invalid_argument("unsupported boundary datum family: " + pb.g_mode);
}

struct Hit {
    double t = 0.0;  // backward time to the boundary
    Vec3 foot;       // footpoint on the unit sphere
};

// t_b = inf{t > 0 : x - eps t w outside the unit ball}; exact quadratic root
inline Hit hitting_time(const Vec3& x, const Vec3& w, double eps) {
    if (dot(x, x) > 1.0 + 1e-12)
        throw std::domain_error("start point outside the unit ball");
    const double b = dot(x, w);
    const double disc = std::max(0.0, b * b + 1.0 - dot(x, x));
    const double t = (b + std::sqrt(disc)) / eps;
    if (!(t > 0.0)) throw std::domain_error("degenerate grazing ray");
    return {t, x - (eps * t) * w};
}

// direction with density (w.n)/pi on the hemisphere w.n > 0
inline Vec3 cosine_direction(const Vec3& n, Rng& rng) {
    const double c = std::sqrt(rng.uniform());  // cos of the polar angle
    const double s = std::sqrt(std::max(0.0, 1.0 - c * c));
    const double az = 2.0 * M_PI * rng.uniform();
    // deterministic tangent frame from the smallest component of n
    Vec3 a = std::abs(n.x) < 0.6 ? Vec3{1, 0, 0} : Vec3{0, 1, 0};
    Vec3 t1 = normalized(Vec3{a.y * n.z - a.z * n.y, a.z * n.x - a.x * n.z,
                              a.x * n.y - a.y * n.x});
    Vec3 t2 = {n.y * t1.z - n.z * t1.y, n.z * t1.x - n.x * t1.z,
               n.x * t1.y - n.y * t1.x};
    return c * n + (s * std::cos(az)) * t1 + (s * std::sin(az)) * t2;
}

inline Vec3 uniform_direction(Rng& rng) {
    const double z = 2.0 * rng.uniform() - 1.0;
    const double s = std::sqrt(std::max(0.0, 1.0 - z * z));
    const double az = 2.0 * M_PI * rng.uniform();
    return {s * std::cos(az), s * std::sin(az), z};
}

struct CycleRecord {
    std::vector<double> times;     // cumulative boundary-hit times, increasing
    std::vector<Vec3> footpoints;  // on the unit sphere
    std::vector<Vec3> directions;  // w_0 (start) then the redrawn directions
    enum class End { boundary_source, truncation } termination = End::boundary_source;
    Vec3 end_position;  // where the walk resumes (collision point)
    double end_time = 0.0;
};

// one back-time cycle: boundary bounces with cosine-law redraws until the
// Exp(1) scattering clock fires inside a leg (termination: boundary_source,
// i.e. the cycle's output is the boundary-source contributions it collected)
// or the reflection/horizon caps hit first (termination: truncation).
inline CycleRecord sample_cycle(const BallProblem& pb, Vec3 x, Vec3 w, Rng& rng,
                                long k_max = 4096) {
    CycleRecord rec;
    rec.directions.push_back(w);
    double t = 0.0;
    const double tmax = pb.horizon();
    for (long k = 0; k < k_max; ++k) {
        const Hit h = hitting_time(x, w, pb.epsilon);
        const double s = rng.exponential();
        if (s < h.t) {
            rec.termination = CycleRecord::End::boundary_source;
            rec.end_position = x - (pb.epsilon * s) * w;
            rec.end_time = t + s;
            return rec;
        }
        t += h.t;
        rec.times.push_back(t);
        rec.footpoints.push_back(h.foot);
        x = normalized(h.foot);
        w = cosine_direction(x, rng);
        rec.directions.push_back(w);
        if (t >= tmax) break;
    }
    rec.termination = CycleRecord::End::truncation;
    rec.end_position = x;
    rec.end_time = t;
    return rec;
}

namespace detail {

// one backward history: sum of eps*g over boundary hits before the horizon
inline double ball_walk_score(const BallProblem& pb,
                              const std::function<double(const Vec3&)>& g, Vec3 pos,
                              Rng& rng) {
    const double tmax = pb.horizon();
    const double eps = pb.epsilon;
    Vec3 dir = uniform_direction(rng);
    double t = 0.0, score = 0.0;
    long refl = 0;
    while (t < tmax) {
        const Hit h = hitting_time(pos, dir, eps);
        const double s = rng.exponential();
        if (s < h.t) {
            t += s;
            if (t >= tmax) break;
            pos = pos - (eps * s) * dir;
            if (dot(pos, pos) >= 1.0) pos = (1.0 - 1e-14) * normalized(pos);
            dir = uniform_direction(rng);
        } else {
            t += h.t;
            if (t >= tmax) break;
            score += eps * g(h.foot);
            pos = normalized(h.foot);
            dir = cosine_direction(pos, rng);
            if (++refl > pb.max_reflections) break;
        }
    }
    return score;
}

}  // namespace detail

struct Tally {
    Vec3 point;
    double estimate = 0.0;
    double se = 0.0;
    long n = 0;
    bool flagged = false;  // relative standard error above 50%
};

struct BallTallies {
    std::vector<Tally> tallies;
    double volume_average = 0.0;  // plain average over tally estimates
};

inline void validate_ball_problem(const BallProblem& pb) {
    if (!(pb.epsilon > 0.0 && pb.epsilon < 1.0))
        throw std::invalid_argument("epsilon must lie in (0,1)");
    if (pb.n_samples < 1) throw std::invalid_argument("n_samples must be positive");
    const double defect = ball_compatibility_defect(pb);
    if (std::abs(defect) > 1e-8)
        throw std::invalid_argument("boundary datum violates the flux balance");
    for (const Vec3& p : pb.tally_points)
        if (norm(p) >= 1.0)
            throw std::invalid_argument("tally point not strictly interior");
}

// backward Monte Carlo estimate of ubar at each tally point. Histories are
// keyed by (seed, tally index, history index), chunk partials are combined
// in index order, so results are bitwise reproducible for any thread count.
inline BallTallies mc_solve(const BallProblem& pb) {
    validate_ball_problem(pb);
    auto g = boundary_g(pb.g_mode);
    BallTallies out;
    const long n = pb.n_samples;
    const std::size_t chunk = 4096;
    for (std::size_t ti = 0; ti < pb.tally_points.size(); ++ti) {
        const Vec3 x = pb.tally_points[ti];
        const std::size_t n_chunks = (static_cast<std::size_t>(n) + chunk - 1) / chunk;
        std::vector<double> psum(n_chunks, 0.0), psq(n_chunks, 0.0);
        parallel_for(n_chunks, pb.threads, [&](std::size_t c) {
            const std::size_t lo = c * chunk;
            const std::size_t hi = std::min<std::size_t>(n, lo + chunk);
            double s = 0.0, s2 = 0.0;
            for (std::size_t hidx = lo; hidx < hi; ++hidx) {
                Rng rng(pb.seed, ti + 1, hidx);
                const double v = detail::ball_walk_score(pb, g, x, rng);
                s += v;
                s2 += v * v;
            }
            psum[c] = s;
            psq[c] = s2;
        });
        double s = 0.0, s2 = 0.0;
        for (std::size_t c = 0; c < n_chunks; ++c) { s += psum[c]; s2 += psq[c]; }
        Tally t;
        t.point = x;
        t.n = n;
        t.estimate = s / n;
        const double var = std::max(0.0, (s2 - s * s / n) / (n - 1.0));
        t.se = std::sqrt(var / n);
        t.flagged = t.se > 0.5 * std::abs(t.estimate);
        out.volume_average += t.estimate / pb.tally_points.size();
        out.tallies.push_back(t);
    }
    return out;
}

// scattering- and reflection-free test mode: backward attenuation along one
// ray; the estimator mean is e^{-t_b} g(footpoint)
inline Tally attenuation_mode_estimate(const BallProblem& pb, const Vec3& x,
                                       const Vec3& w) {
    auto g = boundary_g(pb.g_mode);
    double s = 0.0, s2 = 0.0;
    const long n = pb.n_samples;
    for (long h = 0; h < n; ++h) {
        Rng rng(pb.seed, 0, static_cast<std::uint64_t>(h));
        const Hit hit = hitting_time(x, w, pb.epsilon);
        const double v = rng.exponential() >= hit.t ? g(hit.foot) : 0.0;
        s += v;
        s2 += v * v;
    }
    Tally t;
    t.point = x;
    t.n = n;
    t.estimate = s / n;
    t.se = std::sqrt(std::max(0.0, (s2 - s * s / n) / (n - 1.0)) / n);
    t.flagged = t.se > 0.5 * std::abs(t.estimate);
    return t;
}

struct StudyRow {
    double eps = 0.0;
    double max_abs_err = 0.0;        // sup over tallies of |estimate - u0|
    double max_se = 0.0;
    double pi_normalized_err = 0.0;  // same distance to the 1/pi^2 variant
    BallTallies tallies;
};

struct StudyResult {
    std::vector<StudyRow> rows;
    double slope = 0.0;  // d ln(max_abs_err) / d ln(eps), >= 0 means decay
};

inline StudyResult convergence_study(const std::vector<double>& eps_list,
                                     const BallProblem& tmpl) {
    if (eps_list.size() < 3)
        throw std::invalid_argument("need at least three epsilon values");
    StudyResult res;
    auto u0 = interior_u0(tmpl);
    auto u0p = interior_u0_pi_normalized(tmpl);
    for (double eps : eps_list) {
        BallProblem pb = tmpl;
        pb.epsilon = eps;
        StudyRow row;
        row.eps = eps;
        row.tallies = mc_solve(pb);
        for (const Tally& t : row.tallies.tallies) {
            row.max_abs_err = std::max(row.max_abs_err,
                                       std::abs(t.estimate - u0(t.point)));
            row.pi_normalized_err = std::max(row.pi_normalized_err,
                                             std::abs(t.estimate - u0p(t.point)));
            row.max_se = std::max(row.max_se, t.se);
        }
        res.rows.push_back(row);
    }
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    const int n = static_cast<int>(res.rows.size());
    for (const StudyRow& r : res.rows) {
        const double x = std::log(r.eps), y = std::log(std::max(r.max_abs_err, 1e-300));
        sx += x; sy += y; sxx += x * x; sxy += x * y;
    }
    res.slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    return res;
}

// in-flow datum for the first boundary-layer corrector at boundary point x0:
//   g1 = (w . grad u0) - Phat[w . grad u0] + g(x0)
// in layer coordinates w = -sin(phi) n + cos(phi)(sin(psi) t1 + cos(psi) t2)
// (sin(phi) > 0 is incoming, n the outward normal) and Phat the albedo-1
// diffuse average over the outgoing hemisphere, which evaluates to
// (2/3) du0/dn. With the flux-consistent Neumann constant the datum is
// compatible to round-off.
inline std::function<double(double, double)> boundary_layer_datum(const BallProblem& pb,
                                                                  const Vec3& x0) {
    const Vec3 n = normalized(x0);
    auto grad_fn = interior_u0_grad(pb);
    auto g = boundary_g(pb.g_mode);
    const Vec3 grad = grad_fn(n);
    // deterministic tangent frame, same construction as cosine_direction
    Vec3 a = std::abs(n.x) < 0.6 ? Vec3{1, 0, 0} : Vec3{0, 1, 0};
    Vec3 t1 = normalized(Vec3{a.y * n.z - a.z * n.y, a.z * n.x - a.x * n.z,
                              a.x * n.y - a.y * n.x});
    Vec3 t2 = {n.y * t1.z - n.z * t1.y, n.z * t1.x - n.x * t1.z,
               n.x * t1.y - n.y * t1.x};
    const double gn = dot(grad, n), g1 = dot(grad, t1), g2 = dot(grad, t2);
    const double g0 = g(n);
    return [=](double phi, double psi) {
        return -std::sin(phi) * gn +
               std::cos(phi) * (std::sin(psi) * g1 + std::cos(psi) * g2) -
               (2.0 / 3.0) * gn + g0;
    };
}

}  // namespace milne
