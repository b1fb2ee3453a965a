#include <doctest.h>

#include <cmath>
#include <random>

#include <milne/geometry.hpp>

using namespace milne;

namespace {
Geometry make_geom(double R1, double R2, double eps, double n = 0.25) {
    MilneConfig cfg;
    cfg.epsilon = eps;
    cfg.n_exponent = n;
    return Geometry(cfg, CurvatureProfile::constant(R1, R2), {0.0, 0.0});
}
}  // namespace

TEST_CASE("force closed forms") {
    auto g = make_geom(1.0, 1.0, 0.1);
    CHECK(g.force(0.0, 0.3) == doctest::Approx(-0.1).epsilon(1e-14));
    auto g2 = make_geom(2.0, 1.0, 0.1);
    CHECK(g2.force(0.0, 1.5707963267948966) == doctest::Approx(-0.05).epsilon(1e-13));
    CHECK(g2.force(1.0, std::atan(1.0)) ==
          doctest::Approx(-0.5 * (0.1 / 1.9) - 0.5 * (0.1 / 0.9)).epsilon(1e-12));
    CHECK(g2.force(0.5, 1.1) < 0.0);
}

TEST_CASE("force split recombines") {
    auto g = make_geom(2.0, 1.0, 0.1);
    auto fs0 = g.force_split(0.0);
    CHECK(fs0.f_tilde == doctest::Approx(-0.05).epsilon(1e-14));
    CHECK(fs0.g_source == doctest::Approx(-0.05).epsilon(1e-14));
    // psi = 0 selects f_tilde + g_source
    CHECK(fs0.f_tilde + fs0.g_source == doctest::Approx(g.force(0.0, 0.0)).epsilon(1e-14));

    auto geq = make_geom(1.3, 1.3, 0.05);
    CHECK(geq.force_split(0.7).g_source == 0.0);

    std::mt19937 rng(12345);
    std::uniform_real_distribution<double> ueta(0.0, g.L());
    std::uniform_real_distribution<double> upsi(-3.14159, 3.14159);
    for (int i = 0; i < 1000; ++i) {
        const double eta = ueta(rng), psi = upsi(rng);
        auto fs = g.force_split(eta);
        const double c2 = std::cos(psi) * std::cos(psi);
        const double recon = fs.f_tilde + fs.g_source * c2;
        CHECK(std::abs(recon - g.force(eta, psi)) <= 1e-14 * std::abs(g.force(eta, psi)));
    }
}

TEST_CASE("potential closed forms and bounds") {
    auto g = make_geom(1.0, 1.0, 0.1);
    CHECK(g.potential(0.0, 0.7) == 0.0);
    CHECK(g.potential(1.0, 0.7) == doctest::Approx(std::log(1.0 / 0.9)).epsilon(1e-13));
    auto g2 = make_geom(2.0, 1.0, 0.1);
    CHECK(g2.potential(1.0, 1.5707963267948966) == doctest::Approx(std::log(2.0 / 1.9)).epsilon(1e-12));

    // dV/deta = -F by central differences, order >= 1.9 under refinement
    const double eta = 0.8, psi = 0.9;
    double prev_err = 0.0;
    for (int k = 0; k < 2; ++k) {
        const double h = (k == 0) ? 1e-2 : 5e-3;
        const double fd = (g2.potential(eta + h, psi) - g2.potential(eta - h, psi)) / (2 * h);
        const double err = std::abs(fd + g2.force(eta, psi));
        if (k == 1) {
            const double order = std::log(prev_err / err) / std::log(2.0);
            CHECK(order >= 1.9);
        }
        prev_err = err;
    }

    // e^{-V} bounds: (R'-eps eta)/R' <= e^{-V} <= (R-eps eta)/R
    std::mt19937 rng(77);
    std::uniform_real_distribution<double> ueta(0.0, g2.L());
    std::uniform_real_distribution<double> upsi(-3.14159, 3.14159);
    for (int i = 0; i < 500; ++i) {
        const double e = ueta(rng), p = upsi(rng);
        const double emv = g2.exp_minus_V(e, p);
        const double up = (2.0 - 0.1 * e) / 2.0;   // R = max
        const double lo = (1.0 - 0.1 * e) / 1.0;   // R' = min
        CHECK(emv <= up + 1e-14);
        CHECK(emv >= lo - 1e-14);
    }
}

TEST_CASE("weight zeta") {
    auto g = make_geom(1.0, 1.0, 0.1);
    CHECK(g.weight_zeta(0.0, 0.5235987755982988, 0.2) == doctest::Approx(0.5).epsilon(1e-13));
    CHECK(g.weight_zeta(0.0, 0.0, 0.2) == doctest::Approx(0.0));
    CHECK(g.weight_zeta(1.0, 0.0, 0.2) == doctest::Approx(std::sqrt(1.0 - 0.81)).epsilon(1e-12));

    std::mt19937 rng(5);
    std::uniform_real_distribution<double> ueta(0.0, g.L());
    std::uniform_real_distribution<double> uphi(-1.5, 1.5);
    for (int i = 0; i < 500; ++i) {
        const double e = ueta(rng), p = uphi(rng);
        CHECK(g.weight_zeta(e, p, 0.4) >= std::abs(std::sin(p)) - 1e-14);
        CHECK(g.weight_zeta(e, p, 0.4) <= 1.0 + 1e-14);
    }
}

TEST_CASE("cutoff plateau, tail, smooth bridge") {
    auto prof = CurvatureProfile::constant(1.0, 1.0);
    CHECK(cutoff_upsilon0(prof.r_min / 8.0, prof) == 1.0);
    CHECK(cutoff_upsilon0(prof.r_min, prof) == 0.0);
    const double mid = 3.0 * prof.r_min / 8.0;
    const double v = cutoff_upsilon0(mid, prof);
    CHECK(v > 0.0);
    CHECK(v < 1.0);
    // C^1 across the bridge: finite-difference derivative continuous and <= 0
    double last = cutoff_upsilon0(0.24, prof);
    for (double mu = 0.2401; mu < 0.52; mu += 1e-4) {
        const double cur = cutoff_upsilon0(mu, prof);
        CHECK(cur <= last + 1e-12);  // monotone non-increasing
        last = cur;
    }
    // derivative stays small near the junctions (smooth glue)
    const double h = 1e-6;
    for (double mu : {0.2500001, 0.4999999}) {
        const double d = (cutoff_upsilon0(mu + h, prof) - cutoff_upsilon0(mu - h, prof)) / (2 * h);
        CHECK(std::abs(d) < 1e-2);
    }
}

TEST_CASE("config validation") {
    MilneConfig cfg;
    cfg.epsilon = 0.1;
    cfg.n_exponent = 0.25;
    cfg.finalize();
    CHECK(cfg.slab_length == doctest::Approx(std::pow(0.1, -0.25)).epsilon(1e-12));

    MilneConfig bad;
    bad.epsilon = 0.1;
    bad.n_exponent = 0.5;
    CHECK_THROWS(bad.finalize());
    bad.allow_any_n = true;
    CHECK_NOTHROW(bad.finalize());

    // eps*L must stay below min radius
    MilneConfig cfgbig;
    cfgbig.epsilon = 0.9;
    cfgbig.n_exponent = 0.39;
    CHECK_THROWS(Geometry(cfgbig, CurvatureProfile::constant(0.01, 0.01), {0, 0}));
}
