#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include <milne/phase_grid.hpp>

using namespace milne;

namespace {
PhaseGrid small_grid() { return PhaseGrid::make(1.7, 32, 12, 8); }
}  // namespace

TEST_CASE("quadrature measures") {
    auto g = small_grid();
    double total = 0.0, s2 = 0.0;
    for (int j = 0; j < g.n_phi(); ++j)
        for (int k = 0; k < g.n_psi(); ++k) {
            total += g.w_phi[j] * g.w_psi;
            s2 += g.s_phi[j] * g.s_phi[j] * g.w_phi[j] * g.w_psi;
        }
    CHECK(std::abs(total - 4.0 * PI) <= 1e-10);
    CHECK(std::abs(s2 - 4.0 * PI / 3.0) <= 1e-8);

    // GL in s integrates polynomials in sin(phi) to design order
    for (int p = 0; p <= 7; ++p) {
        double q = 0.0;
        for (int j = 0; j < g.n_phi(); ++j) q += std::pow(g.s_phi[j], p) * g.w_phi[j];
        const double exact = (p % 2 == 0) ? 2.0 / (p + 1) : 0.0;
        CHECK(std::abs(q - exact) <= 1e-10);
    }
}

TEST_CASE("grid structure: grading, pairing, endpoints") {
    auto g = small_grid();
    CHECK(g.eta.front() == 0.0);
    CHECK(g.eta.back() == doctest::Approx(1.7));
    for (int i = 0; i + 1 < g.n_eta(); ++i) CHECK(g.eta[i] < g.eta[i + 1]);
    // graded: first cell much smaller than the largest
    const double h0 = g.eta[1] - g.eta[0];
    double hmax = 0.0;
    for (int i = 0; i + 1 < g.n_eta(); ++i) hmax = std::max(hmax, g.eta[i + 1] - g.eta[i]);
    CHECK(hmax / h0 > 5.0);

    for (int j = 0; j < g.n_phi(); ++j) {
        CHECK(g.s_phi[j] != 0.0);
        CHECK(std::abs(g.s_phi[j]) < 1.0);
        const int jm = g.mirror_phi(j);
        CHECK(g.phi[j] == doctest::Approx(-g.phi[jm]).epsilon(1e-14));
        CHECK(g.w_phi[j] == doctest::Approx(g.w_phi[jm]).epsilon(1e-14));
    }
    double weta = 0.0;
    for (double w : g.w_eta) weta += w;
    CHECK(weta == doctest::Approx(1.7).epsilon(1e-13));
}

TEST_CASE("bar operator") {
    auto g = small_grid();
    Field c(g, 2.5);
    auto cb = bar(c);
    for (double x : cb) CHECK(x == doctest::Approx(2.5).epsilon(1e-14));

    Field fs(g);
    Field fs2(g);
    for (int i = 0; i < g.n_eta(); ++i)
        for (int j = 0; j < g.n_phi(); ++j)
            for (int k = 0; k < g.n_psi(); ++k) {
                fs.at(i, j, k) = g.s_phi[j];
                fs2.at(i, j, k) = g.s_phi[j] * g.s_phi[j];
            }
    for (double x : bar(fs)) CHECK(std::abs(x) <= 1e-12);
    for (double x : bar(fs2)) CHECK(x == doctest::Approx(1.0 / 3.0).epsilon(1e-8));
}

TEST_CASE("inner products") {
    auto g = small_grid();
    Field one(g, 1.0), s(g);
    for (int i = 0; i < g.n_eta(); ++i)
        for (int j = 0; j < g.n_phi(); ++j)
            for (int k = 0; k < g.n_psi(); ++k) s.at(i, j, k) = g.s_phi[j];
    CHECK(inner(one, one, 3) == doctest::Approx(4.0 * PI).epsilon(1e-12));
    CHECK(std::abs(inner(one, s, 3)) <= 1e-12);
    CHECK(inner(s, s, 3) == doctest::Approx(4.0 * PI / 3.0).epsilon(1e-10));
}

TEST_CASE("norms") {
    auto g = small_grid();
    Field one(g, 1.0);
    auto n = norms(one);
    CHECK(n.linf_total == 1.0);
    CHECK(n.l2_total * n.l2_total == doctest::Approx(4.0 * PI * 1.7).epsilon(1e-10));
    Field z(g, 0.0);
    auto nz = norms(z);
    CHECK(nz.l2_total == 0.0);
    CHECK(nz.linf_total == 0.0);
}

TEST_CASE("p_flux half-range functional") {
    auto g = small_grid();
    Field one(g, 1.0);
    CHECK(p_flux(one, 0, FluxSide::incoming) == doctest::Approx(0.25).epsilon(1e-8));
    CHECK(p_flux(one, 0, FluxSide::outgoing) == doctest::Approx(0.25).epsilon(1e-8));
    Field z(g, 0.0);
    CHECK(p_flux(z, 0) == 0.0);
    Field ind(g);
    for (int i = 0; i < g.n_eta(); ++i)
        for (int j = 0; j < g.n_phi(); ++j)
            for (int k = 0; k < g.n_psi(); ++k)
                ind.at(i, j, k) = g.s_phi[j] > 0.0 ? 1.0 : 0.0;
    CHECK(p_flux(ind, 0, FluxSide::incoming) == 0.0);
}

TEST_CASE("monotone cubic interpolation") {
    std::vector<double> x{0.0, 0.3, 0.7, 1.2, 2.0};
    std::vector<double> y;
    for (double xi : x) y.push_back(std::exp(-2.0 * xi));
    MonotoneCubic mc(x, y);
    for (double xi : x) CHECK(mc(xi) == doctest::Approx(std::exp(-2.0 * xi)).epsilon(1e-13));
    // monotone data stay monotone between nodes
    double prev = mc(0.0);
    for (double xq = 0.01; xq <= 2.0; xq += 0.01) {
        const double cur = mc(xq);
        CHECK(cur <= prev + 1e-12);
        prev = cur;
    }
    // decent accuracy on the smooth profile
    for (double xq = 0.05; xq < 2.0; xq += 0.13)
        CHECK(mc(xq) == doctest::Approx(std::exp(-2.0 * xq)).epsilon(2e-2));
}

TEST_CASE("field serialization round trip") {
    auto g = small_grid();
    Field f(g);
    for (std::size_t m = 0; m < f.v.size(); ++m) f.v[m] = std::sin(0.01 * m) * 3.7;
    const std::string dir = std::filesystem::temp_directory_path().string();
    const std::string csv = dir + "/milne_field_test.csv";
    const std::string sidecar = dir + "/milne_field_test.json";
    write_field(f, csv, sidecar, "deadbeef");
    Field f2 = read_field_csv(g, csv);
    for (std::size_t m = 0; m < f.v.size(); ++m) CHECK(f2.v[m] == doctest::Approx(f.v[m]).epsilon(1e-15));

    std::ifstream in(sidecar);
    nlohmann::json j;
    in >> j;
    CHECK(j["config_hash"] == "deadbeef");
    CHECK(j["eta_nodes"].size() == static_cast<std::size_t>(g.n_eta()));
    std::remove(csv.c_str());
    std::remove(sidecar.c_str());
}
