#include <cmath>
#include <string>

#include "aqfpsim/netlist.hpp"
#include "aqfpsim/solver.hpp"
#include "doctest.h"

using namespace aqfpsim;

namespace {

constexpr double kPi = 3.14159265358979323846;

TransientTrace run_text(const std::string& text) {
    Netlist n = parse_netlist(text);
    REQUIRE(validate(n).empty());
    REQUIRE(n.tran.has_value());
    return run_transient(n, SimConfig::from_tran(*n.tran));
}

const std::string kRlDeck =
    "I1 0 n DC 1m\n"
    "R1 n 0 2\n"
    "L1 n 0 1n\n"
    ".tran 2.5p 2.5n 0\n"
    ".probe i(L1) v(R1)\n";

double rl_error_at_5tau(double dt) {
    Netlist n = parse_netlist(kRlDeck);
    SimConfig cfg = SimConfig::from_tran(*n.tran);
    cfg.dt = dt;
    TransientTrace tr = run_transient(n, cfg);
    const double tau = 1e-9 / 2.0;
    double exact = 1e-3 * (1.0 - std::exp(-5.0));
    double sim = tr.probe("i(L1)").back();
    REQUIRE(tr.time.back() == doctest::Approx(5 * tau));
    return std::abs(sim - exact) / exact;
}

}  // namespace

TEST_CASE("junction_current implements the RCSJ law") {
    JunctionModel m{50e-6, 6.0, 0.0};
    CHECK(junction_current(0.0, 0.0, 0.0, m) == doctest::Approx(0.0));
    CHECK(junction_current(kPi / 2, 0.0, 0.0, m) == doctest::Approx(50e-6));
    CHECK(junction_current(0.0, 6e-3, 0.0, m) == doctest::Approx(1e-3));
    JunctionModel mc{50e-6, 6.0, 1e-13};
    CHECK(junction_current(0.0, 0.0, 1e6, mc) == doctest::Approx(1e-7));
}

TEST_CASE("RL step response matches the analytic exponential") {
    CHECK(rl_error_at_5tau(2.5e-12) < 1e-3);
}

TEST_CASE("trapezoidal rule shows second-order convergence") {
    double coarse = rl_error_at_5tau(25e-12);
    double fine = rl_error_at_5tau(12.5e-12);
    double ratio = coarse / fine;
    CHECK(ratio > 3.5);
    CHECK(ratio < 4.5);
}

TEST_CASE("DC-biased junction settles to arcsin(I/Ic) with zero voltage") {
    TransientTrace tr = run_text(
        ".model m jj ic=50u r=8 c=0.1p\n"
        "I1 0 a DC 25u\n"
        "B1 a 0 m\n"
        ".tran 0.1p 5n 4.5n\n"
        ".probe p(B1) v(B1)\n");
    double phi = tr.probe("p(B1)").back();
    double v = tr.probe("v(B1)").back();
    CHECK(phi == doctest::Approx(std::asin(0.5)).epsilon(1e-6));
    CHECK(std::abs(v) < 1e-12);
}

TEST_CASE("KCL residual stays below the Newton tolerance") {
    TransientTrace tr = run_text(kRlDeck);
    double worst = 0.0;
    for (double r : tr.kcl_residual) worst = std::max(worst, r);
    CHECK(worst < 1e-12);
}

TEST_CASE("junction phase and voltage satisfy the trapezoidal ac Josephson relation") {
    TransientTrace tr = run_text(
        ".model m jj ic=50u r=8 c=0.1p\n"
        "I1 0 a SIN 0 100u 5g 0\n"
        "B1 a 0 m\n"
        ".tran 0.05p 0.4n 0\n"
        ".probe p(B1) v(B1)\n");
    const auto& phi = tr.probe("p(B1)");
    const auto& v = tr.probe("v(B1)");
    double worst = 0.0;
    for (std::size_t k = 0; k + 1 < phi.size(); ++k) {
        double lhs = phi[k + 1] - phi[k];
        double rhs = kPi * tr.dt / kPhi0 * (v[k] + v[k + 1]);
        worst = std::max(worst, std::abs(lhs - rhs));
    }
    CHECK(worst < 1e-8);
}

TEST_CASE("identical netlist and config produce bit-identical traces") {
    TransientTrace a = run_text(kRlDeck);
    TransientTrace b = run_text(kRlDeck);
    REQUIRE(a.time.size() == b.time.size());
    for (std::size_t k = 0; k < a.time.size(); ++k) {
        CHECK(a.probe("i(L1)")[k] == b.probe("i(L1)")[k]);
        CHECK(a.probe("v(R1)")[k] == b.probe("v(R1)")[k]);
    }
}

TEST_CASE("stored energy of basic elements") {
    SUBCASE("single inductor") {
        Netlist n = parse_netlist("L1 1 0 2p\nR1 1 0 1\n");
        SystemState s;
        s.node_voltage = Eigen::VectorXd::Zero(1);
        s.inductor_current = Eigen::VectorXd::Constant(1, 100e-6);
        s.junction_phase = Eigen::VectorXd::Zero(0);
        CHECK(stored_energy(n, s) == doctest::Approx(1e-20));
    }
    SUBCASE("coupled equal inductors carrying equal currents") {
        Netlist n = parse_netlist("L1 1 0 2p\nL2 2 0 2p\nK1 L1 L2 0.4\nR1 1 0 1\n");
        SystemState s;
        s.node_voltage = Eigen::VectorXd::Zero(2);
        s.inductor_current = Eigen::VectorXd::Constant(2, 100e-6);
        s.junction_phase = Eigen::VectorXd::Zero(0);
        // L*I^2*(1+k)
        CHECK(stored_energy(n, s) == doctest::Approx(2e-12 * 1e-8 * 1.4));
    }
    SUBCASE("junction at zero phase stores nothing") {
        Netlist n = parse_netlist(".model m jj ic=50u r=8 c=0\nB1 1 0 m\n");
        SystemState s;
        s.node_voltage = Eigen::VectorXd::Zero(1);
        s.inductor_current = Eigen::VectorXd::Zero(0);
        s.junction_phase = Eigen::VectorXd::Zero(1);
        CHECK(stored_energy(n, s) == doctest::Approx(0.0));
        s.junction_phase[0] = kPi;
        CHECK(stored_energy(n, s) ==
              doctest::Approx(2.0 * kPhi0 * 50e-6 / (2.0 * kPi)));
    }
    SUBCASE("unknown group name") {
        Netlist n = parse_netlist("L1 1 0 2p\n");
        SystemState s;
        s.node_voltage = Eigen::VectorXd::Zero(1);
        s.inductor_current = Eigen::VectorXd::Zero(1);
        s.junction_phase = Eigen::VectorXd::Zero(0);
        CHECK_THROWS_AS(stored_energy(n, s, "NOPE"), std::out_of_range);
    }
}

TEST_CASE("dissipated energy quadrature") {
    TransientTrace tr;
    tr.dt = 1e-11;
    for (int k = 0; k <= 100; ++k) tr.time.push_back(k * 1e-11);
    tr.resistive_ids = {"R1"};
    tr.resistive_power.push_back(std::vector<double>(101, 1e-12));  // (1uV)^2/1ohm
    Netlist empty;
    CHECK(dissipated_energy(tr, empty, "", 0.0, 1e-9) == doctest::Approx(1e-21));
    SUBCASE("superconducting steady state dissipates nothing") {
        tr.resistive_power[0].assign(101, 0.0);
        CHECK(dissipated_energy(tr, empty, "", 0.0, 1e-9) == doctest::Approx(0.0));
    }
    SUBCASE("window outside the record") {
        CHECK_THROWS_AS(dissipated_energy(tr, empty, "", 0.0, 2e-9), std::out_of_range);
    }
}

TEST_CASE("energy audit closes on a driven junction circuit") {
    TransientTrace tr = run_text(
        ".model m jj ic=50u r=8 c=0.1p\n"
        "I1 0 a SIN 0 100u 5g 0\n"
        "L1 a b 2p\n"
        "B1 b 0 m\n"
        "R1 a 0 50\n"
        ".tran 0.05p 0.6n 0.2n\n"
        ".probe v(B1)\n");
    double t0 = 0.2e-9, t1 = 0.6e-9;  // two whole periods at 5 GHz
    double work = total_source_work(tr, t0, t1);
    double diss = dissipated_energy(tr, Netlist{}, "", t0, t1);
    double de = tr.total_energy.back() - tr.total_energy.front();
    double scale = std::max(std::abs(work), diss);
    REQUIRE(scale > 0);
    CHECK(std::abs(work - de - diss) / scale < 1e-3);
}

TEST_CASE("solver aborts with the failure time on hopeless configs") {
    // far-too-large timestep on a stiff junction circuit: Newton cannot land
    Netlist n = parse_netlist(
        ".model m jj ic=50u r=8 c=0.1p\n"
        "I1 0 a SIN 0 500u 5g 0\n"
        "B1 a 0 m\n"
        ".tran 40p 10n 0\n");
    SimConfig cfg = SimConfig::from_tran(*n.tran);
    cfg.newton_max_iter = 3;
    try {
        run_transient(n, cfg);
        // convergence in so few iterations would itself be acceptable
    } catch (const SolverError& e) {
        CHECK(e.time > 0);
    }
}
