#include <cmath>
#include <string>
#include <vector>

#include "aqfpsim/netlist.hpp"
#include "doctest.h"

using namespace aqfpsim;

TEST_CASE("value suffix expansion is exact over the suffix table") {
    const std::vector<std::pair<std::string, double>> table = {
        {"f", 1e-15}, {"p", 1e-12}, {"n", 1e-9}, {"u", 1e-6},
        {"m", 1e-3},  {"k", 1e3},   {"meg", 1e6}, {"g", 1e9},
    };
    for (const auto& [suffix, scale] : table) {
        for (double mantissa : {1.0, 2.0, 0.1, 3.3, 50.0, 0.25}) {
            std::string tok = format_value(mantissa) + suffix;
            CHECK(parse_value(tok) == doctest::Approx(mantissa * scale).epsilon(1e-15));
        }
        // case-insensitive
        std::string upper = suffix;
        for (auto& c : upper) c = std::toupper(c);
        CHECK(parse_value("1" + upper) == doctest::Approx(scale).epsilon(1e-15));
    }
    CHECK(parse_value("5e-5") == doctest::Approx(5e-5));
    CHECK(parse_value("-3m") == doctest::Approx(-3e-3));
    CHECK_THROWS_AS(parse_value("3k3"), std::invalid_argument);
    CHECK_THROWS_AS(parse_value("2x"), std::invalid_argument);
    CHECK_THROWS_AS(parse_value(""), std::invalid_argument);
}

TEST_CASE("parse inductor line with unit suffix") {
    Netlist n = parse_netlist("L1 1 0 2p\n");
    REQUIRE(n.elements.size() == 1);
    const auto& l = std::get<Inductor>(n.elements[0]);
    CHECK(l.id == "L1");
    CHECK(l.node_pos == "1");
    CHECK(l.node_neg == "0");
    CHECK(l.henries == doctest::Approx(2e-12));
}

TEST_CASE("parse junction with model") {
    Netlist n = parse_netlist(".model jj1 jj ic=50u r=6 c=0.1p\nB1 2 0 jj1\n");
    const auto& j = std::get<JosephsonJunction>(n.elements[0]);
    CHECK(j.model == "JJ1");
    CHECK(j.initial_phase == 0.0);
    CHECK(n.models.at("JJ1").critical_current == doctest::Approx(5e-5));
    CHECK(n.models.at("JJ1").shunt_resistance == doctest::Approx(6.0));
    CHECK(n.models.at("JJ1").capacitance == doctest::Approx(1e-13));

    Netlist n2 = parse_netlist(".model m jj ic=50u r=6 c=0\nB1 2 0 m phi=1.5\n");
    CHECK(std::get<JosephsonJunction>(n2.elements[0]).initial_phase == doctest::Approx(1.5));
}

TEST_CASE("unknown element letter reports the line number") {
    try {
        parse_netlist("X1 1 0 foo\n");
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(e.line == 1);
        CHECK(std::string(e.what()).find("unknown element letter") != std::string::npos);
    }
}

TEST_CASE("parse errors carry line numbers") {
    CHECK_THROWS_AS(parse_netlist("R1 1 0 5\nR1 2 0 5\n"), ParseError);
    CHECK_THROWS_AS(parse_netlist("B1 1 0 nosuchmodel\n"), ParseError);
    CHECK_THROWS_AS(parse_netlist("R1 1 0\n"), ParseError);
    CHECK_THROWS_AS(parse_netlist("I1 1 0 SIN 0 1\n"), ParseError);
    try {
        parse_netlist("* comment\nR1 1 0 5\nQ9 1 0 2\n");
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(e.line == 3);
    }
}

TEST_CASE("comments and case-insensitivity") {
    Netlist n = parse_netlist("* full line comment\nr1 a 0 5 * trailing comment\n.TRAN 1p 1n\n");
    CHECK(n.elements.size() == 1);
    CHECK(std::get<Resistor>(n.elements[0]).id == "R1");
    CHECK(std::get<Resistor>(n.elements[0]).node_pos == "A");
    REQUIRE(n.tran.has_value());
    CHECK(n.tran->dt == doctest::Approx(1e-12));
}

TEST_CASE("validate reports all violations") {
    std::string text =
        "L1 1 0 2p\n"
        "L2 2 0 2p\n"
        "K1 L1 L2 1.2\n"
        "R1 1 2 -5\n";
    Netlist n = parse_netlist(text);
    auto violations = validate(n);
    REQUIRE(violations.size() == 2);
    bool saw_coupling = false, saw_resistor = false;
    for (const auto& v : violations) {
        if (v.element_id == "K1")
            saw_coupling = v.message.find("coupling coefficient out of range") != std::string::npos;
        if (v.element_id == "R1")
            saw_resistor = v.message.find("non-positive value") != std::string::npos;
    }
    CHECK(saw_coupling);
    CHECK(saw_resistor);
}

TEST_CASE("validate flags missing ground") {
    Netlist n = parse_netlist("R1 1 2 5\n");
    auto violations = validate(n);
    REQUIRE(violations.size() == 1);
    CHECK(violations[0].message.find("missing ground") != std::string::npos);
}

TEST_CASE("validate flags bad couplings, waveforms, groups, probes") {
    std::string text =
        "L1 1 0 2p\n"
        "K1 L1 L1 0.5\n"
        "K2 L1 L9 0.5\n"
        "I1 1 0 SIN 0 1u -5e9 0\n"
        "I2 1 0 TRAP 0 1u 5e9 0.3 0.3 0\n"
        "I3 1 0 PWL 0 0 1n 1u 0.5n 0\n"
        ".probe i(L7)\n"
        ".group CUT L1 LBAD\n";
    auto violations = validate(parse_netlist(text));
    auto has = [&](const std::string& id, const std::string& frag) {
        for (const auto& v : violations)
            if (v.element_id == id && v.message.find(frag) != std::string::npos) return true;
        return false;
    };
    CHECK(has("K1", "same inductor"));
    CHECK(has("K2", "unknown inductor"));
    CHECK(has("I1", "non-positive frequency"));
    CHECK(has("I2", "exceeds 0.5"));
    CHECK(has("I3", "strictly increasing"));
    CHECK(has("L7", "unknown element"));
    CHECK(has("LBAD", "unknown element"));
}

TEST_CASE("serialize then parse round-trips exactly") {
    std::string text =
        ".model jm jj ic=50u r=6.25 c=0.1p\n"
        "B1 a 0 jm phi=0.125\n"
        "B2 b 0 jm\n"
        "L1 a c 1.5p\n"
        "L2 c b 1.5p\n"
        "K1 L1 L2 -0.3\n"
        "R1 c 0 12.5\n"
        "C1 c 0 0.2p\n"
        "I1 0 c SIN 1u 2u 5g 90\n"
        "I2 0 a TRAP 0 1u 5g 0.1 0.25 -90\n"
        "I3 0 b PWL 0 0 1n 2u 2n 0\n"
        "I4 0 c DC -46u\n"
        ".tran 0.05p 2n 1n\n"
        ".probe i(L1) v(R1) p(B1) vsum(L1,L2)\n"
        ".group CUT L1 L2\n";
    Netlist a = parse_netlist(text);
    Netlist b = parse_netlist(serialize(a));
    REQUIRE(a.elements.size() == b.elements.size());
    CHECK(serialize(a) == serialize(b));
    CHECK(a.probes == b.probes);
    CHECK(a.groups == b.groups);
    REQUIRE(b.tran.has_value());
    CHECK(b.tran->dt == a.tran->dt);
    CHECK(b.tran->tstop == a.tran->tstop);
    CHECK(b.tran->trecord == a.tran->trecord);
    for (std::size_t i = 0; i < a.elements.size(); ++i)
        CHECK(element_id(a.elements[i]) == element_id(b.elements[i]));
    const auto& sa = std::get<CurrentSource>(a.elements[8]);
    const auto& sb = std::get<CurrentSource>(b.elements[8]);
    CHECK(std::get<SinWave>(sa.waveform).phase_deg ==
          std::get<SinWave>(sb.waveform).phase_deg);
}

TEST_CASE("waveform evaluation") {
    CHECK(eval_waveform(DcWave{2.5e-6}, 1e-9) == doctest::Approx(2.5e-6));

    SinWave s{1e-6, 2e-6, 1e9, 90.0};
    CHECK(eval_waveform(s, 0.0) == doctest::Approx(3e-6));  // sin(90 deg) = 1

    TrapWave tr{0.0, 1.0, 1e9, 0.25, 0.25, 0.0};
    CHECK(eval_waveform(tr, 0.0) == doctest::Approx(0.0));
    CHECK(eval_waveform(tr, 0.125e-9) == doctest::Approx(0.5));
    CHECK(eval_waveform(tr, 0.3e-9) == doctest::Approx(1.0));
    CHECK(eval_waveform(tr, 0.625e-9) == doctest::Approx(0.5));
    CHECK(eval_waveform(tr, 0.9e-9) == doctest::Approx(0.0));
    // periodicity
    CHECK(eval_waveform(tr, 5.3e-9) == doctest::Approx(eval_waveform(tr, 0.3e-9)));

    PwlWave p{{{0.0, 0.0}, {1e-9, 1.0}, {2e-9, -1.0}}};
    CHECK(eval_waveform(p, -1e-9) == doctest::Approx(0.0));
    CHECK(eval_waveform(p, 0.5e-9) == doctest::Approx(0.5));
    CHECK(eval_waveform(p, 1.5e-9) == doctest::Approx(0.0));
    CHECK(eval_waveform(p, 9e-9) == doctest::Approx(-1.0));
}
