#pragma once

#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace aqfpsim {

/// Magnetic flux quantum h/2e in webers.
inline constexpr double kPhi0 = 2.067833848e-15;

inline constexpr const char* kGroundNode = "0";

struct ParseError : std::runtime_error {
    ParseError(int line_, const std::string& what_)
        : std::runtime_error("line " + std::to_string(line_) + ": " + what_), line(line_) {}
    int line;
};

// ---------------------------------------------------------------------------
// Waveforms
// ---------------------------------------------------------------------------

struct DcWave {
    double value = 0.0;
};

struct SinWave {
    double offset = 0.0;
    double amplitude = 0.0;
    double frequency = 0.0;
    double phase_deg = 0.0;
};

/// Periodic trapezoid: rises over rise_frac*T, holds for plateau_frac*T,
/// falls over rise_frac*T, stays at the offset level for the rest of the
/// period. Positive phase shifts the waveform earlier, as for SinWave.
struct TrapWave {
    double offset = 0.0;
    double amplitude = 0.0;
    double frequency = 0.0;
    double rise_frac = 0.0;
    double plateau_frac = 0.0;
    double phase_deg = 0.0;
};

/// Piecewise-linear waveform; holds the first value before the first point
/// and the last value after the last point.
struct PwlWave {
    std::vector<std::pair<double, double>> points;
};

using Waveform = std::variant<DcWave, SinWave, TrapWave, PwlWave>;

double eval_waveform(const Waveform& w, double t);

// ---------------------------------------------------------------------------
// Elements
// ---------------------------------------------------------------------------

struct Resistor {
    std::string id;
    std::string node_pos, node_neg;
    double ohms = 0.0;
};

struct Inductor {
    std::string id;
    std::string node_pos, node_neg;
    double henries = 0.0;
};

struct Capacitor {
    std::string id;
    std::string node_pos, node_neg;
    double farads = 0.0;
};

/// Couples two previously declared inductors with coefficient k, |k| < 1.
struct MutualCoupling {
    std::string id;
    std::string inductor_a, inductor_b;
    double k = 0.0;
};

struct JosephsonJunction {
    std::string id;
    std::string node_pos, node_neg;
    std::string model;
    double initial_phase = 0.0;
};

struct CurrentSource {
    std::string id;
    std::string node_pos, node_neg;
    Waveform waveform;
};

using Element = std::variant<Resistor, Inductor, Capacitor, MutualCoupling,
                             JosephsonJunction, CurrentSource>;

const std::string& element_id(const Element& e);
/// Connected circuit nodes; empty for mutual couplings.
std::vector<std::string> element_nodes(const Element& e);

/// RCSJ junction model: supercurrent, shunt resistance, junction capacitance.
struct JunctionModel {
    double critical_current = 0.0;  // A
    double shunt_resistance = 0.0;  // ohm
    double capacitance = 0.0;       // F
};

// ---------------------------------------------------------------------------
// Directives
// ---------------------------------------------------------------------------

enum class ProbeKind { Current, Voltage, Phase, VoltageSum };

struct Probe {
    ProbeKind kind = ProbeKind::Current;
    std::vector<std::string> targets;  // element ids; several for VoltageSum

    std::string name() const;
    bool operator==(const Probe&) const = default;
};

struct TranDirective {
    double dt = 0.0;
    double tstop = 0.0;
    double trecord = 0.0;
};

// ---------------------------------------------------------------------------
// Netlist
// ---------------------------------------------------------------------------

/// Full circuit description. Immutable once validated; safe to share
/// read-only between concurrent simulation runs.
struct Netlist {
    std::vector<Element> elements;  // source order
    std::map<std::string, JunctionModel> models;
    std::optional<TranDirective> tran;
    std::vector<Probe> probes;
    std::map<std::string, std::vector<std::string>> groups;

    const Element* find_element(const std::string& id) const;
    bool has_group(const std::string& name) const { return groups.count(name) != 0; }
};

struct Violation {
    std::string element_id;  // empty for netlist-level problems
    std::string message;
};

/// Parses the line-oriented netlist format. Throws ParseError with the
/// offending line number.
Netlist parse_netlist(const std::string& text);

/// Returns every invariant violation found (empty means valid).
std::vector<Violation> validate(const Netlist& netlist);

/// Canonical text form; parse_netlist(serialize(n)) reproduces n exactly.
std::string serialize(const Netlist& netlist);

/// Expands a numeric token with an optional f/p/n/u/m/k/meg/g suffix.
/// Throws std::invalid_argument on malformed input.
double parse_value(const std::string& token);

/// Shortest round-trip-exact decimal form of v.
std::string format_value(double v);

}  // namespace aqfpsim
