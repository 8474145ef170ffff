#pragma once

#include <array>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "aqfpsim/netlist.hpp"
#include "aqfpsim/solver.hpp"

namespace aqfpsim {

/// Device and drive parameterization of one AQFP gate. Inductances in
/// henries, currents in amperes, fluxes in units of Phi0.
struct CellParams {
    double critical_current = 50e-6;     // junction I_c
    double shunt_resistance = 8.0;       // junction shunt R (beta_c ~ 1)
    double junction_capacitance = 0.1e-12;
    double loop_inductance = 1.5e-12;    // L_1 = L_2
    double load_inductance = 4.5e-12;    // L_q
    double output_inductance = 4.5e-12;  // L_out, must equal L_q
    double excitation_inductance = 40e-12;  // L_x1 = L_x2
    double excitation_coupling = 0.25;      // k_x
    double output_coupling = 0.3;           // k_out
    double excitation_flux_amp = 0.5;       // ac flux amplitude per gate, Phi0
    double dc_offset_flux = 0.5;            // dc flux per gate, Phi0
    double input_amplitude = 46e-6;         // input source current

    /// Committed reference parameter set (same values as params/reference.params).
    static CellParams reference();
    static CellParams load(const std::filesystem::path& file);
    void save(const std::filesystem::path& file) const;
    std::string to_text() const;

    std::vector<std::string> check() const;  // invariant violations

    /// Mutual inductance of one excitation coil, k_x*sqrt(L_x*L_1).
    double excitation_mutual() const;
    /// Line current amplitude that applies `flux_phi0`*Phi0 of flux per gate
    /// (split over the two coupled loops).
    double line_current_for_flux(double flux_phi0) const;
};

enum class ExcitationProfile { Sinusoid, Trapezoid };
enum class GateKind { Buffer, Maj };

struct TestbenchPlan {
    GateKind kind = GateKind::Buffer;
    std::vector<int> inputs;  // logic bits; 1 entry for Buffer, 3 for Maj
    int depth = 3;            // peripheral depth per port
    double frequency = 5e9;
    ExcitationProfile profile = ExcitationProfile::Sinusoid;
    int warmup_cycles = 0;    // 0 = choose from pipeline length
    double dt_override = 0.0; // 0 = min(T/4000, 0.25 ps)
};

struct GateInfo {
    std::string name;
    int phase = 0;      // four-phase index (sinusoid) or parity (trapezoid)
    bool in_cut = false;
};

/// A buildable, runnable experiment: netlist plus the bookkeeping needed to
/// read it back (gate phases, cycle timing, probe naming).
struct Testbench {
    Netlist netlist;
    TestbenchPlan plan;
    std::vector<GateInfo> gates;
    int steps_per_cycle = 0;
    int total_cycles = 0;  // simulated; the last one is the measurement cycle

    double period() const { return 1.0 / plan.frequency; }
    double dt() const { return period() / steps_per_cycle; }
    int measure_cycle() const { return total_cycles - 1; }
    double measure_start() const { return measure_cycle() * period(); }
    SimConfig sim_config() const;

    const GateInfo& gate(const std::string& name) const;
    static std::string state_probe(const std::string& gate) { return "i(L" + gate + "_Q)"; }
    /// Instant of peak excitation of a gate within the given cycle.
    double readout_instant(const std::string& gate, int cycle) const;
};

/// One buffer as a standalone netlist fragment with named ports.
struct BufferFragment {
    Netlist netlist;
    std::string input_node;
    std::string output_node;
    std::string excitation_in_node;
    std::string excitation_out_node;
};

/// Emits J_1, J_2, L_1, L_2, L_q plus the excitation and output transformers
/// of a single buffer; couplings are signed for the given four-phase stage.
BufferFragment build_buffer(const CellParams& params, int stage_phase,
                            const std::string& name = "G0");

/// Chain of `length` buffers clocked by shared excitation lines, head driven
/// by a DC source of +-input_amplitude, tail closed by a grounded inductor
/// matching a buffer's input inductance. The middle gate is marked as the CUT.
Testbench build_buffer_chain(int length, const CellParams& params, int input_bit,
                             double frequency,
                             ExcitationProfile profile = ExcitationProfile::Sinusoid,
                             int warmup_cycles = 0, double dt_override = 0.0);

/// Three input buffer chains, a three-buffer MAJ cell with merged output
/// transformers (all excited by I_x1), and one output chain. The MAJ cell's
/// excitation inductors form the group "CUT".
Testbench build_maj_testbench(const CellParams& params, const std::array<int, 3>& inputs,
                              int depth, double frequency,
                              ExcitationProfile profile = ExcitationProfile::Sinusoid,
                              int warmup_cycles = 0, double dt_override = 0.0);

struct IndeterminateState : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Samples a gate's state current at its peak-excitation instant of the given
/// cycle: 1 above +threshold, 0 below -threshold, IndeterminateState between.
/// The threshold is 10% of the largest state-current magnitude in the record.
int logic_readout(const TransientTrace& trace, const Testbench& tb,
                  const std::string& gate, int cycle);

}  // namespace aqfpsim
