#include "aqfpsim/cells.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

namespace aqfpsim {

namespace {

constexpr double kPi = 3.14159265358979323846;

// output transformer winding sense giving non-inverting propagation
constexpr double kOutSign = 1.0;

constexpr const char* kModelName = "JJREF";

}  // namespace

// ---------------------------------------------------------------------------
// CellParams
// ---------------------------------------------------------------------------

CellParams CellParams::reference() { return CellParams{}; }

double CellParams::excitation_mutual() const {
    return excitation_coupling * std::sqrt(excitation_inductance * loop_inductance);
}

double CellParams::line_current_for_flux(double flux_phi0) const {
    return flux_phi0 * kPhi0 / (2.0 * excitation_mutual());
}

std::vector<std::string> CellParams::check() const {
    std::vector<std::string> bad;
    auto positive = [&bad](double v, const char* name) {
        if (!(v > 0)) bad.push_back(std::string(name) + " must be positive");
    };
    positive(critical_current, "ic");
    positive(shunt_resistance, "r");
    if (junction_capacitance < 0) bad.push_back("c must be non-negative");
    positive(loop_inductance, "l1");
    positive(load_inductance, "lq");
    positive(output_inductance, "lout");
    positive(excitation_inductance, "lx");
    if (!(std::abs(excitation_coupling) < 1)) bad.push_back("kx out of range");
    if (!(std::abs(output_coupling) < 1)) bad.push_back("kout out of range");
    if (load_inductance != output_inductance) bad.push_back("lq and lout must be equal");
    positive(excitation_flux_amp, "exc_amp");
    if (dc_offset_flux < 0) bad.push_back("dc_offset must be non-negative");
    positive(input_amplitude, "input_amp");
    return bad;
}

namespace {

const std::map<std::string, double CellParams::*>& param_keys() {
    static const std::map<std::string, double CellParams::*> keys = {
        {"ic", &CellParams::critical_current},
        {"r", &CellParams::shunt_resistance},
        {"c", &CellParams::junction_capacitance},
        {"l1", &CellParams::loop_inductance},
        {"lq", &CellParams::load_inductance},
        {"lout", &CellParams::output_inductance},
        {"lx", &CellParams::excitation_inductance},
        {"kx", &CellParams::excitation_coupling},
        {"kout", &CellParams::output_coupling},
        {"exc_amp", &CellParams::excitation_flux_amp},
        {"dc_offset", &CellParams::dc_offset_flux},
        {"input_amp", &CellParams::input_amplitude},
    };
    return keys;
}

}  // namespace

CellParams CellParams::load(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) throw std::runtime_error("cannot open parameter file " + file.string());
    CellParams p;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (auto star = line.find_first_of("*#"); star != std::string::npos) line.erase(star);
        std::istringstream iss(line);
        std::string key, eq, value;
        if (!(iss >> key)) continue;
        if (!(iss >> eq >> value) || eq != "=")
            throw std::runtime_error(file.string() + ":" + std::to_string(lineno) +
                                     ": expected 'key = value'");
        std::transform(key.begin(), key.end(), key.begin(), ::tolower);
        auto it = param_keys().find(key);
        if (it == param_keys().end())
            throw std::runtime_error(file.string() + ":" + std::to_string(lineno) +
                                     ": unknown key '" + key + "'");
        p.*(it->second) = parse_value(value);
    }
    return p;
}

std::string CellParams::to_text() const {
    std::ostringstream out;
    for (const auto& [key, member] : param_keys())
        out << key << " = " << format_value(this->*member) << "\n";
    return out.str();
}

void CellParams::save(const std::filesystem::path& file) const {
    std::ofstream out(file);
    out << to_text();
}

// ---------------------------------------------------------------------------
// Testbench assembly
// ---------------------------------------------------------------------------

namespace {

struct CoilSpec {
    std::string id;
    double henries;
    std::string partner;  // coupled gate inductor
    double k;
};

struct LineSpec {
    std::string name;  // source id without the I prefix
    Waveform wave;
    std::vector<CoilSpec> coils;
};

class Builder {
public:
    explicit Builder(const CellParams& params) : p_(params) {
        auto bad = params.check();
        if (!bad.empty()) throw std::invalid_argument("invalid cell parameters: " + bad[0]);
        n_.models[kModelName] = JunctionModel{p_.critical_current, p_.shunt_resistance,
                                              p_.junction_capacitance};
    }

    LineSpec& line(const std::string& name, Waveform wave) {
        for (auto& l : lines_)
            if (l.name == name) return l;
        lines_.push_back({name, std::move(wave), {}});
        return lines_.back();
    }

    /// One buffer: junction loop on storage node `c`, output transformer
    /// driving `out`, excitation coils queued onto `exc_line`.
    void emit_gate(const std::string& g, const std::string& c, const std::string& out,
                   LineSpec& exc_line, double winding, LineSpec* dc_line, int phase,
                   bool in_cut) {
        const std::string a = g + "_A", b = g + "_B";
        n_.elements.push_back(JosephsonJunction{"B" + g + "_1", a, kGroundNode, kModelName});
        n_.elements.push_back(JosephsonJunction{"B" + g + "_2", b, kGroundNode, kModelName});
        n_.elements.push_back(Inductor{"L" + g + "_1", a, c, p_.loop_inductance});
        n_.elements.push_back(Inductor{"L" + g + "_2", c, b, p_.loop_inductance});
        n_.elements.push_back(Inductor{"L" + g + "_Q", c, kGroundNode, p_.load_inductance});
        n_.elements.push_back(Inductor{"L" + g + "_O", out, kGroundNode, p_.output_inductance});
        n_.elements.push_back(MutualCoupling{"K" + g + "_O", "L" + g + "_Q", "L" + g + "_O",
                                             kOutSign * p_.output_coupling});

        exc_line.coils.push_back({"L" + g + "_X1", p_.excitation_inductance, "L" + g + "_1",
                                  winding * p_.excitation_coupling});
        exc_line.coils.push_back({"L" + g + "_X2", p_.excitation_inductance, "L" + g + "_2",
                                  winding * p_.excitation_coupling});
        if (dc_line) {
            dc_line->coils.push_back({"L" + g + "_D1", p_.excitation_inductance, "L" + g + "_1",
                                      p_.excitation_coupling});
            dc_line->coils.push_back({"L" + g + "_D2", p_.excitation_inductance, "L" + g + "_2",
                                      p_.excitation_coupling});
        }

        n_.groups["XC_" + g] = {"L" + g + "_X1", "L" + g + "_X2"};
        n_.groups["GATE_" + g] = {"B" + g + "_1", "B" + g + "_2", "L" + g + "_1",
                                  "L" + g + "_2", "L" + g + "_Q", "L" + g + "_O",
                                  "K" + g + "_O"};
        gates_.push_back({g, phase, in_cut});
    }

    /// Wires each line's coils in series from its current source to ground
    /// and the coil couplings onto the gate inductors.
    void finalize_lines() {
        for (const auto& l : lines_) {
            if (l.coils.empty()) continue;
            std::string prev = l.name + "_N0";
            n_.elements.push_back(CurrentSource{"I" + l.name, kGroundNode, prev, l.wave});
            for (std::size_t i = 0; i < l.coils.size(); ++i) {
                const auto& coil = l.coils[i];
                std::string next =
                    i + 1 == l.coils.size() ? kGroundNode : l.name + "_N" + std::to_string(i + 1);
                n_.elements.push_back(Inductor{coil.id, prev, next, coil.henries});
                n_.elements.push_back(
                    MutualCoupling{"K" + coil.id.substr(1), coil.id, coil.partner, coil.k});
                prev = next;
            }
        }
    }

    /// Grounded inductor that mimics the small-signal input inductance of a
    /// buffer: L_q in parallel with the series arm path (L_1 + Josephson
    /// inductance at zero phase) halved for the two arms.
    double termination_inductance() const {
        double lj0 = kPhi0 / (2.0 * kPi * p_.critical_current);
        double arm = 0.5 * (p_.loop_inductance + lj0);
        return p_.load_inductance * arm / (p_.load_inductance + arm);
    }

    void add_probes_for(const std::vector<std::string>& source_ids) {
        for (const auto& id : source_ids) {
            n_.probes.push_back({ProbeKind::Current, {id}});
            n_.probes.push_back({ProbeKind::Voltage, {id}});
        }
    }

    Netlist n_;
    CellParams p_;
    std::vector<LineSpec> lines_;
    std::vector<GateInfo> gates_;
};

int steps_per_cycle_for(double frequency, double dt_override) {
    double period = 1.0 / frequency;
    double steps;
    if (dt_override > 0)
        steps = std::max(8.0, std::round(period / dt_override));
    else
        steps = std::max(4000.0, std::ceil(period / 0.25e-12));
    return static_cast<int>(std::ceil(steps / 8.0)) * 8;
}

void set_tran(Testbench& tb) {
    TranDirective tr;
    tr.dt = tb.period() / tb.steps_per_cycle;
    tr.tstop = tb.total_cycles * tb.period();
    tr.trecord = (tb.total_cycles - 2) * tb.period();
    tb.netlist.tran = tr;
}

/// Phase index -> (line index 0/1, winding sign); together with the shared dc
/// offset this realizes four-phase clocking from two sources 90 deg apart.
std::pair<int, double> phase_assignment(int phase) {
    switch (((phase % 4) + 4) % 4) {
        case 0: return {0, 1.0};
        case 1: return {1, 1.0};
        case 2: return {0, -1.0};
        default: return {1, -1.0};
    }
}

Waveform line_wave(int line_idx, ExcitationProfile profile, double frequency, double amp) {
    double phase = line_idx == 0 ? 0.0 : -90.0;
    if (profile == ExcitationProfile::Sinusoid) return SinWave{0.0, amp, frequency, phase};
    // bipolar trapezoid with half-wave symmetry; plateaus make the gate flux
    // dwell at its extremes
    return TrapWave{-amp, 2.0 * amp, frequency, 0.125, 0.375, phase};
}

/// Unipolar trapezoid lines for the two-phase chain clocking; expressed as
/// PWL because the plateau spans half the period with no low dwell.
Waveform chain_trap_wave(int parity, double amp, double period, int cycles) {
    PwlWave w;
    if (parity == 0) {
        for (int k = 0; k <= cycles; ++k) {
            w.points.emplace_back(k * period, 0.0);
            w.points.emplace_back((k + 0.25) * period, amp);
            w.points.emplace_back((k + 0.75) * period, amp);
        }
    } else {
        w.points.emplace_back(0.0, 0.0);
        w.points.emplace_back(0.5 * period, 0.0);
        for (int k = 0; k <= cycles; ++k) {
            w.points.emplace_back((k + 0.75) * period, amp);
            w.points.emplace_back((k + 1.25) * period, amp);
            w.points.emplace_back((k + 1.5) * period, 0.0);
        }
    }
    return w;
}

}  // namespace

SimConfig Testbench::sim_config() const { return SimConfig::from_tran(*netlist.tran); }

const GateInfo& Testbench::gate(const std::string& name) const {
    for (const auto& g : gates)
        if (g.name == name) return g;
    throw std::invalid_argument("unknown gate '" + name + "'");
}

double Testbench::readout_instant(const std::string& name, int cycle) const {
    const GateInfo& g = gate(name);
    double frac;
    if (plan.profile == ExcitationProfile::Sinusoid)
        frac = (g.phase + 1) / 4.0;
    else if (plan.kind == GateKind::Buffer)  // two-phase PWL clocking
        frac = 0.5 + 0.5 * g.phase;
    else  // four-phase bipolar trapezoid
        frac = 0.3125 + g.phase / 4.0;
    return (cycle + frac) * period();
}

// ---------------------------------------------------------------------------
// build_buffer
// ---------------------------------------------------------------------------

BufferFragment build_buffer(const CellParams& params, int stage_phase, const std::string& name) {
    Builder b(params);
    auto [line_idx, winding] = phase_assignment(stage_phase);
    double amp = params.line_current_for_flux(params.excitation_flux_amp);
    LineSpec& line = b.line(line_idx == 0 ? "X1" : "X2",
                            line_wave(line_idx, ExcitationProfile::Sinusoid, 5e9, amp));
    b.emit_gate(name, name + "_C", name + "_OUT", line, winding, nullptr, stage_phase, false);

    // expose the excitation coils as a two-terminal port instead of closing
    // the line through a source
    BufferFragment frag;
    const auto& coils = line.coils;
    std::string mid = name + "_XM";
    b.n_.elements.push_back(Inductor{coils[0].id, name + "_XIN", mid, coils[0].henries});
    b.n_.elements.push_back(
        MutualCoupling{"K" + coils[0].id.substr(1), coils[0].id, coils[0].partner, coils[0].k});
    b.n_.elements.push_back(Inductor{coils[1].id, mid, name + "_XOUT", coils[1].henries});
    b.n_.elements.push_back(
        MutualCoupling{"K" + coils[1].id.substr(1), coils[1].id, coils[1].partner, coils[1].k});

    frag.netlist = std::move(b.n_);
    frag.input_node = name + "_C";
    frag.output_node = name + "_OUT";
    frag.excitation_in_node = name + "_XIN";
    frag.excitation_out_node = name + "_XOUT";
    return frag;
}

// ---------------------------------------------------------------------------
// build_buffer_chain
// ---------------------------------------------------------------------------

Testbench build_buffer_chain(int length, const CellParams& params, int input_bit,
                             double frequency, ExcitationProfile profile, int warmup_cycles,
                             double dt_override) {
    if (length < 3) throw std::invalid_argument("peripheral depth >= 3 required");
    if (input_bit != 0 && input_bit != 1) throw std::invalid_argument("input bit must be 0 or 1");

    Testbench tb;
    tb.plan.kind = GateKind::Buffer;
    tb.plan.inputs = {input_bit};
    tb.plan.depth = length / 2;
    tb.plan.frequency = frequency;
    tb.plan.profile = profile;
    tb.steps_per_cycle = steps_per_cycle_for(frequency, dt_override);

    int fill = profile == ExcitationProfile::Sinusoid ? (length + 3) / 4 : (length + 1) / 2;
    tb.plan.warmup_cycles = std::max({warmup_cycles, fill + 2, 3});
    tb.total_cycles = tb.plan.warmup_cycles + 1;

    Builder b(params);
    const int cut = length / 2;
    const double period = 1.0 / frequency;

    LineSpec *x1, *x2, *dc = nullptr;
    if (profile == ExcitationProfile::Sinusoid) {
        double amp = params.line_current_for_flux(params.excitation_flux_amp);
        x1 = &b.line("X1", line_wave(0, profile, frequency, amp));
        x2 = &b.line("X2", line_wave(1, profile, frequency, amp));
        dc = &b.line("D", DcWave{params.line_current_for_flux(params.dc_offset_flux)});
    } else {
        double amp =
            params.line_current_for_flux(params.excitation_flux_amp + params.dc_offset_flux);
        x1 = &b.line("X1", chain_trap_wave(0, amp, period, tb.total_cycles));
        x2 = &b.line("X2", chain_trap_wave(1, amp, period, tb.total_cycles));
    }

    auto gate_name = [](int i) { return "G" + std::to_string(i); };
    for (int i = 0; i < length; ++i) {
        std::string g = gate_name(i);
        std::string c = g + "_C";
        std::string out = i + 1 < length ? gate_name(i + 1) + "_C" : "TERM";
        if (profile == ExcitationProfile::Sinusoid) {
            int phase = ((i - cut) % 4 + 4) % 4;
            auto [line_idx, winding] = phase_assignment(phase);
            b.emit_gate(g, c, out, line_idx == 0 ? *x1 : *x2, winding, dc, phase, i == cut);
        } else {
            int parity = i % 2;
            b.emit_gate(g, c, out, parity == 0 ? *x1 : *x2, 1.0, nullptr, parity, i == cut);
        }
    }
    b.n_.elements.push_back(Inductor{"LTERM", "TERM", kGroundNode, b.termination_inductance()});
    b.n_.elements.push_back(CurrentSource{
        "IIN", kGroundNode, gate_name(0) + "_C",
        DcWave{(input_bit ? 1.0 : -1.0) * params.input_amplitude}});
    b.finalize_lines();

    std::string cutg = gate_name(cut);
    b.n_.groups["CUT"] = b.n_.groups.at("XC_" + cutg);
    b.n_.groups["CUT_CELL"] = b.n_.groups.at("GATE_" + cutg);
    auto& per = b.n_.groups["PER_CELL"];
    for (int i = 0; i < length; ++i) {
        if (i == cut) continue;
        const auto& members = b.n_.groups.at("GATE_" + gate_name(i));
        per.insert(per.end(), members.begin(), members.end());
    }

    std::vector<std::string> sources = {"IX1", "IX2"};
    if (dc) sources.push_back("ID");
    sources.push_back("IIN");
    b.add_probes_for(sources);
    b.n_.probes.push_back({ProbeKind::VoltageSum, b.n_.groups.at("CUT")});
    for (int i = 0; i < length; ++i)
        b.n_.probes.push_back({ProbeKind::Current, {"L" + gate_name(i) + "_Q"}});

    tb.netlist = std::move(b.n_);
    tb.gates = std::move(b.gates_);
    set_tran(tb);
    return tb;
}

// ---------------------------------------------------------------------------
// build_maj_testbench
// ---------------------------------------------------------------------------

Testbench build_maj_testbench(const CellParams& params, const std::array<int, 3>& inputs,
                              int depth, double frequency, ExcitationProfile profile,
                              int warmup_cycles, double dt_override) {
    if (depth < 3) throw std::invalid_argument("peripheral depth >= 3 required");
    for (int bit : inputs)
        if (bit != 0 && bit != 1) throw std::invalid_argument("inputs must be bits");

    Testbench tb;
    tb.plan.kind = GateKind::Maj;
    tb.plan.inputs = {inputs[0], inputs[1], inputs[2]};
    tb.plan.depth = depth;
    tb.plan.frequency = frequency;
    tb.plan.profile = profile;
    tb.steps_per_cycle = steps_per_cycle_for(frequency, dt_override);

    const int stages = (depth + 1) + 1 + depth;  // input chain, MAJ, output chain
    tb.plan.warmup_cycles = std::max({warmup_cycles, (stages + 3) / 4 + 2, 3});
    tb.total_cycles = tb.plan.warmup_cycles + 1;

    Builder b(params);
    double amp = params.line_current_for_flux(params.excitation_flux_amp);
    LineSpec& x1 = b.line("X1", line_wave(0, profile, frequency, amp));
    LineSpec& x2 = b.line("X2", line_wave(1, profile, frequency, amp));
    LineSpec& dc = b.line("D", DcWave{params.line_current_for_flux(params.dc_offset_flux)});

    auto emit = [&](const std::string& g, const std::string& c, const std::string& out,
                    int phase, bool in_cut) {
        auto [line_idx, winding] = phase_assignment(phase);
        b.emit_gate(g, c, out, line_idx == 0 ? x1 : x2, winding, &dc, phase, in_cut);
    };

    // three input chains of depth+1 buffers, the head one cycle upstream so
    // the MAJ cell lands on phase 0 (line X1, positive winding)
    const std::array<std::string, 3> port = {"A", "B", "C"};
    for (int ch = 0; ch < 3; ++ch) {
        for (int j = 0; j <= depth; ++j) {
            std::string g = port[ch] + std::to_string(j);
            std::string c = g + "_C";
            std::string out = j < depth ? port[ch] + std::to_string(j + 1) + "_C"
                                        : "M" + port[ch] + "_C";
            int phase = ((j - depth - 1) % 4 + 4) % 4;
            emit(g, c, out, phase, false);
        }
    }

    // MAJ cell: three buffers at phase 0 with their output inductors merged
    // into one storage loop through the first output buffer's input node
    emit("MA", "MA_C", "Q0_C", 0, true);
    emit("MB", "MB_C", "MRG1", 0, true);
    emit("MC", "MC_C", "MRG2", 0, true);
    // rewire the merge: LMA_O Q0_C->MRG1, LMB_O MRG1->MRG2, LMC_O MRG2->gnd
    for (auto& e : b.n_.elements) {
        if (auto* l = std::get_if<Inductor>(&e)) {
            if (l->id == "LMA_O") { l->node_pos = "Q0_C"; l->node_neg = "MRG1"; }
            if (l->id == "LMB_O") { l->node_pos = "MRG1"; l->node_neg = "MRG2"; }
            if (l->id == "LMC_O") { l->node_pos = "MRG2"; l->node_neg = kGroundNode; }
        }
    }

    for (int j = 0; j < depth; ++j) {
        std::string g = "Q" + std::to_string(j);
        std::string out = j + 1 < depth ? "Q" + std::to_string(j + 1) + "_C" : "TERM";
        emit(g, g + "_C", out, (j + 1) % 4, false);
    }
    b.n_.elements.push_back(Inductor{"LTERM", "TERM", kGroundNode, b.termination_inductance()});

    for (int ch = 0; ch < 3; ++ch)
        b.n_.elements.push_back(CurrentSource{
            "IIN" + port[ch], kGroundNode, port[ch] + "0_C",
            DcWave{(inputs[ch] ? 1.0 : -1.0) * params.input_amplitude}});
    b.finalize_lines();

    auto& cutg = b.n_.groups["CUT"];
    auto& cut_cell = b.n_.groups["CUT_CELL"];
    auto& per = b.n_.groups["PER_CELL"];
    for (const auto& g : b.gates_) {
        const auto& xc = b.n_.groups.at("XC_" + g.name);
        const auto& cell = b.n_.groups.at("GATE_" + g.name);
        if (g.in_cut) {
            cutg.insert(cutg.end(), xc.begin(), xc.end());
            cut_cell.insert(cut_cell.end(), cell.begin(), cell.end());
        } else {
            per.insert(per.end(), cell.begin(), cell.end());
        }
    }

    b.add_probes_for({"IX1", "IX2", "ID", "IINA", "IINB", "IINC"});
    b.n_.probes.push_back({ProbeKind::VoltageSum, cutg});
    for (const auto& g : b.gates_)
        b.n_.probes.push_back({ProbeKind::Current, {"L" + g.name + "_Q"}});

    tb.netlist = std::move(b.n_);
    tb.gates = std::move(b.gates_);
    set_tran(tb);
    return tb;
}

// ---------------------------------------------------------------------------
// logic_readout
// ---------------------------------------------------------------------------

int logic_readout(const TransientTrace& trace, const Testbench& tb, const std::string& gate,
                  int cycle) {
    double nominal = 0.0;
    for (const auto& g : tb.gates) {
        const auto& series = trace.probe(Testbench::state_probe(g.name));
        for (double v : series) nominal = std::max(nominal, std::abs(v));
    }
    const double threshold = 0.10 * nominal;
    double t = tb.readout_instant(gate, cycle);
    std::size_t idx;
    try {
        idx = trace.index_of(t, trace.dt / 2);
    } catch (const std::out_of_range&) {
        throw std::invalid_argument("readout cycle outside recorded window");
    }
    double ist = trace.probe(Testbench::state_probe(gate))[idx];
    if (ist > threshold) return 1;
    if (ist < -threshold) return 0;
    throw IndeterminateState("indeterminate state: " + gate + " I_st=" + format_value(ist) +
                             " A at t=" + format_value(t) + " s");
}

}  // namespace aqfpsim
