#include <cmath>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "aqfpsim/cells.hpp"
#include "aqfpsim/energy.hpp"
#include "aqfpsim/netlist.hpp"
#include "aqfpsim/solver.hpp"

namespace {

using namespace aqfpsim;

constexpr int kExitParse = 1;
constexpr int kExitValidation = 2;
constexpr int kExitSolver = 3;
constexpr int kExitIndeterminate = 4;
constexpr int kExitAudit = 5;

bool write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        std::cerr << "error: cannot write " << path << "\n";
        return false;
    }
    out << content;
    return true;
}

int load_netlist(const std::string& path, Netlist& netlist) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        std::cerr << "error: cannot open " << path << "\n";
        return kExitParse;
    }
    std::stringstream buf;
    buf << in.rdbuf();
    try {
        netlist = parse_netlist(buf.str());
    } catch (const ParseError& e) {
        std::cerr << path << ": " << e.what() << "\n";
        return kExitParse;
    }
    auto violations = validate(netlist);
    if (!violations.empty()) {
        for (const auto& v : violations)
            std::cerr << path << ": " << (v.element_id.empty() ? "netlist" : v.element_id)
                      << ": " << v.message << "\n";
        return kExitValidation;
    }
    return 0;
}

int cmd_run(const std::string& netlist_path, const std::string& out_path) {
    Netlist netlist;
    if (int rc = load_netlist(netlist_path, netlist)) return rc;
    if (!netlist.tran) {
        std::cerr << netlist_path << ": netlist has no .tran directive\n";
        return kExitValidation;
    }
    try {
        TransientTrace trace = run_transient(netlist, SimConfig::from_tran(*netlist.tran));
        if (!write_file(out_path, trace_to_csv(trace))) return kExitParse;
    } catch (const SolverError& e) {
        std::cerr << "solver: " << e.what() << "\n";
        return kExitSolver;
    }
    return 0;
}

int cmd_energy(const std::string& gate, const std::string& inputs, double fmin, double fmax,
               int points, int warmup, int depth, double dt, const std::string& profile,
               const std::string& params_path, const std::string& out_path,
               const std::string& report_path) {
    TestbenchPlan plan;
    if (gate == "maj") plan.kind = GateKind::Maj;
    else if (gate == "buffer") plan.kind = GateKind::Buffer;
    else {
        std::cerr << "error: gate must be buffer or maj\n";
        return kExitParse;
    }
    std::size_t arity = plan.kind == GateKind::Maj ? 3 : 1;
    if (inputs.size() != arity) {
        std::cerr << "usage error: " << gate << " takes " << arity << " input bit"
                  << (arity > 1 ? "s" : "") << ", got '" << inputs << "'\n";
        return kExitParse;
    }
    for (char c : inputs) {
        if (c != '0' && c != '1') {
            std::cerr << "usage error: inputs must be bits, got '" << inputs << "'\n";
            return kExitParse;
        }
        plan.inputs.push_back(c - '0');
    }
    plan.depth = depth;
    plan.warmup_cycles = warmup;
    plan.dt_override = dt;
    if (profile == "trapezoid") plan.profile = ExcitationProfile::Trapezoid;
    else if (profile != "sinusoid") {
        std::cerr << "error: profile must be sinusoid or trapezoid\n";
        return kExitParse;
    }

    CellParams params = CellParams::reference();
    if (!params_path.empty()) {
        try {
            params = CellParams::load(params_path);
        } catch (const std::exception& e) {
            std::cerr << "error: " << e.what() << "\n";
            return kExitParse;
        }
        auto bad = params.check();
        if (!bad.empty()) {
            for (const auto& msg : bad) std::cerr << params_path << ": " << msg << "\n";
            return kExitValidation;
        }
    }

    EnergySweepTable table;
    try {
        table = frequency_sweep(params, plan, log_grid(fmin, fmax, points));
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitSolver;
    }

    if (!write_file(out_path, sweep_csv(table))) return kExitParse;
    if (!write_file(report_path, sweep_report(table))) return kExitParse;

    int rc = 0;
    for (const auto& row : table.rows) {
        if (row.status == RowStatus::Indeterminate) {
            std::cerr << "indeterminate logic state at f = " << format_value(row.frequency)
                      << " Hz: " << row.error << "\n";
            rc = kExitIndeterminate;
        } else if (row.status == RowStatus::SolverError) {
            std::cerr << "row failed at f = " << format_value(row.frequency) << " Hz: "
                      << row.error << "\n";
        }
    }
    if (rc == 0 && !table.fit_ok) {
        std::cerr << "fit failed: " << table.fit_error << "\n";
        rc = kExitSolver;
    }
    return rc;
}

int cmd_audit(const std::string& netlist_path, double t0, double t1) {
    Netlist netlist;
    if (int rc = load_netlist(netlist_path, netlist)) return rc;
    if (!netlist.tran) {
        std::cerr << netlist_path << ": netlist has no .tran directive\n";
        return kExitValidation;
    }
    try {
        TransientTrace trace = run_transient(netlist, SimConfig::from_tran(*netlist.tran));
        if (std::isnan(t0)) t0 = trace.time.front();
        if (std::isnan(t1)) t1 = trace.time.back();
        std::size_t k0 = trace.index_of(t0, trace.dt / 2);
        std::size_t k1 = trace.index_of(t1, trace.dt / 2);
        double work = total_source_work(trace, t0, t1);
        double de = trace.total_energy[k1] - trace.total_energy[k0];
        double diss = dissipated_energy(trace, netlist, "", t0, t1);
        double resid = work - de - diss;
        double scale = std::max({std::abs(work), std::abs(diss), 1e-300});
        std::cout << "window          [" << format_value(t0) << ", " << format_value(t1)
                  << "] s\n";
        std::cout << "source work     " << format_value(work) << " J\n";
        std::cout << "stored change   " << format_value(de) << " J\n";
        std::cout << "dissipated      " << format_value(diss) << " J\n";
        std::cout << "residual        " << format_value(resid) << " J  ("
                  << format_value(resid / scale) << " relative)\n";
        return std::abs(resid / scale) < 1e-3 ? 0 : kExitAudit;
    } catch (const SolverError& e) {
        std::cerr << "solver: " << e.what() << "\n";
        return kExitSolver;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitSolver;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Josephson-junction transient simulator and AQFP energy toolkit"};
    app.require_subcommand(1);

    auto* run = app.add_subcommand("run", "simulate a netlist and export the trace CSV");
    std::string run_netlist, run_out = "trace.csv";
    run->add_option("netlist", run_netlist, "netlist file")->required();
    run->add_option("--out", run_out, "trace CSV path");

    auto* energy = app.add_subcommand("energy", "frequency sweep and dissipation extraction");
    std::string gate, inputs, params_path, profile = "sinusoid";
    std::string out_path = "sweep.csv", report_path = "report.txt";
    double fmin = 1e9, fmax = 1e10, dt = 0.0;
    int points = 10, warmup = 0, depth = 3;
    energy->add_option("gate", gate, "buffer | maj")->required();
    energy->add_option("--inputs", inputs, "input bits, e.g. 101")->required();
    energy->add_option("--fmin", fmin, "lowest excitation frequency [Hz]");
    energy->add_option("--fmax", fmax, "highest excitation frequency [Hz]");
    energy->add_option("--points", points, "grid points (log spaced)");
    energy->add_option("--warmup", warmup, "warm-up cycles (0 = auto)");
    energy->add_option("--depth", depth, "peripheral depth per port");
    energy->add_option("--dt", dt, "timestep override [s] (0 = auto)");
    energy->add_option("--profile", profile, "sinusoid | trapezoid");
    energy->add_option("--params", params_path, "cell parameter file");
    energy->add_option("--out", out_path, "sweep CSV path");
    energy->add_option("--report", report_path, "fit report path");

    auto* audit = app.add_subcommand("audit", "energy-conservation check of a netlist run");
    std::string audit_netlist;
    double t0 = NAN, t1 = NAN;
    audit->add_option("netlist", audit_netlist, "netlist file")->required();
    audit->add_option("--t0", t0, "window start [s] (default: record start)");
    audit->add_option("--t1", t1, "window end [s] (default: record end)");

    CLI11_PARSE(app, argc, argv);

    if (run->parsed()) return cmd_run(run_netlist, run_out);
    if (energy->parsed())
        return cmd_energy(gate, inputs, fmin, fmax, points, warmup, depth, dt, profile,
                          params_path, out_path, report_path);
    if (audit->parsed()) return cmd_audit(audit_netlist, t0, t1);
    return 0;
}
