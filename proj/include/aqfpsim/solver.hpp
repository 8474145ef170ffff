#pragma once

#include <Eigen/Dense>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "aqfpsim/netlist.hpp"

namespace aqfpsim {

struct SimConfig {
    double dt = 0.0;
    double tstop = 0.0;
    double trecord = 0.0;
    double newton_rtol = 1e-9;            // relative tolerance on state update
    double newton_abstol_current = 1e-12; // A, absolute KCL residual
    int newton_max_iter = 50;

    static SimConfig from_tran(const TranDirective& tr) {
        SimConfig c;
        c.dt = tr.dt;
        c.tstop = tr.tstop;
        c.trecord = tr.trecord;
        return c;
    }
};

struct SolverError : std::runtime_error {
    SolverError(double time_, const std::string& what_)
        : std::runtime_error(what_ + " (t=" + std::to_string(time_) + " s)"), time(time_) {}
    double time;
};

/// Index maps between netlist identifiers and state-vector slots.
struct CircuitLayout {
    std::vector<std::string> node_names;  // non-ground nodes
    std::vector<std::string> inductor_ids;
    std::vector<std::string> junction_ids;
    std::map<std::string, int> node_index;
    std::map<std::string, int> inductor_index;
    std::map<std::string, int> junction_index;
};

struct SystemState {
    double time = 0.0;
    Eigen::VectorXd node_voltage;      // V, per layout node
    Eigen::VectorXd inductor_current;  // A, per layout inductor
    Eigen::VectorXd junction_phase;    // rad
    Eigen::VectorXd junction_phase_rate;  // rad/s, equals (2pi/Phi0)*V_jj
    std::shared_ptr<const CircuitLayout> layout;
};

/// Time-sampled record of one transient run. All series share the uniform
/// time grid covering [trecord, tstop].
struct TransientTrace {
    std::vector<double> time;
    double dt = 0.0;

    std::vector<std::string> probe_names;  // netlist probe order
    std::vector<std::vector<double>> probe_values;

    // energy-audit channels
    std::vector<std::string> resistive_ids;  // resistors and junction shunts
    std::vector<std::vector<double>> resistive_power;  // W, V^2/R
    std::vector<std::string> source_ids;
    std::vector<std::vector<double>> source_power;  // W, delivered to circuit
    std::map<std::string, std::vector<double>> group_energy;  // J, per netlist group
    std::vector<double> total_energy;   // J, whole circuit
    std::vector<double> kcl_residual;   // A, max node residual per step

    SystemState final_state;

    const std::vector<double>& probe(const std::string& name) const;
    bool has_probe(const std::string& name) const;
    /// Grid index of time t; throws if t is outside the record or further
    /// than tol from the nearest sample.
    std::size_t index_of(double t, double tol) const;
};

/// Nonlinear transient analysis: modified nodal analysis with trapezoidal
/// integration and Newton iteration (analytic Jacobian). Unknowns are node
/// voltages, inductor branch currents, and junction phases.
TransientTrace run_transient(const Netlist& netlist, const SimConfig& config);

/// RCSJ constitutive law: Ic*sin(phi) + V/R + C*dV/dt.
double junction_current(double phase, double voltage, double dvdt, const JunctionModel& model);

/// Total stored energy of the subset (netlist group name, or "" for the
/// whole circuit): inductive + coupling + capacitive + junction terms.
/// Resistors store nothing. Throws std::out_of_range for unknown groups.
double stored_energy(const Netlist& netlist, const SystemState& state,
                     const std::string& group = "");

/// Trapezoidal quadrature of the subset's resistive power over [t0, t1].
double dissipated_energy(const TransientTrace& trace, const Netlist& netlist,
                         const std::string& group, double t0, double t1);

/// Work delivered by one current source over [t0, t1].
double source_work(const TransientTrace& trace, const std::string& source_id,
                   double t0, double t1);

/// Work delivered by all sources over [t0, t1].
double total_source_work(const TransientTrace& trace, double t0, double t1);

/// Trapezoidal integral of an arbitrary trace-aligned series over [t0, t1].
double integrate_series(const TransientTrace& trace, const std::vector<double>& series,
                        double t0, double t1);

/// Trace CSV: header `time,<probe>,...`, full double precision.
std::string trace_to_csv(const TransientTrace& trace);

}  // namespace aqfpsim
