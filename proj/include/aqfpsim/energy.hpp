#pragma once

#include <array>
#include <string>
#include <vector>

#include "aqfpsim/cells.hpp"
#include "aqfpsim/netlist.hpp"
#include "aqfpsim/solver.hpp"

namespace aqfpsim {

/// k_B * 4.2 K, the thermal energy scale dissipation is reported against.
inline constexpr double kThermalEnergy4p2K = 5.799e-23;

/// Work performed by the excitation sources over one measurement cycle,
/// split between the gate under test and the peripheral buffers, plus the
/// direct resistive-dissipation oracles for both subsets.
struct WorkBreakdown {
    double frequency = 0.0;
    double w_tot = 0.0;   // both excitation sources
    double w_cut = 0.0;   // I_x1 against the CUT's excitation inductors
    double w_per = 0.0;   // w_tot - w_cut
    double oracle_cut = 0.0;
    double oracle_per = 0.0;
    double w_dc = 0.0;     // dc offset source, should be ~0
    double w_inputs = 0.0; // dc input sources, should be ~0
};

struct FitResult {
    double alpha = 0.0;  // J*s (slope against frequency)
    double beta = 0.0;   // J   (frequency-independent intercept)
    double r2 = 0.0;
};

enum class RowStatus { Ok, SolverError, Indeterminate };

struct SweepRow {
    double frequency = 0.0;
    RowStatus status = RowStatus::Ok;
    std::string error;
    WorkBreakdown work;
    int readout = -1;       // logic value observed at the output gate
    double e_diss_cut = 0.0;  // from the work algebra, filled after the fit
};

struct EnergySweepTable {
    TestbenchPlan plan;
    std::vector<SweepRow> rows;  // ascending frequency
    FitResult fit;               // over the successful rows' (f, W_per)
    bool fit_ok = false;
    std::string fit_error;
};

/// Stored-energy samples of one gate at the five excitation stages of a
/// cycle and the energy steps between them.
struct StageEnergyReport {
    std::array<double, 5> stage_energy{};  // stages A..E
    double de_exc = 0.0;  // A->B, own excitation
    double de_fwd = 0.0;  // B->C, upstream neighbor resets
    double de_bwd = 0.0;  // C->D, downstream neighbor excites
    double de_res = 0.0;  // D->E, own reset
    double de_total = 0.0;
    double peak_energy = 0.0;  // max of the gate energy over the cycle
};

/// Trapezoidal quadrature of i(t)*v(t) over [t0, t1]. The window must span
/// exactly one excitation period (relative mismatch <= 1e-6) and lie inside
/// the recorded range.
double work_integral(const TransientTrace& trace, const std::string& current_probe,
                     const std::string& voltage_probe, double t0, double t1, double period);

/// Work integrals of the measurement cycle: Eq.-10-style total over both
/// excitation sources, the CUT share from I_x1 against the CUT coil voltage
/// sum, and the direct dissipation oracles. Fails if the work of consecutive
/// cycles differs by more than 0.5% (steady state not reached).
WorkBreakdown compute_works(const TransientTrace& trace, const Testbench& tb);

/// Ordinary least squares of W_per = alpha*f + beta; needs >= 3 points with
/// at least two distinct frequencies.
FitResult fit_wper(const std::vector<std::pair<double, double>>& points);

/// Energy dissipation of the CUT: W_tot - W_per + beta.
double e_diss_cut(const WorkBreakdown& breakdown, double beta);

/// Samples the gate's stored energy at stages A..E of the measurement cycle.
StageEnergyReport stage_decomposition(const TransientTrace& trace, const Testbench& tb,
                                      const std::string& gate);

/// One simulation per grid frequency (concurrently), assembled into a table
/// with the linear W_per fit and per-row E_diss,CUT. Row failures are
/// recorded without aborting the other rows.
EnergySweepTable frequency_sweep(const CellParams& params, const TestbenchPlan& plan,
                                 const std::vector<double>& grid);

std::vector<double> log_grid(double fmin, double fmax, int points);

/// CSV with header f_hz,W_tot_J,W_cut_J,W_per_J,E_diss_cut_J,oracle_cut_J.
std::string sweep_csv(const EnergySweepTable& table);

/// Fit summary with alpha, beta, R^2 and per-frequency dissipation in k_BT.
std::string sweep_report(const EnergySweepTable& table);

}  // namespace aqfpsim
