#include "aqfpsim/energy.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <mutex>
#include <sstream>
#include <thread>

namespace aqfpsim {

namespace {

std::string vsum_probe_name(const Netlist& n) {
    for (const auto& p : n.probes)
        if (p.kind == ProbeKind::VoltageSum) return p.name();
    throw std::invalid_argument("netlist has no vsum probe");
}

std::string output_gate(const Testbench& tb) {
    if (tb.plan.kind == GateKind::Maj) return "Q0";
    // chain: the gate just past the CUT reads the propagated value
    return tb.gates[tb.gates.size() - 1].name;
}

}  // namespace

// ---------------------------------------------------------------------------
// Work integrals
// ---------------------------------------------------------------------------

double work_integral(const TransientTrace& trace, const std::string& current_probe,
                     const std::string& voltage_probe, double t0, double t1, double period) {
    if (std::abs((t1 - t0) - period) > 1e-6 * period)
        throw std::invalid_argument("window is not a whole excitation period");
    const auto& i = trace.probe(current_probe);
    const auto& v = trace.probe(voltage_probe);
    std::size_t k0 = trace.index_of(t0, trace.dt / 2);
    std::size_t k1 = trace.index_of(t1, trace.dt / 2);
    double sum = 0.0;
    for (std::size_t k = k0; k < k1; ++k)
        sum += 0.5 * (i[k] * v[k] + i[k + 1] * v[k + 1]) * (trace.time[k + 1] - trace.time[k]);
    return sum;
}

WorkBreakdown compute_works(const TransientTrace& trace, const Testbench& tb) {
    const double T = tb.period();
    const double t1 = tb.measure_start();
    const double t2 = t1 + T;
    const std::string vsum = vsum_probe_name(tb.netlist);

    auto wtot_over = [&](double a, double b) {
        return work_integral(trace, "i(IX1)", "v(IX1)", a, b, T) +
               work_integral(trace, "i(IX2)", "v(IX2)", a, b, T);
    };

    WorkBreakdown w;
    w.frequency = tb.plan.frequency;
    w.w_tot = wtot_over(t1, t2);
    double w_prev = wtot_over(t1 - T, t1);
    double scale = std::max(std::abs(w.w_tot), std::abs(w_prev));
    if (scale > 0 && std::abs(w.w_tot - w_prev) > 5e-3 * scale)
        throw std::runtime_error(
            "steady state not reached: cycle work mismatch " +
            format_value(std::abs(w.w_tot - w_prev) / scale));

    w.w_cut = work_integral(trace, "i(IX1)", vsum, t1, t2, T);
    w.w_per = w.w_tot - w.w_cut;
    w.oracle_cut = dissipated_energy(trace, tb.netlist, "CUT_CELL", t1, t2);
    w.oracle_per = dissipated_energy(trace, tb.netlist, "PER_CELL", t1, t2);
    for (const auto& id : trace.source_ids) {
        if (id == "ID") w.w_dc = source_work(trace, id, t1, t2);
        if (id.rfind("IIN", 0) == 0) w.w_inputs += source_work(trace, id, t1, t2);
    }
    return w;
}

FitResult fit_wper(const std::vector<std::pair<double, double>>& points) {
    if (points.size() < 3) throw std::invalid_argument("linear fit needs at least 3 points");
    double xbar = 0, ybar = 0;
    for (const auto& [x, y] : points) {
        xbar += x;
        ybar += y;
    }
    xbar /= points.size();
    ybar /= points.size();
    double sxx = 0, sxy = 0;
    for (const auto& [x, y] : points) {
        sxx += (x - xbar) * (x - xbar);
        sxy += (x - xbar) * (y - ybar);
    }
    if (sxx == 0) throw std::invalid_argument("degenerate fit: all frequencies equal");
    FitResult fit;
    fit.alpha = sxy / sxx;
    fit.beta = ybar - fit.alpha * xbar;
    double ss_res = 0, ss_tot = 0;
    for (const auto& [x, y] : points) {
        double r = y - (fit.alpha * x + fit.beta);
        ss_res += r * r;
        ss_tot += (y - ybar) * (y - ybar);
    }
    fit.r2 = ss_tot == 0 ? 1.0 : 1.0 - ss_res / ss_tot;
    return fit;
}

double e_diss_cut(const WorkBreakdown& breakdown, double beta) {
    return breakdown.w_tot - breakdown.w_per + beta;
}

// ---------------------------------------------------------------------------
// Stage decomposition
// ---------------------------------------------------------------------------

StageEnergyReport stage_decomposition(const TransientTrace& trace, const Testbench& tb,
                                      const std::string& gate) {
    const GateInfo& g = tb.gate(gate);
    const double T = tb.period();
    const int cycle = tb.measure_cycle();

    double frac;  // cycle fraction of stage A, the gate's own excitation minimum
    if (tb.plan.profile == ExcitationProfile::Sinusoid)
        frac = ((g.phase + 3) % 4) / 4.0;
    else if (tb.plan.kind == GateKind::Buffer)
        frac = 0.5 * g.phase;
    else
        frac = std::fmod(0.8125 + g.phase / 4.0, 1.0);

    // keep stages A..E = A + {0, T/4, ..., T} inside the recorded two cycles
    double t_a = (cycle - 1 + frac) * T;

    auto it = trace.group_energy.find("GATE_" + gate);
    if (it == trace.group_energy.end())
        throw std::invalid_argument("no energy record for gate '" + gate + "'");
    const auto& series = it->second;

    StageEnergyReport rep;
    std::size_t ka = 0, ke = 0;
    for (int s = 0; s < 5; ++s) {
        std::size_t k;
        try {
            k = trace.index_of(t_a + s * T / 4.0, trace.dt / 2);
        } catch (const std::out_of_range&) {
            throw std::out_of_range("stage instants fall outside the recorded window");
        }
        rep.stage_energy[s] = series[k];
        if (s == 0) ka = k;
        if (s == 4) ke = k;
    }
    rep.de_exc = rep.stage_energy[1] - rep.stage_energy[0];
    rep.de_fwd = rep.stage_energy[2] - rep.stage_energy[1];
    rep.de_bwd = rep.stage_energy[3] - rep.stage_energy[2];
    rep.de_res = rep.stage_energy[4] - rep.stage_energy[3];
    rep.de_total = rep.stage_energy[4] - rep.stage_energy[0];
    for (std::size_t k = ka; k <= ke; ++k)
        rep.peak_energy = std::max(rep.peak_energy, series[k]);
    return rep;
}

// ---------------------------------------------------------------------------
// Frequency sweep
// ---------------------------------------------------------------------------

namespace {

Testbench build_for(const CellParams& params, const TestbenchPlan& plan, double f) {
    if (plan.kind == GateKind::Maj) {
        if (plan.inputs.size() != 3) throw std::invalid_argument("maj takes 3 input bits");
        return build_maj_testbench(params, {plan.inputs[0], plan.inputs[1], plan.inputs[2]},
                                   plan.depth, f, plan.profile, plan.warmup_cycles,
                                   plan.dt_override);
    }
    if (plan.inputs.size() != 1) throw std::invalid_argument("buffer takes 1 input bit");
    return build_buffer_chain(2 * plan.depth + 1, params, plan.inputs[0], f, plan.profile,
                              plan.warmup_cycles, plan.dt_override);
}

int expected_logic(const TestbenchPlan& plan) {
    if (plan.kind == GateKind::Maj)
        return (plan.inputs[0] + plan.inputs[1] + plan.inputs[2]) >= 2 ? 1 : 0;
    return plan.inputs[0];
}

}  // namespace

std::vector<double> log_grid(double fmin, double fmax, int points) {
    if (!(fmin > 0) || !(fmax > fmin) || points < 3)
        throw std::invalid_argument("grid needs fmax > fmin > 0 and >= 3 points");
    std::vector<double> grid(points);
    for (int i = 0; i < points; ++i)
        grid[i] = std::pow(10.0, std::log10(fmin) +
                                     (std::log10(fmax) - std::log10(fmin)) * i / (points - 1));
    return grid;
}

EnergySweepTable frequency_sweep(const CellParams& params, const TestbenchPlan& plan,
                                 const std::vector<double>& grid) {
    if (grid.size() < 3) throw std::invalid_argument("frequency grid needs >= 3 points");

    std::vector<double> freqs = grid;
    std::sort(freqs.begin(), freqs.end());

    EnergySweepTable table;
    table.plan = plan;
    table.rows.resize(freqs.size());

    auto run_row = [&](std::size_t idx) {
        SweepRow& row = table.rows[idx];
        row.frequency = freqs[idx];
        try {
            Testbench tb = build_for(params, plan, freqs[idx]);
            TransientTrace trace = run_transient(tb.netlist, tb.sim_config());
            row.readout = logic_readout(trace, tb, output_gate(tb), tb.measure_cycle());
            if (row.readout != expected_logic(plan))
                throw IndeterminateState("wrong logic value at output");
            row.work = compute_works(trace, tb);
        } catch (const IndeterminateState& e) {
            row.status = RowStatus::Indeterminate;
            row.error = e.what();
        } catch (const std::exception& e) {
            row.status = RowStatus::SolverError;
            row.error = e.what();
        }
    };

    unsigned hw = std::max(1u, std::thread::hardware_concurrency());
    std::size_t workers = std::min<std::size_t>(hw, freqs.size());
    if (workers <= 1) {
        for (std::size_t i = 0; i < freqs.size(); ++i) run_row(i);
    } else {
        std::vector<std::thread> pool;
        std::size_t next = 0;
        std::mutex mtx;
        for (std::size_t w = 0; w < workers; ++w)
            pool.emplace_back([&] {
                for (;;) {
                    std::size_t i;
                    {
                        std::lock_guard<std::mutex> lock(mtx);
                        if (next >= freqs.size()) return;
                        i = next++;
                    }
                    run_row(i);
                }
            });
        for (auto& t : pool) t.join();
    }

    std::vector<std::pair<double, double>> points;
    for (const auto& row : table.rows)
        if (row.status == RowStatus::Ok) points.emplace_back(row.frequency, row.work.w_per);
    try {
        table.fit = fit_wper(points);
        table.fit_ok = true;
        for (auto& row : table.rows)
            if (row.status == RowStatus::Ok) row.e_diss_cut = e_diss_cut(row.work, table.fit.beta);
    } catch (const std::exception& e) {
        table.fit_error = e.what();
    }
    return table;
}

// ---------------------------------------------------------------------------
// Output formats
// ---------------------------------------------------------------------------

namespace {

std::string g17(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace

std::string sweep_csv(const EnergySweepTable& table) {
    std::ostringstream out;
    out << "f_hz,W_tot_J,W_cut_J,W_per_J,E_diss_cut_J,oracle_cut_J\n";
    for (const auto& row : table.rows) {
        out << g17(row.frequency) << ",";
        if (row.status == RowStatus::Ok)
            out << g17(row.work.w_tot) << "," << g17(row.work.w_cut) << ","
                << g17(row.work.w_per) << "," << g17(row.e_diss_cut) << ","
                << g17(row.work.oracle_cut);
        else
            out << "nan,nan,nan,nan,nan";
        out << "\n";
    }
    return out.str();
}

std::string sweep_report(const EnergySweepTable& table) {
    std::ostringstream out;
    out << "gate: " << (table.plan.kind == GateKind::Maj ? "maj" : "buffer") << "  inputs: ";
    for (int b : table.plan.inputs) out << b;
    out << "  depth: " << table.plan.depth << "\n";
    std::size_t ok = 0;
    for (const auto& r : table.rows) ok += r.status == RowStatus::Ok;
    out << "rows: " << table.rows.size() << "  ok: " << ok << "\n";
    if (table.fit_ok) {
        out << "fit W_per = alpha*f + beta\n";
        out << "  alpha = " << format_value(table.fit.alpha) << " J*s\n";
        out << "  beta  = " << format_value(table.fit.beta) << " J\n";
        out << "  r2    = " << format_value(table.fit.r2) << "\n";
        out << "f_hz          E_diss_cut_J    E/kBT(4.2K)   oracle_J        eq9/oracle\n";
        for (const auto& row : table.rows) {
            if (row.status != RowStatus::Ok) {
                out << format_value(row.frequency) << "  failed: " << row.error << "\n";
                continue;
            }
            char line[160];
            std::snprintf(line, sizeof(line), "%-13.6g %-15.6g %-13.6g %-15.6g %-10.4g\n",
                          row.frequency, row.e_diss_cut,
                          row.e_diss_cut / kThermalEnergy4p2K, row.work.oracle_cut,
                          row.work.oracle_cut != 0 ? row.e_diss_cut / row.work.oracle_cut : 0.0);
            out << line;
        }
    } else {
        out << "fit failed: " << table.fit_error << "\n";
    }
    return out.str();
}

}  // namespace aqfpsim
