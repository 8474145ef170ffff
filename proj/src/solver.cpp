#include "aqfpsim/solver.hpp"

#include <Eigen/SparseCore>
#include <Eigen/SparseLU>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace aqfpsim {

namespace {

constexpr double kPi = 3.14159265358979323846;

// ---------------------------------------------------------------------------
// Stamped element views (node indices resolved, -1 = ground)
// ---------------------------------------------------------------------------

struct Res {
    int a, b;
    double g;
    std::string id;
};

struct Cap {
    int a, b;
    double c;
    std::string id;
};

struct Jj {
    int a, b;
    int phi;  // junction index
    double ic, g_shunt, cj;
    double initial_phase;
    std::string id;
};

struct Src {
    int a, b;
    const Waveform* wave;
    std::string id;
};

struct Ind {
    int a, b;
    double l;
    std::string id;
};

struct EnergyItem {
    enum Kind { Inductance, Coupling, Capacitance, Junction } kind;
    int i1 = -1, i2 = -1;  // inductor indices / node indices
    int phi = -1;
    double c1 = 0.0;  // L, M, C, or Josephson energy Phi0*Ic/2pi
    double c2 = 0.0;  // junction capacitance
};

double eval_energy_items(const std::vector<EnergyItem>& items, const SystemState& s) {
    double e = 0.0;
    auto vnode = [&s](int i) { return i < 0 ? 0.0 : s.node_voltage[i]; };
    for (const auto& it : items) {
        switch (it.kind) {
            case EnergyItem::Inductance: {
                double i = s.inductor_current[it.i1];
                e += 0.5 * it.c1 * i * i;
                break;
            }
            case EnergyItem::Coupling:
                e += it.c1 * s.inductor_current[it.i1] * s.inductor_current[it.i2];
                break;
            case EnergyItem::Capacitance: {
                double v = vnode(it.i1) - vnode(it.i2);
                e += 0.5 * it.c1 * v * v;
                break;
            }
            case EnergyItem::Junction: {
                double v = vnode(it.i1) - vnode(it.i2);
                e += it.c1 * (1.0 - std::cos(s.junction_phase[it.phi])) + 0.5 * it.c2 * v * v;
                break;
            }
        }
    }
    return e;
}

// ---------------------------------------------------------------------------
// Circuit: netlist resolved against a layout
// ---------------------------------------------------------------------------

struct Circuit {
    std::shared_ptr<CircuitLayout> layout;
    std::vector<Res> resistors;
    std::vector<Cap> capacitors;
    std::vector<Jj> junctions;
    std::vector<Src> sources;
    std::vector<Ind> inductors;
    // full inductance matrix entries (self + mutual), row-major by branch
    std::vector<Eigen::Triplet<double>> l_entries;

    int nn = 0, ni = 0, nj = 0;
    int size() const { return nn + ni + nj; }
    int row_ind(int j) const { return nn + j; }
    int row_phi(int m) const { return nn + ni + m; }

    explicit Circuit(const Netlist& n) {
        layout = std::make_shared<CircuitLayout>();
        auto node_of = [this](const std::string& name) -> int {
            if (name == kGroundNode) return -1;
            auto [it, inserted] = layout->node_index.try_emplace(
                name, static_cast<int>(layout->node_names.size()));
            if (inserted) layout->node_names.push_back(name);
            return it->second;
        };

        for (const auto& e : n.elements) {
            if (const auto* l = std::get_if<Inductor>(&e)) {
                layout->inductor_index[l->id] = static_cast<int>(layout->inductor_ids.size());
                layout->inductor_ids.push_back(l->id);
            } else if (const auto* j = std::get_if<JosephsonJunction>(&e)) {
                layout->junction_index[j->id] = static_cast<int>(layout->junction_ids.size());
                layout->junction_ids.push_back(j->id);
            }
        }

        for (const auto& e : n.elements) {
            std::visit(
                [&](const auto& el) {
                    using T = std::decay_t<decltype(el)>;
                    if constexpr (std::is_same_v<T, Resistor>) {
                        resistors.push_back(
                            {node_of(el.node_pos), node_of(el.node_neg), 1.0 / el.ohms, el.id});
                    } else if constexpr (std::is_same_v<T, Capacitor>) {
                        capacitors.push_back(
                            {node_of(el.node_pos), node_of(el.node_neg), el.farads, el.id});
                    } else if constexpr (std::is_same_v<T, Inductor>) {
                        int idx = layout->inductor_index.at(el.id);
                        inductors.push_back(
                            {node_of(el.node_pos), node_of(el.node_neg), el.henries, el.id});
                        l_entries.emplace_back(idx, idx, el.henries);
                    } else if constexpr (std::is_same_v<T, MutualCoupling>) {
                        int ia = layout->inductor_index.at(el.inductor_a);
                        int ib = layout->inductor_index.at(el.inductor_b);
                        double la = 0, lb = 0;
                        for (const auto& e2 : n.elements)
                            if (const auto* l2 = std::get_if<Inductor>(&e2)) {
                                if (l2->id == el.inductor_a) la = l2->henries;
                                if (l2->id == el.inductor_b) lb = l2->henries;
                            }
                        double m = el.k * std::sqrt(la * lb);
                        l_entries.emplace_back(ia, ib, m);
                        l_entries.emplace_back(ib, ia, m);
                    } else if constexpr (std::is_same_v<T, JosephsonJunction>) {
                        const auto& model = n.models.at(el.model);
                        junctions.push_back({node_of(el.node_pos), node_of(el.node_neg),
                                             layout->junction_index.at(el.id),
                                             model.critical_current,
                                             1.0 / model.shunt_resistance, model.capacitance,
                                             el.initial_phase, el.id});
                    } else if constexpr (std::is_same_v<T, CurrentSource>) {
                        sources.push_back(
                            {node_of(el.node_pos), node_of(el.node_neg), &el.waveform, el.id});
                    }
                },
                e);
        }

        nn = static_cast<int>(layout->node_names.size());
        ni = static_cast<int>(layout->inductor_ids.size());
        nj = static_cast<int>(layout->junction_ids.size());
    }

    std::vector<EnergyItem> energy_items(const Netlist& n, const std::string& group) const {
        std::vector<const Element*> members;
        if (group.empty()) {
            for (const auto& e : n.elements) members.push_back(&e);
        } else {
            auto it = n.groups.find(group);
            if (it == n.groups.end()) throw std::out_of_range("unknown group name '" + group + "'");
            for (const auto& id : it->second) {
                const Element* e = n.find_element(id);
                if (!e) throw std::out_of_range("group member '" + id + "' not in netlist");
                members.push_back(e);
            }
        }
        std::vector<EnergyItem> items;
        auto node_idx = [this](const std::string& name) -> int {
            return name == kGroundNode ? -1 : layout->node_index.at(name);
        };
        for (const Element* e : members) {
            std::visit(
                [&](const auto& el) {
                    using T = std::decay_t<decltype(el)>;
                    if constexpr (std::is_same_v<T, Inductor>) {
                        items.push_back({EnergyItem::Inductance,
                                         layout->inductor_index.at(el.id), -1, -1, el.henries});
                    } else if constexpr (std::is_same_v<T, MutualCoupling>) {
                        double la = 0, lb = 0;
                        for (const auto& e2 : n.elements)
                            if (const auto* l2 = std::get_if<Inductor>(&e2)) {
                                if (l2->id == el.inductor_a) la = l2->henries;
                                if (l2->id == el.inductor_b) lb = l2->henries;
                            }
                        items.push_back({EnergyItem::Coupling,
                                         layout->inductor_index.at(el.inductor_a),
                                         layout->inductor_index.at(el.inductor_b), -1,
                                         el.k * std::sqrt(la * lb)});
                    } else if constexpr (std::is_same_v<T, Capacitor>) {
                        items.push_back({EnergyItem::Capacitance, node_idx(el.node_pos),
                                         node_idx(el.node_neg), -1, el.farads});
                    } else if constexpr (std::is_same_v<T, JosephsonJunction>) {
                        const auto& model = n.models.at(el.model);
                        items.push_back({EnergyItem::Junction, node_idx(el.node_pos),
                                         node_idx(el.node_neg), layout->junction_index.at(el.id),
                                         kPhi0 * model.critical_current / (2.0 * kPi),
                                         model.capacitance});
                    }
                },
                *e);
        }
        return items;
    }
};

// ---------------------------------------------------------------------------
// Trapezoidal stepper
// ---------------------------------------------------------------------------

/// Per-junction / per-capacitor companion history.
struct History {
    Eigen::VectorXd cap_i, cap_v;  // element capacitors
    Eigen::VectorXd jj_i, jj_v;    // junction displacement branch
};

/// One-step integrator for the MNA system. theta = 0.5 is the trapezoidal
/// rule used throughout a run; theta = 1 (backward Euler) is used for the
/// very first step, where source turn-on makes the t=0 state inconsistent.
class Stepper {
public:
    Stepper(const Circuit& ckt, double h, const SimConfig& cfg, double theta = 0.5)
        : ckt_(ckt), h_(h), cfg_(cfg), theta_(theta) {
        const int n = ckt.size();
        kappa_ = theta * 2.0 * kPi * h / kPhi0;

        std::vector<Eigen::Triplet<double>> trip;
        auto stamp_conductance = [&trip](int a, int b, double g) {
            if (a >= 0) trip.emplace_back(a, a, g);
            if (b >= 0) trip.emplace_back(b, b, g);
            if (a >= 0 && b >= 0) {
                trip.emplace_back(a, b, -g);
                trip.emplace_back(b, a, -g);
            }
        };

        for (const auto& r : ckt.resistors) stamp_conductance(r.a, r.b, r.g);
        for (const auto& c : ckt.capacitors) stamp_conductance(c.a, c.b, c.c / (theta * h));
        for (const auto& j : ckt.junctions) {
            stamp_conductance(j.a, j.b, j.g_shunt + j.cj / (theta * h));
            // placeholders for d(Ic sin phi)/d phi
            if (j.a >= 0) trip.emplace_back(j.a, ckt.row_phi(j.phi), 0.0);
            if (j.b >= 0) trip.emplace_back(j.b, ckt.row_phi(j.phi), 0.0);
        }
        for (int j = 0; j < ckt.ni; ++j) {
            const auto& l = ckt.inductors[j];
            if (l.a >= 0) {
                trip.emplace_back(l.a, ckt.row_ind(j), 1.0);
                trip.emplace_back(ckt.row_ind(j), l.a, -theta);
            }
            if (l.b >= 0) {
                trip.emplace_back(l.b, ckt.row_ind(j), -1.0);
                trip.emplace_back(ckt.row_ind(j), l.b, theta);
            }
        }
        for (const auto& t : ckt.l_entries)
            trip.emplace_back(ckt.row_ind(t.row()), ckt.row_ind(t.col()), t.value() / h);
        for (const auto& j : ckt.junctions) {
            int row = ckt.row_phi(j.phi);
            trip.emplace_back(row, row, 1.0);
            if (j.a >= 0) trip.emplace_back(row, j.a, -kappa_);
            if (j.b >= 0) trip.emplace_back(row, j.b, kappa_);
        }

        base_.resize(n, n);
        base_.setFromTriplets(trip.begin(), trip.end());
        base_.makeCompressed();
        jac_ = base_;

        for (const auto& j : ckt.junctions) {
            slot_a_.push_back(j.a >= 0 ? slot_of(j.a, ckt.row_phi(j.phi)) : -1);
            slot_b_.push_back(j.b >= 0 ? slot_of(j.b, ckt.row_phi(j.phi)) : -1);
        }
        lu_.analyzePattern(jac_);
    }

    /// Advances state+history by h. Returns false on Newton failure.
    bool step(Eigen::VectorXd& x, History& hist, double t_next, double* kcl_residual) {
        const int n = ckt_.size();
        const int nn = ckt_.nn;

        // step-constant rhs: source injections, companion and trapezoid history
        Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n);
        auto add_node = [&rhs, nn](int node, double v) {
            if (node >= 0 && node < nn) rhs[node] += v;
        };
        const double q = (1.0 - theta_) / theta_;
        for (const auto& s : ckt_.sources) {
            double i = eval_waveform(*s.wave, t_next);
            add_node(s.a, -i);
            add_node(s.b, i);
        }
        for (std::size_t k = 0; k < ckt_.capacitors.size(); ++k) {
            const auto& c = ckt_.capacitors[k];
            double histc = c.c / (theta_ * h_) * hist.cap_v[k] + q * hist.cap_i[k];
            add_node(c.a, histc);
            add_node(c.b, -histc);
        }
        for (std::size_t k = 0; k < ckt_.junctions.size(); ++k) {
            const auto& j = ckt_.junctions[k];
            double histc = j.cj / (theta_ * h_) * hist.jj_v[k] + q * hist.jj_i[k];
            add_node(j.a, histc);
            add_node(j.b, -histc);
        }
        for (int j = 0; j < ckt_.ni; ++j) {
            const auto& l = ckt_.inductors[j];
            double vab = voltage(x, l.a) - voltage(x, l.b);
            rhs[ckt_.row_ind(j)] = (1.0 - theta_) * vab;
        }
        for (const auto& t : ckt_.l_entries)
            rhs[ckt_.row_ind(t.row())] += t.value() / h_ * x[ckt_.nn + t.col()];
        for (const auto& j : ckt_.junctions) {
            double vab = voltage(x, j.a) - voltage(x, j.b);
            rhs[ckt_.row_phi(j.phi)] =
                x[ckt_.nn + ckt_.ni + j.phi] + (1.0 - theta_) / theta_ * kappa_ * vab;
        }

        Eigen::VectorXd xn = x;  // iterate
        Eigen::VectorXd f(n), dx(n);
        bool update_small = false;
        bool factored = false;

        for (int iter = 1; iter <= cfg_.newton_max_iter; ++iter) {
            f.noalias() = base_ * xn;
            f -= rhs;
            for (const auto& j : ckt_.junctions) {
                double is = j.ic * std::sin(xn[ckt_.nn + ckt_.ni + j.phi]);
                if (j.a >= 0) f[j.a] += is;
                if (j.b >= 0) f[j.b] -= is;
            }
            double res = nn > 0 ? f.head(nn).cwiseAbs().maxCoeff() : 0.0;
            if (update_small && res <= cfg_.newton_abstol_current) {
                x = xn;
                if (kcl_residual) *kcl_residual = res;
                return true;
            }
            if (iter == cfg_.newton_max_iter) return false;

            if (!factored || iter % 10 == 0) {
                double* v = jac_.valuePtr();
                std::copy(base_.valuePtr(), base_.valuePtr() + base_.nonZeros(), v);
                for (std::size_t k = 0; k < ckt_.junctions.size(); ++k) {
                    const auto& j = ckt_.junctions[k];
                    double gphi = j.ic * std::cos(xn[ckt_.nn + ckt_.ni + j.phi]);
                    if (slot_a_[k] >= 0) v[slot_a_[k]] += gphi;
                    if (slot_b_[k] >= 0) v[slot_b_[k]] -= gphi;
                }
                lu_.factorize(jac_);
                if (lu_.info() != Eigen::Success)
                    throw SolverError(t_next, "singular system matrix");
                factored = true;
            }
            dx = lu_.solve(-f);

            // keep the junction nonlinearity inside the convergence basin
            double max_dphi = 0.0;
            for (int m = 0; m < ckt_.nj; ++m)
                max_dphi = std::max(max_dphi, std::abs(dx[ckt_.nn + ckt_.ni + m]));
            double scale = max_dphi > 0.5 ? 0.5 / max_dphi : 1.0;
            xn += scale * dx;

            update_small = scale == 1.0;
            if (update_small)
                for (int i = 0; i < n; ++i) {
                    double atol = i < nn ? 1e-15 : (i < nn + ckt_.ni ? 1e-15 : 1e-9);
                    if (std::abs(dx[i]) > cfg_.newton_rtol * std::abs(xn[i]) + atol) {
                        update_small = false;
                        break;
                    }
                }
        }
        return false;
    }

    double h() const { return h_; }

private:
    static double voltage(const Eigen::VectorXd& x, int node) { return node < 0 ? 0.0 : x[node]; }

    int slot_of(int row, int col) const {
        for (int p = base_.outerIndexPtr()[col]; p < base_.outerIndexPtr()[col + 1]; ++p)
            if (base_.innerIndexPtr()[p] == row) return p;
        throw std::logic_error("matrix slot not found");
    }

    const Circuit& ckt_;
    double h_;
    SimConfig cfg_;
    double kappa_;
    Eigen::SparseMatrix<double> base_, jac_;
    std::vector<int> slot_a_, slot_b_;
    Eigen::SparseLU<Eigen::SparseMatrix<double>> lu_;
};

/// Updates companion histories after an accepted step with the given theta.
void advance_history(const Circuit& ckt, double h, double theta, const Eigen::VectorXd& x,
                     History& hist) {
    const double q = (1.0 - theta) / theta;
    auto v_of = [](const Eigen::VectorXd& x, int node) { return node < 0 ? 0.0 : x[node]; };
    for (std::size_t k = 0; k < ckt.capacitors.size(); ++k) {
        const auto& c = ckt.capacitors[k];
        double v = v_of(x, c.a) - v_of(x, c.b);
        hist.cap_i[k] = c.c / (theta * h) * (v - hist.cap_v[k]) - q * hist.cap_i[k];
        hist.cap_v[k] = v;
    }
    for (std::size_t k = 0; k < ckt.junctions.size(); ++k) {
        const auto& j = ckt.junctions[k];
        double v = v_of(x, j.a) - v_of(x, j.b);
        hist.jj_i[k] = j.cj / (theta * h) * (v - hist.jj_v[k]) - q * hist.jj_i[k];
        hist.jj_v[k] = v;
    }
}

SystemState make_state(const Circuit& ckt, const Eigen::VectorXd& x, double t) {
    SystemState s;
    s.time = t;
    s.layout = ckt.layout;
    s.node_voltage = x.head(ckt.nn);
    s.inductor_current = x.segment(ckt.nn, ckt.ni);
    s.junction_phase = x.tail(ckt.nj);
    s.junction_phase_rate.resize(ckt.nj);
    for (const auto& j : ckt.junctions) {
        double v = (j.a >= 0 ? x[j.a] : 0.0) - (j.b >= 0 ? x[j.b] : 0.0);
        s.junction_phase_rate[j.phi] = 2.0 * kPi / kPhi0 * v;
    }
    return s;
}

}  // namespace

// ---------------------------------------------------------------------------
// Public entry points
// ---------------------------------------------------------------------------

double junction_current(double phase, double voltage, double dvdt, const JunctionModel& model) {
    return model.critical_current * std::sin(phase) + voltage / model.shunt_resistance +
           model.capacitance * dvdt;
}

TransientTrace run_transient(const Netlist& netlist, const SimConfig& config) {
    if (config.dt <= 0 || config.tstop <= config.trecord || config.trecord < 0)
        throw std::invalid_argument("invalid simulation config");

    Circuit ckt(netlist);
    const double h = config.dt;
    const long nsteps = std::lround(std::ceil(config.tstop / h - 1e-9));
    const long krecord = std::lround(config.trecord / h);

    Stepper stepper(ckt, h, config);
    Stepper first_stepper(ckt, h, config, 1.0);  // backward Euler across source turn-on
    std::unique_ptr<Stepper> half_stepper;  // built lazily for the dt/2 retry

    Eigen::VectorXd x = Eigen::VectorXd::Zero(ckt.size());
    for (const auto& j : ckt.junctions) x[ckt.nn + ckt.ni + j.phi] = j.initial_phase;
    History hist;
    hist.cap_i = Eigen::VectorXd::Zero(ckt.capacitors.size());
    hist.cap_v = Eigen::VectorXd::Zero(ckt.capacitors.size());
    hist.jj_i = Eigen::VectorXd::Zero(ckt.junctions.size());
    hist.jj_v = Eigen::VectorXd::Zero(ckt.junctions.size());

    TransientTrace trace;
    trace.dt = h;
    for (const auto& p : netlist.probes) trace.probe_names.push_back(p.name());
    trace.probe_values.resize(netlist.probes.size());
    for (const auto& r : ckt.resistors) trace.resistive_ids.push_back(r.id);
    for (const auto& j : ckt.junctions) trace.resistive_ids.push_back(j.id);
    trace.resistive_power.resize(trace.resistive_ids.size());
    for (const auto& s : ckt.sources) trace.source_ids.push_back(s.id);
    trace.source_power.resize(trace.source_ids.size());

    std::vector<std::pair<std::string, std::vector<EnergyItem>>> group_items;
    for (const auto& [name, members] : netlist.groups)
        group_items.emplace_back(name, ckt.energy_items(netlist, name));
    auto all_items = ckt.energy_items(netlist, "");

    // resolve probes against the layout once, outside the time loop
    struct ProbeEval {
        enum Kind { IndI, ResI, CapI, JjI, SrcI, Volt, SrcVolt, Phase, Vsum } kind;
        int a = -1, b = -1;  // node indices
        int idx = -1;        // per-kind element index
        double coeff = 0.0;
        std::vector<std::pair<int, int>> pairs;  // vsum node pairs
    };
    std::vector<ProbeEval> probe_evals;
    {
        auto node_idx = [&](const std::string& name) {
            return name == kGroundNode ? -1 : ckt.layout->node_index.at(name);
        };
        for (const auto& p : netlist.probes) {
            const Element* e = netlist.find_element(p.targets[0]);
            if (!e) throw std::invalid_argument("probe target missing: " + p.targets[0]);
            ProbeEval pe;
            if (p.kind == ProbeKind::Phase) {
                pe.kind = ProbeEval::Phase;
                pe.idx = ckt.layout->junction_index.at(p.targets[0]);
            } else if (p.kind == ProbeKind::VoltageSum) {
                pe.kind = ProbeEval::Vsum;
                for (const auto& lid : p.targets) {
                    const auto& l = std::get<Inductor>(*netlist.find_element(lid));
                    pe.pairs.emplace_back(node_idx(l.node_pos), node_idx(l.node_neg));
                }
            } else if (p.kind == ProbeKind::Voltage) {
                auto nodes = element_nodes(*e);
                pe.a = node_idx(nodes[0]);
                pe.b = node_idx(nodes[1]);
                // current sources report the voltage they deliver power into,
                // so that i*v integrates to delivered work
                pe.kind = std::holds_alternative<CurrentSource>(*e) ? ProbeEval::SrcVolt
                                                                    : ProbeEval::Volt;
            } else {
                std::visit(
                    [&](const auto& el) {
                        using T = std::decay_t<decltype(el)>;
                        if constexpr (std::is_same_v<T, Inductor>) {
                            pe.kind = ProbeEval::IndI;
                            pe.idx = ckt.layout->inductor_index.at(el.id);
                        } else if constexpr (std::is_same_v<T, Resistor>) {
                            pe.kind = ProbeEval::ResI;
                            pe.a = node_idx(el.node_pos);
                            pe.b = node_idx(el.node_neg);
                            pe.coeff = 1.0 / el.ohms;
                        } else if constexpr (std::is_same_v<T, Capacitor>) {
                            pe.kind = ProbeEval::CapI;
                            for (std::size_t k = 0; k < ckt.capacitors.size(); ++k)
                                if (ckt.capacitors[k].id == el.id) pe.idx = static_cast<int>(k);
                        } else if constexpr (std::is_same_v<T, JosephsonJunction>) {
                            pe.kind = ProbeEval::JjI;
                            for (std::size_t k = 0; k < ckt.junctions.size(); ++k)
                                if (ckt.junctions[k].id == el.id) pe.idx = static_cast<int>(k);
                        } else if constexpr (std::is_same_v<T, CurrentSource>) {
                            pe.kind = ProbeEval::SrcI;
                            for (std::size_t k = 0; k < ckt.sources.size(); ++k)
                                if (ckt.sources[k].id == el.id) pe.idx = static_cast<int>(k);
                        } else {
                            throw std::invalid_argument("current probe on coupling: " + el.id);
                        }
                    },
                    *e);
            }
            probe_evals.push_back(std::move(pe));
        }
    }

    auto v_of = [&](int node) { return node < 0 ? 0.0 : x[node]; };

    auto record = [&](double t, double kcl_res) {
        trace.time.push_back(t);
        trace.kcl_residual.push_back(kcl_res);
        SystemState s = make_state(ckt, x, t);
        for (std::size_t col = 0; col < probe_evals.size(); ++col) {
            const auto& pe = probe_evals[col];
            double value = 0.0;
            switch (pe.kind) {
                case ProbeEval::IndI:
                    value = x[ckt.nn + pe.idx];
                    break;
                case ProbeEval::ResI:
                    value = (v_of(pe.a) - v_of(pe.b)) * pe.coeff;
                    break;
                case ProbeEval::CapI:
                    value = hist.cap_i[pe.idx];
                    break;
                case ProbeEval::JjI: {
                    const auto& j = ckt.junctions[pe.idx];
                    double v = v_of(j.a) - v_of(j.b);
                    value = j.ic * std::sin(x[ckt.nn + ckt.ni + j.phi]) + j.g_shunt * v +
                            hist.jj_i[pe.idx];
                    break;
                }
                case ProbeEval::SrcI:
                    value = eval_waveform(*ckt.sources[pe.idx].wave, t);
                    break;
                case ProbeEval::Volt:
                    value = v_of(pe.a) - v_of(pe.b);
                    break;
                case ProbeEval::SrcVolt:
                    value = v_of(pe.b) - v_of(pe.a);
                    break;
                case ProbeEval::Phase:
                    value = x[ckt.nn + ckt.ni + pe.idx];
                    break;
                case ProbeEval::Vsum:
                    for (const auto& [a, b] : pe.pairs) value += v_of(a) - v_of(b);
                    break;
            }
            trace.probe_values[col].push_back(value);
        }
        std::size_t rp = 0;
        for (const auto& r : ckt.resistors) {
            double v = v_of(r.a) - v_of(r.b);
            trace.resistive_power[rp++].push_back(v * v * r.g);
        }
        for (const auto& j : ckt.junctions) {
            double v = v_of(j.a) - v_of(j.b);
            trace.resistive_power[rp++].push_back(v * v * j.g_shunt);
        }
        std::size_t sp = 0;
        for (const auto& src : ckt.sources) {
            double i = eval_waveform(*src.wave, t);
            trace.source_power[sp++].push_back(i * (v_of(src.b) - v_of(src.a)));
        }
        for (const auto& [name, items] : group_items)
            trace.group_energy[name].push_back(eval_energy_items(items, s));
        trace.total_energy.push_back(eval_energy_items(all_items, s));
    };

    if (krecord == 0) record(0.0, 0.0);

    Eigen::VectorXd x_prev = x;
    for (long k = 1; k <= nsteps; ++k) {
        const double t_next = static_cast<double>(k) * h;
        double kcl_res = 0.0;
        x_prev = x;
        History hist_prev = hist;
        if (stepper.step(x, hist, t_next, &kcl_res)) {
            advance_history(ckt, h, x_prev, x, hist);
        } else {
            // one retry: split the failed step into two half steps
            x = x_prev;
            hist = hist_prev;
            if (!half_stepper) half_stepper = std::make_unique<Stepper>(ckt, h / 2, config);
            for (int sub = 1; sub <= 2; ++sub) {
                Eigen::VectorXd x_sub = x;
                if (!half_stepper->step(x, hist, t_next - h / 2 * (2 - sub), &kcl_res))
                    throw SolverError(t_next, "Newton iteration failed to converge");
                advance_history(ckt, h / 2, x_sub, x, hist);
            }
        }
        if (!x.allFinite()) throw SolverError(t_next, "non-finite state");
        if (k >= krecord) record(t_next, kcl_res);
    }

    trace.final_state = make_state(ckt, x, static_cast<double>(nsteps) * h);
    return trace;
}

double stored_energy(const Netlist& netlist, const SystemState& state, const std::string& group) {
    Circuit ckt(netlist);
    // states produced by run_transient share index layouts with a fresh
    // Circuit built from the same netlist (both derive order from element
    // order), so the item indices line up
    return eval_energy_items(ckt.energy_items(netlist, group), state);
}

// ---------------------------------------------------------------------------
// Trace utilities
// ---------------------------------------------------------------------------

const std::vector<double>& TransientTrace::probe(const std::string& name) const {
    for (std::size_t i = 0; i < probe_names.size(); ++i)
        if (probe_names[i] == name) return probe_values[i];
    throw std::invalid_argument("missing probe '" + name + "'");
}

bool TransientTrace::has_probe(const std::string& name) const {
    return std::find(probe_names.begin(), probe_names.end(), name) != probe_names.end();
}

std::size_t TransientTrace::index_of(double t, double tol) const {
    if (time.empty()) throw std::out_of_range("empty trace");
    double rel = (t - time.front()) / dt;
    long idx = std::lround(rel);
    if (idx < 0 || idx >= static_cast<long>(time.size()))
        throw std::out_of_range("time outside recorded range");
    if (std::abs(time[idx] - t) > tol) throw std::out_of_range("time not on the sample grid");
    return static_cast<std::size_t>(idx);
}

double integrate_series(const TransientTrace& trace, const std::vector<double>& series,
                        double t0, double t1) {
    std::size_t i0 = trace.index_of(t0, trace.dt / 2);
    std::size_t i1 = trace.index_of(t1, trace.dt / 2);
    if (i1 < i0) throw std::invalid_argument("window end precedes start");
    double sum = 0.0;
    for (std::size_t k = i0; k + 1 <= i1; ++k)
        sum += 0.5 * (series[k] + series[k + 1]) * (trace.time[k + 1] - trace.time[k]);
    return sum;
}

double dissipated_energy(const TransientTrace& trace, const Netlist& netlist,
                         const std::string& group, double t0, double t1) {
    std::vector<std::string> members;
    if (group.empty()) {
        members = trace.resistive_ids;
    } else {
        auto it = netlist.groups.find(group);
        if (it == netlist.groups.end())
            throw std::out_of_range("unknown group name '" + group + "'");
        members = it->second;
    }
    double total = 0.0;
    for (const auto& id : members) {
        auto it = std::find(trace.resistive_ids.begin(), trace.resistive_ids.end(), id);
        if (it == trace.resistive_ids.end()) continue;  // lossless member
        total += integrate_series(
            trace, trace.resistive_power[it - trace.resistive_ids.begin()], t0, t1);
    }
    return total;
}

double source_work(const TransientTrace& trace, const std::string& source_id, double t0,
                   double t1) {
    auto it = std::find(trace.source_ids.begin(), trace.source_ids.end(), source_id);
    if (it == trace.source_ids.end())
        throw std::invalid_argument("unknown source '" + source_id + "'");
    return integrate_series(trace, trace.source_power[it - trace.source_ids.begin()], t0, t1);
}

double total_source_work(const TransientTrace& trace, double t0, double t1) {
    double sum = 0.0;
    for (const auto& id : trace.source_ids) sum += source_work(trace, id, t0, t1);
    return sum;
}

std::string trace_to_csv(const TransientTrace& trace) {
    std::ostringstream out;
    out << "time";
    for (const auto& name : trace.probe_names) out << "," << name;
    out << "\n";
    char buf[32];
    for (std::size_t k = 0; k < trace.time.size(); ++k) {
        std::snprintf(buf, sizeof(buf), "%.17g", trace.time[k]);
        out << buf;
        for (const auto& col : trace.probe_values) {
            std::snprintf(buf, sizeof(buf), "%.17g", col[k]);
            out << "," << buf;
        }
        out << "\n";
    }
    return out.str();
}

}  // namespace aqfpsim
