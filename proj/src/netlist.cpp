#include "aqfpsim/netlist.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <set>
#include <sstream>

namespace aqfpsim {

namespace {

constexpr double kPi = 3.14159265358979323846;

std::string to_upper(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(),
                   [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
    return s;
}

std::vector<std::string> split_fields(const std::string& line) {
    std::vector<std::string> fields;
    std::istringstream iss(line);
    std::string tok;
    while (iss >> tok) fields.push_back(tok);
    return fields;
}

}  // namespace

// ---------------------------------------------------------------------------
// Values
// ---------------------------------------------------------------------------

double parse_value(const std::string& token) {
    if (token.empty()) throw std::invalid_argument("empty value");
    std::size_t tail = token.size();
    while (tail > 0 && std::isalpha(static_cast<unsigned char>(token[tail - 1]))) --tail;
    std::string num = token.substr(0, tail);
    std::string suffix = to_upper(token.substr(tail));

    double scale = 1.0;
    if (!suffix.empty()) {
        if (suffix == "F") scale = 1e-15;
        else if (suffix == "P") scale = 1e-12;
        else if (suffix == "N") scale = 1e-9;
        else if (suffix == "U") scale = 1e-6;
        else if (suffix == "M") scale = 1e-3;
        else if (suffix == "K") scale = 1e3;
        else if (suffix == "MEG") scale = 1e6;
        else if (suffix == "G") scale = 1e9;
        else throw std::invalid_argument("unknown unit suffix '" + suffix + "' in '" + token + "'");
    }

    // The numeric part must be consumed completely; "1e3" keeps its exponent
    // because the trailing-alpha scan stops at the digit.
    const char* begin = num.c_str();
    char* end = nullptr;
    double v = std::strtod(begin, &end);
    if (end != begin + num.size() || num.empty())
        throw std::invalid_argument("malformed number '" + token + "'");
    return v * scale;
}

std::string format_value(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    // trim to the shortest representation that still round-trips
    for (int prec = 1; prec < 17; ++prec) {
        char probe[40];
        std::snprintf(probe, sizeof(probe), "%.*g", prec, v);
        if (std::strtod(probe, nullptr) == v) return probe;
    }
    return buf;
}

// ---------------------------------------------------------------------------
// Waveforms
// ---------------------------------------------------------------------------

double eval_waveform(const Waveform& w, double t) {
    return std::visit(
        [t](const auto& wf) -> double {
            using T = std::decay_t<decltype(wf)>;
            if constexpr (std::is_same_v<T, DcWave>) {
                return wf.value;
            } else if constexpr (std::is_same_v<T, SinWave>) {
                return wf.offset +
                       wf.amplitude * std::sin(2.0 * kPi * wf.frequency * t +
                                               wf.phase_deg * kPi / 180.0);
            } else if constexpr (std::is_same_v<T, TrapWave>) {
                double u = wf.frequency * t + wf.phase_deg / 360.0;
                u -= std::floor(u);
                const double r = wf.rise_frac;
                const double p = wf.plateau_frac;
                double s = 0.0;
                if (u < r) s = u / r;
                else if (u < r + p) s = 1.0;
                else if (u < 2.0 * r + p) s = 1.0 - (u - r - p) / r;
                return wf.offset + wf.amplitude * s;
            } else {
                const auto& pts = wf.points;
                if (pts.empty()) return 0.0;
                if (t <= pts.front().first) return pts.front().second;
                if (t >= pts.back().first) return pts.back().second;
                auto it = std::upper_bound(
                    pts.begin(), pts.end(), t,
                    [](double x, const auto& pt) { return x < pt.first; });
                const auto& [t1, v1] = *it;
                const auto& [t0, v0] = *(it - 1);
                return v0 + (v1 - v0) * (t - t0) / (t1 - t0);
            }
        },
        w);
}

// ---------------------------------------------------------------------------
// Elements
// ---------------------------------------------------------------------------

const std::string& element_id(const Element& e) {
    return std::visit([](const auto& el) -> const std::string& { return el.id; }, e);
}

std::vector<std::string> element_nodes(const Element& e) {
    return std::visit(
        [](const auto& el) -> std::vector<std::string> {
            using T = std::decay_t<decltype(el)>;
            if constexpr (std::is_same_v<T, MutualCoupling>) return {};
            else return {el.node_pos, el.node_neg};
        },
        e);
}

const Element* Netlist::find_element(const std::string& id) const {
    for (const auto& e : elements)
        if (element_id(e) == id) return &e;
    return nullptr;
}

std::string Probe::name() const {
    static const char* prefix[] = {"i", "v", "p", "vsum"};
    std::string s = std::string(prefix[static_cast<int>(kind)]) + "(";
    for (std::size_t i = 0; i < targets.size(); ++i) {
        if (i) s += ",";
        s += targets[i];
    }
    return s + ")";
}

// ---------------------------------------------------------------------------
// Parser
// ---------------------------------------------------------------------------

namespace {

struct LineParser {
    Netlist netlist;
    std::set<std::string> seen_ids;
    // junction lines are checked against .model definitions after the full
    // pass, since models may be declared anywhere in the file
    std::vector<std::pair<int, std::string>> junction_model_refs;

    [[noreturn]] static void fail(int line, const std::string& msg) { throw ParseError(line, msg); }

    static double value_of(int line, const std::string& tok) {
        try {
            return parse_value(tok);
        } catch (const std::invalid_argument& e) {
            fail(line, e.what());
        }
    }

    void check_unique(int line, const std::string& id) {
        if (!seen_ids.insert(id).second) fail(line, "duplicate identifier '" + id + "'");
    }

    Waveform parse_waveform(int line, const std::vector<std::string>& f, std::size_t at) {
        if (at >= f.size()) fail(line, "missing waveform");
        std::string kind = f[at];
        std::vector<std::string> args(f.begin() + at + 1, f.end());
        if (kind == "DC") {
            if (args.size() != 1) fail(line, "DC takes one value");
            return DcWave{value_of(line, args[0])};
        }
        if (kind == "SIN") {
            if (args.size() != 4) fail(line, "SIN takes offset amp freq phase_deg");
            return SinWave{value_of(line, args[0]), value_of(line, args[1]),
                           value_of(line, args[2]), value_of(line, args[3])};
        }
        if (kind == "TRAP") {
            if (args.size() != 6)
                fail(line, "TRAP takes offset amp freq rise_frac plateau_frac phase_deg");
            return TrapWave{value_of(line, args[0]), value_of(line, args[1]),
                            value_of(line, args[2]), value_of(line, args[3]),
                            value_of(line, args[4]), value_of(line, args[5])};
        }
        if (kind == "PWL") {
            if (args.size() < 2 || args.size() % 2 != 0)
                fail(line, "PWL takes t v pairs");
            PwlWave w;
            for (std::size_t i = 0; i < args.size(); i += 2)
                w.points.emplace_back(value_of(line, args[i]), value_of(line, args[i + 1]));
            return w;
        }
        fail(line, "unknown waveform kind '" + kind + "'");
    }

    void parse_probe(int line, const std::string& tok) {
        auto open = tok.find('(');
        if (open == std::string::npos || tok.back() != ')')
            fail(line, "malformed probe '" + tok + "'");
        std::string kind = tok.substr(0, open);
        std::string inner = tok.substr(open + 1, tok.size() - open - 2);
        std::vector<std::string> targets;
        std::size_t start = 0;
        while (start <= inner.size()) {
            auto comma = inner.find(',', start);
            if (comma == std::string::npos) {
                targets.push_back(inner.substr(start));
                break;
            }
            targets.push_back(inner.substr(start, comma - start));
            start = comma + 1;
        }
        if (targets.empty() || targets[0].empty()) fail(line, "empty probe target");
        Probe p;
        if (kind == "I") p.kind = ProbeKind::Current;
        else if (kind == "V") p.kind = ProbeKind::Voltage;
        else if (kind == "P") p.kind = ProbeKind::Phase;
        else if (kind == "VSUM") p.kind = ProbeKind::VoltageSum;
        else fail(line, "unknown probe kind '" + kind + "'");
        if (p.kind != ProbeKind::VoltageSum && targets.size() != 1)
            fail(line, "probe '" + kind + "' takes one target");
        p.targets = targets;
        netlist.probes.push_back(std::move(p));
    }

    void parse_dot(int line, const std::vector<std::string>& f) {
        const std::string& kw = f[0];
        if (kw == ".MODEL") {
            if (f.size() < 3) fail(line, ".model needs a name and type");
            if (f[2] != "JJ") fail(line, "unknown model type '" + f[2] + "'");
            JunctionModel m;
            bool have_ic = false, have_r = false;
            for (std::size_t i = 3; i < f.size(); ++i) {
                auto eq = f[i].find('=');
                if (eq == std::string::npos) fail(line, "expected key=value, got '" + f[i] + "'");
                std::string key = f[i].substr(0, eq);
                double v = value_of(line, f[i].substr(eq + 1));
                if (key == "IC") { m.critical_current = v; have_ic = true; }
                else if (key == "R") { m.shunt_resistance = v; have_r = true; }
                else if (key == "C") { m.capacitance = v; }
                else fail(line, "unknown model parameter '" + key + "'");
            }
            if (!have_ic || !have_r) fail(line, ".model jj requires ic= and r=");
            if (!netlist.models.emplace(f[1], m).second)
                fail(line, "duplicate model '" + f[1] + "'");
        } else if (kw == ".TRAN") {
            if (f.size() != 3 && f.size() != 4) fail(line, ".tran takes dt tstop [trecord]");
            TranDirective tr;
            tr.dt = value_of(line, f[1]);
            tr.tstop = value_of(line, f[2]);
            tr.trecord = f.size() == 4 ? value_of(line, f[3]) : 0.0;
            netlist.tran = tr;
        } else if (kw == ".PROBE") {
            for (std::size_t i = 1; i < f.size(); ++i) parse_probe(line, f[i]);
        } else if (kw == ".GROUP") {
            if (f.size() < 3) fail(line, ".group needs a name and members");
            auto& members = netlist.groups[f[1]];
            members.insert(members.end(), f.begin() + 2, f.end());
        } else {
            fail(line, "unknown directive '" + kw + "'");
        }
    }

    void parse_element(int line, const std::vector<std::string>& f) {
        const std::string& id = f[0];
        char letter = id[0];
        auto need = [&](std::size_t n, const char* usage) {
            if (f.size() != n) fail(line, std::string("expected '") + usage + "'");
        };
        switch (letter) {
            case 'R':
                need(4, "R<id> n+ n- <ohms>");
                check_unique(line, id);
                netlist.elements.push_back(Resistor{id, f[1], f[2], value_of(line, f[3])});
                break;
            case 'L':
                need(4, "L<id> n+ n- <henries>");
                check_unique(line, id);
                netlist.elements.push_back(Inductor{id, f[1], f[2], value_of(line, f[3])});
                break;
            case 'C':
                need(4, "C<id> n+ n- <farads>");
                check_unique(line, id);
                netlist.elements.push_back(Capacitor{id, f[1], f[2], value_of(line, f[3])});
                break;
            case 'K':
                need(4, "K<id> L<a> L<b> <k>");
                check_unique(line, id);
                netlist.elements.push_back(MutualCoupling{id, f[1], f[2], value_of(line, f[3])});
                break;
            case 'B': {
                if (f.size() != 4 && f.size() != 5) fail(line, "expected 'B<id> n+ n- <model> [phi=<rad>]'");
                check_unique(line, id);
                JosephsonJunction j{id, f[1], f[2], f[3], 0.0};
                if (f.size() == 5) {
                    if (f[4].rfind("PHI=", 0) != 0) fail(line, "expected phi=<radians>");
                    j.initial_phase = value_of(line, f[4].substr(4));
                }
                junction_model_refs.emplace_back(line, j.model);
                netlist.elements.push_back(std::move(j));
                break;
            }
            case 'I': {
                if (f.size() < 4) fail(line, "expected 'I<id> n+ n- <waveform>'");
                check_unique(line, id);
                netlist.elements.push_back(
                    CurrentSource{id, f[1], f[2], parse_waveform(line, f, 3)});
                break;
            }
            default:
                fail(line, std::string("unknown element letter '") + letter + "'");
        }
    }

    void run(const std::string& text) {
        std::istringstream in(text);
        std::string raw;
        int line = 0;
        while (std::getline(in, raw)) {
            ++line;
            if (auto star = raw.find('*'); star != std::string::npos) raw.erase(star);
            auto fields = split_fields(to_upper(raw));
            if (fields.empty()) continue;
            if (fields[0][0] == '.') parse_dot(line, fields);
            else parse_element(line, fields);
        }
        for (const auto& [jline, model] : junction_model_refs)
            if (netlist.models.find(model) == netlist.models.end())
                fail(jline, "unknown model reference '" + model + "'");
    }
};

}  // namespace

Netlist parse_netlist(const std::string& text) {
    LineParser p;
    p.run(text);
    return std::move(p.netlist);
}

// ---------------------------------------------------------------------------
// Serializer
// ---------------------------------------------------------------------------

namespace {

std::string waveform_text(const Waveform& w) {
    return std::visit(
        [](const auto& wf) -> std::string {
            using T = std::decay_t<decltype(wf)>;
            if constexpr (std::is_same_v<T, DcWave>) {
                return "DC " + format_value(wf.value);
            } else if constexpr (std::is_same_v<T, SinWave>) {
                return "SIN " + format_value(wf.offset) + " " + format_value(wf.amplitude) +
                       " " + format_value(wf.frequency) + " " + format_value(wf.phase_deg);
            } else if constexpr (std::is_same_v<T, TrapWave>) {
                return "TRAP " + format_value(wf.offset) + " " + format_value(wf.amplitude) +
                       " " + format_value(wf.frequency) + " " + format_value(wf.rise_frac) +
                       " " + format_value(wf.plateau_frac) + " " + format_value(wf.phase_deg);
            } else {
                std::string s = "PWL";
                for (const auto& [t, v] : wf.points)
                    s += " " + format_value(t) + " " + format_value(v);
                return s;
            }
        },
        w);
}

}  // namespace

std::string serialize(const Netlist& n) {
    std::ostringstream out;
    for (const auto& [name, m] : n.models)
        out << ".model " << name << " jj ic=" << format_value(m.critical_current)
            << " r=" << format_value(m.shunt_resistance)
            << " c=" << format_value(m.capacitance) << "\n";
    for (const auto& e : n.elements) {
        std::visit(
            [&out](const auto& el) {
                using T = std::decay_t<decltype(el)>;
                if constexpr (std::is_same_v<T, Resistor>)
                    out << el.id << " " << el.node_pos << " " << el.node_neg << " "
                        << format_value(el.ohms);
                else if constexpr (std::is_same_v<T, Inductor>)
                    out << el.id << " " << el.node_pos << " " << el.node_neg << " "
                        << format_value(el.henries);
                else if constexpr (std::is_same_v<T, Capacitor>)
                    out << el.id << " " << el.node_pos << " " << el.node_neg << " "
                        << format_value(el.farads);
                else if constexpr (std::is_same_v<T, MutualCoupling>)
                    out << el.id << " " << el.inductor_a << " " << el.inductor_b << " "
                        << format_value(el.k);
                else if constexpr (std::is_same_v<T, JosephsonJunction>) {
                    out << el.id << " " << el.node_pos << " " << el.node_neg << " " << el.model;
                    if (el.initial_phase != 0.0) out << " phi=" << format_value(el.initial_phase);
                } else {
                    out << el.id << " " << el.node_pos << " " << el.node_neg << " "
                        << waveform_text(el.waveform);
                }
            },
            e);
        out << "\n";
    }
    if (n.tran) {
        out << ".tran " << format_value(n.tran->dt) << " " << format_value(n.tran->tstop);
        if (n.tran->trecord != 0.0) out << " " << format_value(n.tran->trecord);
        out << "\n";
    }
    for (const auto& p : n.probes) out << ".probe " << p.name() << "\n";
    for (const auto& [name, members] : n.groups) {
        out << ".group " << name;
        for (const auto& m : members) out << " " << m;
        out << "\n";
    }
    return out.str();
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

namespace {

struct Validator {
    const Netlist& n;
    std::vector<Violation> out;

    void add(const std::string& id, const std::string& msg) { out.push_back({id, msg}); }

    void check_waveform(const std::string& id, const Waveform& w) {
        std::visit(
            [&](const auto& wf) {
                using T = std::decay_t<decltype(wf)>;
                if constexpr (std::is_same_v<T, SinWave>) {
                    if (wf.frequency <= 0) add(id, "non-positive frequency");
                } else if constexpr (std::is_same_v<T, TrapWave>) {
                    if (wf.frequency <= 0) add(id, "non-positive frequency");
                    if (wf.rise_frac <= 0) add(id, "non-positive rise fraction");
                    if (wf.plateau_frac < 0) add(id, "negative plateau fraction");
                    if (wf.rise_frac + wf.plateau_frac > 0.5)
                        add(id, "rise fraction + plateau fraction exceeds 0.5");
                } else if constexpr (std::is_same_v<T, PwlWave>) {
                    for (std::size_t i = 1; i < wf.points.size(); ++i)
                        if (wf.points[i].first <= wf.points[i - 1].first) {
                            add(id, "PWL times not strictly increasing");
                            break;
                        }
                }
            },
            w);
    }

    void run() {
        std::map<std::string, const Inductor*> inductors;
        std::set<std::string> ids_by_kind;
        std::set<std::string> all_ids;
        bool ground_used = false;

        for (const auto& e : n.elements) {
            const std::string& id = element_id(e);
            all_ids.insert(id);
            std::string kind_key = std::string(1, id.empty() ? '?' : id[0]) + "/" + id;
            if (!ids_by_kind.insert(kind_key).second) add(id, "duplicate identifier");
            for (const auto& node : element_nodes(e))
                if (node == kGroundNode) ground_used = true;
            if (const auto* l = std::get_if<Inductor>(&e)) inductors[l->id] = l;
        }
        if (!ground_used) add("", "missing ground: no element connects to node 0");

        for (const auto& e : n.elements) {
            std::visit(
                [&](const auto& el) {
                    using T = std::decay_t<decltype(el)>;
                    if constexpr (std::is_same_v<T, Resistor>) {
                        if (el.ohms <= 0) add(el.id, "non-positive value");
                    } else if constexpr (std::is_same_v<T, Inductor>) {
                        if (el.henries <= 0) add(el.id, "non-positive value");
                    } else if constexpr (std::is_same_v<T, Capacitor>) {
                        if (el.farads <= 0) add(el.id, "non-positive value");
                    } else if constexpr (std::is_same_v<T, MutualCoupling>) {
                        if (!(std::abs(el.k) < 1.0))
                            add(el.id, "coupling coefficient out of range");
                        if (el.inductor_a == el.inductor_b)
                            add(el.id, "coupling references the same inductor twice");
                        for (const auto& ref : {el.inductor_a, el.inductor_b})
                            if (inductors.find(ref) == inductors.end())
                                add(el.id, "coupling references unknown inductor '" + ref + "'");
                    } else if constexpr (std::is_same_v<T, JosephsonJunction>) {
                        if (n.models.find(el.model) == n.models.end())
                            add(el.id, "unknown model reference '" + el.model + "'");
                    } else if constexpr (std::is_same_v<T, CurrentSource>) {
                        check_waveform(el.id, el.waveform);
                    }
                },
                e);
        }

        for (const auto& [name, m] : n.models) {
            if (m.critical_current <= 0) add(name, "model critical current must be positive");
            if (m.shunt_resistance <= 0) add(name, "model shunt resistance must be positive");
            if (m.capacitance < 0) add(name, "model capacitance must be non-negative");
        }

        for (const auto& p : n.probes) {
            for (const auto& target : p.targets) {
                const Element* e = n.find_element(target);
                if (!e) {
                    add(target, "probe references unknown element");
                    continue;
                }
                if (p.kind == ProbeKind::Phase && !std::holds_alternative<JosephsonJunction>(*e))
                    add(target, "phase probe on non-junction");
                if (p.kind == ProbeKind::VoltageSum && !std::holds_alternative<Inductor>(*e))
                    add(target, "vsum probe target is not an inductor");
                if (p.kind == ProbeKind::Current && std::holds_alternative<MutualCoupling>(*e))
                    add(target, "current probe on coupling");
            }
        }

        for (const auto& [name, members] : n.groups)
            for (const auto& m : members)
                if (all_ids.find(m) == all_ids.end())
                    add(m, "group '" + name + "' references unknown element");

        if (n.tran) {
            if (n.tran->dt <= 0) add("", ".tran dt must be positive");
            if (!(n.tran->tstop > n.tran->trecord && n.tran->trecord >= 0))
                add("", ".tran requires tstop > trecord >= 0");
        }
    }
};

}  // namespace

std::vector<Violation> validate(const Netlist& netlist) {
    Validator v{netlist, {}};
    v.run();
    return std::move(v.out);
}

}  // namespace aqfpsim
