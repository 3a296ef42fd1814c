#pragma once

#include <cctype>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "omm/hamiltonian.hpp"
#include "omm/solver.hpp"

namespace omm {

struct config_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

namespace detail {

inline std::string trim(const std::string& s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

inline std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string item;
    std::istringstream in(s);
    while (std::getline(in, item, sep)) out.push_back(trim(item));
    return out;
}

}  // namespace detail

// Minimal INI reader: [section] headers, key = value lines, ';' or '#'
// comments. Flat by design so experiment sweeps diff cleanly.
class ini_file {
public:
    static ini_file parse(std::istream& in, const std::string& origin = "<stream>") {
        ini_file f;
        std::string line, section;
        long lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            const std::size_t cut = line.find_first_of(";#");
            if (cut != std::string::npos) line.erase(cut);
            line = detail::trim(line);
            if (line.empty()) continue;
            if (line.front() == '[') {
                if (line.back() != ']')
                    throw config_error(origin + ":" + std::to_string(lineno) + ": unterminated section");
                section = detail::trim(line.substr(1, line.size() - 2));
                continue;
            }
            const std::size_t eq = line.find('=');
            if (eq == std::string::npos)
                throw config_error(origin + ":" + std::to_string(lineno) + ": expected key = value");
            const std::string key = detail::trim(line.substr(0, eq));
            if (key.empty())
                throw config_error(origin + ":" + std::to_string(lineno) + ": empty key");
            f.values_[section + "." + key] = detail::trim(line.substr(eq + 1));
        }
        return f;
    }

    static ini_file load(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw config_error("cannot open config file: " + path);
        return parse(in, path);
    }

    bool has(const std::string& section, const std::string& key) const {
        return values_.count(section + "." + key) != 0;
    }

    std::string get(const std::string& section, const std::string& key,
                    const std::string& fallback) const {
        auto it = values_.find(section + "." + key);
        return it == values_.end() ? fallback : it->second;
    }

    double get_double(const std::string& section, const std::string& key, double fallback) const {
        auto it = values_.find(section + "." + key);
        if (it == values_.end()) return fallback;
        return parse_double(section + "." + key, it->second);
    }

    long get_long(const std::string& section, const std::string& key, long fallback) const {
        auto it = values_.find(section + "." + key);
        if (it == values_.end()) return fallback;
        std::size_t used = 0;
        long v = 0;
        try {
            v = std::stol(it->second, &used);
        } catch (const std::exception&) {
            throw config_error("bad integer for " + section + "." + key + ": " + it->second);
        }
        if (used != it->second.size())
            throw config_error("bad integer for " + section + "." + key + ": " + it->second);
        return v;
    }

    std::uint64_t get_u64(const std::string& section, const std::string& key,
                          std::uint64_t fallback) const {
        auto it = values_.find(section + "." + key);
        if (it == values_.end()) return fallback;
        try {
            return std::stoull(it->second);
        } catch (const std::exception&) {
            throw config_error("bad seed for " + section + "." + key + ": " + it->second);
        }
    }

    bool get_bool(const std::string& section, const std::string& key, bool fallback) const {
        auto it = values_.find(section + "." + key);
        if (it == values_.end()) return fallback;
        const std::string& v = it->second;
        if (v == "true" || v == "yes" || v == "1") return true;
        if (v == "false" || v == "no" || v == "0") return false;
        throw config_error("bad boolean for " + section + "." + key + ": " + v);
    }

    std::vector<double> get_doubles(const std::string& section, const std::string& key,
                                    std::vector<double> fallback) const {
        auto it = values_.find(section + "." + key);
        if (it == values_.end()) return fallback;
        std::vector<double> out;
        for (const std::string& tok : detail::split(it->second, ','))
            if (!tok.empty()) out.push_back(parse_double(section + "." + key, tok));
        return out;
    }

    std::vector<int> get_ints(const std::string& section, const std::string& key,
                              std::vector<int> fallback) const {
        auto it = values_.find(section + "." + key);
        if (it == values_.end()) return fallback;
        std::vector<int> out;
        for (const std::string& tok : detail::split(it->second, ','))
            if (!tok.empty()) out.push_back(static_cast<int>(parse_double(section + "." + key, tok)));
        return out;
    }

    const std::map<std::string, std::string>& entries() const { return values_; }

private:
    static double parse_double(const std::string& what, const std::string& text) {
        std::size_t used = 0;
        double v = 0.0;
        try {
            v = std::stod(text, &used);
        } catch (const std::exception&) {
            throw config_error("bad number for " + what + ": " + text);
        }
        if (used != text.size()) throw config_error("bad number for " + what + ": " + text);
        return v;
    }

    std::map<std::string, std::string> values_;
};

// Discretized model problem: Gaussian well chain on a periodic interval.
struct problem_config {
    int n = 800;
    double alpha = -100.0;
    double beta = 0.1;
    int m = 10;
    double domain = 10.0;
    int wells = 10;
    double shift_margin = 10.0;  // eta = lambda_max + margin unless shift_eta given
    bool explicit_shift = false;
    double shift_eta = 0.0;

    grid_spec grid() const { return {domain, n}; }
    gaussian_potential potential() const { return gaussian_potential::well_chain(alpha, beta, wells); }
    shift_policy shift() const {
        return explicit_shift ? shift_policy::exact(shift_eta) : shift_policy::margin(shift_margin);
    }
    std::vector<double> centers() const { return potential().centers; }

    static problem_config from_ini(const ini_file& f) {
        problem_config p;
        p.n = static_cast<int>(f.get_long("problem", "n", p.n));
        p.alpha = f.get_double("problem", "alpha", p.alpha);
        p.beta = f.get_double("problem", "beta", p.beta);
        p.m = static_cast<int>(f.get_long("problem", "m", p.m));
        p.domain = f.get_double("problem", "domain", p.domain);
        p.wells = static_cast<int>(f.get_long("problem", "wells", p.wells));
        p.shift_margin = f.get_double("problem", "shift_margin", p.shift_margin);
        if (f.has("problem", "shift_eta")) {
            p.explicit_shift = true;
            p.shift_eta = f.get_double("problem", "shift_eta", 0.0);
        }
        if (p.n < 2) throw config_error("problem.n must be at least 2");
        if (p.m < 1 || p.m >= p.n) throw config_error("problem.m must satisfy 1 <= m < n");
        if (!(p.domain > 0.0)) throw config_error("problem.domain must be positive");
        if (p.wells < 1) throw config_error("problem.wells must be positive");
        return p;
    }
};

// Curvature-scale default for the initial step parameter: four times a
// Gershgorin-style bound on the spectral radius of the discretized
// operator. Starting at the true curvature scale keeps the very first
// dynamic steps from overshooting into the quartic regime, where the
// failure re-estimate can jump so high that the next step falls below the
// stopping tolerance and the solver quits at iteration one.
inline double default_l0(const problem_config& p) {
    const double h = p.grid().spacing();
    return 4.0 * (2.0 / (h * h) + std::abs(p.alpha));
}

struct init_config {
    int l_support = 10;
    std::uint64_t seed = 42;

    static init_config from_ini(const ini_file& f) {
        init_config c;
        c.l_support = static_cast<int>(f.get_long("init", "l_support", c.l_support));
        c.seed = f.get_u64("init", "seed", c.seed);
        if (c.l_support < 0) throw config_error("init.l_support must be nonnegative");
        return c;
    }
};

inline solver_variant parse_variant(const std::string& name) {
    if (name == "ista_backtrack") return solver_variant::ista_backtrack;
    if (name == "ista_dynamic") return solver_variant::ista_dynamic;
    if (name == "block_dynamic") return solver_variant::block_dynamic;
    throw config_error("unknown solver variant: " + name);
}

inline std::string variant_name(solver_variant v) {
    switch (v) {
        case solver_variant::ista_backtrack: return "ista_backtrack";
        case solver_variant::ista_dynamic: return "ista_dynamic";
        case solver_variant::block_dynamic: return "block_dynamic";
    }
    return "?";
}

inline block_order parse_block_order(const std::string& name) {
    if (name == "sequential") return block_order::sequential;
    if (name == "random_permutation" || name == "random") return block_order::random_permutation;
    throw config_error("unknown block order: " + name);
}

inline std::string block_order_name(block_order o) {
    return o == block_order::sequential ? "sequential" : "random_permutation";
}

inline mu_schedule parse_mu_schedule(const std::string& text) {
    mu_schedule s;
    for (const std::string& tok : detail::split(text, ',')) {
        const std::size_t colon = tok.find(':');
        if (colon == std::string::npos)
            throw config_error("mu schedule pieces must look like start:value, got: " + tok);
        try {
            s.pieces.push_back({std::stol(tok.substr(0, colon)), std::stod(tok.substr(colon + 1))});
        } catch (const std::exception&) {
            throw config_error("bad mu schedule piece: " + tok);
        }
    }
    s.validate();
    return s;
}

// Reads [solver] and [mu]; l0 = auto (the default) resolves against the
// problem's curvature scale.
inline solver_config solver_from_ini(const ini_file& f, const problem_config& p) {
    solver_config s;
    s.variant = parse_variant(f.get("solver", "variant", "ista_dynamic"));
    s.schedule = parse_block_order(f.get("solver", "block_order", "sequential"));
    const std::string l0 = f.get("solver", "l0", "auto");
    s.l0 = (l0 == "auto") ? default_l0(p) : f.get_double("solver", "l0", 0.0);
    s.eta_bt = f.get_double("solver", "eta_bt", s.eta_bt);
    s.c1 = f.get_double("solver", "c1", s.c1);
    s.c2 = f.get_double("solver", "c2", s.c2);
    s.tol = f.get_double("solver", "tol", s.tol);
    s.max_iters = f.get_long("solver", "max_iters", s.max_iters);
    s.seed = f.get_u64("solver", "seed", s.seed);
    s.track_entry_activity = f.get_bool("solver", "track_entries", false);
    if (f.has("mu", "schedule")) s.mu = parse_mu_schedule(f.get("mu", "schedule", ""));
    else s.mu = mu_schedule::constant(f.get_double("mu", "value", 0.0));
    s.validate();
    return s;
}

// One bag of knobs for all experiment drivers; each driver reads the
// subset it documents and ignores the rest.
struct experiment_config {
    problem_config problem;
    solver_config solver;
    init_config init;

    std::string out_dir = "out";
    int threads = 1;

    // mu-sweep
    std::vector<double> alphas = {-100.0, -10.0};
    int ladder_top_exp = -8;  // ladder starts at 2^ladder_top_exp
    int ladder_count = 5;

    // local-minima ensemble
    int trials = 100;
    std::vector<double> ensemble_mus = {0.5, 10.0};
    std::vector<std::string> methods = {"ista_dynamic", "block_dynamic", "truncated_sd"};

    // ic-dependence
    std::vector<int> l_values = {4, 8, 12, 16};

    // dynamic-mu
    double base_mu = 0.1;
    double pulse_mu = 1.0;
    long pulse_start = 100;
    long pulse_end = 500;

    static experiment_config from_ini(const ini_file& f) {
        experiment_config c;
        c.problem = problem_config::from_ini(f);
        c.solver = solver_from_ini(f, c.problem);
        c.init = init_config::from_ini(f);
        c.out_dir = f.get("experiment", "out", c.out_dir);
        c.threads = static_cast<int>(f.get_long("experiment", "threads", c.threads));
        c.alphas = f.get_doubles("experiment", "alphas", c.alphas);
        c.ladder_top_exp = static_cast<int>(f.get_long("experiment", "ladder_top_exp", c.ladder_top_exp));
        c.ladder_count = static_cast<int>(f.get_long("experiment", "ladder_count", c.ladder_count));
        c.trials = static_cast<int>(f.get_long("experiment", "trials", c.trials));
        c.ensemble_mus = f.get_doubles("experiment", "mus", c.ensemble_mus);
        if (f.has("experiment", "methods")) c.methods = detail::split(f.get("experiment", "methods", ""), ',');
        c.l_values = f.get_ints("experiment", "l_values", c.l_values);
        c.base_mu = f.get_double("experiment", "base_mu", c.base_mu);
        c.pulse_mu = f.get_double("experiment", "pulse_mu", c.pulse_mu);
        c.pulse_start = f.get_long("experiment", "pulse_start", c.pulse_start);
        c.pulse_end = f.get_long("experiment", "pulse_end", c.pulse_end);
        if (c.threads < 1) throw config_error("experiment.threads must be positive");
        if (c.trials < 1) throw config_error("experiment.trials must be positive");
        if (c.ladder_count < 1) throw config_error("experiment.ladder_count must be positive");
        return c;
    }
};

}  // namespace omm
