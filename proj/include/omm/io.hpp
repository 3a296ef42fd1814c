#pragma once

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "omm/metrics.hpp"
#include "omm/solver.hpp"
#include "omm/version.hpp"

namespace omm {

using json = nlohmann::json;

// Shortest representation that round-trips a double; keeps CSV outputs
// byte-stable across reruns while preserving full precision.
inline std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    double back = 0.0;
    std::sscanf(buf, "%lf", &back);
    if (back == v) {
        for (int prec = 12; prec < 17; ++prec) {
            char shorter[40];
            std::snprintf(shorter, sizeof shorter, "%.*g", prec, v);
            std::sscanf(shorter, "%lf", &back);
            if (back == v) return shorter;
        }
    }
    return buf;
}

inline void ensure_dir(const std::string& dir) {
    if (!dir.empty()) std::filesystem::create_directories(dir);
}

inline std::ofstream open_out(const std::string& path) {
    ensure_dir(std::filesystem::path(path).parent_path().string());
    std::ofstream out(path, std::ios::binary);  // binary: no platform newline surprises
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    return out;
}

inline void write_trace_csv(const std::string& path, const iterate_trace& trace) {
    std::ofstream out = open_out(path);
    out << "iter,E0,Emu,L,backtracks,nnz,step_norm,mu\n";
    for (const trace_record& r : trace.records) {
        out << r.iter << ',' << fmt(r.e0) << ',' << fmt(r.e_mu) << ',' << fmt(r.l_used) << ','
            << r.backtracks << ',' << r.nnz << ',' << fmt(r.step_norm) << ',' << fmt(r.mu)
            << '\n';
    }
}

inline void write_convergence_csv(const std::string& path,
                                  const std::vector<convergence_row>& rows) {
    std::ofstream out = open_out(path);
    out << "mu,min_gap_Emu,order1,e0_excess,order2,dist,order3\n";
    auto opt = [](const std::optional<double>& v) { return v ? fmt(*v) : std::string(); };
    for (const convergence_row& r : rows) {
        out << fmt(r.mu) << ',' << fmt(r.min_gap_emu) << ',' << opt(r.order_gap) << ','
            << fmt(r.e0_excess) << ',' << opt(r.order_e0) << ',' << fmt(r.dist) << ','
            << opt(r.order_dist) << '\n';
    }
}

// Plain numeric grid, one matrix row per line; used for entry-activity
// heatmaps where a header would get in the way of matrix readers.
inline void write_matrix_csv(const std::string& path,
                             const Eigen::Matrix<long, Eigen::Dynamic, Eigen::Dynamic>& m) {
    std::ofstream out = open_out(path);
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) out << (j ? "," : "") << m(i, j);
        out << '\n';
    }
}

// Sparse triplet dump of a dense iterate: "rows cols" header, then one
// "row col value" line per nonzero entry in column-major order.
inline void write_matrix_triplets(const std::string& path, const Eigen::MatrixXd& x) {
    std::ofstream out = open_out(path);
    out << x.rows() << ' ' << x.cols() << '\n';
    for (Eigen::Index j = 0; j < x.cols(); ++j)
        for (Eigen::Index i = 0; i < x.rows(); ++i)
            if (x(i, j) != 0.0) out << i << ' ' << j << ' ' << fmt(x(i, j)) << '\n';
}

inline void write_xy_csv(const std::string& path, const std::string& xname,
                         const std::string& yname, const std::vector<double>& x,
                         const std::vector<double>& y) {
    if (x.size() != y.size()) throw std::invalid_argument("write_xy_csv: length mismatch");
    std::ofstream out = open_out(path);
    out << xname << ',' << yname << '\n';
    for (std::size_t i = 0; i < x.size(); ++i) out << fmt(x[i]) << ',' << fmt(y[i]) << '\n';
}

inline std::string timestamp_utc() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    char buf[32];
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

// Record of one CLI invocation: what ran, with which inputs, producing
// which files. Written next to the data so a results directory is
// self-describing.
struct run_manifest {
    std::string command;
    std::string config_path;
    json resolved;  // full parameter set after defaults and overrides
    std::vector<std::uint64_t> seeds;
    std::vector<std::string> outputs;
    std::string started_at, finished_at;

    json to_json() const {
        return json{{"command", command},
                    {"config", config_path},
                    {"resolved", resolved},
                    {"seeds", seeds},
                    {"outputs", outputs},
                    {"started_at", started_at},
                    {"finished_at", finished_at},
                    {"library_version", OMM_VERSION}};
    }

    void write(const std::string& path) const {
        std::ofstream out = open_out(path);
        out << to_json().dump(2) << '\n';
    }
};

inline void write_json(const std::string& path, const json& j) {
    std::ofstream out = open_out(path);
    out << j.dump(2) << '\n';
}

// CSV reader for the plot command. Cells are parsed as numbers where
// possible (NaN otherwise); the raw strings stay available for grouping on
// label columns.
struct csv_table {
    std::vector<std::string> header;
    std::vector<std::vector<double>> rows;
    std::vector<std::vector<std::string>> raw;

    std::optional<std::size_t> column(const std::string& name) const {
        for (std::size_t i = 0; i < header.size(); ++i)
            if (header[i] == name) return i;
        return std::nullopt;
    }
};

inline csv_table read_csv(const std::string& path, bool has_header = true) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open: " + path);
    csv_table t;
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::string cell;
        std::istringstream ls(line);
        while (std::getline(ls, cell, ',')) cells.push_back(cell);
        if (line.back() == ',') cells.push_back("");
        if (first && has_header) {
            t.header = cells;
            first = false;
            continue;
        }
        first = false;
        std::vector<double> row;
        row.reserve(cells.size());
        for (const std::string& c : cells) {
            double v = std::numeric_limits<double>::quiet_NaN();
            if (!c.empty()) {
                try {
                    std::size_t used = 0;
                    v = std::stod(c, &used);
                    if (used != c.size()) v = std::numeric_limits<double>::quiet_NaN();
                } catch (const std::exception&) {
                }
            }
            row.push_back(v);
        }
        t.rows.push_back(std::move(row));
        t.raw.push_back(std::move(cells));
    }
    return t;
}

}  // namespace omm
