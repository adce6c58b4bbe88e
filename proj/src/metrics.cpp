#include "podnn/metrics.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace podnn {

namespace {

constexpr const char* kSchemaTag = "# podnn-metrics/1";

std::string fmt_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

double parse_double(const std::string& s) {
    if (s == "nan" || s == "-nan") return std::nan("");
    double v = 0.0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc{}) throw std::runtime_error("metrics: bad numeric field '" + s + "'");
    return v;
}

int64_t parse_int(const std::string& s) {
    int64_t v = 0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc{}) throw std::runtime_error("metrics: bad integer field '" + s + "'");
    return v;
}

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            out.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(ch);
        }
    }
    out.push_back(cur);
    return out;
}

} // namespace

void write_metrics_csv(const std::string& path, const MetricsTable& table) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out.is_open()) throw std::runtime_error("metrics: cannot write " + path);
    const int e_n = table.n_experts, m_n = table.n_mechanisms;
    out << kSchemaTag << " experts=" << e_n << " mechanisms=" << m_n << "\n";

    out << "iteration,phase";
    for (int e = 0; e < e_n; ++e)
        for (int m = 0; m < m_n; ++m) out << ",score_e" << e << "_m" << m;
    for (int e = 0; e < e_n; ++e)
        for (int m = 0; m < m_n; ++m) out << ",claims_e" << e << "_m" << m;
    for (int e = 0; e < e_n; ++e) out << ",spread_e" << e;
    for (int e = 0; e < e_n; ++e) out << ",score_std_e" << e;
    for (int e = 0; e < e_n; ++e) out << ",majority_e" << e;
    out << ",disc_objective,orth_residual,degenerate_skips"
        << ",reloc_donor,reloc_recipient,reloc_moved\n";

    for (const MetricsRecord& r : table.rows) {
        out << r.iteration << ',' << (r.standalone ? "standalone" : "competitive");
        for (int e = 0; e < e_n; ++e)
            for (int m = 0; m < m_n; ++m) out << ',' << fmt_double(r.mean_score[e][m]);
        for (int e = 0; e < e_n; ++e)
            for (int m = 0; m < m_n; ++m) out << ',' << r.claims[e][m];
        for (int e = 0; e < e_n; ++e) out << ',' << fmt_double(r.spread[e]);
        for (int e = 0; e < e_n; ++e) out << ',' << fmt_double(r.score_std[e]);
        for (int e = 0; e < e_n; ++e) out << ',' << r.majority[e];
        out << ',' << fmt_double(r.disc_objective) << ',' << fmt_double(r.orth_residual) << ','
            << r.degenerate_skips << ',' << r.reloc.donor << ',' << r.reloc.recipient << ','
            << r.reloc.moved << '\n';
    }
    if (!out.good()) throw std::runtime_error("metrics: write failed: " + path);
}

MetricsTable read_metrics_csv(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in.is_open()) throw std::runtime_error("metrics: cannot open " + path);

    MetricsTable table;
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("metrics: empty file " + path);
    {
        std::istringstream hdr(line);
        std::string tag1, tag2, kv;
        hdr >> tag1 >> tag2;
        if (tag1 + " " + tag2 != kSchemaTag) {
            throw std::runtime_error("metrics: unknown schema line '" + line + "'");
        }
        while (hdr >> kv) {
            const auto eq = kv.find('=');
            if (eq == std::string::npos) continue;
            const std::string key = kv.substr(0, eq);
            const int value = static_cast<int>(parse_int(kv.substr(eq + 1)));
            if (key == "experts") table.n_experts = value;
            if (key == "mechanisms") table.n_mechanisms = value;
        }
    }
    if (table.n_experts <= 0 || table.n_mechanisms <= 0) {
        throw std::runtime_error("metrics: schema line missing experts/mechanisms");
    }
    if (!std::getline(in, line)) throw std::runtime_error("metrics: missing column header");

    const int e_n = table.n_experts, m_n = table.n_mechanisms;
    const size_t expected_cols = 2 + 2 * static_cast<size_t>(e_n) * m_n + 3 * e_n + 6;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto f = split_csv(line);
        if (f.size() != expected_cols) {
            throw std::runtime_error("metrics: row has " + std::to_string(f.size()) +
                                     " fields, expected " + std::to_string(expected_cols));
        }
        MetricsRecord r;
        size_t i = 0;
        r.iteration = parse_int(f[i++]);
        r.standalone = f[i++] == "standalone";
        r.mean_score.assign(e_n, std::vector<double>(m_n));
        for (int e = 0; e < e_n; ++e)
            for (int m = 0; m < m_n; ++m) r.mean_score[e][m] = parse_double(f[i++]);
        r.claims.assign(e_n, std::vector<int>(m_n));
        for (int e = 0; e < e_n; ++e)
            for (int m = 0; m < m_n; ++m) r.claims[e][m] = static_cast<int>(parse_int(f[i++]));
        r.spread.resize(e_n);
        for (int e = 0; e < e_n; ++e) r.spread[e] = parse_double(f[i++]);
        r.score_std.resize(e_n);
        for (int e = 0; e < e_n; ++e) r.score_std[e] = parse_double(f[i++]);
        r.majority.resize(e_n);
        for (int e = 0; e < e_n; ++e) r.majority[e] = static_cast<int>(parse_int(f[i++]));
        r.disc_objective = parse_double(f[i++]);
        r.orth_residual = parse_double(f[i++]);
        r.degenerate_skips = parse_int(f[i++]);
        r.reloc.donor = static_cast<int>(parse_int(f[i++]));
        r.reloc.recipient = static_cast<int>(parse_int(f[i++]));
        r.reloc.moved = static_cast<int>(parse_int(f[i++]));
        table.rows.push_back(std::move(r));
    }
    return table;
}

void write_timing_csv(const std::string& path, const MetricsTable& table) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out.is_open()) throw std::runtime_error("metrics: cannot write " + path);
    out << "iteration,phase,wall_ms\n";
    for (const MetricsRecord& r : table.rows) {
        out << r.iteration << ',' << (r.standalone ? "standalone" : "competitive") << ','
            << fmt_double(r.wall_ms) << '\n';
    }
}

bool majority_mapping_valid(const std::vector<int>& majority) {
    for (size_t e = 0; e < majority.size(); ++e) {
        if (majority[e] < 0) return false;
        for (size_t f = 0; f < e; ++f) {
            if (majority[f] == majority[e]) return false;
        }
    }
    return true;
}

ConvergenceAnalysis analyze_convergence(const std::vector<MetricsRecord>& rows, int window) {
    StabilityTracker tracker;
    ConvergenceAnalysis result;
    for (const MetricsRecord& r : rows) {
        if (r.standalone) break;  // competitive phase only
        tracker.feed(r.iteration, r.majority, majority_mapping_valid(r.majority));
        result.mapping = r.majority;
    }
    result.converged = tracker.stable(window);
    result.iteration = result.converged ? tracker.last_change() : -1;
    return result;
}

} // namespace podnn
