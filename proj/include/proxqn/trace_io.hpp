#pragma once

#include <proxqn/common.hpp>
#include <proxqn/outer.hpp>
#include <proxqn/problem.hpp>

#include <json.hpp>

#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#ifndef PROXQN_VERSION
#define PROXQN_VERSION "0.0.0"
#endif

namespace proxqn {

inline constexpr const char* trace_columns[] = {"k",           "F",       "rel_gap",  "subgrad_inf",
                                                "gamma_or_mu", "backtracks", "inner_steps", "ws_size",
                                                "nnz",         "elapsed_seconds", "model_decrease"};

/// Ordered key/value run metadata written ahead of the trace rows.
struct TraceHeader
{
    std::vector<std::pair<std::string, std::string>> fields;

    void set(const std::string& key, std::string value)
    {
        for (auto& [k, v] : fields)
            if (k == key) {
                v = std::move(value);
                return;
            }
        fields.emplace_back(key, std::move(value));
    }

    const std::string* find(const std::string& key) const
    {
        for (const auto& [k, v] : fields)
            if (k == key) return &v;
        return nullptr;
    }

    std::string get(const std::string& key, const std::string& fallback = "") const
    {
        const auto* v = find(key);
        return v ? *v : fallback;
    }
};

inline std::string budget_to_string(const BudgetRule& rule)
{
    if (rule.mode == BudgetMode::paper) return "paper";
    return "linear:" + detail::format_double(rule.slope) + "," + detail::format_double(rule.intercept);
}

/// "paper" or "linear:a,b".
inline BudgetRule parse_budget(const std::string& s)
{
    if (s == "paper") return {};
    const std::string prefix = "linear:";
    if (s.rfind(prefix, 0) == 0) {
        const std::string rest = s.substr(prefix.size());
        const auto comma = rest.find(',');
        BudgetRule r{BudgetMode::linear, 0.0, 0.0};
        if (comma != std::string::npos && detail::parse_double(rest.substr(0, comma), r.slope) &&
            detail::parse_double(rest.substr(comma + 1), r.intercept))
            return r;
    }
    throw Error("budget must be 'paper' or 'linear:a,b', got '" + s + "'");
}

inline TraceHeader make_header(const SolverConfig& c, std::string_view loss, double lambda, const Dataset& data)
{
    TraceHeader h;
    h.set("version", PROXQN_VERSION);
    h.set("loss", std::string(loss));
    h.set("lambda", detail::format_double(lambda));
    h.set("samples", std::to_string(data.rows));
    h.set("features", std::to_string(data.cols));
    h.set("nnz", std::to_string(data.nnz()));
    char hash[32];
    std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(data.fingerprint()));
    h.set("dataset_hash", hash);
    h.set("rho", detail::format_double(c.rho));
    h.set("beta", detail::format_double(c.beta));
    h.set("mu_bar", detail::format_double(c.mu_bar));
    h.set("memory", std::to_string(c.memory));
    h.set("inner", std::string(to_string(c.inner)));
    h.set("accept", std::string(to_string(c.acceptance)));
    h.set("schedule", std::string(to_string(c.schedule)));
    h.set("armijo_sigma", detail::format_double(c.armijo_sigma));
    h.set("budget", budget_to_string(c.budget));
    h.set("tol", detail::format_double(c.tol));
    h.set("max_iter", std::to_string(c.max_iter));
    h.set("max_backtracks", std::to_string(c.max_backtracks));
    h.set("seed", std::to_string(c.seed));
    h.set("rng", SplitMix64::algorithm_id);
    h.set("fstar", c.fstar ? detail::format_double(*c.fstar) : "none");
    return h;
}

// -----------------------------------------------------------------------
// CSV
// -----------------------------------------------------------------------

inline std::string format_record_csv(const IterationRecord& r)
{
    using detail::format_double;
    std::string s = std::to_string(r.k);
    for (const std::string& f :
         {format_double(r.F), format_double(r.rel_gap), format_double(r.subgrad_inf), format_double(r.gamma_or_mu),
          std::to_string(r.backtracks), std::to_string(r.inner_steps), std::to_string(r.ws_size),
          std::to_string(r.nnz), format_double(r.elapsed_seconds), format_double(r.model_decrease)}) {
        s += ',';
        s += f;
    }
    return s;
}

inline void write_trace_csv(std::ostream& out, const TraceHeader& h, const std::vector<IterationRecord>& trace)
{
    for (const auto& [k, v] : h.fields) out << "# " << k << '=' << v << '\n';
    bool first = true;
    for (const char* c : trace_columns) {
        out << (first ? "" : ",") << c;
        first = false;
    }
    out << '\n';
    for (const auto& r : trace) out << format_record_csv(r) << '\n';
}

// -----------------------------------------------------------------------
// JSONL
// -----------------------------------------------------------------------

inline nlohmann::ordered_json record_to_json(const IterationRecord& r)
{
    nlohmann::ordered_json j;
    j["k"] = r.k;
    j["F"] = r.F;
    j["rel_gap"] = std::isnan(r.rel_gap) ? nlohmann::ordered_json(nullptr) : nlohmann::ordered_json(r.rel_gap);
    j["subgrad_inf"] = r.subgrad_inf;
    j["gamma_or_mu"] = r.gamma_or_mu;
    j["backtracks"] = r.backtracks;
    j["inner_steps"] = r.inner_steps;
    j["ws_size"] = r.ws_size;
    j["nnz"] = r.nnz;
    j["elapsed_seconds"] = r.elapsed_seconds;
    j["model_decrease"] = r.model_decrease;
    return j;
}

/// First line {"header": {...}}, then one object per record.
inline void write_trace_jsonl(std::ostream& out, const TraceHeader& h, const std::vector<IterationRecord>& trace)
{
    nlohmann::ordered_json head = nlohmann::ordered_json::object();
    for (const auto& [k, v] : h.fields) head[k] = v;
    out << nlohmann::ordered_json{{"header", head}}.dump() << '\n';
    for (const auto& r : trace) out << record_to_json(r).dump() << '\n';
}

// -----------------------------------------------------------------------
// Reading
// -----------------------------------------------------------------------

struct TraceFile
{
    TraceHeader header;
    std::vector<IterationRecord> rows;
};

namespace detail {

inline double json_number(const nlohmann::json& j, const char* key)
{
    const auto it = j.find(key);
    if (it == j.end()) throw Error(std::string("trace: missing field ") + key);
    if (it->is_null()) return std::numeric_limits<double>::quiet_NaN();
    return it->get<double>();
}

inline IterationRecord record_from_fields(const std::vector<std::string>& f, std::size_t line)
{
    if (f.size() != std::size(trace_columns)) throw ParseError("trace row has the wrong column count", line);
    auto num = [&](std::size_t i) {
        double v;
        if (!parse_double(trim(f[i]), v)) throw ParseError("bad number '" + f[i] + "'", line);
        return v;
    };
    auto count = [&](std::size_t i) {
        long long v;
        if (!parse_index(trim(f[i]), v) || v < 0) throw ParseError("bad count '" + f[i] + "'", line);
        return static_cast<std::size_t>(v);
    };
    IterationRecord r;
    r.k = count(0);
    r.F = num(1);
    r.rel_gap = num(2);
    r.subgrad_inf = num(3);
    r.gamma_or_mu = num(4);
    r.backtracks = static_cast<int>(count(5));
    r.inner_steps = count(6);
    r.ws_size = count(7);
    r.nnz = count(8);
    r.elapsed_seconds = num(9);
    r.model_decrease = num(10);
    return r;
}

} // namespace detail

/// Reads a CSV or JSONL trace (format sniffed from the first non-blank character).
inline TraceFile read_trace(std::istream& in)
{
    TraceFile t;
    std::string line;
    std::size_t lineno = 0;
    bool saw_columns = false;
    bool jsonl = false;
    bool sniffed = false;
    while (std::getline(in, line)) {
        ++lineno;
        const auto s = detail::trim(line);
        if (s.empty()) continue;
        if (!sniffed) {
            jsonl = s.front() == '{';
            sniffed = true;
        }
        if (jsonl) {
            nlohmann::json j;
            try {
                j = nlohmann::json::parse(s);
            } catch (const nlohmann::json::exception& e) {
                throw ParseError(e.what(), lineno);
            }
            if (j.contains("header")) {
                for (const auto& [k, v] : j["header"].items()) t.header.set(k, v.is_string() ? v.get<std::string>() : v.dump());
                continue;
            }
            try {
                IterationRecord r;
                r.k = j.at("k").get<std::size_t>();
                r.F = detail::json_number(j, "F");
                r.rel_gap = detail::json_number(j, "rel_gap");
                r.subgrad_inf = detail::json_number(j, "subgrad_inf");
                r.gamma_or_mu = detail::json_number(j, "gamma_or_mu");
                r.backtracks = j.at("backtracks").get<int>();
                r.inner_steps = j.at("inner_steps").get<std::size_t>();
                r.ws_size = j.at("ws_size").get<std::size_t>();
                r.nnz = j.at("nnz").get<std::size_t>();
                r.elapsed_seconds = detail::json_number(j, "elapsed_seconds");
                r.model_decrease = detail::json_number(j, "model_decrease");
                t.rows.push_back(r);
            } catch (const nlohmann::json::exception& e) {
                throw ParseError(e.what(), lineno);
            }
            continue;
        }
        if (s.front() == '#') {
            const auto body = detail::trim(s.substr(1));
            const auto eq = body.find('=');
            if (eq != std::string_view::npos)
                t.header.set(std::string(body.substr(0, eq)), std::string(body.substr(eq + 1)));
            continue;
        }
        std::vector<std::string> fields;
        std::stringstream ss{std::string(s)};
        std::string cell;
        while (std::getline(ss, cell, ',')) fields.push_back(cell);
        if (!saw_columns) {
            if (fields.size() != std::size(trace_columns) || detail::trim(fields[0]) != "k")
                throw ParseError("trace: expected the column header line", lineno);
            saw_columns = true;
            continue;
        }
        t.rows.push_back(detail::record_from_fields(fields, lineno));
    }
    return t;
}

inline TraceFile load_trace(const std::string& path)
{
    std::ifstream in(path);
    if (!in) throw Error("cannot open trace " + path);
    return read_trace(in);
}

// -----------------------------------------------------------------------
// Reference solution file
// -----------------------------------------------------------------------

struct OracleFile
{
    double fstar = 0.0;
    bool certified = false;
    double subgrad_inf = 0.0;
    std::size_t steps = 0;
    double lambda = 0.0;
    std::string loss;
    std::string dataset_hash;
    Vector x;
};

inline void write_oracle(std::ostream& out, const OracleFile& o)
{
    nlohmann::ordered_json j;
    j["fstar"] = o.fstar;
    j["certified"] = o.certified;
    j["subgrad_inf"] = o.subgrad_inf;
    j["steps"] = o.steps;
    j["lambda"] = o.lambda;
    j["loss"] = o.loss;
    j["dataset_hash"] = o.dataset_hash;
    j["x"] = std::vector<double>(o.x.data(), o.x.data() + o.x.size());
    out << j.dump(1) << '\n';
}

inline OracleFile read_oracle(std::istream& in)
{
    OracleFile o;
    try {
        const auto j = nlohmann::json::parse(in);
        o.fstar = j.at("fstar").get<double>();
        o.certified = j.value("certified", false);
        o.subgrad_inf = j.value("subgrad_inf", 0.0);
        o.steps = j.value("steps", std::size_t{0});
        o.lambda = j.value("lambda", 0.0);
        o.loss = j.value("loss", std::string{});
        o.dataset_hash = j.value("dataset_hash", std::string{});
        const auto x = j.value("x", std::vector<double>{});
        o.x = Vector::Map(x.data(), static_cast<Index>(x.size()));
    } catch (const nlohmann::json::exception& e) {
        throw Error(std::string("oracle file: ") + e.what());
    }
    return o;
}

inline OracleFile load_oracle(const std::string& path)
{
    std::ifstream in(path);
    if (!in) throw Error("cannot open oracle file " + path);
    return read_oracle(in);
}

} // namespace proxqn
