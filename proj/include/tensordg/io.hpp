#pragma once

#include <algorithm>
#include <cerrno>
#include <cstdlib>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "completion.hpp"
#include "errors.hpp"
#include "experiment.hpp"
#include "index_sets.hpp"
#include "regress.hpp"
#include "simgen.hpp"
#include "tensor.hpp"

namespace tensordg {

using json = nlohmann::json;

namespace detail {

inline void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& what) {
    if (!j.is_object()) throw ConfigError(what + " must be a JSON object");
    for (const auto& [key, value] : j.items()) {
        if (!allowed.contains(key)) throw ConfigError(what + ": unknown key '" + key + "'");
    }
}

template <class T>
void read_field(const json& j, const char* key, T& out, const std::string& what) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigError(what + ": bad value for '" + key + "': " + e.what());
    }
}

inline json matrix_to_json(const Matrix& m) {
    json rows = json::array();
    for (Index i = 0; i < m.rows(); ++i) {
        json row = json::array();
        for (Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
        rows.push_back(std::move(row));
    }
    return rows;
}

}  // namespace detail

// ---- observation pattern ----

/// {"space": [...], "body": [[...], ...], "arms": [{"S": [[...], ...]}, ...], "extra": [[...], ...]}
inline json pattern_to_json(const ObservationPattern& p) {
    json j;
    j["space"] = p.space();
    json body = json::array();
    json arms = json::array();
    std::vector<std::vector<Index>> bodies;
    std::vector<std::vector<std::vector<Index>>> gens;
    for (Index t = 1; t <= static_cast<Index>(p.q()); ++t) {
        body.push_back(p.body(t));
        arms.push_back(json{{"S", p.arm_generators(t)}});
        bodies.push_back(p.body(t));
        gens.push_back(p.arm_generators(t));
    }
    j["body"] = body;
    j["arms"] = arms;
    const auto declared = ObservationPattern::build(p.space(), bodies, gens);
    json extra = json::array();
    for (const auto& g : p.observed()) {
        if (!declared.is_observed(g)) extra.push_back(g.coords);
    }
    if (!extra.empty()) j["extra"] = extra;
    return j;
}

inline ObservationPattern pattern_from_json(const json& j) {
    detail::check_keys(j, {"space", "body", "arms", "extra"}, "pattern");
    if (!j.contains("space") || !j.contains("body") || !j.contains("arms")) {
        throw ConfigError("pattern needs 'space', 'body' and 'arms'");
    }
    std::vector<Index> space;
    std::vector<std::vector<Index>> body;
    std::vector<std::vector<std::vector<Index>>> arms;
    detail::read_field(j, "space", space, "pattern");
    detail::read_field(j, "body", body, "pattern");
    if (!j.at("arms").is_array()) throw ConfigError("pattern: 'arms' must be an array");
    for (const auto& a : j.at("arms")) {
        detail::check_keys(a, {"S"}, "pattern arm");
        std::vector<std::vector<Index>> s;
        detail::read_field(a, "S", s, "pattern arm");
        arms.push_back(std::move(s));
    }
    auto p = ObservationPattern::build(std::move(space), std::move(body), std::move(arms));
    if (j.contains("extra")) {
        std::vector<std::vector<Index>> extra;
        detail::read_field(j, "extra", extra, "pattern");
        for (auto& g : extra) {
            if (g.size() != p.q()) throw ConfigError("pattern: extra group has the wrong number of coordinates");
            p.add_observed(GroupIndex(std::move(g)));
        }
    }
    return p;
}

// ---- configs ----

inline json scenario_to_json(const ScenarioConfig& c) {
    return json{{"dims", c.dims},
                {"ranks", c.ranks},
                {"body_sizes", c.body_sizes},
                {"arm_sizes", c.arm_sizes},
                {"n", c.n},
                {"n_target", c.n_target},
                {"noise_std", c.noise_std},
                {"covariance", c.covariance == DesignCovariance::ar1 ? "ar1" : "identity"},
                {"rho", c.rho},
                {"delta_sparsity", c.delta_sparsity},
                {"delta_std", c.delta_std},
                {"signal_scale", c.signal_scale},
                {"balanced_core", c.balanced_core},
                {"min_block_ratio", c.min_block_ratio},
                {"max_draws", c.max_draws},
                {"seed", c.seed}};
}

inline ScenarioConfig scenario_from_json(const json& j) {
    const std::string what = "scenario config";
    detail::check_keys(j, {"dims", "ranks", "body_sizes", "arm_sizes", "n", "n_target", "noise_std", "covariance", "rho",
                           "delta_sparsity", "delta_std", "signal_scale", "balanced_core", "min_block_ratio",
                           "max_draws", "seed"},
                       what);
    ScenarioConfig c;
    detail::read_field(j, "dims", c.dims, what);
    detail::read_field(j, "ranks", c.ranks, what);
    detail::read_field(j, "body_sizes", c.body_sizes, what);
    detail::read_field(j, "arm_sizes", c.arm_sizes, what);
    detail::read_field(j, "n", c.n, what);
    detail::read_field(j, "n_target", c.n_target, what);
    detail::read_field(j, "noise_std", c.noise_std, what);
    std::string cov = c.covariance == DesignCovariance::ar1 ? "ar1" : "identity";
    detail::read_field(j, "covariance", cov, what);
    if (cov == "identity") c.covariance = DesignCovariance::identity;
    else if (cov == "ar1") c.covariance = DesignCovariance::ar1;
    else throw ConfigError(what + ": covariance must be 'identity' or 'ar1'");
    detail::read_field(j, "rho", c.rho, what);
    detail::read_field(j, "delta_sparsity", c.delta_sparsity, what);
    detail::read_field(j, "delta_std", c.delta_std, what);
    detail::read_field(j, "signal_scale", c.signal_scale, what);
    detail::read_field(j, "balanced_core", c.balanced_core, what);
    detail::read_field(j, "min_block_ratio", c.min_block_ratio, what);
    detail::read_field(j, "max_draws", c.max_draws, what);
    detail::read_field(j, "seed", c.seed, what);
    c.validate();
    return c;
}

inline json experiment_to_json(const ExperimentConfig& c) {
    return json{{"scenario", scenario_to_json(c.scenario)},
                {"cell_param", c.cell_param},
                {"cell_values", c.cell_values},
                {"replications", c.replications},
                {"methods", c.methods},
                {"seed", c.seed},
                {"workers", c.workers},
                {"threshold_c", c.threshold_c},
                {"split", c.split},
                {"transfer_c0", c.transfer_c0},
                {"transfer_cv", c.transfer_cv}};
}

inline ExperimentConfig experiment_from_json(const json& j) {
    const std::string what = "experiment config";
    detail::check_keys(j, {"scenario", "cell_param", "cell_values", "replications", "methods", "seed", "workers",
                           "threshold_c", "split", "transfer_c0", "transfer_cv"},
                       what);
    ExperimentConfig c;
    if (j.contains("scenario")) c.scenario = scenario_from_json(j.at("scenario"));
    detail::read_field(j, "cell_param", c.cell_param, what);
    detail::read_field(j, "cell_values", c.cell_values, what);
    detail::read_field(j, "replications", c.replications, what);
    detail::read_field(j, "methods", c.methods, what);
    detail::read_field(j, "seed", c.seed, what);
    detail::read_field(j, "workers", c.workers, what);
    detail::read_field(j, "threshold_c", c.threshold_c, what);
    detail::read_field(j, "split", c.split, what);
    detail::read_field(j, "transfer_c0", c.transfer_c0, what);
    detail::read_field(j, "transfer_cv", c.transfer_cv, what);
    c.validate();
    return c;
}

inline json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open " + path);
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError(path + ": " + e.what());
    }
}

// ---- model sidecar ----

inline json model_to_json(const CompletionModel& m) {
    json j;
    j["pattern"] = pattern_to_json(m.pattern);
    j["ranks"] = m.ranks;
    json bases = json::array(), loadings = json::array(), modes = json::array();
    for (std::size_t t = 0; t < m.bases.size(); ++t) {
        bases.push_back(detail::matrix_to_json(m.bases[t]));
        loadings.push_back(detail::matrix_to_json(m.loadings[t]));
    }
    for (const auto& s : m.spectral.modes) {
        modes.push_back(json{{"mode", s.mode},
                             {"rank", s.rank},
                             {"threshold", s.threshold},
                             {"block_size", s.block_size},
                             {"eigenvalues", std::vector<double>(s.eigenvalues.data(), s.eigenvalues.data() + s.eigenvalues.size())},
                             {"eigen_gap", s.gap},
                             {"eigen_ratio_rank", s.ratio_rank},
                             {"floored", s.floored},
                             {"overridden", s.overridden}});
    }
    json checks = json::array();
    for (const auto& c : m.generalizability.modes) {
        checks.push_back(json{{"mode", c.mode}, {"joint_rank", c.joint_rank}, {"arm_rank", c.arm_rank}, {"consistent", c.consistent}});
    }
    j["bases"] = bases;
    j["loadings"] = loadings;
    j["diagnostics"] = json{{"spectral", modes},
                            {"conditions", m.conditions},
                            {"generalizability", m.generalizability.verdict()},
                            {"mode_checks", checks},
                            {"warnings", m.warnings}};
    return j;
}

// ---- CSV ----

namespace detail {

/// Split one CSV line; double quotes group fields and "" escapes a quote.
inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string field;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                field += '"';
                ++i;
            } else if (c == '"') {
                quoted = false;
            } else {
                field += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            out.push_back(std::move(field));
            field.clear();
        } else if (c != '\r') {
            field += c;
        }
    }
    out.push_back(std::move(field));
    return out;
}

inline bool parse_double(const std::string& s, double& out) {
    if (s.empty()) return false;
    errno = 0;
    char* end = nullptr;
    out = std::strtod(s.c_str(), &end);
    return errno == 0 && end == s.c_str() + s.size();
}

inline bool parse_level(const std::string& s, Index& out) {
    if (s.empty()) return false;
    errno = 0;
    char* end = nullptr;
    const long long v = std::strtoll(s.c_str(), &end, 10);
    if (errno != 0 || end != s.c_str() + s.size() || v < 1) return false;
    out = static_cast<Index>(v);
    return true;
}

}  // namespace detail

/// Header "g1..gq,y,x1..xp", then one row per sample, groups in key order.
inline void write_dataset_csv(std::ostream& os, const GroupedDataset& ds) {
    if (ds.empty()) throw DimensionError("write_dataset_csv: dataset is empty");
    const std::size_t q = ds.begin()->first.size();
    for (std::size_t k = 0; k < q; ++k) os << 'g' << k + 1 << ',';
    os << 'y';
    for (Index j = 0; j < ds.features(); ++j) os << ",x" << j + 1;
    os << '\n';
    for (const auto& [g, d] : ds) {
        for (Index i = 0; i < d.samples(); ++i) {
            for (Index v : g.coords) os << v << ',';
            os << format_number(d.y[i]);
            for (Index j = 0; j < d.X.cols(); ++j) os << ',' << format_number(d.X(i, j));
            os << '\n';
        }
    }
}

struct CsvSchema {
    std::vector<std::string> group_cols;
    std::string response_col;
    std::vector<std::string> feature_cols;  ///< empty: every remaining column in file order
};

struct IngestResult {
    GroupedDataset dataset;
    std::vector<Index> space;                      ///< levels per group column
    std::vector<std::vector<std::string>> levels;  ///< per column: code k names levels[k-1]; empty when integer-coded
    std::map<GroupIndex, Index> counts;
};

/**
 * Parse a dataset CSV. A group column whose values are all positive integers
 * keeps those codes; otherwise its values are coded 1, 2, ... in order of
 * first appearance.
 */
inline IngestResult ingest_csv(std::istream& in, const CsvSchema& schema) {
    std::string line;
    if (!std::getline(in, line) || line.find_first_not_of(" \t\r") == std::string::npos) {
        throw ConfigError("CSV input is empty");
    }
    const auto header = detail::split_csv_line(line);
    auto column = [&](const std::string& name) -> std::size_t {
        for (std::size_t k = 0; k < header.size(); ++k) {
            if (header[k] == name) return k;
        }
        throw ConfigError("CSV has no column '" + name + "'");
    };
    if (schema.group_cols.empty()) throw ConfigError("schema needs at least one group column");
    std::vector<std::size_t> gcols, fcols;
    for (const auto& c : schema.group_cols) gcols.push_back(column(c));
    const std::size_t ycol = column(schema.response_col);
    if (schema.feature_cols.empty()) {
        for (std::size_t k = 0; k < header.size(); ++k) {
            if (k != ycol && std::find(gcols.begin(), gcols.end(), k) == gcols.end()) fcols.push_back(k);
        }
    } else {
        for (const auto& c : schema.feature_cols) fcols.push_back(column(c));
    }
    if (fcols.empty()) throw ConfigError("CSV has no feature columns");

    std::vector<std::vector<std::string>> rows;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        auto fields = detail::split_csv_line(line);
        if (fields.size() != header.size()) {
            throw ConfigError("CSV line " + std::to_string(line_no) + " has " + std::to_string(fields.size()) +
                              " fields, header has " + std::to_string(header.size()));
        }
        rows.push_back(std::move(fields));
    }
    if (rows.empty()) throw ConfigError("CSV has a header but no data rows");

    IngestResult out;
    const std::size_t q = gcols.size();
    out.levels.resize(q);
    out.space.assign(q, 0);
    std::vector<std::vector<Index>> codes(rows.size(), std::vector<Index>(q));
    for (std::size_t k = 0; k < q; ++k) {
        bool integer = true;
        Index v = 0;
        for (const auto& r : rows) integer = integer && detail::parse_level(r[gcols[k]], v);
        std::map<std::string, Index> seen;
        for (std::size_t i = 0; i < rows.size(); ++i) {
            const std::string& s = rows[i][gcols[k]];
            if (integer) {
                detail::parse_level(s, v);
            } else {
                auto it = seen.find(s);
                if (it == seen.end()) {
                    out.levels[k].push_back(s);
                    it = seen.emplace(s, static_cast<Index>(out.levels[k].size())).first;
                }
                v = it->second;
            }
            codes[i][k] = v;
            out.space[k] = std::max(out.space[k], v);
        }
    }

    std::map<GroupIndex, std::vector<std::size_t>> members;
    for (std::size_t i = 0; i < rows.size(); ++i) members[GroupIndex(codes[i])].push_back(i);
    out.dataset = GroupedDataset(static_cast<Index>(fcols.size()));
    for (const auto& [g, idx] : members) {
        Matrix X(static_cast<Index>(idx.size()), static_cast<Index>(fcols.size()));
        Vector y(static_cast<Index>(idx.size()));
        for (std::size_t r = 0; r < idx.size(); ++r) {
            const auto& fields = rows[idx[r]];
            double v = 0.0;
            if (!detail::parse_double(fields[ycol], v)) {
                throw ConfigError("non-numeric response '" + fields[ycol] + "' in data row " + std::to_string(idx[r] + 1));
            }
            y[static_cast<Index>(r)] = v;
            for (std::size_t j = 0; j < fcols.size(); ++j) {
                if (!detail::parse_double(fields[fcols[j]], v)) {
                    throw ConfigError("non-numeric feature '" + fields[fcols[j]] + "' in column " + header[fcols[j]] +
                                      ", data row " + std::to_string(idx[r] + 1));
                }
                X(static_cast<Index>(r), static_cast<Index>(j)) = v;
            }
        }
        out.counts[g] = static_cast<Index>(idx.size());
        out.dataset.add(g, std::move(X), std::move(y));
    }
    return out;
}

/// Dataset CSV in the standard layout: q group columns, then the response, then features.
inline IngestResult read_dataset_csv(std::istream& in, std::size_t q) {
    std::string line;
    if (!std::getline(in, line) || line.find_first_not_of(" \t\r") == std::string::npos) {
        throw ConfigError("CSV input is empty");
    }
    const auto header = detail::split_csv_line(line);
    if (header.size() < q + 2) throw ConfigError("CSV needs " + std::to_string(q) + " group columns, a response and features");
    CsvSchema schema;
    schema.group_cols.assign(header.begin(), header.begin() + static_cast<std::ptrdiff_t>(q));
    schema.response_col = header[q];
    schema.feature_cols.assign(header.begin() + static_cast<std::ptrdiff_t>(q) + 1, header.end());
    std::stringstream rest;
    rest << line << '\n' << in.rdbuf();
    rest.clear();
    return ingest_csv(rest, schema);
}

}  // namespace tensordg
