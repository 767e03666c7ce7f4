#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "baselines.hpp"
#include "completion.hpp"
#include "errors.hpp"
#include "metrics.hpp"
#include "simgen.hpp"
#include "transfer.hpp"

namespace tensordg {

inline const std::vector<std::string>& known_methods() {
    static const std::vector<std::string> m{"ols", "maximin", "metalm", "tensordg", "tensortl"};
    return m;
}

inline const std::vector<std::string>& known_cell_params() {
    static const std::vector<std::string> c{"none", "rank", "arm_size", "body_size", "n", "n_target", "delta_sparsity", "noise_std"};
    return c;
}

struct ExperimentConfig {
    ScenarioConfig scenario;
    std::string cell_param = "none";
    std::vector<double> cell_values{0.0};
    int replications = 100;
    std::vector<std::string> methods{"ols", "maximin", "tensordg"};
    std::uint64_t seed = 1;
    int workers = 1;
    double threshold_c = 1.0;
    bool split = false;
    double transfer_c0 = 2.0;
    bool transfer_cv = false;

    void validate() const {
        scenario.validate();
        if (replications < 1) throw ConfigError("replications must be positive");
        if (methods.empty()) throw ConfigError("method list is empty");
        for (const auto& m : methods) {
            if (std::find(known_methods().begin(), known_methods().end(), m) == known_methods().end()) {
                throw ConfigError("unknown method '" + m + "'");
            }
        }
        if (std::find(known_cell_params().begin(), known_cell_params().end(), cell_param) == known_cell_params().end()) {
            throw ConfigError("unknown cell parameter '" + cell_param + "'");
        }
        if (cell_values.empty()) throw ConfigError("cell_values is empty");
        if (workers < 1) throw ConfigError("workers must be positive");
    }
};

/// Scenario of one experiment cell.
inline ScenarioConfig cell_scenario(const ExperimentConfig& cfg, double value) {
    ScenarioConfig s = cfg.scenario;
    const auto as_index = [&] {
        if (value != std::floor(value)) throw ConfigError(cfg.cell_param + " needs integer values");
        return static_cast<Index>(value);
    };
    if (cfg.cell_param == "rank") {
        const Index r = as_index();
        for (std::size_t t = 1; t < s.ranks.size(); ++t) s.ranks[t] = r;
        s.ranks[0] = 2 * r;
    } else if (cfg.cell_param == "arm_size") {
        std::fill(s.arm_sizes.begin(), s.arm_sizes.end(), as_index());
    } else if (cfg.cell_param == "body_size") {
        std::fill(s.body_sizes.begin(), s.body_sizes.end(), as_index());
    } else if (cfg.cell_param == "n") {
        s.n = as_index();
    } else if (cfg.cell_param == "n_target") {
        s.n_target = as_index();
    } else if (cfg.cell_param == "delta_sparsity") {
        s.delta_sparsity = as_index();
    } else if (cfg.cell_param == "noise_std") {
        s.noise_std = value;
    }
    s.validate();
    return s;
}

/// One (cell, replication, method) row; absent metrics are not applicable.
struct MetricsRecord {
    std::string cell_param;
    double cell_value = 0.0;
    int rep = 0;
    std::string method;
    std::optional<double> al2e;
    std::optional<double> adge;
    std::optional<double> tle;
    bool failed = false;
    std::string error;
    double seconds = 0.0;
};

struct SummaryRow {
    std::string cell_param;
    double cell_value = 0.0;
    std::string method;
    std::optional<double> al2e_mean, al2e_se, adge_mean, adge_se, tle_mean, tle_se;
    int succeeded = 0;
    int failed = 0;
    double seconds_mean = 0.0;
};

struct MetricsTable {
    std::vector<MetricsRecord> records;  ///< ordered by (cell, replication, method)
    std::vector<SummaryRow> summaries;   ///< ordered by (cell, method)

    const SummaryRow& summary(double cell_value, const std::string& method) const {
        for (const auto& s : summaries) {
            if (s.cell_value == cell_value && s.method == method) return s;
        }
        throw RangeError("no summary for method " + method);
    }
};

/// Mean and standard error (sample sd / sqrt(k)) of the present values.
inline std::pair<std::optional<double>, std::optional<double>> mean_se(const std::vector<double>& v) {
    if (v.empty()) return {std::nullopt, std::nullopt};
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    if (v.size() < 2) return {mean, 0.0};
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    return {mean, std::sqrt(ss / static_cast<double>(v.size() - 1) / static_cast<double>(v.size()))};
}

namespace detail {

/// Tensor with the unseen-group slices replaced.
inline DenseTensor with_slices(DenseTensor t, const std::map<GroupIndex, Vector>& slices) {
    std::vector<Index> index(t.dims().size());
    for (const auto& [g, b] : slices) {
        for (std::size_t k = 0; k < g.size(); ++k) index[k + 1] = g[k];
        for (Index j = 0; j < b.size(); ++j) {
            index[0] = j + 1;
            t(index) = b[j];
        }
    }
    return t;
}

/// Mean over targets of ||b(g) - gamma(g)||.
inline double mean_tle(const std::map<GroupIndex, Vector>& estimates, const std::map<GroupIndex, Vector>& targets) {
    double s = 0.0;
    for (const auto& [g, gamma] : targets) s += tle(estimates.at(g), gamma);
    return s / static_cast<double>(targets.size());
}

inline double root_mean_sq(const std::map<GroupIndex, Vector>& estimates, const DenseTensor& truth) {
    double s = 0.0;
    for (const auto& [g, b] : estimates) s += (b - group_slice(truth, g)).squaredNorm();
    return std::sqrt(s / static_cast<double>(estimates.size()));
}

struct Replication {
    const ExperimentConfig& cfg;
    const Scenario& scenario;
    std::uint64_t fit_seed;

    std::optional<GroupEstimates> est;
    std::optional<CompletionModel> model;

    const GroupEstimates& estimates() {
        if (!est) est = fit_all(scenario.train, scenario.pattern, cfg.split, fit_seed);
        return *est;
    }
    const CompletionModel& tensordg_model() {
        if (!model) {
            FitOptions o;
            o.split = cfg.split;
            o.seed = fit_seed;
            o.threshold_c = cfg.threshold_c;
            model = complete_from_estimates(estimates(), scenario.pattern, o);
        }
        return *model;
    }

    void run(const std::string& method, MetricsRecord& rec) {
        const auto& truth = scenario.truth;
        const auto& targets = scenario.targets;
        std::map<GroupIndex, Vector> unseen;
        if (method == "ols") {
            std::map<GroupIndex, Vector> all;
            for (const auto& g : scenario.pattern.observed()) all.emplace(g, estimates().second_fit(g).beta);
            for (const auto& [g, gamma] : targets) unseen.emplace(g, single_task_ols(scenario.eval, g));
            all.insert(unseen.begin(), unseen.end());
            const DenseTensor full = with_slices(truth, all);
            rec.al2e = al2e(full, truth);
            rec.adge = adge(full, truth, scenario.pattern);
        } else if (method == "maximin") {
            const auto groups = scenario.pattern.observed_list();
            const auto mm = maximin(estimates(), pooled_gram(scenario.train, groups));
            std::map<GroupIndex, Vector> all;
            for (const auto& g : scenario.pattern.all_groups()) all.emplace(g, mm.beta);
            for (const auto& [g, gamma] : targets) unseen.emplace(g, mm.beta);
            const DenseTensor full = with_slices(truth, all);
            rec.al2e = al2e(full, truth);
            rec.adge = adge(full, truth, scenario.pattern);
        } else if (method == "metalm") {
            for (const auto& [g, gamma] : targets) {
                const GroupData& d = scenario.eval.at(g);
                unseen.emplace(g, meta_lm_star(estimates(), scenario.pattern, d.X, d.y, cfg.threshold_c).beta);
            }
            rec.adge = root_mean_sq(unseen, truth);
        } else if (method == "tensordg") {
            const auto& m = tensordg_model();
            for (const auto& [g, gamma] : targets) unseen.emplace(g, coefficient(m, g));
            rec.al2e = al2e(m.beta_hat, truth);
            rec.adge = adge(m.beta_hat, truth, scenario.pattern);
        } else if (method == "tensortl") {
            const auto& m = tensordg_model();
            TransferOptions o;
            o.c0 = cfg.transfer_c0;
            o.cross_validate = cfg.transfer_cv;
            o.seed = fit_seed;
            for (const auto& [g, gamma] : targets) {
                const GroupData& d = scenario.eval.at(g);
                unseen.emplace(g, tensortl(m, g, d.X, d.y, o).gamma_hat);
            }
            const DenseTensor full = with_slices(m.beta_hat, unseen);
            rec.al2e = al2e(full, truth);
            rec.adge = adge(full, truth, scenario.pattern);
        } else {
            throw ConfigError("unknown method '" + method + "'");
        }
        rec.tle = mean_tle(unseen, targets);
    }
};

}  // namespace detail

/// Records of one replication, one per configured method.
inline std::vector<MetricsRecord> run_replication(const ExperimentConfig& cfg, std::size_t cell, int rep) {
    using clock = std::chrono::steady_clock;
    const double value = cfg.cell_values[cell];
    // The replication seed does not depend on the cell, so cells share random draws where their shapes agree.
    const std::uint64_t rep_seed = derive_seed(cfg.seed, {static_cast<std::uint64_t>(rep)});
    std::vector<MetricsRecord> out;
    for (const auto& m : cfg.methods) {
        MetricsRecord r;
        r.cell_param = cfg.cell_param;
        r.cell_value = value;
        r.rep = rep;
        r.method = m;
        out.push_back(std::move(r));
    }
    std::optional<Scenario> scenario;
    const auto t0 = clock::now();
    try {
        scenario = generate_scenario(cell_scenario(cfg, value), rep_seed);
    } catch (const std::exception& e) {
        for (auto& r : out) {
            r.failed = true;
            r.error = std::string("scenario: ") + e.what();
        }
        return out;
    }
    const double gen_seconds = std::chrono::duration<double>(clock::now() - t0).count();
    detail::Replication run{cfg, *scenario, derive_seed(rep_seed, {3}), std::nullopt, std::nullopt};
    for (auto& r : out) {
        const auto start = clock::now();
        try {
            run.run(r.method, r);
            const bool finite = (!r.al2e || std::isfinite(*r.al2e)) && (!r.adge || std::isfinite(*r.adge)) &&
                                (!r.tle || std::isfinite(*r.tle));
            if (!finite) throw ConvergenceError("non-finite metric", 0.0);
        } catch (const std::exception& e) {
            r.al2e.reset();
            r.adge.reset();
            r.tle.reset();
            r.failed = true;
            r.error = e.what();
        }
        r.seconds = gen_seconds / static_cast<double>(out.size()) +
                    std::chrono::duration<double>(clock::now() - start).count();
    }
    return out;
}

inline std::vector<SummaryRow> summarize(const ExperimentConfig& cfg, const std::vector<MetricsRecord>& records) {
    std::vector<SummaryRow> rows;
    for (double value : cfg.cell_values) {
        for (const auto& m : cfg.methods) {
            SummaryRow s;
            s.cell_param = cfg.cell_param;
            s.cell_value = value;
            s.method = m;
            std::vector<double> a, d, t;
            double secs = 0.0;
            int count = 0;
            for (const auto& r : records) {
                if (r.cell_value != value || r.method != m) continue;
                ++count;
                secs += r.seconds;
                if (r.failed) {
                    ++s.failed;
                    continue;
                }
                ++s.succeeded;
                if (r.al2e) a.push_back(*r.al2e);
                if (r.adge) d.push_back(*r.adge);
                if (r.tle) t.push_back(*r.tle);
            }
            std::tie(s.al2e_mean, s.al2e_se) = mean_se(a);
            std::tie(s.adge_mean, s.adge_se) = mean_se(d);
            std::tie(s.tle_mean, s.tle_se) = mean_se(t);
            s.seconds_mean = count > 0 ? secs / count : 0.0;
            rows.push_back(std::move(s));
        }
    }
    return rows;
}

/**
 * Every (cell, replication) runs as an independent task with its own derived
 * seed; tasks are distributed over `workers` threads and merged in task order,
 * so the output does not depend on the worker count.
 */
inline MetricsTable run_experiment(const ExperimentConfig& cfg) {
    cfg.validate();
    const std::size_t cells = cfg.cell_values.size();
    const auto reps = static_cast<std::size_t>(cfg.replications);
    std::vector<std::vector<MetricsRecord>> slots(cells * reps);
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t task = next++; task < slots.size(); task = next++) {
            slots[task] = run_replication(cfg, task / reps, static_cast<int>(task % reps));
        }
    };
    const auto n_threads = std::min<std::size_t>(static_cast<std::size_t>(cfg.workers), slots.size());
    if (n_threads <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t k = 0; k < n_threads; ++k) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    MetricsTable table;
    for (auto& s : slots) {
        for (auto& r : s) table.records.push_back(std::move(r));
    }
    table.summaries = summarize(cfg, table.records);
    return table;
}

inline std::string format_number(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline std::string format_optional(const std::optional<double>& v) { return v ? format_number(*v) : std::string(); }

inline constexpr const char* kMetricsHeader = "cell_param,cell_value,rep,method,al2e,adge,tle,failed,seconds";

/**
 * Metrics CSV: one row per record, then per (cell, method) a "mean" row
 * (failed = failure count) and an "se" row. Timing is blank when excluded.
 */
inline void write_metrics_csv(std::ostream& os, const MetricsTable& table, bool include_timing = true) {
    os << kMetricsHeader << '\n';
    auto timing = [&](double s) { return include_timing ? format_number(s) : std::string(); };
    for (const auto& r : table.records) {
        os << r.cell_param << ',' << format_number(r.cell_value) << ',' << r.rep << ',' << r.method << ','
           << format_optional(r.al2e) << ',' << format_optional(r.adge) << ',' << format_optional(r.tle) << ','
           << (r.failed ? 1 : 0) << ',' << timing(r.seconds) << '\n';
    }
    for (const auto& s : table.summaries) {
        os << s.cell_param << ',' << format_number(s.cell_value) << ",mean," << s.method << ','
           << format_optional(s.al2e_mean) << ',' << format_optional(s.adge_mean) << ','
           << format_optional(s.tle_mean) << ',' << s.failed << ',' << timing(s.seconds_mean) << '\n';
        os << s.cell_param << ',' << format_number(s.cell_value) << ",se," << s.method << ','
           << format_optional(s.al2e_se) << ',' << format_optional(s.adge_se) << ',' << format_optional(s.tle_se)
           << ',' << s.failed << ",\n";
    }
}

inline std::string metrics_csv(const MetricsTable& table, bool include_timing = true) {
    std::ostringstream os;
    write_metrics_csv(os, table, include_timing);
    return os.str();
}

}  // namespace tensordg
