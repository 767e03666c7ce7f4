// Command-line front end: simulate, fit, transfer, experiment, ingest.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "tensordg/tensordg.hpp"

namespace fs = std::filesystem;
using namespace tensordg;

namespace {

std::ofstream open_out(const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write " + path);
    return out;
}

std::ifstream open_in(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open " + path);
    return in;
}

GroupIndex parse_group(const std::string& text) {
    std::vector<Index> coords;
    std::stringstream ss(text);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        try {
            std::size_t used = 0;
            coords.push_back(static_cast<Index>(std::stoll(tok, &used)));
            if (used != tok.size()) throw std::invalid_argument(tok);
        } catch (const std::exception&) {
            throw ConfigError("bad group index '" + text + "'");
        }
    }
    if (coords.empty()) throw ConfigError("empty group index");
    return GroupIndex(std::move(coords));
}

std::vector<std::string> split_list(const std::string& text) {
    std::vector<std::string> out;
    std::stringstream ss(text);
    std::string tok;
    while (std::getline(ss, tok, ',')) out.push_back(tok);
    return out;
}

struct SimulateArgs {
    std::string config;
    std::string out_dir = ".";
    std::optional<std::uint64_t> seed;
};

void run_simulate(const SimulateArgs& a) {
    ScenarioConfig cfg = a.config.empty() ? ScenarioConfig{} : scenario_from_json(read_json_file(a.config));
    if (a.seed) cfg.seed = *a.seed;
    const Scenario s = generate_scenario(cfg, cfg.seed);
    fs::create_directories(a.out_dir);
    const fs::path dir(a.out_dir);
    {
        auto out = open_out((dir / "train.csv").string());
        write_dataset_csv(out, s.train);
    }
    if (!s.eval.empty()) {
        auto out = open_out((dir / "eval.csv").string());
        write_dataset_csv(out, s.eval);
    }
    {
        auto out = open_out((dir / "pattern.json").string());
        out << pattern_to_json(s.pattern).dump(2) << '\n';
    }
    {
        auto out = open_out((dir / "truth.tns").string());
        write_tensor(out, s.truth);
    }
    json targets = json::object();
    for (const auto& [g, gamma] : s.targets) {
        targets[g.to_string()] = std::vector<double>(gamma.data(), gamma.data() + gamma.size());
    }
    {
        auto out = open_out((dir / "targets.json").string());
        out << targets.dump(2) << '\n';
    }
    std::cout << "observed groups: " << s.pattern.observed_count() << ", unobserved: " << s.pattern.unobserved().size()
              << ", files written to " << dir.string() << '\n';
}

struct FitArgs {
    std::string data;
    std::string pattern;
    bool split = false;
    std::uint64_t seed = 0;
    double threshold_c = 1.0;
    std::string out = "model.tns";
    std::string ranks;
    bool highdim = false;
    std::string lambda = "auto";
};

void run_fit(const FitArgs& a) {
    const ObservationPattern pattern = pattern_from_json(read_json_file(a.pattern));
    auto in = open_in(a.data);
    const auto ingest = read_dataset_csv(in, pattern.q());
    FitOptions opts;
    opts.split = a.split;
    opts.seed = a.seed;
    opts.threshold_c = a.threshold_c;
    if (!a.ranks.empty()) {
        std::vector<Index> r;
        for (const auto& tok : split_list(a.ranks)) r.push_back(static_cast<Index>(std::stoll(tok)));
        opts.rank_override = r;
    }
    CompletionModel model;
    json extra = json::object();
    if (a.highdim) {
        HighDimOptions h;
        h.fit = opts;
        h.seed = a.seed;
        if (a.lambda != "auto") h.lambda = std::stod(a.lambda);
        auto fit = fit_highdim(ingest.dataset, pattern, h);
        model = std::move(fit.model);
        extra["support"] = fit.selection.support;
        extra["lambda"] = fit.selection.lambda;
        extra["threshold"] = fit.selection.threshold;
    } else {
        model = fit_tensordg(ingest.dataset, pattern, opts);
    }
    {
        auto out = open_out(a.out);
        write_tensor(out, model.beta_hat);
    }
    json side = model_to_json(model);
    if (a.highdim) side["highdim"] = extra;
    {
        auto out = open_out(a.out + ".json");
        out << side.dump(2) << '\n';
    }
    std::cout << "ranks:";
    for (Index r : model.ranks) std::cout << ' ' << r;
    std::cout << "\ngeneralizability: " << model.generalizability.verdict() << '\n';
    for (const auto& w : model.warnings) std::cerr << "warning: " << w << '\n';
    std::cout << "model written to " << a.out << " and " << a.out << ".json\n";
}

struct TransferArgs {
    std::string model;
    std::string target_group;
    std::string data;
    std::optional<double> lambda;
    bool cv = false;
    double c0 = 2.0;
    std::uint64_t seed = 0;
};

void run_transfer(const TransferArgs& a) {
    auto min = open_in(a.model);
    const DenseTensor beta = read_tensor(min);
    const GroupIndex g = parse_group(a.target_group);
    if (static_cast<Index>(g.size()) != beta.order() - 1) throw ConfigError("target group has the wrong number of coordinates");
    for (std::size_t k = 0; k < g.size(); ++k) {
        if (g[k] < 1 || g[k] > beta.dim(static_cast<Index>(k) + 1)) throw RangeError("target group outside the model's group space");
    }
    auto din = open_in(a.data);
    const auto ingest = read_dataset_csv(din, g.size());
    // Either a file holding only the target rows or one that contains the target among other groups.
    const GroupData* d = nullptr;
    if (ingest.dataset.contains(g)) d = &ingest.dataset.at(g);
    else if (ingest.dataset.size() == 1) d = &ingest.dataset.begin()->second;
    else throw RangeError("no rows for target group " + g.to_string() + " in " + a.data);
    TransferOptions o;
    o.lambda = a.lambda;
    o.cross_validate = a.cv;
    o.c0 = a.c0;
    o.seed = a.seed;
    const auto r = transfer_from_coefficient(group_slice(beta, g), d->X, d->y, o);
    json out{{"target_group", g.coords},
             {"lambda", r.lambda_used},
             {"support", r.support},
             {"gamma_hat", std::vector<double>(r.gamma_hat.data(), r.gamma_hat.data() + r.gamma_hat.size())},
             {"delta_hat", std::vector<double>(r.delta_hat.data(), r.delta_hat.data() + r.delta_hat.size())}};
    std::cout << out.dump(2) << '\n';
}

struct ExperimentArgs {
    std::string config;
    std::string out = "metrics.csv";
    std::optional<int> workers;
    std::optional<std::uint64_t> seed;
    bool no_timing = false;
};

void run_experiment_cmd(const ExperimentArgs& a) {
    ExperimentConfig cfg = a.config.empty() ? ExperimentConfig{} : experiment_from_json(read_json_file(a.config));
    if (a.workers) cfg.workers = *a.workers;
    if (a.seed) cfg.seed = *a.seed;
    cfg.validate();
    const MetricsTable table = run_experiment(cfg);
    {
        auto out = open_out(a.out);
        write_metrics_csv(out, table, !a.no_timing);
    }
    for (const auto& s : table.summaries) {
        std::cout << s.cell_param << '=' << format_number(s.cell_value) << ' ' << s.method;
        if (s.al2e_mean) std::cout << " al2e " << *s.al2e_mean << " (se " << *s.al2e_se << ')';
        if (s.adge_mean) std::cout << " adge " << *s.adge_mean << " (se " << *s.adge_se << ')';
        if (s.tle_mean) std::cout << " tle " << *s.tle_mean << " (se " << *s.tle_se << ')';
        if (s.failed > 0) std::cout << " failed " << s.failed;
        std::cout << '\n';
    }
    for (const auto& r : table.records) {
        if (r.failed) std::cerr << "rep " << r.rep << ' ' << r.method << " failed: " << r.error << '\n';
    }
}

struct IngestArgs {
    std::string data;
    std::string group_cols;
    std::string response;
    std::string features;
    std::string out;
};

void run_ingest(const IngestArgs& a) {
    CsvSchema schema;
    schema.group_cols = split_list(a.group_cols);
    schema.response_col = a.response;
    if (!a.features.empty()) schema.feature_cols = split_list(a.features);
    auto in = open_in(a.data);
    const auto r = ingest_csv(in, schema);
    if (!a.out.empty()) {
        auto out = open_out(a.out);
        write_dataset_csv(out, r.dataset);
    }
    json mapping = json::object();
    for (std::size_t k = 0; k < schema.group_cols.size(); ++k) {
        json m = json::object();
        for (std::size_t c = 0; c < r.levels[k].size(); ++c) m[r.levels[k][c]] = c + 1;
        mapping[schema.group_cols[k]] = m;
    }
    json counts = json::object();
    for (const auto& [g, n] : r.counts) counts[g.to_string()] = n;
    std::cout << json{{"space", r.space}, {"features", r.dataset.features()}, {"level_codes", mapping}, {"group_counts", counts}}.dump(2)
              << '\n';
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Structured tensor completion for multi-environment linear regression"};
    app.require_subcommand(1);

    SimulateArgs sim;
    auto* s = app.add_subcommand("simulate", "Draw a synthetic scenario and write dataset, pattern and truth files");
    s->add_option("--config", sim.config, "Scenario config JSON (defaults when omitted)")->check(CLI::ExistingFile);
    s->add_option("--out-dir", sim.out_dir, "Output directory");
    s->add_option("--seed", sim.seed, "Override the config seed");

    FitArgs fit;
    auto* f = app.add_subcommand("fit", "Fit the completion model on observed groups");
    f->add_option("--data", fit.data, "Dataset CSV (group columns, response, features)")->required()->check(CLI::ExistingFile);
    f->add_option("--pattern", fit.pattern, "Observation pattern JSON")->required()->check(CLI::ExistingFile);
    f->add_flag("--split", fit.split, "Use two-fold sample splitting");
    f->add_option("--seed", fit.seed, "Seed for fold assignment and penalty selection");
    f->add_option("--threshold-c", fit.threshold_c, "Constant of the rank threshold")->check(CLI::PositiveNumber);
    f->add_option("--ranks", fit.ranks, "Fix ranks r0,r1,...,rq instead of thresholding");
    f->add_option("--out", fit.out, "Output tensor file; the sidecar gets a .json suffix");
    f->add_flag("--highdim", fit.highdim, "Select features by group Lasso first");
    f->add_option("--lambda", fit.lambda, "Group-Lasso penalty, or 'auto' for holdout selection");

    TransferArgs tr;
    auto* t = app.add_subcommand("transfer", "Correct a fitted coefficient with target-group samples");
    t->add_option("--model", tr.model, "Fitted tensor file")->required()->check(CLI::ExistingFile);
    t->add_option("--target-group", tr.target_group, "Target group as i1,i2,...")->required();
    t->add_option("--data", tr.data, "Target dataset CSV")->required()->check(CLI::ExistingFile);
    auto* lam = t->add_option("--lambda", tr.lambda, "Lasso penalty")->check(CLI::PositiveNumber);
    t->add_flag("--cv", tr.cv, "Choose the penalty by 5-fold cross-validation")->excludes(lam);
    t->add_option("--c0", tr.c0, "Constant of the default penalty c0 sqrt(log p / n)")->check(CLI::PositiveNumber);
    t->add_option("--seed", tr.seed, "Seed for cross-validation folds");

    ExperimentArgs ex;
    auto* e = app.add_subcommand("experiment", "Run a Monte-Carlo experiment and write the metrics CSV");
    e->add_option("--config", ex.config, "Experiment config JSON")->check(CLI::ExistingFile);
    e->add_option("--out", ex.out, "Metrics CSV path");
    e->add_option("--workers", ex.workers, "Worker threads")->check(CLI::PositiveNumber);
    e->add_option("--seed", ex.seed, "Override the config seed");
    e->add_flag("--no-timing", ex.no_timing, "Leave the seconds column blank");

    IngestArgs in;
    auto* i = app.add_subcommand("ingest", "Code group levels of a raw CSV and report per-group counts");
    i->add_option("--data", in.data, "Raw CSV with a header row")->required()->check(CLI::ExistingFile);
    i->add_option("--group-cols", in.group_cols, "Comma-separated group column names")->required();
    i->add_option("--response", in.response, "Response column name")->required();
    i->add_option("--features", in.features, "Comma-separated feature columns (default: all others)");
    i->add_option("--out", in.out, "Write the coded dataset CSV here");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*s) run_simulate(sim);
        else if (*f) run_fit(fit);
        else if (*t) run_transfer(tr);
        else if (*e) run_experiment_cmd(ex);
        else if (*i) run_ingest(in);
    } catch (const ConfigError& err) {
        std::cerr << "error: " << err.what() << '\n';
        return 2;
    } catch (const std::exception& err) {
        std::cerr << "error: " << err.what() << '\n';
        return 1;
    }
    return 0;
}
