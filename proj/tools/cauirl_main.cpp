// Command-line front end: long-tailed dataset synthesis, training runs,
// C2G reports, parameter sweeps, and the Bayes-consistency check.
//
// Exit codes: 0 success, 2 input/config error, 3 numeric failure.

#include <cmath>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cauirl/errors.hpp"
#include "cauirl/experiment.hpp"

namespace {

using cauirl::experiment::RunConfig;

struct CommonFlags {
    std::string config_path;
    std::string out_dir;
    std::string method;
    long long seed = 0;
    double lambda = 0.0;
    double delta = 0.0;
    long long defer_epochs = 0;
    double imbalance = 0.0;

    CLI::Option *config_opt = nullptr;
    CLI::Option *out_opt = nullptr;
    CLI::Option *method_opt = nullptr;
    CLI::Option *seed_opt = nullptr;
    CLI::Option *lambda_opt = nullptr;
    CLI::Option *delta_opt = nullptr;
    CLI::Option *defer_opt = nullptr;
    CLI::Option *imbalance_opt = nullptr;
};

void add_common_flags(CLI::App *cmd, CommonFlags &f) {
    f.config_opt = cmd->add_option("--config", f.config_path, "Run config JSON file");
    f.out_opt = cmd->add_option("--out", f.out_dir, "Output directory");
    f.method_opt = cmd->add_option(
        "--method", f.method,
        "Training method: erm|oversample|cauirl|cauirl_sc|cauirl_external|mixup_universum");
    f.seed_opt = cmd->add_option("--seed", f.seed, "Base random seed");
    f.lambda_opt = cmd->add_option("--lambda", f.lambda, "Universum mixing coefficient in [0,1]");
    f.delta_opt = cmd->add_option("--delta", f.delta, "Replacement strength in [0,1]");
    f.defer_opt = cmd->add_option("--defer-epochs", f.defer_epochs,
                                  "Replacement active in the last N epochs (-1: last 20%)");
    f.imbalance_opt = cmd->add_option("--imbalance", f.imbalance,
                                      "Long-tail imbalance rate (largest/smallest class)");
}

RunConfig resolve_config(const CommonFlags &f, bool seed_is_lt) {
    RunConfig cfg = f.config_opt->count() > 0
                        ? cauirl::experiment::load_run_config(f.config_path)
                        : cauirl::experiment::run_config_from_json("{}");
    if (f.out_opt->count() > 0)
        cfg.out_dir = f.out_dir;
    if (f.method_opt->count() > 0)
        cfg.method = f.method;
    if (f.seed_opt->count() > 0) {
        if (seed_is_lt) {
            cfg.dataset.lt_seed = static_cast<std::uint64_t>(f.seed);
        } else {
            cfg.train.seed = static_cast<std::uint64_t>(f.seed);
            cfg.bayes.train.seed = static_cast<std::uint64_t>(f.seed);
        }
    }
    if (f.lambda_opt->count() > 0)
        cfg.universum.lambda = f.lambda;
    if (f.delta_opt->count() > 0)
        cfg.universum.delta = f.delta;
    if (f.defer_opt->count() > 0)
        cfg.universum.defer_epochs = static_cast<int>(f.defer_epochs);
    if (f.imbalance_opt->count() > 0)
        cfg.dataset.imbalance_rate = f.imbalance;
    // round-trip through the serializer re-runs all config validation on the
    // flag-overridden values
    return cauirl::experiment::run_config_from_json(cauirl::experiment::run_config_to_json(cfg));
}

std::vector<double> parse_values(const std::string &list) {
    std::vector<double> out;
    std::size_t pos = 0;
    while (pos <= list.size()) {
        const std::size_t comma = list.find(',', pos);
        const std::string tok =
            list.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
        if (!tok.empty()) {
            try {
                std::size_t used = 0;
                const double v = std::stod(tok, &used);
                if (used != tok.size())
                    throw std::invalid_argument(tok);
                out.push_back(v);
            } catch (const std::exception &) {
                throw cauirl::ParameterError("cannot parse sweep value '" + tok + "'");
            }
        }
        if (comma == std::string::npos)
            break;
        pos = comma + 1;
    }
    return out;
}

} // namespace

int main(int argc, char **argv) {
    CLI::App app{"Class-aware Universum rebalance learning experiments"};
    app.require_subcommand(1);

    CommonFlags mk_flags, train_flags, c2g_flags, sweep_flags, bayes_flags;

    CLI::App *mk = app.add_subcommand("make-lt", "Synthesize a long-tailed dataset to disk");
    add_common_flags(mk, mk_flags);

    CLI::App *train = app.add_subcommand("train", "Train a model; emit metrics CSV, checkpoint, "
                                                  "and a JSON report");
    add_common_flags(train, train_flags);

    CLI::App *c2g = app.add_subcommand("c2g", "Per-class feature-mean gap between the train and "
                                              "test sets under a trained extractor");
    add_common_flags(c2g, c2g_flags);
    std::string checkpoint;
    c2g->add_option("--checkpoint", checkpoint, "Trained model checkpoint")->required();

    CLI::App *sweep = app.add_subcommand("sweep", "Grid sweep over one parameter");
    add_common_flags(sweep, sweep_flags);
    std::string sweep_param, sweep_values;
    long long sweep_seeds = 5;
    sweep->add_option("--param", sweep_param,
                      "Parameter to sweep: lambda|delta|defer_epochs|imbalance")
        ->required();
    sweep->add_option("--values", sweep_values, "Comma-separated values")->required();
    sweep->add_option("--seeds", sweep_seeds, "Seeds per value (default 5)");

    CLI::App *bayes = app.add_subcommand("bayes-check", "Decision-agreement check of the "
                                                        "rebalanced pipeline on a Gaussian task");
    add_common_flags(bayes, bayes_flags);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp &e) {
        return app.exit(e);
    } catch (const CLI::ParseError &e) {
        app.exit(e);
        return 2;
    }

    try {
        if (mk->parsed()) {
            const RunConfig cfg = resolve_config(mk_flags, true);
            const auto res = cauirl::experiment::run_make_lt(cfg);
            std::cout << "wrote " << res.images_path.string();
            if (!res.labels_path.empty())
                std::cout << " + " << res.labels_path.string();
            std::cout << "\nmanifest " << res.manifest_path.string() << "\nclass counts:";
            for (std::size_t c : res.class_counts)
                std::cout << ' ' << c;
            std::cout << "\n";
        } else if (train->parsed()) {
            const RunConfig cfg = resolve_config(train_flags, false);
            const auto res = cauirl::experiment::run_training(cfg);
            std::cout << "method " << cfg.method << " seed " << cfg.train.seed << " top1 "
                      << res.final_top1 << "\ngroup accuracy:";
            for (double g : res.group_acc)
                std::cout << ' ' << g;
            std::cout << "\nwall " << res.wall_seconds << " s\nmetrics " << res.csv_path.string()
                      << "\ncheckpoint " << res.checkpoint_path.string() << "\nreport "
                      << res.report_path.string() << "\n";
        } else if (c2g->parsed()) {
            const RunConfig cfg = resolve_config(c2g_flags, false);
            const auto res = cauirl::experiment::run_c2g(cfg, checkpoint);
            std::cout << "mean gap " << res.report.mean_gap << "\nspearman(class index, gap) "
                      << res.spearman_class_index << "\ncsv " << res.csv_path.string() << "\njson "
                      << res.json_path.string() << "\n";
        } else if (sweep->parsed()) {
            const RunConfig cfg = resolve_config(sweep_flags, false);
            if (sweep_seeds <= 0)
                throw cauirl::ParameterError("--seeds must be positive");
            const auto res = cauirl::experiment::run_sweep(
                cfg, sweep_param, parse_values(sweep_values),
                static_cast<std::size_t>(sweep_seeds));
            for (const auto &s : res.summary)
                std::cout << sweep_param << ' ' << s.value << " mean top1 " << s.mean_top1
                          << " stderr " << s.stderr_top1 << "\n";
            std::cout << "csv " << res.csv_path.string() << "\n";
        } else if (bayes->parsed()) {
            const RunConfig cfg = resolve_config(bayes_flags, false);
            const auto res = cauirl::experiment::run_bayes(cfg);
            const auto &s = res.suite;
            std::cout << "agreement rebalanced-vs-balanced " << s.rebalanced.agreement_rate
                      << " (bar " << s.self_agreement_p5 << ")\n"
                      << "agreement erm-vs-balanced " << s.erm.agreement_rate << "\n"
                      << "meets bar: " << (s.rebalanced_meets_bar ? "yes" : "no")
                      << "; beats erm on every seed: "
                      << (s.rebalanced_beats_erm_every_seed ? "yes" : "no") << "\n"
                      << "json " << res.json_path.string() << "\n";
        }
    } catch (const cauirl::NumericError &e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception &e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
