// noisyseg: synth | softlabel | train | eval | ablate | gradcheck
//
// Exit codes: 0 ok, 1 other failure, 2 configuration, 3 data / I/O, 4 numeric divergence,
// 5 gradient check above tolerance.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "noisyseg/bench/ablation.hpp"
#include "noisyseg/bench/compare.hpp"
#include "noisyseg/bench/hash.hpp"
#include "noisyseg/bench/plan.hpp"
#include "noisyseg/core/error.hpp"
#include "noisyseg/core/json_io.hpp"
#include "noisyseg/metrics/report.hpp"
#include "noisyseg/segmodel/checkpoint.hpp"
#include "noisyseg/segmodel/gradcheck.hpp"
#include "noisyseg/segmodel/train.hpp"
#include "noisyseg/synthgen/dataset.hpp"
#include "noisyseg/synthgen/rng.hpp"

namespace fs = std::filesystem;
using namespace noisyseg;

namespace {

enum Exit { ok = 0, failure = 1, config_error = 2, data_error = 3, divergence = 4, gradcheck_failed = 5 };

constexpr double gradcheck_tolerance = 1e-4;

/// Accepts a row name ("APL+soft (1 1 1)") or "bce,sce,rce,label" ("1,1,1,soft").
bench::AblationRow find_row(const std::string& key) {
    const auto rows = bench::default_rows();
    for (const auto& r : rows)
        if (r.name == key)
            return r;
    std::vector<std::string> parts;
    std::string cur;
    for (char c : key) {
        if (c == ',') {
            parts.push_back(cur);
            cur.clear();
        } else if (c != ' ') {
            cur += c;
        }
    }
    parts.push_back(cur);
    if (parts.size() == 4) {
        try {
            const double b = std::stod(parts[0]), s = std::stod(parts[1]), r = std::stod(parts[2]);
            const auto mode = bench::label_mode_from_string(parts[3]);
            for (const auto& row : rows)
                if (row.loss.w_bce == b && row.loss.w_sce == s && row.loss.w_rce == r && row.label == mode)
                    return row;
        } catch (const std::invalid_argument&) {
        }
    }
    std::string names;
    for (const auto& r : rows)
        names += "\n  " + r.name;
    throw ConfigError("unknown loss row '" + key + "'; expected one of:" + names);
}

int cmd_synth(const std::string& spec_path, const fs::path& out) {
    const auto spec = spec_path.empty() ? synthgen::DatasetSpec{}
                                        : synthgen::dataset_spec_from_json(read_json(spec_path));
    synthgen::make_dataset(spec, out);
    std::cout << "dataset " << out.string() << " " << bench::hash_directory(out) << "\n";
    return ok;
}

int cmd_softlabel(const fs::path& data, const std::string& params_path) {
    const auto params = softlabel::params_from_json(read_json(params_path));
    synthgen::rebuild_soft_labels(data, params);
    std::cout << "soft labels rebuilt in " << data.string() << "\n";
    return ok;
}

int cmd_train(const fs::path& data, const std::string& row_key, const fs::path& out, const std::string& config_path,
              std::uint64_t seed, int epochs) {
    const auto row = find_row(row_key);
    segmodel::TrainConfig cfg;
    if (!config_path.empty()) {
        nlohmann::json j = read_json(config_path);
        j.erase("loss");
        cfg = segmodel::train_config_from_json(j);
    }
    cfg.loss = row.loss;
    if (seed != 0)
        cfg.seed = seed;
    if (epochs > 0)
        cfg.epochs = epochs;
    cfg.validate();

    const auto train = synthgen::load_split(data, "train");
    for (const auto& v : train.volumes)
        if (v.soft.empty())
            throw DataError("train volume " + v.volume.id + " has no soft labels");
    const auto samples = bench::training_samples(train, row.label);
    const auto result = segmodel::train(samples, cfg, [](int epoch, double loss) {
        std::fprintf(stderr, "epoch %d loss %.6f\n", epoch + 1, loss);
    });
    segmodel::save_checkpoint(out, result.params,
                              {{"row", bench::to_json(row)},
                               {"train", segmodel::to_json(cfg)},
                               {"dataset_hash", bench::hash_directory(data)},
                               {"loss_curve", result.loss_curve}});
    std::cout << "checkpoint " << out.string() << "\n";
    return ok;
}

int cmd_eval(const fs::path& ckpt, const fs::path& data, const fs::path& report_path, const std::string& split) {
    const auto params = segmodel::load_checkpoint(ckpt);
    const auto test = synthgen::load_split(data, split);
    if (test.volumes.empty())
        throw DataError("split " + split + " is empty");
    const auto report = bench::evaluate_params(params, test);
    write_json(report_path, metrics::to_json(report));
    const auto& a = report.aggregate;
    std::printf("AP50 %.2f AP75 %.2f IoU%% %.2f Rec. %.4f Prec. %.4f Dice %.4f\n", 100 * a.ap50, 100 * a.ap75,
                100 * a.iou, a.recall, a.precision, a.dice);
    return ok;
}

int cmd_ablate(const fs::path& plan_path, const fs::path& out) {
    bench::AblationPlan plan = plan_path.empty() ? bench::default_plan() : bench::plan_from_json(read_json(plan_path));
    std::error_code ec;
    fs::create_directories(out, ec);
    if (ec)
        throw IoError("cannot create " + out.string() + ": " + ec.message());

    fs::path data;
    if (plan.dataset.path) {
        data = *plan.dataset.path;
        if (data.is_relative() && !plan_path.empty())
            data = plan_path.parent_path() / data;
    } else {
        data = out / "data";
        fs::remove_all(data, ec);
        synthgen::make_dataset(plan.dataset.spec, data);
    }
    const auto corpus = bench::load_corpus(data);
    std::fprintf(stderr, "dataset %s (%zu train, %zu test volumes), %zu rows x %zu seeds on %zu threads\n",
                 data.string().c_str(), corpus.train.volumes.size(), corpus.test.volumes.size(), plan.rows.size(),
                 plan.seeds.size(), bench::thread_budget(plan.rows.size() * plan.seeds.size()));

    const auto manifest = bench::run_ablation(plan, corpus, [](const std::string& row, std::uint64_t seed,
                                                               const metrics::MetricSummary& s) {
        std::fprintf(stderr, "%-20s seed %-4llu dice %.4f rec %.4f prec %.4f\n", row.c_str(),
                     static_cast<unsigned long long>(seed), s.dice, s.recall, s.precision);
    });
    const std::string csv = bench::results_csv(manifest);
    write_text(out / "results.csv", csv);
    nlohmann::json mj = bench::to_json(manifest);
    write_json(out / "manifest.json", mj);
    try {
        write_json(out / "comparison.json", bench::to_json(bench::compare_rows(mj)));
    } catch (const DataError& e) {
        std::fprintf(stderr, "comparison skipped: %s\n", e.what());
    }
    std::cout << csv;
    return ok;
}

int cmd_gradcheck(std::size_t size, std::uint64_t seed) {
    synthgen::Rng rng(seed);
    const Extent e{size, size};
    std::vector<double> input(segmodel::in_channels * e.size());
    for (auto& v : input)
        v = rng.uniform();
    std::vector<float> label(e.size());
    for (auto& v : label)
        v = rng.bernoulli(0.3) ? static_cast<float>(rng.uniform()) : 0.0f;
    std::vector<double> pred(e.size());
    for (auto& v : pred)
        v = rng.uniform(0.01, 0.99);
    const auto params = segmodel::init_params(synthgen::derive_seed(seed, 0));

    bool pass = true;
    std::printf("%-20s %14s %14s\n", "row", "loss max err", "net max err");
    for (const auto& row : bench::default_rows()) {
        const auto l = segmodel::loss_gradcheck(row.loss, pred, e, label);
        const auto n = segmodel::network_gradcheck(params, input, e, label, row.loss);
        const bool row_pass = l.max_relative_error < gradcheck_tolerance && n.max_relative_error < gradcheck_tolerance;
        pass = pass && row_pass;
        std::printf("%-20s %14.3e %14.3e %s\n", row.name.c_str(), l.max_relative_error, n.max_relative_error,
                    row_pass ? "ok" : "FAIL");
    }
    return pass ? ok : gradcheck_failed;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"noisyseg: weak-supervision segmentation lab"};
    app.require_subcommand(1);

    std::string spec_path, params_path, row_key, config_path, split = "test";
    fs::path out, data, ckpt, report_path, plan_path;
    std::uint64_t seed = 0;
    int epochs = 0;
    std::size_t size = 16;

    auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
    synth->add_option("--spec", spec_path, "dataset spec JSON (defaults if omitted)")->check(CLI::ExistingFile);
    synth->add_option("--out", out, "output directory")->required();

    auto* soft = app.add_subcommand("softlabel", "rebuild train soft labels from rater grids");
    soft->add_option("--data", data, "dataset directory")->required()->check(CLI::ExistingDirectory);
    soft->add_option("--params", params_path, "soft-label params JSON")->required()->check(CLI::ExistingFile);

    auto* train = app.add_subcommand("train", "train one loss configuration");
    train->add_option("--data", data, "dataset directory")->required()->check(CLI::ExistingDirectory);
    train->add_option("--loss", row_key, "row name or bce,sce,rce,label")->required();
    train->add_option("--out", out, "checkpoint directory")->required();
    train->add_option("--config", config_path, "train config JSON")->check(CLI::ExistingFile);
    train->add_option("--seed", seed, "override the seed");
    train->add_option("--epochs", epochs, "override the epoch count");

    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
    eval->add_option("--ckpt", ckpt, "checkpoint directory")->required()->check(CLI::ExistingDirectory);
    eval->add_option("--data", data, "dataset directory")->required()->check(CLI::ExistingDirectory);
    eval->add_option("--report", report_path, "report JSON path")->required();
    eval->add_option("--split", split, "split to evaluate")->check(CLI::IsMember({"val", "test"}));

    auto* ablate = app.add_subcommand("ablate", "run the loss/label ablation");
    ablate->add_option("--plan", plan_path, "plan JSON (default plan if omitted)")->check(CLI::ExistingFile);
    ablate->add_option("--out", out, "output directory")->required();

    auto* grad = app.add_subcommand("gradcheck", "finite-difference check of every loss row");
    grad->add_option("--size", size, "input height and width")->check(CLI::Range(2, 64));
    grad->add_option("--seed", seed, "seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return config_error;
    }

    try {
        if (*synth)
            return cmd_synth(spec_path, out);
        if (*soft)
            return cmd_softlabel(data, params_path);
        if (*train)
            return cmd_train(data, row_key, out, config_path, seed, epochs);
        if (*eval)
            return cmd_eval(ckpt, data, report_path, split);
        if (*ablate)
            return cmd_ablate(plan_path, out);
        if (*grad)
            return cmd_gradcheck(size, seed == 0 ? 1 : seed);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return config_error;
    } catch (const DivergenceError& e) {
        std::cerr << "divergence: " << e.what() << "\n";
        return divergence;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return data_error;
    } catch (const IoError& e) {
        std::cerr << "i/o error: " << e.what() << "\n";
        return data_error;
    } catch (const FormatError& e) {
        std::cerr << "format error: " << e.what() << "\n";
        return data_error;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return failure;
    }
    return failure;
}
