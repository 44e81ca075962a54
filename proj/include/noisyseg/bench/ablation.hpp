#pragma once

// Trains every (row, seed) pair of a plan on the train split and evaluates on the test split.
// Jobs run on up to NOISYSEG_THREADS threads; each job is deterministic and owns its result slot,
// so output does not depend on scheduling.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <exception>
#include <filesystem>
#include <functional>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"

#include "noisyseg/bench/hash.hpp"
#include "noisyseg/bench/plan.hpp"
#include "noisyseg/core/error.hpp"
#include "noisyseg/metrics/report.hpp"
#include "noisyseg/segmodel/model.hpp"
#include "noisyseg/segmodel/train.hpp"
#include "noisyseg/synthgen/dataset.hpp"

namespace noisyseg::bench {

struct Corpus {
    synthgen::Split train;
    synthgen::Split test;
    std::string hash;
};

inline Corpus load_corpus(const std::filesystem::path& dir) {
    Corpus c;
    c.train = synthgen::load_split(dir, "train");
    c.test = synthgen::load_split(dir, "test");
    if (c.train.volumes.empty())
        throw DataError("dataset " + dir.string() + " has an empty train split");
    if (c.test.volumes.empty())
        throw DataError("dataset " + dir.string() + " has an empty test split");
    for (const auto& v : c.train.volumes)
        if (v.soft.empty())
            throw DataError("train volume " + v.volume.id + " has no soft labels");
    for (const auto& v : c.test.volumes)
        if (v.volume.gt.empty())
            throw DataError("test volume " + v.volume.id + " has no ground truth");
    c.hash = hash_directory(dir);
    return c;
}

/// One sample per train slice; binary mode thresholds the soft label at 0.5.
inline std::vector<segmodel::TrainingSample> training_samples(const synthgen::Split& train, LabelMode mode) {
    std::vector<segmodel::TrainingSample> out;
    for (const auto& dv : train.volumes)
        for (std::size_t z = 0; z < dv.volume.depth(); ++z) {
            const SoftMask label = mode == LabelMode::binary ? as_soft(binarize(dv.soft[z])) : dv.soft[z];
            out.push_back(segmodel::make_training_sample(stack_25d(dv.volume, z), label));
        }
    return out;
}

inline metrics::MetricReport evaluate_params(const segmodel::ModelParams& params, const synthgen::Split& test) {
    std::vector<metrics::VolumePrediction> preds;
    std::vector<Volume> gts;
    for (const auto& dv : test.volumes) {
        preds.push_back({dv.volume.id, segmodel::predict_volume(params, dv.volume)});
        gts.push_back(dv.volume);
    }
    return metrics::evaluate_run(preds, gts);
}

struct RunResult {
    std::uint64_t seed = 0;
    metrics::MetricReport report;
    std::vector<double> loss_curve;
};

struct RowResult {
    AblationRow row;
    std::vector<RunResult> runs; // in plan seed order
    metrics::MetricSummary median;
};

struct RunManifest {
    std::string timestamp;
    std::string config_hash;
    std::string dataset_hash;
    std::vector<std::uint64_t> seeds;
    nlohmann::json plan;
    std::vector<RowResult> rows;
};

inline double median(std::vector<double> v) {
    if (v.empty())
        throw ValueError("median of an empty set");
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline metrics::MetricSummary median_summary(const std::vector<metrics::MetricSummary>& runs) {
    auto pick = [&](double metrics::MetricSummary::*field) {
        std::vector<double> v;
        for (const auto& r : runs)
            v.push_back(r.*field);
        return median(std::move(v));
    };
    using S = metrics::MetricSummary;
    return {pick(&S::ap50), pick(&S::ap75), pick(&S::iou), pick(&S::recall), pick(&S::precision), pick(&S::dice)};
}

/// Parallel job count: NOISYSEG_THREADS if set (>= 1), otherwise the hardware concurrency; never more than `jobs`.
inline std::size_t thread_budget(std::size_t jobs) {
    std::size_t n = std::max(1u, std::thread::hardware_concurrency());
    if (const char* env = std::getenv("NOISYSEG_THREADS")) {
        char* end = nullptr;
        const long v = std::strtol(env, &end, 10);
        if (end == env || *end != '\0' || v < 1)
            throw ConfigError(std::string("NOISYSEG_THREADS must be a positive integer, got '") + env + "'");
        n = static_cast<std::size_t>(v);
    }
    return std::max<std::size_t>(1, std::min(n, jobs));
}

inline std::string utc_timestamp() {
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

using ProgressFn = std::function<void(const std::string& row, std::uint64_t seed, const metrics::MetricSummary&)>;

inline RunManifest run_ablation(const AblationPlan& plan, const Corpus& corpus, const ProgressFn& progress = {}) {
    plan.validate();
    RunManifest m;
    m.timestamp = utc_timestamp();
    m.plan = to_json(plan);
    m.config_hash = git_blob_hash(m.plan.dump());
    m.dataset_hash = corpus.hash;
    m.seeds = plan.seeds;

    const auto binary = training_samples(corpus.train, LabelMode::binary);
    const auto soft = training_samples(corpus.train, LabelMode::soft);

    const std::size_t n_seeds = plan.seeds.size();
    const std::size_t jobs = plan.rows.size() * n_seeds;
    std::vector<RunResult> results(jobs);
    std::vector<std::exception_ptr> errors(jobs);
    std::atomic<std::size_t> next{0};
    std::mutex progress_mutex;

    auto worker = [&] {
        for (std::size_t j = next++; j < jobs; j = next++) {
            const AblationRow& row = plan.rows[j / n_seeds];
            try {
                segmodel::TrainConfig cfg = plan.train;
                cfg.loss = row.loss;
                cfg.seed = plan.seeds[j % n_seeds];
                auto trained = segmodel::train(row.label == LabelMode::binary ? binary : soft, cfg);
                results[j] = {cfg.seed, evaluate_params(trained.params, corpus.test), std::move(trained.loss_curve)};
                if (progress) {
                    std::lock_guard lock(progress_mutex);
                    progress(row.name, cfg.seed, results[j].report.aggregate);
                }
            } catch (...) {
                errors[j] = std::current_exception();
            }
        }
    };
    const std::size_t n_threads = thread_budget(jobs);
    std::vector<std::thread> pool;
    for (std::size_t t = 1; t < n_threads; ++t)
        pool.emplace_back(worker);
    worker();
    for (auto& t : pool)
        t.join();
    for (auto& e : errors)
        if (e)
            std::rethrow_exception(e);

    for (std::size_t r = 0; r < plan.rows.size(); ++r) {
        RowResult rr{plan.rows[r], {}, {}};
        std::vector<metrics::MetricSummary> summaries;
        for (std::size_t s = 0; s < n_seeds; ++s) {
            rr.runs.push_back(std::move(results[r * n_seeds + s]));
            summaries.push_back(rr.runs.back().report.aggregate);
        }
        rr.median = median_summary(summaries);
        m.rows.push_back(std::move(rr));
    }
    return m;
}

inline nlohmann::json to_json(const RunManifest& m) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& rr : m.rows) {
        nlohmann::json runs = nlohmann::json::array();
        for (const auto& r : rr.runs)
            runs.push_back({{"seed", r.seed}, {"loss_curve", r.loss_curve}, {"report", metrics::to_json(r.report)}});
        nlohmann::json j = to_json(rr.row);
        j["runs"] = runs;
        j["median"] = metrics::to_json(rr.median);
        rows.push_back(j);
    }
    return {{"timestamp", m.timestamp}, {"config_hash", m.config_hash}, {"dataset_hash", m.dataset_hash},
            {"seeds", m.seeds},         {"plan", m.plan},               {"rows", rows}};
}

namespace detail {

inline std::string fixed(double v, int decimals) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
    return buf;
}

inline std::string weight(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%g", v);
    return buf;
}

inline std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos)
        return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"')
            out += '"';
        out += c;
    }
    return out + "\"";
}

} // namespace detail

inline constexpr const char* csv_header = "Method,BCE,SCE,RCE,label,AP50,AP75,IoU%,Rec.,Prec.,Dice";

/// Median metrics per row. AP and IoU are percentages (2 decimals); recall, precision and Dice are
/// fractions (4 decimals). LF line endings.
inline std::string results_csv(const RunManifest& m) {
    std::string out = std::string(csv_header) + "\n";
    for (const auto& rr : m.rows) {
        const auto& s = rr.median;
        out += detail::csv_field(rr.row.name) + "," + detail::weight(rr.row.loss.w_bce) + "," +
               detail::weight(rr.row.loss.w_sce) + "," + detail::weight(rr.row.loss.w_rce) + "," +
               table_label(rr.row.label) + "," + detail::fixed(100.0 * s.ap50, 2) + "," +
               detail::fixed(100.0 * s.ap75, 2) + "," + detail::fixed(100.0 * s.iou, 2) + "," +
               detail::fixed(s.recall, 4) + "," + detail::fixed(s.precision, 4) + "," + detail::fixed(s.dice, 4) + "\n";
    }
    return out;
}

} // namespace noisyseg::bench
