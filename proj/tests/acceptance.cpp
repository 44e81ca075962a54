// Acceptance run: one PASS/FAIL line per criterion.
//
//   noisyseg-acceptance --cli <path to noisyseg> --work <dir> [--only 1,2,...] [--known-failure 7]
//
// Criteria listed with --known-failure still run and still print FAIL when they fail, marked
// "(known)"; they do not change the exit status. Any other failure exits 1.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <functional>
#include <limits>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "noisyseg/bench/compare.hpp"
#include "noisyseg/bench/plan.hpp"
#include "noisyseg/core/json_io.hpp"
#include "noisyseg/losses/losses.hpp"
#include "noisyseg/metrics/report.hpp"
#include "noisyseg/softlabel/json.hpp"
#include "noisyseg/softlabel/pipeline.hpp"
#include "noisyseg/synthgen/dataset.hpp"

#include "metrics_fixture.hpp"

namespace fs = std::filesystem;
using namespace noisyseg;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

struct CliRun {
    int status = -1;
    std::string out;
};

CliRun run_cli(const std::string& cli, const std::string& args, const std::string& env = "") {
    const std::string cmd = env + (env.empty() ? "" : " ") + "'" + cli + "' " + args + " 2>/dev/null";
    CliRun r;
    FILE* pipe = ::popen(cmd.c_str(), "r");
    if (!pipe)
        return r;
    char buf[4096];
    for (std::size_t n; (n = std::fread(buf, 1, sizeof buf, pipe)) > 0;)
        r.out.append(buf, n);
    const int status = ::pclose(pipe);
    r.status = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

std::vector<double> random_predictions(std::size_t n, unsigned seed) {
    std::mt19937_64 gen(seed);
    std::uniform_real_distribution<double> u(1e-9, 1.0 - 1e-9);
    std::vector<double> v(n);
    for (auto& x : v)
        x = u(gen);
    return v;
}

// 1 ---------------------------------------------------------------------------------------------

Outcome loss_oracles() {
    const auto t0 = Clock::now();
    using namespace losses;
    const Extent one{1, 1};
    auto map = [&](Family f, bool norm, double p, float t) {
        const std::vector<double> pv{p};
        const std::vector<float> tv{t};
        return term<double>(f, norm, one, pv, tv).value;
    };
    auto apl1 = [&](double b, double s, double r, bool norm, double p, float t) {
        LossConfig c;
        c.w_bce = b;
        c.w_sce = s;
        c.w_rce = r;
        c.normalize_terms = norm;
        const std::vector<double> pv{p};
        const std::vector<float> tv{t};
        return apl<double>(c, one, pv, tv).value;
    };
    struct Case {
        const char* name;
        double got, want;
    };
    const double p_min = default_p_min;
    const std::vector<Case> cases{
        {"soft_ce(1,1)", map(Family::cross_entropy, false, 1.0, 1.0f), 0.0},
        {"soft_ce(0.5,1)", map(Family::cross_entropy, false, 0.5, 1.0f), 0.6931471805599453},
        {"soft_ce(0.7,0.7)", pixel::ce(0.7, 0.7, p_min).value, 0.6108643020548935},
        {"soft_rce(0.5,1)", map(Family::reverse_cross_entropy, false, 0.5, 1.0f), 23.025850929940457},
        {"soft_rce(1,1)", map(Family::reverse_cross_entropy, false, 1.0, 1.0f), 0.0},
        {"mae(0.25,0.25)", map(Family::mean_absolute, false, 0.25, 0.25f), 0.0},
        {"mae(0.25,1)", map(Family::mean_absolute, false, 0.25, 1.0f), 0.75},
        {"nce(0.5,0)", map(Family::cross_entropy, true, 0.5, 0.0f), 0.5},
        {"nce(0.5,1)", map(Family::cross_entropy, true, 0.5, 1.0f), 0.5},
        {"nce(0.9,1)", map(Family::cross_entropy, true, 0.9, 1.0f), 0.04375535530340077},
        {"apl(0,1,1,norm)(0.5,1)", apl1(0, 1, 1, true, 0.5, 1.0f), 1.0},
        {"apl(1,0,0)(0.3,1)", apl1(1, 0, 0, false, 0.3, 1.0f), map(Family::cross_entropy, false, 0.3, 1.0f)},
        {"apl(1,0,0)(0.3,0)", apl1(1, 0, 0, false, 0.3, 0.0f), -std::log(0.7)},
    };
    double worst = 0.0;
    std::string worst_name = "-";
    for (const auto& c : cases) {
        const double err = std::abs(c.got - c.want);
        if (err > worst || std::isnan(err)) {
            worst = std::isnan(err) ? std::numeric_limits<double>::infinity() : err;
            worst_name = c.name;
        }
    }
    const double secs = seconds_since(t0);
    return {worst <= 1e-9 && secs < 1.0,
            fmt("%zu oracles, max abs err %.2e (%s), %.3f s", cases.size(), worst, worst_name.c_str(), secs)};
}

// 2, 3 ------------------------------------------------------------------------------------------

constexpr losses::Family families[] = {losses::Family::cross_entropy, losses::Family::reverse_cross_entropy,
                                       losses::Family::mean_absolute};

Outcome normalization_identity() {
    const auto preds = random_predictions(1000, 2);
    double worst = 0.0;
    for (auto f : families)
        for (double p : preds) {
            const double s = losses::pixel::normalized(f, p, 0.0, losses::default_p_min).loss.value +
                             losses::pixel::normalized(f, p, 1.0, losses::default_p_min).loss.value;
            worst = std::max(worst, std::abs(s - 1.0));
        }
    return {worst <= 1e-12, fmt("3 families x 1000 predictions, max |sum - 1| %.2e", worst)};
}

Outcome symmetry_condition() {
    const auto preds = random_predictions(1000, 3);
    auto spread = [&](const std::function<double(double)>& sum) {
        double lo = std::numeric_limits<double>::infinity(), hi = -lo;
        for (double p : preds) {
            lo = std::min(lo, sum(p));
            hi = std::max(hi, sum(p));
        }
        return hi - lo;
    };
    using namespace losses;
    auto normalized_sum = [](Family f) {
        return [f](double p) {
            return pixel::normalized(f, p, 0.0, default_p_min).loss.value +
                   pixel::normalized(f, p, 1.0, default_p_min).loss.value;
        };
    };
    const double nce = spread(normalized_sum(Family::cross_entropy));
    const double nrce = spread(normalized_sum(Family::reverse_cross_entropy));
    const double mae = spread([](double p) { return pixel::mae(p, 0.0).value + pixel::mae(p, 1.0).value; });
    const double ce = spread([](double p) {
        return pixel::ce(p, 0.0, default_p_min).value + pixel::ce(p, 1.0, default_p_min).value;
    });
    const bool ok = nce <= 1e-12 && nrce <= 1e-12 && mae <= 1e-12 && ce > 1e-3;
    return {ok, fmt("spread NCE %.1e, NRCE %.1e, MAE %.1e; plain CE %.3g (must vary)", nce, nrce, mae, ce)};
}

// 4 ---------------------------------------------------------------------------------------------

Outcome gradient_checks(const std::string& cli) {
    const auto t0 = Clock::now();
    const CliRun r = run_cli(cli, "gradcheck --size 16 --seed 1");
    const double secs = seconds_since(t0);
    std::istringstream in(r.out);
    std::string line;
    std::size_t rows = 0;
    double worst = 0.0;
    while (std::getline(in, line)) {
        const auto ok = line.rfind(" ok");
        const auto bad = line.rfind(" FAIL");
        if (ok == std::string::npos && bad == std::string::npos)
            continue;
        ++rows;
        std::istringstream fields(line.substr(20));
        double loss_err = 0, net_err = 0;
        fields >> loss_err >> net_err;
        worst = std::max({worst, loss_err, net_err});
    }
    return {r.status == 0 && rows == 8 && worst < 1e-4 && secs < 120.0,
            fmt("%zu rows, max rel err %.2e, exit %d, %.1f s", rows, worst, r.status, secs)};
}

// 5 ---------------------------------------------------------------------------------------------

Outcome rce_mae_identity() {
    const auto preds = random_predictions(1000, 5);
    const Extent e{1, preds.size()};
    const double scale = -std::log(losses::default_p_min);
    double worst = 0.0;
    for (float t : {0.0f, 1.0f}) {
        const std::vector<float> label(preds.size(), t);
        const auto rce = losses::term<double>(losses::Family::reverse_cross_entropy, false, e, preds, label);
        const auto mae = losses::term<double>(losses::Family::mean_absolute, false, e, preds, label);
        worst = std::max(worst, std::abs(rce.value - scale * mae.value) / std::abs(rce.value));
        for (std::size_t i = 0; i < preds.size(); ++i) {
            const double r = losses::pixel::rce(preds[i], t, losses::default_p_min).value;
            const double m = losses::pixel::mae(preds[i], t).value;
            worst = std::max(worst, std::abs(r - scale * m) / std::max(std::abs(r), 1e-300));
        }
    }
    return {worst <= 1e-9, fmt("binary labels x 1000 predictions, max rel err %.2e", worst)};
}

// 6 ---------------------------------------------------------------------------------------------

// Straight re-derivation of the four soft-label rules from raw arrays and the rater JSON, sharing
// no code with the library pipeline.
std::vector<std::vector<float>> oracle_soft_labels(const nlohmann::json& raters, const Volume& v, double k,
                                                   double lambda) {
    const auto& tpl = raters["template"];
    const int ox = tpl["origin"][0], oy = tpl["origin"][1], cell = tpl["cell"], rows = tpl["rows"], cols = tpl["cols"];
    const int n_raters = raters["n_raters"];
    const std::size_t h = v.extent().height, w = v.extent().width, depth = v.depth();

    std::vector<std::vector<float>> stage(depth, std::vector<float>(h * w, 0.0f));
    for (const auto& s : raters["slices"]) {
        const std::size_t z = s["slice"];
        std::vector<int> count(static_cast<std::size_t>(rows * cols), 0);
        for (const auto& r : s["raters"])
            for (const auto& rc : r["cells"])
                ++count[static_cast<std::size_t>(rc[0].get<int>() * cols + rc[1].get<int>())];
        std::vector<float>& out = stage[z];
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x) {
                const long dy = static_cast<long>(y) - oy, dx = static_cast<long>(x) - ox;
                if (dy < 0 || dx < 0)
                    continue;
                const long r = dy / cell, c = dx / cell;
                if (r >= rows || c >= cols)
                    continue;
                const int n = count[static_cast<std::size_t>(r * cols + c)];
                out[y * w + x] = static_cast<float>(static_cast<double>(n) / static_cast<double>(n_raters));
            }
        const auto bone = v.bone[z].values();
        const auto img = v.intensity[z].values();
        double sum = 0.0;
        std::size_t nb = 0;
        for (std::size_t i = 0; i < h * w; ++i) {
            if (bone[i] == 0.0f)
                out[i] = 0.0f;
            else {
                sum += img[i];
                ++nb;
            }
        }
        if (nb == 0)
            continue;
        const double mean = sum / static_cast<double>(nb);
        double ss = 0.0;
        for (std::size_t i = 0; i < h * w; ++i)
            if (bone[i] != 0.0f)
                ss += (img[i] - mean) * (img[i] - mean);
        const double cut = mean + k * std::sqrt(ss / static_cast<double>(nb));
        for (std::size_t i = 0; i < h * w; ++i)
            if (out[i] > 0.0f && static_cast<double>(img[i]) > cut)
                out[i] = 1.0f;
    }
    std::vector<std::vector<float>> result = stage;
    for (std::size_t z = 1; z + 1 < depth; ++z)
        for (std::size_t i = 0; i < h * w; ++i) {
            const float lo = std::min(stage[z - 1][i], stage[z + 1][i]);
            result[z][i] = std::max(stage[z][i], static_cast<float>(lambda * static_cast<double>(lo)));
        }
    for (std::size_t z = 0; z < depth; ++z)
        for (std::size_t i = 0; i < h * w; ++i)
            if (v.bone[z][i] == 0.0f)
                result[z][i] = 0.0f;
    return result;
}

Outcome softlabel_fixture() {
    synthgen::DatasetSpec spec;
    spec.noise.n_raters = 3;
    spec.phantom.depth = 12;
    std::size_t volumes = 0, pixels = 0, mismatches = 0, nonzero = 0, boosted = 0;
    for (const auto& [z_thr, lambda] : std::vector<std::pair<double, double>>{{1.0, 0.5}, {0.5, 1.0}, {2.0, 0.25}})
        for (std::size_t index = 0; index < 4; ++index) {
            spec.softlabel.z_threshold = z_thr;
            spec.softlabel.lambda = lambda;
            const auto g = synthgen::generate_corpus_volume(spec, index);
            const auto raters = nlohmann::json::parse(softlabel::to_json(g.ratings).dump());
            const auto want = oracle_soft_labels(raters, g.phantom.volume, z_thr, lambda);
            ++volumes;
            for (std::size_t z = 0; z < g.soft.size(); ++z)
                for (std::size_t i = 0; i < want[z].size(); ++i) {
                    ++pixels;
                    const float got = g.soft[z][i];
                    if (std::memcmp(&got, &want[z][i], sizeof(float)) != 0)
                        ++mismatches;
                    nonzero += got > 0.0f;
                    boosted += got == 1.0f;
                }
        }
    return {mismatches == 0 && nonzero > 0 && boosted > 0,
            fmt("%zu volumes (3 raters, 12 slices), %zu pixels, %zu non-zero, %zu boosted, %zu bit mismatches",
                volumes, pixels, nonzero, boosted, mismatches)};
}

// 8 ---------------------------------------------------------------------------------------------

struct ApOrder {
    std::size_t summaries = 0, violations = 0;
    void check(const metrics::MetricSummary& s) {
        ++summaries;
        violations += s.ap75 > s.ap50;
    }
    void check(const metrics::MetricReport& r) {
        check(r.aggregate);
        for (const auto& v : r.per_volume)
            check(v.metrics);
    }
    void check_manifest(const fs::path& path) {
        if (!fs::exists(path))
            return;
        const auto m = read_json(path);
        for (const auto& row : m["rows"]) {
            check(metrics::summary_from_json(row["median"]));
            for (const auto& run : row["runs"])
                check(metrics::report_from_json(run["report"]));
        }
    }
};

// Thresholded, shifted and blurred copies of the ground truth at several corruption levels.
metrics::MetricReport noisy_predictions(const synthgen::DatasetSpec& spec, std::uint64_t seed, double noise) {
    std::mt19937_64 gen(seed);
    std::normal_distribution<double> n(0.0, noise);
    std::vector<metrics::VolumePrediction> preds;
    std::vector<Volume> gts;
    for (std::size_t index = 0; index < 3; ++index) {
        const auto g = synthgen::generate_corpus_volume(spec, index);
        metrics::VolumePrediction p{g.phantom.volume.id, {}};
        const int shift = static_cast<int>(gen() % 3);
        for (const auto& m : g.phantom.volume.gt)
            p.slices.push_back(PredMap::generate(m.extent(), [&](std::size_t y, std::size_t x) {
                const std::size_t xs = std::min(m.width() - 1, x + static_cast<std::size_t>(shift));
                return std::clamp(0.7 * m(y, xs) + 0.15 + n(gen), 0.0, 1.0);
            }));
        preds.push_back(std::move(p));
        gts.push_back(g.phantom.volume);
    }
    return metrics::evaluate_run(preds, gts);
}

Outcome metrics_oracle(const std::vector<fs::path>& manifests) {
    const auto f = test::metrics_fixture();
    const auto r = metrics::evaluate_run(f.preds, f.gts);
    double worst = 0.0;
    auto cmp = [&](const metrics::MetricSummary& a, const metrics::MetricSummary& b) {
        for (auto field : {&metrics::MetricSummary::ap50, &metrics::MetricSummary::ap75, &metrics::MetricSummary::iou,
                           &metrics::MetricSummary::recall, &metrics::MetricSummary::precision,
                           &metrics::MetricSummary::dice})
            worst = std::max(worst, std::abs(a.*field - b.*field));
    };
    cmp(r.aggregate, f.aggregate);
    bool counts_ok = r.aggregate_pixels == f.pixels && r.aggregate_instances == f.instances &&
                     r.per_volume.size() == f.per_volume.size();
    for (std::size_t v = 0; counts_ok && v < f.per_volume.size(); ++v)
        cmp(r.per_volume[v].metrics, f.per_volume[v]);

    ApOrder order;
    order.check(r);
    synthgen::DatasetSpec spec;
    for (std::uint64_t seed = 1; seed <= 4; ++seed)
        for (double noise : {0.05, 0.2, 0.35}) {
            spec.phantom.seed = seed;
            order.check(noisy_predictions(spec, seed, noise));
        }
    std::size_t from_runs = order.summaries;
    for (const auto& m : manifests)
        order.check_manifest(m);
    from_runs = order.summaries - from_runs;
    return {counts_ok && worst <= 1e-12 && order.violations == 0,
            fmt("fixture max abs err %.1e, counts %s; AP75 <= AP50 in %zu/%zu summaries (%zu from ablation runs)",
                worst, counts_ok ? "exact" : "DIFFER", order.summaries - order.violations, order.summaries,
                from_runs)};
}

// 7 ---------------------------------------------------------------------------------------------

Outcome directional_ablation(const std::string& cli, const fs::path& out) {
    const auto t0 = Clock::now();
    fs::remove_all(out);
    const CliRun r = run_cli(cli, "ablate --out '" + out.string() + "'");
    const double secs = seconds_since(t0);
    if (r.status != 0)
        return {false, fmt("ablate exited %d after %.0f s", r.status, secs)};
    const auto c = bench::compare_rows(read_json(out / "manifest.json"));
    auto median = [&](const char* name) {
        for (const auto& row : c.rows)
            if (row.name == name)
                return row.median;
        return metrics::MetricSummary{};
    };
    const auto base = median(bench::baseline_row), soft = median(bench::soft_baseline_row),
               apl = median(bench::apl_soft_row);
    const bool a = soft.dice >= base.dice + 0.02;
    const bool b = apl.recall >= base.recall + 0.05 && apl.precision >= base.precision + 0.03;
    const bool rank = c.apl_soft_dice_rank <= 2;
    const bool fast = secs < 600.0;
    return {a && b && rank && fast,
            fmt("(a) soft dice %.4f vs base %.4f%+.2f: %s; (b) apl rec %.4f vs %.4f%+.2f, prec %.4f vs %.4f%+.2f: %s; "
                "(c) apl dice rank %zu: %s; %.0f s on %u core(s): %s",
                soft.dice, base.dice, 0.02, a ? "ok" : "no", apl.recall, base.recall, 0.05, apl.precision,
                base.precision, 0.03, b ? "ok" : "no", c.apl_soft_dice_rank, rank ? "ok" : "no", secs,
                std::max(1u, std::thread::hardware_concurrency()), fast ? "ok" : "no")};
}

// 9 ---------------------------------------------------------------------------------------------

Outcome ablate_determinism(const std::string& cli, const fs::path& work) {
    bench::AblationPlan plan = bench::default_plan();
    plan.seeds = {1, 2};
    plan.train.epochs = 2;
    plan.dataset.spec.n_volumes = 5;
    plan.dataset.spec.split = {0.6, 0.0, 0.4};
    fs::create_directories(work);
    write_json(work / "plan.json", bench::to_json(plan));
    std::vector<std::string> csvs;
    for (const char* threads : {"1", "4"}) {
        const fs::path out = work / (std::string("run-") + threads);
        fs::remove_all(out);
        const CliRun r = run_cli(cli, "ablate --plan '" + (work / "plan.json").string() + "' --out '" + out.string() + "'",
                                 std::string("NOISYSEG_THREADS=") + threads);
        if (r.status != 0)
            return {false, fmt("ablate exited %d", r.status)};
        csvs.push_back(read_text(out / "results.csv"));
        if (csvs.back() != r.out)
            return {false, "stdout differs from results.csv"};
    }
    const auto lines = std::count(csvs[0].begin(), csvs[0].end(), '\n');
    return {csvs[0] == csvs[1] && lines == 9,
            fmt("8 rows x 2 seeds, NOISYSEG_THREADS 1 vs 4: %zu bytes, %s", csvs[0].size(),
                csvs[0] == csvs[1] ? "byte-identical" : "DIFFERENT")};
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"acceptance criteria 1-9"};
    std::string cli, only, known;
    fs::path work = fs::temp_directory_path() / "noisyseg-acceptance";
    app.add_option("--cli", cli, "path to the noisyseg executable")->required()->check(CLI::ExistingFile);
    app.add_option("--work", work, "scratch directory for ablation outputs");
    app.add_option("--only", only, "comma-separated criteria to run (default all)");
    app.add_option("--known-failure", known, "comma-separated criteria that may fail without failing the run");
    CLI11_PARSE(app, argc, argv);

    auto parse_set = [](const std::string& s) {
        std::set<int> out;
        std::stringstream in(s);
        for (std::string item; std::getline(in, item, ',');)
            if (!item.empty())
                out.insert(std::stoi(item));
        return out;
    };
    const std::set<int> selected = parse_set(only), expected_fail = parse_set(known);
    auto wanted = [&](int k) { return selected.empty() || selected.count(k) != 0; };
    fs::create_directories(work);

    int unexpected = 0;
    std::map<int, std::string> lines;
    auto report = [&](int k, const char* title, const std::function<Outcome()>& fn) {
        if (!wanted(k))
            return;
        std::fprintf(stderr, "running criterion %d (%s)\n", k, title);
        Outcome o;
        try {
            o = fn();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const bool tolerated = !o.pass && expected_fail.count(k) != 0;
        lines[k] = fmt("criterion %d %s%s  %s: ", k, o.pass ? "PASS" : "FAIL", tolerated ? " (known)" : "", title) +
                   o.detail;
        unexpected += !o.pass && !tolerated;
    };

    report(1, "loss oracles", loss_oracles);
    report(2, "normalization identity", normalization_identity);
    report(3, "symmetry condition", symmetry_condition);
    report(4, "gradient checks", [&] { return gradient_checks(cli); });
    report(5, "RCE-MAE identity", rce_mae_identity);
    report(6, "soft-label pipeline oracle", softlabel_fixture);
    report(7, "directional ablation", [&] { return directional_ablation(cli, work / "default"); });
    report(9, "ablate determinism", [&] { return ablate_determinism(cli, work / "determinism"); });
    // runs last so it can also scan the manifests written by 7 and 9
    report(8, "metrics oracle", [&] {
        return metrics_oracle({work / "default/manifest.json", work / "determinism/run-1/manifest.json"});
    });
    for (const auto& [k, line] : lines)
        std::printf("%s\n", line.c_str());
    return unexpected == 0 ? 0 : 1;
}
