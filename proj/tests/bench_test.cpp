#include <cstdio>
#include <cstdlib>
#include <string>
#include <sys/wait.h>

#include <gtest/gtest.h>

#include "noisyseg/bench/ablation.hpp"
#include "noisyseg/bench/compare.hpp"
#include "noisyseg/bench/hash.hpp"
#include "noisyseg/bench/plan.hpp"
#include "noisyseg/core/json_io.hpp"

#include "test_util.hpp"

using namespace noisyseg;
using namespace noisyseg::bench;

namespace {

nlohmann::json summary(double ap50, double ap75, double iou, double rec, double prec, double dice) {
    return metrics::to_json(metrics::MetricSummary{ap50, ap75, iou, rec, prec, dice});
}

nlohmann::json fixture_manifest() {
    // fixed medians for the three reference rows
    return {{"rows",
             {{{"name", "Baseline"}, {"median", summary(0.12, 0.04, 0.31, 0.46, 0.52, 0.27)}},
              {{"name", "Soft Baseline"}, {"median", summary(0.14, 0.11, 0.37, 0.63, 0.60, 0.28)}},
              {{"name", "APL+soft (1 1 1)"}, {"median", summary(0.20, 0.15, 0.38, 0.68, 0.66, 0.35)}}}}};
}

const RowComparison& find(const Comparison& c, const std::string& name) {
    for (const auto& r : c.rows)
        if (r.name == name)
            return r;
    throw std::runtime_error("no row " + name);
}

struct EnvGuard {
    explicit EnvGuard(const char* value) {
        if (const char* old = std::getenv("NOISYSEG_THREADS"))
            saved = old;
        if (value)
            ::setenv("NOISYSEG_THREADS", value, 1);
        else
            ::unsetenv("NOISYSEG_THREADS");
    }
    ~EnvGuard() {
        if (saved.empty())
            ::unsetenv("NOISYSEG_THREADS");
        else
            ::setenv("NOISYSEG_THREADS", saved.c_str(), 1);
    }
    std::string saved;
};

int run_cli(const std::string& args, std::string* out = nullptr) {
    const std::string cmd = std::string(NOISYSEG_CLI) + " " + args + " 2>/dev/null";
    FILE* pipe = ::popen(cmd.c_str(), "r");
    if (!pipe)
        return -1;
    char buf[4096];
    std::string text;
    for (std::size_t n; (n = std::fread(buf, 1, sizeof buf, pipe)) > 0;)
        text.append(buf, n);
    const int status = ::pclose(pipe);
    if (out)
        *out = text;
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

synthgen::DatasetSpec tiny_spec() {
    synthgen::DatasetSpec s;
    s.n_volumes = 3;
    s.split = {2.0 / 3.0, 0.0, 1.0 / 3.0};
    s.phantom.depth = 4;
    return s;
}

} // namespace

TEST(Hash, GitBlobHashes) {
    EXPECT_EQ(git_blob_hash(""), "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391");
    EXPECT_EQ(git_blob_hash("hello\n"), "ce013625030ba8dba906f756967f9e9ca394464a");
    EXPECT_EQ(sha1_hex("abc"), "a9993e364706816aba3e25717850c26c9cd0d89d");
}

TEST(Hash, DirectoryHashTracksContentAndNames) {
    test::TempDir a("hash");
    std::filesystem::create_directories(a / "sub");
    write_text(a / "x.txt", "one");
    write_text(a / "sub/y.txt", "two");
    const std::string h = hash_directory(a.path());
    const std::string listing =
        git_blob_hash("two") + " sub/y.txt\n" + git_blob_hash("one") + " x.txt\n";
    EXPECT_EQ(h, git_blob_hash(listing));
    write_text(a / "x.txt", "One");
    EXPECT_NE(hash_directory(a.path()), h);
    EXPECT_THROW(hash_directory(a / "missing"), IoError);
}

TEST(Plan, DefaultRows) {
    const auto rows = default_rows();
    ASSERT_EQ(rows.size(), 8u);
    EXPECT_EQ(rows[0].name, baseline_row);
    EXPECT_FALSE(rows[0].loss.normalize_terms);
    EXPECT_EQ(rows[3].name, soft_baseline_row);
    EXPECT_EQ(rows[3].label, LabelMode::soft);
    EXPECT_EQ(rows[6].name, apl_soft_row);
    EXPECT_TRUE(rows[6].loss.normalize_terms);
    EXPECT_EQ(default_plan().seeds, (std::vector<std::uint64_t>{1, 2, 3, 4, 5}));
}

TEST(Plan, JsonRoundTrip) {
    AblationPlan p = default_plan();
    p.seeds = {7, 8};
    p.train.epochs = 3;
    p.dataset.spec.n_volumes = 5;
    const auto back = plan_from_json(nlohmann::json::parse(to_json(p).dump()));
    EXPECT_EQ(to_json(back), to_json(p));
    EXPECT_EQ(back.rows.size(), 8u);
    EXPECT_EQ(back.train.epochs, 3);
    EXPECT_EQ(back.dataset.spec.n_volumes, 5u);
}

TEST(Plan, OmittedFieldsUseDefaults) {
    const auto p = plan_from_json({{"dataset", {{"path", "data"}}}});
    EXPECT_EQ(p.rows.size(), 8u);
    EXPECT_EQ(*p.dataset.path, "data");
    EXPECT_EQ(p.seeds.size(), 5u);
}

TEST(Plan, Errors) {
    nlohmann::json dup = to_json(default_plan());
    dup["rows"][1]["name"] = "Baseline";
    EXPECT_THROW(plan_from_json(dup), ConfigError);
    nlohmann::json bad_label = to_json(default_plan());
    bad_label["rows"][0]["label"] = "fuzzy";
    EXPECT_THROW(plan_from_json(bad_label), ConfigError);
    EXPECT_THROW(plan_from_json({{"seeds", nlohmann::json::array()}}), ConfigError);
    EXPECT_THROW(plan_from_json({{"dataset", {{"neither", 1}}}}), ConfigError);
    EXPECT_THROW(plan_from_json({{"rows", "all"}}), ConfigError);
}

TEST(Compare, FixedMediansGiveExpectedDeltas) {
    const auto c = compare_rows(fixture_manifest());
    const auto& apl = find(c, apl_soft_row);
    EXPECT_NEAR(apl.delta.recall, 0.22, 1e-12);
    EXPECT_NEAR(apl.delta.precision, 0.14, 1e-12);
    EXPECT_NEAR(apl.delta.dice, 0.08, 1e-12);
    EXPECT_TRUE(c.soft_baseline_dice_above_baseline);
    EXPECT_TRUE(c.soft_baseline_recall_above_baseline);
    EXPECT_EQ(c.apl_soft_recall_rank, 1u);
    EXPECT_EQ(c.apl_soft_precision_rank, 1u);
    EXPECT_EQ(c.apl_soft_dice_rank, 1u);
    EXPECT_TRUE(c.ordering_holds());
    EXPECT_EQ(find(c, baseline_row).delta, metrics::MetricSummary{});
    EXPECT_TRUE(to_json(c)["flags"]["ordering_holds"].get<bool>());
}

TEST(Compare, IdenticalRowsHaveZeroDelta) {
    auto m = fixture_manifest();
    m["rows"][2]["median"] = m["rows"][0]["median"];
    const auto c = compare_rows(m);
    EXPECT_EQ(find(c, apl_soft_row).delta, metrics::MetricSummary{});
    EXPECT_FALSE(c.ordering_holds());
}

TEST(Compare, IncompleteManifestIsRejected) {
    auto missing = fixture_manifest();
    missing["rows"].erase(1);
    EXPECT_THROW(compare_rows(missing), DataError);
    auto no_median = fixture_manifest();
    no_median["rows"][0].erase("median");
    EXPECT_THROW(compare_rows(no_median), DataError);
    auto no_runs = fixture_manifest();
    no_runs["rows"][0]["runs"] = nlohmann::json::array();
    EXPECT_THROW(compare_rows(no_runs), DataError);
    EXPECT_THROW(compare_rows(nlohmann::json::object()), DataError);
}

TEST(Median, OddAndEven) {
    EXPECT_EQ(median({3, 1, 2}), 2.0);
    EXPECT_EQ(median({4, 1, 3, 2}), 2.5);
    EXPECT_THROW(median({}), ValueError);
}

TEST(Threads, BudgetFromEnvironment) {
    {
        EnvGuard env("2");
        EXPECT_EQ(thread_budget(40), 2u);
        EXPECT_EQ(thread_budget(1), 1u);
    }
    {
        EnvGuard env("zero");
        EXPECT_THROW(thread_budget(4), ConfigError);
    }
    {
        EnvGuard env("0");
        EXPECT_THROW(thread_budget(4), ConfigError);
    }
    EnvGuard env(nullptr);
    EXPECT_GE(thread_budget(4), 1u);
}

TEST(Csv, HeaderAndRowFormat) {
    RunManifest m;
    RowResult r{default_rows()[6], {}, {0.2, 0.15, 0.38, 0.68, 0.66, 0.35}};
    m.rows.push_back(r);
    const std::string csv = results_csv(m);
    EXPECT_EQ(csv, std::string(csv_header) + "\nAPL+soft (1 1 1),1,1,1,soft,20.00,15.00,38.00,0.6800,0.6600,0.3500\n");
    EXPECT_EQ(csv.find('\r'), std::string::npos);
    m.rows[0].row.name = "a,b";
    EXPECT_NE(results_csv(m).find("\n\"a,b\",1,1,1,soft,"), std::string::npos);
}

TEST(Ablation, ResultsIndependentOfThreadCount) {
    test::TempDir dir("abl");
    synthgen::make_dataset(tiny_spec(), dir / "data");
    const Corpus corpus = load_corpus(dir / "data");
    AblationPlan plan;
    plan.rows = {default_rows()[0], default_rows()[6]};
    plan.seeds = {1, 2};
    plan.train.epochs = 1;
    plan.dataset.path = (dir / "data").string();

    std::string one, three;
    {
        EnvGuard env("1");
        one = results_csv(run_ablation(plan, corpus));
    }
    {
        EnvGuard env("3");
        const auto m = run_ablation(plan, corpus);
        three = results_csv(m);
        ASSERT_EQ(m.rows.size(), 2u);
        ASSERT_EQ(m.rows[0].runs.size(), 2u);
        EXPECT_EQ(m.rows[0].runs[1].seed, 2u);
        EXPECT_EQ(m.dataset_hash, hash_directory(dir / "data"));
        const auto j = to_json(m);
        EXPECT_EQ(j["rows"][1]["name"], apl_soft_row);
        EXPECT_EQ(j["config_hash"], git_blob_hash(to_json(plan).dump()));
    }
    EXPECT_EQ(one, three);
    EXPECT_EQ(std::count(one.begin(), one.end(), '\n'), 3);
}

TEST(Ablation, CorpusRequiresTestGroundTruth) {
    test::TempDir dir("abl");
    auto spec = tiny_spec();
    spec.split = {1.0, 0.0, 0.0};
    synthgen::make_dataset(spec, dir.path());
    EXPECT_THROW(load_corpus(dir.path()), DataError);
}

TEST(Cli, ExitCodes) {
    test::TempDir dir("cli");
    EXPECT_EQ(run_cli("bogus"), 2);
    EXPECT_EQ(run_cli("ablate --plan " + (dir / "missing.json").string() + " --out " + dir.path().string()), 2);
    write_json(dir / "bad_plan.json", {{"seeds", nlohmann::json::array()}});
    EXPECT_EQ(run_cli("ablate --plan " + (dir / "bad_plan.json").string() + " --out " + (dir / "o").string()), 2);
    std::filesystem::create_directories(dir / "empty");
    EXPECT_EQ(run_cli("train --data " + (dir / "empty").string() + " --loss Baseline --out " + (dir / "c").string()),
              3);
    EXPECT_EQ(run_cli("train --data " + (dir / "empty").string() + " --loss nonsense --out " + (dir / "c").string()),
              2);
    std::string out;
    EXPECT_EQ(run_cli("gradcheck --size 8", &out), 0);
    EXPECT_NE(out.find("APL+soft (2 2 1)"), std::string::npos);
}

TEST(Cli, SynthTrainEvalPipeline) {
    test::TempDir dir("cli");
    write_json(dir / "spec.json", synthgen::to_json(tiny_spec()));
    std::string first, second;
    ASSERT_EQ(run_cli("synth --spec " + (dir / "spec.json").string() + " --out " + (dir / "d1").string(), &first), 0);
    ASSERT_EQ(run_cli("synth --spec " + (dir / "spec.json").string() + " --out " + (dir / "d2").string(), &second), 0);
    EXPECT_EQ(first.substr(first.rfind(' ')), second.substr(second.rfind(' ')));
    EXPECT_EQ(hash_directory(dir / "d1"), hash_directory(dir / "d2"));

    const std::string data = (dir / "d1").string();
    ASSERT_EQ(run_cli("train --data " + data + " --loss 1,1,1,soft --epochs 1 --out " + (dir / "ck").string()), 0);
    const auto index = read_json(dir / "ck/index.json");
    EXPECT_EQ(index["metadata"]["row"]["name"], apl_soft_row);
    EXPECT_EQ(index["metadata"]["loss_curve"].size(), 1u);
    std::string line;
    ASSERT_EQ(run_cli("eval --ckpt " + (dir / "ck").string() + " --data " + data + " --report " +
                          (dir / "r.json").string(),
                      &line),
              0);
    EXPECT_EQ(line.rfind("AP50", 0), 0u);
    EXPECT_NO_THROW(metrics::report_from_json(read_json(dir / "r.json")));

    write_json(dir / "p.json", {{"lambda", 0.0}, {"z_threshold", 50.0}});
    EXPECT_EQ(run_cli("softlabel --data " + data + " --params " + (dir / "p.json").string()), 0);
    EXPECT_NE(hash_directory(dir / "d1"), hash_directory(dir / "d2"));
}
