#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "itnas/cli/app.hpp"
#include "itnas/cli/config.hpp"
#include "itnas/error.hpp"
#include "itnas/genotype_io.hpp"

namespace fs = std::filesystem;
using namespace itnas;

namespace {

struct Run {
    int code;
    std::string out;
    std::string err;
};

Run run(std::vector<std::string> args) {
    args.insert(args.begin(), "itnas");
    std::vector<const char*> argv;
    for (const auto& a : args) {
        argv.push_back(a.c_str());
    }
    std::ostringstream out, err;
    const int code = cli::run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
    return {code, out.str(), err.str()};
}

class CliTest : public ::testing::Test {
protected:
    fs::path dir;
    void SetUp() override {
        dir = fs::temp_directory_path() /
              (std::string("itnas-cli-") +
               ::testing::UnitTest::GetInstance()->current_test_info()->name());
        fs::remove_all(dir);
        fs::create_directories(dir);
    }
    void TearDown() override { fs::remove_all(dir); }

    fs::path write_genotype(const std::string& op) {
        Genotype g;
        for (CellGenotype* cell : {&g.normal, &g.reduction}) {
            for (int j = 2; j < 6; ++j) {
                cell->nodes.push_back({GenotypeEntry{0, op}, GenotypeEntry{1, op}});
            }
        }
        g.op_set = OperationSet::darts_default().names();
        const fs::path p = dir / (op + ".genotype.json");
        io::write_text_file(p, io::serialize_genotype(g));
        return p;
    }
};

} // namespace

TEST(CliConfig, ToyPresetIsValid) {
    const auto rc = cli::to_run_config(cli::merge_config(true, std::nullopt, {}));
    EXPECT_EQ(rc.data.source, "synthetic");
    EXPECT_EQ(rc.supernet.num_cells, 2);
    EXPECT_EQ(rc.search.seed, rc.seed);
}

TEST(CliConfig, FullScaleDefaults) {
    const auto doc = cli::merge_config(false, std::nullopt, {});
    EXPECT_EQ(doc["search"]["epochs"], 50);
    EXPECT_EQ(doc["search"]["tau_start"], 5.0);
    EXPECT_EQ(doc["search"]["tau_end"], 0.5);
    EXPECT_EQ(doc["search"]["weight_lr_start"], 0.025);
    EXPECT_EQ(doc["search"]["weight_lr_end"], 1e-3);
    EXPECT_EQ(doc["supernet"]["op_set"].size(), 7u);
}

TEST(CliConfig, OverridesAreStrict) {
    const auto doc = cli::merge_config(true, std::nullopt, {"search.epochs=3", "data.source=synthetic"});
    EXPECT_EQ(doc["search"]["epochs"], 3);
    try {
        cli::merge_config(true, std::nullopt, {"search.epoch=3"});
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("search.epoch"), std::string::npos);
    }
    EXPECT_THROW(cli::merge_config(true, std::nullopt, {"search.epochs=\"many\""}), ConfigError);
    EXPECT_THROW(cli::merge_config(true, std::nullopt, {"seed=-1"}), ConfigError);
    EXPECT_THROW(cli::merge_config(true, std::nullopt, {"noequals"}), ConfigError);
}

TEST(CliConfig, DigestIgnoresOutputDirectory) {
    auto a = cli::merge_config(true, std::nullopt, {"output_dir=\"x\""});
    auto b = cli::merge_config(true, std::nullopt, {"output_dir=\"y\""});
    EXPECT_EQ(cli::config_digest(a), cli::config_digest(b));
    EXPECT_NE(cli::config_digest(a),
              cli::config_digest(cli::merge_config(true, std::nullopt, {"seed=5"})));
}

TEST_F(CliTest, MissingDatasetPathNamesTheField) {
    const auto r = run({"search", "--out", (dir / "run").string()});
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.err.find("data.cifar10_paths"), std::string::npos) << r.err;
}

TEST_F(CliTest, UnknownStrategyPrintsUsage) {
    const auto r = run({"prune", "--checkpoint", "x.ckpt", "--strategy", "greedy"});
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.err.find("Usage"), std::string::npos) << r.err;
    EXPECT_NE(r.err.find("greedy"), std::string::npos);
}

TEST_F(CliTest, MissingSubcommandIsAnError) {
    EXPECT_EQ(run({}).code, 1);
    EXPECT_EQ(run({"--help"}).code, 0);
}

TEST_F(CliTest, SearchPruneAndRefuseToOverwrite) {
    const fs::path out = dir / "run";
    const std::vector<std::string> base = {"search", "--toy", "--set", "search.epochs=1",
                                           "--set", "data.synthetic.samples_per_class=4",
                                           "--set", "search.batch_size=4",
                                           "--set", "supernet.input_height=8",
                                           "--set", "supernet.input_width=8",
                                           "--set", "data.synthetic.height=8",
                                           "--set", "data.synthetic.width=8",
                                           "--out", out.string()};
    const auto first = run(base);
    ASSERT_EQ(first.code, 0) << first.err;
    for (const char* f : {"arch.ckpt", "history.txt", "config.echo.json"}) {
        EXPECT_TRUE(fs::exists(out / f)) << f;
    }
    const auto again = run(base);
    EXPECT_EQ(again.code, 1);
    EXPECT_NE(again.err.find("--force"), std::string::npos) << again.err;

    for (const char* strategy : {"tiep", "hard", "alg1-batch"}) {
        const auto p = run({"prune", "--checkpoint", (out / "arch.ckpt").string(), "--strategy", strategy});
        ASSERT_EQ(p.code, 0) << p.err;
        const auto g = io::parse_genotype(
            io::read_text_file(out / (std::string(strategy) + ".genotype.json")));
        EXPECT_TRUE(io::validate(g).empty());
    }
    EXPECT_EQ(run({"prune", "--checkpoint", (out / "arch.ckpt").string()}).code, 1);
    EXPECT_EQ(run({"prune", "--checkpoint", (out / "arch.ckpt").string(), "--force"}).code, 0);
}

TEST_F(CliTest, ExportDotIsDeterministic) {
    const auto g = write_genotype("sep_conv_3x3");
    ASSERT_EQ(run({"export-dot", "--genotype", g.string(), "--out", (dir / "a").string()}).code, 0);
    ASSERT_EQ(run({"export-dot", "--genotype", g.string(), "--out", (dir / "b").string()}).code, 0);
    for (const char* f : {"normal.dot", "reduction.dot"}) {
        EXPECT_EQ(io::read_text_file(dir / "a" / f), io::read_text_file(dir / "b" / f));
    }
    io::write_text_file(dir / "broken.json", "{\"schema_version\": 1");
    EXPECT_EQ(run({"export-dot", "--genotype", (dir / "broken.json").string(), "--out",
                   (dir / "c").string()})
                  .code,
              1);
}

TEST_F(CliTest, EvalRecord) {
    const auto g = write_genotype("sep_conv_3x3");
    const fs::path out = dir / "eval";
    const auto r = run({"eval", "--genotype", g.string(), "--toy", "--set", "eval.epochs=2",
                        "--set", "data.synthetic.samples_per_class=8", "--out", out.string()});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto rec = nlohmann::json::parse(io::read_text_file(out / "eval.json"));
    for (const char* key : {"genotype_digest", "seed", "train_acc", "val_acc"}) {
        EXPECT_TRUE(rec.contains(key)) << key;
    }
    EXPECT_EQ(rec["genotype_digest"],
              io::genotype_digest(io::parse_genotype(io::read_text_file(g))));
}

// Chance-level oracle: labels independent of the images cannot be predicted.
TEST_F(CliTest, RandomLabelsStayNearChance) {
    const auto g = write_genotype("identity");
    const fs::path out = dir / "eval";
    const auto r = run({"eval", "--genotype", g.string(), "--toy",
                        "--set", "data.synthetic.random_labels=true",
                        "--set", "data.synthetic.samples_per_class=128",
                        "--set", "eval.epochs=3", "--out", out.string()});
    ASSERT_EQ(r.code, 0) << r.err;
    const double acc = nlohmann::json::parse(io::read_text_file(out / "eval.json"))["val_acc"];
    EXPECT_NEAR(acc, 0.25, 0.1);
}

TEST_F(CliTest, GradcheckPasses) {
    const auto r = run({"gradcheck"});
    EXPECT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.out.find("transition"), std::string::npos);
    EXPECT_NE(r.out.find("attention"), std::string::npos);
}
