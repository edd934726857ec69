#include <fstream>
#include <sstream>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "gpderain/cli.hpp"
#include "test_util.hpp"

using namespace gpderain;
namespace fs = std::filesystem;

namespace {

int run_cli(std::vector<std::string> args, std::ostream& out) {
  args.insert(args.begin(), "gpderain");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  return cli::run(static_cast<int>(argv.size()), argv.data(), out);
}

int run_cli(std::vector<std::string> args) {
  std::ostringstream sink;
  return run_cli(std::move(args), sink);
}

std::size_t count_files(const fs::path& dir) {
  if (!fs::exists(dir)) return 0;
  return static_cast<std::size_t>(std::distance(fs::directory_iterator(dir), fs::directory_iterator{}));
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

TrainConfig small_config() {
  TrainConfig c;
  c.model.patch_size = 16;
  c.model.widths = {4, 8};
  c.model.latent_dim = 16;
  c.crop_size = 16;
  c.epochs = 2;
  c.lr = 1e-3;
  c.gp.n_nearest = 4;
  c.gp.n_farthest = 4;
  return c;
}

/// Small dataset plus a trained run under one root.
struct Fixture {
  fs::path root, data, run, config;
};

const Fixture& trained() {
  static const Fixture f = [] {
    Fixture x;
    x.root = testutil::temp_dir("cli_fixture");
    x.data = x.root / "data";
    x.run = x.root / "run";
    x.config = x.root / "config.json";
    save_train_config(small_config(), x.config);
    EXPECT_EQ(run_cli({"gen-data", "--out", x.data.string(), "--count", "20", "--size", "20x20", "--fraction-labeled",
                       "0.3", "--seed", "4", "--test-count", "3"}),
              0);
    EXPECT_EQ(run_cli({"train", "--data", x.data.string(), "--config", x.config.string(), "--out", x.run.string()}), 0);
    return x;
  }();
  return f;
}

}  // namespace

TEST(GenData, CountsAndLayout) {
  const auto dir = testutil::temp_dir("cli_gen");
  ASSERT_EQ(run_cli({"gen-data", "--out", dir.string(), "--count", "100", "--size", "16x16", "--fraction-labeled", "0.1",
                     "--seed", "1"}),
            0);
  EXPECT_EQ(count_files(dir / "labeled" / "rainy"), 10u);
  EXPECT_EQ(count_files(dir / "labeled" / "clean"), 10u);
  EXPECT_EQ(count_files(dir / "unlabeled" / "rainy"), 90u);
  EXPECT_TRUE(fs::exists(dir / "manifest.json"));
  EXPECT_TRUE(fs::exists(dir / "resolved_config.json"));
  const auto img = image::load_image(dir / "labeled" / "rainy" / "0000.pgm");
  EXPECT_EQ(img.shape, (Shape{1, 16, 16}));
}

TEST(GenData, FullyLabeledHasNoUnlabeledDirectory) {
  const auto dir = testutil::temp_dir("cli_gen_full");
  ASSERT_EQ(run_cli({"gen-data", "--out", dir.string(), "--count", "5", "--size", "8x8", "--fraction-labeled", "1.0"}), 0);
  EXPECT_FALSE(fs::exists(dir / "unlabeled"));
  EXPECT_EQ(count_files(dir / "labeled" / "rainy"), 5u);
}

TEST(GenData, SameFlagsSameManifestAndImages) {
  const auto a = testutil::temp_dir("cli_gen_a"), b = testutil::temp_dir("cli_gen_b");
  for (const auto& d : {a, b})
    ASSERT_EQ(run_cli({"gen-data", "--out", d.string(), "--count", "12", "--size", "12x10", "--fraction-labeled", "0.5",
                       "--seed", "3", "--regime", "labeled"}),
              0);
  EXPECT_EQ(slurp(a / "manifest.json"), slurp(b / "manifest.json"));
  EXPECT_EQ(slurp(a / "unlabeled" / "rainy" / "0003.pgm"), slurp(b / "unlabeled" / "rainy" / "0003.pgm"));
  const auto m = nlohmann::json::parse(slurp(a / "manifest.json"));
  EXPECT_EQ(m["seed"], 3);
  EXPECT_EQ(m["fraction_labeled"], 0.5);
}

TEST(GenData, UsageAndIoErrors) {
  const auto dir = testutil::temp_dir("cli_gen_bad");
  EXPECT_EQ(run_cli({"gen-data", "--out", dir.string(), "--count", "5", "--bogus"}), 2);
  EXPECT_EQ(run_cli({"gen-data", "--out", dir.string(), "--count", "5", "--size", "big"}), 2);
  EXPECT_EQ(run_cli({"gen-data", "--out", dir.string(), "--count", "5", "--fraction-labeled", "0"}), 2);
  EXPECT_EQ(run_cli({"gen-data", "--out", dir.string(), "--count", "5", "--regime", "drizzle"}), 2);
  EXPECT_EQ(run_cli({"gen-data", "--count", "5"}), 2);
  EXPECT_EQ(run_cli({}), 2);
  EXPECT_EQ(run_cli({"frobnicate"}), 2);
  EXPECT_EQ(run_cli({"gen-data", "--out", "/proc/gpderain_no_such/x", "--count", "2"}), 3);
}

TEST(Train, WritesRunArtifacts) {
  const auto& f = trained();
  for (const char* name : {"metrics.csv", "epochs.jsonl", "final.ckpt", "latent_store.gpls", "config.json", "run.json"})
    EXPECT_TRUE(fs::exists(f.run / name)) << name;
  EXPECT_EQ(train_config_from_json(nlohmann::json::parse(slurp(f.run / "config.json"))).lr, 1e-3);
}

TEST(Train, RerunGivesIdenticalMetrics) {
  const auto& f = trained();
  const auto again = f.root / "run_again";
  ASSERT_EQ(run_cli({"train", "--data", f.data.string(), "--config", f.config.string(), "--out", again.string()}), 0);
  EXPECT_EQ(slurp(f.run / "metrics.csv"), slurp(again / "metrics.csv"));
}

TEST(Train, SupervisedOnlyLogsNoUnlabeledSteps) {
  const auto& f = trained();
  const auto out = f.root / "run_sup";
  ASSERT_EQ(run_cli({"train", "--data", f.data.string(), "--config", f.config.string(), "--out", out.string(),
                     "--supervised-only"}),
            0);
  EXPECT_EQ(slurp(out / "metrics.csv").find("unlabeled"), std::string::npos);
  EXPECT_NE(slurp(f.run / "metrics.csv").find("unlabeled"), std::string::npos);
}

TEST(Train, MissingLabeledDirectoryIsCompatibilityExit) {
  const auto& f = trained();
  const auto empty = testutil::temp_dir("cli_empty_data");
  EXPECT_EQ(run_cli({"train", "--data", empty.string(), "--config", f.config.string(), "--out",
                     (f.root / "x").string()}),
            4);
}

TEST(Train, ConfigAndDatasetMismatch) {
  const auto& f = trained();
  auto cfg = small_config();
  cfg.model.patch_size = 32;
  cfg.crop_size = 32;
  const auto path = f.root / "big.json";
  save_train_config(cfg, path);
  EXPECT_EQ(run_cli({"train", "--data", f.data.string(), "--config", path.string(), "--out", (f.root / "y").string()}),
            4);
  std::ofstream(f.root / "broken.json") << "{\"lr\": ";
  EXPECT_EQ(run_cli({"train", "--data", f.data.string(), "--config", (f.root / "broken.json").string(), "--out",
                     (f.root / "z").string()}),
            4);
}

TEST(Train, ResumeFromInterruptedMatchesFullRun) {
  const auto& f = trained();
  const auto part = f.root / "run_part";
  ASSERT_EQ(run_cli({"train", "--data", f.data.string(), "--config", f.config.string(), "--out", part.string(),
                     "--stop-after", "1"}),
            0);
  ASSERT_TRUE(fs::exists(part / "interrupted.ckpt"));
  ASSERT_EQ(run_cli({"train", "--data", f.data.string(), "--config", f.config.string(), "--out", part.string(),
                     "--resume", (part / "interrupted.ckpt").string()}),
            0);
  EXPECT_EQ(slurp(part / "metrics.csv"), slurp(f.run / "metrics.csv"));
  EXPECT_EQ(slurp(part / "final.ckpt"), slurp(f.run / "final.ckpt"));
}

TEST(Eval, WritesReportConsistentWithRows) {
  const auto& f = trained();
  const auto out = f.root / "eval";
  ASSERT_EQ(run_cli({"eval", "--model", (f.run / "final.ckpt").string(), "--data", f.data.string(), "--out",
                     out.string()}),
            0);
  std::ifstream csv(out / "eval_report.csv");
  std::string line;
  std::getline(csv, line);
  EXPECT_EQ(line, "image_id,psnr_db,ssim");
  double sum = 0.0;
  int rows = 0;
  while (std::getline(csv, line)) {
    sum += std::stod(line.substr(line.find(',') + 1));
    ++rows;
  }
  EXPECT_EQ(rows, 3);
  const auto j = nlohmann::json::parse(slurp(out / "eval_summary.json"));
  EXPECT_NEAR(j["mean_psnr_db"].get<double>(), sum / rows, 1e-12);
  EXPECT_TRUE(fs::exists(out / "resolved_config.json"));
  EXPECT_TRUE(fs::exists(out / "derained_0000.pgm"));
}

TEST(Eval, ZeroResidualModelReproducesInputPsnr) {
  const auto& f = trained();
  const auto ckpt = f.root / "zero.ckpt";
  save_checkpoint(ckpt, CheckpointRecord{model::make_param_layout(small_config().model), std::nullopt});
  const auto out = f.root / "eval_zero";
  ASSERT_EQ(run_cli({"eval", "--model", ckpt.string(), "--data", f.data.string(), "--out", out.string()}), 0);
  const auto ds = dataset::read_dataset(f.data);
  double in = 0.0;
  for (const auto& p : ds.test) in += metrics::psnr(p.rainy, p.clean);
  const auto j = nlohmann::json::parse(slurp(out / "eval_summary.json"));
  EXPECT_NEAR(j["mean_psnr_db"].get<double>(), in / ds.test.size(), 1e-12);
}

TEST(Eval, CorruptCheckpointIsCompatibilityExit) {
  const auto& f = trained();
  const auto bad = f.root / "corrupt.ckpt";
  const auto good = slurp(f.run / "final.ckpt");
  std::ofstream(bad, std::ios::binary) << good.substr(0, good.size() / 3);
  EXPECT_EQ(run_cli({"eval", "--model", bad.string(), "--data", f.data.string(), "--out", (f.root / "e2").string()}), 4);
  std::ofstream(bad, std::ios::binary) << "not a checkpoint";
  EXPECT_EQ(run_cli({"eval", "--model", bad.string(), "--data", f.data.string(), "--out", (f.root / "e3").string()}), 4);
  EXPECT_EQ(run_cli({"eval", "--model", (f.root / "missing.ckpt").string(), "--data", f.data.string(), "--out",
                     (f.root / "e4").string()}),
            3);
}

TEST(GpInspect, OwnImageRanksFirstWithUnitSimilarity) {
  const auto& f = trained();
  const auto store = gp::load_latent_store(f.run / "latent_store.gpls");
  std::ostringstream out;
  const auto query = f.data / "labeled" / "rainy" / (store.rows[2].source_id + ".pgm");
  ASSERT_EQ(run_cli({"gp-inspect", "--store", (f.run / "latent_store.gpls").string(), "--query-image", query.string(),
                     "--model", (f.run / "final.ckpt").string(), "--config", f.config.string(), "--top", "3"},
                    out),
            0);
  const auto j = nlohmann::json::parse(out.str());
  ASSERT_EQ(j["nearest"].size(), 3u);
  EXPECT_EQ(j["nearest"][0]["id"], store.rows[2].source_id);
  EXPECT_NEAR(j["nearest"][0]["similarity"].get<double>(), 1.0, 1e-12);
  EXPECT_TRUE(j["log_terms"].contains("far_clamped"));
}

TEST(GpInspect, TopLargerThanStoreListsEverything) {
  const auto& f = trained();
  const auto store = gp::load_latent_store(f.run / "latent_store.gpls");
  std::ostringstream out;
  ASSERT_EQ(run_cli({"gp-inspect", "--store", (f.run / "latent_store.gpls").string(), "--query-image",
                     (f.data / "unlabeled" / "rainy" / "0000.pgm").string(), "--model", (f.run / "final.ckpt").string(),
                     "--top", "100"},
                    out),
            0);
  const auto j = nlohmann::json::parse(out.str());
  EXPECT_EQ(j["nearest"].size(), store.size());
  EXPECT_EQ(j["farthest"].size(), store.size());
}

TEST(GpInspect, VariancesMatchDirectConditioning) {
  const auto& f = trained();
  const auto store = gp::load_latent_store(f.run / "latent_store.gpls");
  const auto rec = load_checkpoint(f.run / "final.ckpt");
  const auto img = image::load_image(f.data / "unlabeled" / "rainy" / "0001.pgm");
  const auto gpc = small_config().gp;
  const auto j = cli::inspect(store, rec.params, img, gpc, 5);
  const gp::LatentVector q{model::encode(rain::center_crop(img, 16), rec.params), "q"};
  const auto near = gp::select_neighbors(q, store, gpc, gp::NeighborKind::Nearest);
  const auto far = gp::select_neighbors(q, store, gpc, gp::NeighborKind::Farthest);
  EXPECT_EQ(j["near_variance"].get<double>(), gp::gp_condition(q, near, store, gpc).variance);
  EXPECT_EQ(j["far_variance"].get<double>(), gp::gp_condition(q, far, store, gpc).variance);
  EXPECT_EQ(j["near_set"].get<std::vector<std::size_t>>(), near.indices);
}

TEST(GpInspect, DimensionMismatchIsCompatibilityExit) {
  const auto& f = trained();
  gp::LatentStore other;
  other.rows.push_back({std::vector<double>(5, 1.0), "x"});
  const auto path = f.root / "other.gpls";
  gp::save_latent_store(path, other);
  EXPECT_EQ(run_cli({"gp-inspect", "--store", path.string(), "--query-image",
                     (f.data / "labeled" / "rainy" / "0000.pgm").string(), "--model", (f.run / "final.ckpt").string()}),
            4);
}
