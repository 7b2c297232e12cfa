// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <json.hpp>

#include <cmath>
#include <filesystem>
#include <sstream>

#include "test_support.hpp"
#include "vibertgrid/cli.hpp"
#include "vibertgrid/dataset.hpp"
#include "vibertgrid/image.hpp"
#include "vibertgrid/textgrid.hpp"

using namespace vbg;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

/// A tiny run config file plus a 6-document dataset of small pages.
struct Fixture {
  std::string root, data, config;
};

const Fixture& fixture() {
  static const Fixture f = [] {
    Fixture x;
    x.root = vbg::testing::temp_dir("cli");
    x.data = x.root + "/data";
    const std::string spec = x.root + "/gen.txt";
    write_file(spec, "min_width=96\nmax_width=128\nglyph_scale=1\nseed=3\n");
    auto r = cli({"synthesize", "--spec", spec, "--n", "6", "--out", x.data});
    EXPECT_EQ(r.code, 0) << r.err;
    auto cfg = vbg::testing::tiny_config(4);
    cfg.train.epochs = 2;
    cfg.train.scales = {96};
    cfg.train.test_shorter_side = 96;
    x.config = x.root + "/tiny.cfg";
    write_file(x.config, to_config_text(cfg));
    return x;
  }();
  return f;
}

std::string first_page(const std::string& data) { return load_manifest(data).entries.front().page_id; }

}  // namespace

TEST(Cli, HelpAndUsageErrors) {
  EXPECT_EQ(cli({"--help"}).code, kExitOk);
  EXPECT_EQ(cli({}).code, kExitUsage);
  EXPECT_EQ(cli({"bogus"}).code, kExitUsage);
  EXPECT_EQ(cli({"synthesize", "--n", "0", "--out", vbg::testing::temp_dir("cli_n0")}).code, kExitUsage);
  EXPECT_EQ(cli({"predict", "--checkpoint", "/nonexistent", "--ocr", "x", "--image", "y", "--out", "z"}).code,
            kExitUsage);
  const auto bad = vbg::testing::temp_dir("cli_bad") + "/spec.txt";
  write_file(bad, "nonsense=1\n");
  EXPECT_EQ(cli({"synthesize", "--spec", bad, "--n", "2", "--out", vbg::testing::temp_dir("cli_bad_out")}).code, kExitUsage);
}

TEST(Cli, HelpDocumentsTrainFlags) {
  auto r = cli({"train", "--help"});
  EXPECT_EQ(r.code, kExitOk);
  for (const char* flag : {"--fusion-stage", "--no-visual", "--no-textual", "--no-late-fusion", "--no-early-fusion",
                           "--freeze-encoder", "--lambda", "--optimizer-grid", "--workers", "--resume"})
    EXPECT_NE(r.out.find(flag), std::string::npos) << flag;
}

TEST(Cli, SynthesizeIsDeterministic) {
  const auto& f = fixture();
  const auto other = vbg::testing::temp_dir("cli_synth2");
  write_file(f.root + "/gen2.txt", "min_width=96\nmax_width=128\nglyph_scale=1\nseed=3\n");
  ASSERT_EQ(cli({"synthesize", "--spec", f.root + "/gen2.txt", "--n", "6", "--out", other}).code, 0);
  int files = 0;
  for (const auto& e : fs::directory_iterator(f.data)) {
    const auto name = e.path().filename().string();
    if (name == "run_manifest.json") continue;
    EXPECT_EQ(read_file(e.path().string()), read_file(other + "/" + name)) << name;
    ++files;
  }
  EXPECT_EQ(files, 6 * 3 + 1);
  EXPECT_TRUE(fs::exists(f.data + "/run_manifest.json"));
}

TEST(Cli, RasterizeHeaderArithmetic) {
  const auto dir = vbg::testing::temp_dir("cli_raster");
  Document d;
  d.page_id = "r";
  d.image = Image(32, 32, 1.0f);
  d.words.push_back(vbg::testing::box_word("AB", 2, 2, 20, 10));
  write_file(dir + "/p.ocr.json", dump_ocr_document(d, {}));
  write_file(dir + "/p.ppm", encode_ppm(d.image));
  auto r = cli({"rasterize", "--ocr", dir + "/p.ocr.json", "--image", dir + "/p.ppm", "--stride", "8", "--dim", "5",
                "--out", dir + "/g.bin"});
  ASSERT_EQ(r.code, 0) << r.err;
  auto grid = decode_grid_dump(read_file(dir + "/g.bin"));
  EXPECT_EQ(grid.stride, 8);
  EXPECT_EQ(grid.values.sizes(), (std::vector<std::int64_t>{4, 4, 5}));
  EXPECT_TRUE(fs::exists(dir + "/g.bin.manifest.json"));
}

TEST(Cli, TrainResumeEvaluatePredict) {
  const auto& f = fixture();
  const auto run = f.root + "/run";
  fs::remove_all(run);
  auto r = cli({"train", "--config", f.config, "--data", f.data, "--out", run});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(run + "/epoch_001.ckpt"));
  EXPECT_TRUE(fs::exists(run + "/epoch_002.ckpt"));
  EXPECT_TRUE(fs::exists(run + "/run_manifest.json"));
  auto manifest = nlohmann::json::parse(read_file(run + "/run_manifest.json"));
  EXPECT_EQ(manifest["command"], "train");
  EXPECT_EQ(manifest["config_hash"].get<std::string>().size(), 40u);

  auto parse_log = [](const std::string& text) {
    std::istringstream in(text);
    std::string line;
    std::getline(in, line);
    EXPECT_EQ(line, "step\tepoch\tL1\tL2\tLAUX1\tLAUX2\tLoss\tlr_T\tlr_V");
    std::vector<std::vector<double>> rows;
    while (std::getline(in, line)) {
      std::istringstream cells(line);
      std::vector<double> row;
      double v;
      while (cells >> v) row.push_back(v);
      EXPECT_EQ(row.size(), 9u) << line;
      for (double x : row) EXPECT_TRUE(std::isfinite(x));
      rows.push_back(row);
    }
    return rows;
  };
  auto full = parse_log(read_file(run + "/loss_log.tsv"));
  ASSERT_FALSE(full.empty());
  for (std::size_t i = 1; i < full.size(); ++i) {
    EXPECT_EQ(full[i][0], full[i - 1][0] + 1);
    EXPECT_GE(full[i][1], full[i - 1][1]);
  }

  // Resuming from epoch 1 repeats epoch 2 exactly.
  const auto resumed = f.root + "/resumed";
  fs::remove_all(resumed);
  r = cli({"train", "--config", f.config, "--data", f.data, "--out", resumed, "--resume", run + "/epoch_001.ckpt"});
  ASSERT_EQ(r.code, 0) << r.err;
  auto tail = parse_log(read_file(resumed + "/loss_log.tsv"));
  ASSERT_FALSE(tail.empty());
  const std::size_t offset = full.size() - tail.size();
  for (std::size_t i = 0; i < tail.size(); ++i) EXPECT_EQ(tail[i], full[offset + i]);
  EXPECT_EQ(read_file(resumed + "/epoch_002.ckpt"), read_file(run + "/epoch_002.ckpt"));

  // A different config refuses to resume.
  r = cli({"train", "--config", f.config, "--data", f.data, "--out", f.root + "/refused", "--resume",
           run + "/epoch_001.ckpt", "--lambda", "0.5"});
  EXPECT_EQ(r.code, kExitUsage);
  EXPECT_NE(r.err.find("train.lambda"), std::string::npos) << r.err;

  const auto ckpt = run + "/epoch_002.ckpt";
  auto e1 = cli({"evaluate", "--checkpoint", ckpt, "--data", f.data, "--split", "all", "--out", f.root + "/e1.txt"});
  auto e2 = cli({"evaluate", "--checkpoint", ckpt, "--data", f.data, "--split", "all", "--out", f.root + "/e2.txt"});
  ASSERT_EQ(e1.code, 0) << e1.err;
  EXPECT_EQ(read_file(f.root + "/e1.txt"), read_file(f.root + "/e2.txt"));
  const auto report = read_file(f.root + "/e1.txt");
  for (const char* field : {"TOTAL", "DATE", "COMPANY", "ADDRESS"}) {
    const auto first = report.find(std::string("\n") + field);
    const auto at_start = report.rfind(field, 0) == 0;
    EXPECT_TRUE(first != std::string::npos || at_start) << field;
    const auto pos = at_start ? 0 : first + 1;
    EXPECT_EQ(report.find(std::string("\n") + field, pos + 1), std::string::npos) << field;
  }

  const auto page = first_page(f.data);
  r = cli({"predict", "--checkpoint", ckpt, "--ocr", f.data + "/" + page + ".ocr.json", "--image",
           f.data + "/" + page + ".ppm", "--out", f.root + "/pred.json"});
  ASSERT_EQ(r.code, 0) << r.err;
  auto pred = nlohmann::json::parse(read_file(f.root + "/pred.json"));
  auto doc = load_ocr_document(read_file(f.data + "/" + page + ".ocr.json"), read_file(f.data + "/" + page + ".ppm"));
  EXPECT_EQ(pred["words"].size(), doc.words.size());
  EXPECT_EQ(pred["words"][0]["o2"].size(), 4u);

  // Blank page.
  Document blank;
  blank.page_id = "blank";
  blank.image = Image(40, 40, 1.0f);
  write_file(f.root + "/blank.ocr.json", dump_ocr_document(blank, {}));
  write_file(f.root + "/blank.ppm", encode_ppm(blank.image));
  r = cli({"predict", "--checkpoint", ckpt, "--ocr", f.root + "/blank.ocr.json", "--image", f.root + "/blank.ppm",
           "--out", f.root + "/blank.json"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(nlohmann::json::parse(read_file(f.root + "/blank.json"))["words"].empty());
}

TEST(Cli, DataAndVersionErrors) {
  const auto& f = fixture();
  const auto dir = vbg::testing::temp_dir("cli_err");
  write_file(dir + "/broken.ocr.json", "{ not json");
  write_file(dir + "/img.ppm", encode_ppm(Image(8, 8, 1.0f)));
  auto r = cli({"rasterize", "--ocr", dir + "/broken.ocr.json", "--image", dir + "/img.ppm", "--out", dir + "/g"});
  EXPECT_EQ(r.code, kExitData);
  write_file(dir + "/junk.ckpt", "NOTACHECKPOINT");
  r = cli({"evaluate", "--checkpoint", dir + "/junk.ckpt", "--data", f.data, "--out", dir + "/e.txt"});
  EXPECT_EQ(r.code, kExitData);
}
