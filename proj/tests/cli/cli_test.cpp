#include "wcell/checkpoint.hpp"
#include "wcell/data.hpp"

#include <gtest/gtest.h>

#include <array>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

using namespace wcell;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  int code = -1;
  std::string out;
};

Outcome run(const std::string& args) {
  const std::string cmd = std::string(WCELLNET_BINARY) + " " + args + " 2>&1";
  Outcome r;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (pipe == nullptr) return r;
  std::array<char, 4096> buf{};
  while (std::fgets(buf.data(), static_cast<int>(buf.size()), pipe) != nullptr) r.out += buf.data();
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "wcell_cli_test" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

/// Small 16x16 dataset shared by the training tests.
const fs::path& small_data() {
  static const fs::path dir = [] {
    const fs::path d = scratch("data16");
    const Outcome r = run("synth --videos 2 --frames 20 --height 16 --width 16 --cells 1-2 --seed 3 --out " + d.string());
    EXPECT_EQ(r.code, 0) << r.out;
    return d;
  }();
  return dir;
}

std::string train_args(const fs::path& out, const std::string& extra = "") {
  return "train --data " + small_data().string() + " --k 4 --if 3 --iters 50 --batch 8 --seed 5 --out-dir " +
         out.string() + " " + extra;
}

}  // namespace

TEST(Cli, HelpAndUsageErrors) {
  EXPECT_EQ(run("--help").code, 0);
  EXPECT_EQ(run("train --help").code, 0);
  EXPECT_EQ(run("--no-such-flag").code, 2);
  EXPECT_EQ(run("count-params --k").code, 2);
  EXPECT_EQ(run("synth --out /tmp/x --height 30").code, 2);
  EXPECT_EQ(run("train --set nonsense").code, 2);
}

TEST(Cli, SynthWritesSizedDeterministicStacks) {
  const fs::path a = scratch("synth_a"), b = scratch("synth_b");
  const Outcome r = run("synth --videos 2 --frames 40 --height 64 --width 64 --seed 9 --out " + a.string());
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_EQ(std::count(r.out.begin(), r.out.end(), '\n'), 2);
  ASSERT_EQ(run("synth --videos 2 --frames 40 --height 64 --width 64 --seed 9 --out " + b.string()).code, 0);
  for (const char* name : {"video_000.cvip", "video_001.cvip"}) {
    EXPECT_EQ(fs::file_size(a / name), 4u + 2u + 1u + 1u + 12u + 40u * 64u * 64u);
    EXPECT_EQ(slurp(a / name), slurp(b / name));
  }
  const fs::path c = scratch("synth_c");
  ASSERT_EQ(run("synth --videos 1 --frames 3 --height 16 --width 16 --cells 0 --noise 0 --out " + c.string()).code, 0);
  const VideoStack empty = load_stack(c / "video_000.cvip");
  for (auto v : empty.pixels) ASSERT_EQ(v, 20);
}

TEST(Cli, CountParams) {
  const Outcome r = run("count-params --k 16 --if 3");
  ASSERT_EQ(r.code, 0);
  const double n = std::stod(r.out);
  EXPECT_LE(std::abs(n - 1232698.0) / 1232698.0, 0.05);
  const double d1 = std::stod(run("count-params --k 16 --if 4").out) - n;
  const double d2 = std::stod(run("count-params --k 16 --if 5").out) - std::stod(run("count-params --k 16 --if 4").out);
  EXPECT_EQ(d1, d2);
}

TEST(Cli, GradcheckExitsZero) {
  const Outcome r = run("gradcheck --seed 2");
  EXPECT_EQ(r.code, 0) << r.out;
  EXPECT_EQ(r.out.find("FAIL"), std::string::npos);
}

TEST(Cli, TrainSmokeRunIsFastAndDeterministic) {
  const fs::path a = scratch("train_a"), b = scratch("train_b");
  const auto t0 = std::chrono::steady_clock::now();
  const Outcome ra = run(train_args(a));
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  ASSERT_EQ(ra.code, 0) << ra.out;
  EXPECT_LT(seconds, 60.0);
  ASSERT_EQ(run(train_args(b)).code, 0);
  EXPECT_EQ(slurp(a / "train_log.csv"), slurp(b / "train_log.csv"));
  EXPECT_EQ(slurp(a / "model.wcnc"), slurp(b / "model.wcnc"));
  EXPECT_EQ(slurp(a / "metrics.csv"), slurp(b / "metrics.csv"));
  std::istringstream log(slurp(a / "train_log.csv"));
  std::string line;
  int rows = -1;
  while (std::getline(log, line)) ++rows;
  EXPECT_EQ(rows, 50);
}

TEST(Cli, ZeroLearningRateKeepsInitialParameters) {
  const fs::path out = scratch("train_lr0");
  ASSERT_EQ(run(train_args(out, "--lr 0")).code, 0);
  const WCellNet<float> trained = load_checkpoint(out / "model.wcnc");
  const WCellNet<float> init(trained.config(), 5);
  init.params().for_each([&](const Parameter<float>& p) {
    if (p.trainable) EXPECT_EQ(p.value, trained.params().at(p.name).value) << p.name;
  });
}

TEST(Cli, ConfigFileAndShapeErrors) {
  const fs::path out = scratch("train_cfg");
  {
    std::ofstream cfg(out / "run.cfg");
    cfg << "k = 4\nif = 3\niterations = 3\nbatch = 4\nseed = 1\n";
  }
  const Outcome ok = run("train --config " + (out / "run.cfg").string() + " --data " + small_data().string() +
                     " --out-dir " + (out / "o").string());
  EXPECT_EQ(ok.code, 0) << ok.out;
  const Outcome bad = run("train --config " + (out / "run.cfg").string() + " --data " + small_data().string() +
                      " --height 32 --width 32 --out-dir " + (out / "o2").string());
  EXPECT_EQ(bad.code, 1);
  EXPECT_NE(bad.out.find("error"), std::string::npos);
  {
    std::ofstream cfg(out / "bad.cfg");
    cfg << "k = 4\nlearning_rate = 1\n";
  }
  EXPECT_NE(run("train --config " + (out / "bad.cfg").string() + " --data " + small_data().string()).code, 0);
}

TEST(Cli, EvalBaselineAndInterpolate) {
  const fs::path out = scratch("eval");
  ASSERT_EQ(run(train_args(out / "run", "--set iterations=5")).code, 0);
  const fs::path ckpt = out / "run" / "model.wcnc";

  const Outcome ev = run("eval --checkpoint " + ckpt.string() + " --data " + small_data().string() + " --split test");
  ASSERT_EQ(ev.code, 0) << ev.out;
  EXPECT_EQ(std::count(ev.out.begin(), ev.out.end(), '\n'), 2);
  EXPECT_EQ(ev.out.rfind("split,n,mse,psnr\ntest,", 0), 0u) << ev.out;

  const Outcome mismatch = run("eval --checkpoint " + ckpt.string() + " --data " + small_data().string() + " --split bad");
  EXPECT_NE(mismatch.code, 0);

  const Outcome base = run("baseline --data " + small_data().string() + " --if 3");
  ASSERT_EQ(base.code, 0) << base.out;
  EXPECT_EQ(std::count(base.out.begin(), base.out.end(), '\n'), 4);

  // Static scene: WF and FFR agree.
  const fs::path stat = scratch("static");
  ASSERT_EQ(run("synth --videos 1 --frames 8 --height 16 --width 16 --noise 0 --drift 0 --bleach 0 --burst-prob 0 "
                "--out " + stat.string()).code, 0);
  const Outcome sb = run("baseline --data " + stat.string() + " --if 3 --kinds FFR,WF");
  ASSERT_EQ(sb.code, 0) << sb.out;
  std::istringstream rows(sb.out);
  std::string header, ffr, wf;
  std::getline(rows, header);
  std::getline(rows, ffr);
  std::getline(rows, wf);
  EXPECT_EQ(ffr.substr(ffr.find(',')), wf.substr(wf.find(',')));

  const VideoStack video = load_stack(small_data() / "video_000.cvip");
  auto frame = [&](Index t) {
    return GrayImage{16, 16, std::vector<std::uint8_t>(video.pixels.begin() + t * 256, video.pixels.begin() + (t + 1) * 256)};
  };
  write_pgm(out / "first.pgm", frame(0));
  write_pgm(out / "last.pgm", frame(4));
  const Outcome ip = run("interpolate --checkpoint " + ckpt.string() + " --first " + (out / "first.pgm").string() +
                     " --last " + (out / "last.pgm").string() + " --out-prefix " + (out / "mid").string());
  ASSERT_EQ(ip.code, 0) << ip.out;
  int files = 0;
  for (const auto& e : fs::directory_iterator(out))
    if (e.path().filename().string().rfind("mid_", 0) == 0) ++files;
  EXPECT_EQ(files, 3);
  EXPECT_EQ(read_pgm(out / "mid_01.pgm").width, 16);
  EXPECT_NE(run("interpolate --checkpoint " + ckpt.string() + " --first missing.pgm --last missing.pgm --out-prefix x")
                .code,
            0);
}
