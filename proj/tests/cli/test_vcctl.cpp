#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "support/testing.hpp"
#include "vc/audio.hpp"
#include "vc/config.hpp"

namespace fs = std::filesystem;
using namespace vc;

namespace {

struct Run {
  int code;
  std::string out;
};

Run vcctl(const std::string& args) {
  const fs::path log = fs::temp_directory_path() / "vcctl_test_stdout.txt";
  const std::string cmd = std::string(VCCTL_PATH) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  std::ifstream in(log);
  std::stringstream ss;
  ss << in.rdbuf();
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, ss.str()};
}

// Bursts of tone separated by quiet room noise.
Waveform bursty(std::mt19937_64& rng, double f0) {
  Waveform w = testkit::voiced(24000, 24000, f0);
  Waveform hiss = testkit::noise(24000, 0.0005, rng);
  for (std::size_t i = 0; i < w.size(); ++i)
    if ((i / 4800) % 2 == 1) w.samples[i] = hiss.samples[i];
  return w;
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir = fs::temp_directory_path() / "vcctl_cli";
    fs::remove_all(dir);
    fs::create_directories(dir / "wav");
    std::mt19937_64 rng(1);
    save_wav(dir / "wav" / "a.wav", bursty(rng, 130.0));
    save_wav(dir / "wav" / "b.wav", bursty(rng, 210.0));
    std::ofstream(dir / "train.txt") << "wav/a.wav|low\nwav/b.wav|high\n";
    TrainConfig c = testkit::tiny_config();
    c.total_steps = 2;
    std::ofstream(dir / "tiny.cfg") << to_string(c);
  }
  std::string p(const std::string& rel) const { return (dir / rel).string(); }
  fs::path dir;
};

}  // namespace

TEST_F(Cli, UsageErrorsExitOne) {
  EXPECT_EQ(vcctl("").code, 1);
  EXPECT_EQ(vcctl("frobnicate").code, 1);
  EXPECT_EQ(vcctl("--help").code, 0);
  EXPECT_EQ(vcctl("train --config " + p("missing.cfg") + " --manifest " + p("train.txt") + " --outdir " + p("o")).code, 1);
  std::ofstream(dir / "bad.cfg") << "learning_rate = 3\n";
  EXPECT_EQ(vcctl("train --config " + p("bad.cfg") + " --manifest " + p("train.txt") + " --outdir " + p("o")).code, 1);
  EXPECT_EQ(vcctl("convert --ckpt x --source y --speaker z --out w --noise-scale 1.5").code, 1);
}

TEST_F(Cli, DataErrorsExitTwo) {
  EXPECT_EQ(vcctl("convert --ckpt " + p("none.vcc") + " --source " + p("wav/a.wav") + " --speaker low --out " + p("x.wav")).code, 2);
  EXPECT_EQ(vcctl("bank --in " + p("nowhere") + " --out " + p("bank")).code, 2);
  std::ofstream(dir / "trials.txt") << "wav/a.wav\tbonafide\n";
  std::ofstream(dir / "scores.txt") << "wav/a.wav\t0.3\n";
  EXPECT_EQ(vcctl("eval --trials " + p("trials.txt") + " --scores " + p("scores.txt")).code, 2);
}

TEST_F(Cli, EndToEnd) {
  auto r = vcctl("train --config " + p("tiny.cfg") + " --manifest " + p("train.txt") + " --outdir " + p("run"));
  ASSERT_EQ(r.code, 0) << r.out;
  ASSERT_TRUE(fs::exists(dir / "run" / "model.vcc"));

  fs::create_directories(dir / "conv");
  r = vcctl("convert --ckpt " + p("run/model.vcc") + " --source " + p("wav/a.wav") + " --speaker high --seed 3 --out " +
            p("conv/a.wav"));
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_EQ(load_wav(dir / "conv" / "a.wav").size(), 188u * 128u);  // ceil(24000 / hop) frames
  EXPECT_EQ(vcctl("convert --ckpt " + p("run/model.vcc") + " --source " + p("wav/a.wav") + " --speaker nobody --out " +
                  p("conv/z.wav")).code,
            1);

  r = vcctl("bank --in " + p("wav") + " --out " + p("bank"));
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_TRUE(fs::exists(dir / "bank" / "silence_00000.wav"));

  r = vcctl("postprocess --mode replace --in " + p("wav") + " --out " + p("replaced") + " --bank " + p("bank") + " --seed 5");
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_TRUE(fs::exists(dir / "replaced" / "a.wav"));
  EXPECT_TRUE(fs::exists(dir / "replaced" / "postprocess_report.jsonl"));
  r = vcctl("postprocess --mode noise --snr-db 30 --in " + p("wav/b.wav") + " --out " + p("noisy.wav") + " --bank " +
            p("bank"));
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_TRUE(fs::exists(dir / "noisy.report.jsonl"));

  std::ofstream(dir / "trials.txt") << "wav/a.wav\tbonafide\nwav/b.wav\tbonafide\nconv/a.wav\tspoof\n";
  r = vcctl("eval --trials " + p("trials.txt") + " --detector silence --out-scores " + p("scores.txt"));
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("EER "), std::string::npos);
  r = vcctl("eval --trials " + p("trials.txt") + " --scores " + p("scores.txt"));
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("threshold"), std::string::npos);
}
