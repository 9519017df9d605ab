#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "dsp/dsp.hpp"

namespace fs = std::filesystem;

namespace {

struct Outcome {
  int status;
  std::string out;
  std::string err;
};

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("dsp_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  void write(const std::string& name, const std::string& text) const { std::ofstream(path(name)) << text; }

  static std::string slurp(const std::string& p) {
    std::ifstream in(p);
    std::stringstream s;
    s << in.rdbuf();
    return s.str();
  }

  Outcome run(const std::string& args, const std::string& env = "", const std::string& stdin_file = "") const {
    std::string cmd = env + " " + DSP_CLI_PATH + " " + args + " > " + path("stdout") + " 2> " + path("stderr");
    if (!stdin_file.empty()) cmd += " < " + stdin_file;
    int raw = std::system(cmd.c_str());
    return {WIFEXITED(raw) ? WEXITSTATUS(raw) : -1, slurp(path("stdout")), slurp(path("stderr"))};
  }

  fs::path dir_;
};

}  // namespace

TEST_F(Cli, UsageErrorsExitWithOne) {
  EXPECT_EQ(run("").status, 1);
  EXPECT_EQ(run("frobnicate").status, 1);
  EXPECT_EQ(run("convert --from nowhere").status, 1);
  EXPECT_EQ(run("train --train x.jsonl").status, 1) << "missing --checkpoint";
  EXPECT_EQ(run("--help").status, 0);
}

TEST_F(Cli, SynthIsDeterministicAndValidates) {
  ASSERT_EQ(run("synth -n 50 --seed 4 -o " + path("a.jsonl")).status, 0);
  ASSERT_EQ(run("synth -n 50 --seed 4 -o " + path("b.jsonl")).status, 0);
  EXPECT_EQ(slurp(path("a.jsonl")), slurp(path("b.jsonl")));
  ASSERT_EQ(run("synth -n 50 --seed 5 -o " + path("c.jsonl")).status, 0);
  EXPECT_NE(slurp(path("a.jsonl")), slurp(path("c.jsonl")));
  auto r = run("validate " + path("a.jsonl"));
  EXPECT_EQ(r.status, 0) << r.err;
  EXPECT_NE(r.out.find("50 sessions"), std::string::npos) << r.out;
}

TEST_F(Cli, ValidateReportsTheBadLine) {
  write("bad.tsv",
        "weather in boston\t[IN:GET_WEATHER [SL:LOCATION boston ] ]\n"
        "weather in paris\t[IN:GET_WEATHER [SL:LOCATION paris ]\n");
  auto r = run("validate " + path("bad.tsv"));
  EXPECT_EQ(r.status, 2);
  EXPECT_NE(r.err.find("bad.tsv:2"), std::string::npos) << r.err;
  EXPECT_EQ(run("validate " + path("missing.tsv")).status, 2);
}

TEST_F(Cli, DataDirectoryResolvesRelativePaths) {
  fs::create_directories(path("root/top"));
  write("root/top/train.tsv", "call mom\t[IN:CREATE_CALL [SL:CONTACT mom ] ]\n");
  auto r = run("validate top/train.tsv", "DSP_DATA_DIR=" + path("root"));
  EXPECT_EQ(r.status, 0) << r.err;
}

TEST_F(Cli, ConvertsBothWaysAndCountsUnrecoverableTrees) {
  write("comp.tsv", "Please remind me to call John\t[IN:CREATE_REMINDER Please remind [SL:PERSON_REMINDED me ] to "
                    "[SL:TODO [IN:CREATE_CALL [SL:METHOD call ] [SL:CONTACT John ] ] ] ]\n");
  auto r = run("convert --from compositional --to decoupled -i " + path("comp.tsv"));
  ASSERT_EQ(r.status, 0) << r.err;
  EXPECT_EQ(r.out,
            "Please remind me to call John\t[IN:CREATE_REMINDER [SL:PERSON_REMINDED me ] [SL:TODO [IN:CREATE_CALL "
            "[SL:METHOD call ] [SL:CONTACT John ] ] ] ]\n");

  write("dec.tsv", r.out + "On Monday set an alarm for 8am\t[IN:CREATE_ALARM [SL:DATE_TIME 8am on Monday ] ]\n");
  auto back = run("convert --from decoupled --to compositional -i " + path("dec.tsv"));
  ASSERT_EQ(back.status, 0) << back.err;
  EXPECT_EQ(back.out, slurp(path("comp.tsv")));
  EXPECT_NE(back.err.find("not recoverable 1"), std::string::npos) << back.err;

  write("flat.tsv", "FIND_RESTAURANT\tcheap food in the south\tPRICE:0:1,AREA:4:5\n");
  auto flat = run("convert --from flat -i " + path("flat.tsv"));
  EXPECT_EQ(flat.out, "cheap food in the south\t[IN:FIND_RESTAURANT [SL:PRICE cheap ] [SL:AREA south ] ]\n");
}

TEST_F(Cli, EvalOfGoldAgainstItselfIsPerfect) {
  ASSERT_EQ(run("synth -n 30 --seed 9 -o " + path("gold.jsonl")).status, 0);
  auto r = run("eval --data " + path("gold.jsonl") + " --predictions " + path("gold.jsonl") + " -o " +
               path("report.json"));
  ASSERT_EQ(r.status, 0) << r.err;
  EXPECT_NE(r.out.find("100.00"), std::string::npos) << r.out;
  auto j = nlohmann::json::parse(slurp(path("report.json")));
  EXPECT_EQ(j["eval"][0]["frame_acc"], 1.0);
  EXPECT_EQ(j["carryover"]["frame_acc_all_turns"], 1.0);
}

TEST_F(Cli, GradcheckPassesAndFailsOnImpossibleTolerance) {
  auto ok = run("gradcheck --seed 2");
  EXPECT_EQ(ok.status, 0) << ok.out << ok.err;
  EXPECT_NE(ok.out.find("max relative error"), std::string::npos);
  EXPECT_EQ(run("gradcheck --seed 2 --tolerance 0").status, 3);
}

TEST_F(Cli, TrainThenPredict) {
  write("train.tsv",
        "weather in boston\t[IN:GET_WEATHER [SL:LOCATION boston ] ]\n"
        "call mom\t[IN:CREATE_CALL [SL:CONTACT mom ] ]\n");
  write("config.json", R"({"model": {"embed_dim": 8, "hidden": 12, "layers": 1, "heads": 2},
                           "epochs": 40, "learning_rate": 0.02, "swa": false, "batch_size": 2})");
  auto t = run("train --train " + path("train.tsv") + " --config " + path("config.json") + " --checkpoint " +
               path("model.ckpt") + " --history " + path("history.json"));
  ASSERT_EQ(t.status, 0) << t.err;
  auto history = nlohmann::json::parse(slurp(path("history.json")));
  EXPECT_EQ(history["history"].size(), 40u);

  auto p = run("predict --checkpoint " + path("model.ckpt") + " --text \"call mom\"");
  ASSERT_EQ(p.status, 0) << p.err;
  EXPECT_EQ(p.out, "[IN:CREATE_CALL [SL:CONTACT mom ] ]\n");

  write("session.txt", "weather in boston\nassistant: sunny\ncall mom\n");
  auto s = run("predict --checkpoint " + path("model.ckpt"), "", path("session.txt"));
  ASSERT_EQ(s.status, 0) << s.err;
  std::istringstream lines(s.out);
  std::string line;
  int n = 0;
  while (std::getline(lines, line)) {
    ++n;
    EXPECT_NO_THROW(dsp::from_linear(line)) << line;
  }
  EXPECT_EQ(n, 2);
  EXPECT_EQ(run("predict --checkpoint " + path("nope.ckpt") + " --text hi").status, 2);
}
