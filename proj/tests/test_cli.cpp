#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>

namespace fs = std::filesystem;

namespace {

const fs::path& workdir() {
  static const fs::path dir = [] {
    auto d = fs::temp_directory_path() / "clst_test_cli";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

int run(const std::string& args) {
  const std::string cmd = "\"" CLST_BINARY "\" " + args + " > \"" + (workdir() / "last.log").string() +
                          "\" 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

std::string path(const std::string& name) { return "\"" + (workdir() / name).string() + "\""; }

const std::string kTiny =
    " --set iterations=24 --set warmup=4 --set ensemble_start=10 --set gamma.interval=8"
    " --set finetune.iterations=6";

void ensure_data() {
  if (fs::exists(workdir() / "ds.bin")) return;
  REQUIRE(run("gen-data --out " + path("ds.bin") +
              " --seed 3 --set source_count=6 --set target_count=8 --set height=12 --set width=16") == 0);
}

}  // namespace

TEST_CASE("usage errors exit 2") {
  CHECK(run("") == 2);
  CHECK(run("train --no-such-flag") == 2);
  CHECK(run("frobnicate") == 2);
  ensure_data();
  CHECK(run("train --data " + path("ds.bin") + " --out " + path("x") + " --mode bogus") == 2);
}

TEST_CASE("config errors exit 3") {
  ensure_data();
  {
    std::ofstream(workdir() / "bad.json") << "{ \"iterations\": ";
  }
  CHECK(run("train --data " + path("ds.bin") + " --out " + path("bad") + " --config " + path("bad.json")) == 3);
  {
    std::ofstream(workdir() / "unknown.json") << R"({"learnin_rate": 0.1})";
  }
  CHECK(run("train --data " + path("ds.bin") + " --out " + path("bad") + " --config " + path("unknown.json")) == 3);
  CHECK(run("train --data " + path("ds.bin") + " --out " + path("bad") + " --set warmup=0") == 3);
  CHECK(run("gen-data --out " + path("z.bin") + " --set classes=1") == 3);
}

TEST_CASE("train, evaluate, fine-tune and inspect end to end") {
  ensure_data();
  REQUIRE(run("train --data " + path("ds.bin") + " --out " + path("a") + " --mode clst --seed 5" + kTiny) == 0);
  const auto log = slurp(workdir() / "last.log");
  CHECK(log.find("vote density") != std::string::npos);
  CHECK(log.find("target val mIoU") != std::string::npos);
  REQUIRE(run("train --data " + path("ds.bin") + " --out " + path("b") + " --mode clst --seed 5" + kTiny) == 0);

  for (const char* f : {"metrics.csv", "checkpoint.bin", "votes.bin", "resolved_config.json"}) {
    CAPTURE(f);
    REQUIRE(fs::exists(workdir() / "a" / f));
    CHECK(slurp(workdir() / "a" / f) == slurp(workdir() / "b" / f));
  }

  REQUIRE(run("train --data " + path("ds.bin") + " --out " + path("c") + " --mode clst --seed 6" + kTiny) == 0);
  CHECK(slurp(workdir() / "a" / "checkpoint.bin") != slurp(workdir() / "c" / "checkpoint.bin"));

  // The resolved config reproduces the run on its own.
  REQUIRE(run("train --data " + path("ds.bin") + " --out " + path("d") + " --config " +
              path("a/resolved_config.json")) == 0);
  CHECK(slurp(workdir() / "a" / "metrics.csv") == slurp(workdir() / "d" / "metrics.csv"));

  CHECK(run("eval --checkpoint " + path("a/checkpoint.bin") + " --data " + path("ds.bin") + " --csv " +
            path("iou.csv")) == 0);
  const auto csv = slurp(workdir() / "iou.csv");
  CHECK(csv.rfind("class,iou,counted\n", 0) == 0);
  CHECK(csv.find("\nmean,") != std::string::npos);
  CHECK(run("eval --checkpoint " + path("a/checkpoint.bin") + " --data " + path("ds.bin") + " --split source") == 0);

  CHECK(run("finetune --checkpoint " + path("a/checkpoint.bin") + " --votes " + path("a/votes.bin") +
            " --data " + path("ds.bin") + " --out " + path("ft") + kTiny) == 0);
  CHECK(fs::exists(workdir() / "ft" / "checkpoint.bin"));

  CHECK(run("inspect --checkpoint " + path("a/checkpoint.bin") + " --csv " + path("cos.csv")) == 0);
  CHECK(!slurp(workdir() / "cos.csv").empty());

  SUBCASE("version mismatch exits 4, corrupt files exit 5") {
    auto bytes = slurp(workdir() / "a" / "checkpoint.bin");
    bytes[7] = 9;
    std::ofstream(workdir() / "v9.bin", std::ios::binary) << bytes;
    CHECK(run("eval --checkpoint " + path("v9.bin") + " --data " + path("ds.bin")) == 4);
    std::ofstream(workdir() / "junk.bin", std::ios::binary) << "not a checkpoint";
    CHECK(run("eval --checkpoint " + path("junk.bin") + " --data " + path("ds.bin")) == 5);
    CHECK(run("eval --checkpoint " + path("a/checkpoint.bin") + " --data " + path("junk.bin")) == 5);
  }
}

TEST_CASE("thread cap must be a positive integer") {
  ensure_data();
  CHECK(run("gen-data --out " + path("t.bin") + " --set source_count=2 --set target_count=2") == 0);
#ifndef _WIN32
  const std::string prefix = "CLST_THREADS=zero ";
  const int status = std::system((prefix + "\"" CLST_BINARY "\" gen-data --out " + path("t.bin") + " > /dev/null 2>&1").c_str());
  CHECK((WIFEXITED(status) && WEXITSTATUS(status) != 0));
#endif
}
