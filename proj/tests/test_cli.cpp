#include <sys/wait.h>
#include <unistd.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include "cloudattn/cloud_io.h"
#include "doctest.h"

namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string out;
};

Run cli(const std::string& args) {
  const std::string cmd = std::string(CLOUDATTN_CLI_PATH) + " " + args + " 2>&1";
  Run r;
  FILE* p = popen(cmd.c_str(), "r");
  REQUIRE(p != nullptr);
  char buf[4096];
  std::size_t n;
  while ((n = fread(buf, 1, sizeof(buf), p)) > 0) r.out.append(buf, n);
  const int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

bool has(const std::string& text, const std::string& needle) {
  return text.find(needle) != std::string::npos;
}

struct Scratch {
  fs::path dir;
  Scratch() {
    dir = fs::temp_directory_path() / ("cloudattn_cli_" + std::to_string(::getpid()));
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  ~Scratch() { fs::remove_all(dir); }
  std::string operator()(const std::string& name) const { return (dir / name).string(); }
};

const char* kTiny =
    " --set d_model=16 --set heads=2 --set d_ff=16 --set head_hidden=16 --set tokens=16,4"
    " --set radii=0.4,0.9 --set 'scales=2,4;2,3' --set lau_k=4,2 --set out_dim_per_scale=8";

}  // namespace

TEST_CASE("every subcommand documents its flags and defaults") {
  for (const char* sub : {"gen", "train", "eval", "segment", "tokenize", "bench"}) {
    const Run r = cli(std::string(sub) + " --help");
    CHECK(r.code == 0);
    CHECK(has(r.out, "--seed"));
    CHECK(has(r.out, "--threads"));
  }
  const Run t = cli("train --help");
  CHECK(has(t.out, "--epochs UINT [200]"));
  CHECK(has(t.out, "--batch-size UINT [16]"));
  CHECK(has(t.out, "[0.001]"));
  CHECK(has(cli("bench --help").out, "[1024,2048,4096,8192]"));
}

TEST_CASE("usage errors exit 1") {
  CHECK(cli("").code == 1);
  CHECK(cli("frobnicate").code == 1);
  CHECK(cli("gen").code == 1);
  CHECK(cli("gen --out x --kind cube").code == 1);
}

TEST_CASE("missing inputs exit 2 and name the path") {
  Scratch s;
  const std::string missing = s("no_such_dir");
  Run r = cli("eval --data " + missing + " --ckpt " + s("none.ckpt"));
  CHECK(r.code == 2);
  CHECK(has(r.out, "none.ckpt"));
  r = cli("train --data " + missing);
  CHECK(r.code == 2);
  CHECK(has(r.out, missing));
  std::ofstream(s("broken.txt")) << "2 3\n0 0 0\n";
  r = cli("tokenize --cloud " + s("broken.txt") + " --out " + s("dump.txt"));
  CHECK(r.code == 2);
  CHECK(has(r.out, "broken.txt: line 2"));
}

TEST_CASE("gen, train, eval, segment and tokenize end to end") {
  Scratch s;
  Run r = cli("gen --kind seg2 --n 8 --points 96 --seed 3 --out " + s("seg"));
  REQUIRE(r.code == 0);
  CHECK(fs::exists(s("seg/manifest.txt")));
  r = cli("train --threads 1 --epochs 2 --batch-size 4 --data " + s("seg") + " --out " + s("seg.ckpt") + kTiny);
  REQUIRE(r.code == 0);
  CHECK(has(r.out, "epoch=1 lr="));
  CHECK(has(r.out, "epoch=2 lr="));
  std::ifstream log(s("seg.ckpt.log"));
  std::string first;
  std::getline(log, first);
  CHECK(first.rfind("epoch=1 ", 0) == 0);

  r = cli("eval --threads 1 --data " + s("seg") + " --ckpt " + s("seg.ckpt"));
  REQUIRE(r.code == 0);
  CHECK(has(r.out, "oa="));
  CHECK(has(r.out, "ins_miou="));
  CHECK(fs::exists(s("seg.ckpt.report.txt")));

  r = cli("segment --cloud " + s("seg/sample_0.pcat") + " --ckpt " + s("seg.ckpt") + " --out " + s("labeled.txt"));
  REQUIRE(r.code == 0);
  const cloudattn::PointCloud labeled = cloudattn::load_cloud(s("labeled.txt"));
  CHECK(labeled.size() == 96);
  CHECK(labeled.labels.size() == 96);
  CHECK(labeled.coords == cloudattn::load_cloud(s("seg/sample_0.pcat")).coords);

  r = cli("tokenize --cloud " + s("seg/sample_0.pcat") + " --ckpt " + s("seg.ckpt") + " --out " + s("tok.txt"));
  REQUIRE(r.code == 0);
  std::ifstream dump(s("tok.txt"));
  const std::string text((std::istreambuf_iterator<char>(dump)), {});
  CHECK(has(text, "tokens 16"));
  CHECK(has(text, "token 15 centroid"));
  CHECK(has(text, "  scale 4:"));
  CHECK(has(text, "  features:"));

  // Same seed, same dump; a different seed moves the centroids.
  r = cli("tokenize --seed 5 --cloud " + s("seg/sample_0.pcat") + " --out " + s("t1.txt") + kTiny);
  REQUIRE(r.code == 0);
  REQUIRE(cli("tokenize --seed 5 --cloud " + s("seg/sample_0.pcat") + " --out " + s("t2.txt") + kTiny).code == 0);
  REQUIRE(cli("tokenize --seed 6 --cloud " + s("seg/sample_0.pcat") + " --out " + s("t3.txt") + kTiny).code == 0);
  auto slurp = [](const std::string& p) {
    std::ifstream in(p);
    return std::string((std::istreambuf_iterator<char>(in)), {});
  };
  CHECK(slurp(s("t1.txt")) == slurp(s("t2.txt")));
  CHECK(slurp(s("t1.txt")) != slurp(s("t3.txt")));

  // A classification checkpoint cannot segment.
  REQUIRE(cli("gen --kind cls3 --n 6 --points 64 --out " + s("cls")).code == 0);
  REQUIRE(cli("train --threads 1 --epochs 1 --data " + s("cls") + " --out " + s("cls.ckpt") + kTiny).code == 0);
  CHECK(cli("segment --cloud " + s("seg/sample_0.pcat") + " --ckpt " + s("cls.ckpt") + " --out " + s("x.txt")).code == 2);
  CHECK(cli("eval --data " + s("seg") + " --ckpt " + s("cls.ckpt")).code == 2);
}

TEST_CASE("eval of a perfectly fitted checkpoint prints oa=1.0") {
  Scratch s;
  REQUIRE(cli("gen --kind cls3 --n 6 --points 128 --test-fraction 0 --seed 2 --out " + s("d")).code == 0);
  const Run t = cli("train --threads 1 --epochs 60 --batch-size 6 --lr 0.01 --stop-at-train-acc 1 --data " +
                    s("d") + " --out " + s("m.ckpt") + kTiny);
  REQUIRE(t.code == 0);
  const Run r = cli("eval --split train --data " + s("d") + " --ckpt " + s("m.ckpt"));
  CHECK(r.code == 0);
  CHECK(has(r.out, "oa=1.0\n"));
}

TEST_CASE("diverging training exits 3") {
  Scratch s;
  REQUIRE(cli("gen --kind cls3 --n 4 --points 64 --out " + s("d")).code == 0);
  const Run r = cli("train --threads 1 --epochs 3 --optimizer adam --lr 1e300 --data " + s("d") + " --out " +
                    s("m.ckpt") + kTiny);
  CHECK(r.code == 3);
  CHECK(has(r.out, "not finite"));
}

TEST_CASE("bench prints a scaling table") {
  Run r = cli("bench --repeats 1 --points 64,128" + std::string(kTiny));
  CHECK(r.code == 0);
  CHECK(has(r.out, "points median_ms"));
  CHECK(has(r.out, "slope="));
  r = cli("bench --repeats 1 --tokens 16,32" + std::string(kTiny));
  CHECK(r.code == 0);
  CHECK(has(r.out, "tokens median_ms"));
}
