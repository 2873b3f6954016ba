// End-to-end checks of the command-line surface. Takes the CLI path as argv[1].

#define DOCTEST_CONFIG_IMPLEMENT
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "spf/scene.hpp"
#include "spf/util.hpp"

namespace {

std::string g_cli;
std::filesystem::path g_dir;

int run(const std::string& args) {
  return std::system((g_cli + " " + args).c_str());
}

}  // namespace

TEST_CASE("gen honors a config file with flag overrides") {
  namespace fs = std::filesystem;
  const auto cfg_path = g_dir / "gen.cfg";
  {
    std::ofstream f(cfg_path);
    f << "scenes=2\n";
    f << "height=32\n";
    f << "width=32\n";
    f << "density=0.0078125\n";  // 8 landmarks
    f << "n-fixed=8\n";
    f << "seed=5\n";
  }
  const auto out = g_dir / "gen_cfg";
  REQUIRE(run("gen --config " + cfg_path.string() + " --out " + out.string() +
              " --scenes 3 > /dev/null") == 0);  // flag overrides the file
  auto manifest = spf::scene::read_manifest((out / "manifest.txt").string());
  CHECK(manifest.files.size() == 3);
  CHECK(manifest.cfg.height == 32);
  auto sc = spf::scene::read_scene(manifest.files[0]);
  CHECK(sc.landmarks.size() == 8);
  CHECK(sc.landmarks.count_valid() == 8);
}

TEST_CASE("failures exit nonzero") {
  CHECK(run("eval --checkpoint /nonexistent.spfc --data /nonexistent.txt 2> /dev/null") != 0);
  CHECK(run("viz --checkpoint /nonexistent.spfc --scene /nonexistent.spfs --out " +
            (g_dir / "x").string() + " 2> /dev/null") != 0);
  CHECK(run("gen --out /proc/definitely/not/writable --scenes 1 2> /dev/null") != 0);
}

TEST_CASE("train then viz writes the expected map files") {
  namespace fs = std::filesystem;
  const auto data = g_dir / "viz_data";
  REQUIRE(run("gen --out " + data.string() +
              " --scenes 4 --height 32 --width 32 --density 0.0078125 --n-fixed 8 --seed 3 "
              "> /dev/null") == 0);
  const auto rundir = g_dir / "viz_run";
  REQUIRE(run("train --data " + (data / "manifest.txt").string() + " --out " + rundir.string() +
              " --iterations 5 --batch 2 --val-every 0 --log-every 5 --ckpt-every 0 --seed 2 "
              "--enc-channels 2,3,4,5 --dec-channels 4,3,2,2 --attn-width 3 --pos-bands 1 "
              "--refine-layers 1 --refine-heads 1 > /dev/null") == 0);
  const auto viz = g_dir / "viz_out";
  REQUIRE(run("viz --checkpoint " + (rundir / "checkpoint_final.spfc").string() + " --scene " +
              (data / "scene_000000.spfs").string() + " --out " + viz.string() +
              " > /dev/null") == 0);
  for (const char* name : {"attention_max.pgm", "attention_entropy.pgm", "attention_argmax.ppm",
                           "image_landmarks.ppm", "depth_pred.pgm", "depth_gt.pgm"}) {
    INFO(name);
    CHECK(fs::exists(viz / name));
    CHECK(fs::file_size(viz / name) > 16);
  }
  // P5/P6 magic bytes
  std::ifstream pgm((viz / "attention_max.pgm").string(), std::ios::binary);
  std::string magic;
  std::getline(pgm, magic);
  CHECK(magic == "P5");
  std::ifstream ppm((viz / "attention_argmax.ppm").string(), std::ios::binary);
  std::getline(ppm, magic);
  CHECK(magic == "P6");

  // bench: one row per configuration
  const auto bcsv = g_dir / "bench.csv";
  REQUIRE(run("bench --heights 12 --n-landmarks 4 --repeats 1 --out " + bcsv.string() +
              " > /dev/null") == 0);
  std::ifstream bf(bcsv.string());
  std::string header, row;
  std::getline(bf, header);
  std::getline(bf, row);
  CHECK(header == "height,width,n_landmarks,median_ms,peak_bytes");
  CHECK(row.rfind("12,12,4,", 0) == 0);
}

int main(int argc, char** argv) {
  if (argc < 2) {
    std::fprintf(stderr, "usage: %s <spf-cli> [args...]\n", argv[0]);
    return 2;
  }
  g_cli = argv[1];
  g_dir = std::filesystem::temp_directory_path() / "spf_cli_integration";
  std::filesystem::remove_all(g_dir);
  std::filesystem::create_directories(g_dir);

  doctest::Context ctx;
  ctx.applyCommandLine(argc - 1, argv + 1);
  const int rc = ctx.run();
  std::filesystem::remove_all(g_dir);
  return rc;
}
