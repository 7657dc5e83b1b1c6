#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <string>

#include "doctest.h"
#include "evp/io.hpp"
#include "json.hpp"

namespace fs = std::filesystem;

namespace {

const fs::path kWork = fs::temp_directory_path() / "evp-cli-test";

// Runs the CLI with output captured to files; returns the exit status.
int run(const std::string& args, std::string* out = nullptr) {
  const fs::path log = kWork / "stdout.txt";
  const std::string cmd = std::string("\"") + EVP_CLI_PATH + "\" " + args + " > \"" + log.string() + "\" 2> \"" +
                          (kWork / "stderr.txt").string() + "\"";
  const int status = std::system(cmd.c_str());
  if (out) *out = evp::read_text(log);
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string p(const fs::path& path) { return "\"" + path.string() + "\""; }

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("end-to-end pipeline and exit codes") {
  fs::remove_all(kWork);
  fs::create_directories(kWork);
  const fs::path cfg = kWork / "tiny.json";
  evp::write_text(cfg, R"({
    "backbone": {"kind": "plain", "image": [32, 32], "stages": [{"patch": 8, "dim": 16, "blocks": 2, "heads": 2}]},
    "decoder": {"inner": 16, "blocks": 1, "heads": 2},
    "prompt": {"variant": "v2", "r": 4, "tau": 0.25},
    "train": {"strategy": "evp2", "lr": 1e-3, "steps": 3, "batch_size": 2, "seed": 1, "vpt_tokens": 2}
  })");

  SUBCASE("usage errors exit with 2") {
    CHECK(run("") == 2);
    CHECK(run("no-such-command") == 2);
    CHECK(run("mask-stats --tau 2") == 2);
    CHECK(run("synth --size 30 --stride 8 --out " + p(kWork / "bad")) == 2);
    CHECK(run("params --config " + p(cfg) + " --strategy sideways") == 2);
  }

  SUBCASE("missing files exit with 1") { CHECK(run("train --config " + p(kWork / "none.json") + " --data x --out y") != 0); }

  SUBCASE("synth → pretrain → train → predict → eval → compare") {
    std::string out;
    REQUIRE(run("synth --task texture --n 20 --size 32 --seed 3 --out " + p(kWork / "data")) == 0);
    const fs::path manifest = kWork / "data" / "manifest.json";
    REQUIRE(fs::exists(manifest));

    REQUIRE(run("pretrain --config " + p(cfg) + " --data " + p(manifest) + " --steps 3 --batch 2 --history " +
                p(kWork / "pre.jsonl") + " --out " + p(kWork / "pre.evpc")) == 0);
    for (const auto& [name, t] : evp::load_checkpoint(kWork / "pre.evpc")) CHECK(name.rfind("backbone.", 0) == 0);

    REQUIRE(run("train --config " + p(cfg) + " --data " + p(manifest) + " --pretrained " + p(kWork / "pre.evpc") +
                " --out " + p(kWork / "model.evpc")) == 0);
    REQUIRE(run("predict --config " + p(cfg) + " --data " + p(manifest) + " --checkpoint " +
                p(kWork / "model.evpc") + " --out " + p(kWork / "pred") + " --pgm") == 0);
    REQUIRE(run("eval --pred-dir " + p(kWork / "pred") + " --gt-dir " + p(kWork / "data" / "masks") + " --out " +
                p(kWork / "eval.json")) == 0);
    const auto report = nlohmann::json::parse(evp::read_text(kWork / "eval.json"));
    CHECK(report["samples"].size() == 2);
    CHECK(report["mean"]["iou"].get<double>() >= 0.0);

    REQUIRE(run("params --config " + p(cfg) + " --strategy evp2", &out) == 0);
    CHECK(out.find("tunable") != std::string::npos);

    REQUIRE(run("compare --config " + p(cfg) + " --data " + p(manifest) + " --pretrained " + p(kWork / "pre.evpc") +
                " --seeds 1 --strategies decoder,evp2 --out " + p(kWork / "cmp.json")) == 0);
    const auto cmp = nlohmann::json::parse(evp::read_text(kWork / "cmp.json"));
    CHECK(cmp["rows"].size() == 2);
    CHECK(fs::exists(kWork / "cmp.json.timing.json"));
    CHECK(evp::read_text(kWork / "cmp.json").find("seconds") == std::string::npos);

    REQUIRE(run("mask-stats --h 64 --w 64 --tau 0.25", &out) == 0);
    CHECK(out.find("zero") != std::string::npos);
  }
}

}  // TEST_SUITE
