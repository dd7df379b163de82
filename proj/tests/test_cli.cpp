#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <sys/wait.h>

#include "bravl/decode.hpp"

namespace fs = std::filesystem;

namespace {

const std::string kCli = BRAVL_CLI_PATH;

int run(const std::string& args) {
    const std::string cmd = kCli + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    if (WIFEXITED(status)) return WEXITSTATUS(status);
    return -1;
}

fs::path work_dir(const std::string& tag) {
    const fs::path p = fs::temp_directory_path() / ("bravl_cli_" + tag);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::map<std::string, std::string> read_all_files(const fs::path& dir) {
    std::map<std::string, std::string> out;
    for (const auto& entry : fs::recursive_directory_iterator(dir)) {
        if (!entry.is_regular_file()) continue;
        std::ifstream is(entry.path(), std::ios::binary);
        out[fs::relative(entry.path(), dir).string()] =
            std::string((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    }
    return out;
}

const std::string kTinySynth = "--seen-classes 4 --novel-classes 2 --samples-per-class 6 --latent-true-dim 3 "
                               "--dim-brain 12 --dim-visual 8 --dim-textual 6 --repeats 2";
const std::string kTinyTrain =
    "--epochs 2 --batch-size 16 --hidden-brain 8 --hidden-visual 8 --hidden-textual 8 --latent-dim 3 "
    "--cubo-k 2 --lr 1e-3";

} // namespace

TEST_CASE("help and usage errors") {
    CHECK(run("--help") == 0);
    CHECK(run("synth --help") == 0);
    CHECK(run("train --help") == 0);
    CHECK(run("") == 2);                     // missing subcommand
    CHECK(run("synth") == 2);                // missing required --out
    CHECK(run("synth --bogus x") == 2);      // unknown flag
    CHECK(run("frobnicate") == 2);           // unknown subcommand
}

TEST_CASE("runtime failures exit with 1") {
    const fs::path dir = work_dir("fail");
    CHECK(run("preprocess --data " + (dir / "nope").string() + " --out " + (dir / "out").string()) == 1);
    CHECK(run("decode --data " + (dir / "nope").string() + " --model " + (dir / "nope").string() +
              " --out " + (dir / "out").string()) == 1);
}

TEST_CASE("synth is byte-identical across runs with one seed") {
    const fs::path dir = work_dir("synthdet");
    CHECK(run("synth --seed 7 --out " + (dir / "a").string() + " " + kTinySynth) == 0);
    CHECK(run("synth --seed 7 --out " + (dir / "b").string() + " " + kTinySynth) == 0);
    CHECK(run("synth --seed 8 --out " + (dir / "c").string() + " " + kTinySynth) == 0);

    const auto a = read_all_files(dir / "a");
    const auto b = read_all_files(dir / "b");
    CHECK(a.size() > 0);
    CHECK(a == b);
    CHECK(a != read_all_files(dir / "c"));
}

TEST_CASE("full pipeline through the executable") {
    const fs::path dir = work_dir("pipeline");
    REQUIRE(run("synth --seed 3 --out " + (dir / "raw").string() + " " + kTinySynth) == 0);
    REQUIRE(run("preprocess --data " + (dir / "raw").string() + " --out " + (dir / "proc").string() +
                " --stability-ratio 0.5") == 0);
    REQUIRE(run("train --data " + (dir / "proc").string() + " --out " + (dir / "run").string() + " " +
                kTinyTrain) == 0);
    CHECK(fs::exists(dir / "run" / "log.csv"));
    CHECK(fs::exists(dir / "run" / "checkpoint" / "manifest.txt"));
    CHECK(fs::exists(dir / "run" / "run_info.txt"));

    REQUIRE(run("decode --data " + (dir / "proc").string() + " --model " + (dir / "run" / "checkpoint").string() +
                " --out " + (dir / "vt").string() + " --modalities v,t --export-latents") == 0);
    CHECK(fs::exists(dir / "vt" / "overall.csv"));
    CHECK(fs::exists(dir / "vt" / "per_class.csv"));
    CHECK(fs::exists(dir / "vt" / "test_brain_latents.bvlm"));

    // comparison run plus per-class gains against the baseline
    REQUIRE(run("decode --data " + (dir / "proc").string() + " --model " + (dir / "run" / "checkpoint").string() +
                " --out " + (dir / "v").string() + " --modalities v --baseline " +
                (dir / "vt" / "per_class.csv").string()) == 0);
    const bravl::DecodeReport v =
        bravl::read_decode_report(dir / "v" / "overall.csv", dir / "v" / "per_class.csv");
    CHECK(v.modality_subset == "v");
    CHECK(!v.per_class_gain.empty());

    // analyses
    REQUIRE(run("analyze voxel-weights --preproc " + (dir / "proc" / "models").string() + " --model " +
                (dir / "run" / "checkpoint").string() + " --out " + (dir / "weights.csv").string()) == 0);
    CHECK(fs::exists(dir / "weights.csv"));
    REQUIRE(run("analyze crossgen --data " + (dir / "proc").string() + " --model " +
                (dir / "run" / "checkpoint").string() + " --out " + (dir / "crossgen").string()) == 0);
    CHECK(fs::exists(dir / "crossgen" / "crossgen.csv"));
    REQUIRE(run("analyze cosine --input " + (dir / "vt" / "test_brain_latents.bvlm").string() + " --out " +
                (dir / "cosine.csv").string()) == 0);
    CHECK(fs::exists(dir / "cosine.csv"));
}

TEST_CASE("train accepts a config file, flags win") {
    const fs::path dir = work_dir("cfgfile");
    REQUIRE(run("synth --seed 1 --out " + (dir / "raw").string() + " " + kTinySynth) == 0);
    REQUIRE(run("preprocess --data " + (dir / "raw").string() + " --out " + (dir / "proc").string() +
                " --stability-ratio 0.5") == 0);
    {
        std::ofstream os(dir / "train.cfg");
        os << "latent_dim=3\nhidden_brain=8\nhidden_visual=8\nhidden_textual=8\nlr=0.001\nbatch_size=16\n"
           << "epochs=9999\nlambda1=0.001\nlambda2=0.001\ncubo_k=2\nanneal_rate=0.01\nposterior_type=mopoe\n"
           << "negatives_per_type=1\nseed=1\nintra_off=0\ninter_off=0\ncheckpoint_every=0\n";
    }
    // --epochs overrides the config file's 9999
    REQUIRE(run("train --data " + (dir / "proc").string() + " --out " + (dir / "run").string() +
                " --config " + (dir / "train.cfg").string() + " --epochs 1") == 0);
    std::ifstream info(dir / "run" / "run_info.txt");
    std::string text((std::istreambuf_iterator<char>(info)), std::istreambuf_iterator<char>());
    CHECK(text.find("epochs=1\n") != std::string::npos);
}

TEST_CASE("ablate writes result rows plus means") {
    const fs::path dir = work_dir("ablate");
    const std::string small =
        " --seen-classes 3 --novel-classes 2 --samples-per-class 4 --latent-true-dim 2 --dim-brain 9 "
        "--dim-visual 6 --dim-textual 5 --repeats 2 --epochs 1 --batch-size 16 --hidden-brain 8 "
        "--hidden-visual 8 --hidden-textual 8 --latent-dim 3 --cubo-k 2 --stability-ratio 0.5";
    CHECK(run("ablate --out x.csv --variants bogus") == 1); // unknown variant name
    REQUIRE(run("ablate --out " + (dir / "ablation.csv").string() +
                " --variants full,elbo-only --seeds 2 --posteriors mopoe" + small) == 0);
    std::ifstream is(dir / "ablation.csv");
    std::string line;
    int rows = 0, means = 0;
    std::getline(is, line);
    CHECK(line == "variant,posterior,seed,top1,top5");
    while (std::getline(is, line)) {
        if (line.find(",mean,") != std::string::npos) ++means;
        else if (!line.empty()) ++rows;
    }
    CHECK(rows == 4);  // 2 variants x 2 seeds
    CHECK(means == 2); // one mean row per variant
}
