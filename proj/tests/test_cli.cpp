#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mla/datagen.hpp"

namespace fs = std::filesystem;

namespace {

fs::path work_root() {
    static fs::path root = [] {
        fs::path p = fs::temp_directory_path() / "mla_test_cli";
        fs::remove_all(p);
        fs::create_directories(p);
        return p;
    }();
    return root;
}

int run_cli(const std::string& args, const fs::path& log = {}) {
    std::string cmd = std::string(MLA_CLI_PATH) + " " + args;
    if (log.empty()) cmd += " > /dev/null 2>&1";
    else cmd += " > " + log.string() + " 2>&1";
    int rc = std::system(cmd.c_str());
    return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

// tiny model + train sections shared by the happy-path runs
void write_micro_config(const fs::path& p) {
    std::ofstream out(p);
    out << R"({
  "model": {
    "stem_channels": 4,
    "blocks": [[4, 1], [8, 2]],
    "tap_ids": [1],
    "branches": {"d_embed": 4, "n_heads": 2, "d_k": 2, "d_mlp_hidden": 4, "d_out": 2},
    "seed": 5
  },
  "train": {"epochs": 2, "batch_size": 8, "lr": 0.01, "seed": 3}
})";
}

// dataset shared by every happy-path case; generated once by the CLI itself
const fs::path& shared_dataset() {
    static fs::path file = [] {
        fs::path f = work_root() / "data.mldg1";
        REQUIRE(run_cli("datagen --out " + f.string() +
                        " --classes 2 --domains 2 --per-cell 4 --size 16 --seed 21") == 0);
        return f;
    }();
    return file;
}

}  // namespace

TEST_CASE("usage and parse errors use exit code 2, help uses 0") {
    CHECK(run_cli("--help") == 0);
    CHECK(run_cli("train --help") == 0);
    CHECK(run_cli("") == 2);                                   // missing subcommand
    CHECK(run_cli("datagen") == 2);                            // missing required --out
    CHECK(run_cli("datagen --out x.mldg1 --frobnicate") == 2); // unknown flag
    CHECK(run_cli("orchestrate") == 2);                        // unknown subcommand
}

TEST_CASE("datagen writes a loadable dataset of the requested shape") {
    fs::path log = work_root() / "datagen.log";
    fs::path file = work_root() / "shapes.mldg1";
    REQUIRE(run_cli("datagen --out " + file.string() +
                    " --classes 3 --domains 2 --per-cell 2 --size 16 --seed 7 --spurious 0.5",
                    log) == 0);
    CHECK(fs::file_size(file) == 21 + 12 * (4 + 3 * 16 * 16));
    mla::DomainDataset ds = mla::load_dataset(file.string());
    CHECK(ds.n_classes == 3);
    CHECK(ds.n_domains == 2);
    CHECK(ds.samples.size() == 12);
    std::string out = slurp(log);
    CHECK(out.find("wrote 12 samples") != std::string::npos);
    CHECK(out.find("\"spurious\":0.5") != std::string::npos);

    // identical invocation reproduces identical bytes
    fs::path file2 = work_root() / "shapes2.mldg1";
    REQUIRE(run_cli("datagen --out " + file2.string() +
                    " --classes 3 --domains 2 --per-cell 2 --size 16 --seed 7 --spurious 0.5") == 0);
    CHECK(slurp(file) == slurp(file2));
}

TEST_CASE("train run produces config echo, log, metrics, and checkpoint") {
    fs::path cfg = work_root() / "micro.json";
    write_micro_config(cfg);
    fs::path out = work_root() / "run1";
    fs::path log = work_root() / "train.log";
    REQUIRE(run_cli("train --data " + shared_dataset().string() + " --out " + out.string() +
                    " --config " + cfg.string() + " --holdout domain_1", log) == 0);

    CHECK(fs::exists(out / "config.json"));
    CHECK(fs::exists(out / "train_log.jsonl"));
    CHECK(fs::exists(out / "metrics.json"));
    CHECK(fs::exists(out / "checkpoint" / "manifest.json"));
    CHECK(fs::exists(out / "checkpoint" / "weights.mlt1"));

    auto echo = nlohmann::json::parse(slurp(out / "config.json"));
    CHECK(echo.at("data").at("holdout") == "domain_1");
    CHECK(echo.at("model").at("stem_channels") == 4);
    CHECK(echo.at("model").at("input") == nlohmann::json::array({3, 16, 16}));
    CHECK(echo.at("model").at("n_classes") == 2);  // taken from the dataset
    CHECK(echo.at("train").at("epochs") == 2);

    std::string lines = slurp(out / "train_log.jsonl");
    CHECK(std::count(lines.begin(), lines.end(), '\n') == 2);

    auto metrics = nlohmann::json::parse(slurp(out / "metrics.json"));
    CHECK(metrics.at("epochs_run") == 2);
    CHECK(metrics.contains("final_train_accuracy"));
    CHECK(metrics.contains("final_mean_loss"));
    CHECK(metrics.at("holdout_domain") == "domain_1");
    CHECK(metrics.at("holdout_accuracy").is_number());

    std::string stdout_text = slurp(log);
    CHECK(stdout_text.find("trained 2 epoch(s)") != std::string::npos);
    CHECK(stdout_text.find("held-out 'domain_1' accuracy") != std::string::npos);
}

TEST_CASE("reruns are byte-identical; run directories are append-only") {
    fs::path cfg = work_root() / "micro.json";
    write_micro_config(cfg);
    fs::path out1 = work_root() / "det1";
    fs::path out2 = work_root() / "det2";
    std::string common = "train --data " + shared_dataset().string() + " --config " + cfg.string() +
                         " --holdout domain_1 --epochs 1";
    REQUIRE(run_cli(common + " --out " + out1.string()) == 0);
    REQUIRE(run_cli(common + " --out " + out2.string()) == 0);
    CHECK(slurp(out1 / "train_log.jsonl") == slurp(out2 / "train_log.jsonl"));
    CHECK(slurp(out1 / "metrics.json") == slurp(out2 / "metrics.json"));
    CHECK(slurp(out1 / "checkpoint" / "weights.mlt1") ==
          slurp(out2 / "checkpoint" / "weights.mlt1"));
    CHECK(slurp(out1 / "checkpoint" / "manifest.json") ==
          slurp(out2 / "checkpoint" / "manifest.json"));

    // occupied directory: refused without --force, allowed with it
    CHECK(run_cli(common + " --out " + out1.string()) == 1);
    CHECK(run_cli(common + " --out " + out1.string() + " --force") == 0);
}

TEST_CASE("config and input problems exit 1 with a message") {
    fs::path out = work_root() / "failing";
    fs::path log = work_root() / "fail.log";

    fs::path bad_json = work_root() / "bad.json";
    std::ofstream(bad_json) << "{ not json";
    CHECK(run_cli("train --data " + shared_dataset().string() + " --out " + out.string() +
                  " --config " + bad_json.string(), log) == 1);
    CHECK(slurp(log).find("error:") != std::string::npos);

    fs::path bad_section = work_root() / "section.json";
    std::ofstream(bad_section) << R"({"optimizer": {}})";
    CHECK(run_cli("train --data " + shared_dataset().string() + " --out " + out.string() +
                  " --config " + bad_section.string(), log) == 1);
    CHECK(slurp(log).find("unknown config section") != std::string::npos);

    CHECK(run_cli("train --data " + (work_root() / "missing.mldg1").string() + " --out " +
                  out.string()) == 1);
    CHECK(run_cli("train --data " + shared_dataset().string() + " --out " + out.string() +
                  " --holdout nosuch", log) == 1);
    CHECK(slurp(log).find("unknown domain") != std::string::npos);
}

TEST_CASE("f32 precision reaches the checkpoint") {
    fs::path cfg = work_root() / "micro.json";
    write_micro_config(cfg);
    fs::path out = work_root() / "f32run";
    REQUIRE(run_cli("train --data " + shared_dataset().string() + " --out " + out.string() +
                    " --config " + cfg.string() + " --epochs 1 --precision f32") == 0);
    auto echo = nlohmann::json::parse(slurp(out / "config.json"));
    CHECK(echo.at("model").at("precision") == "f32");
    auto manifest = nlohmann::json::parse(slurp(out / "checkpoint" / "manifest.json"));
    CHECK(manifest.at("tensors").at(0).at("dtype") == "f32");

    CHECK(run_cli("train --data " + shared_dataset().string() + " --out " + out.string() +
                  " --force --epochs 1 --precision f16") == 1);
}

TEST_CASE("experiment grid emits reports and a full runs tree") {
    fs::path cfg = work_root() / "micro.json";
    write_micro_config(cfg);
    fs::path out = work_root() / "grid";
    fs::path log = work_root() / "grid.log";
    REQUIRE(run_cli("experiment --data " + shared_dataset().string() + " --out " + out.string() +
                    " --config " + cfg.string() + " --seeds 1,2 --epochs 1", log) == 0);

    CHECK(fs::exists(out / "report.txt"));
    CHECK(fs::exists(out / "report.csv"));
    CHECK(fs::exists(out / "report.json"));
    for (std::string v : {"attention", "baseline"})
        for (std::string d : {"domain_0", "domain_1"})
            for (std::string s : {"seed1", "seed2"})
                CHECK(fs::exists(out / "runs" / v / d / s / "metrics.json"));

    std::string text = slurp(log);
    CHECK(text.find("held-out accuracy (%), mean over 2 seed(s)") != std::string::npos);
    CHECK(text.find("attention") != std::string::npos);
    CHECK(text.find("baseline") != std::string::npos);
    CHECK(slurp(out / "report.txt").find("Average") != std::string::npos);

    auto echo = nlohmann::json::parse(slurp(out / "config.json"));
    CHECK(echo.at("experiment").at("seeds") == nlohmann::json::array({1, 2}));
}

TEST_CASE("saliency renders maps straight from a checkpoint") {
    fs::path cfg = work_root() / "micro.json";
    write_micro_config(cfg);
    fs::path train_out = work_root() / "sal_train";
    REQUIRE(run_cli("train --data " + shared_dataset().string() + " --out " + train_out.string() +
                    " --config " + cfg.string() + " --epochs 1") == 0);

    fs::path out = work_root() / "sal_maps";
    fs::path log = work_root() / "sal.log";
    REQUIRE(run_cli("saliency --checkpoint " + (train_out / "checkpoint").string() + " --data " +
                    shared_dataset().string() + " --out " + out.string() +
                    " --sample 0,3 --objective score --reduce mean", log) == 0);

    for (int idx : {0, 3}) {
        fs::path pgm = out / ("saliency_" + std::to_string(idx) + ".pgm");
        fs::path side = out / ("saliency_" + std::to_string(idx) + ".json");
        REQUIRE(fs::exists(pgm));
        REQUIRE(fs::exists(side));
        std::string bytes = slurp(pgm);
        CHECK(bytes.rfind("P5\n16 16\n255\n", 0) == 0);
        CHECK(bytes.size() == std::string("P5\n16 16\n255\n").size() + 256);
        auto meta = nlohmann::json::parse(slurp(side));
        CHECK(meta.at("sample") == idx);
        CHECK(meta.at("objective") == "score");
        CHECK(meta.at("reduce") == "mean");
        CHECK(meta.at("height") == 16);
    }
    CHECK(slurp(log).find("saliency_0.pgm") != std::string::npos);

    CHECK(run_cli("saliency --checkpoint " + (train_out / "checkpoint").string() + " --data " +
                  shared_dataset().string() + " --out " + out.string() +
                  " --force --sample 9999") == 1);
    CHECK(run_cli("saliency --checkpoint " + (train_out / "checkpoint").string() + " --data " +
                  shared_dataset().string() + " --out " + out.string() +
                  " --force --sample 0 --objective entropy") == 1);
}
