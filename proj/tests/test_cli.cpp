#include <doctest.h>

#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "kwspot/checkpoint.hpp"
#include "kwspot/cli.hpp"
#include "kwspot/wave.hpp"
#include "support.hpp"

using namespace kwspot;
namespace kt = kwspot::testing;
using nlohmann::json;

namespace {

struct Run {
    int code;
    std::string out;
    std::string err;
};

Run kwspot_cli(std::vector<std::string> args) {
    std::ostringstream out, err;
    const int code = run_cli(args, out, err);
    return {code, out.str(), err.str()};
}

std::vector<std::string> lines(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream in(text);
    for (std::string l; std::getline(in, l);) {
        if (!l.empty()) out.push_back(l);
    }
    return out;
}

void write_json(const std::filesystem::path& p, const json& j) { std::ofstream(p) << j.dump(2); }

json tiny_synth() {
    return {{"seed", 5},           {"utterance_seconds", 2.0}, {"keywords", {0, 1}},
            {"distractors", {0, 1}}, {"snr_db", {5, 15}},       {"counts", {{"train", 6}, {"dev", 3}, {"test", 4}}}};
}

json tiny_experiment(const std::filesystem::path& data) {
    return {{"manifest", (data / "manifest.jsonl").string()},
            {"checkpoint_dir", "ckpt"},
            {"feature_cache", "cache"},
            {"model",
             {{"lstm", {{"cells", 6}, {"projection", 3}, {"left", 1}, {"right", 1}}},
              {"dnn", {{"hidden", {8}}, {"left", 1}, {"right", 1}}}}},
            {"train",
             {{"max_epochs", 2},
              {"seed", 3},
              {"recipes",
               {{"dnn-xent", {{"initial_lr", 0.2}, {"batch_size", 64}}},
                {"lstm-xent", {{"initial_lr", 0.2}, {"batch_size", 2}}},
                {"lstm-maxpool", {{"initial_lr", 0.2}, {"batch_size", 2}}},
                {"lstm-maxpool-pretrained", {{"initial_lr", 0.2}, {"batch_size", 2}}}}}}}};
}

}  // namespace

TEST_CASE("usage errors") {
    CHECK(kwspot_cli({}).code != 0);
    CHECK(kwspot_cli({"frobnicate"}).code != 0);
    CHECK(kwspot_cli({"synth", "--out", "x"}).code != 0);
    CHECK(kwspot_cli({"--help"}).code == 0);
}

TEST_CASE("end-to-end through the command line") {
    kt::TempDir dir("cli");
    write_json(dir / "synth.json", tiny_synth());

    const auto synth = kwspot_cli({"synth", "--spec", (dir / "synth.json").string(), "--out", (dir / "data").string()});
    REQUIRE(synth.code == 0);
    const auto synth_out = json::parse(synth.out);
    CHECK(synth_out["utterances"] == 13);
    CHECK(std::filesystem::exists(dir / "data/manifest.jsonl"));

    SUBCASE("synth seed override and failures") {
        const auto reseeded = kwspot_cli({"synth", "--spec", (dir / "synth.json").string(), "--out",
                                          (dir / "data2").string(), "--seed", "6"});
        REQUIRE(reseeded.code == 0);
        CHECK(json::parse(reseeded.out)["manifest_sha256"] != synth_out["manifest_sha256"]);
        const auto same = kwspot_cli({"synth", "--spec", (dir / "synth.json").string(), "--out",
                                      (dir / "data3").string()});
        CHECK(json::parse(same.out)["manifest_sha256"] == synth_out["manifest_sha256"]);

        const auto blocked = kwspot_cli({"synth", "--spec", (dir / "synth.json").string(), "--out", "/proc/kwspot-denied"});
        CHECK(blocked.code != 0);
        CHECK_FALSE(blocked.err.empty());
        CHECK(kwspot_cli({"synth", "--spec", (dir / "missing.json").string(), "--out", (dir / "x").string()}).code != 0);
    }

    write_json(dir / "exp.json", tiny_experiment(dir / "data"));
    const std::string cfg = (dir / "exp.json").string();

    SUBCASE("train config errors name the field") {
        auto bad = tiny_experiment(dir / "data");
        bad["train"]["max_epochs"] = 0;
        write_json(dir / "bad.json", bad);
        auto r = kwspot_cli({"train", "--config", (dir / "bad.json").string(), "--recipe", "lstm-xent"});
        CHECK(r.code != 0);
        CHECK(r.err.find("max_epochs") != std::string::npos);

        bad = tiny_experiment(dir / "data");
        bad["model"]["lstm"]["celz"] = 4;
        write_json(dir / "bad.json", bad);
        r = kwspot_cli({"train", "--config", (dir / "bad.json").string(), "--recipe", "lstm-xent"});
        CHECK(r.code != 0);
        CHECK(r.err.find("celz") != std::string::npos);

        bad = tiny_experiment(dir / "data");
        bad["manifest"] = (dir / "nowhere.jsonl").string();
        write_json(dir / "bad.json", bad);
        CHECK(kwspot_cli({"train", "--config", (dir / "bad.json").string(), "--recipe", "lstm-xent"}).code != 0);
        CHECK(kwspot_cli({"train", "--config", cfg, "--recipe", "cnn"}).code != 0);
        CHECK(kwspot_cli({"train", "--config", cfg, "--recipe", "lstm-maxpool", "--init", (dir / "no.kwsm").string()}).code != 0);
    }

    SUBCASE("train, evaluate and detect") {
        const auto xent = kwspot_cli({"train", "--config", cfg, "--recipe", "lstm-xent"});
        REQUIRE(xent.code == 0);
        const auto xent_out = json::parse(xent.out);
        const std::filesystem::path xent_ckpt = xent_out["checkpoint"].get<std::string>();
        CHECK(xent_ckpt.filename() == "lstm-xent.kwsm");
        CHECK(std::filesystem::exists(dir / "ckpt/lstm-xent.kwsm.json"));
        CHECK(xent_out["checkpoint_sha256"] == file_sha256(xent_ckpt));

        // Same config and seed, single-threaded: identical bytes.
        const auto again = kwspot_cli({"train", "--config", cfg, "--recipe", "lstm-xent", "--name", "again"});
        REQUIRE(again.code == 0);
        CHECK(json::parse(again.out)["checkpoint_sha256"] == xent_out["checkpoint_sha256"]);
        const auto reseeded = kwspot_cli({"train", "--config", cfg, "--recipe", "lstm-xent", "--name", "other", "--seed", "4"});
        CHECK(json::parse(reseeded.out)["checkpoint_sha256"] != xent_out["checkpoint_sha256"]);

        const auto pre = kwspot_cli({"train", "--config", cfg, "--recipe", "lstm-maxpool", "--init", xent_ckpt.string()});
        REQUIRE(pre.code == 0);
        const auto pre_out = json::parse(pre.out);
        CHECK(std::filesystem::path(pre_out["checkpoint"].get<std::string>()).filename() == "lstm-maxpool-pretrain.kwsm");
        std::ifstream log(pre_out["log"].get<std::string>());
        std::string first;
        std::getline(log, first);
        const auto start = json::parse(first);
        CHECK(start["event"] == "start");
        CHECK(start["lineage"]["init_sha256"] == xent_out["checkpoint_sha256"]);

        REQUIRE(kwspot_cli({"train", "--config", cfg, "--recipe", "lstm-maxpool"}).code == 0);
        REQUIRE(kwspot_cli({"train", "--config", cfg, "--recipe", "dnn-xent"}).code == 0);
        CHECK(kwspot_cli({"train", "--config", cfg, "--recipe", "dnn-xent", "--init", xent_ckpt.string()}).code != 0);

        const auto ck = [&](const char* name) { return (dir / "ckpt" / name).string(); };
        const auto four = kwspot_cli({"evaluate", "--manifest", (dir / "data/manifest.jsonl").string(), "--split", "test",
                                      "--models", ck("dnn-xent.kwsm"), ck("lstm-xent.kwsm"), ck("lstm-maxpool-random.kwsm"),
                                      ck("lstm-maxpool-pretrain.kwsm"), "--out", (dir / "report4").string(), "--grid", "11"});
        REQUIRE(four.code == 0);
        const auto summary = json::parse(std::ifstream(dir / "report4/summary.json"));
        CHECK(summary["models"].size() == 4);
        CHECK(summary["baseline"] == "dnn-xent");
        CHECK(summary["relative_auc_change_percent"].size() == 3);
        std::vector<std::string> rows;
        for (const auto& r : summary["table"]) rows.push_back(r["model"]);
        CHECK(rows == std::vector<std::string>{"dnn-xent", "lstm-xent", "lstm-maxpool-random", "lstm-maxpool-pretrain"});
        const auto csv = lines([&] {
            std::ifstream in(dir / "report4/det_curve.csv");
            return std::string(std::istreambuf_iterator<char>(in), {});
        }());
        CHECK(csv.front() == "model,threshold,miss_rate,fa_rate");
        CHECK(csv.size() == 1 + 4 * 12);

        const auto one = kwspot_cli({"evaluate", "--manifest", (dir / "data/manifest.jsonl").string(), "--models",
                                     ck("lstm-xent.kwsm"), "--out", (dir / "report1").string()});
        REQUIRE(one.code == 0);
        const auto s1 = json::parse(one.out);
        CHECK(s1["models"].size() == 1);
        CHECK_FALSE(s1.contains("relative_auc_change_percent"));
        CHECK(kwspot_cli({"evaluate", "--manifest", (dir / "data/manifest.jsonl").string(), "--models",
                          ck("missing.kwsm"), "--out", (dir / "r").string()})
                  .code != 0);

        WaveForm silence;
        silence.samples.assign(32000, 0);
        write_wav(dir / "silence.wav", silence);
        for (const auto* model : {"lstm-xent.kwsm", "dnn-xent.kwsm"}) {
            const auto quiet = kwspot_cli({"detect", "--model", ck(model), "--wav", (dir / "silence.wav").string(),
                                           "--threshold", "1.1"});
            CHECK(quiet.code == 0);
            CHECK(quiet.out.empty());
            const auto wav = (dir / "data/wav/test-0000.wav").string();
            CHECK(kwspot_cli({"detect", "--model", ck(model), "--wav", wav, "--threshold", "1.1"}).out.empty());
            const auto all = kwspot_cli({"detect", "--model", ck(model), "--wav", wav, "--threshold", "0", "--n-lck", "50"});
            REQUIRE(all.code == 0);
            const auto spikes = lines(all.out);
            CHECK(spikes.size() == 4);  // 198 frames, lockout 50: 0, 51, 102, 153
            const auto first = json::parse(spikes.front());
            CHECK(first["frame"] == 0);
            CHECK(first["time_ms"] == 0);
            CHECK(first["utterance_id"] == "test-0000");
            CHECK(first.contains("smoothed_posterior"));
        }
        CHECK(kwspot_cli({"detect", "--model", ck("lstm-xent.kwsm"), "--wav", (dir / "none.wav").string(), "--threshold", "0.5"}).code != 0);
    }
}
