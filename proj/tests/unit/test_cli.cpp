#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "ctxseg/cli/app.hpp"
#include "ctxseg/cli/config.hpp"
#include "ctxseg/sweep/study.hpp"
#include "doctest.h"

using namespace ctxseg;
namespace fs = std::filesystem;

namespace {

struct Run {
    int code = 0;
    std::string out;
    std::string err;
};

Run run(std::vector<std::string> args) {
    args.insert(args.begin(), "ctxseg");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    Run r;
    r.code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
    r.out = out.str();
    r.err = err.str();
    return r;
}

fs::path scratch(const std::string& name) {
    auto dir = fs::temp_directory_path() / ("ctxseg_cli_" + name);
    fs::remove_all(dir);
    return dir;
}

// Small backbone and data so each run takes well under a second.
std::vector<std::string> tiny(std::vector<std::string> args) {
    for (const char* s : {"backbone.image_size=16", "backbone.patch_size=4", "data.task.image_size=16",
                          "data.task.train_samples=6", "data.task.val_samples=2", "data.task.test_samples=2",
                          "train.steps=2", "train.batch_size=2", "train.micro_batch=2", "train.eval_every=1"}) {
        args.push_back("--set");
        args.push_back(s);
    }
    return args;
}

Json read_json(const fs::path& p) {
    std::ifstream in(p);
    return Json::parse(in);
}

std::size_t count_lines(const fs::path& p) {
    std::ifstream in(p);
    std::size_t n = 0;
    std::string line;
    while (std::getline(in, line))
        if (!line.empty()) ++n;
    return n;
}

}  // namespace

TEST_CASE("overrides are type checked against the schema") {
    Json c = default_config();
    apply_override(c, "train.steps=7");
    CHECK(c["train"]["steps"] == 7);
    apply_override(c, "train.learning_rate=0.01");
    CHECK(c["train"]["learning_rate"] == 0.01);
    apply_override(c, "train.learning_rate=1");
    CHECK(train_config(c).optimizer.learning_rate == 1.0);
    apply_override(c, "train.strategy=maple");
    CHECK(train_config(c).kind == PromptKind::maple);
    apply_override(c, "ablation.strategies=coop,vpt");
    CHECK(strategy_list(c["ablation"]["strategies"]) == std::vector<PromptKind>{PromptKind::coop, PromptKind::vpt});
    apply_override(c, "data.manifest=\"x.jsonl\"");
    CHECK(c["data"]["manifest"] == "x.jsonl");

    CHECK_THROWS_AS(apply_override(c, "train.stepz=1"), ConfigError);
    CHECK_THROWS_AS(apply_override(c, "train.steps=abc"), ConfigError);
    CHECK_THROWS_AS(apply_override(c, "train.steps=-3"), ConfigError);
    CHECK_THROWS_AS(apply_override(c, "train.augment=1"), ConfigError);
    CHECK_THROWS_AS(apply_override(c, "train"), ConfigError);
    CHECK_THROWS_AS(apply_override(c, "train=3"), ConfigError);

    Json patch = {{"sweep", {{"n_trials", 3}, {"bogus", 1}}}};
    CHECK_THROWS_AS(merge_config(c, patch), ConfigError);
}

TEST_CASE("config converters") {
    Json c = default_config();
    apply_override(c, "train.strategy=vpt");
    apply_override(c, "train.prompt_depth=3");
    apply_override(c, "coupler.attn_heads=8");
    auto cfg = train_config(c);
    CHECK(cfg.kind == PromptKind::vpt);
    CHECK(cfg.prompt_depth == 3);
    CHECK(cfg.coupler.attn_heads == 8);
    CHECK(cfg.batch_size == 32);
    CHECK(backbone_config(c).text_layers == 4);
    auto sweep = sweep_settings(c);
    CHECK(sweep.n_trials == 20);
    CHECK(sweep.sampler == SamplerKind::tpe);
    apply_override(c, "sweep.objective=other");
    CHECK_THROWS_AS(sweep_settings(c), ConfigError);
    apply_override(c, "train.strategy=nope");
    CHECK_THROWS_AS(train_config(c), ConfigError);
}

TEST_CASE("usage errors exit with 1") {
    auto r = run({"train", "--config", "/nonexistent/config.json"});
    CHECK(r.code == kExitUsage);
    CHECK_FALSE(r.err.empty());
    CHECK(run({}).code == kExitUsage);
    CHECK(run({"frobnicate"}).code == kExitUsage);
    CHECK(run({"train", "--set", "train.nope=1", "--out", scratch("bad").string()}).code == kExitUsage);
    CHECK(run({"--help"}).code == kExitOk);
}

TEST_CASE("train writes parseable artifacts and a resolved config") {
    auto dir = scratch("train");
    auto r = run(tiny({"train", "--strategy", "coop", "--prompt-depth", "1", "--seed", "3", "--out", dir.string()}));
    REQUIRE(r.code == kExitOk);
    CHECK(r.out.find("val dice") != std::string::npos);
    CHECK(r.out.find("test dice") != std::string::npos);
    auto ckpt = load_checkpoint(dir / "prompts.safetensors");
    CHECK(ckpt.count("prompt.textual.0") == 1);
    CHECK(ckpt.count("upsampler.residual_factor") == 1);
    CHECK(read_metrics(dir / "metrics.jsonl").size() == 2);
    auto summary = read_json(dir / "summary.json");
    CHECK(summary["backbone_checksum_before"] == summary["backbone_checksum_after"]);
    auto resolved = read_json(dir / "config.resolved.json");
    CHECK(resolved["train"]["seed"] == 3);

    // the snapshot alone reproduces the run
    auto again_dir = scratch("train_again");
    auto again = run({"train", "--config", (dir / "config.resolved.json").string(), "--out", again_dir.string()});
    REQUIRE(again.code == kExitOk);
    CHECK(read_json(again_dir / "summary.json") == summary);
    fs::remove_all(dir);
    fs::remove_all(again_dir);
}

TEST_CASE("freeze violation exits with 3") {
    auto dir = scratch("freeze");
    auto r = run(tiny({"train", "--set", "train.mutate_backbone_at=1", "--out", dir.string()}));
    CHECK(r.code == kExitFreeze);
    CHECK(r.err.find("freeze") != std::string::npos);
    fs::remove_all(dir);
}

TEST_CASE("gen-data output feeds training") {
    auto data = scratch("data");
    REQUIRE(run(tiny({"gen-data", "--out", data.string()})).code == kExitOk);
    CHECK(fs::exists(data / "manifest.jsonl"));
    auto dir = scratch("from_manifest");
    auto manifest = "data.manifest=\"" + (data / "manifest.jsonl").string() + "\"";
    CHECK(run(tiny({"train", "--set", manifest, "--out", dir.string()})).code == kExitOk);
    auto missing = run(tiny({"train", "--set", "data.manifest=\"/nonexistent/m.jsonl\"", "--out", dir.string()}));
    CHECK(missing.code == kExitRuntime);
    fs::remove_all(data);
    fs::remove_all(dir);
}

TEST_CASE("upsampler ablation reports two rows per strategy") {
    auto dir = scratch("ablate_up");
    auto r = run(tiny({"ablate-upsampler", "--set", "ablation.strategies=coop,vpt", "--out", dir.string()}));
    REQUIRE(r.code == kExitOk);
    CHECK(r.out.find("2.59") != std::string::npos);
    CHECK(count_lines(dir / "ablate_upsampler.csv") == 1 + 4);
    std::ifstream in(dir / "ablate_upsampler.csv");
    std::string line;
    std::getline(in, line);
    std::set<std::string> checksums;
    while (std::getline(in, line)) checksums.insert(line.substr(line.rfind(',') + 1));
    CHECK(checksums.size() == 1);
    fs::remove_all(dir);
}

TEST_CASE("init ablation persists per-seed deltas and rejects vpt") {
    auto dir = scratch("ablate_init");
    auto r = run(tiny({"ablate-init", "--set", "ablation.init_strategies=coop", "--out", dir.string()}));
    REQUIRE(r.code == kExitOk);
    CHECK(count_lines(dir / "ablate_init.csv") == 1 + 3);
    auto bad = run(tiny({"ablate-init", "--set", "ablation.init_strategies=coop,vpt", "--out", dir.string()}));
    CHECK(bad.code == kExitUsage);
    fs::remove_all(dir);
}

TEST_CASE("sweep and report") {
    auto dir = scratch("sweep");
    auto r = run(tiny({"sweep", "--set", "sweep.objective=quadratic", "--set", "sweep.strategies=coop,maple",
                       "--set", "sweep.n_trials=12", "--out", dir.string()}));
    REQUIRE(r.code == kExitOk);
    CHECK(load_study(dir / "study_coop.jsonl").trials.size() == 12);
    CHECK(fs::exists(dir / "report.txt"));
    CHECK(fs::exists(dir / "report.csv"));
    CHECK(count_lines(dir / "depth_scatter.csv") == 2 + 24);

    auto rep = scratch("report");
    auto r2 = run({"report", (dir / "study_coop.jsonl").string() + "@a", (dir / "study_maple.jsonl").string() + "@a",
                   "--out", rep.string()});
    REQUIRE(r2.code == kExitOk);
    CHECK(r2.out.find("maple") != std::string::npos);

    auto train_sweep = scratch("sweep_train");
    auto r3 = run(tiny({"sweep", "--set", "sweep.n_trials=2", "--set", "sweep.trial_steps=1", "--out",
                        train_sweep.string()}));
    CHECK(r3.code == kExitOk);
    fs::remove_all(dir);
    fs::remove_all(rep);
    fs::remove_all(train_sweep);
}
