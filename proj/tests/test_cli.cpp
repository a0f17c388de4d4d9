#include <doctest.h>

#include <cstdlib>
#include <string>

#include <sys/wait.h>

#include <json.hpp>

#include "dogerm/rmodel.hpp"
#include "dogerm/tensorstore.hpp"
#include "testutil.hpp"

using namespace dogerm;
using testutil::Rng;
using testutil::TempDir;
using testutil::ToyWorld;

namespace {

int run_cli(const std::string& args) {
  const std::string cmd = std::string(DOGERM_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  REQUIRE(status != -1);
  REQUIRE(WIFEXITED(status));
  return WEXITSTATUS(status);
}

struct Fixture {
  TempDir dir;
  ToyWorld world;
  ToyRMConfig config;

  Fixture() {
    config.vocab_size = world.vocab_size();
    config.d_model = 8;
    config.n_layers = 1;
    config.n_heads = 2;
    config.d_ff = 16;
    config.max_seq_len = 16;
    config.seed = 3;

    Rng rng(100);
    save_checkpoint(ToyRM::init(config).params(), dir.file("sft.ckpt"));
    ToyRMConfig rm_config = config;
    rm_config.seed = 4;
    save_checkpoint(ToyRM::init(rm_config).params(), dir.file("rm.ckpt"));

    std::string vocab_json = "{";
    bool first = true;
    for (const auto& [token, id] : world.vocab.token_to_id) {
      if (!first) vocab_json += ",";
      first = false;
      vocab_json += "\"" + token + "\":" + std::to_string(id);
    }
    vocab_json += "}";
    testutil::write_file_text(dir.file("vocab.json"), vocab_json);

    testutil::write_file_text(
        dir.file("config.json"),
        "{\"vocab_size\":" + std::to_string(config.vocab_size) +
            ",\"d_model\":8,\"n_layers\":1,\"n_heads\":2,\"d_ff\":16,"
            "\"max_seq_len\":16,\"seed\":3}");

    testutil::write_file_text(dir.file("prefs.jsonl"), world.dataset_jsonl(rng, 16, false));
    testutil::write_file_text(
        dir.file("cands.jsonl"),
        "{\"prompt\":\"the a\",\"candidates\":[{\"text\":\"good of\",\"correct\":true},"
        "{\"text\":\"bad of\",\"correct\":false}]}\n"
        "{\"prompt\":\"of in\",\"candidates\":[{\"text\":\"poor a\",\"correct\":false},"
        "{\"text\":\"great a\",\"correct\":true}]}\n");
  }

  std::string p(const std::string& name) const { return dir.file(name).string(); }
};

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("merge at lambda zero reproduces the rm file") {
  Fixture f;
  const int rc = run_cli("merge --sft " + f.p("sft.ckpt") + " --rm " + f.p("rm.ckpt") +
                         " --lambda 0 --out " + f.p("merged.ckpt"));
  CHECK(rc == 0);
  CHECK(bit_equal(load_checkpoint(f.dir.file("merged.ckpt")),
                  load_checkpoint(f.dir.file("rm.ckpt"))));
}

TEST_CASE("merge output is byte-idempotent and thread-invariant") {
  Fixture f;
  CHECK(run_cli("merge --sft " + f.p("sft.ckpt") + " --rm " + f.p("rm.ckpt") +
                " --lambda 0.35 --out " + f.p("a.ckpt")) == 0);
  CHECK(run_cli("merge --sft " + f.p("sft.ckpt") + " --rm " + f.p("rm.ckpt") +
                " --lambda 0.35 --out " + f.p("b.ckpt")) == 0);
  CHECK(run_cli("merge --sft " + f.p("sft.ckpt") + " --rm " + f.p("rm.ckpt") +
                " --lambda 0.35 --threads 4 --out " + f.p("c.ckpt")) == 0);
  const auto a = testutil::read_file_bytes(f.dir.file("a.ckpt"));
  CHECK(a == testutil::read_file_bytes(f.dir.file("b.ckpt")));
  CHECK(a == testutil::read_file_bytes(f.dir.file("c.ckpt")));
}

TEST_CASE("out-of-domain lambda is a usage error") {
  Fixture f;
  CHECK(run_cli("merge --sft " + f.p("sft.ckpt") + " --rm " + f.p("rm.ckpt") +
                " --lambda 1.5 --out " + f.p("x.ckpt")) == 2);
}

TEST_CASE("unknown flags are rejected") {
  Fixture f;
  CHECK(run_cli("merge --sft " + f.p("sft.ckpt") + " --rm " + f.p("rm.ckpt") +
                " --out " + f.p("x.ckpt") + " --frobnicate") == 2);
  CHECK(run_cli("") == 2);             // missing subcommand
  CHECK(run_cli("nonsense") == 2);     // unknown subcommand
  CHECK(run_cli("merge") == 2);        // missing required flags
}

TEST_CASE("operational failures exit 1 without partial output") {
  Fixture f;
  CHECK(run_cli("merge --sft " + f.p("missing.ckpt") + " --rm " + f.p("rm.ckpt") +
                " --out " + f.p("x.ckpt")) == 1);
  CHECK(!std::filesystem::exists(f.dir.file("x.ckpt")));
  CHECK(!std::filesystem::exists(f.dir.file("x.ckpt.tmp")));
}

TEST_CASE("train then eval round trip") {
  Fixture f;
  CHECK(run_cli("train-toy --config " + f.p("config.json") + " --dataset " +
                f.p("prefs.jsonl") + " --vocab-rm " + f.p("vocab.json") +
                " --steps 12 --lr 0.02 --out " + f.p("trained.ckpt")) == 0);
  CHECK(run_cli("eval --model " + f.p("trained.ckpt") + " --config " +
                f.p("config.json") + " --vocab-rm " + f.p("vocab.json") +
                " --dataset " + f.p("prefs.jsonl") + " --bin-width 0.1 --report " +
                f.p("eval.json")) == 0);
  const auto bytes = testutil::read_file_bytes(f.dir.file("eval.json"));
  const auto j = nlohmann::json::parse(std::string(bytes.begin(), bytes.end()));
  CHECK(j.contains("accuracy"));
  CHECK(j.contains("reward_gap_stats"));
}

TEST_CASE("training is idempotent given the seed") {
  Fixture f;
  const std::string base = "train-toy --config " + f.p("config.json") + " --dataset " +
                           f.p("prefs.jsonl") + " --vocab-rm " + f.p("vocab.json") +
                           " --steps 6 --lr 0.02 --seed 77 --out ";
  CHECK(run_cli(base + f.p("t1.ckpt")) == 0);
  CHECK(run_cli(base + f.p("t2.ckpt")) == 0);
  CHECK(testutil::read_file_bytes(f.dir.file("t1.ckpt")) ==
        testutil::read_file_bytes(f.dir.file("t2.ckpt")));
}

TEST_CASE("sweep writes the paper grid with 21 records") {
  Fixture f;
  CHECK(run_cli("sweep --sft " + f.p("sft.ckpt") + " --rm " + f.p("rm.ckpt") +
                " --config " + f.p("config.json") + " --vocab-rm " + f.p("vocab.json") +
                " --dataset " + f.p("prefs.jsonl") + " --grid 0:1:0.05 --report " +
                f.p("sweep.json")) == 0);
  const auto bytes = testutil::read_file_bytes(f.dir.file("sweep.json"));
  const auto j = nlohmann::json::parse(std::string(bytes.begin(), bytes.end()));
  REQUIRE(j["records"].size() == 21);
  CHECK(j["records"][0]["lambda"] == 0.0);
  CHECK(j["records"][20]["lambda"] == 1.0);
  CHECK(std::filesystem::exists(f.dir.file("sweep.csv")));
  const auto csv = testutil::read_file_bytes(f.dir.file("sweep.csv"));
  CHECK(std::string(csv.begin(), csv.end()).rfind("lambda,category,", 0) == 0);
}

TEST_CASE("bestofn reports accuracy, pass@n, and selections") {
  Fixture f;
  CHECK(run_cli("bestofn --model " + f.p("rm.ckpt") + " --config " + f.p("config.json") +
                " --vocab-rm " + f.p("vocab.json") + " --candidates " +
                f.p("cands.jsonl") + " --n 2 --report " + f.p("bon.json")) == 0);
  const auto bytes = testutil::read_file_bytes(f.dir.file("bon.json"));
  const auto j = nlohmann::json::parse(std::string(bytes.begin(), bytes.end()));
  CHECK(j["n"] == 2);
  CHECK(j["pass_at_n"] == 1.0);
  CHECK(j["selections"].size() == 2);
  CHECK(j["best_of_n_accuracy"].get<double>() <= j["pass_at_n"].get<double>());
}

TEST_CASE("align exports the vocabulary partition") {
  Fixture f;
  testutil::write_file_text(f.dir.file("vs.json"), R"({"a":0,"b":1,"c":2})");
  testutil::write_file_text(f.dir.file("vr.json"), R"({"a":0,"b":1,"d":2})");
  CHECK(run_cli("align --vocab-sft " + f.p("vs.json") + " --vocab-rm " + f.p("vr.json") +
                " --out " + f.p("align.json")) == 0);
  const auto bytes = testutil::read_file_bytes(f.dir.file("align.json"));
  const auto j = nlohmann::json::parse(std::string(bytes.begin(), bytes.end()));
  CHECK(j["shared"] == nlohmann::json::array({"a", "b"}));
  CHECK(j["merged_id"]["c"] == 3);
}

TEST_CASE("inspect summarizes a checkpoint") {
  Fixture f;
  CHECK(run_cli("inspect --model " + f.p("rm.ckpt") + " --report " +
                f.p("inspect.json")) == 0);
  const auto bytes = testutil::read_file_bytes(f.dir.file("inspect.json"));
  const auto j = nlohmann::json::parse(std::string(bytes.begin(), bytes.end()));
  CHECK(j["tensors"].size() > 0);
  CHECK(j["tensors"][0].contains("mean"));
}

}  // TEST_SUITE
