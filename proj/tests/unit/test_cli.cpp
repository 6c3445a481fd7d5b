#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "ctvqa/cli/commands.hpp"
#include "ctvqa/data/binary_io.hpp"
#include "ctvqa/decoder/checkpoint.hpp"
#include "ctvqa/errors.hpp"
#include "doctest.h"
#include "json.hpp"

using namespace ctvqa;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Run {
  int rc = -1;
  std::string out;
  std::string err;
};

fs::path scratch() {
  static const fs::path dir = [] {
    const fs::path d = fs::temp_directory_path() / "ctvqa_cli_tests";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

Run run_cli(const std::string& args) {
  const fs::path out = scratch() / "stdout.txt";
  const fs::path err = scratch() / "stderr.txt";
  const std::string cmd = std::string(CTVQA_CLI_PATH) + " " + args + " >" + out.string() +
                          " 2>" + err.string();
  const int status = std::system(cmd.c_str());
  Run r;
  r.rc = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = binary::read_file(out);
  r.err = binary::read_file(err);
  return r;
}

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

std::size_t count_of(const std::string& hay, const std::string& needle) {
  std::size_t n = 0;
  for (auto pos = hay.find(needle); pos != std::string::npos; pos = hay.find(needle, pos + 1)) ++n;
  return n;
}

// A 12-volume dataset and a one-epoch checkpoint shared by the slower cases.
struct Fixture {
  fs::path data = scratch() / "data";
  fs::path ckpt = scratch() / "model.ckpt";

  Fixture() {
    if (fs::exists(ckpt)) return;
    REQUIRE(run_cli("generate --seed 3 --volumes 12 --out " + q(data)).rc == 0);
    REQUIRE(run_cli("train --data " + q(data) + " --out " + q(ckpt) + " --epochs 1").rc == 0);
  }
};

fs::path first_test_volume(const fs::path& data) {
  std::ifstream in(data / "test.jsonl");
  std::string line;
  std::getline(in, line);
  return data / "volumes" / (json::parse(line).at("volume_id").get<std::string>() + ".ctv");
}

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("help and usage exit codes") {
    CHECK(run_cli("--help").rc == 0);
    CHECK(run_cli("train --help").rc == 0);
    CHECK(run_cli("").rc == 2);
    CHECK(run_cli("generate --seed 1").rc == 2);
    const Run bad = run_cli("generate --seed 1 --out x --bogus");
    CHECK(bad.rc == 2);
    CHECK_FALSE(bad.err.empty());
  }

  TEST_CASE("generate: volume count, determinism, refusal") {
    const fs::path a = scratch() / "gen_a";
    const fs::path b = scratch() / "gen_b";
    REQUIRE(run_cli("generate --seed 7 --volumes 10 --out " + q(a)).rc == 0);
    REQUIRE(run_cli("generate --seed 7 --volumes 10 --out " + q(b)).rc == 0);
    const json m = json::parse(binary::read_file(a / "manifest.json"));
    int total = 0;
    for (const auto& s : m.at("splits")) total += s.at("volumes").get<int>();
    CHECK(total == 10);
    std::size_t files = 0;
    for (const auto& e : fs::recursive_directory_iterator(a)) {
      if (!e.is_regular_file()) continue;
      ++files;
      const fs::path twin = b / fs::relative(e.path(), a);
      CHECK(binary::read_file(e.path()) == binary::read_file(twin));
    }
    CHECK(files == 4 + 10);
    CHECK(run_cli("generate --seed 8 --volumes 10 --out " + q(a)).rc == 2);
    CHECK(run_cli("generate --seed 8 --volumes 10 --out " + q(a) + " --force").rc == 0);
    CHECK(binary::read_file(a / "manifest.json") != binary::read_file(b / "manifest.json"));
    CHECK(run_cli("generate --seed 8 --volumes 2 --out " + q(scratch() / "gen_c")).rc == 2);
  }

  TEST_CASE("config precedence: flag over file over default") {
    const fs::path file = scratch() / "precedence.json";
    binary::write_file(file, R"({"learning_rate": 0.002, "graph_layers": 3})");
    const RunConfig defaults;
    for (int use_file = 0; use_file < 2; ++use_file) {
      for (int use_flag = 0; use_flag < 2; ++use_flag) {
        cli::TrainOptions opts;
        opts.data = "d";
        opts.out = "o";
        if (use_file) opts.config = file;
        if (use_flag) opts.overrides["learning_rate"] = "0.003";
        const RunConfig rc = cli::resolve_run_config(opts);
        const double want_lr = use_flag ? 0.003 : use_file ? 0.002 : defaults.train.learning_rate;
        CAPTURE(use_file);
        CAPTURE(use_flag);
        CHECK(rc.train.learning_rate == want_lr);
        CHECK(rc.model.graph.layers == (use_file ? 3 : defaults.model.graph.layers));
        CHECK(rc.train.epochs == 3);
      }
    }
  }

  TEST_CASE("config errors") {
    const fs::path unknown = scratch() / "unknown.json";
    binary::write_file(unknown, R"({"learning_rate": 0.002, "depth": 3})");
    CHECK_THROWS_WITH_AS(load_run_config(unknown), doctest::Contains("depth"), ConfigError);
    const fs::path broken = scratch() / "broken.json";
    binary::write_file(broken, "{\n  \"epochs\": 2,\n  \"seed\" 4\n}\n");
    CHECK_THROWS_WITH_AS(load_run_config(broken), doctest::Contains("line 3"), ConfigError);
    const fs::path typed = scratch() / "typed.json";
    binary::write_file(typed, R"({"epochs": "three"})");
    CHECK_THROWS_WITH_AS(load_run_config(typed), doctest::Contains("epochs"), ConfigError);
    RunConfig rc;
    CHECK_THROWS_AS(apply_overrides(rc, {{"variant", "mlp"}}), ConfigError);
    const Run r = run_cli("train --data x --out y --config " + q(unknown));
    CHECK(r.rc == 2);
    CHECK(r.err.find("depth") != std::string::npos);
  }

  TEST_CASE("train: loss log and byte-identical rerun") {
    Fixture fx;
    const fs::path again = scratch() / "again.ckpt";
    const Run r = run_cli("train --data " + q(fx.data) + " --out " + q(again) + " --epochs 1");
    REQUIRE(r.rc == 0);
    CHECK(count_of(r.out, "epoch ") == 1);
    CHECK(binary::read_file(again) == binary::read_file(fx.ckpt));
    const json log = json::parse(binary::read_file(scratch() / "model.ckpt.loss.json"));
    REQUIRE(log.at("epoch_loss").size() == 1);
    CHECK(std::isfinite(log.at("epoch_loss")[0].get<double>()));
  }

  TEST_CASE("evaluate: reports are deterministic and averaged by type") {
    Fixture fx;
    const fs::path p1 = scratch() / "eval1";
    const fs::path p2 = scratch() / "eval2";
    REQUIRE(run_cli("evaluate --data " + q(fx.data) + " --ckpt " + q(fx.ckpt) + " --out " + q(p1)).rc == 0);
    REQUIRE(run_cli("evaluate --data " + q(fx.data) + " --ckpt " + q(fx.ckpt) + " --out " + q(p2)).rc == 0);
    const std::string j1 = binary::read_file(p1.string() + ".json");
    CHECK(j1 == binary::read_file(p2.string() + ".json"));
    CHECK(binary::read_file(p1.string() + ".txt") == binary::read_file(p2.string() + ".txt"));
    const json rep = json::parse(j1);
    double sum = 0;
    for (const auto& [type, row] : rep.at("by_type").items()) sum += row.at("exact_match").get<double>();
    CHECK(rep.at("mean").at("exact_match").get<double>() ==
          doctest::Approx(sum / double(rep.at("by_type").size())).epsilon(1e-12));
  }

  TEST_CASE("evaluate: gold answers score 100 against themselves") {
    Fixture fx;
    const Dataset ds = load_dataset(fx.data);
    std::vector<EvalItem> items;
    for (const QAItem& item : ds.test.items) {
      items.push_back({std::string(to_string(item.type)), item.answer, item.answer});
    }
    const MetricReport rep = aggregate(items);
    CHECK(rep.mean.bleu == doctest::Approx(100.0).epsilon(1e-12));
    CHECK(rep.mean.rouge_l == 100.0);
    CHECK(rep.mean.exact_match == 100.0);
  }

  TEST_CASE("evaluate: checkpoint problems are format errors") {
    Fixture fx;
    const fs::path bad = scratch() / "bad.ckpt";
    binary::write_file(bad, "not a checkpoint");
    fs::copy_file(fx.ckpt.string() + ".json", bad.string() + ".json", fs::copy_options::overwrite_existing);
    CHECK(run_cli("evaluate --data " + q(fx.data) + " --ckpt " + q(bad)).rc == 3);
    CHECK(run_cli("evaluate --data " + q(fx.data) + " --ckpt " + q(fx.ckpt) + " --split val").rc == 2);
  }

  TEST_CASE("answer: matches evaluate, warns once per unknown word") {
    Fixture fx;
    const fs::path prefix = scratch() / "eval_answer";
    REQUIRE(run_cli("evaluate --data " + q(fx.data) + " --ckpt " + q(fx.ckpt) + " --out " + q(prefix)).rc == 0);
    const json first = json::parse(binary::read_file(prefix.string() + ".json")).at("predictions")[0];
    const fs::path volume = first_test_volume(fx.data);
    const Run r = run_cli("answer --ckpt " + q(fx.ckpt) + " --volume " + q(volume) + " --question '" +
                      first.at("question").get<std::string>() + "'");
    REQUIRE(r.rc == 0);
    CHECK(r.out == first.at("answer").get<std::string>() + "\n");
    CHECK(r.err.empty());

    const Run unk = run_cli("answer --ckpt " + q(fx.ckpt) + " --volume " + q(volume) +
                        " --question 'which zorp is zorp blarg'");
    CHECK(unk.rc == 0);
    CHECK(count_of(unk.err, "'zorp'") == 1);
    CHECK(count_of(unk.err, "'blarg'") == 1);
    CHECK(count_of(unk.err, "warning:") == 2);

    const Run topk = run_cli("answer --ckpt " + q(fx.ckpt) + " --volume " + q(volume) +
                         " --question 'which organ is shown' --top-k 3");
    CHECK(topk.rc == 0);
    CHECK(topk.out.find("step 1:") != std::string::npos);

    CHECK(run_cli("answer --ckpt " + q(fx.ckpt) + " --volume " + q(volume) + " --question ''").rc == 2);
    CHECK(run_cli("answer --ckpt " + q(fx.ckpt) + " --volume " + q(volume) + " --question '  '").rc == 2);
  }

  TEST_CASE("dump-attention: shapes, row sums, baseline refusal") {
    Fixture fx;
    const fs::path volume = first_test_volume(fx.data);
    const int n = load_volume(volume).num_slices();
    const fs::path out = scratch() / "trace.json";
    REQUIRE(run_cli("dump-attention --ckpt " + q(fx.ckpt) + " --volume " + q(volume) +
                " --question 'where is the lesion located in this image' --out " + q(out))
                .rc == 0);
    const json trace = json::parse(binary::read_file(out));
    CHECK(trace.at("slice_importance").size() == static_cast<std::size_t>(n));
    for (const auto& layer : trace.at("layers")) {
      for (const auto& row : layer) {
        double s = 0;
        for (const auto& w : row) s += w.get<double>();
        CHECK(std::abs(s - 1.0) <= 1e-9);
      }
    }
    const fs::path csv = scratch() / "trace.csv";
    REQUIRE(run_cli("dump-attention --ckpt " + q(fx.ckpt) + " --volume " + q(volume) +
                " --question 'which organ is shown' --out " + q(csv))
                .rc == 0);
    CHECK(binary::read_file(csv).rfind("layer,j,k,w\n", 0) == 0);

    const fs::path none = scratch() / "none.ckpt";
    REQUIRE(run_cli("train --data " + q(fx.data) + " --out " + q(none) + " --epochs 1 --variant none").rc == 0);
    const Run r = run_cli("dump-attention --ckpt " + q(none) + " --volume " + q(volume) +
                      " --question 'which organ is shown' --out " + q(scratch() / "none.json"));
    CHECK(r.rc == 2);
    CHECK(r.err.find("none") != std::string::npos);
  }

  TEST_CASE("worker count honours CTVQA_THREADS") {
    ::setenv("CTVQA_THREADS", "3", 1);
    CHECK(cli::worker_count() == 3);
    ::setenv("CTVQA_THREADS", "0", 1);
    CHECK(cli::worker_count() >= 1);
    ::unsetenv("CTVQA_THREADS");
    CHECK(cli::worker_count() >= 1);
  }

  TEST_CASE("parallel evaluation matches a single worker") {
    Fixture fx;
    const Dataset ds = load_dataset(fx.data);
    const Checkpoint ck = load_checkpoint(fx.ckpt);
    const auto one = cli::predict_split(ck.config, ck.params, ds.test, 1);
    const auto four = cli::predict_split(ck.config, ck.params, ds.test, 4);
    REQUIRE(one.size() == four.size());
    for (std::size_t i = 0; i < one.size(); ++i) CHECK(one[i].answer == four[i].answer);
  }
}
