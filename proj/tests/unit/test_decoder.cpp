#include <cmath>
#include <filesystem>
#include <map>
#include <set>
#include <cstring>
#include <limits>
#include <numbers>

#include "../support/oracles.hpp"
#include "ctvqa/data/binary_io.hpp"
#include "ctvqa/data/vocab.hpp"
#include "ctvqa/decoder/checkpoint.hpp"
#include "ctvqa/decoder/train.hpp"
#include "ctvqa/errors.hpp"
#include "ctvqa/model/transformer.hpp"
#include "doctest.h"

using namespace ctvqa;
namespace fs = std::filesystem;

namespace {

Tensor2 mat(Index r, Index c, std::initializer_list<double> v) {
  Tensor2 m(r, c);
  Index i = 0;
  for (double x : v) m.data()[i++] = x;
  return m;
}

DecoderConfig small_decoder() {
  DecoderConfig cfg;
  cfg.d_model = 4;
  cfg.n_layers = 2;
  cfg.n_heads = 2;
  cfg.d_ff = 8;
  cfg.vocab_size = 10;
  cfg.context_limit = 16;
  return cfg;
}

ParamStore decoder_params(const DecoderConfig& cfg, std::uint64_t seed) {
  ParamStore store;
  Rng rng(seed);
  add_decoder_params(store, cfg, 4, rng);
  return store;
}

Tensor2 forward(const ParamStore& store, const DecoderConfig& cfg, const Tensor2& prefix,
                const std::vector<int>& answer) {
  Tape tape;
  ParamBinding params(tape, store);
  return decoder_forward(params, cfg, tape.leaf(prefix), answer).value();
}

fs::path temp_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("ctvqa_decoder_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST_SUITE("decoder") {
  TEST_CASE("project_prompt examples") {
    Rng rng(1);
    const Tensor2 h = rng.normal_matrix(3, 2, 1.0);
    Tape tape;
    CHECK(project_prompt(tape.leaf(h), tape.leaf(Tensor2::Identity(2, 2)), tape.leaf(Tensor2::Zero(1, 2)))
              .value() == h);
    const Tensor2 b = mat(1, 2, {0.25, -1});
    const Tensor2 out =
        project_prompt(tape.leaf(h), tape.leaf(Tensor2::Zero(2, 2)), tape.leaf(b)).value();
    for (Index j = 0; j < 3; ++j) CHECK(out.row(j) == b);
    CHECK(project_prompt(tape.leaf(mat(1, 2, {1, 2})), tape.leaf(mat(2, 1, {1, 1})),
                         tape.leaf(mat(1, 1, {0.5})))
              .value()(0, 0) == 3.5);
    CHECK_THROWS_AS(project_prompt(tape.leaf(h), tape.leaf(Tensor2::Zero(3, 2)), tape.leaf(b)),
                    ShapeError);
  }

  TEST_CASE("assemble_prompt modes") {
    Rng rng(2);
    const int n = 2, m = 3;
    Tape tape;
    const Var o = tape.leaf(rng.normal_matrix(n + m, 4, 1.0));
    const Var e = tape.leaf(rng.normal_matrix(m, 4, 1.0));
    const Tensor2 both = assemble_prompt(o, e, n, m, PromptMode::kBoth).value();
    const Tensor2 vision = assemble_prompt(o, e, n, m, PromptMode::kVisionOnly).value();
    const Tensor2 text = assemble_prompt(o, e, n, m, PromptMode::kTextOnly).value();
    CHECK(both.rows() == 8);
    CHECK(vision.rows() == both.rows() - m);
    CHECK(text.rows() == both.rows() - n);
    // text_only is both with the slice rows removed.
    CHECK(text.topRows(m) == both.middleRows(n, m));
    CHECK(text.bottomRows(m) == both.bottomRows(m));
    CHECK(vision.topRows(n) == both.topRows(n));

    // Row multiset accounting: both plus one extra copy of the question
    // embeddings equals vision rows plus text rows.
    std::multiset<std::vector<double>> lhs, rhs;
    auto add_rows = [](std::multiset<std::vector<double>>& set, const Tensor2& t) {
      for (Index r = 0; r < t.rows(); ++r) set.insert(std::vector<double>(t.row(r).begin(), t.row(r).end()));
    };
    add_rows(lhs, both);
    add_rows(lhs, e.value());
    add_rows(rhs, vision);
    add_rows(rhs, text);
    CHECK(lhs == rhs);

    const Tensor2 swapped = assemble_prompt(o, e, n, m, PromptMode::kBoth, false).value();
    CHECK(swapped.topRows(m) == e.value());
    CHECK(swapped.bottomRows(n + m) == o.value());
    CHECK_THROWS_AS(parse_prompt_mode("image_only"), ConfigError);
  }

  TEST_CASE("decoder_forward emits logits from BOS on") {
    const DecoderConfig cfg = small_decoder();
    const ParamStore store = decoder_params(cfg, 3);
    Rng rng(4);
    const Tensor2 prefix = rng.normal_matrix(5, 4, 1.0);
    CHECK(forward(store, cfg, prefix, {}).rows() == 1);
    CHECK(forward(store, cfg, prefix, {4, 5, 6}).rows() == 4);
    CHECK(forward(store, cfg, prefix, {4}).cols() == 10);
  }

  TEST_CASE("decoder_forward is causal") {
    const DecoderConfig cfg = small_decoder();
    const ParamStore store = decoder_params(cfg, 5);
    Rng rng(6);
    const Tensor2 prefix = rng.normal_matrix(3, 4, 1.0);
    const Tensor2 a = forward(store, cfg, prefix, {4, 5, 6, 7});
    const Tensor2 b = forward(store, cfg, prefix, {4, 5, 9, 8});
    // Rows 0..2 see BOS, 4 and 5 only.
    CHECK(a.topRows(3) == b.topRows(3));
    CHECK(a.row(3) != b.row(3));
  }

  TEST_CASE("zero-init decoder blocks give head(embedding + position)") {
    const DecoderConfig cfg = small_decoder();
    ParamStore store = decoder_params(cfg, 7);
    for (Index l = 0; l < cfg.n_layers; ++l) zero_block_outputs(store, "decoder.block" + std::to_string(l));
    Rng rng(8);
    const Tensor2 prefix = rng.normal_matrix(2, 4, 1.0);
    const std::vector<int> answer{6, 7};
    const Tensor2 logits = forward(store, cfg, prefix, answer);
    const std::vector<int> ids{kBosId, 6, 7};
    for (Index t = 0; t < 3; ++t) {
      const Tensor2 x = store.at("decoder.embed").row(ids[static_cast<std::size_t>(t)]) +
                        store.at("decoder.pos").row(2 + t);
      const Tensor2 expected = x * store.at("decoder.head.w") + store.at("decoder.head.b");
      CHECK((logits.row(t) - expected).cwiseAbs().maxCoeff() < 1e-12);
    }
  }

  TEST_CASE("tied head reuses the embedding table") {
    DecoderConfig cfg = small_decoder();
    cfg.tie_head = true;
    ParamStore store = decoder_params(cfg, 9);
    CHECK_FALSE(store.contains("decoder.head.w"));
    for (Index l = 0; l < cfg.n_layers; ++l) zero_block_outputs(store, "decoder.block" + std::to_string(l));
    const Tensor2 logits = forward(store, cfg, Tensor2::Zero(1, 4), {});
    const Tensor2 x = store.at("decoder.embed").row(kBosId) + store.at("decoder.pos").row(1);
    CHECK((logits - x * store.at("decoder.embed").transpose()).cwiseAbs().maxCoeff() < 1e-12);
  }

  TEST_CASE("context overflow is an input error") {
    const DecoderConfig cfg = small_decoder();
    const ParamStore store = decoder_params(cfg, 10);
    CHECK_NOTHROW(forward(store, cfg, Tensor2::Zero(12, 4), {4, 4, 4}));
    CHECK_THROWS_AS(forward(store, cfg, Tensor2::Zero(13, 4), {4, 4, 4}), InputError);
  }

  TEST_CASE("cross-entropy examples") {
    Tape tape;
    const std::vector<int> gold{2};
    CHECK(cross_entropy(tape.leaf(Tensor2::Zero(1, 4)), gold).value()(0, 0) ==
          doctest::Approx(std::log(4.0)).epsilon(1e-15));
    Tensor2 confident = Tensor2::Zero(1, 4);
    confident(0, 2) = 20;
    CHECK(cross_entropy(tape.leaf(confident), gold).value()(0, 0) < 1e-3);
    // Row 0: two equal logits -> ln 2. Row 1: eight equal logits -> ln 8.
    Tensor2 two(2, 8);
    two.setConstant(-1e9);
    two(0, 0) = two(0, 1) = 0;
    two.row(1).setZero();
    const std::vector<int> targets{0, 5};
    CHECK(cross_entropy(tape.leaf(two), targets).value()(0, 0) ==
          doctest::Approx(std::log(4.0)).epsilon(1e-12));
  }

  TEST_CASE("answer_loss appends EOS, skips PAD and rejects bad ids") {
    Rng rng(11);
    Tape tape;
    const Tensor2 logits = rng.normal_matrix(3, 6, 1.0);
    const double full = answer_loss(tape.leaf(logits), std::vector<int>{4, 5}).value()(0, 0);
    const std::vector<int> eos_targets{4, 5, kEosId};
    CHECK(full == cross_entropy(tape.leaf(logits), eos_targets).value()(0, 0));
    const std::vector<int> with_pad{4, kPadId};
    const double padded = answer_loss(tape.leaf(logits), with_pad).value()(0, 0);
    const double expected = (-std::log(ctvqa::masked_row_softmax(logits, Tensor2::Ones(3, 6))(0, 4)) -
                             std::log(ctvqa::masked_row_softmax(logits, Tensor2::Ones(3, 6))(2, kEosId))) /
                            2.0;
    CHECK(padded == doctest::Approx(expected).epsilon(1e-12));
    CHECK_THROWS_AS(answer_loss(tape.leaf(logits), std::vector<int>{4, 6}), VocabularyError);
  }

  TEST_CASE("greedy decoding rules") {
    auto forced = [](std::vector<int> sequence) {
      return [sequence](std::span<const int> generated) {
        Tensor2 row = Tensor2::Zero(1, 10);
        row(0, sequence[generated.size()]) = 1.0;
        return row;
      };
    };
    CHECK(greedy_decode(forced({kEosId}), 5, kEosId).empty());
    CHECK(greedy_decode(forced({7, kEosId}), 5, kEosId) == std::vector<int>{7});
    CHECK(greedy_decode(forced({7, 8, 9, 4, 5, 6}), 3, kEosId) == std::vector<int>{7, 8, 9});
    Tensor2 tie = Tensor2::Zero(1, 10);
    tie(0, 3) = tie(0, 7) = 2.0;
    CHECK(argmax_lowest(tie) == 3);
    for (int i = 0; i < 10; ++i) {
      for (int j = i + 1; j < 10; ++j) {
        Tensor2 row = Tensor2::Zero(1, 10);
        row(0, i) = row(0, j) = 1.0;
        CHECK(argmax_lowest(row) == i);
      }
    }
  }

  TEST_CASE("end-to-end gradients match finite differences for every variant") {
    for (GraphVariant v :
         {GraphVariant::kAgcn, GraphVariant::kGcn, GraphVariant::kGat, GraphVariant::kNone}) {
      const ModelConfig cfg = oracle::tiny_model(v);
      const ParamStore params = init_params(cfg, 12);
      const auto ex = oracle::tiny_example(13);
      const TrainExample view{&ex.slices, &ex.question, &ex.answer};
      const LossGradient g = example_gradient(params, cfg, view);
      CHECK(g.loss == oracle::model_loss(params, cfg, ex));
      const auto r = oracle::finite_difference(params, cfg, ex, g.grads, 32, 1e-5, 14);
      INFO(to_string(v), " worst ", r.worst, " rel ", r.max_rel_error);
      CHECK(r.max_rel_error <= 1e-4);
    }
  }

  TEST_CASE("prompt positions produce no logits and no loss terms") {
    const ModelConfig cfg = oracle::tiny_model(GraphVariant::kAgcn);
    const ParamStore params = init_params(cfg, 15);
    const auto ex = oracle::tiny_example(16);
    Tape tape;
    const ParamBinding binding(tape, params);
    const PrefixPass pass = build_prefix(binding, cfg, ex.slices, ex.question);
    const Var logits = decoder_forward(binding, cfg.decoder, pass.prefix, ex.answer);
    CHECK(logits.rows() == static_cast<Index>(ex.answer.size()) + 1);
    const Var loss = answer_loss(logits, ex.answer);
    tape.backward(loss);
    // The loss touches the head only through the answer rows, so its head-bias
    // gradient is the mean of (softmax - onehot) over exactly those rows.
    const Tensor2 probs = ctvqa::masked_row_softmax(logits.value(), Tensor2::Ones(logits.rows(), logits.cols()));
    std::vector<int> targets = ex.answer;
    targets.push_back(kEosId);
    Tensor2 expected = Tensor2::Zero(1, logits.cols());
    for (Index t = 0; t < logits.rows(); ++t) {
      Tensor2 d = probs.row(t);
      d(0, targets[static_cast<std::size_t>(t)]) -= 1.0;
      expected += d / static_cast<double>(logits.rows());
    }
    CHECK((tape.grad(binding["decoder.head.b"]) - expected).cwiseAbs().maxCoeff() < 1e-12);
  }

  TEST_CASE("greedy answers are reproducible") {
    const ModelConfig cfg = oracle::tiny_model(GraphVariant::kAgcn);
    const ParamStore params = init_params(cfg, 17);
    const auto ex = oracle::tiny_example(18);
    const auto a = generate_answer(params, cfg, ex.slices, ex.question);
    CHECK(a == generate_answer(params, cfg, ex.slices, ex.question));
    CHECK(static_cast<int>(a.size()) <= cfg.max_answer_len);
    const auto steps = generate_answer_with_probs(params, cfg, ex.slices, ex.question, 3);
    std::vector<int> chosen;
    for (const auto& s : steps) {
      CHECK(s.top.size() == 3);
      CHECK(s.top[0].first == s.chosen);
      CHECK(s.top[0].second >= s.top[1].second);
      if (s.chosen != kEosId) chosen.push_back(s.chosen);
    }
    CHECK(chosen == a);
  }

  TEST_CASE("adamw: zero learning rate leaves parameters bit-identical") {
    const ModelConfig cfg = oracle::tiny_model(GraphVariant::kAgcn);
    const auto ex = oracle::tiny_example(19);
    const std::vector<TrainExample> data{{&ex.slices, &ex.question, &ex.answer}};
    for (double decay : {0.0, 0.01}) {
      ParamStore params = init_params(cfg, 20);
      const ParamStore before = params;
      TrainConfig tc;
      tc.learning_rate = 0.0;
      tc.weight_decay = decay;
      tc.epochs = 2;
      train(params, cfg, data, tc);
      CHECK(params == before);
    }
  }

  TEST_CASE("adamw step matches the hand formula") {
    ParamStore store;
    store.add("x", mat(1, 2, {1.0, -2.0}));
    TrainConfig tc;
    tc.learning_rate = 0.1;
    tc.weight_decay = 0.5;
    AdamW opt(store, tc);
    const std::vector<Tensor2> g1{mat(1, 2, {0.5, 0.25})};
    opt.step(store, g1);
    // Step 1: m_hat = g, v_hat = g^2, so the update is lr * (sign(g) + wd * x)
    // up to eps.
    for (int i = 0; i < 2; ++i) {
      const double x0 = i == 0 ? 1.0 : -2.0;
      const double g = g1[0](0, i);
      const double expected = x0 - 0.1 * (g / (std::abs(g) + 1e-8) + 0.5 * x0);
      CHECK(store.at("x")(0, i) == doctest::Approx(expected).epsilon(1e-14));
    }
    const Tensor2 x1 = store.at("x");
    const std::vector<Tensor2> g2{mat(1, 2, {-1.0, 0.25})};
    opt.step(store, g2);
    for (int i = 0; i < 2; ++i) {
      const double ga = g1[0](0, i), gb = g2[0](0, i);
      const double m = (0.9 * 0.1 * ga + 0.1 * gb) / (1 - 0.81);
      const double v = (0.999 * 0.001 * ga * ga + 0.001 * gb * gb) / (1 - 0.999 * 0.999);
      const double expected = x1(0, i) - 0.1 * (m / (std::sqrt(v) + 1e-8) + 0.5 * x1(0, i));
      CHECK(store.at("x")(0, i) == doctest::Approx(expected).epsilon(1e-13));
    }
  }

  TEST_CASE("single-example overfit") {
    const ModelConfig cfg = oracle::tiny_model(GraphVariant::kAgcn);
    const auto ex = oracle::tiny_example(21);
    const std::vector<TrainExample> data{{&ex.slices, &ex.question, &ex.answer}};
    ParamStore params = init_params(cfg, 22);
    const double initial = oracle::model_loss(params, cfg, ex);
    TrainConfig tc;
    tc.learning_rate = 1e-2;
    tc.epochs = 200;
    const TrainResult r = train(params, cfg, data, tc);
    CHECK(r.steps == 200);
    CHECK(r.epoch_loss.front() == doctest::Approx(initial).epsilon(1e-12));
    CHECK(oracle::model_loss(params, cfg, ex) < 0.1 * initial);
  }

  TEST_CASE("training is deterministic for a fixed seed") {
    const ModelConfig cfg = oracle::tiny_model(GraphVariant::kGat);
    std::vector<oracle::TinyExample> exs;
    for (int i = 0; i < 5; ++i) exs.push_back(oracle::tiny_example(30 + static_cast<std::uint64_t>(i)));
    std::vector<TrainExample> data;
    for (const auto& e : exs) data.push_back({&e.slices, &e.question, &e.answer});
    TrainConfig tc;
    tc.batch_size = 2;
    tc.epochs = 2;
    tc.seed = 4;
    ParamStore a = init_params(cfg, 23), b = init_params(cfg, 23);
    const TrainResult ra = train(a, cfg, data, tc);
    const TrainResult rb = train(b, cfg, data, tc);
    CHECK(a == b);
    CHECK(ra.epoch_loss == rb.epoch_loss);
    CHECK(ra.steps == 6);
    tc.seed = 5;
    ParamStore c = init_params(cfg, 23);
    train(c, cfg, data, tc);
    CHECK_FALSE(a == c);
  }

  TEST_CASE("non-finite loss aborts with diagnostics") {
    const ModelConfig cfg = oracle::tiny_model(GraphVariant::kAgcn);
    const auto ex = oracle::tiny_example(24);
    const std::vector<TrainExample> data{{&ex.slices, &ex.question, &ex.answer}};
    ParamStore params = init_params(cfg, 25);
    params.at("decoder.head.b")(0, 0) = std::numeric_limits<double>::infinity();
    try {
      train(params, cfg, data, TrainConfig{});
      FAIL("expected NumericError");
    } catch (const NumericError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("batch 0") != std::string::npos);
      CHECK(msg.find("max |grad|") != std::string::npos);
    }
  }

  TEST_CASE("train config validation") {
    TrainConfig tc;
    CHECK_NOTHROW(tc.validate());
    tc.batch_size = 0;
    CHECK_THROWS_AS(tc.validate(), ConfigError);
    tc = TrainConfig{};
    tc.epochs = 0;
    CHECK_NOTHROW(tc.validate());
    tc.epochs = -1;
    CHECK_THROWS_AS(tc.validate(), ConfigError);
    CHECK(TrainConfig{}.epochs == 3);
    CHECK(TrainConfig{}.batch_size == 16);
    CHECK(TrainConfig{}.learning_rate == 5e-4);
    CHECK(TrainConfig{}.weight_decay == 0.01);
  }

  TEST_CASE("checkpoint round trip") {
    const fs::path dir = temp_dir("roundtrip");
    const ModelConfig cfg = oracle::tiny_model(GraphVariant::kGat);
    const ParamStore params = init_params(cfg, 26);
    save_checkpoint(dir / "m.ckpt", params, cfg);
    CHECK(fs::exists(dir / "m.ckpt.json"));
    const Checkpoint ck = load_checkpoint(dir / "m.ckpt");
    CHECK(ck.params == params);
    CHECK(to_json(ck.config) == to_json(cfg));
    CHECK(binary::read_file(dir / "m.ckpt").rfind("CTVQ-CKPT", 0) == 0);
  }

  TEST_CASE("checkpoint byte layout") {
    ParamStore store;
    store.add("ab", mat(1, 2, {1.0, -0.5}));
    const std::string bytes = encode_checkpoint(store);
    // magic(9) + version(4) + count(4) + name len(4) + name(2) + rows(4) + cols(4) + 2 * 8
    CHECK(bytes.size() == 9 + 4 + 4 + 4 + 2 + 4 + 4 + 16);
    CHECK(static_cast<unsigned char>(bytes[9]) == 1);
    CHECK(bytes.substr(21, 2) == "ab");
    double first;
    std::memcpy(&first, bytes.data() + 31, 8);
    CHECK(first == 1.0);
    CHECK(decode_checkpoint(bytes, "mem") == store);
  }

  TEST_CASE("checkpoint decode errors") {
    ParamStore store;
    store.add("w", mat(2, 2, {1, 2, 3, 4}));
    const std::string bytes = encode_checkpoint(store);
    std::string bad = bytes;
    bad[0] = 'X';
    CHECK_THROWS_AS(decode_checkpoint(bad, "mem"), FormatError);
    bad = bytes;
    bad[9] = 2;
    CHECK_THROWS_WITH_AS(decode_checkpoint(bad, "mem"), doctest::Contains("version 2"), FormatError);
    CHECK_THROWS_AS(decode_checkpoint(bytes.substr(0, bytes.size() - 3), "mem"), FormatError);
    CHECK_THROWS_AS(decode_checkpoint(bytes + "z", "mem"), FormatError);
  }

  TEST_CASE("checkpoint and config mismatch is a format error") {
    const fs::path dir = temp_dir("mismatch");
    const ModelConfig cfg = oracle::tiny_model(GraphVariant::kAgcn);
    save_checkpoint(dir / "m.ckpt", init_params(cfg, 27), cfg);
    ModelConfig other = cfg;
    other.graph.d_graph = 6;
    binary::write_file(dir / "m.ckpt.json",
                       nlohmann::json{{"format_version", 1}, {"model", to_json(other)}}.dump());
    CHECK_THROWS_AS(load_checkpoint(dir / "m.ckpt"), FormatError);
    binary::write_file(dir / "m.ckpt.json",
                       nlohmann::json{{"format_version", 9}, {"model", to_json(cfg)}}.dump());
    CHECK_THROWS_AS(load_checkpoint(dir / "m.ckpt"), FormatError);
  }

  TEST_CASE("model config json rejects unknown keys") {
    nlohmann::json j = to_json(ModelConfig{});
    CHECK(to_json(model_config_from_json(j)) == j);
    j["graph"]["depth"] = 3;
    CHECK_THROWS_AS(model_config_from_json(j), ConfigError);
  }
}
