#include "ctvqa/cli/commands.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <ostream>
#include <thread>

#include "ctvqa/data/binary_io.hpp"
#include "ctvqa/data/vocab.hpp"
#include "ctvqa/decoder/checkpoint.hpp"
#include "ctvqa/errors.hpp"

namespace ctvqa::cli {

namespace fs = std::filesystem;
using nlohmann::json;

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const NumericError*>(&e)) return kExitNumeric;
  if (dynamic_cast<const FormatError*>(&e) || dynamic_cast<const fs::filesystem_error*>(&e)) {
    return kExitData;
  }
  if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const InputError*>(&e) ||
      dynamic_cast<const VocabularyError*>(&e)) {
    return kExitUsage;
  }
  return kExitData;
}

SynthConfig synth_config_for(int volumes) {
  if (volumes < 3) throw ConfigError("--volumes must be at least 3 (one per split)");
  SynthConfig cfg;
  const int held_out = std::max(1, static_cast<int>(std::lround(volumes / 12.0)));
  cfg.dev_volumes = held_out;
  cfg.test_volumes = held_out;
  cfg.train_volumes = volumes - 2 * held_out;
  return cfg;
}

Dataset run_generate(const GenerateOptions& opts, std::ostream& log) {
  if (opts.out.empty()) throw ConfigError("generate: --out is required");
  if (fs::exists(opts.out)) {
    if (!fs::is_directory(opts.out)) {
      throw ConfigError("generate: " + opts.out.string() + " exists and is not a directory");
    }
    if (!fs::is_empty(opts.out)) {
      if (!opts.force) {
        throw ConfigError("generate: refusing to write into non-empty directory " +
                          opts.out.string() + " (pass --force to replace it)");
      }
      for (const auto& entry : fs::directory_iterator(opts.out)) fs::remove_all(entry.path());
    }
  }
  const SynthConfig cfg = opts.volumes ? synth_config_for(*opts.volumes) : SynthConfig{};
  Dataset ds = generate_dataset(opts.seed, cfg);
  write_dataset(opts.out, ds);
  log << "wrote " << ds.train.volumes.size() << "/" << ds.dev.volumes.size() << "/"
      << ds.test.volumes.size() << " train/dev/test volumes ("
      << ds.train.items.size() + ds.dev.items.size() + ds.test.items.size() << " questions) to "
      << opts.out.string() << "\n";
  return ds;
}

RunConfig resolve_run_config(const TrainOptions& opts) {
  RunConfig cfg;
  if (opts.config) cfg = load_run_config(*opts.config, cfg);
  cfg = apply_overrides(std::move(cfg), opts.overrides);
  if (!opts.data.empty()) cfg.data = opts.data.string();
  if (!opts.out.empty()) cfg.out = opts.out.string();
  finalize(cfg);
  return cfg;
}

TrainResult run_train(const TrainOptions& opts, std::ostream& log) {
  const RunConfig cfg = resolve_run_config(opts);
  if (cfg.data.empty()) throw ConfigError("train: --data is required");
  if (cfg.out.empty()) throw ConfigError("train: --out is required");
  const Dataset ds = load_dataset(cfg.data);
  if (ds.train.items.empty()) throw InputError("train: the train split is empty");

  std::vector<TrainExample> examples;
  examples.reserve(ds.train.items.size());
  for (const QAItem& q : ds.train.items) {
    examples.push_back({&ds.train.volume(q.volume_id).slices, &q.question_ids, &q.answer_ids});
  }
  ParamStore params = init_params(cfg.model, cfg.seed);
  const TrainResult result =
      train(params, cfg.model, examples, cfg.train, [&](int epoch, double loss) {
        char line[96];
        std::snprintf(line, sizeof line, "epoch %d loss %.6f\n", epoch + 1, loss);
        log << line << std::flush;
      });

  const fs::path out(cfg.out);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  save_checkpoint(out, params, cfg.model);
  fs::path loss_path = out;
  loss_path += ".loss.json";
  const json loss{{"epoch_loss", result.epoch_loss}, {"steps", result.steps},
                  {"config", cfg.to_json()}};
  binary::write_file(loss_path, loss.dump(2) + "\n");
  log << "wrote " << out.string() << "\n";
  return result;
}

int worker_count() {
  int n = static_cast<int>(std::thread::hardware_concurrency());
  if (const char* env = std::getenv("CTVQA_THREADS")) {
    try {
      n = std::stoi(env);
    } catch (const std::exception&) {
      throw ConfigError(std::string("CTVQA_THREADS: not an integer: '") + env + "'");
    }
  }
  return std::max(1, n);
}

std::vector<Prediction> predict_split(const ModelConfig& cfg, const ParamStore& params,
                                      const SplitData& split, int workers) {
  const Vocabulary& vocab = Vocabulary::standard();
  std::vector<Prediction> out(split.items.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::atomic<bool> failed{false};
  auto work = [&] {
    for (std::size_t i = next++; i < out.size() && !failed; i = next++) {
      try {
        const QAItem& q = split.items[i];
        const auto ids = generate_answer(params, cfg, split.volume(q.volume_id).slices,
                                         q.question_ids);
        out[i] = {std::string(to_string(q.type)), q.question, q.answer, vocab.decode(ids)};
      } catch (...) {
        if (!failed.exchange(true)) failure = std::current_exception();
      }
    }
  };
  const int n = std::clamp<int>(workers, 1, static_cast<int>(std::max<std::size_t>(1, out.size())));
  std::vector<std::thread> pool;
  for (int w = 1; w < n; ++w) pool.emplace_back(work);
  work();
  for (std::thread& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
  return out;
}

MetricReport run_evaluate(const EvaluateOptions& opts, std::ostream& log) {
  const Checkpoint ck = load_checkpoint(opts.ckpt);
  const Dataset ds = load_dataset(opts.data);
  if (opts.split != "train" && opts.split != "dev" && opts.split != "test") {
    throw ConfigError("evaluate: unknown split '" + opts.split + "' (expected train|dev|test)");
  }
  const SplitData& split = ds.split(opts.split);
  const auto predictions = predict_split(ck.config, ck.params, split, worker_count());

  std::vector<EvalItem> items;
  items.reserve(predictions.size());
  json answers = json::array();
  for (const Prediction& p : predictions) {
    items.push_back({p.question_type, p.answer, p.reference});
    answers.push_back({{"question_type", p.question_type},
                       {"question", p.question},
                       {"reference", p.reference},
                       {"answer", p.answer}});
  }
  const MetricReport report = aggregate(items);

  fs::path prefix = opts.out_prefix.value_or(fs::path(opts.ckpt.string() + "." + opts.split));
  if (prefix.has_parent_path()) fs::create_directories(prefix.parent_path());
  json j = report.to_json();
  j["split"] = opts.split;
  j["predictions"] = answers;
  binary::write_file(fs::path(prefix.string() + ".json"), j.dump(2) + "\n");
  const std::string table = report.to_table();
  binary::write_file(fs::path(prefix.string() + ".txt"), table);
  log << table;
  return report;
}

namespace {

struct Query {
  Checkpoint ck;
  Volume volume;
  std::vector<int> question;
};

Query prepare_query(const fs::path& ckpt, const fs::path& volume, const std::string& question,
                    std::ostream& warn) {
  if (normalize_text(question).empty()) throw InputError("the question is empty");
  Query q{load_checkpoint(ckpt), load_volume(volume), {}};
  std::vector<std::string> unknown;
  q.question = Vocabulary::standard().encode(question, &unknown);
  for (const std::string& w : unknown) {
    warn << "warning: unknown word '" << w << "' mapped to <unk>\n";
  }
  return q;
}

}  // namespace

std::string run_answer(const AnswerOptions& opts, std::ostream& out, std::ostream& warn) {
  if (opts.top_k < 0) throw ConfigError("--top-k must be >= 0");
  const Query q = prepare_query(opts.ckpt, opts.volume, opts.question, warn);
  const Vocabulary& vocab = Vocabulary::standard();
  std::vector<int> ids;
  if (opts.top_k == 0) {
    ids = generate_answer(q.ck.params, q.ck.config, q.volume.slices, q.question);
  } else {
    const auto steps =
        generate_answer_with_probs(q.ck.params, q.ck.config, q.volume.slices, q.question, opts.top_k);
    for (std::size_t s = 0; s < steps.size(); ++s) {
      out << "step " << s + 1 << ":";
      for (const auto& [id, p] : steps[s].top) {
        char buf[64];
        std::snprintf(buf, sizeof buf, " %.4f", p);
        out << " " << vocab.word(id) << buf;
      }
      out << "\n";
      if (steps[s].chosen != kEosId) ids.push_back(steps[s].chosen);
    }
  }
  const std::string answer = vocab.decode(ids);
  out << answer << "\n";
  return answer;
}

AttentionTrace run_dump_attention(const DumpAttentionOptions& opts, std::ostream& warn) {
  std::string format = opts.format;
  if (format.empty()) format = opts.out.extension() == ".csv" ? "csv" : "json";
  if (format != "json" && format != "csv") {
    throw ConfigError("dump-attention: unknown format '" + format + "' (expected json|csv)");
  }
  const Query q = prepare_query(opts.ckpt, opts.volume, opts.question, warn);
  if (q.ck.config.graph.variant == GraphVariant::kNone) {
    throw ConfigError(
        "dump-attention: this checkpoint uses variant=none, which has no graph and therefore no "
        "attention to export");
  }
  AttentionTrace trace = attention_trace(q.ck.params, q.ck.config, q.volume.slices, q.question);
  if (opts.out.has_parent_path()) fs::create_directories(opts.out.parent_path());
  binary::write_file(opts.out, format == "csv" ? trace.to_csv() : trace.to_json());
  return trace;
}

}  // namespace ctvqa::cli
