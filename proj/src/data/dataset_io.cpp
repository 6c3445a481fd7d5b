#include <fstream>
#include <sstream>

#include "ctvqa/data/binary_io.hpp"
#include "ctvqa/data/synth.hpp"
#include "json.hpp"

namespace ctvqa {

namespace fs = std::filesystem;
using nlohmann::json;

namespace binary {

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_file(const fs::path& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("short write to " + path.string());
}

}  // namespace binary

namespace {

constexpr std::string_view kVolumeMagic = "CTVQVOL1";

json facts_to_json(const VolumeFacts& f) {
  return json{{"plane", f.plane},
              {"phase", f.phase},
              {"organ", f.organ},
              {"abnormality", f.abnormality},
              {"planted_slices", f.planted_slices},
              {"planted_quadrant", f.planted_quadrant}};
}

VolumeFacts facts_from_json(const json& j) {
  VolumeFacts f;
  f.plane = j.value("plane", "");
  f.phase = j.value("phase", "");
  f.organ = j.value("organ", "");
  f.abnormality = j.value("abnormality", "");
  f.planted_slices = j.value("planted_slices", std::vector<int>{});
  f.planted_quadrant = j.value("planted_quadrant", "");
  return f;
}

json qa_to_json(const QAItem& q) {
  return json{{"volume_id", q.volume_id},
              {"question", q.question},
              {"answer", q.answer},
              {"question_type", std::string(to_string(q.type))}};
}

}  // namespace

void write_volume(const fs::path& path, const Volume& volume) {
  std::string out(kVolumeMagic);
  const auto n = static_cast<std::uint32_t>(volume.slices.size());
  const auto h = static_cast<std::uint32_t>(n ? volume.slices[0].rows() : 0);
  const auto w = static_cast<std::uint32_t>(n ? volume.slices[0].cols() : 0);
  binary::put_le(out, n);
  binary::put_le(out, h);
  binary::put_le(out, w);
  for (const Tensor2& s : volume.slices) {
    if (s.rows() != h || s.cols() != w) throw ShapeError("write_volume: ragged slice sizes");
    for (Index i = 0; i < s.size(); ++i) binary::put_le(out, static_cast<float>(s.data()[i]));
  }
  const std::string facts = facts_to_json(volume.facts).dump();
  binary::put_le(out, static_cast<std::uint32_t>(facts.size()));
  out += facts;
  binary::write_file(path, out);
}

Volume load_volume(const fs::path& path) {
  const std::string data = binary::read_file(path);
  binary::Reader in(data, path.string());
  const auto magic = in.bytes(kVolumeMagic.size(), "magic");
  if (magic != kVolumeMagic) {
    throw FormatError(path.string() + ": bad magic at offset 0 (expected CTVQVOL1)");
  }
  const auto n = in.get_le<std::uint32_t>("slice count");
  const auto h = in.get_le<std::uint32_t>("height");
  const auto w = in.get_le<std::uint32_t>("width");
  in.require(std::size_t{n} * h * w * sizeof(float), "pixel data");
  Volume vol;
  vol.id = path.stem().string();
  for (std::uint32_t s = 0; s < n; ++s) {
    Tensor2 img(h, w);
    for (Index i = 0; i < img.size(); ++i) img.data()[i] = in.get_le<float>("pixel");
    vol.slices.push_back(std::move(img));
  }
  const auto len = in.get_le<std::uint32_t>("facts length");
  const auto blob = in.bytes(len, "facts");
  try {
    vol.facts = facts_from_json(json::parse(blob));
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": facts blob at offset " +
                      std::to_string(in.offset() - len) + " is not valid JSON: " + e.what());
  }
  return vol;
}

void write_dataset(const fs::path& dir, const Dataset& ds) {
  fs::create_directories(dir / "volumes");
  const DatasetManifest m = make_manifest(ds);
  json jm{{"format_version", m.format_version},
          {"generator_seed", m.generator_seed},
          {"config",
           {{"train_volumes", ds.config.train_volumes},
            {"dev_volumes", ds.config.dev_volumes},
            {"test_volumes", ds.config.test_volumes},
            {"min_slices", ds.config.min_slices},
            {"max_slices", ds.config.max_slices},
            {"height", ds.config.height},
            {"width", ds.config.width},
            {"lesion_contrast", ds.config.lesion_contrast}}}};
  jm["splits"] = json::array();
  for (const SplitManifest& s : m.splits) {
    json counts;
    for (QuestionType t : kQuestionTypes) {
      counts[std::string(to_string(t))] = s.counts[static_cast<std::size_t>(t)];
    }
    jm["splits"].push_back({{"split", s.split}, {"volumes", s.volumes}, {"counts", counts}});
  }
  binary::write_file(dir / "manifest.json", jm.dump(2) + "\n");
  for (const char* name : {"train", "dev", "test"}) {
    const SplitData& split = ds.split(name);
    std::string lines;
    for (const QAItem& q : split.items) lines += qa_to_json(q).dump() + "\n";
    binary::write_file(dir / (std::string(name) + ".jsonl"), lines);
    for (const Volume& v : split.volumes) write_volume(dir / "volumes" / (v.id + ".ctv"), v);
  }
}

Dataset load_dataset(const fs::path& dir) {
  const fs::path manifest_path = dir / "manifest.json";
  json jm;
  try {
    jm = json::parse(binary::read_file(manifest_path));
  } catch (const json::exception& e) {
    throw FormatError(manifest_path.string() + ": " + e.what());
  }
  if (jm.value("format_version", 0u) != kDatasetFormatVersion) {
    throw FormatError(manifest_path.string() + ": unsupported format_version " +
                      jm.value("format_version", json(0)).dump());
  }
  Dataset ds;
  ds.seed = jm.value("generator_seed", std::uint64_t{0});
  if (jm.contains("config")) {
    const json& c = jm["config"];
    ds.config.train_volumes = c.value("train_volumes", ds.config.train_volumes);
    ds.config.dev_volumes = c.value("dev_volumes", ds.config.dev_volumes);
    ds.config.test_volumes = c.value("test_volumes", ds.config.test_volumes);
    ds.config.min_slices = c.value("min_slices", ds.config.min_slices);
    ds.config.max_slices = c.value("max_slices", ds.config.max_slices);
    ds.config.height = c.value("height", ds.config.height);
    ds.config.width = c.value("width", ds.config.width);
    ds.config.lesion_contrast = c.value("lesion_contrast", ds.config.lesion_contrast);
  }
  const Vocabulary& vocab = Vocabulary::standard();
  for (const json& js : jm.at("splits")) {
    const std::string name = js.at("split");
    SplitData& split = name == "train" ? ds.train : name == "dev" ? ds.dev : ds.test;
    if (name != "train" && name != "dev" && name != "test") {
      throw FormatError(manifest_path.string() + ": unknown split " + name);
    }
    std::ifstream in(dir / (name + ".jsonl"));
    if (!in) throw FormatError("missing " + (dir / (name + ".jsonl")).string());
    std::string line;
    std::size_t line_no = 0;
    std::vector<std::string> volume_order;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      QAItem q;
      try {
        const json r = json::parse(line);
        q.volume_id = r.at("volume_id");
        q.question = r.at("question");
        q.answer = r.at("answer");
        q.type = parse_question_type(r.at("question_type").get<std::string>());
      } catch (const std::exception& e) {
        throw FormatError(name + ".jsonl line " + std::to_string(line_no) + ": " + e.what());
      }
      q.question_ids = vocab.encode(q.question);
      q.answer_ids = vocab.encode(q.answer);
      if (volume_order.empty() || volume_order.back() != q.volume_id) {
        bool seen = false;
        for (const auto& id : volume_order) seen = seen || id == q.volume_id;
        if (!seen) volume_order.push_back(q.volume_id);
      }
      split.items.push_back(std::move(q));
    }
    for (const std::string& id : volume_order) {
      split.volumes.push_back(load_volume(dir / "volumes" / (id + ".ctv")));
    }
    // Recount against the manifest.
    std::array<int, 5> counts{};
    for (const QAItem& q : split.items) ++counts[static_cast<std::size_t>(q.type)];
    const int declared_volumes = js.at("volumes");
    if (declared_volumes != static_cast<int>(split.volumes.size())) {
      throw FormatError(manifest_path.string() + ": split " + name + " declares " +
                        std::to_string(declared_volumes) + " volumes but records reference " +
                        std::to_string(split.volumes.size()));
    }
    for (QuestionType t : kQuestionTypes) {
      const int declared = js.at("counts").value(std::string(to_string(t)), 0);
      if (declared != counts[static_cast<std::size_t>(t)]) {
        throw FormatError(manifest_path.string() + ": split " + name + " declares " +
                          std::to_string(declared) + " " + std::string(to_string(t)) +
                          " questions, found " + std::to_string(counts[static_cast<std::size_t>(t)]));
      }
    }
  }
  return ds;
}

}  // namespace ctvqa
