#include "ctvqa/data/synth.hpp"

#include <cmath>
#include <cstdio>

#include "ctvqa/errors.hpp"
#include "ctvqa/numerics/random.hpp"

namespace ctvqa {

namespace {

constexpr std::array<std::string_view, 3> kPlanes = {"axial", "coronal", "sagittal"};
constexpr std::array<std::string_view, 4> kPhases = {"non contrast", "arterial phase",
                                                     "portal venous phase", "delayed phase"};
constexpr std::array<double, 4> kPhaseLevels = {0.05, 0.15, 0.25, 0.35};
constexpr std::array<std::string_view, 4> kOrgans = {"liver", "kidney", "lung", "spleen"};
constexpr std::array<std::string_view, 4> kQuadrants = {"upper left", "upper right", "lower left",
                                                        "lower right"};

constexpr double kPlaneAmplitude = 0.15;
constexpr double kOrganAmplitude = 0.10;
constexpr double kNoiseAmplitude = 0.03;

using Templates = std::array<std::string_view, 2>;
constexpr std::array<Templates, 5> kTemplates = {{
    {"in which plane is this ct scan", "what is the scanning plane of this image"},
    {"what is the contrast phase of this ct scan", "in which phase was this image acquired"},
    {"which organ is shown in this image", "what organ does this ct scan show"},
    {"what abnormality is seen in this scan", "what type of lesion is present in this image"},
    {"in which quadrant is the abnormality located", "where is the lesion located in this image"},
}};

double plane_term(int plane, int r, int c, int h, int w) {
  switch (plane) {
    case 0: return kPlaneAmplitude * c / (w - 1);
    case 1: return kPlaneAmplitude * r / (h - 1);
    default: {
      const double mid = (w - 1) / 2.0;
      return kPlaneAmplitude * std::abs(c - mid) / mid;
    }
  }
}

double organ_term(int organ, int r, int c) {
  bool on = false;
  switch (organ) {
    case 0: on = (r / 2) % 2 == 0; break;
    case 1: on = (c / 2) % 2 == 0; break;
    case 2: on = (r + c) % 2 == 0; break;
    default: on = ((r + c) / 2) % 2 == 0; break;
  }
  return on ? kOrganAmplitude : 0.0;
}

/// Bilinear interpolation of a 3x3 grid of uniform draws.
Tensor2 smooth_noise(Rng& rng, int h, int w) {
  double grid[3][3];
  for (auto& row : grid)
    for (double& v : row) v = rng.uniform(-kNoiseAmplitude, kNoiseAmplitude);
  Tensor2 out(h, w);
  for (int r = 0; r < h; ++r) {
    const double y = 2.0 * r / (h - 1);
    const int y0 = std::min(static_cast<int>(y), 1);
    const double fy = y - y0;
    for (int c = 0; c < w; ++c) {
      const double x = 2.0 * c / (w - 1);
      const int x0 = std::min(static_cast<int>(x), 1);
      const double fx = x - x0;
      out(r, c) = (1 - fy) * ((1 - fx) * grid[y0][x0] + fx * grid[y0][x0 + 1]) +
                  fy * ((1 - fx) * grid[y0 + 1][x0] + fx * grid[y0 + 1][x0 + 1]);
    }
  }
  return out;
}

std::string answer_for(QuestionType type, const VolumeFacts& f) {
  auto need = [](const std::string& v, const char* what) {
    if (v.empty()) throw InputError(std::string("generate_questions: missing fact ") + what);
    return v;
  };
  switch (type) {
    case QuestionType::kPlane: return need(f.plane, "plane");
    case QuestionType::kPhase: return need(f.phase, "phase");
    case QuestionType::kOrgan: return need(f.organ, "organ");
    case QuestionType::kAbnormality: return need(f.abnormality, "abnormality");
    case QuestionType::kLocation:
      if (need(f.abnormality, "abnormality") == archetype_answer(Archetype::kNone)) {
        return "not applicable";
      }
      return need(f.planted_quadrant, "planted_quadrant");
  }
  return {};
}

}  // namespace

std::string_view to_string(QuestionType t) {
  switch (t) {
    case QuestionType::kPlane: return "plane";
    case QuestionType::kPhase: return "phase";
    case QuestionType::kOrgan: return "organ";
    case QuestionType::kAbnormality: return "abnormality";
    case QuestionType::kLocation: return "location";
  }
  return "unknown";
}

QuestionType parse_question_type(std::string_view name) {
  for (QuestionType t : kQuestionTypes)
    if (to_string(t) == name) return t;
  throw InputError("unknown question type '" + std::string(name) + "'");
}

std::string_view archetype_answer(Archetype a) {
  switch (a) {
    case Archetype::kDisk: return "lesion-a";
    case Archetype::kCross: return "lesion-b";
    case Archetype::kRing: return "lesion-c";
    case Archetype::kNone: return "no abnormality";
  }
  return "";
}

std::vector<std::pair<int, int>> lesion_pixels(Archetype a, int center_row, int center_col) {
  std::vector<std::pair<int, int>> px;
  for (int dr = -3; dr <= 3; ++dr) {
    for (int dc = -3; dc <= 3; ++dc) {
      const int d2 = dr * dr + dc * dc;
      bool on = false;
      switch (a) {
        case Archetype::kDisk: on = d2 <= 10; break;
        case Archetype::kCross: on = std::abs(dr) <= 1 || std::abs(dc) <= 1; break;
        case Archetype::kRing: on = d2 >= 5 && d2 <= 18; break;
        case Archetype::kNone: break;
      }
      if (on) px.emplace_back(center_row + dr, center_col + dc);
    }
  }
  return px;
}

Volume generate_volume(std::uint64_t seed, const SynthConfig& cfg, std::string id) {
  if (cfg.height < 8 || cfg.width < 8 || cfg.height % 2 || cfg.width % 2 || cfg.min_slices < 1 ||
      cfg.max_slices < cfg.min_slices) {
    throw ConfigError("generate_volume: invalid synthetic volume configuration");
  }
  Rng rng(seed);
  const int n = rng.between(cfg.min_slices, cfg.max_slices);
  const int plane = static_cast<int>(rng.below(kPlanes.size()));
  const int phase = static_cast<int>(rng.below(kPhases.size()));
  const int organ = static_cast<int>(rng.below(kOrgans.size()));
  const auto archetype = static_cast<Archetype>(rng.below(4));
  const int quadrant = static_cast<int>(rng.below(kQuadrants.size()));
  const int run = std::max(1, n / 2);
  const int start = rng.between(0, n - run);
  const int half_h = cfg.height / 2, half_w = cfg.width / 2;
  const int center_row = (quadrant / 2) * half_h + rng.between(half_h / 2 - 1, half_h / 2);
  const int center_col = (quadrant % 2) * half_w + rng.between(half_w / 2 - 1, half_w / 2);

  Volume vol;
  vol.id = std::move(id);
  vol.facts.plane = kPlanes[static_cast<std::size_t>(plane)];
  vol.facts.phase = kPhases[static_cast<std::size_t>(phase)];
  vol.facts.organ = kOrgans[static_cast<std::size_t>(organ)];
  vol.facts.abnormality = archetype_answer(archetype);
  vol.facts.planted_quadrant = kQuadrants[static_cast<std::size_t>(quadrant)];
  for (int s = start; s < start + run; ++s) vol.facts.planted_slices.push_back(s);

  const auto stamp = lesion_pixels(archetype, center_row, center_col);
  for (int s = 0; s < n; ++s) {
    Tensor2 img = smooth_noise(rng, cfg.height, cfg.width);
    for (int r = 0; r < cfg.height; ++r) {
      for (int c = 0; c < cfg.width; ++c) {
        img(r, c) += kPhaseLevels[static_cast<std::size_t>(phase)] +
                     plane_term(plane, r, c, cfg.height, cfg.width) + organ_term(organ, r, c);
      }
    }
    if (s >= start && s < start + run) {
      for (const auto& [r, c] : stamp) img(r, c) += cfg.lesion_contrast;
    }
    for (Index i = 0; i < img.size(); ++i) {
      img.data()[i] = static_cast<double>(static_cast<float>(std::clamp(img.data()[i], 0.0, 1.0)));
    }
    vol.slices.push_back(std::move(img));
  }
  return vol;
}

std::vector<QAItem> generate_questions(const Volume& volume, std::uint64_t seed) {
  const Vocabulary& vocab = Vocabulary::standard();
  Rng rng(seed);
  std::vector<QAItem> items;
  for (QuestionType t : kQuestionTypes) {
    const auto& tpl = kTemplates[static_cast<std::size_t>(t)];
    QAItem item;
    item.volume_id = volume.id;
    item.type = t;
    item.question = std::string(tpl[rng.below(tpl.size())]);
    item.answer = answer_for(t, volume.facts);
    item.question_ids = vocab.encode(item.question);
    item.answer_ids = vocab.encode(item.answer);
    items.push_back(std::move(item));
  }
  return items;
}

const Volume& SplitData::volume(std::string_view id) const {
  for (const Volume& v : volumes)
    if (v.id == id) return v;
  throw InputError("unknown volume id '" + std::string(id) + "'");
}

const SplitData& Dataset::split(std::string_view name) const {
  if (name == "train") return train;
  if (name == "dev") return dev;
  if (name == "test") return test;
  throw InputError("unknown split '" + std::string(name) + "' (expected train|dev|test)");
}

Dataset generate_dataset(std::uint64_t master_seed, const SynthConfig& cfg) {
  Dataset ds;
  ds.seed = master_seed;
  ds.config = cfg;
  std::uint64_t index = 0;
  auto fill = [&](SplitData& split, int count) {
    for (int i = 0; i < count; ++i, ++index) {
      char id[32];
      std::snprintf(id, sizeof id, "vol_%06llu", static_cast<unsigned long long>(index));
      const std::uint64_t vseed = mix_seed(master_seed, index);
      Volume v = generate_volume(vseed, cfg, id);
      auto qa = generate_questions(v, mix_seed(vseed, 1));
      split.items.insert(split.items.end(), qa.begin(), qa.end());
      split.volumes.push_back(std::move(v));
    }
  };
  fill(ds.train, cfg.train_volumes);
  fill(ds.dev, cfg.dev_volumes);
  fill(ds.test, cfg.test_volumes);
  return ds;
}

DatasetManifest make_manifest(const Dataset& ds) {
  DatasetManifest m;
  m.generator_seed = ds.seed;
  for (const char* name : {"train", "dev", "test"}) {
    const SplitData& s = ds.split(name);
    SplitManifest sm{name, static_cast<int>(s.volumes.size()), {}};
    for (const QAItem& q : s.items) ++sm.counts[static_cast<std::size_t>(q.type)];
    m.splits.push_back(sm);
  }
  return m;
}

}  // namespace ctvqa
