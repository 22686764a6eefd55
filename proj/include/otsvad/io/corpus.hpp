#pragma once

// Synthetic corpus: a speaker pool plus rendered conversations with
// reference RTTM and oracle VAD, and its on-disk layout
//   manifest.json
//   pool/spk<id>_<k>.wav
//   conversations/<id>.wav, <id>.rttm, <id>.vad

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "otsvad/audio/signal.hpp"
#include "otsvad/train/synthetic.hpp"
#include "otsvad/util/json_section.hpp"

namespace otsvad {

struct CorpusConfig {
  std::size_t pool_speakers = 4;
  std::size_t clips_per_speaker = 4;
  double clip_s = 20.0;
  std::size_t conversations = 30;
  std::size_t held_out = 6;
  std::size_t min_speakers = 2;
  std::size_t max_speakers = 4;
  ConversationConfig conversation{60.0};

  void validate() const {
    if (pool_speakers == 0 || pool_speakers > 8) throw ConfigError("data.pool_speakers: must lie in [1, 8]");
    if (clips_per_speaker == 0 || !(clip_s > 0)) throw ConfigError("data.clip_s: pool clips must be non-empty");
    if (conversations == 0) throw ConfigError("data.conversations: must be >= 1");
    if (held_out >= conversations) throw ConfigError("data.held_out: must leave at least one training conversation");
    if (min_speakers == 0 || min_speakers > max_speakers || max_speakers > pool_speakers)
      throw ConfigError("data.min_speakers/max_speakers: need 1 <= min <= max <= pool_speakers");
    if (!(conversation.duration_s > 1)) throw ConfigError("data.duration_s: must exceed 1 s");
    if (!(conversation.turn_min_s > 0 && conversation.turn_min_s <= conversation.turn_max_s))
      throw ConfigError("data.turn_min_s/turn_max_s: need 0 < min <= max");
  }
};

inline void to_json(nlohmann::json& j, const CorpusConfig& c) {
  const auto& v = c.conversation;
  j = {{"pool_speakers", c.pool_speakers}, {"clips_per_speaker", c.clips_per_speaker},
       {"clip_s", c.clip_s},               {"conversations", c.conversations},
       {"held_out", c.held_out},           {"min_speakers", c.min_speakers},
       {"max_speakers", c.max_speakers},   {"duration_s", v.duration_s},
       {"turn_min_s", v.turn_min_s},       {"turn_max_s", v.turn_max_s},
       {"pause_p", v.pause_p},             {"overlap_p", v.overlap_p},
       {"noise_rms", v.noise_rms}};
}

inline CorpusConfig read_corpus_config(JsonSection& s) {
  CorpusConfig c;
  s.get("pool_speakers", c.pool_speakers);
  s.get("clips_per_speaker", c.clips_per_speaker);
  s.get("clip_s", c.clip_s);
  s.get("conversations", c.conversations);
  s.get("held_out", c.held_out);
  s.get("min_speakers", c.min_speakers);
  s.get("max_speakers", c.max_speakers);
  s.get("duration_s", c.conversation.duration_s);
  s.get("turn_min_s", c.conversation.turn_min_s);
  s.get("turn_max_s", c.conversation.turn_max_s);
  s.get("pause_p", c.conversation.pause_p);
  s.get("overlap_p", c.conversation.overlap_p);
  s.get("noise_rms", c.conversation.noise_rms);
  c.validate();
  return c;
}

struct Corpus {
  SpeakerPool pool;
  std::vector<Conversation> train;
  std::vector<Conversation> held_out;
};

// Every random draw comes from one generator seeded with `seed`.
inline Corpus generate_corpus(const CorpusConfig& cfg, std::uint64_t seed, int sample_rate = 16000) {
  cfg.validate();
  Corpus c;
  c.pool = SpeakerPool(default_speakers(cfg.pool_speakers), cfg.clips_per_speaker, cfg.clip_s, seed, sample_rate);
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> count(cfg.min_speakers, cfg.max_speakers);
  for (std::size_t i = 0; i < cfg.conversations; ++i) {
    std::vector<int> ids(cfg.pool_speakers);
    std::iota(ids.begin(), ids.end(), 0);
    std::shuffle(ids.begin(), ids.end(), rng);
    ids.resize(count(rng));
    char name[32];
    std::snprintf(name, sizeof name, "conv%03zu", i);
    auto conv = render_conversation(cfg.conversation, ids, c.pool, name, rng);
    (i < cfg.conversations - cfg.held_out ? c.train : c.held_out).push_back(std::move(conv));
  }
  return c;
}

namespace detail {

inline void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream os(p, std::ios::binary);
  if (!os || !(os << text)) throw DataError("cannot write " + p.string());
}

inline std::string read_text(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  if (!is) throw DataError("cannot open " + p.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

inline std::string vad_text(const VadSegments& v) {
  std::string out;
  char buf[64];
  for (const auto& [a, b] : v.intervals()) {
    std::snprintf(buf, sizeof buf, "%.2f %.2f\n", a, b);
    out += buf;
  }
  return out;
}

}  // namespace detail

// Audio is stored as float32 so a reload reproduces the samples exactly.
inline void write_corpus(const std::string& dir, const Corpus& c) {
  namespace fs = std::filesystem;
  const fs::path root(dir);
  fs::create_directories(root / "pool");
  fs::create_directories(root / "conversations");
  nlohmann::json m;
  m["sample_rate"] = c.pool.sample_rate();
  m["pool"] = nlohmann::json::array();
  for (std::size_t id = 0; id < c.pool.num_speakers(); ++id) {
    const auto& clips = c.pool.clips()[id];
    m["pool"].push_back(clips.size());
    for (std::size_t k = 0; k < clips.size(); ++k)
      write_wav((root / "pool" / ("spk" + std::to_string(id) + "_" + std::to_string(k) + ".wav")).string(),
                AudioSignal::mono(clips[k], c.pool.sample_rate()), WavEncoding::kFloat32);
  }
  m["conversations"] = nlohmann::json::array();
  auto put = [&](const Conversation& conv, const char* split) {
    const auto base = root / "conversations" / conv.id;
    write_wav(base.string() + ".wav", conv.audio, WavEncoding::kFloat32);
    detail::write_text(base.string() + ".rttm", write_rttm(conv.reference));
    detail::write_text(base.string() + ".vad", detail::vad_text(conv.vad));
    m["conversations"].push_back(
        {{"id", conv.id}, {"split", split}, {"speakers", conv.speakers}, {"identities", conv.identities}});
  };
  for (const auto& conv : c.train) put(conv, "train");
  for (const auto& conv : c.held_out) put(conv, "held_out");
  detail::write_text(root / "manifest.json", m.dump(2) + "\n");
}

inline Corpus read_corpus(const std::string& dir) {
  namespace fs = std::filesystem;
  const fs::path root(dir);
  if (!fs::is_directory(root)) throw DataError("corpus directory does not exist: " + dir);
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(detail::read_text(root / "manifest.json"));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(dir + "/manifest.json: " + e.what());
  }
  Corpus c;
  try {
    const int sr = m.at("sample_rate").get<int>();
    std::vector<std::vector<std::vector<float>>> clips;
    for (std::size_t id = 0; id < m.at("pool").size(); ++id) {
      clips.emplace_back();
      for (std::size_t k = 0; k < m["pool"][id].get<std::size_t>(); ++k) {
        auto a = read_wav((root / "pool" / ("spk" + std::to_string(id) + "_" + std::to_string(k) + ".wav")).string());
        clips.back().push_back(std::move(a.channels.at(0)));
      }
    }
    c.pool = SpeakerPool::from_clips(std::move(clips), sr);
    for (const auto& e : m.at("conversations")) {
      Conversation conv;
      conv.id = e.at("id").get<std::string>();
      const auto base = (root / "conversations" / conv.id).string();
      conv.audio = read_wav(base + ".wav");
      conv.reference = parse_rttm(detail::read_text(base + ".rttm"));
      conv.vad = parse_vad(detail::read_text(base + ".vad"));
      conv.speakers = e.at("speakers").get<std::vector<std::string>>();
      conv.identities = e.at("identities").get<std::vector<int>>();
      const auto split = e.at("split").get<std::string>();
      if (split == "train")
        c.train.push_back(std::move(conv));
      else if (split == "held_out")
        c.held_out.push_back(std::move(conv));
      else
        throw DataError(dir + "/manifest.json: unknown split " + split);
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(dir + "/manifest.json: " + e.what());
  }
  return c;
}

}  // namespace otsvad
