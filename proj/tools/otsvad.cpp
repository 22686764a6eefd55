// otsvad: train, infer, simulate, score, bench-rtf, tune-thresholds.
// Exit codes: 0 success, 2 config error, 3 data error, 4 numeric error.

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "otsvad/bench.hpp"
#include "otsvad/config.hpp"

using namespace otsvad;
namespace fs = std::filesystem;

namespace {

struct Flags {
  std::string config, audio, vad, checkpoint, strategy, out, ref, hyp, corpus;
  std::optional<double> block_length_s, block_shift_s, thres_upper, thres_lower, collar_s;
  std::optional<std::uint64_t> seed;
  int sample_rate = 0;
  bool realtime = false;
};

RunConfig effective(const Flags& f) {
  nlohmann::json j = nlohmann::json::object();
  if (!f.config.empty()) {
    std::ifstream is(f.config);
    if (!is) throw ConfigError("--config: cannot open " + f.config);
    try {
      j = nlohmann::json::parse(is);
    } catch (const nlohmann::json::parse_error& e) {
      throw ConfigError(f.config + ": " + e.what());
    }
  }
  // Flags override the file, and the result goes through the same strict
  // reader so flag values are validated like file values.
  auto& s = j["stream"];
  if (s.is_null()) s = nlohmann::json::object();
  if (f.block_length_s) s["block_length_s"] = *f.block_length_s;
  if (f.block_shift_s) s["block_shift_s"] = *f.block_shift_s;
  if (f.thres_upper) s["thres_upper"] = *f.thres_upper;
  if (f.thres_lower) s["thres_lower"] = *f.thres_lower;
  if (!f.strategy.empty()) s["strategy"] = f.strategy;
  if (f.seed) j["seed"] = *f.seed;
  if (f.collar_s) j["scoring"]["collar_s"] = *f.collar_s;
  if (!f.corpus.empty()) j["data"]["corpus_dir"] = f.corpus;
  return read_run_config(j);
}

void write_file(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream os(p);
  if (!os || !(os << text)) throw DataError("cannot write " + p.string());
}

void save_effective(const RunConfig& c, const std::string& out) {
  const auto text = effective_config(c).dump(2) + "\n";
  if (out.empty())
    std::cerr << text;
  else
    write_file(fs::path(out) / "effective_config.json", text);
}

std::string need(const std::string& v, const char* flag) {
  if (v.empty()) throw ConfigError(std::string(flag) + " is required");
  return v;
}

// The checkpoint carries its own model config; a config file that also
// sets one must agree with it.
OtsVadModel<float> load_model(const Flags& f, RunConfig& c) {
  auto m = OtsVadModel<float>::load(need(f.checkpoint, "--checkpoint"));
  if (!f.config.empty()) {
    std::ifstream is(f.config);
    const auto j = nlohmann::json::parse(is, nullptr, false);
    if (j.is_object() && j.contains("model") && nlohmann::json(c.model) != nlohmann::json(m.config()))
      throw ConfigError("model section of " + f.config + " does not match the checkpoint " + f.checkpoint);
  }
  c.model = m.config();
  c.stream.num_speakers = c.model.backend.num_speakers;
  if (c.features.num_mel_bins != c.model.frontend.mel_bins)
    throw ConfigError("features.num_mel_bins does not match the checkpoint's mel_bins");
  return m;
}

// "-" reads raw little-endian 16-bit mono PCM from stdin.
AudioSignal load_audio(const Flags& f, const RunConfig& c) {
  const auto path = need(f.audio, "--audio");
  AudioSignal a;
  if (path == "-") {
    std::vector<float> v;
    char buf[2];
    while (std::cin.read(buf, 2)) {
      const auto s = std::int16_t(std::uint16_t(std::uint8_t(buf[0])) | std::uint16_t(std::uint8_t(buf[1])) << 8);
      v.push_back(float(s) / 32768.0f);
    }
    a = AudioSignal::mono(std::move(v), f.sample_rate > 0 ? f.sample_rate : c.features.sample_rate);
  } else {
    a = read_wav(path);
  }
  return conform_sample_rate(std::move(a), c.features.sample_rate, c.allow_resample);
}

std::string recording_id(const Flags& f) {
  return f.audio == "-" ? std::string("stdin") : fs::path(f.audio).stem().string();
}

Corpus load_corpus(const RunConfig& c) {
  if (c.corpus_dir.empty())
    throw DataError("data.corpus_dir is not set: point it (or --corpus) at a directory written by 'otsvad simulate'");
  return read_corpus(c.corpus_dir);
}

int cmd_simulate(const Flags& f) {
  auto c = effective(f);
  const auto out = need(f.out, "--out");
  const auto corpus = generate_corpus(c.data, c.seed, c.features.sample_rate);
  write_corpus(out, corpus);
  c.corpus_dir = out;
  save_effective(c, out);
  std::printf("wrote %zu training and %zu held-out conversations, %zu pool speakers to %s\n", corpus.train.size(),
              corpus.held_out.size(), corpus.pool.num_speakers(), out.c_str());
  return 0;
}

int cmd_train(const Flags& f) {
  auto c = effective(f);
  const auto out = need(f.out, "--out");
  const auto corpus = load_corpus(c);
  fs::create_directories(out);
  save_effective(c, out);
  std::ofstream log(fs::path(out) / "train.log");
  auto say = [&](const std::string& s) {
    std::cout << s << std::endl;
    log << s << std::endl;
  };
  for (const auto& s : c.train.stages) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%s: %zu steps, max_lr %g, warmup %zu, real_fraction %.2f, frontend %s", s.name.c_str(),
                  s.steps, s.max_lr, s.warmup_steps, s.real_fraction, s.freeze_frontend ? "frozen" : "trainable");
    say(buf);
  }
  std::vector<CompactRecording> real;
  SimulationRecipe recipe;
  recipe.pool = &corpus.pool;
  for (const auto& conv : corpus.train) {
    real.push_back(compact_recording(conv, c.features));
    recipe.sources.push_back(real.back().labels);
  }
  OtsVadModel<float> model(c.model, c.seed);
  SampleFactory data(real, recipe, c.model.backend.num_speakers, c.train.block_rows, c.features);
  ValidationSpec val;
  val.conversations = &corpus.held_out;
  val.stream = c.stream;
  val.scoring = c.scoring;
  auto tc = c.train;
  tc.seed = c.seed;
  const auto rep = run_schedule(model, data, tc, val, out, &corpus.pool, say);
  std::ofstream curve(fs::path(out) / "validation_der.tsv");
  curve << "stage\tstep\tder\n";
  for (const auto& s : rep.stages)
    for (const auto& [step, der] : s.der_log) curve << s.name << '\t' << step << '\t' << der << '\n';
  for (const auto& s : rep.stages) {
    const double last = s.losses.empty() ? 0.0 : s.losses.back();
    char buf[200];
    std::snprintf(buf, sizeof buf, "%s: final loss %.6f, best DER %.2f%% at step %zu, %zu skipped, %.1f s -> %s",
                  s.name.c_str(), last, s.best_der, s.best_step, s.skipped, s.seconds, s.checkpoint.c_str());
    say(buf);
  }
  fs::copy_file(rep.stages.back().checkpoint, fs::path(out) / "model.ckpt", fs::copy_options::overwrite_existing);
  say("final model: " + (fs::path(out) / "model.ckpt").string());
  return 0;
}

int cmd_infer(const Flags& f) {
  auto c = effective(f);
  auto model = load_model(f, c);
  const auto audio = load_audio(f, c);
  std::optional<VadSegments> vad;
  if (!f.vad.empty()) vad = read_vad_file(f.vad);
  const auto rec = recording_id(f);
  NeuralDetector<float> det(model, audio.num_channels());
  const std::size_t N = c.stream.num_speakers;
  const auto rep = play_stream<float>(
      det, audio, vad ? &*vad : nullptr, c.stream, c.features, rec, f.realtime, 0.01,
      [&](const Increment<float>& inc, const LiveSession<float>& live) {
        std::cout << format_events<float>(inc, N, [&](std::size_t j) { return live.frame_time_s(j); }) << std::flush;
      });
  const auto rttm = write_rttm(rep.segments);
  if (f.out.empty()) {
    std::cerr << rttm;
  } else {
    write_file(fs::path(f.out) / (rec + ".rttm"), rttm);
    save_effective(c, f.out);
  }
  return 0;
}

int cmd_score(const Flags& f) {
  auto c = effective(f);
  const auto ref = read_rttm_file(need(f.ref, "--ref"));
  const auto hyp = read_rttm_file(need(f.hyp, "--hyp"));
  const auto der = compute_der(ref, hyp, c.scoring);
  const auto jer = compute_jer(ref, hyp, c.scoring);
  std::printf("collar_s %.3f\n", c.scoring.collar_s);
  std::printf("DER %.2f%%  miss %.2f%%  false_alarm %.2f%%  confusion %.2f%%\n", der.der(), der.miss_pct(),
              der.false_alarm_pct(), der.confusion_pct());
  std::printf("JER %.2f%%\n", jer.jer);
  std::printf("scored_speech_s %.2f\n", der.scored_speech * der.frame_s);
  if (!f.out.empty()) {
    nlohmann::json j = {{"collar_s", c.scoring.collar_s}, {"der", der.der()},         {"miss", der.miss_pct()},
                        {"false_alarm", der.false_alarm_pct()}, {"confusion", der.confusion_pct()},
                        {"jer", jer.jer},                       {"per_speaker_jer", jer.per_speaker}};
    write_file(fs::path(f.out) / "score.json", j.dump(2) + "\n");
    save_effective(c, f.out);
  }
  return 0;
}

int cmd_bench_rtf(const Flags& f) {
  auto c = effective(f);
  auto model = load_model(f, c);
  const auto audio = load_audio(f, c);
  std::optional<VadSegments> vad;
  if (!f.vad.empty()) vad = read_vad_file(f.vad);
  NeuralDetector<float> det(model, audio.num_channels());
  const auto rep = play_stream<float>(det, audio, vad ? &*vad : nullptr, c.stream, c.features, recording_id(f), false);
  const auto r = summarize_rtf(rep.block_seconds, c.stream);
  std::printf("block_length_s %.2f\nblock_shift_s %.2f\nblocks %zu\nmean_block_s %.4f\nmax_block_s %.4f\nRTF %.3f\n",
              r.block_length_s, r.block_shift_s, r.blocks, r.mean_block_s, r.max_block_s, r.rtf);
  if (!f.out.empty()) save_effective(c, f.out);
  return 0;
}

int cmd_tune(const Flags& f) {
  auto c = effective(f);
  auto model = load_model(f, c);
  const auto corpus = load_corpus(c);
  if (corpus.held_out.empty()) throw DataError("data.corpus_dir has no held-out conversations to tune on");
  double best = std::numeric_limits<double>::infinity(), bu = 0, bl = 0;
  std::printf("thres_upper thres_lower der\n");
  for (const double up : c.tune.thres_upper)
    for (const double lo : c.tune.thres_lower) {
      ValidationSpec v;
      v.conversations = &corpus.held_out;
      v.stream = c.stream;
      v.stream.block_length_s = c.tune.block_length_s;
      v.stream.block_shift_s = c.tune.block_shift_s;
      v.stream.thres_upper = up;
      v.stream.thres_lower = lo;
      v.stream.validate();
      v.scoring = c.scoring;
      const double der = validation_der(model, v, c.features).der();
      std::printf("%.2f %.2f %.2f\n", up, lo, der);
      if (der < best) {
        best = der;
        bu = up;
        bl = lo;
      }
    }
  std::printf("best thres_upper %.2f thres_lower %.2f DER %.2f%%\n", bu, bl, best);
  if (!f.out.empty()) {
    c.stream.thres_upper = bu;
    c.stream.thres_lower = bl;
    save_effective(c, f.out);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Online target-speaker VAD diarization"};
  app.require_subcommand(1);
  Flags f;
  auto common = [&](CLI::App* s) {
    s->add_option("--config", f.config, "JSON run configuration");
    s->add_option("--seed", f.seed, "Master seed (overrides the config)");
    s->add_option("--out", f.out, "Output directory");
  };
  auto streaming = [&](CLI::App* s) {
    s->add_option("--audio", f.audio, "WAV file, or - for raw 16-bit PCM on stdin");
    s->add_option("--vad", f.vad, "Oracle VAD: 'onset offset' lines or RTTM");
    s->add_option("--checkpoint", f.checkpoint, "Model checkpoint");
    s->add_option("--strategy", f.strategy, "Target update: buffer or accumulate");
    s->add_option("--block-length-s", f.block_length_s, "Block length l in seconds");
    s->add_option("--block-shift-s", f.block_shift_s, "Block shift m in seconds");
    s->add_option("--thres-upper", f.thres_upper, "Purity threshold for target aggregation");
    s->add_option("--thres-lower", f.thres_lower, "New-speaker threshold");
    s->add_option("--sample-rate", f.sample_rate, "Sample rate of raw stdin PCM");
  };
  auto* train = app.add_subcommand("train", "Run the staged training schedule");
  common(train);
  train->add_option("--corpus", f.corpus, "Corpus directory (overrides data.corpus_dir)");
  auto* infer = app.add_subcommand("infer", "Streaming diarization of one recording");
  common(infer);
  streaming(infer);
  infer->add_flag("--realtime", f.realtime, "Pace input at real-time speed");
  auto* simulate = app.add_subcommand("simulate", "Write a synthetic corpus");
  common(simulate);
  auto* score = app.add_subcommand("score", "DER and JER of a hypothesis RTTM");
  common(score);
  score->add_option("--ref", f.ref, "Reference RTTM");
  score->add_option("--hyp", f.hyp, "Hypothesis RTTM");
  score->add_option("--collar", f.collar_s, "Collar in seconds (overrides scoring.collar_s)");
  auto* bench = app.add_subcommand("bench-rtf", "Per-block compute time and real-time factor");
  common(bench);
  streaming(bench);
  auto* tune = app.add_subcommand("tune-thresholds", "Grid search over thres_upper x thres_lower");
  common(tune);
  streaming(tune);
  tune->add_option("--corpus", f.corpus, "Corpus directory (overrides data.corpus_dir)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }
  try {
    if (*train) return cmd_train(f);
    if (*infer) return cmd_infer(f);
    if (*simulate) return cmd_simulate(f);
    if (*score) return cmd_score(f);
    if (*bench) return cmd_bench_rtf(f);
    if (*tune) return cmd_tune(f);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 4;
  } catch (const Error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
