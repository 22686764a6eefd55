#pragma once

// Training: sample construction (real crops, simulated mixtures, left-half
// replacement), the loss pipeline, one optimisation step, optional
// speaker-ID pretraining of the front-end and the staged schedule.

#include <chrono>
#include <condition_variable>
#include <deque>
#include <filesystem>
#include <functional>
#include <limits>
#include <mutex>
#include <optional>
#include <thread>

#include "otsvad/core/params.hpp"
#include "otsvad/model/model.hpp"
#include "otsvad/pipeline.hpp"
#include "otsvad/train/labels.hpp"
#include "otsvad/train/synthetic.hpp"
#include "otsvad/util/json_section.hpp"

namespace otsvad {

struct StageConfig {
  std::string name;
  std::size_t steps = 500;
  bool freeze_frontend = false;
  double real_fraction = 0.0;
  double max_lr = 1e-4;
  std::size_t warmup_steps = 50;
};

// The published schedule: frozen front-end on simulated data, then 20% real
// data, then real data only.
inline std::vector<StageConfig> full_scale_stages() {
  return {{"stage1", 100000, true, 0.0, 1e-4, 2000}, {"stage2", 50000, false, 0.2, 1e-5, 2000},
          {"stage3", 50000, false, 1.0, 5e-6, 2000}};
}

// Same structure at desk scale. Learning rates are raised because 500 steps
// per stage cannot follow the published ones.
inline std::vector<StageConfig> desk_stages() {
  return {{"stage1", 500, true, 0.0, 2e-3, 50}, {"stage2", 500, false, 0.2, 1e-3, 50},
          {"stage3", 500, false, 1.0, 3e-4, 50}};
}

struct TrainConfig {
  std::size_t block_rows = 512;  // 2L feature rows per sample
  std::size_t batch_size = 8;
  double replace_p = 0.5;
  std::size_t validate_every = 250;
  std::uint64_t seed = 1;
  std::size_t queue_capacity = 4;
  std::size_t pretrain_steps = 0;
  double pretrain_lr = 1e-3;
  std::vector<StageConfig> stages = desk_stages();

  void validate() const {
    const std::size_t unit = 2 * FrontendConfig::kDownsample;
    if (block_rows == 0 || block_rows % unit)
      throw ConfigError("train.block_rows: must be a positive multiple of " + std::to_string(unit));
    if (batch_size == 0) throw ConfigError("train.batch_size: must be >= 1");
    if (!(replace_p >= 0 && replace_p <= 1)) throw ConfigError("train.replace_p: must lie in [0, 1]");
    if (queue_capacity == 0) throw ConfigError("train.queue_capacity: must be >= 1");
    if (stages.empty()) throw ConfigError("train.stages: at least one stage");
    for (const auto& s : stages) {
      if (s.steps == 0) throw ConfigError("train.stages." + s.name + ".steps: must be > 0");
      if (!(s.real_fraction >= 0 && s.real_fraction <= 1))
        throw ConfigError("train.stages." + s.name + ".real_fraction: must lie in [0, 1]");
      if (!(s.max_lr > 0)) throw ConfigError("train.stages." + s.name + ".max_lr: must be positive");
      if (s.warmup_steps > s.steps) throw ConfigError("train.stages." + s.name + ".warmup_steps: exceeds steps");
    }
  }
};

inline void to_json(nlohmann::json& j, const StageConfig& s) {
  j = {{"name", s.name},           {"steps", s.steps},   {"freeze_frontend", s.freeze_frontend},
       {"real_fraction", s.real_fraction}, {"max_lr", s.max_lr}, {"warmup_steps", s.warmup_steps}};
}

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"block_rows", c.block_rows},         {"batch_size", c.batch_size},     {"replace_p", c.replace_p},
       {"validate_every", c.validate_every}, {"seed", c.seed},                 {"queue_capacity", c.queue_capacity},
       {"pretrain_steps", c.pretrain_steps}, {"pretrain_lr", c.pretrain_lr},   {"stages", c.stages}};
}

inline TrainConfig read_train_config(JsonSection s, TrainConfig c = {}) {
  s.get("block_rows", c.block_rows);
  s.get("batch_size", c.batch_size);
  s.get("replace_p", c.replace_p);
  s.get("validate_every", c.validate_every);
  s.get("seed", c.seed);
  s.get("queue_capacity", c.queue_capacity);
  s.get("pretrain_steps", c.pretrain_steps);
  s.get("pretrain_lr", c.pretrain_lr);
  if (s.has("stages")) {
    const auto& arr = s.json().at("stages");
    if (!arr.is_array()) throw ConfigError(s.path() + ".stages: expected an array");
    c.stages.clear();
    for (std::size_t i = 0; i < arr.size(); ++i) {
      JsonSection st(arr[i], s.path() + ".stages[" + std::to_string(i) + "]");
      StageConfig sc;
      sc.name = "stage" + std::to_string(i + 1);
      st.get("name", sc.name);
      st.get("steps", sc.steps);
      st.get("freeze_frontend", sc.freeze_frontend);
      st.get("real_fraction", sc.real_fraction);
      st.get("max_lr", sc.max_lr);
      st.get("warmup_steps", sc.warmup_steps);
      st.finish();
      c.stages.push_back(sc);
    }
    s.mark("stages");
  }
  s.finish();
  c.validate();
  return c;
}

// A recording after silence removal: features, 0.08 s labels and the pool
// identity behind each label column.
struct CompactRecording {
  std::string id;
  FeatureMatrix features;
  LabelMatrix labels;
  std::vector<int> identities;
};

inline CompactRecording compact_recording(const Conversation& c, const FeatureConfig& fcfg = {}) {
  auto cf = compact_features(c.audio, &c.vad, fcfg);
  CompactRecording r;
  r.id = c.id;
  r.labels = labels_on_compact_timeline(c.reference, c.speakers, cf.map, StreamEngine<float>::kRowsPerFrame,
                                        fcfg.frame_shift_s, fcfg.frame_length_s);
  r.features = std::move(cf.channels[0]);
  r.identities = c.identities;
  return r;
}

struct TrainingSample {
  BlockHalf left, right;
  std::vector<int> identities;  // pool identity per slot, -1 when empty
  bool real = false;
  bool replaced = false;
};

// Builds training samples with N speaker slots. Speakers are placed into
// random slots, so no slot is tied to an identity.
class SampleFactory {
 public:
  SampleFactory(const std::vector<CompactRecording>& real, SimulationRecipe recipe, std::size_t num_speakers,
                std::size_t block_rows, const FeatureConfig& fcfg = {})
      : real_(&real), recipe_(std::move(recipe)), N_(num_speakers), rows_(block_rows), fb_(fcfg) {
    if (rows_ % (2 * StreamEngine<float>::kRowsPerFrame))
      throw ConfigError("train.block_rows: must be a multiple of 16");
  }

  std::size_t num_speakers() const { return N_; }
  std::size_t block_rows() const { return rows_; }
  std::size_t block_frames() const { return rows_ / StreamEngine<float>::kRowsPerFrame; }
  const FeatureConfig& features() const { return fb_.config(); }
  bool has_real() const { return !real_->empty(); }
  bool has_simulation() const { return recipe_.pool && !recipe_.pool->empty() && !recipe_.sources.empty(); }

  template <class Rng>
  TrainingSample draw(double real_fraction, double replace_p, Rng& rng) const {
    std::bernoulli_distribution pick_real(real_fraction);
    TrainingSample s = pick_real(rng) ? real_sample(rng) : simulated_sample(rng);
    s.replaced = maybe_replace_left(s.left, [&] { return simulate_left(s.identities, rng); }, replace_p, rng);
    return s;
  }

  // A random frame-aligned crop of a real recording.
  template <class Rng>
  TrainingSample real_sample(Rng& rng) const {
    if (!has_real()) throw DataError("train: no real recordings for this stage");
    std::vector<std::size_t> ok;
    for (std::size_t i = 0; i < real_->size(); ++i)
      if ((*real_)[i].labels.frames >= block_frames()) ok.push_back(i);
    if (ok.empty()) throw DataError("train: every real recording is shorter than one training block");
    const auto& rec = (*real_)[ok[std::uniform_int_distribution<std::size_t>(0, ok.size() - 1)(rng)]];
    if (rec.labels.speakers > N_) throw DataError("train: recording " + rec.id + " has more speakers than slots");
    const std::size_t t0 = std::uniform_int_distribution<std::size_t>(0, rec.labels.frames - block_frames())(rng);
    FeatureMatrix fm;
    fm.bins = rec.features.bins;
    const std::size_t r0 = t0 * StreamEngine<float>::kRowsPerFrame;
    fm.values.assign(rec.features.values.begin() + std::ptrdiff_t(r0 * fm.bins),
                     rec.features.values.begin() + std::ptrdiff_t((r0 + rows_) * fm.bins));
    const auto slots = place(rec.labels.speakers, rng);
    TrainingSample s;
    s.real = true;
    s.identities.assign(N_, -1);
    for (std::size_t n = 0; n < N_; ++n)
      if (slots[n] >= 0) s.identities[n] = rec.identities[std::size_t(slots[n])];
    finish(s, fm, rec.labels.slice(t0, t0 + block_frames()).remap(slots));
    return s;
  }

  // An annotation slice filled with distinct random pool speakers.
  template <class Rng>
  TrainingSample simulated_sample(Rng& rng) const {
    if (!has_simulation()) throw DataError("train: no simulation sources for this stage");
    auto ann = choose_annotation(recipe_, block_frames(), rng);
    if (ann.speakers > N_) throw DataError("train: annotation has more speakers than slots");
    if (ann.speakers > recipe_.pool->num_speakers()) throw DataError("train: annotation has more speakers than the pool");
    std::vector<int> ids(recipe_.pool->num_speakers());
    std::iota(ids.begin(), ids.end(), 0);
    std::shuffle(ids.begin(), ids.end(), rng);
    ids.resize(ann.speakers);
    auto mix = render_mixture(ann, ids, *recipe_.pool, rng);
    augment(mix.audio, rng);
    const auto slots = place(ann.speakers, rng);
    TrainingSample s;
    s.identities.assign(N_, -1);
    for (std::size_t n = 0; n < N_; ++n)
      if (slots[n] >= 0) s.identities[n] = ids[std::size_t(slots[n])];
    finish(s, fbank(mix.audio), ann.remap(slots));
    return s;
  }

 private:
  // Random injective placement of k source columns into N slots: slot n
  // takes column result[n] or stays empty (-1).
  template <class Rng>
  std::vector<int> place(std::size_t k, Rng& rng) const {
    std::vector<int> slots(N_, -1);
    std::vector<std::size_t> order(N_);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t i = 0; i < k; ++i) slots[order[i]] = int(i);
    return slots;
  }

  template <class Rng>
  void augment(std::vector<float>& audio, Rng& rng) const {
    if (!recipe_.augment) return;
    std::mt19937_64 r2(rng());
    recipe_.augment(audio, r2);
  }

  FeatureMatrix fbank(const std::vector<float>& audio) const { return compute_fbank(audio, fb_.config().sample_rate, fb_); }

  void finish(TrainingSample& s, const FeatureMatrix& fm, const LabelMatrix& y) const {
    auto [fl, fr] = split_blocks(fm);
    auto [yl, yr] = split_labels(y);
    s.left = {std::move(fl), std::move(yl)};
    s.right = {std::move(fr), std::move(yr)};
  }

 public:
  // A simulated left half whose slots keep the sample's identities; slots
  // the annotation fills but the sample leaves empty get unused identities.
  template <class Rng>
  BlockHalf simulate_left(std::vector<int>& slot_ids, Rng& rng) const {
    if (!has_simulation()) throw DataError("train: left replacement needs simulation sources");
    const std::size_t frames = block_frames() / 2;
    auto ann = choose_annotation(recipe_, frames, rng);
    std::vector<int> unused;
    for (int id = 0; id < int(recipe_.pool->num_speakers()); ++id)
      if (std::find(slot_ids.begin(), slot_ids.end(), id) == slot_ids.end()) unused.push_back(id);
    std::shuffle(unused.begin(), unused.end(), rng);
    const auto slots = place(std::min(ann.speakers, N_), rng);
    std::vector<int> col_ids(ann.speakers, -1), from(N_, -1);
    for (std::size_t n = 0; n < N_; ++n) {
      if (slots[n] < 0) continue;
      int id = slot_ids[n];
      if (id < 0) {
        if (unused.empty()) continue;  // nobody left to speak this column
        id = unused.back();
        unused.pop_back();
        slot_ids[n] = id;
      }
      col_ids[std::size_t(slots[n])] = id;
      from[n] = slots[n];
    }
    // Columns without a speaker are dropped from the annotation.
    LabelMatrix kept = ann;
    for (std::size_t c = 0; c < ann.speakers; ++c)
      if (col_ids[c] < 0) {
        for (std::size_t t = 0; t < kept.frames; ++t) kept.at(t, c) = 0;
        col_ids[c] = 0;
      }
    auto mix = render_mixture(kept, col_ids, *recipe_.pool, rng);
    augment(mix.audio, rng);
    return {fbank(mix.audio), kept.remap(from)};
  }

 private:
  const std::vector<CompactRecording>* real_;
  SimulationRecipe recipe_;
  std::size_t N_, rows_;
  FbankComputer fb_;
};

// Features of several halves as one [B, rows, bins] tensor.
template <class T>
Tensor<T> stack_features(const std::vector<const FeatureMatrix*>& xs) {
  if (xs.empty()) throw ShapeError("stack_features: empty batch");
  const std::size_t rows = xs[0]->num_frames(), bins = xs[0]->bins;
  std::vector<T> v;
  v.reserve(xs.size() * rows * bins);
  for (const auto* x : xs) {
    if (x->num_frames() != rows || x->bins != bins) throw ShapeError("stack_features: halves differ in shape");
    for (const float f : x->values) v.push_back(T(f));
  }
  return Tensor<T>::from({xs.size(), rows, bins}, std::move(v));
}

template <class T>
struct PipelineLoss {
  Tensor<T> loss;            // undefined when no target is active
  Tensor<T> probs;           // [B, T, N]
  std::size_t targets = 0;   // active (sample, slot) pairs
};

// Front-end on both halves, target embeddings from the overlap-masked left
// labels, detection on the right half, BCE over active slots only.
template <class T>
PipelineLoss<T> pipeline_loss(OtsVadModel<T>& model, const std::vector<TrainingSample>& batch, bool frontend_grad,
                              bool frontend_training, std::mt19937_64* dropout_rng) {
  const std::size_t B = batch.size();
  std::vector<const FeatureMatrix*> xs;
  for (const auto& s : batch) xs.push_back(&s.left.features);
  for (const auto& s : batch) xs.push_back(&s.right.features);
  Tensor<T> emb;
  if (frontend_grad) {
    emb = model.embed(stack_features<T>(xs), frontend_training);
  } else {
    NoGradGuard ng;
    emb = model.embed(stack_features<T>(xs), frontend_training);
  }
  const auto left = ops::slice(emb, 0, 0, B), right = ops::slice(emb, 0, B, B);
  std::vector<LabelMatrix> masked;
  for (const auto& s : batch) masked.push_back(mask_overlaps(s.left.labels));
  auto tb = extract_target_embeddings(left, masked);
  PipelineLoss<T> out;
  const std::size_t N = masked[0].speakers, Tn = right.dim(1);
  for (const auto a : tb.active) out.targets += a;
  out.probs = model.detect(tb.bank, right, dropout_rng);
  if (out.targets == 0) return out;
  std::vector<T> y(B * Tn * N), w(B * Tn * N);
  for (std::size_t b = 0; b < B; ++b) {
    const auto& lab = batch[b].right.labels;
    if (lab.frames != Tn || lab.speakers != N)
      throw ShapeError("pipeline_loss: right labels do not match " + std::to_string(Tn) + " frames");
    for (std::size_t t = 0; t < Tn; ++t)
      for (std::size_t n = 0; n < N; ++n) {
        y[(b * Tn + t) * N + n] = T(lab.at(t, n));
        w[(b * Tn + t) * N + n] = T(tb.active[b * N + n]);
      }
  }
  out.loss = ops::bce_loss(out.probs, y, w);
  return out;
}

// (sample, slot) pairs with at least one non-overlapped left frame.
inline std::size_t active_targets(const std::vector<TrainingSample>& batch) {
  std::size_t c = 0;
  for (const auto& s : batch) {
    const auto m = mask_overlaps(s.left.labels);
    for (std::size_t n = 0; n < m.speakers; ++n) c += m.active_frames(n) > 0;
  }
  return c;
}

struct StepStats {
  double loss = 0;
  std::size_t targets = 0;
  bool skipped = false;
};

// One Adam step. A batch without any active target carries no signal and is
// skipped before the forward pass, so even the normalisation statistics stay
// put. Single-channel data never touches the multichannel layers.
template <class T>
StepStats train_step(OtsVadModel<T>& model, const std::vector<TrainingSample>& batch, double lr, bool freeze_frontend,
                     std::mt19937_64* dropout_rng = nullptr) {
  StepStats out;
  if (active_targets(batch) == 0) {
    out.skipped = true;
    return out;
  }
  auto& st = model.store();
  st.set_frozen("frontend/", freeze_frontend);
  st.set_frozen("multichannel/", true);
  st.zero_grad();
  auto pl = pipeline_loss(model, batch, !freeze_frontend, !freeze_frontend, dropout_rng);
  out.targets = pl.targets;
  out.loss = double(pl.loss.item());
  if (!std::isfinite(out.loss)) throw NumericError("train: loss is not finite");
  pl.loss.backward();
  adam_step(st, lr);
  st.zero_grad();
  return out;
}

// Clears the Adam moments so a new stage starts its own warm-up cleanly.
template <class T>
void reset_optimizer(ParameterStore<T>& st) {
  for (const auto& name : st.names()) {
    auto& e = st.entry(name);
    e.m.clear();
    e.v.clear();
    e.step = 0;
  }
}

template <class T>
std::vector<std::vector<T>> snapshot(const ParameterStore<T>& st) {
  std::vector<std::vector<T>> out;
  for (const auto& name : st.names()) out.push_back(st.at(name).vec());
  return out;
}

template <class T>
void restore(ParameterStore<T>& st, const std::vector<std::vector<T>>& snap) {
  if (snap.size() != st.names().size()) throw StateError("restore: snapshot does not match the store");
  for (std::size_t i = 0; i < snap.size(); ++i) {
    auto v = st.at(st.names()[i]).values();
    std::copy(snap[i].begin(), snap[i].end(), v.begin());
  }
}

// Steps are counted from 1 so the first update already has a non-zero rate
// and the last one lands just before the schedule reaches zero.
inline LrSchedule stage_schedule(const StageConfig& s) { return {s.max_lr, s.warmup_steps, s.steps + 1}; }

// Speaker-ID pretraining of the front-end: time-averaged embeddings of
// single-speaker crops classified over the pool identities by a throwaway
// linear head.
template <class T>
std::vector<double> pretrain_frontend(OtsVadModel<T>& model, const SpeakerPool& pool, std::size_t steps, double lr,
                                      std::size_t batch_size, std::size_t rows, std::mt19937_64& rng,
                                      const FeatureConfig& fcfg = {}) {
  std::vector<double> losses;
  if (steps == 0) return losses;
  if (pool.num_speakers() < 2) throw ConfigError("train.pretrain_steps: needs at least two pool speakers");
  const std::size_t D = model.config().frontend.embed_dim, K = pool.num_speakers();
  ParameterStore<T> head;
  auto w = head.add("pretrain/w", uniform_init<T>({K, D}, D, rng));
  auto b = head.add("pretrain/b", Tensor<T>::zeros({K}));
  auto& st = model.store();
  st.set_frozen("frontend/", false);
  st.set_frozen("backend/", true);
  st.set_frozen("multichannel/", true);
  const FbankComputer fb(fcfg);
  const std::size_t samples = (rows - 1) * fcfg.shift_samples() + fcfg.frame_samples();
  std::uniform_int_distribution<std::size_t> pick(0, K - 1);
  for (std::size_t step = 0; step < steps; ++step) {
    std::vector<FeatureMatrix> feats;
    std::vector<std::size_t> target;
    for (std::size_t i = 0; i < batch_size; ++i) {
      target.push_back(pick(rng));
      feats.push_back(compute_fbank(pool.draw(int(target.back()), samples, rng), pool.sample_rate(), fb));
    }
    std::vector<const FeatureMatrix*> xs;
    for (const auto& f : feats) xs.push_back(&f);
    auto emb = ops::mean_axis(model.embed(stack_features<T>(xs), true), 1);
    auto loss = ops::cross_entropy(ops::linear(emb, w, b), target);
    losses.push_back(double(loss.item()));
    loss.backward();
    adam_step(st, lr);
    adam_step(head, lr);
    st.zero_grad();
    head.zero_grad();
  }
  st.set_frozen("backend/", false);
  reset_optimizer(st);
  return losses;
}

// Draws batches on a worker thread into a bounded queue. The sequence is a
// pure function of the seed.
class BatchProducer {
 public:
  BatchProducer(const SampleFactory& f, std::size_t batches, std::size_t batch_size, double real_fraction,
                double replace_p, std::uint64_t seed, std::size_t capacity)
      : capacity_(std::max<std::size_t>(capacity, 1)) {
    worker_ = std::thread([this, &f, batches, batch_size, real_fraction, replace_p, seed] {
      std::mt19937_64 rng(seed);
      try {
        for (std::size_t i = 0; i < batches; ++i) {
          std::vector<TrainingSample> batch;
          for (std::size_t k = 0; k < batch_size; ++k) batch.push_back(f.draw(real_fraction, replace_p, rng));
          std::unique_lock lk(mu_);
          cv_.wait(lk, [&] { return stop_ || queue_.size() < capacity_; });
          if (stop_) return;
          queue_.push_back(std::move(batch));
          cv_.notify_all();
        }
      } catch (...) {
        std::lock_guard lk(mu_);
        error_ = std::current_exception();
      }
      std::lock_guard lk(mu_);
      done_ = true;
      cv_.notify_all();
    });
  }

  ~BatchProducer() {
    {
      std::lock_guard lk(mu_);
      stop_ = true;
      cv_.notify_all();
    }
    worker_.join();
  }

  BatchProducer(const BatchProducer&) = delete;
  BatchProducer& operator=(const BatchProducer&) = delete;

  // Next batch, or nullopt once all batches were delivered.
  std::optional<std::vector<TrainingSample>> next() {
    std::unique_lock lk(mu_);
    cv_.wait(lk, [&] { return !queue_.empty() || done_; });
    if (queue_.empty()) {
      if (error_) std::rethrow_exception(error_);
      return std::nullopt;
    }
    auto b = std::move(queue_.front());
    queue_.pop_front();
    cv_.notify_all();
    return b;
  }

 private:
  std::size_t capacity_;
  std::deque<std::vector<TrainingSample>> queue_;
  std::mutex mu_;
  std::condition_variable cv_;
  bool stop_ = false, done_ = false;
  std::exception_ptr error_;
  std::thread worker_;
};

struct ValidationSpec {
  const std::vector<Conversation>* conversations = nullptr;
  StreamConfig stream;
  ScoringConfig scoring{0.25, 0.01};

  bool enabled() const { return conversations && !conversations->empty(); }
};

// Pooled DER over the held-out conversations, oracle VAD, streaming
// inference.
template <class T>
DerResult validation_der(OtsVadModel<T>& model, const ValidationSpec& v, const FeatureConfig& fcfg = {}) {
  std::vector<RttmSegment> ref, hyp;
  for (const auto& c : *v.conversations) {
    ref.insert(ref.end(), c.reference.begin(), c.reference.end());
    auto r = diarize(model, c.audio, &c.vad, v.stream, c.id, fcfg);
    hyp.insert(hyp.end(), r.segments.begin(), r.segments.end());
  }
  return compute_der(ref, hyp, v.scoring);
}

struct StageReport {
  std::string name;
  std::size_t steps = 0;
  std::size_t skipped = 0;
  std::vector<double> losses;                            // one per non-skipped step
  std::vector<std::pair<std::size_t, double>> der_log;   // (step, DER %)
  double best_der = std::numeric_limits<double>::quiet_NaN();
  std::size_t best_step = 0;
  std::string checkpoint;
  double seconds = 0;
};

struct TrainReport {
  std::vector<double> pretrain_losses;
  std::vector<StageReport> stages;
};

using TrainLog = std::function<void(const std::string&)>;

// Runs every stage in order. With a validation set the best model of a stage
// (by DER) is kept and the next stage starts from it; otherwise the last one
// is. Each stage writes <out_dir>/<name>.ckpt.
template <class T>
TrainReport run_schedule(OtsVadModel<T>& model, const SampleFactory& data, const TrainConfig& cfg,
                         const ValidationSpec& val, const std::string& out_dir, const SpeakerPool* pretrain_pool = nullptr,
                         const TrainLog& log = {}) {
  cfg.validate();
  if (data.num_speakers() != model.config().backend.num_speakers)
    throw ConfigError("train: sample factory and model disagree on the number of speakers");
  auto say = [&](const std::string& m) {
    if (log) log(m);
  };
  std::filesystem::create_directories(out_dir);
  TrainReport rep;
  std::mt19937_64 rng(cfg.seed);
  if (cfg.pretrain_steps) {
    if (!pretrain_pool) throw ConfigError("train.pretrain_steps: needs a speaker pool");
    rep.pretrain_losses =
        pretrain_frontend(model, *pretrain_pool, cfg.pretrain_steps, cfg.pretrain_lr, cfg.batch_size, cfg.block_rows / 2, rng,
                          data.features());
    say("pretrain: " + std::to_string(cfg.pretrain_steps) + " steps, final loss " +
        std::to_string(rep.pretrain_losses.back()));
  }
  for (std::size_t si = 0; si < cfg.stages.size(); ++si) {
    const auto& sc = cfg.stages[si];
    if (sc.real_fraction > 0 && !data.has_real())
      throw DataError("train." + sc.name + ": real_fraction > 0 but no real recordings were given");
    if (sc.real_fraction < 1 && !data.has_simulation())
      throw DataError("train." + sc.name + ": simulated data requested but no simulation sources were given");
    const auto t0 = std::chrono::steady_clock::now();
    StageReport sr;
    sr.name = sc.name;
    reset_optimizer(model.store());
    const auto sched = stage_schedule(sc);
    std::mt19937_64 drop(cfg.seed * 31 + si);
    BatchProducer prod(data, sc.steps, cfg.batch_size, sc.real_fraction, cfg.replace_p, cfg.seed * 7919 + si + 1,
                       cfg.queue_capacity);
    std::vector<std::vector<T>> best;
    for (std::size_t step = 0; step < sc.steps; ++step) {
      auto batch = prod.next();
      if (!batch) throw StateError("train: batch producer ended early");
      const auto stats = train_step(model, *batch, sched.lr_at(step + 1), sc.freeze_frontend, &drop);
      if (stats.skipped) {
        ++sr.skipped;
        say(sc.name + " step " + std::to_string(step + 1) + ": no active target in batch, skipped");
      } else {
        sr.losses.push_back(stats.loss);
      }
      const bool check = (cfg.validate_every && (step + 1) % cfg.validate_every == 0) || step + 1 == sc.steps;
      if (val.enabled() && check) {
        const double der = validation_der(model, val, data.features()).der();
        sr.der_log.push_back({step + 1, der});
        say(sc.name + " step " + std::to_string(step + 1) + ": validation DER " + std::to_string(der) + "%");
        if (!(der >= sr.best_der)) {
          sr.best_der = der;
          sr.best_step = step + 1;
          best = snapshot(model.store());
        }
      }
    }
    sr.steps = sc.steps;
    if (!best.empty()) restore(model.store(), best);
    sr.checkpoint = (std::filesystem::path(out_dir) / (sc.name + ".ckpt")).string();
    nlohmann::json extra = {{"stage", sc.name}, {"step", best.empty() ? sc.steps : sr.best_step}};
    if (!best.empty()) extra["validation_der"] = sr.best_der;
    model.save(sr.checkpoint, extra);
    sr.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    say(sc.name + ": wrote " + sr.checkpoint);
    rep.stages.push_back(std::move(sr));
  }
  return rep;
}

}  // namespace otsvad
