#pragma once

#include <algorithm>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "otsvad/audio/fbank.hpp"

namespace otsvad {

// Sorted, disjoint speech intervals in seconds.
class VadSegments {
 public:
  using Interval = std::pair<double, double>;

  VadSegments() = default;

  // Validates and takes ownership. Intervals must be well-formed, sorted
  // and disjoint; use merged() to build one from arbitrary intervals.
  explicit VadSegments(std::vector<Interval> iv) : iv_(std::move(iv)) {
    for (std::size_t i = 0; i < iv_.size(); ++i) {
      if (!(iv_[i].first >= 0 && iv_[i].first < iv_[i].second))
        throw InputError("vad: interval " + std::to_string(i) + " has onset >= offset or negative onset");
      if (i && iv_[i].first < iv_[i - 1].second) throw InputError("vad: intervals overlap or are unsorted");
    }
  }

  // Sorts and unions possibly overlapping intervals.
  static VadSegments merged(std::vector<Interval> iv) {
    std::sort(iv.begin(), iv.end());
    std::vector<Interval> out;
    for (const auto& [a, b] : iv) {
      if (!(a < b)) continue;
      if (!out.empty() && a <= out.back().second)
        out.back().second = std::max(out.back().second, b);
      else
        out.emplace_back(a, b);
    }
    return VadSegments(std::move(out));
  }

  const std::vector<Interval>& intervals() const { return iv_; }
  bool empty() const { return iv_.empty(); }

  bool contains(double t) const {
    auto it = std::upper_bound(iv_.begin(), iv_.end(), t,
                               [](double v, const Interval& in) { return v < in.first; });
    if (it == iv_.begin()) return false;
    --it;
    return t >= it->first && t < it->second;
  }

  double speech_duration() const {
    double d = 0;
    for (const auto& [a, b] : iv_) d += b - a;
    return d;
  }

 private:
  std::vector<Interval> iv_;
};

// Parses a VAD file: either "onset offset" pairs, one per line, or RTTM
// SPEAKER lines (onset + duration); speaker turns are unioned.
inline VadSegments parse_vad(const std::string& text) {
  std::vector<VadSegments::Interval> iv;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ls(line);
    std::vector<std::string> tok;
    for (std::string t; ls >> t;) tok.push_back(t);
    if (tok.empty() || tok[0][0] == '#') continue;
    try {
      if (tok[0] == "SPEAKER") {
        if (tok.size() < 5) throw ParseError("RTTM line needs at least 5 fields", lineno);
        const double on = std::stod(tok[3]), dur = std::stod(tok[4]);
        iv.emplace_back(on, on + dur);
      } else {
        if (tok.size() != 2) throw ParseError("expected 'onset offset'", lineno);
        iv.emplace_back(std::stod(tok[0]), std::stod(tok[1]));
      }
    } catch (const std::invalid_argument&) {
      throw ParseError("non-numeric time field", lineno);
    }
  }
  return VadSegments::merged(std::move(iv));
}

inline VadSegments read_vad_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open vad file: " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_vad(ss.str());
}

// Monotone map from post-silence-removal frame indices to original frame
// indices.
class TimelineMap {
 public:
  TimelineMap() = default;
  explicit TimelineMap(std::vector<std::size_t> original) : orig_(std::move(original)) {
    for (std::size_t i = 1; i < orig_.size(); ++i)
      if (orig_[i] <= orig_[i - 1]) throw InputError("timeline map must be strictly increasing");
  }
  static TimelineMap identity(std::size_t n) {
    std::vector<std::size_t> v(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = i;
    return TimelineMap(std::move(v));
  }

  std::size_t size() const { return orig_.size(); }
  bool empty() const { return orig_.empty(); }
  const std::vector<std::size_t>& image() const { return orig_; }

  std::size_t project(std::size_t i) const {
    if (i >= orig_.size())
      throw RangeError("timeline index " + std::to_string(i) + " outside domain of size " +
                       std::to_string(orig_.size()));
    return orig_[i];
  }

  // Inverse on the image; nullopt for original frames that were removed.
  std::optional<std::size_t> inverse(std::size_t original) const {
    auto it = std::lower_bound(orig_.begin(), orig_.end(), original);
    if (it == orig_.end() || *it != original) return std::nullopt;
    return std::size_t(it - orig_.begin());
  }

  void push_back(std::size_t original) {
    if (!orig_.empty() && original <= orig_.back()) throw InputError("timeline map must be strictly increasing");
    orig_.push_back(original);
  }

 private:
  std::vector<std::size_t> orig_;
};

inline double frame_center_s(std::size_t frame, double shift_s, double length_s) {
  return double(frame) * shift_s + 0.5 * length_s;
}

// Keeps the frames whose centre lies inside a speech interval.
inline std::pair<FeatureMatrix, TimelineMap> remove_silence(const FeatureMatrix& fm, const VadSegments& vad) {
  FeatureMatrix out;
  out.bins = fm.bins;
  out.frame_shift_s = fm.frame_shift_s;
  out.frame_length_s = fm.frame_length_s;
  TimelineMap map;
  for (std::size_t l = 0; l < fm.num_frames(); ++l) {
    if (vad.contains(frame_center_s(l, fm.frame_shift_s, fm.frame_length_s))) {
      out.append(fm.frame(l));
      map.push_back(l);
    }
  }
  return {std::move(out), std::move(map)};
}

}  // namespace otsvad
