#pragma once

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "otsvad/core/error.hpp"

namespace otsvad {

struct RttmSegment {
  std::string recording_id;
  double onset_s = 0;
  double duration_s = 0;
  std::string speaker;
  int channel = 1;

  double offset_s() const { return onset_s + duration_s; }
  bool operator==(const RttmSegment&) const = default;
};

// SPEAKER lines of the 10-field layout
//   SPEAKER <rec> <chan> <onset> <dur> <NA> <NA> <name> <NA> <NA>
// Blank lines and lines starting with '#' are skipped.
inline std::vector<RttmSegment> parse_rttm(const std::string& text) {
  std::vector<RttmSegment> out;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ls(line);
    std::vector<std::string> f;
    for (std::string t; ls >> t;) f.push_back(t);
    if (f.empty() || f[0][0] == '#') continue;
    if (f[0] != "SPEAKER") throw ParseError("expected a SPEAKER record, got '" + f[0] + "'", lineno);
    if (f.size() < 8) throw ParseError("SPEAKER record needs at least 8 fields", lineno);
    RttmSegment s;
    s.recording_id = f[1];
    try {
      std::size_t used = 0;
      s.channel = std::stoi(f[2], &used);
      if (used != f[2].size()) throw std::invalid_argument("channel");
      s.onset_s = std::stod(f[3], &used);
      if (used != f[3].size()) throw std::invalid_argument("onset");
      s.duration_s = std::stod(f[4], &used);
      if (used != f[4].size()) throw std::invalid_argument("duration");
    } catch (const std::logic_error&) {
      throw ParseError("non-numeric channel, onset or duration", lineno);
    }
    if (!(s.onset_s >= 0) || !(s.duration_s > 0)) throw ParseError("onset must be >= 0 and duration > 0", lineno);
    s.speaker = f[7];
    out.push_back(std::move(s));
  }
  return out;
}

inline std::string write_rttm(const std::vector<RttmSegment>& segs) {
  std::string out;
  char buf[64];
  for (const auto& s : segs) {
    out += "SPEAKER " + s.recording_id + " " + std::to_string(s.channel);
    std::snprintf(buf, sizeof buf, " %.2f %.2f", s.onset_s, s.duration_s);
    out += buf;
    out += " <NA> <NA> " + s.speaker + " <NA> <NA>\n";
  }
  return out;
}

inline std::vector<RttmSegment> read_rttm_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open rttm: " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_rttm(ss.str());
}

inline void write_rttm_file(const std::string& path, const std::vector<RttmSegment>& segs) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write rttm: " + path);
  os << write_rttm(segs);
}

}  // namespace otsvad
