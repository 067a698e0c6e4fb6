// Copyright 2026 the nes2net authors
// SPDX-License-Identifier: Apache-2.0
//
// Detection metrics over scored trials, plus the score-file format.
//
// Conventions, fixed once and used everywhere:
//   * higher score = more bonafide; a trial is accepted iff score >= theta;
//   * FAR(theta) = accepted spoofs / spoofs, FRR(theta) = rejected bonafide
//     / bonafide;
//   * operating points are theta = -inf, each distinct score, +inf;
//   * EER linearly interpolates between the two operating points bracketing
//     the FAR = FRR crossing, and reports a threshold midway between the
//     bracketing distinct scores;
//   * minDCF takes the raw empirical minimum over the same operating points
//     (no convexification), normalized by the trivial-system cost;
//   * CLLR = 1/2 [mean_bona log2(1+e^-s) + mean_spoof log2(1+e^s)].
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace n2n {

struct Trial {
  std::string utt;
  std::string attack;  // "-" for bonafide
  bool bonafide = false;
  double score = 0.0;
};

struct ScoreSet {
  std::vector<Trial> trials;

  std::size_t n_bonafide() const {
    std::size_t n = 0;
    for (const auto& t : trials) n += t.bonafide ? 1 : 0;
    return n;
  }
  std::size_t n_spoof() const { return trials.size() - n_bonafide(); }
};

struct EerResult {
  double eer = 0.0;
  double threshold = 0.0;
};

namespace detail {

struct OperatingPoint {
  double thr, far, frr;
};

// Sweep: theta = -inf, then each distinct score ascending, then +inf.
inline std::vector<OperatingPoint> roc_points(const std::vector<Trial>& trials) {
  std::vector<double> bona, spoof;
  for (const auto& t : trials) {
    if (!std::isfinite(t.score))
      throw std::invalid_argument("metrics: non-finite score for trial " + t.utt);
    (t.bonafide ? bona : spoof).push_back(t.score);
  }
  if (bona.empty() || spoof.empty())
    throw std::invalid_argument("metrics: need at least one trial of each class");
  std::sort(bona.begin(), bona.end());
  std::sort(spoof.begin(), spoof.end());
  std::vector<double> distinct;
  distinct.reserve(bona.size() + spoof.size());
  std::merge(bona.begin(), bona.end(), spoof.begin(), spoof.end(), std::back_inserter(distinct));
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());

  double nb = static_cast<double>(bona.size()), ns = static_cast<double>(spoof.size());
  std::vector<OperatingPoint> pts;
  pts.reserve(distinct.size() + 2);
  pts.push_back({-std::numeric_limits<double>::infinity(), 1.0, 0.0});
  for (double v : distinct) {
    double far = static_cast<double>(spoof.end() -
                                     std::lower_bound(spoof.begin(), spoof.end(), v)) /
                 ns;
    double frr =
        static_cast<double>(std::lower_bound(bona.begin(), bona.end(), v) - bona.begin()) / nb;
    pts.push_back({v, far, frr});
  }
  pts.push_back({std::numeric_limits<double>::infinity(), 0.0, 1.0});
  return pts;
}

}  // namespace detail

// FAR - FRR falls from 1 to -1 over the sweep; the EER sits where it crosses
// zero, linearly interpolated between the bracketing operating points.
inline EerResult compute_eer(const std::vector<Trial>& trials) {
  std::vector<detail::OperatingPoint> pts = detail::roc_points(trials);
  for (std::size_t k = 1; k < pts.size(); ++k) {
    double d0 = pts[k - 1].far - pts[k - 1].frr;
    double d1 = pts[k].far - pts[k].frr;
    if (d1 > 0.0) continue;  // crossing is further right
    // Here d0 > 0 >= d1, so the denominator cannot vanish.
    EerResult r;
    double t = d0 / (d0 - d1);
    r.eer = pts[k - 1].far + t * (pts[k].far - pts[k - 1].far);
    // Midway between bracketing thresholds; with an infinite endpoint the
    // finite side wins.
    double lo = pts[k - 1].thr, hi = pts[k].thr;
    if (!std::isfinite(lo)) r.threshold = hi;
    else if (!std::isfinite(hi)) r.threshold = lo;
    else r.threshold = lo + (hi - lo) / 2.0;
    return r;
  }
  throw std::logic_error("compute_eer: no crossing found");
}

inline EerResult compute_eer(const ScoreSet& s) { return compute_eer(s.trials); }

// Per attack: EER of (all bonafide) vs (that attack's spoofs). "pooled" maps
// to the EER over everything.
inline std::map<std::string, double> per_attack_eer(const std::vector<Trial>& trials) {
  std::map<std::string, std::vector<Trial>> subsets;
  std::vector<Trial> bona;
  for (const auto& t : trials) {
    if (t.bonafide)
      bona.push_back(t);
    else
      subsets[t.attack].push_back(t);
  }
  if (subsets.empty()) throw std::invalid_argument("per_attack_eer: no spoof trials");
  std::map<std::string, double> out;
  for (auto& [attack, sub] : subsets) {
    std::vector<Trial> joined = bona;
    joined.insert(joined.end(), sub.begin(), sub.end());
    out[attack] = compute_eer(joined).eer;
  }
  out["pooled"] = compute_eer(trials).eer;
  return out;
}

// min over operating points of p_tar c_miss FRR + (1-p_tar) c_fa FAR,
// normalized by the better of always-accept / always-reject.
inline double compute_min_dcf(const std::vector<Trial>& trials, double p_tar = 0.05,
                              double c_miss = 1.0, double c_fa = 10.0) {
  if (!(p_tar > 0.0 && p_tar < 1.0))
    throw std::invalid_argument("compute_min_dcf: p_tar must be in (0, 1)");
  if (!(c_miss > 0.0 && c_fa > 0.0))
    throw std::invalid_argument("compute_min_dcf: costs must be positive");
  double best = std::numeric_limits<double>::infinity();
  for (const auto& p : detail::roc_points(trials)) {
    double cost = p_tar * c_miss * p.frr + (1.0 - p_tar) * c_fa * p.far;
    best = std::min(best, cost);
  }
  return best / std::min(p_tar * c_miss, (1.0 - p_tar) * c_fa);
}

// Calibration cost in bits, stable softplus.
inline double compute_cllr(const std::vector<Trial>& trials) {
  auto softplus = [](double x) {
    return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
  };
  double sb = 0.0, ss = 0.0;
  std::size_t nb = 0, ns = 0;
  for (const auto& t : trials) {
    if (!std::isfinite(t.score))
      throw std::invalid_argument("metrics: non-finite score for trial " + t.utt);
    if (t.bonafide) {
      sb += softplus(-t.score);
      ++nb;
    } else {
      ss += softplus(t.score);
      ++ns;
    }
  }
  if (nb == 0 || ns == 0)
    throw std::invalid_argument("compute_cllr: need at least one trial of each class");
  double ln2 = std::log(2.0);
  return 0.5 * (sb / static_cast<double>(nb) + ss / static_cast<double>(ns)) / ln2;
}

// ---- score file ----
// One trial per line: `utt_id attack_tag key score`, key in
// {bonafide, spoof}, attack "-" for bonafide, scores with 9 significant
// digits. '#' starts a comment line; blank lines ignored; LF or CRLF.

inline void write_scores(std::ostream& os, const std::vector<Trial>& trials) {
  auto clean = [](const std::string& f, const char* what) {
    if (f.empty() || f.find_first_of(" \t\r\n") != std::string::npos || f[0] == '#')
      throw std::invalid_argument(std::string("write_scores: invalid ") + what + " '" + f + "'");
  };
  for (const auto& t : trials) {
    clean(t.utt, "utt_id");
    std::string attack = t.bonafide ? "-" : t.attack;
    clean(attack, "attack_tag");
    if (!std::isfinite(t.score))
      throw std::invalid_argument("write_scores: non-finite score for " + t.utt);
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.9g", t.score);
    os << t.utt << ' ' << attack << ' ' << (t.bonafide ? "bonafide" : "spoof") << ' ' << buf
       << '\n';
  }
}

inline void write_scores(const std::string& path, const std::vector<Trial>& trials) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("write_scores: cannot open " + path);
  write_scores(os, trials);
  if (!os) throw std::runtime_error("write_scores: write failed for " + path);
}

inline ScoreSet read_scores(std::istream& is, const std::string& name) {
  ScoreSet set;
  std::unordered_set<std::string> seen;
  std::string line;
  std::size_t lineno = 0;
  auto fail = [&](const std::string& msg) {
    throw std::runtime_error(name + ":" + std::to_string(lineno) + ": " + msg);
  };
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::size_t first = line.find_first_not_of(" \t");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream ls(line);
    std::vector<std::string> fields;
    std::string f;
    while (ls >> f) fields.push_back(f);
    if (fields.size() != 4)
      fail("expected 4 fields (utt_id attack_tag key score), got " +
           std::to_string(fields.size()));
    Trial t;
    t.utt = fields[0];
    t.attack = fields[1];
    if (fields[2] == "bonafide")
      t.bonafide = true;
    else if (fields[2] == "spoof")
      t.bonafide = false;
    else
      fail("key must be 'bonafide' or 'spoof', got '" + fields[2] + "'");
    if (t.bonafide && t.attack != "-") fail("bonafide trials must carry attack tag '-'");
    if (!t.bonafide && t.attack == "-") fail("spoof trials need a real attack tag");
    try {
      std::size_t used = 0;
      t.score = std::stod(fields[3], &used);
      if (used != fields[3].size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      fail("cannot parse score '" + fields[3] + "'");
    }
    if (!std::isfinite(t.score)) fail("score must be finite");
    if (!seen.insert(t.utt).second) fail("duplicate utterance id '" + t.utt + "'");
    set.trials.push_back(std::move(t));
  }
  return set;
}

inline ScoreSet read_scores(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("read_scores: cannot open " + path);
  return read_scores(is, path);
}

}  // namespace n2n
