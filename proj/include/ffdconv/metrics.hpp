#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <string>
#include <vector>

#include "ffdconv/errors.hpp"
#include "ffdconv/io.hpp"
#include "ffdconv/tensor.hpp"

namespace ffdconv {

// ---- events -------------------------------------------------------------------

struct Event {
  std::size_t label = 0;
  double onset = 0.0;   // seconds
  double offset = 0.0;  // seconds
};

using EventList = std::vector<Event>;

inline bool event_order(const Event& a, const Event& b) {
  if (a.onset != b.onset) return a.onset < b.onset;
  if (a.offset != b.offset) return a.offset < b.offset;
  return a.label < b.label;
}

// ---- median filtering -----------------------------------------------------------

// Sliding median with replicated edges. The window length must be odd.
template <typename T>
std::vector<T> median_filter(const std::vector<T>& x, std::size_t len) {
  if (len == 0 || len % 2 == 0) {
    throw ConfigError("median filter length must be odd, got " + std::to_string(len));
  }
  const std::size_t n = x.size();
  std::vector<T> out(n);
  if (n == 0) return out;
  const std::ptrdiff_t half = static_cast<std::ptrdiff_t>(len / 2);
  std::vector<T> window(len);
  for (std::size_t t = 0; t < n; ++t) {
    for (std::ptrdiff_t k = -half; k <= half; ++k) {
      std::ptrdiff_t idx = static_cast<std::ptrdiff_t>(t) + k;
      idx = std::clamp<std::ptrdiff_t>(idx, 0, static_cast<std::ptrdiff_t>(n) - 1);
      window[static_cast<std::size_t>(k + half)] = x[static_cast<std::size_t>(idx)];
    }
    std::nth_element(window.begin(), window.begin() + half, window.end());
    out[t] = window[static_cast<std::size_t>(half)];
  }
  return out;
}

// Column-wise median filtering of frame probabilities [T, C].
template <typename T>
Tensor<T> median_filter_probs(const Tensor<T>& probs, std::size_t len) {
  if (probs.rank() != 2) {
    throw ShapeError("median_filter_probs: expected [T,C], got " + shape_str(probs.shape()));
  }
  const std::size_t frames = probs.dim(0), classes = probs.dim(1);
  Tensor<T> out(probs.shape());
  std::vector<T> track(frames);
  for (std::size_t c = 0; c < classes; ++c) {
    for (std::size_t t = 0; t < frames; ++t) track[t] = probs.at2(t, c);
    std::vector<T> filtered = median_filter(track, len);
    for (std::size_t t = 0; t < frames; ++t) out.at2(t, c) = filtered[t];
  }
  return out;
}

// ---- frame/event conversion ------------------------------------------------------

// Binarizes probs [T, C] at per-class thresholds (p >= thr is active) and
// merges consecutive active frames: onset is the start of the first frame,
// offset the end of the last.
template <typename T>
EventList decode_events(const Tensor<T>& probs, const std::vector<T>& thresholds,
                        double hop_seconds) {
  if (probs.rank() != 2) {
    throw ShapeError("decode_events: expected [T,C], got " + shape_str(probs.shape()));
  }
  if (!(hop_seconds > 0.0)) throw ConfigError("decode_events: hop must be positive");
  const std::size_t frames = probs.dim(0), classes = probs.dim(1);
  if (thresholds.size() != classes) {
    throw ShapeError("decode_events: need one threshold per class");
  }
  EventList events;
  for (std::size_t c = 0; c < classes; ++c) {
    std::size_t start = 0;
    bool active = false;
    for (std::size_t t = 0; t <= frames; ++t) {
      const bool on = t < frames && probs.at2(t, c) >= thresholds[c];
      if (on && !active) {
        start = t;
        active = true;
      } else if (!on && active) {
        events.push_back({c, static_cast<double>(start) * hop_seconds,
                          static_cast<double>(t) * hop_seconds});
        active = false;
      }
    }
  }
  std::sort(events.begin(), events.end(), event_order);
  return events;
}

template <typename T>
EventList decode_events(const Tensor<T>& probs, T threshold, double hop_seconds) {
  std::vector<T> thresholds(probs.rank() == 2 ? probs.dim(1) : 0, threshold);
  return decode_events(probs, thresholds, hop_seconds);
}

// Frame-level activity [frames, n_classes]: frame t is active when
// [t*hop, (t+1)*hop) overlaps the event interval.
template <typename T>
Tensor<T> rasterize_events(const EventList& events, std::size_t frames, std::size_t n_classes,
                           double hop_seconds) {
  if (!(hop_seconds > 0.0)) throw ConfigError("rasterize_events: hop must be positive");
  Tensor<T> out = Tensor<T>::zeros({frames, n_classes});
  for (const Event& e : events) {
    if (e.label >= n_classes) {
      throw ConfigError("rasterize_events: label " + std::to_string(e.label) +
                        " out of range for " + std::to_string(n_classes) + " classes");
    }
    if (!(e.offset > e.onset)) continue;
    const auto lo = static_cast<std::size_t>(
        std::max(0.0, std::floor(e.onset / hop_seconds + 1e-9)));
    const auto hi = static_cast<std::size_t>(
        std::max(0.0, std::ceil(e.offset / hop_seconds - 1e-9)));
    for (std::size_t t = lo; t < std::min(hi, frames); ++t) out.at2(t, e.label) = T(1);
  }
  return out;
}

template <typename T>
std::vector<T> weak_labels_from_events(const EventList& events, std::size_t n_classes) {
  std::vector<T> weak(n_classes, T(0));
  for (const Event& e : events) {
    if (e.label < n_classes && e.offset > e.onset) weak[e.label] = T(1);
  }
  return weak;
}

// ---- scoring -----------------------------------------------------------------------

struct PrfCounts {
  std::size_t tp = 0, fp = 0, fn = 0;

  PrfCounts& operator+=(const PrfCounts& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    return *this;
  }
};

struct PrfResult {
  double precision = 0.0, recall = 0.0, f1 = 0.0;
};

// Empty-vs-empty scores 1 (nothing to detect, nothing hallucinated);
// otherwise undefined ratios score 0.
inline PrfResult prf_from_counts(const PrfCounts& c) {
  PrfResult r;
  if (c.tp + c.fp + c.fn == 0) {
    r.precision = r.recall = r.f1 = 1.0;
    return r;
  }
  r.precision = c.tp + c.fp > 0 ? static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp)
                                : 0.0;
  r.recall = c.tp + c.fn > 0 ? static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn) : 0.0;
  r.f1 = r.precision + r.recall > 0.0 ? 2.0 * r.precision * r.recall / (r.precision + r.recall)
                                      : 0.0;
  return r;
}

// Event-based matching: a prediction matches an unmatched reference of the
// same class when |onset difference| <= collar and |offset difference| <=
// max(collar, offset_ratio * reference duration). Predictions are taken in
// onset order and matched greedily one-to-one.
inline PrfCounts eb_counts(const EventList& pred, const EventList& gt, double collar = 0.2,
                           double offset_ratio = 0.2) {
  EventList p(pred), g(gt);
  std::sort(p.begin(), p.end(), event_order);
  std::sort(g.begin(), g.end(), event_order);
  std::vector<bool> used(g.size(), false);
  PrfCounts c;
  for (const Event& e : p) {
    bool matched = false;
    for (std::size_t j = 0; j < g.size(); ++j) {
      if (used[j] || g[j].label != e.label) continue;
      const double off_tol = std::max(collar, offset_ratio * (g[j].offset - g[j].onset));
      if (std::abs(e.onset - g[j].onset) <= collar &&
          std::abs(e.offset - g[j].offset) <= off_tol) {
        used[j] = true;
        matched = true;
        break;
      }
    }
    matched ? ++c.tp : ++c.fp;
  }
  for (bool u : used)
    if (!u) ++c.fn;
  return c;
}

inline PrfResult eb_f1(const EventList& pred, const EventList& gt, double collar = 0.2) {
  return prf_from_counts(eb_counts(pred, gt, collar));
}

namespace detail {

inline double intersection(const Event& a, const Event& b) {
  return std::max(0.0, std::min(a.offset, b.offset) - std::max(a.onset, b.onset));
}

}  // namespace detail

// Intersection-based matching. Per class: a prediction is valid when the
// fraction of its duration covered by same-class references reaches dtc; a
// reference counts as detected when the fraction of its duration covered by
// valid predictions reaches gtc. tp = detected references, fp = invalid
// predictions, fn = missed references; counts pool across classes.
inline PrfCounts ib_counts(const EventList& pred, const EventList& gt, double dtc = 0.5,
                           double gtc = 0.5) {
  std::size_t n_classes = 0;
  for (const Event& e : pred) n_classes = std::max(n_classes, e.label + 1);
  for (const Event& e : gt) n_classes = std::max(n_classes, e.label + 1);
  PrfCounts c;
  for (std::size_t cls = 0; cls < n_classes; ++cls) {
    EventList p, g;
    for (const Event& e : pred)
      if (e.label == cls) p.push_back(e);
    for (const Event& e : gt)
      if (e.label == cls) g.push_back(e);

    std::vector<bool> valid(p.size(), false);
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double dur = p[i].offset - p[i].onset;
      if (!(dur > 0.0)) {
        continue;  // zero-length prediction can never reach the coverage ratio
      }
      double inter = 0.0;
      for (const Event& e : g) inter += detail::intersection(p[i], e);
      valid[i] = inter / dur >= dtc;
    }
    for (std::size_t i = 0; i < p.size(); ++i)
      if (!valid[i]) ++c.fp;
    for (const Event& e : g) {
      const double dur = e.offset - e.onset;
      double inter = 0.0;
      for (std::size_t i = 0; i < p.size(); ++i)
        if (valid[i]) inter += detail::intersection(p[i], e);
      if (dur > 0.0 && inter / dur >= gtc) {
        ++c.tp;
      } else {
        ++c.fn;
      }
    }
  }
  return c;
}

inline PrfResult ib_f1(const EventList& pred, const EventList& gt, double dtc = 0.5,
                       double gtc = 0.5) {
  return prf_from_counts(ib_counts(pred, gt, dtc, gtc));
}

// ---- annotation files -----------------------------------------------------------

struct AnnotationRow {
  std::string filename;
  double onset = 0.0;
  double offset = 0.0;
  std::string label;
};

inline constexpr const char* kTsvHeader = "filename\tonset\toffset\tevent_label";

inline std::string format_events_tsv(const std::vector<AnnotationRow>& rows) {
  std::string out = std::string(kTsvHeader) + "\n";
  char buf[64];
  for (const auto& r : rows) {
    out += r.filename;
    std::snprintf(buf, sizeof(buf), "\t%.6f\t%.6f\t", r.onset, r.offset);
    out += buf;
    out += r.label;
    out += '\n';
  }
  return out;
}

inline void write_events_tsv(const std::string& path, const std::vector<AnnotationRow>& rows) {
  io::write_file(path, format_events_tsv(rows));
}

inline std::vector<AnnotationRow> parse_events_tsv(const std::string& text) {
  std::vector<AnnotationRow> rows;
  std::size_t pos = 0, lineno = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string::npos) end = text.size();
    std::string line = text.substr(pos, end - pos);
    pos = end + 1;
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (lineno == 1 && line == kTsvHeader) continue;
    std::vector<std::string> cols;
    std::size_t p = 0;
    while (true) {
      std::size_t tab = line.find('\t', p);
      cols.push_back(line.substr(p, tab == std::string::npos ? std::string::npos : tab - p));
      if (tab == std::string::npos) break;
      p = tab + 1;
    }
    if (cols.size() != 4) {
      throw IoError("annotation line " + std::to_string(lineno) + " has " +
                    std::to_string(cols.size()) + " columns, expected 4");
    }
    AnnotationRow r;
    r.filename = cols[0];
    try {
      std::size_t used = 0;
      r.onset = std::stod(cols[1], &used);
      if (used != cols[1].size()) throw std::invalid_argument("trailing");
      r.offset = std::stod(cols[2], &used);
      if (used != cols[2].size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw IoError("annotation line " + std::to_string(lineno) + " has malformed times");
    }
    r.label = cols[3];
    rows.push_back(std::move(r));
  }
  return rows;
}

inline std::vector<AnnotationRow> read_events_tsv(const std::string& path) {
  return parse_events_tsv(io::read_file(path));
}

inline std::string class_label(std::size_t id) { return "class" + std::to_string(id); }

inline std::size_t class_id_from_label(const std::string& label) {
  if (label.rfind("class", 0) != 0) throw ConfigError("unknown event label: " + label);
  try {
    std::size_t used = 0;
    auto id = static_cast<std::size_t>(std::stoul(label.substr(5), &used));
    if (used != label.size() - 5) throw std::invalid_argument("trailing");
    return id;
  } catch (const std::exception&) {
    throw ConfigError("unknown event label: " + label);
  }
}

}  // namespace ffdconv
