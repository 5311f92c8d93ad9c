#pragma once

#include <cstdio>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "ffdconv/errors.hpp"
#include "ffdconv/io.hpp"
#include "ffdconv/metrics.hpp"
#include "ffdconv/synth.hpp"
#include "ffdconv/tensor.hpp"

namespace ffdconv {

// On-disk layout of one dataset split: a directory holding clip_NNNN.ffdt
// feature tensors, a labels.tsv annotation table, and meta.txt with the
// generator spec plus the clip count.

inline std::string clip_filename(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "clip_%04zu.ffdt", i);
  return buf;
}

template <typename T>
void write_split(const std::string& dir, const SyntheticDataset<T>& ds) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir + ": " + ec.message());
  std::vector<AnnotationRow> rows;
  for (std::size_t i = 0; i < ds.clips.size(); ++i) {
    const std::string name = clip_filename(i);
    io::write_tensor(dir + "/" + name, ds.clips[i].features);
    for (const Event& e : ds.clips[i].events) {
      rows.push_back({name, e.onset, e.offset, class_label(e.label)});
    }
  }
  write_events_tsv(dir + "/labels.tsv", rows);
  io::KvMap kv = synth_spec_to_kv(ds.spec);
  kv["clips"] = std::to_string(ds.clips.size());
  io::write_file(dir + "/meta.txt", io::format_kv(kv));
}

template <typename T>
SyntheticDataset<T> read_split(const std::string& dir) {
  io::KvMap kv = io::read_kv_file(dir + "/meta.txt");
  SyntheticDataset<T> ds;
  ds.spec = synth_spec_from_kv(kv);
  const long clips = io::kv_long(kv, "clips", -1);
  if (clips < 0) throw IoError("meta.txt in " + dir + " does not record a clip count");

  std::map<std::string, EventList> by_file;
  for (const AnnotationRow& row : read_events_tsv(dir + "/labels.tsv")) {
    std::size_t label = class_id_from_label(row.label);
    if (label >= ds.spec.n_classes) {
      throw IoError("labels.tsv in " + dir + " names class " + row.label +
                    " outside the declared range");
    }
    by_file[row.filename].push_back({label, row.onset, row.offset});
  }

  const Shape expect{1, ds.spec.frames, ds.spec.bands};
  for (std::size_t i = 0; i < static_cast<std::size_t>(clips); ++i) {
    SyntheticClip<T> clip;
    const std::string name = clip_filename(i);
    clip.features = io::read_tensor<T>(dir + "/" + name);
    if (clip.features.shape() != expect) {
      throw IoError(name + " in " + dir + " has shape " + shape_str(clip.features.shape()) +
                    ", expected " + shape_str(expect));
    }
    auto it = by_file.find(name);
    if (it != by_file.end()) {
      std::sort(it->second.begin(), it->second.end(), event_order);
      clip.events = std::move(it->second);
    }
    ds.clips.push_back(std::move(clip));
  }
  return ds;
}

}  // namespace ffdconv
