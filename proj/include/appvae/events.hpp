#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "appvae/errors.hpp"
#include "appvae/rng.hpp"
#include "appvae/util.hpp"

namespace appvae {

// One marked event: a category label and the time elapsed since the previous
// event (for the first event, since the start of the sequence).
struct ActionEvent {
  int category_id = 0;
  double inter_arrival = 0.0;

  bool operator==(const ActionEvent&) const = default;
};

struct ActionSequence {
  std::vector<ActionEvent> events;

  std::size_t size() const { return events.size(); }
  bool operator==(const ActionSequence&) const = default;
};

struct Dataset {
  std::vector<ActionSequence> sequences;
  int num_categories = 0;
  std::string name;

  std::size_t total_events() const {
    std::size_t n = 0;
    for (const auto& s : sequences) n += s.size();
    return n;
  }
};

// Equality over content; `name` is a label and is not serialized.
inline bool operator==(const Dataset& a, const Dataset& b) {
  return a.num_categories == b.num_categories && a.sequences == b.sequences;
}

inline void validate_dataset(const Dataset& d) {
  if (d.num_categories < 1) throw ValidationError("num_categories must be >= 1");
  if (d.sequences.empty()) throw ValidationError("no sequences");
  for (const auto& seq : d.sequences) {
    if (seq.events.empty()) throw ValidationError("empty sequence");
    for (const auto& e : seq.events) {
      if (e.category_id < 0 || e.category_id >= d.num_categories)
        throw ValidationError("category " + std::to_string(e.category_id) +
                              " out of range for K=" + std::to_string(d.num_categories));
      if (!std::isfinite(e.inter_arrival) || e.inter_arrival < 0.0)
        throw ValidationError("inter-arrival times must be finite and non-negative");
    }
  }
}

namespace detail {

inline std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace detail

// Event-sequence file format: optional '#' comment lines, a `K=<int>` header,
// then one sequence per non-empty line as whitespace-separated
// `<category_id>:<inter_arrival>` tokens.
inline Dataset parse_dataset(std::istream& in) {
  Dataset d;
  std::string line;
  std::size_t line_no = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string_view sv = detail::trim(line);
    if (sv.empty() || sv.front() == '#') continue;
    if (!have_header) {
      if (!sv.starts_with("K="))
        throw ParseError(line_no, "expected header 'K=<int>' before sequence data");
      int k = 0;
      if (!parse_int(sv.substr(2), k) || k < 1)
        throw ParseError(line_no, "invalid category count in header");
      d.num_categories = k;
      have_header = true;
      continue;
    }
    ActionSequence seq;
    std::size_t pos = 0;
    while (pos < sv.size()) {
      while (pos < sv.size() && (sv[pos] == ' ' || sv[pos] == '\t')) ++pos;
      if (pos >= sv.size()) break;
      std::size_t end = pos;
      while (end < sv.size() && sv[end] != ' ' && sv[end] != '\t') ++end;
      const std::string_view tok = sv.substr(pos, end - pos);
      pos = end;
      const auto colon = tok.find(':');
      if (colon == std::string_view::npos)
        throw ParseError(line_no, "malformed token '" + std::string(tok) +
                                      "': expected <category>:<time>");
      ActionEvent ev;
      if (!parse_int(tok.substr(0, colon), ev.category_id))
        throw ParseError(line_no, "malformed category in token '" + std::string(tok) + "'");
      if (!parse_double(tok.substr(colon + 1), ev.inter_arrival))
        throw ParseError(line_no, "malformed time in token '" + std::string(tok) + "'");
      if (ev.category_id < 0 || ev.category_id >= d.num_categories)
        throw ValidationError("line " + std::to_string(line_no) + ": category " +
                              std::to_string(ev.category_id) + " out of range for K=" +
                              std::to_string(d.num_categories));
      if (!std::isfinite(ev.inter_arrival) || ev.inter_arrival < 0.0)
        throw ValidationError("line " + std::to_string(line_no) +
                              ": inter-arrival must be finite and non-negative");
      seq.events.push_back(ev);
    }
    if (!seq.events.empty()) d.sequences.push_back(std::move(seq));
  }
  if (!have_header) throw ParseError(line_no, "missing 'K=<int>' header");
  if (d.sequences.empty()) throw ValidationError("no sequences");
  return d;
}

inline Dataset parse_dataset(const std::string& text) {
  std::istringstream in(text);
  return parse_dataset(in);
}

// Times are written in shortest round-trip form, so parse(write(d)) == d.
inline void write_dataset(const Dataset& d, std::ostream& out) {
  out << "K=" << d.num_categories << '\n';
  for (const auto& seq : d.sequences) {
    for (std::size_t i = 0; i < seq.events.size(); ++i) {
      if (i) out << ' ';
      out << seq.events[i].category_id << ':' << format_double(seq.events[i].inter_arrival);
    }
    out << '\n';
  }
}

inline std::string write_dataset(const Dataset& d) {
  std::ostringstream out;
  write_dataset(d, out);
  return out.str();
}

// Atomic file write: temp file in the same directory, then rename.
inline void write_text_file_atomic(const std::filesystem::path& path, const std::string& text) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) throw IoError("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline void write_dataset_file(const Dataset& d, const std::filesystem::path& path) {
  write_text_file_atomic(path, write_dataset(d));
}

inline void scale_times(Dataset& d, double time_scale) {
  if (!(time_scale > 0.0)) throw ValidationError("time_scale must be positive");
  if (time_scale == 1.0) return;
  for (auto& seq : d.sequences)
    for (auto& e : seq.events) e.inter_arrival *= time_scale;
}

inline Dataset parse_dataset_file(const std::filesystem::path& path, double time_scale = 1.0) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  Dataset d = parse_dataset(in);
  d.name = path.stem().string();
  scale_times(d, time_scale);
  return d;
}

// Deterministic shuffle + exact partition: train takes ceil(f * N), the
// validation share takes the remainder; both keep the parent K.
inline std::pair<Dataset, Dataset> split_dataset(const Dataset& d, double train_fraction,
                                                 std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0))
    throw ValidationError("train_fraction must be in (0, 1)");
  const std::size_t n = d.sequences.size();
  if (n < 2) throw ValidationError("need at least 2 sequences to split");
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  SplitMix64 rng(derive_seed(seed, "split"));
  for (std::size_t i = n - 1; i > 0; --i) {
    const std::size_t j = rng.bounded(i + 1);
    std::swap(idx[i], idx[j]);
  }
  std::size_t train_count =
      static_cast<std::size_t>(std::ceil(train_fraction * static_cast<double>(n)));
  if (train_count >= n) train_count = n - 1;  // keep both shares non-empty
  Dataset train{.sequences = {}, .num_categories = d.num_categories, .name = d.name};
  Dataset val = train;
  train.sequences.reserve(train_count);
  val.sequences.reserve(n - train_count);
  for (std::size_t i = 0; i < n; ++i)
    (i < train_count ? train : val).sequences.push_back(d.sequences[idx[i]]);
  return {std::move(train), std::move(val)};
}

// Rolling content hashes: h[0] covers the empty prefix, h[i] covers events
// [0, i). Used to derive evaluation sub-seeds that depend only on the history
// actually visible at each step.
inline std::uint64_t hash_event(std::uint64_t h, const ActionEvent& e) {
  const auto cat = static_cast<std::uint32_t>(e.category_id);
  const auto bits = std::bit_cast<std::uint64_t>(e.inter_arrival);
  h = fnv1a64(h, &cat, sizeof(cat));
  return fnv1a64(h, &bits, sizeof(bits));
}

inline std::vector<std::uint64_t> prefix_hashes(const ActionSequence& seq) {
  std::vector<std::uint64_t> h(seq.size() + 1);
  h[0] = kFnvOffset;
  for (std::size_t i = 0; i < seq.size(); ++i) h[i + 1] = hash_event(h[i], seq.events[i]);
  return h;
}

inline std::uint64_t content_hash(const ActionSequence& seq) {
  std::uint64_t h = kFnvOffset;
  for (const auto& e : seq.events) h = hash_event(h, e);
  return h;
}

}  // namespace appvae
