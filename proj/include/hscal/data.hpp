#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <tuple>
#include <vector>

namespace hscal {

struct Sample {
  std::string text;
  std::size_t label = 0;
  bool operator==(const Sample&) const = default;
};

struct Dataset {
  std::vector<Sample> samples;
  std::vector<std::string> vocab;  // label names, index = label id

  std::size_t size() const noexcept { return samples.size(); }
  std::size_t num_labels() const noexcept { return vocab.size(); }
  std::vector<std::string> texts() const;
  std::vector<std::size_t> labels() const;
  std::vector<std::size_t> label_counts() const;
  // Checks label ids and vocabulary uniqueness.
  void validate() const;
  bool operator==(const Dataset&) const = default;
};

// One JSON object per line with string fields "text" and "label". Label ids
// follow first-occurrence order. Blank lines are skipped.
Dataset load_jsonl(std::istream& in);
Dataset load_jsonl(const std::filesystem::path& path);
void write_jsonl(const Dataset& ds, std::ostream& out);
void write_jsonl(const Dataset& ds, const std::filesystem::path& path);

// Re-expresses `ds` labels in `vocab` order. Unknown names raise DataError.
Dataset remap_labels(const Dataset& ds, const std::vector<std::string>& vocab);

struct SplitSpec {
  double train = 0.8;
  double dev = 0.1;
  double test = 0.1;
  std::uint64_t seed = 0;

  void validate() const;
};

struct Splits {
  Dataset train;
  Dataset dev;
  Dataset test;
};

// Seeded shuffle, then contiguous cuts: dev and test take floor(fraction * N),
// train takes the remainder. All parts share the parent vocabulary.
Splits split(const Dataset& ds, const SplitSpec& spec);

// round(x) with halves rounded up.
std::size_t round_half_up(double x);

// Relabels exactly round_half_up(fraction * N) samples, chosen uniformly
// without replacement, each to a uniform draw over the other K - 1 labels.
Dataset inject_noise(const Dataset& ds, double fraction, std::uint64_t seed);

struct SynthSpec {
  std::size_t k = 8;
  std::size_t n = 1000;
  // Probability that a word is drawn from a uniformly chosen class pool
  // (possibly the sample's own) instead of its own pool.
  double noise = 0.0;
  // Class prior ratio between consecutive labels; 1 gives uniform priors.
  double decay = 0.7;
  std::size_t pool_size = 12;
  std::size_t min_words = 4;
  std::size_t max_words = 10;
  std::uint64_t seed = 0;

  void validate() const;
};

// Keyword-bag text classification corpus. Every label appears at least once
// when n >= k; remaining samples follow the class priors.
Dataset synth_gaussian_text(const SynthSpec& spec);

}  // namespace hscal
