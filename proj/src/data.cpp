#include "hscal/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include <json.hpp>

#include "hscal/error.hpp"
#include "hscal/numerics.hpp"

namespace hscal {

std::vector<std::string> Dataset::texts() const {
  std::vector<std::string> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(s.text);
  return out;
}

std::vector<std::size_t> Dataset::labels() const {
  std::vector<std::size_t> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(s.label);
  return out;
}

std::vector<std::size_t> Dataset::label_counts() const {
  std::vector<std::size_t> c(vocab.size(), 0);
  for (const auto& s : samples) ++c.at(s.label);
  return c;
}

void Dataset::validate() const {
  std::unordered_set<std::string> seen;
  for (const auto& v : vocab)
    if (!seen.insert(v).second) throw DataError("duplicate label name '" + v + "'");
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].label >= vocab.size()) throw DataError("sample " + std::to_string(i) + " has label id out of range");
  }
}

Dataset load_jsonl(std::istream& in) {
  Dataset ds;
  std::unordered_map<std::string, std::size_t> ids;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(std::string("invalid JSON: ") + e.what(), lineno);
    }
    if (!j.is_object()) throw ParseError("expected a JSON object", lineno);
    auto text = j.find("text");
    auto label = j.find("label");
    if (text == j.end() || !text->is_string()) throw ParseError("missing string field \"text\"", lineno);
    if (label == j.end() || !label->is_string()) throw ParseError("missing string field \"label\"", lineno);
    const auto& name = label->get_ref<const std::string&>();
    auto [it, inserted] = ids.try_emplace(name, ds.vocab.size());
    if (inserted) ds.vocab.push_back(name);
    ds.samples.push_back({text->get<std::string>(), it->second});
  }
  return ds;
}

Dataset load_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  return load_jsonl(in);
}

void write_jsonl(const Dataset& ds, std::ostream& out) {
  for (const auto& s : ds.samples) {
    nlohmann::json j = {{"text", s.text}, {"label", ds.vocab.at(s.label)}};
    out << j.dump() << '\n';
  }
}

void write_jsonl(const Dataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  write_jsonl(ds, out);
  if (!out) throw IoError("write failed: " + path.string());
}

Dataset remap_labels(const Dataset& ds, const std::vector<std::string>& vocab) {
  std::unordered_map<std::string, std::size_t> ids;
  for (std::size_t i = 0; i < vocab.size(); ++i) ids.emplace(vocab[i], i);
  Dataset out{{}, vocab};
  out.samples.reserve(ds.size());
  for (const auto& s : ds.samples) {
    const auto& name = ds.vocab.at(s.label);
    auto it = ids.find(name);
    if (it == ids.end()) throw DataError("label '" + name + "' is not in the model vocabulary");
    out.samples.push_back({s.text, it->second});
  }
  return out;
}

void SplitSpec::validate() const {
  if (train < 0.0 || dev < 0.0 || test < 0.0) throw ConfigError("split fractions must be >= 0");
  if (std::abs(train + dev + test - 1.0) > 1e-9) throw ConfigError("split fractions must sum to 1");
  if (!(train > 0.0)) throw ConfigError("train fraction must be > 0");
}

std::size_t round_half_up(double x) { return static_cast<std::size_t>(std::floor(x + 0.5)); }

Splits split(const Dataset& ds, const SplitSpec& spec) {
  spec.validate();
  const std::size_t n = ds.size();
  const auto n_dev = static_cast<std::size_t>(std::floor(spec.dev * static_cast<double>(n)));
  const auto n_test = static_cast<std::size_t>(std::floor(spec.test * static_cast<double>(n)));
  const std::size_t n_train = n - n_dev - n_test;
  if (n >= 3 && ((spec.dev > 0.0 && n_dev == 0) || (spec.test > 0.0 && n_test == 0) || n_train == 0)) {
    throw ConfigError("split leaves a part with positive fraction empty (N=" + std::to_string(n) + ")");
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  // A train-only split keeps the input order.
  if (n_train < n) {
    Rng rng(spec.seed);
    rng.shuffle(order);
  }
  Splits out{{{}, ds.vocab}, {{}, ds.vocab}, {{}, ds.vocab}};
  for (std::size_t t = 0; t < n; ++t) {
    Dataset& part = t < n_train ? out.train : (t < n_train + n_dev ? out.dev : out.test);
    part.samples.push_back(ds.samples[order[t]]);
  }
  return out;
}

Dataset inject_noise(const Dataset& ds, double fraction, std::uint64_t seed) {
  if (!(fraction >= 0.0 && fraction <= 1.0)) throw ConfigError("noise fraction must lie in [0, 1]");
  const std::size_t k = ds.num_labels();
  const std::size_t n = ds.size();
  const std::size_t flips = std::min(n, round_half_up(fraction * static_cast<double>(n)));
  if (flips > 0 && k < 2) throw ConfigError("label noise needs at least two labels");
  Dataset out = ds;
  Rng rng(seed);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  // Partial Fisher-Yates: the first `flips` positions are the selection.
  for (std::size_t t = 0; t < flips; ++t) {
    const std::size_t j = t + rng.uniform_index(n - t);
    std::swap(order[t], order[j]);
  }
  for (std::size_t t = 0; t < flips; ++t) {
    auto& s = out.samples[order[t]];
    const std::size_t r = rng.uniform_index(k - 1);
    s.label = r < s.label ? r : r + 1;
  }
  return out;
}

void SynthSpec::validate() const {
  if (k < 2) throw ConfigError("synth: k must be >= 2");
  if (n < k) throw ConfigError("synth: n must be >= k");
  if (!(noise >= 0.0 && noise <= 1.0)) throw ConfigError("synth: noise must lie in [0, 1]");
  if (!(decay > 0.0 && decay <= 1.0)) throw ConfigError("synth: decay must lie in (0, 1]");
  if (pool_size < 1 || min_words < 1 || min_words > max_words) throw ConfigError("synth: bad word counts");
}

namespace {

std::string make_word(Rng& rng) {
  static constexpr char kConsonants[] = "bcdfghjklmnprstvwz";
  static constexpr char kVowels[] = "aeiou";
  const std::size_t syllables = 2 + rng.uniform_index(2);
  std::string w;
  for (std::size_t s = 0; s < syllables; ++s) {
    w += kConsonants[rng.uniform_index(sizeof kConsonants - 1)];
    w += kVowels[rng.uniform_index(sizeof kVowels - 1)];
  }
  return w;
}

}  // namespace

Dataset synth_gaussian_text(const SynthSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);

  // Distinct pseudo-words across all pools.
  std::unordered_set<std::string> used;
  std::vector<std::vector<std::string>> pools(spec.k);
  for (auto& pool : pools) {
    while (pool.size() < spec.pool_size) {
      std::string w = make_word(rng);
      if (used.insert(w).second) pool.push_back(std::move(w));
    }
  }

  std::vector<double> cdf(spec.k);
  double acc = 0.0;
  for (std::size_t c = 0; c < spec.k; ++c) {
    acc += std::pow(spec.decay, static_cast<double>(c));
    cdf[c] = acc;
  }
  for (double& v : cdf) v /= acc;

  Dataset ds;
  for (std::size_t c = 0; c < spec.k; ++c) ds.vocab.push_back("class_" + std::to_string(c));
  ds.samples.reserve(spec.n);
  for (std::size_t i = 0; i < spec.n; ++i) {
    std::size_t label;
    if (i < spec.k) {
      label = i;
    } else {
      const double u = rng.uniform();
      label = static_cast<std::size_t>(std::upper_bound(cdf.begin(), cdf.end(), u) - cdf.begin());
      label = std::min(label, spec.k - 1);
    }
    const std::size_t words = spec.min_words + rng.uniform_index(spec.max_words - spec.min_words + 1);
    std::string text;
    for (std::size_t w = 0; w < words; ++w) {
      std::size_t pool = label;
      if (rng.uniform() < spec.noise) pool = rng.uniform_index(spec.k);
      if (!text.empty()) text += ' ';
      text += pools[pool][rng.uniform_index(spec.pool_size)];
    }
    ds.samples.push_back({std::move(text), label});
  }
  // The first k samples carry one label each; shuffle so position carries no signal.
  rng.shuffle(ds.samples);
  return ds;
}

}  // namespace hscal
