#include "lumia/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>
#include <unordered_map>

#include "lumia/error.hpp"
#include "lumia/seed.hpp"

namespace lumia::toy {
namespace {

struct Chain {
  std::vector<std::vector<std::uint32_t>> successors;
  std::vector<double> cumulative;  // shared decaying weights
};

Chain make_chain(const CorpusSpec& spec, std::uint64_t seed) {
  Rng rng(seed);
  Chain c;
  c.successors.resize(spec.vocab_size);
  for (auto& succ : c.successors) {
    while (succ.size() < spec.branching) {
      const auto t = static_cast<std::uint32_t>(rng.below(spec.vocab_size));
      if (std::find(succ.begin(), succ.end(), t) == succ.end()) succ.push_back(t);
    }
  }
  double total = 0.0;
  for (std::size_t i = 0; i < spec.branching; ++i) {
    total += 1.0 / static_cast<double>(i + 1);
    c.cumulative.push_back(total);
  }
  for (auto& w : c.cumulative) w /= total;
  return c;
}

std::uint32_t step(const Chain& chain, std::uint32_t cur, Rng& rng) {
  const double u = rng.uniform();
  std::size_t k = 0;
  while (k + 1 < chain.cumulative.size() && u >= chain.cumulative[k]) ++k;
  return chain.successors[cur][k];
}

TokenSeq sample_sequence(const CorpusSpec& spec, const Chain& base, const Chain* shifted, double shift, Rng& rng) {
  const std::size_t len = spec.min_length + static_cast<std::size_t>(rng.below(spec.max_length - spec.min_length + 1));
  const double noise = rng.uniform() * spec.noise_max;
  TokenSeq seq;
  seq.reserve(len);
  seq.push_back(static_cast<std::uint32_t>(rng.below(spec.vocab_size)));
  while (seq.size() < len) {
    if (rng.bernoulli(noise)) {
      seq.push_back(static_cast<std::uint32_t>(rng.below(spec.vocab_size)));
      continue;
    }
    const Chain& chain = (shifted != nullptr && rng.bernoulli(shift)) ? *shifted : base;
    seq.push_back(step(chain, seq.back(), rng));
  }
  return seq;
}

constexpr const char* kSyllables[16] = {"ka", "lo", "mi", "nu", "pe", "ra", "si", "to",
                                        "vu", "be", "do", "fi", "gu", "ha", "je", "zo"};

}  // namespace

void CorpusSpec::validate() const {
  if (member_count < 2 || nonmember_count < 2) throw ValidationError("corpus needs at least 2 members and 2 non-members");
  if (repetition_factor < 1) throw ValidationError("repetition_factor must be >= 1");
  if (!(distribution_shift >= 0.0 && distribution_shift <= 1.0)) {
    throw ValidationError("distribution_shift must be in [0, 1]");
  }
  if (min_length < 2 || max_length < min_length) throw ValidationError("sequence length range must satisfy 2 <= min <= max");
  if (vocab_size < 2) throw ValidationError("vocab_size must be >= 2");
  if (branching < 1 || branching > vocab_size) throw ValidationError("branching must be in [1, vocab_size]");
  if (!(noise_max >= 0.0 && noise_max <= 1.0)) throw ValidationError("noise_max must be in [0, 1]");
}

Corpus generate_corpus(const CorpusSpec& spec) {
  spec.validate();
  const Chain base = make_chain(spec, derive_seed(spec.seed, "corpus.chain"));
  const Chain shifted = make_chain(spec, derive_seed(spec.seed, "corpus.shifted_chain"));
  Corpus c;
  Rng member_rng(derive_seed(spec.seed, "corpus.members"));
  Rng nonmember_rng(derive_seed(spec.seed, "corpus.nonmembers"));
  for (std::size_t i = 0; i < spec.member_count; ++i) {
    c.members.push_back(sample_sequence(spec, base, nullptr, 0.0, member_rng));
  }
  for (std::size_t i = 0; i < spec.nonmember_count; ++i) {
    c.nonmembers.push_back(sample_sequence(spec, base, &shifted, spec.distribution_shift, nonmember_rng));
  }
  return c;
}

std::vector<TokenSeq> generate_reference_sequences(const CorpusSpec& spec, std::size_t count, const Corpus& exclude) {
  spec.validate();
  const Chain base = make_chain(spec, derive_seed(spec.seed, "corpus.chain"));
  std::set<TokenSeq> taken(exclude.members.begin(), exclude.members.end());
  taken.insert(exclude.nonmembers.begin(), exclude.nonmembers.end());
  Rng rng(derive_seed(spec.seed, "corpus.reference"));
  std::vector<TokenSeq> out;
  out.reserve(count);
  while (out.size() < count) {
    auto seq = sample_sequence(spec, base, nullptr, 0.0, rng);
    if (taken.insert(seq).second) out.push_back(std::move(seq));
  }
  return out;
}

std::vector<TokenSeq> training_sequences(const Corpus& corpus, std::size_t repetition_factor) {
  if (repetition_factor < 1) throw ValidationError("repetition_factor must be >= 1");
  std::vector<TokenSeq> out;
  out.reserve(corpus.members.size() * repetition_factor);
  for (const auto& m : corpus.members) {
    for (std::size_t r = 0; r < repetition_factor; ++r) out.push_back(m);
  }
  return out;
}

std::string token_word(std::uint32_t token) {
  std::string w = kSyllables[token % 16];
  w += kSyllables[(token / 16) % 16];
  for (std::uint32_t rest = token / 256; rest > 0; rest /= 16) w += kSyllables[rest % 16];
  return w;
}

std::string detokenize(const TokenSeq& tokens) {
  std::string s;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) s += ' ';
    s += token_word(tokens[i]);
  }
  return s;
}

TokenSeq tokenize_words_to_ids(const std::string& text, std::size_t vocab_size) {
  std::unordered_map<std::string, std::uint32_t> lookup;
  lookup.reserve(vocab_size);
  for (std::uint32_t t = 0; t < vocab_size; ++t) lookup.emplace(token_word(t), t);
  TokenSeq out;
  std::istringstream in(text);
  std::string word;
  while (in >> word) {
    auto it = lookup.find(word);
    if (it == lookup.end()) throw ValidationError("word '" + word + "' is not in the toy vocabulary");
    out.push_back(it->second);
  }
  return out;
}

}  // namespace lumia::toy
