#pragma once

// Synthetic member / non-member corpora drawn from a sparse Markov source.
//
// Each token has `branching` successors with fixed, decaying weights. A
// sequence additionally draws its own noise rate in [0, noise_max]; at a
// noisy step the next token is uniform over the vocabulary. Non-members
// take each transition from an independently drawn chain with probability
// distribution_shift, which models a pool drawn from a shifted distribution.

#include <cstdint>
#include <string>
#include <vector>

namespace lumia::toy {

using TokenSeq = std::vector<std::uint32_t>;

struct CorpusSpec {
  std::size_t member_count = 500;
  std::size_t nonmember_count = 500;
  std::size_t min_length = 16;
  std::size_t max_length = 32;
  std::size_t repetition_factor = 1;  // copies of each member in training data
  double distribution_shift = 0.0;    // [0, 1]
  std::size_t vocab_size = 256;
  std::size_t branching = 4;
  double noise_max = 0.5;
  std::uint64_t seed = 0;

  void validate() const;
};

struct Corpus {
  std::vector<TokenSeq> members;
  std::vector<TokenSeq> nonmembers;
};

Corpus generate_corpus(const CorpusSpec& spec);

/// Extra sequences from the member distribution, disjoint from the corpus
/// members, for training a reference model.
std::vector<TokenSeq> generate_reference_sequences(const CorpusSpec& spec, std::size_t count,
                                                   const Corpus& exclude);

/// Members, each repeated repetition_factor times, in member order.
std::vector<TokenSeq> training_sequences(const Corpus& corpus, std::size_t repetition_factor);

/// Stable pronounceable word for a token id (lowercase alphanumeric).
std::string token_word(std::uint32_t token);
/// Space-joined words.
std::string detokenize(const TokenSeq& tokens);
/// Inverse of detokenize for words produced by token_word.
TokenSeq tokenize_words_to_ids(const std::string& text, std::size_t vocab_size);

}  // namespace lumia::toy
