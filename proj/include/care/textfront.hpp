// Copyright 2026 The CARE Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef CARE_TEXTFRONT_HPP_
#define CARE_TEXTFRONT_HPP_

#include <map>
#include <string>
#include <vector>

#include "care/autograd.hpp"
#include "care/io.hpp"
#include "care/params.hpp"

namespace care::text {

inline constexpr int kPad = 0;
inline constexpr int kBos = 1;
inline constexpr int kLatent = 2;
inline constexpr int kNumSpecial = 3;

// Closed word-level vocabulary. Ids are dense; specials take 0..2 and words
// follow in sorted order, so the vocab is independent of corpus order.
class Vocab {
 public:
  static Vocab build(const std::vector<std::string>& instructions);
  static Vocab from_json(const io::json& j);
  io::json to_json() const;

  int size() const { return static_cast<int>(tokens_.size()); }
  // InputError for out-of-vocabulary words.
  int id(const std::string& word) const;
  bool contains(const std::string& word) const { return ids_.count(word) != 0; }
  const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  bool operator==(const Vocab& o) const { return tokens_ == o.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::map<std::string, int> ids_;
};

std::vector<std::string> split_words(const std::string& text);

struct Prompt {
  std::string text;
  int n_latent = 4;
};

struct TokenizedPrompt {
  std::vector<int> ids;
  // Indices into `ids`; always the trailing n_latent positions.
  std::vector<int> placeholder_positions;
};

// [BOS] + word ids + n_latent x [LATENT].
TokenizedPrompt tokenize(const Prompt& prompt, const Vocab& vocab);
// Words only (specials dropped), joined by single spaces.
std::string detokenize(const std::vector<int>& ids, const Vocab& vocab);

struct TextFeatures {
  Tensor embeddings;  // L x D
  std::vector<int> placeholder_positions;
};

// Token table plus learned positional table over text positions.
struct TextEmbedding {
  Param* table = nullptr;  // |V| x D
  Param* pos = nullptr;    // max_len x D
  int max_len = 0;

  static TextEmbedding make(ParamStore& store, const std::string& name, int vocab_size,
                            int max_len, int dim, Rng& rng);
  static TextEmbedding bind(ParamStore& store, const std::string& name);

  // Batched lookup: every row of `ids` must have the same length L.
  // Returns (batch * L) x D.
  ag::Var operator()(ag::Graph& g, const std::vector<std::vector<int>>& ids) const;
  TextFeatures embed(const TokenizedPrompt& prompt) const;
};

}  // namespace care::text

#endif  // CARE_TEXTFRONT_HPP_
