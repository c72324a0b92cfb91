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

#include "care/textfront.hpp"

#include <algorithm>
#include <cctype>
#include <set>
#include <sstream>

#include "care/rng.hpp"

namespace care::text {

std::vector<std::string> split_words(const std::string& text) {
  std::string lower = text;
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  std::istringstream ss(lower);
  std::vector<std::string> out;
  for (std::string w; ss >> w;) out.push_back(w);
  return out;
}

Vocab Vocab::build(const std::vector<std::string>& instructions) {
  if (instructions.empty()) throw InputError("cannot build a vocabulary from an empty corpus");
  std::set<std::string> words;
  for (const auto& s : instructions) {
    for (auto& w : split_words(s)) words.insert(std::move(w));
  }
  Vocab v;
  v.tokens_ = {"<pad>", "<bos>", "<latent>"};
  v.tokens_.insert(v.tokens_.end(), words.begin(), words.end());
  for (std::size_t i = 0; i < v.tokens_.size(); ++i) v.ids_[v.tokens_[i]] = static_cast<int>(i);
  return v;
}

Vocab Vocab::from_json(const io::json& j) {
  Vocab v;
  try {
    v.tokens_ = j.get<std::vector<std::string>>();
  } catch (const io::json::exception& e) {
    throw IoError(std::string("vocab: ") + e.what());
  }
  if (v.tokens_.size() < kNumSpecial || v.tokens_[kPad] != "<pad>" ||
      v.tokens_[kBos] != "<bos>" || v.tokens_[kLatent] != "<latent>") {
    throw IoError("vocab: special tokens missing");
  }
  for (std::size_t i = 0; i < v.tokens_.size(); ++i) v.ids_[v.tokens_[i]] = static_cast<int>(i);
  return v;
}

io::json Vocab::to_json() const { return tokens_; }

int Vocab::id(const std::string& word) const {
  auto it = ids_.find(word);
  if (it == ids_.end() || it->second < kNumSpecial) {
    throw InputError("word '" + word + "' is not in the vocabulary");
  }
  return it->second;
}

TokenizedPrompt tokenize(const Prompt& prompt, const Vocab& vocab) {
  if (prompt.n_latent < 1) throw ConfigError("n_latent must be >= 1");
  TokenizedPrompt t;
  t.ids.push_back(kBos);
  for (const auto& w : split_words(prompt.text)) t.ids.push_back(vocab.id(w));
  for (int i = 0; i < prompt.n_latent; ++i) {
    t.placeholder_positions.push_back(static_cast<int>(t.ids.size()));
    t.ids.push_back(kLatent);
  }
  return t;
}

std::string detokenize(const std::vector<int>& ids, const Vocab& vocab) {
  std::string out;
  for (int id : ids) {
    if (id < kNumSpecial) continue;
    if (!out.empty()) out += ' ';
    out += vocab.token(id);
  }
  return out;
}

TextEmbedding TextEmbedding::make(ParamStore& store, const std::string& name, int vocab_size,
                                  int max_len, int dim, Rng& rng) {
  TextEmbedding e;
  e.table = &store.add(name + ".tokens", normal_tensor(rng, vocab_size, dim, 0.5f));
  e.pos = &store.add(name + ".positions", normal_tensor(rng, max_len, dim, 0.5f));
  e.max_len = max_len;
  return e;
}

TextEmbedding TextEmbedding::bind(ParamStore& store, const std::string& name) {
  TextEmbedding e;
  e.table = &store.at(name + ".tokens");
  e.pos = &store.at(name + ".positions");
  e.max_len = static_cast<int>(e.pos->value.rows());
  return e;
}

ag::Var TextEmbedding::operator()(ag::Graph& g, const std::vector<std::vector<int>>& ids) const {
  if (ids.empty()) throw ShapeError("text embedding: empty batch");
  const std::size_t len = ids.front().size();
  if (len == 0 || static_cast<int>(len) > max_len) {
    throw ShapeError("text embedding: sequence length " + std::to_string(len) +
                     " outside [1, " + std::to_string(max_len) + "]");
  }
  std::vector<int> flat;
  flat.reserve(ids.size() * len);
  for (const auto& row : ids) {
    if (row.size() != len) throw ShapeError("text embedding: ragged batch");
    for (int id : row) {
      if (id < 0 || id >= table->value.rows()) {
        throw ShapeError("token id " + std::to_string(id) + " outside vocabulary of " +
                         std::to_string(table->value.rows()));
      }
      flat.push_back(id);
    }
  }
  // Positions count from the first real token so left padding is invisible.
  std::vector<int> positions;
  positions.reserve(flat.size());
  for (const auto& row : ids) {
    const auto lead = std::find_if(row.begin(), row.end(), [](int id) { return id != kPad; });
    const int pad = static_cast<int>(lead - row.begin());
    for (std::size_t i = 0; i < len; ++i) positions.push_back(std::max(0, static_cast<int>(i) - pad));
  }
  ag::Var tok = ag::gather_rows(g, g.param(*table), std::move(flat));
  ag::Var pe = ag::gather_rows(g, g.param(*pos), std::move(positions));
  return ag::add(g, tok, pe);
}

TextFeatures TextEmbedding::embed(const TokenizedPrompt& prompt) const {
  ag::Graph g;
  g.set_grad_enabled(false);
  TextFeatures f;
  f.embeddings = (*this)(g, {prompt.ids})->value;
  f.placeholder_positions = prompt.placeholder_positions;
  return f;
}

}  // namespace care::text
