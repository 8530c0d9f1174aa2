#pragma once

#include <filesystem>
#include <string>
#include <unordered_map>
#include <vector>

#include "seattn/nn.hpp"
#include "seattn/tensor.hpp"

namespace seattn {

// Token vocabulary. Ids 0..3 are reserved specials; PAD is always 0.
// Serialized as UTF-8 text, one token per line, line number = id.
struct Vocab {
  static constexpr int64_t kPad = 0;
  static constexpr int64_t kUnk = 1;
  static constexpr int64_t kBos = 2;
  static constexpr int64_t kEos = 3;

  std::vector<std::string> id_to_token;
  std::unordered_map<std::string, int64_t> token_to_id;

  static Vocab from_tokens(const std::vector<std::string>& tokens);
  int64_t size() const { return static_cast<int64_t>(id_to_token.size()); }
  int64_t id(const std::string& token) const;  // kUnk when unknown
  bool contains(const std::string& token) const { return token_to_id.count(token) > 0; }

  void save(const std::filesystem::path& file) const;
  static Vocab load(const std::filesystem::path& file);
  uint64_t hash() const;  // FNV-1a over the serialized form
};

// Lowercase, whitespace-split, OOV -> UNK, BOS/EOS wrapped, padded/truncated
// to max_len (EOS survives truncation).
std::vector<int64_t> tokenize(const std::string& caption, const Vocab& vocab, int64_t max_len = 16);

struct TextEncoderConfig {
  int64_t vocab_size = 0;
  int64_t embed_dim = 64;
  int64_t hidden_dim = 128;  // per direction; word features are 2*hidden
  int64_t max_len = 16;
};

struct TextEncoding {
  Tensor words;     // (N, L, 2H); PAD rows exactly zero
  Tensor sentence;  // (N, 2H) = concat(final forward state, final backward state)
  Tensor mask;      // (N, L) 0/1, detached
};

// Single-layer bi-directional LSTM over learned embeddings. PAD steps carry
// the previous state through unchanged, so the "final" forward state is the
// state at the last real token.
class TextEncoder {
 public:
  TextEncoder(const TextEncoderConfig& cfg, Rng& rng, DType dt);

  TextEncoding encode(const std::vector<std::vector<int64_t>>& tokens) const;
  nn::ParamList parameters(const std::string& prefix) const;
  const TextEncoderConfig& config() const { return cfg_; }

  // Direction weights, exposed so tests can tie/swap them.
  struct Direction {
    Tensor w_ih;  // (E, 4H)
    Tensor w_hh;  // (H, 4H)
    Tensor bias;  // (4H)
  };
  Direction& forward_weights() { return fwd_; }
  Direction& backward_weights() { return bwd_; }
  Tensor& embedding_weight() { return embed_; }

 private:
  std::pair<Tensor, Tensor> run_direction(const Direction& dir, const std::vector<Tensor>& steps,
                                          const std::vector<Tensor>& masks, bool reversed) const;

  TextEncoderConfig cfg_;
  DType dt_;
  Tensor embed_;  // (V, E)
  Direction fwd_;
  Direction bwd_;
};

}  // namespace seattn
