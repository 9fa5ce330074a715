#pragma once

#include <cstddef>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace interp::model {

/// One token of an encoded string. `char_begin`/`char_end` are byte offsets
/// into the source text; special tokens that were not in the text have an
/// empty span at 0.
struct Token {
  int id = 0;
  std::string text;
  std::size_t char_begin = 0;
  std::size_t char_end = 0;
};

class Tokenizer {
 public:
  virtual ~Tokenizer() = default;

  /// Encodes without adding any special tokens.
  virtual std::vector<Token> encode(std::string_view text) const = 0;

  /// Display string of a single token id (decoded bytes for byte-level BPE).
  virtual std::string token_text(int id) const = 0;

  virtual int vocab_size() const = 0;
  virtual std::optional<int> bos_id() const = 0;

  /// The id of `text` if it encodes to exactly one token.
  std::optional<int> single_token(std::string_view text) const;

  std::string decode(const std::vector<int>& ids) const;
};

/// Byte-pair encoding tokenizer.
///
/// Two flavours are supported: byte-level (GPT-2, GPT-NeoX) with the GPT-2
/// pre-tokenization pattern, and SentencePiece-style metaspace BPE with
/// byte fallback (LLaMA tokenizer.json files).
class BpeTokenizer final : public Tokenizer {
 public:
  enum class Flavor { kByteLevel, kMetaspace };

  /// GPT-2 layout: vocab.json + merges.txt.
  static std::unique_ptr<BpeTokenizer> from_vocab_merges(const std::filesystem::path& vocab_json,
                                                         const std::filesystem::path& merges_txt,
                                                         std::optional<std::string> bos_token);

  /// Hugging Face tokenizer.json with a BPE model.
  static std::unique_ptr<BpeTokenizer> from_tokenizer_json(const std::filesystem::path& path,
                                                           std::optional<std::string> bos_token);

  std::vector<Token> encode(std::string_view text) const override;
  std::string token_text(int id) const override;
  int vocab_size() const override { return static_cast<int>(id_to_token_.size()); }
  std::optional<int> bos_id() const override { return bos_id_; }

  Flavor flavor() const noexcept { return flavor_; }

 private:
  BpeTokenizer() = default;

  void finalize(std::optional<std::string> bos_token);
  std::vector<std::string> bpe(const std::string& word) const;
  void encode_byte_level(std::string_view text, std::vector<Token>& out) const;
  void encode_metaspace(std::string_view text, std::vector<Token>& out) const;

  struct PairHash {
    std::size_t operator()(const std::pair<std::string, std::string>& p) const noexcept {
      return std::hash<std::string>{}(p.first) * 31u ^ std::hash<std::string>{}(p.second);
    }
  };

  Flavor flavor_ = Flavor::kByteLevel;
  std::unordered_map<std::string, int> token_to_id_;
  std::vector<std::string> id_to_token_;
  std::unordered_map<std::pair<std::string, std::string>, int, PairHash> merge_rank_;
  std::unordered_map<std::string, int> special_tokens_;
  std::optional<int> bos_id_;
  bool byte_fallback_ = false;
  bool add_dummy_prefix_ = true;
};

/// Every byte is one token (ids 0..255) plus a BOS token with id 256.
/// Used by small synthetic models and for character-level inspection.
class ByteTokenizer final : public Tokenizer {
 public:
  std::vector<Token> encode(std::string_view text) const override;
  std::string token_text(int id) const override;
  int vocab_size() const override { return 257; }
  std::optional<int> bos_id() const override { return 256; }
};

/// GPT-2 byte <-> unicode mapping used by byte-level BPE vocabularies.
const std::vector<std::string>& byte_to_unicode_table();

/// Splits text using the GPT-2 pre-tokenization rules. Returns byte spans.
std::vector<std::pair<std::size_t, std::size_t>> gpt2_pretokenize(std::string_view text);

}  // namespace interp::model
