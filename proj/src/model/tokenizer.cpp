#include "interp/model/tokenizer.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <climits>
#include <fstream>
#include <sstream>

#include "interp/error.hpp"

namespace interp::model {

namespace {

using json = nlohmann::json;

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void append_utf8(std::string& out, char32_t cp) {
  if (cp < 0x80) {
    out.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else if (cp < 0x10000) {
    out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else {
    out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  }
}

// Decodes one code point starting at `i`; invalid bytes decode as themselves
// with length 1 so every byte is always consumed.
std::pair<char32_t, std::size_t> decode_utf8(std::string_view s, std::size_t i) {
  const auto b0 = static_cast<unsigned char>(s[i]);
  auto cont = [&](std::size_t k) {
    return i + k < s.size() && (static_cast<unsigned char>(s[i + k]) & 0xC0) == 0x80;
  };
  if (b0 < 0x80) return {b0, 1};
  if ((b0 & 0xE0) == 0xC0 && cont(1)) {
    return {static_cast<char32_t>(((b0 & 0x1F) << 6) | (s[i + 1] & 0x3F)), 2};
  }
  if ((b0 & 0xF0) == 0xE0 && cont(1) && cont(2)) {
    return {static_cast<char32_t>(((b0 & 0x0F) << 12) | ((s[i + 1] & 0x3F) << 6) | (s[i + 2] & 0x3F)), 3};
  }
  if ((b0 & 0xF8) == 0xF0 && cont(1) && cont(2) && cont(3)) {
    return {static_cast<char32_t>(((b0 & 0x07) << 18) | ((s[i + 1] & 0x3F) << 12) |
                                  ((s[i + 2] & 0x3F) << 6) | (s[i + 3] & 0x3F)),
            4};
  }
  return {0xFFFD, 1};
}

bool is_space(char32_t c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f' || c == 0x85 ||
         c == 0xA0 || c == 0x1680 || (c >= 0x2000 && c <= 0x200A) || c == 0x2028 || c == 0x2029 ||
         c == 0x202F || c == 0x205F || c == 0x3000;
}

bool is_number(char32_t c) {
  if (c >= '0' && c <= '9') return true;
  if (c < 0x80) return false;
  return c == 0xB2 || c == 0xB3 || c == 0xB9 || (c >= 0xBC && c <= 0xBE) ||
         (c >= 0x660 && c <= 0x669) || (c >= 0x6F0 && c <= 0x6F9) || (c >= 0x966 && c <= 0x96F) ||
         (c >= 0x2070 && c <= 0x2079) || (c >= 0x2080 && c <= 0x2089) ||
         (c >= 0x2150 && c <= 0x2189) || (c >= 0x2460 && c <= 0x249B) ||
         (c >= 0xFF10 && c <= 0xFF19);
}

// Approximation of \p{L}: exact for ASCII and Latin-1, range-based for the
// common alphabetic blocks beyond that.
bool is_letter(char32_t c) {
  if (c < 0x80) return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z');
  if (c == 0xAA || c == 0xB5 || c == 0xBA) return true;
  if (c >= 0xC0 && c <= 0x24F) return c != 0xD7 && c != 0xF7;
  if (c >= 0x250 && c <= 0x2AF) return true;
  if (c >= 0x370 && c <= 0x3FF) return c != 0x37E && c != 0x387 && c != 0x375;
  if (c >= 0x400 && c <= 0x52F) return !(c >= 0x482 && c <= 0x489);
  if (c >= 0x531 && c <= 0x587) return true;
  if (c >= 0x5D0 && c <= 0x5EA) return true;
  if (c >= 0x620 && c <= 0x64A) return true;
  if (c >= 0x904 && c <= 0x939) return true;
  if (c >= 0xE01 && c <= 0xE30) return true;
  if (c >= 0x10A0 && c <= 0x10FF) return true;
  if (c >= 0x1E00 && c <= 0x1FFF) return true;
  if (c >= 0x3041 && c <= 0x30FF) return c != 0x30FB;
  if (c >= 0x3400 && c <= 0x9FFF) return true;
  if (c >= 0xAC00 && c <= 0xD7A3) return true;
  if (c >= 0xF900 && c <= 0xFAFF) return true;
  if (c >= 0xFF21 && c <= 0xFF3A) return true;
  if (c >= 0xFF41 && c <= 0xFF5A) return true;
  if (c >= 0x20000 && c <= 0x2FA1F) return true;
  return false;
}

struct CodePoint {
  char32_t cp;
  std::size_t begin;
  std::size_t end;
};

std::vector<CodePoint> code_points(std::string_view text) {
  std::vector<CodePoint> out;
  std::size_t i = 0;
  while (i < text.size()) {
    auto [cp, len] = decode_utf8(text, i);
    out.push_back({cp, i, i + len});
    i += len;
  }
  return out;
}

}  // namespace

std::optional<int> Tokenizer::single_token(std::string_view text) const {
  auto toks = encode(text);
  if (toks.size() != 1) return std::nullopt;
  return toks.front().id;
}

std::string Tokenizer::decode(const std::vector<int>& ids) const {
  std::string out;
  for (int id : ids) out += token_text(id);
  return out;
}

const std::vector<std::string>& byte_to_unicode_table() {
  static const std::vector<std::string> table = [] {
    std::vector<int> bs;
    for (int b = '!'; b <= '~'; ++b) bs.push_back(b);
    for (int b = 0xA1; b <= 0xAC; ++b) bs.push_back(b);
    for (int b = 0xAE; b <= 0xFF; ++b) bs.push_back(b);
    std::array<int, 256> cs{};
    std::array<bool, 256> direct{};
    for (int b : bs) direct[b] = true;
    int n = 0;
    for (int b = 0; b < 256; ++b) {
      cs[b] = direct[b] ? b : 256 + n++;
    }
    std::vector<std::string> t(256);
    for (int b = 0; b < 256; ++b) append_utf8(t[b], static_cast<char32_t>(cs[b]));
    return t;
  }();
  return table;
}

std::vector<std::pair<std::size_t, std::size_t>> gpt2_pretokenize(std::string_view text) {
  const auto cps = code_points(text);
  const std::size_t n = cps.size();
  std::vector<std::pair<std::size_t, std::size_t>> spans;
  auto emit = [&](std::size_t a, std::size_t b) { spans.emplace_back(cps[a].begin, cps[b - 1].end); };
  auto cls_other = [](char32_t c) { return !is_space(c) && !is_letter(c) && !is_number(c); };

  std::size_t i = 0;
  while (i < n) {
    const char32_t c = cps[i].cp;
    // Contractions: 's 't 're 've 'm 'll 'd
    if (c == '\'' && i + 1 < n) {
      const char32_t c1 = cps[i + 1].cp;
      const char32_t c2 = i + 2 < n ? cps[i + 2].cp : 0;
      if (c1 == 's' || c1 == 't' || c1 == 'm' || c1 == 'd') {
        emit(i, i + 2);
        i += 2;
        continue;
      }
      if ((c1 == 'r' && c2 == 'e') || (c1 == 'v' && c2 == 'e') || (c1 == 'l' && c2 == 'l')) {
        emit(i, i + 3);
        i += 3;
        continue;
      }
    }
    // Optional single leading space followed by a letter / number / other run.
    std::size_t start = i;
    std::size_t j = i;
    if (c == ' ' && i + 1 < n && !is_space(cps[i + 1].cp)) j = i + 1;
    const char32_t head = cps[j].cp;
    if (is_letter(head)) {
      while (j < n && is_letter(cps[j].cp)) ++j;
      emit(start, j);
      i = j;
      continue;
    }
    if (is_number(head)) {
      while (j < n && is_number(cps[j].cp)) ++j;
      emit(start, j);
      i = j;
      continue;
    }
    if (cls_other(head)) {
      while (j < n && cls_other(cps[j].cp)) ++j;
      emit(start, j);
      i = j;
      continue;
    }
    // Whitespace: \s+(?!\S) then \s+
    std::size_t k = i;
    while (k < n && is_space(cps[k].cp)) ++k;
    if (k == n) {
      emit(i, k);
      i = k;
      continue;
    }
    if (k - i >= 2) {
      emit(i, k - 1);
      i = k - 1;
      continue;
    }
    emit(i, k);
    i = k;
  }
  return spans;
}

// ---------------------------------------------------------------------------

std::unique_ptr<BpeTokenizer> BpeTokenizer::from_vocab_merges(const std::filesystem::path& vocab_json,
                                                              const std::filesystem::path& merges_txt,
                                                              std::optional<std::string> bos_token) {
  std::unique_ptr<BpeTokenizer> tok(new BpeTokenizer());
  tok->flavor_ = Flavor::kByteLevel;
  const json vocab = json::parse(read_file(vocab_json));
  for (auto it = vocab.begin(); it != vocab.end(); ++it) tok->token_to_id_[it.key()] = it.value().get<int>();

  std::istringstream merges(read_file(merges_txt));
  std::string line;
  int rank = 0;
  while (std::getline(merges, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.rfind("#version", 0) == 0) continue;
    const auto sp = line.find(' ');
    if (sp == std::string::npos) continue;
    tok->merge_rank_[{line.substr(0, sp), line.substr(sp + 1)}] = rank++;
  }
  if (tok->token_to_id_.count("<|endoftext|>")) tok->special_tokens_["<|endoftext|>"] = tok->token_to_id_["<|endoftext|>"];
  tok->finalize(std::move(bos_token));
  return tok;
}

std::unique_ptr<BpeTokenizer> BpeTokenizer::from_tokenizer_json(const std::filesystem::path& path,
                                                                std::optional<std::string> bos_token) {
  const json doc = json::parse(read_file(path));
  const json& model = doc.at("model");
  if (model.value("type", std::string("BPE")) != "BPE") {
    throw ConfigError("unsupported tokenizer model type in " + path.string());
  }
  std::unique_ptr<BpeTokenizer> tok(new BpeTokenizer());
  const json& pre = doc.contains("pre_tokenizer") ? doc["pre_tokenizer"] : json();
  const bool byte_level = pre.is_object() && (pre.value("type", "") == "ByteLevel" ||
                                              pre.dump().find("ByteLevel") != std::string::npos);
  tok->flavor_ = byte_level ? Flavor::kByteLevel : Flavor::kMetaspace;
  tok->byte_fallback_ = model.value("byte_fallback", false);
  for (auto it = model.at("vocab").begin(); it != model.at("vocab").end(); ++it) {
    tok->token_to_id_[it.key()] = it.value().get<int>();
  }
  int rank = 0;
  for (const auto& m : model.at("merges")) {
    if (m.is_string()) {
      const auto s = m.get<std::string>();
      const auto sp = s.find(' ');
      tok->merge_rank_[{s.substr(0, sp), s.substr(sp + 1)}] = rank++;
    } else {
      tok->merge_rank_[{m.at(0).get<std::string>(), m.at(1).get<std::string>()}] = rank++;
    }
  }
  if (doc.contains("added_tokens")) {
    for (const auto& t : doc["added_tokens"]) {
      const auto content = t.at("content").get<std::string>();
      const int id = t.at("id").get<int>();
      tok->token_to_id_[content] = id;
      if (t.value("special", false)) tok->special_tokens_[content] = id;
    }
  }
  tok->finalize(std::move(bos_token));
  return tok;
}

void BpeTokenizer::finalize(std::optional<std::string> bos_token) {
  int max_id = -1;
  for (const auto& [k, v] : token_to_id_) max_id = std::max(max_id, v);
  id_to_token_.assign(max_id + 1, std::string());
  for (const auto& [k, v] : token_to_id_) id_to_token_[v] = k;
  if (bos_token) {
    auto it = token_to_id_.find(*bos_token);
    if (it == token_to_id_.end()) throw ConfigError("BOS token '" + *bos_token + "' not in vocabulary");
    bos_id_ = it->second;
  }
}

std::vector<std::string> BpeTokenizer::bpe(const std::string& word) const {
  // Initial symbols are UTF-8 code points of the (already mapped) word.
  std::vector<std::string> syms;
  for (std::size_t i = 0; i < word.size();) {
    auto [cp, len] = decode_utf8(word, i);
    syms.push_back(word.substr(i, len));
    i += len;
  }
  while (syms.size() > 1) {
    int best = INT_MAX;
    std::size_t best_i = 0;
    for (std::size_t i = 0; i + 1 < syms.size(); ++i) {
      auto it = merge_rank_.find({syms[i], syms[i + 1]});
      if (it != merge_rank_.end() && it->second < best) {
        best = it->second;
        best_i = i;
      }
    }
    if (best == INT_MAX) break;
    const std::string a = syms[best_i];
    const std::string b = syms[best_i + 1];
    std::vector<std::string> merged;
    merged.reserve(syms.size());
    for (std::size_t i = 0; i < syms.size();) {
      if (i + 1 < syms.size() && syms[i] == a && syms[i + 1] == b) {
        merged.push_back(a + b);
        i += 2;
      } else {
        merged.push_back(syms[i]);
        ++i;
      }
    }
    syms = std::move(merged);
  }
  return syms;
}

void BpeTokenizer::encode_byte_level(std::string_view text, std::vector<Token>& out) const {
  const auto& table = byte_to_unicode_table();
  for (auto [b, e] : gpt2_pretokenize(text)) {
    std::string mapped;
    // Map each byte; remember the source byte for every mapped code point.
    std::vector<std::size_t> src;
    for (std::size_t k = b; k < e; ++k) {
      mapped += table[static_cast<unsigned char>(text[k])];
      src.push_back(k);
    }
    std::size_t cursor = 0;  // index into src (one per byte)
    for (const auto& piece : bpe(mapped)) {
      // Each mapped code point corresponds to exactly one source byte.
      std::size_t n_cp = 0;
      for (std::size_t i = 0; i < piece.size();) {
        i += decode_utf8(piece, i).second;
        ++n_cp;
      }
      auto it = token_to_id_.find(piece);
      if (it == token_to_id_.end()) throw ValidationError("token piece not in vocabulary: " + piece);
      Token t;
      t.id = it->second;
      t.char_begin = src[cursor];
      t.char_end = src[cursor + n_cp - 1] + 1;
      t.text = std::string(text.substr(t.char_begin, t.char_end - t.char_begin));
      cursor += n_cp;
      out.push_back(std::move(t));
    }
  }
}

void BpeTokenizer::encode_metaspace(std::string_view text, std::vector<Token>& out) const {
  static const std::string kMeta = "\xE2\x96\x81";  // U+2581
  // Build the normalized string and a per-code-point source span.
  std::string norm;
  std::vector<std::pair<std::size_t, std::size_t>> spans;
  if (add_dummy_prefix_) {
    norm += kMeta;
    spans.emplace_back(0, 0);
  }
  for (const auto& cp : code_points(text)) {
    if (cp.cp == ' ') {
      norm += kMeta;
    } else {
      norm.append(text.substr(cp.begin, cp.end - cp.begin));
    }
    spans.emplace_back(cp.begin, cp.end);
  }
  std::size_t cursor = 0;
  for (const auto& piece : bpe(norm)) {
    std::size_t n_cp = 0;
    for (std::size_t i = 0; i < piece.size();) {
      i += decode_utf8(piece, i).second;
      ++n_cp;
    }
    const std::size_t cb = spans[cursor].first;
    const std::size_t ce = spans[cursor + n_cp - 1].second;
    cursor += n_cp;
    auto it = token_to_id_.find(piece);
    if (it != token_to_id_.end()) {
      out.push_back({it->second, std::string(text.substr(cb, ce - cb)), cb, ce});
      continue;
    }
    if (!byte_fallback_) throw ValidationError("token piece not in vocabulary: " + piece);
    for (unsigned char byte : piece) {
      char name[8];
      std::snprintf(name, sizeof(name), "<0x%02X>", byte);
      auto bt = token_to_id_.find(name);
      if (bt == token_to_id_.end()) throw ValidationError("missing byte-fallback token");
      out.push_back({bt->second, std::string(1, static_cast<char>(byte)), cb, ce});
    }
  }
}

std::vector<Token> BpeTokenizer::encode(std::string_view text) const {
  std::vector<Token> out;
  // Split on special tokens first; they are matched literally.
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t best = std::string_view::npos;
    std::string best_tok;
    for (const auto& [s, id] : special_tokens_) {
      const auto f = text.find(s, pos);
      if (f != std::string_view::npos && (f < best || (f == best && s.size() > best_tok.size()))) {
        best = f;
        best_tok = s;
      }
    }
    const std::size_t end = best == std::string_view::npos ? text.size() : best;
    if (end > pos) {
      std::vector<Token> part;
      const auto chunk = text.substr(pos, end - pos);
      if (flavor_ == Flavor::kByteLevel) {
        encode_byte_level(chunk, part);
      } else {
        encode_metaspace(chunk, part);
      }
      for (auto& t : part) {
        t.char_begin += pos;
        t.char_end += pos;
        out.push_back(std::move(t));
      }
    }
    if (best == std::string_view::npos) break;
    out.push_back({special_tokens_.at(best_tok), best_tok, best, best + best_tok.size()});
    pos = best + best_tok.size();
  }
  return out;
}

std::string BpeTokenizer::token_text(int id) const {
  if (id < 0 || id >= static_cast<int>(id_to_token_.size())) return "<unk:" + std::to_string(id) + ">";
  const std::string& tok = id_to_token_[id];
  if (special_tokens_.count(tok)) return tok;
  if (flavor_ == Flavor::kMetaspace) {
    if (tok.size() == 6 && tok.rfind("<0x", 0) == 0 && tok.back() == '>') {
      return std::string(1, static_cast<char>(std::stoi(tok.substr(3, 2), nullptr, 16)));
    }
    std::string out;
    static const std::string kMeta = "\xE2\x96\x81";
    for (std::size_t i = 0; i < tok.size();) {
      if (tok.compare(i, 3, kMeta) == 0) {
        out.push_back(' ');
        i += 3;
      } else {
        out.push_back(tok[i]);
        ++i;
      }
    }
    return out;
  }
  static const std::unordered_map<std::string, unsigned char> inverse = [] {
    std::unordered_map<std::string, unsigned char> m;
    const auto& t = byte_to_unicode_table();
    for (int b = 0; b < 256; ++b) m[t[b]] = static_cast<unsigned char>(b);
    return m;
  }();
  std::string out;
  for (std::size_t i = 0; i < tok.size();) {
    const auto len = decode_utf8(tok, i).second;
    auto it = inverse.find(tok.substr(i, len));
    if (it != inverse.end()) {
      out.push_back(static_cast<char>(it->second));
    } else {
      out.append(tok.substr(i, len));
    }
    i += len;
  }
  return out;
}

// ---------------------------------------------------------------------------

std::vector<Token> ByteTokenizer::encode(std::string_view text) const {
  std::vector<Token> out;
  out.reserve(text.size());
  for (std::size_t i = 0; i < text.size(); ++i) {
    out.push_back({static_cast<unsigned char>(text[i]), std::string(1, text[i]), i, i + 1});
  }
  return out;
}

std::string ByteTokenizer::token_text(int id) const {
  if (id == 256) return "<bos>";
  if (id < 0 || id > 255) return "<unk:" + std::to_string(id) + ">";
  return std::string(1, static_cast<char>(id));
}

}  // namespace interp::model
