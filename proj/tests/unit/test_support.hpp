#pragma once

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <vector>

#include "interp/model/model_handle.hpp"
#include "interp/model/registry.hpp"

namespace testing_support {

inline std::filesystem::path data_dir() { return INTERP_TEST_DATA_DIR; }

inline nlohmann::json read_json(const std::filesystem::path& p) {
  std::ifstream in(p);
  return nlohmann::json::parse(in);
}

inline interp::model::TokenizedPrompt prompt_from_ids(const interp::model::Tokenizer& tok, const std::vector<int>& ids,
                                                      bool bos_first) {
  interp::model::TokenizedPrompt p;
  p.bos_prepended = bos_first;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    p.tokens.push_back({tok.token_text(ids[i]), static_cast<int>(i), ids[i], 0, 0});
    if (!(bos_first && i == 0)) p.text += tok.token_text(ids[i]);
  }
  return p;
}

template <class A, class B>
double max_abs_diff(const A& a, const B& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(static_cast<double>(a[i]) - b[i]));
  return a.size() == b.size() ? m : INFINITY;
}

inline std::shared_ptr<const interp::model::Checkpoint> toy() { return interp::model::load_checkpoint("toy-gpt2-small"); }

}  // namespace testing_support
