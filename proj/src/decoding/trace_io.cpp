#include "dultra/decoding/trace_io.hpp"

#include <fstream>
#include <stdexcept>

namespace dultra::decoding {

using nlohmann::json;

json trace_to_json(const RolloutTrace& trace) {
  json steps = json::array();
  for (const auto& s : trace.steps) {
    steps.push_back({{"candidates", s.candidates},
                     {"planner_probs", s.planner_probs},
                     {"select_probs", s.select_probs},
                     {"selected", s.selected},
                     {"tokens", s.tokens},
                     {"token_probs", s.token_probs},
                     {"forced", s.forced},
                     {"time_cond", s.time_cond},
                     {"log_select", s.log_select},
                     {"log_token", s.log_token}});
  }
  return {{"prompt", trace.prompt},
          {"completion_len", trace.completion_len},
          {"nfe", trace.nfe()},
          {"final_tokens", trace.final_tokens},
          {"steps", steps}};
}

RolloutTrace trace_from_json(const json& j) {
  try {
    RolloutTrace t;
    t.prompt = j.at("prompt").get<std::vector<Token>>();
    t.completion_len = j.at("completion_len").get<std::size_t>();
    t.final_tokens = j.at("final_tokens").get<std::vector<Token>>();
    for (const auto& s : j.at("steps")) {
      DecodeStepRecord r;
      r.candidates = s.at("candidates").get<std::vector<std::size_t>>();
      r.planner_probs = s.value("planner_probs", std::vector<double>{});
      r.select_probs = s.value("select_probs", std::vector<double>{});
      r.selected = s.at("selected").get<std::vector<std::size_t>>();
      r.tokens = s.at("tokens").get<std::vector<Token>>();
      r.token_probs = s.value("token_probs", std::vector<double>{});
      r.forced = s.value("forced", false);
      r.time_cond = s.value("time_cond", 0.0);
      r.log_select = s.value("log_select", 0.0);
      r.log_token = s.value("log_token", 0.0);
      if (r.selected.size() != r.tokens.size()) {
        throw std::invalid_argument("step has " + std::to_string(r.selected.size()) +
                                    " positions but " + std::to_string(r.tokens.size()) + " tokens");
      }
      t.steps.push_back(std::move(r));
    }
    if (t.final_tokens.size() != t.prompt.size() + t.completion_len) {
      throw std::invalid_argument("final_tokens length does not match prompt + completion");
    }
    return t;
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("malformed trace: ") + e.what());
  }
}

void save_trace(const std::filesystem::path& path, const RolloutTrace& trace) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write trace " + path.string());
  out << trace_to_json(trace).dump() << '\n';
}

RolloutTrace load_trace(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open trace " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw std::invalid_argument("malformed trace " + path.string() + ": " + e.what());
  }
  return trace_from_json(j);
}

}  // namespace dultra::decoding
