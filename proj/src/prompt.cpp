#include "tokattr/prompt.hpp"

#include "tokattr/error.hpp"

namespace tokattr {
namespace {

constexpr std::string_view kInstV1Head = "[INST]\nDocument:\n";
constexpr std::string_view kInstV1Middle =
    "\nBased on the information contained in the document, answer the question with details to "
    "the best of your abilities. Think step by step and explain your answer if that will help "
    "better understand the answer. \nQ: ";
constexpr std::string_view kInstV1Tail = " A:\n[/INST]\n";

}  // namespace

RenderedPrompt render_prompt_parts(const PromptParts& parts) {
  if (parts.template_id != kInstV1) {
    throw InputError("unknown prompt template '" + parts.template_id + "'");
  }
  RenderedPrompt out;
  auto& s = out.text;
  s.reserve(kInstV1Head.size() + kInstV1Middle.size() + kInstV1Tail.size() +
            parts.document.size() + parts.question.size() + parts.answer.size());
  s += kInstV1Head;
  out.document_start = s.size();
  s += parts.document;
  out.document_end = s.size();
  s += kInstV1Middle;
  out.question_start = s.size();
  s += parts.question;
  out.question_end = s.size();
  s += kInstV1Tail;
  out.answer_start = s.size();
  s += parts.answer;
  out.answer_end = s.size();
  return out;
}

std::string render_prompt(const PromptParts& parts) { return render_prompt_parts(parts).text; }

std::vector<std::string> known_prompt_templates() { return {std::string(kInstV1)}; }

std::string fill_template(std::string_view tmpl,
                          const std::vector<std::pair<std::string, std::string>>& values) {
  std::string out;
  std::size_t i = 0;
  while (i < tmpl.size()) {
    if (tmpl[i] == '{') {
      const auto close = tmpl.find('}', i + 1);
      if (close != std::string_view::npos) {
        const auto name = tmpl.substr(i + 1, close - i - 1);
        bool replaced = false;
        for (const auto& [key, value] : values) {
          if (key == name) {
            out += value;
            replaced = true;
            break;
          }
        }
        if (replaced) {
          i = close + 1;
          continue;
        }
      }
    }
    out += tmpl[i++];
  }
  return out;
}

}  // namespace tokattr
