#pragma once

// Prompt templates. "inst-v1" is the instruction prompt P = D + Q + A used for
// trace extraction; the extractor and the engine must agree on it byte for
// byte.

#include <string>
#include <string_view>
#include <vector>

namespace tokattr {

inline constexpr std::string_view kInstV1 = "inst-v1";

struct PromptParts {
  std::string document;
  std::string question;
  std::string answer;
  std::string template_id = std::string(kInstV1);
};

// Byte offsets of each substituted part inside the rendered prompt.
struct RenderedPrompt {
  std::string text;
  std::size_t document_start = 0, document_end = 0;
  std::size_t question_start = 0, question_end = 0;
  std::size_t answer_start = 0, answer_end = 0;
};

// Single pass: placeholders appearing inside substituted parts stay literal.
// Throws InputError for an unknown template id.
RenderedPrompt render_prompt_parts(const PromptParts& parts);
std::string render_prompt(const PromptParts& parts);

std::vector<std::string> known_prompt_templates();

// Substitutes {name} placeholders in one left-to-right pass. Unknown names
// are left as written.
std::string fill_template(std::string_view tmpl,
                          const std::vector<std::pair<std::string, std::string>>& values);

}  // namespace tokattr
