#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <string_view>
#include <variant>

namespace evloop {

inline constexpr std::string_view kThinkOpen = "<think>";
inline constexpr std::string_view kThinkClose = "</think>";
inline constexpr std::string_view kCodeOpen = "<code>";
inline constexpr std::string_view kCodeClose = "</code>";
inline constexpr std::array<std::string_view, 4> kProtocolTags = {kThinkOpen, kThinkClose,
                                                                  kCodeOpen, kCodeClose};

/// A model response that satisfies the two-block output schema.
struct ParsedOutput {
  std::string think_text;
  std::string code_text;
  std::string raw_text;
};

struct SchemaViolation {
  enum class Kind {
    kMissingTag,
    kDuplicateTag,
    kWrongOrder,
    kStrayContent,
  };
  Kind kind;
  std::string tag;  // offending tag, empty for kStrayContent
  std::string message;
};

using ParseResult = std::variant<ParsedOutput, SchemaViolation>;

/// Format-reward weights. The maximum reward is 4 * per_tag_weight + regex_weight.
struct TagWeights {
  double per_tag_weight = 0.125;
  double regex_weight = 0.5;

  void validate() const;
  double max_reward() const { return 4.0 * per_tag_weight + regex_weight; }
};

/// The solver-conditioned prompt template with `{solver}` and `{Question}` placeholders.
std::string_view prompt_template();

/// Substitutes the solver identifier and question into the template in a single pass,
/// so placeholder-like text inside the question is left alone.
std::string render_prompt(std::string_view question, std::string_view solver_id);

/// Non-overlapping, case-sensitive literal occurrences of `tag` in `text`.
std::size_t count_tag(std::string_view text, std::string_view tag);

/// Accepts exactly `ws <think>T</think> ws <code>C</code> ws` where neither body
/// contains any protocol tag. Violations report the first failed condition in the
/// order: missing tag, duplicate tag, wrong order, stray content.
ParseResult parse_output(std::string_view raw);

inline bool is_well_formed(const ParseResult& r) { return std::holds_alternative<ParsedOutput>(r); }

double format_reward(std::string_view raw, const TagWeights& weights = {});

/// Builds a schema-conforming response from its two parts.
std::string wrap_output(std::string_view think, std::string_view code);

const char* to_string(SchemaViolation::Kind kind);

}  // namespace evloop
