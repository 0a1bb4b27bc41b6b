#include "evloop/protocol.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace evloop {

namespace {

bool is_blank(std::string_view s) {
  return std::all_of(s.begin(), s.end(), [](char c) {
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f';
  });
}

SchemaViolation violation(SchemaViolation::Kind kind, std::string_view tag, std::string message) {
  return SchemaViolation{kind, std::string(tag), std::move(message)};
}

}  // namespace

void TagWeights::validate() const {
  if (!(per_tag_weight >= 0.0) || !(regex_weight >= 0.0) || !std::isfinite(per_tag_weight) ||
      !std::isfinite(regex_weight)) {
    throw std::invalid_argument("format reward weights must be finite and nonnegative");
  }
}

std::string render_prompt(std::string_view question, std::string_view solver_id) {
  if (question.empty()) throw std::invalid_argument("render_prompt: empty question");
  if (solver_id.empty()) throw std::invalid_argument("render_prompt: empty solver id");

  constexpr std::string_view kSolverSlot = "{solver}";
  constexpr std::string_view kQuestionSlot = "{Question}";

  const std::string_view tpl = prompt_template();
  std::string out;
  out.reserve(tpl.size() + question.size() + solver_id.size());
  std::size_t pos = 0;
  while (pos < tpl.size()) {
    const std::string_view rest = tpl.substr(pos);
    if (rest.starts_with(kSolverSlot)) {
      out.append(solver_id);
      pos += kSolverSlot.size();
    } else if (rest.starts_with(kQuestionSlot)) {
      out.append(question);
      pos += kQuestionSlot.size();
    } else {
      out.push_back(tpl[pos]);
      ++pos;
    }
  }
  return out;
}

std::size_t count_tag(std::string_view text, std::string_view tag) {
  if (tag.empty()) return 0;
  std::size_t n = 0;
  for (std::size_t pos = text.find(tag); pos != std::string_view::npos;
       pos = text.find(tag, pos + tag.size())) {
    ++n;
  }
  return n;
}

ParseResult parse_output(std::string_view raw) {
  using Kind = SchemaViolation::Kind;

  for (auto tag : kProtocolTags) {
    if (count_tag(raw, tag) == 0) {
      return violation(Kind::kMissingTag, tag, "missing " + std::string(tag));
    }
  }
  for (auto tag : kProtocolTags) {
    if (count_tag(raw, tag) > 1) {
      return violation(Kind::kDuplicateTag, tag, "duplicate " + std::string(tag));
    }
  }

  // Every tag occurs exactly once from here on.
  const std::size_t think_open = raw.find(kThinkOpen);
  const std::size_t think_close = raw.find(kThinkClose);
  const std::size_t code_open = raw.find(kCodeOpen);
  const std::size_t code_close = raw.find(kCodeClose);

  if (!(think_open < think_close)) {
    return violation(Kind::kWrongOrder, kThinkClose, "</think> precedes <think>");
  }
  if (!(code_open < code_close)) {
    return violation(Kind::kWrongOrder, kCodeClose, "</code> precedes <code>");
  }
  if (!(think_close < code_open)) {
    return violation(Kind::kWrongOrder, kCodeOpen, "code block does not follow the think block");
  }

  const std::size_t think_body = think_open + kThinkOpen.size();
  const std::size_t code_body = code_open + kCodeOpen.size();
  const std::size_t gap_begin = think_close + kThinkClose.size();
  const std::size_t tail_begin = code_close + kCodeClose.size();

  if (!is_blank(raw.substr(0, think_open))) {
    return violation(Kind::kStrayContent, {}, "content before <think>");
  }
  if (!is_blank(raw.substr(gap_begin, code_open - gap_begin))) {
    return violation(Kind::kStrayContent, {}, "content between </think> and <code>");
  }
  if (!is_blank(raw.substr(tail_begin))) {
    return violation(Kind::kStrayContent, {}, "content after </code>");
  }

  ParsedOutput out;
  out.think_text = std::string(raw.substr(think_body, think_close - think_body));
  out.code_text = std::string(raw.substr(code_body, code_close - code_body));
  out.raw_text = std::string(raw);
  return out;
}

double format_reward(std::string_view raw, const TagWeights& weights) {
  double r = 0.0;
  for (auto tag : kProtocolTags) {
    if (count_tag(raw, tag) == 1) r += weights.per_tag_weight;
  }
  if (is_well_formed(parse_output(raw))) r += weights.regex_weight;
  return r;
}

std::string wrap_output(std::string_view think, std::string_view code) {
  std::string out;
  out.reserve(think.size() + code.size() + 32);
  out.append(kThinkOpen).append(think).append(kThinkClose).append("\n");
  out.append(kCodeOpen).append(code).append(kCodeClose);
  return out;
}

const char* to_string(SchemaViolation::Kind kind) {
  switch (kind) {
    case SchemaViolation::Kind::kMissingTag: return "missing_tag";
    case SchemaViolation::Kind::kDuplicateTag: return "duplicate_tag";
    case SchemaViolation::Kind::kWrongOrder: return "wrong_order";
    case SchemaViolation::Kind::kStrayContent: return "stray_content";
  }
  return "unknown";
}

}  // namespace evloop
