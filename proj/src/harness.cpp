#include "evloop/harness.hpp"

#include <stdlib.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <charconv>
#include <csignal>
#include <exception>
#include <fstream>
#include <json.hpp>
#include <sstream>
#include <thread>

#include "evloop/refsolver.hpp"
#include "subprocess.hpp"

namespace evloop {

using nlohmann::json;

namespace {

constexpr std::size_t kMaxLogBytes = std::size_t{16} << 20;

const std::vector<std::string>& default_statuses() {
  static const std::vector<std::string> kStatuses = {"OPTIMAL", "INFEASIBLE", "UNBOUNDED"};
  return kStatuses;
}

std::vector<StatusRule> embedded_rules() {
  return {
      StatusRule("^STATUS: OPTIMAL$", "OPTIMAL"),
      StatusRule("^STATUS: INFEASIBLE$", "INFEASIBLE"),
      StatusRule("^STATUS: UNBOUNDED$", "UNBOUNDED"),
  };
}

bool contains(const std::vector<std::string>& v, std::string_view s) {
  return std::find(v.begin(), v.end(), s) != v.end();
}

std::vector<std::string_view> split_lines(std::string_view text) {
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t nl = text.find('\n', start);
    if (nl == std::string_view::npos) nl = text.size();
    std::string_view line = text.substr(start, nl - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    lines.push_back(line);
    start = nl + 1;
  }
  return lines;
}

class ScratchDir {
 public:
  ScratchDir(const std::filesystem::path& root, bool keep) : keep_(keep) {
    std::filesystem::path base = root.empty() ? std::filesystem::temp_directory_path() : root;
    std::error_code ec;
    std::filesystem::create_directories(base, ec);
    std::string tmpl = (base / "evloop-XXXXXX").string();
    if (::mkdtemp(tmpl.data()) == nullptr) {
      throw ConfigError("cannot create scratch directory under " + base.string());
    }
    path_ = tmpl;
  }
  ScratchDir(const ScratchDir&) = delete;
  ScratchDir& operator=(const ScratchDir&) = delete;
  ~ScratchDir() {
    if (!keep_) {
      std::error_code ec;
      std::filesystem::remove_all(path_, ec);
    }
  }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  bool keep_;
};

struct RawRun {
  bool completed = false;
  std::string log;
};

std::string timeout_line(const ResourceLimits& limits) {
  std::ostringstream os;
  os << kTimeoutMarker << " after " << limits.timeout.count() << " s";
  return os.str();
}

std::string memory_line(const ResourceLimits& limits) {
  return std::string(kMemoryMarker) + " (" + std::to_string(limits.memory_bytes) + " bytes)";
}

void append_line(std::string& log, std::string_view line) {
  if (!log.empty() && log.back() != '\n') log += '\n';
  log += line;
}

RawRun run_embedded(std::string_view code, const BackendSpec& backend) {
  namespace rs = refsolver;
  RawRun run;
  auto parsed = rs::parse_model(code);
  if (auto* err = std::get_if<rs::ParseError>(&parsed)) {
    run.log = "model parse error: " + err->what();
    return run;
  }
  const rs::LinearModel& model = std::get<rs::LinearModel>(parsed);

  // Dense tableau footprint; branch-and-bound keeps a handful of copies alive.
  std::size_t rows = model.constraints.size();
  for (const auto& v : model.variables) {
    if (std::isfinite(v.lower) && std::isfinite(v.upper)) ++rows;
  }
  const std::size_t cols = 2 * model.variables.size() + 2 * rows;
  const double footprint = 4.0 * static_cast<double>(rows + 1) * static_cast<double>(cols + 1) * sizeof(double);
  if (footprint > static_cast<double>(backend.limits.memory_bytes)) {
    run.log = memory_line(backend.limits);
    return run;
  }

  rs::SolverOptions options;
  options.deadline = std::chrono::steady_clock::now() +
                     std::chrono::duration_cast<std::chrono::steady_clock::duration>(backend.limits.timeout);
  try {
    run.log = rs::emit_result_text(rs::milp_solve(model, options));
    run.completed = true;
  } catch (const rs::SolveTimeout&) {
    run.log = timeout_line(backend.limits);
  } catch (const rs::SolverFault& e) {
    run.log = std::string("solver error: ") + e.what();
  }
  return run;
}

bool looks_like_oom(std::string_view output) {
  static constexpr std::string_view kPhrases[] = {"MemoryError", "std::bad_alloc", "Cannot allocate memory",
                                                  "out of memory", "Out of memory"};
  return std::any_of(std::begin(kPhrases), std::end(kPhrases),
                     [&](std::string_view p) { return output.find(p) != std::string_view::npos; });
}

RawRun run_subprocess(const std::filesystem::path& code_file, const std::filesystem::path& cwd,
                      const BackendSpec& backend) {
  std::vector<std::string> argv;
  argv.reserve(backend.command.size());
  const std::string placeholder = "{code_file}";
  for (std::string arg : backend.command) {
    for (std::size_t pos = arg.find(placeholder); pos != std::string::npos;
         pos = arg.find(placeholder, pos + code_file.string().size())) {
      arg.replace(pos, placeholder.size(), code_file.string());
    }
    argv.push_back(std::move(arg));
  }
  detail::ProcessResult pr = detail::run_process(argv, cwd, backend.limits, kMaxLogBytes);

  RawRun run;
  run.log = std::move(pr.output);
  const bool clean_exit = pr.term_signal == 0 && pr.exit_code == 0;
  const bool timed_out = pr.timed_out || pr.term_signal == SIGXCPU;
  const bool memory = !timed_out && (pr.memory_exceeded || (!clean_exit && looks_like_oom(run.log)));
  if (pr.output_truncated) append_line(run.log, "[harness] output truncated");
  if (timed_out) {
    append_line(run.log, timeout_line(backend.limits));
  } else if (memory) {
    append_line(run.log, memory_line(backend.limits));
  } else if (pr.term_signal != 0) {
    append_line(run.log, "[harness] terminated by signal " + std::to_string(pr.term_signal));
  } else if (pr.exit_code != 0) {
    append_line(run.log, "[harness] exit status " + std::to_string(pr.exit_code));
  }
  run.completed = clean_exit && !timed_out && !memory;
  return run;
}

}  // namespace

void ResourceLimits::validate() const {
  if (!(timeout.count() > 0.0) || !std::isfinite(timeout.count())) throw ConfigError("timeout must be positive");
  if (memory_bytes == 0) throw ConfigError("memory cap must be positive");
}

StatusRule::StatusRule(std::string pattern_, std::string status_)
    : pattern(std::move(pattern_)), status(std::move(status_)) {
  try {
    compiled = std::regex(pattern, std::regex::ECMAScript);
  } catch (const std::regex_error& e) {
    throw ConfigError("invalid status rule pattern '" + pattern + "': " + e.what());
  }
}

void BackendSpec::validate() const {
  if (solver_id.empty()) throw ConfigError("backend solver_id is empty");
  limits.validate();
  if (kind == BackendKind::kSubprocess) {
    if (command.empty() || command.front().empty()) throw ConfigError("subprocess backend '" + solver_id + "' has no command");
    const bool has_slot = std::any_of(command.begin(), command.end(),
                                      [](const std::string& a) { return a.find("{code_file}") != std::string::npos; });
    if (!has_slot) throw ConfigError("subprocess command for '" + solver_id + "' lacks a {code_file} placeholder");
  }
  if (statuses.empty()) throw ConfigError("backend '" + solver_id + "' declares no statuses");
  for (std::size_t i = 0; i < statuses.size(); ++i) {
    if (statuses[i].empty()) throw ConfigError("empty status label");
    if (std::find(statuses.begin(), statuses.begin() + static_cast<std::ptrdiff_t>(i), statuses[i]) !=
        statuses.begin() + static_cast<std::ptrdiff_t>(i)) {
      throw ConfigError("duplicate status label '" + statuses[i] + "'");
    }
  }
  for (const auto& s : numeric_statuses) {
    if (!contains(statuses, s)) throw ConfigError("numeric status '" + s + "' is not a declared status");
  }
  if (!contains(numeric_statuses, kOptimalStatus)) throw ConfigError("OPTIMAL must be a numeric status");
  for (const auto& r : status_rules) {
    if (!contains(statuses, r.status)) throw ConfigError("status rule targets undeclared label '" + r.status + "'");
  }
  if (fallback_status != kErrorStatus && !contains(statuses, fallback_status)) {
    throw ConfigError("fallback status '" + fallback_status + "' is not a declared status");
  }
  if (code_filename.empty() || code_filename.find('/') != std::string::npos) {
    throw ConfigError("code_filename must be a plain file name");
  }
}

bool BackendSpec::is_numeric_status(std::string_view label) const { return contains(numeric_statuses, label); }
bool BackendSpec::has_status(std::string_view label) const { return contains(statuses, label); }

BackendSpec embedded_backend(std::string solver_id) {
  BackendSpec b;
  b.solver_id = std::move(solver_id);
  b.kind = BackendKind::kEmbedded;
  b.statuses = default_statuses();
  b.numeric_statuses = {"OPTIMAL"};
  b.status_rules = embedded_rules();
  b.code_filename = "model.lp";
  return b;
}

BackendSpec parse_backend_config(std::string_view json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("backend config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("backend config must be a JSON object");
  static const std::vector<std::string> kKnown = {
      "solver_id", "kind", "command", "timeout_seconds", "memory_bytes", "statuses", "numeric_statuses",
      "status_rules", "fallback_status", "code_filename", "keep_artifacts", "scratch_root"};
  for (const auto& [key, _] : j.items()) {
    if (!contains(kKnown, key)) throw ConfigError("unknown backend config field '" + key + "'");
  }

  try {
    const std::string kind = j.value("kind", std::string("embedded"));
    BackendSpec b;
    if (kind == "embedded" || kind == "embedded-reference") {
      b = embedded_backend(j.at("solver_id").get<std::string>());
    } else if (kind == "subprocess") {
      b.kind = BackendKind::kSubprocess;
      b.solver_id = j.at("solver_id").get<std::string>();
      b.statuses = default_statuses();
      b.numeric_statuses = {"OPTIMAL"};
    } else {
      throw ConfigError("unknown backend kind '" + kind + "'");
    }
    if (j.contains("command")) b.command = j.at("command").get<std::vector<std::string>>();
    if (j.contains("timeout_seconds")) b.limits.timeout = std::chrono::duration<double>(j.at("timeout_seconds").get<double>());
    if (j.contains("memory_bytes")) {
      const auto& m = j.at("memory_bytes");
      if (!m.is_number_unsigned()) throw ConfigError("memory_bytes must be a positive integer");
      b.limits.memory_bytes = m.get<std::uint64_t>();
    }
    if (j.contains("statuses")) b.statuses = j.at("statuses").get<std::vector<std::string>>();
    if (j.contains("numeric_statuses")) b.numeric_statuses = j.at("numeric_statuses").get<std::vector<std::string>>();
    if (j.contains("status_rules")) {
      b.status_rules.clear();
      for (const auto& r : j.at("status_rules")) {
        b.status_rules.emplace_back(r.at("pattern").get<std::string>(), r.at("status").get<std::string>());
      }
    }
    if (j.contains("fallback_status")) b.fallback_status = j.at("fallback_status").get<std::string>();
    if (j.contains("code_filename")) b.code_filename = j.at("code_filename").get<std::string>();
    if (j.contains("keep_artifacts")) b.keep_artifacts = j.at("keep_artifacts").get<bool>();
    if (j.contains("scratch_root")) b.scratch_root = j.at("scratch_root").get<std::string>();
    b.validate();
    return b;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed backend config: ") + e.what());
  }
}

BackendSpec load_backend_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read backend config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return parse_backend_config(ss.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

std::string backend_config_json(const BackendSpec& b) {
  json j;
  j["solver_id"] = b.solver_id;
  j["kind"] = b.kind == BackendKind::kEmbedded ? "embedded" : "subprocess";
  if (b.kind == BackendKind::kSubprocess) j["command"] = b.command;
  j["timeout_seconds"] = b.limits.timeout.count();
  j["memory_bytes"] = b.limits.memory_bytes;
  j["statuses"] = b.statuses;
  j["numeric_statuses"] = b.numeric_statuses;
  json rules = json::array();
  for (const auto& r : b.status_rules) rules.push_back({{"pattern", r.pattern}, {"status", r.status}});
  j["status_rules"] = rules;
  j["fallback_status"] = b.fallback_status;
  j["code_filename"] = b.code_filename;
  return j.dump(2);
}

Observation non_executable(std::string log) {
  Observation o;
  o.log = sanitize_utf8(log);
  return o;
}

std::optional<double> extract_objective(std::string_view log) {
  static const std::regex kLine(R"(Just print the best solution:\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)\s*$)");
  std::optional<double> last;
  for (std::string_view line : split_lines(log)) {
    if (line.find("Just print the best solution:") == std::string_view::npos) continue;
    std::match_results<std::string_view::const_iterator> m;
    if (!std::regex_search(line.begin(), line.end(), m, kLine)) {
      last.reset();
      continue;
    }
    std::string payload = m[1].str();
    if (payload.front() == '+') payload.erase(0, 1);
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(payload.data(), payload.data() + payload.size(), v);
    if (ec != std::errc() || ptr != payload.data() + payload.size() || !std::isfinite(v)) {
      last.reset();
    } else {
      last = v;
    }
  }
  return last;
}

std::string infer_status(std::string_view log, bool objective_present, const BackendSpec& backend) {
  const auto lines = split_lines(log);
  for (const StatusRule& rule : backend.status_rules) {
    for (std::string_view line : lines) {
      if (std::regex_search(line.begin(), line.end(), rule.compiled)) return rule.status;
    }
  }
  if (objective_present) return std::string(kOptimalStatus);
  return backend.fallback_status;
}

Observation execute_candidate(std::string_view code, const BackendSpec& backend) {
  backend.validate();
  ScratchDir dir(backend.scratch_root, backend.keep_artifacts);
  const std::filesystem::path code_file = dir.path() / backend.code_filename;
  {
    std::ofstream out(code_file, std::ios::binary);
    out.write(code.data(), static_cast<std::streamsize>(code.size()));
    if (!out) throw ConfigError("cannot write candidate file " + code_file.string());
  }

  RawRun run = backend.kind == BackendKind::kEmbedded ? run_embedded(code, backend)
                                                      : run_subprocess(code_file, dir.path(), backend);
  Observation o;
  o.log = sanitize_utf8(run.log);
  o.executed = run.completed;
  if (!o.executed) return o;

  const auto value = extract_objective(o.log);
  o.status = infer_status(o.log, value.has_value(), backend);
  if (value && backend.is_numeric_status(o.status)) o.objective = value;
  return o;
}

std::vector<Observation> run_group(std::string_view context_id, const std::vector<std::string>& candidates,
                                   const BackendSpec& backend, std::size_t worker_budget) {
  if (candidates.empty()) throw std::invalid_argument("run_group: no candidates for context '" + std::string(context_id) + "'");
  backend.validate();
  std::vector<Observation> out(candidates.size());
  std::vector<std::exception_ptr> errors(candidates.size());
  const std::size_t workers = std::clamp<std::size_t>(worker_budget, 1, candidates.size());

  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i = next++; i < candidates.size(); i = next++) {
      try {
        out[i] = execute_candidate(candidates[i], backend);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  if (workers == 1) {
    work();
  } else {
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return out;
}

std::string sanitize_utf8(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  constexpr std::string_view kReplacement = "\xEF\xBF\xBD";
  std::size_t i = 0;
  while (i < s.size()) {
    const auto c = static_cast<unsigned char>(s[i]);
    std::size_t len = 0;
    std::uint32_t cp = 0;
    if (c < 0x80) {
      out.push_back(static_cast<char>(c));
      ++i;
      continue;
    } else if ((c & 0xE0) == 0xC0) {
      len = 2;
      cp = c & 0x1F;
    } else if ((c & 0xF0) == 0xE0) {
      len = 3;
      cp = c & 0x0F;
    } else if ((c & 0xF8) == 0xF0) {
      len = 4;
      cp = c & 0x07;
    } else {
      out.append(kReplacement);
      ++i;
      continue;
    }
    std::size_t k = 1;
    for (; k < len && i + k < s.size(); ++k) {
      const auto cc = static_cast<unsigned char>(s[i + k]);
      if ((cc & 0xC0) != 0x80) break;
      cp = (cp << 6) | (cc & 0x3F);
    }
    const bool overlong = (len == 2 && cp < 0x80) || (len == 3 && cp < 0x800) || (len == 4 && cp < 0x10000);
    const bool invalid = k != len || overlong || cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF);
    if (invalid) {
      out.append(kReplacement);
      i += std::max<std::size_t>(k, 1);
    } else {
      out.append(s.substr(i, len));
      i += len;
    }
  }
  return out;
}

}  // namespace evloop
