#include "subprocess.hpp"

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/resource.h>
#include <sys/time.h>
#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <optional>
#include <system_error>
#include <algorithm>

namespace evloop::detail {

namespace {

class Fd {
 public:
  Fd() = default;
  explicit Fd(int fd) : fd_(fd) {}
  Fd(const Fd&) = delete;
  Fd& operator=(const Fd&) = delete;
  Fd(Fd&& o) noexcept : fd_(o.release()) {}
  Fd& operator=(Fd&& o) noexcept {
    if (this != &o) {
      reset();
      fd_ = o.release();
    }
    return *this;
  }
  ~Fd() { reset(); }

  int get() const { return fd_; }
  int release() {
    int f = fd_;
    fd_ = -1;
    return f;
  }
  void reset() {
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
  }

 private:
  int fd_ = -1;
};

std::pair<Fd, Fd> make_pipe() {
  int fds[2];
  if (::pipe2(fds, O_CLOEXEC) != 0) throw std::system_error(errno, std::generic_category(), "pipe2");
  return {Fd(fds[0]), Fd(fds[1])};
}

std::uint64_t resident_bytes(pid_t pid) {
  std::ifstream in("/proc/" + std::to_string(pid) + "/statm");
  std::uint64_t size = 0, resident = 0;
  if (!(in >> size >> resident)) return 0;
  static const long page = ::sysconf(_SC_PAGESIZE);
  return resident * static_cast<std::uint64_t>(page);
}

}  // namespace

ProcessResult run_process(const std::vector<std::string>& argv, const std::filesystem::path& cwd,
                          const ResourceLimits& limits, std::size_t max_output_bytes) {
  if (argv.empty() || argv.front().empty()) throw ConfigError("subprocess backend has an empty command");

  std::vector<char*> cargv;
  cargv.reserve(argv.size() + 1);
  for (const auto& a : argv) cargv.push_back(const_cast<char*>(a.c_str()));
  cargv.push_back(nullptr);
  const std::string cwd_str = cwd.string();
  const rlim_t mem = static_cast<rlim_t>(limits.memory_bytes);
  const rlim_t cpu = static_cast<rlim_t>(std::ceil(limits.timeout.count())) + 1;

  auto [out_r, out_w] = make_pipe();
  auto [err_r, err_w] = make_pipe();

  const pid_t pid = ::fork();
  if (pid < 0) throw std::system_error(errno, std::generic_category(), "fork");
  if (pid == 0) {
    // Child: async-signal-safe calls only until exec.
    ::setpgid(0, 0);
    int devnull = ::open("/dev/null", O_RDONLY | O_CLOEXEC);
    if (devnull >= 0) ::dup2(devnull, STDIN_FILENO);
    ::dup2(out_w.get(), STDOUT_FILENO);
    ::dup2(out_w.get(), STDERR_FILENO);
    struct rlimit rl;
    rl.rlim_cur = rl.rlim_max = mem;
    ::setrlimit(RLIMIT_AS, &rl);
    rl.rlim_cur = rl.rlim_max = cpu;
    ::setrlimit(RLIMIT_CPU, &rl);
    rl.rlim_cur = rl.rlim_max = 0;
    ::setrlimit(RLIMIT_CORE, &rl);
    int err = 0;
    if (::chdir(cwd_str.c_str()) != 0) {
      err = errno;
    } else {
      ::execvp(cargv[0], cargv.data());
      err = errno;
    }
    [[maybe_unused]] auto n = ::write(err_w.get(), &err, sizeof(err));
    ::_exit(127);
  }
  ::setpgid(pid, pid);
  out_w.reset();
  err_w.reset();

  int exec_errno = 0;
  ssize_t got;
  do {
    got = ::read(err_r.get(), &exec_errno, sizeof(exec_errno));
  } while (got < 0 && errno == EINTR);
  if (got == static_cast<ssize_t>(sizeof(exec_errno))) {
    int st = 0;
    ::waitpid(pid, &st, 0);
    throw ConfigError("cannot execute '" + argv.front() + "': " + std::strerror(exec_errno));
  }

  ProcessResult result;
  using clock = std::chrono::steady_clock;
  const auto start = clock::now();
  const auto deadline = start + std::chrono::duration_cast<clock::duration>(limits.timeout);
  const auto drain_grace = std::chrono::milliseconds(200);

  ::fcntl(out_r.get(), F_SETFL, ::fcntl(out_r.get(), F_GETFL) | O_NONBLOCK);
  bool pipe_open = true;
  bool reaped = false;
  bool killed = false;
  int wstatus = 0;
  struct rusage usage {};
  std::optional<clock::time_point> exited_at;
  char buf[8192];

  auto kill_group = [&] {
    ::kill(-pid, SIGKILL);
    ::kill(pid, SIGKILL);
    killed = true;
  };

  while (!reaped || pipe_open) {
    if (pipe_open) {
      struct pollfd pfd {out_r.get(), POLLIN, 0};
      ::poll(&pfd, 1, 10);
      for (;;) {
        ssize_t n = ::read(out_r.get(), buf, sizeof(buf));
        if (n > 0) {
          const std::size_t room = max_output_bytes > result.output.size() ? max_output_bytes - result.output.size() : 0;
          const std::size_t take = std::min<std::size_t>(room, static_cast<std::size_t>(n));
          result.output.append(buf, take);
          if (take < static_cast<std::size_t>(n)) result.output_truncated = true;
          continue;
        }
        if (n == 0) pipe_open = false;
        break;  // EAGAIN or error
      }
    } else if (!reaped) {
      ::usleep(5000);
    }

    if (!reaped) {
      pid_t w = ::wait4(pid, &wstatus, WNOHANG, &usage);
      if (w == pid) {
        reaped = true;
        exited_at = clock::now();
      }
    }
    const auto now = clock::now();
    if (!reaped && !killed) {
      if (now >= deadline) {
        result.timed_out = true;
        kill_group();
      } else if (const auto rss = resident_bytes(pid); rss > limits.memory_bytes) {
        result.memory_exceeded = true;
        result.peak_rss_bytes = rss;
        kill_group();
      }
    }
    // Grandchildren may keep the pipe open after the child is gone.
    if (reaped && pipe_open && exited_at && now - *exited_at > drain_grace) {
      ::kill(-pid, SIGKILL);
      pipe_open = false;
    }
    if (killed && !reaped && now - deadline > std::chrono::seconds(1)) {
      // SIGKILL was sent; block for the zombie.
      ::wait4(pid, &wstatus, 0, &usage);
      reaped = true;
      exited_at = now;
    }
  }
  ::kill(-pid, SIGKILL);

  if (WIFEXITED(wstatus)) {
    result.exit_code = WEXITSTATUS(wstatus);
  } else if (WIFSIGNALED(wstatus)) {
    result.term_signal = WTERMSIG(wstatus);
  }
  result.peak_rss_bytes = std::max<std::uint64_t>(result.peak_rss_bytes, static_cast<std::uint64_t>(usage.ru_maxrss) * 1024);
  return result;
}

}  // namespace evloop::detail
