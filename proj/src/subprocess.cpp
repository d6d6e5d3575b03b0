#include "kato/benchmarks.hpp"

#include <json.hpp>

#include <cerrno>
#include <chrono>
#include <csignal>
#include <cstring>

#include <fcntl.h>
#include <poll.h>
#include <sys/wait.h>
#include <unistd.h>

namespace kato {

using json = nlohmann::json;

namespace {

struct Pipe {
  int fd[2] = {-1, -1};
  Pipe() {
    if (::pipe(fd) != 0) throw EvaluationError(std::string("pipe failed: ") + std::strerror(errno));
  }
  ~Pipe() { close_both(); }
  void close_end(int i) {
    if (fd[i] >= 0) ::close(fd[i]);
    fd[i] = -1;
  }
  void close_both() {
    close_end(0);
    close_end(1);
  }
};

// Owns the child until it is reaped; kills it on any early exit.
class Child {
 public:
  explicit Child(pid_t pid) : pid_(pid) {}
  ~Child() {
    if (pid_ > 0) {
      ::kill(pid_, SIGKILL);
      reap();
    }
  }
  void kill_and_reap() {
    ::kill(pid_, SIGKILL);
    reap();
  }
  void reap() {
    int status = 0;
    while (pid_ > 0 && ::waitpid(pid_, &status, 0) < 0 && errno == EINTR) {
    }
    pid_ = -1;
  }

 private:
  pid_t pid_;
};

std::string format_request(const Vector& x) {
  json j;
  j["x"] = std::vector<double>(x.begin(), x.end());
  return j.dump() + "\n";
}

}  // namespace

Vector subprocess_evaluate(const std::vector<std::string>& command,
                           const std::vector<std::string>& metric_names, const Vector& x,
                           double timeout_seconds) {
  if (command.empty()) throw ConfigError("subprocess_evaluate: empty command");
  std::signal(SIGPIPE, SIG_IGN);

  const std::string request = format_request(x);
  std::string transcript = "> " + request;

  Pipe to_child;
  Pipe from_child;
  const pid_t pid = ::fork();
  if (pid < 0) throw EvaluationError(std::string("fork failed: ") + std::strerror(errno));
  if (pid == 0) {
    ::dup2(to_child.fd[0], STDIN_FILENO);
    ::dup2(from_child.fd[1], STDOUT_FILENO);
    to_child.close_both();
    from_child.close_both();
    std::vector<char*> argv;
    for (const auto& a : command) argv.push_back(const_cast<char*>(a.c_str()));
    argv.push_back(nullptr);
    ::execvp(argv[0], argv.data());
    ::_exit(127);
  }
  Child child(pid);
  to_child.close_end(0);
  from_child.close_end(1);

  // The request is small enough to fit in the pipe buffer; a child that exits
  // early shows up as EPIPE here or as EOF below.
  const ssize_t written = ::write(to_child.fd[1], request.data(), request.size());
  (void)written;
  to_child.close_end(1);

  const auto deadline = std::chrono::steady_clock::now() +
                        std::chrono::duration<double>(timeout_seconds);
  std::string reply;
  bool got_line = false;
  char buf[4096];
  while (!got_line) {
    const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(
        deadline - std::chrono::steady_clock::now());
    if (left.count() <= 0) {
      child.kill_and_reap();
      throw SubprocessTimeout("evaluator '" + command.front() + "' timed out after " +
                                  std::to_string(timeout_seconds) + " s",
                              transcript + "< " + reply);
    }
    pollfd p{from_child.fd[0], POLLIN, 0};
    const int ready = ::poll(&p, 1, static_cast<int>(left.count()));
    if (ready < 0) {
      if (errno == EINTR) continue;
      throw EvaluationError(std::string("poll failed: ") + std::strerror(errno));
    }
    if (ready == 0) continue;
    const ssize_t n = ::read(from_child.fd[0], buf, sizeof buf);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw EvaluationError(std::string("read failed: ") + std::strerror(errno));
    }
    if (n == 0) break;
    reply.append(buf, static_cast<std::size_t>(n));
    if (auto nl = reply.find('\n'); nl != std::string::npos) {
      reply.resize(nl);
      got_line = true;
    }
  }
  child.kill_and_reap();
  transcript += "< " + reply + "\n";

  if (!got_line && reply.empty()) {
    throw SubprocessProtocolError("evaluator '" + command.front() + "' exited without a reply",
                                  transcript);
  }
  json j;
  try {
    j = json::parse(reply);
  } catch (const json::parse_error&) {
    throw SubprocessProtocolError("evaluator reply is not valid JSON", transcript);
  }
  if (!j.is_object() || !j.contains("metrics") || !j["metrics"].is_object()) {
    throw SubprocessProtocolError("evaluator reply lacks a 'metrics' object", transcript);
  }
  const json& metrics = j["metrics"];
  Vector out(static_cast<Index>(metric_names.size()));
  for (std::size_t i = 0; i < metric_names.size(); ++i) {
    if (!metrics.contains(metric_names[i])) {
      throw SubprocessMissingMetric("evaluator reply is missing metric '" + metric_names[i] + "'",
                                    transcript);
    }
    const json& v = metrics[metric_names[i]];
    if (!v.is_number() || !std::isfinite(v.get<double>())) {
      throw SubprocessProtocolError("metric '" + metric_names[i] + "' is not a finite number",
                                    transcript);
    }
    out[static_cast<Index>(i)] = v.get<double>();
  }
  return out;
}

}  // namespace kato
