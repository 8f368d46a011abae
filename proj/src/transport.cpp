#include "transpref/transport.hpp"

#include <cerrno>
#include <cstring>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <httplib.h>

namespace transpref::transport {

HttpEndpoint parse_http_url(const std::string& url) {
  const std::string scheme = "http://";
  if (url.rfind(scheme, 0) != 0) throw ConfigError("only http:// endpoints are supported: " + url);
  auto slash = url.find('/', scheme.size());
  if (slash == std::string::npos) return {url, "/"};
  return {url.substr(0, slash), url.substr(slash)};
}

json http_post_json(const std::string& url, const json& body, std::chrono::seconds timeout) {
  auto ep = parse_http_url(url);
  httplib::Client cli(ep.scheme_host_port);
  cli.set_connection_timeout(timeout);
  cli.set_read_timeout(timeout);
  cli.set_write_timeout(timeout);
  auto res = cli.Post(ep.path, body.dump(), "application/json");
  if (!res) throw TransportError("POST " + url + " failed: " + httplib::to_string(res.error()));
  if (res->status < 200 || res->status >= 300)
    throw TransportError("POST " + url + " returned status " + std::to_string(res->status));
  json out = json::parse(res->body, nullptr, false);
  if (out.is_discarded()) throw ProtocolError("POST " + url + " returned non-JSON body");
  return out;
}

namespace {

struct Fd {
  int fd = -1;
  Fd() = default;
  explicit Fd(int f) : fd(f) {}
  Fd(const Fd&) = delete;
  Fd& operator=(const Fd&) = delete;
  ~Fd() { reset(); }
  void reset() {
    if (fd >= 0) ::close(fd);
    fd = -1;
  }
};

}  // namespace

std::string run_subprocess(const std::string& command, const std::string& input) {
  int in_pipe[2], out_pipe[2];
  if (::pipe(in_pipe) != 0) throw TransportError(std::string("pipe: ") + std::strerror(errno));
  if (::pipe(out_pipe) != 0) {
    ::close(in_pipe[0]);
    ::close(in_pipe[1]);
    throw TransportError(std::string("pipe: ") + std::strerror(errno));
  }
  pid_t pid = ::fork();
  if (pid < 0) throw TransportError(std::string("fork: ") + std::strerror(errno));
  if (pid == 0) {
    ::dup2(in_pipe[0], STDIN_FILENO);
    ::dup2(out_pipe[1], STDOUT_FILENO);
    ::close(in_pipe[0]);
    ::close(in_pipe[1]);
    ::close(out_pipe[0]);
    ::close(out_pipe[1]);
    ::execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
    ::_exit(127);
  }
  ::close(in_pipe[0]);
  ::close(out_pipe[1]);
  Fd to_child(in_pipe[1]), from_child(out_pipe[0]);

  // Feed stdin from a separate thread so a child that writes before it has
  // read everything cannot deadlock us.
  std::thread writer([&to_child, &input] {
    // A child that exits early raises SIGPIPE; block it for this thread.
    sigset_t set, old;
    sigemptyset(&set);
    sigaddset(&set, SIGPIPE);
    pthread_sigmask(SIG_BLOCK, &set, &old);
    std::size_t off = 0;
    while (off < input.size()) {
      auto w = ::write(to_child.fd, input.data() + off, input.size() - off);
      if (w < 0) {
        if (errno == EINTR) continue;
        break;
      }
      off += static_cast<std::size_t>(w);
    }
    to_child.reset();
    // Drain a pending SIGPIPE so it is not delivered after unblocking.
    timespec zero{0, 0};
    while (sigtimedwait(&set, nullptr, &zero) > 0) {
    }
    pthread_sigmask(SIG_SETMASK, &old, nullptr);
  });

  std::string out;
  char buf[65536];
  for (;;) {
    auto r = ::read(from_child.fd, buf, sizeof buf);
    if (r < 0 && errno == EINTR) continue;
    if (r <= 0) break;
    out.append(buf, static_cast<std::size_t>(r));
  }
  writer.join();
  int status = 0;
  while (::waitpid(pid, &status, 0) < 0 && errno == EINTR) {
  }
  if (!WIFEXITED(status) || WEXITSTATUS(status) != 0)
    throw TransportError("command '" + command + "' exited with status " +
                         std::to_string(WIFEXITED(status) ? WEXITSTATUS(status) : -1));
  return out;
}

}  // namespace transpref::transport
