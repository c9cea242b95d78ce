#pragma once

// JSON-lines detector protocol and the out-of-process detector transports.
//
//   request : {"id": <int>, "width": <int>, "height": <int>,
//              "pixels": <base64 of row-major 8-bit RGB>}
//   response: {"id": <int>, "detections": [{"box": [x1,y1,x2,y2],
//              "objectness": <real>, "scores": [<real>, ...]}, ...]}
//   error   : {"id": <int>, "error": "<text>"}
//
// One JSON object per line in each direction; responses come back in
// request order with matching ids. POSIX only.

#include <fcntl.h>
#include <netdb.h>
#include <signal.h>
#include <sys/socket.h>
#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <cstdint>
#include <cstring>
#include <istream>
#include <mutex>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "dclose/core.hpp"
#include "dclose/detector.hpp"

namespace dclose {

// ---------------------------------------------------------------------------
// Base64
// ---------------------------------------------------------------------------

inline std::string base64_encode(std::span<const std::uint8_t> in) {
  static constexpr char kAlphabet[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
  std::string out;
  out.reserve((in.size() + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 2 < in.size(); i += 3) {
    const std::uint32_t v = (in[i] << 16) | (in[i + 1] << 8) | in[i + 2];
    out += kAlphabet[(v >> 18) & 63];
    out += kAlphabet[(v >> 12) & 63];
    out += kAlphabet[(v >> 6) & 63];
    out += kAlphabet[v & 63];
  }
  if (i < in.size()) {
    const std::uint32_t v = (in[i] << 16) | (i + 1 < in.size() ? in[i + 1] << 8 : 0);
    out += kAlphabet[(v >> 18) & 63];
    out += kAlphabet[(v >> 12) & 63];
    out += i + 1 < in.size() ? kAlphabet[(v >> 6) & 63] : '=';
    out += '=';
  }
  return out;
}

inline std::vector<std::uint8_t> base64_decode(std::string_view in) {
  const auto value = [](char c) -> int {
    if (c >= 'A' && c <= 'Z') return c - 'A';
    if (c >= 'a' && c <= 'z') return c - 'a' + 26;
    if (c >= '0' && c <= '9') return c - '0' + 52;
    if (c == '+') return 62;
    if (c == '/') return 63;
    return -1;
  };
  if (in.size() % 4 != 0) throw InvalidInput("base64: length is not a multiple of 4");
  std::vector<std::uint8_t> out;
  out.reserve(in.size() / 4 * 3);
  for (std::size_t i = 0; i < in.size(); i += 4) {
    int v[4];
    int pad = 0;
    for (int k = 0; k < 4; ++k) {
      const char c = in[i + k];
      if (c == '=' && i + 4 == in.size() && k >= 2) {
        v[k] = 0;
        ++pad;
      } else {
        if (pad) throw InvalidInput("base64: data after padding");
        v[k] = value(c);
        if (v[k] < 0) throw InvalidInput("base64: invalid character");
      }
    }
    const std::uint32_t x = (v[0] << 18) | (v[1] << 12) | (v[2] << 6) | v[3];
    out.push_back(static_cast<std::uint8_t>(x >> 16));
    if (pad < 2) out.push_back(static_cast<std::uint8_t>((x >> 8) & 0xff));
    if (pad < 1) out.push_back(static_cast<std::uint8_t>(x & 0xff));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Message codec
// ---------------------------------------------------------------------------

inline std::string encode_request(std::uint64_t id, const ImageBuffer& img) {
  std::vector<std::uint8_t> rgb(img.data.size());
  for (std::size_t i = 0; i < rgb.size(); ++i)
    rgb[i] = static_cast<std::uint8_t>(std::lround(std::clamp(img.data[i], 0.0f, 1.0f) * 255.0f));
  nlohmann::json j = {{"id", id}, {"width", img.width}, {"height", img.height}, {"pixels", base64_encode(rgb)}};
  return j.dump();
}

struct DecodedRequest {
  std::uint64_t id = 0;
  ImageBuffer image;
};

inline DecodedRequest decode_request(std::string_view line) {
  const auto j = nlohmann::json::parse(line, nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw InvalidInput("protocol: request is not a JSON object");
  try {
    DecodedRequest r;
    r.id = j.at("id").get<std::uint64_t>();
    const int w = j.at("width").get<int>(), h = j.at("height").get<int>();
    const auto bytes = base64_decode(j.at("pixels").get<std::string>());
    if (w <= 0 || h <= 0 || bytes.size() != static_cast<std::size_t>(w) * h * 3)
      throw InvalidInput("protocol: pixel payload does not match width*height*3");
    r.image = ImageBuffer(w, h);
    for (std::size_t i = 0; i < bytes.size(); ++i) r.image.data[i] = static_cast<float>(bytes[i] / 255.0);
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInput(std::string("protocol: malformed request: ") + e.what());
  }
}

inline nlohmann::json detection_to_json(const DetectionVector& d) {
  return {{"box", {d.box.x1, d.box.y1, d.box.x2, d.box.y2}}, {"objectness", d.objectness}, {"scores", d.class_scores}};
}

inline DetectionVector detection_from_json(const nlohmann::json& j) {
  DetectionVector d;
  const auto& box = j.at("box");
  if (!box.is_array() || box.size() != 4) throw InvalidInput("protocol: box must have four coordinates");
  d.box = BBox{box[0].get<double>(), box[1].get<double>(), box[2].get<double>(), box[3].get<double>()};
  // Two-stage models without an objectness head report 1.
  d.objectness = j.contains("objectness") ? j.at("objectness").get<double>() : 1.0;
  d.class_scores = j.at("scores").get<std::vector<double>>();
  d.validate();
  return d;
}

inline std::string encode_response(std::uint64_t id, const ProposalSet& props) {
  nlohmann::json dets = nlohmann::json::array();
  for (const auto& d : props) dets.push_back(detection_to_json(d));
  return nlohmann::json{{"id", id}, {"detections", std::move(dets)}}.dump();
}

inline std::string encode_error(std::uint64_t id, std::string_view what) {
  return nlohmann::json{{"id", id}, {"error", what}}.dump();
}

struct DecodedResponse {
  std::uint64_t id = 0;
  ProposalSet detections;
};

inline DecodedResponse decode_response(std::string_view line) {
  const auto j = nlohmann::json::parse(line, nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw BackendError("protocol: response is not a JSON object");
  try {
    DecodedResponse r;
    r.id = j.at("id").get<std::uint64_t>();
    if (j.contains("error"))
      throw BackendError("detector reported error for request " + std::to_string(r.id) + ": " +
                         j.at("error").dump());
    for (const auto& d : j.at("detections")) r.detections.push_back(detection_from_json(d));
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw BackendError(std::string("protocol: malformed response: ") + e.what());
  } catch (const InvalidInput& e) {
    throw BackendError(std::string("protocol: invalid detection: ") + e.what());
  }
}

// Serves the protocol for `det` until `in` is exhausted. Malformed requests
// get an error response; the id is echoed when it can be recovered.
inline void serve_json_lines(std::istream& in, std::ostream& out, Detector& det) {
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::uint64_t id = 0;
    try {
      const auto j = nlohmann::json::parse(line, nullptr, false);
      if (j.is_object() && j.contains("id") && j["id"].is_number_unsigned()) id = j["id"].get<std::uint64_t>();
      const DecodedRequest req = decode_request(line);
      out << encode_response(req.id, det.detect(req.image)) << '\n';
    } catch (const std::exception& e) {
      out << encode_error(id, e.what()) << '\n';
    }
    out.flush();
  }
}

// ---------------------------------------------------------------------------
// Transports
// ---------------------------------------------------------------------------

namespace detail {

// Line-oriented reader/writer over file descriptors.
class LineChannel {
 public:
  LineChannel() = default;
  LineChannel(int read_fd, int write_fd) : rfd_(read_fd), wfd_(write_fd) {}

  void write_line(const std::string& s) {
    std::string buf = s;
    buf += '\n';
    std::size_t off = 0;
    while (off < buf.size()) {
      const ssize_t n = send_or_write(wfd_, buf.data() + off, buf.size() - off);
      if (n < 0) {
        if (errno == EINTR) continue;
        throw BackendError(std::string("detector channel write failed: ") + std::strerror(errno));
      }
      off += static_cast<std::size_t>(n);
    }
  }

  std::string read_line() {
    for (;;) {
      const auto nl = buf_.find('\n');
      if (nl != std::string::npos) {
        std::string line = buf_.substr(0, nl);
        buf_.erase(0, nl + 1);
        return line;
      }
      char tmp[65536];
      const ssize_t n = ::read(rfd_, tmp, sizeof tmp);
      if (n < 0) {
        if (errno == EINTR) continue;
        throw BackendError(std::string("detector channel read failed: ") + std::strerror(errno));
      }
      if (n == 0) throw BackendError("detector closed the connection");
      buf_.append(tmp, static_cast<std::size_t>(n));
    }
  }

 private:
  static ssize_t send_or_write(int fd, const char* p, std::size_t n) {
    const ssize_t r = ::send(fd, p, n, MSG_NOSIGNAL);
    if (r < 0 && errno == ENOTSOCK) return ::write(fd, p, n);
    return r;
  }

  int rfd_ = -1, wfd_ = -1;
  std::string buf_;
};

}  // namespace detail

// Shared request/response logic for the process and socket transports.
class RemoteDetector : public Detector {
 public:
  ProposalSet detect(const ImageBuffer& img) override {
    std::lock_guard lock(mu_);
    const std::uint64_t id = next_id_++;
    channel_.write_line(encode_request(id, img));
    DecodedResponse r = decode_response(channel_.read_line());
    if (r.id != id)
      throw BackendError("protocol: response id " + std::to_string(r.id) + " does not match request " +
                         std::to_string(id));
    if (classes_ == 0 && !r.detections.empty()) classes_ = r.detections.front().class_scores.size();
    for (const auto& d : r.detections)
      if (classes_ != 0 && d.class_scores.size() != classes_)
        throw BackendError("protocol: inconsistent class vector length");
    return std::move(r.detections);
  }

  // 0 until configured or learned from the first non-empty response.
  std::size_t num_classes() const override { return classes_; }
  std::vector<std::string> class_names() const override { return names_; }
  void set_class_names(std::vector<std::string> names) {
    names_ = std::move(names);
    if (classes_ == 0) classes_ = names_.size();
  }

 protected:
  explicit RemoteDetector(std::size_t classes) : classes_(classes) {}
  detail::LineChannel channel_;

 private:
  std::mutex mu_;
  std::uint64_t next_id_ = 1;
  std::size_t classes_;
  std::vector<std::string> names_;
};

// Runs `command` through /bin/sh and talks to it over stdin/stdout.
class SubprocessDetector final : public RemoteDetector {
 public:
  explicit SubprocessDetector(std::string command, std::size_t classes = 0)
      : RemoteDetector(classes), command_(std::move(command)) {
    static std::once_flag ignore_sigpipe;
    std::call_once(ignore_sigpipe, [] { ::signal(SIGPIPE, SIG_IGN); });
    int to_child[2], from_child[2];
    if (::pipe(to_child) != 0) throw BackendError("pipe() failed");
    if (::pipe(from_child) != 0) {
      ::close(to_child[0]);
      ::close(to_child[1]);
      throw BackendError("pipe() failed");
    }
    pid_ = ::fork();
    if (pid_ < 0) throw BackendError("fork() failed");
    if (pid_ == 0) {
      ::dup2(to_child[0], STDIN_FILENO);
      ::dup2(from_child[1], STDOUT_FILENO);
      ::close(to_child[0]);
      ::close(to_child[1]);
      ::close(from_child[0]);
      ::close(from_child[1]);
      ::execl("/bin/sh", "sh", "-c", command_.c_str(), static_cast<char*>(nullptr));
      ::_exit(127);
    }
    ::close(to_child[0]);
    ::close(from_child[1]);
    write_fd_ = to_child[1];
    read_fd_ = from_child[0];
    ::fcntl(write_fd_, F_SETFD, FD_CLOEXEC);
    ::fcntl(read_fd_, F_SETFD, FD_CLOEXEC);
    channel_ = detail::LineChannel(read_fd_, write_fd_);
  }

  ~SubprocessDetector() override {
    if (write_fd_ >= 0) ::close(write_fd_);
    if (read_fd_ >= 0) ::close(read_fd_);
    if (pid_ > 0) {
      int status = 0;
      ::waitpid(pid_, &status, 0);
    }
  }

  SubprocessDetector(const SubprocessDetector&) = delete;
  SubprocessDetector& operator=(const SubprocessDetector&) = delete;

  std::string descriptor() const override { return "subprocess:" + command_; }

 private:
  std::string command_;
  pid_t pid_ = -1;
  int write_fd_ = -1, read_fd_ = -1;
};

// Same payloads over a TCP connection to host:port.
class TcpDetector final : public RemoteDetector {
 public:
  TcpDetector(const std::string& host, const std::string& port, std::size_t classes = 0)
      : RemoteDetector(classes), address_(host + ":" + port) {
    addrinfo hints{};
    hints.ai_family = AF_UNSPEC;
    hints.ai_socktype = SOCK_STREAM;
    addrinfo* res = nullptr;
    if (const int rc = ::getaddrinfo(host.c_str(), port.c_str(), &hints, &res); rc != 0)
      throw BackendError("cannot resolve " + address_ + ": " + ::gai_strerror(rc));
    for (addrinfo* ai = res; ai; ai = ai->ai_next) {
      fd_ = ::socket(ai->ai_family, ai->ai_socktype, ai->ai_protocol);
      if (fd_ < 0) continue;
      if (::connect(fd_, ai->ai_addr, ai->ai_addrlen) == 0) break;
      ::close(fd_);
      fd_ = -1;
    }
    ::freeaddrinfo(res);
    if (fd_ < 0) throw BackendError("cannot connect to " + address_);
    channel_ = detail::LineChannel(fd_, fd_);
  }

  ~TcpDetector() override {
    if (fd_ >= 0) ::close(fd_);
  }

  TcpDetector(const TcpDetector&) = delete;
  TcpDetector& operator=(const TcpDetector&) = delete;

  std::string descriptor() const override { return "tcp:" + address_; }

 private:
  std::string address_;
  int fd_ = -1;
};

}  // namespace dclose
