#pragma once

// Client and server halves of the activation-provider protocol (v1).
//
// Frames are single-line JSON objects terminated by '\n':
//   client  {"type":"hello","version":1}
//   server  {"type":"hello","version":1,"model":<id>,"dim":d,"max_seq_len":N}
//   client  {"type":"hidden","id":<u64>,"text":<string>}
//   server  {"type":"hidden","id":<u64>,"offsets":[[b,e],...],"states":[[f32,...],...]}
//      or   {"type":"error","id":<u64>,"message":<string>}
//
// Offsets are byte offsets into the request text. One request is in flight
// per connection.

#include <poll.h>
#include <sys/socket.h>
#include <sys/types.h>
#include <sys/un.h>
#include <netdb.h>
#include <netinet/in.h>
#include <unistd.h>

#include <cerrno>
#include <cmath>
#include <chrono>
#include <cstdint>
#include <cstring>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "echoembed/backend.hpp"
#include "echoembed/error.hpp"

namespace echoembed {

inline constexpr int kProtocolVersion = 1;

/// Bidirectional newline-delimited byte stream.
class LineStream {
 public:
  virtual ~LineStream() = default;
  virtual void write_line(std::string_view line) = 0;
  /// Next line without its terminator; nullopt on clean end of stream.
  virtual std::optional<std::string> read_line(std::chrono::milliseconds timeout) = 0;
};

/// LineStream over POSIX descriptors (a socket, or a pipe pair). Owns them.
class FdLineStream final : public LineStream {
 public:
  FdLineStream(int read_fd, int write_fd) : read_fd_(read_fd), write_fd_(write_fd) {}
  explicit FdLineStream(int fd) : FdLineStream(fd, fd) {}
  FdLineStream(const FdLineStream&) = delete;
  FdLineStream& operator=(const FdLineStream&) = delete;
  ~FdLineStream() override {
    if (read_fd_ >= 0) ::close(read_fd_);
    if (write_fd_ >= 0 && write_fd_ != read_fd_) ::close(write_fd_);
  }

  void write_line(std::string_view line) override {
    std::string buf(line);
    buf.push_back('\n');
    std::size_t sent = 0;
    while (sent < buf.size()) {
      ssize_t n = ::send(write_fd_, buf.data() + sent, buf.size() - sent, MSG_NOSIGNAL);
      if (n < 0 && errno == ENOTSOCK) n = ::write(write_fd_, buf.data() + sent, buf.size() - sent);
      if (n < 0) {
        if (errno == EINTR) continue;
        throw Error(Errc::protocol_error, std::string("write failed: ") + std::strerror(errno));
      }
      sent += static_cast<std::size_t>(n);
    }
  }

  std::optional<std::string> read_line(std::chrono::milliseconds timeout) override {
    const auto deadline = std::chrono::steady_clock::now() + timeout;
    for (;;) {
      if (const auto nl = buffer_.find('\n'); nl != std::string::npos) {
        auto line = buffer_.substr(0, nl);
        buffer_.erase(0, nl + 1);
        return line;
      }
      if (eof_) {
        if (buffer_.empty()) return std::nullopt;
        throw Error(Errc::protocol_error, "stream ended inside a frame");
      }
      const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
      if (left.count() <= 0) throw Error(Errc::timeout, "no frame within " + std::to_string(timeout.count()) + " ms");
      pollfd pfd{read_fd_, POLLIN, 0};
      const int ready = ::poll(&pfd, 1, static_cast<int>(left.count()));
      if (ready < 0) {
        if (errno == EINTR) continue;
        throw Error(Errc::protocol_error, std::string("poll failed: ") + std::strerror(errno));
      }
      if (ready == 0) continue;
      char chunk[65536];
      const ssize_t n = ::read(read_fd_, chunk, sizeof(chunk));
      if (n < 0) {
        if (errno == EINTR) continue;
        throw Error(Errc::protocol_error, std::string("read failed: ") + std::strerror(errno));
      }
      if (n == 0) eof_ = true;
      buffer_.append(chunk, static_cast<std::size_t>(n));
    }
  }

 private:
  int read_fd_;
  int write_fd_;
  std::string buffer_;
  bool eof_ = false;
};

/// Connects to "host:port", "tcp://host:port" or "unix:/path".
inline std::unique_ptr<LineStream> connect_stream(const std::string& address) {
  if (address.empty()) throw Error(Errc::protocol_error, "empty provider address");
  if (address.rfind("unix:", 0) == 0) {
    const auto path = address.substr(5);
    sockaddr_un sa{};
    if (path.size() >= sizeof(sa.sun_path)) throw Error(Errc::protocol_error, "unix socket path too long");
    sa.sun_family = AF_UNIX;
    std::memcpy(sa.sun_path, path.c_str(), path.size() + 1);
    const int fd = ::socket(AF_UNIX, SOCK_STREAM, 0);
    if (fd < 0) throw Error(Errc::protocol_error, std::string("socket: ") + std::strerror(errno));
    if (::connect(fd, reinterpret_cast<sockaddr*>(&sa), sizeof(sa)) != 0) {
      const int err = errno;
      ::close(fd);
      throw Error(Errc::protocol_error, "cannot connect to " + address + ": " + std::strerror(err));
    }
    return std::make_unique<FdLineStream>(fd);
  }
  auto hostport = address.rfind("tcp://", 0) == 0 ? address.substr(6) : address;
  const auto colon = hostport.rfind(':');
  if (colon == std::string::npos || colon == 0 || colon + 1 == hostport.size()) {
    throw Error(Errc::protocol_error, "provider address must be host:port, tcp://host:port or unix:/path, got '" +
                                          address + "'");
  }
  const auto host = hostport.substr(0, colon);
  const auto port = hostport.substr(colon + 1);
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  if (const int rc = ::getaddrinfo(host.c_str(), port.c_str(), &hints, &res); rc != 0) {
    throw Error(Errc::protocol_error, "cannot resolve " + address + ": " + ::gai_strerror(rc));
  }
  std::unique_ptr<addrinfo, decltype(&::freeaddrinfo)> guard(res, &::freeaddrinfo);
  std::string last_error = "no addresses";
  for (auto* ai = res; ai; ai = ai->ai_next) {
    const int fd = ::socket(ai->ai_family, ai->ai_socktype, ai->ai_protocol);
    if (fd < 0) continue;
    if (::connect(fd, ai->ai_addr, ai->ai_addrlen) == 0) return std::make_unique<FdLineStream>(fd);
    last_error = std::strerror(errno);
    ::close(fd);
  }
  throw Error(Errc::protocol_error, "cannot connect to " + address + ": " + last_error);
}

struct ProviderInfo {
  std::string model;
  std::size_t dim = 0;
  std::size_t max_seq_len = 0;
};

namespace protocol {

inline nlohmann::json parse_frame(std::string_view line) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::protocol_error, std::string("malformed frame: ") + e.what());
  }
  if (!j.is_object() || !j.contains("type") || !j["type"].is_string()) {
    throw Error(Errc::protocol_error, "frame without a string \"type\"");
  }
  return j;
}

inline std::string hello_request() { return nlohmann::json{{"type", "hello"}, {"version", kProtocolVersion}}.dump(); }

inline std::string hello_reply(const ProviderInfo& info) {
  return nlohmann::json{{"type", "hello"},
                        {"version", kProtocolVersion},
                        {"model", info.model},
                        {"dim", info.dim},
                        {"max_seq_len", info.max_seq_len}}
      .dump();
}

inline std::string hidden_request(std::uint64_t id, std::string_view text) {
  return nlohmann::json{{"type", "hidden"}, {"id", id}, {"text", std::string(text)}}.dump();
}

inline std::string error_frame(std::uint64_t id, std::string_view message) {
  return nlohmann::json{{"type", "error"}, {"id", id}, {"message", std::string(message)}}.dump(
      -1, ' ', false, nlohmann::json::error_handler_t::replace);
}

/// States are sent as 32-bit floats.
inline std::string hidden_reply(std::uint64_t id, const std::vector<ByteRange>& offsets, const HiddenStates& states) {
  nlohmann::json offs = nlohmann::json::array();
  for (const auto& [b, e] : offsets) offs.push_back({b, e});
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t r = 0; r < states.rows; ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (double v : states.row(r)) row.push_back(static_cast<float>(v));
    rows.push_back(std::move(row));
  }
  return nlohmann::json{{"type", "hidden"}, {"id", id}, {"offsets", std::move(offs)}, {"states", std::move(rows)}}
      .dump();
}

inline ProviderInfo parse_hello_reply(std::string_view line) {
  const auto j = parse_frame(line);
  if (j["type"] == "error") throw Error(Errc::protocol_error, "provider refused handshake: " + j.value("message", ""));
  if (j["type"] != "hello") throw Error(Errc::protocol_error, "expected hello frame");
  try {
    if (j.at("version").get<int>() != kProtocolVersion) {
      throw Error(Errc::protocol_error, "unsupported protocol version " + j.at("version").dump());
    }
    ProviderInfo info{j.at("model").get<std::string>(), j.at("dim").get<std::size_t>(),
                      j.at("max_seq_len").get<std::size_t>()};
    if (info.dim == 0) throw Error(Errc::protocol_error, "provider declared dim 0");
    return info;
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::protocol_error, std::string("bad hello frame: ") + e.what());
  }
}

/// Validates a hidden-state reply against the request.
inline Backend::Output parse_hidden_reply(std::string_view line, std::uint64_t expected_id, std::size_t dim,
                                          std::size_t text_size) {
  const auto j = parse_frame(line);
  try {
    if (j["type"] == "error") {
      throw Error(Errc::protocol_error, "provider error: " + j.at("message").get<std::string>());
    }
    if (j["type"] != "hidden") throw Error(Errc::protocol_error, "expected hidden frame");
    if (j.at("id").get<std::uint64_t>() != expected_id) {
      throw Error(Errc::protocol_error, "reply id " + j.at("id").dump() + " does not match request " +
                                            std::to_string(expected_id));
    }
    const auto& offs = j.at("offsets");
    const auto& rows = j.at("states");
    if (!offs.is_array() || !rows.is_array()) throw Error(Errc::protocol_error, "offsets/states must be arrays");
    if (offs.size() != rows.size()) {
      throw Error(Errc::protocol_error, std::to_string(rows.size()) + " state rows for " +
                                            std::to_string(offs.size()) + " offsets");
    }
    Backend::Output out;
    out.states = HiddenStates(rows.size(), dim);
    std::size_t prev_end = 0;
    for (std::size_t i = 0; i < offs.size(); ++i) {
      const auto b = offs[i].at(0).get<std::size_t>();
      const auto e = offs[i].at(1).get<std::size_t>();
      if (offs[i].size() != 2 || e < b || b < prev_end || e > text_size) {
        throw Error(Errc::protocol_error, "offset " + std::to_string(i) + " is out of order or out of range");
      }
      prev_end = e;
      out.tokens.offsets.emplace_back(b, e);
      out.tokens.token_ids.push_back(0);  // ids are not transmitted
      const auto& row = rows[i];
      if (!row.is_array() || row.size() != dim) {
        throw Error(Errc::dimension_mismatch, "row " + std::to_string(i) + " has " + std::to_string(row.size()) +
                                                  " values, handshake declared " + std::to_string(dim));
      }
      for (std::size_t k = 0; k < dim; ++k) {
        const double v = row[k].get<double>();
        if (!std::isfinite(v)) throw Error(Errc::protocol_error, "non-finite state value");
        out.states.data[i * dim + k] = v;
      }
    }
    return out;
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::protocol_error, std::string("bad hidden frame: ") + e.what());
  }
}

}  // namespace protocol

/// Client end of one provider connection.
class ProviderClient {
 public:
  explicit ProviderClient(std::unique_ptr<LineStream> stream,
                          std::chrono::milliseconds timeout = std::chrono::milliseconds(30000))
      : stream_(std::move(stream)), timeout_(timeout) {
    stream_->write_line(protocol::hello_request());
    info_ = protocol::parse_hello_reply(next_line());
  }

  const ProviderInfo& info() const noexcept { return info_; }

  Backend::Output hidden_states(std::string_view text) {
    const auto id = next_id_++;
    stream_->write_line(protocol::hidden_request(id, text));
    return protocol::parse_hidden_reply(next_line(), id, info_.dim, text.size());
  }

 private:
  std::string next_line() {
    auto line = stream_->read_line(timeout_);
    if (!line) throw Error(Errc::protocol_error, "provider closed the connection");
    return std::move(*line);
  }

  std::unique_ptr<LineStream> stream_;
  std::chrono::milliseconds timeout_;
  ProviderInfo info_;
  std::uint64_t next_id_ = 1;
};

class ProviderBackend final : public Backend {
 public:
  explicit ProviderBackend(std::unique_ptr<LineStream> stream,
                           std::chrono::milliseconds timeout = std::chrono::milliseconds(30000))
      : client_(std::move(stream), timeout) {}

  Output encode(std::string_view text) override { return client_.hidden_states(text); }
  std::size_t dim() const override { return client_.info().dim; }
  std::size_t max_seq_len() const override { return client_.info().max_seq_len; }
  const ProviderInfo& info() const noexcept { return client_.info(); }

 private:
  ProviderClient client_;
};

// ---------------------------------------------------------------------------
// Server side, used by the mock provider and tests.

/// Produces offsets and states for a request text; throw to send an error frame.
using HiddenStateHandler = std::function<Backend::Output(std::string_view text)>;

/// Serves one connection until the peer hangs up. Malformed or unexpected
/// frames get an error frame and the connection stays open.
inline void serve_connection(LineStream& stream, const ProviderInfo& info, const HiddenStateHandler& handler,
                             std::chrono::milliseconds idle_timeout = std::chrono::hours(24)) {
  for (;;) {
    std::optional<std::string> line;
    try {
      line = stream.read_line(idle_timeout);
    } catch (const Error&) {
      return;
    }
    if (!line) return;
    std::uint64_t id = 0;
    try {
      const auto j = protocol::parse_frame(*line);
      if (j.contains("id") && j["id"].is_number_unsigned()) id = j["id"].get<std::uint64_t>();
      if (j["type"] == "hello") {
        stream.write_line(protocol::hello_reply(info));
      } else if (j["type"] == "hidden") {
        if (!j.contains("text") || !j["text"].is_string()) throw Error(Errc::protocol_error, "hidden request without text");
        const auto out = handler(j["text"].get<std::string>());
        stream.write_line(protocol::hidden_reply(id, out.tokens.offsets, out.states));
      } else {
        throw Error(Errc::protocol_error, "unknown frame type " + j["type"].dump());
      }
    } catch (const std::exception& e) {
      try {
        stream.write_line(protocol::error_frame(id, e.what()));
      } catch (const Error&) {
        return;
      }
    }
  }
}

}  // namespace echoembed
