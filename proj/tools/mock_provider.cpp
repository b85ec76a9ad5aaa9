// Stand-in activation provider: serves toy-model hidden states over the
// provider protocol. Useful for exercising the client without a real model.

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <sys/un.h>
#include <unistd.h>

#include <cstring>
#include <iostream>
#include <string>
#include <thread>

#include <CLI11.hpp>

#include "echoembed/echoembed.hpp"

namespace ee = echoembed;

namespace {

int listen_on(const std::string& address, std::string& bound) {
  if (address.rfind("unix:", 0) == 0) {
    const auto path = address.substr(5);
    sockaddr_un sa{};
    if (path.size() >= sizeof(sa.sun_path)) throw ee::Error(ee::Errc::invalid_config, "unix socket path too long");
    sa.sun_family = AF_UNIX;
    std::memcpy(sa.sun_path, path.c_str(), path.size() + 1);
    ::unlink(path.c_str());
    const int fd = ::socket(AF_UNIX, SOCK_STREAM, 0);
    if (fd < 0 || ::bind(fd, reinterpret_cast<sockaddr*>(&sa), sizeof(sa)) != 0 || ::listen(fd, 16) != 0) {
      throw ee::Error(ee::Errc::io_error, "cannot listen on " + address + ": " + std::strerror(errno));
    }
    bound = address;
    return fd;
  }
  const auto colon = address.rfind(':');
  if (colon == std::string::npos) throw ee::Error(ee::Errc::invalid_config, "listen address must be host:port");
  sockaddr_in sa{};
  sa.sin_family = AF_INET;
  sa.sin_port = htons(static_cast<std::uint16_t>(std::stoi(address.substr(colon + 1))));
  if (::inet_pton(AF_INET, address.substr(0, colon).c_str(), &sa.sin_addr) != 1) {
    throw ee::Error(ee::Errc::invalid_config, "listen host must be an IPv4 literal");
  }
  const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  const int one = 1;
  ::setsockopt(fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
  if (fd < 0 || ::bind(fd, reinterpret_cast<sockaddr*>(&sa), sizeof(sa)) != 0 || ::listen(fd, 16) != 0) {
    throw ee::Error(ee::Errc::io_error, "cannot listen on " + address + ": " + std::strerror(errno));
  }
  socklen_t len = sizeof(sa);
  ::getsockname(fd, reinterpret_cast<sockaddr*>(&sa), &len);
  bound = address.substr(0, colon) + ":" + std::to_string(ntohs(sa.sin_port));
  return fd;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Toy-model activation provider"};
  std::string address = "127.0.0.1:0";
  std::string model_name = "toy";
  ee::ToyModelConfig config;
  std::string attention = "causal";
  bool once = false;
  app.add_option("--listen", address, "host:port (port 0 picks one) or unix:/path")->capture_default_str();
  app.add_option("--model-name", model_name, "Model id announced in the handshake")->capture_default_str();
  app.add_option("--model-seed", config.seed, "Toy model seed")->capture_default_str();
  app.add_option("--vocab", config.vocab_size, "Toy vocabulary size")->capture_default_str();
  app.add_option("--dim", config.dim, "Hidden size")->capture_default_str();
  app.add_option("--layers", config.n_layers, "Layers")->capture_default_str();
  app.add_option("--heads", config.n_heads, "Heads")->capture_default_str();
  app.add_option("--max-seq-len", config.max_seq_len, "Longest accepted sequence")->capture_default_str();
  app.add_option("--attention", attention, "causal or bidirectional")
      ->check(CLI::IsMember({"causal", "bidirectional"}))
      ->capture_default_str();
  app.add_flag("--once", once, "Exit after the first connection closes");
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    config.attention = ee::parse_attention(attention);
    const ee::ToyBackend backend(ee::ToyModel::init(config));
    const ee::ProviderInfo info{model_name, config.dim, config.max_seq_len};
    const ee::HiddenStateHandler handler = [&backend](std::string_view text) {
      auto b = backend;  // forward is pure; a copy keeps connections independent
      return b.encode(text);
    };
    std::string bound;
    const int listener = listen_on(address, bound);
    std::cout << "listening " << bound << std::endl;
    for (;;) {
      const int fd = ::accept(listener, nullptr, nullptr);
      if (fd < 0) continue;
      if (once) {
        ee::FdLineStream stream(fd);
        ee::serve_connection(stream, info, handler);
        break;
      }
      std::thread([fd, &info, &handler] {
        ee::FdLineStream stream(fd);
        ee::serve_connection(stream, info, handler);
      }).detach();
    }
    ::close(listener);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
