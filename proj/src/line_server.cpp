#include "rankmatch/line_server.hpp"

#include "rankmatch/error.hpp"

#include <algorithm>
#include <arpa/inet.h>
#include <cerrno>
#include <charconv>
#include <cstring>
#include <netdb.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

namespace rankmatch {

namespace {

bool send_all(int fd, std::string_view data)
{
    while (!data.empty()) {
        const auto n = ::send(fd, data.data(), data.size(), MSG_NOSIGNAL);
        if (n < 0) {
            if (errno == EINTR) continue;
            return false;
        }
        data.remove_prefix(static_cast<std::size_t>(n));
    }
    return true;
}

} // namespace

std::pair<std::string, std::uint16_t> parse_listen_address(std::string_view address)
{
    const auto colon = address.rfind(':');
    if (colon == std::string_view::npos || colon == 0)
        throw Error(Errc::parse_error, "listen address must be host:port, got '"
                                           + std::string(address) + "'");
    const auto port_text = address.substr(colon + 1);
    unsigned port = 0;
    auto [ptr, ec] = std::from_chars(port_text.data(), port_text.data() + port_text.size(), port);
    if (ec != std::errc{} || ptr != port_text.data() + port_text.size() || port > 65535)
        throw Error(Errc::parse_error, "bad port in '" + std::string(address) + "'");
    return {std::string(address.substr(0, colon)), static_cast<std::uint16_t>(port)};
}

LineServer::LineServer(Handler handler) : handler_(std::move(handler)) {}

LineServer::~LineServer() { stop(); }

void LineServer::listen(const std::string& host, std::uint16_t port)
{
    addrinfo hints{};
    hints.ai_family = AF_INET;
    hints.ai_socktype = SOCK_STREAM;
    addrinfo* found = nullptr;
    if (const int rc = ::getaddrinfo(host.c_str(), nullptr, &hints, &found); rc != 0)
        throw Error(Errc::io_error, "cannot resolve '" + host + "': " + ::gai_strerror(rc));
    sockaddr_in addr{};
    std::memcpy(&addr, found->ai_addr, sizeof addr);
    ::freeaddrinfo(found);
    addr.sin_port = htons(port);

    listen_fd_ = ::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0);
    if (listen_fd_ < 0) throw Error(Errc::io_error, std::string("socket: ") + std::strerror(errno));
    const int yes = 1;
    ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof yes);
    if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) < 0
        || ::listen(listen_fd_, 64) < 0) {
        const std::string why = std::strerror(errno);
        ::close(listen_fd_);
        listen_fd_ = -1;
        throw Error(Errc::io_error, "cannot listen on " + host + ":" + std::to_string(port) + ": " + why);
    }
    socklen_t len = sizeof addr;
    ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
    port_ = ntohs(addr.sin_port);
}

void LineServer::serve()
{
    while (!stopping_) {
        const int fd = ::accept4(listen_fd_, nullptr, nullptr, SOCK_CLOEXEC);
        if (fd < 0) {
            if (errno == EINTR || errno == ECONNABORTED) continue;
            break;
        }
        std::lock_guard lock(connections_mutex_);
        if (stopping_) {
            ::close(fd);
            break;
        }
        connection_fds_.push_back(fd);
        connection_threads_.emplace_back([this, fd] { handle_connection(fd); });
    }
}

void LineServer::start()
{
    accept_thread_ = std::thread([this] { serve(); });
}

void LineServer::stop()
{
    if (stopping_.exchange(true)) return;
    if (listen_fd_ >= 0) ::shutdown(listen_fd_, SHUT_RDWR);
    if (accept_thread_.joinable()) accept_thread_.join();
    if (listen_fd_ >= 0) {
        ::close(listen_fd_);
        listen_fd_ = -1;
    }
    std::vector<std::thread> threads;
    {
        std::lock_guard lock(connections_mutex_);
        for (int fd : connection_fds_) ::shutdown(fd, SHUT_RDWR);
        threads.swap(connection_threads_);
    }
    for (auto& t : threads) t.join();
}

void LineServer::handle_connection(int fd)
{
    std::string buffer;
    char chunk[4096];
    bool open = true;
    while (open) {
        const auto n = ::recv(fd, chunk, sizeof chunk, 0);
        if (n < 0 && errno == EINTR) continue;
        if (n <= 0) break;
        buffer.append(chunk, static_cast<std::size_t>(n));
        std::size_t newline;
        while (open && (newline = buffer.find('\n')) != std::string::npos) {
            std::string line = buffer.substr(0, newline);
            buffer.erase(0, newline + 1);
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (line == "QUIT") {
                open = false;
                break;
            }
            if (!send_all(fd, handler_(line) + '\n')) open = false;
        }
    }
    std::lock_guard lock(connections_mutex_);
    connection_fds_.erase(std::remove(connection_fds_.begin(), connection_fds_.end(), fd),
                          connection_fds_.end());
    ::close(fd);
}

} // namespace rankmatch
