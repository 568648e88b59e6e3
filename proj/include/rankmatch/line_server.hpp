#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <mutex>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

namespace rankmatch {

/// Newline-delimited request/response server over TCP. Each connection
/// gets its own thread; `QUIT` closes the connection.
class LineServer {
public:
    using Handler = std::function<std::string(std::string_view)>;

    explicit LineServer(Handler handler);
    ~LineServer();

    LineServer(const LineServer&) = delete;
    LineServer& operator=(const LineServer&) = delete;

    /// Binds and listens; port 0 picks a free port. Throws Error{io_error}.
    void listen(const std::string& host, std::uint16_t port);
    std::uint16_t port() const noexcept { return port_; }

    /// Accepts connections until stop(). Blocks.
    void serve();
    /// Runs serve() on a background thread.
    void start();
    void stop();

private:
    void handle_connection(int fd);

    Handler handler_;
    int listen_fd_ = -1;
    std::uint16_t port_ = 0;
    std::atomic<bool> stopping_{false};
    std::thread accept_thread_;
    std::mutex connections_mutex_;
    std::vector<int> connection_fds_;
    std::vector<std::thread> connection_threads_;
};

/// "host:port" -> (host, port). Throws Error{parse_error}.
std::pair<std::string, std::uint16_t> parse_listen_address(std::string_view address);

} // namespace rankmatch
