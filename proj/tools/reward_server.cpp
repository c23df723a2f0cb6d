#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdio>
#include <stdexcept>
#include <string>
#include <thread>

#include <CLI11.hpp>

#include "tinygrpo/reward_service.hpp"

namespace {

std::atomic<bool> g_stop{false};

void handle_signal(int) { g_stop.store(true); }

// "host:port" -> (host, port); bare ":port" binds 127.0.0.1.
std::pair<std::string, int> parse_listen(const std::string& addr) {
    size_t colon = addr.rfind(':');
    if (colon == std::string::npos)
        throw std::runtime_error("--listen expects host:port, got '" + addr + "'");
    std::string host = addr.substr(0, colon);
    if (host.empty()) host = "127.0.0.1";
    int port = 0;
    try {
        size_t used = 0;
        port = std::stoi(addr.substr(colon + 1), &used);
        if (used != addr.size() - colon - 1) throw std::invalid_argument("");
    } catch (const std::exception&) {
        throw std::runtime_error("bad port in '" + addr + "'");
    }
    if (port < 0 || port > 65535)
        throw std::runtime_error("port out of range in '" + addr + "'");
    return {host, port};
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"line-delimited reward verification service"};
    std::string listen = "127.0.0.1:7733";
    int workers = 4;
    int timeout_ms = 5000;
    int queue_capacity = 256;
    app.add_option("--listen", listen, "host:port to bind (port 0 = ephemeral)");
    app.add_option("--workers", workers, "verifier worker threads")
        ->check(CLI::PositiveNumber);
    app.add_option("--timeout-ms", timeout_ms, "per-request verification budget")
        ->check(CLI::PositiveNumber);
    app.add_option("--queue", queue_capacity, "pending-request capacity")
        ->check(CLI::PositiveNumber);
    CLI11_PARSE(app, argc, argv);

    try {
        auto [host, port] = parse_listen(listen);
        tinygrpo::ServiceConfig cfg;
        cfg.host = host;
        cfg.port = port;
        cfg.workers = workers;
        cfg.timeout_ms = timeout_ms;
        cfg.queue_capacity = queue_capacity;

        tinygrpo::RewardService service(cfg);
        service.start();
        std::printf("listening on %s:%d (%d workers, %d ms budget)\n",
                    host.c_str(), service.port(), workers, timeout_ms);
        std::fflush(stdout);

        std::signal(SIGINT, handle_signal);
        std::signal(SIGTERM, handle_signal);
        while (!g_stop.load())
            std::this_thread::sleep_for(std::chrono::milliseconds(50));

        std::printf("shutting down: %d timeouts, %d crash replies, "
                    "%d replacement workers, %llu framing errors\n",
                    service.timeout_replies(), service.crash_replies(),
                    service.replacements_spawned(),
                    static_cast<unsigned long long>(service.framing_errors()));
        service.stop();
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
