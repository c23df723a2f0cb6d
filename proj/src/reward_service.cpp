#include "tinygrpo/reward_service.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstring>

#include "json.hpp"
#include "tinygrpo/tasks.hpp"

namespace tinygrpo {

using Clock = std::chrono::steady_clock;

// ---- default verifier ----

VerifierFn default_verifier() {
    return [](const std::string& task_id, const std::string& payload,
              const std::string& response) -> VerifierOutcome {
        if (task_id.rfind("chaos:", 0) == 0) {
            nlohmann::json pj = nlohmann::json::parse(payload);
            const std::string mode = pj.at("mode").get<std::string>();
            if (mode == "crash") throw std::runtime_error("chaos: deliberate crash");
            if (mode == "sleep") {
                const int ms = pj.at("ms").get<int>();
                std::this_thread::sleep_for(std::chrono::milliseconds(ms));
            } else if (mode != "ok") {
                throw std::runtime_error("chaos: unknown mode " + mode);
            }
            VerifierOutcome out;
            out.reward = pj.value("reward", 1.0);
            out.parsed_ok = true;
            out.terminated_ok = true;
            return out;
        }
        auto family = family_of_task(task_id);
        if (!family) throw UnknownTaskError("unknown task family: " + task_id);
        VerifierResult r = verify(*family, payload, response);
        return {r.reward, r.parsed_ok, r.terminated_ok};
    };
}

// ---- VerifierPool ----

struct VerifierPool::Job {
    RewardRequest req;
    Deliver deliver;
    Clock::time_point deadline;
    std::atomic<bool> answered{false};
    std::atomic<bool> running{false};
    std::atomic<bool> replaced{false};
};

VerifierPool::VerifierPool(int workers, int timeout_ms, int queue_capacity,
                           VerifierFn fn)
    : target_workers_(workers),
      timeout_ms_(timeout_ms),
      queue_capacity_(static_cast<size_t>(queue_capacity)),
      verify_(std::move(fn)) {
    if (workers < 1 || timeout_ms <= 0 || queue_capacity < 1)
        throw std::invalid_argument("pool config out of range");
    std::lock_guard<std::mutex> lock(mu_);
    for (int i = 0; i < workers; ++i) spawn_worker_locked();
    watchdog_ = std::thread([this] { watchdog_loop(); });
}

VerifierPool::~VerifierPool() { stop(); }

void VerifierPool::spawn_worker_locked() {
    ++live_workers_;
    threads_.emplace_back([this] { worker_loop(); });
}

void VerifierPool::reply_once(Job& job, const RewardReply& reply) {
    if (!job.answered.exchange(true)) job.deliver(reply);
}

void VerifierPool::submit(const RewardRequest& req, Deliver deliver) {
    JobPtr job = std::make_shared<Job>();
    job->req = req;
    job->deliver = std::move(deliver);
    job->deadline = Clock::now() + std::chrono::milliseconds(timeout_ms_);
    std::unique_lock<std::mutex> lock(mu_);
    queue_push_cv_.wait(lock, [this] {
        return stopping_ || queue_.size() < queue_capacity_;
    });
    if (stopping_) throw std::runtime_error("pool is stopping");
    queue_.push_back(job);
    inflight_.push_back(std::move(job));
    queue_pop_cv_.notify_one();
}

RewardReply VerifierPool::run_job(const Job& job) {
    RewardReply reply;
    reply.request_id = job.req.request_id;
    try {
        VerifierOutcome out =
            verify_(job.req.task_id, job.req.prompt_payload, job.req.response_text);
        reply.reward = std::isfinite(out.reward)
                           ? std::clamp(out.reward, 0.0, 1.0)
                           : 0.0;
        reply.parsed_ok = out.parsed_ok;
        reply.terminated_ok = out.terminated_ok;
    } catch (const UnknownTaskError&) {
        reply.reward = 0.0;
        reply.error_code = "unknown_task";
    } catch (const std::exception&) {
        reply.reward = 0.0;
        reply.error_code = "worker_crash";
        ++crashes_;
    }
    return reply;
}

void VerifierPool::worker_loop() {
    for (;;) {
        JobPtr job;
        {
            std::unique_lock<std::mutex> lock(mu_);
            queue_pop_cv_.wait(lock, [this] { return stopping_ || !queue_.empty(); });
            if (queue_.empty()) return; // stopping and drained
            job = std::move(queue_.front());
            queue_.pop_front();
            queue_push_cv_.notify_one();
        }
        if (job->answered.load()) continue; // timed out while queued
        job->running.store(true);
        RewardReply reply = run_job(*job);
        job->running.store(false);
        reply_once(*job, reply);
        // if the watchdog grew the pool while this worker was stuck, let
        // the surplus drain back to the target size
        {
            std::lock_guard<std::mutex> lock(mu_);
            if (live_workers_ > target_workers_ && !stopping_) {
                --live_workers_;
                return;
            }
        }
    }
}

void VerifierPool::watchdog_loop() {
    for (;;) {
        {
            std::unique_lock<std::mutex> lock(mu_);
            if (stopping_) return;
        }
        std::this_thread::sleep_for(std::chrono::milliseconds(2));
        const Clock::time_point now = Clock::now();
        std::lock_guard<std::mutex> lock(mu_);
        if (stopping_) return;
        for (auto it = inflight_.begin(); it != inflight_.end();) {
            Job& job = **it;
            if (job.answered.load() && !job.running.load()) {
                it = inflight_.erase(it);
                continue;
            }
            if (!job.answered.load() && now >= job.deadline) {
                // restore pool strength and bump counters before delivering,
                // so whoever receives the timeout reply observes them updated
                if (job.running.load() && !job.replaced.exchange(true)) {
                    spawn_worker_locked();
                    ++replacements_;
                }
                ++timeouts_;
                RewardReply reply;
                reply.request_id = job.req.request_id;
                reply.reward = 0.0;
                reply.error_code = "timeout";
                reply_once(job, reply);
            }
            ++it;
        }
    }
}

void VerifierPool::stop() {
    {
        std::lock_guard<std::mutex> lock(mu_);
        if (stopping_) {
            // second call: threads already told to wind down
        }
        stopping_ = true;
    }
    queue_pop_cv_.notify_all();
    queue_push_cv_.notify_all();
    if (watchdog_.joinable()) watchdog_.join();
    std::vector<std::thread> threads;
    {
        std::lock_guard<std::mutex> lock(mu_);
        threads.swap(threads_);
    }
    for (std::thread& t : threads)
        if (t.joinable()) t.join();
}

// ---- TCP service ----

// The reader thread owns the final close; other threads only shut the
// socket down, so the descriptor number can never be recycled under a
// concurrent send/recv.
struct RewardService::Connection {
    int fd = -1;
    std::mutex mu;
    bool open = true;   // writes allowed
    bool closed = false;// fd returned to the OS (reader thread only)

    bool write_line(const std::string& line) {
        std::lock_guard<std::mutex> lock(mu);
        if (!open) return false;
        std::string framed = line + "\n";
        size_t sent = 0;
        while (sent < framed.size()) {
            const ssize_t n =
                ::send(fd, framed.data() + sent, framed.size() - sent, MSG_NOSIGNAL);
            if (n <= 0) {
                open = false;
                return false;
            }
            sent += static_cast<size_t>(n);
        }
        return true;
    }

    // wakes a blocked recv; safe from any thread
    void request_shutdown() {
        std::lock_guard<std::mutex> lock(mu);
        if (open && !closed) ::shutdown(fd, SHUT_RDWR);
        open = false;
    }

    // reader thread, exactly once, on exit
    void final_close() {
        std::lock_guard<std::mutex> lock(mu);
        open = false;
        if (!closed) {
            closed = true;
            ::close(fd);
        }
    }
};

RewardService::RewardService(ServiceConfig cfg, VerifierFn fn)
    : cfg_(cfg), pool_(cfg.workers, cfg.timeout_ms, cfg.queue_capacity, std::move(fn)) {}

RewardService::~RewardService() { stop(); }

void RewardService::start() {
    listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (listen_fd_ < 0) throw std::runtime_error("socket() failed");
    const int one = 1;
    ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(static_cast<uint16_t>(cfg_.port));
    if (::inet_pton(AF_INET, cfg_.host.c_str(), &addr.sin_addr) != 1)
        throw std::runtime_error("bad listen address: " + cfg_.host);
    if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0) {
        ::close(listen_fd_);
        listen_fd_ = -1;
        throw std::runtime_error("bind failed on " + cfg_.host + ":" +
                                 std::to_string(cfg_.port));
    }
    if (::listen(listen_fd_, 64) != 0) {
        ::close(listen_fd_);
        listen_fd_ = -1;
        throw std::runtime_error("listen failed");
    }
    socklen_t len = sizeof addr;
    ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
    port_ = ntohs(addr.sin_port);
    acceptor_ = std::thread([this] { acceptor_loop(); });
}

void RewardService::acceptor_loop() {
    for (;;) {
        const int fd = ::accept(listen_fd_, nullptr, nullptr);
        if (fd < 0) return; // listen socket closed: shutting down
        auto conn = std::make_shared<Connection>();
        conn->fd = fd;
        std::lock_guard<std::mutex> lock(conns_mu_);
        if (stopping_.load()) {
            ::close(fd);
            return;
        }
        conns_.push_back(conn);
        readers_.emplace_back([this, conn] { reader_loop(conn); });
    }
}

void RewardService::reader_loop(std::shared_ptr<Connection> conn) {
    std::string buffer;
    char chunk[4096];
    bool pool_down = false;
    while (!pool_down) {
        const ssize_t n = ::recv(conn->fd, chunk, sizeof chunk, 0);
        if (n <= 0) break;
        buffer.append(chunk, static_cast<size_t>(n));
        size_t start = 0;
        while (!pool_down) {
            const size_t nl = buffer.find('\n', start);
            if (nl == std::string::npos) break;
            std::string line = buffer.substr(start, nl - start);
            start = nl + 1;
            if (line.empty()) continue;
            std::string err;
            auto req = decode_request(line, &err);
            if (!req) {
                // framing error: count it, skip to the next line
                framing_errors_.fetch_add(1);
                continue;
            }
            try {
                pool_.submit(*req, [conn](const RewardReply& reply) {
                    conn->write_line(encode_reply(reply));
                });
            } catch (const std::exception&) {
                pool_down = true; // pool stopping: drop the connection
            }
        }
        buffer.erase(0, start);
    }
    conn->final_close();
}

void RewardService::stop() {
    if (stopping_.exchange(true)) return;
    if (listen_fd_ >= 0) {
        ::shutdown(listen_fd_, SHUT_RDWR);
        ::close(listen_fd_);
    }
    if (acceptor_.joinable()) acceptor_.join();
    {
        std::lock_guard<std::mutex> lock(conns_mu_);
        for (auto& c : conns_) c->request_shutdown();
    }
    pool_.stop();
    std::vector<std::thread> readers;
    {
        std::lock_guard<std::mutex> lock(conns_mu_);
        readers.swap(readers_);
    }
    for (std::thread& t : readers)
        if (t.joinable()) t.join();
}

} // namespace tinygrpo
