#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <mutex>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "tinygrpo/reward_protocol.hpp"

namespace tinygrpo {

// Scores (task_id, payload, response) -> VerifierResult-like reply fields.
// May throw: UnknownTaskError maps to error_code unknown_task, anything else
// to worker_crash. Must be reentrant — workers call it concurrently.
struct VerifierOutcome {
    double reward = 0.0;
    bool parsed_ok = false;
    bool terminated_ok = false;
};

class UnknownTaskError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

using VerifierFn = std::function<VerifierOutcome(
    const std::string& task_id, const std::string& payload,
    const std::string& response)>;

// Task-suite dispatch by task_id family prefix, plus the "chaos" fault-
// injection family: payload {"mode":"sleep","ms":N[,"reward":x]} sleeps,
// {"mode":"crash"} throws, {"mode":"ok","reward":x} returns x. Unknown
// prefixes raise UnknownTaskError.
VerifierFn default_verifier();

// ---- worker pool with deadline supervision ----
//
// The exactly-once reply core shared by the TCP service and the in-process
// loopback client. Every submitted job gets exactly one delivery: the
// verifier's reply, a timeout reply (reward 0, error_code timeout) when the
// deadline passes first, or a crash/unknown-task reply. A worker stuck past
// the deadline is left to finish in the background — its eventual reply is
// suppressed — and a replacement worker keeps the pool at full strength.
class VerifierPool {
public:
    using Deliver = std::function<void(const RewardReply&)>;

    VerifierPool(int workers, int timeout_ms, int queue_capacity, VerifierFn fn);
    ~VerifierPool();

    // Blocks while the queue is full (backpressure). Thread-safe.
    void submit(const RewardRequest& req, Deliver deliver);

    void stop(); // drains and joins; safe to call twice

    // test introspection
    int replacements_spawned() const { return replacements_.load(); }
    int timeout_replies() const { return timeouts_.load(); }
    int crash_replies() const { return crashes_.load(); }

private:
    struct Job;
    using JobPtr = std::shared_ptr<Job>;

    void worker_loop();
    void watchdog_loop();
    void spawn_worker_locked();
    static void reply_once(Job& job, const RewardReply& reply);
    RewardReply run_job(const Job& job);

    const int target_workers_;
    const int timeout_ms_;
    const size_t queue_capacity_;
    VerifierFn verify_;

    std::mutex mu_;
    std::condition_variable queue_push_cv_; // waiters: submit (queue full)
    std::condition_variable queue_pop_cv_;  // waiters: workers (queue empty)
    std::deque<JobPtr> queue_;
    std::vector<JobPtr> inflight_;
    std::vector<std::thread> threads_; // workers + replacements
    int live_workers_ = 0;
    bool stopping_ = false;

    std::thread watchdog_;
    std::atomic<int> replacements_{0};
    std::atomic<int> timeouts_{0};
    std::atomic<int> crashes_{0};
};

// ---- TCP service ----

struct ServiceConfig {
    std::string host = "127.0.0.1";
    int port = 0; // 0 = pick an ephemeral port; see port() after start
    int workers = 4;
    int timeout_ms = 5000; // per-request wall clock
    int queue_capacity = 256;
};

// Newline-delimited JSON over a stream socket. One acceptor, one reader
// thread per connection, shared VerifierPool. Malformed lines are counted
// and skipped; they never kill the connection and never get a reply.
class RewardService {
public:
    explicit RewardService(ServiceConfig cfg, VerifierFn fn = default_verifier());
    ~RewardService();

    void start(); // throws std::runtime_error on bind failure
    void stop();
    int port() const { return port_; }

    uint64_t framing_errors() const { return framing_errors_.load(); }
    int replacements_spawned() const { return pool_.replacements_spawned(); }
    int timeout_replies() const { return pool_.timeout_replies(); }
    int crash_replies() const { return pool_.crash_replies(); }

private:
    struct Connection;
    void acceptor_loop();
    void reader_loop(std::shared_ptr<Connection> conn);

    ServiceConfig cfg_;
    VerifierPool pool_;
    int listen_fd_ = -1;
    int port_ = 0;
    std::atomic<bool> stopping_{false};
    std::thread acceptor_;
    std::mutex conns_mu_;
    std::vector<std::thread> readers_;
    std::vector<std::shared_ptr<Connection>> conns_;
    std::atomic<uint64_t> framing_errors_{0};
};

} // namespace tinygrpo
