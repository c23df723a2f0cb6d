#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace tinygrpo {

// One training-step record, emitted as a single JSON line with this exact
// field order: stage, step, mean_reward, mean_response_len, mean_entropy,
// mean_kl, clip_fraction, effective_batch, refill_drawn, val, timestamp_ms.
// `val` maps task family -> validation score and is sorted by family name;
// between evaluation steps it carries the most recent scores forward.
struct MetricsRecord {
    std::string stage;
    uint64_t step = 0; // global update-step counter across stages
    double mean_reward = 0.0;
    double mean_response_len = 0.0;
    double mean_entropy = 0.0;
    double mean_kl = 0.0;
    double clip_fraction = 0.0;
    uint64_t effective_batch = 0; // rollouts that entered the update
    uint64_t refill_drawn = 0;    // extra groups drawn by dynamic filtering
    std::map<std::string, double> val_scores;
    uint64_t timestamp_ms = 0; // wall clock, ms since the Unix epoch

    bool operator==(const MetricsRecord&) const = default;
};

std::string encode_metrics(const MetricsRecord& rec); // no trailing newline
std::optional<MetricsRecord> decode_metrics(const std::string& line);

void append_metrics(const std::string& path, const MetricsRecord& rec);
// Skips blank lines; throws on an undecodable line (with its line number).
std::vector<MetricsRecord> read_metrics_file(const std::string& path);

uint64_t now_ms();

} // namespace tinygrpo
