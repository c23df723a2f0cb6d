#include "tinygrpo/metrics.hpp"

#include <chrono>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

namespace tinygrpo {

using ordered_json = nlohmann::ordered_json;

std::string encode_metrics(const MetricsRecord& rec) {
    ordered_json j;
    j["stage"] = rec.stage;
    j["step"] = rec.step;
    j["mean_reward"] = rec.mean_reward;
    j["mean_response_len"] = rec.mean_response_len;
    j["mean_entropy"] = rec.mean_entropy;
    j["mean_kl"] = rec.mean_kl;
    j["clip_fraction"] = rec.clip_fraction;
    j["effective_batch"] = rec.effective_batch;
    j["refill_drawn"] = rec.refill_drawn;
    ordered_json val = ordered_json::object();
    for (const auto& [family, score] : rec.val_scores) val[family] = score;
    j["val"] = std::move(val);
    j["timestamp_ms"] = rec.timestamp_ms;
    return j.dump();
}

std::optional<MetricsRecord> decode_metrics(const std::string& line) {
    ordered_json j = ordered_json::parse(line, nullptr, /*allow_exceptions=*/false);
    if (j.is_discarded() || !j.is_object()) return std::nullopt;
    MetricsRecord rec;
    try {
        rec.stage = j.at("stage").get<std::string>();
        rec.step = j.at("step").get<uint64_t>();
        rec.mean_reward = j.at("mean_reward").get<double>();
        rec.mean_response_len = j.at("mean_response_len").get<double>();
        rec.mean_entropy = j.at("mean_entropy").get<double>();
        rec.mean_kl = j.at("mean_kl").get<double>();
        rec.clip_fraction = j.at("clip_fraction").get<double>();
        rec.effective_batch = j.at("effective_batch").get<uint64_t>();
        rec.refill_drawn = j.at("refill_drawn").get<uint64_t>();
        const auto& val = j.at("val");
        if (!val.is_object()) return std::nullopt;
        for (const auto& [family, score] : val.items())
            rec.val_scores[family] = score.get<double>();
        rec.timestamp_ms = j.at("timestamp_ms").get<uint64_t>();
    } catch (const ordered_json::exception&) {
        return std::nullopt;
    }
    return rec;
}

void append_metrics(const std::string& path, const MetricsRecord& rec) {
    std::ofstream os(path, std::ios::app);
    if (!os) throw std::runtime_error("cannot open metrics file: " + path);
    os << encode_metrics(rec) << '\n';
    os.flush();
    if (!os) throw std::runtime_error("metrics write failed: " + path);
}

std::vector<MetricsRecord> read_metrics_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open metrics file: " + path);
    std::vector<MetricsRecord> out;
    std::string line;
    int line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty()) continue;
        auto rec = decode_metrics(line);
        if (!rec)
            throw std::runtime_error("bad metrics record at " + path + ":" +
                                     std::to_string(line_no));
        out.push_back(std::move(*rec));
    }
    return out;
}

uint64_t now_ms() {
    using namespace std::chrono;
    return static_cast<uint64_t>(
        duration_cast<milliseconds>(system_clock::now().time_since_epoch()).count());
}

} // namespace tinygrpo
