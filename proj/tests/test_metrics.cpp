#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <string>

#include "tinygrpo/metrics.hpp"

using namespace tinygrpo;

namespace {

MetricsRecord sample_record() {
    MetricsRecord r;
    r.stage = "base";
    r.step = 17;
    r.mean_reward = 0.25;
    r.mean_response_len = 6.5;
    r.mean_entropy = 2.125;
    r.mean_kl = 0.001953125; // dyadic: prints and re-parses exactly
    r.clip_fraction = 0.0625;
    r.effective_batch = 48;
    r.refill_drawn = 3;
    r.val_scores = {{"arith", 0.75}, {"format", 0.5}};
    r.timestamp_ms = 1700000000123ULL;
    return r;
}

} // namespace

TEST_CASE("metrics lines use the documented field order") {
    CHECK(encode_metrics(sample_record()) ==
          R"({"stage":"base","step":17,"mean_reward":0.25,"mean_response_len":6.5,)"
          R"("mean_entropy":2.125,"mean_kl":0.001953125,"clip_fraction":0.0625,)"
          R"("effective_batch":48,"refill_drawn":3,)"
          R"("val":{"arith":0.75,"format":0.5},"timestamp_ms":1700000000123})");
}

TEST_CASE("metrics round trip through encode/decode") {
    MetricsRecord r = sample_record();
    auto back = decode_metrics(encode_metrics(r));
    REQUIRE(back.has_value());
    CHECK(*back == r);
    MetricsRecord empty_val = r;
    empty_val.val_scores.clear();
    auto back2 = decode_metrics(encode_metrics(empty_val));
    REQUIRE(back2.has_value());
    CHECK(*back2 == empty_val);
}

TEST_CASE("decode rejects missing fields and non-JSON") {
    CHECK(!decode_metrics("garbage").has_value());
    CHECK(!decode_metrics("{}").has_value());
    CHECK(!decode_metrics(R"({"stage":"s","step":1})").has_value());
}

TEST_CASE("append/read cycle preserves records and flags bad lines") {
    const std::string path = "test_metrics_cycle.ndjson";
    std::remove(path.c_str());
    MetricsRecord a = sample_record();
    MetricsRecord b = sample_record();
    b.step = 18;
    b.stage = "anchor-reset";
    append_metrics(path, a);
    append_metrics(path, b);
    auto recs = read_metrics_file(path);
    REQUIRE(recs.size() == 2);
    CHECK(recs[0] == a);
    CHECK(recs[1] == b);

    std::ofstream(path, std::ios::app) << "BROKEN LINE\n";
    try {
        (void)read_metrics_file(path);
        FAIL("expected a throw");
    } catch (const std::runtime_error& e) {
        CHECK(std::string(e.what()).find(":3") != std::string::npos);
    }
    std::remove(path.c_str());
}

TEST_CASE("now_ms is sane") {
    uint64_t t = now_ms();
    CHECK(t > 1600000000000ULL); // after Sep 2020
    CHECK(t < 4102444800000ULL); // before 2100
}
