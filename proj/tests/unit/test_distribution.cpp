#include "d2af/distribution.hpp"
#include "d2af/random.hpp"

#include <gtest/gtest.h>

#include <atomic>

using namespace d2af;

namespace {

// 1-D standard-ish model: N(0, 0.01), so log-density is positive for |x| < ~0.166
DensityModel narrow_model() {
    DensityModel m;
    m.reducer = identity_reducer(1);
    m.mixture = MixtureModel{1, 1, {1.0}, {{0.0}}, {{0.01}}, 1e-6};
    return m;
}

/// Embeds "x=<value>" as the 1-vector {value}.
class ParsingEmbedder : public Embedder {
  public:
    EmbeddingResult embed(const std::string& text) const override {
        ++calls;
        if (text.rfind("fail", 0) == 0) throw BackendError("embedder down");
        return {{std::stod(text.substr(2))}, 1};
    }
    [[nodiscard]] int dimension() const override { return 1; }
    mutable std::atomic<int> calls{0};
};

RegionTextPair kept_pair(const std::string& id, const std::string& text) {
    RegionTextPair p;
    p.pair_id = id;
    p.image_id = "img";
    p.box = make_box(0, 0, 1, 1);
    p.caption = Caption(text);
    p.status = Status::kept;
    return p;
}

} // namespace

TEST(Ceiling, KeepsCeilOfPercentOfDistinctScores) {
    Rng rng(3);
    for (int t = 0; t < 300; ++t) {
        const std::size_t n = 1 + rng.below(300);
        std::vector<double> s(n);
        for (std::size_t i = 0; i < n; ++i) s[i] = double(i) + rng.uniform(0, 0.5);
        rng.shuffle(std::span(s));
        const double p = t % 3 == 0 ? double(1 + rng.below(100)) : rng.uniform(0.5, 100.0);
        const double c = ceiling_threshold(s, p);
        std::size_t below = 0;
        for (double v : s) below += v < c;
        // smallest count k with k >= p% of n
        std::size_t want = 0;
        while (100.0 * double(want) < p * double(n) - 1e-7) ++want;
        ASSERT_EQ(below, std::min(want, n)) << "n=" << n << " p=" << p;
    }
}

TEST(Ceiling, HundredIsPassThroughAndEmptyIsInfinite) {
    const std::vector<double> s{1, 2, 3};
    EXPECT_TRUE(std::isinf(ceiling_threshold(s, 100.0)));
    EXPECT_TRUE(std::isinf(ceiling_threshold(std::vector<double>{}, 80.0)));
}

TEST(Band, DecisionBoundaries) {
    EXPECT_EQ(band_decision(0.0, 0.0, 5.0), Status::dropped_outlier);
    EXPECT_EQ(band_decision(-1.0, 0.0, 5.0), Status::dropped_outlier);
    EXPECT_EQ(band_decision(1e-12, 0.0, 5.0), Status::kept);
    EXPECT_EQ(band_decision(5.0, 0.0, 5.0), Status::dropped_redundant);
    EXPECT_EQ(band_decision(4.999, 0.0, 5.0), Status::kept);
    // floor is checked first
    EXPECT_EQ(band_decision(-1.0, 0.0, -2.0), Status::dropped_outlier);
}

TEST(Band, EightyOfAHundred) {
    const auto model = narrow_model();
    std::vector<Candidate> cands;
    for (int i = 0; i < 100; ++i) cands.push_back({"p" + std::to_string(i), {0.001 * i}});
    DistributionConfig cfg;
    const auto out = band_filter(model, cands, cfg);
    int kept = 0;
    for (const auto& d : out) {
        ASSERT_GT(d.log_density, 0.0);
        kept += d.status == Status::kept;
    }
    EXPECT_EQ(kept, 80);
    // highest densities (closest to 0) are the redundant ones
    for (int i = 0; i < 20; ++i) EXPECT_EQ(out[std::size_t(i)].status, Status::dropped_redundant) << i;
}

TEST(Band, FloorDropsNonPositiveLogDensity) {
    const auto model = narrow_model();
    // log N(x; 0, 0.01) = 0 at x = sqrt(-0.02 * log(sqrt(2 pi 0.01)))
    const double x0 = std::sqrt(-0.02 * std::log(std::sqrt(2 * std::numbers::pi * 0.01)));
    std::vector<Candidate> cands{{"far", {1.0}}, {"edge_out", {x0 * 1.001}}, {"edge_in", {x0 * 0.999}}};
    DistributionConfig cfg;
    cfg.ceiling_percentile = 100;
    const auto out = band_filter(model, cands, cfg);
    EXPECT_EQ(out[0].status, Status::dropped_outlier);
    EXPECT_EQ(out[1].status, Status::dropped_outlier);
    EXPECT_EQ(out[2].status, Status::kept);
}

TEST(Stage, ScoresOnlyUnscoredKeptPairsAndIsIdempotent) {
    const auto model = narrow_model();
    std::vector<RegionTextPair> pairs;
    for (int i = 0; i < 50; ++i) pairs.push_back(kept_pair("k" + std::to_string(i), "x=" + std::to_string(0.002 * i)));
    auto raw = kept_pair("r", "x=0.0");
    raw.status = Status::raw;
    pairs.push_back(raw);
    auto dropped = kept_pair("d", "x=0.0");
    dropped.status = Status::dropped_semantic;
    pairs.push_back(dropped);

    ParsingEmbedder emb;
    DistributionConfig cfg;
    const auto r1 = run_distribution_stage(pairs, model, cfg, emb, 3);
    EXPECT_EQ(r1.candidates, 50u);
    EXPECT_EQ(emb.calls.load(), 50);
    EXPECT_EQ(r1.metrics.get("kept"), 40);
    EXPECT_EQ(r1.metrics.get("dropped_redundant"), 10);
    EXPECT_EQ(pairs[50].status, Status::raw);
    EXPECT_FALSE(pairs[50].scores);
    EXPECT_EQ(pairs[51].status, Status::dropped_semantic);
    for (int i = 0; i < 50; ++i) ASSERT_TRUE(pairs[std::size_t(i)].scores->log_density);

    const auto snapshot = pairs;
    const auto r2 = run_distribution_stage(pairs, model, cfg, emb, 3);
    EXPECT_EQ(r2.candidates, 0u);
    EXPECT_EQ(pairs, snapshot);
}

TEST(Stage, ParallelismDoesNotChangeTheResult) {
    const auto model = narrow_model();
    std::vector<RegionTextPair> a;
    Rng rng(12);
    for (int i = 0; i < 200; ++i) a.push_back(kept_pair("k" + std::to_string(i), "x=" + std::to_string(rng.uniform(-0.3, 0.3))));
    auto b = a;
    ParsingEmbedder emb;
    run_distribution_stage(a, model, {}, emb, 1);
    run_distribution_stage(b, model, {}, emb, 4);
    EXPECT_EQ(a, b);
}

TEST(Stage, EmbedderFailuresStayKeptAndUnscored) {
    const auto model = narrow_model();
    std::vector<RegionTextPair> pairs{kept_pair("a", "x=0.01"), kept_pair("b", "fail now"), kept_pair("c", "x=0.02")};
    ParsingEmbedder emb;
    const auto r = run_distribution_stage(pairs, model, {}, emb, 1, RetryPolicy{2, {}});
    EXPECT_EQ(r.metrics.get("embedder_failures"), 1);
    EXPECT_EQ(r.metrics.get("retry_pending"), 1);
    EXPECT_EQ(pairs[1].status, Status::kept);
    EXPECT_FALSE(pairs[1].scores);
    EXPECT_EQ(r.candidates, 2u);
}

TEST(Stage, DimensionMismatchIsAConfigError) {
    DensityModel m = narrow_model();
    m.reducer = identity_reducer(3);
    m.mixture.dim = 3;
    std::vector<RegionTextPair> pairs{kept_pair("a", "x=0.01")};
    ParsingEmbedder emb;
    EXPECT_THROW(run_distribution_stage(pairs, m, {}, emb), ConfigError);
}

TEST(Config, Validation) {
    DistributionConfig c;
    EXPECT_NO_THROW(c.validate());
    c.ceiling_percentile = 0;
    EXPECT_THROW(c.validate(), ConfigError);
    c.ceiling_percentile = 100.5;
    EXPECT_THROW(c.validate(), ConfigError);
    c = {};
    c.components = 0;
    EXPECT_THROW(c.validate(), ConfigError);
    c = {};
    c.log_density_floor = std::nan("");
    EXPECT_THROW(c.validate(), ConfigError);
}
