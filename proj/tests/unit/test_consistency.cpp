#include "d2af/consistency.hpp"
#include "support/mock_corpus.hpp"

#include <gtest/gtest.h>

using namespace d2af;
using namespace d2af::mock;

namespace {

WorldConfig small_config() {
    WorldConfig c;
    c.images = 30;
    c.target_pairs = 150;
    c.spatial_plants = 15;
    c.semantic_plants = 15;
    c.outlier_plants = c.redundant_plants = 0;
    c.reference_captions = 100;
    return c;
}

std::map<std::string, Status> statuses(const std::vector<RegionTextPair>& pairs) {
    std::map<std::string, Status> out;
    for (const auto& p : pairs) out[p.pair_id] = p.status;
    return out;
}

} // namespace

TEST(Spatial, StrictAtTheBoundary) {
    EXPECT_FALSE(spatial_decision(0.6, 0.5, 0.5).pass);
    EXPECT_TRUE(spatial_decision(0.6, 0.51, 0.5).pass);
    EXPECT_FALSE(spatial_decision(0.5, 0.6, 0.5).pass);
    EXPECT_FALSE(spatial_decision(0.9, 0.2, 0.5).pass); // both must agree
    EXPECT_TRUE(spatial_decision(0.0, 0.0, 0.0).pass); // zero threshold switches the check off
    EXPECT_FALSE(spatial_decision(0.0, 0.3, 1e-9).pass);
    const auto d = spatial_decision(0.7, 0.8, 0.5);
    EXPECT_EQ(d.iou_lmm, 0.7);
    EXPECT_EQ(d.iou_det, 0.8);
}

TEST(Semantic, FusionAndStrictThreshold) {
    const auto pass = semantic_decision(0.7, 0.6, 0.5, 0.62);
    EXPECT_NEAR(pass.s_final, 0.65, 1e-12);
    EXPECT_TRUE(pass.pass);
    const auto edge = semantic_decision(0.62, 0.62, 0.5, 0.62);
    EXPECT_EQ(edge.s_final, 0.62);
    EXPECT_FALSE(edge.pass);
    EXPECT_EQ(semantic_decision(0.9, 0.1, 1.0, 0.62).s_final, 0.9);
}

TEST(Spatial, EmptyGroundingScoresZero) {
    EXPECT_EQ(top_box_iou(make_box(0, 0, 1, 1), GroundingResult{}), 0.0);
    GroundingResult r{{{make_box(0, 0, 1, 1), 0.9}, {make_box(5, 5, 6, 6), 0.5}}};
    EXPECT_EQ(top_box_iou(make_box(0, 0, 1, 1), r), 1.0);
}

TEST(Config, ValidationAndSigma) {
    ConsistencyConfig c;
    EXPECT_NO_THROW(c.validate());
    EXPECT_DOUBLE_EQ(c.blur_sigma(300, 400), 0.02 * 500);
    c.tau_spatial = 1.0;
    EXPECT_THROW(c.validate(), ConfigError);
    c = {};
    c.alpha = 1.5;
    EXPECT_THROW(c.validate(), ConfigError);
    c = {};
    c.tau_spatial = 0.0; // pass-through is allowed
    EXPECT_NO_THROW(c.validate());
}

TEST(Stage, PlantedCorpusKeepsExactlyTheConsistentPairs) {
    auto corpus = oracle::build_corpus(oracle::planted_config());
    ASSERT_EQ(corpus.pairs.size(), 1000u);
    const auto r = run_consistency_stage(corpus.pairs, corpus.images, corpus.pixels(), {}, corpus.backends, 4);
    EXPECT_EQ(r.input, 1000u);
    EXPECT_EQ(r.kept, 800u);
    EXPECT_EQ(r.dropped_spatial, 100u);
    EXPECT_EQ(r.dropped_semantic, 100u);
    for (const auto& p : corpus.pairs) {
        const Plant pl = corpus.plant(p);
        if (pl == Plant::spatial_ambiguous) EXPECT_EQ(p.status, Status::dropped_spatial) << p.pair_id;
        else if (pl == Plant::semantic_mismatch) EXPECT_EQ(p.status, Status::dropped_semantic) << p.pair_id;
        else EXPECT_EQ(p.status, Status::kept) << p.pair_id;
    }
}

TEST(Stage, SpatialFailureRecordsNoSemanticScores) {
    auto corpus = oracle::build_corpus(small_config());
    run_consistency_stage(corpus.pairs, corpus.images, corpus.pixels(), {}, corpus.backends);
    int spatial = 0;
    for (const auto& p : corpus.pairs) {
        ASSERT_TRUE(p.scores);
        EXPECT_TRUE(p.scores->iou_lmm && p.scores->iou_det);
        if (p.status == Status::dropped_spatial) {
            ++spatial;
            EXPECT_FALSE(p.scores->s_intr || p.scores->s_rela || p.scores->s_final || p.scores->alpha);
        } else {
            ASSERT_TRUE(p.scores->s_final);
            EXPECT_NEAR(*p.scores->s_final, fuse_similarity(*p.scores->s_intr, *p.scores->s_rela, 0.5), 1e-15);
            EXPECT_EQ(p.scores->alpha, 0.5);
        }
        EXPECT_FALSE(p.scores->log_density);
    }
    EXPECT_EQ(spatial, 15);
}

TEST(Stage, RaisingThresholdsOnlyShrinksTheKeptSet) {
    const auto corpus = oracle::build_corpus(small_config());
    const std::vector<double> spatial{0.0, 0.5, 0.9, 0.99};
    const std::vector<double> semantic{-1.0, 0.5, 0.62, 1.0};
    std::map<std::pair<std::size_t, std::size_t>, std::set<std::string>> kept;
    for (std::size_t i = 0; i < spatial.size(); ++i)
        for (std::size_t j = 0; j < semantic.size(); ++j) {
            auto pairs = corpus.pairs;
            ConsistencyConfig cfg;
            cfg.tau_spatial = spatial[i];
            cfg.tau_semantic = semantic[j];
            run_consistency_stage(pairs, corpus.images, corpus.pixels(), cfg, corpus.backends, 2);
            for (const auto& p : pairs)
                if (p.status == Status::kept) kept[{i, j}].insert(p.pair_id);
        }
    for (std::size_t i = 0; i < spatial.size(); ++i)
        for (std::size_t j = 0; j < semantic.size(); ++j) {
            const auto& here = kept[{i, j}];
            if (i + 1 < spatial.size())
                EXPECT_TRUE(std::includes(here.begin(), here.end(), kept[{i + 1, j}].begin(), kept[{i + 1, j}].end()));
            if (j + 1 < semantic.size())
                EXPECT_TRUE(std::includes(here.begin(), here.end(), kept[{i, j + 1}].begin(), kept[{i, j + 1}].end()));
        }
    const std::size_t loosest = kept[{0, 0}].size(), strictest = kept[{3, 3}].size();
    EXPECT_GT(loosest, strictest);
}

TEST(Stage, InputOrderAndParallelismDoNotMatter) {
    const auto corpus = oracle::build_corpus(small_config());
    auto a = corpus.pairs;
    run_consistency_stage(a, corpus.images, corpus.pixels(), {}, corpus.backends, 1);
    auto b = corpus.pairs;
    Rng rng(99);
    rng.shuffle(std::span(b));
    run_consistency_stage(b, corpus.images, corpus.pixels(), {}, corpus.backends, 3);
    EXPECT_EQ(statuses(a), statuses(b));
    std::map<std::string, RegionTextPair> by_id;
    for (const auto& p : b) by_id[p.pair_id] = p;
    for (const auto& p : a) EXPECT_EQ(p, by_id.at(p.pair_id));
}

TEST(Stage, OnlyRawPairsAreProcessed) {
    auto corpus = oracle::build_corpus(small_config());
    corpus.pairs[0].status = Status::dropped_semantic;
    const auto before = corpus.pairs[0];
    const auto r = run_consistency_stage(corpus.pairs, corpus.images, corpus.pixels(), {}, corpus.backends);
    EXPECT_EQ(r.input, corpus.pairs.size() - 1);
    EXPECT_EQ(corpus.pairs[0], before);
    const auto snapshot = corpus.pairs;
    const auto again = run_consistency_stage(corpus.pairs, corpus.images, corpus.pixels(), {}, corpus.backends);
    EXPECT_EQ(again.input, 0u);
    EXPECT_EQ(corpus.pairs, snapshot);
}

TEST(Stage, BackendFailuresLeavePairsRaw) {
    struct Down : Scorer {
        double similarity(const SimilarityRequest&) const override { throw BackendError("scorer down"); }
    };
    auto corpus = oracle::build_corpus(small_config());
    corpus.backends.scorer = std::make_shared<Down>();
    const auto r = run_consistency_stage(corpus.pairs, corpus.images, corpus.pixels(), {}, corpus.backends, 1,
                                         RetryPolicy{1, {}});
    EXPECT_EQ(r.kept, 0u);
    EXPECT_EQ(r.dropped_semantic, 0u);
    EXPECT_EQ(r.retry_pending + r.dropped_spatial, corpus.pairs.size());
    EXPECT_EQ(std::int64_t(r.retry_pending), r.metrics.get("scorer_failures"));
    for (const auto& p : corpus.pairs)
        if (p.status != Status::dropped_spatial) EXPECT_EQ(p.status, Status::raw);
}

TEST(Stage, MissingPixelsAndBadImages) {
    auto corpus = oracle::build_corpus(small_config());
    const PixelSource none = [](const ImageRecord&) { return std::shared_ptr<const Raster>{}; };
    auto pairs = corpus.pairs;
    const auto r = run_consistency_stage(pairs, corpus.images, none, {}, corpus.backends);
    EXPECT_EQ(r.retry_pending, pairs.size());
    EXPECT_EQ(r.metrics.get("image_unavailable"), std::int64_t(pairs.size()));

    auto images = corpus.images;
    images.erase(corpus.pairs[0].image_id);
    pairs = corpus.pairs;
    EXPECT_THROW(run_consistency_stage(pairs, images, corpus.pixels(), {}, corpus.backends), DataError);

    const PixelSource wrong = [](const ImageRecord&) { return std::make_shared<const Raster>(7, 7, 3); };
    pairs = corpus.pairs;
    EXPECT_THROW(run_consistency_stage(pairs, corpus.images, wrong, {}, corpus.backends), DataError);
}

TEST(Stage, VariantDumpWritesBothImages) {
    auto corpus = oracle::build_corpus(small_config());
    corpus.pairs.resize(3);
    const auto dir = std::filesystem::temp_directory_path() / "d2af_variant_dump";
    std::filesystem::remove_all(dir);
    ConsistencyConfig cfg;
    cfg.dump_variants_dir = dir;
    run_consistency_stage(corpus.pairs, corpus.images, corpus.pixels(), cfg, corpus.backends);
    for (const auto& p : corpus.pairs) {
        if (p.status == Status::dropped_spatial) continue;
        const auto crop_path = dir / (p.pair_id + ".crop.pnm");
        ASSERT_TRUE(std::filesystem::exists(crop_path));
        ASSERT_TRUE(std::filesystem::exists(dir / (p.pair_id + ".background_blur.pnm")));
        std::ifstream in(crop_path, std::ios::binary);
        std::string magic;
        int w = 0, h = 0;
        in >> magic >> w >> h;
        EXPECT_EQ(magic, "P6");
        const PixelRect r = round_box(p.box, 160, 120);
        EXPECT_EQ(w, r.x1 - r.x0);
        EXPECT_EQ(h, r.y1 - r.y0);
    }
    std::filesystem::remove_all(dir);
}
