#include "d2af/convert.hpp"
#include "support/mock_corpus.hpp"

#include <gtest/gtest.h>

using namespace d2af;

namespace {

RegionTextPair kept(const std::string& id, const std::string& img, BoundingBox b, const std::string& text,
                    std::vector<std::string> cats = {}) {
    RegionTextPair p;
    p.pair_id = id;
    p.image_id = img;
    p.box = b;
    p.caption = Caption(text);
    p.categories = std::move(cats);
    p.status = Status::kept;
    return p;
}

std::map<std::string, MaskRecord> masks_for(const std::vector<RegionTextPair>& pairs, int w = 100, int h = 100) {
    std::map<std::string, MaskRecord> out;
    for (const auto& p : pairs) {
        const auto bits = box_mask(p.box, w, h);
        out[p.pair_id] = MaskRecord{p.pair_id, p.image_id, p.box, rle_encode(bits), bits.area()};
    }
    return out;
}

std::uint64_t choose(int n, int k) {
    std::uint64_t r = 1;
    for (int i = 1; i <= k; ++i) r = r * std::uint64_t(n - k + i) / std::uint64_t(i);
    return r;
}

// n boxes on a diagonal, pairwise disjoint
std::vector<RegionTextPair> disjoint_pairs(int n, const std::string& img = "im") {
    std::vector<RegionTextPair> out;
    for (int i = 0; i < n; ++i)
        out.push_back(kept(img + "#" + std::to_string(i), img, make_box(i * 5, i * 5, i * 5 + 4, i * 5 + 4),
                           "thing " + std::to_string(i)));
    return out;
}

} // namespace

TEST(Join, Policies) {
    EXPECT_EQ(join_captions({"red mug", "blue plate"}), "red mug and blue plate");
    EXPECT_EQ(join_captions({"a", "b", "c"}), "a, b and c");
    EXPECT_EQ(join_captions({"a", "b", "c"}, "and"), "a and b and c");
    EXPECT_EQ(join_captions({"solo"}), "solo");
}

TEST(Multi, TwoPairsGiveOneSample) {
    const std::vector<RegionTextPair> ps{kept("a", "im", make_box(0, 0, 10, 10), "red mug"),
                                         kept("b", "im", make_box(20, 20, 30, 30), "blue plate")};
    const auto out = make_multi_target(ps, masks_for(ps), ConvertConfig{});
    ASSERT_EQ(out.size(), 1u);
    EXPECT_EQ(out[0].caption, "red mug and blue plate");
    EXPECT_EQ(out[0].targets.size(), 2u);
    EXPECT_EQ(out[0].kind, GresKind::multi);
    EXPECT_EQ(out[0].sample_id, "im:m000");
}

TEST(Multi, CountsAreBinomialSums) {
    for (int n = 0; n <= 7; ++n)
        for (int m = 2; m <= 4; ++m) {
            const auto ps = disjoint_pairs(n);
            ConvertConfig cfg;
            cfg.max_merge = m;
            cfg.max_multi_per_image = 1000;
            std::uint64_t want = 0;
            for (int k = 2; k <= std::min(m, n); ++k) want += choose(n, k);
            const auto out = make_multi_target(ps, masks_for(ps), cfg);
            ASSERT_EQ(out.size(), want) << "n=" << n << " max_merge=" << m;
            std::map<std::size_t, std::uint64_t> by_arity;
            for (const auto& s : out) ++by_arity[s.targets.size()];
            for (int k = 2; k <= std::min(m, n); ++k) EXPECT_EQ(by_arity[std::size_t(k)], choose(n, k));
        }
    ConvertConfig cfg;
    cfg.max_merge = 2;
    EXPECT_EQ(make_multi_target(disjoint_pairs(3), masks_for(disjoint_pairs(3)), cfg).size(), 3u);
}

TEST(Multi, OverlappingRegionsAreNotMerged) {
    const std::vector<RegionTextPair> ps{kept("a", "im", make_box(0, 0, 10, 10), "mug"),
                                         kept("b", "im", make_box(0, 0, 10, 9), "cup")}; // IoU 0.9
    EXPECT_TRUE(make_multi_target(ps, masks_for(ps), ConvertConfig{}).empty());
    auto three = ps;
    three.push_back(kept("c", "im", make_box(50, 50, 60, 60), "plate"));
    const auto out = make_multi_target(three, masks_for(three), ConvertConfig{});
    EXPECT_EQ(out.size(), 2u); // {a,c} and {b,c}
    for (const auto& s : out)
        for (std::size_t i = 0; i < s.targets.size(); ++i)
            for (std::size_t j = i + 1; j < s.targets.size(); ++j) EXPECT_LT(iou(s.targets[i].box, s.targets[j].box), 0.5);
}

TEST(Multi, CapTakesASeededSubset) {
    const auto ps = disjoint_pairs(8);
    ConvertConfig all;
    all.max_multi_per_image = 10000;
    const auto everything = make_multi_target(ps, masks_for(ps), all);
    std::set<std::string> universe;
    for (const auto& s : everything) universe.insert(s.caption);
    ConvertConfig capped;
    capped.seed = 4;
    const auto a = make_multi_target(ps, masks_for(ps), capped);
    const auto b = make_multi_target(ps, masks_for(ps), capped);
    ASSERT_EQ(a.size(), 20u);
    EXPECT_EQ(a, b);
    for (const auto& s : a) EXPECT_TRUE(universe.count(s.caption)) << s.caption;
    capped.seed = 5;
    EXPECT_NE(make_multi_target(ps, masks_for(ps), capped), a);
}

TEST(Multi, SkipsPairsWithoutMasksOrNotKept) {
    auto ps = disjoint_pairs(3);
    ps[0].status = Status::dropped_semantic;
    auto masks = masks_for(ps);
    EXPECT_EQ(make_multi_target(ps, masks, ConvertConfig{}).size(), 1u);
    masks.erase(ps[1].pair_id);
    EXPECT_TRUE(make_multi_target(ps, masks, ConvertConfig{}).empty());
}

TEST(NoTarget, DisjointnessRule) {
    const LexiconTagger t;
    const std::vector<RegionTextPair> ps{
        kept("a:0", "a", make_box(0, 0, 5, 5), "brown dog", {"dog"}),
        kept("b:0", "b", make_box(0, 0, 5, 5), "red car", {"car"}),
        kept("b:1", "b", make_box(9, 9, 15, 15), "green tree"),
        kept("c:0", "c", make_box(0, 0, 5, 5), "person in red", {"person"}),
        kept("c:1", "c", make_box(9, 9, 15, 15), "black dog", {"dog"})};
    const auto idx = build_category_index(ps, t);
    const auto r = make_no_target({ps[0]}, idx, 5, ConvertConfig{}, t);
    ASSERT_EQ(r.samples.size(), 1u);
    EXPECT_EQ(r.samples[0].image_id, "b"); // c has a dog
    EXPECT_EQ(r.samples[0].caption, "brown dog");
    EXPECT_EQ(r.samples[0].donor_pair_id, "a:0");
    EXPECT_TRUE(r.samples[0].targets.empty());
    EXPECT_EQ(r.metrics.get("no_target_shortfall"), 4);

    // the only other image contains a person
    const std::vector<RegionTextPair> two{kept("x:0", "x", make_box(0, 0, 5, 5), "tall person", {"person"}),
                                          kept("y:0", "y", make_box(0, 0, 5, 5), "person sitting", {"person"})};
    const auto none = make_no_target(two, build_category_index(two, t), 2, ConvertConfig{}, t);
    EXPECT_TRUE(none.samples.empty());
    EXPECT_EQ(none.metrics.get("no_target_no_valid_pairing"), 1);
    EXPECT_EQ(none.metrics.get("no_target_unplaced_donors"), 2);
}

TEST(Res, MockMasksAndFailureCounters) {
    mock::WorldConfig wc;
    wc.images = 10;
    wc.target_pairs = 50;
    wc.spatial_plants = wc.semantic_plants = wc.outlier_plants = wc.redundant_plants = 0;
    wc.reference_captions = 10;
    auto corpus = oracle::build_corpus(wc);
    for (auto& p : corpus.pairs) p.status = Status::kept;
    corpus.pairs[0].status = Status::dropped_spatial;
    const auto r = rec_to_res(corpus.pairs, corpus.images, *corpus.backends.segmenter, ConvertConfig{}, 3);
    EXPECT_EQ(r.masks.size(), corpus.pairs.size() - 1);
    EXPECT_EQ(r.metrics.get("masks"), std::int64_t(corpus.pairs.size() - 1));
    for (const auto& m : r.masks) {
        const auto bits = rle_decode(m.rle);
        EXPECT_EQ(bits.width, 160);
        EXPECT_EQ(m.area, bits.area());
        EXPECT_EQ(rle_encode(bits), m.rle);
    }
    EXPECT_TRUE(rec_to_res({}, corpus.images, *corpus.backends.segmenter, ConvertConfig{}).masks.empty());

    struct Bad : Segmenter {
        RleMask segment(const SegmentRequest& r) const override {
            if (r.text.size() % 3 == 0) throw BackendError("down");
            if (r.text.size() % 3 == 1) return rle_encode(BinaryMask(5, 5));
            BinaryMask m(r.image.width, r.image.height);
            m.set(r.image.width - 1, r.image.height - 1);
            return rle_encode(m);
        }
    };
    std::vector<RegionTextPair> ps{kept("p0", "img_000000", make_box(0, 0, 5, 5), "abc"),
                                   kept("p1", "img_000000", make_box(0, 0, 5, 5), "abcd"),
                                   kept("p2", "img_000000", make_box(0, 0, 5, 5), "abcde")};
    const auto bad = rec_to_res(ps, corpus.images, Bad{}, ConvertConfig{}, 1, RetryPolicy{0, {}});
    EXPECT_TRUE(bad.masks.empty());
    EXPECT_EQ(bad.metrics.get("segmenter_failures"), 1);
    EXPECT_EQ(bad.metrics.get("mask_wrong_size"), 1);
    EXPECT_EQ(bad.metrics.get("mask_outside_box"), 1);
}

TEST(Gres, SoundAgainstMockTruthAndDeterministic) {
    auto corpus = oracle::build_corpus(oracle::planted_config(), 2);
    run_consistency_stage(corpus.pairs, corpus.images, corpus.pixels(), {}, corpus.backends, 2);
    const auto res = rec_to_res(corpus.pairs, corpus.images, *corpus.backends.segmenter, ConvertConfig{}, 2);
    const LexiconTagger t;
    ConvertConfig cfg;
    cfg.seed = 7;
    const auto g = res_to_gres(corpus.pairs, res.masks, cfg, t);
    std::map<GresKind, std::size_t> kinds;
    for (const auto& s : g.samples) {
        ASSERT_TRUE(s.consistent()) << s.sample_id;
        ++kinds[s.kind];
        if (s.kind != GresKind::no_target) continue;
        const auto* donor_scene = corpus.world->find(s.donor_pair_id.substr(0, s.donor_pair_id.find(':')));
        ASSERT_NE(donor_scene, nullptr);
        const auto* pc = donor_scene->find_caption(s.caption);
        ASSERT_TRUE(pc && pc->object >= 0);
        const std::string& cat = donor_scene->objects[std::size_t(pc->object)].category;
        const auto* receiver = corpus.world->find(s.image_id);
        ASSERT_NE(receiver, nullptr);
        for (const auto& o : receiver->objects) EXPECT_NE(o.category, cat) << s.sample_id << " " << s.caption;
    }
    EXPECT_EQ(kinds[GresKind::single], res.masks.size());
    EXPECT_GT(kinds[GresKind::multi], 0u);
    // each kept pair donates at most once, so the request is capped by the donors
    EXPECT_EQ(kinds[GresKind::no_target], std::min(kinds[GresKind::multi], res.masks.size()));
    EXPECT_EQ(g.metrics.get("no_target_shortfall"), std::int64_t(kinds[GresKind::multi] - kinds[GresKind::no_target]));

    auto shuffled = corpus.pairs;
    Rng rng(1);
    rng.shuffle(std::span(shuffled));
    const auto again = res_to_gres(shuffled, res.masks, cfg, t);
    std::map<std::string, GresSample> a, b;
    for (const auto& s : g.samples) a[s.sample_id] = s;
    for (const auto& s : again.samples) b[s.sample_id] = s;
    ASSERT_EQ(a.size(), b.size());
    std::size_t differing = 0;
    for (const auto& [id, s] : a) differing += !(b.count(id) && b.at(id) == s);
    EXPECT_EQ(differing, 0u);
}

TEST(Json, RoundTripsAndRejects) {
    const auto ps = disjoint_pairs(3);
    const auto masks = masks_for(ps);
    ConvertConfig cfg;
    for (const auto& s : make_multi_target(ps, masks, cfg)) EXPECT_EQ(sample_from_json(sample_to_json(s)), s);
    const GresSample nt{"im:n000", "im", "a cat", {}, GresKind::no_target, "other:0001"};
    EXPECT_EQ(sample_from_json(sample_to_json(nt)), nt);
    const auto& m = masks.begin()->second;
    EXPECT_EQ(mask_from_json(mask_to_json(m)), m);

    auto j = mask_to_json(m);
    j["area"] = 3;
    EXPECT_THROW(mask_from_json(j), InvalidInput);
    auto k = sample_to_json(nt);
    k["kind"] = "multi";
    EXPECT_THROW(sample_from_json(k), InvalidInput);
    k["kind"] = "many";
    EXPECT_THROW(sample_from_json(k), InvalidInput);
}

TEST(Config, Validation) {
    ConvertConfig c;
    EXPECT_NO_THROW(c.validate());
    c.max_merge = 1;
    EXPECT_THROW(c.validate(), ConfigError);
    c = {};
    c.join_policy = "or";
    EXPECT_THROW(c.validate(), ConfigError);
    c = {};
    c.no_target_ratio = -1;
    EXPECT_THROW(c.validate(), ConfigError);
}
