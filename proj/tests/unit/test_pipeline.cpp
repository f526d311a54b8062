#include "d2af/pipeline.hpp"

#include <gtest/gtest.h>

#include <fstream>

using namespace d2af;

namespace {

fs::path scratch(const std::string& name) {
    const auto d = fs::temp_directory_path() / ("d2af_pl_" + name);
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
}

PipelineConfig small_mock() {
    PipelineConfig c;
    c.mock = true;
    c.parallelism = 2;
    c.batch_size = 3;
    c.world.images = 20;
    c.world.target_pairs = 100;
    c.world.spatial_plants = 10;
    c.world.semantic_plants = 10;
    c.world.outlier_plants = 5;
    c.world.redundant_plants = 5;
    c.world.reference_captions = 400;
    c.distribution.components = 4;
    // 80 candidates reach the density stage; 93.75% keeps 75 below the
    // ceiling, of which 5 are planted outliers
    c.distribution.ceiling_percentile = 93.75;
    return c;
}

std::map<Status, int> status_counts(const std::vector<RegionTextPair>& ps) {
    std::map<Status, int> m;
    for (const auto& p : ps) ++m[p.status];
    return m;
}

} // namespace

TEST(ImageIndex, ParsesAndRejects) {
    const auto d = scratch("index");
    std::ofstream(d / "ok.csv") << "image_id,filename,width,height\na,a.png,10,20\n\nb, sub/b.jpg ,3,4\n";
    const auto imgs = read_image_index(d / "ok.csv", "/imgs");
    ASSERT_EQ(imgs.size(), 2u);
    EXPECT_EQ(imgs[1].uri, "/imgs/sub/b.jpg");
    EXPECT_EQ(imgs[0].height, 20);
    std::ofstream(d / "nohead.csv") << "a,a.png,10,20\n";
    EXPECT_THROW(read_image_index(d / "nohead.csv", ""), DataError);
    std::ofstream(d / "dup.csv") << "image_id,filename,width,height\na,a.png,10,20\na,b.png,1,1\n";
    EXPECT_THROW(read_image_index(d / "dup.csv", ""), DataError);
    std::ofstream(d / "num.csv") << "image_id,filename,width,height\na,a.png,10px,20\n";
    try {
        read_image_index(d / "num.csv", "");
        FAIL();
    } catch (const DataError& e) {
        EXPECT_NE(std::string(e.what()).find("num.csv:2"), std::string::npos);
    }
}

TEST(Annotate, CountMatchesTheWorld) {
    const auto rt = make_runtime(small_mock());
    const auto d = scratch("ann");
    const auto s = cmd_annotate(rt, d / "raw.jsonl");
    EXPECT_EQ(s.exit_code, 0);
    EXPECT_EQ(s.metrics.get("images_annotated"), 20);
    const auto pairs = read_manifest(d / "raw.jsonl");
    EXPECT_EQ(pairs.size(), rt.world->expected_pair_count());
    EXPECT_EQ(s.metrics.get("pairs"), std::int64_t(pairs.size()));
    for (const auto& p : pairs) EXPECT_EQ(p.status, Status::raw);
    EXPECT_TRUE(fs::exists(d / "raw.jsonl.metrics.json"));
    const auto ck = load_checkpoint(d / "raw.jsonl");
    ASSERT_TRUE(ck);
    EXPECT_TRUE(ck->complete);
    EXPECT_EQ(ck->manifest_lines, pairs.size());
}

TEST(Annotate, ResumeAfterKillMatchesAnUninterruptedRun) {
    const auto rt = make_runtime(small_mock());
    const auto d = scratch("resume");
    cmd_annotate(rt, d / "full.jsonl");

    AnnotateOptions stop;
    stop.stop_after_images = 7;
    const auto part = cmd_annotate(rt, d / "part.jsonl", stop);
    ASSERT_TRUE(part.interrupted);
    // a torn write after the last checkpoint
    std::ofstream(d / "part.jsonl", std::ios::app) << "{\"schema\":\"d2af_manifest_v1\",\"pair_id\":\"img_0";
    AnnotateOptions resume;
    resume.resume = true;
    const auto rest = cmd_annotate(rt, d / "part.jsonl", resume);
    EXPECT_FALSE(rest.interrupted);
    EXPECT_EQ(read_text(d / "part.jsonl"), read_text(d / "full.jsonl"));
    EXPECT_EQ(rest.metrics.get("images_annotated"), 20);

    // resuming a finished run changes nothing
    cmd_annotate(rt, d / "part.jsonl", resume);
    EXPECT_EQ(read_text(d / "part.jsonl"), read_text(d / "full.jsonl"));
}

TEST(Annotate, ResumeRefusesAChangedConfig) {
    auto cfg = small_mock();
    const auto d = scratch("hash");
    AnnotateOptions stop;
    stop.stop_after_images = 3;
    cmd_annotate(make_runtime(cfg), d / "raw.jsonl", stop);
    cfg.annotate.min_box_confidence = 0.5;
    AnnotateOptions resume;
    resume.resume = true;
    EXPECT_THROW(cmd_annotate(make_runtime(cfg), d / "raw.jsonl", resume), ConfigError);
    // worker count is not part of the hash
    cfg = small_mock();
    cfg.parallelism = 1;
    EXPECT_NO_THROW(cmd_annotate(make_runtime(cfg), d / "raw.jsonl", resume));
}

TEST(Annotate, EmptyImageListGivesEmptyManifest) {
    auto rt = make_runtime(small_mock());
    rt.images.clear();
    const auto d = scratch("empty");
    const auto s = cmd_annotate(rt, d / "raw.jsonl");
    EXPECT_EQ(s.exit_code, 0);
    EXPECT_EQ(read_text(d / "raw.jsonl"), "");
}

TEST(Annotate, UnreadableImagesAreSkippedAndCounted) {
    auto rt = make_runtime(small_mock());
    const auto inner = rt.pixels;
    rt.pixels = [inner](const ImageRecord& r) -> std::shared_ptr<const Raster> {
        if (r.image_id == "img_000003") throw DataError("truncated file");
        return inner(r);
    };
    const auto d = scratch("skip");
    auto s = cmd_annotate(rt, d / "raw.jsonl");
    EXPECT_EQ(s.metrics.get("unreadable_images"), 1);
    EXPECT_EQ(s.exit_code, 2); // 1/20 is not below the 0.05 bound
    for (const auto& p : read_manifest(d / "raw.jsonl")) EXPECT_NE(p.image_id, "img_000003");
    rt.cfg.max_failure_rate = 0.1;
    s = cmd_annotate(rt, d / "raw2.jsonl");
    EXPECT_EQ(s.exit_code, 0);
}

TEST(Filter, PlantedWorldKeepsExactlyThePlantedGood) {
    const auto rt = make_runtime(small_mock());
    const auto d = scratch("filter");
    cmd_annotate(rt, d / "raw.jsonl");
    const auto s = cmd_filter(rt, d / "raw.jsonl", d / "out.jsonl");
    EXPECT_EQ(s.exit_code, 0);
    const auto out = read_manifest(d / "out.jsonl");
    ASSERT_EQ(out.size(), rt.world->expected_pair_count());
    int mismatched = 0;
    for (const auto& p : out) mismatched += p.status != mock::expected_status(rt.world->plant_of(p.image_id, p.caption.text).value());
    EXPECT_EQ(mismatched, 0);
    const auto c = status_counts(out);
    EXPECT_EQ(c.at(Status::kept), 70);
    EXPECT_EQ(s.metrics.get("status_kept"), 70);
}

TEST(Filter, PassThroughKeepsEverything) {
    auto cfg = small_mock();
    cfg.consistency.tau_spatial = 0.0;
    cfg.consistency.tau_semantic = -std::numeric_limits<double>::infinity();
    cfg.distribution.log_density_floor = -std::numeric_limits<double>::infinity();
    cfg.distribution.ceiling_percentile = 100;
    const auto rt = make_runtime(cfg);
    const auto d = scratch("pass");
    cmd_annotate(rt, d / "raw.jsonl");
    cmd_filter(rt, d / "raw.jsonl", d / "out.jsonl");
    const auto out = read_manifest(d / "out.jsonl");
    const auto c = status_counts(out);
    EXPECT_EQ(c.size(), 1u);
    EXPECT_EQ(c.count(Status::kept) ? std::size_t(c.at(Status::kept)) : 0u, out.size());
}

TEST(Filter, ConservesPairsAndIsIdempotent) {
    const auto rt = make_runtime(small_mock());
    const auto d = scratch("idem");
    cmd_annotate(rt, d / "raw.jsonl");
    cmd_filter(rt, d / "raw.jsonl", d / "once.jsonl");
    cmd_filter(rt, d / "once.jsonl", d / "twice.jsonl");
    EXPECT_EQ(read_text(d / "once.jsonl"), read_text(d / "twice.jsonl"));
    const auto raw = read_manifest(d / "raw.jsonl");
    const auto once = read_manifest(d / "once.jsonl");
    ASSERT_EQ(raw.size(), once.size());
    for (std::size_t i = 0; i < raw.size(); ++i) {
        EXPECT_EQ(raw[i].pair_id, once[i].pair_id);
        EXPECT_EQ(raw[i].caption, once[i].caption);
        EXPECT_EQ(raw[i].box, once[i].box);
    }
}

TEST(Filter, ResumeAtTheStageBoundaryMatches) {
    const auto rt = make_runtime(small_mock());
    const auto d = scratch("fresume");
    cmd_annotate(rt, d / "raw.jsonl");
    cmd_filter(rt, d / "raw.jsonl", d / "full.jsonl");
    FilterOptions stop;
    stop.stop_after_consistency = true;
    EXPECT_TRUE(cmd_filter(rt, d / "raw.jsonl", d / "part.jsonl", stop).interrupted);
    FilterOptions resume;
    resume.resume = true;
    const auto s = cmd_filter(rt, d / "raw.jsonl", d / "part.jsonl", resume);
    EXPECT_EQ(read_text(d / "part.jsonl"), read_text(d / "full.jsonl"));
    EXPECT_EQ(s.metrics.get("status_kept"), 70);

    EXPECT_TRUE(cmd_filter(rt, d / "raw.jsonl", d / "p2.jsonl", stop).interrupted);
    auto other = small_mock();
    other.consistency.tau_semantic = 0.7;
    EXPECT_THROW(cmd_filter(make_runtime(other), d / "raw.jsonl", d / "p2.jsonl", resume), ConfigError);
}

TEST(Filter, DuplicatePairIdsAreRejected) {
    const auto rt = make_runtime(small_mock());
    const auto d = scratch("dup");
    cmd_annotate(rt, d / "raw.jsonl");
    const std::string text = read_text(d / "raw.jsonl");
    std::ofstream(d / "dup.jsonl") << text << text.substr(0, text.find('\n') + 1);
    EXPECT_THROW(cmd_filter(rt, d / "dup.jsonl", d / "out.jsonl"), DataError);
}

TEST(FitGmm, DeterministicAndReusable) {
    const auto rt = make_runtime(small_mock());
    const auto d = scratch("gmm");
    const auto s = cmd_fit_gmm(rt, std::nullopt, d / "a.json");
    EXPECT_EQ(s.metrics.get("reference_captions"), 400);
    cmd_fit_gmm(rt, std::nullopt, d / "b.json");
    EXPECT_EQ(read_text(d / "a.json"), read_text(d / "b.json"));
    EXPECT_EQ(serialize_model(load_model(d / "a.json")), read_text(d / "a.json"));

    cmd_annotate(rt, d / "raw.jsonl");
    cmd_filter(rt, d / "raw.jsonl", d / "fit.jsonl");
    auto cfg = small_mock();
    cfg.gmm_model = (d / "a.json").string();
    cmd_filter(make_runtime(cfg), d / "raw.jsonl", d / "loaded.jsonl");
    EXPECT_EQ(read_text(d / "fit.jsonl"), read_text(d / "loaded.jsonl"));

    std::ofstream(d / "caps.txt") << "a dog\n";
    EXPECT_THROW(cmd_fit_gmm(rt, d / "caps.txt", d / "c.json"), DataError);
}

TEST(AnalyzeConvert, WriteTheirArtifacts) {
    const auto rt = make_runtime(small_mock());
    const auto d = scratch("ac");
    cmd_annotate(rt, d / "raw.jsonl");
    cmd_filter(rt, d / "raw.jsonl", d / "out.jsonl");
    const auto a = cmd_analyze(rt, {d / "raw.jsonl", d / "out.jsonl"}, d / "report");
    EXPECT_EQ(a.metrics.get("manifests"), 2);
    EXPECT_EQ(a.metrics.get("feature_rows"), std::int64_t(rt.world->expected_pair_count() + 70));
    for (const char* f : {"report.json", "report.txt", "features_raw.csv", "features_out.csv"})
        EXPECT_TRUE(fs::exists(d / "report" / f)) << f;

    const auto c = cmd_convert(rt, d / "out.jsonl", d / "conv");
    EXPECT_EQ(c.metrics.get("masks"), 70);
    std::ifstream res(d / "conv" / "res.jsonl");
    std::size_t lines = 0;
    for (std::string l; std::getline(res, l); ++lines) EXPECT_NO_THROW(mask_from_json(ojson::parse(l)));
    EXPECT_EQ(lines, 70u);
    std::ifstream gres(d / "conv" / "gres.jsonl");
    for (std::string l; std::getline(gres, l);) EXPECT_NO_THROW(sample_from_json(ojson::parse(l)));
}

TEST(Runtime, RealModeNeedsEndpoints) {
    PipelineConfig c;
    const auto rt = make_runtime(c);
    EXPECT_THROW(cmd_annotate(rt, scratch("noend") / "raw.jsonl"), ConfigError);
}

TEST(Stats, Summary) {
    std::vector<RegionTextPair> ps(3);
    for (auto& p : ps) p.caption = Caption("a red mug");
    ps[2].status = Status::kept;
    const auto s = manifest_stats(ps);
    EXPECT_NE(s.find("pairs 3"), std::string::npos);
    EXPECT_NE(s.find("raw"), std::string::npos);
}
