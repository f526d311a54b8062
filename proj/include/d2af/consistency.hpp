#pragma once

// Spatial re-grounding agreement followed by crop/blur similarity fusion.

#include "d2af/clients.hpp"
#include "d2af/core.hpp"
#include "d2af/image.hpp"
#include "d2af/metrics.hpp"
#include "d2af/parallel.hpp"

#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace d2af {

struct ConsistencyConfig {
    double tau_spatial = 0.5;
    double tau_semantic = 0.62;
    double alpha = 0.5;
    double blur_sigma_fraction = 0.02; // of the image diagonal
    std::optional<std::filesystem::path> dump_variants_dir;

    void validate() const {
        // 0 is allowed so that a pass-through run is expressible
        if (!(tau_spatial >= 0.0 && tau_spatial < 1.0)) throw ConfigError("consistency.tau_spatial must be in [0, 1)");
        if (std::isnan(tau_semantic)) throw ConfigError("consistency.tau_semantic is NaN");
        if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("consistency.alpha must be in [0, 1]");
        if (!(blur_sigma_fraction > 0.0) || !std::isfinite(blur_sigma_fraction))
            throw ConfigError("consistency.blur_sigma_fraction must be > 0");
    }

    [[nodiscard]] double blur_sigma(int width, int height) const {
        return blur_sigma_fraction * std::hypot(double(width), double(height));
    }
};

struct SpatialDecision {
    bool pass = false;
    double iou_lmm = 0.0;
    double iou_det = 0.0;
};

struct SemanticDecision {
    bool pass = false;
    double s_intr = 0.0;
    double s_rela = 0.0;
    double s_final = 0.0;
};

/// Both IoUs must strictly exceed tau.
/// Strict: IoU equal to tau fails. tau = 0 disables the check, since a
/// missed or disjoint grounding scores exactly 0 and would otherwise fail.
inline SpatialDecision spatial_decision(double iou_lmm, double iou_det, double tau) {
    if (tau == 0.0) return {true, iou_lmm, iou_det};
    return {iou_lmm > tau && iou_det > tau, iou_lmm, iou_det};
}

inline SemanticDecision semantic_decision(double s_intr, double s_rela, double alpha, double tau) {
    const double f = fuse_similarity(s_intr, s_rela, alpha);
    return {f > tau, s_intr, s_rela, f};
}

/// IoU of the pseudo box against the top-confidence box; 0 when nothing
/// came back.
inline double top_box_iou(const BoundingBox& pseudo, const GroundingResult& r) {
    if (r.boxes.empty()) return 0.0;
    return iou(pseudo, r.boxes.front().box);
}

inline SpatialDecision spatial_check(const RegionTextPair& pair, const ImageRef& img, const ConsistencyConfig& cfg,
                                     const Backends& backends, const RetryPolicy& retry = {}) {
    const GroundingRequest req{img, pair.caption.text};
    const auto lmm = normalize_grounding(with_retries(retry, [&] { return backends.grounder_lmm->ground(req); }), img);
    const auto det = normalize_grounding(with_retries(retry, [&] { return backends.grounder->ground(req); }), img);
    return spatial_decision(top_box_iou(pair.box, lmm), top_box_iou(pair.box, det), cfg.tau_spatial);
}

inline void write_pnm(const Raster& img, const std::filesystem::path& path) {
    if (img.channels != 1 && img.channels != 3) throw InvalidInput("PNM export needs 1 or 3 channels");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    out << (img.channels == 3 ? "P6" : "P5") << '\n' << img.width << ' ' << img.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(img.data.data()), std::streamsize(img.data.size()));
}

/// `blurred` is the whole image blurred once; the box interior is restored
/// here per pair.
inline SemanticDecision semantic_check(const RegionTextPair& pair, const Raster& src, const ImageF& blurred,
                                       const ConsistencyConfig& cfg, const Scorer& scorer,
                                       const RetryPolicy& retry = {}) {
    const BoundingBox box = clamp_to_image(pair.box, ImageRecord{pair.image_id, src.width, src.height, {}});
    SimilarityRequest intr{pair.image_id, VariantKind::crop, box, crop(src, box), pair.caption.text};
    SimilarityRequest rela{pair.image_id, VariantKind::background_blur, box,
                           quantize(composite_background_blur(src, blurred, box).payload), pair.caption.text};
    if (cfg.dump_variants_dir) {
        write_pnm(intr.variant, *cfg.dump_variants_dir / (pair.pair_id + ".crop.pnm"));
        write_pnm(rela.variant, *cfg.dump_variants_dir / (pair.pair_id + ".background_blur.pnm"));
    }
    const double s_intr = with_retries(retry, [&] { return scorer.similarity(intr); });
    const double s_rela = with_retries(retry, [&] { return scorer.similarity(rela); });
    return semantic_decision(s_intr, s_rela, cfg.alpha, cfg.tau_semantic);
}

/// Supplies decoded pixels for an image id; nullptr means unavailable.
using PixelSource = std::function<std::shared_ptr<const Raster>(const ImageRecord&)>;

struct ConsistencyReport {
    StageMetrics metrics;
    std::size_t input = 0;
    std::size_t kept = 0;
    std::size_t dropped_spatial = 0;
    std::size_t dropped_semantic = 0;
    std::size_t retry_pending = 0;
};

namespace detail {

/// Applies both checks to one pair. Backend failures leave the pair raw
/// and count it as retry-pending.
inline void consistency_one(RegionTextPair& p, const ImageRef& ref, const Raster& src, const ImageF& blurred,
                            const ConsistencyConfig& cfg, const Backends& backends, const RetryPolicy& retry,
                            StageMetrics& m) {
    SpatialDecision sp;
    try {
        sp = spatial_check(p, ref, cfg, backends, retry);
    } catch (const BackendError&) {
        m.add("retry_pending");
        m.add("grounder_failures");
        return;
    }
    if (!sp.pass) {
        auto& s = p.score_record();
        s = ScoreRecord{};
        s.iou_lmm = sp.iou_lmm;
        s.iou_det = sp.iou_det;
        p.set_status(Status::dropped_spatial);
        m.add("dropped_spatial");
        return;
    }
    SemanticDecision se;
    try {
        se = semantic_check(p, src, blurred, cfg, *backends.scorer, retry);
    } catch (const BackendError&) {
        m.add("retry_pending");
        m.add("scorer_failures");
        return;
    }
    auto& s = p.score_record();
    s = ScoreRecord{};
    s.iou_lmm = sp.iou_lmm;
    s.iou_det = sp.iou_det;
    s.s_intr = se.s_intr;
    s.s_rela = se.s_rela;
    s.s_final = se.s_final;
    s.alpha = cfg.alpha;
    p.set_status(se.pass ? Status::kept : Status::dropped_semantic);
    m.add(se.pass ? "kept" : "dropped_semantic");
}

} // namespace detail

/// Filters every raw pair in place. Pairs that are already decided are left
/// alone, so re-running after a partial failure only touches the leftovers.
/// Work is split by image so each image is decoded and blurred once.
inline ConsistencyReport run_consistency_stage(std::vector<RegionTextPair>& pairs,
                                               const std::map<std::string, ImageRecord>& images,
                                               const PixelSource& pixels, const ConsistencyConfig& cfg,
                                               const Backends& backends, int parallelism = 1,
                                               const RetryPolicy& retry = {}) {
    cfg.validate();
    if (!backends.grounder || !backends.grounder_lmm || !backends.scorer)
        throw ConfigError("consistency filtering needs grounder, grounder_lmm and scorer backends");

    std::vector<std::string> order;
    std::map<std::string, std::vector<std::size_t>> by_image;
    ConsistencyReport report;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        if (pairs[i].status != Status::raw) continue;
        ++report.input;
        auto [it, fresh] = by_image.try_emplace(pairs[i].image_id);
        if (fresh) order.push_back(pairs[i].image_id);
        it->second.push_back(i);
    }
    if (cfg.dump_variants_dir) std::filesystem::create_directories(*cfg.dump_variants_dir);

    std::vector<StageMetrics> per_image(order.size());
    parallel_for(order.size(), parallelism, [&](std::size_t k) {
        const std::string& id = order[k];
        StageMetrics& m = per_image[k];
        const auto& idx = by_image.at(id);
        auto rec = images.find(id);
        if (rec == images.end()) throw DataError("pair references unknown image '" + id + "'");
        std::shared_ptr<const Raster> src;
        try {
            src = pixels(rec->second);
        } catch (const DataError&) {
            src = nullptr;
        }
        if (!src) {
            m.add("image_unavailable", std::int64_t(idx.size()));
            m.add("retry_pending", std::int64_t(idx.size()));
            return;
        }
        if (src->width != rec->second.width || src->height != rec->second.height)
            throw DataError("image '" + id + "' decoded size differs from the index");
        const ImageRef ref = make_ref(rec->second, src);
        const ImageF blurred = gaussian_blur(*src, cfg.blur_sigma(src->width, src->height));
        for (std::size_t i : idx) detail::consistency_one(pairs[i], ref, *src, blurred, cfg, backends, retry, m);
    });

    for (const auto& m : per_image) report.metrics.merge(m);
    report.kept = std::size_t(report.metrics.get("kept"));
    report.dropped_spatial = std::size_t(report.metrics.get("dropped_spatial"));
    report.dropped_semantic = std::size_t(report.metrics.get("dropped_semantic"));
    report.retry_pending = std::size_t(report.metrics.get("retry_pending"));
    return report;
}

} // namespace d2af
