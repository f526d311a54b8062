#pragma once

// A seeded mock world with its backends, annotated in-process.

#include "d2af/annotate.hpp"
#include "d2af/consistency.hpp"
#include "d2af/mock.hpp"

#include <map>
#include <memory>

namespace oracle {

struct MockCorpus {
    std::shared_ptr<const d2af::mock::World> world;
    d2af::Backends backends;
    std::map<std::string, d2af::ImageRecord> images;
    std::vector<d2af::RegionTextPair> pairs;

    [[nodiscard]] d2af::PixelSource pixels() const {
        auto w = world;
        return [w](const d2af::ImageRecord& rec) -> std::shared_ptr<const d2af::Raster> {
            const auto* s = w->find(rec.image_id);
            if (!s) return nullptr;
            return std::make_shared<const d2af::Raster>(w->render(*s));
        };
    }

    /// Planted label of a pair's caption.
    [[nodiscard]] d2af::mock::Plant plant(const d2af::RegionTextPair& p) const {
        return world->plant_of(p.image_id, p.caption.text).value_or(d2af::mock::Plant::good);
    }
};

inline MockCorpus build_corpus(const d2af::mock::WorldConfig& wc, int parallelism = 1) {
    using namespace d2af;
    MockCorpus c;
    c.world = std::make_shared<const mock::World>(wc);
    c.backends = mock::make_mock_backends(c.world);
    for (const auto& img : c.world->images()) c.images.emplace(img.image_id, img);
    const Annotator ann(c.backends, TemplateSet{}, AnnotationConfig{});
    const auto& scenes = c.world->scenes();
    std::vector<std::vector<RegionTextPair>> per(scenes.size());
    parallel_for(scenes.size(), parallelism, [&](std::size_t i) {
        StageMetrics m;
        per[i] = ann.annotate(make_ref(scenes[i].image), m);
    });
    for (auto& v : per)
        for (auto& p : v) c.pairs.push_back(std::move(p));
    return c;
}

/// 200 images, 1000 pairs, 100 spatial / 100 semantic / 50 outlier / 50
/// redundant plants.
inline d2af::mock::WorldConfig planted_config(std::uint64_t seed = 7) {
    d2af::mock::WorldConfig c;
    c.seed = seed;
    return c;
}

/// Same generator at the published volume rates: 1300 raw, 300 + 300
/// consistency plants, 30 outliers, 140 redundant.
inline d2af::mock::WorldConfig volume_config(std::uint64_t seed = 7) {
    d2af::mock::WorldConfig c;
    c.seed = seed;
    c.images = 260;
    c.target_pairs = 1300;
    c.spatial_plants = 300;
    c.semantic_plants = 300;
    c.outlier_plants = 30;
    c.redundant_plants = 140;
    return c;
}

} // namespace oracle
