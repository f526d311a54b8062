#pragma once

// Seeded synthetic corpus with planted ground truth, and the mock backends
// that answer every client contract from it. Everything here is a pure
// function of (WorldConfig, request), so two processes built from the same
// config agree byte for byte.

#include "d2af/clients.hpp"
#include "d2af/core.hpp"
#include "d2af/image.hpp"
#include "d2af/mask.hpp"
#include "d2af/random.hpp"

#include <array>
#include <map>
#include <memory>
#include <numeric>
#include <set>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

namespace d2af::mock {

enum class Plant { good, spatial_ambiguous, semantic_mismatch, density_outlier, density_redundant };

inline std::string_view to_string(Plant p) {
    switch (p) {
    case Plant::good: return "good";
    case Plant::spatial_ambiguous: return "spatial_ambiguous";
    case Plant::semantic_mismatch: return "semantic_mismatch";
    case Plant::density_outlier: return "density_outlier";
    case Plant::density_redundant: return "density_redundant";
    }
    return "?";
}

/// Terminal status a planted caption should reach under thresholds that
/// separate the mock populations (including the defaults).
inline Status expected_status(Plant p) {
    switch (p) {
    case Plant::good: return Status::kept;
    case Plant::spatial_ambiguous: return Status::dropped_spatial;
    case Plant::semantic_mismatch: return Status::dropped_semantic;
    case Plant::density_outlier: return Status::dropped_outlier;
    case Plant::density_redundant: return Status::dropped_redundant;
    }
    return Status::raw;
}

struct WorldConfig {
    std::uint64_t seed = 7;
    int images = 200;
    int target_pairs = 1000;
    int spatial_plants = 100;
    int semantic_plants = 100;
    int outlier_plants = 50;
    int redundant_plants = 50;
    int width = 160;
    int height = 120;
    int embed_dim = 16;
    int clusters = 4;
    int reference_captions = 2000;
    double match_score = 0.9;
    double mismatch_score = 0.3;
    double score_jitter = 0.05;
    double box_jitter = 0.5;
    std::string id_prefix = "img";
};

struct Object {
    std::string category;
    BoundingBox box;
    std::array<std::uint8_t, 3> rgb{};
    std::string color;
    bool detectable = true; // answers category queries above the default confidence floor
    bool listed = true;     // category belongs to the closed category list
    int twin_of = -1;
};

struct PlantedCaption {
    std::string text;
    int object = -1;
    PromptTemplate source = PromptTemplate::open_set;
    Plant plant = Plant::good;
    int decoy = -1; // twin object that makes the caption ambiguous
};

struct Scene {
    ImageRecord image;
    std::vector<Object> objects;
    std::vector<PlantedCaption> captions;
    std::vector<std::string> open_set_response;
    std::unordered_map<std::string, int> caption_index;

    [[nodiscard]] const PlantedCaption* find_caption(const std::string& text) const {
        auto it = caption_index.find(text);
        return it == caption_index.end() ? nullptr : &captions[std::size_t(it->second)];
    }
    [[nodiscard]] std::set<std::string> categories() const {
        std::set<std::string> out;
        for (const auto& o : objects) out.insert(o.category);
        return out;
    }
};

/// Where the mock embedder puts a caption relative to the reference clusters.
enum class Placement { reference, good, redundant, outlier };

namespace vocab {
// Single-word closed-list categories (subset of the 80 common-object classes).
inline const std::vector<std::string> listed = {
    "person", "bicycle", "car",    "motorcycle", "airplane", "bus",      "train",   "truck",    "boat",
    "bench",  "bird",    "cat",    "dog",        "horse",    "sheep",    "cow",     "elephant", "bear",
    "zebra",  "giraffe", "backpack", "umbrella", "handbag",  "tie",      "suitcase", "frisbee", "kite",
    "bottle", "cup",     "fork",   "knife",      "spoon",    "bowl",     "banana",  "apple",    "sandwich",
    "pizza",  "donut",   "cake",   "chair",      "couch",    "bed",      "toilet",  "laptop",   "keyboard",
    "microwave", "toaster", "sink", "refrigerator", "book", "clock",     "vase",    "scissors", "toothbrush"};
// Objects outside the closed list, reachable only through open-set prompts.
inline const std::vector<std::string> extra = {"lamp",   "window", "curtain", "pillow", "painting", "door",
                                               "shelf",  "rug",    "fence",   "pole",   "sign",     "tree",
                                               "flag",   "basket", "bucket",  "mirror", "candle",   "towel",
                                               "blanket", "cabinet"};
inline const std::vector<std::pair<std::string, std::array<std::uint8_t, 3>>> colors = {
    {"red", {200, 30, 30}},    {"blue", {30, 60, 200}},    {"green", {40, 160, 60}},
    {"yellow", {230, 210, 40}}, {"black", {20, 20, 20}},    {"white", {240, 240, 240}},
    {"gray", {128, 128, 128}}, {"brown", {120, 80, 40}},   {"pink", {240, 150, 180}},
    {"purple", {120, 50, 160}}};
inline const std::vector<std::string> sizes = {"small", "large", "big", "tiny", "tall", "wide"};
inline const std::vector<std::string> positions = {"left", "right", "middle"};
inline const std::vector<std::string> materials = {"wooden", "metal", "plastic", "glass", "striped", "shiny",
                                                   "dusty",  "old",   "new",     "round", "square",  "soft"};
inline const std::vector<std::string> details = {
    "a white handle", "a striped pattern", "a shiny surface", "a dark shadow", "two small dots",
    "a metal frame",  "a wooden base",    "a bright label",  "a torn corner", "a curved edge",
    "a faded logo",   "a thin stripe"};
inline const std::vector<std::string> actions = {
    "resting quietly", "standing upright", "leaning slightly", "sitting alone", "lying flat",
    "tilted sideways", "partly hidden",    "catching the light", "facing forward", "turned away"};
inline const std::vector<std::string> relations = {
    "near the window", "next to the door",  "behind the chair", "under the table",   "beside the lamp",
    "above the shelf", "in front of the wall", "close to the edge", "between two boxes", "below the mirror"};
inline const std::vector<std::string> comparatives = {"tallest", "smallest", "largest", "closest", "brighter",
                                                      "darker",  "bigger",   "leftmost", "rightmost"};
inline const std::vector<std::string> hallucinations = {
    "purple elephant floating in the sky", "golden dragon on the roof", "glowing orb above the clouds",
    "invisible ghost in the corner", "unicorn grazing on the ceiling"};
} // namespace vocab

class World {
  public:
    explicit World(WorldConfig cfg) : cfg_(std::move(cfg)) { generate(); }

    [[nodiscard]] const WorldConfig& config() const { return cfg_; }
    [[nodiscard]] const std::vector<Scene>& scenes() const { return scenes_; }
    [[nodiscard]] const std::vector<std::string>& reference_captions() const { return reference_; }

    [[nodiscard]] const Scene* find(const std::string& image_id) const {
        auto it = by_id_.find(image_id);
        return it == by_id_.end() ? nullptr : &scenes_[it->second];
    }

    [[nodiscard]] std::vector<ImageRecord> images() const {
        std::vector<ImageRecord> out;
        for (const auto& s : scenes_) out.push_back(s.image);
        return out;
    }

    /// Number of raw pairs the annotation stage emits for the whole world
    /// (closed: 3 per detectable listed object; open: one per groundable
    /// distinct description).
    [[nodiscard]] int expected_pair_count() const {
        int n = 0;
        for (const auto& s : scenes_) n += expected_pair_count(s);
        return n;
    }
    [[nodiscard]] static int expected_pair_count(const Scene& s) {
        int n = 0;
        for (const auto& c : s.captions) n += c.object >= 0 ? 1 : 0;
        return n;
    }

    [[nodiscard]] std::optional<Plant> plant_of(const std::string& image_id, const std::string& text) const {
        const Scene* s = find(image_id);
        if (!s) return std::nullopt;
        const PlantedCaption* c = s->find_caption(text);
        if (!c) return std::nullopt;
        return c->plant;
    }

    [[nodiscard]] Raster render(const Scene& s) const {
        Raster img(s.image.width, s.image.height, 3);
        const std::uint64_t h = hash_str(s.image.image_id) ^ cfg_.seed;
        const int base = 90 + int(h % 60);
        for (int y = 0; y < img.height; ++y)
            for (int x = 0; x < img.width; ++x)
                for (int c = 0; c < 3; ++c)
                    img.at(x, y, c) = std::uint8_t(std::clamp(base + (x * (c + 1)) / 8 - y / 4, 0, 255));
        for (const auto& o : s.objects) {
            const PixelRect r = round_box(o.box, img.width, img.height);
            for (int y = r.y0; y < r.y1; ++y)
                for (int x = r.x0; x < r.x1; ++x) {
                    const int tex = ((x / 3 + y / 3) % 2) ? 12 : -12;
                    for (int c = 0; c < 3; ++c)
                        img.at(x, y, c) = std::uint8_t(std::clamp(int(o.rgb[std::size_t(c)]) + tex, 0, 255));
                }
        }
        return img;
    }

    /// Embedding placement for a caption text; unseen text counts as good.
    [[nodiscard]] std::pair<Placement, int> placement(const std::string& text) const {
        auto it = placements_.find(text);
        if (it != placements_.end()) return it->second;
        return {Placement::good, int(hash_str(text) % std::uint64_t(cfg_.clusters))};
    }

  private:
    void generate();
    std::string unique_caption(Rng& rng, PromptTemplate kind, const Object& obj);
    std::string hallucination(Rng& rng);

    WorldConfig cfg_;
    std::vector<Scene> scenes_;
    std::unordered_map<std::string, std::size_t> by_id_;
    std::vector<std::string> reference_;
    std::unordered_set<std::string> used_;
    std::unordered_map<std::string, std::pair<Placement, int>> placements_;
};

namespace detail {
template <typename T>
const T& pick(Rng& rng, const std::vector<T>& v) {
    return v[rng.below(v.size())];
}
} // namespace detail

inline std::string World::unique_caption(Rng& rng, PromptTemplate kind, const Object& obj) {
    using detail::pick;
    const std::string& cat = obj.category;
    const std::string& color = obj.color;
    for (int attempt = 0; attempt < 400; ++attempt) {
        std::string s;
        const auto form = rng.below(4);
        switch (kind) {
        case PromptTemplate::closed_short:
            if (attempt < 200) {
                if (form == 0) s = color + " " + cat;
                else if (form == 1) s = color + " " + cat + " " + pick(rng, vocab::positions);
                else if (form == 2) s = pick(rng, vocab::sizes) + " " + color + " " + cat;
                else s = pick(rng, vocab::sizes) + " " + cat + " " + pick(rng, vocab::positions);
            } else {
                s = pick(rng, vocab::sizes) + " " + color + " " + cat + " on " + pick(rng, vocab::positions);
            }
            break;
        case PromptTemplate::closed_mid:
            if (form < 2) s = color + " " + cat + " with " + pick(rng, vocab::details);
            else if (form == 2) s = pick(rng, vocab::materials) + " " + color + " " + cat + " " +
                                    pick(rng, vocab::relations);
            else s = pick(rng, vocab::comparatives) + " " + cat + " " + pick(rng, vocab::relations);
            break;
        case PromptTemplate::closed_long:
            s = pick(rng, vocab::sizes) + " " + color + " " + cat + " with " + pick(rng, vocab::details) + " " +
                pick(rng, vocab::actions) + " " + pick(rng, vocab::relations);
            break;
        case PromptTemplate::open_set:
            if (form == 0) s = pick(rng, vocab::materials) + " " + cat + " " + pick(rng, vocab::relations);
            else if (form == 1) s = color + " " + pick(rng, vocab::materials) + " " + cat + " " + pick(rng, vocab::actions);
            else if (form == 2) s = pick(rng, vocab::materials) + " " + color + " " + cat + " on the " +
                                    pick(rng, vocab::positions) + " " + pick(rng, vocab::actions);
            else s = "the " + pick(rng, vocab::comparatives) + " " + cat;
            break;
        default: throw InvalidInput("not a caption template");
        }
        if (used_.insert(s).second) return s;
    }
    throw InvalidInput("mock vocabulary exhausted while generating unique captions");
}

inline std::string World::hallucination(Rng& rng) {
    for (int attempt = 0; attempt < 400; ++attempt) {
        std::string s = detail::pick(rng, vocab::hallucinations) + " " + detail::pick(rng, vocab::actions);
        if (attempt >= 100) s += " " + detail::pick(rng, vocab::relations);
        if (used_.insert(s).second) return s;
    }
    throw InvalidInput("mock vocabulary exhausted while generating hallucinations");
}

inline void World::generate() {
    const WorldConfig& c = cfg_;
    if (c.images < 0 || c.target_pairs < 0) throw InvalidInput("mock world sizes must be non-negative");
    if (c.images == 0 && c.target_pairs > 0) throw InvalidInput("mock world needs images for its pairs");
    if (c.target_pairs > c.images * 20) throw InvalidInput("mock world: at most 20 pairs per image");
    if (c.clusters < 1 || c.clusters > c.embed_dim) throw InvalidInput("mock world: 1 <= clusters <= embed_dim");
    Rng rng(c.seed);

    // Pairs per image: even split, then seeded pairwise transfers for variety.
    std::vector<int> per_image(std::size_t(c.images), 0);
    for (int i = 0; i < c.images; ++i) per_image[std::size_t(i)] = c.target_pairs / c.images + (i < c.target_pairs % c.images);
    for (int i = 0; i + 1 < c.images; i += 2) {
        const int delta = int(rng.below(3));
        const int move = std::min({delta, per_image[std::size_t(i)], 20 - per_image[std::size_t(i + 1)]});
        per_image[std::size_t(i)] -= move;
        per_image[std::size_t(i + 1)] += move;
    }

    const int cols = 5, rows = 4;
    const int cell_w = c.width / cols, cell_h = c.height / rows;
    if (cell_w < 18 || cell_h < 18) throw InvalidInput("mock images too small for the object grid");

    scenes_.reserve(std::size_t(c.images));
    std::vector<std::vector<int>> free_cells(std::size_t(c.images));

    for (int i = 0; i < c.images; ++i) {
        Scene s;
        char id[32];
        std::snprintf(id, sizeof id, "%s_%06d", c.id_prefix.c_str(), i);
        s.image = {id, c.width, c.height, std::string(id) + ".png"};

        std::vector<int> cells(std::size_t(cols * rows));
        std::iota(cells.begin(), cells.end(), 0);
        rng.shuffle(std::span<int>(cells));
        std::size_t next_cell = 0;
        auto place = [&](Object obj) {
            const int cell = cells[next_cell++];
            const int cx = (cell % cols) * cell_w, cy = (cell / cols) * cell_h;
            const int w = 16 + int(rng.below(std::uint64_t(cell_w - 16 - 1)));
            const int h = 16 + int(rng.below(std::uint64_t(cell_h - 16 - 1)));
            const int ox = cx + int(rng.below(std::uint64_t(cell_w - w))) ;
            const int oy = cy + int(rng.below(std::uint64_t(cell_h - h)));
            obj.box = {double(ox), double(oy), double(ox + w), double(oy + h)};
            s.objects.push_back(std::move(obj));
            return int(s.objects.size()) - 1;
        };
        auto new_object = [&](const std::vector<std::string>& cats, bool listed) {
            Object o;
            o.category = detail::pick(rng, cats);
            const auto& col = detail::pick(rng, vocab::colors);
            o.color = col.first;
            o.rgb = col.second;
            o.listed = listed;
            return place(std::move(o));
        };

        // composition: p = 3 * closed + open, closed <= 5, open <= 5
        const int p = per_image[std::size_t(i)];
        std::vector<std::pair<int, int>> feasible;
        for (int closed = 0; closed <= 5; ++closed) {
            const int open = p - 3 * closed;
            if (open >= 0 && open <= 5) feasible.emplace_back(closed, open);
        }
        if (feasible.empty()) throw InvalidInput("mock world: cannot compose image with " + std::to_string(p) + " pairs");
        const auto [n_closed, n_open] = feasible[rng.below(feasible.size())];

        for (int k = 0; k < n_closed; ++k) {
            const int idx = new_object(vocab::listed, true);
            for (PromptTemplate t : kClosedTemplates) {
                PlantedCaption pc{unique_caption(rng, t, s.objects[std::size_t(idx)]), idx, t};
                s.captions.push_back(std::move(pc));
            }
        }
        for (int k = 0; k < n_open; ++k) {
            int target;
            if (n_closed > 0 && rng.uniform() < 0.3) target = int(rng.below(std::uint64_t(n_closed)));
            else target = new_object(vocab::extra, false);
            PlantedCaption pc{unique_caption(rng, PromptTemplate::open_set, s.objects[std::size_t(target)]), target,
                              PromptTemplate::open_set};
            s.open_set_response.push_back(pc.text);
            s.captions.push_back(std::move(pc));
        }
        // Noise in the open-set answer: a hallucinated item and/or a repeat.
        if (int(s.open_set_response.size()) < 5 && rng.uniform() < 0.3) {
            PlantedCaption pc{hallucination(rng), -1, PromptTemplate::open_set};
            s.open_set_response.push_back(pc.text);
            s.captions.push_back(std::move(pc));
        }
        if (n_open > 0 && int(s.open_set_response.size()) < 5 && rng.uniform() < 0.2)
            s.open_set_response.push_back(s.open_set_response[rng.below(std::uint64_t(n_open))]);

        free_cells[std::size_t(i)].assign(cells.begin() + std::ptrdiff_t(next_cell), cells.end());
        scenes_.push_back(std::move(s));
    }

    // Assign plants over all pair-producing captions.
    std::vector<std::pair<std::size_t, std::size_t>> slots;
    for (std::size_t si = 0; si < scenes_.size(); ++si)
        for (std::size_t ci = 0; ci < scenes_[si].captions.size(); ++ci)
            if (scenes_[si].captions[ci].object >= 0) slots.emplace_back(si, ci);
    const int total_plants = c.spatial_plants + c.semantic_plants + c.outlier_plants + c.redundant_plants;
    if (total_plants > int(slots.size())) throw InvalidInput("mock world: more plants than pairs");
    rng.shuffle(std::span(slots));
    std::size_t cursor = 0;
    auto assign = [&](int count, Plant plant) {
        for (int k = 0; k < count; ++k, ++cursor) {
            auto [si, ci] = slots[cursor];
            scenes_[si].captions[ci].plant = plant;
        }
    };
    assign(c.spatial_plants, Plant::spatial_ambiguous);
    assign(c.semantic_plants, Plant::semantic_mismatch);
    assign(c.outlier_plants, Plant::density_outlier);
    assign(c.redundant_plants, Plant::density_redundant);

    // Twins: one indistinguishable, weakly detected copy per ambiguous target.
    for (std::size_t si = 0; si < scenes_.size(); ++si) {
        Scene& s = scenes_[si];
        std::map<int, int> twin_for;
        std::size_t next_free = 0;
        for (auto& pc : s.captions) {
            if (pc.plant != Plant::spatial_ambiguous) continue;
            auto it = twin_for.find(pc.object);
            if (it == twin_for.end()) {
                if (next_free >= free_cells[si].size()) throw InvalidInput("mock world: no room for twin");
                const Object& target = s.objects[std::size_t(pc.object)];
                Object twin = target;
                twin.detectable = false;
                twin.twin_of = pc.object;
                const int cell = free_cells[si][next_free++];
                const int cx = (cell % cols) * cell_w, cy = (cell / cols) * cell_h;
                const int w = int(target.box.width()), h = int(target.box.height());
                const int ox = cx + int(rng.below(std::uint64_t(cell_w - w + 1)));
                const int oy = cy + int(rng.below(std::uint64_t(cell_h - h + 1)));
                twin.box = {double(ox), double(oy), double(ox + w), double(oy + h)};
                s.objects.push_back(twin);
                it = twin_for.emplace(pc.object, int(s.objects.size()) - 1).first;
            }
            pc.decoy = it->second;
        }
        for (std::size_t ci = 0; ci < s.captions.size(); ++ci) s.caption_index.emplace(s.captions[ci].text, int(ci));
        by_id_.emplace(s.image.image_id, si);
    }

    // Embedding placements.
    for (const auto& s : scenes_)
        for (const auto& pc : s.captions) {
            const int cluster = int(hash_str(pc.text) % std::uint64_t(c.clusters));
            Placement pl = Placement::good;
            if (pc.plant == Plant::density_outlier) pl = Placement::outlier;
            if (pc.plant == Plant::density_redundant) pl = Placement::redundant;
            placements_[pc.text] = {pl, cluster};
        }
    reference_.reserve(std::size_t(c.reference_captions));
    const std::array kinds{PromptTemplate::closed_short, PromptTemplate::closed_mid, PromptTemplate::closed_long,
                           PromptTemplate::open_set};
    for (int k = 0; k < c.reference_captions; ++k) {
        Object o;
        o.category = detail::pick(rng, rng.uniform() < 0.8 ? vocab::listed : vocab::extra);
        o.color = detail::pick(rng, vocab::colors).first;
        std::string text = unique_caption(rng, kinds[rng.below(kinds.size())], o);
        placements_[text] = {Placement::reference, k % c.clusters};
        reference_.push_back(std::move(text));
    }
}

// ---------------------------------------------------------------------------
// Backends

/// Cluster centers sit at 2 * e_j; reference captions scatter with sd 0.1,
/// good candidates at radius 0.40..0.55, redundant ones within 0.02 of a
/// center and outliers at radius 6.
inline std::vector<double> mock_embedding(const World& world, const std::string& text) {
    const int d = world.config().embed_dim;
    const auto [placement, cluster] = world.placement(text);
    Rng rng(Fnv1a{}.u64(world.config().seed).str("embed").str(text).value());
    std::vector<double> z(static_cast<std::size_t>(d));
    for (double& v : z) v = rng.normal();
    std::vector<double> out(std::size_t(d), 0.0);
    out[std::size_t(cluster)] = 2.0;
    if (placement == Placement::reference) {
        for (int i = 0; i < d; ++i) out[std::size_t(i)] += 0.1 * z[std::size_t(i)];
        return out;
    }
    double norm = 0.0;
    for (double v : z) norm += v * v;
    norm = std::sqrt(norm);
    double radius = 0.0;
    switch (placement) {
    case Placement::good: radius = 0.40 + 0.15 * rng.uniform(); break;
    case Placement::redundant: radius = 0.02 * rng.uniform(); break;
    case Placement::outlier: radius = 6.0; break;
    default: break;
    }
    for (int i = 0; i < d; ++i) out[std::size_t(i)] += radius * z[std::size_t(i)] / norm;
    return out;
}

class MockCaptioner : public Captioner {
  public:
    explicit MockCaptioner(std::shared_ptr<const World> world) : world_(std::move(world)) {}

    std::vector<std::string> generate(const CaptionRequest& req) const override {
        const Scene* s = world_->find(req.image.image_id);
        if (!s) throw BackendError("mock captioner: unknown image '" + req.image.image_id + "'");
        std::vector<std::string> out;
        switch (req.prompt_template) {
        case PromptTemplate::category_detect: {
            std::set<std::string> allowed;
            std::string list = req.slots.count("cls_list") ? req.slots.at("cls_list") : std::string{};
            std::size_t pos = 0;
            while (pos <= list.size()) {
                std::size_t comma = list.find(',', pos);
                if (comma == std::string::npos) comma = list.size();
                allowed.insert(trim(std::string_view(list).substr(pos, comma - pos)));
                pos = comma + 1;
            }
            std::set<std::string> seen;
            for (const auto& o : s->objects)
                if (allowed.count(o.category) && seen.insert(o.category).second) out.push_back(o.category);
            return out;
        }
        case PromptTemplate::open_set: out = s->open_set_response; break;
        default: {
            auto box = req.slots.count("box") ? parse_box_slot(req.slots.at("box")) : std::nullopt;
            if (!box || !req.slots.count("cls")) throw MalformedResponse("mock captioner: missing box/cls slot");
            const std::string& cls = req.slots.at("cls");
            int best = -1;
            double best_iou = 0.5;
            for (std::size_t i = 0; i < s->objects.size(); ++i) {
                const Object& o = s->objects[i];
                if (o.category != cls || !o.detectable) continue;
                const double v = iou(o.box, *box);
                if (v > best_iou) best_iou = v, best = int(i);
            }
            if (best < 0) return {};
            for (const auto& pc : s->captions)
                if (pc.object == best && pc.source == req.prompt_template) out.push_back(pc.text);
        }
        }
        if (int(out.size()) > req.max_candidates && req.prompt_template != PromptTemplate::open_set)
            out.resize(std::size_t(std::max(req.max_candidates, 0)));
        return out;
    }

  private:
    std::shared_ptr<const World> world_;
};

/// Two instances with different roles play the detector and the spatial
/// LMM. They agree on unambiguous captions and pick different objects for
/// ambiguous ones.
class MockGrounder : public Grounder {
  public:
    enum class Role { detector, spatial_lmm };

    MockGrounder(std::shared_ptr<const World> world, Role role) : world_(std::move(world)), role_(role) {}

    GroundingResult ground(const GroundingRequest& req) const override {
        if (trim(req.query_text).empty()) throw InvalidInput("grounding query must be non-empty");
        const Scene* s = world_->find(req.image.image_id);
        if (!s) throw BackendError("mock grounder: unknown image '" + req.image.image_id + "'");
        GroundingResult r;
        bool category_query = false;
        for (std::size_t i = 0; i < s->objects.size(); ++i) {
            const Object& o = s->objects[i];
            if (o.category != req.query_text) continue;
            category_query = true;
            const double conf =
                o.detectable ? 0.6 + 0.39 * unit(req, int(i), 99) : 0.2;
            r.boxes.push_back({jitter(*s, req, int(i)), conf});
        }
        if (!category_query) {
            if (const PlantedCaption* pc = s->find_caption(req.query_text); pc && pc->object >= 0) {
                if (pc->decoy >= 0) {
                    const bool lmm = role_ == Role::spatial_lmm;
                    r.boxes.push_back({jitter(*s, req, lmm ? pc->object : pc->decoy), 0.9});
                    r.boxes.push_back({jitter(*s, req, lmm ? pc->decoy : pc->object), 0.8});
                } else {
                    r.boxes.push_back({jitter(*s, req, pc->object), 1.0});
                }
            }
        }
        std::stable_sort(r.boxes.begin(), r.boxes.end(),
                         [](const Detection& a, const Detection& b) { return a.confidence > b.confidence; });
        return r;
    }

  private:
    double unit(const GroundingRequest& req, int obj, int k) const {
        Rng rng(Fnv1a{}
                    .u64(world_->config().seed)
                    .u64(std::uint64_t(role_))
                    .str(req.image.image_id)
                    .str(req.query_text)
                    .u64(std::uint64_t(obj))
                    .u64(std::uint64_t(k))
                    .value());
        return rng.uniform();
    }

    BoundingBox jitter(const Scene& s, const GroundingRequest& req, int obj) const {
        const BoundingBox& b = s.objects[std::size_t(obj)].box;
        const double j = world_->config().box_jitter;
        BoundingBox out{b.x_min + j * (2 * unit(req, obj, 0) - 1), b.y_min + j * (2 * unit(req, obj, 1) - 1),
                        b.x_max + j * (2 * unit(req, obj, 2) - 1), b.y_max + j * (2 * unit(req, obj, 3) - 1)};
        return clamp_to_image(out, s.image);
    }

    std::shared_ptr<const World> world_;
    Role role_;
};

/// Matched region/text pairs score match_score, everything else
/// mismatch_score, each with seeded jitter from (variant hash, text).
class MockScorer : public Scorer {
  public:
    explicit MockScorer(std::shared_ptr<const World> world) : world_(std::move(world)) {}

    double similarity(const SimilarityRequest& req) const override {
        if (req.variant.width <= 0 || req.variant.height <= 0 || req.variant.data.empty())
            throw InvalidInput("similarity variant has no pixels");
        const WorldConfig& c = world_->config();
        bool match = false;
        if (const Scene* s = world_->find(req.image_id)) {
            const PlantedCaption* pc = s->find_caption(req.text);
            if (pc && pc->object >= 0 && pc->plant != Plant::semantic_mismatch && req.source_box.valid())
                match = iou(req.source_box, s->objects[std::size_t(pc->object)].box) > 0.5;
        }
        Rng rng(Fnv1a{}.u64(c.seed).str("score").u64(hash_image(req.variant)).str(req.text).value());
        const double jitter = c.score_jitter * (2.0 * rng.uniform() - 1.0);
        return (match ? c.match_score : c.mismatch_score) + jitter;
    }

  private:
    std::shared_ptr<const World> world_;
};

class MockEmbedder : public Embedder {
  public:
    explicit MockEmbedder(std::shared_ptr<const World> world) : world_(std::move(world)) {}

    EmbeddingResult embed(const std::string& text) const override {
        if (text.empty()) throw InvalidInput("cannot embed empty text");
        auto v = mock_embedding(*world_, text);
        return {std::move(v), dimension()};
    }
    [[nodiscard]] int dimension() const override { return world_->config().embed_dim; }

  private:
    std::shared_ptr<const World> world_;
};

/// Returns the filled, integer-rounded box.
class MockSegmenter : public Segmenter {
  public:
    RleMask segment(const SegmentRequest& req) const override {
        if (req.image.width <= 0 || req.image.height <= 0) throw InvalidInput("segment: image size unknown");
        return rle_encode(box_mask(req.box, req.image.width, req.image.height));
    }
};

inline Backends make_mock_backends(std::shared_ptr<const World> world) {
    Backends b;
    b.captioner = std::make_shared<MockCaptioner>(world);
    b.grounder = std::make_shared<MockGrounder>(world, MockGrounder::Role::detector);
    b.grounder_lmm = std::make_shared<MockGrounder>(world, MockGrounder::Role::spatial_lmm);
    b.scorer = std::make_shared<MockScorer>(world);
    b.embedder = std::make_shared<MockEmbedder>(world);
    b.segmenter = std::make_shared<MockSegmenter>();
    return b;
}

} // namespace d2af::mock
