#pragma once

// REC -> RES through the segmenter, and RES -> GRES multi-target and
// no-target samples.

#include "d2af/analysis.hpp"
#include "d2af/clients.hpp"
#include "d2af/core.hpp"
#include "d2af/json_util.hpp"
#include "d2af/mask.hpp"
#include "d2af/metrics.hpp"
#include "d2af/parallel.hpp"
#include "d2af/random.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace d2af {

struct ConvertConfig {
    int max_merge = 3;
    int max_multi_per_image = 20;
    double merge_iou_limit = 0.5;
    double no_target_ratio = 1.0; // no-target samples per multi-target sample
    int mask_dilation = 2;        // px of slack allowed around the box
    std::string join_policy = "comma_and";
    std::uint64_t seed = 0;

    void validate() const {
        if (max_merge < 2) throw ConfigError("convert.max_merge must be >= 2");
        if (max_multi_per_image < 0) throw ConfigError("convert.max_multi_per_image must be >= 0");
        if (!(merge_iou_limit > 0.0 && merge_iou_limit <= 1.0)) throw ConfigError("convert.merge_iou_limit must be in (0, 1]");
        if (!(no_target_ratio >= 0.0) || !std::isfinite(no_target_ratio))
            throw ConfigError("convert.no_target_ratio must be >= 0");
        if (mask_dilation < 0) throw ConfigError("convert.mask_dilation must be >= 0");
        if (join_policy != "comma_and" && join_policy != "and")
            throw ConfigError("convert.join_policy must be comma_and or and");
    }
};

struct MaskRecord {
    std::string pair_id;
    std::string image_id;
    BoundingBox box;
    RleMask rle;
    std::int64_t area = 0;

    friend bool operator==(const MaskRecord&, const MaskRecord&) = default;
};

enum class GresKind { single, multi, no_target };

inline std::string_view to_string(GresKind k) {
    switch (k) {
    case GresKind::single: return "single";
    case GresKind::multi: return "multi";
    case GresKind::no_target: return "no_target";
    }
    return "?";
}

inline GresKind gres_kind_from_string(std::string_view s) {
    for (GresKind k : {GresKind::single, GresKind::multi, GresKind::no_target})
        if (to_string(k) == s) return k;
    throw InvalidInput("unknown sample kind '" + std::string(s) + "'");
}

struct GresSample {
    std::string sample_id;
    std::string image_id;
    std::string caption;
    std::vector<MaskRecord> targets;
    GresKind kind = GresKind::single;
    std::string donor_pair_id; // no_target only

    [[nodiscard]] bool consistent() const {
        switch (kind) {
        case GresKind::no_target: return targets.empty();
        case GresKind::multi: return targets.size() >= 2;
        case GresKind::single: return targets.size() == 1;
        }
        return false;
    }

    friend bool operator==(const GresSample&, const GresSample&) = default;
};

/// "a", "a and b", "a, b and c".
inline std::string join_captions(const std::vector<std::string>& parts, std::string_view policy = "comma_and") {
    std::string out;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        if (i > 0) out += (policy == "and" || i + 1 == parts.size()) ? " and " : ", ";
        out += parts[i];
    }
    return out;
}

// ---------------------------------------------------------------------------
// REC -> RES

struct ResResult {
    std::vector<MaskRecord> masks;
    StageMetrics metrics;
};

/// One mask per kept pair. Segmenter failures and masks that break the
/// client contract (wrong size, support outside the dilated box) skip the
/// pair and are counted.
inline ResResult rec_to_res(const std::vector<RegionTextPair>& pairs, const std::map<std::string, ImageRecord>& images,
                            const Segmenter& segmenter, const ConvertConfig& cfg, int parallelism = 1,
                            const RetryPolicy& retry = {}) {
    cfg.validate();
    std::vector<std::size_t> todo;
    for (std::size_t i = 0; i < pairs.size(); ++i)
        if (pairs[i].status == Status::kept) todo.push_back(i);

    std::vector<std::optional<MaskRecord>> slots(todo.size());
    std::vector<StageMetrics> per(todo.size());
    parallel_for(todo.size(), parallelism, [&](std::size_t k) {
        const RegionTextPair& p = pairs[todo[k]];
        auto rec = images.find(p.image_id);
        if (rec == images.end()) throw DataError("pair '" + p.pair_id + "' references unknown image '" + p.image_id + "'");
        const SegmentRequest req{make_ref(rec->second), p.box, p.caption.text};
        RleMask rle;
        try {
            rle = with_retries(retry, [&] { return segmenter.segment(req); });
        } catch (const BackendError&) {
            per[k].add("segmenter_failures");
            return;
        }
        if (rle.width != rec->second.width || rle.height != rec->second.height) {
            per[k].add("mask_wrong_size");
            return;
        }
        BinaryMask bits;
        try {
            bits = rle_decode(rle);
        } catch (const InvalidInput&) {
            per[k].add("mask_malformed");
            return;
        }
        if (!support_within(bits, p.box, cfg.mask_dilation)) {
            per[k].add("mask_outside_box");
            return;
        }
        slots[k] = MaskRecord{p.pair_id, p.image_id, p.box, std::move(rle), bits.area()};
        per[k].add("masks");
    });
    ResResult out;
    for (auto& s : slots)
        if (s) out.masks.push_back(std::move(*s));
    for (const auto& m : per) out.metrics.merge(m);
    return out;
}

// ---------------------------------------------------------------------------
// RES -> GRES

/// Every kept pair with a mask becomes a single-target sample.
inline std::vector<GresSample> make_single(const std::vector<RegionTextPair>& pairs,
                                           const std::map<std::string, MaskRecord>& masks) {
    std::vector<GresSample> out;
    for (const auto& p : pairs) {
        if (p.status != Status::kept) continue;
        auto m = masks.find(p.pair_id);
        if (m == masks.end()) continue;
        out.push_back({p.pair_id, p.image_id, p.caption.text, {m->second}, GresKind::single, {}});
    }
    return out;
}

namespace detail {

inline void enumerate_groups(const std::vector<const MaskRecord*>& items, double limit, std::size_t max_size,
                             std::vector<std::size_t>& cur, std::size_t start,
                             std::vector<std::vector<std::size_t>>& out) {
    if (cur.size() >= 2) out.push_back(cur);
    if (cur.size() == max_size) return;
    for (std::size_t i = start; i < items.size(); ++i) {
        bool ok = true;
        for (std::size_t j : cur)
            if (!(iou(items[i]->box, items[j]->box) < limit)) {
                ok = false;
                break;
            }
        if (!ok) continue;
        cur.push_back(i);
        enumerate_groups(items, limit, max_size, cur, i + 1, out);
        cur.pop_back();
    }
}

} // namespace detail

/// Groups of 2..max_merge kept pairs from one image whose boxes pairwise
/// overlap below the IoU limit. When there are more groups than the cap, a
/// seeded subset is taken (kept in enumeration order).
inline std::vector<GresSample> make_multi_target(const std::vector<RegionTextPair>& image_pairs,
                                                 const std::map<std::string, MaskRecord>& masks,
                                                 const ConvertConfig& cfg) {
    cfg.validate();
    std::vector<const RegionTextPair*> members;
    std::vector<const MaskRecord*> items;
    std::string image_id;
    for (const auto& p : image_pairs) {
        if (p.status != Status::kept || !masks.count(p.pair_id)) continue;
        if (image_id.empty()) image_id = p.image_id;
        else if (image_id != p.image_id) throw InvalidInput("make_multi_target needs pairs from a single image");
        members.push_back(&p);
    }
    // input order must not leak into the output
    std::sort(members.begin(), members.end(), [](auto* a, auto* b) { return a->pair_id < b->pair_id; });
    for (const auto* p : members) items.push_back(&masks.at(p->pair_id));
    std::vector<std::vector<std::size_t>> groups;
    std::vector<std::size_t> cur;
    detail::enumerate_groups(items, cfg.merge_iou_limit, std::size_t(cfg.max_merge), cur, 0, groups);

    if (groups.size() > std::size_t(cfg.max_multi_per_image)) {
        std::vector<std::size_t> idx(groups.size());
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        Rng rng(Fnv1a{}.u64(cfg.seed).str("multi").str(image_id).value());
        rng.shuffle(std::span<std::size_t>(idx));
        idx.resize(std::size_t(cfg.max_multi_per_image));
        std::sort(idx.begin(), idx.end());
        std::vector<std::vector<std::size_t>> picked;
        for (std::size_t i : idx) picked.push_back(std::move(groups[i]));
        groups = std::move(picked);
    }

    std::vector<GresSample> out;
    for (std::size_t g = 0; g < groups.size(); ++g) {
        GresSample s;
        char buf[16];
        std::snprintf(buf, sizeof buf, ":m%03zu", g);
        s.sample_id = image_id + buf;
        s.image_id = image_id;
        s.kind = GresKind::multi;
        std::vector<std::string> texts;
        for (std::size_t i : groups[g]) {
            texts.push_back(members[i]->caption.text);
            s.targets.push_back(*items[i]);
        }
        s.caption = join_captions(texts, cfg.join_policy);
        out.push_back(std::move(s));
    }
    return out;
}

/// Words naming what a pair is about: its annotation categories (split into
/// words) plus the nouns the tagger finds in the caption.
inline std::set<std::string> pair_category_words(const RegionTextPair& p, const Tagger& tagger) {
    std::set<std::string> out;
    for (const auto& c : p.categories)
        for (auto& w : tokenize(c)) out.insert(std::move(w));
    for (auto& n : tagger.nouns(p.caption)) out.insert(std::move(n));
    return out;
}

/// image_id -> every category word seen in any of its pairs, whatever the
/// status. Using dropped pairs too keeps the no-target test conservative.
using CategoryIndex = std::map<std::string, std::set<std::string>>;

inline CategoryIndex build_category_index(const std::vector<RegionTextPair>& pairs, const Tagger& tagger) {
    CategoryIndex idx;
    for (const auto& p : pairs) {
        auto& s = idx[p.image_id];
        for (auto& w : pair_category_words(p, tagger)) s.insert(std::move(w));
    }
    return idx;
}

struct NoTargetResult {
    std::vector<GresSample> samples;
    StageMetrics metrics;
};

/// Moves kept captions to other images whose category words are disjoint
/// from the caption's. Single-threaded and seeded; input order does not
/// matter because donors and receivers are sorted before shuffling.
inline NoTargetResult make_no_target(const std::vector<RegionTextPair>& pairs, const CategoryIndex& index,
                                     std::size_t wanted, const ConvertConfig& cfg, const Tagger& tagger) {
    cfg.validate();
    NoTargetResult r;
    if (wanted == 0) return r;
    std::vector<const RegionTextPair*> donors;
    for (const auto& p : pairs)
        if (p.status == Status::kept && p.caption.word_count > 0) donors.push_back(&p);
    std::sort(donors.begin(), donors.end(), [](auto* a, auto* b) { return a->pair_id < b->pair_id; });
    std::vector<std::string> receivers;
    for (const auto& [id, _] : index) receivers.push_back(id);

    Rng rng(Fnv1a{}.u64(cfg.seed).str("no_target").value());
    rng.shuffle(std::span<const RegionTextPair*>(donors));
    std::map<std::string, std::size_t> per_image;
    for (const auto* d : donors) {
        if (r.samples.size() >= wanted) break;
        const auto words = pair_category_words(*d, tagger);
        std::vector<std::string> order = receivers;
        rng.shuffle(std::span<std::string>(order));
        bool placed = false;
        for (const auto& img : order) {
            if (img == d->image_id) continue;
            const auto& have = index.at(img);
            const bool disjoint = std::none_of(words.begin(), words.end(), [&](const std::string& w) { return have.count(w) > 0; });
            if (!disjoint) continue;
            GresSample s;
            char buf[16];
            std::snprintf(buf, sizeof buf, ":n%03zu", per_image[img]++);
            s.sample_id = img + buf;
            s.image_id = img;
            s.caption = d->caption.text;
            s.kind = GresKind::no_target;
            s.donor_pair_id = d->pair_id;
            r.samples.push_back(std::move(s));
            placed = true;
            break;
        }
        if (!placed) r.metrics.add("no_target_unplaced_donors");
    }
    if (r.samples.size() < wanted) r.metrics.add("no_target_shortfall", std::int64_t(wanted - r.samples.size()));
    if (r.samples.empty()) r.metrics.add("no_target_no_valid_pairing");
    r.metrics.add("no_target_samples", std::int64_t(r.samples.size()));
    return r;
}

struct GresResult {
    std::vector<GresSample> samples;
    StageMetrics metrics;
};

/// Singles, then per-image multi-target groups, then no-target swaps sized
/// by no_target_ratio times the multi-target count.
inline GresResult res_to_gres(const std::vector<RegionTextPair>& pairs, const std::vector<MaskRecord>& masks,
                              const ConvertConfig& cfg, const Tagger& tagger) {
    cfg.validate();
    std::map<std::string, MaskRecord> by_pair;
    for (const auto& m : masks) by_pair.emplace(m.pair_id, m);

    GresResult r;
    r.samples = make_single(pairs, by_pair);
    std::map<std::string, std::vector<RegionTextPair>> by_image;
    for (const auto& p : pairs) by_image[p.image_id].push_back(p);
    std::size_t multi = 0;
    for (const auto& [id, ps] : by_image) {
        auto ms = make_multi_target(ps, by_pair, cfg);
        multi += ms.size();
        for (auto& s : ms) r.samples.push_back(std::move(s));
    }
    const auto wanted = std::size_t(std::llround(cfg.no_target_ratio * double(multi)));
    auto nt = make_no_target(pairs, build_category_index(pairs, tagger), wanted, cfg, tagger);
    for (auto& s : nt.samples) r.samples.push_back(std::move(s));
    r.metrics = std::move(nt.metrics);
    r.metrics.add("single_samples", std::int64_t(r.samples.size() - multi - nt.samples.size()));
    r.metrics.add("multi_samples", std::int64_t(multi));
    return r;
}

// ---------------------------------------------------------------------------
// JSON lines for masks and samples

inline constexpr std::string_view kMaskSchema = "d2af_mask_v1";
inline constexpr std::string_view kGresSchema = "d2af_gres_v1";

inline ojson box_to_json(const BoundingBox& b) { return ojson::array({b.x_min, b.y_min, b.x_max, b.y_max}); }

inline BoundingBox box_from_json(const ojson& j) {
    if (!j.is_array() || j.size() != 4) throw InvalidInput("box must be an array of 4 numbers");
    return make_box(j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>());
}

inline ojson mask_to_json(const MaskRecord& m) {
    ojson j;
    j["schema"] = kMaskSchema;
    j["pair_id"] = m.pair_id;
    j["image_id"] = m.image_id;
    j["box"] = box_to_json(m.box);
    j["width"] = m.rle.width;
    j["height"] = m.rle.height;
    j["area"] = m.area;
    j["rle"] = rle_to_text(m.rle);
    return j;
}

inline MaskRecord mask_from_json(const ojson& j) {
    if (j.value("schema", std::string{}) != kMaskSchema) throw InvalidInput("not a mask record");
    MaskRecord m;
    m.pair_id = j.at("pair_id").get<std::string>();
    m.image_id = j.at("image_id").get<std::string>();
    m.box = box_from_json(j.at("box"));
    m.rle = rle_from_text(j.at("rle").get<std::string>(), j.at("width").get<int>(), j.at("height").get<int>());
    m.area = j.at("area").get<std::int64_t>();
    if (m.area != m.rle.area()) throw InvalidInput("mask '" + m.pair_id + "': area does not match its runs");
    return m;
}

inline ojson sample_to_json(const GresSample& s) {
    ojson j;
    j["schema"] = kGresSchema;
    j["sample_id"] = s.sample_id;
    j["image_id"] = s.image_id;
    j["caption"] = s.caption;
    j["kind"] = to_string(s.kind);
    ojson t = ojson::array();
    for (const auto& m : s.targets) {
        ojson mj = mask_to_json(m);
        mj.erase("schema");
        t.push_back(std::move(mj));
    }
    j["targets"] = std::move(t);
    if (s.kind == GresKind::no_target) j["donor_pair_id"] = s.donor_pair_id;
    return j;
}

inline GresSample sample_from_json(const ojson& j) {
    if (j.value("schema", std::string{}) != kGresSchema) throw InvalidInput("not a GRES sample");
    GresSample s;
    s.sample_id = j.at("sample_id").get<std::string>();
    s.image_id = j.at("image_id").get<std::string>();
    s.caption = j.at("caption").get<std::string>();
    s.kind = gres_kind_from_string(j.at("kind").get<std::string>());
    for (const auto& t : j.at("targets")) {
        ojson mj = t;
        mj["schema"] = kMaskSchema;
        s.targets.push_back(mask_from_json(mj));
    }
    if (s.kind == GresKind::no_target) s.donor_pair_id = j.at("donor_pair_id").get<std::string>();
    if (!s.consistent()) throw InvalidInput("sample '" + s.sample_id + "': kind does not match its targets");
    return s;
}

} // namespace d2af
