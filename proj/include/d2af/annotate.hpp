#pragma once

// Closed-set and open-set pseudo-label generation from images alone.

#include "d2af/clients.hpp"
#include "d2af/core.hpp"
#include "d2af/metrics.hpp"
#include "d2af/prompts.hpp"

#include <cstdio>
#include <set>
#include <string>
#include <tuple>
#include <vector>

namespace d2af {

/// The 80 common-object class names, in canonical order.
inline const std::vector<std::string>& default_categories() {
    static const std::vector<std::string> names = {
        "person",        "bicycle",      "car",           "motorcycle",    "airplane",     "bus",
        "train",         "truck",        "boat",          "traffic light", "fire hydrant", "stop sign",
        "parking meter", "bench",        "bird",          "cat",           "dog",          "horse",
        "sheep",         "cow",          "elephant",      "bear",          "zebra",        "giraffe",
        "backpack",      "umbrella",     "handbag",       "tie",           "suitcase",     "frisbee",
        "skis",          "snowboard",    "sports ball",   "kite",          "baseball bat", "baseball glove",
        "skateboard",    "surfboard",    "tennis racket", "bottle",        "wine glass",   "cup",
        "fork",          "knife",        "spoon",         "bowl",          "banana",       "apple",
        "sandwich",      "orange",       "broccoli",      "carrot",        "hot dog",      "pizza",
        "donut",         "cake",         "chair",         "couch",         "potted plant", "bed",
        "dining table",  "toilet",       "tv",            "laptop",        "mouse",        "remote",
        "keyboard",      "cell phone",   "microwave",     "oven",          "toaster",      "sink",
        "refrigerator",  "book",         "clock",         "vase",          "scissors",     "teddy bear",
        "hair drier",    "toothbrush"};
    return names;
}

struct AnnotationConfig {
    int captions_per_box_per_length = 1;
    int max_open_set_items = 5;
    int open_set_rounds = 1;
    double min_box_confidence = 0.35;
    std::vector<std::string> categories = default_categories();

    void validate() const {
        if (captions_per_box_per_length < 1) throw ConfigError("annotate.captions_per_box_per_length must be >= 1");
        if (max_open_set_items < 1) throw ConfigError("annotate.max_open_set_items must be >= 1");
        if (open_set_rounds < 0) throw ConfigError("annotate.open_set_rounds must be >= 0");
        if (!(min_box_confidence >= 0.0 && min_box_confidence <= 1.0))
            throw ConfigError("annotate.min_box_confidence must be in [0, 1]");
        if (categories.empty()) throw ConfigError("category list is empty");
        std::set<std::string> seen;
        for (const auto& c : categories)
            if (!seen.insert(c).second) throw ConfigError("duplicate category '" + c + "'");
    }
};

namespace detail {

/// Rethrows a backend failure with the image id in front, keeping its type.
template <typename Fn>
auto with_image_context(const std::string& image_id, Fn&& fn) -> decltype(fn()) {
    try {
        return fn();
    } catch (const MalformedResponse& e) {
        throw MalformedResponse("image '" + image_id + "': " + e.what());
    } catch (const BackendError& e) {
        throw BackendError("image '" + image_id + "': " + e.what());
    }
}

inline std::tuple<long long, long long, long long, long long, std::string> dedup_key(const RegionTextPair& p) {
    auto r = [](double v) { return std::llround(v * 10.0); };
    return {r(p.box.x_min), r(p.box.y_min), r(p.box.x_max), r(p.box.y_max), p.caption.text};
}

} // namespace detail

class Annotator {
  public:
    Annotator(Backends backends, TemplateSet templates, AnnotationConfig cfg, RetryPolicy retry = {})
        : backends_(std::move(backends)), templates_(std::move(templates)), cfg_(std::move(cfg)), retry_(retry) {
        cfg_.validate();
        if (!backends_.captioner || !backends_.grounder) throw ConfigError("annotation needs a captioner and a grounder");
    }

    [[nodiscard]] const AnnotationConfig& config() const { return cfg_; }

    /// Present categories -> per-class detection -> three length prompts per box.
    std::vector<RegionTextPair> closed_set(const ImageRef& img, StageMetrics& metrics) const {
        return detail::with_image_context(img.image_id, [&] {
            std::string cls_list;
            for (std::size_t i = 0; i < cfg_.categories.size(); ++i) cls_list += (i ? ", " : "") + cfg_.categories[i];
            CaptionRequest detect{img, std::nullopt, PromptTemplate::category_detect, {{"cls_list", cls_list}}, {}, 1};
            detect.prompt = templates_.render(detect.prompt_template, detect.slots);
            const auto answered = normalize_candidates(with_retries(retry_, [&] { return backends_.captioner->generate(detect); }));

            const std::set<std::string> allowed(cfg_.categories.begin(), cfg_.categories.end());
            std::vector<std::string> present;
            std::set<std::string> seen;
            for (const auto& c : answered) {
                if (!allowed.count(c)) {
                    metrics.add("closed_set_unknown_category");
                    continue;
                }
                if (seen.insert(c).second) present.push_back(c);
            }

            std::vector<RegionTextPair> out;
            std::set<std::tuple<long long, long long, long long, long long, std::string>> keys;
            for (const auto& cls : present) {
                GroundingRequest greq{img, cls};
                const auto found = normalize_grounding(with_retries(retry_, [&] { return backends_.grounder->ground(greq); }), img);
                for (const auto& det : found.boxes) {
                    if (!(det.confidence > cfg_.min_box_confidence)) continue;
                    metrics.add("closed_set_instances");
                    for (PromptTemplate t : kClosedTemplates) {
                        CaptionRequest req{img, det.box, t, {{"box", box_slot(det.box)}, {"cls", cls}}, {},
                                           cfg_.captions_per_box_per_length};
                        req.prompt = templates_.render(t, req.slots);
                        auto cands = normalize_candidates(with_retries(retry_, [&] { return backends_.captioner->generate(req); }));
                        int taken = 0;
                        for (auto& text : cands) {
                            if (taken >= cfg_.captions_per_box_per_length) break;
                            RegionTextPair p;
                            p.image_id = img.image_id;
                            p.box = det.box;
                            p.caption = Caption(std::move(text));
                            p.strategy = Strategy::closed_set;
                            p.categories = {cls};
                            if (!keys.insert(detail::dedup_key(p)).second) {
                                metrics.add("closed_set_duplicates");
                                continue;
                            }
                            ++taken;
                            out.push_back(std::move(p));
                        }
                    }
                }
            }
            return out;
        });
    }

    /// Free-form descriptions, each grounded by the detector; the single
    /// best box above the confidence floor becomes the pair's region.
    std::vector<RegionTextPair> open_set(const ImageRef& img, StageMetrics& metrics) const {
        return detail::with_image_context(img.image_id, [&] {
            std::vector<std::string> descriptions;
            std::set<std::string> seen;
            for (int round = 0; round < cfg_.open_set_rounds; ++round) {
                CaptionRequest req{img, std::nullopt, PromptTemplate::open_set, {}, {}, cfg_.max_open_set_items};
                req.prompt = templates_.render(req.prompt_template, req.slots);
                auto items = normalize_candidates(with_retries(retry_, [&] { return backends_.captioner->generate(req); }));
                if (int(items.size()) > cfg_.max_open_set_items) items.resize(std::size_t(cfg_.max_open_set_items));
                for (auto& d : items) {
                    if (seen.insert(d).second) descriptions.push_back(std::move(d));
                    else metrics.add("open_set_duplicates");
                }
            }
            std::vector<RegionTextPair> out;
            for (auto& d : descriptions) {
                GroundingRequest greq{img, d};
                const auto found = normalize_grounding(with_retries(retry_, [&] { return backends_.grounder->ground(greq); }), img);
                if (found.boxes.empty() || !(found.boxes.front().confidence > cfg_.min_box_confidence)) {
                    metrics.add("open_set_ungrounded");
                    continue;
                }
                RegionTextPair p;
                p.image_id = img.image_id;
                p.box = found.boxes.front().box;
                p.caption = Caption(d);
                p.strategy = Strategy::open_set;
                out.push_back(std::move(p));
            }
            return out;
        });
    }

    /// Both strategies, merged, with pair ids "<image_id>:<0000>".
    std::vector<RegionTextPair> annotate(const ImageRef& img, StageMetrics& metrics) const {
        auto closed = closed_set(img, metrics);
        auto open = open_set(img, metrics);
        metrics.add("closed_set_pairs", std::int64_t(closed.size()));
        metrics.add("open_set_pairs", std::int64_t(open.size()));
        auto merged = merge_strategies(std::move(closed), std::move(open));
        for (std::size_t i = 0; i < merged.size(); ++i) {
            char buf[24];
            std::snprintf(buf, sizeof buf, ":%04zu", i);
            merged[i].pair_id = img.image_id + buf;
        }
        return merged;
    }

    /// Closed first, then open; a (box to 0.1 px, caption) collision keeps
    /// the closed-set pair.
    static std::vector<RegionTextPair> merge_strategies(std::vector<RegionTextPair> closed,
                                                        std::vector<RegionTextPair> open) {
        const std::string* image = nullptr;
        for (const auto* list : {&closed, &open})
            for (const auto& p : *list) {
                if (!image) image = &p.image_id;
                else if (*image != p.image_id) throw InvalidInput("cannot merge pairs from different images");
            }
        std::vector<RegionTextPair> out;
        out.reserve(closed.size() + open.size());
        std::set<std::tuple<long long, long long, long long, long long, std::string>> keys;
        for (auto* list : {&closed, &open})
            for (auto& p : *list)
                if (keys.insert(detail::dedup_key(p)).second) out.push_back(std::move(p));
        return out;
    }

  private:
    Backends backends_;
    TemplateSet templates_;
    AnnotationConfig cfg_;
    RetryPolicy retry_;
};

inline std::vector<RegionTextPair> merge_strategies(std::vector<RegionTextPair> closed, std::vector<RegionTextPair> open) {
    return Annotator::merge_strategies(std::move(closed), std::move(open));
}

} // namespace d2af
