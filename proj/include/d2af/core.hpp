#pragma once

// Domain model shared by every pipeline stage: boxes, images, captions,
// region-text pairs and their scores.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace d2af {

// ---------------------------------------------------------------------------
// Errors. The CLI maps each family onto an exit code.

class InvalidInput : public std::invalid_argument {
  public:
    using std::invalid_argument::invalid_argument;
};

class ConfigError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

class DataError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

class BackendError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Backend answered, but the payload could not be interpreted.
class MalformedResponse : public BackendError {
  public:
    using BackendError::BackendError;
};

// ---------------------------------------------------------------------------
// Geometry

/// Axis-aligned rectangle in absolute pixel coordinates.
struct BoundingBox {
    double x_min = 0.0;
    double y_min = 0.0;
    double x_max = 0.0;
    double y_max = 0.0;

    [[nodiscard]] double width() const { return x_max - x_min; }
    [[nodiscard]] double height() const { return y_max - y_min; }
    [[nodiscard]] double area() const { return width() * height(); }

    [[nodiscard]] bool valid() const {
        return std::isfinite(x_min) && std::isfinite(y_min) && std::isfinite(x_max) &&
               std::isfinite(y_max) && x_min < x_max && y_min < y_max;
    }

    friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

inline std::string to_string(const BoundingBox& b) {
    return "[" + std::to_string(b.x_min) + "," + std::to_string(b.y_min) + "," +
           std::to_string(b.x_max) + "," + std::to_string(b.y_max) + "]";
}

/// Throws InvalidInput unless the box has finite coordinates and positive area.
inline const BoundingBox& require_valid(const BoundingBox& b) {
    if (!b.valid()) throw InvalidInput("degenerate or non-finite box " + to_string(b));
    return b;
}

inline BoundingBox make_box(double x_min, double y_min, double x_max, double y_max) {
    BoundingBox b{x_min, y_min, x_max, y_max};
    require_valid(b);
    return b;
}

/// Intersection over union. Symmetric, in [0, 1], 0 for disjoint boxes.
inline double iou(const BoundingBox& a, const BoundingBox& b) {
    require_valid(a);
    require_valid(b);
    const double iw = std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min);
    const double ih = std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min);
    if (iw <= 0.0 || ih <= 0.0) return 0.0;
    const double inter = iw * ih;
    const double uni = a.area() + b.area() - inter;
    return std::clamp(inter / uni, 0.0, 1.0);
}

struct ImageRecord {
    std::string image_id;
    int width = 0;
    int height = 0;
    std::string uri;

    [[nodiscard]] double diagonal() const { return std::hypot(double(width), double(height)); }
};

inline void require_valid(const ImageRecord& img) {
    if (img.width <= 0 || img.height <= 0)
        throw InvalidInput("image '" + img.image_id + "' has non-positive dimensions");
}

/// Clips the box into [0,width] x [0,height]. Errors if nothing of positive
/// area remains.
inline BoundingBox clamp_to_image(const BoundingBox& box, const ImageRecord& img) {
    require_valid(box);
    require_valid(img);
    BoundingBox out{std::clamp(box.x_min, 0.0, double(img.width)),
                    std::clamp(box.y_min, 0.0, double(img.height)),
                    std::clamp(box.x_max, 0.0, double(img.width)),
                    std::clamp(box.y_max, 0.0, double(img.height))};
    if (!out.valid())
        throw InvalidInput("box " + to_string(box) + " lies outside image '" + img.image_id + "'");
    return out;
}

[[nodiscard]] inline bool within_image(const BoundingBox& b, const ImageRecord& img) {
    return b.valid() && b.x_min >= 0.0 && b.y_min >= 0.0 && b.x_max <= img.width &&
           b.y_max <= img.height;
}

// ---------------------------------------------------------------------------
// Captions

enum class LengthClass { short_caption, mid_caption, long_caption };

inline constexpr bool is_space(char c) {
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

/// Number of maximal runs of non-whitespace bytes. Multi-byte UTF-8 sequences
/// never contain ASCII whitespace bytes, so this is encoding-safe.
inline int word_count(std::string_view text) {
    int n = 0;
    bool in_word = false;
    for (char c : text) {
        const bool ws = is_space(c);
        if (!ws && !in_word) ++n;
        in_word = !ws;
    }
    return n;
}

inline std::vector<std::string> split_words(std::string_view text) {
    std::vector<std::string> out;
    std::size_t i = 0;
    while (i < text.size()) {
        while (i < text.size() && is_space(text[i])) ++i;
        std::size_t j = i;
        while (j < text.size() && !is_space(text[j])) ++j;
        if (j > i) out.emplace_back(text.substr(i, j - i));
        i = j;
    }
    return out;
}

inline std::string trim(std::string_view s) {
    std::size_t b = 0, e = s.size();
    while (b < e && is_space(s[b])) ++b;
    while (e > b && is_space(s[e - 1])) --e;
    return std::string(s.substr(b, e - b));
}

/// Word-count bands: <=3 short, 4..6 mid, >=7 long. Zero words bins as short.
inline constexpr LengthClass length_class_for(int words) {
    if (words <= 3) return LengthClass::short_caption;
    if (words <= 6) return LengthClass::mid_caption;
    return LengthClass::long_caption;
}

struct Caption {
    std::string text;
    int word_count = 0;
    LengthClass length_class = LengthClass::short_caption;

    Caption() = default;
    explicit Caption(std::string t)
        : text(std::move(t)), word_count(d2af::word_count(text)),
          length_class(length_class_for(word_count)) {}

    friend bool operator==(const Caption&, const Caption&) = default;
};

// ---------------------------------------------------------------------------
// Region-text pairs

enum class Strategy { closed_set, open_set, human };

enum class Status { raw, kept, dropped_spatial, dropped_semantic, dropped_redundant, dropped_outlier };

[[nodiscard]] inline constexpr bool is_dropped(Status s) {
    return s == Status::dropped_spatial || s == Status::dropped_semantic ||
           s == Status::dropped_redundant || s == Status::dropped_outlier;
}

/// Allowed moves: raw -> anything; kept -> kept or a distribution drop;
/// dropped states are absorbing.
[[nodiscard]] inline constexpr bool transition_allowed(Status from, Status to) {
    if (from == to) return true;
    switch (from) {
    case Status::raw: return true;
    case Status::kept: return to == Status::dropped_redundant || to == Status::dropped_outlier;
    default: return false;
    }
}

struct ScoreRecord {
    std::optional<double> iou_lmm;
    std::optional<double> iou_det;
    std::optional<double> s_intr;
    std::optional<double> s_rela;
    std::optional<double> s_final;
    std::optional<double> alpha;
    std::optional<double> log_density;

    friend bool operator==(const ScoreRecord&, const ScoreRecord&) = default;
};

/// alpha * s_intr + (1 - alpha) * s_rela
[[nodiscard]] inline double fuse_similarity(double s_intr, double s_rela, double alpha) {
    return alpha * s_intr + (1.0 - alpha) * s_rela;
}

struct RegionTextPair {
    std::string pair_id;
    std::string image_id;
    BoundingBox box;
    Caption caption;
    Strategy strategy = Strategy::closed_set;
    // Category names attached at annotation time (closed-set class).
    std::vector<std::string> categories;
    std::optional<ScoreRecord> scores;
    Status status = Status::raw;

    ScoreRecord& score_record() {
        if (!scores) scores.emplace();
        return *scores;
    }

    void set_status(Status to) {
        if (!transition_allowed(status, to))
            throw InvalidInput("pair '" + pair_id + "': illegal status transition");
        status = to;
    }

    friend bool operator==(const RegionTextPair&, const RegionTextPair&) = default;
};

// ---------------------------------------------------------------------------
// Enum names used on disk and in reports.

inline std::string_view to_string(LengthClass c) {
    switch (c) {
    case LengthClass::short_caption: return "short";
    case LengthClass::mid_caption: return "mid";
    case LengthClass::long_caption: return "long";
    }
    return "?";
}

inline std::string_view to_string(Strategy s) {
    switch (s) {
    case Strategy::closed_set: return "closed_set";
    case Strategy::open_set: return "open_set";
    case Strategy::human: return "human";
    }
    return "?";
}

inline std::string_view to_string(Status s) {
    switch (s) {
    case Status::raw: return "raw";
    case Status::kept: return "kept";
    case Status::dropped_spatial: return "dropped_spatial";
    case Status::dropped_semantic: return "dropped_semantic";
    case Status::dropped_redundant: return "dropped_redundant";
    case Status::dropped_outlier: return "dropped_outlier";
    }
    return "?";
}

inline LengthClass length_class_from_string(std::string_view s) {
    if (s == "short") return LengthClass::short_caption;
    if (s == "mid") return LengthClass::mid_caption;
    if (s == "long") return LengthClass::long_caption;
    throw InvalidInput("unknown length class '" + std::string(s) + "'");
}

inline Strategy strategy_from_string(std::string_view s) {
    if (s == "closed_set") return Strategy::closed_set;
    if (s == "open_set") return Strategy::open_set;
    if (s == "human") return Strategy::human;
    throw InvalidInput("unknown strategy '" + std::string(s) + "'");
}

inline Status status_from_string(std::string_view s) {
    for (Status st : {Status::raw, Status::kept, Status::dropped_spatial, Status::dropped_semantic,
                      Status::dropped_redundant, Status::dropped_outlier})
        if (to_string(st) == s) return st;
    throw InvalidInput("unknown status '" + std::string(s) + "'");
}

} // namespace d2af
