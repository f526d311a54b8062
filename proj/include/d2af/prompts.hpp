#pragma once

// Generation prompt templates with named {placeholder} slots.

#include "d2af/core.hpp"

#include <array>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace d2af {

enum class PromptTemplate { category_detect, closed_short, closed_mid, closed_long, open_set };

inline constexpr std::array kAllTemplates{PromptTemplate::category_detect, PromptTemplate::closed_short,
                                          PromptTemplate::closed_mid, PromptTemplate::closed_long,
                                          PromptTemplate::open_set};

inline constexpr std::array kClosedTemplates{PromptTemplate::closed_short, PromptTemplate::closed_mid,
                                             PromptTemplate::closed_long};

inline std::string_view to_string(PromptTemplate t) {
    switch (t) {
    case PromptTemplate::category_detect: return "category_detect";
    case PromptTemplate::closed_short: return "closed_short";
    case PromptTemplate::closed_mid: return "closed_mid";
    case PromptTemplate::closed_long: return "closed_long";
    case PromptTemplate::open_set: return "open_set";
    }
    return "?";
}

inline PromptTemplate template_from_string(std::string_view s) {
    for (PromptTemplate t : kAllTemplates)
        if (to_string(t) == s) return t;
    throw InvalidInput("unknown prompt template '" + std::string(s) + "'");
}

inline std::string_view default_template_text(PromptTemplate t) {
    switch (t) {
    case PromptTemplate::category_detect:
        return "Given an image, find all instance classes (including person). Provide the object types in a "
               "list format, one per line. Please choose from the following classes: {cls_list}.";
    case PromptTemplate::closed_short:
        return "Please generate a unique description for the object inside the bounding box {box}. The class "
               "information of the object in the bounding box: {cls}. The description should follow the "
               "format: Object + Feature + Position (right, left, middle) or Object + Position (right, left, "
               "middle) or Object + Feature. Please limit your output to 5 words or fewer.";
    case PromptTemplate::closed_mid:
        return "Please generate a unique description for the object inside the bounding box {box}. The class "
               "information of the object in the bounding box: {cls}. The description should follow the "
               "format: Object + Details (5 words). Please limit your output to 10 words or less.";
    case PromptTemplate::closed_long:
        return "Please generate a unique description for the object inside the bounding box {box}. The class "
               "information of the object in the bounding box: {cls}. The description should follow one of "
               "the formats: Object + Description (Feature, 5 words) + Description (Action, 5 words) + "
               "Relative Position of Objects (5 words). Please limit your output to 20 words or fewer.";
    case PromptTemplate::open_set:
        return "Identify as many objects in the image as possible and give each a unique description. Provide "
               "the objects in a list format, one per line. Please limit the output to 5 items and limit each "
               "item to 20 words or less.";
    }
    return {};
}

/// Word limit stated by each caption template.
inline constexpr int template_word_limit(PromptTemplate t) {
    switch (t) {
    case PromptTemplate::closed_short: return 5;
    case PromptTemplate::closed_mid: return 10;
    case PromptTemplate::closed_long: return 20;
    case PromptTemplate::open_set: return 20;
    default: return 0;
    }
}

/// Names inside {...} in the order they first appear.
inline std::vector<std::string> placeholders(std::string_view text) {
    std::vector<std::string> out;
    std::size_t pos = 0;
    while ((pos = text.find('{', pos)) != std::string_view::npos) {
        const std::size_t end = text.find('}', pos);
        if (end == std::string_view::npos) break;
        std::string name(text.substr(pos + 1, end - pos - 1));
        if (std::find(out.begin(), out.end(), name) == out.end()) out.push_back(std::move(name));
        pos = end + 1;
    }
    return out;
}

using Slots = std::map<std::string, std::string>;

/// Substitutes every {name}. The slot keys must match the placeholders exactly.
inline std::string render(std::string_view text, const Slots& slots) {
    const auto names = placeholders(text);
    std::set<std::string> wanted(names.begin(), names.end());
    std::set<std::string> given;
    for (const auto& [k, v] : slots) given.insert(k);
    if (wanted != given) throw InvalidInput("prompt slots do not match template placeholders");

    std::string out;
    std::size_t pos = 0;
    while (pos < text.size()) {
        const std::size_t open = text.find('{', pos);
        if (open == std::string_view::npos) {
            out.append(text.substr(pos));
            break;
        }
        const std::size_t close = text.find('}', open);
        out.append(text.substr(pos, open - pos));
        out.append(slots.at(std::string(text.substr(open + 1, close - open - 1))));
        pos = close + 1;
    }
    return out;
}

/// Box slot format: "[x_min,y_min,x_max,y_max]" rounded to integers.
inline std::string box_slot(const BoundingBox& b) {
    return "[" + std::to_string(std::lround(b.x_min)) + "," + std::to_string(std::lround(b.y_min)) + "," +
           std::to_string(std::lround(b.x_max)) + "," + std::to_string(std::lround(b.y_max)) + "]";
}

inline std::optional<BoundingBox> parse_box_slot(std::string_view s) {
    if (s.size() < 2 || s.front() != '[' || s.back() != ']') return std::nullopt;
    std::string inner(s.substr(1, s.size() - 2));
    std::replace(inner.begin(), inner.end(), ',', ' ');
    std::istringstream in(inner);
    BoundingBox b;
    if (!(in >> b.x_min >> b.y_min >> b.x_max >> b.y_max)) return std::nullopt;
    if (!b.valid()) return std::nullopt;
    return b;
}

/// One entry per non-empty line; common list markers ("- ", "* ", "3. ",
/// "2) ") are stripped.
inline std::vector<std::string> parse_list_response(std::string_view text) {
    std::vector<std::string> out;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        std::size_t nl = text.find('\n', pos);
        if (nl == std::string_view::npos) nl = text.size();
        std::string line = trim(text.substr(pos, nl - pos));
        if (!line.empty() && (line[0] == '-' || line[0] == '*' || line[0] == '\xE2')) {
            // "-", "*", or a UTF-8 bullet (3 bytes starting with 0xE2)
            std::size_t skip = line[0] == '\xE2' ? std::min<std::size_t>(3, line.size()) : 1;
            line = trim(std::string_view(line).substr(skip));
        } else {
            std::size_t i = 0;
            while (i < line.size() && std::isdigit(static_cast<unsigned char>(line[i]))) ++i;
            if (i > 0 && i < line.size() && (line[i] == '.' || line[i] == ')'))
                line = trim(std::string_view(line).substr(i + 1));
        }
        if (!line.empty()) out.push_back(std::move(line));
        pos = nl + 1;
    }
    return out;
}

/// Template texts keyed by template, loadable from a directory of
/// <name>.txt files. Missing files fall back to the built-in text.
class TemplateSet {
  public:
    TemplateSet() {
        for (PromptTemplate t : kAllTemplates) texts_[t] = std::string(default_template_text(t));
    }

    static TemplateSet load_dir(const std::filesystem::path& dir) {
        TemplateSet set;
        for (PromptTemplate t : kAllTemplates) {
            const auto path = dir / (std::string(to_string(t)) + ".txt");
            if (!std::filesystem::exists(path)) continue;
            std::ifstream in(path);
            if (!in) throw ConfigError("cannot read template " + path.string());
            std::stringstream ss;
            ss << in.rdbuf();
            set.set(t, trim(ss.str()));
        }
        return set;
    }

    void set(PromptTemplate t, std::string text) {
        const auto names = placeholders(text);
        const std::set<std::string> got(names.begin(), names.end());
        if (got != required_slots(t))
            throw ConfigError("template '" + std::string(to_string(t)) + "' has unexpected placeholders");
        texts_[t] = std::move(text);
    }

    [[nodiscard]] const std::string& text(PromptTemplate t) const { return texts_.at(t); }
    [[nodiscard]] std::string render(PromptTemplate t, const Slots& slots) const {
        return d2af::render(text(t), slots);
    }

    static std::set<std::string> required_slots(PromptTemplate t) {
        switch (t) {
        case PromptTemplate::category_detect: return {"cls_list"};
        case PromptTemplate::open_set: return {};
        default: return {"box", "cls"};
        }
    }

  private:
    std::map<PromptTemplate, std::string> texts_;
};

inline std::vector<std::string> load_lines(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read " + path.string());
    std::vector<std::string> out;
    std::string line;
    while (std::getline(in, line)) {
        line = trim(line);
        if (!line.empty() && line[0] != '#') out.push_back(line);
    }
    return out;
}

} // namespace d2af
