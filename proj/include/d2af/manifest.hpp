#pragma once

// JSONL manifests: one RegionTextPair per line, fixed key order.

#include "d2af/convert.hpp"
#include "d2af/core.hpp"
#include "d2af/json_util.hpp"

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

namespace d2af {

inline constexpr std::string_view kManifestSchema = "d2af_manifest_v1";

inline ojson pair_to_json(const RegionTextPair& p) {
    ojson j;
    j["schema"] = kManifestSchema;
    j["pair_id"] = p.pair_id;
    j["image_id"] = p.image_id;
    j["box"] = box_to_json(p.box);
    j["caption"] = p.caption.text;
    j["word_count"] = p.caption.word_count;
    j["length_class"] = to_string(p.caption.length_class);
    j["strategy"] = to_string(p.strategy);
    j["categories"] = p.categories;
    j["status"] = to_string(p.status);
    if (p.scores) {
        const ScoreRecord& s = *p.scores;
        ojson sj;
        auto put = [&](const char* k, const std::optional<double>& v) { sj[k] = v ? number_to_json(*v) : ojson(nullptr); };
        put("iou_lmm", s.iou_lmm);
        put("iou_det", s.iou_det);
        put("s_intr", s.s_intr);
        put("s_rela", s.s_rela);
        put("s_final", s.s_final);
        put("alpha", s.alpha);
        put("log_density", s.log_density);
        j["scores"] = std::move(sj);
    } else {
        j["scores"] = nullptr;
    }
    return j;
}

inline RegionTextPair pair_from_json(const ojson& j) {
    if (!j.is_object()) throw InvalidInput("record is not a JSON object");
    const auto schema = j.value("schema", std::string{});
    if (schema != kManifestSchema) throw InvalidInput("unexpected schema '" + schema + "'");
    RegionTextPair p;
    p.pair_id = j.at("pair_id").get<std::string>();
    if (p.pair_id.empty()) throw InvalidInput("empty pair_id");
    p.image_id = j.at("image_id").get<std::string>();
    p.box = box_from_json(j.at("box"));
    p.caption = Caption(j.at("caption").get<std::string>());
    if (j.contains("word_count") && j.at("word_count").get<int>() != p.caption.word_count)
        throw InvalidInput("word_count does not match caption");
    p.strategy = strategy_from_string(j.at("strategy").get<std::string>());
    if (j.contains("categories")) p.categories = j.at("categories").get<std::vector<std::string>>();
    p.status = status_from_string(j.at("status").get<std::string>());
    if (j.contains("scores") && !j.at("scores").is_null()) {
        const auto& sj = j.at("scores");
        ScoreRecord s;
        auto get = [&](const char* k, std::optional<double>& v) {
            if (sj.contains(k) && !sj.at(k).is_null()) v = number_from_json(sj.at(k));
        };
        get("iou_lmm", s.iou_lmm);
        get("iou_det", s.iou_det);
        get("s_intr", s.s_intr);
        get("s_rela", s.s_rela);
        get("s_final", s.s_final);
        get("alpha", s.alpha);
        get("log_density", s.log_density);
        p.scores = s;
    }
    return p;
}

inline std::string pair_to_line(const RegionTextPair& p) { return pair_to_json(p).dump() + "\n"; }

/// Parses JSONL text. Any bad line fails the whole read with its 1-based
/// line number. Blank lines are not allowed either.
template <typename T, typename Parse>
std::vector<T> parse_jsonl(std::istream& in, const std::string& name, Parse&& parse,
                           std::optional<std::size_t> max_lines = std::nullopt) {
    std::vector<T> out;
    std::string line;
    std::size_t n = 0;
    while ((!max_lines || n < *max_lines) && std::getline(in, line)) {
        ++n;
        try {
            out.push_back(parse(ojson::parse(line)));
        } catch (const std::exception& e) {
            throw DataError(name + ":" + std::to_string(n) + ": " + e.what());
        }
    }
    if (max_lines && n < *max_lines)
        throw DataError(name + ": expected at least " + std::to_string(*max_lines) + " lines, found " + std::to_string(n));
    return out;
}

inline std::vector<RegionTextPair> read_manifest(const std::filesystem::path& path,
                                                 std::optional<std::size_t> max_lines = std::nullopt) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot read manifest " + path.string());
    return parse_jsonl<RegionTextPair>(in, path.string(), pair_from_json, max_lines);
}

/// Writes through a temporary file and renames, so readers never see a
/// half-written manifest.
inline void write_text_atomic(const std::filesystem::path& path, const std::string& text) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw DataError("cannot write " + tmp.string());
        out << text;
        out.flush();
        if (!out) throw DataError("write failed for " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

inline std::string manifest_text(const std::vector<RegionTextPair>& pairs) {
    std::string s;
    for (const auto& p : pairs) s += pair_to_line(p);
    return s;
}

inline void write_manifest(const std::filesystem::path& path, const std::vector<RegionTextPair>& pairs) {
    write_text_atomic(path, manifest_text(pairs));
}

inline std::string read_text(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot read " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

template <typename T, typename ToJson>
void write_jsonl(const std::filesystem::path& path, const std::vector<T>& rows, ToJson&& to_json) {
    std::string s;
    for (const auto& r : rows) s += to_json(r).dump() + "\n";
    write_text_atomic(path, s);
}

} // namespace d2af
