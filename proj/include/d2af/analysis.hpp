#pragma once

// Subset taxonomy, quantity reports and feature dumps.

#include "d2af/clients.hpp"
#include "d2af/core.hpp"
#include "d2af/json_util.hpp"
#include "d2af/lexicon_data.hpp"
#include "d2af/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace d2af {

enum class Referent { person, object, no_object };

inline std::string_view to_string(Referent r) {
    switch (r) {
    case Referent::person: return "person";
    case Referent::object: return "object";
    case Referent::no_object: return "no_object";
    }
    return "?";
}

struct SubsetLabels {
    bool intrinsic = false;
    bool relative = false;
    bool absolute_position = false;
    bool relative_position = false;
    Referent referent = Referent::no_object;
    LengthClass length_class = LengthClass::short_caption;

    friend bool operator==(const SubsetLabels&, const SubsetLabels&) = default;
};

inline LengthClass classify_length(const Caption& c) { return length_class_for(c.word_count); }

/// Lowercased words with leading/trailing punctuation removed.
inline std::vector<std::string> tokenize(std::string_view text) {
    std::vector<std::string> out;
    for (auto w : split_words(text)) {
        std::size_t b = 0, e = w.size();
        while (b < e && std::ispunct(static_cast<unsigned char>(w[b]))) ++b;
        while (e > b && std::ispunct(static_cast<unsigned char>(w[e - 1]))) --e;
        if (b == e) continue;
        std::string t = w.substr(b, e - b);
        for (char& ch : t) ch = char(std::tolower(static_cast<unsigned char>(ch)));
        out.push_back(std::move(t));
    }
    return out;
}

/// Non-blank lines that do not start with '#'.
inline std::vector<std::string> parse_lines(std::string_view text) {
    std::vector<std::string> out;
    std::istringstream in{std::string(text)};
    std::string line;
    while (std::getline(in, line)) {
        line = trim(line);
        if (!line.empty() && line[0] != '#') out.push_back(line);
    }
    return out;
}

/// Word lists behind the rule-based tagger. Entries may span several words
/// and are matched as contiguous token runs.
struct Lexicon {
    std::vector<std::vector<std::string>> absolute_position;
    std::vector<std::vector<std::string>> relative_position;
    std::set<std::string> relative_description;
    std::set<std::string> intrinsic;
    std::set<std::string> person_nouns;
    std::set<std::string> stopwords;

    static constexpr std::array<std::string_view, 6> kFiles = {"absolute_position", "relative_position",
                                                               "relative_description", "intrinsic",
                                                               "person_nouns", "stopwords"};

    static Lexicon from_texts(const std::map<std::string, std::string, std::less<>>& texts) {
        auto lines = [&](std::string_view name) {
            auto it = texts.find(name);
            if (it == texts.end()) throw ConfigError("lexicon list '" + std::string(name) + "' missing");
            return parse_lines(it->second);
        };
        auto phrases = [&](std::string_view name) {
            std::vector<std::vector<std::string>> out;
            for (const auto& l : lines(name)) out.push_back(tokenize(l));
            // longest first so "far left" wins over "left"
            std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.size() > b.size(); });
            return out;
        };
        auto words = [&](std::string_view name) {
            std::set<std::string> out;
            for (const auto& l : lines(name))
                for (auto& t : tokenize(l)) out.insert(std::move(t));
            return out;
        };
        Lexicon lx;
        lx.absolute_position = phrases("absolute_position");
        lx.relative_position = phrases("relative_position");
        lx.relative_description = words("relative_description");
        lx.intrinsic = words("intrinsic");
        lx.person_nouns = words("person_nouns");
        lx.stopwords = words("stopwords");
        return lx;
    }

    static const Lexicon& builtin() {
        static const Lexicon lx = from_texts({{"absolute_position", std::string(lexicon_data::absolute_position)},
                                              {"relative_position", std::string(lexicon_data::relative_position)},
                                              {"relative_description", std::string(lexicon_data::relative_description)},
                                              {"intrinsic", std::string(lexicon_data::intrinsic)},
                                              {"person_nouns", std::string(lexicon_data::person_nouns)},
                                              {"stopwords", std::string(lexicon_data::stopwords)}});
        return lx;
    }

    /// Reads <dir>/<list>.txt for every list.
    static Lexicon load_dir(const std::filesystem::path& dir) {
        std::map<std::string, std::string, std::less<>> texts;
        for (auto name : kFiles) {
            const auto path = dir / (std::string(name) + ".txt");
            std::ifstream in(path);
            if (!in) throw ConfigError("cannot read lexicon file " + path.string());
            std::stringstream ss;
            ss << in.rdbuf();
            texts.emplace(std::string(name), ss.str());
        }
        return from_texts(texts);
    }

    /// Content words: not closed-class, not a taxonomy cue, and not an
    /// obvious verb form or adverb.
    [[nodiscard]] bool is_noun(const std::string& t) const {
        if (stopwords.count(t) || intrinsic.count(t) || relative_description.count(t)) return false;
        if (!std::any_of(t.begin(), t.end(), [](unsigned char c) { return std::isalpha(c); })) return false;
        auto ends = [&](std::string_view s, std::size_t min_len) {
            return t.size() >= min_len && t.compare(t.size() - s.size(), s.size(), s) == 0;
        };
        if (ends("ing", 5) || ends("ly", 4) || ends("ed", 6)) return false;
        for (const auto* list : {&absolute_position, &relative_position})
            for (const auto& p : *list)
                if (p.size() == 1 && p[0] == t) return false;
        return true;
    }
};

namespace detail {

/// Marks every token covered by an occurrence of any phrase; returns true
/// when at least one occurrence is found among the uncovered tokens.
inline bool match_phrases(const std::vector<std::string>& toks, const std::vector<std::vector<std::string>>& phrases,
                          std::vector<bool>& covered) {
    bool hit = false;
    for (const auto& p : phrases) {
        if (p.empty() || p.size() > toks.size()) continue;
        for (std::size_t i = 0; i + p.size() <= toks.size(); ++i) {
            bool ok = true;
            for (std::size_t k = 0; k < p.size() && ok; ++k) ok = !covered[i + k] && toks[i + k] == p[k];
            if (!ok) continue;
            hit = true;
            for (std::size_t k = 0; k < p.size(); ++k) covered[i + k] = true;
        }
    }
    return hit;
}

} // namespace detail

/// Pluggable component tagger. The lexicon tagger is the deterministic
/// default; others (for example one backed by a language model) may throw
/// BackendError, in which case the lexicon fallback takes over.
class Tagger {
  public:
    virtual ~Tagger() = default;
    [[nodiscard]] virtual std::string name() const = 0;
    virtual SubsetLabels tag(const Caption& c) const = 0;
    virtual std::vector<std::string> nouns(const Caption& c) const = 0;
};

class LexiconTagger : public Tagger {
  public:
    explicit LexiconTagger(Lexicon lx = Lexicon::builtin()) : lx_(std::move(lx)) {}

    [[nodiscard]] std::string name() const override { return "lexicon"; }
    [[nodiscard]] const Lexicon& lexicon() const { return lx_; }

    SubsetLabels tag(const Caption& c) const override {
        const auto toks = tokenize(c.text);
        SubsetLabels s;
        s.length_class = classify_length(c);
        std::vector<bool> covered(toks.size(), false);
        // relation phrases first: "left of the car" is relative, not absolute
        s.relative_position = detail::match_phrases(toks, lx_.relative_position, covered);
        s.absolute_position = detail::match_phrases(toks, lx_.absolute_position, covered);
        for (const auto& t : toks) {
            if (lx_.intrinsic.count(t)) s.intrinsic = true;
            if (lx_.relative_description.count(t)) s.relative = true;
        }
        s.referent = referent(toks);
        return s;
    }

    std::vector<std::string> nouns(const Caption& c) const override {
        std::vector<std::string> out;
        for (auto& t : tokenize(c.text))
            if (lx_.is_noun(t)) out.push_back(std::move(t));
        return out;
    }

    [[nodiscard]] Referent referent(const std::vector<std::string>& toks) const {
        bool object = false;
        for (const auto& t : toks) {
            if (lx_.person_nouns.count(t)) return Referent::person;
            if (lx_.is_noun(t)) object = true;
        }
        return object ? Referent::object : Referent::no_object;
    }

  private:
    Lexicon lx_;
};

/// Runs `primary`; on BackendError keeps the lexicon labels and counts a
/// warning.
inline SubsetLabels classify_components(const Caption& c, const Tagger& primary, StageMetrics* warnings = nullptr) {
    try {
        return primary.tag(c);
    } catch (const BackendError&) {
        if (warnings) warnings->add("tagger_fallback");
        static const LexiconTagger fallback;
        return fallback.tag(c);
    }
}

inline SubsetLabels classify_components(const Caption& c) {
    static const LexiconTagger t;
    return t.tag(c);
}

/// Noun -> occurrence count over the given pairs.
inline std::map<std::string, std::int64_t> noun_vocabulary(const std::vector<RegionTextPair>& pairs,
                                                          const Tagger& tagger) {
    std::map<std::string, std::int64_t> vocab;
    for (const auto& p : pairs)
        for (auto& n : tagger.nouns(p.caption)) ++vocab[n];
    return vocab;
}

// ---------------------------------------------------------------------------
// Quantity report

struct SubsetCounts {
    std::int64_t total = 0;
    std::int64_t empty_caption = 0;
    std::map<std::string, std::int64_t> by_strategy;
    std::map<std::string, std::int64_t> by_length;
    std::map<std::string, std::int64_t> by_referent;
    std::int64_t intrinsic = 0;
    std::int64_t relative = 0;
    std::int64_t absolute_position = 0;
    std::int64_t relative_position = 0;
    std::map<std::string, std::int64_t> nouns;

    [[nodiscard]] std::int64_t noun_vocabulary_size() const { return std::int64_t(nouns.size()); }

    void add(const RegionTextPair& p, const SubsetLabels& s, const std::vector<std::string>& pair_nouns) {
        ++total;
        if (p.caption.word_count == 0) ++empty_caption;
        ++by_strategy[std::string(to_string(p.strategy))];
        ++by_length[std::string(to_string(s.length_class))];
        ++by_referent[std::string(to_string(s.referent))];
        intrinsic += s.intrinsic;
        relative += s.relative;
        absolute_position += s.absolute_position;
        relative_position += s.relative_position;
        for (const auto& n : pair_nouns) ++nouns[n];
    }

    void merge(const SubsetCounts& o) {
        total += o.total;
        empty_caption += o.empty_caption;
        for (const auto& [k, v] : o.by_strategy) by_strategy[k] += v;
        for (const auto& [k, v] : o.by_length) by_length[k] += v;
        for (const auto& [k, v] : o.by_referent) by_referent[k] += v;
        intrinsic += o.intrinsic;
        relative += o.relative;
        absolute_position += o.absolute_position;
        relative_position += o.relative_position;
        for (const auto& [k, v] : o.nouns) nouns[k] += v;
    }

    /// Flat subset-name -> count view used for tables and deltas.
    [[nodiscard]] std::vector<std::pair<std::string, std::int64_t>> rows() const {
        auto get = [](const std::map<std::string, std::int64_t>& m, const char* k) {
            auto it = m.find(k);
            return it == m.end() ? std::int64_t(0) : it->second;
        };
        return {{"total", total},
                {"short", get(by_length, "short")},
                {"mid", get(by_length, "mid")},
                {"long", get(by_length, "long")},
                {"empty_caption", empty_caption},
                {"intrinsic", intrinsic},
                {"relative", relative},
                {"absolute_position", absolute_position},
                {"relative_position", relative_position},
                {"person", get(by_referent, "person")},
                {"object", get(by_referent, "object")},
                {"no_object", get(by_referent, "no_object")},
                {"closed_set", get(by_strategy, "closed_set")},
                {"open_set", get(by_strategy, "open_set")},
                {"human", get(by_strategy, "human")},
                {"noun_vocabulary", noun_vocabulary_size()}};
    }
};

struct QuantityReport {
    std::string tagger;
    std::vector<std::pair<std::string, SubsetCounts>> manifests; // name, counts
    SubsetCounts combined;
    StageMetrics warnings;
};

/// Counts every pair that has not been dropped. Order of manifests is kept;
/// deltas in the outputs are relative to the first manifest.
inline QuantityReport quantity_report(const std::vector<std::pair<std::string, std::vector<RegionTextPair>>>& manifests,
                                      const Tagger& tagger) {
    QuantityReport r;
    r.tagger = tagger.name();
    for (const auto& [name, pairs] : manifests) {
        SubsetCounts c;
        for (const auto& p : pairs) {
            if (is_dropped(p.status)) continue;
            const SubsetLabels s = classify_components(p.caption, tagger, &r.warnings);
            std::vector<std::string> ns;
            try {
                ns = tagger.nouns(p.caption);
            } catch (const BackendError&) {
                r.warnings.add("tagger_fallback");
                ns = LexiconTagger().nouns(p.caption);
            }
            c.add(p, s, ns);
        }
        r.combined.merge(c);
        r.manifests.emplace_back(name, std::move(c));
    }
    return r;
}

inline constexpr std::string_view kReportSchema = "d2af_report_v1";

inline ojson report_to_json(const QuantityReport& r) {
    auto counts = [](const SubsetCounts& c) {
        ojson j;
        for (const auto& [k, v] : c.rows()) j[k] = v;
        return j;
    };
    ojson j;
    j["schema"] = kReportSchema;
    j["tagger"] = r.tagger;
    ojson ms = ojson::array();
    for (std::size_t i = 0; i < r.manifests.size(); ++i) {
        const auto& [name, c] = r.manifests[i];
        ojson m;
        m["name"] = name;
        m["counts"] = counts(c);
        if (i > 0) {
            ojson d;
            const auto base = r.manifests[0].second.rows();
            const auto cur = c.rows();
            for (std::size_t k = 0; k < cur.size(); ++k) d[cur[k].first] = cur[k].second - base[k].second;
            m["delta_vs_first"] = std::move(d);
        }
        ms.push_back(std::move(m));
    }
    j["manifests"] = std::move(ms);
    j["combined"] = counts(r.combined);
    ojson w = ojson::object();
    for (const auto& [k, v] : r.warnings.counters) w[k] = v;
    j["warnings"] = std::move(w);
    return j;
}

/// Aligned plain-text table: one row per subset, one column per manifest.
inline std::string report_to_table(const QuantityReport& r) {
    std::vector<std::string> headers{"subset"};
    std::vector<std::vector<std::pair<std::string, std::int64_t>>> cols;
    for (const auto& [name, c] : r.manifests) {
        headers.push_back(name);
        cols.push_back(c.rows());
    }
    if (r.manifests.size() > 1) {
        headers.push_back("combined");
        cols.push_back(r.combined.rows());
    }
    const auto labels = SubsetCounts{}.rows();
    std::vector<std::size_t> width(headers.size());
    for (std::size_t c = 0; c < headers.size(); ++c) width[c] = headers[c].size();
    for (const auto& [label, _] : labels) width[0] = std::max(width[0], label.size());
    for (std::size_t c = 0; c < cols.size(); ++c)
        for (const auto& [_, v] : cols[c]) width[c + 1] = std::max(width[c + 1], std::to_string(v).size());

    std::ostringstream out;
    auto rule = [&] {
        for (std::size_t c = 0; c < width.size(); ++c) out << (c ? "  " : "") << std::string(width[c], '-');
        out << '\n';
    };
    for (std::size_t c = 0; c < headers.size(); ++c)
        out << (c ? "  " : "") << (c ? std::right : std::left) << std::setw(int(width[c])) << headers[c];
    out << '\n';
    rule();
    for (std::size_t row = 0; row < labels.size(); ++row) {
        out << std::left << std::setw(int(width[0])) << labels[row].first;
        for (std::size_t c = 0; c < cols.size(); ++c) out << "  " << std::right << std::setw(int(width[c + 1])) << cols[c][row].second;
        out << '\n';
    }
    out << "tagger: " << r.tagger << '\n';
    return out.str();
}

// ---------------------------------------------------------------------------
// Feature dump


/// CSV: pair_id, the subset flags, then v0..v{d-1}. LF line endings, no
/// quoting (pair ids must not contain commas).
inline void export_features(const std::vector<RegionTextPair>& pairs, const Embedder& embedder, const Tagger& tagger,
                            std::ostream& out) {
    const int d = embedder.dimension();
    out << "pair_id,intrinsic,relative,absolute_position,relative_position,referent,length_class";
    for (int i = 0; i < d; ++i) out << ",v" << i;
    out << '\n';
    for (const auto& p : pairs) {
        if (p.pair_id.find_first_of(",\n\r") != std::string::npos)
            throw InvalidInput("pair id '" + p.pair_id + "' cannot be written unquoted");
        const SubsetLabels s = classify_components(p.caption, tagger);
        const auto e = checked_embedding(embedder.embed(p.caption.text), d);
        out << p.pair_id << ',' << int(s.intrinsic) << ',' << int(s.relative) << ',' << int(s.absolute_position) << ','
            << int(s.relative_position) << ',' << to_string(s.referent) << ',' << to_string(s.length_class);
        for (double v : e.vector) out << ',' << format_double(v);
        out << '\n';
    }
}

inline void export_features(const std::vector<RegionTextPair>& pairs, const Embedder& embedder, const Tagger& tagger,
                            const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write feature file " + path.string());
    export_features(pairs, embedder, tagger, static_cast<std::ostream&>(out));
    out.flush();
    if (!out) throw DataError("write failed for " + path.string());
}

} // namespace d2af
