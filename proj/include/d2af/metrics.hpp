#pragma once

#include <cstdint>
#include <map>
#include <mutex>
#include <string>

namespace d2af {

/// Named counters. Workers keep their own and merge at the end; std::map
/// keeps report order stable.
struct StageMetrics {
    std::map<std::string, std::int64_t> counters;

    void add(const std::string& name, std::int64_t n = 1) { counters[name] += n; }
    [[nodiscard]] std::int64_t get(const std::string& name) const {
        auto it = counters.find(name);
        return it == counters.end() ? 0 : it->second;
    }
    void merge(const StageMetrics& other) {
        for (const auto& [k, v] : other.counters) counters[k] += v;
    }
};

} // namespace d2af
