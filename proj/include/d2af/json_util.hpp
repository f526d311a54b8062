#pragma once

#include <nlohmann/json.hpp>

#include <charconv>
#include <cmath>
#include <stdexcept>
#include <limits>
#include <string>

namespace d2af {

using ojson = nlohmann::ordered_json;

/// JSON has no infinities; they travel as the strings "inf" / "-inf".
inline ojson number_to_json(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    return v;
}

template <typename Json>
double number_from_json(const Json& j) {
    if (j.is_string()) {
        const auto s = j.template get<std::string>();
        if (s == "inf") return std::numeric_limits<double>::infinity();
        if (s == "-inf") return -std::numeric_limits<double>::infinity();
        if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
        throw nlohmann::json::type_error::create(302, "expected number, got '" + s + "'", &j);
    }
    return j.template get<double>();
}

/// Shortest text that reads back to the same double.
inline std::string format_double(double v) {
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
    if (ec != std::errc{}) throw std::runtime_error("cannot format number");
    return {buf, end};
}

} // namespace d2af
