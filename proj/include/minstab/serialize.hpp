#pragma once

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "minstab/error.hpp"
#include "minstab/network.hpp"

namespace minstab {

/// Parameter documents are JSON:
///
///     {"format": "minstab.params/1",
///      "arch": {"L": 3, "d": 2, "d0": 2},
///      "layers": [{"rows": 2, "cols": 2, "entries": [ ... ]}, ...],
///      ... extra top-level fields ...}
///
/// Layer entries are written row-major with 17 significant digits so that a
/// read-back reproduces every double exactly.
inline constexpr const char* kParamsFormat = "minstab.params/1";

inline std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline std::string params_to_string(const NetworkParams& params, const nlohmann::json& extra = nlohmann::json::object()) {
    const auto& a = params.arch();
    std::ostringstream os;
    os << "{\n  \"format\": \"" << kParamsFormat << "\",\n";
    os << "  \"arch\": {\"L\": " << a.depth << ", \"d\": " << a.width << ", \"d0\": " << a.input_dim << "},\n";
    os << "  \"layers\": [\n";
    for (std::size_t l = 0; l < params.weights().size(); ++l) {
        const Matrix& w = params.weights()[l];
        os << "    {\"rows\": " << w.rows() << ", \"cols\": " << w.cols() << ", \"entries\": [";
        const auto e = w.entries();
        for (std::size_t i = 0; i < e.size(); ++i) os << (i ? ", " : "") << format_double(e[i]);
        os << "]}" << (l + 1 < params.weights().size() ? "," : "") << "\n";
    }
    os << "  ]";
    for (const auto& [key, value] : extra.items()) os << ",\n  " << nlohmann::json(key).dump() << ": " << value.dump();
    os << "\n}\n";
    return os.str();
}

inline NetworkParams params_from_json(const nlohmann::json& doc) {
    try {
        const auto& arch_doc = doc.at("arch");
        Architecture arch{arch_doc.at("L").get<int>(), arch_doc.at("d").get<int>(), arch_doc.at("d0").get<int>()};
        arch.validate();
        std::vector<Matrix> layers;
        for (const auto& layer : doc.at("layers")) {
            const auto rows = layer.at("rows").get<std::size_t>();
            const auto cols = layer.at("cols").get<std::size_t>();
            layers.emplace_back(rows, cols, layer.at("entries").get<std::vector<double>>());
        }
        return {arch, std::move(layers)};
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("parameter document: ") + e.what());
    }
}

inline NetworkParams params_from_string(const std::string& text) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw FormatError(std::string("parameter document: ") + e.what(), e.byte);
    }
    return params_from_json(doc);
}

inline std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError("cannot write " + path);
    out << text;
}

inline NetworkParams load_params(const std::string& path) { return params_from_string(read_text_file(path)); }

inline void save_params(const std::string& path, const NetworkParams& params,
                        const nlohmann::json& extra = nlohmann::json::object()) {
    write_text_file(path, params_to_string(params, extra));
}

}  // namespace minstab
