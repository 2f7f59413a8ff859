#pragma once

// Model documents (JSON), CSV outputs, checksums, and run manifests.
//
// Model schema (all complex matrices are row-major arrays of rows, each entry
// a [re, im] pair):
//   {
//     "d_s": 2, "d_a": 2,
//     "hamiltonian": [[...]],              // optional, (d_s*d_a) square
//     "unmonitored": [{"matrix": [[...]], "rate": g}, ...],   // optional
//     "system_ops": [{"label": "sigma", "matrix": [[...]]}],  // d_s square
//     "ancilla_labels": ["1", "2"],        // optional
//     "rates": [[[...]]]                   // [alpha][l][m], non-negative
//   }

#include "nmqj/bipartite.hpp"

#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <filesystem>

namespace nmqj {

class SchemaError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

namespace io_detail {

using nlohmann::json;

inline const json& need(const json& j, const std::string& key, const std::string& path) {
    if (!j.contains(key)) throw SchemaError("missing field " + path + "." + key);
    return j.at(key);
}

inline CMat parse_matrix(const json& j, const std::string& path, int expect_dim = -1) {
    if (!j.is_array() || j.empty())
        throw SchemaError(path + " must be a non-empty array of rows");
    const int rows = static_cast<int>(j.size());
    const int cols = static_cast<int>(j.at(0).size());
    if (expect_dim > 0 && (rows != expect_dim || cols != expect_dim))
        throw SchemaError(path + " must be " + std::to_string(expect_dim) + "x" +
                          std::to_string(expect_dim) + ", got " + std::to_string(rows) + "x" +
                          std::to_string(cols));
    CMat m(rows, cols);
    for (int r = 0; r < rows; ++r) {
        const auto& row = j.at(std::size_t(r));
        if (!row.is_array() || static_cast<int>(row.size()) != cols)
            throw SchemaError(path + "[" + std::to_string(r) + "] has inconsistent length");
        for (int c = 0; c < cols; ++c) {
            const auto& e = row.at(std::size_t(c));
            if (!e.is_array() || e.size() != 2)
                throw SchemaError(path + "[" + std::to_string(r) + "][" + std::to_string(c) +
                                  "] must be a [re, im] pair");
            m(r, c) = Complex(e.at(0).get<double>(), e.at(1).get<double>());
        }
    }
    return m;
}

inline json dump_matrix(const CMat& m) {
    json rows = json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        json row = json::array();
        for (Eigen::Index c = 0; c < m.cols(); ++c)
            row.push_back({m(r, c).real(), m(r, c).imag()});
        rows.push_back(std::move(row));
    }
    return rows;
}

}  // namespace io_detail

inline BipartiteModel parse_model(const nlohmann::json& j) {
    using io_detail::need;
    using io_detail::parse_matrix;
    BipartiteModel model;
    model.d_s = need(j, "d_s", "$").get<int>();
    model.d_a = need(j, "d_a", "$").get<int>();
    if (model.d_s < 1 || model.d_a < 1) throw SchemaError("$.d_s and $.d_a must be positive");
    const int big = model.d_s * model.d_a;

    model.l0 = Superoperator::zero(big);
    if (j.contains("hamiltonian")) {
        CMat h = parse_matrix(j.at("hamiltonian"), "$.hamiltonian", big);
        if (!is_hermitian(h, Tolerances::defaults().hermiticity))
            throw SchemaError("$.hamiltonian is not Hermitian");
        model.l0 += hamiltonian_superop(h);
    }
    if (j.contains("unmonitored")) {
        const auto& arr = j.at("unmonitored");
        if (!arr.is_array()) throw SchemaError("$.unmonitored must be an array");
        for (std::size_t i = 0; i < arr.size(); ++i) {
            const std::string path = "$.unmonitored[" + std::to_string(i) + "]";
            const auto& e = arr.at(i);
            const double rate = need(e, "rate", path).get<double>();
            if (!(rate >= 0) || !std::isfinite(rate))
                throw SchemaError(path + ".rate must be finite and non-negative");
            model.l0 += rate * dissipator(parse_matrix(need(e, "matrix", path), path + ".matrix", big));
        }
    }

    const auto& ops = need(j, "system_ops", "$");
    if (!ops.is_array() || ops.empty()) throw SchemaError("$.system_ops must be a non-empty array");
    for (std::size_t i = 0; i < ops.size(); ++i) {
        const std::string path = "$.system_ops[" + std::to_string(i) + "]";
        const auto& e = ops.at(i);
        SystemOp so;
        so.label = e.contains("label") ? e.at("label").get<std::string>()
                                       : ("V" + std::to_string(i));
        so.op = parse_matrix(need(e, "matrix", path), path + ".matrix", model.d_s);
        model.system_ops.push_back(std::move(so));
    }

    if (j.contains("ancilla_labels")) {
        for (const auto& l : j.at("ancilla_labels"))
            model.ancilla_labels.push_back(l.get<std::string>());
        if (static_cast<int>(model.ancilla_labels.size()) != model.d_a)
            throw SchemaError("$.ancilla_labels length must equal d_a");
    } else {
        for (int l = 0; l < model.d_a; ++l)
            model.ancilla_labels.push_back(std::to_string(l + 1));
    }

    const auto& rt = need(j, "rates", "$");
    const int na = static_cast<int>(model.system_ops.size());
    if (!rt.is_array() || static_cast<int>(rt.size()) != na)
        throw SchemaError("$.rates must be an array with one slice per system op");
    model.rates = RateTensor::zeros(na, model.d_a);
    for (int a = 0; a < na; ++a) {
        const auto& slice = rt.at(std::size_t(a));
        const std::string pa = "$.rates[" + std::to_string(a) + "]";
        if (!slice.is_array() || static_cast<int>(slice.size()) != model.d_a)
            throw SchemaError(pa + " must have d_a rows");
        for (int l = 0; l < model.d_a; ++l) {
            const auto& row = slice.at(std::size_t(l));
            const std::string pl = pa + "[" + std::to_string(l) + "]";
            if (!row.is_array() || static_cast<int>(row.size()) != model.d_a)
                throw SchemaError(pl + " must have d_a entries");
            for (int m = 0; m < model.d_a; ++m) {
                const double v = row.at(std::size_t(m)).get<double>();
                if (!(v >= 0) || !std::isfinite(v))
                    throw SchemaError(pl + "[" + std::to_string(m) +
                                      "] must be finite and non-negative");
                model.rates.at(a, l, m) = v;
            }
        }
    }
    validate_model_shape(model);
    return model;
}

inline BipartiteModel load_model(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw SchemaError("cannot open model file " + path);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw SchemaError("JSON parse error in " + path + ": " + e.what());
    }
    try {
        return parse_model(j);
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError("schema error in " + path + ": " + e.what());
    }
}

inline nlohmann::json model_to_json(const BipartiteModel& model) {
    nlohmann::json j;
    j["d_s"] = model.d_s;
    j["d_a"] = model.d_a;
    nlohmann::json ops = nlohmann::json::array();
    for (const auto& so : model.system_ops)
        ops.push_back({{"label", so.label}, {"matrix", io_detail::dump_matrix(so.op)}});
    j["system_ops"] = std::move(ops);
    j["ancilla_labels"] = model.ancilla_labels;
    nlohmann::json rt = nlohmann::json::array();
    for (int a = 0; a < model.rates.n_alpha; ++a) {
        nlohmann::json slice = nlohmann::json::array();
        for (int l = 0; l < model.d_a; ++l) {
            nlohmann::json row = nlohmann::json::array();
            for (int m = 0; m < model.d_a; ++m) row.push_back(model.rates.at(a, l, m));
            slice.push_back(std::move(row));
        }
        rt.push_back(std::move(slice));
    }
    j["rates"] = std::move(rt);
    return j;
}

// ---------------------------------------------------------------- CSV output

// Fixed shortest-roundtrip formatting so reruns are byte-identical.
inline std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline void write_csv(const std::string& path, const std::vector<std::string>& header,
                      const std::vector<std::vector<double>>& rows) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open output file " + path);
    for (std::size_t i = 0; i < header.size(); ++i)
        out << (i ? "," : "") << header[i];
    out << "\n";
    for (const auto& row : rows) {
        for (std::size_t i = 0; i < row.size(); ++i)
            out << (i ? "," : "") << format_double(row[i]);
        out << "\n";
    }
}

inline std::vector<std::string> element_headers(int d, const std::string& prefix) {
    std::vector<std::string> h;
    for (int c = 0; c < d; ++c)
        for (int r = 0; r < d; ++r) {
            h.push_back(prefix + "_re_" + std::to_string(r) + std::to_string(c));
            h.push_back(prefix + "_im_" + std::to_string(r) + std::to_string(c));
        }
    return h;
}

inline void append_elements(std::vector<double>& row, const CMat& m) {
    for (Eigen::Index c = 0; c < m.cols(); ++c)
        for (Eigen::Index r = 0; r < m.rows(); ++r) {
            row.push_back(m(r, c).real());
            row.push_back(m(r, c).imag());
        }
}

// ------------------------------------------------------------- checksums

inline std::uint64_t fnv1a64(const void* data, std::size_t len) {
    const auto* p = static_cast<const unsigned char*>(data);
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (std::size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001B3ULL;
    }
    return h;
}

inline std::string file_checksum(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot checksum " + path);
    std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    char buf[24];
    std::snprintf(buf, sizeof buf, "fnv1a64:%016llx",
                  static_cast<unsigned long long>(fnv1a64(data.data(), data.size())));
    return buf;
}

}  // namespace nmqj
