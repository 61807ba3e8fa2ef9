#pragma once

// On-disk containers.
//
// Activation container (directory):
//   manifest.json   {"format": "loce-container", "schema_version": 1,
//                    "layers": [{"layer_id", "kind": "activation"|"tokens",
//                                "channels", "height", "width", "n_prefix_tokens"}],
//                    "samples": [{"sample_id", "concept_label", "layer_id",
//                                 "activation_path", "mask_path", "image_hw": [h, w]}]}
//   *.npy           activations as C x H x W float32 (or T x C float32 for
//                   token layers), masks as h x w uint8 with values {0,1}
//
// LoCE bank (directory):
//   manifest.json   {"format": "loce-bank", "schema_version": 1, "layer_id", "dim_c", "n_rows"}
//   records.jsonl   one record object per line, same order as matrix rows
//   loces.npy       N x C float32; failed rows are NaN

#include <filesystem>
#include <fstream>
#include <cctype>
#include <cstring>
#include <limits>
#include <map>
#include <tuple>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "loce/common.hpp"
#include "loce/npy.hpp"
#include "loce/projection.hpp"

namespace loce {

namespace fs = std::filesystem;

inline constexpr int kContainerSchemaVersion = 1;
inline constexpr int kBankSchemaVersion = 1;

enum class LayerKind { activation, tokens };

struct LayerInfo {
    std::string layer_id;
    LayerKind kind = LayerKind::activation;
    std::size_t channels = 0;
    std::size_t height = 0;
    std::size_t width = 0;
    std::size_t n_prefix_tokens = 0;
};

struct SampleRecord {
    std::string sample_id;
    std::string concept_label;
    std::string layer_id;
    std::string activation_path;
    std::string mask_path;
    GridSize image_hw;
};

struct Container {
    fs::path root;
    std::vector<LayerInfo> layers;
    std::vector<SampleRecord> records;

    const LayerInfo& layer(const std::string& id) const {
        for (const auto& l : layers) {
            if (l.layer_id == id) {
                return l;
            }
        }
        throw DataError("unknown layer: " + id);
    }

    std::vector<SampleRecord> records_for_layer(const std::string& id) const {
        std::vector<SampleRecord> out;
        for (const auto& r : records) {
            if (r.layer_id == id) {
                out.push_back(r);
            }
        }
        return out;
    }
};

namespace detail {

inline nlohmann::json read_json_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw DataError("missing file: " + path.string());
    }
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw DataError("cannot parse " + path.string() + ": " + e.what());
    }
}

inline void write_text_file(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw DataError("cannot open for writing: " + path.string());
    }
    out << text;
    if (!out) {
        throw DataError("write failed: " + path.string());
    }
}

template <typename T>
T json_field(const nlohmann::json& obj, const char* key, const std::string& where) {
    if (!obj.contains(key)) {
        throw DataError(where + ": missing field '" + key + "'");
    }
    try {
        return obj.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw DataError(where + ": field '" + key + "' has the wrong type");
    }
}

inline std::string shape_string(const std::vector<std::size_t>& shape) {
    std::string s;
    for (std::size_t i = 0; i < shape.size(); ++i) {
        s += (i ? "x" : "") + std::to_string(shape[i]);
    }
    return s;
}

}  // namespace detail

inline const char* to_string(LayerKind k) { return k == LayerKind::tokens ? "tokens" : "activation"; }

inline Container read_container(const fs::path& root) {
    const auto manifest = detail::read_json_file(root / "manifest.json");
    if (manifest.value("format", std::string{}) != "loce-container") {
        throw DataError("manifest.json is not a loce-container manifest");
    }
    if (manifest.value("schema_version", 0) != kContainerSchemaVersion) {
        throw DataError("unsupported container schema version");
    }
    Container c;
    c.root = root;
    for (const auto& l : manifest.at("layers")) {
        LayerInfo info;
        info.layer_id = detail::json_field<std::string>(l, "layer_id", "layer");
        const auto kind = l.value("kind", std::string("activation"));
        if (kind == "tokens") {
            info.kind = LayerKind::tokens;
        } else if (kind != "activation") {
            throw DataError("layer " + info.layer_id + ": unknown kind " + kind);
        }
        info.channels = detail::json_field<std::size_t>(l, "channels", info.layer_id);
        info.height = detail::json_field<std::size_t>(l, "height", info.layer_id);
        info.width = detail::json_field<std::size_t>(l, "width", info.layer_id);
        info.n_prefix_tokens = l.value("n_prefix_tokens", std::size_t{0});
        if (info.channels == 0 || info.height == 0 || info.width == 0) {
            throw DataError("layer " + info.layer_id + ": dims must be >= 1");
        }
        c.layers.push_back(info);
    }

    std::set<std::tuple<std::string, std::string, std::string>> seen;
    for (const auto& s : manifest.at("samples")) {
        SampleRecord r;
        r.sample_id = detail::json_field<std::string>(s, "sample_id", "sample");
        const std::string where = "sample " + r.sample_id;
        r.concept_label = detail::json_field<std::string>(s, "concept_label", where);
        r.layer_id = detail::json_field<std::string>(s, "layer_id", where);
        r.activation_path = detail::json_field<std::string>(s, "activation_path", where);
        r.mask_path = detail::json_field<std::string>(s, "mask_path", where);
        auto hw = detail::json_field<std::vector<std::size_t>>(s, "image_hw", where);
        if (hw.size() != 2) {
            throw DataError(where + ": image_hw must have two entries");
        }
        r.image_hw = {hw[0], hw[1]};
        if (!seen.emplace(r.sample_id, r.concept_label, r.layer_id).second) {
            throw DataError(where + ": duplicate (sample_id, concept_label, layer_id)");
        }

        const auto& layer = c.layer(r.layer_id);
        const auto act = npy::read_header(root / r.activation_path);
        if (act.dtype == npy::DType::uint8) {
            throw DataError(where + ": unsupported dtype for activations");
        }
        std::vector<std::size_t> expected;
        if (layer.kind == LayerKind::activation) {
            expected = {layer.channels, layer.height, layer.width};
        } else {
            expected = {layer.n_prefix_tokens + layer.height * layer.width, layer.channels};
        }
        if (act.shape != expected) {
            throw DataError(where + ": shape mismatch, activation array is " + detail::shape_string(act.shape) +
                            " but manifest declares " + detail::shape_string(expected));
        }
        const auto mask = npy::read_header(root / r.mask_path);
        if (mask.dtype != npy::DType::uint8) {
            throw DataError(where + ": unsupported dtype for mask (expected uint8)");
        }
        if (mask.shape != std::vector<std::size_t>{hw[0], hw[1]}) {
            throw DataError(where + ": shape mismatch, mask array is " + detail::shape_string(mask.shape) +
                            " but image_hw is " + detail::shape_string(hw));
        }
        c.records.push_back(std::move(r));
    }
    return c;
}

inline ActivationTensor load_activation(const Container& c, const SampleRecord& r) {
    const auto& layer = c.layer(r.layer_id);
    auto arr = npy::read<float>(c.root / r.activation_path);
    if (!all_finite(std::span<const float>(arr.data))) {
        throw DataError("sample " + r.sample_id + ": non-finite activation values");
    }
    if (layer.kind == LayerKind::tokens) {
        MatrixF tokens(arr.shape[0], arr.shape[1], std::move(arr.data));
        return tokens_to_quasi_activations(tokens, {layer.height, layer.width}, layer.n_prefix_tokens, r.layer_id);
    }
    return ActivationTensor(arr.shape[0], arr.shape[1], arr.shape[2], std::move(arr.data), r.layer_id);
}

inline ConceptMask load_mask(const Container& c, const SampleRecord& r) {
    auto arr = npy::read<std::uint8_t>(c.root / r.mask_path);
    return ConceptMask(arr.shape[0], arr.shape[1], std::move(arr.data));
}

// Writes a container directory. Used by fixtures and the synthetic generator;
// real containers normally come from the extraction tooling.
// Replaces characters that are unsafe in file names with '_'.
inline std::string safe_path_component(std::string s) {
    for (auto& ch : s) {
        if (!std::isalnum(static_cast<unsigned char>(ch)) && ch != '-' && ch != '_') {
            ch = '_';
        }
    }
    return s;
}

class ContainerWriter {
public:
    explicit ContainerWriter(fs::path root) : root_(std::move(root)) { fs::create_directories(root_ / "arrays"); }

    void add_layer(const LayerInfo& layer) { layers_.push_back(layer); }

    void add_sample(const SampleRecord& proto, const ActivationTensor& act, const ConceptMask& mask) {
        SampleRecord r = proto;
        const std::string stem = "arrays/" + sanitize(r.layer_id) + "__" + sanitize(r.sample_id) + "__" +
                                 sanitize(r.concept_label);
        r.activation_path = stem + "__act.npy";
        r.mask_path = stem + "__mask.npy";
        r.image_hw = mask.grid();
        npy::write<float>(root_ / r.activation_path, {act.channels, act.height, act.width},
                          std::span<const float>(act.data));
        write_mask(r, mask);
        records_.push_back(std::move(r));
    }

    void add_token_sample(const SampleRecord& proto, const MatrixF& tokens, const ConceptMask& mask) {
        SampleRecord r = proto;
        const std::string stem = "arrays/" + sanitize(r.layer_id) + "__" + sanitize(r.sample_id) + "__" +
                                 sanitize(r.concept_label);
        r.activation_path = stem + "__tokens.npy";
        r.mask_path = stem + "__mask.npy";
        r.image_hw = mask.grid();
        npy::write<float>(root_ / r.activation_path, {tokens.rows(), tokens.cols()},
                          std::span<const float>(tokens.data()));
        write_mask(r, mask);
        records_.push_back(std::move(r));
    }

    void finish() const {
        nlohmann::json m;
        m["format"] = "loce-container";
        m["schema_version"] = kContainerSchemaVersion;
        m["layers"] = nlohmann::json::array();
        for (const auto& l : layers_) {
            m["layers"].push_back({{"layer_id", l.layer_id},
                                   {"kind", to_string(l.kind)},
                                   {"channels", l.channels},
                                   {"height", l.height},
                                   {"width", l.width},
                                   {"n_prefix_tokens", l.n_prefix_tokens}});
        }
        m["samples"] = nlohmann::json::array();
        for (const auto& r : records_) {
            m["samples"].push_back({{"sample_id", r.sample_id},
                                    {"concept_label", r.concept_label},
                                    {"layer_id", r.layer_id},
                                    {"activation_path", r.activation_path},
                                    {"mask_path", r.mask_path},
                                    {"image_hw", {r.image_hw.height, r.image_hw.width}}});
        }
        detail::write_text_file(root_ / "manifest.json", m.dump(2) + "\n");
    }

private:
    void write_mask(const SampleRecord& r, const ConceptMask& mask) {
        npy::write<std::uint8_t>(root_ / r.mask_path, {mask.height(), mask.width()},
                                 std::span<const std::uint8_t>(mask.data()));
    }

    static std::string sanitize(const std::string& s) { return safe_path_component(s); }

    fs::path root_;
    std::vector<LayerInfo> layers_;
    std::vector<SampleRecord> records_;
};

// ---------------------------------------------------------------------------
// Concept banks

struct BankRecord {
    std::string sample_id;
    std::string concept_label;
    std::string layer_id;
    double final_loss = 0.0;
    double train_iou = 0.0;
    bool failed = false;
    std::string kind = "loce";      // loce | sgloce | gloce | net2vec | ...
    std::size_t member_count = 1;   // rows averaged into this vector

    friend bool operator==(const BankRecord&, const BankRecord&) = default;
};

struct ConceptBank {
    std::string layer_id;
    std::size_t dim_c = 0;
    std::vector<BankRecord> records;
    MatrixF matrix;

    ConceptBank() = default;
    ConceptBank(std::string layer, std::size_t c) : layer_id(std::move(layer)), dim_c(c), matrix(0, c) {}

    std::size_t size() const noexcept { return records.size(); }

    void append(BankRecord record, std::span<const float> vector) {
        require(vector.size() == dim_c, "bank row length does not match dim_c");
        if (record.failed) {
            std::vector<float> nan_row(dim_c, std::numeric_limits<float>::quiet_NaN());
            matrix.append_row(nan_row);
        } else {
            if (!all_finite(vector)) {
                throw DataError("non-failed bank row " + record.sample_id + " has non-finite entries");
            }
            matrix.append_row(vector);
        }
        records.push_back(std::move(record));
    }

    std::vector<std::size_t> rows_for_label(const std::string& label) const {
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < records.size(); ++i) {
            if (records[i].concept_label == label) {
                out.push_back(i);
            }
        }
        return out;
    }

    std::optional<std::size_t> row_for_sample(const std::string& sample_id) const {
        for (std::size_t i = 0; i < records.size(); ++i) {
            if (records[i].sample_id == sample_id) {
                return i;
            }
        }
        return std::nullopt;
    }

    std::vector<std::size_t> valid_rows() const {
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < records.size(); ++i) {
            if (!records[i].failed) {
                out.push_back(i);
            }
        }
        return out;
    }

    // Distinct labels in order of first appearance.
    std::vector<std::string> labels() const {
        std::vector<std::string> out;
        std::set<std::string> seen;
        for (const auto& r : records) {
            if (seen.insert(r.concept_label).second) {
                out.push_back(r.concept_label);
            }
        }
        return out;
    }

    void validate() const {
        if (matrix.rows() != records.size() || matrix.cols() != dim_c) {
            throw DataError("bank matrix shape does not match records/dim_c");
        }
        for (std::size_t i = 0; i < records.size(); ++i) {
            if (!records[i].failed && !all_finite(matrix.row(i))) {
                throw DataError("bank row " + std::to_string(i) + " has non-finite entries but is not flagged failed");
            }
        }
    }

    friend bool operator==(const ConceptBank& a, const ConceptBank& b) {
        if (a.layer_id != b.layer_id || a.dim_c != b.dim_c || a.records != b.records ||
            a.matrix.rows() != b.matrix.rows() || a.matrix.cols() != b.matrix.cols()) {
            return false;
        }
        // Bitwise, so NaN rows compare equal to themselves.
        return std::memcmp(a.matrix.data().data(), b.matrix.data().data(), a.matrix.data().size() * sizeof(float)) == 0;
    }
};

inline nlohmann::json to_json(const BankRecord& r) {
    return {{"sample_id", r.sample_id},         {"concept_label", r.concept_label},
            {"layer_id", r.layer_id},           {"final_loss", r.final_loss},
            {"train_iou", r.train_iou},         {"failed", r.failed},
            {"kind", r.kind},                   {"member_count", r.member_count}};
}

inline BankRecord bank_record_from_json(const nlohmann::json& j, std::size_t line) {
    const std::string where = "records.jsonl line " + std::to_string(line);
    BankRecord r;
    r.sample_id = detail::json_field<std::string>(j, "sample_id", where);
    r.concept_label = detail::json_field<std::string>(j, "concept_label", where);
    r.layer_id = detail::json_field<std::string>(j, "layer_id", where);
    r.final_loss = j.contains("final_loss") && j["final_loss"].is_number() ? j["final_loss"].get<double>()
                                                                            : std::numeric_limits<double>::quiet_NaN();
    r.train_iou = detail::json_field<double>(j, "train_iou", where);
    r.failed = detail::json_field<bool>(j, "failed", where);
    r.kind = j.value("kind", std::string("loce"));
    r.member_count = j.value("member_count", std::size_t{1});
    return r;
}

inline void write_bank(const ConceptBank& bank, const fs::path& dir) {
    bank.validate();
    fs::create_directories(dir);
    nlohmann::json m = {{"format", "loce-bank"},
                        {"schema_version", kBankSchemaVersion},
                        {"layer_id", bank.layer_id},
                        {"dim_c", bank.dim_c},
                        {"n_rows", bank.size()}};
    detail::write_text_file(dir / "manifest.json", m.dump(2) + "\n");
    std::string lines;
    for (const auto& r : bank.records) {
        lines += to_json(r).dump() + "\n";
    }
    detail::write_text_file(dir / "records.jsonl", lines);
    npy::write<float>(dir / "loces.npy", {bank.size(), bank.dim_c}, std::span<const float>(bank.matrix.data()));
}

inline ConceptBank read_bank(const fs::path& dir) {
    const auto m = detail::read_json_file(dir / "manifest.json");
    if (m.value("format", std::string{}) != "loce-bank") {
        throw DataError(dir.string() + " is not a loce-bank");
    }
    if (m.value("schema_version", 0) != kBankSchemaVersion) {
        throw DataError("bank schema version mismatch in " + dir.string());
    }
    ConceptBank bank(detail::json_field<std::string>(m, "layer_id", "bank manifest"),
                     detail::json_field<std::size_t>(m, "dim_c", "bank manifest"));
    const auto n_rows = detail::json_field<std::size_t>(m, "n_rows", "bank manifest");

    std::ifstream in(dir / "records.jsonl");
    if (!in) {
        throw DataError("missing file: " + (dir / "records.jsonl").string());
    }
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) {
            continue;
        }
        try {
            bank.records.push_back(bank_record_from_json(nlohmann::json::parse(line), line_no));
        } catch (const nlohmann::json::exception& e) {
            throw DataError("records.jsonl line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    auto arr = npy::read<float>(dir / "loces.npy");
    if (arr.shape != std::vector<std::size_t>{n_rows, bank.dim_c}) {
        throw DataError("loces.npy shape does not match bank manifest");
    }
    if (bank.records.size() != n_rows) {
        throw DataError("records.jsonl has " + std::to_string(bank.records.size()) + " rows, manifest says " +
                        std::to_string(n_rows));
    }
    bank.matrix = MatrixF(n_rows, bank.dim_c, std::move(arr.data));
    bank.validate();
    return bank;
}

}  // namespace loce
