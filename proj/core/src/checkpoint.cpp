#include "unlearn/checkpoint.hpp"

#include <fstream>
#include <sstream>

#include "unlearn/fisher.hpp"

namespace unlearn {

namespace {

nlohmann::json arch_to_json(const ModelArch& arch) {
    return {{"V", arch.vocab_size}, {"d", arch.embed_dim}, {"C", arch.num_classes}};
}

ModelArch arch_from_json(const nlohmann::json& j) {
    ModelArch arch;
    arch.vocab_size = j.at("V").get<std::size_t>();
    arch.embed_dim = j.at("d").get<std::size_t>();
    arch.num_classes = j.at("C").get<std::size_t>();
    arch.validate();
    return arch;
}

void check_envelope(const nlohmann::json& doc, const char* kind) {
    if (!doc.is_object()) throw InvalidInput("checkpoint is not a JSON object");
    const int version = doc.at("schema_version").get<int>();
    if (version != kCheckpointSchemaVersion) {
        throw InvalidInput("unsupported checkpoint schema_version " + std::to_string(version));
    }
    const auto actual = doc.value("kind", std::string("params"));
    if (actual != kind) throw InvalidInput("expected checkpoint kind '" + std::string(kind) + "', got '" + actual + "'");
}

nlohmann::json parse_or_throw(const std::string& text, const std::filesystem::path& path) {
    try {
        return nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw InvalidInput(path.string() + ": " + e.what());
    }
}

}  // namespace

nlohmann::json params_to_json(const ParamVector& theta) {
    nlohmann::json doc;
    doc["schema_version"] = kCheckpointSchemaVersion;
    doc["kind"] = "params";
    doc["arch"] = arch_to_json(theta.arch());
    doc["values"] = std::vector<double>(theta.values().begin(), theta.values().end());
    return doc;
}

ParamVector params_from_json(const nlohmann::json& doc) {
    try {
        check_envelope(doc, "params");
        return ParamVector(arch_from_json(doc.at("arch")), doc.at("values").get<std::vector<double>>());
    } catch (const nlohmann::json::exception& e) {
        throw InvalidInput(std::string("malformed checkpoint: ") + e.what());
    }
}

nlohmann::json fisher_to_json(const FisherDiag& fisher) {
    nlohmann::json doc;
    doc["schema_version"] = kCheckpointSchemaVersion;
    doc["kind"] = "fisher";
    doc["source"] = to_string(fisher.source());
    doc["arch"] = arch_to_json(fisher.arch());
    doc["values"] = fisher.values();
    return doc;
}

FisherDiag fisher_from_json(const nlohmann::json& doc) {
    try {
        check_envelope(doc, "fisher");
        return FisherDiag(arch_from_json(doc.at("arch")), doc.at("values").get<std::vector<double>>(),
                          fisher_source_from_string(doc.at("source").get<std::string>()));
    } catch (const nlohmann::json::exception& e) {
        throw InvalidInput(std::string("malformed fisher file: ") + e.what());
    }
}

void write_text_atomic(const std::filesystem::path& path, const std::string& text) {
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
        out << text;
        out.flush();
        if (!out) throw IoError("write failed for " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        std::filesystem::remove(tmp, ec);
        throw IoError("cannot move " + tmp.string() + " into place");
    }
}

std::string read_text(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void save_checkpoint(const std::filesystem::path& path, const ParamVector& theta) {
    write_text_atomic(path, params_to_json(theta).dump() + "\n");
}

ParamVector load_checkpoint(const std::filesystem::path& path) {
    return params_from_json(parse_or_throw(read_text(path), path));
}

void save_fisher(const std::filesystem::path& path, const FisherDiag& fisher) {
    write_text_atomic(path, fisher_to_json(fisher).dump() + "\n");
}

FisherDiag load_fisher(const std::filesystem::path& path) {
    return fisher_from_json(parse_or_throw(read_text(path), path));
}

}  // namespace unlearn
