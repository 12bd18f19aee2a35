#include "attrib/model_io.hpp"

#include <stdexcept>

#include "attrib/data.hpp"
#include "json.hpp"

namespace attrib {

using nlohmann::json;

namespace {

constexpr int kVersion = 1;

json config_json(const ModelConfig& c) {
    return json{{"pooling", to_string(c.pooling)},
                {"vocab_size", c.vocab_size},
                {"seq_len", c.seq_len},
                {"embed_dim", c.embed_dim},
                {"hidden", c.hidden},
                {"num_classes", c.num_classes}};
}

ModelConfig config_from(const json& j) {
    ModelConfig c;
    c.pooling = pooling_from_string(j.at("pooling").get<std::string>());
    c.vocab_size = j.at("vocab_size").get<std::size_t>();
    c.seq_len = j.at("seq_len").get<std::size_t>();
    c.embed_dim = j.at("embed_dim").get<std::size_t>();
    c.hidden = j.at("hidden").get<std::vector<std::size_t>>();
    c.num_classes = j.at("num_classes").get<std::size_t>();
    c.validate();
    return c;
}

json tensor_json(const Tensor& t) {
    return json{{"shape", t.shape()}, {"values", std::vector<double>(t.values().begin(), t.values().end())}};
}

Tensor tensor_from(const json& tensors, const std::string& name) {
    if (!tensors.contains(name)) {
        throw std::invalid_argument("model document: missing tensor '" + name + "'");
    }
    const json& j = tensors.at(name);
    try {
        return Tensor(j.at("shape").get<std::vector<std::size_t>>(), j.at("values").get<std::vector<double>>());
    } catch (const ShapeError& e) {
        throw std::invalid_argument("model document: tensor '" + name + "': " + e.what());
    }
}

std::string document(const char* kind, const ModelConfig& config, const Network& net,
                     const std::string& run_config_json) {
    json tensors = json::object();
    tensors["embedding"] = tensor_json(net.embedding);
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
        tensors["layer" + std::to_string(i) + ".weight"] = tensor_json(net.layers[i].weight);
        tensors["layer" + std::to_string(i) + ".bias"] = tensor_json(net.layers[i].bias);
    }
    tensors["head.weight"] = tensor_json(net.head.weight);
    tensors["head.bias"] = tensor_json(net.head.bias);
    json doc{{"format", "attrib-model"}, {"version", kVersion}, {"kind", kind}, {"config", config_json(config)},
             {"tensors", tensors}};
    if (!run_config_json.empty()) {
        json run = json::parse(run_config_json);
        if (!run.is_object()) {
            throw std::invalid_argument("run config must be a JSON object");
        }
        doc["run_config"] = std::move(run);
    }
    return doc.dump() + "\n";
}

std::pair<ModelConfig, Network> parse_document(const std::string& text, const std::string& kind) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        throw std::invalid_argument(std::string("model document is not valid JSON: ") + e.what());
    }
    if (doc.value("format", std::string()) != "attrib-model") {
        throw std::invalid_argument("not a model document (format field missing or wrong)");
    }
    if (doc.value("version", 0) != kVersion) {
        throw std::invalid_argument("unsupported model document version " + doc.value("version", json()).dump());
    }
    const std::string found = doc.value("kind", std::string());
    if (found != kind) {
        throw std::invalid_argument("expected a " + kind + " model, found '" + found + "'");
    }
    try {
        const ModelConfig config = config_from(doc.at("config"));
        const json& tensors = doc.at("tensors");
        Network net;
        net.embedding = tensor_from(tensors, "embedding");
        for (std::size_t i = 0; i < config.hidden.size(); ++i) {
            const std::string prefix = "layer" + std::to_string(i);
            net.layers.push_back({tensor_from(tensors, prefix + ".weight"), tensor_from(tensors, prefix + ".bias")});
        }
        net.head = {tensor_from(tensors, "head.weight"), tensor_from(tensors, "head.bias")};
        return {config, std::move(net)};
    } catch (const json::exception& e) {
        throw std::invalid_argument(std::string("malformed model document: ") + e.what());
    }
}

}  // namespace

std::string model_config_to_json(const ModelConfig& config) { return config_json(config).dump(); }

ModelConfig model_config_from_json(const std::string& text) { return config_from(json::parse(text)); }

std::string classifier_to_json(const TextClassifier& f, const std::string& run_config_json) {
    return document("classifier", f.config(), f.network(), run_config_json);
}

std::string student_to_json(const StudentExplainer& e, const std::string& run_config_json) {
    return document("student", e.config(), e.network(), run_config_json);
}

TextClassifier classifier_from_json(const std::string& text) {
    auto [config, net] = parse_document(text, "classifier");
    try {
        return TextClassifier(config, std::move(net));
    } catch (const ShapeError& e) {
        throw std::invalid_argument(std::string("model document: ") + e.what());
    }
}

StudentExplainer student_from_json(const std::string& text) {
    auto [config, net] = parse_document(text, "student");
    try {
        return StudentExplainer(config, std::move(net));
    } catch (const ShapeError& e) {
        throw std::invalid_argument(std::string("model document: ") + e.what());
    }
}

void save_classifier(const TextClassifier& f, const std::filesystem::path& path, const std::string& run_config_json) {
    write_file_atomic(path, classifier_to_json(f, run_config_json));
}

void save_student(const StudentExplainer& e, const std::filesystem::path& path, const std::string& run_config_json) {
    write_file_atomic(path, student_to_json(e, run_config_json));
}

TextClassifier load_classifier(const std::filesystem::path& path) { return classifier_from_json(read_file(path)); }

StudentExplainer load_student(const std::filesystem::path& path) { return student_from_json(read_file(path)); }

std::string classifier_checksum(const TextClassifier& f) { return checksum_tag(classifier_to_json(f)); }

}  // namespace attrib
