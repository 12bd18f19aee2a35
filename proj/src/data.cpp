#include "attrib/data.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace attrib {

using nlohmann::json;

FormatError::FormatError(const std::string& what, std::size_t line)
    : std::runtime_error(line ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}

std::string Vocab::token_text(Token t) const {
    if (t == pad) {
        return "[PAD]";
    }
    if (t == cls) {
        return "[CLS]";
    }
    if (t == sep) {
        return "[SEP]";
    }
    if (is_positive(t)) {
        return "pos" + std::to_string(t - 3);
    }
    if (is_negative(t)) {
        return "neg" + std::to_string(t - 3 - n_positive);
    }
    return "w" + std::to_string(t - 3 - n_positive - n_negative);
}

std::string to_string(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::validation: return "validation";
        case Split::test: return "test";
    }
    return "test";
}

Split split_from_string(const std::string& s) {
    if (s == "train") {
        return Split::train;
    }
    if (s == "validation" || s == "val") {
        return Split::validation;
    }
    if (s == "test") {
        return Split::test;
    }
    throw std::invalid_argument("unknown split '" + s + "' (expected train|validation|test)");
}

const std::vector<Instance>& Dataset::split(Split s) const {
    switch (s) {
        case Split::train: return train;
        case Split::validation: return validation;
        case Split::test: return test;
    }
    return test;
}

std::optional<std::size_t> counting_rule_label(const Vocab& vocab, std::span<const Token> tokens) {
    long balance = 0;
    for (Token t : tokens) {
        balance += vocab.is_positive(t) ? 1 : vocab.is_negative(t) ? -1 : 0;
    }
    if (balance > 0) {
        return 1;
    }
    if (balance < 0) {
        return 0;
    }
    return std::nullopt;
}

std::vector<std::uint8_t> special_mask_for(const Vocab& vocab, std::span<const Token> tokens) {
    std::vector<std::uint8_t> mask(tokens.size());
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        mask[i] = vocab.is_special(tokens[i]) ? 1 : 0;
    }
    return mask;
}

Dataset gen_keyword_task(const KeywordTaskConfig& config) {
    if (config.seq_len < 4) {
        throw std::invalid_argument("keyword task: sequence length must be at least 4");
    }
    if (config.n_train == 0 || config.n_validation == 0 || config.n_test == 0) {
        throw std::invalid_argument("keyword task: every split needs at least one instance");
    }
    if (config.vocab.n_positive == 0 || config.vocab.n_negative == 0) {
        throw std::invalid_argument("keyword task: positive and negative signal sets must be non-empty");
    }
    if (!(config.noise >= 0.0 && config.noise < 1.0)) {
        throw std::invalid_argument("keyword task: noise rate must lie in [0, 1)");
    }
    const Vocab& vocab = config.vocab;
    const std::size_t max_len = (config.seq_len - 2) % 2 ? config.seq_len - 2 : config.seq_len - 3;
    std::size_t min_len = std::min(std::max<std::size_t>(config.min_content, 1), max_len);
    if (min_len % 2 == 0) {
        ++min_len;
    }
    const std::size_t n_lengths = (max_len - min_len) / 2 + 1;
    const std::size_t n_content_ids = vocab.n_positive + vocab.n_negative + vocab.n_neutral;

    SeededRng rng(config.seed);
    Dataset data;
    data.config = config;
    std::uint64_t next_id = 0;
    auto make = [&](std::size_t count, std::vector<Instance>& out) {
        out.reserve(count);
        for (std::size_t k = 0; k < count; ++k) {
            Instance inst;
            inst.id = next_id++;
            const std::size_t len = min_len + 2 * rng.uniform_below(n_lengths);
            inst.tokens.assign(config.seq_len, vocab.pad);
            inst.tokens[0] = vocab.cls;
            for (std::size_t i = 0; i < len; ++i) {
                inst.tokens[1 + i] = static_cast<Token>(3 + rng.uniform_below(n_content_ids));
            }
            inst.tokens[1 + len] = vocab.sep;
            const bool coin = rng.next_bool(0.5);
            const bool flip = rng.next_bool(config.noise);
            std::size_t label = counting_rule_label(vocab, inst.tokens).value_or(coin ? 1 : 0);
            if (flip) {
                label = 1 - label;
            }
            inst.label = label;
            inst.special_mask = special_mask_for(vocab, inst.tokens);
            out.push_back(std::move(inst));
        }
    };
    make(config.n_train, data.train);
    make(config.n_validation, data.validation);
    make(config.n_test, data.test);
    return data;
}

ModelConfig model_config_for(const Dataset& data, Pooling pooling, std::size_t embed_dim,
                             std::vector<std::size_t> hidden) {
    ModelConfig mc;
    mc.pooling = pooling;
    mc.vocab_size = data.vocab().size();
    mc.seq_len = data.seq_len();
    mc.embed_dim = embed_dim;
    mc.hidden = std::move(hidden);
    mc.num_classes = 2;
    return mc;
}

std::vector<LabeledSequence> labeled_view(std::span<const Instance> instances) {
    std::vector<LabeledSequence> out;
    out.reserve(instances.size());
    for (const Instance& inst : instances) {
        out.push_back({inst.tokens, inst.label});
    }
    return out;
}

// ---- persistence ---------------------------------------------------------------------------

namespace {

constexpr const char* kDatasetFormat = "attrib-dataset";
constexpr int kDatasetVersion = 1;

json vocab_to_json(const Vocab& v) {
    return json{{"size", v.size()},          {"pad", v.pad},
                {"cls", v.cls},              {"sep", v.sep},
                {"n_positive", v.n_positive}, {"n_negative", v.n_negative},
                {"n_neutral", v.n_neutral}};
}

Vocab vocab_from_json(const json& j) {
    Vocab v;
    v.n_positive = j.at("n_positive").get<std::size_t>();
    v.n_negative = j.at("n_negative").get<std::size_t>();
    v.n_neutral = j.at("n_neutral").get<std::size_t>();
    if (j.at("pad").get<Token>() != v.pad || j.at("cls").get<Token>() != v.cls || j.at("sep").get<Token>() != v.sep ||
        j.at("size").get<std::size_t>() != v.size()) {
        throw FormatError("vocab layout does not match PAD=0, CLS=1, SEP=2 followed by the signal blocks");
    }
    return v;
}

json task_config_to_json(const KeywordTaskConfig& c) {
    return json{{"seed", c.seed},
                {"n_train", c.n_train},
                {"n_validation", c.n_validation},
                {"n_test", c.n_test},
                {"seq_len", c.seq_len},
                {"min_content", c.min_content},
                {"noise", c.noise}};
}

}  // namespace

std::string dataset_to_jsonl(const Dataset& data, const std::string& run_config_json) {
    std::string body;
    auto emit = [&](Split s) {
        for (const Instance& inst : data.split(s)) {
            json line{{"id", inst.id},
                      {"split", to_string(s)},
                      {"tokens", inst.tokens},
                      {"label", inst.label},
                      {"mask", inst.special_mask}};
            body += line.dump();
            body += '\n';
        }
    };
    emit(Split::train);
    emit(Split::validation);
    emit(Split::test);

    json header{{"format", kDatasetFormat},
                {"version", kDatasetVersion},
                {"seed", data.config.seed},
                {"seq_len", data.config.seq_len},
                {"vocab", vocab_to_json(data.vocab())},
                {"generator", task_config_to_json(data.config)},
                {"checksum", checksum_tag(body)}};
    if (!run_config_json.empty()) {
        header["run_config"] = json::parse(run_config_json);
    }
    return header.dump() + "\n" + body;
}

Dataset dataset_from_jsonl(const std::string& text) {
    const std::size_t header_end = text.find('\n');
    if (header_end == std::string::npos) {
        throw FormatError("missing header line", 1);
    }
    json header;
    try {
        header = json::parse(text.substr(0, header_end));
    } catch (const json::exception& e) {
        throw FormatError(std::string("malformed header: ") + e.what(), 1);
    }
    Dataset data;
    try {
        if (header.at("format") != kDatasetFormat || header.at("version") != kDatasetVersion) {
            throw FormatError("not an attrib-dataset v1 file", 1);
        }
        data.config.vocab = vocab_from_json(header.at("vocab"));
        const json& gen = header.at("generator");
        data.config.seed = header.at("seed").get<std::uint64_t>();
        data.config.seq_len = header.at("seq_len").get<std::size_t>();
        data.config.n_train = gen.at("n_train").get<std::size_t>();
        data.config.n_validation = gen.at("n_validation").get<std::size_t>();
        data.config.n_test = gen.at("n_test").get<std::size_t>();
        data.config.min_content = gen.at("min_content").get<std::size_t>();
        data.config.noise = gen.at("noise").get<double>();
    } catch (const FormatError& e) {
        throw FormatError(e.what(), 1);
    } catch (const json::exception& e) {
        throw FormatError(std::string("malformed header: ") + e.what(), 1);
    }

    const std::string body = text.substr(header_end + 1);
    const std::string expected = header.value("checksum", std::string());
    if (expected != checksum_tag(body)) {
        throw FormatError("checksum mismatch: file is truncated or corrupted", 1);
    }

    std::istringstream lines(body);
    std::string line;
    std::size_t line_no = 1;
    const std::size_t T = data.config.seq_len;
    while (std::getline(lines, line)) {
        ++line_no;
        if (line.empty()) {
            continue;
        }
        try {
            const json j = json::parse(line);
            Instance inst;
            inst.id = j.at("id").get<std::uint64_t>();
            inst.tokens = j.at("tokens").get<std::vector<Token>>();
            inst.label = j.at("label").get<std::size_t>();
            inst.special_mask = j.at("mask").get<std::vector<std::uint8_t>>();
            if (inst.tokens.size() != T || inst.special_mask.size() != T) {
                throw FormatError("instance length differs from seq_len " + std::to_string(T), line_no);
            }
            for (Token t : inst.tokens) {
                if (t >= data.vocab().size()) {
                    throw FormatError("token id " + std::to_string(t) + " outside the vocabulary", line_no);
                }
            }
            if (inst.special_mask != special_mask_for(data.vocab(), inst.tokens)) {
                throw FormatError("special-token mask does not match the tokens", line_no);
            }
            switch (split_from_string(j.at("split").get<std::string>())) {
                case Split::train: data.train.push_back(std::move(inst)); break;
                case Split::validation: data.validation.push_back(std::move(inst)); break;
                case Split::test: data.test.push_back(std::move(inst)); break;
            }
        } catch (const FormatError&) {
            throw;
        } catch (const std::exception& e) {
            throw FormatError(std::string("malformed instance: ") + e.what(), line_no);
        }
    }
    if (data.train.size() != data.config.n_train || data.validation.size() != data.config.n_validation ||
        data.test.size() != data.config.n_test) {
        throw FormatError("split sizes do not match the header", line_no);
    }
    return data;
}

void save_dataset(const Dataset& data, const std::filesystem::path& path, const std::string& run_config_json) {
    write_file_atomic(path, dataset_to_jsonl(data, run_config_json));
}

Dataset load_dataset(const std::filesystem::path& path) {
    return dataset_from_jsonl(read_file(path));
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw FileError("cannot open " + path.string());
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file_atomic(const std::filesystem::path& path, const std::string& contents) {
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw FileError("cannot write " + tmp.string());
        }
        out << contents;
        if (!out.flush()) {
            throw FileError("write failed for " + tmp.string());
        }
    }
    std::filesystem::rename(tmp, path);
}

}  // namespace attrib
