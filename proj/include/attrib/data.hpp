#pragma once

// Synthetic keyword-count classification task and its JSONL persistence.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "attrib/models.hpp"

namespace attrib {

/// A file could not be parsed; line is 1-based (0 when the problem is not tied to a line).
class FormatError : public std::runtime_error {
public:
    FormatError(const std::string& what, std::size_t line = 0);
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

/// A path could not be opened, read or written.
class FileError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Ids 0, 1, 2 are PAD, CLS, SEP; then the positive, negative and neutral blocks in that order.
struct Vocab {
    Token pad = 0;
    Token cls = 1;
    Token sep = 2;
    std::size_t n_positive = 48;
    std::size_t n_negative = 49;
    std::size_t n_neutral = 0;

    std::size_t size() const { return 3 + n_positive + n_negative + n_neutral; }
    bool is_special(Token t) const { return t == pad || t == cls || t == sep; }
    bool is_positive(Token t) const { return t >= 3 && t < 3 + n_positive; }
    bool is_negative(Token t) const { return t >= 3 + n_positive && t < 3 + n_positive + n_negative; }
    bool is_neutral(Token t) const { return t >= 3 + n_positive + n_negative && t < size(); }
    /// Readable token text for heatmaps: [PAD], [CLS], [SEP], pos7, neg3, w0.
    std::string token_text(Token t) const;

    friend bool operator==(const Vocab&, const Vocab&) = default;
};

enum class Split { train, validation, test };

std::string to_string(Split s);
Split split_from_string(const std::string& s);

struct Instance {
    std::uint64_t id = 0;
    std::vector<Token> tokens;
    std::size_t label = 0;
    std::vector<std::uint8_t> special_mask;  // 1 at CLS/SEP/PAD positions

    friend bool operator==(const Instance&, const Instance&) = default;
};

struct KeywordTaskConfig {
    std::uint64_t seed = 0;
    std::size_t n_train = 5000;
    std::size_t n_validation = 500;
    std::size_t n_test = 1000;
    Vocab vocab{};
    std::size_t seq_len = 20;
    /// Content lengths (tokens between CLS and SEP) are odd and drawn uniformly from
    /// [min_content, seq_len - 2]; with no neutral ids this rules out count ties.
    std::size_t min_content = 5;
    double noise = 0.02;

    friend bool operator==(const KeywordTaskConfig&, const KeywordTaskConfig&) = default;
};

struct Dataset {
    KeywordTaskConfig config;
    std::vector<Instance> train;
    std::vector<Instance> validation;
    std::vector<Instance> test;

    const Vocab& vocab() const { return config.vocab; }
    std::size_t seq_len() const { return config.seq_len; }
    const std::vector<Instance>& split(Split s) const;

    friend bool operator==(const Dataset&, const Dataset&) = default;
};

Dataset gen_keyword_task(const KeywordTaskConfig& config);

/// 1 if positives outnumber negatives, 0 if fewer, nullopt on a tie.
std::optional<std::size_t> counting_rule_label(const Vocab& vocab, std::span<const Token> tokens);

std::vector<std::uint8_t> special_mask_for(const Vocab& vocab, std::span<const Token> tokens);

/// Model config sized for a dataset (vocab, sequence length, two classes).
ModelConfig model_config_for(const Dataset& data, Pooling pooling, std::size_t embed_dim,
                             std::vector<std::size_t> hidden);

std::vector<LabeledSequence> labeled_view(std::span<const Instance> instances);

/// Header line (format, version, generator config, checksum of the body) then one instance per line.
/// A non-empty run_config_json (a JSON object) is embedded under "run_config".
std::string dataset_to_jsonl(const Dataset& data, const std::string& run_config_json = {});
Dataset dataset_from_jsonl(const std::string& text);

void save_dataset(const Dataset& data, const std::filesystem::path& path, const std::string& run_config_json = {});
Dataset load_dataset(const std::filesystem::path& path);

// Small file helpers shared by the persistence code.
std::string read_file(const std::filesystem::path& path);
/// Writes to a sibling temp file, then renames over path.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);

}  // namespace attrib
