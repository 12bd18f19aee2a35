#pragma once

// Feature attribution modelling: collect expensive attribution maps and regress them with a student.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "attrib/explainers.hpp"

namespace attrib {

struct StoreMetadata {
    Method method = Method::ig;
    std::size_t samples = 0;
    std::uint64_t seed = 0;
    CostLedger::Mode accounting = CostLedger::Mode::paper;
    std::string classifier_checksum;  // fnv1a64 of the serialized classifier

    friend bool operator==(const StoreMetadata&, const StoreMetadata&) = default;
};

/// One target map per instance, all produced by the same explainer configuration.
struct TargetStore {
    StoreMetadata meta;
    std::vector<AttributionMap> maps;

    /// Unique ids, shared method and sample count, equal lengths.
    void validate() const;
};

/// Explains predict_class(f, x) for every instance; gold labels are never read.
TargetStore generate_targets(const TextClassifier& f, const Vocab& vocab, std::span<const Instance> split,
                             const ExplainerSpec& spec);

std::string store_metadata_to_json(const StoreMetadata& meta);
StoreMetadata store_metadata_from_json(const std::string& text);

/// Writes the maps as attribution JSONL at path and the metadata next to it (path + ".meta.json").
void save_target_store(const TargetStore& store, const std::filesystem::path& path, const std::string& header_json);
TargetStore load_target_store(const std::filesystem::path& path);

/// Mean of squared differences.
double mse_loss(std::span<const double> pred, std::span<const double> target);

struct TrainConfig {
    double learning_rate = 0.05;
    double momentum = 0.9;
    std::size_t batch_size = 32;
    std::size_t max_epochs = 400;
    std::size_t patience = 30;
    double validation_fraction = 0.1;
    std::uint64_t init_seed = 0;  // also drives the validation carve-out and batch order

    void validate() const;
};

struct EpochRecord {
    std::size_t epoch = 0;
    double train_mse = 0.0;  // mean pre-update loss over the epoch's batches
    double val_mse = 0.0;
};

struct TrainResult {
    StudentExplainer student;
    std::vector<EpochRecord> history;
    std::size_t best_epoch = 0;  // 0 when no epoch ran
    double best_val_mse = 0.0;
};

/// MSE regression over all T positions (pads included) with momentum SGD and early stopping on a
/// seeded validation carve-out. Returns the parameters of the best validation epoch.
TrainResult train_student(StudentExplainer student, const TargetStore& store, const TrainConfig& config);

/// "epoch,train_mse,val_mse" with 17 significant digits.
std::string history_to_csv(std::span<const EpochRecord> history);

}  // namespace attrib
