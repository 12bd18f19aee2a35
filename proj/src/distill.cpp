#include "attrib/distill.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <stdexcept>

#include "json.hpp"

namespace attrib {

using nlohmann::json;

void TargetStore::validate() const {
    std::set<std::uint64_t> ids;
    for (const AttributionMap& m : maps) {
        if (!ids.insert(m.instance_id).second) {
            throw std::invalid_argument("target store: duplicate instance id " + std::to_string(m.instance_id));
        }
        if (m.method != meta.method || m.samples != meta.samples) {
            throw std::invalid_argument("target store: instance " + std::to_string(m.instance_id) +
                                        " was produced by a different explainer configuration");
        }
        if (m.scores.size() != maps.front().scores.size() || m.tokens.size() != m.scores.size()) {
            throw std::invalid_argument("target store: inconsistent sequence length at instance " +
                                        std::to_string(m.instance_id));
        }
    }
}

TargetStore generate_targets(const TextClassifier& f, const Vocab& vocab, std::span<const Instance> split,
                             const ExplainerSpec& spec) {
    if (split.empty()) {
        throw std::invalid_argument("generate_targets: the split is empty");
    }
    if (spec.method == Method::empirical) {
        throw std::invalid_argument("generate_targets: targets must come from an expensive explainer");
    }
    ExplainerSpec predicted = spec;
    predicted.target.reset();
    TargetStore store;
    store.meta.method = spec.method;
    store.meta.samples = spec.method == Method::exact_shapley ? 0 : spec.samples;
    store.meta.seed = spec.seed;
    store.meta.accounting = spec.accounting;
    store.maps = explain_all(f, vocab, split, predicted);
    store.validate();
    return store;
}

std::string store_metadata_to_json(const StoreMetadata& meta) {
    return json{{"method", to_string(meta.method)},
                {"samples", meta.samples},
                {"seed", meta.seed},
                {"accounting", to_string(meta.accounting)},
                {"classifier_checksum", meta.classifier_checksum}}
        .dump();
}

StoreMetadata store_metadata_from_json(const std::string& text) {
    const json j = json::parse(text);
    StoreMetadata meta;
    meta.method = method_from_string(j.at("method").get<std::string>());
    meta.samples = j.at("samples").get<std::size_t>();
    meta.seed = j.at("seed").get<std::uint64_t>();
    meta.accounting = accounting_from_string(j.at("accounting").get<std::string>());
    meta.classifier_checksum = j.value("classifier_checksum", std::string());
    return meta;
}

namespace {

std::filesystem::path sidecar_path(const std::filesystem::path& path) {
    std::filesystem::path p = path;
    p += ".meta.json";
    return p;
}

}  // namespace

void save_target_store(const TargetStore& store, const std::filesystem::path& path, const std::string& header_json) {
    save_attributions(AttributionFile{header_json, store.maps}, path);
    write_file_atomic(sidecar_path(path), store_metadata_to_json(store.meta) + "\n");
}

TargetStore load_target_store(const std::filesystem::path& path) {
    TargetStore store;
    AttributionFile file = load_attributions(path);
    store.maps = std::move(file.maps);
    if (std::filesystem::exists(sidecar_path(path))) {
        store.meta = store_metadata_from_json(read_file(sidecar_path(path)));
    } else if (!store.maps.empty()) {
        store.meta.method = store.maps.front().method;
        store.meta.samples = store.maps.front().samples;
        store.meta.seed = store.maps.front().seed;
        store.meta.accounting = store.maps.front().ledger.mode;
    }
    if (store.maps.empty()) {
        throw std::invalid_argument("target store " + path.string() + " holds no maps");
    }
    store.validate();
    return store;
}

double mse_loss(std::span<const double> pred, std::span<const double> target) {
    if (pred.size() != target.size()) {
        throw std::invalid_argument("mse_loss: length mismatch (" + std::to_string(pred.size()) + " vs " +
                                    std::to_string(target.size()) + ")");
    }
    if (pred.empty()) {
        throw std::invalid_argument("mse_loss: empty vectors");
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double d = pred[i] - target[i];
        acc += d * d;
    }
    return acc / static_cast<double>(pred.size());
}

void TrainConfig::validate() const {
    if (!(learning_rate > 0.0) || batch_size == 0 || patience == 0) {
        throw std::invalid_argument("train config: learning rate, batch size and patience must be positive");
    }
    if (!(validation_fraction > 0.0 && validation_fraction < 1.0)) {
        throw std::invalid_argument("train config: validation fraction must lie in (0, 1)");
    }
    if (!(momentum >= 0.0 && momentum < 1.0)) {
        throw std::invalid_argument("train config: momentum must lie in [0, 1)");
    }
}

TrainResult train_student(StudentExplainer student, const TargetStore& store, const TrainConfig& config) {
    config.validate();
    store.validate();
    const ModelConfig& mc = student.config();
    if (store.maps.size() < 2) {
        throw std::invalid_argument("train_student: need at least two target maps (train + validation)");
    }
    for (const AttributionMap& m : store.maps) {
        if (m.scores.size() != mc.seq_len) {
            throw std::invalid_argument("train_student: target length " + std::to_string(m.scores.size()) +
                                        " differs from student T=" + std::to_string(mc.seq_len));
        }
        check_tokens(mc, m.tokens);
    }

    SeededRng rng(config.init_seed);
    std::vector<std::size_t> order(store.maps.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = order.size(); i > 1; --i) {
        std::swap(order[i - 1], order[rng.uniform_below(i)]);
    }
    auto n_val = static_cast<std::size_t>(std::ceil(config.validation_fraction * static_cast<double>(order.size())));
    n_val = std::clamp<std::size_t>(n_val, 1, order.size() - 1);
    const std::vector<std::size_t> val_idx(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
    std::vector<std::size_t> train_idx(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());

    auto validation_mse = [&](const StudentExplainer& e) {
        double acc = 0.0;
        for (std::size_t i : val_idx) {
            acc += mse_loss(student_forward(e, store.maps[i].tokens), store.maps[i].scores);
        }
        return acc / static_cast<double>(val_idx.size());
    };

    TrainResult result{student, {}, 0, validation_mse(student)};
    MomentumSgd opt(student.network(), config.learning_rate, config.momentum);
    const double inv_t = 1.0 / static_cast<double>(mc.seq_len);

    for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
        for (std::size_t i = train_idx.size(); i > 1; --i) {
            std::swap(train_idx[i - 1], train_idx[rng.uniform_below(i)]);
        }
        double loss_sum = 0.0;
        for (std::size_t start = 0; start < train_idx.size(); start += config.batch_size) {
            const std::size_t end = std::min(train_idx.size(), start + config.batch_size);
            Network grads = zeros_like(student.network());
            for (std::size_t b = start; b < end; ++b) {
                const AttributionMap& target = store.maps[train_idx[b]];
                const ForwardTrace tr = trace_forward(mc, student.network(), student_readout(mc), target.tokens);
                std::vector<double> g(mc.seq_len);
                for (std::size_t t = 0; t < mc.seq_len; ++t) {
                    const double d = tr.output[t] - target.scores[t];
                    loss_sum += d * d * inv_t;
                    g[t] = 2.0 * d * inv_t;
                }
                accumulate_parameter_gradients(mc, student.network(), tr, g, grads);
            }
            opt.step(student.network(), grads, 1.0 / static_cast<double>(end - start));
        }
        const double train_mse = loss_sum / static_cast<double>(train_idx.size());
        const double val_mse = validation_mse(student);
        if (!std::isfinite(train_mse) || !std::isfinite(val_mse)) {
            throw NumericError("student training diverged at epoch " + std::to_string(epoch));
        }
        result.history.push_back({epoch, train_mse, val_mse});
        if (result.best_epoch == 0 || val_mse < result.best_val_mse) {
            result.best_epoch = epoch;
            result.best_val_mse = val_mse;
            result.student = student;
        }
        if (epoch - result.best_epoch >= config.patience) {
            break;
        }
    }
    return result;
}

std::string history_to_csv(std::span<const EpochRecord> history) {
    std::string out = "epoch,train_mse,val_mse\n";
    for (const EpochRecord& r : history) {
        out += std::to_string(r.epoch) + "," + format_double(r.train_mse) + "," + format_double(r.val_mse) + "\n";
    }
    return out;
}

}  // namespace attrib
