#pragma once

// Expensive explainers (Integrated Gradients, Shapley Value Sampling), the exact Shapley oracle,
// the one-pass empirical explainer, and the attribution JSONL format.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "attrib/data.hpp"
#include "attrib/models.hpp"

namespace attrib {

enum class Method { ig, svs, exact_shapley, empirical };

std::string to_string(Method m);
Method method_from_string(const std::string& s);

/// Input with every non-special token replaced by PAD.
struct Baseline {
    std::vector<Token> tokens;
};

Baseline build_baseline(std::span<const Token> tokens, Token pad_id, std::span<const std::uint8_t> special_mask);

/// Position -> feature. All special positions share feature 0 when any exist; every other position
/// is its own feature, numbered left to right.
struct FeatureGrouping {
    std::vector<std::size_t> feature_of_position;
    std::vector<std::vector<std::size_t>> members;  // positions per feature

    std::size_t num_features() const { return members.size(); }
};

FeatureGrouping group_features(std::span<const std::uint8_t> special_mask);

struct SamplingPlan {
    std::size_t samples = 0;
    std::uint64_t seed = 0;
    std::vector<std::vector<std::size_t>> permutations;
};

SamplingPlan make_sampling_plan(std::size_t num_features, std::size_t samples, std::uint64_t seed);
/// All n! permutations in lexicographic order.
SamplingPlan full_permutation_plan(std::size_t num_features);

struct AttributionMap {
    std::uint64_t instance_id = 0;
    Method method = Method::ig;
    std::vector<Token> tokens;
    std::vector<double> scores;
    std::size_t target_class = 0;
    std::size_t samples = 0;
    std::uint64_t seed = 0;
    CostLedger ledger;

    friend bool operator==(const AttributionMap&, const AttributionMap&) = default;
};

// ---- coalition-game cores -----------------------------------------------------------------

/// Value of a coalition; present[j] != 0 when feature j takes its input value.
using CoalitionValue = std::function<double(std::span<const std::uint8_t> present)>;

struct ShapleyEstimate {
    std::vector<double> values;
    std::uint64_t evaluations = 0;
};

/// Mean marginal contribution along each permutation chain. The empty and full coalitions are
/// evaluated once, so a plan of s permutations over n features costs s (n - 1) + 2 evaluations.
ShapleyEstimate shapley_from_permutations(std::size_t num_features, const CoalitionValue& value,
                                          std::span<const std::vector<std::size_t>> permutations);

constexpr std::size_t kExactShapleyMaxFeatures = 15;

/// Classical coalition enumeration with |S|!(n-|S|-1)!/n! weights; 2^n evaluations.
ShapleyEstimate exact_shapley_values(std::size_t num_features, const CoalitionValue& value);

// ---- model-level explainers ---------------------------------------------------------------

/// Right-endpoint Riemann sum of the embedding-space IG integrand, summed over embed_dim per token.
AttributionMap integrated_gradients(const TextClassifier& f, const Instance& instance, const Baseline& baseline,
                                    std::size_t samples, std::size_t target);

/// Permutation-sampling Shapley values on token ids; group scores are broadcast to member positions.
/// Actual accounting records s (n - 1) + 2 forward passes, paper accounting s n.
AttributionMap shapley_value_sampling(const TextClassifier& f, const Instance& instance, const Baseline& baseline,
                                      const FeatureGrouping& grouping, std::size_t samples, std::uint64_t seed,
                                      std::size_t target, CostLedger::Mode accounting = CostLedger::Mode::actual);

/// Same estimator with an explicit permutation plan.
AttributionMap shapley_value_sampling(const TextClassifier& f, const Instance& instance, const Baseline& baseline,
                                      const FeatureGrouping& grouping, const SamplingPlan& plan, std::size_t target,
                                      CostLedger::Mode accounting = CostLedger::Mode::actual);

AttributionMap exact_shapley(const TextClassifier& f, const Instance& instance, const Baseline& baseline,
                             const FeatureGrouping& grouping, std::size_t target);

/// One student pass; ledger (1, 0).
AttributionMap empirical_explain(const StudentExplainer& e, const Instance& instance);

/// Everything needed to reproduce an expensive explanation.
struct ExplainerSpec {
    Method method = Method::ig;
    std::size_t samples = 20;
    std::uint64_t seed = 0;
    CostLedger::Mode accounting = CostLedger::Mode::paper;
    std::optional<std::size_t> target;  // default: predicted class
};

/// Builds baseline and grouping, picks the explained class, derives the per-instance seed
/// derive_seed(spec.seed, instance.id) and dispatches to the expensive explainer.
AttributionMap explain(const TextClassifier& f, const Vocab& vocab, const Instance& instance,
                       const ExplainerSpec& spec);

/// Explains every instance (in parallel); output order matches input order.
std::vector<AttributionMap> explain_all(const TextClassifier& f, const Vocab& vocab,
                                        std::span<const Instance> instances, const ExplainerSpec& spec);

// ---- attribution JSONL ----------------------------------------------------------------------

std::string attribution_to_json(const AttributionMap& map);
AttributionMap attribution_from_json(const std::string& line);

/// Optional header object on the first line ({"header": {...}}), then maps sorted by id.
struct AttributionFile {
    std::string header_json;  // the object under "header"; empty when absent
    std::vector<AttributionMap> maps;
};

std::string attributions_to_jsonl(const AttributionFile& file);
AttributionFile attributions_from_jsonl(const std::string& text);

void save_attributions(const AttributionFile& file, const std::filesystem::path& path);
AttributionFile load_attributions(const std::filesystem::path& path);

}  // namespace attrib
