#pragma once

// Accuracy/efficiency objective, map normalization and convergence curves.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "attrib/data.hpp"
#include "attrib/explainers.hpp"

namespace attrib {

struct ClassificationMetrics {
    double accuracy = 0.0;
    double weighted_f1 = 0.0;  // per-class F1 weighted by true-label support; undefined precision counts as 0
};

/// Scores predict_class against the gold labels.
ClassificationMetrics classification_metrics(const TextClassifier& f, std::span<const Instance> instances);

enum class Normalization { none, unit_interval, signed_max };

std::string to_string(Normalization n);
Normalization normalization_from_string(const std::string& s);

/// unit_interval: min-max to [0, 1], constant input -> 0.5.
/// signed_max: divide by the largest |score|, constant zero input -> 0.
/// none: unchanged.
std::vector<double> normalize_map(std::span<const double> scores, Normalization mode);

/// Per-sequence MSE of the two normalized score vectors.
double map_mse(const AttributionMap& a, const AttributionMap& b, Normalization mode);

class ObjectiveWeights {
public:
    /// beta = 1 - alpha.
    explicit ObjectiveWeights(double alpha);
    double alpha() const { return alpha_; }
    double beta() const { return beta_; }

private:
    double alpha_;
    double beta_;
};

/// Mean over instances of alpha * map_mse(target, candidate) + beta * passes(candidate) / passes(target).
/// Passes are forward + backward, as recorded in each map's ledger.
double objective(std::span<const AttributionMap> targets, std::span<const AttributionMap> candidates,
                 const ObjectiveWeights& weights, Normalization mode);

/// Mean per-sequence MSE of candidates against targets, matched by position and checked by id.
double mean_map_mse(std::span<const AttributionMap> targets, std::span<const AttributionMap> candidates,
                    Normalization mode);

struct CurvePoint {
    std::size_t samples = 0;
    double mean_mse = 0.0;
    double passes_per_instance = 0.0;  // paper accounting, averaged over the split
};

struct ConvergenceCurve {
    Method method = Method::ig;
    std::size_t reference_samples = 0;
    std::string dataset_id;
    std::vector<CurvePoint> points;
};

/// Seed used for the curve point with s samples: derived from the base seed, not nested.
std::uint64_t curve_point_seed(std::uint64_t base_seed, std::size_t samples);

/// Explains the split at each s (independent seeds) and averages per-sequence MSE against the
/// given reference maps.
ConvergenceCurve convergence_curve(const TextClassifier& f, const Vocab& vocab, std::span<const Instance> split,
                                   const ExplainerSpec& spec, std::span<const AttributionMap> reference,
                                   std::size_t reference_samples, std::span<const std::size_t> s_values,
                                   Normalization mode);

/// Same, computing the reference maps at reference_samples with spec.seed first.
ConvergenceCurve convergence_curve(const TextClassifier& f, const Vocab& vocab, std::span<const Instance> split,
                                   const ExplainerSpec& spec, std::size_t reference_samples,
                                   std::span<const std::size_t> s_values, Normalization mode);

/// Pointwise mean of curves over the same s values (e.g. several curve seeds).
ConvergenceCurve average_curves(std::span<const ConvergenceCurve> curves);

/// Smallest listed s whose curve MSE is below the student's, scanning ascending s.
std::optional<std::size_t> intersection_point(const ConvergenceCurve& curve, double student_mse);

/// "s,mean_mse,passes_per_instance_paper_accounting" with 17 significant digits.
std::string curve_to_csv(const ConvergenceCurve& curve);

}  // namespace attrib
