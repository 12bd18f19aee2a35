#include "attrib/eval.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "attrib/distill.hpp"

namespace attrib {

ClassificationMetrics classification_metrics(const TextClassifier& f, std::span<const Instance> instances) {
    if (instances.empty()) {
        throw std::invalid_argument("classification_metrics: no instances");
    }
    const std::size_t C = f.config().num_classes;
    std::vector<std::size_t> true_pos(C, 0), predicted(C, 0), support(C, 0);
    std::size_t correct = 0;
    for (const Instance& x : instances) {
        if (x.label >= C) {
            throw std::invalid_argument("classification_metrics: label " + std::to_string(x.label) +
                                        " of instance " + std::to_string(x.id) + " is not a class of the model");
        }
        const std::size_t p = predict_class(f, x.tokens);
        ++predicted[p];
        ++support[x.label];
        if (p == x.label) {
            ++true_pos[p];
            ++correct;
        }
    }
    double f1_sum = 0.0;
    for (std::size_t c = 0; c < C; ++c) {
        if (true_pos[c] == 0) {
            continue;
        }
        const double precision = static_cast<double>(true_pos[c]) / static_cast<double>(predicted[c]);
        const double recall = static_cast<double>(true_pos[c]) / static_cast<double>(support[c]);
        f1_sum += static_cast<double>(support[c]) * 2.0 * precision * recall / (precision + recall);
    }
    const auto n = static_cast<double>(instances.size());
    return {static_cast<double>(correct) / n, f1_sum / n};
}

std::string to_string(Normalization n) {
    switch (n) {
        case Normalization::none: return "none";
        case Normalization::unit_interval: return "unit_interval";
        case Normalization::signed_max: return "signed_max";
    }
    return "none";
}

Normalization normalization_from_string(const std::string& s) {
    if (s == "none") {
        return Normalization::none;
    }
    if (s == "unit_interval") {
        return Normalization::unit_interval;
    }
    if (s == "signed_max") {
        return Normalization::signed_max;
    }
    throw std::invalid_argument("unknown normalization '" + s + "' (expected none|unit_interval|signed_max)");
}

std::vector<double> normalize_map(std::span<const double> scores, Normalization mode) {
    std::vector<double> out(scores.begin(), scores.end());
    if (out.empty() || mode == Normalization::none) {
        return out;
    }
    if (mode == Normalization::unit_interval) {
        const auto [lo, hi] = std::minmax_element(out.begin(), out.end());
        const double min = *lo;
        const double range = *hi - *lo;
        for (double& v : out) {
            v = range > 0.0 ? (v - min) / range : 0.5;
        }
        return out;
    }
    double max_abs = 0.0;
    for (double v : out) {
        max_abs = std::max(max_abs, std::abs(v));
    }
    for (double& v : out) {
        v = max_abs > 0.0 ? v / max_abs : 0.0;
    }
    return out;
}

double map_mse(const AttributionMap& a, const AttributionMap& b, Normalization mode) {
    if (a.instance_id != b.instance_id) {
        throw std::invalid_argument("map_mse: instance ids differ (" + std::to_string(a.instance_id) + " vs " +
                                    std::to_string(b.instance_id) + ")");
    }
    return mse_loss(normalize_map(a.scores, mode), normalize_map(b.scores, mode));
}

ObjectiveWeights::ObjectiveWeights(double alpha) : alpha_(alpha), beta_(1.0 - alpha) {
    if (!(alpha >= 0.0 && alpha <= 1.0)) {
        throw std::invalid_argument("objective weights: alpha must lie in [0, 1]");
    }
}

namespace {

void check_aligned(std::span<const AttributionMap> targets, std::span<const AttributionMap> candidates) {
    if (targets.size() != candidates.size()) {
        throw std::invalid_argument("target and candidate map counts differ");
    }
    if (targets.empty()) {
        throw std::invalid_argument("no maps to compare");
    }
}

}  // namespace

double objective(std::span<const AttributionMap> targets, std::span<const AttributionMap> candidates,
                 const ObjectiveWeights& weights, Normalization mode) {
    check_aligned(targets, candidates);
    CompensatedSum acc;
    for (std::size_t i = 0; i < targets.size(); ++i) {
        const auto target_passes = targets[i].ledger.total();
        const auto candidate_passes = candidates[i].ledger.total();
        if (target_passes == 0 || target_passes < candidate_passes) {
            throw std::invalid_argument("objective: instance " + std::to_string(targets[i].instance_id) +
                                        " has a candidate costlier than its target (" +
                                        std::to_string(candidate_passes) + " > " + std::to_string(target_passes) +
                                        " passes)");
        }
        const double accuracy = weights.alpha() > 0.0 ? map_mse(targets[i], candidates[i], mode) : 0.0;
        acc.add(weights.alpha() * accuracy +
                weights.beta() * static_cast<double>(candidate_passes) / static_cast<double>(target_passes));
    }
    return acc.value() / static_cast<double>(targets.size());
}

double mean_map_mse(std::span<const AttributionMap> targets, std::span<const AttributionMap> candidates,
                    Normalization mode) {
    check_aligned(targets, candidates);
    CompensatedSum acc;
    for (std::size_t i = 0; i < targets.size(); ++i) {
        acc.add(map_mse(targets[i], candidates[i], mode));
    }
    return acc.value() / static_cast<double>(targets.size());
}

std::uint64_t curve_point_seed(std::uint64_t base_seed, std::size_t samples) {
    return derive_seed(mix64(base_seed ^ 0xC0FFEE5EEDULL), samples);
}

ConvergenceCurve convergence_curve(const TextClassifier& f, const Vocab& vocab, std::span<const Instance> split,
                                   const ExplainerSpec& spec, std::span<const AttributionMap> reference,
                                   std::size_t reference_samples, std::span<const std::size_t> s_values,
                                   Normalization mode) {
    if (s_values.empty()) {
        throw std::invalid_argument("convergence_curve: no sample counts given");
    }
    if (spec.method != Method::ig && spec.method != Method::svs) {
        throw std::invalid_argument("convergence_curve: only sampling explainers (ig, svs) have curves");
    }
    if (reference.size() != split.size()) {
        throw std::invalid_argument("convergence_curve: reference maps do not cover the split");
    }
    std::vector<std::size_t> sorted(s_values.begin(), s_values.end());
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end() || sorted.front() == 0) {
        throw std::invalid_argument("convergence_curve: sample counts must be distinct and positive");
    }
    if (sorted.back() >= reference_samples) {
        throw std::invalid_argument("convergence_curve: every s must be below the reference s=" +
                                    std::to_string(reference_samples));
    }
    ConvergenceCurve curve;
    curve.method = spec.method;
    curve.reference_samples = reference_samples;
    for (std::size_t s : sorted) {
        ExplainerSpec point_spec = spec;
        point_spec.samples = s;
        point_spec.seed = curve_point_seed(spec.seed, s);
        point_spec.accounting = CostLedger::Mode::paper;
        const auto maps = explain_all(f, vocab, split, point_spec);
        double passes = 0.0;
        for (const auto& m : maps) {
            passes += static_cast<double>(m.ledger.total());
        }
        curve.points.push_back(
            {s, mean_map_mse(reference, maps, mode), passes / static_cast<double>(maps.size())});
    }
    return curve;
}

ConvergenceCurve convergence_curve(const TextClassifier& f, const Vocab& vocab, std::span<const Instance> split,
                                   const ExplainerSpec& spec, std::size_t reference_samples,
                                   std::span<const std::size_t> s_values, Normalization mode) {
    if (!s_values.empty() && *std::max_element(s_values.begin(), s_values.end()) >= reference_samples) {
        throw std::invalid_argument("convergence_curve: every s must be below the reference s=" +
                                    std::to_string(reference_samples));
    }
    ExplainerSpec ref_spec = spec;
    ref_spec.samples = reference_samples;
    const auto reference = explain_all(f, vocab, split, ref_spec);
    return convergence_curve(f, vocab, split, spec, reference, reference_samples, s_values, mode);
}

ConvergenceCurve average_curves(std::span<const ConvergenceCurve> curves) {
    if (curves.empty()) {
        throw std::invalid_argument("average_curves: no curves");
    }
    ConvergenceCurve mean = curves.front();
    for (std::size_t c = 1; c < curves.size(); ++c) {
        if (curves[c].points.size() != mean.points.size() || curves[c].method != mean.method) {
            throw std::invalid_argument("average_curves: curves differ in method or s values");
        }
        for (std::size_t i = 0; i < mean.points.size(); ++i) {
            if (curves[c].points[i].samples != mean.points[i].samples) {
                throw std::invalid_argument("average_curves: curves differ in method or s values");
            }
            mean.points[i].mean_mse += curves[c].points[i].mean_mse;
            mean.points[i].passes_per_instance += curves[c].points[i].passes_per_instance;
        }
    }
    const auto n = static_cast<double>(curves.size());
    for (CurvePoint& p : mean.points) {
        p.mean_mse /= n;
        p.passes_per_instance /= n;
    }
    return mean;
}

std::optional<std::size_t> intersection_point(const ConvergenceCurve& curve, double student_mse) {
    if (curve.points.empty()) {
        throw std::invalid_argument("intersection_point: empty curve");
    }
    for (const CurvePoint& p : curve.points) {
        if (p.mean_mse < student_mse) {
            return p.samples;
        }
    }
    return std::nullopt;
}

std::string curve_to_csv(const ConvergenceCurve& curve) {
    std::string out = "s,mean_mse,passes_per_instance_paper_accounting\n";
    for (const CurvePoint& p : curve.points) {
        out += std::to_string(p.samples) + "," + format_double(p.mean_mse) + "," +
               format_double(p.passes_per_instance) + "\n";
    }
    return out;
}

}  // namespace attrib
