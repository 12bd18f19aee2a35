#include "attrib/explainers.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "attrib/parallel.hpp"
#include "json.hpp"

namespace attrib {

using nlohmann::json;

std::string to_string(Method m) {
    switch (m) {
        case Method::ig: return "ig";
        case Method::svs: return "svs";
        case Method::exact_shapley: return "exact_shapley";
        case Method::empirical: return "empirical";
    }
    return "ig";
}

Method method_from_string(const std::string& s) {
    if (s == "ig") {
        return Method::ig;
    }
    if (s == "svs") {
        return Method::svs;
    }
    if (s == "exact_shapley") {
        return Method::exact_shapley;
    }
    if (s == "empirical") {
        return Method::empirical;
    }
    throw std::invalid_argument("unknown method '" + s + "' (expected ig|svs|exact_shapley|empirical)");
}

Baseline build_baseline(std::span<const Token> tokens, Token pad_id, std::span<const std::uint8_t> special_mask) {
    if (special_mask.size() != tokens.size()) {
        throw std::invalid_argument("build_baseline: mask length differs from sequence length");
    }
    Baseline b;
    b.tokens.resize(tokens.size());
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        b.tokens[i] = special_mask[i] ? tokens[i] : pad_id;
    }
    return b;
}

FeatureGrouping group_features(std::span<const std::uint8_t> special_mask) {
    FeatureGrouping g;
    g.feature_of_position.resize(special_mask.size());
    const bool any_special = std::any_of(special_mask.begin(), special_mask.end(), [](auto m) { return m != 0; });
    if (any_special) {
        g.members.emplace_back();
    }
    for (std::size_t i = 0; i < special_mask.size(); ++i) {
        if (special_mask[i]) {
            g.feature_of_position[i] = 0;
            g.members[0].push_back(i);
        } else {
            g.feature_of_position[i] = g.members.size();
            g.members.push_back({i});
        }
    }
    return g;
}

SamplingPlan make_sampling_plan(std::size_t num_features, std::size_t samples, std::uint64_t seed) {
    SamplingPlan plan;
    plan.samples = samples;
    plan.seed = seed;
    SeededRng rng(seed);
    plan.permutations.reserve(samples);
    for (std::size_t k = 0; k < samples; ++k) {
        plan.permutations.push_back(sample_permutation(rng, num_features));
    }
    return plan;
}

SamplingPlan full_permutation_plan(std::size_t num_features) {
    SamplingPlan plan;
    std::vector<std::size_t> perm(num_features);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    do {
        plan.permutations.push_back(perm);
    } while (std::next_permutation(perm.begin(), perm.end()));
    plan.samples = plan.permutations.size();
    return plan;
}

ShapleyEstimate shapley_from_permutations(std::size_t num_features, const CoalitionValue& value,
                                          std::span<const std::vector<std::size_t>> permutations) {
    if (num_features == 0) {
        throw std::invalid_argument("shapley: need at least one feature");
    }
    if (permutations.empty()) {
        throw std::invalid_argument("shapley: need at least one permutation");
    }
    const std::size_t n = num_features;
    ShapleyEstimate est;
    est.values.assign(n, 0.0);
    std::vector<std::uint8_t> present(n, 0);
    const double v_empty = value(present);
    std::fill(present.begin(), present.end(), 1);
    const double v_full = value(present);
    est.evaluations = 2;

    for (const auto& perm : permutations) {
        if (perm.size() != n) {
            throw std::invalid_argument("shapley: permutation length differs from feature count");
        }
        std::fill(present.begin(), present.end(), 0);
        double prev = v_empty;
        for (std::size_t j = 0; j < n; ++j) {
            const std::size_t feat = perm[j];
            present[feat] = 1;
            double cur;
            if (j + 1 == n) {
                cur = v_full;
            } else {
                cur = value(present);
                ++est.evaluations;
            }
            est.values[feat] += cur - prev;
            prev = cur;
        }
    }
    const double inv = 1.0 / static_cast<double>(permutations.size());
    for (double& v : est.values) {
        v *= inv;
    }
    return est;
}

ShapleyEstimate exact_shapley_values(std::size_t num_features, const CoalitionValue& value) {
    const std::size_t n = num_features;
    if (n == 0) {
        throw std::invalid_argument("exact_shapley: need at least one feature");
    }
    if (n > kExactShapleyMaxFeatures) {
        throw std::invalid_argument("exact_shapley: " + std::to_string(n) + " features exceeds the cap of " +
                                    std::to_string(kExactShapleyMaxFeatures));
    }
    const std::size_t coalitions = std::size_t{1} << n;
    std::vector<double> v(coalitions);
    std::vector<std::uint8_t> present(n);
    for (std::size_t mask = 0; mask < coalitions; ++mask) {
        for (std::size_t j = 0; j < n; ++j) {
            present[j] = (mask >> j) & 1U;
        }
        v[mask] = value(present);
    }
    // weight[k] = k! (n-k-1)! / n! for coalitions of size k not containing the feature
    std::vector<double> weight(n);
    for (std::size_t k = 0; k < n; ++k) {
        double w = 1.0 / static_cast<double>(n);
        // 1 / (n * C(n-1, k))
        double binom = 1.0;
        for (std::size_t i = 1; i <= k; ++i) {
            binom = binom * static_cast<double>(n - 1 - k + i) / static_cast<double>(i);
        }
        weight[k] = w / binom;
    }
    ShapleyEstimate est;
    est.values.assign(n, 0.0);
    est.evaluations = coalitions;
    for (std::size_t mask = 0; mask < coalitions; ++mask) {
        const auto size = static_cast<std::size_t>(__builtin_popcountll(mask));
        for (std::size_t j = 0; j < n; ++j) {
            if (!((mask >> j) & 1U)) {
                est.values[j] += weight[size] * (v[mask | (std::size_t{1} << j)] - v[mask]);
            }
        }
    }
    return est;
}

namespace {

void check_target(const TextClassifier& f, std::size_t target) {
    if (target >= f.config().num_classes) {
        throw std::invalid_argument("target class " + std::to_string(target) + " >= number of classes " +
                                    std::to_string(f.config().num_classes));
    }
}

void check_finite_scores(const AttributionMap& map) {
    for (double v : map.scores) {
        if (!std::isfinite(v)) {
            throw NumericError(to_string(map.method) + ": non-finite attribution for instance " +
                               std::to_string(map.instance_id));
        }
    }
}

// Coalition value on token ids: present features take input tokens, absent ones baseline tokens.
CoalitionValue token_game(const TextClassifier& f, const Instance& instance, const Baseline& baseline,
                          const FeatureGrouping& grouping, std::size_t target, CostLedger& ledger) {
    return [&f, &instance, &baseline, &grouping, target, &ledger](std::span<const std::uint8_t> present) {
        std::vector<Token> tokens = baseline.tokens;
        for (std::size_t feat = 0; feat < present.size(); ++feat) {
            if (present[feat]) {
                for (std::size_t pos : grouping.members[feat]) {
                    tokens[pos] = instance.tokens[pos];
                }
            }
        }
        return forward(f, tokens, &ledger)[target];
    };
}

void check_grouping(const Instance& instance, const Baseline& baseline, const FeatureGrouping& grouping) {
    if (baseline.tokens.size() != instance.tokens.size() ||
        grouping.feature_of_position.size() != instance.tokens.size()) {
        throw std::invalid_argument("baseline and grouping must cover every position of the instance");
    }
}

std::vector<double> broadcast(const FeatureGrouping& grouping, std::span<const double> feature_scores) {
    std::vector<double> scores(grouping.feature_of_position.size());
    for (std::size_t pos = 0; pos < scores.size(); ++pos) {
        scores[pos] = feature_scores[grouping.feature_of_position[pos]];
    }
    return scores;
}

}  // namespace

AttributionMap integrated_gradients(const TextClassifier& f, const Instance& instance, const Baseline& baseline,
                                    std::size_t samples, std::size_t target) {
    if (samples == 0) {
        throw std::invalid_argument("integrated_gradients: need at least one sample");
    }
    check_target(f, target);
    const Tensor x = embed(f, instance.tokens);
    const Tensor x_bar = embed(f, baseline.tokens);
    const std::size_t T = x.dim(0);
    const std::size_t D = x.dim(1);
    Tensor diff = x;
    for (std::size_t i = 0; i < diff.size(); ++i) {
        diff[i] -= x_bar[i];
    }

    AttributionMap map;
    map.instance_id = instance.id;
    map.method = Method::ig;
    map.tokens = instance.tokens;
    map.target_class = target;
    map.samples = samples;
    map.ledger.mode = CostLedger::Mode::paper;

    Tensor grad_sum({T, D});
    Tensor point({T, D});
    const double s = static_cast<double>(samples);
    for (std::size_t k = 1; k <= samples; ++k) {
        const double alpha = static_cast<double>(k) / s;
        for (std::size_t i = 0; i < point.size(); ++i) {
            point[i] = x_bar[i] + alpha * diff[i];
        }
        const Tensor g = input_embedding_gradient(f, point, target, &map.ledger);
        for (std::size_t i = 0; i < g.size(); ++i) {
            grad_sum[i] += g[i];
        }
    }
    map.scores.assign(T, 0.0);
    for (std::size_t t = 0; t < T; ++t) {
        double acc = 0.0;
        for (std::size_t d = 0; d < D; ++d) {
            acc += diff.at(t, d) * grad_sum.at(t, d);
        }
        map.scores[t] = acc / s;
    }
    check_finite_scores(map);
    return map;
}

AttributionMap shapley_value_sampling(const TextClassifier& f, const Instance& instance, const Baseline& baseline,
                                      const FeatureGrouping& grouping, const SamplingPlan& plan, std::size_t target,
                                      CostLedger::Mode accounting) {
    check_target(f, target);
    check_grouping(instance, baseline, grouping);
    CostLedger counted;
    const ShapleyEstimate est = shapley_from_permutations(
        grouping.num_features(), token_game(f, instance, baseline, grouping, target, counted), plan.permutations);

    AttributionMap map;
    map.instance_id = instance.id;
    map.method = Method::svs;
    map.tokens = instance.tokens;
    map.target_class = target;
    map.samples = plan.permutations.size();
    map.seed = plan.seed;
    map.scores = broadcast(grouping, est.values);
    map.ledger.mode = accounting;
    map.ledger.forward_passes = accounting == CostLedger::Mode::actual
                                    ? counted.forward_passes
                                    : static_cast<std::uint64_t>(map.samples * grouping.num_features());
    check_finite_scores(map);
    return map;
}

AttributionMap shapley_value_sampling(const TextClassifier& f, const Instance& instance, const Baseline& baseline,
                                      const FeatureGrouping& grouping, std::size_t samples, std::uint64_t seed,
                                      std::size_t target, CostLedger::Mode accounting) {
    if (samples == 0) {
        throw std::invalid_argument("shapley_value_sampling: need at least one sample");
    }
    return shapley_value_sampling(f, instance, baseline, grouping,
                                  make_sampling_plan(grouping.num_features(), samples, seed), target, accounting);
}

AttributionMap exact_shapley(const TextClassifier& f, const Instance& instance, const Baseline& baseline,
                             const FeatureGrouping& grouping, std::size_t target) {
    check_target(f, target);
    check_grouping(instance, baseline, grouping);
    CostLedger counted;
    const ShapleyEstimate est =
        exact_shapley_values(grouping.num_features(), token_game(f, instance, baseline, grouping, target, counted));
    AttributionMap map;
    map.instance_id = instance.id;
    map.method = Method::exact_shapley;
    map.tokens = instance.tokens;
    map.target_class = target;
    map.scores = broadcast(grouping, est.values);
    map.ledger = counted;
    check_finite_scores(map);
    return map;
}

AttributionMap empirical_explain(const StudentExplainer& e, const Instance& instance) {
    if (instance.tokens.size() != e.config().seq_len) {
        throw std::invalid_argument("empirical_explain: instance length " + std::to_string(instance.tokens.size()) +
                                    " differs from student T=" + std::to_string(e.config().seq_len));
    }
    AttributionMap map;
    map.instance_id = instance.id;
    map.method = Method::empirical;
    map.tokens = instance.tokens;
    map.scores = student_forward(e, instance.tokens);
    map.samples = 1;
    map.ledger.forward_passes = 1;
    check_finite_scores(map);
    return map;
}

AttributionMap explain(const TextClassifier& f, const Vocab& vocab, const Instance& instance,
                       const ExplainerSpec& spec) {
    const std::size_t target = spec.target ? *spec.target : predict_class(f, instance.tokens);
    const std::vector<std::uint8_t> mask =
        instance.special_mask.empty() ? special_mask_for(vocab, instance.tokens) : instance.special_mask;
    const Baseline baseline = build_baseline(instance.tokens, vocab.pad, mask);
    switch (spec.method) {
        case Method::ig: {
            AttributionMap map = integrated_gradients(f, instance, baseline, spec.samples, target);
            map.seed = spec.seed;
            return map;
        }
        case Method::svs:
            return shapley_value_sampling(f, instance, baseline, group_features(mask), spec.samples,
                                          derive_seed(spec.seed, instance.id), target, spec.accounting);
        case Method::exact_shapley: {
            AttributionMap map = exact_shapley(f, instance, baseline, group_features(mask), target);
            map.seed = spec.seed;
            map.ledger.mode = spec.accounting;
            return map;
        }
        case Method::empirical:
            break;
    }
    throw std::invalid_argument("explain: the empirical method needs a student model, not a classifier");
}

std::vector<AttributionMap> explain_all(const TextClassifier& f, const Vocab& vocab,
                                        std::span<const Instance> instances, const ExplainerSpec& spec) {
    std::vector<AttributionMap> out(instances.size());
    parallel_for(instances.size(), [&](std::size_t i) {
        try {
            out[i] = explain(f, vocab, instances[i], spec);
        } catch (const NumericError& e) {
            throw NumericError("instance " + std::to_string(instances[i].id) + ": " + e.what());
        } catch (const std::invalid_argument& e) {
            throw std::invalid_argument("instance " + std::to_string(instances[i].id) + ": " + e.what());
        } catch (const std::exception& e) {
            throw std::runtime_error("instance " + std::to_string(instances[i].id) + ": " + e.what());
        }
    });
    return out;
}

// ---- JSONL ---------------------------------------------------------------------------------

std::string attribution_to_json(const AttributionMap& map) {
    json j;
    j["id"] = map.instance_id;
    j["method"] = to_string(map.method);
    j["samples"] = map.samples;
    j["seed"] = map.seed;
    j["target_class"] = map.target_class;
    j["tokens"] = map.tokens;
    j["scores"] = map.scores;
    j["fwd_passes"] = map.ledger.forward_passes;
    j["bwd_passes"] = map.ledger.backward_passes;
    j["accounting"] = to_string(map.ledger.mode);
    return j.dump();
}

AttributionMap attribution_from_json(const std::string& line) {
    const json j = json::parse(line);
    AttributionMap map;
    map.instance_id = j.at("id").get<std::uint64_t>();
    map.method = method_from_string(j.at("method").get<std::string>());
    map.samples = j.at("samples").get<std::size_t>();
    map.seed = j.at("seed").get<std::uint64_t>();
    map.target_class = j.at("target_class").get<std::size_t>();
    map.tokens = j.at("tokens").get<std::vector<Token>>();
    map.scores = j.at("scores").get<std::vector<double>>();
    map.ledger.forward_passes = j.at("fwd_passes").get<std::uint64_t>();
    map.ledger.backward_passes = j.at("bwd_passes").get<std::uint64_t>();
    map.ledger.mode = accounting_from_string(j.at("accounting").get<std::string>());
    if (map.scores.size() != map.tokens.size()) {
        throw std::invalid_argument("scores and tokens differ in length");
    }
    return map;
}

std::string attributions_to_jsonl(const AttributionFile& file) {
    std::vector<const AttributionMap*> sorted;
    sorted.reserve(file.maps.size());
    for (const auto& m : file.maps) {
        sorted.push_back(&m);
    }
    std::stable_sort(sorted.begin(), sorted.end(),
                     [](const auto* a, const auto* b) { return a->instance_id < b->instance_id; });
    std::string out;
    if (!file.header_json.empty()) {
        out += json{{"header", json::parse(file.header_json)}}.dump();
        out += '\n';
    }
    for (const auto* m : sorted) {
        out += attribution_to_json(*m);
        out += '\n';
    }
    return out;
}

AttributionFile attributions_from_jsonl(const std::string& text) {
    AttributionFile file;
    std::istringstream lines(text);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(lines, line)) {
        ++line_no;
        if (line.empty()) {
            continue;
        }
        try {
            if (line_no == 1 && line.rfind("{\"header\"", 0) == 0) {
                file.header_json = json::parse(line).at("header").dump();
                continue;
            }
            file.maps.push_back(attribution_from_json(line));
        } catch (const std::exception& e) {
            throw FormatError(std::string("malformed attribution record: ") + e.what(), line_no);
        }
    }
    return file;
}

void save_attributions(const AttributionFile& file, const std::filesystem::path& path) {
    write_file_atomic(path, attributions_to_jsonl(file));
}

AttributionFile load_attributions(const std::filesystem::path& path) {
    return attributions_from_jsonl(read_file(path));
}

}  // namespace attrib
