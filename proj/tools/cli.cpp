#include "attrib/cli.hpp"

#include <algorithm>
#include <functional>
#include <map>
#include <optional>
#include <ostream>

#include "CLI11.hpp"
#include "attrib/data.hpp"
#include "attrib/distill.hpp"
#include "attrib/eval.hpp"
#include "attrib/model_io.hpp"
#include "attrib/render.hpp"
#include "json.hpp"

namespace attrib {

using nlohmann::json;

namespace {

class UsageError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

std::filesystem::path with_suffix(const std::filesystem::path& path, const char* suffix) {
    std::filesystem::path p = path;
    p += suffix;
    return p;
}

json scalar_value(const std::string& s) {
    if (!s.empty() && (std::isdigit(static_cast<unsigned char>(s[0])) || s[0] == '-' || s[0] == '.')) {
        try {
            json j = json::parse(s);
            if (j.is_number()) {
                return j;
            }
        } catch (const json::parse_error&) {
        }
    }
    return s;
}

/// Every option of the subcommand except help and config, as given or defaulted.
json resolved_config(const CLI::App& sub) {
    json options = json::object();
    for (const CLI::Option* opt : sub.get_options()) {
        if (opt->get_lnames().empty()) {
            continue;
        }
        const std::string& name = opt->get_lnames().front();
        if (name == "help" || name == "config") {
            continue;
        }
        if (opt->count() > 0) {
            const auto& results = opt->results();
            if (opt->get_expected_max() > 1) {
                json arr = json::array();
                for (const std::string& r : results) {
                    arr.push_back(scalar_value(r));
                }
                options[name] = arr;
            } else {
                options[name] = scalar_value(results.back());
            }
        } else if (!opt->get_default_str().empty()) {
            options[name] = scalar_value(opt->get_default_str());
        } else {
            options[name] = nullptr;
        }
    }
    return json{{"command", sub.get_name()}, {"options", options}};
}

std::string config_value_arg(const json& v) {
    if (v.is_string()) {
        return v.get<std::string>();
    }
    if (v.is_array()) {
        std::string joined;
        for (const json& e : v) {
            if (!joined.empty()) {
                joined += ",";
            }
            joined += config_value_arg(e);
        }
        return joined;
    }
    if (v.is_boolean() || v.is_number()) {
        return v.dump();
    }
    throw UsageError("config values must be strings, numbers, booleans or arrays");
}

bool has_flag(const std::vector<std::string>& args, const std::string& name) {
    const std::string flag = "--" + name;
    return std::any_of(args.begin(), args.end(),
                       [&](const std::string& a) { return a == flag || a.rfind(flag + "=", 0) == 0; });
}

/// Appends --key value pairs from the config file for every flag not already on the command line.
std::vector<std::string> merge_config(const CLI::App& app, std::vector<std::string> args) {
    std::optional<std::string> config_path;
    for (std::size_t i = 0; i < args.size(); ++i) {
        if (args[i] == "--config" && i + 1 < args.size()) {
            config_path = args[i + 1];
        } else if (args[i].rfind("--config=", 0) == 0) {
            config_path = args[i].substr(9);
        }
    }
    if (!config_path) {
        return args;
    }
    const auto sub_it = std::find_if(args.begin(), args.end(), [](const std::string& a) { return a[0] != '-'; });
    if (sub_it == args.end()) {
        return args;
    }
    const CLI::App* sub = nullptr;
    for (const CLI::App* s : app.get_subcommands({})) {
        if (s->get_name() == *sub_it) {
            sub = s;
        }
    }
    if (!sub) {
        return args;
    }
    json config;
    try {
        config = json::parse(read_file(*config_path));
    } catch (const json::parse_error& e) {
        throw UsageError("config file " + *config_path + " is not valid JSON: " + e.what());
    }
    if (!config.is_object()) {
        throw UsageError("config file " + *config_path + " must hold a JSON object");
    }
    auto known_to = [](const CLI::App* s, const std::string& key) {
        for (const CLI::Option* opt : s->get_options()) {
            const auto& names = opt->get_lnames();
            if (std::find(names.begin(), names.end(), key) != names.end()) {
                return true;
            }
        }
        return false;
    };
    for (const auto& [key, value] : config.items()) {
        if (key == "config" || key == "help") {
            throw UsageError("config file may not set '" + key + "'");
        }
        if (known_to(sub, key)) {
            if (!has_flag(args, key)) {
                args.push_back("--" + key);
                args.push_back(config_value_arg(value));
            }
            continue;
        }
        const auto subs = app.get_subcommands({});
        if (std::none_of(subs.begin(), subs.end(), [&](const CLI::App* s) { return known_to(s, key); })) {
            throw UsageError("config file " + *config_path + ": unknown key '" + key + "'");
        }
    }
    return args;
}

std::span<const Instance> take(const std::vector<Instance>& split, std::size_t limit) {
    const std::size_t n = limit == 0 ? split.size() : std::min(limit, split.size());
    return {split.data(), n};
}

std::string meta_json(const json& run_config, json extra = json::object()) {
    extra["run_config"] = run_config;
    return extra.dump(2) + "\n";
}

// ---- subcommands --------------------------------------------------------------------------------

struct GenDataArgs {
    std::uint64_t seed = 0;
    std::string out;
    KeywordTaskConfig task{};
};

struct TrainArgs {
    std::string dataset, out, pooling = "mean";
    std::uint64_t seed = 0;
    std::size_t embed_dim = 16;
    std::vector<std::size_t> hidden{32, 32};
    ClassifierTrainConfig train{};
};

struct ExplainArgs {
    std::string dataset, model, student, method = "ig", accounting = "paper", split = "test", out;
    std::size_t samples = 20, limit = 0;
    std::uint64_t seed = 0;
};

struct DistillArgs {
    std::string model, targets, out, history;
    std::uint64_t seed = 0;
    TrainConfig train{};
};

struct CurveArgs {
    std::string dataset, model, student, reference, method = "svs", normalization = "unit_interval",
                split = "test", out;
    std::uint64_t seed = 0;
    std::size_t reference_samples = 20, limit = 0, repeats = 1;
    std::vector<std::size_t> s_values{1, 2, 5, 10, 19};
};

struct RenderArgs {
    std::string dataset, targets, empirical, out;
};

struct ObjectiveArgs {
    std::string targets, candidates, normalization = "unit_interval", out;
    double alpha = 0.5;
};

void run_gen_data(const GenDataArgs& a, const json& rc, std::ostream& out) {
    KeywordTaskConfig task = a.task;
    task.seed = a.seed;
    const Dataset data = gen_keyword_task(task);
    save_dataset(data, a.out, rc.dump());
    out << "wrote " << data.train.size() << "/" << data.validation.size() << "/" << data.test.size()
        << " instances to " << a.out << "\n";
}

void run_train(const TrainArgs& a, const json& rc, std::ostream& out) {
    const Dataset data = load_dataset(a.dataset);
    TextClassifier f =
        TextClassifier::random(model_config_for(data, pooling_from_string(a.pooling), a.embed_dim, a.hidden),
                               derive_seed(a.seed, 0));
    ClassifierTrainConfig cfg = a.train;
    cfg.seed = derive_seed(a.seed, 1);
    const auto train = labeled_view(data.train);
    const auto validation = labeled_view(data.validation);
    const auto history = train_classifier(f, train, validation, cfg);
    const ClassificationMetrics m = classification_metrics(f, data.test);
    save_classifier(f, a.out, rc.dump());
    json epochs = json::array();
    for (const ClassifierEpoch& e : history) {
        epochs.push_back({{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"val_accuracy", e.val_accuracy}});
    }
    write_file_atomic(with_suffix(a.out, ".metrics.json"),
                      meta_json(rc, {{"split", "test"},
                                     {"accuracy", m.accuracy},
                                     {"weighted_f1", m.weighted_f1},
                                     {"classifier_checksum", classifier_checksum(f)},
                                     {"epochs", epochs}}));
    out << "test accuracy " << format_double(m.accuracy) << ", weighted F1 " << format_double(m.weighted_f1) << "\n";
}

void run_explain(const ExplainArgs& a, const json& rc, std::ostream& out) {
    const Dataset data = load_dataset(a.dataset);
    const auto instances = take(data.split(split_from_string(a.split)), a.limit);
    const Method method = method_from_string(a.method);
    const CostLedger::Mode accounting = accounting_from_string(a.accounting);
    json header{{"run_config", rc}, {"method", to_string(method)}, {"split", a.split}, {"accounting", a.accounting}};

    std::vector<AttributionMap> maps;
    std::optional<TargetStore> store;
    if (method == Method::empirical) {
        if (a.student.empty()) {
            throw UsageError("--method empirical needs --student");
        }
        const StudentExplainer e = load_student(a.student);
        for (const Instance& x : instances) {
            maps.push_back(empirical_explain(e, x));
        }
    } else {
        if (a.model.empty()) {
            throw UsageError("--method " + a.method + " needs --model");
        }
        const TextClassifier f = load_classifier(a.model);
        ExplainerSpec spec{method, a.samples, a.seed, accounting, std::nullopt};
        store = generate_targets(f, data.vocab(), instances, spec);
        store->meta.classifier_checksum = classifier_checksum(f);
        header["classifier_checksum"] = store->meta.classifier_checksum;
        maps = store->maps;
    }
    std::uint64_t fwd = 0, bwd = 0;
    for (const AttributionMap& m : maps) {
        fwd += m.ledger.forward_passes;
        bwd += m.ledger.backward_passes;
    }
    header["totals"] = {{"instances", maps.size()}, {"fwd_passes", fwd}, {"bwd_passes", bwd},
                        {"passes", fwd + bwd}};
    if (store) {
        save_target_store(*store, a.out, header.dump());
    } else {
        save_attributions({header.dump(), maps}, a.out);
    }
    out << "explained " << maps.size() << " instances with " << a.method << "; " << fwd + bwd << " passes ("
        << a.accounting << " accounting)\n";
}

void run_distill(const DistillArgs& a, const json& rc, std::ostream& out) {
    const TextClassifier f = load_classifier(a.model);
    const TargetStore store = load_target_store(a.targets);
    if (!store.meta.classifier_checksum.empty() && store.meta.classifier_checksum != classifier_checksum(f)) {
        throw std::invalid_argument("targets in " + a.targets + " were produced by a different classifier");
    }
    TrainConfig cfg = a.train;
    cfg.init_seed = derive_seed(a.seed, 1);
    const TrainResult result = train_student(init_student_from_classifier(f, derive_seed(a.seed, 0)), store, cfg);
    save_student(result.student, a.out, rc.dump());
    const std::filesystem::path history = a.history.empty() ? with_suffix(a.out, ".history.csv") : std::filesystem::path(a.history);
    write_file_atomic(history, history_to_csv(result.history));
    write_file_atomic(with_suffix(history, ".meta.json"),
                      meta_json(rc, {{"best_epoch", result.best_epoch}, {"best_val_mse", result.best_val_mse}}));
    out << "best epoch " << result.best_epoch << " of " << result.history.size() << ", validation MSE "
        << format_double(result.best_val_mse) << "\n";
}

void run_curve(const CurveArgs& a, const json& rc, std::ostream& out) {
    if (a.s_values.empty()) {
        throw UsageError("--s-values must list at least one sample count");
    }
    if (a.repeats == 0) {
        throw UsageError("--repeats must be positive");
    }
    const Dataset data = load_dataset(a.dataset);
    const TextClassifier f = load_classifier(a.model);
    const auto instances = take(data.split(split_from_string(a.split)), a.limit);
    const Normalization mode = normalization_from_string(a.normalization);
    const ExplainerSpec spec{method_from_string(a.method), a.reference_samples, a.seed, CostLedger::Mode::paper,
                             std::nullopt};

    std::vector<AttributionMap> reference;
    if (a.reference.empty()) {
        reference = explain_all(f, data.vocab(), instances, spec);
    } else {
        std::map<std::uint64_t, AttributionMap> by_id;
        for (AttributionMap& m : load_attributions(a.reference).maps) {
            by_id.emplace(m.instance_id, std::move(m));
        }
        for (const Instance& x : instances) {
            const auto it = by_id.find(x.id);
            if (it == by_id.end()) {
                throw std::invalid_argument("reference " + a.reference + " has no map for instance " +
                                            std::to_string(x.id));
            }
            if (it->second.method != spec.method || it->second.samples != a.reference_samples) {
                throw std::invalid_argument("reference " + a.reference + " was not produced by " + a.method +
                                            " with s=" + std::to_string(a.reference_samples));
            }
            reference.push_back(it->second);
        }
    }
    std::vector<ConvergenceCurve> curves;
    for (std::size_t r = 0; r < a.repeats; ++r) {
        ExplainerSpec point_spec = spec;
        point_spec.seed = r == 0 ? a.seed : derive_seed(a.seed, r);
        curves.push_back(
            convergence_curve(f, data.vocab(), instances, point_spec, reference, a.reference_samples, a.s_values, mode));
    }
    ConvergenceCurve curve = average_curves(curves);
    curve.dataset_id = checksum_tag(dataset_to_jsonl(data));

    json meta{{"dataset_id", curve.dataset_id}, {"repeats", a.repeats}};
    if (!a.student.empty()) {
        const StudentExplainer e = load_student(a.student);
        std::vector<AttributionMap> student_maps;
        for (const Instance& x : instances) {
            student_maps.push_back(empirical_explain(e, x));
        }
        const double student_mse = mean_map_mse(reference, student_maps, mode);
        const auto s_star = intersection_point(curve, student_mse);
        meta["student_mse"] = student_mse;
        meta["intersection"] = s_star ? json(*s_star) : json(nullptr);
        out << "student MSE " << format_double(student_mse) << "; intersection s* = "
            << (s_star ? std::to_string(*s_star) : std::string("none (student beats every listed s)")) << "\n";
    }
    write_file_atomic(a.out, curve_to_csv(curve));
    write_file_atomic(with_suffix(a.out, ".meta.json"), meta_json(rc, meta));
    out << "wrote " << curve.points.size() << " curve points to " << a.out << "\n";
}

void run_render(const RenderArgs& a, const json& rc, std::ostream& out) {
    const Dataset data = load_dataset(a.dataset);
    const AttributionFile targets = load_attributions(a.targets);
    const AttributionFile empirical = load_attributions(a.empirical);
    write_file_atomic(a.out, render_heatmaps(data.vocab(), targets.maps, empirical.maps));
    write_file_atomic(with_suffix(a.out, ".meta.json"), meta_json(rc));
    out << "rendered " << targets.maps.size() << " heatmaps to " << a.out << "\n";
}

void run_objective(const ObjectiveArgs& a, const json& rc, std::ostream& out) {
    const AttributionFile targets = load_attributions(a.targets);
    const AttributionFile candidates = load_attributions(a.candidates);
    const double value = objective(targets.maps, candidates.maps, ObjectiveWeights(a.alpha),
                                   normalization_from_string(a.normalization));
    if (!a.out.empty()) {
        write_file_atomic(a.out, meta_json(rc, {{"objective", value}}));
    }
    out << "objective " << format_double(value) << "\n";
}

CLI::App* add_config_flag(CLI::App* sub) {
    sub->add_option("--config", "JSON file of flag values; command-line flags take precedence");
    return sub;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Feature attribution pipeline: train, explain, distill, curve, render"};
    app.name("attrib");
    app.require_subcommand(1);
    app.option_defaults()->always_capture_default();

    const auto methods = CLI::IsMember({"ig", "svs", "exact_shapley", "empirical"});
    const auto splits = CLI::IsMember({"train", "validation", "val", "test"});
    const auto norms = CLI::IsMember({"none", "unit_interval", "signed_max"});

    GenDataArgs gen;
    auto* gen_cmd = add_config_flag(app.add_subcommand("gen-data", "generate the keyword-count dataset"));
    gen_cmd->add_option("--seed", gen.seed);
    gen_cmd->add_option("--out", gen.out)->required();
    gen_cmd->add_option("--n-train", gen.task.n_train);
    gen_cmd->add_option("--n-validation", gen.task.n_validation);
    gen_cmd->add_option("--n-test", gen.task.n_test);
    gen_cmd->add_option("--seq-len", gen.task.seq_len);
    gen_cmd->add_option("--min-content", gen.task.min_content);
    gen_cmd->add_option("--noise", gen.task.noise);

    TrainArgs tr;
    auto* tr_cmd = add_config_flag(app.add_subcommand("train-classifier", "train the text classifier"));
    tr_cmd->add_option("--dataset", tr.dataset)->required();
    tr_cmd->add_option("--out", tr.out)->required();
    tr_cmd->add_option("--seed", tr.seed);
    tr_cmd->add_option("--pooling", tr.pooling)->check(CLI::IsMember({"mean", "flatten"}));
    tr_cmd->add_option("--embed-dim", tr.embed_dim);
    tr_cmd->add_option("--hidden", tr.hidden)->delimiter(',');
    tr_cmd->add_option("--epochs", tr.train.epochs);
    tr_cmd->add_option("--lr", tr.train.learning_rate);
    tr_cmd->add_option("--momentum", tr.train.momentum);
    tr_cmd->add_option("--batch-size", tr.train.batch_size);

    ExplainArgs ex;
    auto* ex_cmd = add_config_flag(app.add_subcommand("explain", "write one attribution map per instance"));
    ex_cmd->add_option("--dataset", ex.dataset)->required();
    ex_cmd->add_option("--model", ex.model);
    ex_cmd->add_option("--student", ex.student);
    ex_cmd->add_option("--method", ex.method)->check(methods);
    ex_cmd->add_option("--samples", ex.samples);
    ex_cmd->add_option("--seed", ex.seed);
    ex_cmd->add_option("--accounting", ex.accounting)->check(CLI::IsMember({"actual", "paper"}));
    ex_cmd->add_option("--split", ex.split)->check(splits);
    ex_cmd->add_option("--limit", ex.limit, "explain only the first N instances (0 = all)");
    ex_cmd->add_option("--out", ex.out)->required();

    DistillArgs di;
    auto* di_cmd = add_config_flag(app.add_subcommand("distill", "train a student on target attributions"));
    di_cmd->add_option("--model", di.model)->required();
    di_cmd->add_option("--targets", di.targets)->required();
    di_cmd->add_option("--out", di.out)->required();
    di_cmd->add_option("--history", di.history, "loss-history CSV (default: <out>.history.csv)");
    di_cmd->add_option("--seed", di.seed);
    di_cmd->add_option("--lr", di.train.learning_rate);
    di_cmd->add_option("--momentum", di.train.momentum);
    di_cmd->add_option("--batch-size", di.train.batch_size);
    di_cmd->add_option("--max-epochs", di.train.max_epochs);
    di_cmd->add_option("--patience", di.train.patience);
    di_cmd->add_option("--validation-fraction", di.train.validation_fraction);

    CurveArgs cu;
    auto* cu_cmd = add_config_flag(app.add_subcommand("curve", "convergence curve of a sampling explainer"));
    cu_cmd->add_option("--dataset", cu.dataset)->required();
    cu_cmd->add_option("--model", cu.model)->required();
    cu_cmd->add_option("--student", cu.student, "student to overlay; prints the intersection");
    cu_cmd->add_option("--reference", cu.reference, "reference maps (attribution JSONL) instead of recomputing");
    cu_cmd->add_option("--method", cu.method)->check(CLI::IsMember({"ig", "svs"}));
    cu_cmd->add_option("--seed", cu.seed);
    cu_cmd->add_option("--reference-samples", cu.reference_samples);
    cu_cmd->add_option("--s-values", cu.s_values)->delimiter(',');
    cu_cmd->add_option("--repeats", cu.repeats, "curve seeds averaged per point");
    cu_cmd->add_option("--normalization", cu.normalization)->check(norms);
    cu_cmd->add_option("--split", cu.split)->check(splits);
    cu_cmd->add_option("--limit", cu.limit);
    cu_cmd->add_option("--out", cu.out)->required();

    RenderArgs re;
    auto* re_cmd = add_config_flag(app.add_subcommand("render", "HTML heatmaps, one document per line"));
    re_cmd->add_option("--dataset", re.dataset)->required();
    re_cmd->add_option("--targets", re.targets)->required();
    re_cmd->add_option("--empirical", re.empirical)->required();
    re_cmd->add_option("--out", re.out)->required();

    ObjectiveArgs ob;
    auto* ob_cmd = add_config_flag(app.add_subcommand("objective", "accuracy/efficiency objective of candidates"));
    ob_cmd->add_option("--targets", ob.targets)->required();
    ob_cmd->add_option("--candidates", ob.candidates)->required();
    ob_cmd->add_option("--alpha", ob.alpha)->check(CLI::Range(0.0, 1.0));
    ob_cmd->add_option("--normalization", ob.normalization)->check(norms);
    ob_cmd->add_option("--out", ob.out);

    try {
        std::vector<std::string> merged = merge_config(app, args);
        std::reverse(merged.begin(), merged.end());
        app.parse(merged);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitUsage;
    }

    const CLI::App* sub = app.get_subcommands().front();
    const json rc = resolved_config(*sub);
    try {
        if (sub == gen_cmd) {
            run_gen_data(gen, rc, out);
        } else if (sub == tr_cmd) {
            run_train(tr, rc, out);
        } else if (sub == ex_cmd) {
            run_explain(ex, rc, out);
        } else if (sub == di_cmd) {
            run_distill(di, rc, out);
        } else if (sub == cu_cmd) {
            run_curve(cu, rc, out);
        } else if (sub == re_cmd) {
            run_render(re, rc, out);
        } else {
            run_objective(ob, rc, out);
        }
    } catch (const NumericError& e) {
        err << "error: " << e.what() << "\n";
        return kExitFailure;
    } catch (const std::invalid_argument& e) {
        err << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const FormatError& e) {
        err << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const FileError& e) {
        err << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitFailure;
    }
    return kExitOk;
}

}  // namespace attrib
