#include <cmath>
#include <filesystem>

#include "attrib/distill.hpp"
#include "doctest.h"
#include "oracles.hpp"

using namespace attrib;

namespace {

struct Fixture {
    Dataset data;
    TextClassifier f;
};

// A briefly trained classifier on a small keyword task; shared by the cases below.
const Fixture& fixture() {
    static const Fixture fx = [] {
        KeywordTaskConfig kc;
        kc.seed = 11;
        kc.n_train = 400;
        kc.n_validation = 50;
        kc.n_test = 64;
        Dataset data = gen_keyword_task(kc);
        TextClassifier f = TextClassifier::random(model_config_for(data, Pooling::mean, 8, {16}), 2);
        ClassifierTrainConfig cfg;
        cfg.epochs = 5;
        train_classifier(f, labeled_view(data.train), labeled_view(data.validation), cfg);
        return Fixture{std::move(data), std::move(f)};
    }();
    return fx;
}

ExplainerSpec spec_for(Method m, std::size_t s, std::uint64_t seed) {
    ExplainerSpec spec;
    spec.method = m;
    spec.samples = s;
    spec.seed = seed;
    return spec;
}

// Store whose targets are a fixed function of the tokens, so a student can fit them.
TargetStore synthetic_store(const ModelConfig& c, std::size_t n, std::uint64_t seed) {
    SeededRng rng(seed);
    TargetStore store;
    store.meta.method = Method::ig;
    store.meta.samples = 20;
    for (std::size_t i = 0; i < n; ++i) {
        AttributionMap m;
        m.instance_id = i;
        m.samples = 20;
        for (std::size_t t = 0; t < c.seq_len; ++t) {
            const auto tok = static_cast<Token>(rng.uniform_below(c.vocab_size));
            m.tokens.push_back(tok);
            m.scores.push_back(0.1 * std::sin(static_cast<double>(tok)));
        }
        store.maps.push_back(std::move(m));
    }
    return store;
}

ModelConfig student_config(Pooling p) {
    ModelConfig c;
    c.pooling = p;
    c.vocab_size = 10;
    c.seq_len = 5;
    c.embed_dim = 6;
    c.hidden = {12};
    c.num_classes = 2;
    return c;
}

}  // namespace

TEST_CASE("mse_loss examples and rejection") {
    const std::vector<double> a{0.3, -1.0, 2.0};
    CHECK(mse_loss(a, a) == 0.0);
    CHECK(mse_loss(std::vector<double>{0, 0}, std::vector<double>{1, 1}) == 1.0);
    CHECK_THROWS_AS(mse_loss(std::vector<double>{0, 0}, std::vector<double>{1}), std::invalid_argument);
}

TEST_CASE("mse_loss matches an elementwise loop and is zero only for equal inputs") {
    SeededRng rng(4);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> p(1 + rng.uniform_below(30)), q(p.size());
        for (std::size_t i = 0; i < p.size(); ++i) {
            p[i] = rng.next_normal();
            q[i] = rng.next_normal();
        }
        const double got = mse_loss(p, q);
        CHECK(std::abs(got - oracle::loop_mse(p, q)) <= 1e-12);
        CHECK(got > 0.0);
    }
}

TEST_CASE("generate_targets rejects an empty split") {
    const Fixture& fx = fixture();
    CHECK_THROWS_AS(generate_targets(fx.f, fx.data.vocab(), std::span<const Instance>(), spec_for(Method::ig, 20, 1)),
                    std::invalid_argument);
}

TEST_CASE("generate_targets is byte-reproducible") {
    const Fixture& fx = fixture();
    const std::span<const Instance> split(fx.data.test.data(), 16);
    const TargetStore a = generate_targets(fx.f, fx.data.vocab(), split, spec_for(Method::svs, 5, 9));
    const TargetStore b = generate_targets(fx.f, fx.data.vocab(), split, spec_for(Method::svs, 5, 9));
    CHECK(attributions_to_jsonl({"", a.maps}) == attributions_to_jsonl({"", b.maps}));
    CHECK(store_metadata_to_json(a.meta) == store_metadata_to_json(b.meta));
}

TEST_CASE("an IG store over 64 keyword instances satisfies the explainer invariants") {
    const Fixture& fx = fixture();
    const TargetStore store = generate_targets(fx.f, fx.data.vocab(), fx.data.test, spec_for(Method::ig, 20, 3));
    REQUIRE(store.maps.size() == 64);
    double raw_total = 0.0, corrected_total = 0.0;
    for (std::size_t i = 0; i < 64; ++i) {
        const Instance& x = fx.data.test[i];
        const AttributionMap& m = store.maps[i];
        CHECK(m.instance_id == x.id);
        CHECK(m.tokens == x.tokens);
        CHECK(m.target_class == predict_class(fx.f, x.tokens));
        CHECK(m.ledger.forward_passes == 20);
        CHECK(m.ledger.backward_passes == 20);
        // The telescoped sum equals f(x) - f(baseline) up to the first-order Riemann term
        // (g(1) - g(0)) . (x - baseline) / 2s, computed here from the endpoint gradients.
        const Tensor ex = embed(fx.f, x.tokens);
        const Tensor eb = embed(fx.f, build_baseline(x.tokens, 0, x.special_mask).tokens);
        const Tensor g1 = input_embedding_gradient(fx.f, ex, m.target_class);
        const Tensor g0 = input_embedding_gradient(fx.f, eb, m.target_class);
        double endpoint = 0.0, sum = 0.0;
        for (std::size_t k = 0; k < ex.size(); ++k) {
            endpoint += (g1[k] - g0[k]) * (ex[k] - eb[k]) / 40.0;
        }
        for (double v : m.scores) {
            CHECK(std::isfinite(v));
            sum += v;
        }
        const double gap = forward_embedded(fx.f, ex)[m.target_class] - forward_embedded(fx.f, eb)[m.target_class];
        // What remains is second order, O(1/s^2) = O(2.5e-3) times the integrand curvature.
        CHECK(std::abs(sum - gap - endpoint) <= 1e-3);
        raw_total += std::abs(sum - gap);
        corrected_total += std::abs(sum - gap - endpoint);
    }
    CHECK(corrected_total <= 0.25 * raw_total);
}

TEST_CASE("an SV store telescopes exactly per map") {
    const Fixture& fx = fixture();
    const std::span<const Instance> split(fx.data.test.data(), 32);
    const TargetStore store = generate_targets(fx.f, fx.data.vocab(), split, spec_for(Method::svs, 20, 5));
    for (std::size_t i = 0; i < split.size(); ++i) {
        const Instance& x = split[i];
        const AttributionMap& m = store.maps[i];
        const FeatureGrouping g = group_features(x.special_mask);
        double sum = 0.0;
        for (const auto& members : g.members) {
            sum += m.scores[members.front()];
        }
        const double gap = forward(fx.f, x.tokens)[m.target_class] -
                           forward(fx.f, build_baseline(x.tokens, 0, x.special_mask).tokens)[m.target_class];
        CHECK(std::abs(sum - gap) <= 1e-8);
    }
}

TEST_CASE("store validation rejects duplicate ids and mixed configurations") {
    TargetStore store = synthetic_store(student_config(Pooling::mean), 4, 1);
    CHECK_NOTHROW(store.validate());
    TargetStore dup = store;
    dup.maps[2].instance_id = dup.maps[0].instance_id;
    CHECK_THROWS_AS(dup.validate(), std::invalid_argument);
    TargetStore mixed = store;
    mixed.maps[1].samples = 19;
    CHECK_THROWS_AS(mixed.validate(), std::invalid_argument);
}

TEST_CASE("target stores round-trip through JSONL and the metadata sidecar") {
    const Fixture& fx = fixture();
    const std::span<const Instance> split(fx.data.test.data(), 8);
    TargetStore store = generate_targets(fx.f, fx.data.vocab(), split, spec_for(Method::ig, 4, 2));
    store.meta.classifier_checksum = "fnv1a64:0123456789abcdef";
    const auto path = std::filesystem::temp_directory_path() / "attrib_test_distill_store.jsonl";
    save_target_store(store, path, R"({"command":"test"})");
    const TargetStore back = load_target_store(path);
    CHECK(back.meta == store.meta);
    CHECK(back.maps == store.maps);
    std::filesystem::remove(path);
    std::filesystem::remove(path.string() + ".meta.json");
}

TEST_CASE("train config validation") {
    TrainConfig c;
    CHECK_NOTHROW(c.validate());
    c.validation_fraction = 1.0;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = TrainConfig{};
    c.learning_rate = 0.0;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = TrainConfig{};
    c.batch_size = 0;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}

TEST_CASE("zero epochs leave the student unchanged with an empty history") {
    const ModelConfig c = student_config(Pooling::mean);
    const StudentExplainer e = StudentExplainer::random(c, 3);
    TrainConfig cfg;
    cfg.max_epochs = 0;
    const TrainResult r = train_student(e, synthetic_store(c, 20, 2), cfg);
    CHECK(r.history.empty());
    CHECK(r.best_epoch == 0);
    CHECK(r.student.network().embedding == e.network().embedding);
    CHECK(r.student.network().head.weight == e.network().head.weight);
}

TEST_CASE("targets equal to the student's own outputs give a zero starting loss") {
    for (Pooling p : {Pooling::mean, Pooling::flatten}) {
        const ModelConfig c = student_config(p);
        const StudentExplainer e = StudentExplainer::random(c, 4);
        TargetStore store = synthetic_store(c, 20, 5);
        for (AttributionMap& m : store.maps) {
            m.scores = student_forward(e, m.tokens);
        }
        TrainConfig cfg;
        cfg.max_epochs = 1;
        cfg.batch_size = 1000;  // one batch: the loss is measured before any update
        const TrainResult r = train_student(e, store, cfg);
        REQUIRE(r.history.size() == 1);
        CHECK(r.history[0].train_mse == 0.0);
    }
}

TEST_CASE("ten instances overfit below 1e-3 within 500 epochs") {
    for (Pooling p : {Pooling::mean, Pooling::flatten}) {
        const ModelConfig c = student_config(p);
        TrainConfig cfg;
        cfg.max_epochs = 500;
        cfg.patience = 500;
        cfg.batch_size = 10;
        cfg.validation_fraction = 0.1;
        // 11 maps: one is carved out for validation, ten are trained on.
        const TrainResult r = train_student(StudentExplainer::random(c, 6), synthetic_store(c, 11, 7), cfg);
        REQUIRE(r.history.size() == 500);
        CHECK(r.history.back().train_mse < 1e-3);
    }
}

TEST_CASE("best-epoch contract and early stopping bound") {
    const ModelConfig c = student_config(Pooling::mean);
    TrainConfig cfg;
    cfg.max_epochs = 300;
    cfg.patience = 3;
    cfg.learning_rate = 0.2;
    const TrainResult r = train_student(StudentExplainer::random(c, 8), synthetic_store(c, 40, 9), cfg);
    REQUIRE_FALSE(r.history.empty());
    for (const EpochRecord& e : r.history) {
        CHECK(r.best_val_mse <= e.val_mse);
        CHECK(e.train_mse >= 0.0);
    }
    CHECK(r.history.size() <= r.best_epoch + cfg.patience);
    CHECK(r.history[r.best_epoch - 1].val_mse == r.best_val_mse);
}

TEST_CASE("student training is deterministic and rejects a length mismatch") {
    const ModelConfig c = student_config(Pooling::flatten);
    TrainConfig cfg;
    cfg.max_epochs = 5;
    const TargetStore store = synthetic_store(c, 30, 10);
    const TrainResult a = train_student(StudentExplainer::random(c, 1), store, cfg);
    const TrainResult b = train_student(StudentExplainer::random(c, 1), store, cfg);
    CHECK(history_to_csv(a.history) == history_to_csv(b.history));
    CHECK(a.student.network().head.weight == b.student.network().head.weight);
    ModelConfig longer = c;
    longer.seq_len = 6;
    CHECK_THROWS_AS(train_student(StudentExplainer::random(longer, 1), store, cfg), std::invalid_argument);
}

TEST_CASE("history CSV has a header and one row per epoch") {
    const std::vector<EpochRecord> h{{1, 0.5, 0.25}, {2, 0.125, 0.0625}};
    CHECK(history_to_csv(h) == "epoch,train_mse,val_mse\n1,0.5,0.25\n2,0.125,0.0625\n");
}
