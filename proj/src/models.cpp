#include "attrib/models.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <type_traits>

namespace attrib {

std::string to_string(Pooling p) { return p == Pooling::mean ? "mean" : "flatten"; }

Pooling pooling_from_string(const std::string& s) {
    if (s == "mean") {
        return Pooling::mean;
    }
    if (s == "flatten") {
        return Pooling::flatten;
    }
    throw std::invalid_argument("unknown pooling '" + s + "' (expected mean|flatten)");
}

std::string to_string(CostLedger::Mode m) { return m == CostLedger::Mode::actual ? "actual" : "paper"; }

CostLedger::Mode accounting_from_string(const std::string& s) {
    if (s == "actual") {
        return CostLedger::Mode::actual;
    }
    if (s == "paper") {
        return CostLedger::Mode::paper;
    }
    throw std::invalid_argument("unknown accounting mode '" + s + "' (expected actual|paper)");
}

std::size_t ModelConfig::encoder_input_width() const {
    return pooling == Pooling::mean ? embed_dim : seq_len * embed_dim;
}

std::size_t ModelConfig::encoder_output_width() const {
    return hidden.empty() ? encoder_input_width() : hidden.back();
}

void ModelConfig::validate() const {
    if (vocab_size == 0 || seq_len == 0 || embed_dim == 0 || num_classes == 0) {
        throw std::invalid_argument("model config: vocab_size, seq_len, embed_dim and num_classes must be positive");
    }
    for (std::size_t h : hidden) {
        if (h == 0) {
            throw std::invalid_argument("model config: hidden layer widths must be positive");
        }
    }
}

namespace {

Affine make_affine(std::size_t out, std::size_t in) { return Affine{Tensor({out, in}), Tensor({out})}; }

void fill_normal(Tensor& t, SeededRng& rng, double scale) {
    for (double& v : t.data()) {
        v = scale * rng.next_normal();
    }
}

Network zero_network(const ModelConfig& config, std::size_t head_outputs, std::size_t head_in) {
    config.validate();
    Network net;
    net.embedding = Tensor({config.vocab_size, config.embed_dim});
    std::size_t width = config.encoder_input_width();
    for (std::size_t h : config.hidden) {
        net.layers.push_back(make_affine(h, width));
        width = h;
    }
    net.head = make_affine(head_outputs, head_in);
    return net;
}

void randomize_affine(Affine& a, SeededRng& rng) {
    fill_normal(a.weight, rng, 1.0 / std::sqrt(static_cast<double>(a.in_width())));
}

Network random_network(const ModelConfig& config, std::size_t head_outputs, std::size_t head_in,
                       std::uint64_t seed) {
    Network net = zero_network(config, head_outputs, head_in);
    SeededRng rng(seed);
    fill_normal(net.embedding, rng, 1.0);
    for (Affine& layer : net.layers) {
        randomize_affine(layer, rng);
    }
    randomize_affine(net.head, rng);
    return net;
}

void check_network(const ModelConfig& config, const Network& net, std::size_t head_outputs, std::size_t head_in) {
    const Network expected = zero_network(config, head_outputs, head_in);
    bool ok = net.embedding.shape() == expected.embedding.shape() && net.layers.size() == expected.layers.size() &&
              net.head.weight.shape() == expected.head.weight.shape() &&
              net.head.bias.shape() == expected.head.bias.shape();
    for (std::size_t i = 0; ok && i < net.layers.size(); ++i) {
        ok = net.layers[i].weight.shape() == expected.layers[i].weight.shape() &&
             net.layers[i].bias.shape() == expected.layers[i].bias.shape();
    }
    if (!ok) {
        throw ShapeError("network tensors do not match the model config");
    }
}

// y = W x + b
void affine_apply(const Affine& a, std::span<const double> x, std::vector<double>& y) {
    const std::size_t out = a.out_width();
    const std::size_t in = a.in_width();
    y.resize(out);
    const double* w = a.weight.values().data();
    for (std::size_t o = 0; o < out; ++o) {
        const double* wr = w + o * in;
        double acc = 0.0;
        for (std::size_t i = 0; i < in; ++i) {
            acc += wr[i] * x[i];
        }
        y[o] = acc + a.bias[o];
    }
}

// dx = W^T dy
void affine_backward_input(const Affine& a, std::span<const double> dy, std::vector<double>& dx) {
    const std::size_t out = a.out_width();
    const std::size_t in = a.in_width();
    dx.assign(in, 0.0);
    const double* w = a.weight.values().data();
    for (std::size_t o = 0; o < out; ++o) {
        const double g = dy[o];
        if (g == 0.0) {
            continue;
        }
        const double* wr = w + o * in;
        for (std::size_t i = 0; i < in; ++i) {
            dx[i] += g * wr[i];
        }
    }
}

// dW += dy x^T, db += dy
void affine_accumulate(Affine& grad, std::span<const double> dy, std::span<const double> x) {
    const std::size_t in = grad.in_width();
    for (std::size_t o = 0; o < grad.out_width(); ++o) {
        const double g = dy[o];
        grad.bias[o] += g;
        if (g == 0.0) {
            continue;
        }
        auto wr = grad.weight.row(o);
        for (std::size_t i = 0; i < in; ++i) {
            wr[i] += g * x[i];
        }
    }
}

std::vector<double> mean_rows(const Tensor& embedded) {
    const std::size_t T = embedded.dim(0);
    const std::size_t D = embedded.dim(1);
    std::vector<double> pooled(D, 0.0);
    for (std::size_t t = 0; t < T; ++t) {
        auto r = embedded.row(t);
        for (std::size_t d = 0; d < D; ++d) {
            pooled[d] += r[d];
        }
    }
    const double inv = 1.0 / static_cast<double>(T);
    for (double& v : pooled) {
        v *= inv;
    }
    return pooled;
}

std::vector<double> pool(const ModelConfig& config, const Tensor& embedded) {
    if (config.pooling == Pooling::flatten) {
        return {embedded.values().begin(), embedded.values().end()};
    }
    return mean_rows(embedded);
}

void check_embedded(const ModelConfig& config, const Tensor& embedded) {
    if (embedded.rank() != 2 || embedded.dim(0) != config.seq_len || embedded.dim(1) != config.embed_dim) {
        throw ShapeError("embedded input must be " + std::to_string(config.seq_len) + "x" +
                         std::to_string(config.embed_dim) + ", got " + embedded.shape_string());
    }
}

// tanh activations of every encoder layer for one input vector.
void run_encoder(const Network& net, std::span<const double> input, std::vector<std::vector<double>>& activations) {
    activations.resize(net.layers.size());
    std::span<const double> h = input;
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
        affine_apply(net.layers[l], h, activations[l]);
        for (double& v : activations[l]) {
            v = std::tanh(v);
        }
        h = activations[l];
    }
}

ForwardTrace trace_embedded(const ModelConfig& config, const Network& net, Readout readout, const Tensor& embedded) {
    ForwardTrace tr;
    tr.readout = readout;
    if (readout == Readout::pooled) {
        tr.inputs.push_back(pool(config, embedded));
    } else {
        const auto context = mean_rows(embedded);
        for (std::size_t t = 0; t < config.seq_len; ++t) {
            auto r = embedded.row(t);
            std::vector<double> in(r.begin(), r.end());
            for (std::size_t d = 0; d < in.size(); ++d) {
                in[d] += context[d];
            }
            tr.inputs.push_back(std::move(in));
        }
    }
    tr.activations.resize(tr.inputs.size());
    for (std::size_t k = 0; k < tr.inputs.size(); ++k) {
        run_encoder(net, tr.inputs[k], tr.activations[k]);
        const auto& top = net.layers.empty() ? tr.inputs[k] : tr.activations[k].back();
        tr.head_input.insert(tr.head_input.end(), top.begin(), top.end());
    }
    if (readout == Readout::pooled) {
        affine_apply(net.head, tr.head_input, tr.output);
        return tr;
    }
    const std::size_t width = tr.head_input.size() / tr.inputs.size();
    std::vector<double> one;
    for (std::size_t k = 0; k < tr.inputs.size(); ++k) {
        affine_apply(net.head, std::span<const double>(tr.head_input).subspan(k * width, width), one);
        tr.output.push_back(one[0]);
    }
    return tr;
}

// Backpropagates grad_output to the embedded sequence, optionally accumulating parameter grads.
Tensor backprop_trace(const ModelConfig& config, const Network& net, const ForwardTrace& tr,
                      std::span<const double> grad_output, Network* grads) {
    std::vector<double> grad_head_in;
    if (tr.readout == Readout::pooled) {
        if (grads) {
            affine_accumulate(grads->head, grad_output, tr.head_input);
        }
        affine_backward_input(net.head, grad_output, grad_head_in);
    } else {
        // One shared scalar head per position.
        const std::size_t width = tr.head_input.size() / tr.inputs.size();
        std::vector<double> chunk;
        for (std::size_t k = 0; k < tr.inputs.size(); ++k) {
            const std::span<const double> g(&grad_output[k], 1);
            if (grads) {
                affine_accumulate(grads->head, g, std::span<const double>(tr.head_input).subspan(k * width, width));
            }
            affine_backward_input(net.head, g, chunk);
            grad_head_in.insert(grad_head_in.end(), chunk.begin(), chunk.end());
        }
    }

    const std::size_t L = net.layers.size();
    const std::size_t top_width = grad_head_in.size() / tr.inputs.size();
    std::vector<std::vector<double>> grad_inputs(tr.inputs.size());
    for (std::size_t k = 0; k < tr.inputs.size(); ++k) {
        std::vector<double> delta(grad_head_in.begin() + static_cast<std::ptrdiff_t>(k * top_width),
                                  grad_head_in.begin() + static_cast<std::ptrdiff_t>((k + 1) * top_width));
        for (std::size_t l = L; l-- > 0;) {
            const auto& a = tr.activations[k][l];
            for (std::size_t j = 0; j < delta.size(); ++j) {
                delta[j] *= 1.0 - a[j] * a[j];
            }
            if (grads) {
                affine_accumulate(grads->layers[l], delta, l ? tr.activations[k][l - 1] : tr.inputs[k]);
            }
            std::vector<double> below;
            affine_backward_input(net.layers[l], delta, below);
            delta = std::move(below);
        }
        grad_inputs[k] = std::move(delta);
    }

    const std::size_t T = config.seq_len;
    const std::size_t D = config.embed_dim;
    Tensor g({T, D});
    if (tr.readout == Readout::pooled && config.pooling == Pooling::flatten) {
        std::copy(grad_inputs[0].begin(), grad_inputs[0].end(), g.data().begin());
        return g;
    }
    // Mean pooling spreads the pooled gradient evenly; per-position inputs also feed the context.
    std::vector<double> grad_context(D, 0.0);
    if (tr.readout == Readout::pooled) {
        grad_context = grad_inputs[0];
    } else {
        for (std::size_t t = 0; t < T; ++t) {
            auto r = g.row(t);
            for (std::size_t d = 0; d < D; ++d) {
                r[d] = grad_inputs[t][d];
                grad_context[d] += grad_inputs[t][d];
            }
        }
    }
    const double inv = 1.0 / static_cast<double>(T);
    for (std::size_t t = 0; t < T; ++t) {
        auto r = g.row(t);
        for (std::size_t d = 0; d < D; ++d) {
            r[d] += grad_context[d] * inv;
        }
    }
    return g;
}

template <class Net>
auto tensor_list(Net& net) {
    using Ptr = std::conditional_t<std::is_const_v<Net>, const Tensor*, Tensor*>;
    std::vector<Ptr> out{&net.embedding};
    for (auto& l : net.layers) {
        out.push_back(&l.weight);
        out.push_back(&l.bias);
    }
    out.push_back(&net.head.weight);
    out.push_back(&net.head.bias);
    return out;
}

}  // namespace

TextClassifier::TextClassifier(ModelConfig config, Network net) : config_(std::move(config)), net_(std::move(net)) {
    config_.validate();
    check_network(config_, net_, config_.num_classes, head_input_width(config_, Readout::pooled));
}

TextClassifier TextClassifier::zeros(const ModelConfig& config) {
    return TextClassifier(config,
                          zero_network(config, config.num_classes, head_input_width(config, Readout::pooled)));
}

TextClassifier TextClassifier::random(const ModelConfig& config, std::uint64_t seed) {
    return TextClassifier(
        config, random_network(config, config.num_classes, head_input_width(config, Readout::pooled), seed));
}

StudentExplainer::StudentExplainer(ModelConfig config, Network net) : config_(std::move(config)), net_(std::move(net)) {
    config_.validate();
    check_network(config_, net_, student_head_outputs(config_), head_input_width(config_, student_readout(config_)));
}

StudentExplainer StudentExplainer::random(const ModelConfig& config, std::uint64_t seed) {
    return StudentExplainer(
        config, random_network(config, student_head_outputs(config), head_input_width(config, student_readout(config)), seed));
}

Readout student_readout(const ModelConfig& config) {
    return config.pooling == Pooling::mean ? Readout::per_position : Readout::pooled;
}

std::size_t head_input_width(const ModelConfig& config, Readout) {
    return config.encoder_output_width();
}

std::size_t student_head_outputs(const ModelConfig& config) {
    return student_readout(config) == Readout::per_position ? 1 : config.seq_len;
}

void check_tokens(const ModelConfig& config, std::span<const Token> tokens) {
    if (tokens.size() != config.seq_len) {
        throw std::invalid_argument("token sequence has length " + std::to_string(tokens.size()) + ", model expects " +
                                    std::to_string(config.seq_len));
    }
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (tokens[i] >= config.vocab_size) {
            throw std::invalid_argument("token id " + std::to_string(tokens[i]) + " at position " +
                                        std::to_string(i) + " is outside the vocabulary of size " +
                                        std::to_string(config.vocab_size));
        }
    }
}

Tensor embed(const ModelConfig& config, const Network& net, std::span<const Token> tokens) {
    check_tokens(config, tokens);
    Tensor out({config.seq_len, config.embed_dim});
    for (std::size_t t = 0; t < tokens.size(); ++t) {
        auto src = net.embedding.row(tokens[t]);
        std::copy(src.begin(), src.end(), out.row(t).begin());
    }
    return out;
}

Tensor embed(const TextClassifier& f, std::span<const Token> tokens) {
    return embed(f.config(), f.network(), tokens);
}

std::vector<double> forward_embedded(const TextClassifier& f, const Tensor& embedded, CostLedger* ledger) {
    check_embedded(f.config(), embedded);
    std::vector<double> logits = trace_embedded(f.config(), f.network(), Readout::pooled, embedded).output;
    if (ledger) {
        ++ledger->forward_passes;
    }
    return logits;
}

std::vector<double> forward(const TextClassifier& f, std::span<const Token> tokens, CostLedger* ledger) {
    return forward_embedded(f, embed(f, tokens), ledger);
}

std::size_t argmax(std::span<const double> values) {
    if (values.empty()) {
        throw std::invalid_argument("argmax of an empty vector");
    }
    std::size_t best = 0;
    for (std::size_t i = 1; i < values.size(); ++i) {
        if (values[i] > values[best]) {
            best = i;
        }
    }
    return best;
}

std::size_t predict_class(const TextClassifier& f, std::span<const Token> tokens) {
    return argmax(forward(f, tokens));
}

Tensor input_embedding_gradient(const TextClassifier& f, const Tensor& embedded, std::size_t target,
                                CostLedger* ledger) {
    const ModelConfig& config = f.config();
    if (target >= config.num_classes) {
        throw std::invalid_argument("target class " + std::to_string(target) + " >= number of classes " +
                                    std::to_string(config.num_classes));
    }
    check_embedded(config, embedded);
    const ForwardTrace tr = trace_embedded(config, f.network(), Readout::pooled, embedded);
    std::vector<double> grad_out(config.num_classes, 0.0);
    grad_out[target] = 1.0;
    Tensor grad = backprop_trace(config, f.network(), tr, grad_out, nullptr);
    if (!grad.all_finite()) {
        throw NumericError("input_embedding_gradient: non-finite gradient for target " + std::to_string(target) +
                           " (input finite: " + (embedded.all_finite() ? "yes" : "no") + ")");
    }
    if (ledger) {
        ++ledger->forward_passes;
        ++ledger->backward_passes;
    }
    return grad;
}

std::vector<double> student_forward(const StudentExplainer& e, std::span<const Token> tokens) {
    const ModelConfig& config = e.config();
    return trace_embedded(config, e.network(), student_readout(config), embed(config, e.network(), tokens)).output;
}

StudentExplainer init_student_from_classifier(const TextClassifier& f, std::uint64_t head_seed) {
    const ModelConfig& config = f.config();
    Network net;
    net.embedding = f.network().embedding;
    net.layers = f.network().layers;
    net.head = make_affine(student_head_outputs(config), head_input_width(config, student_readout(config)));
    SeededRng rng(head_seed);
    randomize_affine(net.head, rng);
    return StudentExplainer(config, std::move(net));
}

ForwardTrace trace_forward(const ModelConfig& config, const Network& net, Readout readout,
                           std::span<const Token> tokens) {
    ForwardTrace tr = trace_embedded(config, net, readout, embed(config, net, tokens));
    tr.tokens.assign(tokens.begin(), tokens.end());
    return tr;
}

void accumulate_parameter_gradients(const ModelConfig& config, const Network& net, const ForwardTrace& trace,
                                    std::span<const double> grad_output, Network& grads) {
    const Tensor grad_embedded = backprop_trace(config, net, trace, grad_output, &grads);
    for (std::size_t t = 0; t < trace.tokens.size(); ++t) {
        auto src = grad_embedded.row(t);
        auto dst = grads.embedding.row(trace.tokens[t]);
        for (std::size_t d = 0; d < src.size(); ++d) {
            dst[d] += src[d];
        }
    }
}

Network zeros_like(const Network& net) {
    Network z;
    z.embedding = Tensor(net.embedding.shape());
    for (const Affine& l : net.layers) {
        z.layers.push_back(Affine{Tensor(l.weight.shape()), Tensor(l.bias.shape())});
    }
    z.head = Affine{Tensor(net.head.weight.shape()), Tensor(net.head.bias.shape())};
    return z;
}

MomentumSgd::MomentumSgd(const Network& like, double learning_rate, double momentum)
    : velocity_(zeros_like(like)), learning_rate_(learning_rate), momentum_(momentum) {}

void MomentumSgd::step(Network& params, const Network& grads, double grad_scale) {
    const double lr = learning_rate_ * grad_scale;
    auto p = tensor_list(params);
    auto g = tensor_list(grads);
    auto v = tensor_list(velocity_);
    for (std::size_t k = 0; k < p.size(); ++k) {
        auto pd = p[k]->data();
        auto gd = g[k]->values();
        auto vd = v[k]->data();
        for (std::size_t i = 0; i < pd.size(); ++i) {
            vd[i] = momentum_ * vd[i] - lr * gd[i];
            pd[i] += vd[i];
        }
    }
}

std::vector<ClassifierEpoch> train_classifier(TextClassifier& f, std::span<const LabeledSequence> train,
                                              std::span<const LabeledSequence> validation,
                                              const ClassifierTrainConfig& config) {
    if (train.empty()) {
        throw std::invalid_argument("train_classifier: empty training set");
    }
    if (config.batch_size == 0 || !(config.learning_rate > 0.0)) {
        throw std::invalid_argument("train_classifier: batch size and learning rate must be positive");
    }
    const ModelConfig& mc = f.config();
    for (const auto& ex : train) {
        check_tokens(mc, ex.tokens);
        if (ex.label >= mc.num_classes) {
            throw std::invalid_argument("train_classifier: label out of range");
        }
    }
    auto accuracy = [&](const TextClassifier& model) {
        if (validation.empty()) {
            return 0.0;
        }
        std::size_t hits = 0;
        for (const auto& ex : validation) {
            hits += predict_class(model, ex.tokens) == ex.label;
        }
        return static_cast<double>(hits) / static_cast<double>(validation.size());
    };

    SeededRng rng(config.seed);
    MomentumSgd opt(f.network(), config.learning_rate, config.momentum);
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::vector<ClassifierEpoch> history;
    Network best = f.network();
    double best_acc = -1.0;

    for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
        for (std::size_t i = order.size(); i > 1; --i) {
            std::swap(order[i - 1], order[rng.uniform_below(i)]);
        }
        double loss_sum = 0.0;
        for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
            const std::size_t end = std::min(order.size(), start + config.batch_size);
            Network grads = zeros_like(f.network());
            for (std::size_t b = start; b < end; ++b) {
                const auto& ex = train[order[b]];
                const ForwardTrace tr = trace_forward(mc, f.network(), Readout::pooled, ex.tokens);
                const double mx = *std::max_element(tr.output.begin(), tr.output.end());
                double z = 0.0;
                for (double v : tr.output) {
                    z += std::exp(v - mx);
                }
                std::vector<double> g(tr.output.size());
                for (std::size_t c = 0; c < g.size(); ++c) {
                    g[c] = std::exp(tr.output[c] - mx) / z - (c == ex.label ? 1.0 : 0.0);
                }
                loss_sum += -(tr.output[ex.label] - mx - std::log(z));
                accumulate_parameter_gradients(mc, f.network(), tr, g, grads);
            }
            opt.step(f.network(), grads, 1.0 / static_cast<double>(end - start));
        }
        const double train_loss = loss_sum / static_cast<double>(train.size());
        if (!std::isfinite(train_loss)) {
            throw NumericError("classifier training diverged at epoch " + std::to_string(epoch));
        }
        const double acc = accuracy(f);
        history.push_back({epoch, train_loss, acc});
        if (acc > best_acc) {
            best_acc = acc;
            best = f.network();
        }
    }
    if (!history.empty() && !validation.empty()) {
        f.network() = std::move(best);
    }
    return history;
}

}  // namespace attrib
