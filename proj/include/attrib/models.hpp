#pragma once

// The downstream text classifier and the student explainer that regresses its attributions.
//
// Both share one layout: an embedding table, an encoder of affine+tanh layers fed with either
// the mean-pooled or the flattened embedded sequence, and an affine head. The classifier head
// has C outputs (logits). The student emits T scores: a flatten student has a T-output head on the
// pooled state, a mean-pool student runs its encoder per position and shares a scalar head.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "attrib/numerics.hpp"

namespace attrib {

using Token = std::uint32_t;

enum class Pooling { mean, flatten };

std::string to_string(Pooling p);
Pooling pooling_from_string(const std::string& s);

struct ModelConfig {
    Pooling pooling = Pooling::mean;
    std::size_t vocab_size = 100;
    std::size_t seq_len = 20;
    std::size_t embed_dim = 16;
    std::vector<std::size_t> hidden{32, 32};
    std::size_t num_classes = 2;

    std::size_t encoder_input_width() const;
    std::size_t encoder_output_width() const;
    void validate() const;

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct Affine {
    Tensor weight;  // out x in
    Tensor bias;    // [out]

    std::size_t in_width() const { return weight.dim(1); }
    std::size_t out_width() const { return weight.dim(0); }

    friend bool operator==(const Affine&, const Affine&) = default;
};

struct Network {
    Tensor embedding;            // vocab x embed_dim
    std::vector<Affine> layers;  // encoder, tanh after each
    Affine head;

    friend bool operator==(const Network&, const Network&) = default;
};

/// Number of model evaluations charged to one explanation.
struct CostLedger {
    enum class Mode { actual, paper };

    std::uint64_t forward_passes = 0;
    std::uint64_t backward_passes = 0;
    Mode mode = Mode::actual;

    std::uint64_t total() const { return forward_passes + backward_passes; }
    friend bool operator==(const CostLedger&, const CostLedger&) = default;
};

std::string to_string(CostLedger::Mode m);
CostLedger::Mode accounting_from_string(const std::string& s);

class TextClassifier {
public:
    TextClassifier(ModelConfig config, Network net);

    /// All parameters zero.
    static TextClassifier zeros(const ModelConfig& config);
    /// Scaled-normal weights, zero biases.
    static TextClassifier random(const ModelConfig& config, std::uint64_t seed);

    const ModelConfig& config() const { return config_; }
    const Network& network() const { return net_; }
    Network& network() { return net_; }

private:
    ModelConfig config_;
    Network net_;
};

class StudentExplainer {
public:
    StudentExplainer(ModelConfig config, Network net);

    /// Fresh student with a random backbone; used as the no-copy baseline.
    static StudentExplainer random(const ModelConfig& config, std::uint64_t seed);

    const ModelConfig& config() const { return config_; }
    const Network& network() const { return net_; }
    Network& network() { return net_; }

private:
    ModelConfig config_;
    Network net_;
};

/// Rejects sequences of the wrong length or with ids outside the vocabulary.
void check_tokens(const ModelConfig& config, std::span<const Token> tokens);

Tensor embed(const ModelConfig& config, const Network& net, std::span<const Token> tokens);
Tensor embed(const TextClassifier& f, std::span<const Token> tokens);

/// Logits of the classifier on an already embedded sequence (T x embed_dim).
std::vector<double> forward_embedded(const TextClassifier& f, const Tensor& embedded, CostLedger* ledger = nullptr);
std::vector<double> forward(const TextClassifier& f, std::span<const Token> tokens, CostLedger* ledger = nullptr);

/// Argmax with ties going to the lowest index.
std::size_t argmax(std::span<const double> values);
std::size_t predict_class(const TextClassifier& f, std::span<const Token> tokens);

/// d logit[target] / d embedded, T x embed_dim. Charges one forward and one backward pass.
Tensor input_embedding_gradient(const TextClassifier& f, const Tensor& embedded, std::size_t target,
                                CostLedger* ledger = nullptr);

std::vector<double> student_forward(const StudentExplainer& e, std::span<const Token> tokens);

/// Copies embedding and encoder from f; the head is drawn from head_seed.
StudentExplainer init_student_from_classifier(const TextClassifier& f, std::uint64_t head_seed);

// ---- training support -------------------------------------------------------------------

/// How the head reads the encoder.
enum class Readout {
    pooled,        // encoder runs once on the pooled (mean or flattened) sequence
    per_position,  // encoder runs on e_t + mean(e) for every position t; one scalar head shared by all positions
};

/// Students of mean-pool classifiers read per position (a pooled state carries no positions);
/// flatten students read the pooled state like their classifier.
Readout student_readout(const ModelConfig& config);
std::size_t head_input_width(const ModelConfig& config, Readout readout);
/// seq_len for a pooled student readout, 1 for the shared per-position head.
std::size_t student_head_outputs(const ModelConfig& config);

/// Activations of one forward pass, kept for backpropagation.
struct ForwardTrace {
    Readout readout = Readout::pooled;
    std::vector<Token> tokens;
    std::vector<std::vector<double>> inputs;                   // encoder inputs: 1 or T
    std::vector<std::vector<std::vector<double>>> activations;  // [input][layer], tanh outputs
    std::vector<double> head_input;
    std::vector<double> output;
};

ForwardTrace trace_forward(const ModelConfig& config, const Network& net, Readout readout,
                           std::span<const Token> tokens);

/// Accumulates parameter gradients of <grad_output, output> into grads (same shapes as net).
void accumulate_parameter_gradients(const ModelConfig& config, const Network& net, const ForwardTrace& trace,
                                    std::span<const double> grad_output, Network& grads);

/// Network of zeros shaped like net.
Network zeros_like(const Network& net);

/// Plain mini-batch gradient descent with heavy-ball momentum: v = mu v - lr g; p += v.
class MomentumSgd {
public:
    MomentumSgd(const Network& like, double learning_rate, double momentum);
    /// grads are multiplied by grad_scale (typically 1 / batch size) before the update.
    void step(Network& params, const Network& grads, double grad_scale);

private:
    Network velocity_;
    double learning_rate_;
    double momentum_;
};

/// Softmax cross-entropy training of the classifier with momentum SGD.
struct ClassifierTrainConfig {
    double learning_rate = 0.05;
    double momentum = 0.9;
    std::size_t batch_size = 32;
    std::size_t epochs = 40;
    std::uint64_t seed = 0;
};

struct LabeledSequence {
    std::span<const Token> tokens;
    std::size_t label;
};

struct ClassifierEpoch {
    std::size_t epoch;
    double train_loss;
    double val_accuracy;
};

/// Trains in place and keeps the parameters of the epoch with the best validation accuracy.
std::vector<ClassifierEpoch> train_classifier(TextClassifier& f, std::span<const LabeledSequence> train,
                                              std::span<const LabeledSequence> validation,
                                              const ClassifierTrainConfig& config);

}  // namespace attrib
