#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "gridshield/dataset.hpp"
#include "gridshield/graph.hpp"
#include "gridshield/serialize.hpp"
#include "gridshield/tensor.hpp"

namespace gridshield {

enum class LayerKind { conv, pool, dense, dropout, flatten };
enum class Activation { none, relu, sigmoid };

struct LayerSpec {
    LayerKind kind = LayerKind::dense;
    int units = 0;   // conv filters or dense units
    int kernel = 3;
    int stride = 1;
    int pool = 2;
    Activation activation = Activation::none;
    float rate = 0.0f;  // dropout

    static LayerSpec make_conv(int filters, int kernel, int stride, Activation act);
    static LayerSpec make_pool(int pool);
    static LayerSpec make_dense(int units, Activation act);
    static LayerSpec make_dropout(float rate);
    static LayerSpec make_flatten();
};

struct ArchSpec {
    std::vector<LayerSpec> layers;
    int input_width = 48;
    int in_channels = 1;

    // (channels, length) after each layer; dense outputs are (units, 1).
    // Throws shape_error when the arithmetic underflows.
    std::vector<std::pair<int, int>> trace() const;
    // shape-valid and ends in a single sigmoid unit
    void validate() const;

    std::string to_json() const;
    static ArchSpec from_json(const std::string& text);
};

// The detector from the simulation settings: conv128(k3,s1) -> conv256 ->
// conv256 -> maxpool2 -> conv512 -> flatten -> dense1024 -> dropout0.5 ->
// dense1 sigmoid.
ArchSpec reference_arch(int input_width = 48, int in_channels = 1);

struct TrainConfig {
    int epochs = 30;
    int batch_size = 64;
    float lr = 1e-3f;
    int patience = 10;
    std::uint64_t seed = 0;

    void validate() const;  // epochs >= 0, the rest positive
};

struct Metrics {
    double accuracy = 0.0;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    double adr = 0.0;  // fraction of adversarial windows classified malicious
};

struct TrainLog {
    std::vector<double> train_loss;
    std::vector<double> val_loss;
    std::vector<double> val_accuracy;
    int best_epoch = -1;
    std::vector<std::string> warnings;
};

// Raised when the training loss goes non-finite; carries the last epoch that
// completed with a finite loss.
struct TrainingDiverged : std::runtime_error {
    int last_finite_epoch;
    explicit TrainingDiverged(int epoch)
        : std::runtime_error("training diverged (loss is not finite) after epoch " +
                             std::to_string(epoch)),
          last_finite_epoch(epoch) {}
};

// A weighted network. Parameters are kept in float32; for quantized models
// the values lie exactly on the int8 grid (value = scale * q) and serialize
// as one byte per weight plus the per-tensor scale.
class Model {
  public:
    ArchSpec arch;
    std::vector<std::shared_ptr<Tensor>> params;  // layerN.weight / layerN.bias order
    std::vector<std::string> param_names;
    std::vector<char> param_is_quantized;
    std::vector<float> param_scale;
    float input_mean = 0.0f;
    float input_stdev = 1.0f;

    static Model init(const ArchSpec& arch, std::uint64_t seed, float mean = 0.0f,
                      float stdev = 1.0f);
    Model clone() const;

    // param indices (weight, bias) of the i-th parameterized layer, or -1
    int param_index(int layer, bool bias) const;
    std::size_t weight_count() const;
    bool quantized() const;

    struct ForwardNodes {
        Graph::NodeId input = -1;
        Graph::NodeId logit = -1;  // pre-sigmoid output
        Graph::NodeId prob = -1;
        // post-activation output node per layer index (conv/dense layers)
        std::vector<std::pair<int, Graph::NodeId>> layer_outputs;
    };
    // x is standardized input, row-major [batch x (in_channels*W)]
    ForwardNodes forward(Graph& g, const float* x, int batch, bool train,
                         std::uint64_t dropout_seed, bool input_grad = false) const;

    // probabilities for standardized inputs, chunked internally
    std::vector<float> predict_std(const float* x, int count, int batch = 64) const;
    // standardizes raw windows with the model's training stats first
    std::vector<float> predict(const std::vector<MeterWindow>& windows, int batch = 64) const;

    std::vector<WeightRecord> to_records() const;
    static Model from_records(const std::vector<WeightRecord>& records, const ArchSpec& arch,
                              float mean, float stdev);

    std::size_t serialized_size() const;
    void save(const std::string& gsw_path, const std::string& arch_json_path) const;
    static Model load(const std::string& gsw_path, const std::string& arch_json_path);
};

// Trains with Adam and early stopping on validation loss; returns the
// best-validation-loss checkpoint. epochs == 0 returns the initialized model.
Model train(const ArchSpec& arch, const std::vector<MeterWindow>& d_train,
            const std::vector<MeterWindow>& d_val, const TrainConfig& cfg, float mean,
            float stdev, TrainLog* log = nullptr);

// Threshold 0.5 on the sigmoid output. ADR is computed over windows with
// attack provenance; without any it falls back to recall on the malicious
// class. Throws on an empty dataset.
Metrics evaluate(const Model& m, const std::vector<MeterWindow>& d, int batch = 64);

Metrics metrics_from_counts(long tp, long fp, long fn, long tn);

}  // namespace gridshield
