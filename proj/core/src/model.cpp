#include "gridshield/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <nlohmann/json.hpp>

#include "gridshield/optim.hpp"

namespace gridshield {

using json = nlohmann::json;

LayerSpec LayerSpec::make_conv(int filters, int kernel, int stride, Activation act) {
    LayerSpec l;
    l.kind = LayerKind::conv;
    l.units = filters;
    l.kernel = kernel;
    l.stride = stride;
    l.activation = act;
    return l;
}
LayerSpec LayerSpec::make_pool(int pool) {
    LayerSpec l;
    l.kind = LayerKind::pool;
    l.pool = pool;
    return l;
}
LayerSpec LayerSpec::make_dense(int units, Activation act) {
    LayerSpec l;
    l.kind = LayerKind::dense;
    l.units = units;
    l.activation = act;
    return l;
}
LayerSpec LayerSpec::make_dropout(float rate) {
    LayerSpec l;
    l.kind = LayerKind::dropout;
    l.rate = rate;
    return l;
}
LayerSpec LayerSpec::make_flatten() {
    LayerSpec l;
    l.kind = LayerKind::flatten;
    return l;
}

std::vector<std::pair<int, int>> ArchSpec::trace() const {
    std::vector<std::pair<int, int>> out;
    int ch = in_channels, len = input_width;
    bool flat = false;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const LayerSpec& l = layers[i];
        switch (l.kind) {
            case LayerKind::conv:
                if (flat) throw shape_error("arch: conv after flatten at layer " +
                                            std::to_string(i));
                if (len < l.kernel)
                    throw shape_error("arch: conv at layer " + std::to_string(i) + " input length " +
                                      std::to_string(len) + " < kernel " + std::to_string(l.kernel));
                len = (len - l.kernel) / l.stride + 1;
                ch = l.units;
                break;
            case LayerKind::pool:
                if (flat || len < l.pool)
                    throw shape_error("arch: pool at layer " + std::to_string(i) +
                                      " input length " + std::to_string(len) + " < pool " +
                                      std::to_string(l.pool));
                len = len / l.pool;
                break;
            case LayerKind::flatten:
                len = ch * len;
                ch = 1;
                flat = true;
                break;
            case LayerKind::dense:
                if (!flat && !(ch == 1 && out.empty()))
                    throw shape_error("arch: dense without flatten at layer " + std::to_string(i));
                if (!flat) flat = true, len = ch * len;
                ch = 1;
                len = l.units;
                break;
            case LayerKind::dropout:
                break;
        }
        if (len <= 0)
            throw shape_error("arch: layer " + std::to_string(i) + " output length underflow");
        out.emplace_back(ch, l.kind == LayerKind::dense ? 1 : len);
        if (l.kind == LayerKind::dense) out.back() = {l.units, 1}, len = l.units;
    }
    return out;
}

void ArchSpec::validate() const {
    if (layers.empty()) throw shape_error("arch: no layers");
    trace();
    const LayerSpec& last = layers.back();
    if (last.kind != LayerKind::dense || last.units != 1 ||
        last.activation != Activation::sigmoid)
        throw shape_error("arch: final layer must be dense(1, sigmoid)");
}

ArchSpec reference_arch(int input_width, int in_channels) {
    ArchSpec a;
    a.input_width = input_width;
    a.in_channels = in_channels;
    a.layers = {
        LayerSpec::make_conv(128, 3, 1, Activation::relu),
        LayerSpec::make_conv(256, 3, 1, Activation::relu),
        LayerSpec::make_conv(256, 3, 1, Activation::relu),
        LayerSpec::make_pool(2),
        LayerSpec::make_conv(512, 3, 1, Activation::relu),
        LayerSpec::make_flatten(),
        LayerSpec::make_dense(1024, Activation::relu),
        LayerSpec::make_dropout(0.5f),
        LayerSpec::make_dense(1, Activation::sigmoid),
    };
    return a;
}

namespace {

const char* kind_name(LayerKind k) {
    switch (k) {
        case LayerKind::conv: return "conv";
        case LayerKind::pool: return "pool";
        case LayerKind::dense: return "dense";
        case LayerKind::dropout: return "dropout";
        case LayerKind::flatten: return "flatten";
    }
    return "?";
}

LayerKind parse_kind(const std::string& s) {
    if (s == "conv") return LayerKind::conv;
    if (s == "pool") return LayerKind::pool;
    if (s == "dense") return LayerKind::dense;
    if (s == "dropout") return LayerKind::dropout;
    if (s == "flatten") return LayerKind::flatten;
    throw std::invalid_argument("arch: unknown layer kind " + s);
}

const char* act_name(Activation a) {
    switch (a) {
        case Activation::none: return "none";
        case Activation::relu: return "relu";
        case Activation::sigmoid: return "sigmoid";
    }
    return "?";
}

Activation parse_act(const std::string& s) {
    if (s == "none") return Activation::none;
    if (s == "relu") return Activation::relu;
    if (s == "sigmoid") return Activation::sigmoid;
    throw std::invalid_argument("arch: unknown activation " + s);
}

}  // namespace

std::string ArchSpec::to_json() const {
    json j;
    j["input_width"] = input_width;
    j["in_channels"] = in_channels;
    j["layers"] = json::array();
    for (const LayerSpec& l : layers) {
        json lj;
        lj["kind"] = kind_name(l.kind);
        switch (l.kind) {
            case LayerKind::conv:
                lj["filters"] = l.units;
                lj["kernel"] = l.kernel;
                lj["stride"] = l.stride;
                lj["activation"] = act_name(l.activation);
                break;
            case LayerKind::pool: lj["pool"] = l.pool; break;
            case LayerKind::dense:
                lj["units"] = l.units;
                lj["activation"] = act_name(l.activation);
                break;
            case LayerKind::dropout: lj["rate"] = l.rate; break;
            case LayerKind::flatten: break;
        }
        j["layers"].push_back(lj);
    }
    return j.dump(2);
}

ArchSpec ArchSpec::from_json(const std::string& text) {
    json j = json::parse(text);
    ArchSpec a;
    a.input_width = j.at("input_width").get<int>();
    a.in_channels = j.at("in_channels").get<int>();
    for (const json& lj : j.at("layers")) {
        const LayerKind kind = parse_kind(lj.at("kind").get<std::string>());
        switch (kind) {
            case LayerKind::conv:
                a.layers.push_back(LayerSpec::make_conv(
                    lj.at("filters").get<int>(), lj.at("kernel").get<int>(),
                    lj.at("stride").get<int>(), parse_act(lj.at("activation").get<std::string>())));
                break;
            case LayerKind::pool:
                a.layers.push_back(LayerSpec::make_pool(lj.at("pool").get<int>()));
                break;
            case LayerKind::dense:
                a.layers.push_back(LayerSpec::make_dense(
                    lj.at("units").get<int>(), parse_act(lj.at("activation").get<std::string>())));
                break;
            case LayerKind::dropout:
                a.layers.push_back(LayerSpec::make_dropout(lj.at("rate").get<float>()));
                break;
            case LayerKind::flatten:
                a.layers.push_back(LayerSpec::make_flatten());
                break;
        }
    }
    return a;
}

void TrainConfig::validate() const {
    if (epochs < 0) throw std::invalid_argument("TrainConfig: epochs must be >= 0");
    if (batch_size < 1 || lr <= 0.0f || patience < 1)
        throw std::invalid_argument("TrainConfig: batch size, lr and patience must be positive");
}

Model Model::init(const ArchSpec& arch, std::uint64_t seed, float mean, float stdev) {
    arch.validate();
    Model m;
    m.arch = arch;
    m.input_mean = mean;
    m.input_stdev = stdev;

    int ch = arch.in_channels, len = arch.input_width;
    bool flat = false;
    int param_layer = 0;
    for (std::size_t i = 0; i < arch.layers.size(); ++i) {
        const LayerSpec& l = arch.layers[i];
        if (l.kind == LayerKind::conv) {
            auto w = std::make_shared<Tensor>(std::vector<int>{ch, l.kernel, l.units});
            const float fan_in = static_cast<float>(ch * l.kernel);
            fill_normal(*w, std::sqrt(2.0f / fan_in), mix_seed(seed, 100 + i));
            auto b = std::make_shared<Tensor>(std::vector<int>{l.units});
            m.params.push_back(std::move(w));
            m.param_names.push_back("layer" + std::to_string(i) + ".weight");
            m.params.push_back(std::move(b));
            m.param_names.push_back("layer" + std::to_string(i) + ".bias");
            len = (len - l.kernel) / l.stride + 1;
            ch = l.units;
            ++param_layer;
        } else if (l.kind == LayerKind::dense) {
            const int in_w = flat ? len : ch * len;
            auto w = std::make_shared<Tensor>(std::vector<int>{in_w, l.units});
            fill_normal(*w, std::sqrt(2.0f / static_cast<float>(in_w)), mix_seed(seed, 100 + i));
            auto b = std::make_shared<Tensor>(std::vector<int>{l.units});
            m.params.push_back(std::move(w));
            m.param_names.push_back("layer" + std::to_string(i) + ".weight");
            m.params.push_back(std::move(b));
            m.param_names.push_back("layer" + std::to_string(i) + ".bias");
            flat = true;
            len = l.units;
            ++param_layer;
        } else if (l.kind == LayerKind::pool) {
            len /= l.pool;
        } else if (l.kind == LayerKind::flatten) {
            len = ch * len;
            ch = 1;
            flat = true;
        }
    }
    m.param_is_quantized.assign(m.params.size(), 0);
    m.param_scale.assign(m.params.size(), 1.0f);
    return m;
}

Model Model::clone() const {
    Model m = *this;
    m.params.clear();
    for (const auto& p : params) m.params.push_back(std::make_shared<Tensor>(*p));
    return m;
}

int Model::param_index(int layer, bool bias) const {
    const std::string want = "layer" + std::to_string(layer) + (bias ? ".bias" : ".weight");
    for (std::size_t i = 0; i < param_names.size(); ++i)
        if (param_names[i] == want) return static_cast<int>(i);
    return -1;
}

std::size_t Model::weight_count() const {
    std::size_t n = 0;
    for (const auto& p : params) n += p->numel();
    return n;
}

bool Model::quantized() const {
    for (char q : param_is_quantized)
        if (q) return true;
    return false;
}

Model::ForwardNodes Model::forward(Graph& g, const float* x, int batch, bool train,
                                   std::uint64_t dropout_seed, bool input_grad) const {
    ForwardNodes out;
    Tensor input({batch, arch.in_channels, arch.input_width});
    std::copy(x, x + input.numel(), input.data.begin());
    out.input = g.leaf(std::move(input), input_grad);

    Graph::NodeId cur = out.input;
    bool flat = false;
    for (std::size_t i = 0; i < arch.layers.size(); ++i) {
        const LayerSpec& l = arch.layers[i];
        switch (l.kind) {
            case LayerKind::conv: {
                const int wi = param_index(static_cast<int>(i), false);
                const int bi = param_index(static_cast<int>(i), true);
                Graph::NodeId w = g.leaf(params[wi], true);
                Graph::NodeId b = g.leaf(params[bi], true);
                cur = g.conv1d(cur, w, b, l.kernel, l.stride);
                break;
            }
            case LayerKind::pool:
                cur = g.maxpool1d(cur, l.pool);
                break;
            case LayerKind::flatten:
                cur = g.flatten(cur);
                flat = true;
                break;
            case LayerKind::dense: {
                if (!flat) {
                    cur = g.flatten(cur);
                    flat = true;
                }
                const int wi = param_index(static_cast<int>(i), false);
                const int bi = param_index(static_cast<int>(i), true);
                Graph::NodeId w = g.leaf(params[wi], true);
                Graph::NodeId b = g.leaf(params[bi], true);
                cur = g.dense(cur, w, b);
                break;
            }
            case LayerKind::dropout:
                cur = g.dropout(cur, l.rate, train, mix_seed(dropout_seed, 7000 + i));
                break;
        }
        if (l.kind == LayerKind::conv || l.kind == LayerKind::dense) {
            if (i + 1 == arch.layers.size() && l.activation == Activation::sigmoid) {
                out.logit = cur;
                cur = g.sigmoid(cur);
            } else if (l.activation == Activation::relu) {
                cur = g.relu(cur);
            } else if (l.activation == Activation::sigmoid) {
                cur = g.sigmoid(cur);
            }
            out.layer_outputs.emplace_back(static_cast<int>(i), cur);
        }
    }
    out.prob = cur;
    if (out.logit < 0) out.logit = cur;
    return out;
}

std::vector<float> Model::predict_std(const float* x, int count, int batch) const {
    std::vector<float> probs;
    probs.reserve(count);
    const int width = arch.in_channels * arch.input_width;
    for (int start = 0; start < count; start += batch) {
        const int n = std::min(batch, count - start);
        Graph g;
        ForwardNodes fn = forward(g, x + static_cast<std::size_t>(start) * width, n, false, 0);
        const Tensor& p = g.value(fn.prob);
        probs.insert(probs.end(), p.data.begin(), p.data.end());
    }
    return probs;
}

std::vector<float> Model::predict(const std::vector<MeterWindow>& windows, int batch) const {
    if (windows.empty()) return {};
    const int width = arch.in_channels * arch.input_width;
    for (const MeterWindow& w : windows)
        if (static_cast<int>(w.values.size()) != width)
            throw shape_error("predict: window width " + std::to_string(w.values.size()) +
                              " != model input width " + std::to_string(width));
    const std::vector<float> x = standardize(windows, input_mean, input_stdev);
    return predict_std(x.data(), static_cast<int>(windows.size()), batch);
}

std::vector<WeightRecord> Model::to_records() const {
    std::vector<WeightRecord> records;
    records.reserve(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
        WeightRecord r;
        r.name = param_names[i];
        r.dims = params[i]->shape;
        if (param_is_quantized[i]) {
            r.quantized = true;
            r.scale = param_scale[i];
            r.q8.resize(params[i]->numel());
            const float inv = r.scale != 0.0f ? 1.0f / r.scale : 0.0f;
            for (std::size_t j = 0; j < r.q8.size(); ++j) {
                const long q = std::lround(params[i]->data[j] * inv);
                r.q8[j] = static_cast<std::int8_t>(std::clamp(q, -128L, 127L));
            }
        } else {
            r.f32 = params[i]->data;
        }
        records.push_back(std::move(r));
    }
    return records;
}

Model Model::from_records(const std::vector<WeightRecord>& records, const ArchSpec& arch,
                          float mean, float stdev) {
    Model m = Model::init(arch, 0, mean, stdev);
    if (records.size() != m.params.size())
        throw std::runtime_error("model load: record count " + std::to_string(records.size()) +
                                 " != parameter count " + std::to_string(m.params.size()));
    for (std::size_t i = 0; i < records.size(); ++i) {
        const WeightRecord& r = records[i];
        if (r.name != m.param_names[i])
            throw std::runtime_error("model load: unexpected record " + r.name + ", expected " +
                                     m.param_names[i]);
        if (r.dims != m.params[i]->shape)
            throw std::runtime_error("model load: shape mismatch for " + r.name);
        if (r.quantized) {
            m.param_is_quantized[i] = 1;
            m.param_scale[i] = r.scale;
            for (std::size_t j = 0; j < r.q8.size(); ++j)
                m.params[i]->data[j] = r.scale * static_cast<float>(r.q8[j]);
        } else {
            m.params[i]->data = r.f32;
        }
    }
    return m;
}

std::size_t Model::serialized_size() const { return serialize_gsw(to_records()).size(); }

void Model::save(const std::string& gsw_path, const std::string& arch_json_path) const {
    write_gsw_file(gsw_path, to_records());
    json j = json::parse(arch.to_json());
    j["input_mean"] = input_mean;
    j["input_stdev"] = input_stdev;
    std::ofstream f(arch_json_path);
    if (!f) throw std::runtime_error("model save: cannot open " + arch_json_path);
    f << j.dump(2) << "\n";
}

Model Model::load(const std::string& gsw_path, const std::string& arch_json_path) {
    std::ifstream f(arch_json_path);
    if (!f) throw std::runtime_error("model load: cannot open " + arch_json_path);
    json j = json::parse(f);
    const ArchSpec arch = ArchSpec::from_json(j.dump());
    const float mean = j.at("input_mean").get<float>();
    const float stdev = j.at("input_stdev").get<float>();
    return from_records(read_gsw_file(gsw_path), arch, mean, stdev);
}

namespace {

double mean_bce(const std::vector<float>& probs, const std::vector<float>& labels) {
    double acc = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        const double p = std::clamp(probs[i], 1e-6f, 1.0f - 1e-6f);
        acc -= labels[i] * std::log(p) + (1.0 - labels[i]) * std::log(1.0 - p);
    }
    return acc / std::max<std::size_t>(1, probs.size());
}

double accuracy_of(const std::vector<float>& probs, const std::vector<float>& labels) {
    std::size_t ok = 0;
    for (std::size_t i = 0; i < probs.size(); ++i)
        ok += ((probs[i] >= 0.5f) == (labels[i] >= 0.5f)) ? 1 : 0;
    return static_cast<double>(ok) / std::max<std::size_t>(1, probs.size());
}

}  // namespace

Model train(const ArchSpec& arch, const std::vector<MeterWindow>& d_train,
            const std::vector<MeterWindow>& d_val, const TrainConfig& cfg, float mean,
            float stdev, TrainLog* log) {
    cfg.validate();
    arch.validate();
    if (d_train.empty()) throw std::invalid_argument("train: empty training set");

    Model model = Model::init(arch, cfg.seed, mean, stdev);
    TrainLog local_log;
    TrainLog& tl = log ? *log : local_log;

    const int width = arch.in_channels * arch.input_width;
    const std::vector<float> x_train = standardize(d_train, mean, stdev);
    std::vector<float> y_train(d_train.size());
    for (std::size_t i = 0; i < d_train.size(); ++i) y_train[i] = static_cast<float>(d_train[i].label);

    std::vector<float> x_val;
    std::vector<float> y_val;
    if (!d_val.empty()) {
        x_val = standardize(d_val, mean, stdev);
        y_val.resize(d_val.size());
        for (std::size_t i = 0; i < d_val.size(); ++i) y_val[i] = static_cast<float>(d_val[i].label);
    }

    const double init_train_acc =
        accuracy_of(model.predict_std(x_train.data(), static_cast<int>(d_train.size()),
                                      cfg.batch_size),
                    y_train);

    if (cfg.epochs == 0) {
        tl.best_epoch = -1;
        return model;
    }

    AdamState adam;
    std::vector<std::shared_ptr<Tensor>> trainable = model.params;

    double best_val = std::numeric_limits<double>::infinity();
    std::vector<std::vector<float>> best_params;
    int best_epoch = -1, since_best = 0;

    std::vector<std::size_t> order(d_train.size());
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng shuffle_rng = make_rng(mix_seed(cfg.seed, 9000, static_cast<std::uint64_t>(epoch)));
        std::shuffle(order.begin(), order.end(), shuffle_rng);

        double epoch_loss = 0.0;
        std::size_t batches = 0;
        std::vector<float> xb, yb;
        for (std::size_t start = 0; start < order.size();
             start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t n = std::min<std::size_t>(cfg.batch_size, order.size() - start);
            xb.resize(n * width);
            yb.resize(n);
            for (std::size_t i = 0; i < n; ++i) {
                const std::size_t src = order[start + i];
                std::copy(x_train.begin() + src * width, x_train.begin() + (src + 1) * width,
                          xb.begin() + i * width);
                yb[i] = y_train[src];
            }

            Graph g;
            Model::ForwardNodes fn =
                model.forward(g, xb.data(), static_cast<int>(n), true,
                              mix_seed(cfg.seed, 9100, epoch * 100003ULL + batches));
            Graph::NodeId labels = g.leaf(Tensor({static_cast<int>(n), 1}, yb), false);
            Graph::NodeId loss = g.bce_loss(fn.prob, labels);

            const float loss_v = g.value(loss).data[0];
            if (!std::isfinite(loss_v)) throw TrainingDiverged(epoch - 1);
            epoch_loss += loss_v;
            ++batches;

            g.backward(loss);
            adam_step(trainable, adam, cfg.lr);
        }
        epoch_loss /= std::max<std::size_t>(1, batches);
        tl.train_loss.push_back(epoch_loss);

        double val_loss = epoch_loss, val_acc = 0.0;
        if (!d_val.empty()) {
            const std::vector<float> vp =
                model.predict_std(x_val.data(), static_cast<int>(d_val.size()), cfg.batch_size);
            val_loss = mean_bce(vp, y_val);
            val_acc = accuracy_of(vp, y_val);
        }
        tl.val_loss.push_back(val_loss);
        tl.val_accuracy.push_back(val_acc);

        if (val_loss < best_val) {
            best_val = val_loss;
            best_epoch = epoch;
            since_best = 0;
            best_params.clear();
            for (const auto& p : model.params) best_params.push_back(p->data);
        } else if (++since_best >= cfg.patience) {
            break;
        }
    }

    if (!best_params.empty())
        for (std::size_t i = 0; i < model.params.size(); ++i)
            model.params[i]->data = best_params[i];
    tl.best_epoch = best_epoch;

    const double final_train_acc =
        accuracy_of(model.predict_std(x_train.data(), static_cast<int>(d_train.size()),
                                      cfg.batch_size),
                    y_train);
    if (final_train_acc < init_train_acc)
        tl.warnings.push_back("train accuracy after training (" +
                              std::to_string(final_train_acc) + ") below initialization (" +
                              std::to_string(init_train_acc) + ")");
    return model;
}

Metrics metrics_from_counts(long tp, long fp, long fn, long tn) {
    Metrics m;
    const long total = tp + fp + fn + tn;
    m.accuracy = total > 0 ? static_cast<double>(tp + tn) / total : 0.0;
    m.precision = (tp + fp) > 0 ? static_cast<double>(tp) / (tp + fp) : 0.0;
    m.recall = (tp + fn) > 0 ? static_cast<double>(tp) / (tp + fn) : 0.0;
    m.f1 = (m.precision + m.recall) > 0.0
               ? 2.0 * m.precision * m.recall / (m.precision + m.recall)
               : 0.0;
    return m;
}

Metrics evaluate(const Model& m, const std::vector<MeterWindow>& d, int batch) {
    if (d.empty()) throw std::invalid_argument("evaluate: empty dataset");
    const std::vector<float> probs = m.predict(d, batch);

    long tp = 0, fp = 0, fn = 0, tn = 0;
    long adv_total = 0, adv_detected = 0;
    for (std::size_t i = 0; i < d.size(); ++i) {
        const int pred = probs[i] >= 0.5f ? 1 : 0;
        if (d[i].label == 1 && pred == 1) ++tp;
        if (d[i].label == 0 && pred == 1) ++fp;
        if (d[i].label == 1 && pred == 0) ++fn;
        if (d[i].label == 0 && pred == 0) ++tn;
        if (is_attack_kind(d[i].provenance)) {
            ++adv_total;
            adv_detected += pred;
        }
    }
    Metrics out = metrics_from_counts(tp, fp, fn, tn);
    out.adr = adv_total > 0 ? static_cast<double>(adv_detected) / adv_total : out.recall;
    return out;
}

}  // namespace gridshield
