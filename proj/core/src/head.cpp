#include "lungnet/head.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include "json.hpp"
#include "lungnet/errors.hpp"
#include "lungnet/rng.hpp"
#include "lungnet/weights_store.hpp"

namespace lungnet {

std::string_view to_string(Activation a) { return a == Activation::relu ? "relu" : "linear"; }
std::string_view to_string(OptimizerKind k) { return k == OptimizerKind::adam ? "adam" : "sgd"; }

Activation parse_activation(std::string_view text) {
    if (text == "relu") return Activation::relu;
    if (text == "linear") return Activation::linear;
    throw ConfigError("unknown activation '" + std::string(text) + "' (expected relu or linear)");
}

OptimizerKind parse_optimizer(std::string_view text) {
    if (text == "adam") return OptimizerKind::adam;
    if (text == "sgd") return OptimizerKind::sgd;
    throw ConfigError("unknown optimizer '" + std::string(text) + "' (expected adam or sgd)");
}

template <typename T>
void BasicHeadParams<T>::validate() const {
    if (b1.size() != w1.cols() || w2.rows() != w1.cols() || b2.size() != w2.cols()) {
        throw ShapeError("head parameters do not chain: w1 " + std::to_string(w1.rows()) + "x" +
                         std::to_string(w1.cols()) + ", b1 " + std::to_string(b1.size()) + ", w2 " +
                         std::to_string(w2.rows()) + "x" + std::to_string(w2.cols()) + ", b2 " +
                         std::to_string(b2.size()));
    }
}

template struct BasicHeadParams<float>;
template struct BasicHeadParams<double>;

HeadParams init_head(std::uint64_t seed, std::size_t input_width, std::size_t hidden_width, std::size_t num_classes) {
    Rng rng(seed);
    auto glorot = [&rng](std::size_t fan_in, std::size_t fan_out) {
        const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
        Matrix m(fan_in, fan_out);
        for (float& v : m.data()) {
            v = static_cast<float>(rng.uniform(-limit, limit));
        }
        return m;
    };
    HeadParams p;
    p.w1 = glorot(input_width, hidden_width);
    p.b1.assign(hidden_width, 0.0f);
    p.w2 = glorot(hidden_width, num_classes);
    p.b2.assign(num_classes, 0.0f);
    return p;
}

template <typename T>
HeadActivations<T> head_forward(const BasicHeadParams<T>& params, const BasicMatrix<T>& features,
                                Activation activation) {
    params.validate();
    if (features.cols() != params.input_width()) {
        throw ShapeError("head expects " + std::to_string(params.input_width()) + "-wide features, got " +
                         std::to_string(features.cols()));
    }
    HeadActivations<T> a;
    a.hidden_pre = dense_forward<T>(features, params.w1, params.b1);
    a.hidden = activation == Activation::relu ? relu(a.hidden_pre) : a.hidden_pre;
    a.logits = dense_forward<T>(a.hidden, params.w2, params.b2);
    a.probs = softmax(a.logits);
    return a;
}

template <typename T>
HeadGradients<T> head_gradients(const BasicHeadParams<T>& params, const BasicMatrix<T>& features,
                                std::span<const int> labels, Activation activation) {
    const HeadActivations<T> a = head_forward(params, features, activation);
    CrossEntropyResult<T> ce = cross_entropy(a.probs, labels);
    DenseGrads<T> g2 = dense_backward(a.hidden, params.w2, ce.grad_logits);
    BasicMatrix<T> upstream = std::move(g2.input);
    if (activation == Activation::relu) {
        auto pre = a.hidden_pre.data();
        auto up = upstream.data();
        for (std::size_t i = 0; i < up.size(); ++i) {
            if (!(pre[i] > T{0})) {
                up[i] = T{0};
            }
        }
    }
    DenseGrads<T> g1 = dense_backward(features, params.w1, upstream);
    HeadGradients<T> out;
    out.loss = ce.loss;
    out.grads = {std::move(g1.weights), std::move(g1.bias), std::move(g2.weights), std::move(g2.bias)};
    return out;
}

template HeadActivations<float> head_forward(const HeadParams&, const Matrix&, Activation);
template HeadActivations<double> head_forward(const HeadParamsD&, const MatrixD&, Activation);
template HeadGradients<float> head_gradients(const HeadParams&, const Matrix&, std::span<const int>, Activation);
template HeadGradients<double> head_gradients(const HeadParamsD&, const MatrixD&, std::span<const int>, Activation);

void TrainConfig::validate() const {
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
        throw ConfigError("learning_rate must be a finite non-negative number");
    }
    if (batch_size == 0 || max_epochs == 0 || hidden_width == 0 || num_classes == 0) {
        throw ConfigError("batch_size, max_epochs, hidden_width, and num_classes must be positive");
    }
    if (patience == 0) {
        throw ConfigError("patience must be at least 1");
    }
    if (patience > max_epochs) {
        throw ConfigError("patience (" + std::to_string(patience) + ") exceeds max_epochs (" +
                          std::to_string(max_epochs) + ")");
    }
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0) || !(epsilon > 0.0)) {
        throw ConfigError("adam moments need beta1, beta2 in [0, 1) and epsilon > 0");
    }
}

namespace {

HeadParams zeros_like(const HeadParams& p) {
    return {Matrix(p.w1.rows(), p.w1.cols()), std::vector<float>(p.b1.size()), Matrix(p.w2.rows(), p.w2.cols()),
            std::vector<float>(p.b2.size())};
}

template <typename F>
void for_each_tensor(HeadParams& a, HeadParams& b, HeadParams& c, const HeadParams& g, F&& f) {
    f(a.w1.data(), b.w1.data(), c.w1.data(), g.w1.data());
    f(std::span<float>(a.b1), std::span<float>(b.b1), std::span<float>(c.b1), std::span<const float>(g.b1));
    f(a.w2.data(), b.w2.data(), c.w2.data(), g.w2.data());
    f(std::span<float>(a.b2), std::span<float>(b.b2), std::span<float>(c.b2), std::span<const float>(g.b2));
}

void check_labels(std::span<const int> labels, std::size_t rows, std::size_t classes) {
    if (labels.size() != rows) {
        throw ShapeError(std::to_string(labels.size()) + " labels for " + std::to_string(rows) + " feature rows");
    }
    for (int l : labels) {
        if (l < 0 || static_cast<std::size_t>(l) >= classes) {
            throw InputError("label " + std::to_string(l) + " outside [0, " + std::to_string(classes) + ")");
        }
    }
}

}  // namespace

OptimizerState OptimizerState::create(const HeadParams& like, OptimizerKind kind) {
    OptimizerState s;
    s.kind = kind;
    if (kind == OptimizerKind::adam) {
        s.first_moment = zeros_like(like);
        s.second_moment = zeros_like(like);
    }
    return s;
}

float train_step(HeadParams& params, OptimizerState& state, const Matrix& features, std::span<const int> labels,
                 const TrainConfig& config) {
    if (features.rows() == 0) {
        throw InputError("train_step needs a non-empty batch");
    }
    const HeadGradients<float> g = head_gradients(params, features, labels, config.activation);
    if (!std::isfinite(g.loss)) {
        throw NumericError("non-finite loss at optimizer step " + std::to_string(state.step + 1) +
                           "; training aborted");
    }
    ++state.step;
    if (state.kind == OptimizerKind::sgd) {
        const auto lr = static_cast<float>(config.learning_rate);
        auto apply = [lr](std::span<float> p, std::span<const float> grad) {
            for (std::size_t i = 0; i < p.size(); ++i) {
                p[i] -= lr * grad[i];
            }
        };
        apply(params.w1.data(), g.grads.w1.data());
        apply(params.b1, g.grads.b1);
        apply(params.w2.data(), g.grads.w2.data());
        apply(params.b2, g.grads.b2);
        return g.loss;
    }

    // Adam with the bias correction folded into the step size.
    const auto t = static_cast<double>(state.step);
    const double corrected = config.learning_rate * std::sqrt(1.0 - std::pow(config.beta2, t)) /
                             (1.0 - std::pow(config.beta1, t));
    const auto alpha = static_cast<float>(corrected);
    const auto b1 = static_cast<float>(config.beta1);
    const auto b2 = static_cast<float>(config.beta2);
    const auto eps = static_cast<float>(config.epsilon);
    for_each_tensor(params, state.first_moment, state.second_moment, g.grads,
                    [&](std::span<float> p, std::span<float> m, std::span<float> v, std::span<const float> grad) {
                        for (std::size_t i = 0; i < p.size(); ++i) {
                            m[i] = b1 * m[i] + (1.0f - b1) * grad[i];
                            v[i] = b2 * v[i] + (1.0f - b2) * grad[i] * grad[i];
                            p[i] -= alpha * m[i] / (std::sqrt(v[i]) + eps);
                        }
                    });
    return g.loss;
}

EarlyStopping::EarlyStopping(std::size_t patience)
    : patience_(patience), best_loss_(std::numeric_limits<double>::infinity()) {
    if (patience == 0) {
        throw ConfigError("patience must be at least 1");
    }
}

bool EarlyStopping::update(std::size_t epoch, double val_loss) {
    if (val_loss < best_loss_) {
        best_loss_ = val_loss;
        best_epoch_ = epoch;
        stale_epochs_ = 0;
        return true;
    }
    ++stale_epochs_;
    return false;
}

Evaluation evaluate(const HeadParams& params, const Matrix& features, std::span<const int> labels,
                    Activation activation) {
    check_labels(labels, features.rows(), params.num_classes());
    if (features.rows() == 0) {
        return {};
    }
    const auto a = head_forward(params, features, activation);
    const auto ce = cross_entropy(a.probs, labels);
    std::size_t correct = 0;
    for (std::size_t r = 0; r < features.rows(); ++r) {
        correct += argmax(a.probs.row(r)) == labels[r] ? 1 : 0;
    }
    return {static_cast<double>(ce.loss), static_cast<double>(correct) / static_cast<double>(features.rows())};
}

FitResult fit(const Matrix& train_features, std::span<const int> train_labels, const Matrix& val_features,
              std::span<const int> val_labels, const TrainConfig& config) {
    config.validate();
    if (train_features.rows() == 0 || val_features.rows() == 0) {
        throw InputError("fit needs non-empty training and validation sets");
    }
    if (train_features.cols() != val_features.cols()) {
        throw ShapeError("training features are " + std::to_string(train_features.cols()) +
                         " wide, validation features " + std::to_string(val_features.cols()));
    }
    check_labels(train_labels, train_features.rows(), config.num_classes);
    check_labels(val_labels, val_features.rows(), config.num_classes);

    HeadParams params = init_head(config.seed, train_features.cols(), config.hidden_width, config.num_classes);
    OptimizerState state = OptimizerState::create(params, config.optimizer);
    EarlyStopping stopper(config.patience);
    Rng shuffler(config.seed ^ 0x5851f42d4c957f2dULL);

    FitResult result;
    result.params = params;
    std::vector<std::size_t> order(train_features.rows());
    std::iota(order.begin(), order.end(), 0);
    std::vector<int> batch_labels;

    for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
        shuffler.shuffle(order.begin(), order.end());
        for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
            const std::size_t end = std::min(begin + config.batch_size, order.size());
            const std::span<const std::size_t> idx(order.data() + begin, end - begin);
            const Matrix batch = train_features.gather_rows(idx);
            batch_labels.clear();
            for (std::size_t i : idx) {
                batch_labels.push_back(train_labels[i]);
            }
            train_step(params, state, batch, batch_labels, config);
        }

        const Evaluation tr = evaluate(params, train_features, train_labels, config.activation);
        const Evaluation va = evaluate(params, val_features, val_labels, config.activation);
        if (!std::isfinite(tr.loss) || !std::isfinite(va.loss)) {
            throw NumericError("non-finite loss after epoch " + std::to_string(epoch) + "; training aborted");
        }
        result.history.push_back({epoch, tr.loss, tr.accuracy, va.loss, va.accuracy});
        result.stopped_epoch = epoch;
        if (stopper.update(epoch, va.loss)) {
            result.params = params;
            result.best_epoch = epoch;
        }
        if (stopper.should_stop()) {
            break;
        }
    }
    return result;
}

FitResult fit(const FeatureCache& train, const FeatureCache& val, const TrainConfig& config) {
    return fit(train.features, train.labels, val.features, val.labels, config);
}

template <typename T>
int argmax(std::span<const T> row) {
    if (row.empty()) {
        throw ShapeError("argmax of an empty row");
    }
    std::size_t best = 0;
    for (std::size_t j = 1; j < row.size(); ++j) {
        if (row[j] > row[best]) {
            best = j;
        }
    }
    return static_cast<int>(best);
}

template int argmax(std::span<const float>);
template int argmax(std::span<const double>);

Prediction predict(const HeadParams& params, const Matrix& features, Activation activation) {
    Prediction p;
    p.probs = head_forward(params, features, activation).probs;
    p.labels.reserve(features.rows());
    for (std::size_t r = 0; r < features.rows(); ++r) {
        p.labels.push_back(argmax<float>(p.probs.row(r)));
    }
    return p;
}

void save_head(const HeadParams& params, const std::filesystem::path& path) {
    params.validate();
    NamedTensorStore store;
    auto vec = [](std::span<const float> s) { return std::vector<float>(s.begin(), s.end()); };
    store.add("head/dense1/kernel", {params.w1.rows(), params.w1.cols()}, vec(params.w1.data()));
    store.add("head/dense1/bias", {params.b1.size()}, params.b1);
    store.add("head/dense2/kernel", {params.w2.rows(), params.w2.cols()}, vec(params.w2.data()));
    store.add("head/dense2/bias", {params.b2.size()}, params.b2);
    save_container(store, path);
}

HeadParams load_head(const std::filesystem::path& path) {
    const NamedTensorStore store = load_container(path);
    auto matrix = [&](const std::string& name) {
        const TensorEntry& e = store.get(name);
        if (e.shape.size() != 2) {
            throw FormatError(path.string() + ": '" + name + "' must be 2-D");
        }
        return Matrix(e.shape[0], e.shape[1], e.data);
    };
    auto vector = [&](const std::string& name) {
        const TensorEntry& e = store.get(name);
        if (e.shape.size() != 1) {
            throw FormatError(path.string() + ": '" + name + "' must be 1-D");
        }
        return e.data;
    };
    HeadParams p{matrix("head/dense1/kernel"), vector("head/dense1/bias"), matrix("head/dense2/kernel"),
                 vector("head/dense2/bias")};
    p.validate();
    return p;
}

void save_history(std::span<const EpochRecord> history, const std::filesystem::path& path) {
    nlohmann::ordered_json doc = nlohmann::ordered_json::array();
    for (const auto& r : history) {
        doc.push_back({{"epoch", r.epoch},
                       {"train_loss", r.train_loss},
                       {"train_accuracy", r.train_accuracy},
                       {"val_loss", r.val_loss},
                       {"val_accuracy", r.val_accuracy}});
    }
    std::ofstream out(path);
    if (!out) {
        throw InputError("cannot open '" + path.string() + "' for writing");
    }
    out << doc.dump(1) << '\n';
    if (!out) {
        throw InputError("write to '" + path.string() + "' failed");
    }
}

std::vector<EpochRecord> load_history(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw InputError("cannot open '" + path.string() + "'");
    }
    std::vector<EpochRecord> history;
    try {
        for (const auto& r : nlohmann::json::parse(in)) {
            history.push_back({r.at("epoch").get<std::size_t>(), r.at("train_loss").get<double>(),
                               r.at("train_accuracy").get<double>(), r.at("val_loss").get<double>(),
                               r.at("val_accuracy").get<double>()});
        }
    } catch (const nlohmann::json::exception& err) {
        throw FormatError(path.string() + ": " + err.what());
    }
    return history;
}

}  // namespace lungnet
