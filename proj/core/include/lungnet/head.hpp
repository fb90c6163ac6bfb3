#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "lungnet/dataset.hpp"
#include "lungnet/kernels.hpp"
#include "lungnet/tensor.hpp"

namespace lungnet {

inline constexpr std::size_t kHiddenWidth = 128;
inline constexpr std::size_t kNumClasses = 3;
inline constexpr std::size_t kDense1Parameters = 262'272;
inline constexpr std::size_t kDense2Parameters = 387;

enum class Activation { relu, linear };
enum class OptimizerKind { adam, sgd };

std::string_view to_string(Activation a);
std::string_view to_string(OptimizerKind k);
Activation parse_activation(std::string_view text);
OptimizerKind parse_optimizer(std::string_view text);

/// Dense(in→hidden) → activation → Dense(hidden→classes) → softmax.
template <typename T>
struct BasicHeadParams {
    BasicMatrix<T> w1;  // in × hidden
    std::vector<T> b1;
    BasicMatrix<T> w2;  // hidden × classes
    std::vector<T> b2;

    std::size_t input_width() const { return w1.rows(); }
    std::size_t hidden_width() const { return w1.cols(); }
    std::size_t num_classes() const { return w2.cols(); }
    std::size_t dense1_parameters() const { return w1.size() + b1.size(); }
    std::size_t dense2_parameters() const { return w2.size() + b2.size(); }
    std::size_t parameter_count() const { return dense1_parameters() + dense2_parameters(); }

    template <typename U>
    BasicHeadParams<U> cast() const {
        return {w1.template cast<U>(), std::vector<U>(b1.begin(), b1.end()), w2.template cast<U>(),
                std::vector<U>(b2.begin(), b2.end())};
    }

    // Throws ShapeError when the four tensors do not chain.
    void validate() const;
    bool operator==(const BasicHeadParams&) const = default;
};

using HeadParams = BasicHeadParams<float>;
using HeadParamsD = BasicHeadParams<double>;

// Glorot-uniform kernels (limit sqrt(6 / (fan_in + fan_out))), zero biases.
HeadParams init_head(std::uint64_t seed, std::size_t input_width = kFeatureWidth,
                     std::size_t hidden_width = kHiddenWidth, std::size_t num_classes = kNumClasses);

template <typename T>
struct HeadActivations {
    BasicMatrix<T> hidden_pre;  // before the activation
    BasicMatrix<T> hidden;
    BasicMatrix<T> logits;
    BasicMatrix<T> probs;
};

template <typename T>
HeadActivations<T> head_forward(const BasicHeadParams<T>& params, const BasicMatrix<T>& features,
                                Activation activation = Activation::relu);

template <typename T>
struct HeadGradients {
    T loss{};
    BasicHeadParams<T> grads;
};

// Mean cross-entropy loss and its gradient with respect to every head parameter.
template <typename T>
HeadGradients<T> head_gradients(const BasicHeadParams<T>& params, const BasicMatrix<T>& features,
                                std::span<const int> labels, Activation activation = Activation::relu);

struct TrainConfig {
    double learning_rate = 0.001;
    std::size_t batch_size = 25;
    std::size_t max_epochs = 25;
    std::size_t patience = 5;  // epochs without validation-loss improvement
    std::uint64_t seed = 0;
    OptimizerKind optimizer = OptimizerKind::adam;
    Activation activation = Activation::relu;
    std::size_t hidden_width = kHiddenWidth;
    std::size_t num_classes = kNumClasses;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-7;

    // Throws ConfigError.
    void validate() const;
};

struct OptimizerState {
    OptimizerKind kind = OptimizerKind::adam;
    std::size_t step = 0;
    HeadParams first_moment;   // empty for sgd
    HeadParams second_moment;  // empty for sgd

    static OptimizerState create(const HeadParams& like, OptimizerKind kind);
};

// One minibatch update. Returns the batch loss before the update. Throws
// NumericError when the loss is not finite.
float train_step(HeadParams& params, OptimizerState& state, const Matrix& features, std::span<const int> labels,
                 const TrainConfig& config);

struct EpochRecord {
    std::size_t epoch = 0;  // 1-based
    double train_loss = 0.0;
    double train_accuracy = 0.0;
    double val_loss = 0.0;
    double val_accuracy = 0.0;
};

// Tracks the best validation loss; a strictly lower loss counts as improvement.
class EarlyStopping {
public:
    explicit EarlyStopping(std::size_t patience);

    // Returns true when `val_loss` is a new best.
    bool update(std::size_t epoch, double val_loss);
    bool should_stop() const { return stale_epochs_ >= patience_; }
    std::size_t best_epoch() const { return best_epoch_; }
    double best_loss() const { return best_loss_; }

private:
    std::size_t patience_;
    std::size_t stale_epochs_ = 0;
    std::size_t best_epoch_ = 0;
    double best_loss_;
};

struct FitResult {
    HeadParams params;  // from the best-validation-loss epoch
    std::vector<EpochRecord> history;
    std::size_t stopped_epoch = 0;
    std::size_t best_epoch = 0;
};

FitResult fit(const Matrix& train_features, std::span<const int> train_labels, const Matrix& val_features,
              std::span<const int> val_labels, const TrainConfig& config);
FitResult fit(const FeatureCache& train, const FeatureCache& val, const TrainConfig& config);

struct Evaluation {
    double loss = 0.0;
    double accuracy = 0.0;
};

Evaluation evaluate(const HeadParams& params, const Matrix& features, std::span<const int> labels,
                    Activation activation = Activation::relu);

struct Prediction {
    std::vector<int> labels;
    Matrix probs;
};

// Index of the row maximum; ties go to the lowest index.
template <typename T>
int argmax(std::span<const T> row);

Prediction predict(const HeadParams& params, const Matrix& features, Activation activation = Activation::relu);

// Container tensors head/dense1/kernel, head/dense1/bias, head/dense2/kernel,
// head/dense2/bias.
void save_head(const HeadParams& params, const std::filesystem::path& path);
HeadParams load_head(const std::filesystem::path& path);

// JSON array, one object per epoch.
void save_history(std::span<const EpochRecord> history, const std::filesystem::path& path);
std::vector<EpochRecord> load_history(const std::filesystem::path& path);

}  // namespace lungnet
