#pragma once

#include <memory>
#include <string>
#include <vector>

#include "vtcfed/rng.hpp"
#include "vtcfed/tensor.hpp"

namespace vtcfed::nn {

// Minimal double-precision layer stack with explicit backward passes.
// A layer caches what its own backward needs during forward; one
// forward/backward pair may be in flight per layer instance, so a model must
// be owned by a single worker while training (read-only snapshots are fine).

enum class Mode {
    kTrain,             // batch statistics where applicable, running stats updated
    kTrainFrozenStats,  // batch statistics, running stats untouched
    kEval,              // running statistics
};

struct ParamRef {
    std::string name;
    std::vector<double>* value;
    std::vector<double>* grad;
};

struct BufferRef {
    std::string name;
    std::vector<double>* value;
};

class Layer {
public:
    virtual ~Layer() = default;
    virtual Tensor forward(const Tensor& x, Mode mode) = 0;
    // Returns grad wrt the layer input; accumulates parameter grads unless
    // want_param_grads is false (used when the owner is frozen but gradients
    // must still flow through).
    virtual Tensor backward(const Tensor& dy, bool want_param_grads) = 0;
    virtual void collect(const std::string& prefix, std::vector<ParamRef>& params, std::vector<BufferRef>& buffers) {}
    virtual void init_params(RandomStream& rng) {}
    virtual std::string kind() const = 0;
    // Shape algebra only; no allocation. Used by the memory estimator.
    virtual std::vector<long> output_shape(const std::vector<long>& in) const = 0;
};

class Conv2d final : public Layer {
public:
    Conv2d(int in_ch, int out_ch, int kernel, int stride, int pad);
    Tensor forward(const Tensor& x, Mode mode) override;
    Tensor backward(const Tensor& dy, bool want_param_grads) override;
    void collect(const std::string& prefix, std::vector<ParamRef>& params, std::vector<BufferRef>& buffers) override;
    void init_params(RandomStream& rng) override;
    std::string kind() const override { return "conv2d"; }
    std::vector<long> output_shape(const std::vector<long>& in) const override;

private:
    int in_ch_, out_ch_, kernel_, stride_, pad_;
    std::vector<double> weight_, bias_, dweight_, dbias_;  // weight (out, in, k, k)
    Tensor cached_in_;
};

class ConvTranspose2d final : public Layer {
public:
    ConvTranspose2d(int in_ch, int out_ch, int kernel, int stride, int pad);
    Tensor forward(const Tensor& x, Mode mode) override;
    Tensor backward(const Tensor& dy, bool want_param_grads) override;
    void collect(const std::string& prefix, std::vector<ParamRef>& params, std::vector<BufferRef>& buffers) override;
    void init_params(RandomStream& rng) override;
    std::string kind() const override { return "convtranspose2d"; }
    std::vector<long> output_shape(const std::vector<long>& in) const override;

private:
    int in_ch_, out_ch_, kernel_, stride_, pad_;
    std::vector<double> weight_, bias_, dweight_, dbias_;  // weight (in, out, k, k)
    Tensor cached_in_;
};

class BatchNorm2d final : public Layer {
public:
    explicit BatchNorm2d(int channels, double momentum = 0.1, double eps = 1e-5);
    Tensor forward(const Tensor& x, Mode mode) override;
    Tensor backward(const Tensor& dy, bool want_param_grads) override;
    void collect(const std::string& prefix, std::vector<ParamRef>& params, std::vector<BufferRef>& buffers) override;
    std::string kind() const override { return "batchnorm2d"; }
    std::vector<long> output_shape(const std::vector<long>& in) const override { return in; }

private:
    int channels_;
    double momentum_, eps_;
    std::vector<double> gamma_, beta_, dgamma_, dbeta_;
    std::vector<double> running_mean_, running_var_;
    // backward cache
    Tensor cached_xhat_;
    std::vector<double> cached_invstd_;
    Mode cached_mode_ = Mode::kTrain;
};

class LeakyReLU final : public Layer {
public:
    explicit LeakyReLU(double slope = 0.01) : slope_(slope) {}
    Tensor forward(const Tensor& x, Mode mode) override;
    Tensor backward(const Tensor& dy, bool want_param_grads) override;
    std::string kind() const override { return "leakyrelu"; }
    std::vector<long> output_shape(const std::vector<long>& in) const override { return in; }

private:
    double slope_;
    Tensor cached_in_;
};

class Sigmoid final : public Layer {
public:
    Tensor forward(const Tensor& x, Mode mode) override;
    Tensor backward(const Tensor& dy, bool want_param_grads) override;
    std::string kind() const override { return "sigmoid"; }
    std::vector<long> output_shape(const std::vector<long>& in) const override { return in; }

private:
    Tensor cached_out_;
};

// (N, C, H, W) -> (N, C*H*W)
class Flatten final : public Layer {
public:
    Tensor forward(const Tensor& x, Mode mode) override;
    Tensor backward(const Tensor& dy, bool want_param_grads) override;
    std::string kind() const override { return "flatten"; }
    std::vector<long> output_shape(const std::vector<long>& in) const override;

private:
    std::vector<long> cached_shape_;
};

class Linear final : public Layer {
public:
    Linear(int in_features, int out_features);
    Tensor forward(const Tensor& x, Mode mode) override;
    Tensor backward(const Tensor& dy, bool want_param_grads) override;
    void collect(const std::string& prefix, std::vector<ParamRef>& params, std::vector<BufferRef>& buffers) override;
    void init_params(RandomStream& rng) override;
    std::string kind() const override { return "linear"; }
    std::vector<long> output_shape(const std::vector<long>& in) const override;

private:
    int in_features_, out_features_;
    std::vector<double> weight_, bias_, dweight_, dbias_;  // weight (out, in)
    Tensor cached_in_;
};

class Sequential {
public:
    Sequential() = default;
    Sequential(Sequential&&) = default;
    Sequential& operator=(Sequential&&) = default;

    template <typename L, typename... Args>
    L* add(Args&&... args) {
        auto layer = std::make_unique<L>(std::forward<Args>(args)...);
        L* raw = layer.get();
        layers_.push_back(std::move(layer));
        return raw;
    }

    Tensor forward(const Tensor& x, Mode mode);
    Tensor backward(const Tensor& dy, bool want_param_grads = true);

    void init_params(RandomStream& rng);
    std::vector<ParamRef> params();
    std::vector<BufferRef> buffers();

    long param_elements();
    long state_elements();  // params + buffers; the transmitted element count

    void zero_grad();
    void sgd_step(double lr);

    // Flattened state (params then buffers, collection order). Used for
    // aggregation and checkpoints.
    std::vector<double> state_flat();
    void set_state_flat(const std::vector<double>& flat);

    // Sum of per-layer output element counts for one input sample; the
    // activation footprint of a forward pass at batch 1.
    long activation_elements(const std::vector<long>& sample_shape_with_batch1) const;
    std::vector<long> output_shape(std::vector<long> in) const;

    size_t size() const { return layers_.size(); }
    Layer& layer(size_t i) { return *layers_[i]; }

private:
    std::vector<std::unique_ptr<Layer>> layers_;
};

}  // namespace vtcfed::nn
