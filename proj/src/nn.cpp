#include "vtcfed/nn.hpp"

#include <Eigen/Dense>
#include <cmath>

#include "vtcfed/errors.hpp"

namespace vtcfed::nn {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowMap = Eigen::Map<RowMat>;
using ConstRowMap = Eigen::Map<const RowMat>;

long conv_out(long in, int kernel, int stride, int pad) { return (in + 2 * pad - kernel) / stride + 1; }

// Patch matrix of `img` (N,C,Hi,Wi): rows C*k*k, one column per output grid
// position (n, oh, ow) with oh in [0, Oh), Oh = (Hi + 2p - k)/s + 1.
Eigen::MatrixXd im2col(const Tensor& img, int kernel, int stride, int pad) {
    const long n_batch = img.dim(0), ch = img.dim(1), hi = img.dim(2), wi = img.dim(3);
    const long oh = conv_out(hi, kernel, stride, pad), ow = conv_out(wi, kernel, stride, pad);
    Eigen::MatrixXd m(ch * kernel * kernel, n_batch * oh * ow);
    for (long n = 0; n < n_batch; ++n)
        for (long y = 0; y < oh; ++y)
            for (long x = 0; x < ow; ++x) {
                const long col = (n * oh + y) * ow + x;
                long r = 0;
                for (long c = 0; c < ch; ++c)
                    for (int kh = 0; kh < kernel; ++kh) {
                        const long ih = y * stride - pad + kh;
                        for (int kw = 0; kw < kernel; ++kw, ++r) {
                            const long iw = x * stride - pad + kw;
                            m(r, col) = (ih >= 0 && ih < hi && iw >= 0 && iw < wi) ? img.at(n, c, ih, iw) : 0.0;
                        }
                    }
            }
    return m;
}

// Scatter-add inverse of im2col into an image of shape (N, ch, hi, wi).
Tensor col2im(const Eigen::MatrixXd& cols, long n_batch, long ch, long hi, long wi, int kernel, int stride,
              int pad) {
    const long oh = conv_out(hi, kernel, stride, pad), ow = conv_out(wi, kernel, stride, pad);
    Tensor img({n_batch, ch, hi, wi});
    for (long n = 0; n < n_batch; ++n)
        for (long y = 0; y < oh; ++y)
            for (long x = 0; x < ow; ++x) {
                const long col = (n * oh + y) * ow + x;
                long r = 0;
                for (long c = 0; c < ch; ++c)
                    for (int kh = 0; kh < kernel; ++kh) {
                        const long ih = y * stride - pad + kh;
                        for (int kw = 0; kw < kernel; ++kw, ++r) {
                            const long iw = x * stride - pad + kw;
                            if (ih >= 0 && ih < hi && iw >= 0 && iw < wi) img.at(n, c, ih, iw) += cols(r, col);
                        }
                    }
            }
    return img;
}

// (N, C, H, W) -> column-major (C x N*H*W) with one column per (n, h, w).
Eigen::MatrixXd to_channel_mat(const Tensor& t) {
    const long n_batch = t.dim(0), ch = t.dim(1), sp = t.dim(2) * t.dim(3);
    Eigen::MatrixXd m(ch, n_batch * sp);
    for (long n = 0; n < n_batch; ++n)
        for (long c = 0; c < ch; ++c)
            for (long i = 0; i < sp; ++i)
                m(c, n * sp + i) = t.data[static_cast<size_t>((n * ch + c) * sp + i)];
    return m;
}

Tensor from_channel_mat(const Eigen::MatrixXd& m, long n_batch, long ch, long h, long w) {
    Tensor t({n_batch, ch, h, w});
    const long sp = h * w;
    for (long n = 0; n < n_batch; ++n)
        for (long c = 0; c < ch; ++c)
            for (long i = 0; i < sp; ++i)
                t.data[static_cast<size_t>((n * ch + c) * sp + i)] = m(c, n * sp + i);
    return t;
}

void check_input(const Tensor& x, int ndim, long channels, const char* who) {
    if (x.ndim() != ndim || (channels >= 0 && x.dim(1) != channels))
        throw std::invalid_argument(std::string(who) + ": bad input shape " + x.shape_str());
}

}  // namespace

// ---------------------------------------------------------------- Conv2d

Conv2d::Conv2d(int in_ch, int out_ch, int kernel, int stride, int pad)
    : in_ch_(in_ch),
      out_ch_(out_ch),
      kernel_(kernel),
      stride_(stride),
      pad_(pad),
      weight_(static_cast<size_t>(out_ch) * in_ch * kernel * kernel, 0.0),
      bias_(static_cast<size_t>(out_ch), 0.0),
      dweight_(weight_.size(), 0.0),
      dbias_(bias_.size(), 0.0) {}

std::vector<long> Conv2d::output_shape(const std::vector<long>& in) const {
    return {in[0], out_ch_, conv_out(in[2], kernel_, stride_, pad_), conv_out(in[3], kernel_, stride_, pad_)};
}

void Conv2d::init_params(RandomStream& rng) {
    const double std = std::sqrt(2.0 / (in_ch_ * kernel_ * kernel_));
    for (auto& w : weight_) w = std * rng.gaussian();
    std::fill(bias_.begin(), bias_.end(), 0.0);
}

void Conv2d::collect(const std::string& prefix, std::vector<ParamRef>& params, std::vector<BufferRef>&) {
    params.push_back({prefix + ".weight", &weight_, &dweight_});
    params.push_back({prefix + ".bias", &bias_, &dbias_});
}

Tensor Conv2d::forward(const Tensor& x, Mode) {
    check_input(x, 4, in_ch_, "conv2d");
    cached_in_ = x;
    const auto os = output_shape(x.shape);
    const Eigen::MatrixXd cols = im2col(x, kernel_, stride_, pad_);
    ConstRowMap w(weight_.data(), out_ch_, static_cast<long>(in_ch_) * kernel_ * kernel_);
    Eigen::MatrixXd y = w * cols;  // (out x N*Oh*Ow)
    Tensor out(os);
    const long sp = os[2] * os[3];
    for (long n = 0; n < os[0]; ++n)
        for (long c = 0; c < out_ch_; ++c)
            for (long i = 0; i < sp; ++i)
                out.data[static_cast<size_t>((n * out_ch_ + c) * sp + i)] = y(c, n * sp + i) + bias_[static_cast<size_t>(c)];
    return out;
}

Tensor Conv2d::backward(const Tensor& dy, bool want_param_grads) {
    const long n_batch = dy.dim(0), sp = dy.dim(2) * dy.dim(3);
    Eigen::MatrixXd dy_mat(out_ch_, n_batch * sp);
    for (long n = 0; n < n_batch; ++n)
        for (long c = 0; c < out_ch_; ++c)
            for (long i = 0; i < sp; ++i)
                dy_mat(c, n * sp + i) = dy.data[static_cast<size_t>((n * out_ch_ + c) * sp + i)];
    ConstRowMap w(weight_.data(), out_ch_, static_cast<long>(in_ch_) * kernel_ * kernel_);
    if (want_param_grads) {
        const Eigen::MatrixXd cols = im2col(cached_in_, kernel_, stride_, pad_);
        RowMap dw(dweight_.data(), out_ch_, static_cast<long>(in_ch_) * kernel_ * kernel_);
        dw.noalias() += dy_mat * cols.transpose();
        Eigen::Map<Eigen::VectorXd> db(dbias_.data(), out_ch_);
        db += dy_mat.rowwise().sum();
    }
    const Eigen::MatrixXd dcols = w.transpose() * dy_mat;
    return col2im(dcols, n_batch, in_ch_, cached_in_.dim(2), cached_in_.dim(3), kernel_, stride_, pad_);
}

// ------------------------------------------------------- ConvTranspose2d

ConvTranspose2d::ConvTranspose2d(int in_ch, int out_ch, int kernel, int stride, int pad)
    : in_ch_(in_ch),
      out_ch_(out_ch),
      kernel_(kernel),
      stride_(stride),
      pad_(pad),
      weight_(static_cast<size_t>(in_ch) * out_ch * kernel * kernel, 0.0),
      bias_(static_cast<size_t>(out_ch), 0.0),
      dweight_(weight_.size(), 0.0),
      dbias_(bias_.size(), 0.0) {}

std::vector<long> ConvTranspose2d::output_shape(const std::vector<long>& in) const {
    const long oh = (in[2] - 1) * stride_ - 2 * pad_ + kernel_;
    const long ow = (in[3] - 1) * stride_ - 2 * pad_ + kernel_;
    return {in[0], out_ch_, oh, ow};
}

void ConvTranspose2d::init_params(RandomStream& rng) {
    const double std = std::sqrt(2.0 / (in_ch_ * kernel_ * kernel_));
    for (auto& w : weight_) w = std * rng.gaussian();
    std::fill(bias_.begin(), bias_.end(), 0.0);
}

void ConvTranspose2d::collect(const std::string& prefix, std::vector<ParamRef>& params, std::vector<BufferRef>&) {
    params.push_back({prefix + ".weight", &weight_, &dweight_});
    params.push_back({prefix + ".bias", &bias_, &dbias_});
}

Tensor ConvTranspose2d::forward(const Tensor& x, Mode) {
    check_input(x, 4, in_ch_, "convtranspose2d");
    cached_in_ = x;
    const auto os = output_shape(x.shape);
    ConstRowMap w(weight_.data(), in_ch_, static_cast<long>(out_ch_) * kernel_ * kernel_);
    const Eigen::MatrixXd x_mat = to_channel_mat(x);               // (in x N*Hi*Wi)
    const Eigen::MatrixXd cols = w.transpose() * x_mat;            // (out*k*k x N*Hi*Wi)
    Tensor out = col2im(cols, os[0], out_ch_, os[2], os[3], kernel_, stride_, pad_);
    const long sp = os[2] * os[3];
    for (long n = 0; n < os[0]; ++n)
        for (long c = 0; c < out_ch_; ++c)
            for (long i = 0; i < sp; ++i)
                out.data[static_cast<size_t>((n * out_ch_ + c) * sp + i)] += bias_[static_cast<size_t>(c)];
    return out;
}

Tensor ConvTranspose2d::backward(const Tensor& dy, bool want_param_grads) {
    const long n_batch = dy.dim(0);
    const Eigen::MatrixXd cols_dy = im2col(dy, kernel_, stride_, pad_);  // (out*k*k x N*Hi*Wi)
    ConstRowMap w(weight_.data(), in_ch_, static_cast<long>(out_ch_) * kernel_ * kernel_);
    if (want_param_grads) {
        const Eigen::MatrixXd x_mat = to_channel_mat(cached_in_);
        RowMap dw(dweight_.data(), in_ch_, static_cast<long>(out_ch_) * kernel_ * kernel_);
        dw.noalias() += x_mat * cols_dy.transpose();
        const long sp = dy.dim(2) * dy.dim(3);
        for (long n = 0; n < n_batch; ++n)
            for (long c = 0; c < out_ch_; ++c) {
                double s = 0.0;
                for (long i = 0; i < sp; ++i) s += dy.data[static_cast<size_t>((n * out_ch_ + c) * sp + i)];
                dbias_[static_cast<size_t>(c)] += s;
            }
    }
    const Eigen::MatrixXd dx_mat = w * cols_dy;  // (in x N*Hi*Wi)
    return from_channel_mat(dx_mat, n_batch, in_ch_, cached_in_.dim(2), cached_in_.dim(3));
}

// ----------------------------------------------------------- BatchNorm2d

BatchNorm2d::BatchNorm2d(int channels, double momentum, double eps)
    : channels_(channels),
      momentum_(momentum),
      eps_(eps),
      gamma_(static_cast<size_t>(channels), 1.0),
      beta_(static_cast<size_t>(channels), 0.0),
      dgamma_(static_cast<size_t>(channels), 0.0),
      dbeta_(static_cast<size_t>(channels), 0.0),
      running_mean_(static_cast<size_t>(channels), 0.0),
      running_var_(static_cast<size_t>(channels), 1.0) {}

void BatchNorm2d::collect(const std::string& prefix, std::vector<ParamRef>& params, std::vector<BufferRef>& buffers) {
    params.push_back({prefix + ".gamma", &gamma_, &dgamma_});
    params.push_back({prefix + ".beta", &beta_, &dbeta_});
    buffers.push_back({prefix + ".running_mean", &running_mean_});
    buffers.push_back({prefix + ".running_var", &running_var_});
}

Tensor BatchNorm2d::forward(const Tensor& x, Mode mode) {
    check_input(x, 4, channels_, "batchnorm2d");
    const long n_batch = x.dim(0), sp = x.dim(2) * x.dim(3);
    const long m = n_batch * sp;
    cached_mode_ = mode;
    cached_xhat_ = Tensor(x.shape);
    cached_invstd_.assign(static_cast<size_t>(channels_), 0.0);
    Tensor out(x.shape);
    for (long c = 0; c < channels_; ++c) {
        double mean, var;
        if (mode == Mode::kEval) {
            mean = running_mean_[static_cast<size_t>(c)];
            var = running_var_[static_cast<size_t>(c)];
        } else {
            double s = 0.0, s2 = 0.0;
            for (long n = 0; n < n_batch; ++n)
                for (long i = 0; i < sp; ++i) {
                    const double v = x.data[static_cast<size_t>((n * channels_ + c) * sp + i)];
                    s += v;
                    s2 += v * v;
                }
            mean = s / static_cast<double>(m);
            var = s2 / static_cast<double>(m) - mean * mean;
            if (var < 0.0) var = 0.0;
            if (mode == Mode::kTrain) {
                const double unbiased = m > 1 ? var * static_cast<double>(m) / static_cast<double>(m - 1) : var;
                running_mean_[static_cast<size_t>(c)] =
                    (1.0 - momentum_) * running_mean_[static_cast<size_t>(c)] + momentum_ * mean;
                running_var_[static_cast<size_t>(c)] =
                    (1.0 - momentum_) * running_var_[static_cast<size_t>(c)] + momentum_ * unbiased;
            }
        }
        const double invstd = 1.0 / std::sqrt(var + eps_);
        cached_invstd_[static_cast<size_t>(c)] = invstd;
        const double g = gamma_[static_cast<size_t>(c)], b = beta_[static_cast<size_t>(c)];
        for (long n = 0; n < n_batch; ++n)
            for (long i = 0; i < sp; ++i) {
                const size_t idx = static_cast<size_t>((n * channels_ + c) * sp + i);
                const double xhat = (x.data[idx] - mean) * invstd;
                cached_xhat_.data[idx] = xhat;
                out.data[idx] = g * xhat + b;
            }
    }
    return out;
}

Tensor BatchNorm2d::backward(const Tensor& dy, bool want_param_grads) {
    const long n_batch = dy.dim(0), sp = dy.dim(2) * dy.dim(3);
    const long m = n_batch * sp;
    Tensor dx(dy.shape);
    for (long c = 0; c < channels_; ++c) {
        double sum_dy = 0.0, sum_dy_xhat = 0.0;
        for (long n = 0; n < n_batch; ++n)
            for (long i = 0; i < sp; ++i) {
                const size_t idx = static_cast<size_t>((n * channels_ + c) * sp + i);
                sum_dy += dy.data[idx];
                sum_dy_xhat += dy.data[idx] * cached_xhat_.data[idx];
            }
        if (want_param_grads) {
            dgamma_[static_cast<size_t>(c)] += sum_dy_xhat;
            dbeta_[static_cast<size_t>(c)] += sum_dy;
        }
        const double g = gamma_[static_cast<size_t>(c)];
        const double invstd = cached_invstd_[static_cast<size_t>(c)];
        if (cached_mode_ == Mode::kEval) {
            for (long n = 0; n < n_batch; ++n)
                for (long i = 0; i < sp; ++i) {
                    const size_t idx = static_cast<size_t>((n * channels_ + c) * sp + i);
                    dx.data[idx] = dy.data[idx] * g * invstd;
                }
        } else {
            // batch statistics couple the samples
            const double k1 = g * invstd / static_cast<double>(m);
            for (long n = 0; n < n_batch; ++n)
                for (long i = 0; i < sp; ++i) {
                    const size_t idx = static_cast<size_t>((n * channels_ + c) * sp + i);
                    dx.data[idx] =
                        k1 * (static_cast<double>(m) * dy.data[idx] - sum_dy - cached_xhat_.data[idx] * sum_dy_xhat);
                }
        }
    }
    return dx;
}

// ------------------------------------------------------------ activations

Tensor LeakyReLU::forward(const Tensor& x, Mode) {
    cached_in_ = x;
    Tensor out(x.shape);
    for (size_t i = 0; i < x.data.size(); ++i) out.data[i] = x.data[i] > 0.0 ? x.data[i] : slope_ * x.data[i];
    return out;
}

Tensor LeakyReLU::backward(const Tensor& dy, bool) {
    Tensor dx(dy.shape);
    for (size_t i = 0; i < dy.data.size(); ++i)
        dx.data[i] = cached_in_.data[i] > 0.0 ? dy.data[i] : slope_ * dy.data[i];
    return dx;
}

Tensor Sigmoid::forward(const Tensor& x, Mode) {
    Tensor out(x.shape);
    for (size_t i = 0; i < x.data.size(); ++i) out.data[i] = 1.0 / (1.0 + std::exp(-x.data[i]));
    cached_out_ = out;
    return out;
}

Tensor Sigmoid::backward(const Tensor& dy, bool) {
    Tensor dx(dy.shape);
    for (size_t i = 0; i < dy.data.size(); ++i) {
        const double y = cached_out_.data[i];
        dx.data[i] = dy.data[i] * y * (1.0 - y);
    }
    return dx;
}

Tensor Flatten::forward(const Tensor& x, Mode) {
    cached_shape_ = x.shape;
    return Tensor({x.dim(0), x.numel() / x.dim(0)}, x.data);
}

Tensor Flatten::backward(const Tensor& dy, bool) { return Tensor(cached_shape_, dy.data); }

std::vector<long> Flatten::output_shape(const std::vector<long>& in) const {
    long rest = 1;
    for (size_t i = 1; i < in.size(); ++i) rest *= in[i];
    return {in[0], rest};
}

// ---------------------------------------------------------------- Linear

Linear::Linear(int in_features, int out_features)
    : in_features_(in_features),
      out_features_(out_features),
      weight_(static_cast<size_t>(out_features) * in_features, 0.0),
      bias_(static_cast<size_t>(out_features), 0.0),
      dweight_(weight_.size(), 0.0),
      dbias_(bias_.size(), 0.0) {}

std::vector<long> Linear::output_shape(const std::vector<long>& in) const { return {in[0], out_features_}; }

void Linear::init_params(RandomStream& rng) {
    const double std = std::sqrt(1.0 / in_features_);
    for (auto& w : weight_) w = std * rng.gaussian();
    std::fill(bias_.begin(), bias_.end(), 0.0);
}

void Linear::collect(const std::string& prefix, std::vector<ParamRef>& params, std::vector<BufferRef>&) {
    params.push_back({prefix + ".weight", &weight_, &dweight_});
    params.push_back({prefix + ".bias", &bias_, &dbias_});
}

Tensor Linear::forward(const Tensor& x, Mode) {
    if (x.ndim() != 2 || x.dim(1) != in_features_)
        throw std::invalid_argument("linear: bad input shape " + x.shape_str());
    cached_in_ = x;
    const long n_batch = x.dim(0);
    ConstRowMap xm(x.data.data(), n_batch, in_features_);
    ConstRowMap wm(weight_.data(), out_features_, in_features_);
    Tensor out({n_batch, out_features_});
    RowMap ym(out.data.data(), n_batch, out_features_);
    ym.noalias() = xm * wm.transpose();
    Eigen::Map<const Eigen::VectorXd> b(bias_.data(), out_features_);
    ym.rowwise() += b.transpose();
    return out;
}

Tensor Linear::backward(const Tensor& dy, bool want_param_grads) {
    const long n_batch = dy.dim(0);
    ConstRowMap dym(dy.data.data(), n_batch, out_features_);
    ConstRowMap xm(cached_in_.data.data(), n_batch, in_features_);
    ConstRowMap wm(weight_.data(), out_features_, in_features_);
    if (want_param_grads) {
        RowMap dwm(dweight_.data(), out_features_, in_features_);
        dwm.noalias() += dym.transpose() * xm;
        Eigen::Map<Eigen::VectorXd> db(dbias_.data(), out_features_);
        db += dym.colwise().sum().transpose();
    }
    Tensor dx({n_batch, in_features_});
    RowMap dxm(dx.data.data(), n_batch, in_features_);
    dxm.noalias() = dym * wm;
    return dx;
}

// ------------------------------------------------------------ Sequential

Tensor Sequential::forward(const Tensor& x, Mode mode) {
    Tensor cur = x;
    for (auto& l : layers_) cur = l->forward(cur, mode);
    return cur;
}

Tensor Sequential::backward(const Tensor& dy, bool want_param_grads) {
    Tensor cur = dy;
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) cur = (*it)->backward(cur, want_param_grads);
    return cur;
}

void Sequential::init_params(RandomStream& rng) {
    for (auto& l : layers_) l->init_params(rng);
}

std::vector<ParamRef> Sequential::params() {
    std::vector<ParamRef> p;
    std::vector<BufferRef> b;
    for (size_t i = 0; i < layers_.size(); ++i)
        layers_[i]->collect("L" + std::to_string(i) + "." + layers_[i]->kind(), p, b);
    return p;
}

std::vector<BufferRef> Sequential::buffers() {
    std::vector<ParamRef> p;
    std::vector<BufferRef> b;
    for (size_t i = 0; i < layers_.size(); ++i)
        layers_[i]->collect("L" + std::to_string(i) + "." + layers_[i]->kind(), p, b);
    return b;
}

long Sequential::param_elements() {
    long n = 0;
    for (const auto& p : params()) n += static_cast<long>(p.value->size());
    return n;
}

long Sequential::state_elements() {
    long n = param_elements();
    for (const auto& b : buffers()) n += static_cast<long>(b.value->size());
    return n;
}

void Sequential::zero_grad() {
    for (auto& p : params()) std::fill(p.grad->begin(), p.grad->end(), 0.0);
}

void Sequential::sgd_step(double lr) {
    if (lr == 0.0) return;
    for (auto& p : params())
        for (size_t i = 0; i < p.value->size(); ++i) (*p.value)[i] -= lr * (*p.grad)[i];
}

std::vector<double> Sequential::state_flat() {
    std::vector<double> flat;
    flat.reserve(static_cast<size_t>(state_elements()));
    for (const auto& p : params()) flat.insert(flat.end(), p.value->begin(), p.value->end());
    for (const auto& b : buffers()) flat.insert(flat.end(), b.value->begin(), b.value->end());
    return flat;
}

void Sequential::set_state_flat(const std::vector<double>& flat) {
    size_t off = 0;
    auto take = [&](std::vector<double>* dst) {
        if (off + dst->size() > flat.size()) throw std::invalid_argument("set_state_flat: size mismatch");
        std::copy(flat.begin() + static_cast<long>(off), flat.begin() + static_cast<long>(off + dst->size()),
                  dst->begin());
        off += dst->size();
    };
    for (auto& p : params()) take(p.value);
    for (auto& b : buffers()) take(b.value);
    if (off != flat.size()) throw std::invalid_argument("set_state_flat: size mismatch");
}

long Sequential::activation_elements(const std::vector<long>& in) const {
    long total = 0;
    std::vector<long> cur = in;
    for (const auto& l : layers_) {
        cur = l->output_shape(cur);
        total += Tensor::count(cur);
    }
    return total;
}

std::vector<long> Sequential::output_shape(std::vector<long> in) const {
    for (const auto& l : layers_) in = l->output_shape(in);
    return in;
}

}  // namespace vtcfed::nn
