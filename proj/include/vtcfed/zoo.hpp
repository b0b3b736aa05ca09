#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vtcfed/losses.hpp"
#include "vtcfed/nn.hpp"

namespace vtcfed::zoo {

// Dataset geometry plus the decoder width defaults tied to it.
struct DataProfile {
    std::string name;
    int channels = 1;
    int height = 28;
    int width = 28;
    int classes = 10;
    int default_p = 980;  // latent/feature dimension
    int dec_mid1 = 16;    // decoder channel widths, blocks 1 and 2/3
    int dec_mid2 = 32;

    std::vector<long> input_shape() const { return {channels, height, width}; }
    long input_elements() const { return static_cast<long>(channels) * height * width; }
};

// Known profiles: "mnist" (IDX files on disk), "digits" (procedural 28x28
// glyphs), "toy" (procedural 16x16 blobs, for fast tests).
DataProfile profile_by_name(const std::string& name);

// Constructor spec for one extractor family. Depth grows with cluster_id;
// parameter counts are strictly increasing across clusters.
struct ArchCluster {
    int cluster_id = 1;   // 1-based
    int conv_blocks = 2;  // stride-2 stem (2 blocks) + (conv_blocks - 2) residual-free 3x3 blocks
    int width = 8;        // stem channel width
};

std::vector<ArchCluster> make_clusters(int count);

// A client's classifier split into feature extractor g (input -> R^p) and
// head h (R^p -> class scores). The extractor downsamples twice (stride-2
// convs) to (H/4, W/4) and projects with a 1x1 conv to p/(H/4 * W/4)
// channels; the flattened map is the latent z.
struct LocalModel {
    int arch_id = 0;
    int p = 0;
    int classes = 0;
    std::vector<long> input_shape;  // (C, H, W)
    nn::Sequential extractor;
    nn::Sequential head;

    // Latents for a batch (N,C,H,W) -> (N,p).
    Tensor extract(const Tensor& x, nn::Mode mode) { return extractor.forward(x, mode); }
    // Class scores for a batch -> (N,classes).
    Tensor forward_scores(const Tensor& x, nn::Mode mode) {
        return head.forward(extractor.forward(x, mode), nn::Mode::kEval);
    }

    long param_elements() { return extractor.param_elements() + head.param_elements(); }
    long state_elements() { return extractor.state_elements() + head.state_elements(); }
    void zero_grad() {
        extractor.zero_grad();
        head.zero_grad();
    }
    void sgd_step(double lr) {
        extractor.sgd_step(lr);
        head.sgd_step(lr);
    }
};

// Upsampling decoder psi: latent vector -> synthetic input-space sample in
// [0,1]^d. Four transposed-convolution blocks; blocks 2 and 4 double the
// spatial resolution; the final activation squashes to [0,1].
struct VtcDecoder {
    long latent_c = 0, latent_h = 0, latent_w = 0;
    int mid1 = 0, mid2 = 0;          // block channel widths
    std::vector<long> output_shape;  // (C, H, W)
    nn::Sequential net;

    long p() const { return latent_c * latent_h * latent_w; }
    // (N,p) latents -> (N,C,H,W) samples.
    Tensor decode(const Tensor& latents, nn::Mode mode);
    Tensor backward(const Tensor& dy, bool want_param_grads = true);  // -> grad wrt (N,p) latents
    long state_elements() { return net.state_elements(); }
    VtcDecoder clone() const;
};

// Deterministic under seed; throws ConfigError when p is not factorable into
// the profile's latent grid (channels x H/4 x W/4).
LocalModel build_local_model(const ArchCluster& arch, const DataProfile& profile, int p, std::uint64_t seed);
VtcDecoder build_vtc_decoder(const DataProfile& profile, int p, std::uint64_t seed);

// Cross-entropy of one score vector against label y in [0, classes).
double classification_loss(const Vec& scores, int label);
// Softmax(scores) - onehot(label); gradient of classification_loss.
Vec classification_grad(const Vec& scores, int label);

// Exact per-class means of extractor outputs over (xs, ys). Classes absent
// from the data are simply absent from the map.
PrototypeMap local_prototypes(LocalModel& model, const Tensor& xs, const std::vector<int>& ys);

// Checkpoint files: magic + JSON manifest (kind, arch_id, seed, named entry
// table) + flat little-endian float32 arrays per named parameter/buffer.
void save_model_checkpoint(const std::string& path, LocalModel& model, std::uint64_t seed);
void save_decoder_checkpoint(const std::string& path, VtcDecoder& decoder, std::uint64_t seed);
// Loads parameter values into an already-built model of the same
// architecture; throws on name/shape mismatch.
void load_model_checkpoint(const std::string& path, LocalModel& model);
void load_decoder_checkpoint(const std::string& path, VtcDecoder& decoder);

}  // namespace vtcfed::zoo
