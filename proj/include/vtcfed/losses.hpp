#pragma once

#include <map>
#include <vector>

#include "vtcfed/tensor.hpp"

namespace vtcfed {

// Pure numerical definitions of the training objectives. Everything here is
// a function of its inputs only; noise is always passed in, never drawn.
//
// Normalization convention (kept exactly, it changes gradient scale): each
// loss is a sum over classes of the per-class mean, never a global mean.

// Positivity floor applied to standard deviations before logs and after
// gradient updates. sigma -> 0 is never addressed upstream, the floor keeps
// log|Sigma| finite.
constexpr double kSigmaFloor = 1e-6;

// class id -> prototype vector (mean feature representation of that class)
using PrototypeMap = std::map<int, Vec>;

// class id -> latent vectors of that class
using LatentGroups = std::map<int, std::vector<Vec>>;

struct LossBreakdown {
    double reconstruction = 0.0;  // squared-error term, >= 0
    double kl = 0.0;              // analytic Gaussian KL term
    double dm = 0.0;              // raw distribution-matching value, >= 0
    double total = 0.0;           // reconstruction + kl + lambda * dm
};

// One training sample as seen by the decoder objective: the original input,
// its latent representation, and the decoder output produced from the
// reparameterized latent.
struct ElboSample {
    Tensor x;
    Vec z;
    Tensor x_gen;
};

// class id -> samples of that class (a minibatch bucketed by label)
using ElboBatch = std::map<int, std::vector<ElboSample>>;

// Clamps every entry of sigma up to kSigmaFloor.
Vec clamp_sigma(Vec sigma);

// Squared Euclidean distance between two equally-shaped tensors.
// Throws std::invalid_argument on shape mismatch.
double reconstruction_loss(const Tensor& x_gen, const Tensor& x);

// KL( N(z, diag(sigma^2)) || N(c, I) )
//   = 1/2 [ ||z-c||^2 + sum(sigma^2) - p - 2 sum(log sigma) ]
// sigma entries must be > 0 (std::domain_error otherwise); entries below
// kSigmaFloor are floored before the log.
double kl_gaussian(const Vec& z, const Vec& c, const Vec& sigma);

// v = z + sigma .* noise. Lengths must match (std::invalid_argument).
Vec reparameterize(const Vec& z, const Vec& sigma, const Vec& noise);

// Negative-ELBO over a class-bucketed batch:
//   sum_y (1/n_y) sum_i [ reconstruction_loss(x_gen_i, x_i) + kl_gaussian(z_i, c^y, sigma) ]
// Classes absent from the batch contribute zero. A sample whose class has no
// prototype raises MissingPrototypeError.
LossBreakdown elbo_loss(const ElboBatch& batch, const PrototypeMap& prototypes, const Vec& sigma);

// Distribution-matching value over re-extracted latents of generated samples:
//   sum_y (1/n_y) sum_i || u_i - c^y ||^2
double dm_loss(const LatentGroups& latent_of_generated, const PrototypeMap& prototypes);

// Combined decoder objective: total = elbo.total + lambda * dm.
// lambda must be >= 0 (std::invalid_argument).
LossBreakdown vtc_loss(const LossBreakdown& elbo, double dm, double lambda);

}  // namespace vtcfed
