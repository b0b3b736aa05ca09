#include "vtcfed/losses.hpp"

#include <cmath>

#include "vtcfed/errors.hpp"

namespace vtcfed {

Vec clamp_sigma(Vec sigma) {
    for (Eigen::Index i = 0; i < sigma.size(); ++i)
        if (sigma[i] < kSigmaFloor) sigma[i] = kSigmaFloor;
    return sigma;
}

double reconstruction_loss(const Tensor& x_gen, const Tensor& x) {
    if (!x_gen.same_shape(x))
        throw std::invalid_argument("reconstruction_loss: shape mismatch " + x_gen.shape_str() + " vs " +
                                    x.shape_str());
    return (x_gen.vec() - x.vec()).squaredNorm();
}

double kl_gaussian(const Vec& z, const Vec& c, const Vec& sigma) {
    const auto p = z.size();
    if (c.size() != p || sigma.size() != p)
        throw std::invalid_argument("kl_gaussian: length mismatch");
    double trace = 0.0, logdet = 0.0;
    for (Eigen::Index i = 0; i < p; ++i) {
        const double s = sigma[i];
        if (!(s > 0.0)) throw std::domain_error("kl_gaussian: nonpositive sigma entry");
        trace += s * s;
        logdet += 2.0 * std::log(std::max(s, kSigmaFloor));
    }
    return 0.5 * ((z - c).squaredNorm() + trace - static_cast<double>(p) - logdet);
}

Vec reparameterize(const Vec& z, const Vec& sigma, const Vec& noise) {
    if (sigma.size() != z.size() || noise.size() != z.size())
        throw std::invalid_argument("reparameterize: length mismatch");
    return z + sigma.cwiseProduct(noise);
}

LossBreakdown elbo_loss(const ElboBatch& batch, const PrototypeMap& prototypes, const Vec& sigma) {
    LossBreakdown out;
    for (const auto& [cls, samples] : batch) {
        if (samples.empty()) continue;
        const auto it = prototypes.find(cls);
        if (it == prototypes.end()) throw MissingPrototypeError(cls);
        const double inv_n = 1.0 / static_cast<double>(samples.size());
        for (const auto& s : samples) {
            out.reconstruction += inv_n * reconstruction_loss(s.x_gen, s.x);
            out.kl += inv_n * kl_gaussian(s.z, it->second, sigma);
        }
    }
    out.total = out.reconstruction + out.kl;
    return out;
}

double dm_loss(const LatentGroups& latent_of_generated, const PrototypeMap& prototypes) {
    double out = 0.0;
    for (const auto& [cls, latents] : latent_of_generated) {
        if (latents.empty()) continue;
        const auto it = prototypes.find(cls);
        if (it == prototypes.end()) throw MissingPrototypeError(cls);
        const double inv_n = 1.0 / static_cast<double>(latents.size());
        for (const auto& u : latents) out += inv_n * (u - it->second).squaredNorm();
    }
    return out;
}

LossBreakdown vtc_loss(const LossBreakdown& elbo, double dm, double lambda) {
    if (lambda < 0.0) throw std::invalid_argument("vtc_loss: negative lambda");
    LossBreakdown out = elbo;
    out.dm = dm;
    out.total = elbo.total + lambda * dm;
    return out;
}

}  // namespace vtcfed
