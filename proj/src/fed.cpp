#include "vtcfed/fed.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "vtcfed/errors.hpp"

namespace vtcfed::fed {

TcMode tc_mode_from_string(const std::string& s) {
    if (s == "singular") return TcMode::kSingular;
    if (s == "regular") return TcMode::kRegular;
    throw ConfigError("tc_mode must be 'singular' or 'regular', got '" + s + "'");
}

TrainMode train_mode_from_string(const std::string& s) {
    if (s == "full") return TrainMode::kFull;
    if (s == "elbo_only") return TrainMode::kElboOnly;
    throw ConfigError("train_mode must be 'full' or 'elbo_only', got '" + s + "'");
}

const char* to_string(TcMode m) { return m == TcMode::kSingular ? "singular" : "regular"; }
const char* to_string(TrainMode m) { return m == TrainMode::kFull ? "full" : "elbo_only"; }

void RunConfig::validate() const {
    auto positive = [](long v, const char* what) {
        if (v <= 0) throw ConfigError(std::string(what) + " must be positive");
    };
    positive(clients, "clients");
    positive(participants, "participants");
    positive(rounds, "rounds");
    positive(batch_size, "batch_size");
    positive(synthetic_samples, "synthetic_samples");
    positive(clusters, "clusters");
    if (participants > clients) throw ConfigError("participants exceeds client count");
    if (epochs < 0) throw ConfigError("epochs must be >= 0");
    if (finetune_rounds < 0) throw ConfigError("finetune_rounds must be >= 0");
    if (lambda < 0.0) throw ConfigError("lambda must be >= 0");
    if (lr < 0.0) throw ConfigError("lr must be >= 0");
    if (!(sigma_init > 0.0)) throw ConfigError("sigma_init must be > 0");
    if (train_cap < 0 || test_cap < 0) throw ConfigError("caps must be >= 0");
}

namespace {

// Gathers rows of a (N,C,H,W) tensor.
Tensor gather(const Tensor& xs, const std::vector<int>& indices) {
    const long per = xs.numel() / xs.dim(0);
    Tensor out({static_cast<long>(indices.size()), xs.dim(1), xs.dim(2), xs.dim(3)});
    for (size_t i = 0; i < indices.size(); ++i)
        std::copy(xs.data.begin() + indices[i] * per, xs.data.begin() + (indices[i] + 1) * per,
                  out.data.begin() + static_cast<long>(i) * per);
    return out;
}

std::vector<int> gather_labels(const std::vector<int>& ys, const std::vector<int>& indices) {
    std::vector<int> out(indices.size());
    for (size_t i = 0; i < indices.size(); ++i) out[i] = ys[static_cast<size_t>(indices[i])];
    return out;
}

// 1 / (count of the sample's label within the batch); the per-class-mean
// normalization of the losses.
std::vector<double> class_mean_weights(const std::vector<int>& labels) {
    std::map<int, int> counts;
    for (int y : labels) counts[y]++;
    std::vector<double> w(labels.size());
    for (size_t i = 0; i < labels.size(); ++i) w[i] = 1.0 / counts[labels[i]];
    return w;
}

const Vec& prototype_for(const PrototypeMap& protos, int cls) {
    const auto it = protos.find(cls);
    if (it == protos.end()) throw MissingPrototypeError(cls);
    return it->second;
}

Vec draw_noise(RandomStream& rng, long p) {
    Vec eps(p);
    for (long j = 0; j < p; ++j) eps[j] = rng.gaussian();
    return eps;
}

}  // namespace

LtcBatchGrads ltc_grads(zoo::LocalModel& model, const Tensor& x, const Tensor& z, const Tensor& x_gen,
                        const std::vector<int>& labels, const PrototypeMap& prototypes, const Vec& sigma,
                        double lambda, TrainMode mode) {
    const long n = x.dim(0), p = z.dim(1);
    const auto w = class_mean_weights(labels);
    LtcBatchGrads out;
    out.dz = Tensor(z.shape);
    out.dx_gen = Tensor(x_gen.shape);
    out.dsigma = Vec::Zero(p);

    double weight_sum = 0.0;
    for (long i = 0; i < n; ++i) {
        const Vec& c = prototype_for(prototypes, labels[static_cast<size_t>(i)]);
        const double wi = w[static_cast<size_t>(i)];
        weight_sum += wi;
        // reconstruction
        out.value.reconstruction += wi * (x_gen.sample(i) - x.sample(i)).squaredNorm();
        out.dx_gen.sample(i) = 2.0 * wi * (x_gen.sample(i) - x.sample(i));
        // analytic KL
        const Vec zi = z.sample(i);
        out.value.kl += wi * kl_gaussian(zi, c, sigma);
        out.dz.sample(i) = wi * (zi - c);
    }
    for (long j = 0; j < p; ++j) out.dsigma[j] = weight_sum * (sigma[j] - 1.0 / sigma[j]);

    if (mode == TrainMode::kFull) {
        Tensor u = model.extract(x_gen, nn::Mode::kTrain);
        Tensor du(u.shape);
        for (long i = 0; i < n; ++i) {
            const Vec& c = prototype_for(prototypes, labels[static_cast<size_t>(i)]);
            const double wi = w[static_cast<size_t>(i)];
            const Vec diff = u.sample(i) - c;
            out.value.dm += wi * diff.squaredNorm();
            du.sample(i) = 2.0 * lambda * wi * diff;
        }
        // through the extractor's input only; its parameters stay frozen here
        Tensor dxg = model.extractor.backward(du, /*want_param_grads=*/false);
        out.dx_gen.vec() += dxg.vec();
    }
    out.value.total = out.value.reconstruction + out.value.kl + lambda * out.value.dm;
    return out;
}

std::vector<int> select_clients(int total_clients, int count, RandomStream& rng) {
    if (count > total_clients) throw std::invalid_argument("select_clients: count exceeds client total");
    return rng.sample_without_replacement(total_clients, count);
}

std::map<int, BroadcastMsg> broadcast_round_state(const ServerState& server, const std::vector<ClientState>& clients,
                                                  const std::vector<int>& selected, int round,
                                                  acct::CommLedger& ledger) {
    if (selected.empty()) throw ProtocolError("broadcast: no clients selected");
    const long p = server.sigma.size();
    std::map<int, BroadcastMsg> out;
    for (int k : selected) {
        BroadcastMsg msg;
        msg.sigma = server.sigma;
        for (int y : clients[static_cast<size_t>(k)].shard_classes) {
            const auto it = server.prototypes.find(y);
            if (it != server.prototypes.end()) msg.prototypes[y] = it->second;
        }
        if (!msg.prototypes.empty())
            ledger.record(round, acct::Phase::kRound, acct::Direction::kDown, acct::kServerId, k,
                          acct::Payload::kPrototype, static_cast<long>(msg.prototypes.size()) * p);
        ledger.record(round, acct::Phase::kRound, acct::Direction::kDown, acct::kServerId, k, acct::Payload::kSigma,
                      p);
        out.emplace(k, std::move(msg));
    }
    return out;
}

namespace {

std::string breakdown_str(const RoundLoss& l) {
    std::ostringstream s;
    s << "classification=" << l.classification << " reconstruction=" << l.reconstruction << " kl=" << l.kl
      << " dm=" << l.dm << " total=" << l.total;
    return s.str();
}

}  // namespace

LocalRoundResult client_local_round(ClientState& client, const BroadcastMsg& msg, const data::DatasetBundle& bundle,
                                    const RunConfig& config, RandomStream& rng) {
    const long p = client.model.p;
    client.sigma = clamp_sigma(msg.sigma);

    // Effective prototypes for this round: the broadcast globals, with the
    // client's own local prototypes filling classes not yet initialized.
    PrototypeMap eff = msg.prototypes;
    {
        std::vector<int> missing_idx;
        for (int idx : client.shard) {
            if (!eff.count(bundle.train_y[static_cast<size_t>(idx)])) missing_idx.push_back(idx);
        }
        if (!missing_idx.empty()) {
            Tensor xs = gather(bundle.train_x, missing_idx);
            PrototypeMap local = zoo::local_prototypes(client.model, xs, gather_labels(bundle.train_y, missing_idx));
            for (auto& [y, v] : local) eff.emplace(y, std::move(v));
        }
    }

    RoundLoss acc;
    std::vector<int> order = client.shard;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        rng.shuffle(order);
        for (size_t start = 0; start < order.size(); start += static_cast<size_t>(config.batch_size)) {
            const size_t end = std::min(order.size(), start + static_cast<size_t>(config.batch_size));
            const std::vector<int> batch_idx(order.begin() + static_cast<long>(start),
                                             order.begin() + static_cast<long>(end));
            const long bs = static_cast<long>(batch_idx.size());
            Tensor x = gather(bundle.train_x, batch_idx);
            const std::vector<int> labels = gather_labels(bundle.train_y, batch_idx);
            const auto w = class_mean_weights(labels);

            RoundLoss step;
            step.batches = 1;

            // ---- step A: update f = h o g on L + L_tc, decoder and sigma frozen.
            // Frozen means no decoder parameter updates; the reconstruction
            // gradient still flows through the decoder into z (this is what
            // forces the latents to keep encoding the input). Only the DM
            // term treats the decoder output as a constant here.
            Tensor z = client.model.extractor.forward(x, nn::Mode::kTrain);
            Tensor scores = client.model.head.forward(z, nn::Mode::kTrain);
            Tensor dscores(scores.shape);
            for (long i = 0; i < bs; ++i) {
                const Vec s = scores.sample(i);
                step.classification += zoo::classification_loss(s, labels[static_cast<size_t>(i)]) / bs;
                dscores.sample(i) = zoo::classification_grad(s, labels[static_cast<size_t>(i)]) / bs;
            }
            Tensor dz = client.model.head.backward(dscores, true);
            for (long i = 0; i < bs; ++i) {
                const Vec& c = prototype_for(eff, labels[static_cast<size_t>(i)]);
                const double wi = w[static_cast<size_t>(i)];
                step.kl += wi * kl_gaussian(z.sample(i), c, client.sigma);
                dz.sample(i) += wi * (z.sample(i) - Eigen::Map<const Eigen::VectorXd>(c.data(), p));
            }

            Tensor eps({bs, p});
            for (long i = 0; i < bs; ++i) eps.sample(i) = draw_noise(rng, p);
            Tensor v({bs, p});
            for (long i = 0; i < bs; ++i) v.sample(i) = reparameterize(z.sample(i), client.sigma, eps.sample(i));
            Tensor x_gen = client.decoder.decode(v, nn::Mode::kTrainFrozenStats);
            Tensor drc(x_gen.shape);
            for (long i = 0; i < bs; ++i) {
                const double wi = w[static_cast<size_t>(i)];
                step.reconstruction += wi * (x_gen.sample(i) - x.sample(i)).squaredNorm();
                drc.sample(i) = 2.0 * wi * (x_gen.sample(i) - x.sample(i));
            }
            Tensor dv = client.decoder.backward(drc, /*want_param_grads=*/false);
            dz.vec() += dv.vec();  // dv/dz = I under the reparameterization
            client.model.extractor.backward(dz, true);

            if (config.train_mode == TrainMode::kFull) {
                Tensor u = client.model.extractor.forward(x_gen, nn::Mode::kTrain);
                Tensor du(u.shape);
                for (long i = 0; i < bs; ++i) {
                    const Vec& c = prototype_for(eff, labels[static_cast<size_t>(i)]);
                    const double wi = w[static_cast<size_t>(i)];
                    const Vec diff = u.sample(i) - c;
                    step.dm += wi * diff.squaredNorm();
                    du.sample(i) = 2.0 * config.lambda * wi * diff;
                }
                client.model.extractor.backward(du, true);
            }
            client.model.sgd_step(config.lr);
            client.model.zero_grad();

            step.total = step.classification + step.reconstruction + step.kl + config.lambda * step.dm;
            if (!std::isfinite(step.total))
                throw NumericError("non-finite loss in client " + std::to_string(client.client_id) + " step A: " +
                                   breakdown_str(step));

            // ---- step B: update psi and sigma on L_tc, f frozen at its
            // post-step-A values. Gradients flow through the extractor's
            // input (DM) and the decoder; extractor parameters stay fixed.
            Tensor z2 = client.model.extractor.forward(x, nn::Mode::kEval);
            Tensor eps2({bs, p});
            for (long i = 0; i < bs; ++i) eps2.sample(i) = draw_noise(rng, p);
            Tensor v2({bs, p});
            for (long i = 0; i < bs; ++i) v2.sample(i) = reparameterize(z2.sample(i), client.sigma, eps2.sample(i));
            Tensor x_gen2 = client.decoder.decode(v2, nn::Mode::kTrain);
            LtcBatchGrads g = ltc_grads(client.model, x, z2, x_gen2, labels, eff, client.sigma, config.lambda,
                                        config.train_mode);
            Tensor dv2 = client.decoder.backward(g.dx_gen, true);
            Vec dsigma = g.dsigma;
            for (long i = 0; i < bs; ++i) dsigma += dv2.sample(i).cwiseProduct(eps2.sample(i));
            client.decoder.net.sgd_step(config.lr);
            client.decoder.net.zero_grad();
            if (config.lr != 0.0) client.sigma = clamp_sigma(client.sigma - config.lr * dsigma);
            if (!std::isfinite(g.value.total) || !client.sigma.allFinite())
                throw NumericError("non-finite loss in client " + std::to_string(client.client_id) +
                                   " step B: total=" + std::to_string(g.value.total));

            acc.classification += step.classification;
            acc.reconstruction += step.reconstruction;
            acc.kl += step.kl;
            acc.dm += step.dm;
            acc.total += step.total;
            acc.batches += 1;
        }
    }

    if (acc.batches > 0) {
        const double inv = 1.0 / acc.batches;
        acc.classification *= inv;
        acc.reconstruction *= inv;
        acc.kl *= inv;
        acc.dm *= inv;
        acc.total *= inv;
    }

    LocalRoundResult res;
    Tensor shard_x = gather(bundle.train_x, client.shard);
    res.prototypes = zoo::local_prototypes(client.model, shard_x, gather_labels(bundle.train_y, client.shard));
    client.local_prototypes = res.prototypes;
    res.sigma = client.sigma;
    res.loss = acc;
    return res;
}

// Aggregation uses the running-mean form m_k = m_{k-1} + (x_k - m_{k-1})/k;
// identical inputs reproduce themselves bit-exactly and mirrored inputs
// cancel exactly, which the protocol contracts rely on.
PrototypeMap aggregate_prototypes(const std::vector<std::pair<int, PrototypeMap>>& uploads,
                                  const PrototypeMap& previous) {
    PrototypeMap means;
    std::map<int, int> counts;
    for (const auto& [client_id, protos] : uploads) {
        for (const auto& [y, v] : protos) {
            auto [it, fresh] = means.try_emplace(y, v);
            const int k = ++counts[y];
            if (!fresh) it->second += (v - it->second) / static_cast<double>(k);
        }
    }
    PrototypeMap out = previous;
    for (auto& [y, v] : means) out[y] = std::move(v);
    return out;
}

Vec aggregate_sigma(const std::vector<Vec>& uploads) {
    if (uploads.empty()) throw ProtocolError("aggregate_sigma: no uploads");
    Vec mean = uploads.front();
    for (size_t i = 1; i < uploads.size(); ++i) {
        if (uploads[i].size() != mean.size()) throw ProtocolError("aggregate_sigma: length mismatch");
        mean += (uploads[i] - mean) / static_cast<double>(i + 1);
    }
    return clamp_sigma(std::move(mean));
}

zoo::VtcDecoder aggregate_decoder(const std::vector<const zoo::VtcDecoder*>& decoders) {
    if (decoders.empty()) throw ProtocolError("aggregate_decoder: no decoders");
    const auto* first = decoders.front();
    for (const auto* d : decoders)
        if (d->latent_c != first->latent_c || d->latent_h != first->latent_h || d->latent_w != first->latent_w ||
            d->mid1 != first->mid1 || d->mid2 != first->mid2 || d->output_shape != first->output_shape)
            throw ProtocolError("aggregate_decoder: architecture mismatch");
    std::vector<double> mean = const_cast<zoo::VtcDecoder*>(first)->net.state_flat();
    for (size_t i = 1; i < decoders.size(); ++i) {
        const auto flat = const_cast<zoo::VtcDecoder*>(decoders[i])->net.state_flat();
        if (flat.size() != mean.size()) throw ProtocolError("aggregate_decoder: state size mismatch");
        for (size_t j = 0; j < mean.size(); ++j) mean[j] += (flat[j] - mean[j]) / static_cast<double>(i + 1);
    }
    zoo::VtcDecoder out = first->clone();
    out.net.set_state_flat(mean);
    return out;
}

Tensor draw_class_latents(const Vec& prototype, const Vec& sigma, int count, RandomStream& rng) {
    Tensor latents({count, prototype.size()});
    for (int i = 0; i < count; ++i)
        latents.sample(i) = reparameterize(prototype, sigma, draw_noise(rng, prototype.size()));
    return latents;
}

SyntheticDataset generate_synthetic(zoo::VtcDecoder& decoder, const PrototypeMap& prototypes, const Vec& sigma,
                                    int samples, RandomStream& rng) {
    if (prototypes.empty()) throw GenerationError("no initialized prototypes");
    const long p = decoder.p();
    const int n_classes = static_cast<int>(prototypes.size());
    const int base = samples / n_classes, rem = samples % n_classes;

    SyntheticDataset out;
    out.xs = Tensor({samples, decoder.output_shape[0], decoder.output_shape[1], decoder.output_shape[2]});
    out.ys.reserve(static_cast<size_t>(samples));
    long row = 0;
    int class_rank = 0;
    for (const auto& [y, proto] : prototypes) {
        const int count = base + (class_rank < rem ? 1 : 0);
        ++class_rank;
        if (count == 0) continue;
        if (proto.size() != p) throw GenerationError("prototype length mismatch for class " + std::to_string(y));
        Tensor latents = draw_class_latents(proto, sigma, count, rng);
        Tensor decoded = decoder.decode(latents, nn::Mode::kEval);
        const long per = decoded.numel() / count;
        std::copy(decoded.data.begin(), decoded.data.end(), out.xs.data.begin() + row * per);
        for (int i = 0; i < count; ++i) out.ys.push_back(y);
        row += count;
    }
    return out;
}

void fine_tune(ClientState& client, const SyntheticDataset& synth, int rounds, double lr, int batch_size,
               RandomStream& rng) {
    if (rounds <= 0) return;
    if (synth.ys.empty()) throw std::invalid_argument("fine_tune: empty synthetic dataset");
    const long total = static_cast<long>(synth.ys.size());
    std::vector<int> order(static_cast<size_t>(total));
    for (long i = 0; i < total; ++i) order[static_cast<size_t>(i)] = static_cast<int>(i);
    for (int r = 0; r < rounds; ++r) {
        rng.shuffle(order);
        for (size_t start = 0; start < order.size(); start += static_cast<size_t>(batch_size)) {
            const size_t end = std::min(order.size(), start + static_cast<size_t>(batch_size));
            const std::vector<int> batch_idx(order.begin() + static_cast<long>(start),
                                             order.begin() + static_cast<long>(end));
            const long bs = static_cast<long>(batch_idx.size());
            Tensor x = gather(synth.xs, batch_idx);
            Tensor z = client.model.extractor.forward(x, nn::Mode::kTrain);
            Tensor scores = client.model.head.forward(z, nn::Mode::kTrain);
            Tensor dscores(scores.shape);
            double loss = 0.0;
            for (long i = 0; i < bs; ++i) {
                const int y = synth.ys[static_cast<size_t>(batch_idx[static_cast<size_t>(i)])];
                const Vec s = scores.sample(i);
                loss += zoo::classification_loss(s, y) / bs;
                dscores.sample(i) = zoo::classification_grad(s, y) / bs;
            }
            if (!std::isfinite(loss))
                throw NumericError("non-finite fine-tune loss in client " + std::to_string(client.client_id));
            Tensor dz = client.model.head.backward(dscores, true);
            client.model.extractor.backward(dz, true);
            client.model.sgd_step(lr);
            client.model.zero_grad();
        }
    }
}

}  // namespace vtcfed::fed
