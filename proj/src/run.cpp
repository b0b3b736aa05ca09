#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <thread>

#include <nlohmann/json.hpp>

#include "vtcfed/errors.hpp"
#include "vtcfed/fed.hpp"
#include "vtcfed/harness.hpp"
#include "vtcfed/image.hpp"

namespace vtcfed::fed {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

int resolve_threads(int configured) {
    if (configured > 0) return configured;
    const unsigned hw = std::thread::hardware_concurrency();
    return hw > 0 ? static_cast<int>(hw) : 1;
}

// Runs fn(i) for i in [0, n) on up to `threads` workers. Work items are
// independent; exceptions are rethrown on the caller thread.
void parallel_for(int n, int threads, const std::function<void(int)>& fn) {
    if (n <= 0) return;
    const int workers = std::max(1, std::min(threads, n));
    if (workers == 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::exception_ptr> errors(static_cast<size_t>(workers));
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&, w]() {
            try {
                for (int i = w; i < n; i += workers) fn(i);
            } catch (...) {
                errors[static_cast<size_t>(w)] = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

harness::MetricsRecord make_record(const RunConfig& config, int round, const std::string& phase,
                                   const harness::EvalResult& eval, const RoundLoss& loss, long ledger_bytes) {
    harness::MetricsRecord r;
    r.run = config.name;
    r.seed = config.seed;
    r.round = round;
    r.phase = phase;
    r.mean_acc = eval.mean;
    r.per_client_acc = eval.per_client;
    r.loss_classification = loss.classification;
    r.loss_reconstruction = loss.reconstruction;
    r.loss_kl = loss.kl;
    r.loss_dm = loss.dm;
    r.loss_total = loss.total;
    r.ledger_bytes = ledger_bytes;
    return r;
}

void write_server_state(const std::string& path, const ServerState& server) {
    json j;
    j["sigma"] = std::vector<double>(server.sigma.data(), server.sigma.data() + server.sigma.size());
    json protos = json::object();
    for (const auto& [y, v] : server.prototypes)
        protos[std::to_string(y)] = std::vector<double>(v.data(), v.data() + v.size());
    j["prototypes"] = protos;
    std::ofstream f(path);
    if (!f) throw IngestionError("cannot write server state: " + path);
    f << j.dump(2) << "\n";
}

}  // namespace

RunResult run_experiment(const RunConfig& config, const data::DatasetBundle& bundle,
                         const data::PartitionSpec& partition, const std::string& out_dir) {
    config.validate();
    const zoo::DataProfile profile = zoo::profile_by_name(config.profile);
    const int p = config.resolved_p(profile);
    if (partition.clients() != config.clients)
        throw ConfigError("partition has " + std::to_string(partition.clients()) + " shards for " +
                          std::to_string(config.clients) + " clients");
    const int threads = resolve_threads(config.threads);

    // --- build client and server state
    const auto clusters = zoo::make_clusters(config.clusters);
    std::vector<ClientState> clients(static_cast<size_t>(config.clients));
    for (int k = 0; k < config.clients; ++k) {
        auto& c = clients[static_cast<size_t>(k)];
        c.client_id = k;
        c.model = zoo::build_local_model(clusters[static_cast<size_t>(k % config.clusters)], profile, p,
                                         derive_seed(config.seed, stream_tag::kModelInit, static_cast<std::uint64_t>(k)));
        c.decoder =
            zoo::build_vtc_decoder(profile, p, derive_seed(config.seed, stream_tag::kDecoderInit, static_cast<std::uint64_t>(k)));
        c.sigma = Vec::Constant(p, config.sigma_init);
        c.shard = partition.shards[static_cast<size_t>(k)];
        for (int idx : c.shard) c.shard_classes.insert(bundle.train_y[static_cast<size_t>(idx)]);
    }

    ServerState server;
    server.sigma = Vec::Constant(p, config.sigma_init);
    for (int k = 0; k < config.clients; ++k)
        for (int y : clients[static_cast<size_t>(k)].shard_classes) server.class_clients[y].push_back(k);

    RunResult result;
    result.decoder_state_elements = clients[0].decoder.state_elements();

    auto eval_all = [&]() {
        std::vector<zoo::LocalModel*> models;
        models.reserve(clients.size());
        for (auto& c : clients) models.push_back(&c.model);
        return harness::evaluate_generalization(models, bundle.test_x, bundle.test_y, threads);
    };

    // --- T federated rounds
    for (int t = 1; t <= config.rounds; ++t) {
        server.round = t;
        RandomStream sel_rng(derive_seed(config.seed, stream_tag::kSelection, static_cast<std::uint64_t>(t)));
        const std::vector<int> selected = select_clients(config.clients, config.participants, sel_rng);

        auto msgs = broadcast_round_state(server, clients, selected, t, result.ledger);

        std::vector<LocalRoundResult> locals(selected.size());
        parallel_for(static_cast<int>(selected.size()), threads, [&](int i) {
            const int k = selected[static_cast<size_t>(i)];
            RandomStream rng(derive_seed(config.seed, stream_tag::kClientRound,
                                         (static_cast<std::uint64_t>(t) << 32) | static_cast<std::uint64_t>(k)));
            locals[static_cast<size_t>(i)] =
                client_local_round(clients[static_cast<size_t>(k)], msgs.at(k), bundle, config, rng);
        });

        // uploads, merged in client-id order (selected is ascending)
        std::vector<std::pair<int, PrototypeMap>> proto_uploads;
        std::vector<Vec> sigma_uploads;
        RoundLoss mean_loss;
        for (size_t i = 0; i < selected.size(); ++i) {
            const int k = selected[i];
            const auto& res = locals[i];
            result.ledger.record(t, acct::Phase::kRound, acct::Direction::kUp, k, acct::kServerId,
                                 acct::Payload::kPrototype, static_cast<long>(res.prototypes.size()) * p);
            result.ledger.record(t, acct::Phase::kRound, acct::Direction::kUp, k, acct::kServerId,
                                 acct::Payload::kSigma, p);
            proto_uploads.emplace_back(k, res.prototypes);
            sigma_uploads.push_back(res.sigma);
            mean_loss.classification += res.loss.classification;
            mean_loss.reconstruction += res.loss.reconstruction;
            mean_loss.kl += res.loss.kl;
            mean_loss.dm += res.loss.dm;
            mean_loss.total += res.loss.total;
        }
        const double inv = 1.0 / static_cast<double>(selected.size());
        mean_loss.classification *= inv;
        mean_loss.reconstruction *= inv;
        mean_loss.kl *= inv;
        mean_loss.dm *= inv;
        mean_loss.total *= inv;

        // trace for the independent byte calculator (captured before aggregation)
        RoundTraceEntry trace;
        trace.round = t;
        trace.selected = selected;
        for (int k : selected) {
            const auto& yk = clients[static_cast<size_t>(k)].shard_classes;
            int inter = 0;
            for (int y : yk)
                if (server.prototypes.count(y)) ++inter;
            trace.y_counts.push_back(static_cast<int>(yk.size()));
            trace.init_counts.push_back(inter);
        }
        result.trace.push_back(std::move(trace));

        server.prototypes = aggregate_prototypes(proto_uploads, server.prototypes);
        server.sigma = aggregate_sigma(sigma_uploads);

        if (config.tc_mode == TcMode::kRegular) {
            for (int k : selected) {
                result.ledger.record(t, acct::Phase::kRound, acct::Direction::kUp, k, acct::kServerId,
                                     acct::Payload::kDecoder, result.decoder_state_elements);
                server.decoder_uploads[k] = clients[static_cast<size_t>(k)].decoder.net.state_flat();
            }
            std::vector<double> mean;
            long count = 0;
            for (const auto& [k, flat] : server.decoder_uploads) {
                ++count;
                if (mean.empty()) {
                    mean = flat;
                    continue;
                }
                for (size_t j = 0; j < flat.size(); ++j) mean[j] += (flat[j] - mean[j]) / static_cast<double>(count);
            }
            server.decoder_aggregate = std::move(mean);
        }

        const auto eval = eval_all();
        result.metrics.push_back(make_record(config, t, "fl", eval, mean_loss, ledger_total(result.ledger)));
    }
    result.pre_finetune_mean_acc = result.metrics.back().mean_acc;

    // --- decoder transmission and global aggregation
    zoo::VtcDecoder global_decoder;
    if (config.tc_mode == TcMode::kSingular) {
        std::vector<const zoo::VtcDecoder*> all;
        for (auto& c : clients) {
            result.ledger.record(config.rounds, acct::Phase::kFinal, acct::Direction::kUp, c.client_id,
                                 acct::kServerId, acct::Payload::kDecoder, result.decoder_state_elements);
            all.push_back(&c.decoder);
        }
        global_decoder = aggregate_decoder(all);
    } else {
        global_decoder = clients[0].decoder.clone();
        global_decoder.net.set_state_flat(*server.decoder_aggregate);
    }

    // final broadcast: global decoder + the full prototype table + sigma
    for (auto& c : clients) {
        result.ledger.record(config.rounds, acct::Phase::kFinal, acct::Direction::kDown, acct::kServerId,
                             c.client_id, acct::Payload::kDecoder, result.decoder_state_elements);
        result.ledger.record(config.rounds, acct::Phase::kFinal, acct::Direction::kDown, acct::kServerId,
                             c.client_id, acct::Payload::kPrototype, static_cast<long>(profile.classes) * p);
        result.ledger.record(config.rounds, acct::Phase::kFinal, acct::Direction::kDown, acct::kServerId,
                             c.client_id, acct::Payload::kSigma, p);
    }
    result.generated_classes = static_cast<int>(server.prototypes.size());
    if (static_cast<int>(server.prototypes.size()) < profile.classes)
        std::fprintf(stderr, "[vtcfed] warning: %d of %d classes never observed; generation skips them\n",
                     profile.classes - static_cast<int>(server.prototypes.size()), profile.classes);

    // --- synthetic generation and fine-tuning (no communication)
    std::vector<SyntheticDataset> synth(clients.size());
    std::vector<zoo::VtcDecoder> local_decoders;
    local_decoders.reserve(clients.size());
    for (size_t k = 0; k < clients.size(); ++k) local_decoders.push_back(global_decoder.clone());
    parallel_for(config.clients, threads, [&](int k) {
        RandomStream rng(derive_seed(config.seed, stream_tag::kGenerate, static_cast<std::uint64_t>(k)));
        synth[static_cast<size_t>(k)] = generate_synthetic(local_decoders[static_cast<size_t>(k)], server.prototypes,
                                                           server.sigma, config.synthetic_samples, rng);
    });

    if (config.finetune_rounds > 0) {
        std::vector<RandomStream> ft_rngs;
        for (int k = 0; k < config.clients; ++k)
            ft_rngs.emplace_back(derive_seed(config.seed, stream_tag::kFineTune, static_cast<std::uint64_t>(k)));
        for (int ft = 1; ft <= config.finetune_rounds; ++ft) {
            parallel_for(config.clients, threads, [&](int k) {
                fine_tune(clients[static_cast<size_t>(k)], synth[static_cast<size_t>(k)], 1, config.lr,
                          config.batch_size, ft_rngs[static_cast<size_t>(k)]);
            });
            const auto eval = eval_all();
            result.metrics.push_back(make_record(config, config.rounds + ft, "finetune", eval, RoundLoss{},
                                                 ledger_total(result.ledger)));
        }
    }
    result.final_mean_acc = result.metrics.back().mean_acc;

    // --- run directory
    if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        fs::create_directories(out_dir + "/checkpoints");
        {
            std::ofstream f(out_dir + "/config.resolved");
            f << harness::serialize_run_config(config);
        }
        data::write_partition_manifest(out_dir + "/partition_manifest.txt", partition);
        harness::write_metrics_jsonl(out_dir + "/metrics.jsonl", result.metrics);
        {
            std::ofstream f(out_dir + "/ledger.tsv");
            result.ledger.export_text(f);
        }
        write_server_state(out_dir + "/server_state.json", server);
        for (auto& c : clients)
            zoo::save_model_checkpoint(out_dir + "/checkpoints/client_" + std::to_string(c.client_id) + ".ckpt",
                                       c.model, config.seed);
        zoo::save_decoder_checkpoint(out_dir + "/checkpoints/decoder.ckpt", global_decoder, config.seed);
        {
            // qualitative sample dump: 64 fresh draws from the global decoder
            RandomStream rng(derive_seed(config.seed, stream_tag::kGenerate, 0xD0D0));
            SyntheticDataset dump = generate_synthetic(global_decoder, server.prototypes, server.sigma, 64, rng);
            img::write_sample_grid_png(out_dir + "/synthetic_grid.png", dump.xs, 8);
        }
        {
            json j;
            j["name"] = config.name;
            j["seed"] = config.seed;
            j["final_mean_acc"] = result.final_mean_acc;
            j["pre_finetune_mean_acc"] = result.pre_finetune_mean_acc;
            j["total_bytes"] = ledger_total(result.ledger);
            j["decoder_state_elements"] = result.decoder_state_elements;
            j["generated_classes"] = result.generated_classes;
            j["tc_mode"] = to_string(config.tc_mode);
            j["train_mode"] = to_string(config.train_mode);
            std::ofstream f(out_dir + "/summary.json");
            f << j.dump(2) << "\n";
        }
    }
    return result;
}

RunResult run_experiment(const RunConfig& config, const std::string& out_dir) {
    config.validate();
    const zoo::DataProfile profile = zoo::profile_by_name(config.profile);
    std::string root = config.data_root;
    if (root.empty()) {
        const char* env = std::getenv("VTCFED_DATA_ROOT");
        if (env) root = env;
    }
    const data::DatasetBundle bundle =
        data::load_dataset(profile, root, config.train_cap, config.test_cap, config.effective_partition_seed());
    const data::PartitionSpec partition = data::dirichlet_partition(bundle.train_y, config.clients, config.alpha,
                                                                    config.effective_partition_seed());
    return run_experiment(config, bundle, partition, out_dir);
}

}  // namespace vtcfed::fed
