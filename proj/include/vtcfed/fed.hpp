#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "vtcfed/accounting.hpp"
#include "vtcfed/data.hpp"
#include "vtcfed/losses.hpp"
#include "vtcfed/metrics.hpp"
#include "vtcfed/rng.hpp"
#include "vtcfed/zoo.hpp"

namespace vtcfed::fed {

enum class TcMode { kSingular, kRegular };
enum class TrainMode { kFull, kElboOnly };

TcMode tc_mode_from_string(const std::string& s);
TrainMode train_mode_from_string(const std::string& s);
const char* to_string(TcMode m);
const char* to_string(TrainMode m);

struct RunConfig {
    std::string name = "run";
    std::string profile = "digits";
    std::string data_root;
    long train_cap = 2000;
    long test_cap = 1000;
    int p = 0;  // 0 -> profile default
    int clusters = 2;
    int clients = 10;        // K
    int participants = 3;    // |K^t| per round
    int rounds = 20;         // T
    int finetune_rounds = 5; // tau
    int epochs = 2;          // E
    int batch_size = 16;
    double lr = 0.05;          // eta
    double lambda = 0.1;
    int synthetic_samples = 100;  // S
    TcMode tc_mode = TcMode::kSingular;
    TrainMode train_mode = TrainMode::kFull;
    double alpha = 0.1;
    std::uint64_t seed = 1;
    std::uint64_t partition_seed = 0;  // 0 -> seed (suite members share it)
    int threads = 0;                   // 0 -> hardware concurrency
    double sigma_init = 1.0;

    std::uint64_t effective_partition_seed() const { return partition_seed ? partition_seed : seed; }
    int resolved_p(const zoo::DataProfile& profile) const { return p > 0 ? p : profile.default_p; }
    void validate() const;  // throws ConfigError
};

struct ClientState {
    int client_id = 0;
    zoo::LocalModel model;
    zoo::VtcDecoder decoder;
    Vec sigma;
    std::vector<int> shard;
    std::set<int> shard_classes;  // Y_k
    PrototypeMap local_prototypes;
};

struct ServerState {
    PrototypeMap prototypes;              // initialized classes only
    Vec sigma;
    std::map<int, std::vector<int>> class_clients;  // K_y registry
    int round = 0;
    std::map<int, std::vector<double>> decoder_uploads;  // regular mode: last upload per client
    std::optional<std::vector<double>> decoder_aggregate;
};

struct SyntheticDataset {
    Tensor xs;  // (S, C, H, W) in [0,1]
    std::vector<int> ys;
};

struct BroadcastMsg {
    PrototypeMap prototypes;  // classes in Y_k that are initialized
    Vec sigma;
};

struct RoundLoss {
    double classification = 0.0;
    double reconstruction = 0.0;
    double kl = 0.0;
    double dm = 0.0;
    double total = 0.0;  // classification + L_tc
    int batches = 0;
};

struct LocalRoundResult {
    PrototypeMap prototypes;
    Vec sigma;
    RoundLoss loss;
};

// Value and gradients of the combined decoder objective for a class-bucketed
// batch, as a function of the free variables (z, sigma, x_gen). The DM term
// re-extracts features from x_gen and backpropagates through the extractor's
// input; extractor parameters are untouched.
struct LtcBatchGrads {
    LossBreakdown value;
    Tensor dz;      // (N, p)
    Vec dsigma;     // direct KL dependence only
    Tensor dx_gen;  // (N, C, H, W)
};

LtcBatchGrads ltc_grads(zoo::LocalModel& model, const Tensor& x, const Tensor& z, const Tensor& x_gen,
                        const std::vector<int>& labels, const PrototypeMap& prototypes, const Vec& sigma,
                        double lambda, TrainMode mode);

// Uniform sample of `count` distinct client ids, ascending.
std::vector<int> select_clients(int total_clients, int count, RandomStream& rng);

// Server -> clients: sigma to every selected client, plus the initialized
// prototypes for that client's classes. Ledger entries per directed message.
std::map<int, BroadcastMsg> broadcast_round_state(const ServerState& server,
                                                  const std::vector<ClientState>& clients,
                                                  const std::vector<int>& selected, int round,
                                                  acct::CommLedger& ledger);

// Algorithm: sigma_k <- broadcast sigma; E epochs of per-batch alternation
// (step A: update f on L + L_tc with the decoder frozen; step B: update psi
// and sigma on L_tc with f frozen); then fresh local prototypes.
LocalRoundResult client_local_round(ClientState& client, const BroadcastMsg& msg, const data::DatasetBundle& bundle,
                                    const RunConfig& config, RandomStream& rng);

// Per class: unweighted mean over uploading clients that carry the class;
// classes with no uploader keep their previous global value.
PrototypeMap aggregate_prototypes(const std::vector<std::pair<int, PrototypeMap>>& uploads,
                                  const PrototypeMap& previous);

// Elementwise unweighted mean, clamped to the sigma floor.
Vec aggregate_sigma(const std::vector<Vec>& uploads);

// Parameterwise unweighted mean over identical architectures.
zoo::VtcDecoder aggregate_decoder(const std::vector<const zoo::VtcDecoder*>& decoders);

// Latent draws for one class: rows of c + sigma .* eps, eps ~ N(0, I).
Tensor draw_class_latents(const Vec& prototype, const Vec& sigma, int count, RandomStream& rng);

// Per initialized class y: decode c^y + sigma .* eps draws; S samples total,
// per-class counts differing by at most one. Throws GenerationError when no
// prototype is initialized.
SyntheticDataset generate_synthetic(zoo::VtcDecoder& decoder, const PrototypeMap& prototypes, const Vec& sigma,
                                    int samples, RandomStream& rng);

// `rounds` passes of mini-batched cross-entropy training on the synthetic
// set. No communication happens here.
void fine_tune(ClientState& client, const SyntheticDataset& synth, int rounds, double lr, int batch_size,
               RandomStream& rng);

// Semantic facts about one round, captured from protocol state (not from the
// ledger) so byte totals can be recomputed independently.
struct RoundTraceEntry {
    int round = 0;
    std::vector<int> selected;
    std::vector<int> y_counts;     // |Y_k| per selected client
    std::vector<int> init_counts;  // |Y_k intersect initialized| before this round's aggregation
};

struct RunResult {
    std::vector<harness::MetricsRecord> metrics;
    acct::CommLedger ledger;
    std::vector<RoundTraceEntry> trace;
    double final_mean_acc = 0.0;      // after fine-tuning (or after round T if tau = 0)
    double pre_finetune_mean_acc = 0.0;
    long decoder_state_elements = 0;
    int generated_classes = 0;
};

// Executes the full protocol: T FL rounds, decoder transmission per tc_mode,
// synthetic generation, fine-tuning with per-epoch evaluation. When out_dir
// is nonempty, writes the run directory (config snapshot, partition manifest,
// metrics, ledger, checkpoints, synthetic sample grid).
RunResult run_experiment(const RunConfig& config, const data::DatasetBundle& bundle,
                         const data::PartitionSpec& partition, const std::string& out_dir);

// Convenience: loads the dataset and builds the partition from the config.
RunResult run_experiment(const RunConfig& config, const std::string& out_dir);

}  // namespace vtcfed::fed
