#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>

#include <nlohmann/json.hpp>

#include "vtcfed/data.hpp"
#include "vtcfed/errors.hpp"
#include "vtcfed/fed.hpp"
#include "vtcfed/harness.hpp"
#include "vtcfed/image.hpp"

namespace {

using namespace vtcfed;

struct CommonFlags {
    std::string config_path;
    std::string out;
    std::string data_root;
    long seed = -1;
    long cap_train = -1;
    long cap_test = -1;
    std::string name;
};

fed::RunConfig resolve_config(const CommonFlags& flags) {
    harness::KVConfig kv;
    if (!flags.config_path.empty()) {
        kv = harness::KVConfig::parse_file(flags.config_path);
    } else {
        kv.set("schema_version", "1");
    }
    if (flags.seed >= 0) kv.set("seed", std::to_string(flags.seed));
    if (!flags.data_root.empty()) kv.set("data_root", flags.data_root);
    if (flags.cap_train >= 0) kv.set("train_cap", std::to_string(flags.cap_train));
    if (flags.cap_test >= 0) kv.set("test_cap", std::to_string(flags.cap_test));
    if (!flags.name.empty()) kv.set("name", flags.name);
    return harness::load_run_config(kv);
}

void add_common(CLI::App* cmd, CommonFlags& flags, bool with_out) {
    cmd->add_option("--config", flags.config_path, "config file (key = value lines)");
    cmd->add_option("--seed", flags.seed, "seed override");
    cmd->add_option("--data-root", flags.data_root, "dataset root override (also: VTCFED_DATA_ROOT)");
    cmd->add_option("--cap-train", flags.cap_train, "training-set size cap override");
    cmd->add_option("--cap-test", flags.cap_test, "test-set size cap override");
    cmd->add_option("--name", flags.name, "run name override");
    if (with_out) cmd->add_option("--out", flags.out, "output directory");
}

void print_partition_summary(const data::PartitionSpec& spec, const std::vector<int>& labels) {
    std::cout << "clients=" << spec.clients() << " alpha=" << spec.alpha << " seed=" << spec.seed << "\n";
    for (int k = 0; k < spec.clients(); ++k) {
        std::map<int, int> hist;
        for (int idx : spec.shards[static_cast<size_t>(k)]) hist[labels[static_cast<size_t>(idx)]]++;
        std::cout << "client " << k << ": n=" << spec.shards[static_cast<size_t>(k)].size() << " classes={";
        bool first = true;
        for (const auto& [y, n] : hist) {
            std::cout << (first ? "" : ", ") << y << ":" << n;
            first = false;
        }
        std::cout << "}\n";
    }
}

int cmd_partition(const CommonFlags& flags, const std::string& manifest_in) {
    if (!manifest_in.empty()) {
        const auto spec = data::read_partition_manifest(manifest_in);
        std::cout << "manifest: clients=" << spec.clients() << " alpha=" << spec.alpha << " seed=" << spec.seed
                  << " samples=" << spec.assigned() << "\n";
        for (int k = 0; k < spec.clients(); ++k)
            std::cout << "client " << k << ": n=" << spec.shards[static_cast<size_t>(k)].size() << "\n";
        return 0;
    }
    const fed::RunConfig config = resolve_config(flags);
    const auto profile = zoo::profile_by_name(config.profile);
    std::string root = config.data_root;
    if (root.empty()) {
        if (const char* env = std::getenv("VTCFED_DATA_ROOT")) root = env;
    }
    const auto bundle =
        data::load_dataset(profile, root, config.train_cap, config.test_cap, config.effective_partition_seed());
    const auto spec = data::dirichlet_partition(bundle.train_y, config.clients, config.alpha,
                                                config.effective_partition_seed());
    if (!flags.out.empty()) {
        data::write_partition_manifest(flags.out, spec);
        std::cout << "wrote " << flags.out << "\n";
    }
    print_partition_summary(spec, bundle.train_y);
    return 0;
}

int cmd_run(const CommonFlags& flags) {
    const fed::RunConfig config = resolve_config(flags);
    const std::string out = flags.out.empty() ? "runs/" + config.name + "-s" + std::to_string(config.seed) : flags.out;
    const auto result = fed::run_experiment(config, out);
    std::cout << "run " << config.name << " seed " << config.seed << ": pre-finetune acc "
              << result.pre_finetune_mean_acc << "%, final acc " << result.final_mean_acc << "%, bytes "
              << ledger_total(result.ledger) << "\n";
    std::cout << "artifacts in " << out << "\n";
    return 0;
}

int cmd_suite(const CommonFlags& flags, int repeats) {
    fed::RunConfig base = resolve_config(flags);
    const std::string out = flags.out.empty() ? "runs/suite" : flags.out;
    const auto members = harness::standard_suite(base);
    const auto result = harness::run_suite(members, repeats, out);
    int failures = 0;
    for (const auto& o : result.outcomes) {
        if (o.ok) {
            std::cout << o.name << " seed " << o.seed << ": acc " << o.final_mean_acc << "%, bytes " << o.total_bytes
                      << "\n";
        } else {
            ++failures;
            std::cout << o.name << " seed " << o.seed << ": FAILED (" << o.error << ")\n";
        }
    }
    std::cout << "\n" << result.summary_text;
    std::cout << "report in " << out << "\n";
    return failures == 0 ? 0 : 1;
}

int cmd_report(const std::string& dir, const std::string& out) {
    harness::write_report(dir, out.empty() ? dir : out);
    std::cout << "report in " << (out.empty() ? dir : out) << "\n";
    return 0;
}

int cmd_dump_synthetic(const std::string& run_dir, const std::string& out, int samples, long seed) {
    const auto kv = harness::KVConfig::parse_file(run_dir + "/config.resolved");
    const fed::RunConfig config = harness::load_run_config(kv);
    const auto profile = zoo::profile_by_name(config.profile);
    auto decoder = zoo::build_vtc_decoder(profile, config.resolved_p(profile), 0);
    zoo::load_decoder_checkpoint(run_dir + "/checkpoints/decoder.ckpt", decoder);

    std::ifstream f(run_dir + "/server_state.json");
    if (!f) throw IngestionError("cannot read " + run_dir + "/server_state.json");
    nlohmann::json state = nlohmann::json::parse(f);
    const auto sig = state.at("sigma").get<std::vector<double>>();
    Vec sigma = Eigen::Map<const Vec>(sig.data(), static_cast<long>(sig.size()));
    PrototypeMap prototypes;
    for (const auto& [key, value] : state.at("prototypes").items()) {
        const auto v = value.get<std::vector<double>>();
        prototypes[std::stoi(key)] = Eigen::Map<const Vec>(v.data(), static_cast<long>(v.size()));
    }
    RandomStream rng(derive_seed(seed < 0 ? config.seed : static_cast<std::uint64_t>(seed), stream_tag::kGenerate,
                                 0xD0D0));
    const auto synth = fed::generate_synthetic(decoder, prototypes, sigma, samples, rng);
    const std::string path = out.empty() ? run_dir + "/synthetic_grid.png" : out;
    img::write_sample_grid_png(path, synth.xs, 8);
    std::cout << "wrote " << path << " (" << samples << " samples, " << prototypes.size() << " classes)\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"federated learning with a variational transposed-convolution decoder"};
    app.require_subcommand(1);

    CommonFlags part_flags;
    std::string part_manifest;
    auto* partition = app.add_subcommand("partition", "build or inspect a Dirichlet partition");
    add_common(partition, part_flags, true);
    partition->add_option("--manifest", part_manifest, "inspect an existing manifest instead of building");

    CommonFlags run_flags;
    auto* run = app.add_subcommand("run", "execute a single configured experiment");
    add_common(run, run_flags, true);

    CommonFlags suite_flags;
    int repeats = 3;
    auto* suite = app.add_subcommand("suite", "run the ablation battery (singular/regular/elbo-only/no-finetune)");
    add_common(suite, suite_flags, true);
    suite->add_option("--repeats", repeats, "independent trials per member")->check(CLI::PositiveNumber);

    std::string report_dir, report_out;
    auto* report = app.add_subcommand("report", "summaries and plots from stored metrics");
    report->add_option("--dir", report_dir, "directory containing run subdirectories")->required();
    report->add_option("--out", report_out, "output directory (defaults to --dir)");

    std::string dump_run, dump_out;
    int dump_samples = 64;
    long dump_seed = -1;
    auto* dump = app.add_subcommand("dump-synthetic", "export a synthetic-sample image grid from a stored run");
    dump->add_option("--run", dump_run, "run directory")->required();
    dump->add_option("--out", dump_out, "output PNG path");
    dump->add_option("--samples", dump_samples, "number of samples");
    dump->add_option("--seed", dump_seed, "sampling seed override");

    try {
        app.parse(argc, argv);
        if (partition->parsed()) return cmd_partition(part_flags, part_manifest);
        if (run->parsed()) return cmd_run(run_flags);
        if (suite->parsed()) return cmd_suite(suite_flags, repeats);
        if (report->parsed()) return cmd_report(report_dir, report_out);
        if (dump->parsed()) return cmd_dump_synthetic(dump_run, dump_out, dump_samples, dump_seed);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
