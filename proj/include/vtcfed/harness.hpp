#pragma once

#include <map>
#include <string>
#include <vector>

#include "vtcfed/fed.hpp"
#include "vtcfed/metrics.hpp"

namespace vtcfed::harness {

// Flat `key = value` config text with '#' comments and a required
// schema_version. Unknown keys are rejected when resolving a RunConfig.
class KVConfig {
public:
    static KVConfig parse_file(const std::string& path);
    static KVConfig parse_string(const std::string& text);

    bool has(const std::string& key) const { return kv_.count(key) > 0; }
    std::string get_string(const std::string& key, const std::string& fallback) const;
    long get_long(const std::string& key, long fallback) const;
    double get_double(const std::string& key, double fallback) const;
    void set(const std::string& key, const std::string& value) { kv_[key] = value; }
    const std::map<std::string, std::string>& entries() const { return kv_; }

private:
    std::map<std::string, std::string> kv_;
};

// Resolves a RunConfig; throws ConfigError on unknown keys, bad values or a
// missing/unsupported schema_version.
fed::RunConfig load_run_config(const KVConfig& kv);
// The archived snapshot format: schema_version plus every resolved field.
std::string serialize_run_config(const fed::RunConfig& config);

struct EvalResult {
    std::vector<double> per_client;  // percent
    double mean = 0.0;               // percent
};

// Top-1 accuracy of every model on the full test set; mean alongside.
EvalResult evaluate_generalization(std::vector<zoo::LocalModel*>& models, const Tensor& test_x,
                                   const std::vector<int>& test_y, int threads);

struct SuiteMember {
    std::string name;
    fed::RunConfig config;
};

// The standard ablation battery: fedvtc-singular, fedvtc-regular, elbo-only,
// no-finetune. All share the base config's dataset and partition seed.
std::vector<SuiteMember> standard_suite(const fed::RunConfig& base);

struct SuiteRunOutcome {
    std::string name;
    std::uint64_t seed = 0;
    bool ok = false;
    std::string error;
    double final_mean_acc = 0.0;
    long total_bytes = 0;
};

struct SuiteResult {
    std::vector<SuiteRunOutcome> outcomes;
    std::string summary_text;
};

// Runs each member with `repeats` seeds (base seed + 1..repeats), one output
// directory per (member, seed). Sub-run failures are recorded and the suite
// continues. Ends by writing the report into out_root.
SuiteResult run_suite(const std::vector<SuiteMember>& members, int repeats, const std::string& out_root);

// Pure function of stored metrics: summary table (mean +/- SD per run name),
// per-round accuracy curve data (CSV) and SVG plots, and a singular/regular
// comparison when both are present. Throws ConfigError("no runs found") on an
// empty directory.
void write_report(const std::string& runs_root, const std::string& out_dir);

}  // namespace vtcfed::harness
