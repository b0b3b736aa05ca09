#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace vtcfed::harness {

// One evaluation point of a run. FL rounds carry phase "fl"; fine-tuning
// evaluation points carry phase "finetune" and keep counting rounds upward,
// so a run emits exactly T + tau records.
struct MetricsRecord {
    std::string run;
    std::uint64_t seed = 0;
    int round = 0;
    std::string phase = "fl";
    double mean_acc = 0.0;                 // percent, arithmetic mean of per-client
    std::vector<double> per_client_acc;    // percent
    double loss_classification = 0.0;      // means over the round's participants
    double loss_reconstruction = 0.0;
    double loss_kl = 0.0;
    double loss_dm = 0.0;
    double loss_total = 0.0;
    long ledger_bytes = 0;  // cumulative transmitted bytes when the record was written

    std::string to_jsonl() const;
    static MetricsRecord from_jsonl(const std::string& line);
};

void write_metrics_jsonl(const std::string& path, const std::vector<MetricsRecord>& records);
std::vector<MetricsRecord> read_metrics_jsonl(const std::string& path);

}  // namespace vtcfed::harness
