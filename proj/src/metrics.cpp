#include "vtcfed/metrics.hpp"

#include <fstream>

#include <nlohmann/json.hpp>

#include "vtcfed/errors.hpp"

namespace vtcfed::harness {

using json = nlohmann::ordered_json;

std::string MetricsRecord::to_jsonl() const {
    json j;
    j["run"] = run;
    j["seed"] = seed;
    j["round"] = round;
    j["phase"] = phase;
    j["mean_acc"] = mean_acc;
    j["per_client_acc"] = per_client_acc;
    j["loss"] = {{"classification", loss_classification},
                 {"reconstruction", loss_reconstruction},
                 {"kl", loss_kl},
                 {"dm", loss_dm},
                 {"total", loss_total}};
    j["ledger_bytes"] = ledger_bytes;
    return j.dump();
}

MetricsRecord MetricsRecord::from_jsonl(const std::string& line) {
    const json j = json::parse(line);
    MetricsRecord r;
    r.run = j.at("run").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.round = j.at("round").get<int>();
    r.phase = j.at("phase").get<std::string>();
    r.mean_acc = j.at("mean_acc").get<double>();
    r.per_client_acc = j.at("per_client_acc").get<std::vector<double>>();
    const auto& l = j.at("loss");
    r.loss_classification = l.at("classification").get<double>();
    r.loss_reconstruction = l.at("reconstruction").get<double>();
    r.loss_kl = l.at("kl").get<double>();
    r.loss_dm = l.at("dm").get<double>();
    r.loss_total = l.at("total").get<double>();
    r.ledger_bytes = j.at("ledger_bytes").get<long>();
    return r;
}

void write_metrics_jsonl(const std::string& path, const std::vector<MetricsRecord>& records) {
    std::ofstream f(path);
    if (!f) throw IngestionError("cannot write metrics: " + path);
    for (const auto& r : records) f << r.to_jsonl() << "\n";
}

std::vector<MetricsRecord> read_metrics_jsonl(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IngestionError("cannot read metrics: " + path);
    std::vector<MetricsRecord> out;
    std::string line;
    while (std::getline(f, line)) {
        if (!line.empty()) out.push_back(MetricsRecord::from_jsonl(line));
    }
    return out;
}

}  // namespace vtcfed::harness
