#include "vtcfed/accounting.hpp"

#include <iomanip>
#include <map>
#include <ostream>

namespace vtcfed::acct {

const char* to_string(Direction d) { return d == Direction::kUp ? "up" : "down"; }

const char* to_string(Payload p) {
    switch (p) {
        case Payload::kPrototype: return "prototype";
        case Payload::kSigma: return "sigma";
        default: return "decoder";
    }
}

const char* to_string(Phase p) { return p == Phase::kRound ? "round" : "final"; }

void CommLedger::record(int round, Phase phase, Direction dir, int sender, int receiver, Payload kind,
                        long elements) {
    LedgerEntry e;
    e.seq = next_seq_++;
    e.round = round;
    e.phase = phase;
    e.dir = dir;
    e.sender = sender;
    e.receiver = receiver;
    e.kind = kind;
    e.elements = elements;
    e.bytes = elements * kBytesPerElement;
    entries_.push_back(e);
}

void CommLedger::export_text(std::ostream& out) const {
    out << "# seq\tround\tphase\tdir\tsender\treceiver\tkind\telements\tbytes\n";
    std::map<std::string, long> totals;
    long grand = 0;
    for (const auto& e : entries_) {
        out << e.seq << '\t' << e.round << '\t' << to_string(e.phase) << '\t' << to_string(e.dir) << '\t' << e.sender
            << '\t' << e.receiver << '\t' << to_string(e.kind) << '\t' << e.elements << '\t' << e.bytes << '\n';
        totals[std::string(to_string(e.kind)) + "/" + to_string(e.dir)] += e.bytes;
        grand += e.bytes;
    }
    out << "# totals\n";
    for (const auto& [key, bytes] : totals) out << "# " << key << " = " << bytes << " bytes\n";
    out << "# total = " << grand << " bytes\n";
}

long ledger_total(const CommLedger& ledger, const LedgerFilter& filter) {
    long total = 0;
    for (const auto& e : ledger.entries()) {
        if (filter.kind && e.kind != *filter.kind) continue;
        if (filter.dir && e.dir != *filter.dir) continue;
        if (filter.phase && e.phase != *filter.phase) continue;
        if (filter.round_min && e.round < *filter.round_min) continue;
        if (filter.round_max && e.round > *filter.round_max) continue;
        total += e.bytes;
    }
    return total;
}

MemoryEstimate estimate_memory(nn::Sequential& net, const std::vector<long>& sample_shape, int batch) {
    MemoryEstimate m;
    const long params = net.param_elements();
    m.param_bytes = params * kBytesPerElement;
    m.grad_bytes = params * kBytesPerElement;
    std::vector<long> in = {1};
    in.insert(in.end(), sample_shape.begin(), sample_shape.end());
    m.activation_bytes = net.activation_elements(in) * static_cast<long>(batch) * kBytesPerElement;
    return m;
}

MemoryEstimate estimate_memory(zoo::LocalModel& model, int batch) {
    MemoryEstimate e = estimate_memory(model.extractor, model.input_shape, batch);
    const MemoryEstimate h = estimate_memory(model.head, {static_cast<long>(model.p)}, batch);
    e.param_bytes += h.param_bytes;
    e.grad_bytes += h.grad_bytes;
    e.activation_bytes += h.activation_bytes;
    return e;
}

MemoryEstimate estimate_memory(zoo::VtcDecoder& decoder, int batch) {
    return estimate_memory(decoder.net, {decoder.latent_c, decoder.latent_h, decoder.latent_w}, batch);
}

SchedulePeaks schedule_peaks(zoo::LocalModel& model, zoo::VtcDecoder& decoder, int batch) {
    const MemoryEstimate mf = estimate_memory(model, batch);
    const MemoryEstimate md = estimate_memory(decoder, batch);
    const MemoryEstimate mg = estimate_memory(model.extractor, model.input_shape, batch);
    const long p_model = model.param_elements() * kBytesPerElement;
    const long p_dec = md.param_bytes;
    const long sigma = 2 * static_cast<long>(model.p) * kBytesPerElement;  // sigma value + grad

    SchedulePeaks s;
    s.step_a = mf.total() + p_dec + md.activation_bytes;
    s.step_b = md.total() + sigma + p_model + mg.activation_bytes;
    s.alternating = std::max(s.step_a, s.step_b);
    s.simultaneous = mf.total() + md.total() + sigma;
    return s;
}

void export_memory_table(std::ostream& out, const std::vector<std::pair<std::string, MemoryEstimate>>& rows) {
    out << "# name\tparam_bytes\tgrad_bytes\tactivation_bytes\ttotal\n";
    for (const auto& [name, m] : rows)
        out << name << '\t' << m.param_bytes << '\t' << m.grad_bytes << '\t' << m.activation_bytes << '\t'
            << m.total() << '\n';
}

}  // namespace vtcfed::acct
