#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "vtcfed/zoo.hpp"

namespace vtcfed::acct {

// 32-bit float convention: every transmitted element costs 4 bytes. No
// compression, no protocol overhead. Every directed message is one entry per
// payload kind; broadcasts count once per receiver.
constexpr long kBytesPerElement = 4;
constexpr int kServerId = -1;

enum class Direction { kUp, kDown };
enum class Payload { kPrototype, kSigma, kDecoder };
enum class Phase { kRound, kFinal };  // fine-tuning emits no entries

const char* to_string(Direction d);
const char* to_string(Payload p);
const char* to_string(Phase p);

struct LedgerEntry {
    long seq = 0;
    int round = 0;  // FL round; final-phase entries carry the last round index
    Phase phase = Phase::kRound;
    Direction dir = Direction::kUp;
    int sender = 0;
    int receiver = 0;
    Payload kind = Payload::kPrototype;
    long elements = 0;
    long bytes = 0;
};

class CommLedger {
public:
    void record(int round, Phase phase, Direction dir, int sender, int receiver, Payload kind, long elements);
    const std::vector<LedgerEntry>& entries() const { return entries_; }
    void export_text(std::ostream& out) const;  // tabular entries + totals summary

private:
    std::vector<LedgerEntry> entries_;
    long next_seq_ = 0;
};

struct LedgerFilter {
    std::optional<Payload> kind;
    std::optional<Direction> dir;
    std::optional<Phase> phase;
    std::optional<int> round_min, round_max;
};

long ledger_total(const CommLedger& ledger, const LedgerFilter& filter = {});

// Training-memory footprint for one step: parameters and gradients at 4
// bytes/element; activations are the per-layer forward output elements at the
// given batch size (layer outputs only, no workspace).
struct MemoryEstimate {
    long param_bytes = 0;
    long grad_bytes = 0;
    long activation_bytes = 0;
    long total() const { return param_bytes + grad_bytes + activation_bytes; }
};

MemoryEstimate estimate_memory(nn::Sequential& net, const std::vector<long>& sample_shape, int batch);
MemoryEstimate estimate_memory(zoo::LocalModel& model, int batch);
MemoryEstimate estimate_memory(zoo::VtcDecoder& decoder, int batch);

// Peak footprints of the two training schedules for a (model, decoder) pair.
//   step A: full model footprint + frozen decoder (params and activations are
//           retained to backpropagate through it, but no decoder gradients)
//   step B: full decoder footprint + sigma, with the model frozen (params)
//           plus the extractor activations needed to backprop through it
//   simultaneous: both full footprints plus sigma
struct SchedulePeaks {
    long step_a = 0;
    long step_b = 0;
    long alternating = 0;   // max(step_a, step_b)
    long simultaneous = 0;  // sum of full footprints
};

SchedulePeaks schedule_peaks(zoo::LocalModel& model, zoo::VtcDecoder& decoder, int batch);

void export_memory_table(std::ostream& out, const std::vector<std::pair<std::string, MemoryEstimate>>& rows);

}  // namespace vtcfed::acct
