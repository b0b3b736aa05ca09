#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sstream>

#include "vtcfed/accounting.hpp"

using namespace vtcfed;

TEST_CASE("ledger totals: empty, single entry, filters") {
    acct::CommLedger ledger;
    CHECK(ledger_total(ledger) == 0);

    // one prototype upload with p = 8 -> 32 bytes
    ledger.record(1, acct::Phase::kRound, acct::Direction::kUp, 2, acct::kServerId, acct::Payload::kPrototype, 8);
    CHECK(ledger_total(ledger) == 32);

    ledger.record(1, acct::Phase::kRound, acct::Direction::kDown, acct::kServerId, 2, acct::Payload::kSigma, 4);
    ledger.record(3, acct::Phase::kFinal, acct::Direction::kUp, 0, acct::kServerId, acct::Payload::kDecoder, 100);

    acct::LedgerFilter up_only;
    up_only.dir = acct::Direction::kUp;
    CHECK(ledger_total(ledger, up_only) == 32 + 400);

    acct::LedgerFilter decoders;
    decoders.kind = acct::Payload::kDecoder;
    CHECK(ledger_total(ledger, decoders) == 400);

    acct::LedgerFilter final_phase;
    final_phase.phase = acct::Phase::kFinal;
    CHECK(ledger_total(ledger, final_phase) == 400);

    acct::LedgerFilter rounds_1_2;
    rounds_1_2.round_min = 1;
    rounds_1_2.round_max = 2;
    CHECK(ledger_total(ledger, rounds_1_2) == 48);

    std::ostringstream out;
    ledger.export_text(out);
    CHECK(out.str().find("prototype") != std::string::npos);
    CHECK(out.str().find("# total = 448 bytes") != std::string::npos);
}

TEST_CASE("ledger entries are append-only with bytes = 4 * elements") {
    acct::CommLedger ledger;
    ledger.record(1, acct::Phase::kRound, acct::Direction::kUp, 0, acct::kServerId, acct::Payload::kSigma, 7);
    ledger.record(2, acct::Phase::kRound, acct::Direction::kDown, acct::kServerId, 1, acct::Payload::kSigma, 7);
    CHECK(ledger.entries().size() == 2);
    CHECK(ledger.entries()[0].seq == 0);
    CHECK(ledger.entries()[1].seq == 1);
    for (const auto& e : ledger.entries()) CHECK(e.bytes == e.elements * 4);
}

TEST_CASE("memory estimate of a single linear map: 460 bytes at batch 1") {
    nn::Sequential seq;
    seq.add<nn::Linear>(10, 5);
    const auto m1 = acct::estimate_memory(seq, {10}, 1);
    CHECK(m1.param_bytes == 55 * 4);
    CHECK(m1.grad_bytes == 55 * 4);
    CHECK(m1.activation_bytes == 5 * 4);
    CHECK(m1.total() == 460);

    // doubling the batch doubles the activation term only
    const auto m2 = acct::estimate_memory(seq, {10}, 2);
    CHECK(m2.param_bytes == m1.param_bytes);
    CHECK(m2.grad_bytes == m1.grad_bytes);
    CHECK(m2.activation_bytes == 2 * m1.activation_bytes);
}

TEST_CASE("alternating peak never exceeds the simultaneous total across the zoo") {
    const auto profile = zoo::profile_by_name("mnist");
    auto decoder = zoo::build_vtc_decoder(profile, 980, 1);
    for (const auto& arch : zoo::make_clusters(5)) {
        auto model = zoo::build_local_model(arch, profile, 980, 1);
        const auto peaks = acct::schedule_peaks(model, decoder, 16);
        CHECK(peaks.alternating == std::max(peaks.step_a, peaks.step_b));
        CHECK(peaks.alternating <= peaks.simultaneous);
    }
}

TEST_CASE("memory estimates are monotone in batch size and architecture depth") {
    const auto profile = zoo::profile_by_name("digits");
    long prev_total = 0;
    for (const auto& arch : zoo::make_clusters(5)) {
        auto model = zoo::build_local_model(arch, profile, 196, 1);
        const auto m = acct::estimate_memory(model, 8);
        CHECK(m.total() > prev_total);
        prev_total = m.total();
        CHECK(acct::estimate_memory(model, 16).total() > m.total());
    }
}

TEST_CASE("memory table export") {
    nn::Sequential seq;
    seq.add<nn::Linear>(4, 2);
    std::ostringstream out;
    acct::export_memory_table(out, {{"tiny", acct::estimate_memory(seq, {4}, 1)}});
    CHECK(out.str().find("tiny") != std::string::npos);
}
