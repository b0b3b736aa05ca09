#include "vtcfed/harness.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <thread>

#include "vtcfed/errors.hpp"
#include "vtcfed/image.hpp"

namespace vtcfed::harness {

namespace fs = std::filesystem;

// ------------------------------------------------------------- KVConfig

KVConfig KVConfig::parse_string(const std::string& text) {
    KVConfig cfg;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        const auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("line " + std::to_string(lineno) + ": expected 'key = value'");
        auto trim = [](std::string s) {
            const auto b = s.find_first_not_of(" \t\r");
            const auto e = s.find_last_not_of(" \t\r");
            return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
        };
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty()) throw ConfigError("line " + std::to_string(lineno) + ": empty key");
        cfg.kv_[key] = value;
    }
    return cfg;
}

KVConfig KVConfig::parse_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config file: " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return parse_string(ss.str());
}

std::string KVConfig::get_string(const std::string& key, const std::string& fallback) const {
    const auto it = kv_.find(key);
    return it == kv_.end() ? fallback : it->second;
}

long KVConfig::get_long(const std::string& key, long fallback) const {
    const auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    try {
        size_t pos = 0;
        const long v = std::stol(it->second, &pos);
        if (pos != it->second.size()) throw std::invalid_argument("");
        return v;
    } catch (...) {
        throw ConfigError("key '" + key + "': expected integer, got '" + it->second + "'");
    }
}

double KVConfig::get_double(const std::string& key, double fallback) const {
    const auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    try {
        size_t pos = 0;
        const double v = std::stod(it->second, &pos);
        if (pos != it->second.size()) throw std::invalid_argument("");
        return v;
    } catch (...) {
        throw ConfigError("key '" + key + "': expected number, got '" + it->second + "'");
    }
}

namespace {

const std::set<std::string>& known_keys() {
    static const std::set<std::string> keys = {
        "schema_version", "name",       "profile",    "data_root",        "train_cap",
        "test_cap",       "p",          "clusters",   "clients",          "participants",
        "rounds",         "finetune_rounds",          "epochs",           "batch_size",
        "lr",             "lambda",     "synthetic_samples",              "tc_mode",
        "train_mode",     "alpha",      "seed",       "partition_seed",   "threads",
        "sigma_init"};
    return keys;
}

}  // namespace

fed::RunConfig load_run_config(const KVConfig& kv) {
    for (const auto& [key, value] : kv.entries())
        if (!known_keys().count(key)) throw ConfigError("unknown config key '" + key + "'");
    const long schema = kv.get_long("schema_version", -1);
    if (schema != 1) throw ConfigError("schema_version must be 1");

    fed::RunConfig c;
    c.name = kv.get_string("name", c.name);
    c.profile = kv.get_string("profile", c.profile);
    c.data_root = kv.get_string("data_root", c.data_root);
    c.train_cap = kv.get_long("train_cap", c.train_cap);
    c.test_cap = kv.get_long("test_cap", c.test_cap);
    c.p = static_cast<int>(kv.get_long("p", c.p));
    c.clusters = static_cast<int>(kv.get_long("clusters", c.clusters));
    c.clients = static_cast<int>(kv.get_long("clients", c.clients));
    c.participants = static_cast<int>(kv.get_long("participants", c.participants));
    c.rounds = static_cast<int>(kv.get_long("rounds", c.rounds));
    c.finetune_rounds = static_cast<int>(kv.get_long("finetune_rounds", c.finetune_rounds));
    c.epochs = static_cast<int>(kv.get_long("epochs", c.epochs));
    c.batch_size = static_cast<int>(kv.get_long("batch_size", c.batch_size));
    c.lr = kv.get_double("lr", c.lr);
    c.lambda = kv.get_double("lambda", c.lambda);
    c.synthetic_samples = static_cast<int>(kv.get_long("synthetic_samples", c.synthetic_samples));
    c.tc_mode = fed::tc_mode_from_string(kv.get_string("tc_mode", fed::to_string(c.tc_mode)));
    c.train_mode = fed::train_mode_from_string(kv.get_string("train_mode", fed::to_string(c.train_mode)));
    c.alpha = kv.get_double("alpha", c.alpha);
    c.seed = static_cast<std::uint64_t>(kv.get_long("seed", static_cast<long>(c.seed)));
    c.partition_seed = static_cast<std::uint64_t>(kv.get_long("partition_seed", static_cast<long>(c.partition_seed)));
    c.threads = static_cast<int>(kv.get_long("threads", c.threads));
    c.sigma_init = kv.get_double("sigma_init", c.sigma_init);
    c.validate();
    return c;
}

std::string serialize_run_config(const fed::RunConfig& c) {
    std::ostringstream s;
    s << "schema_version = 1\n";
    s << "name = " << c.name << "\n";
    s << "profile = " << c.profile << "\n";
    s << "data_root = " << c.data_root << "\n";
    s << "train_cap = " << c.train_cap << "\n";
    s << "test_cap = " << c.test_cap << "\n";
    s << "p = " << c.p << "\n";
    s << "clusters = " << c.clusters << "\n";
    s << "clients = " << c.clients << "\n";
    s << "participants = " << c.participants << "\n";
    s << "rounds = " << c.rounds << "\n";
    s << "finetune_rounds = " << c.finetune_rounds << "\n";
    s << "epochs = " << c.epochs << "\n";
    s << "batch_size = " << c.batch_size << "\n";
    s << "lr = " << c.lr << "\n";
    s << "lambda = " << c.lambda << "\n";
    s << "synthetic_samples = " << c.synthetic_samples << "\n";
    s << "tc_mode = " << fed::to_string(c.tc_mode) << "\n";
    s << "train_mode = " << fed::to_string(c.train_mode) << "\n";
    s << "alpha = " << c.alpha << "\n";
    s << "seed = " << c.seed << "\n";
    s << "partition_seed = " << c.partition_seed << "\n";
    s << "threads = " << c.threads << "\n";
    s << "sigma_init = " << c.sigma_init << "\n";
    return s.str();
}

// ------------------------------------------------------------ evaluation

EvalResult evaluate_generalization(std::vector<zoo::LocalModel*>& models, const Tensor& test_x,
                                   const std::vector<int>& test_y, int threads) {
    if (test_y.empty()) throw std::invalid_argument("evaluate_generalization: empty test set");
    const long total = test_x.dim(0);
    EvalResult out;
    out.per_client.assign(models.size(), 0.0);

    const int workers = std::max(1, std::min<int>(threads, static_cast<int>(models.size())));
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(static_cast<size_t>(workers));
    auto eval_one = [&](size_t m) {
        long correct = 0;
        const long chunk = 200;
        for (long start = 0; start < total; start += chunk) {
            const long n = std::min(chunk, total - start);
            Tensor batch({n, test_x.dim(1), test_x.dim(2), test_x.dim(3)});
            const long per = test_x.numel() / total;
            std::copy(test_x.data.begin() + start * per, test_x.data.begin() + (start + n) * per,
                      batch.data.begin());
            Tensor scores = models[m]->forward_scores(batch, nn::Mode::kEval);
            for (long i = 0; i < n; ++i) {
                const auto row = scores.sample(i);
                long best = 0;
                for (long j = 1; j < row.size(); ++j)
                    if (row[j] > row[best]) best = j;
                if (best == test_y[static_cast<size_t>(start + i)]) ++correct;
            }
        }
        out.per_client[m] = 100.0 * static_cast<double>(correct) / static_cast<double>(total);
    };
    if (workers == 1) {
        for (size_t m = 0; m < models.size(); ++m) eval_one(m);
    } else {
        for (int w = 0; w < workers; ++w)
            pool.emplace_back([&, w]() {
                try {
                    for (size_t m = static_cast<size_t>(w); m < models.size(); m += static_cast<size_t>(workers))
                        eval_one(m);
                } catch (...) {
                    errors[static_cast<size_t>(w)] = std::current_exception();
                }
            });
        for (auto& t : pool) t.join();
        for (auto& e : errors)
            if (e) std::rethrow_exception(e);
    }
    double sum = 0.0;
    for (double a : out.per_client) sum += a;
    out.mean = sum / static_cast<double>(out.per_client.size());
    return out;
}

// ----------------------------------------------------------------- suite

std::vector<SuiteMember> standard_suite(const fed::RunConfig& base) {
    std::vector<SuiteMember> members;
    auto add = [&](const std::string& name, auto&& mutate) {
        fed::RunConfig c = base;
        c.name = name;
        // members share the dataset and partition
        c.partition_seed = base.effective_partition_seed();
        mutate(c);
        members.push_back({name, c});
    };
    add("fedvtc-singular", [](fed::RunConfig& c) { c.tc_mode = fed::TcMode::kSingular; });
    add("fedvtc-regular", [](fed::RunConfig& c) { c.tc_mode = fed::TcMode::kRegular; });
    add("elbo-only", [](fed::RunConfig& c) { c.train_mode = fed::TrainMode::kElboOnly; });
    add("no-finetune", [](fed::RunConfig& c) { c.finetune_rounds = 0; });
    return members;
}

SuiteResult run_suite(const std::vector<SuiteMember>& members, int repeats, const std::string& out_root) {
    if (repeats < 1) throw ConfigError("repeats must be >= 1");
    fs::create_directories(out_root);
    SuiteResult result;
    for (const auto& member : members) {
        for (int r = 1; r <= repeats; ++r) {
            fed::RunConfig config = member.config;
            config.seed = member.config.seed + static_cast<std::uint64_t>(r);
            SuiteRunOutcome outcome;
            outcome.name = member.name;
            outcome.seed = config.seed;
            const std::string dir = out_root + "/" + member.name + "-s" + std::to_string(config.seed);
            try {
                const auto run = fed::run_experiment(config, dir);
                outcome.ok = true;
                outcome.final_mean_acc = run.final_mean_acc;
                outcome.total_bytes = ledger_total(run.ledger);
            } catch (const std::exception& e) {
                outcome.ok = false;
                outcome.error = e.what();
            }
            result.outcomes.push_back(outcome);
        }
    }
    write_report(out_root, out_root);
    {
        std::ifstream f(out_root + "/summary.txt");
        std::ostringstream ss;
        ss << f.rdbuf();
        result.summary_text = ss.str();
    }
    return result;
}

// ---------------------------------------------------------------- report

namespace {

struct RunDir {
    std::string name;
    std::uint64_t seed = 0;
    std::vector<MetricsRecord> metrics;
    double final_mean_acc = 0.0;
    long total_bytes = 0;
    std::string tc_mode;
};

double mean_of(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

double sd_of(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    const double m = mean_of(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(v.size() - 1));
}

}  // namespace

void write_report(const std::string& runs_root, const std::string& out_dir) {
    std::vector<RunDir> runs;
    if (fs::exists(runs_root))
        for (const auto& entry : fs::directory_iterator(runs_root)) {
            if (!entry.is_directory()) continue;
            const std::string metrics_path = entry.path().string() + "/metrics.jsonl";
            if (!fs::exists(metrics_path)) continue;
            RunDir run;
            run.metrics = read_metrics_jsonl(metrics_path);
            if (run.metrics.empty()) continue;
            run.name = run.metrics.front().run;
            run.seed = run.metrics.front().seed;
            run.final_mean_acc = run.metrics.back().mean_acc;
            run.total_bytes = run.metrics.back().ledger_bytes;
            const std::string summary_path = entry.path().string() + "/summary.json";
            if (fs::exists(summary_path)) {
                std::ifstream f(summary_path);
                std::ostringstream ss;
                ss << f.rdbuf();
                const auto pos = ss.str().find("\"tc_mode\"");
                if (pos != std::string::npos) {
                    const auto q1 = ss.str().find('"', pos + 9);
                    const auto q2 = ss.str().find('"', q1 + 1);
                    run.tc_mode = ss.str().substr(q1 + 1, q2 - q1 - 1);
                }
            }
            runs.push_back(std::move(run));
        }
    if (runs.empty()) throw ConfigError("no runs found in " + runs_root);
    std::sort(runs.begin(), runs.end(), [](const RunDir& a, const RunDir& b) {
        return a.name == b.name ? a.seed < b.seed : a.name < b.name;
    });

    fs::create_directories(out_dir);

    // summary table: mean +/- SD of final accuracy per run name
    std::map<std::string, std::vector<const RunDir*>> by_name;
    for (const auto& r : runs) by_name[r.name].push_back(&r);
    {
        std::ofstream f(out_dir + "/summary.txt");
        f << "# final mean generalization accuracy (%) per run, mean +/- SD over seeds\n";
        f << "# note: the no-finetune ablation runs T rounds only (no extra rounds are granted)\n";
        for (const auto& [name, group] : by_name) {
            std::vector<double> accs, bytes;
            for (const auto* r : group) {
                accs.push_back(r->final_mean_acc);
                bytes.push_back(static_cast<double>(r->total_bytes));
            }
            std::ostringstream row;
            row.setf(std::ios::fixed);
            row.precision(2);
            row << name << " : " << mean_of(accs) << " +/- " << sd_of(accs) << "  (seeds=" << group.size()
                << ", mean_bytes=" << static_cast<long>(mean_of(bytes)) << ")";
            f << row.str() << "\n";
        }
        // singular vs regular comparison when both are present
        std::vector<const RunDir*> singular, regular;
        for (const auto& r : runs) {
            if (r.tc_mode == "singular") singular.push_back(&r);
            if (r.tc_mode == "regular") regular.push_back(&r);
        }
        if (!singular.empty() && !regular.empty()) {
            auto acc_of = [](const std::vector<const RunDir*>& g) {
                std::vector<double> v;
                for (const auto* r : g) v.push_back(r->final_mean_acc);
                return v;
            };
            auto bytes_of = [](const std::vector<const RunDir*>& g) {
                std::vector<double> v;
                for (const auto* r : g) v.push_back(static_cast<double>(r->total_bytes));
                return v;
            };
            f << "\n# decoder transmission comparison (accuracy % / transmitted bytes)\n";
            std::ostringstream s1, s2;
            s1.setf(std::ios::fixed);
            s1.precision(2);
            s2.setf(std::ios::fixed);
            s2.precision(2);
            s1 << "singular : " << mean_of(acc_of(singular)) << " +/- " << sd_of(acc_of(singular)) << " / "
               << static_cast<long>(mean_of(bytes_of(singular))) << " bytes";
            s2 << "regular  : " << mean_of(acc_of(regular)) << " +/- " << sd_of(acc_of(regular)) << " / "
               << static_cast<long>(mean_of(bytes_of(regular))) << " bytes";
            f << s1.str() << "\n" << s2.str() << "\n";
        }
    }

    // per-round accuracy curves: CSV + SVG per run name
    for (const auto& [name, group] : by_name) {
        std::ofstream csv(out_dir + "/curve_" + name + ".csv");
        csv << "round,phase";
        for (const auto* r : group) csv << ",seed_" << r->seed;
        csv << "\n";
        const size_t rows = group.front()->metrics.size();
        double vline = -1.0;
        for (size_t i = 0; i < rows; ++i) {
            const auto& first = group.front()->metrics[i];
            csv << first.round << ',' << first.phase;
            for (const auto* r : group)
                csv << ',' << (i < r->metrics.size() ? r->metrics[i].mean_acc : 0.0);
            csv << "\n";
            if (first.phase == "fl") vline = first.round + 0.5;
        }
        std::vector<img::Series> series;
        img::Series mean_series;
        mean_series.label = name + " (mean)";
        for (size_t i = 0; i < rows; ++i) {
            double s = 0.0;
            int n = 0;
            for (const auto* r : group)
                if (i < r->metrics.size()) {
                    s += r->metrics[i].mean_acc;
                    ++n;
                }
            mean_series.xs.push_back(group.front()->metrics[i].round);
            mean_series.ys.push_back(s / std::max(1, n));
        }
        series.push_back(std::move(mean_series));
        for (const auto* r : group) {
            img::Series s;
            s.label = "seed " + std::to_string(r->seed);
            for (const auto& m : r->metrics) {
                s.xs.push_back(m.round);
                s.ys.push_back(m.mean_acc);
            }
            series.push_back(std::move(s));
        }
        img::write_line_plot_svg(out_dir + "/curve_" + name + ".svg", "generalization accuracy: " + name, "round",
                                 "accuracy (%)", series, vline);
    }
}

}  // namespace vtcfed::harness
