#include "vtcfed/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "vtcfed/errors.hpp"
#include "vtcfed/rng.hpp"

namespace vtcfed::data {

PartitionSpec dirichlet_partition(const std::vector<int>& labels, int clients, double alpha, std::uint64_t seed) {
    if (clients < 1) throw PartitionError("client count must be >= 1");
    if (!(alpha > 0.0)) throw PartitionError("alpha must be > 0");
    if (static_cast<long>(labels.size()) < clients)
        throw PartitionError("fewer samples (" + std::to_string(labels.size()) + ") than clients (" +
                             std::to_string(clients) + ")");

    std::map<int, std::vector<int>> by_class;
    for (size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(static_cast<int>(i));

    RandomStream rng(derive_seed(seed, stream_tag::kPartition));
    PartitionSpec spec;
    spec.alpha = alpha;
    spec.seed = seed;
    spec.shards.assign(static_cast<size_t>(clients), {});
    for (auto& [cls, idx] : by_class) {
        rng.shuffle(idx);
        const auto w = rng.dirichlet(alpha, clients);
        const long n = static_cast<long>(idx.size());
        double cum = 0.0;
        long prev = 0;
        for (int k = 0; k < clients; ++k) {
            cum += w[static_cast<size_t>(k)];
            const long cut = k + 1 == clients ? n : std::min<long>(n, std::lround(cum * static_cast<double>(n)));
            for (long i = prev; i < cut; ++i) spec.shards[static_cast<size_t>(k)].push_back(idx[static_cast<size_t>(i)]);
            prev = std::max(prev, cut);
        }
    }
    // repair: every client must be able to train
    for (;;) {
        auto empty = std::find_if(spec.shards.begin(), spec.shards.end(), [](const auto& s) { return s.empty(); });
        if (empty == spec.shards.end()) break;
        auto largest = std::max_element(spec.shards.begin(), spec.shards.end(),
                                        [](const auto& a, const auto& b) { return a.size() < b.size(); });
        empty->push_back(largest->back());
        largest->pop_back();
    }
    for (auto& s : spec.shards) std::sort(s.begin(), s.end());
    return spec;
}

namespace {

// --------------------------------------------------------------- MNIST IDX

std::uint32_t read_be32(std::istream& f, const std::string& path) {
    unsigned char b[4];
    f.read(reinterpret_cast<char*>(b), 4);
    if (!f) throw IngestionError("truncated IDX header in " + path);
    return (static_cast<std::uint32_t>(b[0]) << 24) | (static_cast<std::uint32_t>(b[1]) << 16) |
           (static_cast<std::uint32_t>(b[2]) << 8) | static_cast<std::uint32_t>(b[3]);
}

std::vector<unsigned char> read_idx_images(const std::string& path, long& count, long& rows, long& cols) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IngestionError("cannot open " + path);
    if (read_be32(f, path) != 2051) throw IngestionError("bad IDX image magic in " + path);
    count = read_be32(f, path);
    rows = read_be32(f, path);
    cols = read_be32(f, path);
    std::vector<unsigned char> buf(static_cast<size_t>(count * rows * cols));
    f.read(reinterpret_cast<char*>(buf.data()), static_cast<long>(buf.size()));
    if (!f) throw IngestionError("truncated IDX image payload in " + path);
    return buf;
}

std::vector<unsigned char> read_idx_labels(const std::string& path, long& count) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IngestionError("cannot open " + path);
    if (read_be32(f, path) != 2049) throw IngestionError("bad IDX label magic in " + path);
    count = read_be32(f, path);
    std::vector<unsigned char> buf(static_cast<size_t>(count));
    f.read(reinterpret_cast<char*>(buf.data()), static_cast<long>(buf.size()));
    if (!f) throw IngestionError("truncated IDX label payload in " + path);
    return buf;
}

void load_idx_split(const std::string& images_path, const std::string& labels_path, const zoo::DataProfile& profile,
                    long cap, RandomStream& rng, Tensor& xs, std::vector<int>& ys) {
    long n_img, rows, cols, n_lbl;
    const auto img = read_idx_images(images_path, n_img, rows, cols);
    const auto lbl = read_idx_labels(labels_path, n_lbl);
    if (n_img != n_lbl) throw IngestionError("image/label count mismatch: " + images_path);
    if (rows != profile.height || cols != profile.width)
        throw IngestionError("unexpected image size in " + images_path);

    std::vector<int> pick(static_cast<size_t>(n_img));
    for (long i = 0; i < n_img; ++i) pick[static_cast<size_t>(i)] = static_cast<int>(i);
    if (cap > 0 && cap < n_img) pick = rng.sample_without_replacement(static_cast<int>(n_img), static_cast<int>(cap));

    const long n = static_cast<long>(pick.size()), per = rows * cols;
    xs = Tensor({n, 1, rows, cols});
    ys.resize(static_cast<size_t>(n));
    for (long i = 0; i < n; ++i) {
        const long src = pick[static_cast<size_t>(i)];
        for (long j = 0; j < per; ++j)
            xs.data[static_cast<size_t>(i * per + j)] = img[static_cast<size_t>(src * per + j)] / 255.0;
        ys[static_cast<size_t>(i)] = lbl[static_cast<size_t>(src)];
    }
}

// ------------------------------------------------------- procedural digits

// 7x5 glyph bitmaps for digits 0..9, rendered at 3x scale with random offset,
// intensity jitter and pixel noise. Deliberately crude; a desk-scale stand-in
// with the same geometry and class structure as MNIST.
const char* kGlyphs[10][7] = {
    {"01110", "10001", "10011", "10101", "11001", "10001", "01110"},
    {"00100", "01100", "00100", "00100", "00100", "00100", "01110"},
    {"01110", "10001", "00001", "00110", "01000", "10000", "11111"},
    {"11110", "00001", "00001", "01110", "00001", "00001", "11110"},
    {"00010", "00110", "01010", "10010", "11111", "00010", "00010"},
    {"11111", "10000", "11110", "00001", "00001", "10001", "01110"},
    {"00110", "01000", "10000", "11110", "10001", "10001", "01110"},
    {"11111", "00001", "00010", "00100", "01000", "01000", "01000"},
    {"01110", "10001", "10001", "01110", "10001", "10001", "01110"},
    {"01110", "10001", "10001", "01111", "00001", "00010", "01100"},
};

void render_digit(Tensor& xs, long sample, int digit, RandomStream& rng) {
    const long h = xs.dim(2), w = xs.dim(3);
    const int scale = 3, gh = 7 * scale, gw = 5 * scale;
    const int oy = static_cast<int>(rng.below(static_cast<std::uint64_t>(h - gh + 1)));
    const int ox = static_cast<int>(rng.below(static_cast<std::uint64_t>(w - gw + 1)));
    const double intensity = rng.uniform(0.7, 1.0);
    for (int gy = 0; gy < 7; ++gy)
        for (int gx = 0; gx < 5; ++gx) {
            if (kGlyphs[digit][gy][gx] != '1') continue;
            for (int sy = 0; sy < scale; ++sy)
                for (int sx = 0; sx < scale; ++sx)
                    xs.at(sample, 0, oy + gy * scale + sy, ox + gx * scale + sx) = intensity;
        }
    for (long y = 0; y < h; ++y)
        for (long x = 0; x < w; ++x) {
            double v = xs.at(sample, 0, y, x) + 0.08 * rng.gaussian();
            xs.at(sample, 0, y, x) = std::clamp(v, 0.0, 1.0);
        }
}

// Toy 16x16 blobs: class selects the blob's quadrant.
void render_blob(Tensor& xs, long sample, int cls, RandomStream& rng) {
    const long h = xs.dim(2), w = xs.dim(3);
    const double cy = (cls / 2 == 0 ? 0.3 : 0.7) * static_cast<double>(h) + rng.gaussian();
    const double cx = (cls % 2 == 0 ? 0.3 : 0.7) * static_cast<double>(w) + rng.gaussian();
    const double amp = rng.uniform(0.7, 1.0), r2 = 6.0;
    for (long y = 0; y < h; ++y)
        for (long x = 0; x < w; ++x) {
            const double d2 =
                (static_cast<double>(y) - cy) * (static_cast<double>(y) - cy) + (static_cast<double>(x) - cx) * (static_cast<double>(x) - cx);
            double v = amp * std::exp(-d2 / (2.0 * r2)) + 0.05 * rng.gaussian();
            xs.at(sample, 0, y, x) = std::clamp(v, 0.0, 1.0);
        }
}

void make_procedural_split(const zoo::DataProfile& profile, long count, RandomStream& rng, Tensor& xs,
                           std::vector<int>& ys) {
    xs = Tensor({count, profile.channels, profile.height, profile.width});
    ys.resize(static_cast<size_t>(count));
    for (long i = 0; i < count; ++i) {
        const int cls = static_cast<int>(rng.below(static_cast<std::uint64_t>(profile.classes)));
        ys[static_cast<size_t>(i)] = cls;
        if (profile.name == "digits")
            render_digit(xs, i, cls, rng);
        else
            render_blob(xs, i, cls, rng);
    }
}

}  // namespace

DatasetBundle load_dataset(const zoo::DataProfile& profile, const std::string& root_path, long train_cap,
                           long test_cap, std::uint64_t seed) {
    DatasetBundle b;
    b.profile = profile.name;
    b.classes = profile.classes;
    RandomStream train_rng(derive_seed(seed, stream_tag::kDataset, 0));
    RandomStream test_rng(derive_seed(seed, stream_tag::kDataset, 1));
    if (profile.name == "mnist") {
        const std::string root = root_path.empty() ? "." : root_path;
        load_idx_split(root + "/train-images-idx3-ubyte", root + "/train-labels-idx1-ubyte", profile, train_cap,
                       train_rng, b.train_x, b.train_y);
        load_idx_split(root + "/t10k-images-idx3-ubyte", root + "/t10k-labels-idx1-ubyte", profile, test_cap,
                       test_rng, b.test_x, b.test_y);
    } else if (profile.name == "digits" || profile.name == "toy") {
        const long n_train = train_cap > 0 ? train_cap : (profile.name == "digits" ? 2000 : 512);
        const long n_test = test_cap > 0 ? test_cap : (profile.name == "digits" ? 1000 : 256);
        make_procedural_split(profile, n_train, train_rng, b.train_x, b.train_y);
        make_procedural_split(profile, n_test, test_rng, b.test_x, b.test_y);
    } else {
        throw IngestionError("no loader for profile '" + profile.name + "'");
    }
    return b;
}

void write_partition_manifest(std::ostream& out, const PartitionSpec& spec) {
    out << "# vtcfed partition manifest v1\n";
    out << "# convention: per-class Dirichlet(alpha) proportions; class-shuffled indices split at rounded "
           "cumulative cuts; empty shards repaired from the largest shard\n";
    out << "alpha = " << spec.alpha << "\n";
    out << "seed = " << spec.seed << "\n";
    out << "clients = " << spec.clients() << "\n";
    out << "samples = " << spec.assigned() << "\n";
    for (size_t k = 0; k < spec.shards.size(); ++k) {
        out << "client " << k << " :";
        for (int i : spec.shards[k]) out << ' ' << i;
        out << "\n";
    }
}

void write_partition_manifest(const std::string& path, const PartitionSpec& spec) {
    std::ofstream f(path);
    if (!f) throw IngestionError("cannot write partition manifest: " + path);
    write_partition_manifest(f, spec);
}

PartitionSpec read_partition_manifest(std::istream& in) {
    PartitionSpec spec;
    std::string line;
    int clients = -1;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ls(line);
        std::string key;
        ls >> key;
        if (key == "alpha") {
            std::string eq;
            ls >> eq >> spec.alpha;
        } else if (key == "seed") {
            std::string eq;
            ls >> eq >> spec.seed;
        } else if (key == "clients") {
            std::string eq;
            ls >> eq >> clients;
            spec.shards.assign(static_cast<size_t>(clients), {});
        } else if (key == "samples") {
            // informational
        } else if (key == "client") {
            int id;
            std::string colon;
            ls >> id >> colon;
            if (clients < 0 || id < 0 || id >= clients) throw IngestionError("malformed partition manifest");
            int idx;
            while (ls >> idx) spec.shards[static_cast<size_t>(id)].push_back(idx);
        } else {
            throw IngestionError("unknown manifest key: " + key);
        }
    }
    if (clients < 0) throw IngestionError("partition manifest missing client count");
    return spec;
}

PartitionSpec read_partition_manifest(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IngestionError("cannot read partition manifest: " + path);
    return read_partition_manifest(f);
}

}  // namespace vtcfed::data
