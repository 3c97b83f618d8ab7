#include "cmems/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace cmems {

namespace {

constexpr char kMagic[8] = {'C', 'M', 'E', 'M', 'S', 'C', 'K', 'P'};

class Writer {
public:
    explicit Writer(std::ofstream& os) : os_(os) {}
    template <class T>
    void pod(const T& v) {
        os_.write(reinterpret_cast<const char*>(&v), sizeof(T));
    }
    void reals(const std::vector<real>& v) {
        pod<std::uint64_t>(v.size());
        os_.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(real)));
    }

private:
    std::ofstream& os_;
};

class Reader {
public:
    Reader(std::ifstream& is, std::string path) : is_(is), path_(std::move(path)) {}
    template <class T>
    T pod() {
        T v{};
        is_.read(reinterpret_cast<char*>(&v), sizeof(T));
        check();
        return v;
    }
    void reals(std::vector<real>& v, std::size_t expected) {
        const auto n = pod<std::uint64_t>();
        if (n != expected) throw IngestionError(path_ + ": checkpoint tensor size mismatch");
        v.resize(n);
        is_.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(real)));
        check();
    }

private:
    void check() {
        if (!is_) throw IngestionError(path_ + ": truncated checkpoint");
    }
    std::ifstream& is_;
    std::string path_;
};

void write_net_config(Writer& w, const UNetConfig& c) {
    w.pod<std::int32_t>(c.in_channels);
    w.pod<std::int32_t>(c.num_classes);
    for (int v : c.channels) w.pod<std::int32_t>(v);
    for (double v : c.dropout) w.pod(v);
    w.pod(c.leaky_slope);
    w.pod(c.bn_eps);
    w.pod(c.bn_momentum);
}

UNetConfig read_net_config(Reader& r) {
    UNetConfig c;
    c.in_channels = r.pod<std::int32_t>();
    c.num_classes = r.pod<std::int32_t>();
    for (int& v : c.channels) v = r.pod<std::int32_t>();
    for (double& v : c.dropout) v = r.pod<double>();
    c.leaky_slope = r.pod<double>();
    c.bn_eps = r.pod<double>();
    c.bn_momentum = r.pod<double>();
    return c;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const TrainState& state, const TrainConfig& cfg) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw std::runtime_error("cannot write checkpoint " + path.string());
        Writer w(os);
        os.write(kMagic, sizeof kMagic);
        w.pod<std::uint32_t>(kCheckpointVersion);
        w.pod<std::uint32_t>(sizeof(real));
        w.pod<std::uint64_t>(config_hash(cfg));
        w.pod<std::int64_t>(state.iteration);
        for (const auto& net : state.nets) {
            w.pod<std::int32_t>(net.id);
            write_net_config(w, net.config);
            w.reals(net.weights);
            w.reals(net.running_stats);
        }
        const auto& a = state.optimizer.config();
        w.pod(a.lr);
        w.pod(a.beta1);
        w.pod(a.beta2);
        w.pod(a.eps);
        w.pod(a.weight_decay);
        w.pod<std::int64_t>(state.optimizer.steps());
        const auto& m = state.optimizer.first_moments();
        const auto& v = state.optimizer.second_moments();
        w.pod<std::uint32_t>(static_cast<std::uint32_t>(m.size()));
        for (std::size_t g = 0; g < m.size(); ++g) {
            w.reals(m[g]);
            w.reals(v[g]);
        }
        if (!os) throw std::runtime_error("failed writing checkpoint " + path.string());
    }
    std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IngestionError("missing or unreadable checkpoint: " + path.string());
    Reader r(is, path.string());
    char magic[8];
    is.read(magic, sizeof magic);
    if (!is || std::memcmp(magic, kMagic, sizeof magic) != 0)
        throw IngestionError(path.string() + ": not a checkpoint file");
    const auto version = r.pod<std::uint32_t>();
    if (version != kCheckpointVersion)
        throw IngestionError(path.string() + ": unsupported checkpoint version " + std::to_string(version));
    if (r.pod<std::uint32_t>() != sizeof(real))
        throw IngestionError(path.string() + ": checkpoint was written with a different precision");
    Checkpoint ck;
    ck.config_hash = r.pod<std::uint64_t>();
    ck.state.iteration = r.pod<std::int64_t>();
    for (auto& net : ck.state.nets) {
        net.id = r.pod<std::int32_t>();
        net.config = read_net_config(r);
        net.layout = UNetLayout::build(net.config);
        r.reals(net.weights, net.layout.num_weights);
        r.reals(net.running_stats, net.layout.num_stats);
    }
    AdamConfig a;
    a.lr = r.pod<double>();
    a.beta1 = r.pod<double>();
    a.beta2 = r.pod<double>();
    a.eps = r.pod<double>();
    a.weight_decay = r.pod<double>();
    const auto steps = r.pod<std::int64_t>();
    const auto groups = r.pod<std::uint32_t>();
    if (groups != 2) throw IngestionError(path.string() + ": expected two optimizer groups");
    ck.state.optimizer = Adam(a, {ck.state.nets[0].weights.size(), ck.state.nets[1].weights.size()});
    ck.state.optimizer.set_steps(steps);
    for (std::size_t g = 0; g < groups; ++g) {
        r.reals(ck.state.optimizer.first_moments()[g], ck.state.nets[g].weights.size());
        r.reals(ck.state.optimizer.second_moments()[g], ck.state.nets[g].weights.size());
    }
    return ck;
}

}  // namespace cmems
