#include "jana/training.hpp"

#include <json.hpp>

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

namespace jana {

static_assert(std::endian::native == std::endian::little, "checkpoints are written little-endian");

namespace {

using nlohmann::json;

constexpr char kMagic[8] = {'J', 'A', 'N', 'A', 'C', 'K', 'P', 'T'};

json flow_json(const FlowConfig& c) {
    return {{"n_couplings", c.n_couplings},
            {"hidden_widths", c.hidden_widths},
            {"activation", to_string(c.activation)},
            {"latent", to_string(c.latent)},
            {"latent_df", c.latent_df},
            {"memory_hidden", c.memory_hidden},
            {"scale_clamp", c.scale_clamp},
            {"weight_init_scale", c.weight_init_scale}};
}

FlowConfig flow_from_json(const json& j) {
    FlowConfig c;
    c.n_couplings = j.at("n_couplings").get<std::size_t>();
    c.hidden_widths = j.at("hidden_widths").get<std::vector<std::size_t>>();
    c.activation = activation_from_string(j.at("activation").get<std::string>());
    c.latent = latent_kind_from_string(j.at("latent").get<std::string>());
    c.latent_df = j.at("latent_df").get<double>();
    c.memory_hidden = j.at("memory_hidden").get<std::size_t>();
    c.scale_clamp = j.at("scale_clamp").get<double>();
    c.weight_init_scale = j.at("weight_init_scale").get<double>();
    return c;
}

json summary_json(const SummaryConfig& c) {
    return {{"kind", to_string(c.kind.value())},
            {"summary_dim", c.summary_dim},
            {"n_equivariant_modules", c.n_equivariant_modules},
            {"equivariant_width", c.equivariant_width},
            {"equivariant_hidden", c.equivariant_hidden},
            {"post_pool_hidden", c.post_pool_hidden},
            {"activation", to_string(c.activation)},
            {"pool", to_string(c.pool)},
            {"recurrent_hidden", c.recurrent_hidden}};
}

SummaryConfig summary_from_json(const json& j) {
    SummaryConfig c;
    c.kind = summary_kind_from_string(j.at("kind").get<std::string>());
    c.summary_dim = j.at("summary_dim").get<std::size_t>();
    c.n_equivariant_modules = j.at("n_equivariant_modules").get<std::size_t>();
    c.equivariant_width = j.at("equivariant_width").get<std::size_t>();
    c.equivariant_hidden = j.at("equivariant_hidden").get<std::vector<std::size_t>>();
    c.post_pool_hidden = j.at("post_pool_hidden").get<std::vector<std::size_t>>();
    c.activation = activation_from_string(j.at("activation").get<std::string>());
    c.pool = pool_kind_from_string(j.at("pool").get<std::string>());
    c.recurrent_hidden = j.at("recurrent_hidden").get<std::size_t>();
    return c;
}

class Writer {
public:
    void bytes(const void* p, std::size_t n) { buf_.append(static_cast<const char*>(p), n); }
    void u32(std::uint32_t v) { bytes(&v, 4); }
    void u64(std::uint64_t v) { bytes(&v, 8); }
    void str(const std::string& s) {
        u32(static_cast<std::uint32_t>(s.size()));
        bytes(s.data(), s.size());
    }
    void row(const RealRow& r) {
        u32(static_cast<std::uint32_t>(r.size()));
        bytes(r.data(), sizeof(double) * static_cast<std::size_t>(r.size()));
    }
    std::string& buffer() { return buf_; }

private:
    std::string buf_;
};

class Reader {
public:
    explicit Reader(const std::string& b) : buf_(b) {}
    void bytes(void* p, std::size_t n) {
        if (n > buf_.size() - pos_) throw FormatError("checkpoint is truncated");
        std::memcpy(p, buf_.data() + pos_, n);
        pos_ += n;
    }
    std::uint32_t u32() {
        std::uint32_t v;
        bytes(&v, 4);
        return v;
    }
    std::uint64_t u64() {
        std::uint64_t v;
        bytes(&v, 8);
        return v;
    }
    std::string str() {
        const std::uint32_t n = u32();
        if (n > buf_.size() - pos_) throw FormatError("checkpoint is truncated");
        std::string s(buf_.data() + pos_, n);
        pos_ += n;
        return s;
    }
    RealRow row() {
        const std::uint32_t n = u32();
        if (std::size_t(n) * sizeof(double) > buf_.size() - pos_) throw FormatError("checkpoint is truncated");
        RealRow r(n);
        bytes(r.data(), sizeof(double) * n);
        return r;
    }
    std::size_t pos() const { return pos_; }

private:
    const std::string& buf_;
    std::size_t pos_ = 0;
};

std::string segment(const std::vector<const RealMatrix*>& tensors) {
    Writer w;
    w.u32(static_cast<std::uint32_t>(tensors.size()));
    for (const auto* t : tensors) {
        w.u32(static_cast<std::uint32_t>(t->rows()));
        w.u32(static_cast<std::uint32_t>(t->cols()));
        w.bytes(t->data(), sizeof(double) * static_cast<std::size_t>(t->size()));
    }
    return std::move(w.buffer());
}

void read_segment(Reader& r, const std::string& name, const std::vector<RealMatrix*>& tensors) {
    const std::string got = r.str();
    if (got != name) throw FormatError("expected checkpoint segment '" + name + "', found '" + got + "'");
    const std::uint64_t length = r.u64();
    const std::size_t start = r.pos();
    const std::uint32_t n = r.u32();
    if (n != tensors.size())
        throw FormatError("segment '" + name + "' holds " + std::to_string(n) + " tensors, architecture needs " +
                          std::to_string(tensors.size()));
    for (auto* t : tensors) {
        const std::uint32_t rows = r.u32();
        const std::uint32_t cols = r.u32();
        if (rows != t->rows() || cols != t->cols())
            throw FormatError("tensor shape mismatch in segment '" + name + "'");
        r.bytes(t->data(), sizeof(double) * static_cast<std::size_t>(t->size()));
    }
    if (r.pos() - start != length) throw FormatError("segment '" + name + "' has the wrong length");
}

}  // namespace

std::string architecture_json(const JointApproximator& a) {
    const json j = {{"model", a.model_name()},
                    {"theta_dim", a.theta_dim()},
                    {"data", {{"kind", to_string(a.data_shape().kind)}, {"rows", a.data_shape().rows}, {"dim", a.data_shape().dim}}},
                    {"init_seed", a.init_seed()},
                    {"config_hash", a.config_hash()},
                    {"summary", summary_json(a.spec().summary)},
                    {"posterior", flow_json(a.spec().posterior)},
                    {"likelihood", flow_json(a.spec().likelihood)}};
    return j.dump();
}

void checkpoint_save(const JointApproximator& a, std::ostream& out) {
    Writer w;
    w.bytes(kMagic, sizeof kMagic);
    w.u32(kFormatVersion);
    w.str(a.model_name());
    w.str(architecture_json(a));
    w.row(a.theta_standardizer().mean);
    w.row(a.theta_standardizer().sd);
    w.row(a.x_standardizer().mean);
    w.row(a.x_standardizer().sd);
    const std::pair<const char*, std::vector<const RealMatrix*>> segments[] = {
        {"summary", a.summary().parameters()},
        {"posterior", a.posterior_net().parameters()},
        {"likelihood", a.likelihood_net().parameters()}};
    w.u32(3);
    for (const auto& [name, tensors] : segments) {
        const std::string body = segment(tensors);
        w.str(name);
        w.u64(body.size());
        w.bytes(body.data(), body.size());
    }
    w.u64(fnv1a(w.buffer().data(), w.buffer().size()));
    out.write(w.buffer().data(), static_cast<std::streamsize>(w.buffer().size()));
    if (!out) throw Error("failed to write checkpoint");
}

void checkpoint_save(const JointApproximator& a, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot open '" + path + "' for writing");
    checkpoint_save(a, out);
}

JointApproximator checkpoint_load(std::istream& in) {
    const std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    Reader r(buf);
    char magic[8];
    if (buf.size() < sizeof magic) throw FormatError("not a checkpoint (file too short)");
    r.bytes(magic, sizeof magic);
    if (std::memcmp(magic, kMagic, sizeof magic) != 0) throw FormatError("not a checkpoint (bad magic)");
    const std::uint32_t version = r.u32();
    if (version != kFormatVersion)
        throw FormatError("unsupported checkpoint format version " + std::to_string(version) + " (expected " +
                          std::to_string(kFormatVersion) + ")");
    if (buf.size() < 8 + sizeof magic + 4) throw FormatError("checkpoint is truncated");
    std::uint64_t stored;
    std::memcpy(&stored, buf.data() + buf.size() - 8, 8);
    if (stored != fnv1a(buf.data(), buf.size() - 8)) throw FormatError("checkpoint is truncated or corrupted (checksum mismatch)");

    const std::string model = r.str();
    json arch;
    try {
        arch = json::parse(r.str());
    } catch (const json::exception& e) {
        throw FormatError(std::string("bad checkpoint architecture: ") + e.what());
    }
    Standardizer ts{r.row(), r.row()};
    Standardizer xs{r.row(), r.row()};
    JointApproximator a;
    try {
        if (arch.at("model").get<std::string>() != model) throw FormatError("checkpoint header names two different models");
        const json& d = arch.at("data");
        const DataShape shape{data_kind_from_string(d.at("kind").get<std::string>()), d.at("rows").get<std::size_t>(),
                              d.at("dim").get<std::size_t>()};
        ApproximatorSpec spec{flow_from_json(arch.at("posterior")), flow_from_json(arch.at("likelihood")),
                              summary_from_json(arch.at("summary"))};
        a = JointApproximator::build(model, arch.at("theta_dim").get<std::size_t>(), shape, spec, std::move(ts),
                                     std::move(xs), arch.at("init_seed").get<std::uint64_t>());
        a.set_config_hash(arch.value("config_hash", ""));
    } catch (const json::exception& e) {
        throw FormatError(std::string("bad checkpoint architecture: ") + e.what());
    }
    if (r.u32() != 3) throw FormatError("checkpoint must hold 3 parameter segments");
    read_segment(r, "summary", a.summary().parameters());
    read_segment(r, "posterior", a.posterior_net().parameters());
    read_segment(r, "likelihood", a.likelihood_net().parameters());
    if (r.pos() != buf.size() - 8) throw FormatError("trailing bytes in checkpoint");
    return a;
}

JointApproximator checkpoint_load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open checkpoint '" + path + "'");
    return checkpoint_load(in);
}

}  // namespace jana
