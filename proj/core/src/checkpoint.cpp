#include "bdcd/checkpoint.hpp"

#include <json.hpp>

#include <cstring>
#include <fstream>

namespace bdcd {

using nlohmann::json;

namespace {

constexpr char kMagic[4] = {'B', 'D', 'C', 'P'};

json config_json(const ModelConfig& c) {
    json j;
    j["num_classes"] = c.num_classes;
    j["levels"] = c.levels;
    j["channels"] = c.channels;
    if (c.transformer_levels_set) j["transformer_levels"] = c.transformer_levels;
    j["transformer_depth"] = c.transformer_depth;
    j["attention_heads"] = c.attention_heads;
    j["token_dim"] = c.token_dim;
    j["conv_after_merge"] = c.conv_after_merge;
    j["shared_encoder"] = c.shared_encoder;
    j["max_tokens"] = c.max_tokens;
    return j;
}

ModelConfig config_from(const json& j) {
    ModelConfig c;
    c.num_classes = j.value("num_classes", c.num_classes);
    c.levels = j.value("levels", c.levels);
    c.channels = j.value("channels", c.channels);
    if (j.contains("transformer_levels")) {
        c.transformer_levels = j["transformer_levels"].get<std::vector<int>>();
        c.transformer_levels_set = true;
    }
    c.transformer_depth = j.value("transformer_depth", c.transformer_depth);
    c.attention_heads = j.value("attention_heads", c.attention_heads);
    c.token_dim = j.value("token_dim", c.token_dim);
    c.conv_after_merge = j.value("conv_after_merge", c.conv_after_merge);
    c.shared_encoder = j.value("shared_encoder", c.shared_encoder);
    c.max_tokens = j.value("max_tokens", c.max_tokens);
    c.validate();
    return c;
}

template <typename T>
void write_pod(std::ostream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T read_pod(std::istream& in) {
    T v;
    in.read(reinterpret_cast<char*>(&v), sizeof v);
    if (!in) throw std::runtime_error("checkpoint: truncated file");
    return v;
}

}  // namespace

std::string model_config_to_json(const ModelConfig& cfg) { return config_json(cfg).dump(); }

ModelConfig model_config_from_json(const std::string& j) { return config_from(json::parse(j)); }

Checkpoint checkpoint_from_model(const ChangeNet& net, const std::string& extra_json) {
    Checkpoint c;
    c.model = net.config();
    c.extra_json = extra_json;
    for (const auto& [name, v] : net.params().items()) c.weights.emplace_back(name, v.val());
    return c;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
    out.write(kMagic, 4);
    write_pod<uint32_t>(out, static_cast<uint32_t>(ckpt.format_version));
    json meta;
    meta["model"] = config_json(ckpt.model);
    if (!ckpt.extra_json.empty()) meta["extra"] = json::parse(ckpt.extra_json);
    std::string ms = meta.dump();
    write_pod<uint32_t>(out, static_cast<uint32_t>(ms.size()));
    out.write(ms.data(), ms.size());
    write_pod<uint64_t>(out, ckpt.weights.size());
    for (const auto& [name, t] : ckpt.weights) {
        write_pod<uint32_t>(out, static_cast<uint32_t>(name.size()));
        out.write(name.data(), name.size());
        write_pod<uint32_t>(out, static_cast<uint32_t>(t.shape.size()));
        for (long d : t.shape) write_pod<int64_t>(out, d);
        out.write(reinterpret_cast<const char*>(t.v.data()), t.v.size() * sizeof(double));
    }
    if (!out) throw std::runtime_error("checkpoint write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0)
        throw std::runtime_error("not a checkpoint file: " + path);
    Checkpoint c;
    c.format_version = static_cast<int>(read_pod<uint32_t>(in));
    if (c.format_version != 1)
        throw std::runtime_error("unsupported checkpoint version " +
                                 std::to_string(c.format_version));
    uint32_t mlen = read_pod<uint32_t>(in);
    std::string ms(mlen, '\0');
    in.read(ms.data(), mlen);
    json meta = json::parse(ms);
    c.model = config_from(meta.at("model"));
    if (meta.contains("extra")) c.extra_json = meta["extra"].dump();
    uint64_t n = read_pod<uint64_t>(in);
    for (uint64_t i = 0; i < n; ++i) {
        uint32_t nlen = read_pod<uint32_t>(in);
        std::string name(nlen, '\0');
        in.read(name.data(), nlen);
        uint32_t ndim = read_pod<uint32_t>(in);
        std::vector<long> shape;
        for (uint32_t d = 0; d < ndim; ++d) shape.push_back(static_cast<long>(read_pod<int64_t>(in)));
        Tensor t(shape);
        in.read(reinterpret_cast<char*>(t.v.data()), t.v.size() * sizeof(double));
        if (!in) throw std::runtime_error("checkpoint: truncated weights in " + path);
        c.weights.emplace_back(std::move(name), std::move(t));
    }
    return c;
}

void load_weights_into(ChangeNet& net, const Checkpoint& ckpt) {
    auto& ps = net.params();
    if (ckpt.weights.size() != ps.items().size())
        throw std::runtime_error("checkpoint/model parameter count mismatch");
    for (const auto& [name, t] : ckpt.weights) {
        auto* v = ps.find(name);
        if (!v) throw std::runtime_error("checkpoint has unknown parameter: " + name);
        if (v->val().shape != t.shape)
            throw std::runtime_error("checkpoint shape mismatch for " + name);
        v->val() = t;
    }
}

ChangeNet model_from_checkpoint(const Checkpoint& ckpt) {
    ChangeNet net(ckpt.model, 0);
    load_weights_into(net, ckpt);
    return net;
}

int transfer_matching_params(ChangeNet& net,
                             const std::vector<std::pair<std::string, Tensor>>& weights,
                             const std::string& prefix) {
    int n = 0;
    for (const auto& [name, t] : weights) {
        if (name.rfind(prefix, 0) != 0) continue;
        auto* v = net.params().find(name);
        if (!v || v->val().shape != t.shape) continue;
        v->val() = t;
        ++n;
    }
    return n;
}

}  // namespace bdcd
