#include "bdcd/nn.hpp"

#include <cmath>

namespace bdcd::nn {

Var ParamStore::add(const std::string& name, Tensor t) {
    for (auto& [n, v] : items_)
        if (n == name) throw std::logic_error("duplicate parameter name: " + name);
    Var v = Var::param(std::move(t));
    items_.emplace_back(name, v);
    return v;
}

Var* ParamStore::find(const std::string& name) {
    for (auto& [n, v] : items_)
        if (n == name) return &v;
    return nullptr;
}

long ParamStore::total_params() const {
    long n = 0;
    for (const auto& [name, v] : items_) n += v.val().numel();
    return n;
}

void ParamStore::zero_grad() {
    for (auto& [name, v] : items_) {
        Tensor& g = v.grad();
        std::fill(g.v.begin(), g.v.end(), 0.0);
    }
}

Conv2d::Conv2d(ParamStore& ps, const std::string& prefix, long cin, long cout, long k,
               std::mt19937_64& rng) {
    Tensor wt({cout, cin, k, k});
    double a = std::sqrt(6.0 / (cin * k * k));  // He-style fan-in bound
    uniform_init(wt, a, rng);
    w = ps.add(prefix + ".w", std::move(wt));
    b = ps.add(prefix + ".b", Tensor({cout}));
}

Linear::Linear(ParamStore& ps, const std::string& prefix, long din, long dout,
               std::mt19937_64& rng) {
    Tensor wt({din, dout});
    double a = std::sqrt(6.0 / (din + dout));
    uniform_init(wt, a, rng);
    w = ps.add(prefix + ".w", std::move(wt));
    b = ps.add(prefix + ".b", Tensor({dout}));
}

ChannelNorm::ChannelNorm(ParamStore& ps, const std::string& prefix, long c) {
    g = ps.add(prefix + ".g", Tensor::full({c}, 1.0));
    b = ps.add(prefix + ".b", Tensor({c}));
}

LayerNorm::LayerNorm(ParamStore& ps, const std::string& prefix, long d) {
    g = ps.add(prefix + ".g", Tensor::full({d}, 1.0));
    b = ps.add(prefix + ".b", Tensor({d}));
}

ConvBlock::ConvBlock(ParamStore& ps, const std::string& prefix, long cin, long cout,
                     std::mt19937_64& rng)
    : c1(ps, prefix + ".conv1", cin, cout, 3, rng),
      c2(ps, prefix + ".conv2", cout, cout, 3, rng),
      n1(ps, prefix + ".norm1", cout),
      n2(ps, prefix + ".norm2", cout) {}

Var ConvBlock::forward(const Var& x) const {
    Var h = ag::relu(n1.forward(c1.forward(x)));
    return ag::relu(n2.forward(c2.forward(h)));
}

MultiheadAttention::MultiheadAttention(ParamStore& ps, const std::string& prefix, long dim,
                                       long h, std::mt19937_64& rng)
    : wq(ps, prefix + ".q", dim, dim, rng),
      wk(ps, prefix + ".k", dim, dim, rng),
      wv(ps, prefix + ".v", dim, dim, rng),
      wo(ps, prefix + ".o", dim, dim, rng),
      heads(h) {
    if (dim % h != 0) throw std::invalid_argument("attention: heads must divide dim");
}

Var MultiheadAttention::forward(const Var& q_in, const Var& kv_in) const {
    long dim = wq.w.val().shape[0];
    long dh = dim / heads;
    Var q = wq.forward(q_in), k = wk.forward(kv_in), v = wv.forward(kv_in);
    std::vector<Var> outs;
    outs.reserve(heads);
    double s = 1.0 / std::sqrt(double(dh));
    for (long h = 0; h < heads; ++h) {
        Var qh = ag::slice_cols(q, h * dh, (h + 1) * dh);
        Var kh = ag::slice_cols(k, h * dh, (h + 1) * dh);
        Var vh = ag::slice_cols(v, h * dh, (h + 1) * dh);
        Var att = ag::softmax_lastdim(ag::scale(ag::matmul(qh, ag::transpose2d(kh)), s));
        outs.push_back(ag::matmul(att, vh));
    }
    return wo.forward(heads == 1 ? outs[0] : ag::concat_cols(outs));
}

TransformerLayer::TransformerLayer(ParamStore& ps, const std::string& prefix, long dim, long heads,
                                   bool cross_, std::mt19937_64& rng)
    : ln1(ps, prefix + ".ln1", dim),
      ln2(ps, prefix + ".ln2", dim),
      attn(ps, prefix + ".attn", dim, heads, rng),
      ff1(ps, prefix + ".ff1", dim, 4 * dim, rng),
      ff2(ps, prefix + ".ff2", 4 * dim, dim, rng),
      cross(cross_) {
    if (cross) ln_ctx = LayerNorm(ps, prefix + ".lnc", dim);
}

Var TransformerLayer::forward(const Var& x) const {
    if (cross) throw std::logic_error("cross layer needs a context");
    Var n = ln1.forward(x);
    Var h = ag::add(x, attn.forward(n, n));
    Var f = ff2.forward(ag::relu(ff1.forward(ln2.forward(h))));
    return ag::add(h, f);
}

Var TransformerLayer::forward(const Var& x, const Var& ctx) const {
    if (!cross) throw std::logic_error("self layer takes no context");
    Var h = ag::add(x, attn.forward(ln1.forward(x), ln_ctx.forward(ctx)));
    Var f = ff2.forward(ag::relu(ff1.forward(ln2.forward(h))));
    return ag::add(h, f);
}

}  // namespace bdcd::nn
