#include "bdcd/autograd.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace bdcd::ag {

using MatRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<MatRM>;
using CMapM = Eigen::Map<const MatRM>;

void Node::accumulate(const Tensor& g) {
    Tensor& gr = ensure_grad();
    if (!gr.same_shape(g)) throw std::logic_error("grad shape mismatch");
    for (long i = 0; i < g.numel(); ++i) gr.v[i] += g.v[i];
}

Tensor& Node::ensure_grad() {
    if (grad.v.empty() && Tensor::numel_of(value.shape) > 0) grad = Tensor::zeros(value.shape);
    return grad;
}

Var Var::constant(Tensor t) {
    auto n = std::make_shared<Node>();
    n->value = std::move(t);
    return Var(n);
}

Var Var::param(Tensor t) {
    auto n = std::make_shared<Node>();
    n->value = std::move(t);
    n->requires_grad = true;
    return Var(n);
}

namespace {

Var make_node(Tensor value, std::vector<NodePtr> inputs, std::function<void(Node&)> bw) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    for (const auto& in : inputs)
        if (in->requires_grad) n->requires_grad = true;
    if (n->requires_grad) {
        n->inputs = std::move(inputs);
        n->backward_fn = std::move(bw);
    }
    return Var(n);
}

void check_same_shape(const Var& a, const Var& b, const char* op) {
    if (!a.val().same_shape(b.val()))
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + a.val().shape_str() +
                                    " vs " + b.val().shape_str());
}

}  // namespace

Var custom_node(Tensor value, std::vector<NodePtr> inputs, std::function<void(Node&)> bw) {
    return make_node(std::move(value), std::move(inputs), std::move(bw));
}

void backward(const Var& root) {
    if (root.val().numel() != 1) throw std::invalid_argument("backward: root must be scalar");
    if (!root.requires_grad()) return;

    // iterative post-order DFS over grad-requiring subgraph
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, size_t>> stack;
    stack.push_back({root.node().get(), 0});
    seen.insert(root.node().get());
    while (!stack.empty()) {
        auto& [n, idx] = stack.back();
        if (idx < n->inputs.size()) {
            Node* child = n->inputs[idx++].get();
            if (child->requires_grad && !seen.count(child)) {
                seen.insert(child);
                stack.push_back({child, 0});
            }
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }
    root.node()->ensure_grad().v[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward_fn && !n->grad.v.empty()) n->backward_fn(*n);
    }
}

// ---------------------------------------------------------------- elementwise

Var add(const Var& a, const Var& b) {
    check_same_shape(a, b, "add");
    Tensor out = a.val();
    for (long i = 0; i < out.numel(); ++i) out.v[i] += b.val().v[i];
    return make_node(std::move(out), {a.node(), b.node()}, [](Node& self) {
        for (auto& in : self.inputs)
            if (in->requires_grad) in->accumulate(self.grad);
    });
}

Var sub(const Var& a, const Var& b) {
    check_same_shape(a, b, "sub");
    Tensor out = a.val();
    for (long i = 0; i < out.numel(); ++i) out.v[i] -= b.val().v[i];
    return make_node(std::move(out), {a.node(), b.node()}, [](Node& self) {
        if (self.inputs[0]->requires_grad) self.inputs[0]->accumulate(self.grad);
        if (self.inputs[1]->requires_grad) {
            Tensor g = self.grad;
            for (double& x : g.v) x = -x;
            self.inputs[1]->accumulate(g);
        }
    });
}

Var mul(const Var& a, const Var& b) {
    check_same_shape(a, b, "mul");
    Tensor out = a.val();
    for (long i = 0; i < out.numel(); ++i) out.v[i] *= b.val().v[i];
    return make_node(std::move(out), {a.node(), b.node()}, [](Node& self) {
        const Tensor& av = self.inputs[0]->value;
        const Tensor& bv = self.inputs[1]->value;
        if (self.inputs[0]->requires_grad) {
            Tensor g = self.grad;
            for (long i = 0; i < g.numel(); ++i) g.v[i] *= bv.v[i];
            self.inputs[0]->accumulate(g);
        }
        if (self.inputs[1]->requires_grad) {
            Tensor g = self.grad;
            for (long i = 0; i < g.numel(); ++i) g.v[i] *= av.v[i];
            self.inputs[1]->accumulate(g);
        }
    });
}

Var scale(const Var& a, double s) {
    Tensor out = a.val();
    for (double& x : out.v) x *= s;
    return make_node(std::move(out), {a.node()}, [s](Node& self) {
        Tensor g = self.grad;
        for (double& x : g.v) x *= s;
        self.inputs[0]->accumulate(g);
    });
}

Var add_scalar(const Var& a, double s) {
    Tensor out = a.val();
    for (double& x : out.v) x += s;
    return make_node(std::move(out), {a.node()},
                     [](Node& self) { self.inputs[0]->accumulate(self.grad); });
}

Var abs(const Var& a) {
    Tensor out = a.val();
    for (double& x : out.v) x = std::fabs(x);
    return make_node(std::move(out), {a.node()}, [](Node& self) {
        const Tensor& av = self.inputs[0]->value;
        Tensor g = self.grad;
        for (long i = 0; i < g.numel(); ++i) {
            double s = av.v[i] > 0 ? 1.0 : (av.v[i] < 0 ? -1.0 : 0.0);
            g.v[i] *= s;
        }
        self.inputs[0]->accumulate(g);
    });
}

Var relu(const Var& a) {
    Tensor out = a.val();
    for (double& x : out.v) x = x > 0 ? x : 0.0;
    return make_node(std::move(out), {a.node()}, [](Node& self) {
        const Tensor& av = self.inputs[0]->value;
        Tensor g = self.grad;
        for (long i = 0; i < g.numel(); ++i)
            if (av.v[i] <= 0) g.v[i] = 0.0;
        self.inputs[0]->accumulate(g);
    });
}

// --------------------------------------------------------------------- shape

Var reshape(const Var& a, std::vector<long> shape) {
    if (Tensor::numel_of(shape) != a.val().numel())
        throw std::invalid_argument("reshape: element count mismatch");
    Tensor out(std::move(shape), a.val().v);
    return make_node(std::move(out), {a.node()}, [](Node& self) {
        Tensor g(self.inputs[0]->value.shape, self.grad.v);
        self.inputs[0]->accumulate(g);
    });
}

Var concat_channels(const Var& a, const Var& b) {
    const Tensor& av = a.val();
    const Tensor& bv = b.val();
    if (av.ndim() != 3 || bv.ndim() != 3 || av.shape[1] != bv.shape[1] || av.shape[2] != bv.shape[2])
        throw std::invalid_argument("concat_channels: incompatible shapes");
    long ca = av.shape[0], cb = bv.shape[0], hw = av.shape[1] * av.shape[2];
    Tensor out({ca + cb, av.shape[1], av.shape[2]});
    std::copy(av.v.begin(), av.v.end(), out.v.begin());
    std::copy(bv.v.begin(), bv.v.end(), out.v.begin() + ca * hw);
    return make_node(std::move(out), {a.node(), b.node()}, [ca, cb, hw](Node& self) {
        if (self.inputs[0]->requires_grad) {
            Tensor g(self.inputs[0]->value.shape);
            std::copy(self.grad.v.begin(), self.grad.v.begin() + ca * hw, g.v.begin());
            self.inputs[0]->accumulate(g);
        }
        if (self.inputs[1]->requires_grad) {
            Tensor g(self.inputs[1]->value.shape);
            std::copy(self.grad.v.begin() + ca * hw, self.grad.v.begin() + (ca + cb) * hw,
                      g.v.begin());
            self.inputs[1]->accumulate(g);
        }
    });
}

Var chw_to_tokens(const Var& x) {
    const Tensor& xv = x.val();
    if (xv.ndim() != 3) throw std::invalid_argument("chw_to_tokens: need (C,H,W)");
    long c = xv.shape[0], hw = xv.shape[1] * xv.shape[2];
    Tensor out({hw, c});
    for (long ci = 0; ci < c; ++ci)
        for (long p = 0; p < hw; ++p) out.v[p * c + ci] = xv.v[ci * hw + p];
    return make_node(std::move(out), {x.node()}, [c, hw](Node& self) {
        Tensor g(self.inputs[0]->value.shape);
        for (long ci = 0; ci < c; ++ci)
            for (long p = 0; p < hw; ++p) g.v[ci * hw + p] = self.grad.v[p * c + ci];
        self.inputs[0]->accumulate(g);
    });
}

Var tokens_to_chw(const Var& t, long c, long h, long w) {
    const Tensor& tv = t.val();
    if (tv.ndim() != 2 || tv.shape[0] != h * w || tv.shape[1] != c)
        throw std::invalid_argument("tokens_to_chw: shape mismatch");
    long hw = h * w;
    Tensor out({c, h, w});
    for (long ci = 0; ci < c; ++ci)
        for (long p = 0; p < hw; ++p) out.v[ci * hw + p] = tv.v[p * c + ci];
    return make_node(std::move(out), {t.node()}, [c, hw](Node& self) {
        Tensor g(self.inputs[0]->value.shape);
        for (long ci = 0; ci < c; ++ci)
            for (long p = 0; p < hw; ++p) g.v[p * c + ci] = self.grad.v[ci * hw + p];
        self.inputs[0]->accumulate(g);
    });
}

Var slice_cols(const Var& x, long c0, long c1) {
    const Tensor& xv = x.val();
    if (xv.ndim() != 2 || c0 < 0 || c1 > xv.shape[1] || c0 >= c1)
        throw std::invalid_argument("slice_cols: bad range");
    long t = xv.shape[0], d = xv.shape[1], n = c1 - c0;
    Tensor out({t, n});
    for (long r = 0; r < t; ++r)
        for (long c = 0; c < n; ++c) out.v[r * n + c] = xv.v[r * d + c0 + c];
    return make_node(std::move(out), {x.node()}, [t, d, n, c0](Node& self) {
        Tensor g(self.inputs[0]->value.shape);
        for (long r = 0; r < t; ++r)
            for (long c = 0; c < n; ++c) g.v[r * d + c0 + c] = self.grad.v[r * n + c];
        self.inputs[0]->accumulate(g);
    });
}

Var concat_cols(const std::vector<Var>& xs) {
    if (xs.empty()) throw std::invalid_argument("concat_cols: empty");
    long t = xs[0].val().shape[0], d = 0;
    for (const Var& x : xs) {
        if (x.val().ndim() != 2 || x.val().shape[0] != t)
            throw std::invalid_argument("concat_cols: row mismatch");
        d += x.val().shape[1];
    }
    Tensor out({t, d});
    std::vector<long> offs;
    long off = 0;
    for (const Var& x : xs) {
        offs.push_back(off);
        long w = x.val().shape[1];
        for (long r = 0; r < t; ++r)
            for (long c = 0; c < w; ++c) out.v[r * d + off + c] = x.val().v[r * w + c];
        off += w;
    }
    std::vector<NodePtr> ins;
    for (const Var& x : xs) ins.push_back(x.node());
    return make_node(std::move(out), std::move(ins), [t, d, offs](Node& self) {
        for (size_t i = 0; i < self.inputs.size(); ++i) {
            if (!self.inputs[i]->requires_grad) continue;
            long w = self.inputs[i]->value.shape[1];
            Tensor g(self.inputs[i]->value.shape);
            for (long r = 0; r < t; ++r)
                for (long c = 0; c < w; ++c) g.v[r * w + c] = self.grad.v[r * d + offs[i] + c];
            self.inputs[i]->accumulate(g);
        }
    });
}

Var transpose2d(const Var& x) {
    const Tensor& xv = x.val();
    if (xv.ndim() != 2) throw std::invalid_argument("transpose2d: need 2D");
    long r = xv.shape[0], c = xv.shape[1];
    Tensor out({c, r});
    CMapM xm(xv.v.data(), r, c);
    MapM om(out.v.data(), c, r);
    om = xm.transpose();
    return make_node(std::move(out), {x.node()}, [r, c](Node& self) {
        Tensor g({r, c});
        CMapM gm(self.grad.v.data(), c, r);
        MapM out(g.v.data(), r, c);
        out = gm.transpose();
        self.inputs[0]->accumulate(g);
    });
}

// ------------------------------------------------------------ linear algebra

Var matmul(const Var& a, const Var& b) {
    const Tensor& av = a.val();
    const Tensor& bv = b.val();
    if (av.ndim() != 2 || bv.ndim() != 2 || av.shape[1] != bv.shape[0])
        throw std::invalid_argument("matmul: incompatible " + av.shape_str() + " x " +
                                    bv.shape_str());
    long m = av.shape[0], k = av.shape[1], n = bv.shape[1];
    Tensor out({m, n});
    CMapM am(av.v.data(), m, k);
    CMapM bm(bv.v.data(), k, n);
    MapM om(out.v.data(), m, n);
    om.noalias() = am * bm;
    return make_node(std::move(out), {a.node(), b.node()}, [m, k, n](Node& self) {
        CMapM gm(self.grad.v.data(), m, n);
        CMapM am(self.inputs[0]->value.v.data(), m, k);
        CMapM bm(self.inputs[1]->value.v.data(), k, n);
        if (self.inputs[0]->requires_grad) {
            Tensor ga({m, k});
            MapM gam(ga.v.data(), m, k);
            gam.noalias() = gm * bm.transpose();
            self.inputs[0]->accumulate(ga);
        }
        if (self.inputs[1]->requires_grad) {
            Tensor gb({k, n});
            MapM gbm(gb.v.data(), k, n);
            gbm.noalias() = am.transpose() * gm;
            self.inputs[1]->accumulate(gb);
        }
    });
}

Var add_row_broadcast(const Var& x, const Var& b) {
    const Tensor& xv = x.val();
    const Tensor& bv = b.val();
    if (xv.ndim() != 2 || bv.ndim() != 1 || bv.shape[0] != xv.shape[1])
        throw std::invalid_argument("add_row_broadcast: shape mismatch");
    long t = xv.shape[0], d = xv.shape[1];
    Tensor out = xv;
    for (long r = 0; r < t; ++r)
        for (long c = 0; c < d; ++c) out.v[r * d + c] += bv.v[c];
    return make_node(std::move(out), {x.node(), b.node()}, [t, d](Node& self) {
        if (self.inputs[0]->requires_grad) self.inputs[0]->accumulate(self.grad);
        if (self.inputs[1]->requires_grad) {
            Tensor g({d});
            for (long r = 0; r < t; ++r)
                for (long c = 0; c < d; ++c) g.v[c] += self.grad.v[r * d + c];
            self.inputs[1]->accumulate(g);
        }
    });
}

Var linear(const Var& x, const Var& w, const Var& b) {
    return add_row_broadcast(matmul(x, w), b);
}

// ---------------------------------------------- normalization and activation

namespace {

// softmax over contiguous groups of length d; x viewed as (rows, d)
Var softmax_groups(const Var& x, long rows, long d, bool channel_major) {
    // channel_major: x is (C,H,W) and groups are strided over the channel axis
    const Tensor& xv = x.val();
    Tensor out(xv.shape);
    long stride = channel_major ? rows : 1;  // distance between group elements
    long base_step = channel_major ? 1 : d;  // distance between group starts
    for (long r = 0; r < rows; ++r) {
        long base = r * base_step;
        double mx = -1e300;
        for (long c = 0; c < d; ++c) mx = std::max(mx, xv.v[base + c * stride]);
        double sum = 0;
        for (long c = 0; c < d; ++c) {
            double e = std::exp(xv.v[base + c * stride] - mx);
            out.v[base + c * stride] = e;
            sum += e;
        }
        for (long c = 0; c < d; ++c) out.v[base + c * stride] /= sum;
    }
    return make_node(std::move(out), {x.node()}, [rows, d, stride, base_step](Node& self) {
        Tensor g(self.inputs[0]->value.shape);
        const Tensor& y = self.value;
        for (long r = 0; r < rows; ++r) {
            long base = r * base_step;
            double dot = 0;
            for (long c = 0; c < d; ++c)
                dot += self.grad.v[base + c * stride] * y.v[base + c * stride];
            for (long c = 0; c < d; ++c) {
                long i = base + c * stride;
                g.v[i] = y.v[i] * (self.grad.v[i] - dot);
            }
        }
        self.inputs[0]->accumulate(g);
    });
}

}  // namespace

Var softmax_lastdim(const Var& x) {
    const Tensor& xv = x.val();
    if (xv.ndim() < 1) throw std::invalid_argument("softmax_lastdim: need >=1D");
    long d = xv.shape.back();
    long rows = xv.numel() / d;
    return softmax_groups(x, rows, d, false);
}

Var channel_softmax(const Var& x) {
    const Tensor& xv = x.val();
    if (xv.ndim() != 3) throw std::invalid_argument("channel_softmax: need (C,H,W)");
    long c = xv.shape[0], hw = xv.shape[1] * xv.shape[2];
    return softmax_groups(x, hw, c, true);
}

namespace {

// layernorm over groups; same stride scheme as softmax_groups
Var layernorm_groups(const Var& x, const Var& g, const Var& b, double eps, long rows, long d,
                     bool channel_major) {
    const Tensor& xv = x.val();
    if (g.val().numel() != d || b.val().numel() != d)
        throw std::invalid_argument("layernorm: scale/shift size mismatch");
    long stride = channel_major ? rows : 1;
    long base_step = channel_major ? 1 : d;
    Tensor out(xv.shape);
    Tensor xhat(xv.shape);
    std::vector<double> inv_std(rows);
    for (long r = 0; r < rows; ++r) {
        long base = r * base_step;
        double mu = 0;
        for (long c = 0; c < d; ++c) mu += xv.v[base + c * stride];
        mu /= d;
        double var = 0;
        for (long c = 0; c < d; ++c) {
            double dx = xv.v[base + c * stride] - mu;
            var += dx * dx;
        }
        var /= d;
        double is = 1.0 / std::sqrt(var + eps);
        inv_std[r] = is;
        for (long c = 0; c < d; ++c) {
            long i = base + c * stride;
            double xh = (xv.v[i] - mu) * is;
            xhat.v[i] = xh;
            out.v[i] = g.val().v[c] * xh + b.val().v[c];
        }
    }
    return make_node(
        std::move(out), {x.node(), g.node(), b.node()},
        [rows, d, stride, base_step, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
            const Tensor& gamma = self.inputs[1]->value;
            if (self.inputs[1]->requires_grad || self.inputs[2]->requires_grad) {
                Tensor gg({d}), gb({d});
                for (long r = 0; r < rows; ++r) {
                    long base = r * base_step;
                    for (long c = 0; c < d; ++c) {
                        long i = base + c * stride;
                        gg.v[c] += self.grad.v[i] * xhat.v[i];
                        gb.v[c] += self.grad.v[i];
                    }
                }
                if (self.inputs[1]->requires_grad) self.inputs[1]->accumulate(gg);
                if (self.inputs[2]->requires_grad) self.inputs[2]->accumulate(gb);
            }
            if (self.inputs[0]->requires_grad) {
                Tensor gx(self.inputs[0]->value.shape);
                for (long r = 0; r < rows; ++r) {
                    long base = r * base_step;
                    double s1 = 0, s2 = 0;  // sums of dxhat and dxhat*xhat
                    for (long c = 0; c < d; ++c) {
                        long i = base + c * stride;
                        double dxh = self.grad.v[i] * gamma.v[c];
                        s1 += dxh;
                        s2 += dxh * xhat.v[i];
                    }
                    for (long c = 0; c < d; ++c) {
                        long i = base + c * stride;
                        double dxh = self.grad.v[i] * gamma.v[c];
                        gx.v[i] = inv_std[r] * (dxh - s1 / d - xhat.v[i] * s2 / d);
                    }
                }
                self.inputs[0]->accumulate(gx);
            }
        });
}

}  // namespace

Var layernorm_lastdim(const Var& x, const Var& g, const Var& b, double eps) {
    const Tensor& xv = x.val();
    long d = xv.shape.back();
    return layernorm_groups(x, g, b, eps, xv.numel() / d, d, false);
}

Var channel_layernorm(const Var& x, const Var& g, const Var& b, double eps) {
    const Tensor& xv = x.val();
    if (xv.ndim() != 3) throw std::invalid_argument("channel_layernorm: need (C,H,W)");
    long c = xv.shape[0], hw = xv.shape[1] * xv.shape[2];
    return layernorm_groups(x, g, b, eps, hw, c, true);
}

// ------------------------------------------------------------------- spatial

namespace {

inline long clampl(long x, long lo, long hi) { return x < lo ? lo : (x > hi ? hi : x); }

// im2col with replicate padding; col is (Cin*k*k, H*W)
void im2col_replicate(const Tensor& x, long k, Tensor& col) {
    long cin = x.shape[0], h = x.shape[1], w = x.shape[2];
    long pad = k / 2;
    long hw = h * w;
    for (long ci = 0; ci < cin; ++ci)
        for (long dy = 0; dy < k; ++dy)
            for (long dx = 0; dx < k; ++dx) {
                long row = (ci * k + dy) * k + dx;
                double* dst = &col.v[row * hw];
                for (long y = 0; y < h; ++y) {
                    long sy = clampl(y + dy - pad, 0, h - 1);
                    const double* src = &x.v[(ci * h + sy) * w];
                    for (long xq = 0; xq < w; ++xq)
                        dst[y * w + xq] = src[clampl(xq + dx - pad, 0, w - 1)];
                }
            }
}

}  // namespace

Var conv2d(const Var& x, const Var& w, const Var& b) {
    const Tensor& xv = x.val();
    const Tensor& wv = w.val();
    const Tensor& bv = b.val();
    if (xv.ndim() != 3 || wv.ndim() != 4) throw std::invalid_argument("conv2d: bad ranks");
    long cin = xv.shape[0], h = xv.shape[1], wdt = xv.shape[2];
    long cout = wv.shape[0], k = wv.shape[2];
    if (wv.shape[1] != cin || wv.shape[3] != k || k % 2 == 0)
        throw std::invalid_argument("conv2d: kernel mismatch");
    if (bv.numel() != cout) throw std::invalid_argument("conv2d: bias mismatch");
    long hw = h * wdt, kk = cin * k * k;

    Tensor col({kk, hw});
    im2col_replicate(xv, k, col);
    Tensor out({cout, h, wdt});
    {
        CMapM wm(wv.v.data(), cout, kk);
        CMapM cm(col.v.data(), kk, hw);
        MapM om(out.v.data(), cout, hw);
        om.noalias() = wm * cm;
        for (long co = 0; co < cout; ++co) om.row(co).array() += bv.v[co];
    }
    return make_node(
        std::move(out), {x.node(), w.node(), b.node()},
        [cin, h, wdt, cout, k, hw, kk, col = std::move(col)](Node& self) {
            CMapM gm(self.grad.v.data(), cout, hw);
            if (self.inputs[2]->requires_grad) {
                Tensor gb({cout});
                for (long co = 0; co < cout; ++co) gb.v[co] = gm.row(co).sum();
                self.inputs[2]->accumulate(gb);
            }
            if (self.inputs[1]->requires_grad) {
                Tensor gw({cout, cin, k, k});
                CMapM cm(col.v.data(), kk, hw);
                MapM gwm(gw.v.data(), cout, kk);
                gwm.noalias() = gm * cm.transpose();
                self.inputs[1]->accumulate(gw);
            }
            if (self.inputs[0]->requires_grad) {
                Tensor gcol({kk, hw});
                CMapM wm(self.inputs[1]->value.v.data(), cout, kk);
                MapM gcm(gcol.v.data(), kk, hw);
                gcm.noalias() = wm.transpose() * gm;
                // col2im with the same replicate-clamped coordinates
                Tensor gx({cin, h, wdt});
                long pad = k / 2;
                for (long ci = 0; ci < cin; ++ci)
                    for (long dy = 0; dy < k; ++dy)
                        for (long dx = 0; dx < k; ++dx) {
                            long row = (ci * k + dy) * k + dx;
                            const double* src = &gcol.v[row * hw];
                            for (long y = 0; y < h; ++y) {
                                long sy = clampl(y + dy - pad, 0, h - 1);
                                double* dst = &gx.v[(ci * h + sy) * wdt];
                                for (long xq = 0; xq < wdt; ++xq)
                                    dst[clampl(xq + dx - pad, 0, wdt - 1)] += src[y * wdt + xq];
                            }
                        }
                self.inputs[0]->accumulate(gx);
            }
        });
}

Var maxpool2(const Var& x) {
    const Tensor& xv = x.val();
    if (xv.ndim() != 3 || xv.shape[1] % 2 || xv.shape[2] % 2)
        throw std::invalid_argument("maxpool2: need (C,2m,2n)");
    long c = xv.shape[0], h = xv.shape[1], w = xv.shape[2];
    long oh = h / 2, ow = w / 2;
    Tensor out({c, oh, ow});
    std::vector<long> argmax(out.numel());
    for (long ci = 0; ci < c; ++ci)
        for (long y = 0; y < oh; ++y)
            for (long xq = 0; xq < ow; ++xq) {
                long best = (ci * h + 2 * y) * w + 2 * xq;
                double bv = xv.v[best];
                const long cand[3] = {best + 1, best + w, best + w + 1};
                for (long i : cand)
                    if (xv.v[i] > bv) {
                        bv = xv.v[i];
                        best = i;
                    }
                long o = (ci * oh + y) * ow + xq;
                out.v[o] = bv;
                argmax[o] = best;
            }
    return make_node(std::move(out), {x.node()}, [argmax = std::move(argmax)](Node& self) {
        Tensor g(self.inputs[0]->value.shape);
        for (long o = 0; o < self.grad.numel(); ++o) g.v[argmax[o]] += self.grad.v[o];
        self.inputs[0]->accumulate(g);
    });
}

Var upsample_bilinear2(const Var& x) {
    const Tensor& xv = x.val();
    if (xv.ndim() != 3) throw std::invalid_argument("upsample_bilinear2: need (C,H,W)");
    long c = xv.shape[0], h = xv.shape[1], w = xv.shape[2];
    long oh = 2 * h, ow = 2 * w;
    // precompute 1D source indices/weights (half-pixel centers, edges clamped)
    auto coords = [](long o, long n) {
        double s = (o + 0.5) / 2.0 - 0.5;
        s = std::max(0.0, std::min(s, double(n - 1)));
        long i0 = static_cast<long>(std::floor(s));
        long i1 = std::min(i0 + 1, n - 1);
        double f = s - i0;
        return std::tuple<long, long, double>{i0, i1, f};
    };
    Tensor out({c, oh, ow});
    for (long ci = 0; ci < c; ++ci)
        for (long oy = 0; oy < oh; ++oy) {
            auto [y0, y1, fy] = coords(oy, h);
            for (long ox = 0; ox < ow; ++ox) {
                auto [x0, x1, fx] = coords(ox, w);
                const double* p = &xv.v[ci * h * w];
                double v = (1 - fy) * ((1 - fx) * p[y0 * w + x0] + fx * p[y0 * w + x1]) +
                           fy * ((1 - fx) * p[y1 * w + x0] + fx * p[y1 * w + x1]);
                out.v[(ci * oh + oy) * ow + ox] = v;
            }
        }
    return make_node(std::move(out), {x.node()}, [c, h, w, oh, ow, coords](Node& self) {
        Tensor g({c, h, w});
        for (long ci = 0; ci < c; ++ci)
            for (long oy = 0; oy < oh; ++oy) {
                auto [y0, y1, fy] = coords(oy, h);
                for (long ox = 0; ox < ow; ++ox) {
                    auto [x0, x1, fx] = coords(ox, w);
                    double go = self.grad.v[(ci * oh + oy) * ow + ox];
                    double* p = &g.v[ci * h * w];
                    p[y0 * w + x0] += (1 - fy) * (1 - fx) * go;
                    p[y0 * w + x1] += (1 - fy) * fx * go;
                    p[y1 * w + x0] += fy * (1 - fx) * go;
                    p[y1 * w + x1] += fy * fx * go;
                }
            }
        self.inputs[0]->accumulate(g);
    });
}

Var pos_embed_2d(const Var& rows, const Var& cols, long h, long w) {
    const Tensor& rv = rows.val();
    const Tensor& cv = cols.val();
    if (rv.ndim() != 2 || cv.ndim() != 2 || rv.shape[1] != cv.shape[1])
        throw std::invalid_argument("pos_embed_2d: bad tables");
    if (h > rv.shape[0] || w > cv.shape[0])
        throw std::invalid_argument("pos_embed_2d: grid exceeds table extent");
    long d = rv.shape[1];
    Tensor out({h * w, d});
    for (long y = 0; y < h; ++y)
        for (long x = 0; x < w; ++x)
            for (long c = 0; c < d; ++c)
                out.v[(y * w + x) * d + c] = rv.v[y * d + c] + cv.v[x * d + c];
    return make_node(std::move(out), {rows.node(), cols.node()}, [h, w, d](Node& self) {
        if (self.inputs[0]->requires_grad) {
            Tensor g(self.inputs[0]->value.shape);
            for (long y = 0; y < h; ++y)
                for (long x = 0; x < w; ++x)
                    for (long c = 0; c < d; ++c) g.v[y * d + c] += self.grad.v[(y * w + x) * d + c];
            self.inputs[0]->accumulate(g);
        }
        if (self.inputs[1]->requires_grad) {
            Tensor g(self.inputs[1]->value.shape);
            for (long y = 0; y < h; ++y)
                for (long x = 0; x < w; ++x)
                    for (long c = 0; c < d; ++c) g.v[x * d + c] += self.grad.v[(y * w + x) * d + c];
            self.inputs[1]->accumulate(g);
        }
    });
}

// ---------------------------------------------------------------- reductions

Var sum_all(const Var& x) {
    double s = 0;
    for (double v : x.val().v) s += v;
    return make_node(Tensor::scalar(s), {x.node()}, [](Node& self) {
        Tensor g(self.inputs[0]->value.shape);
        std::fill(g.v.begin(), g.v.end(), self.grad.v[0]);
        self.inputs[0]->accumulate(g);
    });
}

Var mean_all(const Var& x) {
    long n = x.val().numel();
    return scale(sum_all(x), 1.0 / n);
}

}  // namespace bdcd::ag
