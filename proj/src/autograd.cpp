#include "fire2/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <thread>

namespace fire2 {

namespace {

// Deterministic batch-parallel helper: fixed chunking and a fixed number of
// workers, so floating-point results are bit-stable across runs.
int worker_count() {
    static const int n =
        std::max(1, static_cast<int>(std::min(2u, std::thread::hardware_concurrency())));
    return n;
}

template <typename Fn>
void parallel_chunks(int n, Fn&& fn) {
    const int workers = worker_count();
    if (workers <= 1 || n < 2) {
        fn(0, 0, n);
        return;
    }
    std::vector<std::thread> pool;
    const int chunk = (n + workers - 1) / workers;
    for (int w = 0; w < workers; ++w) {
        const int lo = w * chunk, hi = std::min(n, lo + chunk);
        if (lo >= hi) break;
        pool.emplace_back([&fn, w, lo, hi] { fn(w, lo, hi); });
    }
    for (auto& t : pool) t.join();
}

}  // namespace

void adam_step(Parameter& p, const AdamConfig& cfg, double lr) {
    p.adam_step += 1;
    const double b1 = cfg.beta1, b2 = cfg.beta2;
    const double bc1 = 1.0 - std::pow(b1, static_cast<double>(p.adam_step));
    const double bc2 = 1.0 - std::pow(b2, static_cast<double>(p.adam_step));
    for (size_t i = 0; i < p.value.data.size(); ++i) {
        double g = p.grad.data[i] + cfg.weight_decay * p.value.data[i];
        p.adam_m.data[i] = b1 * p.adam_m.data[i] + (1.0 - b1) * g;
        p.adam_v.data[i] = b2 * p.adam_v.data[i] + (1.0 - b2) * g * g;
        double mhat = p.adam_m.data[i] / bc1;
        double vhat = p.adam_v.data[i] / bc2;
        p.value.data[i] -= lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
}

Var Tape::make(Tensor val, bool requires_grad) {
    Node n;
    n.val = std::move(val);
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
}

Tensor& Tape::grad_buf(Var v) {
    Node& n = node(v);
    if (n.grad.shape.empty() && !n.val.shape.empty()) n.grad = Tensor(n.val.shape);
    if (n.grad.data.empty() && !n.val.data.empty()) n.grad = Tensor(n.val.shape);
    return n.grad;
}

Var Tape::constant(Tensor t) { return make(std::move(t), false); }

Var Tape::leaf(Tensor t) { return make(std::move(t), true); }

Var Tape::param(Parameter& p) {
    Var v = make(p.value, true);
    Parameter* pp = &p;
    node(v).leaf_param = pp;
    node(v).back = [pp](Tape&, Node& self) {
        for (size_t i = 0; i < self.grad.data.size(); ++i) pp->grad.data[i] += self.grad.data[i];
    };
    return v;
}

Var Tape::detach(Var x) { return make(value(x), false); }

void Tape::backward(Var loss) {
    Node& ln = node(loss);
    if (ln.val.numel() != 1) throw std::logic_error("backward: loss must be scalar");
    grad_buf(loss).data[0] = 1.0;
    for (int i = loss.id; i >= 0; --i) {
        Node& n = nodes_[static_cast<size_t>(i)];
        if (!n.requires_grad || !n.back) continue;
        if (n.grad.data.empty()) continue;  // not on any path to the loss
        n.back(*this, n);
    }
}

// ---------------------------------------------------------------------------
// elementwise

Var Tape::add(Var a, Var b) {
    const Tensor& ta = value(a);
    const Tensor& tb = value(b);
    if (!ta.same_shape(tb)) throw std::invalid_argument("add: shape mismatch");
    Tensor out(ta.shape);
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = ta.data[i] + tb.data[i];
    Var v = make(std::move(out), needs(a) || needs(b));
    if (!node(v).requires_grad) return v;
    node(v).back = [a, b](Tape& t, Node& self) {
        if (t.needs(a)) {
            Tensor& ga = t.grad_buf(a);
            for (size_t i = 0; i < ga.data.size(); ++i) ga.data[i] += self.grad.data[i];
        }
        if (t.needs(b)) {
            Tensor& gb = t.grad_buf(b);
            for (size_t i = 0; i < gb.data.size(); ++i) gb.data[i] += self.grad.data[i];
        }
    };
    return v;
}

Var Tape::sub(Var a, Var b) {
    const Tensor& ta = value(a);
    const Tensor& tb = value(b);
    if (!ta.same_shape(tb)) throw std::invalid_argument("sub: shape mismatch");
    Tensor out(ta.shape);
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = ta.data[i] - tb.data[i];
    Var v = make(std::move(out), needs(a) || needs(b));
    if (!node(v).requires_grad) return v;
    node(v).back = [a, b](Tape& t, Node& self) {
        if (t.needs(a)) {
            Tensor& ga = t.grad_buf(a);
            for (size_t i = 0; i < ga.data.size(); ++i) ga.data[i] += self.grad.data[i];
        }
        if (t.needs(b)) {
            Tensor& gb = t.grad_buf(b);
            for (size_t i = 0; i < gb.data.size(); ++i) gb.data[i] -= self.grad.data[i];
        }
    };
    return v;
}

Var Tape::mul(Var a, Var b) {
    const Tensor& ta = value(a);
    const Tensor& tb = value(b);
    if (!ta.same_shape(tb)) throw std::invalid_argument("mul: shape mismatch");
    Tensor out(ta.shape);
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = ta.data[i] * tb.data[i];
    Var v = make(std::move(out), needs(a) || needs(b));
    if (!node(v).requires_grad) return v;
    node(v).back = [a, b](Tape& t, Node& self) {
        const Tensor& ta2 = t.value(a);
        const Tensor& tb2 = t.value(b);
        if (t.needs(a)) {
            Tensor& ga = t.grad_buf(a);
            for (size_t i = 0; i < ga.data.size(); ++i)
                ga.data[i] += self.grad.data[i] * tb2.data[i];
        }
        if (t.needs(b)) {
            Tensor& gb = t.grad_buf(b);
            for (size_t i = 0; i < gb.data.size(); ++i)
                gb.data[i] += self.grad.data[i] * ta2.data[i];
        }
    };
    return v;
}

Var Tape::scale(Var x, double s) {
    Tensor out(value(x).shape);
    const Tensor& tx = value(x);
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = tx.data[i] * s;
    Var v = make(std::move(out), needs(x));
    if (!node(v).requires_grad) return v;
    node(v).back = [x, s](Tape& t, Node& self) {
        Tensor& gx = t.grad_buf(x);
        for (size_t i = 0; i < gx.data.size(); ++i) gx.data[i] += self.grad.data[i] * s;
    };
    return v;
}

Var Tape::relu(Var x) {
    const Tensor& tx = value(x);
    Tensor out(tx.shape);
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = tx.data[i] > 0.0 ? tx.data[i] : 0.0;
    Var v = make(std::move(out), needs(x));
    if (!node(v).requires_grad) return v;
    node(v).back = [x](Tape& t, Node& self) {
        const Tensor& tx2 = t.value(x);
        Tensor& gx = t.grad_buf(x);
        for (size_t i = 0; i < gx.data.size(); ++i)
            if (tx2.data[i] > 0.0) gx.data[i] += self.grad.data[i];
    };
    return v;
}

Var Tape::clamp_min(Var x, double lo) {
    const Tensor& tx = value(x);
    Tensor out(tx.shape);
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = std::max(tx.data[i], lo);
    Var v = make(std::move(out), needs(x));
    if (!node(v).requires_grad) return v;
    node(v).back = [x, lo](Tape& t, Node& self) {
        const Tensor& tx2 = t.value(x);
        Tensor& gx = t.grad_buf(x);
        for (size_t i = 0; i < gx.data.size(); ++i)
            if (tx2.data[i] > lo) gx.data[i] += self.grad.data[i];
    };
    return v;
}

// ---------------------------------------------------------------------------
// [B,C,H,W] (+) [B,C] broadcast family

namespace {
void check_channel_shapes(const Tensor& x, const Tensor& s, const char* op) {
    if (x.rank() != 4 || s.rank() != 2 || x.dim(0) != s.dim(0) || x.dim(1) != s.dim(1))
        throw std::invalid_argument(std::string(op) + ": expected [B,C,H,W] and [B,C]");
}
}  // namespace

Var Tape::add_channels(Var x, Var s) {
    const Tensor& tx = value(x);
    const Tensor& ts = value(s);
    check_channel_shapes(tx, ts, "add_channels");
    const int64_t S = tx.dim(2) * static_cast<int64_t>(tx.dim(3));
    Tensor out(tx.shape);
    for (int64_t bc = 0; bc < ts.numel(); ++bc)
        for (int64_t i = 0; i < S; ++i) out.data[bc * S + i] = tx.data[bc * S + i] + ts.data[bc];
    Var v = make(std::move(out), needs(x) || needs(s));
    if (!node(v).requires_grad) return v;
    node(v).back = [x, s, S](Tape& t, Node& self) {
        if (t.needs(x)) {
            Tensor& gx = t.grad_buf(x);
            for (size_t i = 0; i < gx.data.size(); ++i) gx.data[i] += self.grad.data[i];
        }
        if (t.needs(s)) {
            Tensor& gs = t.grad_buf(s);
            for (int64_t bc = 0; bc < gs.numel(); ++bc) {
                double acc = 0.0;
                for (int64_t i = 0; i < S; ++i) acc += self.grad.data[bc * S + i];
                gs.data[bc] += acc;
            }
        }
    };
    return v;
}

Var Tape::sub_channels(Var x, Var s) {
    const Tensor& tx = value(x);
    const Tensor& ts = value(s);
    check_channel_shapes(tx, ts, "sub_channels");
    const int64_t S = tx.dim(2) * static_cast<int64_t>(tx.dim(3));
    Tensor out(tx.shape);
    for (int64_t bc = 0; bc < ts.numel(); ++bc)
        for (int64_t i = 0; i < S; ++i) out.data[bc * S + i] = tx.data[bc * S + i] - ts.data[bc];
    Var v = make(std::move(out), needs(x) || needs(s));
    if (!node(v).requires_grad) return v;
    node(v).back = [x, s, S](Tape& t, Node& self) {
        if (t.needs(x)) {
            Tensor& gx = t.grad_buf(x);
            for (size_t i = 0; i < gx.data.size(); ++i) gx.data[i] += self.grad.data[i];
        }
        if (t.needs(s)) {
            Tensor& gs = t.grad_buf(s);
            for (int64_t bc = 0; bc < gs.numel(); ++bc) {
                double acc = 0.0;
                for (int64_t i = 0; i < S; ++i) acc += self.grad.data[bc * S + i];
                gs.data[bc] -= acc;
            }
        }
    };
    return v;
}

Var Tape::mul_channels(Var x, Var s) {
    const Tensor& tx = value(x);
    const Tensor& ts = value(s);
    check_channel_shapes(tx, ts, "mul_channels");
    const int64_t S = tx.dim(2) * static_cast<int64_t>(tx.dim(3));
    Tensor out(tx.shape);
    for (int64_t bc = 0; bc < ts.numel(); ++bc)
        for (int64_t i = 0; i < S; ++i) out.data[bc * S + i] = tx.data[bc * S + i] * ts.data[bc];
    Var v = make(std::move(out), needs(x) || needs(s));
    if (!node(v).requires_grad) return v;
    node(v).back = [x, s, S](Tape& t, Node& self) {
        const Tensor& tx2 = t.value(x);
        const Tensor& ts2 = t.value(s);
        if (t.needs(x)) {
            Tensor& gx = t.grad_buf(x);
            for (int64_t bc = 0; bc < ts2.numel(); ++bc)
                for (int64_t i = 0; i < S; ++i)
                    gx.data[bc * S + i] += self.grad.data[bc * S + i] * ts2.data[bc];
        }
        if (t.needs(s)) {
            Tensor& gs = t.grad_buf(s);
            for (int64_t bc = 0; bc < gs.numel(); ++bc) {
                double acc = 0.0;
                for (int64_t i = 0; i < S; ++i)
                    acc += self.grad.data[bc * S + i] * tx2.data[bc * S + i];
                gs.data[bc] += acc;
            }
        }
    };
    return v;
}

Var Tape::div_channels(Var x, Var s) {
    const Tensor& tx = value(x);
    const Tensor& ts = value(s);
    check_channel_shapes(tx, ts, "div_channels");
    const int64_t S = tx.dim(2) * static_cast<int64_t>(tx.dim(3));
    Tensor out(tx.shape);
    for (int64_t bc = 0; bc < ts.numel(); ++bc)
        for (int64_t i = 0; i < S; ++i) out.data[bc * S + i] = tx.data[bc * S + i] / ts.data[bc];
    Var v = make(std::move(out), needs(x) || needs(s));
    if (!node(v).requires_grad) return v;
    node(v).back = [x, s, S](Tape& t, Node& self) {
        const Tensor& tx2 = t.value(x);
        const Tensor& ts2 = t.value(s);
        if (t.needs(x)) {
            Tensor& gx = t.grad_buf(x);
            for (int64_t bc = 0; bc < ts2.numel(); ++bc)
                for (int64_t i = 0; i < S; ++i)
                    gx.data[bc * S + i] += self.grad.data[bc * S + i] / ts2.data[bc];
        }
        if (t.needs(s)) {
            Tensor& gs = t.grad_buf(s);
            for (int64_t bc = 0; bc < gs.numel(); ++bc) {
                double inv2 = 1.0 / (ts2.data[bc] * ts2.data[bc]);
                double acc = 0.0;
                for (int64_t i = 0; i < S; ++i)
                    acc += self.grad.data[bc * S + i] * tx2.data[bc * S + i];
                gs.data[bc] -= acc * inv2;
            }
        }
    };
    return v;
}

Var Tape::spatial_mean(Var x) {
    const Tensor& tx = value(x);
    if (tx.rank() != 4) throw std::invalid_argument("spatial_mean: expected [B,C,H,W]");
    const int64_t S = tx.dim(2) * static_cast<int64_t>(tx.dim(3));
    Tensor out({tx.dim(0), tx.dim(1)});
    for (int64_t bc = 0; bc < out.numel(); ++bc) {
        double acc = 0.0;
        for (int64_t i = 0; i < S; ++i) acc += tx.data[bc * S + i];
        out.data[bc] = acc / static_cast<double>(S);
    }
    Var v = make(std::move(out), needs(x));
    if (!node(v).requires_grad) return v;
    node(v).back = [x, S](Tape& t, Node& self) {
        Tensor& gx = t.grad_buf(x);
        const double inv = 1.0 / static_cast<double>(S);
        for (int64_t bc = 0; bc < self.grad.numel(); ++bc)
            for (int64_t i = 0; i < S; ++i) gx.data[bc * S + i] += self.grad.data[bc] * inv;
    };
    return v;
}

Var Tape::spatial_std(Var x, Var mean) {
    const Tensor& tx = value(x);
    const Tensor& tm = value(mean);
    check_channel_shapes(tx, tm, "spatial_std");
    const int64_t S = tx.dim(2) * static_cast<int64_t>(tx.dim(3));
    Tensor out({tx.dim(0), tx.dim(1)});
    for (int64_t bc = 0; bc < out.numel(); ++bc) {
        double acc = 0.0;
        for (int64_t i = 0; i < S; ++i) {
            double d = tx.data[bc * S + i] - tm.data[bc];
            acc += d * d;
        }
        out.data[bc] = std::sqrt(acc / static_cast<double>(S));
    }
    Var v = make(std::move(out), needs(x) || needs(mean));
    if (!node(v).requires_grad) return v;
    // d(sigma)/dx = (x - mu) / (S * sigma); denominator floored so constant
    // maps (sigma = 0) back-propagate zeros instead of NaN.
    node(v).back = [x, mean, S](Tape& t, Node& self) {
        const Tensor& tx2 = t.value(x);
        const Tensor& tm2 = t.value(mean);
        const Tensor& sig = self.val;
        if (t.needs(x)) {
            Tensor& gx = t.grad_buf(x);
            for (int64_t bc = 0; bc < sig.numel(); ++bc) {
                double denom = static_cast<double>(S) * std::max(sig.data[bc], 1e-12);
                double g = self.grad.data[bc] / denom;
                for (int64_t i = 0; i < S; ++i)
                    gx.data[bc * S + i] += g * (tx2.data[bc * S + i] - tm2.data[bc]);
            }
        }
        if (t.needs(mean)) {
            Tensor& gm = t.grad_buf(mean);
            for (int64_t bc = 0; bc < sig.numel(); ++bc) {
                double denom = static_cast<double>(S) * std::max(sig.data[bc], 1e-12);
                double acc = 0.0;
                for (int64_t i = 0; i < S; ++i) acc += tx2.data[bc * S + i] - tm2.data[bc];
                gm.data[bc] -= self.grad.data[bc] * acc / denom;
            }
        }
    };
    return v;
}

// ---------------------------------------------------------------------------
// shape ops

Var Tape::slice_rows(Var x, int h0, int h1) {
    const Tensor& tx = value(x);
    if (tx.rank() != 4) throw std::invalid_argument("slice_rows: expected [B,C,H,W]");
    if (h0 < 0 || h1 > tx.dim(2) || h0 >= h1) throw std::invalid_argument("slice_rows: bad range");
    const int B = tx.dim(0), C = tx.dim(1), H = tx.dim(2), W = tx.dim(3);
    Tensor out({B, C, h1 - h0, W});
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c)
            for (int h = h0; h < h1; ++h)
                for (int w = 0; w < W; ++w) out.at4(b, c, h - h0, w) = tx.at4(b, c, h, w);
    Var v = make(std::move(out), needs(x));
    if (!node(v).requires_grad) return v;
    node(v).back = [x, h0, h1, B, C, H, W](Tape& t, Node& self) {
        (void)H;
        Tensor& gx = t.grad_buf(x);
        for (int b = 0; b < B; ++b)
            for (int c = 0; c < C; ++c)
                for (int h = h0; h < h1; ++h)
                    for (int w = 0; w < W; ++w)
                        gx.at4(b, c, h, w) += self.grad.at4(b, c, h - h0, w);
    };
    return v;
}

Var Tape::concat_rows(const std::vector<Var>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_rows: no parts");
    const Tensor& t0 = value(parts[0]);
    if (t0.rank() != 4) throw std::invalid_argument("concat_rows: expected [B,C,H,W]");
    const int B = t0.dim(0), C = t0.dim(1), W = t0.dim(3);
    int H = 0;
    bool rg = false;
    for (Var p : parts) {
        const Tensor& tp = value(p);
        if (tp.dim(0) != B || tp.dim(1) != C || tp.dim(3) != W)
            throw std::invalid_argument("concat_rows: shape mismatch");
        H += tp.dim(2);
        rg = rg || needs(p);
    }
    Tensor out({B, C, H, W});
    int off = 0;
    for (Var p : parts) {
        const Tensor& tp = value(p);
        for (int b = 0; b < B; ++b)
            for (int c = 0; c < C; ++c)
                for (int h = 0; h < tp.dim(2); ++h)
                    for (int w = 0; w < W; ++w) out.at4(b, c, off + h, w) = tp.at4(b, c, h, w);
        off += tp.dim(2);
    }
    Var v = make(std::move(out), rg);
    if (!rg) return v;
    std::vector<Var> ps = parts;
    node(v).back = [ps, B, C, W](Tape& t, Node& self) {
        int off2 = 0;
        for (Var p : ps) {
            const int hp = t.value(p).dim(2);
            if (t.needs(p)) {
                Tensor& gp = t.grad_buf(p);
                for (int b = 0; b < B; ++b)
                    for (int c = 0; c < C; ++c)
                        for (int h = 0; h < hp; ++h)
                            for (int w = 0; w < W; ++w)
                                gp.at4(b, c, h, w) += self.grad.at4(b, c, off2 + h, w);
            }
            off2 += hp;
        }
    };
    return v;
}

Var Tape::gather_batch(Var x, std::vector<int> idx) {
    const Tensor& tx = value(x);
    if (tx.rank() < 1) throw std::invalid_argument("gather_batch: rank 0");
    const int B = tx.dim(0);
    const int64_t row = tx.numel() / B;
    for (int i : idx)
        if (i < 0 || i >= B) throw std::invalid_argument("gather_batch: index out of range");
    std::vector<int> oshape = tx.shape;
    oshape[0] = static_cast<int>(idx.size());
    Tensor out(oshape);
    for (size_t r = 0; r < idx.size(); ++r)
        for (int64_t j = 0; j < row; ++j) out.data[r * row + j] = tx.data[idx[r] * row + j];
    Var v = make(std::move(out), needs(x));
    if (!node(v).requires_grad) return v;
    node(v).back = [x, idx, row](Tape& t, Node& self) {
        Tensor& gx = t.grad_buf(x);
        for (size_t r = 0; r < idx.size(); ++r)
            for (int64_t j = 0; j < row; ++j)
                gx.data[idx[r] * row + j] += self.grad.data[r * row + j];
    };
    return v;
}

Var Tape::mix_batch(std::vector<char> take_a, Var a, Var b) {
    const Tensor& ta = value(a);
    const Tensor& tb = value(b);
    if (!ta.same_shape(tb)) throw std::invalid_argument("mix_batch: shape mismatch");
    const int B = ta.dim(0);
    if (static_cast<int>(take_a.size()) != B) throw std::invalid_argument("mix_batch: mask size");
    const int64_t row = ta.numel() / B;
    Tensor out(ta.shape);
    for (int r = 0; r < B; ++r) {
        const Tensor& src = take_a[static_cast<size_t>(r)] ? ta : tb;
        for (int64_t j = 0; j < row; ++j) out.data[r * row + j] = src.data[r * row + j];
    }
    Var v = make(std::move(out), needs(a) || needs(b));
    if (!node(v).requires_grad) return v;
    node(v).back = [take_a, a, b, B, row](Tape& t, Node& self) {
        for (int r = 0; r < B; ++r) {
            Var dst = take_a[static_cast<size_t>(r)] ? a : b;
            if (!t.needs(dst)) continue;
            Tensor& g = t.grad_buf(dst);
            for (int64_t j = 0; j < row; ++j) g.data[r * row + j] += self.grad.data[r * row + j];
        }
    };
    return v;
}

// ---------------------------------------------------------------------------
// layers

Var Tape::conv2d(Var x, Var w, Var b, int stride, int pad) {
    const Tensor& tx = value(x);
    const Tensor& tw = value(w);
    const Tensor& tb = value(b);
    if (tx.rank() != 4 || tw.rank() != 4) throw std::invalid_argument("conv2d: rank");
    const int B = tx.dim(0), Cin = tx.dim(1), H = tx.dim(2), W = tx.dim(3);
    const int Cout = tw.dim(0), KH = tw.dim(2), KW = tw.dim(3);
    if (tw.dim(1) != Cin || tb.numel() != Cout) throw std::invalid_argument("conv2d: channels");
    const int Ho = (H + 2 * pad - KH) / stride + 1;
    const int Wo = (W + 2 * pad - KW) / stride + 1;
    if (Ho <= 0 || Wo <= 0) throw std::invalid_argument("conv2d: output collapsed");

    Tensor out({B, Cout, Ho, Wo});
    parallel_chunks(B, [&](int, int n_lo, int n_hi) {
        for (int n = n_lo; n < n_hi; ++n) {
            for (int co = 0; co < Cout; ++co) {
                const double* wp = &tw.data[static_cast<size_t>(co) * Cin * KH * KW];
                for (int ho = 0; ho < Ho; ++ho) {
                    for (int wo = 0; wo < Wo; ++wo) {
                        double acc = tb.data[static_cast<size_t>(co)];
                        for (int ci = 0; ci < Cin; ++ci) {
                            const double* xp =
                                &tx.data[((static_cast<size_t>(n) * Cin + ci) * H) * W];
                            const double* wpc = wp + static_cast<size_t>(ci) * KH * KW;
                            for (int kh = 0; kh < KH; ++kh) {
                                const int hi = ho * stride - pad + kh;
                                if (hi < 0 || hi >= H) continue;
                                for (int kw = 0; kw < KW; ++kw) {
                                    const int wi = wo * stride - pad + kw;
                                    if (wi < 0 || wi >= W) continue;
                                    acc += xp[hi * W + wi] * wpc[kh * KW + kw];
                                }
                            }
                        }
                        out.at4(n, co, ho, wo) = acc;
                    }
                }
            }
        }
    });
    Var v = make(std::move(out), needs(x) || needs(w) || needs(b));
    if (!node(v).requires_grad) return v;
    node(v).back = [x, w, b, stride, pad, B, Cin, H, W, Cout, KH, KW, Ho, Wo](Tape& t,
                                                                              Node& self) {
        const Tensor& tx2 = t.value(x);
        const Tensor& tw2 = t.value(w);
        const bool nx = t.needs(x), nw = t.needs(w), nb = t.needs(b);
        Tensor* gx = nx ? &t.grad_buf(x) : nullptr;
        Tensor* gw = nw ? &t.grad_buf(w) : nullptr;
        Tensor* gb = nb ? &t.grad_buf(b) : nullptr;
        // gx rows are per-sample disjoint; gw/gb go through per-worker buffers
        // reduced in worker order so results stay bit-stable
        std::vector<Tensor> gw_part(4), gb_part(4);
        parallel_chunks(B, [&](int worker, int n_lo, int n_hi) {
            Tensor* gwp = nullptr;
            Tensor* gbp = nullptr;
            if (gw) {
                gw_part[static_cast<size_t>(worker)] = Tensor(tw2.shape);
                gwp = &gw_part[static_cast<size_t>(worker)];
            }
            if (gb) {
                gb_part[static_cast<size_t>(worker)] = Tensor({Cout});
                gbp = &gb_part[static_cast<size_t>(worker)];
            }
            for (int n = n_lo; n < n_hi; ++n) {
                for (int co = 0; co < Cout; ++co) {
                    for (int ho = 0; ho < Ho; ++ho) {
                        for (int wo = 0; wo < Wo; ++wo) {
                            const double gy = self.grad.at4(n, co, ho, wo);
                            if (gy == 0.0) continue;
                            if (gbp) gbp->data[static_cast<size_t>(co)] += gy;
                            for (int ci = 0; ci < Cin; ++ci) {
                                for (int kh = 0; kh < KH; ++kh) {
                                    const int hi = ho * stride - pad + kh;
                                    if (hi < 0 || hi >= H) continue;
                                    for (int kw = 0; kw < KW; ++kw) {
                                        const int wi = wo * stride - pad + kw;
                                        if (wi < 0 || wi >= W) continue;
                                        if (gx)
                                            gx->at4(n, ci, hi, wi) += gy * tw2.at4(co, ci, kh, kw);
                                        if (gwp)
                                            gwp->at4(co, ci, kh, kw) += gy * tx2.at4(n, ci, hi, wi);
                                    }
                                }
                            }
                        }
                    }
                }
            }
        });
        for (const Tensor& part : gw_part)
            if (gw && !part.data.empty())
                for (size_t i = 0; i < gw->data.size(); ++i) gw->data[i] += part.data[i];
        for (const Tensor& part : gb_part)
            if (gb && !part.data.empty())
                for (size_t i = 0; i < gb->data.size(); ++i) gb->data[i] += part.data[i];
    };
    return v;
}

Var Tape::instance_norm(Var x, Var gamma, Var beta, double eps) {
    const Tensor& tx = value(x);
    const Tensor& tg = value(gamma);
    const Tensor& tbta = value(beta);
    if (tx.rank() != 4) throw std::invalid_argument("instance_norm: expected [B,C,H,W]");
    const int B = tx.dim(0), C = tx.dim(1);
    const int64_t S = tx.dim(2) * static_cast<int64_t>(tx.dim(3));
    if (tg.numel() != C || tbta.numel() != C)
        throw std::invalid_argument("instance_norm: affine size");

    Tensor out(tx.shape);
    Tensor xhat(tx.shape);
    std::vector<double> invstd(static_cast<size_t>(B) * C);
    for (int64_t bc = 0; bc < static_cast<int64_t>(B) * C; ++bc) {
        const double* xp = &tx.data[bc * S];
        double mean = 0.0;
        for (int64_t i = 0; i < S; ++i) mean += xp[i];
        mean /= static_cast<double>(S);
        double var = 0.0;
        for (int64_t i = 0; i < S; ++i) {
            double d = xp[i] - mean;
            var += d * d;
        }
        var /= static_cast<double>(S);
        const double is = 1.0 / std::sqrt(var + eps);
        invstd[static_cast<size_t>(bc)] = is;
        const int c = static_cast<int>(bc % C);
        const double g = tg.data[static_cast<size_t>(c)], bt = tbta.data[static_cast<size_t>(c)];
        for (int64_t i = 0; i < S; ++i) {
            double xh = (xp[i] - mean) * is;
            xhat.data[bc * S + i] = xh;
            out.data[bc * S + i] = g * xh + bt;
        }
    }
    Var v = make(std::move(out), needs(x) || needs(gamma) || needs(beta));
    if (!node(v).requires_grad) return v;
    node(v).back = [x, gamma, beta, B, C, S, xhat, invstd](Tape& t, Node& self) {
        const Tensor& tg2 = t.value(gamma);
        const bool nx = t.needs(x), ng = t.needs(gamma), nb = t.needs(beta);
        Tensor* gx = nx ? &t.grad_buf(x) : nullptr;
        Tensor* gg = ng ? &t.grad_buf(gamma) : nullptr;
        Tensor* gb = nb ? &t.grad_buf(beta) : nullptr;
        for (int64_t bc = 0; bc < static_cast<int64_t>(B) * C; ++bc) {
            const int c = static_cast<int>(bc % C);
            const double* gyp = &self.grad.data[bc * S];
            const double* xhp = &xhat.data[bc * S];
            double sum_gy = 0.0, sum_gy_xh = 0.0;
            for (int64_t i = 0; i < S; ++i) {
                sum_gy += gyp[i];
                sum_gy_xh += gyp[i] * xhp[i];
            }
            if (gg) gg->data[static_cast<size_t>(c)] += sum_gy_xh;
            if (gb) gb->data[static_cast<size_t>(c)] += sum_gy;
            if (gx) {
                const double g = tg2.data[static_cast<size_t>(c)];
                const double is = invstd[static_cast<size_t>(bc)];
                const double mean_gy = sum_gy / static_cast<double>(S);
                const double mean_gy_xh = sum_gy_xh / static_cast<double>(S);
                double* gxp = &gx->data[bc * S];
                for (int64_t i = 0; i < S; ++i)
                    gxp[i] += g * is * (gyp[i] - mean_gy - xhp[i] * mean_gy_xh);
            }
        }
    };
    return v;
}

Var Tape::global_max_pool(Var x) {
    const Tensor& tx = value(x);
    if (tx.rank() != 4) throw std::invalid_argument("global_max_pool: expected [B,C,H,W]");
    const int64_t S = tx.dim(2) * static_cast<int64_t>(tx.dim(3));
    Tensor out({tx.dim(0), tx.dim(1)});
    std::vector<int64_t> argmax(static_cast<size_t>(out.numel()));
    for (int64_t bc = 0; bc < out.numel(); ++bc) {
        const double* xp = &tx.data[bc * S];
        int64_t best = 0;
        for (int64_t i = 1; i < S; ++i)
            if (xp[i] > xp[best]) best = i;
        argmax[static_cast<size_t>(bc)] = best;
        out.data[bc] = xp[best];
    }
    Var v = make(std::move(out), needs(x));
    if (!node(v).requires_grad) return v;
    node(v).back = [x, S, argmax](Tape& t, Node& self) {
        Tensor& gx = t.grad_buf(x);
        for (int64_t bc = 0; bc < self.grad.numel(); ++bc)
            gx.data[bc * S + argmax[static_cast<size_t>(bc)]] += self.grad.data[bc];
    };
    return v;
}

Var Tape::linear(Var x, Var w, Var b) {
    const Tensor& tx = value(x);
    const Tensor& tw = value(w);
    const Tensor& tb = value(b);
    if (tx.rank() != 2 || tw.rank() != 2 || tx.dim(1) != tw.dim(1) || tb.numel() != tw.dim(0))
        throw std::invalid_argument("linear: shapes");
    const int B = tx.dim(0), C = tx.dim(1), K = tw.dim(0);
    Tensor out({B, K});
    for (int n = 0; n < B; ++n)
        for (int k = 0; k < K; ++k) {
            double acc = tb.data[static_cast<size_t>(k)];
            for (int c = 0; c < C; ++c) acc += tx.at2(n, c) * tw.at2(k, c);
            out.at2(n, k) = acc;
        }
    Var v = make(std::move(out), needs(x) || needs(w) || needs(b));
    if (!node(v).requires_grad) return v;
    node(v).back = [x, w, b, B, C, K](Tape& t, Node& self) {
        const Tensor& tx2 = t.value(x);
        const Tensor& tw2 = t.value(w);
        if (t.needs(x)) {
            Tensor& gx = t.grad_buf(x);
            for (int n = 0; n < B; ++n)
                for (int k = 0; k < K; ++k) {
                    const double gy = self.grad.at2(n, k);
                    for (int c = 0; c < C; ++c) gx.at2(n, c) += gy * tw2.at2(k, c);
                }
        }
        if (t.needs(w)) {
            Tensor& gw = t.grad_buf(w);
            for (int n = 0; n < B; ++n)
                for (int k = 0; k < K; ++k) {
                    const double gy = self.grad.at2(n, k);
                    for (int c = 0; c < C; ++c) gw.at2(k, c) += gy * tx2.at2(n, c);
                }
        }
        if (t.needs(b)) {
            Tensor& gb = t.grad_buf(b);
            for (int n = 0; n < B; ++n)
                for (int k = 0; k < K; ++k) gb.data[static_cast<size_t>(k)] += self.grad.at2(n, k);
        }
    };
    return v;
}

Var Tape::matmul_nt(Var x, Var w) {
    Tensor zero({value(w).dim(0)});
    return linear(x, w, constant(std::move(zero)));
}

Var Tape::l2_normalize_rows(Var x, double eps) {
    const Tensor& tx = value(x);
    if (tx.rank() != 2) throw std::invalid_argument("l2_normalize_rows: expected [B,C]");
    const int B = tx.dim(0), C = tx.dim(1);
    Tensor out(tx.shape);
    std::vector<double> norms(static_cast<size_t>(B));
    for (int n = 0; n < B; ++n) {
        double s = 0.0;
        for (int c = 0; c < C; ++c) s += tx.at2(n, c) * tx.at2(n, c);
        const double nn = std::sqrt(s);
        norms[static_cast<size_t>(n)] = nn;
        const double d = std::max(nn, eps);
        for (int c = 0; c < C; ++c) out.at2(n, c) = tx.at2(n, c) / d;
    }
    Var v = make(std::move(out), needs(x));
    if (!node(v).requires_grad) return v;
    node(v).back = [x, eps, B, C, norms](Tape& t, Node& self) {
        Tensor& gx = t.grad_buf(x);
        const Tensor& ty = self.val;
        for (int n = 0; n < B; ++n) {
            const double nn = norms[static_cast<size_t>(n)];
            if (nn > eps) {
                double ydg = 0.0;
                for (int c = 0; c < C; ++c) ydg += ty.at2(n, c) * self.grad.at2(n, c);
                for (int c = 0; c < C; ++c)
                    gx.at2(n, c) += (self.grad.at2(n, c) - ty.at2(n, c) * ydg) / nn;
            } else {
                for (int c = 0; c < C; ++c) gx.at2(n, c) += self.grad.at2(n, c) / eps;
            }
        }
    };
    return v;
}

Var Tape::weighted_sum(Var x, Tensor w) {
    const Tensor& tx = value(x);
    if (tx.numel() != w.numel()) throw std::invalid_argument("weighted_sum: size mismatch");
    double acc = 0.0;
    for (size_t i = 0; i < tx.data.size(); ++i) acc += tx.data[i] * w.data[i];
    Var v = make(Tensor({1}, {acc}), needs(x));
    if (!node(v).requires_grad) return v;
    node(v).back = [x, w](Tape& t, Node& self) {
        Tensor& gx = t.grad_buf(x);
        for (size_t i = 0; i < gx.data.size(); ++i) gx.data[i] += self.grad.data[0] * w.data[i];
    };
    return v;
}

// ---------------------------------------------------------------------------
// losses

Var Tape::softmax_cross_entropy(Var logits, Tensor target_weights) {
    const Tensor& tl = value(logits);
    if (tl.rank() != 2 || !tl.same_shape(target_weights))
        throw std::invalid_argument("softmax_cross_entropy: shapes");
    const int B = tl.dim(0), K = tl.dim(1);
    Tensor probs(tl.shape);
    double loss = 0.0;
    for (int n = 0; n < B; ++n) {
        double mx = tl.at2(n, 0);
        for (int k = 1; k < K; ++k) mx = std::max(mx, tl.at2(n, k));
        double z = 0.0;
        for (int k = 0; k < K; ++k) z += std::exp(tl.at2(n, k) - mx);
        const double logz = std::log(z) + mx;
        for (int k = 0; k < K; ++k) {
            const double logp = tl.at2(n, k) - logz;
            probs.at2(n, k) = std::exp(logp);
            loss -= target_weights.at2(n, k) * logp;
        }
    }
    loss /= static_cast<double>(B);
    Var v = make(Tensor({1}, {loss}), needs(logits));
    if (!node(v).requires_grad) return v;
    node(v).back = [logits, target_weights, probs, B, K](Tape& t, Node& self) {
        Tensor& gl = t.grad_buf(logits);
        const double gy = self.grad.data[0] / static_cast<double>(B);
        for (int n = 0; n < B; ++n) {
            double wsum = 0.0;
            for (int k = 0; k < K; ++k) wsum += target_weights.at2(n, k);
            for (int k = 0; k < K; ++k)
                gl.at2(n, k) += gy * (probs.at2(n, k) * wsum - target_weights.at2(n, k));
        }
    };
    return v;
}

Var Tape::triplet_batch_hard(Var emb, const std::vector<int>& ids, double margin) {
    const Tensor& te = value(emb);
    if (te.rank() != 2 || static_cast<int>(ids.size()) != te.dim(0))
        throw std::invalid_argument("triplet_batch_hard: shapes");
    const int B = te.dim(0), C = te.dim(1);

    std::vector<double> dist(static_cast<size_t>(B) * B, 0.0);
    for (int i = 0; i < B; ++i)
        for (int j = i + 1; j < B; ++j) {
            double s = 0.0;
            for (int c = 0; c < C; ++c) {
                double d = te.at2(i, c) - te.at2(j, c);
                s += d * d;
            }
            dist[static_cast<size_t>(i) * B + j] = dist[static_cast<size_t>(j) * B + i] =
                std::sqrt(s);
        }

    std::vector<int> hard_pos(static_cast<size_t>(B), -1), hard_neg(static_cast<size_t>(B), -1);
    double loss = 0.0;
    std::vector<double> hinge(static_cast<size_t>(B), 0.0);
    for (int i = 0; i < B; ++i) {
        double dp = -1.0, dn = -1.0;
        for (int j = 0; j < B; ++j) {
            if (j == i) continue;
            const double d = dist[static_cast<size_t>(i) * B + j];
            if (ids[static_cast<size_t>(j)] == ids[static_cast<size_t>(i)]) {
                if (d > dp) {
                    dp = d;
                    hard_pos[static_cast<size_t>(i)] = j;
                }
            } else {
                if (dn < 0.0 || d < dn) {
                    dn = d;
                    hard_neg[static_cast<size_t>(i)] = j;
                }
            }
        }
        if (hard_pos[static_cast<size_t>(i)] < 0 || hard_neg[static_cast<size_t>(i)] < 0)
            throw std::invalid_argument(
                "triplet_batch_hard: batch must contain >=2 identities and >=2 samples of the "
                "anchor's identity (PK sampler contract)");
        hinge[static_cast<size_t>(i)] = std::max(0.0, dp - dn + margin);
        loss += hinge[static_cast<size_t>(i)];
    }
    loss /= static_cast<double>(B);
    Var v = make(Tensor({1}, {loss}), needs(emb));
    if (!node(v).requires_grad) return v;
    node(v).back = [emb, B, C, dist, hard_pos, hard_neg, hinge](Tape& t, Node& self) {
        const Tensor& te2 = t.value(emb);
        Tensor& ge = t.grad_buf(emb);
        const double gy = self.grad.data[0] / static_cast<double>(B);
        auto add_pair = [&](int i, int j, double sgn) {
            const double d = dist[static_cast<size_t>(i) * B + j];
            if (d <= 0.0) return;  // coincident points: zero subgradient
            const double f = sgn * gy / d;
            for (int c = 0; c < C; ++c) {
                const double diff = te2.at2(i, c) - te2.at2(j, c);
                ge.at2(i, c) += f * diff;
                ge.at2(j, c) -= f * diff;
            }
        };
        for (int i = 0; i < B; ++i) {
            if (hinge[static_cast<size_t>(i)] <= 0.0) continue;
            add_pair(i, hard_pos[static_cast<size_t>(i)], 1.0);
            add_pair(i, hard_neg[static_cast<size_t>(i)], -1.0);
        }
    };
    return v;
}

}  // namespace fire2
