#include "dstlab/autodiff.hpp"

#include <cmath>
#include <cstring>

#include "dstlab/errors.hpp"

namespace dstlab::numeric {

namespace {

// Fixed-order four-lane dot product: deterministic reassociation that the
// auto-vectorizer can use.
inline double dot4(const double* a, const double* b, int n) {
    double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
    int i = 0;
    for (; i + 4 <= n; i += 4) {
        s0 += a[i] * b[i];
        s1 += a[i + 1] * b[i + 1];
        s2 += a[i + 2] * b[i + 2];
        s3 += a[i + 3] * b[i + 3];
    }
    double tail = 0.0;
    for (; i < n; ++i) tail += a[i] * b[i];
    return ((s0 + s1) + (s2 + s3)) + tail;
}

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;
// Keeps the L2-distance gradient finite when a slot vector lands exactly on a
// candidate vector.
constexpr double kDistEps = 1e-24;
}  // namespace

void Tape::clear() { nodes_.clear(); }

Tape::Id Tape::push(Node n) {
    nodes_.push_back(std::move(n));
    return static_cast<Id>(nodes_.size() - 1);
}

Tape::Id Tape::constant(Tensor v) {
    Node n;
    n.value = std::move(v);
    return push(std::move(n));
}

Tape::Id Tape::parameter(Parameter& p) {
    Node n;
    n.param = &p;
    n.needs_grad = p.trainable;
    if (p.trainable) {
        n.back = [](Tape& t, Id self) {
            Node& node = t.nodes_[self];
            const Tensor& g = node.grad;
            double* dst = node.param->grad.data.data();
            for (std::size_t i = 0; i < g.data.size(); ++i) dst[i] += g.data[i];
        };
    }
    return push(std::move(n));
}

const Tensor& Tape::value(Id id) const { return val(id); }

Tensor& Tape::grad(Id id) {
    Node& n = nodes_[id];
    if (n.grad.data.empty()) n.grad = Tensor::zeros(val(id).shape);
    return n.grad;
}

double Tape::scalar_value(Id id) const {
    const Tensor& v = val(id);
    if (!v.is_scalar()) throw ShapeError("scalar_value: node has shape " + v.shape_str());
    return v.data[0];
}

void Tape::accumulate(Id id, const double* g, std::int64_t n) {
    Tensor& dst = grad(id);
    for (std::int64_t i = 0; i < n; ++i) dst.data[i] += g[i];
}

Tape::Id Tape::add(Id a, Id b) {
    const Tensor& va = val(a);
    const Tensor& vb = val(b);
    if (!va.same_shape(vb)) throw ShapeError("add: " + va.shape_str() + " vs " + vb.shape_str());
    Node n;
    n.value = va;
    for (std::size_t i = 0; i < n.value.data.size(); ++i) n.value.data[i] += vb.data[i];
    n.needs_grad = nodes_[a].needs_grad || nodes_[b].needs_grad;
    if (n.needs_grad) {
        n.back = [a, b](Tape& t, Id self) {
            const Tensor& g = t.nodes_[self].grad;
            if (t.nodes_[a].needs_grad) t.accumulate(a, g.data.data(), g.numel());
            if (t.nodes_[b].needs_grad) t.accumulate(b, g.data.data(), g.numel());
        };
    }
    return push(std::move(n));
}

Tape::Id Tape::add_bias(Id x, Id b) {
    const Tensor& vx = val(x);
    const Tensor& vb = val(b);
    if (vx.rank() != 2 || vb.rank() != 1 || vb.shape[0] != vx.cols()) {
        throw ShapeError("add_bias: " + vx.shape_str() + " vs " + vb.shape_str());
    }
    int rows = vx.rows(), cols = vx.cols();
    Node n;
    n.value = vx;
    for (int i = 0; i < rows; ++i) {
        double* r = n.value.data.data() + static_cast<std::size_t>(i) * cols;
        for (int j = 0; j < cols; ++j) r[j] += vb.data[j];
    }
    n.needs_grad = nodes_[x].needs_grad || nodes_[b].needs_grad;
    if (n.needs_grad) {
        n.back = [x, b, rows, cols](Tape& t, Id self) {
            const Tensor& g = t.nodes_[self].grad;
            if (t.nodes_[x].needs_grad) t.accumulate(x, g.data.data(), g.numel());
            if (t.nodes_[b].needs_grad) {
                Tensor& db = t.grad(b);
                for (int i = 0; i < rows; ++i) {
                    const double* gr = g.data.data() + static_cast<std::size_t>(i) * cols;
                    for (int j = 0; j < cols; ++j) db.data[j] += gr[j];
                }
            }
        };
    }
    return push(std::move(n));
}

Tape::Id Tape::scale(Id a, double c) {
    Node n;
    n.value = val(a);
    for (double& x : n.value.data) x *= c;
    n.needs_grad = nodes_[a].needs_grad;
    if (n.needs_grad) {
        n.back = [a, c](Tape& t, Id self) {
            const Tensor& g = t.nodes_[self].grad;
            Tensor& da = t.grad(a);
            for (std::size_t i = 0; i < g.data.size(); ++i) da.data[i] += c * g.data[i];
        };
    }
    return push(std::move(n));
}

Tape::Id Tape::slice_rows(Id a, int r0, int r1) {
    const Tensor& va = val(a);
    if (va.rank() != 2 || r0 < 0 || r1 > va.rows() || r0 >= r1) {
        throw ShapeError("slice_rows: bad range on " + va.shape_str());
    }
    int cols = va.cols();
    Node n;
    n.value = Tensor::zeros({r1 - r0, cols});
    std::memcpy(n.value.data.data(), va.data.data() + static_cast<std::size_t>(r0) * cols,
                sizeof(double) * n.value.data.size());
    n.needs_grad = nodes_[a].needs_grad;
    if (n.needs_grad) {
        n.back = [a, r0, cols](Tape& t, Id self) {
            const Tensor& g = t.nodes_[self].grad;
            Tensor& da = t.grad(a);
            double* dst = da.data.data() + static_cast<std::size_t>(r0) * cols;
            for (std::size_t i = 0; i < g.data.size(); ++i) dst[i] += g.data[i];
        };
    }
    return push(std::move(n));
}

Tape::Id Tape::slice_cols(Id a, int c0, int c1) {
    const Tensor& va = val(a);
    if (va.rank() != 2 || c0 < 0 || c1 > va.cols() || c0 >= c1) {
        throw ShapeError("slice_cols: bad range on " + va.shape_str());
    }
    int rows = va.rows(), cols = va.cols(), w = c1 - c0;
    Node n;
    n.value = Tensor::zeros({rows, w});
    for (int i = 0; i < rows; ++i) {
        std::memcpy(n.value.data.data() + static_cast<std::size_t>(i) * w,
                    va.data.data() + static_cast<std::size_t>(i) * cols + c0, sizeof(double) * w);
    }
    n.needs_grad = nodes_[a].needs_grad;
    if (n.needs_grad) {
        n.back = [a, c0, rows, cols, w](Tape& t, Id self) {
            const Tensor& g = t.nodes_[self].grad;
            Tensor& da = t.grad(a);
            for (int i = 0; i < rows; ++i) {
                const double* gr = g.data.data() + static_cast<std::size_t>(i) * w;
                double* dr = da.data.data() + static_cast<std::size_t>(i) * cols + c0;
                for (int j = 0; j < w; ++j) dr[j] += gr[j];
            }
        };
    }
    return push(std::move(n));
}

Tape::Id Tape::concat_cols(const std::vector<Id>& parts) {
    if (parts.empty()) throw ShapeError("concat_cols: no parts");
    int rows = val(parts[0]).rows();
    int total = 0;
    bool needs = false;
    for (Id p : parts) {
        const Tensor& v = val(p);
        if (v.rank() != 2 || v.rows() != rows) throw ShapeError("concat_cols: row mismatch");
        total += v.cols();
        needs = needs || nodes_[p].needs_grad;
    }
    Node n;
    n.value = Tensor::zeros({rows, total});
    // aux layout: [n_parts, id_0, width_0, id_1, width_1, ...]
    n.aux = Tensor::zeros({1 + 2 * static_cast<int>(parts.size())});
    n.aux.data[0] = static_cast<double>(parts.size());
    int off = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
        const Tensor& v = val(parts[k]);
        int w = v.cols();
        for (int i = 0; i < rows; ++i) {
            std::memcpy(n.value.data.data() + static_cast<std::size_t>(i) * total + off,
                        v.data.data() + static_cast<std::size_t>(i) * w, sizeof(double) * w);
        }
        n.aux.data[1 + 2 * k] = static_cast<double>(parts[k]);
        n.aux.data[2 + 2 * k] = static_cast<double>(w);
        off += w;
    }
    n.needs_grad = needs;
    if (needs) {
        n.back = [rows, total](Tape& t, Id self) {
            const Tensor& g = t.nodes_[self].grad;
            const Tensor& aux = t.nodes_[self].aux;
            int n_parts = static_cast<int>(aux.data[0]);
            int off = 0;
            for (int k = 0; k < n_parts; ++k) {
                Id p = static_cast<Id>(aux.data[1 + 2 * k]);
                int w = static_cast<int>(aux.data[2 + 2 * k]);
                if (t.nodes_[p].needs_grad) {
                    Tensor& dp = t.grad(p);
                    for (int i = 0; i < rows; ++i) {
                        const double* gr = g.data.data() + static_cast<std::size_t>(i) * total + off;
                        double* dr = dp.data.data() + static_cast<std::size_t>(i) * w;
                        for (int j = 0; j < w; ++j) dr[j] += gr[j];
                    }
                }
                off += w;
            }
        };
    }
    return push(std::move(n));
}

Tape::Id Tape::matmul(Id a, Id b) {
    const Tensor& va = val(a);
    const Tensor& vb = val(b);
    if (va.rank() != 2 || vb.rank() != 2 || va.cols() != vb.rows()) {
        throw ShapeError("matmul: " + va.shape_str() + " @ " + vb.shape_str());
    }
    int m = va.rows(), k = va.cols(), n2 = vb.cols();
    Node n;
    n.value = Tensor::zeros({m, n2});
    for (int i = 0; i < m; ++i) {
        const double* ar = va.data.data() + static_cast<std::size_t>(i) * k;
        double* cr = n.value.data.data() + static_cast<std::size_t>(i) * n2;
        for (int p = 0; p < k; ++p) {
            double av = ar[p];
            const double* br = vb.data.data() + static_cast<std::size_t>(p) * n2;
            for (int j = 0; j < n2; ++j) cr[j] += av * br[j];
        }
    }
    n.needs_grad = nodes_[a].needs_grad || nodes_[b].needs_grad;
    if (n.needs_grad) {
        n.back = [a, b, m, k, n2](Tape& t, Id self) {
            const Tensor& g = t.nodes_[self].grad;
            const Tensor& va2 = t.val(a);
            const Tensor& vb2 = t.val(b);
            if (t.nodes_[a].needs_grad) {
                Tensor& da = t.grad(a);
                for (int i = 0; i < m; ++i) {
                    const double* gr = g.data.data() + static_cast<std::size_t>(i) * n2;
                    double* dr = da.data.data() + static_cast<std::size_t>(i) * k;
                    for (int p = 0; p < k; ++p) {
                        const double* br = vb2.data.data() + static_cast<std::size_t>(p) * n2;
                        dr[p] += dot4(gr, br, n2);
                    }
                }
            }
            if (t.nodes_[b].needs_grad) {
                Tensor& db = t.grad(b);
                for (int p = 0; p < k; ++p) {
                    double* dbr = db.data.data() + static_cast<std::size_t>(p) * n2;
                    for (int i = 0; i < m; ++i) {
                        double av = va2.data[static_cast<std::size_t>(i) * k + p];
                        const double* gr = g.data.data() + static_cast<std::size_t>(i) * n2;
                        for (int j = 0; j < n2; ++j) dbr[j] += av * gr[j];
                    }
                }
            }
        };
    }
    return push(std::move(n));
}

Tape::Id Tape::matmul_nt(Id a, Id b) {
    const Tensor& va = val(a);
    const Tensor& vb = val(b);
    if (va.rank() != 2 || vb.rank() != 2 || va.cols() != vb.cols()) {
        throw ShapeError("matmul_nt: " + va.shape_str() + " @ " + vb.shape_str() + "^T");
    }
    int m = va.rows(), k = va.cols(), n2 = vb.rows();
    Node n;
    n.value = Tensor::zeros({m, n2});
    for (int i = 0; i < m; ++i) {
        const double* ar = va.data.data() + static_cast<std::size_t>(i) * k;
        double* cr = n.value.data.data() + static_cast<std::size_t>(i) * n2;
        for (int j = 0; j < n2; ++j) {
            cr[j] = dot4(ar, vb.data.data() + static_cast<std::size_t>(j) * k, k);
        }
    }
    n.needs_grad = nodes_[a].needs_grad || nodes_[b].needs_grad;
    if (n.needs_grad) {
        n.back = [a, b, m, k, n2](Tape& t, Id self) {
            const Tensor& g = t.nodes_[self].grad;
            const Tensor& va2 = t.val(a);
            const Tensor& vb2 = t.val(b);
            if (t.nodes_[a].needs_grad) {
                Tensor& da = t.grad(a);
                for (int i = 0; i < m; ++i) {
                    const double* gr = g.data.data() + static_cast<std::size_t>(i) * n2;
                    double* dr = da.data.data() + static_cast<std::size_t>(i) * k;
                    for (int j = 0; j < n2; ++j) {
                        double gv = gr[j];
                        const double* br = vb2.data.data() + static_cast<std::size_t>(j) * k;
                        for (int p = 0; p < k; ++p) dr[p] += gv * br[p];
                    }
                }
            }
            if (t.nodes_[b].needs_grad) {
                Tensor& db = t.grad(b);
                for (int j = 0; j < n2; ++j) {
                    double* dbr = db.data.data() + static_cast<std::size_t>(j) * k;
                    for (int i = 0; i < m; ++i) {
                        double gv = g.data[static_cast<std::size_t>(i) * n2 + j];
                        const double* ar = va2.data.data() + static_cast<std::size_t>(i) * k;
                        for (int p = 0; p < k; ++p) dbr[p] += gv * ar[p];
                    }
                }
            }
        };
    }
    return push(std::move(n));
}

Tape::Id Tape::softmax_rows(Id a) {
    const Tensor& va = val(a);
    if (va.rank() != 2) throw ShapeError("softmax_rows: need rank 2, got " + va.shape_str());
    int rows = va.rows(), cols = va.cols();
    Node n;
    n.value = Tensor::zeros({rows, cols});
    for (int i = 0; i < rows; ++i) {
        const double* xr = va.data.data() + static_cast<std::size_t>(i) * cols;
        double* yr = n.value.data.data() + static_cast<std::size_t>(i) * cols;
        double mx = xr[0];
        for (int j = 1; j < cols; ++j) mx = std::max(mx, xr[j]);
        double sum = 0.0;
        for (int j = 0; j < cols; ++j) {
            yr[j] = std::exp(xr[j] - mx);
            sum += yr[j];
        }
        double inv = 1.0 / sum;
        for (int j = 0; j < cols; ++j) yr[j] *= inv;
    }
    n.needs_grad = nodes_[a].needs_grad;
    if (n.needs_grad) {
        n.back = [a, rows, cols](Tape& t, Id self) {
            const Tensor& g = t.nodes_[self].grad;
            const Tensor& y = t.nodes_[self].value;
            Tensor& da = t.grad(a);
            for (int i = 0; i < rows; ++i) {
                const double* gr = g.data.data() + static_cast<std::size_t>(i) * cols;
                const double* yr = y.data.data() + static_cast<std::size_t>(i) * cols;
                double* dr = da.data.data() + static_cast<std::size_t>(i) * cols;
                double dot = 0.0;
                for (int j = 0; j < cols; ++j) dot += gr[j] * yr[j];
                for (int j = 0; j < cols; ++j) dr[j] += yr[j] * (gr[j] - dot);
            }
        };
    }
    return push(std::move(n));
}

Tape::Id Tape::log_softmax_row(Id a) {
    const Tensor& va = val(a);
    if (va.rows() != 1 && va.rank() != 1) throw ShapeError("log_softmax_row: need a single row");
    int cols = va.cols();
    Node n;
    n.value = Tensor::zeros(va.shape);
    n.aux = Tensor::zeros(va.shape);  // softmax, for the backward pass
    double mx = va.data[0];
    for (int j = 1; j < cols; ++j) mx = std::max(mx, va.data[j]);
    double sum = 0.0;
    for (int j = 0; j < cols; ++j) sum += std::exp(va.data[j] - mx);
    double lse = mx + std::log(sum);
    for (int j = 0; j < cols; ++j) {
        n.value.data[j] = va.data[j] - lse;
        n.aux.data[j] = std::exp(n.value.data[j]);
    }
    n.needs_grad = nodes_[a].needs_grad;
    if (n.needs_grad) {
        n.back = [a, cols](Tape& t, Id self) {
            const Tensor& g = t.nodes_[self].grad;
            const Tensor& sm = t.nodes_[self].aux;
            Tensor& da = t.grad(a);
            double gsum = 0.0;
            for (int j = 0; j < cols; ++j) gsum += g.data[j];
            for (int j = 0; j < cols; ++j) da.data[j] += g.data[j] - sm.data[j] * gsum;
        };
    }
    return push(std::move(n));
}

Tape::Id Tape::layer_norm_rows(Id x, Id gain, Id bias, double eps) {
    const Tensor& vx = val(x);
    const Tensor& vg = val(gain);
    const Tensor& vb = val(bias);
    if (eps <= 0.0) throw ShapeError("layer_norm_rows: eps must be positive");
    if (vx.rank() != 2 || vg.rank() != 1 || vb.rank() != 1 || vg.shape[0] != vx.cols() ||
        vb.shape[0] != vx.cols()) {
        throw ShapeError("layer_norm_rows: " + vx.shape_str() + " gain " + vg.shape_str() + " bias " +
                         vb.shape_str());
    }
    int rows = vx.rows(), cols = vx.cols();
    Node n;
    n.value = Tensor::zeros({rows, cols});
    // aux: normalized activations (rows*cols) followed by one inv_std per row
    n.aux = Tensor::zeros({rows * cols + rows});
    for (int i = 0; i < rows; ++i) {
        const double* xr = vx.data.data() + static_cast<std::size_t>(i) * cols;
        double mu = 0.0;
        for (int j = 0; j < cols; ++j) mu += xr[j];
        mu /= cols;
        double var = 0.0;
        for (int j = 0; j < cols; ++j) var += (xr[j] - mu) * (xr[j] - mu);
        var /= cols;
        double inv_std = 1.0 / std::sqrt(var + eps);
        n.aux.data[static_cast<std::size_t>(rows) * cols + i] = inv_std;
        double* hr = n.aux.data.data() + static_cast<std::size_t>(i) * cols;
        double* yr = n.value.data.data() + static_cast<std::size_t>(i) * cols;
        for (int j = 0; j < cols; ++j) {
            hr[j] = (xr[j] - mu) * inv_std;
            yr[j] = vg.data[j] * hr[j] + vb.data[j];
        }
    }
    n.needs_grad = nodes_[x].needs_grad || nodes_[gain].needs_grad || nodes_[bias].needs_grad;
    if (n.needs_grad) {
        n.back = [x, gain, bias, rows, cols](Tape& t, Id self) {
            const Tensor& g = t.nodes_[self].grad;
            const Tensor& aux = t.nodes_[self].aux;
            const Tensor& vg2 = t.val(gain);
            for (int i = 0; i < rows; ++i) {
                const double* gr = g.data.data() + static_cast<std::size_t>(i) * cols;
                const double* hr = aux.data.data() + static_cast<std::size_t>(i) * cols;
                double inv_std = aux.data[static_cast<std::size_t>(rows) * cols + i];
                if (t.nodes_[gain].needs_grad) {
                    Tensor& dg = t.grad(gain);
                    for (int j = 0; j < cols; ++j) dg.data[j] += gr[j] * hr[j];
                }
                if (t.nodes_[bias].needs_grad) {
                    Tensor& db = t.grad(bias);
                    for (int j = 0; j < cols; ++j) db.data[j] += gr[j];
                }
                if (t.nodes_[x].needs_grad) {
                    Tensor& dx = t.grad(x);
                    double* dxr = dx.data.data() + static_cast<std::size_t>(i) * cols;
                    double mean_h = 0.0, mean_hh = 0.0;
                    for (int j = 0; j < cols; ++j) {
                        double hj = gr[j] * vg2.data[j];
                        mean_h += hj;
                        mean_hh += hj * hr[j];
                    }
                    mean_h /= cols;
                    mean_hh /= cols;
                    for (int j = 0; j < cols; ++j) {
                        double hj = gr[j] * vg2.data[j];
                        dxr[j] += inv_std * (hj - mean_h - hr[j] * mean_hh);
                    }
                }
            }
        };
    }
    return push(std::move(n));
}

Tape::Id Tape::gelu(Id x) {
    const Tensor& vx = val(x);
    Node n;
    n.value = vx;
    for (double& v : n.value.data) v = v * 0.5 * (1.0 + std::erf(v * kInvSqrt2));
    n.needs_grad = nodes_[x].needs_grad;
    if (n.needs_grad) {
        n.back = [x](Tape& t, Id self) {
            const Tensor& g = t.nodes_[self].grad;
            const Tensor& vx2 = t.val(x);
            Tensor& dx = t.grad(x);
            for (std::size_t i = 0; i < g.data.size(); ++i) {
                double v = vx2.data[i];
                double phi = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
                double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
                dx.data[i] += g.data[i] * (phi + v * pdf);
            }
        };
    }
    return push(std::move(n));
}

Tape::Id Tape::dropout(Id x, double p, Rng& rng) {
    if (p <= 0.0) return x;
    if (p >= 1.0) throw ShapeError("dropout: rate must be < 1");
    const Tensor& vx = val(x);
    double keep = 1.0 - p;
    double inv_keep = 1.0 / keep;
    Node n;
    n.value = vx;
    n.aux = Tensor::zeros(vx.shape);
    for (std::size_t i = 0; i < n.value.data.size(); ++i) {
        double m = rng.uniform() < p ? 0.0 : inv_keep;
        n.aux.data[i] = m;
        n.value.data[i] *= m;
    }
    n.needs_grad = nodes_[x].needs_grad;
    if (n.needs_grad) {
        n.back = [x](Tape& t, Id self) {
            const Tensor& g = t.nodes_[self].grad;
            const Tensor& mask = t.nodes_[self].aux;
            Tensor& dx = t.grad(x);
            for (std::size_t i = 0; i < g.data.size(); ++i) dx.data[i] += g.data[i] * mask.data[i];
        };
    }
    return push(std::move(n));
}

Tape::Id Tape::embed(Parameter& table, const std::vector<int>& ids) {
    const Tensor& tv = table.value;
    if (tv.rank() != 2) throw ShapeError("embed: table must be rank 2");
    int rows = static_cast<int>(ids.size()), d = tv.cols(), vocab = tv.rows();
    Node n;
    n.value = Tensor::zeros({rows, d});
    n.aux = Tensor::zeros({rows});
    for (int i = 0; i < rows; ++i) {
        if (ids[i] < 0 || ids[i] >= vocab) throw ShapeError("embed: id out of range");
        n.aux.data[i] = static_cast<double>(ids[i]);
        std::memcpy(n.value.data.data() + static_cast<std::size_t>(i) * d,
                    tv.data.data() + static_cast<std::size_t>(ids[i]) * d, sizeof(double) * d);
    }
    n.param = nullptr;
    n.needs_grad = table.trainable;
    if (n.needs_grad) {
        Parameter* tp = &table;
        n.back = [tp, rows, d](Tape& t, Id self) {
            const Tensor& g = t.nodes_[self].grad;
            const Tensor& idsv = t.nodes_[self].aux;
            for (int i = 0; i < rows; ++i) {
                int id = static_cast<int>(idsv.data[i]);
                double* dst = tp->grad.data.data() + static_cast<std::size_t>(id) * d;
                const double* src = g.data.data() + static_cast<std::size_t>(i) * d;
                for (int j = 0; j < d; ++j) dst[j] += src[j];
            }
        };
    }
    return push(std::move(n));
}

Tape::Id Tape::neg_l2_scores(Id g, const Tensor& candidates) {
    const Tensor& vg = val(g);
    if (candidates.rank() != 2 || vg.numel() != candidates.cols()) {
        throw ShapeError("neg_l2_scores: vector " + vg.shape_str() + " vs candidates " +
                         candidates.shape_str());
    }
    if (candidates.rows() < 1) throw ShapeError("neg_l2_scores: empty candidate list");
    int K = candidates.rows(), d = candidates.cols();
    Node n;
    n.value = Tensor::zeros({K});
    n.aux = Tensor::zeros({K});  // distances
    for (int k = 0; k < K; ++k) {
        const double* c = candidates.data.data() + static_cast<std::size_t>(k) * d;
        double acc = kDistEps;
        for (int j = 0; j < d; ++j) {
            double diff = vg.data[j] - c[j];
            acc += diff * diff;
        }
        double dist = std::sqrt(acc);
        n.aux.data[k] = dist;
        n.value.data[k] = -dist;
    }
    n.needs_grad = nodes_[g].needs_grad;
    if (n.needs_grad) {
        const Tensor* cand = &candidates;  // caller keeps candidates alive for the backward pass
        n.back = [g, cand, K, d](Tape& t, Id self) {
            const Tensor& gout = t.nodes_[self].grad;
            const Tensor& dists = t.nodes_[self].aux;
            const Tensor& vg2 = t.val(g);
            Tensor& dg = t.grad(g);
            for (int k = 0; k < K; ++k) {
                double gv = gout.data[k];
                if (gv == 0.0) continue;
                double inv = gv / dists.data[k];
                const double* c = cand->data.data() + static_cast<std::size_t>(k) * d;
                for (int j = 0; j < d; ++j) dg.data[j] += inv * (c[j] - vg2.data[j]);
            }
        };
    }
    return push(std::move(n));
}

Tape::Id Tape::weighted_nll(Id logp, const std::vector<std::pair<int, double>>& weights) {
    const Tensor& vl = val(logp);
    int K = static_cast<int>(vl.numel());
    Node n;
    n.aux = Tensor::zeros({2 * static_cast<int>(weights.size())});
    double loss = 0.0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        auto [idx, w] = weights[i];
        if (idx < 0 || idx >= K) throw ShapeError("weighted_nll: index out of range");
        loss -= w * vl.data[idx];
        n.aux.data[2 * i] = static_cast<double>(idx);
        n.aux.data[2 * i + 1] = w;
    }
    n.value = Tensor::scalar(loss);
    n.needs_grad = nodes_[logp].needs_grad;
    if (n.needs_grad) {
        n.back = [logp](Tape& t, Id self) {
            double gv = t.nodes_[self].grad.data[0];
            const Tensor& aux = t.nodes_[self].aux;
            Tensor& dl = t.grad(logp);
            for (std::size_t i = 0; i + 1 < aux.data.size(); i += 2) {
                int idx = static_cast<int>(aux.data[i]);
                dl.data[idx] -= aux.data[i + 1] * gv;
            }
        };
    }
    return push(std::move(n));
}

Tape::Id Tape::sum(const std::vector<Id>& scalars) {
    if (scalars.empty()) throw ShapeError("sum: no terms");
    Node n;
    n.aux = Tensor::zeros({static_cast<int>(scalars.size())});
    double acc = 0.0;
    bool needs = false;
    for (std::size_t i = 0; i < scalars.size(); ++i) {
        const Tensor& v = val(scalars[i]);
        if (!v.is_scalar()) throw ShapeError("sum: term is not scalar");
        acc += v.data[0];
        n.aux.data[i] = static_cast<double>(scalars[i]);
        needs = needs || nodes_[scalars[i]].needs_grad;
    }
    n.value = Tensor::scalar(acc);
    n.needs_grad = needs;
    if (needs) {
        n.back = [](Tape& t, Id self) {
            double gv = t.nodes_[self].grad.data[0];
            const Tensor& aux = t.nodes_[self].aux;
            for (double idd : aux.data) {
                Id id = static_cast<Id>(idd);
                if (t.nodes_[id].needs_grad) t.grad(id).data[0] += gv;
            }
        };
    }
    return push(std::move(n));
}

Tape::Id Tape::sum_elements(Id a) {
    const Tensor& va = val(a);
    double acc = 0.0;
    for (double v : va.data) acc += v;
    Node n;
    n.value = Tensor::scalar(acc);
    n.needs_grad = nodes_[a].needs_grad;
    if (n.needs_grad) {
        n.back = [a](Tape& t, Id self) {
            double gv = t.nodes_[self].grad.data[0];
            Tensor& da = t.grad(a);
            for (double& v : da.data) v += gv;
        };
    }
    return push(std::move(n));
}

void Tape::backward(Id loss) {
    const Tensor& lv = val(loss);
    if (!lv.is_scalar()) {
        throw ShapeError("backward: loss must be scalar, got " + lv.shape_str());
    }
    grad(loss).data[0] = 1.0;
    for (Id i = loss; i >= 0; --i) {
        Node& n = nodes_[i];
        if (n.needs_grad && n.back && has_grad(i)) n.back(*this, i);
    }
}

Tape::Id multi_head_attention(Tape& tape, Tape::Id query, Tape::Id keys, Tape::Id values,
                              const AttentionWeights& w, int n_heads) {
    int d = tape.value(query).cols();
    if (n_heads < 1 || d % n_heads != 0) {
        throw ShapeError("multi_head_attention: model width " + std::to_string(d) +
                         " not divisible by " + std::to_string(n_heads) + " heads");
    }
    if (tape.value(keys).rows() < 1) throw ShapeError("multi_head_attention: empty memory");
    Tape::Id q = tape.linear(query, w.wq, w.bq);
    Tape::Id k = tape.linear(keys, w.wk, w.bk);
    Tape::Id v = tape.linear(values, w.wv, w.bv);
    int dh = d / n_heads;
    double scl = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<Tape::Id> heads;
    heads.reserve(n_heads);
    for (int h = 0; h < n_heads; ++h) {
        Tape::Id qh = tape.slice_cols(q, h * dh, (h + 1) * dh);
        Tape::Id kh = tape.slice_cols(k, h * dh, (h + 1) * dh);
        Tape::Id vh = tape.slice_cols(v, h * dh, (h + 1) * dh);
        Tape::Id scores = tape.scale(tape.matmul_nt(qh, kh), scl);
        Tape::Id attn = tape.softmax_rows(scores);
        heads.push_back(tape.matmul(attn, vh));
    }
    Tape::Id cat = n_heads == 1 ? heads[0] : tape.concat_cols(heads);
    return tape.linear(cat, w.wo, w.bo);
}

}  // namespace dstlab::numeric
