#include "autodiff.h"

#include "error.h"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstring>

namespace gridvla {

namespace {

using RowMat   = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat   = Eigen::Map<RowMat>;
using MapCMat  = Eigen::Map<const RowMat>;

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

double gelu_fwd(double x) {
    double u = kGeluC * (x + kGeluA * x * x * x);
    return 0.5 * x * (1.0 + std::tanh(u));
}

double gelu_bwd(double x) {
    double u  = kGeluC * (x + kGeluA * x * x * x);
    double t  = std::tanh(u);
    double du = kGeluC * (1.0 + 3.0 * kGeluA * x * x);
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
}

// rows/cols view of the last axis: [d0,...,dk,n] -> (d0*...*dk) x n
std::pair<int64_t, int64_t> as_rows(const Shape & s) {
    int64_t n = s.last();
    int64_t rows = n == 0 ? 0 : s.numel() / n;
    return {rows, n};
}

} // namespace

Tensor GradientMap::grad(const Tensor & t) const {
    if (!t.on_tape()) fail(ErrorKind::state, "gradient requested for a tensor that is not on the tape");
    auto it = grads_.find(t.node());
    if (it == grads_.end()) return Tensor::zeros(t.shape());
    return Tensor(t.shape(), it->second);
}

bool GradientMap::contains(const Tensor & t) const {
    return t.on_tape() && grads_.count(t.node()) > 0;
}

Tensor Tape::leaf(const Tensor & t) {
    Tensor out = t;
    out.node_ = (int) nodes_.size();
    nodes_.push_back(Node{nullptr});
    return out;
}

Tensor Tape::make(Shape shape, std::vector<double> values,
                  std::initializer_list<const Tensor *> inputs, BackwardFn fn) {
    Tensor out(std::move(shape), std::move(values));
    bool recorded = false;
    for (const Tensor * in : inputs) {
        if (in->on_tape()) { recorded = true; break; }
    }
    if (recorded) {
        out.node_ = (int) nodes_.size();
        nodes_.push_back(Node{std::move(fn)});
    }
    return out;
}

std::vector<double> & Tape::accum(int node, int64_t numel) {
    auto & g = grads_[(size_t) node];
    if (g.empty()) g.assign((size_t) numel, 0.0);
    return g;
}

// ---------------------------------------------------------------------------
// linear algebra

Tensor Tape::matmul(const Tensor & a, const Tensor & b) {
    if (a.shape().rank() != 2 || b.shape().rank() != 2 || a.shape().cols() != b.shape().rows()) {
        fail(ErrorKind::dimension, "matmul: incompatible shapes " + a.shape().str() + " x " + b.shape().str());
    }
    int64_t m = a.shape().rows(), k = a.shape().cols(), n = b.shape().cols();
    std::vector<double> out((size_t) (m * n));
    MapMat(out.data(), m, n) = MapCMat(a.data(), m, k) * MapCMat(b.data(), k, n);

    return make({m, n}, std::move(out), {&a, &b},
                [a, b, m, k, n](const std::vector<double> & gout, Tape & t) {
                    MapCMat g(gout.data(), m, n);
                    if (a.on_tape()) {
                        MapMat da(t.accum(a.node(), m * k).data(), m, k);
                        da.noalias() += g * MapCMat(b.data(), k, n).transpose();
                    }
                    if (b.on_tape()) {
                        MapMat db(t.accum(b.node(), k * n).data(), k, n);
                        db.noalias() += MapCMat(a.data(), m, k).transpose() * g;
                    }
                });
}

Tensor Tape::transpose(const Tensor & a) {
    if (a.shape().rank() != 2) fail(ErrorKind::dimension, "transpose: expected rank-2, got " + a.shape().str());
    int64_t m = a.shape().rows(), n = a.shape().cols();
    std::vector<double> out((size_t) (m * n));
    MapMat(out.data(), n, m) = MapCMat(a.data(), m, n).transpose();

    return make({n, m}, std::move(out), {&a}, [a, m, n](const std::vector<double> & gout, Tape & t) {
        if (!a.on_tape()) return;
        MapMat da(t.accum(a.node(), m * n).data(), m, n);
        da.noalias() += MapCMat(gout.data(), n, m).transpose();
    });
}

// ---------------------------------------------------------------------------
// elementwise

Tensor Tape::add(const Tensor & a, const Tensor & b) {
    if (a.shape() != b.shape()) {
        fail(ErrorKind::dimension, "add: shape mismatch " + a.shape().str() + " vs " + b.shape().str());
    }
    std::vector<double> out(a.values());
    for (size_t i = 0; i < out.size(); ++i) out[i] += b.data()[i];

    return make(a.shape(), std::move(out), {&a, &b}, [a, b](const std::vector<double> & gout, Tape & t) {
        if (a.on_tape()) {
            auto & da = t.accum(a.node(), a.numel());
            for (size_t i = 0; i < gout.size(); ++i) da[i] += gout[i];
        }
        if (b.on_tape()) {
            auto & db = t.accum(b.node(), b.numel());
            for (size_t i = 0; i < gout.size(); ++i) db[i] += gout[i];
        }
    });
}

Tensor Tape::add(const Tensor & a, double b) {
    std::vector<double> out(a.values());
    for (double & v : out) v += b;
    return make(a.shape(), std::move(out), {&a}, [a](const std::vector<double> & gout, Tape & t) {
        if (!a.on_tape()) return;
        auto & da = t.accum(a.node(), a.numel());
        for (size_t i = 0; i < gout.size(); ++i) da[i] += gout[i];
    });
}

Tensor Tape::sub(const Tensor & a, const Tensor & b) {
    if (a.shape() != b.shape()) {
        fail(ErrorKind::dimension, "sub: shape mismatch " + a.shape().str() + " vs " + b.shape().str());
    }
    std::vector<double> out(a.values());
    for (size_t i = 0; i < out.size(); ++i) out[i] -= b.data()[i];

    return make(a.shape(), std::move(out), {&a, &b}, [a, b](const std::vector<double> & gout, Tape & t) {
        if (a.on_tape()) {
            auto & da = t.accum(a.node(), a.numel());
            for (size_t i = 0; i < gout.size(); ++i) da[i] += gout[i];
        }
        if (b.on_tape()) {
            auto & db = t.accum(b.node(), b.numel());
            for (size_t i = 0; i < gout.size(); ++i) db[i] -= gout[i];
        }
    });
}

Tensor Tape::mul(const Tensor & a, const Tensor & b) {
    if (a.shape() != b.shape()) {
        fail(ErrorKind::dimension, "mul: shape mismatch " + a.shape().str() + " vs " + b.shape().str());
    }
    std::vector<double> out(a.values());
    for (size_t i = 0; i < out.size(); ++i) out[i] *= b.data()[i];

    return make(a.shape(), std::move(out), {&a, &b}, [a, b](const std::vector<double> & gout, Tape & t) {
        if (a.on_tape()) {
            auto & da = t.accum(a.node(), a.numel());
            for (size_t i = 0; i < gout.size(); ++i) da[i] += gout[i] * b.data()[i];
        }
        if (b.on_tape()) {
            auto & db = t.accum(b.node(), b.numel());
            for (size_t i = 0; i < gout.size(); ++i) db[i] += gout[i] * a.data()[i];
        }
    });
}

Tensor Tape::scale(const Tensor & a, double s) {
    std::vector<double> out(a.values());
    for (double & v : out) v *= s;
    return make(a.shape(), std::move(out), {&a}, [a, s](const std::vector<double> & gout, Tape & t) {
        if (!a.on_tape()) return;
        auto & da = t.accum(a.node(), a.numel());
        for (size_t i = 0; i < gout.size(); ++i) da[i] += s * gout[i];
    });
}

Tensor Tape::gelu(const Tensor & a) {
    std::vector<double> out(a.values());
    for (double & v : out) v = gelu_fwd(v);
    return make(a.shape(), std::move(out), {&a}, [a](const std::vector<double> & gout, Tape & t) {
        if (!a.on_tape()) return;
        auto & da = t.accum(a.node(), a.numel());
        for (size_t i = 0; i < gout.size(); ++i) da[i] += gout[i] * gelu_bwd(a.data()[i]);
    });
}

// ---------------------------------------------------------------------------
// structured

Tensor Tape::softmax(const Tensor & a) {
    auto [rows, n] = as_rows(a.shape());
    if (n == 0) fail(ErrorKind::dimension, "softmax: empty last axis in " + a.shape().str());
    std::vector<double> out((size_t) (rows * n));
    for (int64_t r = 0; r < rows; ++r) {
        const double * x = a.data() + r * n;
        double *       y = out.data() + r * n;
        double mx = x[0];
        for (int64_t j = 1; j < n; ++j) mx = std::max(mx, x[j]);
        double sum = 0.0;
        for (int64_t j = 0; j < n; ++j) {
            y[j] = std::exp(x[j] - mx);
            sum += y[j];
        }
        for (int64_t j = 0; j < n; ++j) y[j] /= sum;
    }

    Tensor result = make(a.shape(), std::move(out), {&a}, nullptr);
    if (!result.on_tape()) return result;

    // the closure needs the output values; rebind backward now that they exist
    Tensor captured = result;
    nodes_.back().backward = [a, captured, rows = rows, n = n](const std::vector<double> & gout, Tape & t) {
        if (!a.on_tape()) return;
        auto & da = t.accum(a.node(), a.numel());
        for (int64_t r = 0; r < rows; ++r) {
            const double * y = captured.data() + r * n;
            const double * g = gout.data() + r * n;
            double dot = 0.0;
            for (int64_t j = 0; j < n; ++j) dot += g[j] * y[j];
            double * d = da.data() + r * n;
            for (int64_t j = 0; j < n; ++j) d[j] += y[j] * (g[j] - dot);
        }
    };
    return result;
}

Tensor Tape::layer_norm(const Tensor & a, const Tensor & gamma, const Tensor & beta, double eps) {
    auto [rows, n] = as_rows(a.shape());
    if (n < 1) fail(ErrorKind::dimension, "layer_norm: empty last axis in " + a.shape().str());
    if (eps <= 0.0) fail(ErrorKind::usage, "layer_norm: eps must be positive");
    if (gamma.numel() != n || beta.numel() != n) {
        fail(ErrorKind::dimension, "layer_norm: gamma " + gamma.shape().str() + " / beta " +
                                       beta.shape().str() + " do not match feature dim " + std::to_string(n));
    }

    std::vector<double> out((size_t) (rows * n));
    std::vector<double> xhat((size_t) (rows * n));
    std::vector<double> inv_std((size_t) rows);
    for (int64_t r = 0; r < rows; ++r) {
        const double * x = a.data() + r * n;
        double mean = 0.0;
        for (int64_t j = 0; j < n; ++j) mean += x[j];
        mean /= (double) n;
        double var = 0.0;
        for (int64_t j = 0; j < n; ++j) {
            double d = x[j] - mean;
            var += d * d;
        }
        var /= (double) n;
        double is = 1.0 / std::sqrt(var + eps);
        inv_std[(size_t) r] = is;
        for (int64_t j = 0; j < n; ++j) {
            double xh = (x[j] - mean) * is;
            xhat[(size_t) (r * n + j)] = xh;
            out[(size_t) (r * n + j)]  = xh * gamma.data()[j] + beta.data()[j];
        }
    }

    auto xhat_p   = std::make_shared<std::vector<double>>(std::move(xhat));
    auto invstd_p = std::make_shared<std::vector<double>>(std::move(inv_std));

    return make(a.shape(), std::move(out), {&a, &gamma, &beta},
                [a, gamma, beta, xhat_p, invstd_p, rows = rows, n = n](const std::vector<double> & gout, Tape & t) {
                    for (int64_t r = 0; r < rows; ++r) {
                        const double * g  = gout.data() + r * n;
                        const double * xh = xhat_p->data() + r * n;
                        if (gamma.on_tape()) {
                            auto & dg = t.accum(gamma.node(), n);
                            for (int64_t j = 0; j < n; ++j) dg[j] += g[j] * xh[j];
                        }
                        if (beta.on_tape()) {
                            auto & db = t.accum(beta.node(), n);
                            for (int64_t j = 0; j < n; ++j) db[j] += g[j];
                        }
                        if (a.on_tape()) {
                            auto & da = t.accum(a.node(), a.numel());
                            double mean_gy = 0.0, mean_gyx = 0.0;
                            for (int64_t j = 0; j < n; ++j) {
                                double gy = g[j] * gamma.data()[j];
                                mean_gy += gy;
                                mean_gyx += gy * xh[j];
                            }
                            mean_gy /= (double) n;
                            mean_gyx /= (double) n;
                            double is = (*invstd_p)[(size_t) r];
                            double * d = da.data() + r * n;
                            for (int64_t j = 0; j < n; ++j) {
                                double gy = g[j] * gamma.data()[j];
                                d[j] += is * (gy - mean_gy - xh[j] * mean_gyx);
                            }
                        }
                    }
                });
}

Tensor Tape::embedding_lookup(const Tensor & table, const std::vector<int> & ids) {
    if (table.shape().rank() != 2) {
        fail(ErrorKind::dimension, "embedding_lookup: table must be rank-2, got " + table.shape().str());
    }
    int64_t v = table.shape().rows(), d = table.shape().cols();
    for (int id : ids) {
        if (id < 0 || id >= v) {
            fail(ErrorKind::vocab, "embedding_lookup: id " + std::to_string(id) + " outside vocabulary of size " +
                                       std::to_string(v));
        }
    }
    int64_t n = (int64_t) ids.size();
    std::vector<double> out((size_t) (n * d));
    for (int64_t i = 0; i < n; ++i) {
        std::memcpy(out.data() + i * d, table.data() + (int64_t) ids[(size_t) i] * d, (size_t) d * sizeof(double));
    }

    return make({n, d}, std::move(out), {&table}, [table, ids, d](const std::vector<double> & gout, Tape & t) {
        if (!table.on_tape()) return;
        auto & dt = t.accum(table.node(), table.numel());
        for (size_t i = 0; i < ids.size(); ++i) {
            double *       dst = dt.data() + (int64_t) ids[i] * d;
            const double * src = gout.data() + (int64_t) i * d;
            for (int64_t j = 0; j < d; ++j) dst[j] += src[j];
        }
    });
}

Tensor Tape::masked_cross_entropy(const Tensor & logits, const std::vector<int> & targets,
                                  const std::vector<uint8_t> & mask) {
    if (logits.shape().rank() != 2) {
        fail(ErrorKind::dimension, "masked_cross_entropy: logits must be rank-2, got " + logits.shape().str());
    }
    int64_t rows = logits.shape().rows(), v = logits.shape().cols();
    if ((int64_t) targets.size() != rows || (int64_t) mask.size() != rows) {
        fail(ErrorKind::dimension, "masked_cross_entropy: got " + std::to_string(targets.size()) + " targets and " +
                                       std::to_string(mask.size()) + " mask bits for " + std::to_string(rows) +
                                       " logit rows");
    }
    int64_t n_sup = 0;
    for (int64_t i = 0; i < rows; ++i) {
        if (targets[(size_t) i] < 0 || targets[(size_t) i] >= v) {
            fail(ErrorKind::vocab, "masked_cross_entropy: target id " + std::to_string(targets[(size_t) i]) +
                                       " outside vocabulary of size " + std::to_string(v));
        }
        if (mask[(size_t) i]) ++n_sup;
    }
    if (n_sup == 0) fail(ErrorKind::state, "masked_cross_entropy: loss mask has no supervised positions");

    // softmax rows are cached for supervised positions only
    auto probs = std::make_shared<std::vector<double>>();
    probs->reserve((size_t) (n_sup * v));
    std::vector<int64_t> sup_rows;
    sup_rows.reserve((size_t) n_sup);

    double total = 0.0;
    for (int64_t r = 0; r < rows; ++r) {
        if (!mask[(size_t) r]) continue;
        const double * x = logits.data() + r * v;
        double mx = x[0];
        for (int64_t j = 1; j < v; ++j) mx = std::max(mx, x[j]);
        double sum = 0.0;
        size_t base = probs->size();
        for (int64_t j = 0; j < v; ++j) {
            double e = std::exp(x[j] - mx);
            probs->push_back(e);
            sum += e;
        }
        for (int64_t j = 0; j < v; ++j) (*probs)[base + (size_t) j] /= sum;
        total += std::log(sum) + mx - x[targets[(size_t) r]];
        sup_rows.push_back(r);
    }
    total /= (double) n_sup;

    return make({1}, {total}, {&logits},
                [logits, targets, probs, sup_rows, v, n_sup](const std::vector<double> & gout, Tape & t) {
                    if (!logits.on_tape()) return;
                    auto & dl = t.accum(logits.node(), logits.numel());
                    double scale = gout[0] / (double) n_sup;
                    for (size_t s = 0; s < sup_rows.size(); ++s) {
                        int64_t        r = sup_rows[s];
                        const double * p = probs->data() + (int64_t) s * v;
                        double *       d = dl.data() + r * v;
                        for (int64_t j = 0; j < v; ++j) d[j] += scale * p[j];
                        d[targets[(size_t) r]] -= scale;
                    }
                });
}

// ---------------------------------------------------------------------------
// layout

Tensor Tape::slice_rows(const Tensor & a, int64_t row0, int64_t nrows) {
    int64_t m = a.shape().rows(), n = a.shape().cols();
    if (row0 < 0 || nrows < 0 || row0 + nrows > m) {
        fail(ErrorKind::dimension, "slice_rows: range [" + std::to_string(row0) + "," +
                                       std::to_string(row0 + nrows) + ") outside " + a.shape().str());
    }
    std::vector<double> out(a.data() + row0 * n, a.data() + (row0 + nrows) * n);
    return make({nrows, n}, std::move(out), {&a}, [a, row0, n](const std::vector<double> & gout, Tape & t) {
        if (!a.on_tape()) return;
        auto & da = t.accum(a.node(), a.numel());
        for (size_t i = 0; i < gout.size(); ++i) da[(size_t) (row0 * n) + i] += gout[i];
    });
}

Tensor Tape::slice_cols(const Tensor & a, int64_t col0, int64_t ncols) {
    int64_t m = a.shape().rows(), n = a.shape().cols();
    if (col0 < 0 || ncols < 0 || col0 + ncols > n) {
        fail(ErrorKind::dimension, "slice_cols: range [" + std::to_string(col0) + "," +
                                       std::to_string(col0 + ncols) + ") outside " + a.shape().str());
    }
    std::vector<double> out((size_t) (m * ncols));
    for (int64_t r = 0; r < m; ++r) {
        std::memcpy(out.data() + r * ncols, a.data() + r * n + col0, (size_t) ncols * sizeof(double));
    }
    return make({m, ncols}, std::move(out), {&a},
                [a, col0, ncols, m, n](const std::vector<double> & gout, Tape & t) {
                    if (!a.on_tape()) return;
                    auto & da = t.accum(a.node(), a.numel());
                    for (int64_t r = 0; r < m; ++r) {
                        for (int64_t c = 0; c < ncols; ++c) {
                            da[(size_t) (r * n + col0 + c)] += gout[(size_t) (r * ncols + c)];
                        }
                    }
                });
}

Tensor Tape::concat_rows(std::span<const Tensor> parts) {
    if (parts.empty()) fail(ErrorKind::usage, "concat_rows: no inputs");
    int64_t n = parts[0].shape().cols();
    int64_t m = 0;
    for (const Tensor & p : parts) {
        if (p.shape().rank() != 2 || p.shape().cols() != n) {
            fail(ErrorKind::dimension, "concat_rows: column mismatch, " + p.shape().str() + " vs " +
                                           parts[0].shape().str());
        }
        m += p.shape().rows();
    }
    std::vector<double> out;
    out.reserve((size_t) (m * n));
    for (const Tensor & p : parts) out.insert(out.end(), p.values().begin(), p.values().end());

    std::vector<Tensor> owned(parts.begin(), parts.end());
    bool recorded = false;
    for (const Tensor & p : owned) {
        if (p.on_tape()) { recorded = true; break; }
    }
    Tensor result(Shape{m, n}, std::move(out));
    if (recorded) {
        result.node_ = (int) nodes_.size();
        nodes_.push_back(Node{[owned, n](const std::vector<double> & gout, Tape & t) {
            int64_t row = 0;
            for (const Tensor & p : owned) {
                int64_t pr = p.shape().rows();
                if (p.on_tape()) {
                    auto & dp = t.accum(p.node(), p.numel());
                    for (int64_t i = 0; i < pr * n; ++i) dp[(size_t) i] += gout[(size_t) (row * n + i)];
                }
                row += pr;
            }
        }});
    }
    return result;
}

Tensor Tape::concat_cols(std::span<const Tensor> parts) {
    if (parts.empty()) fail(ErrorKind::usage, "concat_cols: no inputs");
    int64_t m = parts[0].shape().rows();
    int64_t n = 0;
    for (const Tensor & p : parts) {
        if (p.shape().rank() != 2 || p.shape().rows() != m) {
            fail(ErrorKind::dimension, "concat_cols: row mismatch, " + p.shape().str() + " vs " +
                                           parts[0].shape().str());
        }
        n += p.shape().cols();
    }
    std::vector<double> out((size_t) (m * n));
    int64_t col = 0;
    for (const Tensor & p : parts) {
        int64_t pc = p.shape().cols();
        for (int64_t r = 0; r < m; ++r) {
            std::memcpy(out.data() + r * n + col, p.data() + r * pc, (size_t) pc * sizeof(double));
        }
        col += pc;
    }

    std::vector<Tensor> owned(parts.begin(), parts.end());
    bool recorded = false;
    for (const Tensor & p : owned) {
        if (p.on_tape()) { recorded = true; break; }
    }
    Tensor result(Shape{m, n}, std::move(out));
    if (recorded) {
        result.node_ = (int) nodes_.size();
        nodes_.push_back(Node{[owned, m, n](const std::vector<double> & gout, Tape & t) {
            int64_t col = 0;
            for (const Tensor & p : owned) {
                int64_t pc = p.shape().cols();
                if (p.on_tape()) {
                    auto & dp = t.accum(p.node(), p.numel());
                    for (int64_t r = 0; r < m; ++r) {
                        for (int64_t c = 0; c < pc; ++c) {
                            dp[(size_t) (r * pc + c)] += gout[(size_t) (r * n + col + c)];
                        }
                    }
                }
                col += pc;
            }
        }});
    }
    return result;
}

Tensor Tape::broadcast_rows(const Tensor & row, int64_t nrows) {
    int64_t d = row.numel();
    if (row.shape().rank() > 2 || (row.shape().rank() == 2 && row.shape().rows() != 1)) {
        fail(ErrorKind::dimension, "broadcast_rows: expected a vector, got " + row.shape().str());
    }
    if (nrows < 0) fail(ErrorKind::usage, "broadcast_rows: negative row count");
    std::vector<double> out((size_t) (nrows * d));
    for (int64_t r = 0; r < nrows; ++r) {
        std::memcpy(out.data() + r * d, row.data(), (size_t) d * sizeof(double));
    }
    return make({nrows, d}, std::move(out), {&row}, [row, nrows, d](const std::vector<double> & gout, Tape & t) {
        if (!row.on_tape()) return;
        auto & dr = t.accum(row.node(), d);
        for (int64_t r = 0; r < nrows; ++r) {
            for (int64_t j = 0; j < d; ++j) dr[(size_t) j] += gout[(size_t) (r * d + j)];
        }
    });
}

Tensor Tape::sum_all(const Tensor & a) {
    double s = 0.0;
    for (double v : a.values()) s += v;
    return make({1}, {s}, {&a}, [a](const std::vector<double> & gout, Tape & t) {
        if (!a.on_tape()) return;
        auto & da = t.accum(a.node(), a.numel());
        for (double & v : da) v += gout[0];
    });
}

// ---------------------------------------------------------------------------

GradientMap Tape::backward(const Tensor & loss, double seed) {
    if (loss.numel() != 1) {
        fail(ErrorKind::dimension, "backward: loss must be a scalar, got " + loss.shape().str());
    }
    if (!loss.on_tape()) fail(ErrorKind::state, "backward: loss is not on the tape");

    grads_.assign(nodes_.size(), {});
    grads_[(size_t) loss.node()] = {seed};

    for (int i = loss.node(); i >= 0; --i) {
        if (grads_[(size_t) i].empty()) continue;
        if (nodes_[(size_t) i].backward) nodes_[(size_t) i].backward(grads_[(size_t) i], *this);
    }

    GradientMap out;
    for (size_t i = 0; i < grads_.size(); ++i) {
        if (grads_[i].empty()) continue;
        out.grads_.emplace((int) i, std::move(grads_[i]));
    }
    grads_.clear();
    return out;
}

double finite_diff_check(const std::function<Tensor(Tape &, const Tensor &)> & f, const Tensor & x,
                         double eps) {
    if (eps < 1e-7 || eps > 1e-3) fail(ErrorKind::usage, "finite_diff_check: eps must be in [1e-7, 1e-3]");

    Tape tape;
    Tensor x_leaf = tape.leaf(x);
    Tensor loss   = f(tape, x_leaf);
    if (loss.numel() != 1) fail(ErrorKind::dimension, "finite_diff_check: f must be scalar-valued");
    GradientMap grads = tape.backward(loss);
    Tensor analytic   = grads.grad(x_leaf);

    auto value_at = [&](const std::vector<double> & vals) {
        Tape t2;
        Tensor probe(x.shape(), vals);
        return f(t2, probe).scalar_value();
    };

    std::vector<double> work(x.values());
    double worst = 0.0;
    for (size_t i = 0; i < work.size(); ++i) {
        double orig = work[i];
        work[i]     = orig + eps;
        double up   = value_at(work);
        work[i]     = orig - eps;
        double down = value_at(work);
        work[i]     = orig;
        double numeric = (up - down) / (2.0 * eps);
        double err     = std::abs(analytic.data()[i] - numeric) / std::max(1.0, std::abs(numeric));
        worst          = std::max(worst, err);
    }
    return worst;
}

} // namespace gridvla
