#ifndef PMNET_AUTODIFF_HPP
#define PMNET_AUTODIFF_HPP

#include <algorithm>
#include <cassert>
#include <cmath>
#include <limits>
#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "pmnet/errors.hpp"

namespace pmnet::ad {

// Reverse-mode tape. One tape per forward pass; nodes are owned by the tape
// and freed together. Scalar type T is float for training and double for
// finite-difference checks.
template <class T>
struct Node {
    int rows = 0;
    int cols = 0;
    std::vector<T> val;
    std::vector<T> grad;
    bool needs_grad = false;
    std::function<void()> back;  // pulls this->grad into parents

    int numel() const { return rows * cols; }
};

template <class T>
struct Var {
    Node<T>* n = nullptr;

    bool valid() const { return n != nullptr; }
    int rows() const { return n->rows; }
    int cols() const { return n->cols; }
    const std::vector<T>& val() const { return n->val; }
    const std::vector<T>& grad() const { return n->grad; }
    T item() const { return n->val[0]; }
};

template <class T>
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // grad_enabled=false makes every node a constant; forward values are
    // identical, backward is a no-op. Used for inference.
    explicit Tape(bool grad_enabled) : grad_enabled_(grad_enabled) {}

    bool grad_enabled() const { return grad_enabled_; }

    Var<T> make(int rows, int cols, bool needs_grad) {
        nodes_.push_back(std::make_unique<Node<T>>());
        Node<T>* n = nodes_.back().get();
        n->rows = rows;
        n->cols = cols;
        n->val.assign(static_cast<std::size_t>(rows) * cols, T(0));
        n->needs_grad = needs_grad && grad_enabled_;
        if (n->needs_grad) n->grad.assign(n->val.size(), T(0));
        return Var<T>{n};
    }

    Var<T> leaf(int rows, int cols, const T* data, bool needs_grad) {
        Var<T> v = make(rows, cols, needs_grad);
        std::copy(data, data + v.n->numel(), v.n->val.begin());
        return v;
    }

    Var<T> constant(int rows, int cols, const T* data) { return leaf(rows, cols, data, false); }

    Var<T> scalar(T x) {
        Var<T> v = make(1, 1, false);
        v.n->val[0] = x;
        return v;
    }

    void backward(Var<T> loss) {
        if (!grad_enabled_ || !loss.n->needs_grad) return;
        assert(loss.n->numel() == 1);
        loss.n->grad[0] = T(1);
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
            Node<T>* n = it->get();
            if (n->needs_grad && n->back) n->back();
        }
    }

    std::size_t size() const { return nodes_.size(); }

private:
    std::vector<std::unique_ptr<Node<T>>> nodes_;
    bool grad_enabled_ = true;
};

namespace detail {
template <class T>
inline bool any_grad(std::initializer_list<const Var<T>*> vs) {
    for (const Var<T>* v : vs)
        if ((*v).n->needs_grad) return true;
    return false;
}
}  // namespace detail

// ---- elementwise ----

template <class T>
Var<T> add(Tape<T>& tp, Var<T> a, Var<T> b) {
    assert(a.n->numel() == b.n->numel());
    Var<T> out = tp.make(a.rows(), a.cols(), detail::any_grad<T>({&a, &b}));
    for (int i = 0; i < a.n->numel(); ++i) out.n->val[i] = a.n->val[i] + b.n->val[i];
    if (out.n->needs_grad)
        out.n->back = [a, b, out]() {
            for (int i = 0; i < out.n->numel(); ++i) {
                if (a.n->needs_grad) a.n->grad[i] += out.n->grad[i];
                if (b.n->needs_grad) b.n->grad[i] += out.n->grad[i];
            }
        };
    return out;
}

template <class T>
Var<T> sub(Tape<T>& tp, Var<T> a, Var<T> b) {
    assert(a.n->numel() == b.n->numel());
    Var<T> out = tp.make(a.rows(), a.cols(), detail::any_grad<T>({&a, &b}));
    for (int i = 0; i < a.n->numel(); ++i) out.n->val[i] = a.n->val[i] - b.n->val[i];
    if (out.n->needs_grad)
        out.n->back = [a, b, out]() {
            for (int i = 0; i < out.n->numel(); ++i) {
                if (a.n->needs_grad) a.n->grad[i] += out.n->grad[i];
                if (b.n->needs_grad) b.n->grad[i] -= out.n->grad[i];
            }
        };
    return out;
}

template <class T>
Var<T> mul(Tape<T>& tp, Var<T> a, Var<T> b) {
    assert(a.n->numel() == b.n->numel());
    Var<T> out = tp.make(a.rows(), a.cols(), detail::any_grad<T>({&a, &b}));
    for (int i = 0; i < a.n->numel(); ++i) out.n->val[i] = a.n->val[i] * b.n->val[i];
    if (out.n->needs_grad)
        out.n->back = [a, b, out]() {
            for (int i = 0; i < out.n->numel(); ++i) {
                if (a.n->needs_grad) a.n->grad[i] += out.n->grad[i] * b.n->val[i];
                if (b.n->needs_grad) b.n->grad[i] += out.n->grad[i] * a.n->val[i];
            }
        };
    return out;
}

template <class T>
Var<T> scale(Tape<T>& tp, Var<T> a, T s) {
    Var<T> out = tp.make(a.rows(), a.cols(), a.n->needs_grad);
    for (int i = 0; i < a.n->numel(); ++i) out.n->val[i] = a.n->val[i] * s;
    if (out.n->needs_grad)
        out.n->back = [a, out, s]() {
            for (int i = 0; i < out.n->numel(); ++i) a.n->grad[i] += out.n->grad[i] * s;
        };
    return out;
}

template <class T>
Var<T> neg(Tape<T>& tp, Var<T> a) {
    return scale(tp, a, T(-1));
}

template <class T>
Var<T> exp_ew(Tape<T>& tp, Var<T> a) {
    Var<T> out = tp.make(a.rows(), a.cols(), a.n->needs_grad);
    for (int i = 0; i < a.n->numel(); ++i) out.n->val[i] = std::exp(a.n->val[i]);
    if (out.n->needs_grad)
        out.n->back = [a, out]() {
            for (int i = 0; i < out.n->numel(); ++i) a.n->grad[i] += out.n->grad[i] * out.n->val[i];
        };
    return out;
}

template <class T>
Var<T> softplus(Tape<T>& tp, Var<T> a) {
    Var<T> out = tp.make(a.rows(), a.cols(), a.n->needs_grad);
    for (int i = 0; i < a.n->numel(); ++i) {
        const T x = a.n->val[i];
        out.n->val[i] = x > T(20) ? x : std::log1p(std::exp(x));
    }
    if (out.n->needs_grad)
        out.n->back = [a, out]() {
            for (int i = 0; i < out.n->numel(); ++i) {
                const T x = a.n->val[i];
                const T sig = T(1) / (T(1) + std::exp(-x));
                a.n->grad[i] += out.n->grad[i] * sig;
            }
        };
    return out;
}

template <class T>
Var<T> silu(Tape<T>& tp, Var<T> a) {
    Var<T> out = tp.make(a.rows(), a.cols(), a.n->needs_grad);
    for (int i = 0; i < a.n->numel(); ++i) {
        const T x = a.n->val[i];
        out.n->val[i] = x / (T(1) + std::exp(-x));
    }
    if (out.n->needs_grad)
        out.n->back = [a, out]() {
            for (int i = 0; i < out.n->numel(); ++i) {
                const T x = a.n->val[i];
                const T sig = T(1) / (T(1) + std::exp(-x));
                a.n->grad[i] += out.n->grad[i] * (sig * (T(1) + x * (T(1) - sig)));
            }
        };
    return out;
}

template <class T>
Var<T> relu(Tape<T>& tp, Var<T> a) {
    Var<T> out = tp.make(a.rows(), a.cols(), a.n->needs_grad);
    for (int i = 0; i < a.n->numel(); ++i) out.n->val[i] = a.n->val[i] > T(0) ? a.n->val[i] : T(0);
    if (out.n->needs_grad)
        out.n->back = [a, out]() {
            for (int i = 0; i < out.n->numel(); ++i)
                if (a.n->val[i] > T(0)) a.n->grad[i] += out.n->grad[i];
        };
    return out;
}

template <class T>
Var<T> sqrt_ew(Tape<T>& tp, Var<T> a) {
    Var<T> out = tp.make(a.rows(), a.cols(), a.n->needs_grad);
    for (int i = 0; i < a.n->numel(); ++i) out.n->val[i] = std::sqrt(a.n->val[i]);
    if (out.n->needs_grad)
        out.n->back = [a, out]() {
            for (int i = 0; i < out.n->numel(); ++i) {
                const T y = out.n->val[i];
                a.n->grad[i] += out.n->grad[i] / (T(2) * (y > T(1e-12) ? y : T(1e-12)));
            }
        };
    return out;
}

// ---- matmul family ----

template <class T>
Var<T> matmul(Tape<T>& tp, Var<T> a, Var<T> b) {
    assert(a.cols() == b.rows());
    const int m = a.rows(), k = a.cols(), n = b.cols();
    Var<T> out = tp.make(m, n, detail::any_grad<T>({&a, &b}));
    const T* A = a.n->val.data();
    const T* B = b.n->val.data();
    T* C = out.n->val.data();
    for (int i = 0; i < m; ++i)
        for (int p = 0; p < k; ++p) {
            const T av = A[i * k + p];
            if (av == T(0)) continue;
            const T* Bp = B + p * n;
            T* Ci = C + i * n;
            for (int j = 0; j < n; ++j) Ci[j] += av * Bp[j];
        }
    if (out.n->needs_grad)
        out.n->back = [a, b, out, m, k, n]() {
            const T* G = out.n->grad.data();
            if (a.n->needs_grad) {
                T* GA = a.n->grad.data();
                const T* B = b.n->val.data();
                for (int i = 0; i < m; ++i)
                    for (int p = 0; p < k; ++p) {
                        T s = T(0);
                        const T* Gi = G + i * n;
                        const T* Bp = B + p * n;
                        for (int j = 0; j < n; ++j) s += Gi[j] * Bp[j];
                        GA[i * k + p] += s;
                    }
            }
            if (b.n->needs_grad) {
                T* GB = b.n->grad.data();
                const T* A = a.n->val.data();
                for (int i = 0; i < m; ++i)
                    for (int p = 0; p < k; ++p) {
                        const T av = A[i * k + p];
                        if (av == T(0)) continue;
                        const T* Gi = G + i * n;
                        T* GBp = GB + p * n;
                        for (int j = 0; j < n; ++j) GBp[j] += av * Gi[j];
                    }
            }
        };
    return out;
}

// a [m,k] times b^T where b is [n,k]; returns [m,n].
template <class T>
Var<T> matmul_nt(Tape<T>& tp, Var<T> a, Var<T> b) {
    assert(a.cols() == b.cols());
    const int m = a.rows(), k = a.cols(), n = b.rows();
    Var<T> out = tp.make(m, n, detail::any_grad<T>({&a, &b}));
    const T* A = a.n->val.data();
    const T* B = b.n->val.data();
    T* C = out.n->val.data();
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
            T s = T(0);
            const T* Ai = A + i * k;
            const T* Bj = B + j * k;
            for (int p = 0; p < k; ++p) s += Ai[p] * Bj[p];
            C[i * n + j] = s;
        }
    if (out.n->needs_grad)
        out.n->back = [a, b, out, m, k, n]() {
            const T* G = out.n->grad.data();
            if (a.n->needs_grad) {
                T* GA = a.n->grad.data();
                const T* B = b.n->val.data();
                for (int i = 0; i < m; ++i)
                    for (int j = 0; j < n; ++j) {
                        const T g = G[i * n + j];
                        if (g == T(0)) continue;
                        const T* Bj = B + j * k;
                        T* GAi = GA + i * k;
                        for (int p = 0; p < k; ++p) GAi[p] += g * Bj[p];
                    }
            }
            if (b.n->needs_grad) {
                T* GB = b.n->grad.data();
                const T* A = a.n->val.data();
                for (int i = 0; i < m; ++i)
                    for (int j = 0; j < n; ++j) {
                        const T g = G[i * n + j];
                        if (g == T(0)) continue;
                        const T* Ai = A + i * k;
                        T* GBj = GB + j * k;
                        for (int p = 0; p < k; ++p) GBj[p] += g * Ai[p];
                    }
            }
        };
    return out;
}

// Broadcast-add a row vector b [1,n] to every row of a [m,n].
template <class T>
Var<T> add_rowvec(Tape<T>& tp, Var<T> a, Var<T> b) {
    assert(b.n->numel() == a.cols());
    const int m = a.rows(), n = a.cols();
    Var<T> out = tp.make(m, n, detail::any_grad<T>({&a, &b}));
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) out.n->val[i * n + j] = a.n->val[i * n + j] + b.n->val[j];
    if (out.n->needs_grad)
        out.n->back = [a, b, out, m, n]() {
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j) {
                    const T g = out.n->grad[i * n + j];
                    if (a.n->needs_grad) a.n->grad[i * n + j] += g;
                    if (b.n->needs_grad) b.n->grad[j] += g;
                }
        };
    return out;
}

template <class T>
Var<T> linear(Tape<T>& tp, Var<T> x, Var<T> w, Var<T> b) {
    return add_rowvec(tp, matmul(tp, x, w), b);
}

// ---- shape ops ----

template <class T>
Var<T> concat_rows(Tape<T>& tp, const std::vector<Var<T>>& parts) {
    assert(!parts.empty());
    const int n = parts[0].cols();
    int m = 0;
    bool ng = false;
    for (const auto& p : parts) {
        assert(p.cols() == n);
        m += p.rows();
        ng = ng || p.n->needs_grad;
    }
    Var<T> out = tp.make(m, n, ng);
    int r = 0;
    for (const auto& p : parts) {
        std::copy(p.n->val.begin(), p.n->val.end(), out.n->val.begin() + static_cast<std::size_t>(r) * n);
        r += p.rows();
    }
    if (out.n->needs_grad) {
        std::vector<Var<T>> ps = parts;
        out.n->back = [ps, out, n]() {
            int r = 0;
            for (const auto& p : ps) {
                if (p.n->needs_grad)
                    for (int i = 0; i < p.n->numel(); ++i)
                        p.n->grad[i] += out.n->grad[static_cast<std::size_t>(r) * n + i];
                r += p.rows();
            }
        };
    }
    return out;
}

template <class T>
Var<T> slice_rows(Tape<T>& tp, Var<T> a, int r0, int rows) {
    assert(r0 >= 0 && r0 + rows <= a.rows());
    const int n = a.cols();
    Var<T> out = tp.make(rows, n, a.n->needs_grad);
    std::copy(a.n->val.begin() + static_cast<std::size_t>(r0) * n,
              a.n->val.begin() + static_cast<std::size_t>(r0 + rows) * n, out.n->val.begin());
    if (out.n->needs_grad)
        out.n->back = [a, out, r0, n]() {
            for (int i = 0; i < out.n->numel(); ++i)
                a.n->grad[static_cast<std::size_t>(r0) * n + i] += out.n->grad[i];
        };
    return out;
}

template <class T>
Var<T> slice_cols(Tape<T>& tp, Var<T> a, int c0, int cols) {
    assert(c0 >= 0 && c0 + cols <= a.cols());
    const int m = a.rows(), n = a.cols();
    Var<T> out = tp.make(m, cols, a.n->needs_grad);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < cols; ++j) out.n->val[i * cols + j] = a.n->val[i * n + c0 + j];
    if (out.n->needs_grad)
        out.n->back = [a, out, c0, m, n, cols]() {
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < cols; ++j) a.n->grad[i * n + c0 + j] += out.n->grad[i * cols + j];
        };
    return out;
}

template <class T>
Var<T> concat_cols(Tape<T>& tp, const std::vector<Var<T>>& parts) {
    assert(!parts.empty());
    const int m = parts[0].rows();
    int n = 0;
    bool ng = false;
    for (const auto& p : parts) {
        assert(p.rows() == m);
        n += p.cols();
        ng = ng || p.n->needs_grad;
    }
    Var<T> out = tp.make(m, n, ng);
    int c = 0;
    for (const auto& p : parts) {
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < p.cols(); ++j) out.n->val[i * n + c + j] = p.n->val[i * p.cols() + j];
        c += p.cols();
    }
    if (out.n->needs_grad) {
        std::vector<Var<T>> ps = parts;
        out.n->back = [ps, out, m, n]() {
            int c = 0;
            for (const auto& p : ps) {
                if (p.n->needs_grad)
                    for (int i = 0; i < m; ++i)
                        for (int j = 0; j < p.cols(); ++j)
                            p.n->grad[i * p.cols() + j] += out.n->grad[i * n + c + j];
                c += p.cols();
            }
        };
    }
    return out;
}

// Identity copy; gradient accumulates back into the source. Used for per-clip
// copies of the shared message-token parameter.
template <class T>
Var<T> copy(Tape<T>& tp, Var<T> a) {
    Var<T> out = tp.make(a.rows(), a.cols(), a.n->needs_grad);
    out.n->val = a.n->val;
    if (out.n->needs_grad)
        out.n->back = [a, out]() {
            for (int i = 0; i < out.n->numel(); ++i) a.n->grad[i] += out.n->grad[i];
        };
    return out;
}

// ---- reductions ----

template <class T>
Var<T> mean_rows(Tape<T>& tp, Var<T> a) {
    const int m = a.rows(), n = a.cols();
    Var<T> out = tp.make(1, n, a.n->needs_grad);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) out.n->val[j] += a.n->val[i * n + j];
    for (int j = 0; j < n; ++j) out.n->val[j] /= T(m);
    if (out.n->needs_grad)
        out.n->back = [a, out, m, n]() {
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j) a.n->grad[i * n + j] += out.n->grad[j] / T(m);
        };
    return out;
}

template <class T>
Var<T> sum_all(Tape<T>& tp, Var<T> a) {
    Var<T> out = tp.make(1, 1, a.n->needs_grad);
    T s = T(0);
    for (int i = 0; i < a.n->numel(); ++i) s += a.n->val[i];
    out.n->val[0] = s;
    if (out.n->needs_grad)
        out.n->back = [a, out]() {
            for (int i = 0; i < a.n->numel(); ++i) a.n->grad[i] += out.n->grad[0];
        };
    return out;
}

template <class T>
Var<T> mean_all(Tape<T>& tp, Var<T> a) {
    return scale(tp, sum_all(tp, a), T(1) / T(a.n->numel()));
}

// ---- normalization / attention pieces ----

// Row-wise softmax with an optional key mask: masked columns get weight
// exactly 0. A fully-masked row falls back to uniform over unmasked... there
// are none by construction (feature keys are never masked); assert instead.
template <class T>
Var<T> softmax_rows(Tape<T>& tp, Var<T> a, const std::vector<std::uint8_t>* keep = nullptr) {
    const int m = a.rows(), n = a.cols();
    assert(!keep || static_cast<int>(keep->size()) == n);
    Var<T> out = tp.make(m, n, a.n->needs_grad);
    for (int i = 0; i < m; ++i) {
        T mx = -std::numeric_limits<T>::infinity();
        for (int j = 0; j < n; ++j)
            if (!keep || (*keep)[j]) mx = std::max(mx, a.n->val[i * n + j]);
        assert(std::isfinite(static_cast<double>(mx)));
        T z = T(0);
        for (int j = 0; j < n; ++j) {
            if (keep && !(*keep)[j]) {
                out.n->val[i * n + j] = T(0);
                continue;
            }
            const T e = std::exp(a.n->val[i * n + j] - mx);
            out.n->val[i * n + j] = e;
            z += e;
        }
        for (int j = 0; j < n; ++j) out.n->val[i * n + j] /= z;
    }
    if (out.n->needs_grad)
        out.n->back = [a, out, m, n]() {
            for (int i = 0; i < m; ++i) {
                T dot = T(0);
                for (int j = 0; j < n; ++j) dot += out.n->grad[i * n + j] * out.n->val[i * n + j];
                for (int j = 0; j < n; ++j) {
                    const T p = out.n->val[i * n + j];
                    // p == 0 on masked columns, so they contribute no gradient.
                    a.n->grad[i * n + j] += p * (out.n->grad[i * n + j] - dot);
                }
            }
        };
    return out;
}

template <class T>
Var<T> layer_norm_rows(Tape<T>& tp, Var<T> a, Var<T> gamma, Var<T> beta, T eps = T(1e-5)) {
    const int m = a.rows(), n = a.cols();
    assert(gamma.n->numel() == n && beta.n->numel() == n);
    Var<T> out = tp.make(m, n, detail::any_grad<T>({&a, &gamma, &beta}));
    std::vector<T> inv_std(m), mean(m);
    std::vector<T> xhat(static_cast<std::size_t>(m) * n);
    for (int i = 0; i < m; ++i) {
        T mu = T(0);
        for (int j = 0; j < n; ++j) mu += a.n->val[i * n + j];
        mu /= T(n);
        T var = T(0);
        for (int j = 0; j < n; ++j) {
            const T d = a.n->val[i * n + j] - mu;
            var += d * d;
        }
        var /= T(n);
        const T is = T(1) / std::sqrt(var + eps);
        mean[i] = mu;
        inv_std[i] = is;
        for (int j = 0; j < n; ++j) {
            const T xh = (a.n->val[i * n + j] - mu) * is;
            xhat[i * n + j] = xh;
            out.n->val[i * n + j] = gamma.n->val[j] * xh + beta.n->val[j];
        }
    }
    if (out.n->needs_grad) {
        auto xh = std::make_shared<std::vector<T>>(std::move(xhat));
        auto is = std::make_shared<std::vector<T>>(std::move(inv_std));
        out.n->back = [a, gamma, beta, out, xh, is, m, n]() {
            for (int i = 0; i < m; ++i) {
                T sum_g = T(0), sum_gx = T(0);
                for (int j = 0; j < n; ++j) {
                    const T gy = out.n->grad[i * n + j];
                    if (gamma.n->needs_grad) gamma.n->grad[j] += gy * (*xh)[i * n + j];
                    if (beta.n->needs_grad) beta.n->grad[j] += gy;
                    const T gxh = gy * gamma.n->val[j];
                    sum_g += gxh;
                    sum_gx += gxh * (*xh)[i * n + j];
                }
                if (a.n->needs_grad)
                    for (int j = 0; j < n; ++j) {
                        const T gxh = out.n->grad[i * n + j] * gamma.n->val[j];
                        a.n->grad[i * n + j] +=
                            (*is)[i] * (gxh - sum_g / T(n) - (*xh)[i * n + j] * sum_gx / T(n));
                    }
            }
        };
    }
    return out;
}

// Row-wise L2 normalization with norm clamped below at `eps` (clamped rows
// behave as x/eps, keeping the zero-norm retrieval fallback differentiable).
template <class T>
Var<T> normalize_rows(Tape<T>& tp, Var<T> a, T eps = T(1e-12)) {
    const int m = a.rows(), n = a.cols();
    Var<T> out = tp.make(m, n, a.n->needs_grad);
    std::vector<T> norms(m);
    for (int i = 0; i < m; ++i) {
        T s = T(0);
        for (int j = 0; j < n; ++j) s += a.n->val[i * n + j] * a.n->val[i * n + j];
        const T nr = std::sqrt(s);
        norms[i] = nr;
        const T div = nr > eps ? nr : eps;
        for (int j = 0; j < n; ++j) out.n->val[i * n + j] = a.n->val[i * n + j] / div;
    }
    if (out.n->needs_grad) {
        auto nm = std::make_shared<std::vector<T>>(std::move(norms));
        out.n->back = [a, out, nm, m, n, eps]() {
            for (int i = 0; i < m; ++i) {
                const T nr = (*nm)[i];
                if (nr > eps) {
                    T dot = T(0);
                    for (int j = 0; j < n; ++j) dot += out.n->grad[i * n + j] * out.n->val[i * n + j];
                    for (int j = 0; j < n; ++j)
                        a.n->grad[i * n + j] += (out.n->grad[i * n + j] - out.n->val[i * n + j] * dot) / nr;
                } else {
                    for (int j = 0; j < n; ++j) a.n->grad[i * n + j] += out.n->grad[i * n + j] / eps;
                }
            }
        };
    }
    return out;
}

// Fused softmax + cross-entropy, mean over rows flagged in `include`.
// Equals -(1/N) sum log softmax(logits)[label] with N = included rows.
template <class T>
Var<T> softmax_ce(Tape<T>& tp, Var<T> logits, const std::vector<int>& labels,
                  const std::vector<std::uint8_t>& include) {
    const int m = logits.rows(), K = logits.cols();
    assert(static_cast<int>(labels.size()) == m && static_cast<int>(include.size()) == m);
    int count = 0;
    for (int i = 0; i < m; ++i)
        if (include[i]) ++count;
    Var<T> out = tp.make(1, 1, logits.n->needs_grad);
    auto probs = std::make_shared<std::vector<T>>(static_cast<std::size_t>(m) * K);
    T loss = T(0);
    for (int i = 0; i < m; ++i) {
        T mx = logits.n->val[i * K];
        for (int j = 1; j < K; ++j) mx = std::max(mx, logits.n->val[i * K + j]);
        T z = T(0);
        for (int j = 0; j < K; ++j) {
            const T e = std::exp(logits.n->val[i * K + j] - mx);
            (*probs)[i * K + j] = e;
            z += e;
        }
        for (int j = 0; j < K; ++j) (*probs)[i * K + j] /= z;
        if (include[i]) {
            T p = (*probs)[i * K + labels[i]];
            if (p < T(1e-12)) p = T(1e-12);
            loss -= std::log(p);
        }
    }
    out.n->val[0] = count > 0 ? loss / T(count) : T(0);
    if (out.n->needs_grad && count > 0)
        out.n->back = [logits, out, probs, labels, include, m, K, count]() {
            const T g = out.n->grad[0] / T(count);
            for (int i = 0; i < m; ++i) {
                if (!include[i]) continue;
                for (int j = 0; j < K; ++j) {
                    const T y = j == labels[i] ? T(1) : T(0);
                    logits.n->grad[i * K + j] += g * ((*probs)[i * K + j] - y);
                }
            }
        };
    return out;
}

// ---- convolution (3x3, stride 2, pad 1) ----
// x is [Cin, H*W] laid out channel-major; w is [Cout, Cin*9]; b is [1, Cout].
// Output [Cout, Ho*Wo] with Ho = (H+1)/2.

template <class T>
Var<T> conv3x3_s2(Tape<T>& tp, Var<T> x, int H, int W, Var<T> w, Var<T> b) {
    const int Cin = x.rows();
    const int Cout = w.rows();
    assert(x.cols() == H * W);
    assert(w.cols() == Cin * 9);
    assert(b.n->numel() == Cout);
    const int Ho = (H + 1) / 2, Wo = (W + 1) / 2;
    Var<T> out = tp.make(Cout, Ho * Wo, detail::any_grad<T>({&x, &w, &b}));
    const T* X = x.n->val.data();
    const T* Wt = w.n->val.data();
    T* Y = out.n->val.data();
    for (int co = 0; co < Cout; ++co) {
        const T bias = b.n->val[co];
        for (int oy = 0; oy < Ho; ++oy)
            for (int ox = 0; ox < Wo; ++ox) {
                T s = bias;
                const int iy0 = oy * 2 - 1, ix0 = ox * 2 - 1;
                for (int ci = 0; ci < Cin; ++ci) {
                    const T* Xc = X + static_cast<std::size_t>(ci) * H * W;
                    const T* Wc = Wt + static_cast<std::size_t>(co) * Cin * 9 + ci * 9;
                    for (int ky = 0; ky < 3; ++ky) {
                        const int iy = iy0 + ky;
                        if (iy < 0 || iy >= H) continue;
                        for (int kx = 0; kx < 3; ++kx) {
                            const int ix = ix0 + kx;
                            if (ix < 0 || ix >= W) continue;
                            s += Wc[ky * 3 + kx] * Xc[iy * W + ix];
                        }
                    }
                }
                Y[static_cast<std::size_t>(co) * Ho * Wo + oy * Wo + ox] = s;
            }
    }
    if (out.n->needs_grad)
        out.n->back = [x, w, b, out, H, W, Ho, Wo]() {
            const int Cin = x.rows(), Cout = w.rows();
            const T* G = out.n->grad.data();
            const T* X = x.n->val.data();
            const T* Wt = w.n->val.data();
            for (int co = 0; co < Cout; ++co)
                for (int oy = 0; oy < Ho; ++oy)
                    for (int ox = 0; ox < Wo; ++ox) {
                        const T g = G[static_cast<std::size_t>(co) * Ho * Wo + oy * Wo + ox];
                        if (g == T(0)) continue;
                        if (b.n->needs_grad) b.n->grad[co] += g;
                        const int iy0 = oy * 2 - 1, ix0 = ox * 2 - 1;
                        for (int ci = 0; ci < Cin; ++ci) {
                            const T* Xc = X + static_cast<std::size_t>(ci) * H * W;
                            const T* Wc = Wt + static_cast<std::size_t>(co) * Cin * 9 + ci * 9;
                            T* GWc = w.n->needs_grad
                                         ? w.n->grad.data() + static_cast<std::size_t>(co) * Cin * 9 + ci * 9
                                         : nullptr;
                            T* GXc = x.n->needs_grad
                                         ? x.n->grad.data() + static_cast<std::size_t>(ci) * H * W
                                         : nullptr;
                            for (int ky = 0; ky < 3; ++ky) {
                                const int iy = iy0 + ky;
                                if (iy < 0 || iy >= H) continue;
                                for (int kx = 0; kx < 3; ++kx) {
                                    const int ix = ix0 + kx;
                                    if (ix < 0 || ix >= W) continue;
                                    if (GWc) GWc[ky * 3 + kx] += g * Xc[iy * W + ix];
                                    if (GXc) GXc[iy * W + ix] += g * Wc[ky * 3 + kx];
                                }
                            }
                        }
                    }
        };
    return out;
}

// Global spatial average of [C, H*W] -> [1, C].
template <class T>
Var<T> global_avg(Tape<T>& tp, Var<T> x) {
    const int C = x.rows(), S = x.cols();
    Var<T> out = tp.make(1, C, x.n->needs_grad);
    for (int c = 0; c < C; ++c) {
        T s = T(0);
        for (int i = 0; i < S; ++i) s += x.n->val[static_cast<std::size_t>(c) * S + i];
        out.n->val[c] = s / T(S);
    }
    if (out.n->needs_grad)
        out.n->back = [x, out, C, S]() {
            for (int c = 0; c < C; ++c) {
                const T g = out.n->grad[c] / T(S);
                for (int i = 0; i < S; ++i) x.n->grad[static_cast<std::size_t>(c) * S + i] += g;
            }
        };
    return out;
}

}  // namespace pmnet::ad

#endif  // PMNET_AUTODIFF_HPP
