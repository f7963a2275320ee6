#pragma once

// Dense 2-D real matrices with reverse-mode differentiation over a small,
// fixed op set. A Tape records each forward op together with a backward
// closure; replaying the tape in reverse accumulates gradients into leaves.

#include <algorithm>
#include <cmath>
#include <functional>
#include <initializer_list>
#include <memory>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace lftl {

inline constexpr double kLogEps = 1e-12;   // floor inside log_clamped
inline constexpr double kNormEps = 1e-12;  // added to norm products in cosine

class Tensor {
public:
    Tensor() = default;
    Tensor(int rows, int cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(static_cast<size_t>(rows) * cols, fill) {
        if (rows < 0 || cols < 0)
            throw std::invalid_argument("Tensor: negative dimension");
    }
    Tensor(int rows, int cols, std::vector<double> data)
        : rows_(rows), cols_(cols), data_(std::move(data)) {
        if (data_.size() != static_cast<size_t>(rows) * cols)
            throw std::invalid_argument("Tensor: data length != rows*cols");
    }

    static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows) {
        int r = static_cast<int>(rows.size());
        int c = r > 0 ? static_cast<int>(rows.begin()->size()) : 0;
        Tensor t(r, c);
        int i = 0;
        for (const auto& row : rows) {
            if (static_cast<int>(row.size()) != c)
                throw std::invalid_argument("Tensor::from_rows: ragged rows");
            int j = 0;
            for (double v : row) t.at(i, j++) = v;
            ++i;
        }
        return t;
    }

    static Tensor identity(int n) {
        Tensor t(n, n);
        for (int i = 0; i < n; ++i) t.at(i, i) = 1.0;
        return t;
    }

    static Tensor uniform(int rows, int cols, double lo, double hi, std::mt19937_64& rng) {
        Tensor t(rows, cols);
        std::uniform_real_distribution<double> dist(lo, hi);
        for (double& v : t.data_) v = dist(rng);
        return t;
    }

    int rows() const { return rows_; }
    int cols() const { return cols_; }
    size_t size() const { return data_.size(); }

    double& at(int r, int c) { return data_[static_cast<size_t>(r) * cols_ + c]; }
    double at(int r, int c) const { return data_[static_cast<size_t>(r) * cols_ + c]; }
    double& operator[](size_t i) { return data_[i]; }
    double operator[](size_t i) const { return data_[i]; }

    std::vector<double>& data() { return data_; }
    const std::vector<double>& data() const { return data_; }

    bool same_shape(const Tensor& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

    bool all_finite() const {
        return std::all_of(data_.begin(), data_.end(),
                           [](double v) { return std::isfinite(v); });
    }

    std::vector<double> row(int r) const {
        return {data_.begin() + static_cast<size_t>(r) * cols_,
                data_.begin() + static_cast<size_t>(r + 1) * cols_};
    }

private:
    int rows_ = 0;
    int cols_ = 0;
    std::vector<double> data_;
};

// ---- plain (non-tape) matrix helpers; also used as the forward halves of
//      the tape ops below ----

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.cols() != b.rows())
        throw std::invalid_argument("matmul: inner dimensions disagree (" +
                                    std::to_string(a.cols()) + " vs " +
                                    std::to_string(b.rows()) + ")");
    Tensor out(a.rows(), b.cols());
    for (int i = 0; i < a.rows(); ++i)
        for (int k = 0; k < a.cols(); ++k) {
            double aik = a.at(i, k);
            if (aik == 0.0) continue;
            for (int j = 0; j < b.cols(); ++j)
                out.at(i, j) += aik * b.at(k, j);
        }
    return out;
}

inline Tensor transpose(const Tensor& a) {
    Tensor out(a.cols(), a.rows());
    for (int i = 0; i < a.rows(); ++i)
        for (int j = 0; j < a.cols(); ++j)
            out.at(j, i) = a.at(i, j);
    return out;
}

inline Tensor softmax_rows(const Tensor& z) {
    Tensor out(z.rows(), z.cols());
    for (int i = 0; i < z.rows(); ++i) {
        double m = -std::numeric_limits<double>::infinity();
        for (int j = 0; j < z.cols(); ++j) m = std::max(m, z.at(i, j));
        double sum = 0.0;
        for (int j = 0; j < z.cols(); ++j) {
            double e = std::exp(z.at(i, j) - m);
            out.at(i, j) = e;
            sum += e;
        }
        for (int j = 0; j < z.cols(); ++j) out.at(i, j) /= sum;
    }
    return out;
}

inline Tensor log_clamped(const Tensor& p) {
    Tensor out(p.rows(), p.cols());
    for (size_t i = 0; i < p.size(); ++i) {
        if (p[i] < 0.0)
            throw std::domain_error("log_clamped: negative entry");
        out[i] = std::log(std::max(p[i], kLogEps));
    }
    return out;
}

inline Tensor cosine_sim_matrix(const Tensor& a, const Tensor& b) {
    if (a.cols() != b.cols())
        throw std::invalid_argument("cosine_sim_matrix: feature widths disagree");
    std::vector<double> na(a.rows()), nb(b.rows());
    for (int i = 0; i < a.rows(); ++i) {
        double s = 0.0;
        for (int k = 0; k < a.cols(); ++k) s += a.at(i, k) * a.at(i, k);
        na[i] = std::sqrt(s);
    }
    for (int j = 0; j < b.rows(); ++j) {
        double s = 0.0;
        for (int k = 0; k < b.cols(); ++k) s += b.at(j, k) * b.at(j, k);
        nb[j] = std::sqrt(s);
    }
    Tensor out(a.rows(), b.rows());
    for (int i = 0; i < a.rows(); ++i)
        for (int j = 0; j < b.rows(); ++j) {
            double dot = 0.0;
            for (int k = 0; k < a.cols(); ++k) dot += a.at(i, k) * b.at(j, k);
            out.at(i, j) = dot / (na[i] * nb[j] + kNormEps);
        }
    return out;
}

// ---- reverse-mode tape ----

class Tape {
public:
    struct Var {
        int id = -1;
        int rows = 0;
        int cols = 0;
    };

    Var leaf(Tensor value) {
        Var v{static_cast<int>(nodes_.size()), value.rows(), value.cols()};
        nodes_.push_back(Node{std::move(value), {}, nullptr});
        return v;
    }

    const Tensor& value(Var v) const { return nodes_[v.id].value; }
    const Tensor& grad(Var v) const { return nodes_[v.id].grad; }

    Var matmul(Var a, Var b) {
        Tensor out = lftl::matmul(value(a), value(b));
        return record(std::move(out), [this, a, b](const Tensor& g) {
            accumulate(a, lftl::matmul(g, transpose(value(b))));
            accumulate(b, lftl::matmul(transpose(value(a)), g));
        });
    }

    Var add(Var a, Var b) {
        check_same(a, b, "add");
        Tensor out = value(a);
        for (size_t i = 0; i < out.size(); ++i) out[i] += value(b)[i];
        return record(std::move(out), [this, a, b](const Tensor& g) {
            accumulate(a, g);
            accumulate(b, g);
        });
    }

    Var sub(Var a, Var b) {
        check_same(a, b, "sub");
        Tensor out = value(a);
        for (size_t i = 0; i < out.size(); ++i) out[i] -= value(b)[i];
        return record(std::move(out), [this, a, b](const Tensor& g) {
            accumulate(a, g);
            Tensor neg = g;
            for (double& v : neg.data()) v = -v;
            accumulate(b, neg);
        });
    }

    // elementwise product
    Var mul(Var a, Var b) {
        check_same(a, b, "mul");
        Tensor out = value(a);
        for (size_t i = 0; i < out.size(); ++i) out[i] *= value(b)[i];
        return record(std::move(out), [this, a, b](const Tensor& g) {
            Tensor ga = g, gb = g;
            for (size_t i = 0; i < g.size(); ++i) {
                ga[i] *= value(b)[i];
                gb[i] *= value(a)[i];
            }
            accumulate(a, ga);
            accumulate(b, gb);
        });
    }

    // broadcast a 1 x m row vector over every row of an n x m matrix
    Var add_rowvec(Var a, Var bias) {
        if (bias.rows != 1 || bias.cols != a.cols)
            throw std::invalid_argument("add_rowvec: bias must be 1 x cols(a)");
        Tensor out = value(a);
        for (int i = 0; i < a.rows; ++i)
            for (int j = 0; j < a.cols; ++j)
                out.at(i, j) += value(bias).at(0, j);
        return record(std::move(out), [this, a, bias](const Tensor& g) {
            accumulate(a, g);
            Tensor gb(1, g.cols());
            for (int i = 0; i < g.rows(); ++i)
                for (int j = 0; j < g.cols(); ++j)
                    gb.at(0, j) += g.at(i, j);
            accumulate(bias, gb);
        });
    }

    Var scale(Var a, double s) {
        Tensor out = value(a);
        for (double& v : out.data()) v *= s;
        return record(std::move(out), [this, a, s](const Tensor& g) {
            Tensor ga = g;
            for (double& v : ga.data()) v *= s;
            accumulate(a, ga);
        });
    }

    Var relu(Var a) {
        Tensor out = value(a);
        for (double& v : out.data()) v = std::max(v, 0.0);
        return record(std::move(out), [this, a](const Tensor& g) {
            Tensor ga = g;
            for (size_t i = 0; i < g.size(); ++i)
                if (value(a)[i] <= 0.0) ga[i] = 0.0;
            accumulate(a, ga);
        });
    }

    Var tanh(Var a) {
        Tensor out = value(a);
        for (double& v : out.data()) v = std::tanh(v);
        int id = static_cast<int>(nodes_.size());
        return record(std::move(out), [this, a, id](const Tensor& g) {
            const Tensor& t = nodes_[id].value;
            Tensor ga = g;
            for (size_t i = 0; i < g.size(); ++i) ga[i] *= 1.0 - t[i] * t[i];
            accumulate(a, ga);
        });
    }

    Var softmax_rows(Var z) {
        Tensor out = lftl::softmax_rows(value(z));
        int id = static_cast<int>(nodes_.size());
        return record(std::move(out), [this, z, id](const Tensor& g) {
            const Tensor& p = nodes_[id].value;
            Tensor gz(p.rows(), p.cols());
            for (int i = 0; i < p.rows(); ++i) {
                double dot = 0.0;
                for (int j = 0; j < p.cols(); ++j) dot += g.at(i, j) * p.at(i, j);
                for (int j = 0; j < p.cols(); ++j)
                    gz.at(i, j) = p.at(i, j) * (g.at(i, j) - dot);
            }
            accumulate(z, gz);
        });
    }

    Var log_clamped(Var p) {
        Tensor out = lftl::log_clamped(value(p));
        return record(std::move(out), [this, p](const Tensor& g) {
            Tensor gp = g;
            for (size_t i = 0; i < g.size(); ++i) {
                double v = value(p)[i];
                gp[i] = v > kLogEps ? g[i] / v : 0.0;  // flat in the clamped region
            }
            accumulate(p, gp);
        });
    }

    // cosine similarity against a constant right-hand matrix; gradient flows
    // into the left operand only
    Var cosine_sim_const(Var a, Tensor b) {
        Tensor out = lftl::cosine_sim_matrix(value(a), b);
        int id = static_cast<int>(nodes_.size());
        auto bp = std::make_shared<Tensor>(std::move(b));
        return record(std::move(out), [this, a, bp, id](const Tensor& g) {
            const Tensor& av = value(a);
            const Tensor& s = nodes_[id].value;
            Tensor ga(av.rows(), av.cols());
            std::vector<double> nb(bp->rows());
            for (int j = 0; j < bp->rows(); ++j) {
                double sum = 0.0;
                for (int k = 0; k < bp->cols(); ++k) sum += bp->at(j, k) * bp->at(j, k);
                nb[j] = std::sqrt(sum);
            }
            for (int i = 0; i < av.rows(); ++i) {
                double na = 0.0;
                for (int k = 0; k < av.cols(); ++k) na += av.at(i, k) * av.at(i, k);
                na = std::sqrt(na);
                for (int j = 0; j < bp->rows(); ++j) {
                    double denom = na * nb[j] + kNormEps;
                    double gij = g.at(i, j);
                    if (gij == 0.0) continue;
                    for (int k = 0; k < av.cols(); ++k) {
                        double d = bp->at(j, k) / denom;
                        if (na > 0.0)
                            d -= s.at(i, j) * nb[j] * av.at(i, k) / (na * denom);
                        ga.at(i, k) += gij * d;
                    }
                }
            }
            accumulate(a, ga);
        });
    }

    Var row_sum(Var a) {
        Tensor out(a.rows, 1);
        for (int i = 0; i < a.rows; ++i)
            for (int j = 0; j < a.cols; ++j) out.at(i, 0) += value(a).at(i, j);
        return record(std::move(out), [this, a](const Tensor& g) {
            Tensor ga(a.rows, a.cols);
            for (int i = 0; i < a.rows; ++i)
                for (int j = 0; j < a.cols; ++j) ga.at(i, j) = g.at(i, 0);
            accumulate(a, ga);
        });
    }

    Var row_mean(Var a) {
        Var s = row_sum(a);
        return scale(s, 1.0 / a.cols);
    }

    Var sum_all(Var a) {
        Tensor out(1, 1);
        for (double v : value(a).data()) out[0] += v;
        return record(std::move(out), [this, a](const Tensor& g) {
            Tensor ga(a.rows, a.cols, g[0]);
            accumulate(a, ga);
        });
    }

    Var mean_all(Var a) {
        return scale(sum_all(a), 1.0 / (static_cast<double>(a.rows) * a.cols));
    }

    // seeds d(loss)/d(loss) = 1 and replays recorded ops in reverse order
    void backward(Var loss) {
        if (loss.rows != 1 || loss.cols != 1)
            throw std::invalid_argument("backward: loss must be 1x1");
        for (auto& n : nodes_)
            n.grad = Tensor(n.value.rows(), n.value.cols());
        nodes_[loss.id].grad[0] = 1.0;
        for (int i = loss.id; i >= 0; --i)
            if (nodes_[i].back) nodes_[i].back(nodes_[i].grad);
    }

    size_t node_count() const { return nodes_.size(); }

private:
    struct Node {
        Tensor value;
        Tensor grad;
        std::function<void(const Tensor&)> back;
    };

    Var record(Tensor out, std::function<void(const Tensor&)> back) {
        Var v{static_cast<int>(nodes_.size()), out.rows(), out.cols()};
        nodes_.push_back(Node{std::move(out), {}, std::move(back)});
        return v;
    }

    void accumulate(Var v, const Tensor& g) {
        Tensor& dst = nodes_[v.id].grad;
        for (size_t i = 0; i < dst.size(); ++i) dst[i] += g[i];
    }

    static void check_same(Var a, Var b, const char* op) {
        if (a.rows != b.rows || a.cols != b.cols)
            throw std::invalid_argument(std::string(op) + ": shape mismatch");
    }

    std::vector<Node> nodes_;
};

// Central-difference gradient check. `build` registers the given leaves on a
// fresh tape and returns the scalar loss; the analytic gradients from one
// backward pass are compared entrywise against (f(x+h)-f(x-h))/2h.
inline double grad_check(
    const std::function<Tape::Var(Tape&, const std::vector<Tape::Var>&)>& build,
    std::vector<Tensor> leaves, double h = 1e-5) {
    auto eval = [&](const std::vector<Tensor>& pts) {
        Tape tape;
        std::vector<Tape::Var> vars;
        vars.reserve(pts.size());
        for (const auto& t : pts) vars.push_back(tape.leaf(t));
        Tape::Var loss = build(tape, vars);
        return tape.value(loss)[0];
    };

    Tape tape;
    std::vector<Tape::Var> vars;
    for (const auto& t : leaves) vars.push_back(tape.leaf(t));
    Tape::Var loss = build(tape, vars);
    tape.backward(loss);

    double max_rel = 0.0;
    for (size_t li = 0; li < leaves.size(); ++li) {
        const Tensor& g = tape.grad(vars[li]);
        for (size_t i = 0; i < leaves[li].size(); ++i) {
            double orig = leaves[li][i];
            leaves[li][i] = orig + h;
            double fp = eval(leaves);
            leaves[li][i] = orig - h;
            double fm = eval(leaves);
            leaves[li][i] = orig;
            double num = (fp - fm) / (2.0 * h);
            double ana = g[i];
            double rel = std::abs(ana - num) /
                         std::max({std::abs(ana), std::abs(num), 1e-8});
            max_rel = std::max(max_rel, rel);
        }
    }
    return max_rel;
}

}  // namespace lftl
