#pragma once

// Task model M = g(f(x)): an MLP feature extractor ending in a bottleneck of
// width d, plus a linear classifier to C logits. Includes SGD with momentum,
// the polynomial learning-rate schedule, and a versioned binary checkpoint.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "lftl/tensor.hpp"

namespace lftl {

struct ModelDims {
    int input_dim = 2;
    std::vector<int> hidden = {32};
    int bottleneck = 16;  // d
    int classes = 2;      // C

    bool operator==(const ModelDims&) const = default;
};

class MlpModel {
public:
    struct Layer {
        Tensor weight;  // in x out
        Tensor bias;    // 1 x out
        bool tanh_act = true;
    };

    MlpModel() = default;

    // uniform(-s, s) init with s = 1/sqrt(fan_in)
    MlpModel(const ModelDims& dims, uint64_t seed) : dims_(dims), seed_(seed) {
        std::mt19937_64 rng(seed);
        int in = dims.input_dim;
        std::vector<int> widths = dims.hidden;
        widths.push_back(dims.bottleneck);
        for (int w : widths) {
            double s = 1.0 / std::sqrt(static_cast<double>(in));
            extractor_.push_back(
                Layer{Tensor::uniform(in, w, -s, s, rng), Tensor(1, w), true});
            in = w;
        }
        double s = 1.0 / std::sqrt(static_cast<double>(in));
        cls_weight_ = Tensor::uniform(in, dims.classes, -s, s, rng);
        cls_bias_ = Tensor(1, dims.classes);
    }

    const ModelDims& dims() const { return dims_; }
    uint64_t seed() const { return seed_; }
    std::vector<Layer>& extractor() { return extractor_; }
    const std::vector<Layer>& extractor() const { return extractor_; }
    Tensor& cls_weight() { return cls_weight_; }
    const Tensor& cls_weight() const { return cls_weight_; }
    Tensor& cls_bias() { return cls_bias_; }
    const Tensor& cls_bias() const { return cls_bias_; }

    // parameters in declaration order (extractor layers first, classifier last)
    std::vector<Tensor*> parameters() {
        std::vector<Tensor*> ps;
        for (auto& l : extractor_) {
            ps.push_back(&l.weight);
            ps.push_back(&l.bias);
        }
        ps.push_back(&cls_weight_);
        ps.push_back(&cls_bias_);
        return ps;
    }
    std::vector<const Tensor*> parameters() const {
        std::vector<const Tensor*> ps;
        for (const auto& l : extractor_) {
            ps.push_back(&l.weight);
            ps.push_back(&l.bias);
        }
        ps.push_back(&cls_weight_);
        ps.push_back(&cls_bias_);
        return ps;
    }

    // ---- plain inference (no tape) ----

    Tensor features(const Tensor& x) const {
        check_input(x);
        Tensor h = x;
        for (const auto& l : extractor_) {
            h = matmul(h, l.weight);
            for (int i = 0; i < h.rows(); ++i)
                for (int j = 0; j < h.cols(); ++j) h.at(i, j) += l.bias.at(0, j);
            if (l.tanh_act)
                for (double& v : h.data()) v = std::tanh(v);
        }
        return h;
    }

    Tensor logits(const Tensor& x) const {
        Tensor f = features(x);
        Tensor z = matmul(f, cls_weight_);
        for (int i = 0; i < z.rows(); ++i)
            for (int j = 0; j < z.cols(); ++j) z.at(i, j) += cls_bias_.at(0, j);
        return z;
    }

    Tensor probs(const Tensor& x) const { return softmax_rows(logits(x)); }

    // ---- tape-bound forward for training ----

    struct TapeVars {
        std::vector<std::pair<Tape::Var, Tape::Var>> extractor;  // (W, b)
        Tape::Var cls_weight;
        Tape::Var cls_bias;

        std::vector<Tape::Var> all() const {
            std::vector<Tape::Var> vs;
            for (const auto& [w, b] : extractor) {
                vs.push_back(w);
                vs.push_back(b);
            }
            vs.push_back(cls_weight);
            vs.push_back(cls_bias);
            return vs;
        }
    };

    TapeVars bind(Tape& tape) const {
        TapeVars vars;
        for (const auto& l : extractor_)
            vars.extractor.emplace_back(tape.leaf(l.weight), tape.leaf(l.bias));
        vars.cls_weight = tape.leaf(cls_weight_);
        vars.cls_bias = tape.leaf(cls_bias_);
        return vars;
    }

    Tape::Var features_on(Tape& tape, const TapeVars& vars, Tape::Var x) const {
        Tape::Var h = x;
        for (size_t i = 0; i < extractor_.size(); ++i) {
            h = tape.add_rowvec(tape.matmul(h, vars.extractor[i].first),
                                vars.extractor[i].second);
            if (extractor_[i].tanh_act) h = tape.tanh(h);
        }
        return h;
    }

    Tape::Var logits_on(Tape& tape, const TapeVars& vars, Tape::Var x) const {
        return tape.add_rowvec(tape.matmul(features_on(tape, vars, x), vars.cls_weight),
                               vars.cls_bias);
    }

private:
    void check_input(const Tensor& x) const {
        if (x.cols() != dims_.input_dim)
            throw std::invalid_argument("model: input width " + std::to_string(x.cols()) +
                                        " != input_dim " + std::to_string(dims_.input_dim));
    }

    ModelDims dims_;
    uint64_t seed_ = 0;
    std::vector<Layer> extractor_;
    Tensor cls_weight_;
    Tensor cls_bias_;
};

// eta = eta0 * (1 + 10 p)^(-0.75), p in [0,1]
inline double lr_at(double eta0, double p) {
    if (p < 0.0 || p > 1.0)
        throw std::invalid_argument("lr_at: progress must lie in [0,1]");
    return eta0 * std::pow(1.0 + 10.0 * p, -0.75);
}

// classic momentum with weight decay folded into the gradient:
//   v <- momentum*v + g + wd*theta;  theta <- theta - lr*v
class SgdOptimizer {
public:
    explicit SgdOptimizer(double momentum = 0.9, double weight_decay = 1e-3)
        : momentum_(momentum), weight_decay_(weight_decay) {}

    void step(MlpModel& model, const std::vector<Tensor>& grads, double lr,
              bool freeze_classifier = false) {
        auto params = model.parameters();
        if (grads.size() != params.size())
            throw std::runtime_error("sgd_step: gradient count != parameter count");
        if (velocity_.empty())
            for (const auto* p : params)
                velocity_.emplace_back(p->rows(), p->cols());
        size_t n_cls = 2;  // classifier weight + bias sit at the tail
        for (size_t i = 0; i < params.size(); ++i) {
            if (freeze_classifier && i >= params.size() - n_cls) continue;
            Tensor& v = velocity_[i];
            Tensor& theta = *params[i];
            const Tensor& g = grads[i];
            if (!theta.same_shape(g))
                throw std::runtime_error("sgd_step: gradient shape mismatch");
            for (size_t k = 0; k < theta.size(); ++k) {
                v[k] = momentum_ * v[k] + g[k] + weight_decay_ * theta[k];
                theta[k] -= lr * v[k];
            }
        }
    }

    double momentum() const { return momentum_; }
    double weight_decay() const { return weight_decay_; }

private:
    double momentum_;
    double weight_decay_;
    std::vector<Tensor> velocity_;
};

// ---- checkpoint: versioned header + little-endian f64 payload ----

class CheckpointError : public std::runtime_error {
public:
    enum class Kind { BadMagic, BadVersion, Truncated, DimMismatch, Io };
    CheckpointError(Kind kind, const std::string& msg)
        : std::runtime_error(msg), kind_(kind) {}
    Kind kind() const { return kind_; }

private:
    Kind kind_;
};

namespace detail {
inline constexpr char kCkptMagic[8] = {'L', 'F', 'T', 'L', 'C', 'K', 'P', 'T'};
inline constexpr uint32_t kCkptVersion = 1;

inline void write_u32(std::ostream& os, uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 4);
}
inline void write_u64(std::ostream& os, uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 8);
}
inline void write_f64(std::ostream& os, double v) {
    uint64_t bits;
    std::memcpy(&bits, &v, 8);
    write_u64(os, bits);
}
inline uint32_t read_u32(std::istream& is) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4))
        throw CheckpointError(CheckpointError::Kind::Truncated, "checkpoint truncated");
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
    return v;
}
inline uint64_t read_u64(std::istream& is) {
    unsigned char b[8];
    if (!is.read(reinterpret_cast<char*>(b), 8))
        throw CheckpointError(CheckpointError::Kind::Truncated, "checkpoint truncated");
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
    return v;
}
inline double read_f64(std::istream& is) {
    uint64_t bits = read_u64(is);
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
}
}  // namespace detail

inline void save_checkpoint(const MlpModel& model, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os)
        throw CheckpointError(CheckpointError::Kind::Io, "cannot open for write: " + path);
    using namespace detail;
    os.write(kCkptMagic, 8);
    write_u32(os, kCkptVersion);
    write_u64(os, model.seed());
    const ModelDims& d = model.dims();
    write_u32(os, static_cast<uint32_t>(d.input_dim));
    write_u32(os, static_cast<uint32_t>(d.hidden.size()));
    for (int h : d.hidden) write_u32(os, static_cast<uint32_t>(h));
    write_u32(os, static_cast<uint32_t>(d.bottleneck));
    write_u32(os, static_cast<uint32_t>(d.classes));
    for (const Tensor* p : model.parameters())
        for (double v : p->data()) write_f64(os, v);
    if (!os)
        throw CheckpointError(CheckpointError::Kind::Io, "write failed: " + path);
}

inline MlpModel load_checkpoint(const std::string& path,
                                const ModelDims* expected = nullptr) {
    std::ifstream is(path, std::ios::binary);
    if (!is)
        throw CheckpointError(CheckpointError::Kind::Io, "cannot open for read: " + path);
    using namespace detail;
    char magic[8];
    if (!is.read(magic, 8))
        throw CheckpointError(CheckpointError::Kind::Truncated, "checkpoint truncated");
    if (std::memcmp(magic, kCkptMagic, 8) != 0)
        throw CheckpointError(CheckpointError::Kind::BadMagic, "bad checkpoint magic");
    uint32_t version = read_u32(is);
    if (version != kCkptVersion)
        throw CheckpointError(CheckpointError::Kind::BadVersion,
                              "unsupported checkpoint version " + std::to_string(version));
    uint64_t seed = read_u64(is);
    ModelDims dims;
    dims.input_dim = static_cast<int>(read_u32(is));
    uint32_t n_hidden = read_u32(is);
    dims.hidden.clear();
    for (uint32_t i = 0; i < n_hidden; ++i)
        dims.hidden.push_back(static_cast<int>(read_u32(is)));
    dims.bottleneck = static_cast<int>(read_u32(is));
    dims.classes = static_cast<int>(read_u32(is));
    if (expected && !(dims == *expected))
        throw CheckpointError(CheckpointError::Kind::DimMismatch,
                              "checkpoint dims do not match expectation");
    MlpModel model(dims, seed);
    for (Tensor* p : model.parameters())
        for (double& v : p->data()) v = read_f64(is);
    return model;
}

}  // namespace lftl
