#include "echosonar/model.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>

#include <json.hpp>

namespace echosonar {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ColMat = Eigen::MatrixXd;
using Eigen::Map;

void ModelConfig::validate() const {
    if (channels < 1 || cells < 4 || window_len < 1) {
        throw ConfigError("model: input dimensions must be positive");
    }
    if (folds < 1 || window_len % folds != 0) {
        throw ConfigError("model: folds must evenly divide window_len");
    }
    if (kernel != 3) {
        throw ConfigError("model: only 3x3 kernels are supported");
    }
    if (pool != 2) {
        throw ConfigError("model: only 2x2 pooling is supported");
    }
    if (cells % 4 != 0) {
        throw ConfigError("model: cells must be divisible by 4 (two pools)");
    }
    if (fold_w() < 2) {
        throw ConfigError("model: window_len / folds must be >= 2");
    }
    if (output != 63) {
        throw ConfigError("model: output width must be 63 (21 joints x 3)");
    }
    if (conv1_out < 1 || conv2_out < 1 || hidden < 1) {
        throw ConfigError("model: layer widths must be positive");
    }
    if (!(learning_rate > 0.0) || batch_size < 1) {
        throw ConfigError("model: bad optimizer hyperparameters");
    }
}

namespace {

struct Layout {
    std::vector<ParamBlock> blocks;
    std::size_t total = 0;

    void add(const std::string& name, std::vector<std::uint64_t> dims) {
        ParamBlock block;
        block.name = name;
        block.dims = std::move(dims);
        block.offset = total;
        block.size = 1;
        for (std::uint64_t d : block.dims) {
            block.size *= d;
        }
        total += block.size;
        blocks.push_back(std::move(block));
    }
};

Layout param_layout(const ModelConfig& c) {
    const auto u = [](int v) { return static_cast<std::uint64_t>(v); };
    Layout l;
    l.add("conv1.weight", {u(c.conv1_out), u(c.channels * c.kernel * c.kernel)});
    l.add("conv1.bias", {u(c.conv1_out)});
    l.add("bn1.gamma", {u(c.conv1_out)});
    l.add("bn1.beta", {u(c.conv1_out)});
    l.add("conv2.weight", {u(c.conv2_out), u(c.conv1_out * c.kernel * c.kernel)});
    l.add("conv2.bias", {u(c.conv2_out)});
    l.add("bn2.gamma", {u(c.conv2_out)});
    l.add("bn2.beta", {u(c.conv2_out)});
    l.add("lstm.w_ih", {u(4 * c.hidden), u(c.lstm_input())});
    l.add("lstm.w_hh", {u(4 * c.hidden), u(c.hidden)});
    l.add("lstm.b_ih", {u(4 * c.hidden)});
    l.add("lstm.b_hh", {u(4 * c.hidden)});
    l.add("head.weight", {u(c.output), u(c.hidden)});
    l.add("head.bias", {u(c.output)});
    return l;
}

Layout buffer_layout(const ModelConfig& c) {
    const auto u = [](int v) { return static_cast<std::uint64_t>(v); };
    Layout l;
    l.add("bn1.running_mean", {u(c.conv1_out)});
    l.add("bn1.running_var", {u(c.conv1_out)});
    l.add("bn2.running_mean", {u(c.conv2_out)});
    l.add("bn2.running_var", {u(c.conv2_out)});
    l.add("label.mean", {u(c.output)});
    l.add("label.scale", {u(c.output)});
    return l;
}

const ParamBlock& find_block(const std::vector<ParamBlock>& blocks,
                             const std::string& name) {
    for (const ParamBlock& b : blocks) {
        if (b.name == name) {
            return b;
        }
    }
    throw ShapeError("unknown parameter block: " + name);
}

constexpr double kBnEps = 1e-5;

}  // namespace

double* ModelParams::block_data(const std::string& name) {
    return values.data() + find_block(blocks, name).offset;
}
const double* ModelParams::block_data(const std::string& name) const {
    return values.data() + find_block(blocks, name).offset;
}
double* ModelParams::buffer_data(const std::string& name) {
    return buffer_values.data() + find_block(buffer_blocks, name).offset;
}
const double* ModelParams::buffer_data(const std::string& name) const {
    return buffer_values.data() + find_block(buffer_blocks, name).offset;
}

ModelParams make_params(const ModelConfig& config) {
    config.validate();
    ModelParams p;
    Layout l = param_layout(config);
    p.blocks = l.blocks;
    p.values.assign(l.total, 0.0);
    Layout bl = buffer_layout(config);
    p.buffer_blocks = bl.blocks;
    p.buffer_values.assign(bl.total, 0.0);
    // Identity normalization and unit running variance by default.
    double* rv1 = p.buffer_data("bn1.running_var");
    std::fill(rv1, rv1 + config.conv1_out, 1.0);
    double* rv2 = p.buffer_data("bn2.running_var");
    std::fill(rv2, rv2 + config.conv2_out, 1.0);
    double* scale = p.buffer_data("label.scale");
    std::fill(scale, scale + config.output, 1.0);
    return p;
}

ModelParams init_params(const ModelConfig& config) {
    ModelParams p = make_params(config);
    std::mt19937_64 rng(config.seed);
    auto uniform_fill = [&rng](double* data, std::size_t n, double bound) {
        std::uniform_real_distribution<double> dist(-bound, bound);
        for (std::size_t i = 0; i < n; ++i) {
            data[i] = dist(rng);
        }
    };
    const auto fan = [](int n) { return 1.0 / std::sqrt(static_cast<double>(n)); };

    uniform_fill(p.block_data("conv1.weight"),
                 find_block(p.blocks, "conv1.weight").size,
                 fan(config.channels * 9));
    double* g1 = p.block_data("bn1.gamma");
    std::fill(g1, g1 + config.conv1_out, 1.0);
    uniform_fill(p.block_data("conv2.weight"),
                 find_block(p.blocks, "conv2.weight").size,
                 fan(config.conv1_out * 9));
    double* g2 = p.block_data("bn2.gamma");
    std::fill(g2, g2 + config.conv2_out, 1.0);
    uniform_fill(p.block_data("lstm.w_ih"),
                 find_block(p.blocks, "lstm.w_ih").size, fan(config.lstm_input()));
    uniform_fill(p.block_data("lstm.w_hh"),
                 find_block(p.blocks, "lstm.w_hh").size, fan(config.hidden));
    // Forget-gate bias starts open.
    double* b_ih = p.block_data("lstm.b_ih");
    std::fill(b_ih + config.hidden, b_ih + 2 * config.hidden, 1.0);
    uniform_fill(p.block_data("head.weight"),
                 find_block(p.blocks, "head.weight").size, fan(config.hidden));
    return p;
}

// ---------------------------------------------------------------------------
// Forward / backward machinery
// ---------------------------------------------------------------------------

namespace {

struct Workspace {
    int B = 0;
    std::vector<double> x;      // B x (C*K*T), max-normalized
    std::vector<double> z1, a1; // (B*F) x (C1*P1)
    std::vector<double> p1;     // (B*F) x (C1*P1p)
    std::vector<std::uint8_t> idx1;
    std::vector<double> z2, a2; // (B*F) x (C2*P2)
    std::vector<double> p2;     // (B*F) x (C2*P2p)
    std::vector<std::uint8_t> idx2;
    std::vector<double> bn1_mean, bn1_var, bn2_mean, bn2_var;
    std::vector<double> gates;  // F x (4H*B)
    std::vector<double> cstate; // F x (H*B)
    std::vector<double> tanhc;  // F x (H*B)
    std::vector<double> hstate; // (F+1) x (H*B)
    std::vector<double> net;    // 63*B, pre-affine
    std::vector<double> out;    // 63*B, millimetres
};

struct Dims {
    int C, K, T, F, fw;
    int C1, H1, W1, P1;    // conv1 image
    int H1p, W1p, P1p;     // pooled
    int C2, H2, W2, P2;
    int H2p, W2p, P2p;
    int In, H, Out;

    explicit Dims(const ModelConfig& c)
        : C(c.channels), K(c.cells), T(c.window_len), F(c.folds), fw(c.fold_w()),
          C1(c.conv1_out), H1(c.cells), W1(c.fold_w()), P1(H1 * W1),
          H1p(H1 / 2), W1p(W1 / 2), P1p(H1p * W1p),
          C2(c.conv2_out), H2(H1p), W2(W1p), P2(H2 * W2),
          H2p(H2 / 2), W2p(std::max(W2 / 2, 1)), P2p(H2p * W2p),
          In(c.lstm_input()), H(c.hidden), Out(c.output) {}
};

// cols is (C*9) x (H*W), column-major; 3x3 kernel, same padding.
void im2col3(const double* img, int C, int H, int W, ColMat& cols) {
    for (int i = 0; i < H; ++i) {
        for (int j = 0; j < W; ++j) {
            double* col = cols.data() + (static_cast<std::size_t>(i) * W + j) * C * 9;
            int r = 0;
            for (int c = 0; c < C; ++c) {
                const double* plane = img + static_cast<std::size_t>(c) * H * W;
                for (int di = -1; di <= 1; ++di) {
                    const int ii = i + di;
                    for (int dj = -1; dj <= 1; ++dj, ++r) {
                        const int jj = j + dj;
                        col[r] = (ii >= 0 && ii < H && jj >= 0 && jj < W)
                                     ? plane[ii * W + jj]
                                     : 0.0;
                    }
                }
            }
        }
    }
}

// Transpose scatter of im2col3: accumulates dcols back into dimg.
void col2im3(const ColMat& dcols, int C, int H, int W, double* dimg) {
    for (int i = 0; i < H; ++i) {
        for (int j = 0; j < W; ++j) {
            const double* col =
                dcols.data() + (static_cast<std::size_t>(i) * W + j) * C * 9;
            int r = 0;
            for (int c = 0; c < C; ++c) {
                double* plane = dimg + static_cast<std::size_t>(c) * H * W;
                for (int di = -1; di <= 1; ++di) {
                    const int ii = i + di;
                    for (int dj = -1; dj <= 1; ++dj, ++r) {
                        const int jj = j + dj;
                        if (ii >= 0 && ii < H && jj >= 0 && jj < W) {
                            plane[ii * W + jj] += col[r];
                        }
                    }
                }
            }
        }
    }
}

void maxpool2(const double* img, int C, int H, int W, double* out,
              std::uint8_t* idx, int Hp, int Wp) {
    for (int c = 0; c < C; ++c) {
        const double* plane = img + static_cast<std::size_t>(c) * H * W;
        double* oplane = out + static_cast<std::size_t>(c) * Hp * Wp;
        std::uint8_t* iplane = idx + static_cast<std::size_t>(c) * Hp * Wp;
        for (int i = 0; i < Hp; ++i) {
            for (int j = 0; j < Wp; ++j) {
                double best = plane[(2 * i) * W + 2 * j];
                std::uint8_t best_k = 0;
                for (std::uint8_t k = 1; k < 4; ++k) {
                    const int di = k >> 1;
                    const int dj = k & 1;
                    const double v = plane[(2 * i + di) * W + 2 * j + dj];
                    if (v > best) {
                        best = v;
                        best_k = k;
                    }
                }
                oplane[i * Wp + j] = best;
                iplane[i * Wp + j] = best_k;
            }
        }
    }
}

void maxpool2_backward(const double* dout, const std::uint8_t* idx, int C,
                       int H, int W, int Hp, int Wp, double* dimg) {
    for (int c = 0; c < C; ++c) {
        double* plane = dimg + static_cast<std::size_t>(c) * H * W;
        const double* oplane = dout + static_cast<std::size_t>(c) * Hp * Wp;
        const std::uint8_t* iplane = idx + static_cast<std::size_t>(c) * Hp * Wp;
        for (int i = 0; i < Hp; ++i) {
            for (int j = 0; j < Wp; ++j) {
                const std::uint8_t k = iplane[i * Wp + j];
                plane[(2 * i + (k >> 1)) * W + 2 * j + (k & 1)] +=
                    oplane[i * Wp + j];
            }
        }
    }
}

void check_finite(const std::vector<double>& v, const char* layer) {
    for (double x : v) {
        if (!std::isfinite(x)) {
            throw NumericError(std::string("non-finite activation in ") + layer);
        }
    }
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

struct BnStats {
    std::vector<double> mean1, var1, mean2, var2;
};

// Full forward pass. `training` selects batch statistics; running statistics
// are used otherwise. The caller provides the workspace to keep for backward.
void forward_impl(const ModelConfig& cfg, const ModelParams& params,
                  const std::vector<const FeatureWindow*>& batch, bool training,
                  Workspace& ws) {
    const Dims d(cfg);
    const int B = static_cast<int>(batch.size());
    const int BF = B * d.F;
    ws.B = B;

    const std::size_t in_size = static_cast<std::size_t>(d.C) * d.K * d.T;
    ws.x.assign(static_cast<std::size_t>(B) * in_size, 0.0);
    for (int b = 0; b < B; ++b) {
        const FeatureWindow& w = *batch[b];
        if (w.tensor.size() != in_size) {
            throw ShapeError("forward: feature tensor size mismatch");
        }
        double* dst = ws.x.data() + static_cast<std::size_t>(b) * in_size;
        // Per-channel max scaling to [0, 1].
        for (int c = 0; c < d.C; ++c) {
            const float* src = w.tensor.data() + static_cast<std::size_t>(c) * d.K * d.T;
            float peak = 0.0f;
            for (int i = 0; i < d.K * d.T; ++i) {
                peak = std::max(peak, std::abs(src[i]));
            }
            const double inv = peak > 0.0f ? 1.0 / static_cast<double>(peak) : 0.0;
            double* cdst = dst + static_cast<std::size_t>(c) * d.K * d.T;
            for (int i = 0; i < d.K * d.T; ++i) {
                cdst[i] = static_cast<double>(src[i]) * inv;
            }
        }
    }

    // conv1 over every (sample, fold) slab
    ws.z1.assign(static_cast<std::size_t>(BF) * d.C1 * d.P1, 0.0);
    Map<const RowMat> w1(params.block_data("conv1.weight"), d.C1, d.C * 9);
    Map<const Eigen::VectorXd> b1(params.block_data("conv1.bias"), d.C1);
    {
        ColMat cols(d.C * 9, d.P1);
        std::vector<double> img(static_cast<std::size_t>(d.C) * d.P1);
        for (int b = 0; b < B; ++b) {
            for (int f = 0; f < d.F; ++f) {
                const double* sample = ws.x.data() + static_cast<std::size_t>(b) * in_size;
                for (int c = 0; c < d.C; ++c) {
                    for (int i = 0; i < d.K; ++i) {
                        for (int j = 0; j < d.fw; ++j) {
                            img[(static_cast<std::size_t>(c) * d.K + i) * d.fw + j] =
                                sample[(static_cast<std::size_t>(c) * d.K + i) * d.T +
                                       f * d.fw + j];
                        }
                    }
                }
                im2col3(img.data(), d.C, d.K, d.fw, cols);
                Map<RowMat> z(ws.z1.data() +
                                  static_cast<std::size_t>(b * d.F + f) * d.C1 * d.P1,
                              d.C1, d.P1);
                z.noalias() = w1 * cols;
                z.colwise() += b1;
            }
        }
    }
    check_finite(ws.z1, "conv1");

    // bn1 statistics
    ws.bn1_mean.assign(d.C1, 0.0);
    ws.bn1_var.assign(d.C1, 0.0);
    const double m1 = static_cast<double>(BF) * d.P1;
    if (training) {
        for (int s = 0; s < BF; ++s) {
            const double* slab = ws.z1.data() + static_cast<std::size_t>(s) * d.C1 * d.P1;
            for (int c = 0; c < d.C1; ++c) {
                const double* row = slab + static_cast<std::size_t>(c) * d.P1;
                for (int p = 0; p < d.P1; ++p) {
                    ws.bn1_mean[c] += row[p];
                }
            }
        }
        for (double& v : ws.bn1_mean) {
            v /= m1;
        }
        for (int s = 0; s < BF; ++s) {
            const double* slab = ws.z1.data() + static_cast<std::size_t>(s) * d.C1 * d.P1;
            for (int c = 0; c < d.C1; ++c) {
                const double* row = slab + static_cast<std::size_t>(c) * d.P1;
                for (int p = 0; p < d.P1; ++p) {
                    const double diff = row[p] - ws.bn1_mean[c];
                    ws.bn1_var[c] += diff * diff;
                }
            }
        }
        for (double& v : ws.bn1_var) {
            v /= m1;
        }
    } else {
        const double* rm = params.buffer_data("bn1.running_mean");
        const double* rv = params.buffer_data("bn1.running_var");
        ws.bn1_mean.assign(rm, rm + d.C1);
        ws.bn1_var.assign(rv, rv + d.C1);
    }

    // bn1 + relu + pool1
    ws.a1.assign(ws.z1.size(), 0.0);
    ws.p1.assign(static_cast<std::size_t>(BF) * d.C1 * d.P1p, 0.0);
    ws.idx1.assign(static_cast<std::size_t>(BF) * d.C1 * d.P1p, 0);
    {
        const double* gamma = params.block_data("bn1.gamma");
        const double* beta = params.block_data("bn1.beta");
        std::vector<double> inv(d.C1);
        for (int c = 0; c < d.C1; ++c) {
            inv[c] = 1.0 / std::sqrt(ws.bn1_var[c] + kBnEps);
        }
        for (int s = 0; s < BF; ++s) {
            const double* z = ws.z1.data() + static_cast<std::size_t>(s) * d.C1 * d.P1;
            double* a = ws.a1.data() + static_cast<std::size_t>(s) * d.C1 * d.P1;
            for (int c = 0; c < d.C1; ++c) {
                for (int p = 0; p < d.P1; ++p) {
                    const double xhat =
                        (z[c * d.P1 + p] - ws.bn1_mean[c]) * inv[c];
                    a[c * d.P1 + p] = std::max(gamma[c] * xhat + beta[c], 0.0);
                }
            }
            maxpool2(a, d.C1, d.H1, d.W1,
                     ws.p1.data() + static_cast<std::size_t>(s) * d.C1 * d.P1p,
                     ws.idx1.data() + static_cast<std::size_t>(s) * d.C1 * d.P1p,
                     d.H1p, d.W1p);
        }
    }

    // conv2
    ws.z2.assign(static_cast<std::size_t>(BF) * d.C2 * d.P2, 0.0);
    Map<const RowMat> w2(params.block_data("conv2.weight"), d.C2, d.C1 * 9);
    Map<const Eigen::VectorXd> b2(params.block_data("conv2.bias"), d.C2);
    {
        ColMat cols(d.C1 * 9, d.P2);
        for (int s = 0; s < BF; ++s) {
            im2col3(ws.p1.data() + static_cast<std::size_t>(s) * d.C1 * d.P1p, d.C1,
                    d.H2, d.W2, cols);
            Map<RowMat> z(ws.z2.data() + static_cast<std::size_t>(s) * d.C2 * d.P2,
                          d.C2, d.P2);
            z.noalias() = w2 * cols;
            z.colwise() += b2;
        }
    }
    check_finite(ws.z2, "conv2");

    ws.bn2_mean.assign(d.C2, 0.0);
    ws.bn2_var.assign(d.C2, 0.0);
    const double m2 = static_cast<double>(BF) * d.P2;
    if (training) {
        for (int s = 0; s < BF; ++s) {
            const double* slab = ws.z2.data() + static_cast<std::size_t>(s) * d.C2 * d.P2;
            for (int c = 0; c < d.C2; ++c) {
                for (int p = 0; p < d.P2; ++p) {
                    ws.bn2_mean[c] += slab[c * d.P2 + p];
                }
            }
        }
        for (double& v : ws.bn2_mean) {
            v /= m2;
        }
        for (int s = 0; s < BF; ++s) {
            const double* slab = ws.z2.data() + static_cast<std::size_t>(s) * d.C2 * d.P2;
            for (int c = 0; c < d.C2; ++c) {
                for (int p = 0; p < d.P2; ++p) {
                    const double diff = slab[c * d.P2 + p] - ws.bn2_mean[c];
                    ws.bn2_var[c] += diff * diff;
                }
            }
        }
        for (double& v : ws.bn2_var) {
            v /= m2;
        }
    } else {
        const double* rm = params.buffer_data("bn2.running_mean");
        const double* rv = params.buffer_data("bn2.running_var");
        ws.bn2_mean.assign(rm, rm + d.C2);
        ws.bn2_var.assign(rv, rv + d.C2);
    }

    ws.a2.assign(ws.z2.size(), 0.0);
    ws.p2.assign(static_cast<std::size_t>(BF) * d.C2 * d.P2p, 0.0);
    ws.idx2.assign(static_cast<std::size_t>(BF) * d.C2 * d.P2p, 0);
    {
        const double* gamma = params.block_data("bn2.gamma");
        const double* beta = params.block_data("bn2.beta");
        std::vector<double> inv(d.C2);
        for (int c = 0; c < d.C2; ++c) {
            inv[c] = 1.0 / std::sqrt(ws.bn2_var[c] + kBnEps);
        }
        for (int s = 0; s < BF; ++s) {
            const double* z = ws.z2.data() + static_cast<std::size_t>(s) * d.C2 * d.P2;
            double* a = ws.a2.data() + static_cast<std::size_t>(s) * d.C2 * d.P2;
            for (int c = 0; c < d.C2; ++c) {
                for (int p = 0; p < d.P2; ++p) {
                    const double xhat =
                        (z[c * d.P2 + p] - ws.bn2_mean[c]) * inv[c];
                    a[c * d.P2 + p] = std::max(gamma[c] * xhat + beta[c], 0.0);
                }
            }
            maxpool2(a, d.C2, d.H2, d.W2,
                     ws.p2.data() + static_cast<std::size_t>(s) * d.C2 * d.P2p,
                     ws.idx2.data() + static_cast<std::size_t>(s) * d.C2 * d.P2p,
                     d.H2p, d.W2p);
        }
    }

    // recurrent pass over the folds, oldest first
    const std::size_t hb = static_cast<std::size_t>(d.H) * B;
    ws.gates.assign(static_cast<std::size_t>(d.F) * 4 * hb, 0.0);
    ws.cstate.assign(static_cast<std::size_t>(d.F) * hb, 0.0);
    ws.tanhc.assign(static_cast<std::size_t>(d.F) * hb, 0.0);
    ws.hstate.assign(static_cast<std::size_t>(d.F + 1) * hb, 0.0);

    Map<const RowMat> w_ih(params.block_data("lstm.w_ih"), 4 * d.H, d.In);
    Map<const RowMat> w_hh(params.block_data("lstm.w_hh"), 4 * d.H, d.H);
    Map<const Eigen::VectorXd> b_ih(params.block_data("lstm.b_ih"), 4 * d.H);
    Map<const Eigen::VectorXd> b_hh(params.block_data("lstm.b_hh"), 4 * d.H);

    for (int t = 0; t < d.F; ++t) {
        // X_t: (In x B), column b = p2 slab of (sample b, fold t)
        Map<const ColMat, 0, Eigen::OuterStride<>> x_t(
            ws.p2.data() + static_cast<std::size_t>(t) * d.In, d.In, B,
            Eigen::OuterStride<>(static_cast<Eigen::Index>(d.F) * d.In));
        Map<const ColMat> h_prev(ws.hstate.data() + static_cast<std::size_t>(t) * hb,
                                 d.H, B);
        Map<ColMat> z(ws.gates.data() + static_cast<std::size_t>(t) * 4 * hb, 4 * d.H,
                      B);
        z.noalias() = w_ih * x_t + w_hh * h_prev;
        z.colwise() += b_ih + b_hh;

        Map<ColMat> c_t(ws.cstate.data() + static_cast<std::size_t>(t) * hb, d.H, B);
        Map<ColMat> tanh_c(ws.tanhc.data() + static_cast<std::size_t>(t) * hb, d.H, B);
        Map<ColMat> h_t(ws.hstate.data() + static_cast<std::size_t>(t + 1) * hb, d.H,
                        B);
        const double* c_prev =
            t > 0 ? ws.cstate.data() + static_cast<std::size_t>(t - 1) * hb : nullptr;
        for (int b = 0; b < B; ++b) {
            for (int i = 0; i < d.H; ++i) {
                double& zi = z(i, b);
                double& zf = z(d.H + i, b);
                double& zg = z(2 * d.H + i, b);
                double& zo = z(3 * d.H + i, b);
                zi = sigmoid(zi);
                zf = sigmoid(zf);
                zg = std::tanh(zg);
                zo = sigmoid(zo);
                const double prev = c_prev ? c_prev[static_cast<std::size_t>(b) * d.H + i] : 0.0;
                const double c_val = zf * prev + zi * zg;
                c_t(i, b) = c_val;
                tanh_c(i, b) = std::tanh(c_val);
                h_t(i, b) = zo * tanh_c(i, b);
            }
        }
    }
    check_finite(ws.hstate, "lstm");

    // linear head plus label affine
    ws.net.assign(static_cast<std::size_t>(d.Out) * B, 0.0);
    ws.out.assign(static_cast<std::size_t>(d.Out) * B, 0.0);
    Map<const RowMat> wh(params.block_data("head.weight"), d.Out, d.H);
    Map<const Eigen::VectorXd> bh(params.block_data("head.bias"), d.Out);
    Map<const ColMat> h_last(ws.hstate.data() + static_cast<std::size_t>(d.F) * hb,
                             d.H, B);
    Map<ColMat> net(ws.net.data(), d.Out, B);
    net.noalias() = wh * h_last;
    net.colwise() += bh;

    const double* lmean = params.buffer_data("label.mean");
    const double* lscale = params.buffer_data("label.scale");
    for (int b = 0; b < B; ++b) {
        for (int r = 0; r < d.Out; ++r) {
            ws.out[static_cast<std::size_t>(b) * d.Out + r] =
                lmean[r] + lscale[r] * net(r, b);
        }
    }
    check_finite(ws.out, "head");
}

std::vector<double> flatten_label(const HandPose& pose) {
    std::vector<double> y(63);
    for (int j = 0; j < HandPose::kNumJoints; ++j) {
        y[3 * j] = pose.joints_mm[j].x;
        y[3 * j + 1] = pose.joints_mm[j].y;
        y[3 * j + 2] = pose.joints_mm[j].z;
    }
    return y;
}

// Shared loss + backward; fills `grads` (same layout as params.values).
double backward_impl(const ModelConfig& cfg, const ModelParams& params,
                     const std::vector<const FeatureWindow*>& batch,
                     Workspace& ws, std::vector<double>& grads) {
    const Dims d(cfg);
    const int B = ws.B;
    const int BF = B * d.F;
    grads.assign(params.values.size(), 0.0);

    // loss and dnet
    double loss = 0.0;
    ColMat dnet(d.Out, B);
    const double* lscale = params.buffer_data("label.scale");
    const double inv_norm = 1.0 / (static_cast<double>(d.Out) * B);
    for (int b = 0; b < B; ++b) {
        if (!batch[b]->label) {
            throw InputError("gradients: unlabeled window in batch");
        }
        const std::vector<double> y = flatten_label(*batch[b]->label);
        for (int r = 0; r < d.Out; ++r) {
            const double diff = ws.out[static_cast<std::size_t>(b) * d.Out + r] - y[r];
            loss += diff * diff * inv_norm;
            dnet(r, b) = 2.0 * diff * inv_norm * lscale[r];
        }
    }

    const std::size_t hb = static_cast<std::size_t>(d.H) * B;

    // head backward
    Map<const RowMat> wh(params.block_data("head.weight"), d.Out, d.H);
    Map<const ColMat> h_last(ws.hstate.data() + static_cast<std::size_t>(d.F) * hb,
                             d.H, B);
    {
        Map<RowMat> dwh(grads.data() + find_block(params.blocks, "head.weight").offset,
                        d.Out, d.H);
        Map<Eigen::VectorXd> dbh(
            grads.data() + find_block(params.blocks, "head.bias").offset, d.Out);
        dwh.noalias() = dnet * h_last.transpose();
        dbh = dnet.rowwise().sum();
    }

    ColMat dh = wh.transpose() * dnet;  // (H x B)
    ColMat dc = ColMat::Zero(d.H, B);

    Map<const RowMat> w_ih(params.block_data("lstm.w_ih"), 4 * d.H, d.In);
    Map<const RowMat> w_hh(params.block_data("lstm.w_hh"), 4 * d.H, d.H);
    Map<RowMat> dw_ih(grads.data() + find_block(params.blocks, "lstm.w_ih").offset,
                      4 * d.H, d.In);
    Map<RowMat> dw_hh(grads.data() + find_block(params.blocks, "lstm.w_hh").offset,
                      4 * d.H, d.H);
    Map<Eigen::VectorXd> db_ih(
        grads.data() + find_block(params.blocks, "lstm.b_ih").offset, 4 * d.H);
    Map<Eigen::VectorXd> db_hh(
        grads.data() + find_block(params.blocks, "lstm.b_hh").offset, 4 * d.H);

    std::vector<double> dp2(ws.p2.size(), 0.0);
    ColMat dz(4 * d.H, B);

    for (int t = d.F - 1; t >= 0; --t) {
        Map<const ColMat> z(ws.gates.data() + static_cast<std::size_t>(t) * 4 * hb,
                            4 * d.H, B);
        Map<const ColMat> tanh_c(ws.tanhc.data() + static_cast<std::size_t>(t) * hb,
                                 d.H, B);
        const double* c_prev =
            t > 0 ? ws.cstate.data() + static_cast<std::size_t>(t - 1) * hb : nullptr;
        for (int b = 0; b < B; ++b) {
            for (int i = 0; i < d.H; ++i) {
                const double gi = z(i, b);
                const double gf = z(d.H + i, b);
                const double gg = z(2 * d.H + i, b);
                const double go = z(3 * d.H + i, b);
                const double tc = tanh_c(i, b);
                const double dho = dh(i, b);
                const double dcv = dc(i, b) + dho * go * (1.0 - tc * tc);
                const double prev =
                    c_prev ? c_prev[static_cast<std::size_t>(b) * d.H + i] : 0.0;
                dz(i, b) = dcv * gg * gi * (1.0 - gi);
                dz(d.H + i, b) = dcv * prev * gf * (1.0 - gf);
                dz(2 * d.H + i, b) = dcv * gi * (1.0 - gg * gg);
                dz(3 * d.H + i, b) = dho * tc * go * (1.0 - go);
                dc(i, b) = dcv * gf;
            }
        }

        Map<const ColMat, 0, Eigen::OuterStride<>> x_t(
            ws.p2.data() + static_cast<std::size_t>(t) * d.In, d.In, B,
            Eigen::OuterStride<>(static_cast<Eigen::Index>(d.F) * d.In));
        Map<const ColMat> h_prev(ws.hstate.data() + static_cast<std::size_t>(t) * hb,
                                 d.H, B);
        dw_ih.noalias() += dz * x_t.transpose();
        dw_hh.noalias() += dz * h_prev.transpose();
        db_ih += dz.rowwise().sum();
        db_hh += dz.rowwise().sum();

        Map<ColMat, 0, Eigen::OuterStride<>> dx_t(
            dp2.data() + static_cast<std::size_t>(t) * d.In, d.In, B,
            Eigen::OuterStride<>(static_cast<Eigen::Index>(d.F) * d.In));
        dx_t.noalias() = w_ih.transpose() * dz;
        dh.noalias() = w_hh.transpose() * dz;
    }

    // conv2 block backward
    std::vector<double> dp1(ws.p1.size(), 0.0);
    {
        // pool2 and relu2
        std::vector<double> da2(ws.a2.size(), 0.0);
        for (int s = 0; s < BF; ++s) {
            maxpool2_backward(dp2.data() + static_cast<std::size_t>(s) * d.C2 * d.P2p,
                              ws.idx2.data() + static_cast<std::size_t>(s) * d.C2 * d.P2p,
                              d.C2, d.H2, d.W2, d.H2p, d.W2p,
                              da2.data() + static_cast<std::size_t>(s) * d.C2 * d.P2);
        }
        for (std::size_t i = 0; i < da2.size(); ++i) {
            if (ws.a2[i] <= 0.0) {
                da2[i] = 0.0;
            }
        }
        // bn2 backward
        const double* gamma = params.block_data("bn2.gamma");
        double* dgamma = grads.data() + find_block(params.blocks, "bn2.gamma").offset;
        double* dbeta = grads.data() + find_block(params.blocks, "bn2.beta").offset;
        const double m2 = static_cast<double>(BF) * d.P2;
        std::vector<double> inv(d.C2), sum_dxhat(d.C2, 0.0), sum_dxhat_xhat(d.C2, 0.0);
        for (int c = 0; c < d.C2; ++c) {
            inv[c] = 1.0 / std::sqrt(ws.bn2_var[c] + kBnEps);
        }
        for (int s = 0; s < BF; ++s) {
            const double* z = ws.z2.data() + static_cast<std::size_t>(s) * d.C2 * d.P2;
            const double* dy = da2.data() + static_cast<std::size_t>(s) * d.C2 * d.P2;
            for (int c = 0; c < d.C2; ++c) {
                for (int p = 0; p < d.P2; ++p) {
                    const double xhat = (z[c * d.P2 + p] - ws.bn2_mean[c]) * inv[c];
                    dgamma[c] += dy[c * d.P2 + p] * xhat;
                    dbeta[c] += dy[c * d.P2 + p];
                    sum_dxhat[c] += dy[c * d.P2 + p] * gamma[c];
                    sum_dxhat_xhat[c] += dy[c * d.P2 + p] * gamma[c] * xhat;
                }
            }
        }
        std::vector<double> dz2(ws.z2.size(), 0.0);
        for (int s = 0; s < BF; ++s) {
            const double* z = ws.z2.data() + static_cast<std::size_t>(s) * d.C2 * d.P2;
            const double* dy = da2.data() + static_cast<std::size_t>(s) * d.C2 * d.P2;
            double* dzp = dz2.data() + static_cast<std::size_t>(s) * d.C2 * d.P2;
            for (int c = 0; c < d.C2; ++c) {
                for (int p = 0; p < d.P2; ++p) {
                    const double xhat = (z[c * d.P2 + p] - ws.bn2_mean[c]) * inv[c];
                    const double dxhat = dy[c * d.P2 + p] * gamma[c];
                    dzp[c * d.P2 + p] =
                        inv[c] * (dxhat - sum_dxhat[c] / m2 -
                                  xhat * sum_dxhat_xhat[c] / m2);
                }
            }
        }
        // conv2 weights and input gradient
        Map<const RowMat> w2(params.block_data("conv2.weight"), d.C2, d.C1 * 9);
        Map<RowMat> dw2(grads.data() + find_block(params.blocks, "conv2.weight").offset,
                        d.C2, d.C1 * 9);
        Map<Eigen::VectorXd> db2(
            grads.data() + find_block(params.blocks, "conv2.bias").offset, d.C2);
        ColMat cols(d.C1 * 9, d.P2);
        ColMat dcols(d.C1 * 9, d.P2);
        for (int s = 0; s < BF; ++s) {
            im2col3(ws.p1.data() + static_cast<std::size_t>(s) * d.C1 * d.P1p, d.C1,
                    d.H2, d.W2, cols);
            Map<const RowMat> dzs(dz2.data() + static_cast<std::size_t>(s) * d.C2 * d.P2,
                                  d.C2, d.P2);
            dw2.noalias() += dzs * cols.transpose();
            db2 += dzs.rowwise().sum();
            dcols.noalias() = w2.transpose() * dzs;
            col2im3(dcols, d.C1, d.H2, d.W2,
                    dp1.data() + static_cast<std::size_t>(s) * d.C1 * d.P1p);
        }
    }

    // conv1 block backward
    {
        std::vector<double> da1(ws.a1.size(), 0.0);
        for (int s = 0; s < BF; ++s) {
            maxpool2_backward(dp1.data() + static_cast<std::size_t>(s) * d.C1 * d.P1p,
                              ws.idx1.data() + static_cast<std::size_t>(s) * d.C1 * d.P1p,
                              d.C1, d.H1, d.W1, d.H1p, d.W1p,
                              da1.data() + static_cast<std::size_t>(s) * d.C1 * d.P1);
        }
        for (std::size_t i = 0; i < da1.size(); ++i) {
            if (ws.a1[i] <= 0.0) {
                da1[i] = 0.0;
            }
        }
        const double* gamma = params.block_data("bn1.gamma");
        double* dgamma = grads.data() + find_block(params.blocks, "bn1.gamma").offset;
        double* dbeta = grads.data() + find_block(params.blocks, "bn1.beta").offset;
        const double m1 = static_cast<double>(BF) * d.P1;
        std::vector<double> inv(d.C1), sum_dxhat(d.C1, 0.0), sum_dxhat_xhat(d.C1, 0.0);
        for (int c = 0; c < d.C1; ++c) {
            inv[c] = 1.0 / std::sqrt(ws.bn1_var[c] + kBnEps);
        }
        for (int s = 0; s < BF; ++s) {
            const double* z = ws.z1.data() + static_cast<std::size_t>(s) * d.C1 * d.P1;
            const double* dy = da1.data() + static_cast<std::size_t>(s) * d.C1 * d.P1;
            for (int c = 0; c < d.C1; ++c) {
                for (int p = 0; p < d.P1; ++p) {
                    const double xhat = (z[c * d.P1 + p] - ws.bn1_mean[c]) * inv[c];
                    dgamma[c] += dy[c * d.P1 + p] * xhat;
                    dbeta[c] += dy[c * d.P1 + p];
                    sum_dxhat[c] += dy[c * d.P1 + p] * gamma[c];
                    sum_dxhat_xhat[c] += dy[c * d.P1 + p] * gamma[c] * xhat;
                }
            }
        }
        Map<RowMat> dw1(grads.data() + find_block(params.blocks, "conv1.weight").offset,
                        d.C1, d.C * 9);
        Map<Eigen::VectorXd> db1(
            grads.data() + find_block(params.blocks, "conv1.bias").offset, d.C1);
        const std::size_t in_size = static_cast<std::size_t>(d.C) * d.K * d.T;
        ColMat cols(d.C * 9, d.P1);
        std::vector<double> img(static_cast<std::size_t>(d.C) * d.P1);
        std::vector<double> dz_slab(static_cast<std::size_t>(d.C1) * d.P1);
        for (int s = 0; s < BF; ++s) {
            const int b = s / d.F;
            const int f = s % d.F;
            const double* z = ws.z1.data() + static_cast<std::size_t>(s) * d.C1 * d.P1;
            const double* dy = da1.data() + static_cast<std::size_t>(s) * d.C1 * d.P1;
            for (int c = 0; c < d.C1; ++c) {
                for (int p = 0; p < d.P1; ++p) {
                    const double xhat = (z[c * d.P1 + p] - ws.bn1_mean[c]) * inv[c];
                    const double dxhat = dy[c * d.P1 + p] * gamma[c];
                    dz_slab[static_cast<std::size_t>(c) * d.P1 + p] =
                        inv[c] * (dxhat - sum_dxhat[c] / m1 -
                                  xhat * sum_dxhat_xhat[c] / m1);
                }
            }
            const double* sample = ws.x.data() + static_cast<std::size_t>(b) * in_size;
            for (int c = 0; c < d.C; ++c) {
                for (int i = 0; i < d.K; ++i) {
                    for (int j = 0; j < d.fw; ++j) {
                        img[(static_cast<std::size_t>(c) * d.K + i) * d.fw + j] =
                            sample[(static_cast<std::size_t>(c) * d.K + i) * d.T +
                                   f * d.fw + j];
                    }
                }
            }
            im2col3(img.data(), d.C, d.K, d.fw, cols);
            Map<const RowMat> dzs(dz_slab.data(), d.C1, d.P1);
            dw1.noalias() += dzs * cols.transpose();
            db1 += dzs.rowwise().sum();
        }
    }

    return loss;
}

}  // namespace

Regressor::Regressor(const ModelConfig& config)
    : config_(config), params_(init_params(config)) {
    config_.validate();
}

Regressor::Regressor(const ModelConfig& config, ModelParams params)
    : config_(config), params_(std::move(params)) {
    config_.validate();
}

std::vector<double> Regressor::forward(const FeatureWindow& window) const {
    Workspace ws;
    forward_impl(config_, params_, {&window}, /*training=*/false, ws);
    return ws.out;
}

std::vector<std::vector<double>> Regressor::forward_batch(
    const std::vector<const FeatureWindow*>& batch) const {
    if (batch.empty()) {
        throw InputError("forward_batch: empty batch");
    }
    Workspace ws;
    forward_impl(config_, params_, batch, /*training=*/false, ws);
    std::vector<std::vector<double>> out(batch.size());
    for (std::size_t b = 0; b < batch.size(); ++b) {
        out[b].assign(ws.out.begin() + b * config_.output,
                      ws.out.begin() + (b + 1) * config_.output);
    }
    return out;
}

Regressor::GradientResult Regressor::gradients(
    const std::vector<const FeatureWindow*>& batch) const {
    if (batch.empty()) {
        throw InputError("gradients: empty batch");
    }
    Workspace ws;
    forward_impl(config_, params_, batch, /*training=*/true, ws);
    GradientResult result;
    result.loss = backward_impl(config_, params_, batch, ws, result.gradients);
    for (double g : result.gradients) {
        if (!std::isfinite(g)) {
            throw NumericError("non-finite gradient");
        }
    }
    return result;
}

double Regressor::batch_loss(
    const std::vector<const FeatureWindow*>& batch) const {
    Workspace ws;
    forward_impl(config_, params_, batch, /*training=*/true, ws);
    double loss = 0.0;
    const double inv_norm = 1.0 / (static_cast<double>(config_.output) * batch.size());
    for (std::size_t b = 0; b < batch.size(); ++b) {
        if (!batch[b]->label) {
            throw InputError("batch_loss: unlabeled window");
        }
        const std::vector<double> y = flatten_label(*batch[b]->label);
        for (int r = 0; r < config_.output; ++r) {
            const double diff = ws.out[b * config_.output + r] - y[r];
            loss += diff * diff * inv_norm;
        }
    }
    return loss;
}

double Regressor::train_step(const std::vector<const FeatureWindow*>& batch,
                             AdamState& adam) {
    if (batch.empty()) {
        throw InputError("train_step: empty batch");
    }
    Workspace ws;
    forward_impl(config_, params_, batch, /*training=*/true, ws);
    std::vector<double> grads;
    const double loss = backward_impl(config_, params_, batch, ws, grads);

    if (adam.m.size() != params_.values.size()) {
        adam.m.assign(params_.values.size(), 0.0);
        adam.v.assign(params_.values.size(), 0.0);
        adam.step = 0;
    }
    ++adam.step;
    constexpr double b1 = 0.9;
    constexpr double b2 = 0.999;
    constexpr double eps = 1e-8;
    const double bc1 = 1.0 - std::pow(b1, static_cast<double>(adam.step));
    const double bc2 = 1.0 - std::pow(b2, static_cast<double>(adam.step));
    const double lr = config_.learning_rate;
    for (std::size_t i = 0; i < params_.values.size(); ++i) {
        adam.m[i] = b1 * adam.m[i] + (1.0 - b1) * grads[i];
        adam.v[i] = b2 * adam.v[i] + (1.0 - b2) * grads[i] * grads[i];
        params_.values[i] -=
            lr * (adam.m[i] / bc1) / (std::sqrt(adam.v[i] / bc2) + eps);
    }

    // Fold this batch's statistics into the running estimates.
    const double mom = config_.bn_momentum;
    auto update = [&](const char* mean_name, const char* var_name,
                      const std::vector<double>& mean,
                      const std::vector<double>& var) {
        double* rm = params_.buffer_data(mean_name);
        double* rv = params_.buffer_data(var_name);
        for (std::size_t c = 0; c < mean.size(); ++c) {
            rm[c] = (1.0 - mom) * rm[c] + mom * mean[c];
            rv[c] = (1.0 - mom) * rv[c] + mom * var[c];
        }
    };
    update("bn1.running_mean", "bn1.running_var", ws.bn1_mean, ws.bn1_var);
    update("bn2.running_mean", "bn2.running_var", ws.bn2_mean, ws.bn2_var);
    return loss;
}

void Regressor::fit_label_affine(
    const std::vector<const FeatureWindow*>& data) {
    if (data.empty()) {
        throw InputError("fit_label_affine: empty dataset");
    }
    std::vector<double> mean(config_.output, 0.0);
    std::vector<double> var(config_.output, 0.0);
    std::size_t n = 0;
    for (const FeatureWindow* w : data) {
        if (!w->label) {
            continue;
        }
        const std::vector<double> y = flatten_label(*w->label);
        for (int r = 0; r < config_.output; ++r) {
            mean[r] += y[r];
        }
        ++n;
    }
    if (n == 0) {
        throw InputError("fit_label_affine: no labeled windows");
    }
    for (double& v : mean) {
        v /= static_cast<double>(n);
    }
    for (const FeatureWindow* w : data) {
        if (!w->label) {
            continue;
        }
        const std::vector<double> y = flatten_label(*w->label);
        for (int r = 0; r < config_.output; ++r) {
            const double diff = y[r] - mean[r];
            var[r] += diff * diff;
        }
    }
    double* lmean = params_.buffer_data("label.mean");
    double* lscale = params_.buffer_data("label.scale");
    for (int r = 0; r < config_.output; ++r) {
        lmean[r] = mean[r];
        lscale[r] = std::max(std::sqrt(var[r] / static_cast<double>(n)), 1.0);
    }
}

double loss_mse(const std::vector<double>& pred, const HandPose& label) {
    if (pred.size() != 63) {
        throw ShapeError("loss_mse: prediction must have 63 entries");
    }
    const std::vector<double> y = flatten_label(label);
    double loss = 0.0;
    for (int r = 0; r < 63; ++r) {
        const double diff = pred[r] - y[r];
        loss += diff * diff;
    }
    return loss / 63.0;
}

std::vector<const FeatureWindow*> window_pointers(const FeatureSet& set) {
    std::vector<const FeatureWindow*> out;
    out.reserve(set.windows.size());
    for (const FeatureWindow& w : set.windows) {
        out.push_back(&w);
    }
    return out;
}

}  // namespace echosonar
