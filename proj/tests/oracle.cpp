#include "oracle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace oracle {

using fedadapt::LayerKind;
using fedadapt::LayerSpec;
using fedadapt::Model;
using fedadapt::Tensor;

std::vector<double> to_double(const std::vector<float>& v) {
    return std::vector<double>(v.begin(), v.end());
}

namespace {

struct Act {
    std::vector<int> shape;
    std::vector<double> values;
};

double at3(const Act& a, int c, int y, int x) {
    return a.values[(static_cast<std::size_t>(c) * a.shape[1] + y) * a.shape[2] + x];
}

Act apply_layer(const LayerSpec& spec, const std::vector<double>& params, std::size_t offset,
                const Act& in) {
    switch (spec.kind) {
        case LayerKind::Dense: {
            Act out;
            out.shape = {spec.out_features};
            out.values.assign(static_cast<std::size_t>(spec.out_features), 0.0);
            const std::size_t bias_base =
                offset + static_cast<std::size_t>(spec.in_features) * spec.out_features;
            for (int o = 0; o < spec.out_features; ++o) {
                double acc = params[bias_base + static_cast<std::size_t>(o)];
                for (int i = 0; i < spec.in_features; ++i) {
                    acc += params[offset + static_cast<std::size_t>(o) * spec.in_features + i] *
                           in.values[static_cast<std::size_t>(i)];
                }
                out.values[static_cast<std::size_t>(o)] = acc;
            }
            return out;
        }
        case LayerKind::Conv2d: {
            const int ih = in.shape[1], iw = in.shape[2];
            const int oh = (ih + 2 * spec.padding - spec.kernel) / spec.stride + 1;
            const int ow = (iw + 2 * spec.padding - spec.kernel) / spec.stride + 1;
            Act out;
            out.shape = {spec.out_channels, oh, ow};
            out.values.assign(static_cast<std::size_t>(spec.out_channels) * oh * ow, 0.0);
            const std::size_t bias_base =
                offset + static_cast<std::size_t>(spec.out_channels) * spec.in_channels *
                             spec.kernel * spec.kernel;
            for (int o = 0; o < spec.out_channels; ++o) {
                for (int y = 0; y < oh; ++y) {
                    for (int x = 0; x < ow; ++x) {
                        double acc = params[bias_base + static_cast<std::size_t>(o)];
                        for (int c = 0; c < spec.in_channels; ++c) {
                            for (int ky = 0; ky < spec.kernel; ++ky) {
                                for (int kx = 0; kx < spec.kernel; ++kx) {
                                    const int yy = y * spec.stride - spec.padding + ky;
                                    const int xx = x * spec.stride - spec.padding + kx;
                                    if (yy < 0 || yy >= ih || xx < 0 || xx >= iw) continue;
                                    const std::size_t widx =
                                        offset +
                                        ((static_cast<std::size_t>(o) * spec.in_channels + c) *
                                             spec.kernel +
                                         ky) *
                                            spec.kernel +
                                        kx;
                                    acc += params[widx] * at3(in, c, yy, xx);
                                }
                            }
                        }
                        out.values[(static_cast<std::size_t>(o) * oh + y) * ow + x] = acc;
                    }
                }
            }
            return out;
        }
        case LayerKind::Relu: {
            Act out = in;
            for (auto& v : out.values) v = v > 0.0 ? v : 0.0;
            return out;
        }
        case LayerKind::MaxPool2d: {
            const int ch = in.shape[0], ih = in.shape[1], iw = in.shape[2];
            const int oh = (ih - spec.window) / spec.pool_stride + 1;
            const int ow = (iw - spec.window) / spec.pool_stride + 1;
            Act out;
            out.shape = {ch, oh, ow};
            out.values.assign(static_cast<std::size_t>(ch) * oh * ow, 0.0);
            for (int c = 0; c < ch; ++c) {
                for (int y = 0; y < oh; ++y) {
                    for (int x = 0; x < ow; ++x) {
                        double best = -std::numeric_limits<double>::infinity();
                        for (int ky = 0; ky < spec.window; ++ky) {
                            for (int kx = 0; kx < spec.window; ++kx) {
                                const int yy = y * spec.pool_stride + ky;
                                const int xx = x * spec.pool_stride + kx;
                                if (yy >= ih || xx >= iw) continue;
                                best = std::max(best, at3(in, c, yy, xx));
                            }
                        }
                        out.values[(static_cast<std::size_t>(c) * oh + y) * ow + x] = best;
                    }
                }
            }
            return out;
        }
        case LayerKind::GlobalAvgPool: {
            const int ch = in.shape[0];
            const int hw = in.shape[1] * in.shape[2];
            Act out;
            out.shape = {ch};
            out.values.assign(static_cast<std::size_t>(ch), 0.0);
            for (int c = 0; c < ch; ++c) {
                double acc = 0.0;
                for (int i = 0; i < hw; ++i) {
                    acc += in.values[static_cast<std::size_t>(c) * hw + i];
                }
                out.values[static_cast<std::size_t>(c)] = acc / hw;
            }
            return out;
        }
        case LayerKind::Flatten: {
            Act out = in;
            int n = 1;
            for (int d : in.shape) n *= d;
            out.shape = {n};
            return out;
        }
    }
    throw std::runtime_error("oracle: unknown layer kind");
}

std::vector<Act> run_all(const Model& model, const std::vector<double>& params,
                         const Tensor& input) {
    Act cur;
    cur.shape = input.shape;
    cur.values = to_double(input.values);
    std::vector<Act> outs;
    for (std::size_t i = 0; i < model.layers.size(); ++i) {
        cur = apply_layer(model.layers[i], params, model.params.offsets[i].first, cur);
        outs.push_back(cur);
    }
    return outs;
}

double xent(const std::vector<double>& logits, int label) {
    double maxv = logits[0];
    for (double v : logits) maxv = std::max(maxv, v);
    double sum = 0.0;
    for (double v : logits) sum += std::exp(v - maxv);
    return std::log(sum) - (logits[static_cast<std::size_t>(label)] - maxv);
}

}  // namespace

std::vector<double> ref_logits(const Model& model, const std::vector<double>& params,
                               const Tensor& input) {
    return run_all(model, params, input).back().values;
}

std::vector<std::vector<double>> ref_forward_all(const Model& model,
                                                 const std::vector<double>& params,
                                                 const Tensor& input) {
    std::vector<std::vector<double>> out;
    for (auto& act : run_all(model, params, input)) out.push_back(std::move(act.values));
    return out;
}

double ref_mean_xent(const Model& model, const std::vector<double>& params,
                     const std::vector<std::pair<Tensor, int>>& batch) {
    double acc = 0.0;
    for (const auto& [x, label] : batch) {
        acc += xent(ref_logits(model, params, x), label);
    }
    return acc / static_cast<double>(batch.size());
}

std::vector<double> fd_param_gradients(const Model& model,
                                       const std::vector<std::pair<Tensor, int>>& batch,
                                       double eps) {
    std::vector<double> params = to_double(model.params.flat);
    std::vector<double> grads(params.size(), 0.0);
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double saved = params[i];
        params[i] = saved + eps;
        const double hi = ref_mean_xent(model, params, batch);
        params[i] = saved - eps;
        const double lo = ref_mean_xent(model, params, batch);
        params[i] = saved;
        grads[i] = (hi - lo) / (2.0 * eps);
    }
    return grads;
}

std::vector<double> fd_input_gradients(const Model& model, const Tensor& input, int layer_index,
                                       double eps) {
    const std::vector<double> params = to_double(model.params.flat);
    auto objective = [&](const Tensor& x) {
        const auto outs = ref_forward_all(model, params, x);
        double acc = 0.0;
        for (double v : outs[static_cast<std::size_t>(layer_index)]) acc += 0.5 * v * v;
        return acc;
    };
    std::vector<double> grads(input.numel(), 0.0);
    Tensor probe = input;
    for (std::size_t i = 0; i < probe.values.size(); ++i) {
        const float saved = probe.values[i];
        probe.values[i] = static_cast<float>(saved + eps);
        const double hi = objective(probe);
        probe.values[i] = static_cast<float>(saved - eps);
        const double lo = objective(probe);
        probe.values[i] = saved;
        grads[i] = (hi - lo) / (2.0 * eps);
    }
    return grads;
}

}  // namespace oracle
