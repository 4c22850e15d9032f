#include "fedadapt/nn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "fedadapt/errors.hpp"

namespace fedadapt {

const Tensor& ForwardTrace::relu_output(int relu_index) const {
    if (relu_index < 1 || relu_index > static_cast<int>(relu_positions.size())) {
        throw ConfigError("ReLU index " + std::to_string(relu_index) +
                          " out of range for trace with " +
                          std::to_string(relu_positions.size()) + " ReLU layers");
    }
    return layer_outputs.at(static_cast<std::size_t>(relu_positions[relu_index - 1]));
}

namespace {

Tensor dense_forward(const LayerSpec& s, std::span<const float> p, const Tensor& in) {
    const int ni = s.in_features, no = s.out_features;
    const float* w = p.data();
    const float* b = p.data() + static_cast<std::size_t>(ni) * no;
    Tensor out({no});
    for (int o = 0; o < no; ++o) {
        const float* wrow = w + static_cast<std::size_t>(o) * ni;
        float acc = b[o];
        for (int i = 0; i < ni; ++i) acc += wrow[i] * in.values[static_cast<std::size_t>(i)];
        out.values[static_cast<std::size_t>(o)] = acc;
    }
    return out;
}

Tensor dense_backward(const LayerSpec& s, std::span<const float> p, const Tensor& in,
                      const Tensor& dout, std::span<float> pg) {
    const int ni = s.in_features, no = s.out_features;
    const float* w = p.data();
    Tensor din({ni});
    for (int o = 0; o < no; ++o) {
        const float g = dout.values[static_cast<std::size_t>(o)];
        const float* wrow = w + static_cast<std::size_t>(o) * ni;
        for (int i = 0; i < ni; ++i) din.values[static_cast<std::size_t>(i)] += g * wrow[i];
    }
    if (!pg.empty()) {
        float* dw = pg.data();
        float* db = pg.data() + static_cast<std::size_t>(ni) * no;
        for (int o = 0; o < no; ++o) {
            const float g = dout.values[static_cast<std::size_t>(o)];
            float* dwrow = dw + static_cast<std::size_t>(o) * ni;
            for (int i = 0; i < ni; ++i) dwrow[i] += g * in.values[static_cast<std::size_t>(i)];
            db[o] += g;
        }
    }
    return din;
}

// Convolutions run as im2col plus a small GEMM: the contraction dimension
// ic*k*k is contiguous in both the patch matrix and the weight rows, which
// vectorizes far better than sliding-window loops on the tiny feature maps
// this engine works with.
void im2col(const LayerSpec& s, const Tensor& in, int oh, int ow, std::vector<float>& cols) {
    const int ic = s.in_channels, k = s.kernel, st = s.stride, pad = s.padding;
    const int ih = in.shape[1], iw = in.shape[2];
    const int patch = ic * k * k;
    cols.assign(static_cast<std::size_t>(oh) * ow * patch, 0.0f);
    for (int y = 0; y < oh; ++y) {
        for (int x = 0; x < ow; ++x) {
            float* dst = cols.data() + (static_cast<std::size_t>(y) * ow + x) * patch;
            for (int c = 0; c < ic; ++c) {
                const float* iplane = in.values.data() + static_cast<std::size_t>(c) * ih * iw;
                for (int ky = 0; ky < k; ++ky) {
                    const int yy = y * st - pad + ky;
                    if (yy < 0 || yy >= ih) {
                        dst += k;
                        continue;
                    }
                    const int xx0 = x * st - pad;
                    for (int kx = 0; kx < k; ++kx) {
                        const int xx = xx0 + kx;
                        *dst++ = (xx >= 0 && xx < iw)
                                     ? iplane[static_cast<std::size_t>(yy) * iw + xx]
                                     : 0.0f;
                    }
                }
            }
        }
    }
}

Tensor conv_forward(const LayerSpec& s, std::span<const float> p, const Tensor& in,
                    const std::vector<int>& out_shape) {
    const int ic = s.in_channels, oc = s.out_channels, k = s.kernel;
    const int oh = out_shape[1], ow = out_shape[2];
    const int patch = ic * k * k;
    const int positions = oh * ow;
    const float* w = p.data();
    const float* b = p.data() + static_cast<std::size_t>(oc) * patch;

    std::vector<float> cols;
    im2col(s, in, oh, ow, cols);

    Tensor out(out_shape);
    for (int o = 0; o < oc; ++o) {
        const float* wrow = w + static_cast<std::size_t>(o) * patch;
        float* orow = out.values.data() + static_cast<std::size_t>(o) * positions;
        for (int pos = 0; pos < positions; ++pos) {
            const float* col = cols.data() + static_cast<std::size_t>(pos) * patch;
            // Four independent accumulators break the serial reduction chain;
            // the summation order stays fixed, so results are reproducible.
            float a0 = 0.0f, a1 = 0.0f, a2 = 0.0f, a3 = 0.0f;
            int q = 0;
            for (; q + 4 <= patch; q += 4) {
                a0 += wrow[q] * col[q];
                a1 += wrow[q + 1] * col[q + 1];
                a2 += wrow[q + 2] * col[q + 2];
                a3 += wrow[q + 3] * col[q + 3];
            }
            float acc = b[o] + ((a0 + a1) + (a2 + a3));
            for (; q < patch; ++q) acc += wrow[q] * col[q];
            orow[pos] = acc;
        }
    }
    return out;
}

Tensor conv_backward(const LayerSpec& s, std::span<const float> p, const Tensor& in,
                     const Tensor& dout, std::span<float> pg) {
    const int ic = s.in_channels, oc = s.out_channels, k = s.kernel, st = s.stride,
              pad = s.padding;
    const int ih = in.shape[1], iw = in.shape[2];
    const int oh = dout.shape[1], ow = dout.shape[2];
    const int patch = ic * k * k;
    const int positions = oh * ow;
    const float* w = p.data();

    std::vector<float> cols;
    im2col(s, in, oh, ow, cols);
    std::vector<float> dcols(static_cast<std::size_t>(positions) * patch, 0.0f);

    float* dw = pg.empty() ? nullptr : pg.data();
    float* db = pg.empty() ? nullptr : pg.data() + static_cast<std::size_t>(oc) * patch;

    for (int o = 0; o < oc; ++o) {
        const float* grow = dout.values.data() + static_cast<std::size_t>(o) * positions;
        const float* wrow = w + static_cast<std::size_t>(o) * patch;
        float* dwrow = dw ? dw + static_cast<std::size_t>(o) * patch : nullptr;
        float gsum = 0.0f;
        for (int pos = 0; pos < positions; ++pos) {
            const float g = grow[pos];
            gsum += g;
            const float* col = cols.data() + static_cast<std::size_t>(pos) * patch;
            float* dcol = dcols.data() + static_cast<std::size_t>(pos) * patch;
            if (dwrow) {
                for (int q = 0; q < patch; ++q) {
                    dwrow[q] += g * col[q];
                    dcol[q] += g * wrow[q];
                }
            } else {
                for (int q = 0; q < patch; ++q) dcol[q] += g * wrow[q];
            }
        }
        if (db) db[o] += gsum;
    }

    // col2im scatter of the patch gradients back onto the input.
    Tensor din(in.shape);
    for (int y = 0; y < oh; ++y) {
        for (int x = 0; x < ow; ++x) {
            const float* dcol = dcols.data() + (static_cast<std::size_t>(y) * ow + x) * patch;
            for (int c = 0; c < ic; ++c) {
                float* dplane = din.values.data() + static_cast<std::size_t>(c) * ih * iw;
                for (int ky = 0; ky < k; ++ky) {
                    const int yy = y * st - pad + ky;
                    if (yy < 0 || yy >= ih) {
                        dcol += k;
                        continue;
                    }
                    const int xx0 = x * st - pad;
                    for (int kx = 0; kx < k; ++kx) {
                        const int xx = xx0 + kx;
                        if (xx >= 0 && xx < iw) {
                            dplane[static_cast<std::size_t>(yy) * iw + xx] += *dcol;
                        }
                        ++dcol;
                    }
                }
            }
        }
    }
    return din;
}

Tensor relu_forward(const Tensor& in) {
    Tensor out(in.shape);
    for (std::size_t i = 0; i < in.values.size(); ++i) {
        out.values[i] = in.values[i] > 0.0f ? in.values[i] : 0.0f;
    }
    return out;
}

Tensor relu_backward(const Tensor& out, const Tensor& dout) {
    Tensor din(out.shape);
    for (std::size_t i = 0; i < out.values.size(); ++i) {
        din.values[i] = out.values[i] > 0.0f ? dout.values[i] : 0.0f;
    }
    return din;
}

Tensor maxpool_forward(const LayerSpec& s, const Tensor& in, const std::vector<int>& out_shape) {
    const int ch = in.shape[0], ih = in.shape[1], iw = in.shape[2];
    const int oh = out_shape[1], ow = out_shape[2];
    Tensor out(out_shape);
    for (int c = 0; c < ch; ++c) {
        for (int y = 0; y < oh; ++y) {
            for (int x = 0; x < ow; ++x) {
                float best = -std::numeric_limits<float>::infinity();
                for (int wy = 0; wy < s.window; ++wy) {
                    const int yy = y * s.pool_stride + wy;
                    if (yy >= ih) break;
                    for (int wx = 0; wx < s.window; ++wx) {
                        const int xx = x * s.pool_stride + wx;
                        if (xx >= iw) break;
                        best = std::max(best, in.at3(c, yy, xx));
                    }
                }
                out.at3(c, y, x) = best;
            }
        }
    }
    return out;
}

// Gradient routed to the first maximum in row-major window order (ties are
// deterministic).
Tensor maxpool_backward(const LayerSpec& s, const Tensor& in, const Tensor& dout) {
    const int ch = in.shape[0], ih = in.shape[1], iw = in.shape[2];
    const int oh = dout.shape[1], ow = dout.shape[2];
    Tensor din(in.shape);
    for (int c = 0; c < ch; ++c) {
        for (int y = 0; y < oh; ++y) {
            for (int x = 0; x < ow; ++x) {
                float best = -std::numeric_limits<float>::infinity();
                int by = -1, bx = -1;
                for (int wy = 0; wy < s.window; ++wy) {
                    const int yy = y * s.pool_stride + wy;
                    if (yy >= ih) break;
                    for (int wx = 0; wx < s.window; ++wx) {
                        const int xx = x * s.pool_stride + wx;
                        if (xx >= iw) break;
                        if (in.at3(c, yy, xx) > best) {
                            best = in.at3(c, yy, xx);
                            by = yy;
                            bx = xx;
                        }
                    }
                }
                din.at3(c, by, bx) += dout.at3(c, y, x);
            }
        }
    }
    return din;
}

Tensor gap_forward(const Tensor& in) {
    const int ch = in.shape[0];
    const int hw = in.shape[1] * in.shape[2];
    Tensor out({ch});
    const float inv = 1.0f / static_cast<float>(hw);
    for (int c = 0; c < ch; ++c) {
        float acc = 0.0f;
        const float* plane = in.values.data() + static_cast<std::size_t>(c) * hw;
        for (int i = 0; i < hw; ++i) acc += plane[i];
        out.values[static_cast<std::size_t>(c)] = acc * inv;
    }
    return out;
}

Tensor gap_backward(const Tensor& in, const Tensor& dout) {
    const int ch = in.shape[0];
    const int hw = in.shape[1] * in.shape[2];
    Tensor din(in.shape);
    const float inv = 1.0f / static_cast<float>(hw);
    for (int c = 0; c < ch; ++c) {
        const float g = dout.values[static_cast<std::size_t>(c)] * inv;
        float* plane = din.values.data() + static_cast<std::size_t>(c) * hw;
        for (int i = 0; i < hw; ++i) plane[i] = g;
    }
    return din;
}

Tensor layer_forward(const LayerSpec& spec, std::span<const float> params, const Tensor& in,
                     int layer_index) {
    const std::vector<int> out_shape = layer_output_shape(spec, in.shape, layer_index);
    switch (spec.kind) {
        case LayerKind::Dense: return dense_forward(spec, params, in);
        case LayerKind::Conv2d: return conv_forward(spec, params, in, out_shape);
        case LayerKind::Relu: return relu_forward(in);
        case LayerKind::MaxPool2d: return maxpool_forward(spec, in, out_shape);
        case LayerKind::GlobalAvgPool: return gap_forward(in);
        case LayerKind::Flatten: return Tensor(out_shape, in.values);
    }
    throw InternalError("unknown layer kind");
}

Tensor layer_backward(const LayerSpec& spec, std::span<const float> params, const Tensor& in,
                      const Tensor& out, const Tensor& dout, std::span<float> pgrads) {
    switch (spec.kind) {
        case LayerKind::Dense: return dense_backward(spec, params, in, dout, pgrads);
        case LayerKind::Conv2d: return conv_backward(spec, params, in, dout, pgrads);
        case LayerKind::Relu: return relu_backward(out, dout);
        case LayerKind::MaxPool2d: return maxpool_backward(spec, in, dout);
        case LayerKind::GlobalAvgPool: return gap_backward(in, dout);
        case LayerKind::Flatten: return Tensor(in.shape, dout.values);
    }
    throw InternalError("unknown layer kind");
}

// Softmax cross-entropy; loss in double, gradient (softmax - onehot) in float.
double softmax_xent(const Tensor& logits, int label, Tensor* dlogits) {
    const int n = logits.shape[0];
    float maxv = logits.values[0];
    for (int i = 1; i < n; ++i) maxv = std::max(maxv, logits.values[static_cast<std::size_t>(i)]);
    double sum = 0.0;
    for (int i = 0; i < n; ++i) {
        sum += std::exp(static_cast<double>(logits.values[static_cast<std::size_t>(i)] - maxv));
    }
    const double loss =
        std::log(sum) - static_cast<double>(logits.values[static_cast<std::size_t>(label)] - maxv);
    if (dlogits) {
        *dlogits = Tensor(logits.shape);
        for (int i = 0; i < n; ++i) {
            const double p =
                std::exp(static_cast<double>(logits.values[static_cast<std::size_t>(i)] - maxv)) /
                sum;
            dlogits->values[static_cast<std::size_t>(i)] =
                static_cast<float>(p) - (i == label ? 1.0f : 0.0f);
        }
    }
    return loss;
}

}  // namespace

std::pair<Tensor, ForwardTrace> forward(const Model& model, const Tensor& input, Capture capture,
                                        int capture_layer) {
    if (input.shape != model.input_shape) {
        throw ConfigError("layer 0 (" + layer_kind_name(model.layers.at(0).kind) +
                          "): input shape " + shape_to_string(input.shape) +
                          " does not match model input " + shape_to_string(model.input_shape));
    }
    ForwardTrace trace;
    if (capture != Capture::None) {
        trace.layer_outputs.resize(model.layers.size());
        for (std::size_t i = 0; i < model.layers.size(); ++i) {
            if (model.layers[i].kind == LayerKind::Relu) {
                trace.relu_positions.push_back(static_cast<int>(i));
            }
        }
    }
    Tensor cur = input;
    for (std::size_t i = 0; i < model.layers.size(); ++i) {
        cur = layer_forward(model.layers[i], model.params.layer_span(i), cur,
                            static_cast<int>(i));
        if (capture == Capture::All ||
            (capture == Capture::SingleLayer && static_cast<int>(i) == capture_layer)) {
            trace.layer_outputs[i] = cur;
        }
    }
    return {std::move(cur), std::move(trace)};
}

double loss_and_grad(const Model& model, const std::vector<std::pair<Tensor, int>>& batch,
                     std::vector<float>& grads_out, int* correct_count) {
    if (batch.empty()) throw DataError("loss_and_grad: empty batch");
    const int classes = model.num_classes();
    for (const auto& [x, label] : batch) {
        if (label < 0 || label >= classes) {
            throw DataError("label " + std::to_string(label) + " out of range [0, " +
                            std::to_string(classes) + ")");
        }
        (void)x;
    }
    grads_out.assign(model.params.flat.size(), 0.0f);
    const std::size_t n_layers = model.layers.size();
    double loss_sum = 0.0;
    if (correct_count) *correct_count = 0;

    for (const auto& [x, label] : batch) {
        auto [logits, trace] = forward(model, x, Capture::All);
        if (correct_count && argmax_class(logits) == label) ++*correct_count;
        Tensor dout;
        loss_sum += softmax_xent(logits, label, &dout);
        for (std::size_t li = n_layers; li-- > 0;) {
            const Tensor& in = li == 0 ? x : trace.layer_outputs[li - 1];
            const auto& [start, len] = model.params.offsets[li];
            std::span<float> pg =
                len == 0 ? std::span<float>() : std::span<float>(grads_out.data() + start, len);
            dout = layer_backward(model.layers[li], model.params.layer_span(li), in,
                                  trace.layer_outputs[li], dout, pg);
        }
    }
    const float inv_n = 1.0f / static_cast<float>(batch.size());
    for (auto& g : grads_out) g *= inv_n;
    return loss_sum / static_cast<double>(batch.size());
}

double batch_loss(const Model& model, const std::vector<std::pair<Tensor, int>>& batch) {
    if (batch.empty()) throw DataError("batch_loss: empty batch");
    double loss_sum = 0.0;
    for (const auto& [x, label] : batch) {
        auto [logits, trace] = forward(model, x, Capture::None);
        loss_sum += softmax_xent(logits, label, nullptr);
    }
    return loss_sum / static_cast<double>(batch.size());
}

double xent_loss(const Tensor& logits, int label) { return softmax_xent(logits, label, nullptr); }

void sgd_step(std::vector<float>& params, const std::vector<float>& grads,
              std::vector<float>& velocity, float lr, float momentum) {
    if (params.size() != grads.size() || params.size() != velocity.size()) {
        throw InternalError("sgd_step: array length mismatch");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        velocity[i] = momentum * velocity[i] + grads[i];
        params[i] -= lr * velocity[i];
    }
}

Tensor input_gradient(const Model& model, const Tensor& input, const LayerObjective& objective,
                      double* objective_value) {
    if (objective.layer_index < 0 ||
        objective.layer_index >= static_cast<int>(model.layers.size())) {
        throw ConfigError("objective attached to non-existent layer " +
                          std::to_string(objective.layer_index));
    }
    auto [logits, trace] = forward(model, input, Capture::All);
    (void)logits;
    const auto& attached = trace.layer_outputs[static_cast<std::size_t>(objective.layer_index)];
    auto [value, dout] = objective.fn(attached);
    if (objective_value) *objective_value = value;
    if (dout.shape != attached.shape) {
        throw ConfigError("objective gradient shape " + shape_to_string(dout.shape) +
                          " does not match layer output " + shape_to_string(attached.shape));
    }
    Tensor cur = std::move(dout);
    for (int li = objective.layer_index; li >= 0; --li) {
        const Tensor& in = li == 0 ? input : trace.layer_outputs[static_cast<std::size_t>(li - 1)];
        cur = layer_backward(model.layers[static_cast<std::size_t>(li)],
                             model.params.layer_span(static_cast<std::size_t>(li)), in,
                             trace.layer_outputs[static_cast<std::size_t>(li)], cur,
                             std::span<float>());
    }
    return cur;
}

int argmax_class(const Tensor& logits) {
    int best = 0;
    for (int i = 1; i < logits.shape[0]; ++i) {
        if (logits.values[static_cast<std::size_t>(i)] >
            logits.values[static_cast<std::size_t>(best)]) {
            best = i;
        }
    }
    return best;
}

}  // namespace fedadapt
