#include "fedadapt/inversion.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "fedadapt/errors.hpp"
#include "fedadapt/nn.hpp"
#include "fedadapt/rng.hpp"

namespace fedadapt {

namespace {

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Views a ReLU output as (C,H,W); 1-D dense activations become (C,1,1).
struct MapView {
    int c, h, w;
    const Tensor* t;
    float at(int ch, int y, int x) const {
        return t->values[(static_cast<std::size_t>(ch) * h + y) * w + x];
    }
};

MapView as_map(const Tensor& relu_output) {
    if (relu_output.shape.size() == 3) {
        return {relu_output.shape[0], relu_output.shape[1], relu_output.shape[2], &relu_output};
    }
    if (relu_output.shape.size() == 1) {
        return {relu_output.shape[0], 1, 1, &relu_output};
    }
    throw ConfigError("unsupported ReLU output rank " +
                      std::to_string(relu_output.shape.size()));
}

}  // namespace

double soft_sparsity(const Tensor& feature_map_channel, double beta) {
    if (!(beta > 0.0)) throw ConfigError("soft_sparsity: beta must be positive");
    double acc = 0.0;
    for (float v : feature_map_channel.values) {
        acc += sigmoid(-beta * static_cast<double>(v));
    }
    return acc / static_cast<double>(feature_map_channel.numel());
}

PropertyKind property_kind_from_name(const std::string& name) {
    if (name == "fm") return PropertyKind::Fm;
    if (name == "h_sp") return PropertyKind::HSp;
    if (name == "v_sp") return PropertyKind::VSp;
    if (name == "w_sp") return PropertyKind::WSp;
    throw ConfigError("unknown inversion property: " + name);
}

std::string property_kind_name(PropertyKind kind) {
    switch (kind) {
        case PropertyKind::Fm: return "fm";
        case PropertyKind::HSp: return "h_sp";
        case PropertyKind::VSp: return "v_sp";
        case PropertyKind::WSp: return "w_sp";
    }
    throw InternalError("unknown property kind");
}

std::vector<double> property_values(const Tensor& relu_output, PropertyKind kind, double beta) {
    const MapView m = as_map(relu_output);
    switch (kind) {
        case PropertyKind::Fm: {
            std::vector<double> out(relu_output.values.begin(), relu_output.values.end());
            return out;
        }
        case PropertyKind::HSp: {
            std::vector<double> out(static_cast<std::size_t>(m.h), 0.0);
            for (int c = 0; c < m.c; ++c) {
                for (int y = 0; y < m.h; ++y) {
                    double row = 0.0;
                    for (int x = 0; x < m.w; ++x) {
                        row += sigmoid(-beta * static_cast<double>(m.at(c, y, x)));
                    }
                    out[static_cast<std::size_t>(y)] += row / m.w;
                }
            }
            return out;
        }
        case PropertyKind::VSp: {
            std::vector<double> out(static_cast<std::size_t>(m.w), 0.0);
            for (int c = 0; c < m.c; ++c) {
                for (int x = 0; x < m.w; ++x) {
                    double col = 0.0;
                    for (int y = 0; y < m.h; ++y) {
                        col += sigmoid(-beta * static_cast<double>(m.at(c, y, x)));
                    }
                    out[static_cast<std::size_t>(x)] += col / m.h;
                }
            }
            return out;
        }
        case PropertyKind::WSp: {
            double acc = 0.0;
            for (int c = 0; c < m.c; ++c) {
                double ch = 0.0;
                for (int y = 0; y < m.h; ++y) {
                    for (int x = 0; x < m.w; ++x) {
                        ch += sigmoid(-beta * static_cast<double>(m.at(c, y, x)));
                    }
                }
                acc += ch / (static_cast<double>(m.h) * m.w);
            }
            return {acc};
        }
    }
    throw InternalError("unknown property kind");
}

InversionTarget make_inversion_target(const Model& model, const Tensor& reference,
                                      PropertyKind kind, int relu_index, double beta) {
    const int pos = model.relu_layer_position(relu_index);
    auto [logits, trace] = forward(model, reference, Capture::SingleLayer, pos);
    (void)logits;
    InversionTarget t;
    t.kind = kind;
    t.relu_index = relu_index;
    t.beta = beta;
    t.values = property_values(trace.output_at(pos), kind, beta);
    t.reference_input = reference;
    return t;
}

namespace {

// Squared-error objective between the candidate's property and the target,
// with its gradient w.r.t. the ReLU output. Closes over (kind, beta, target
// values) only.
std::pair<double, Tensor> property_objective(const Tensor& relu_output, PropertyKind kind,
                                             double beta, const std::vector<double>& target) {
    const MapView m = as_map(relu_output);
    Tensor grad(relu_output.shape);
    if (kind == PropertyKind::Fm) {
        // Mean squared error over the full map.
        const double inv = 1.0 / static_cast<double>(relu_output.numel());
        double obj = 0.0;
        for (std::size_t i = 0; i < relu_output.values.size(); ++i) {
            const double d = static_cast<double>(relu_output.values[i]) - target[i];
            obj += d * d;
            grad.values[i] = static_cast<float>(2.0 * d * inv);
        }
        return {obj * inv, grad};
    }

    const std::vector<double> prop = property_values(relu_output, kind, beta);
    if (prop.size() != target.size()) {
        throw ConfigError("target/property size mismatch; target captured at another layer?");
    }
    double obj = 0.0;
    std::vector<double> outer(prop.size());
    for (std::size_t k = 0; k < prop.size(); ++k) {
        const double d = prop[k] - target[k];
        obj += d * d;
        outer[k] = 2.0 * d;
    }
    // d soft / d a = -beta * s * (1 - s), s = sigmoid(-beta a)
    for (int c = 0; c < m.c; ++c) {
        for (int y = 0; y < m.h; ++y) {
            for (int x = 0; x < m.w; ++x) {
                const double s = sigmoid(-beta * static_cast<double>(m.at(c, y, x)));
                const double ds = -beta * s * (1.0 - s);
                double o = 0.0;
                switch (kind) {
                    case PropertyKind::HSp: o = outer[static_cast<std::size_t>(y)] / m.w; break;
                    case PropertyKind::VSp: o = outer[static_cast<std::size_t>(x)] / m.h; break;
                    case PropertyKind::WSp:
                        o = outer[0] / (static_cast<double>(m.h) * m.w);
                        break;
                    case PropertyKind::Fm: break;
                }
                grad.values[(static_cast<std::size_t>(c) * m.h + y) * m.w + x] =
                    static_cast<float>(o * ds);
            }
        }
    }
    return {obj, grad};
}

}  // namespace

InversionReport invert(const Model& model, const InversionTarget& target, int steps,
                       double step_size, std::uint64_t seed) {
    const int pos = model.relu_layer_position(target.relu_index);

    Rng rng(derive_seed(seed, kTagAttackInit));
    Tensor candidate(model.input_shape);
    for (auto& v : candidate.values) v = rng.next_float();

    LayerObjective objective;
    objective.layer_index = pos;
    const PropertyKind kind = target.kind;
    const double beta = target.beta;
    const std::vector<double>& values = target.values;
    objective.fn = [kind, beta, &values](const Tensor& relu_out) {
        return property_objective(relu_out, kind, beta, values);
    };

    InversionReport report;
    double step = step_size;
    for (int s = 0; s < steps; ++s) {
        if (s > 0 && s % 100 == 0) step *= 0.5;
        double value = 0.0;
        Tensor grad = input_gradient(model, candidate, objective, &value);
        if (!std::isfinite(value)) {
            report.diverged = true;
            break;
        }
        report.objective_trajectory.push_back(value);
        for (std::size_t i = 0; i < candidate.values.size(); ++i) {
            candidate.values[i] = std::clamp(
                candidate.values[i] - static_cast<float>(step) * grad.values[i], 0.0f, 1.0f);
        }
    }
    report.reconstructed = candidate;
    report.mse = mean_squared_error(candidate, target.reference_input);
    report.ssim = structural_similarity(candidate, target.reference_input);
    return report;
}

double mean_squared_error(const Tensor& a, const Tensor& b) {
    if (a.numel() != b.numel()) throw ConfigError("mse: size mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.values.size(); ++i) {
        const double d = static_cast<double>(a.values[i]) - static_cast<double>(b.values[i]);
        acc += d * d;
    }
    return acc / static_cast<double>(a.numel());
}

double structural_similarity(const Tensor& a, const Tensor& b) {
    if (a.numel() != b.numel()) throw ConfigError("ssim: size mismatch");
    const double n = static_cast<double>(a.numel());
    double ma = 0.0, mb = 0.0;
    for (std::size_t i = 0; i < a.values.size(); ++i) {
        ma += a.values[i];
        mb += b.values[i];
    }
    ma /= n;
    mb /= n;
    double va = 0.0, vb = 0.0, cov = 0.0;
    for (std::size_t i = 0; i < a.values.size(); ++i) {
        const double da = a.values[i] - ma;
        const double db = b.values[i] - mb;
        va += da * da;
        vb += db * db;
        cov += da * db;
    }
    va /= n;
    vb /= n;
    cov /= n;
    constexpr double c1 = 0.01 * 0.01;  // dynamic range 1.0
    constexpr double c2 = 0.03 * 0.03;
    return ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) /
           ((ma * ma + mb * mb + c1) * (va + vb + c2));
}

void save_pgm(const Tensor& image, const std::string& path) {
    int h = 0, w = 0;
    if (image.shape.size() == 3 && image.shape[0] == 1) {
        h = image.shape[1];
        w = image.shape[2];
    } else if (image.shape.size() == 2) {
        h = image.shape[0];
        w = image.shape[1];
    } else {
        throw ConfigError("save_pgm expects a (1,H,W) or (H,W) tensor");
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot open for writing: " + path);
    out << "P5\n" << w << " " << h << "\n255\n";
    for (float v : image.values) {
        const int byte = std::clamp(static_cast<int>(std::lround(v * 255.0f)), 0, 255);
        out.put(static_cast<char>(static_cast<unsigned char>(byte)));
    }
}

std::string inversion_report_to_json(const InversionTarget& target, const InversionReport& report,
                                     int steps, double step_size, std::uint64_t seed) {
    nlohmann::json j;
    j["property"] = property_kind_name(target.kind);
    j["relu_index"] = target.relu_index;
    j["beta"] = target.beta;
    j["steps"] = steps;
    j["step_size"] = step_size;
    j["seed"] = seed;
    j["diverged"] = report.diverged;
    j["mse"] = report.mse;
    j["ssim"] = report.ssim;
    j["final_objective"] =
        report.objective_trajectory.empty() ? 0.0 : report.objective_trajectory.back();
    j["objective_every_50"] = nlohmann::json::array();
    for (std::size_t i = 0; i < report.objective_trajectory.size(); i += 50) {
        j["objective_every_50"].push_back(report.objective_trajectory[i]);
    }
    return j.dump(2);
}

}  // namespace fedadapt
