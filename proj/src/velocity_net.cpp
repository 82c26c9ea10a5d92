#include "flowrl/velocity_net.hpp"

#include <cmath>
#include <fstream>
#include <numbers>

#include <nlohmann/json.hpp>

#include "binary_io.hpp"
#include "flowrl/errors.hpp"
#include "flowrl/kernels.hpp"
#include "flowrl/rng.hpp"

namespace flowrl {

using json = nlohmann::json;

std::string_view to_string(Activation a) {
    switch (a) {
        case Activation::tanh: return "tanh";
        case Activation::relu: return "relu";
        case Activation::identity: return "identity";
    }
    return "?";
}

Activation parse_activation(std::string_view s) {
    if (s == "tanh") return Activation::tanh;
    if (s == "relu") return Activation::relu;
    if (s == "identity") return Activation::identity;
    throw ConfigError("unknown activation '" + std::string(s) + "'");
}

LossKind parse_loss_kind(std::string_view s) {
    if (s == "flow_matching") return LossKind::flow_matching;
    if (s == "output_gradient") return LossKind::output_gradient;
    throw ConfigError("unknown loss kind '" + std::string(s) + "'");
}

std::size_t NetConfig::time_features() const {
    return time_encoding == TimeEncoding::raw ? 1 : 1 + 2 * time_frequencies;
}

std::size_t NetConfig::input_dim() const {
    return latent_dim + time_features() + signal_len + reference_len;
}

std::size_t NetConfig::output_dim() const { return latent_dim + (skip_gate ? 1 : 0); }

std::vector<std::size_t> NetConfig::layer_sizes() const {
    std::vector<std::size_t> sizes{input_dim()};
    sizes.insert(sizes.end(), hidden.begin(), hidden.end());
    sizes.push_back(output_dim());
    return sizes;
}

void ModelParams::validate() const {
    const auto sizes = config.layer_sizes();
    if (layers.size() + 1 != sizes.size()) {
        throw ShapeError("model has " + std::to_string(layers.size()) + " layers, config implies " +
                         std::to_string(sizes.size() - 1));
    }
    for (std::size_t l = 0; l < layers.size(); ++l) {
        const auto& layer = layers[l];
        if (layer.weight.rank() != 2 || layer.weight.dim(0) != sizes[l + 1] ||
            layer.weight.dim(1) != sizes[l] || layer.bias.size() != sizes[l + 1]) {
            throw ShapeError("layer " + std::to_string(l) + " has shape " +
                             layer.weight.shape_string() + ", expected [" +
                             std::to_string(sizes[l + 1]) + "," + std::to_string(sizes[l]) + "]");
        }
        if (!layer.weight.all_finite() || !layer.bias.all_finite()) {
            throw NumericError("layer " + std::to_string(l) + " has non-finite parameters");
        }
    }
}

std::size_t ModelParams::parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.weight.size() + l.bias.size();
    return n;
}

ModelParams init_params(const NetConfig& config, std::uint64_t seed) {
    if (config.latent_dim == 0) throw ConfigError("latent_dim must be positive");
    for (auto h : config.hidden) {
        if (h == 0) throw ConfigError("hidden widths must be positive");
    }
    Rng rng(derive_seed(seed, {0x1417}));
    const double gain = config.activation == Activation::tanh   ? 5.0 / 3.0
                        : config.activation == Activation::relu ? std::numbers::sqrt2
                                                                : 1.0;
    ModelParams p{config, {}};
    const auto sizes = config.layer_sizes();
    for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
        DenseLayer layer{NumericArray({sizes[l + 1], sizes[l]}), NumericArray({sizes[l + 1]})};
        const bool last = l + 2 == sizes.size();
        if (!last) {
            const double bound = gain * std::sqrt(3.0 / static_cast<double>(sizes[l]));
            for (double& w : layer.weight.values()) w = (2.0 * rng.uniform() - 1.0) * bound;
        }
        p.layers.push_back(std::move(layer));
    }
    return p;
}

GradientBundle GradientBundle::zeros_like(const ModelParams& params) {
    GradientBundle g;
    for (const auto& l : params.layers) {
        g.grads.push_back({NumericArray(l.weight.shape()), NumericArray(l.bias.shape())});
    }
    return g;
}

double GradientBundle::squared_norm() const {
    double s = 0.0;
    for (const auto& l : grads) {
        for (double v : l.weight.values()) s += v * v;
        for (double v : l.bias.values()) s += v * v;
    }
    return s;
}

bool GradientBundle::all_finite() const {
    for (const auto& l : grads) {
        if (!l.weight.all_finite() || !l.bias.all_finite()) return false;
    }
    return true;
}

void GradientBundle::add_scaled(const GradientBundle& other, double scale) {
    require_same_size(grads.size(), other.grads.size(), "GradientBundle::add_scaled");
    for (std::size_t l = 0; l < grads.size(); ++l) {
        auto w = grads[l].weight.values();
        auto ow = other.grads[l].weight.values();
        require_same_size(w.size(), ow.size(), "GradientBundle::add_scaled");
        for (std::size_t i = 0; i < w.size(); ++i) w[i] += scale * ow[i];
        auto b = grads[l].bias.values();
        auto ob = other.grads[l].bias.values();
        for (std::size_t i = 0; i < b.size(); ++i) b[i] += scale * ob[i];
    }
}

void assemble_input(const NetConfig& config, const VelocityQuery& q, std::span<double> row) {
    require_same_size(q.z_t.size(), config.latent_dim, "velocity input z_t");
    if (q.condition == nullptr) throw ConfigError("velocity query without condition");
    require_same_size(q.condition->signal.size(), config.signal_len, "velocity input signal");
    require_same_size(q.condition->reference.size(), config.reference_len,
                      "velocity input reference");
    std::size_t k = 0;
    for (double z : q.z_t) row[k++] = z;
    row[k++] = q.t;
    if (config.time_encoding == TimeEncoding::sinusoidal) {
        for (std::size_t f = 0; f < config.time_frequencies; ++f) {
            const double w = std::numbers::pi * static_cast<double>(1ULL << f);
            row[k++] = std::sin(w * q.t);
            row[k++] = std::cos(w * q.t);
        }
    }
    for (double s : q.condition->signal.values()) row[k++] = s;
    for (double r : q.condition->reference.values()) row[k++] = r;
}

namespace {

void activate(Activation a, std::span<double> x) {
    switch (a) {
        case Activation::tanh:
            for (double& v : x) v = std::tanh(v);
            break;
        case Activation::relu:
            for (double& v : x) v = v > 0.0 ? v : 0.0;
            break;
        case Activation::identity:
            break;
    }
}

kernels::DenseView view(const DenseLayer& l) {
    return {l.weight.values(), l.bias.values(), l.out(), l.in()};
}

}  // namespace

ForwardTrace forward_trace(const ModelParams& params, std::span<const VelocityQuery> queries) {
    const auto& cfg = params.config;
    const std::size_t batch = queries.size();
    const std::size_t dim = cfg.latent_dim;
    ForwardTrace tr;
    tr.batch = batch;

    std::vector<double> x(batch * cfg.input_dim());
    tr.z_t.resize(batch * dim);
    for (std::size_t b = 0; b < batch; ++b) {
        assemble_input(cfg, queries[b], std::span(x).subspan(b * cfg.input_dim(), cfg.input_dim()));
        std::copy(queries[b].z_t.begin(), queries[b].z_t.end(), tr.z_t.begin() + b * dim);
    }

    for (std::size_t l = 0; l < params.layers.size(); ++l) {
        const auto& layer = params.layers[l];
        std::vector<double> y(batch * layer.out());
        kernels::omp::dense_forward(view(layer), x, batch, y);
        tr.inputs.push_back(std::move(x));
        tr.raw.push_back(y);
        if (l + 1 < params.layers.size()) activate(cfg.activation, y);
        x = std::move(y);
    }

    const std::size_t out_dim = cfg.output_dim();
    tr.velocity.resize(batch * dim);
    for (std::size_t b = 0; b < batch; ++b) {
        const double* head = &x[b * out_dim];
        const double gate = cfg.skip_gate ? head[dim] : 0.0;
        const double* z = &tr.z_t[b * dim];
        double* v = &tr.velocity[b * dim];
        for (std::size_t i = 0; i < dim; ++i) v[i] = head[i] + gate * z[i];
    }
    if (!all_finite(tr.velocity)) throw NumericError("velocity network produced non-finite output");
    return tr;
}

void forward_batch(const ModelParams& params, std::span<const VelocityQuery> queries,
                   std::span<double> out) {
    require_same_size(out.size(), queries.size() * params.config.latent_dim, "forward_batch output");
    auto tr = forward_trace(params, queries);
    std::copy(tr.velocity.begin(), tr.velocity.end(), out.begin());
}

NumericArray forward(const ModelParams& params, const LatentState& z_t, FlowTime t,
                     const Condition& c) {
    const VelocityQuery q{z_t.values(), t.value(), &c};
    std::vector<double> out(params.config.latent_dim);
    forward_batch(params, std::span(&q, 1), out);
    return NumericArray::from_vector(std::move(out));
}

void MlpVelocity::velocity(std::span<const VelocityQuery> queries, std::span<double> out) const {
    forward_batch(*params_, queries, out);
}

GradientBundle backward_from_output(const ModelParams& params, const ForwardTrace& trace,
                                    std::span<const double> grad_v) {
    const auto& cfg = params.config;
    const std::size_t batch = trace.batch;
    const std::size_t dim = cfg.latent_dim;
    const std::size_t out_dim = cfg.output_dim();
    require_same_size(grad_v.size(), batch * dim, "backward_from_output");

    std::vector<double> dy(batch * out_dim);
    for (std::size_t b = 0; b < batch; ++b) {
        const double* g = &grad_v[b * dim];
        double* d = &dy[b * out_dim];
        std::copy(g, g + dim, d);
        if (cfg.skip_gate) {
            const double* z = &trace.z_t[b * dim];
            double s = 0.0;
            for (std::size_t i = 0; i < dim; ++i) s += g[i] * z[i];
            d[dim] = s;
        }
    }

    GradientBundle grads = GradientBundle::zeros_like(params);
    for (std::size_t li = params.layers.size(); li-- > 0;) {
        const auto& layer = params.layers[li];
        auto& g = grads.grads[li];
        std::vector<double> dx;
        if (li > 0) dx.resize(batch * layer.in());
        kernels::omp::dense_backward(view(layer), trace.inputs[li], dy, batch, g.weight.values(),
                                     g.bias.values(), dx);
        if (li == 0) break;
        // Through the activation of the previous layer.
        const auto& act_out = trace.inputs[li];
        const auto& pre = trace.raw[li - 1];
        switch (cfg.activation) {
            case Activation::tanh:
                for (std::size_t k = 0; k < dx.size(); ++k) dx[k] *= 1.0 - act_out[k] * act_out[k];
                break;
            case Activation::relu:
                for (std::size_t k = 0; k < dx.size(); ++k) dx[k] = pre[k] > 0.0 ? dx[k] : 0.0;
                break;
            case Activation::identity:
                break;
        }
        dy = std::move(dx);
    }
    return grads;
}

std::pair<double, GradientBundle> backward(const ModelParams& params, const TrainingBatch& batch,
                                           LossKind kind) {
    if (batch.queries.empty()) throw ConfigError("backward: empty batch");
    const std::size_t dim = params.config.latent_dim;
    const std::size_t n = batch.queries.size();
    require_same_size(batch.targets.size(), n * dim, "backward targets");

    const auto trace = forward_trace(params, batch.queries);
    std::vector<double> grad_v(n * dim);
    double loss = 0.0;
    switch (kind) {
        case LossKind::flow_matching: {
            const double scale = 1.0 / static_cast<double>(n * dim);
            for (std::size_t k = 0; k < grad_v.size(); ++k) {
                const double r = trace.velocity[k] - batch.targets[k];
                loss += r * r;
                grad_v[k] = 2.0 * r * scale;
            }
            loss *= scale;
            break;
        }
        case LossKind::output_gradient:
            for (std::size_t k = 0; k < grad_v.size(); ++k) {
                loss += batch.targets[k] * trace.velocity[k];
                grad_v[k] = batch.targets[k];
            }
            break;
    }
    if (!std::isfinite(loss)) throw NumericError("backward: non-finite loss");
    return {loss, backward_from_output(params, trace, grad_v)};
}

void AdamConfig::validate() const {
    if (!(lr >= 0.0)) throw ConfigError("learning rate must be >= 0");
    if (!(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0)) {
        throw ConfigError("adam betas must lie in (0,1)");
    }
    if (!(weight_decay >= 0.0)) throw ConfigError("weight decay must be >= 0");
    if (!(eps > 0.0)) throw ConfigError("adam eps must be positive");
}

OptimizerState make_optimizer(const ModelParams& params, const AdamConfig& hyper) {
    hyper.validate();
    return {0, GradientBundle::zeros_like(params), GradientBundle::zeros_like(params), hyper};
}

void adamw_step(ModelParams& params, const GradientBundle& grads, OptimizerState& state) {
    require_same_size(params.layers.size(), grads.grads.size(), "adamw_step gradients");
    require_same_size(params.layers.size(), state.first_moment.grads.size(), "adamw_step moments");
    const auto& h = state.hyper;
    state.step += 1;
    const double bc1 = 1.0 - std::pow(h.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(h.beta2, static_cast<double>(state.step));

    auto update = [&](std::span<double> p, std::span<const double> g, std::span<double> m,
                      std::span<double> v) {
        require_same_size(p.size(), g.size(), "adamw_step");
        require_same_size(p.size(), m.size(), "adamw_step");
        for (std::size_t i = 0; i < p.size(); ++i) {
            p[i] -= h.lr * h.weight_decay * p[i];
            m[i] = h.beta1 * m[i] + (1.0 - h.beta1) * g[i];
            v[i] = h.beta2 * v[i] + (1.0 - h.beta2) * g[i] * g[i];
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            p[i] -= h.lr * mhat / (std::sqrt(vhat) + h.eps);
        }
    };
    for (std::size_t l = 0; l < params.layers.size(); ++l) {
        update(params.layers[l].weight.values(), grads.grads[l].weight.values(),
               state.first_moment.grads[l].weight.values(),
               state.second_moment.grads[l].weight.values());
        update(params.layers[l].bias.values(), grads.grads[l].bias.values(),
               state.first_moment.grads[l].bias.values(),
               state.second_moment.grads[l].bias.values());
    }
}

// --- checkpoint -------------------------------------------------------------

namespace {

json config_to_json(const NetConfig& c) {
    return {{"latent_dim", c.latent_dim},
            {"signal_len", c.signal_len},
            {"reference_len", c.reference_len},
            {"hidden", c.hidden},
            {"activation", std::string(to_string(c.activation))},
            {"skip_gate", c.skip_gate},
            {"time_encoding", c.time_encoding == TimeEncoding::raw ? "raw" : "sinusoidal"},
            {"time_frequencies", c.time_frequencies}};
}

NetConfig config_from_json(const json& j) {
    NetConfig c;
    c.latent_dim = j.at("latent_dim").get<std::size_t>();
    c.signal_len = j.at("signal_len").get<std::size_t>();
    c.reference_len = j.at("reference_len").get<std::size_t>();
    c.hidden = j.at("hidden").get<std::vector<std::size_t>>();
    c.activation = parse_activation(j.at("activation").get<std::string>());
    c.skip_gate = j.at("skip_gate").get<bool>();
    const auto enc = j.at("time_encoding").get<std::string>();
    if (enc == "raw") {
        c.time_encoding = TimeEncoding::raw;
    } else if (enc == "sinusoidal") {
        c.time_encoding = TimeEncoding::sinusoidal;
    } else {
        throw DataError("unknown time encoding '" + enc + "'");
    }
    c.time_frequencies = j.at("time_frequencies").get<std::size_t>();
    return c;
}

struct NamedArray {
    std::string name;
    NumericArray* array;
};

std::vector<NamedArray> named_arrays(ModelParams& p, OptimizerState* opt) {
    std::vector<NamedArray> out;
    auto add_bundle = [&](const std::string& prefix, std::vector<DenseLayer>& layers) {
        for (std::size_t l = 0; l < layers.size(); ++l) {
            out.push_back({prefix + std::to_string(l) + ".weight", &layers[l].weight});
            out.push_back({prefix + std::to_string(l) + ".bias", &layers[l].bias});
        }
    };
    add_bundle("layers.", p.layers);
    if (opt) {
        add_bundle("adam.m.", opt->first_moment.grads);
        add_bundle("adam.v.", opt->second_moment.grads);
    }
    return out;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ModelParams& params,
                     const OptimizerState* optimizer) {
    params.validate();
    ModelParams p = params;
    std::optional<OptimizerState> opt;
    if (optimizer) opt = *optimizer;
    const auto arrays = named_arrays(p, opt ? &*opt : nullptr);

    json header{{"format", "flowrl-checkpoint"},
                {"version", 1},
                {"config", config_to_json(p.config)},
                {"layer_sizes", p.config.layer_sizes()},
                {"activation", std::string(to_string(p.config.activation))}};
    if (opt) {
        header["optimizer"] = {{"step", opt->step},
                               {"lr", opt->hyper.lr},
                               {"beta1", opt->hyper.beta1},
                               {"beta2", opt->hyper.beta2},
                               {"weight_decay", opt->hyper.weight_decay},
                               {"eps", opt->hyper.eps}};
    } else {
        header["optimizer"] = nullptr;
    }
    json list = json::array();
    for (const auto& a : arrays) list.push_back({{"name", a.name}, {"shape", a.array->shape()}});
    header["arrays"] = list;

    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw DataError("cannot open " + tmp.string() + " for writing");
        os << header.dump() << '\n';
        for (const auto& a : arrays) detail::write_f64(os, a.array->values());
    }
    std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open checkpoint " + path.string());
    std::string line;
    if (!std::getline(is, line)) throw DataError("checkpoint " + path.string() + " is empty");
    json header;
    try {
        header = json::parse(line);
    } catch (const json::exception& e) {
        throw DataError("checkpoint header is not valid JSON: " + std::string(e.what()));
    }
    if (header.value("format", "") != "flowrl-checkpoint") {
        throw DataError(path.string() + " is not a flowrl checkpoint");
    }

    Checkpoint ck;
    try {
        ck.params.config = config_from_json(header.at("config"));
        const auto sizes = ck.params.config.layer_sizes();
        for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
            ck.params.layers.push_back(
                {NumericArray({sizes[l + 1], sizes[l]}), NumericArray({sizes[l + 1]})});
        }
        if (!header.at("optimizer").is_null()) {
            const auto& o = header.at("optimizer");
            AdamConfig hyper{o.at("lr").get<double>(), o.at("beta1").get<double>(),
                             o.at("beta2").get<double>(), o.at("weight_decay").get<double>(),
                             o.at("eps").get<double>()};
            ck.optimizer = make_optimizer(ck.params, hyper);
            ck.optimizer->step = o.at("step").get<std::int64_t>();
        }
        auto arrays = named_arrays(ck.params, ck.optimizer ? &*ck.optimizer : nullptr);
        const auto& listed = header.at("arrays");
        if (listed.size() != arrays.size()) throw DataError("checkpoint array count mismatch");
        for (std::size_t i = 0; i < arrays.size(); ++i) {
            if (listed[i].at("name").get<std::string>() != arrays[i].name ||
                listed[i].at("shape").get<std::vector<std::size_t>>() != arrays[i].array->shape()) {
                throw DataError("checkpoint array " + std::to_string(i) + " does not match config");
            }
            detail::read_f64(is, arrays[i].array->values());
        }
    } catch (const json::exception& e) {
        throw DataError("malformed checkpoint header: " + std::string(e.what()));
    }
    ck.params.validate();
    return ck;
}

}  // namespace flowrl
