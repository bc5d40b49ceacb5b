#include "dealkit/model.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace dealkit {

namespace {

constexpr int kWidth1 = 8;
constexpr int kWidth2 = 16;

Param conv_weight(const std::string& name, int cout, int cin, Rng& rng) {
    Param p;
    p.name = name;
    p.shape = {cout, cin, 3, 3};
    const double std = std::sqrt(2.0 / (cin * 9));
    p.value.resize(static_cast<std::size_t>(cout) * cin * 9);
    for (double& v : p.value) v = rng.gaussian(0.0, std);
    return p;
}

Param conv_bias(const std::string& name, int cout) {
    return {name, {cout}, std::vector<double>(cout, 0.0)};
}

}  // namespace

ToyModel ToyModel::init(int num_classes, Rng& rng) {
    if (num_classes < 1) throw std::invalid_argument("ToyModel: num_classes < 1");
    ToyModel m;
    m.num_classes = num_classes;
    m.params.push_back(conv_weight("w1", kWidth1, 3, rng));
    m.params.push_back(conv_bias("b1", kWidth1));
    m.params.push_back(conv_weight("w2", kWidth2, kWidth1, rng));
    m.params.push_back(conv_bias("b2", kWidth2));
    m.params.push_back(conv_weight("w3", num_classes, kWidth2, rng));
    m.params.push_back(conv_bias("b3", num_classes));
    return m;
}

void ToyModel::zero_last_layer() {
    for (auto& p : params)
        if (p.name == "w3" || p.name == "b3")
            std::fill(p.value.begin(), p.value.end(), 0.0);
}

std::vector<Tensor> param_leaves(const ToyModel& model, Tape& tape) {
    std::vector<Tensor> leaves;
    leaves.reserve(model.params.size());
    for (const auto& p : model.params) {
        for (double v : p.value)
            if (!std::isfinite(v))
                throw std::runtime_error("ToyModel: non-finite parameter in " + p.name);
        leaves.push_back(tape.tensor_from(p.value, p.shape, true));
    }
    return leaves;
}

ForwardResult forward_cam_with(const std::vector<Tensor>& leaves, int num_classes,
                               const Tensor& x) {
    if (x.shape.size() != 3 || x.shape[0] != 3)
        throw std::invalid_argument("forward_cam: input must be 3 x H x W");
    if (x.shape[1] < 8 || x.shape[2] < 8)
        throw std::invalid_argument("forward_cam: spatial extent < 8");
    if (leaves.size() != 6) throw std::invalid_argument("forward_cam: expected 6 params");

    Tensor h1 = ew_unary(conv2d(x, leaves[0], leaves[1]), Unary::Relu);
    Tensor h2 = ew_unary(conv2d(h1, leaves[2], leaves[3]), Unary::Relu);
    Tensor raw = conv2d(h2, leaves[4], leaves[5]);

    ForwardResult out;
    out.logits = spatial_mean_per_channel(raw);
    out.cam = channel_max_norm(ew_unary(raw, Unary::Relu));
    (void)num_classes;
    return out;
}

ForwardResult forward_cam(const ToyModel& model, const Tensor& x, Tape* tape,
                          std::vector<int>* param_nodes) {
    if (tape) {
        auto leaves = param_leaves(model, *tape);
        if (param_nodes) {
            param_nodes->clear();
            for (const auto& l : leaves) param_nodes->push_back(l.node);
        }
        return forward_cam_with(leaves, model.num_classes, x);
    }
    std::vector<Tensor> consts;
    consts.reserve(model.params.size());
    for (const auto& p : model.params) {
        for (double v : p.value)
            if (!std::isfinite(v))
                throw std::runtime_error("ToyModel: non-finite parameter in " + p.name);
        consts.push_back(tensor_from(p.value, p.shape));
    }
    return forward_cam_with(consts, model.num_classes, x);
}

void save_model(const std::filesystem::path& path, const ToyModel& model) {
    std::ofstream os(path);
    if (!os) throw std::ios_base::failure(path.string() + ": cannot open for writing");
    os << "toymodel " << model.num_classes << " " << model.params.size() << "\n";
    char buf[40];
    for (const auto& p : model.params) {
        os << p.name;
        for (int e : p.shape) os << " " << e;
        os << "\n";
        for (std::size_t i = 0; i < p.value.size(); ++i) {
            std::snprintf(buf, sizeof buf, "%a", p.value[i]);
            os << buf << (i + 1 == p.value.size() ? "\n" : " ");
        }
    }
    if (!os) throw std::ios_base::failure(path.string() + ": write failed");
}

ToyModel load_model(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw std::ios_base::failure(path.string() + ": cannot open");
    std::string magic;
    std::size_t n_params = 0;
    ToyModel m;
    if (!(is >> magic >> m.num_classes >> n_params) || magic != "toymodel")
        throw std::ios_base::failure(path.string() + ": not a toymodel checkpoint");
    std::string header;
    std::getline(is, header);
    for (std::size_t i = 0; i < n_params; ++i) {
        std::getline(is, header);
        std::istringstream hs(header);
        Param p;
        hs >> p.name;
        int e;
        while (hs >> e) p.shape.push_back(e);
        std::size_t n = 1;
        for (int ext : p.shape) n *= static_cast<std::size_t>(ext);
        p.value.resize(n);
        for (std::size_t j = 0; j < n; ++j) {
            std::string tok;
            if (!(is >> tok))
                throw std::ios_base::failure(path.string() + ": truncated checkpoint");
            p.value[j] = std::strtod(tok.c_str(), nullptr);
        }
        std::getline(is, header);
        m.params.push_back(std::move(p));
    }
    return m;
}

}  // namespace dealkit
