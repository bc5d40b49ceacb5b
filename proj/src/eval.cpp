#include "dealkit/eval.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace dealkit {

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
    if (other.num_classes != num_classes)
        throw std::invalid_argument("ConfusionMatrix::merge: class count mismatch");
    for (std::size_t i = 0; i < counts.size(); ++i) counts[i] += other.counts[i];
}

std::vector<int> threshold_cam(const Tensor& cam, double tau) {
    if (cam.shape.size() != 3)
        throw std::invalid_argument("threshold_cam: expected K x H x W");
    if (tau < 0.0 || tau > 1.0)
        throw std::invalid_argument("threshold_cam: tau outside [0,1]");
    const int k = cam.shape[0], h = cam.shape[1], w = cam.shape[2];
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    const auto& s = cam.values();
    std::vector<int> mask(plane);
    for (std::size_t p = 0; p < plane; ++p) {
        double best = s[p];
        int arg = 0;
        for (int c = 1; c < k; ++c) {
            const double v = s[c * plane + p];
            if (v > best) { best = v; arg = c; }
        }
        mask[p] = best >= tau ? arg + 1 : 0;
    }
    return mask;
}

void accumulate(ConfusionMatrix& conf, const std::vector<int>& pred,
                const std::vector<int>& gt) {
    if (pred.size() != gt.size())
        throw std::invalid_argument("accumulate: pred/gt size mismatch");
    const int k = conf.num_classes;
    for (std::size_t p = 0; p < pred.size(); ++p) {
        if (gt[p] < 0 || gt[p] > k || pred[p] < 0 || pred[p] > k)
            throw std::invalid_argument("accumulate: class value out of range");
        ++conf.at(gt[p], pred[p]);
    }
}

EvalReport miou(const ConfusionMatrix& conf) {
    const int n = conf.num_classes + 1;
    std::int64_t total = 0;
    for (auto c : conf.counts) total += c;
    if (total == 0) throw std::invalid_argument("miou: empty confusion matrix");

    EvalReport report;
    report.per_class_iou.assign(n, std::numeric_limits<double>::quiet_NaN());
    double sum = 0.0;
    int counted = 0;
    for (int c = 0; c < n; ++c) {
        std::int64_t tp = conf.at(c, c), fp = 0, fn = 0;
        for (int o = 0; o < n; ++o) {
            if (o == c) continue;
            fp += conf.at(o, c);
            fn += conf.at(c, o);
        }
        const std::int64_t uni = tp + fp + fn;
        if (uni == 0) continue;  // class absent from gt and pred: excluded
        report.per_class_iou[c] = static_cast<double>(tp) / static_cast<double>(uni);
        sum += report.per_class_iou[c];
        ++counted;
    }
    report.miou = counted > 0 ? sum / counted : 0.0;
    return report;
}

std::vector<double> default_tau_grid() {
    std::vector<double> taus(101);
    for (int i = 0; i <= 100; ++i) taus[i] = i / 100.0;
    return taus;
}

EvalReport threshold_sweep(const std::vector<EvalSample>& samples,
                           const std::vector<double>& taus) {
    if (samples.empty()) throw std::invalid_argument("threshold_sweep: empty dataset");
    if (taus.empty()) throw std::invalid_argument("threshold_sweep: empty tau grid");
    for (double t : taus)
        if (t < 0.0 || t > 1.0)
            throw std::invalid_argument("threshold_sweep: tau outside [0,1]");
    const int k = samples.front().cam->shape[0];

    // per-pixel argmax and max are tau-independent; compute once
    struct Reduced {
        std::vector<int> arg;
        std::vector<double> maxv;
        const std::vector<int>* gt;
    };
    std::vector<Reduced> reduced;
    reduced.reserve(samples.size());
    for (const auto& s : samples) {
        if (s.cam->shape[0] != k)
            throw std::invalid_argument("threshold_sweep: inconsistent class count");
        const int h = s.cam->shape[1], w = s.cam->shape[2];
        const std::size_t plane = static_cast<std::size_t>(h) * w;
        const auto& v = s.cam->values();
        Reduced rd;
        rd.arg.resize(plane);
        rd.maxv.resize(plane);
        rd.gt = s.gt;
        for (std::size_t p = 0; p < plane; ++p) {
            double best = v[p];
            int arg = 0;
            for (int c = 1; c < k; ++c)
                if (v[c * plane + p] > best) { best = v[c * plane + p]; arg = c; }
            rd.arg[p] = arg + 1;
            rd.maxv[p] = best;
        }
        if (rd.gt->size() != plane)
            throw std::invalid_argument("threshold_sweep: gt size mismatch");
        reduced.push_back(std::move(rd));
    }

    EvalReport best;
    bool have_best = false;
    for (double tau : taus) {
        ConfusionMatrix conf(k);
        for (const auto& rd : reduced)
            for (std::size_t p = 0; p < rd.arg.size(); ++p)
                ++conf.at((*rd.gt)[p], rd.maxv[p] >= tau ? rd.arg[p] : 0);
        EvalReport rep = miou(conf);
        rep.threshold = tau;
        rep.n_samples = static_cast<int>(samples.size());
        if (!have_best || rep.miou > best.miou) {  // ties keep the smaller tau
            best = rep;
            have_best = true;
        }
    }
    return best;
}

SeedSummary aggregate_seeds(const std::vector<EvalReport>& reports) {
    if (reports.empty()) throw std::invalid_argument("aggregate_seeds: no reports");
    SeedSummary s;
    s.per_seed_miou.reserve(reports.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < reports.size(); ++i) {
        const double m = reports[i].miou;
        s.per_seed_miou.push_back(m);
        sum += m;
        if (i == 0 || m > s.best_miou) {
            s.best_miou = m;
            s.best_seed_index = static_cast<int>(i);
        }
    }
    s.mean_miou = sum / static_cast<double>(reports.size());
    return s;
}

}  // namespace dealkit
