#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "mimir/harness.hpp"

namespace mimir::harness {

namespace {

// Ordered batches, with a trailing single sample folded into the previous
// batch so that batch-level dependence estimators always see two samples.
std::vector<std::vector<std::size_t>> eval_batches(std::size_t n, std::size_t batch_size) {
    auto batches = ordered_batches(n, batch_size);
    if (batches.size() >= 2 && batches.back().size() == 1) {
        batches[batches.size() - 2].push_back(batches.back()[0]);
        batches.pop_back();
    }
    return batches;
}

std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
    return s;
}

int parse_iters(const std::string& digits, const std::string& token) {
    if (digits.empty() || !std::all_of(digits.begin(), digits.end(), [](unsigned char c) { return std::isdigit(c); }))
        throw std::invalid_argument("unknown attack '" + token + "'");
    int n = std::stoi(digits);
    if (n < 1) throw std::invalid_argument("attack '" + token + "' needs at least one step");
    return n;
}

}  // namespace

std::string EvalAttack::id() const {
    std::string it = std::to_string(spec.iters);
    switch (kind) {
        case AttackKind::Ce: return "PGD-" + it;
        case AttackKind::Mi: return "PGD-MI-" + it;
        case AttackKind::Fea: return "PGD-fea-" + it;
    }
    return "?";
}

EvalAttack parse_eval_attack(const std::string& token, const attack::AttackSpec& base) {
    std::string t = lower(token);
    EvalAttack a;
    a.spec = base;
    if (t.rfind("pgd-mi-", 0) == 0) {
        a.kind = AttackKind::Mi;
        a.spec.iters = parse_iters(t.substr(7), token);
    } else if (t.rfind("pgd-fea-", 0) == 0) {
        a.kind = AttackKind::Fea;
        a.spec.iters = parse_iters(t.substr(8), token);
    } else if (t.rfind("pgd-", 0) == 0) {
        a.kind = AttackKind::Ce;
        a.spec.iters = parse_iters(t.substr(4), token);
    } else {
        throw std::invalid_argument("unknown attack '" + token + "'");
    }
    return a;
}

std::string EvalReport::to_csv() const {
    std::string out = "attack,natural,robust,n\n";
    char buf[160];
    if (rows.empty()) {
        std::snprintf(buf, sizeof(buf), "clean,%.4f,%.4f,%zu\n", natural, natural, n);
        out += buf;
    }
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof(buf), "%s,%.4f,%.4f,%zu\n", r.attack.c_str(), natural, r.robust, n);
        out += buf;
    }
    return out;
}

std::vector<int> predict(const vit::Model& model, const Tensor& images) {
    Tensor logits = vit::classify(model, images);
    std::size_t b = logits.dim(0), k = logits.dim(1);
    auto v = logits.values();
    std::vector<int> out(b);
    for (std::size_t i = 0; i < b; ++i) {
        auto row = v.subspan(i * k, k);
        out[i] = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
    }
    return out;
}

EvalReport evaluate(const vit::Model& model, const Dataset& data, const std::vector<EvalAttack>& attacks,
                    std::uint64_t seed, std::size_t batch_size) {
    if (data.size() == 0) throw std::invalid_argument("evaluate: empty dataset");
    vit::Model m{model.config, model.params.frozen()};
    auto batches = eval_batches(data.size(), batch_size);

    std::vector<char> correct(data.size(), 0);
    std::size_t natural = 0;
    for (const auto& idx : batches) {
        auto pred = predict(m, data.images(idx));
        for (std::size_t j = 0; j < idx.size(); ++j) {
            correct[idx[j]] = pred[j] == data.labels[idx[j]];
            natural += correct[idx[j]];
        }
    }

    EvalReport report;
    report.n = data.size();
    double n = static_cast<double>(data.size());
    report.natural = 100.0 * static_cast<double>(natural) / n;
    for (const auto& a : attacks) {
        Rng rng(seed);
        std::size_t robust = 0;
        for (const auto& idx : batches) {
            Tensor x = data.images(idx);
            auto y = data.labels_at(idx);
            attack::Perturbation p;
            switch (a.kind) {
                case AttackKind::Ce: p = attack::attack_ce(m, x, y, a.spec, rng); break;
                case AttackKind::Mi: p = attack::attack_mi(m, {a.estimator}, x, y, a.mi_lambda, a.spec, rng); break;
                case AttackKind::Fea: p = attack::attack_fea(m, x, a.spec, rng); break;
            }
            auto pred = predict(m, p.adversarial);
            for (std::size_t j = 0; j < idx.size(); ++j)
                robust += correct[idx[j]] && pred[j] == y[j];
        }
        report.rows.push_back({a.id(), 100.0 * static_cast<double>(robust) / n});
    }
    return report;
}

double dataset_loss(const vit::Model& model, const Dataset& data, std::size_t batch_size) {
    if (data.size() == 0) throw std::invalid_argument("dataset_loss: empty dataset");
    double total = 0.0;
    for (const auto& idx : ordered_batches(data.size(), batch_size)) {
        Tensor loss = cross_entropy(vit::classify(model, data.images(idx)), data.labels_at(idx));
        total += loss.item() * static_cast<double>(idx.size());
    }
    return total / static_cast<double>(data.size());
}

std::vector<LandscapePoint> landscape_grid(const vit::Model& model, const Dataset& data, double half_width,
                                           std::size_t resolution, Rng& rng, std::size_t batch_size) {
    if (resolution < 3) throw std::invalid_argument("landscape_grid: resolution must be at least 3");
    if (resolution % 2 == 0) throw std::invalid_argument("landscape_grid: resolution must be odd");
    if (!(half_width > 0.0)) throw std::invalid_argument("landscape_grid: half_width must be positive");
    if (data.size() == 0) throw std::invalid_argument("landscape_grid: empty dataset");

    auto trainable = model.params.trainable();
    auto draw = [&] {
        std::vector<std::vector<double>> dir;
        for (const auto& [name, t] : trainable) {
            std::vector<double> d(t.numel());
            for (auto& x : d) x = rng.normal();
            double tn = 0.0, dn = 0.0;
            for (std::size_t i = 0; i < d.size(); ++i) {
                tn += t.at(i) * t.at(i);
                dn += d[i] * d[i];
            }
            double s = dn > 0.0 ? std::sqrt(tn) / std::sqrt(dn) : 0.0;
            for (auto& x : d) x *= s;
            dir.push_back(std::move(d));
        }
        return dir;
    };
    auto d1 = draw();
    auto d2 = draw();

    vit::ModelParams base = model.params.frozen();
    std::vector<LandscapePoint> out;
    out.reserve(resolution * resolution);
    double half = static_cast<double>(resolution - 1);
    for (std::size_t i = 0; i < resolution; ++i) {
        double a = half_width * (2.0 * static_cast<double>(i) - half) / half;
        for (std::size_t j = 0; j < resolution; ++j) {
            double b = half_width * (2.0 * static_cast<double>(j) - half) / half;
            vit::ModelParams p = base;
            for (std::size_t t = 0; t < trainable.size(); ++t) {
                const auto& [name, theta] = trainable[t];
                std::vector<double> w(theta.values().begin(), theta.values().end());
                if (a != 0.0)
                    for (std::size_t k = 0; k < w.size(); ++k) w[k] += a * d1[t][k];
                if (b != 0.0)
                    for (std::size_t k = 0; k < w.size(); ++k) w[k] += b * d2[t][k];
                p.set(name, Tensor::create(theta.shape(), std::move(w)));
            }
            out.push_back({a, b, dataset_loss({model.config, p}, data, batch_size)});
        }
    }
    return out;
}

std::string landscape_csv(const std::vector<LandscapePoint>& points) {
    std::string out = "a,b,loss\n";
    char buf[128];
    for (const auto& p : points) {
        std::snprintf(buf, sizeof(buf), "%.6f,%.6f,%.9g\n", p.a, p.b, p.loss);
        out += buf;
    }
    return out;
}

}  // namespace mimir::harness
