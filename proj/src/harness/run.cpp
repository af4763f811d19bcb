#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "mimir/bounds.hpp"
#include "mimir/config.hpp"
#include "mimir/harness.hpp"

namespace mimir::harness {

namespace {

namespace fs = std::filesystem;

void write_file(const fs::path& path, const std::string& content, bool append = false) {
    std::ofstream f(path, append ? std::ios::app : std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write '" + path.string() + "'");
    f << content;
    if (!f) throw std::runtime_error("write to '" + path.string() + "' failed");
}

Dataset load_split(const ExperimentConfig& c, bool test) {
    const auto& d = c.data;
    Dataset out;
    if (d.source == "cifar10") {
        out = load_cifar10_binary(d.path, test ? "test" : "train");
    } else {
        // Independent streams so the test split never overlaps the train split.
        Rng root(d.seed);
        Rng train_rng = root.split();
        Rng test_rng = root.split();
        out = test ? synth_dataset(d.num_classes, d.test_samples_per_class, d.image_size, d.noise, test_rng,
                                   d.channels, d.contrast)
                   : synth_dataset(d.num_classes, d.samples_per_class, d.image_size, d.noise, train_rng, d.channels,
                                   d.contrast);
        out.split = test ? "test" : "train";
    }
    return out.head(d.limit);
}

// Shapes of every tensor the classifier needs must match the configured model.
void check_classifier(const vit::ModelParams& params, const vit::ViTConfig& config) {
    Rng r(0);
    vit::ModelParams ref = train::attach_classifier(vit::init_params(config, r), config);
    for (const auto& [name, t] : params.all()) {
        if (!ref.contains(name))
            throw std::runtime_error("checkpoint has unexpected tensor '" + name +
                                     "'; pre-training checkpoints must be fine-tuned before use as a classifier");
    }
    for (const auto& [name, t] : ref.all()) {
        if (!params.contains(name)) throw std::runtime_error("checkpoint lacks tensor '" + name + "'");
        if (params.at(name).shape() != t.shape())
            throw std::runtime_error("checkpoint tensor '" + name + "' has shape " +
                                     shape_str(params.at(name).shape()) + ", config expects " + shape_str(t.shape()));
    }
}

vit::Model load_classifier(const ExperimentConfig& c) {
    train::TrainState s = train::load_checkpoint(c.model_checkpoint);
    check_classifier(s.params, c.model);
    return {c.model, s.params};
}

std::vector<EvalAttack> eval_attacks(const ExperimentConfig& c) {
    attack::AttackSpec base = attack::AttackSpec::eval_default();
    base.epsilon = c.eval.epsilon;
    base.step_size = c.eval.step_size;
    std::vector<EvalAttack> out;
    std::stringstream ss(c.eval.attacks);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        auto b = tok.find_first_not_of(' ');
        if (b == std::string::npos) continue;
        auto e = tok.find_last_not_of(' ');
        EvalAttack a = parse_eval_attack(tok.substr(b, e - b + 1), base);
        a.mi_lambda = c.eval.mi_lambda;
        a.estimator = c.eval.estimator;
        out.push_back(a);
    }
    return out;
}

void run_training(const ExperimentConfig& c, bool pretrain) {
    fs::path out(c.output_dir);
    Dataset data = load_split(c, false);
    train::TrainState state;
    bool resumed = !c.train_resume.empty();
    if (resumed) {
        state = train::load_checkpoint(c.train_resume);
    } else {
        Rng root(c.seed);
        Rng init_rng = root.split();
        vit::ModelParams params = vit::init_params(c.model, init_rng);
        if (!pretrain) {
            if (!c.finetune_init.empty()) params = train::load_checkpoint(c.finetune_init).params;
            params = train::attach_classifier(params, c.model);
        }
        state = train::TrainState::fresh(std::move(params), root.next_u64());
    }

    fs::path metrics = out / "metrics.csv";
    if (!resumed || !fs::exists(metrics)) write_file(metrics, train::metrics_csv_header());
    std::size_t end = c.train.total_epochs;
    if (c.stop_after > 0) end = std::min(end, c.stop_after);
    while (state.epoch < end) {
        auto m = pretrain ? train::pretrain_epoch(state, c.model, data, c.train)
                          : train::finetune_epoch(state, c.model, data, c.train);
        write_file(metrics, train::metrics_csv_row(m), true);
        if (c.checkpoint_every > 0 && state.epoch % c.checkpoint_every == 0)
            train::save_checkpoint(state, (out / ("checkpoint_epoch" + std::to_string(state.epoch) + ".bin")).string());
    }
    train::save_checkpoint(state, (out / "checkpoint.bin").string());

    if (!pretrain) {
        Dataset test = load_split(c, true).head(c.eval.samples);
        EvalReport r = evaluate({c.model, state.params}, test, eval_attacks(c), c.seed, c.eval.batch_size);
        write_file(out / "eval.csv", r.to_csv());
    }
}

void run_attack(const ExperimentConfig& c) {
    vit::Model model = load_classifier(c);
    vit::Model frozen{model.config, model.params.frozen()};
    Dataset test = load_split(c, true).head(c.eval.samples);
    Rng rng(c.seed);
    std::string csv = "index,label,clean_pred,adv_pred,linf\n";
    char buf[160];
    for (const auto& idx : ordered_batches(test.size(), std::max<std::size_t>(c.eval.batch_size, 2))) {
        Tensor x = test.images(idx);
        auto y = test.labels_at(idx);
        attack::Perturbation p;
        if (c.attack_kind == "mi")
            p = attack::attack_mi(model, {c.eval.estimator}, x, y, c.eval.mi_lambda, c.train.attack, rng);
        else if (c.attack_kind == "fea")
            p = attack::attack_fea(model, x, c.train.attack, rng);
        else
            p = attack::attack_ce(model, x, y, c.train.attack, rng);
        auto clean = predict(frozen, x);
        auto adv = predict(frozen, p.adversarial);
        std::size_t per = test.image_numel();
        for (std::size_t j = 0; j < idx.size(); ++j) {
            double linf = 0.0;
            for (std::size_t k = 0; k < per; ++k) linf = std::max(linf, std::abs(p.delta.at(j * per + k)));
            std::snprintf(buf, sizeof(buf), "%zu,%d,%d,%d,%.9g\n", idx[j], y[j], clean[j], adv[j], linf);
            csv += buf;
        }
    }
    write_file(fs::path(c.output_dir) / "attack.csv", csv);
}

void run_mi_estimate(const ExperimentConfig& c) {
    vit::Model model = load_classifier(c);
    vit::Model frozen{model.config, model.params.frozen()};
    Dataset test = load_split(c, true).head(c.mi_samples);
    if (test.size() < 2) throw std::runtime_error("mi-estimate needs at least 2 samples");
    std::vector<std::size_t> idx(test.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    Tensor x = test.images(idx);
    auto y = test.labels_at(idx);
    Rng rng(c.seed);
    Tensor x_adv = attack::attack_ce(model, x, y, c.train.attack, rng).adversarial;

    std::string csv = "quantity,estimator,value\n";
    char buf[160];
    auto emit = [&](const std::string& quantity, const Tensor& input) {
        mi::Matrix mx = mi::Matrix::from_tensor(input);
        mi::Matrix mz = mi::Matrix::from_tensor(vit::features(frozen, input));
        double sx = mi::median_bandwidth(mx), sz = mi::median_bandwidth(mz);
        double h = mi::hsic(mx, mz, sx, sz).value;
        double r = mi::renyi_mi(mx, mz, c.mi_alpha, sx, sz).value;
        std::snprintf(buf, sizeof(buf), "%s,hsic,%.9g\n%s,renyi,%.9g\n", quantity.c_str(), h, quantity.c_str(), r);
        csv += buf;
    };
    emit("x_z", x);
    emit("xadv_z", x_adv);
    write_file(fs::path(c.output_dir) / "mi.csv", csv);
}

}  // namespace

void run(const ExperimentConfig& c) {
    validate_paths(c);
    fs::path out(c.output_dir);
    fs::create_directories(out);
    write_file(out / "config.txt", serialize_config(c));

    if (c.command == "pretrain") {
        run_training(c, true);
    } else if (c.command == "finetune") {
        run_training(c, false);
    } else if (c.command == "eval") {
        vit::Model model = load_classifier(c);
        Dataset test = load_split(c, true).head(c.eval.samples);
        write_file(out / "eval.csv", evaluate(model, test, eval_attacks(c), c.seed, c.eval.batch_size).to_csv());
    } else if (c.command == "attack") {
        run_attack(c);
    } else if (c.command == "bounds") {
        write_file(out / "bounds.csv", ib::bound_curves(c.bounds_num_classes, c.bounds_step).to_csv());
    } else if (c.command == "landscape") {
        vit::Model model = load_classifier(c);
        Dataset test = load_split(c, true).head(c.landscape_samples);
        Rng rng(c.seed);
        auto grid = landscape_grid(model, test, c.landscape_half_width, c.landscape_resolution, rng,
                                   c.eval.batch_size);
        write_file(out / "landscape.csv", landscape_csv(grid));
    } else if (c.command == "mi-estimate") {
        run_mi_estimate(c);
    } else {
        throw ConfigError("unknown command '" + c.command + "'");
    }
}

int run_config(const std::string& path, const Overrides& overrides) {
    try {
        run(load_config(path, overrides));
        return 0;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace mimir::harness
