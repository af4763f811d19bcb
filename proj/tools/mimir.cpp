#include <CLI11.hpp>

#include "mimir/config.hpp"

int main(int argc, char** argv) {
    CLI::App app{"Adversarial masked-autoencoder pre-training with an MI penalty"};
    app.require_subcommand(1, 1);

    std::string config_path;
    std::uint64_t seed = 0;
    std::string out_dir;
    for (const auto& name : mimir::harness::commands()) {
        CLI::App* sub = app.add_subcommand(name, "run the '" + name + "' stage");
        sub->add_option("--config", config_path, "flat key = value config file")->check(CLI::ExistingFile);
        sub->add_option("--seed", seed, "overrides experiment.seed");
        sub->add_option("--out", out_dir, "overrides experiment.output_dir");
    }
    CLI11_PARSE(app, argc, argv);

    CLI::App* chosen = app.get_subcommands().front();
    mimir::harness::Overrides ov;
    ov.command = chosen->get_name();
    if (chosen->count("--seed")) ov.seed = seed;
    if (chosen->count("--out")) ov.output_dir = out_dir;
    return mimir::harness::run_config(config_path, ov);
}
