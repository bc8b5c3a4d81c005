// beamtrack: synthetic vision-aided mmWave beam tracking pipeline.
// Subcommands: gen (dataset), train, eval, gradcheck.

#include <string>

#include "CLI11.hpp"
#include "beamtrack/cli.hpp"

using namespace beamtrack;

int main(int argc, char** argv) {
    CLI::App app{"vision-aided long-term mmWave beam tracking"};
    app.require_subcommand(1);

    std::string config_path, out_path, data_path, model_path, report_path;
    uint64_t seed = 0;
    bool seed_set = false;
    int epochs = -1, threads = 0;
    std::string mha;
    bool probe_oracle = false;

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--config", config_path, "key=value config file");
        cmd->add_option("--seed", seed, "global seed")->each([&](const std::string&) { seed_set = true; });
        cmd->add_option("--threads", threads, "worker cap (default 1, bit-exact)");
    };

    CLI::App* gen = app.add_subcommand("gen", "generate a synthetic BTDS dataset");
    add_common(gen);
    gen->add_option("--out", out_path, "output dataset path")->required();

    CLI::App* train = app.add_subcommand("train", "train a model on a BTDS dataset");
    add_common(train);
    train->add_option("--data", data_path, "input dataset path")->required();
    train->add_option("--out", out_path, "output checkpoint path")->required();
    train->add_option("--report", report_path, "per-epoch CSV report path")->required();
    train->add_option("--epochs", epochs, "override train.epochs");
    train->add_option("--mha", mha, "on|off: enable the attention block")
        ->check(CLI::IsMember({"on", "off"}));

    CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
    add_common(eval);
    eval->add_option("--model", model_path, "checkpoint path")->required();
    eval->add_option("--data", data_path, "dataset path")->required();
    eval->add_option("--report", report_path, "metrics CSV path")->required();
    eval->add_flag("--probe-oracle", probe_oracle, "inject ground-truth labels instead of running the model");

    CLI::App* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of the full model gradient");
    add_common(gradcheck);

    CLI11_PARSE(app, argc, argv);

    RunConfig cfg;
    if (!config_path.empty()) {
        try {
            cfg.apply_file(config_path);
        } catch (const config_error& e) {
            std::fprintf(stderr, "error: %s\n", e.what());
            return kBadConfig;
        } catch (const io_error& e) {
            std::fprintf(stderr, "error: %s\n", e.what());
            return kIoFailure;
        }
    }
    // flags override the config file
    if (seed_set) cfg.seed = seed;
    if (threads > 0) cfg.threads = threads;
    if (epochs >= 0) cfg.train.epochs = epochs;
    if (!mha.empty()) cfg.model.use_mha = mha == "on";

    if (gen->parsed()) return cmd_gen(cfg, out_path);
    if (train->parsed()) return cmd_train(cfg, data_path, out_path, report_path);
    if (eval->parsed()) return cmd_eval(cfg, model_path, data_path, report_path, probe_oracle);
    return cmd_gradcheck(cfg);
}
