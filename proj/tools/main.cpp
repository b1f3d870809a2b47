#include <CLI11.hpp>
#include <iostream>

#include "sbdot/cli.hpp"

using namespace sbdot;

int main(int argc, char** argv) {
    CLI::App app{"Posterior sampling for linearized diffuse optical tomography"};
    app.require_subcommand(1);

    std::string config_path;
    cli::Overrides ov;
    std::uint64_t seed_arg = 0;
    std::string method_arg;
    double alpha_arg = -1.0;
    std::uint64_t samples_arg = 0;

    const auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "run configuration file");
        sub->add_option("--out", ov.out, "output directory")->capture_default_str();
        auto* s = sub->add_option("--seed", seed_arg, "seed override");
        s->each([&](const std::string&) { ov.seed = seed_arg; });
        return sub;
    };

    auto* gen = add_common(app.add_subcommand("gen-data", "generate a phantom dataset"));
    gen->add_flag("--ood", ov.ood, "also write the fixed out-of-distribution targets");
    auto* cnt = gen->add_option("--samples", samples_arg, "number of phantoms");
    cnt->each([&](const std::string&) { ov.samples = samples_arg; });

    add_common(app.add_subcommand("build-operator", "assemble and export the scaled Jacobian"));
    add_common(app.add_subcommand("train", "train a score network"));

    auto* sample = add_common(app.add_subcommand("sample", "draw posterior samples"));
    auto* m = sample->add_option("--method", method_arg, "ucos | ucos-reg | dps | gaussian");
    m->each([&](const std::string&) { ov.method = method_arg; });
    auto* a = sample->add_option("--alpha", alpha_arg, "regularization weight");
    a->each([&](const std::string&) { ov.alpha = alpha_arg; });
    auto* n = sample->add_option("--samples", samples_arg, "ensemble size");
    n->each([&](const std::string&) { ov.samples = samples_arg; });
    sample->add_flag("--shift-data", ov.shift_data,
                     "add the affine rescaling offset to the loaded data vector");

    auto* stats = add_common(app.add_subcommand("stats", "ensemble statistics and image export"));
    stats->add_option("--in", ov.inputs, "sample files (repeatable)");
    std::string truth_arg;
    auto* tr = stats->add_option("--truth", truth_arg, "truth field file for the bias map");
    tr->each([&](const std::string&) { ov.truth = truth_arg; });
    stats->add_flag("--physical", ov.physical, "export in physical units");

    add_common(app.add_subcommand("verify", "run the built-in oracle suites"));

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : cli::kExitUsage;
    }

    try {
        Config cfg = config_path.empty() ? Config{} : Config::load(config_path);
        if (app.got_subcommand("gen-data")) return cli::cmd_gen_data(cfg, ov);
        if (app.got_subcommand("build-operator")) return cli::cmd_build_operator(cfg, ov);
        if (app.got_subcommand("train")) return cli::cmd_train(cfg, ov);
        if (app.got_subcommand("sample")) return cli::cmd_sample(cfg, ov);
        if (app.got_subcommand("stats")) return cli::cmd_stats(cfg, ov);
        if (app.got_subcommand("verify")) return cli::cmd_verify(cfg, ov);
        std::cerr << "no subcommand\n";
        return cli::kExitUsage;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return cli::kExitUsage;
    } catch (const IoError& e) {
        std::cerr << "i/o error: " << e.what() << "\n";
        return cli::kExitUsage;
    } catch (const ParameterError& e) {
        std::cerr << "parameter error: " << e.what() << "\n";
        return cli::kExitUsage;
    } catch (const NumericalError& e) {
        std::cerr << "numerical error: " << e.what() << "\n";
        return cli::kExitNumerical;
    } catch (const TrainingError& e) {
        std::cerr << "training error: " << e.what() << "\n";
        return cli::kExitNumerical;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return cli::kExitNumerical;
    }
}
