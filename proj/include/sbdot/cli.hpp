#ifndef SBDOT_CLI_HPP
#define SBDOT_CLI_HPP

#include <filesystem>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "sbdot/config.hpp"
#include "sbdot/dot/forward.hpp"
#include "sbdot/dot/jacobian.hpp"
#include "sbdot/dps.hpp"
#include "sbdot/ensemble.hpp"
#include "sbdot/gaussian.hpp"
#include "sbdot/matrix_io.hpp"
#include "sbdot/mixture.hpp"
#include "sbdot/phantom.hpp"
#include "sbdot/stats.hpp"
#include "sbdot/ucos.hpp"

namespace sbdot::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitNumerical = 3;

/// Command-line overrides applied on top of the config file.
struct Overrides {
    std::optional<std::uint64_t> seed;
    std::optional<std::string> method;
    std::optional<double> alpha;
    std::optional<std::uint64_t> samples;
    std::string out = "out";
    bool physical = false;    // stats: export in physical units
    bool shift_data = false;  // sample: apply the affine data offset on load
    bool ood = false;         // gen-data: also write the fixed OOD targets
    std::vector<std::string> inputs;  // stats: sample files
    std::optional<std::string> truth;
};

namespace detail_cli {

inline std::filesystem::path outpath(const Overrides& ov, const std::string& name) {
    return std::filesystem::path(ov.out) / name;
}

inline void ensure_outdir(const Overrides& ov) {
    std::filesystem::create_directories(ov.out);
}

inline Grid grid_from(const Config& cfg, const std::string& nkey, std::size_t n_default) {
    return Grid{static_cast<std::size_t>(cfg.get_u64(nkey, n_default)),
                cfg.get_double("grid.extent_mm", 50.0)};
}

inline PhantomSpec phantom_spec(const Config& cfg) {
    PhantomSpec spec;
    spec.grid = grid_from(cfg, "grid.n", 32);
    spec.channels = 2;
    spec.min_inclusions = cfg.get_u64("phantom.min_inclusions", 1);
    spec.max_inclusions = cfg.get_u64("phantom.max_inclusions", 3);
    spec.radius_min_mm = cfg.get_double("phantom.radius_min_mm", 0.0);
    spec.radius_max_mm = cfg.get_double("phantom.radius_max_mm", 10.0);
    spec.contrast_min = cfg.get_double("phantom.contrast_min", 0.0);
    spec.contrast_max = cfg.get_double("phantom.contrast_max", 1.0);
    return spec;
}

inline dotfwd::Instrument instrument_from(const Config& cfg) {
    const std::string geom = cfg.get_string("instrument.geometry", "full");
    const double freq = cfg.get_double("instrument.frequency_hz", 100e6);
    dotfwd::Instrument inst;
    if (geom == "full") {
        inst = dotfwd::Instrument::full_view(
            cfg.get_u64("instrument.sources", 20), cfg.get_u64("instrument.detectors", 20),
            cfg.get_double("instrument.source_width_mm", 1.0),
            cfg.get_double("instrument.detector_width_mm", 1.0), freq);
    } else if (geom == "limited") {
        inst = dotfwd::Instrument::limited_view(
            cfg.get_u64("instrument.sources", 10), cfg.get_u64("instrument.detectors", 10),
            cfg.get_double("instrument.source_width_mm", 1.0),
            cfg.get_double("instrument.detector_width_mm", 1.0), freq);
    } else if (geom == "experimental") {
        inst = dotfwd::Instrument::experimental(cfg.get_double("instrument.frequency_hz", 56.98e6));
    } else {
        throw ConfigError("instrument.geometry: unknown value '" + geom + "'");
    }
    if (cfg.has("instrument.c_mm_s")) inst.c_mm_s = cfg.get_double("instrument.c_mm_s");
    return inst;
}

inline DiffusionSchedule schedule_from(const Config& cfg) {
    DiffusionSchedule s;
    s.t_min = cfg.get_double("schedule.eps", 0.005);
    s.t_max = cfg.get_double("schedule.T", 1.0);
    s.n_steps = cfg.get_u64("schedule.steps", 500);
    s.beta0 = cfg.get_double("schedule.beta0", 0.05);
    s.beta1 = cfg.get_double("schedule.beta1", 10.0);
    s.validate();
    return s;
}

inline CovarianceOperator diffusion_cov_from(const Config& cfg, const Grid& grid) {
    const std::string kind = cfg.get_string("diffusion.cov", "ou");
    if (kind == "identity") return CovarianceOperator::identity(2 * grid.cells());
    if (kind == "ou")
        return ou_covariance(grid, cfg.get_double("prior.sigma", 0.2),
                             cfg.get_double("prior.ell_mm", 8.0), 2);
    throw ConfigError("diffusion.cov: unknown value '" + kind + "'");
}

inline GaussianPrior model_prior_from(const Config& cfg, const Grid& grid) {
    GaussianPrior prior;
    prior.mean = Field(FieldShape{2, grid.n, grid.n}, cfg.get_double("prior.mean", 0.0));
    prior.cov = ou_covariance(grid, cfg.get_double("prior.sigma", 0.2),
                              cfg.get_double("prior.ell_mm", 8.0), 2);
    return prior;
}

inline CovarianceOperator observation_cov_from(const Config& cfg, std::size_t m) {
    const double sa = cfg.get_double("noise.sigma_amp", 0.05);
    const double sp = cfg.get_double("noise.sigma_phase", 0.001);
    std::vector<double> v(m);
    for (std::size_t i = 0; i < m; ++i) v[i] = (i < m / 2 ? sa * sa : sp * sp);
    return CovarianceOperator::diagonal(v);
}

inline NetworkConfig network_config_from(const Config& cfg) {
    NetworkConfig nc;
    nc.channels = 2;
    nc.width = cfg.get_u64("net.width", 16);
    nc.depth = cfg.get_u64("net.depth", 4);
    nc.n_modes = cfg.get_u64("net.modes", 8);
    nc.activation = ad::act_from_string(cfg.get_string("net.activation", "silu"));
    return nc;
}

/// Rasterize the configured truth at an arbitrary grid resolution.
/// truth.source = ood:<name> | index:<k> (phantom k of the dataset law) |
/// file:<path> (a single-field dataset file; fixed resolution).
inline Field truth_at(const Config& cfg, const Grid& grid) {
    const std::string src = cfg.get_string("truth.source", "ood:ellipse-triangle");
    const auto colon = src.find(':');
    const std::string kind = src.substr(0, colon);
    const std::string arg = colon == std::string::npos ? "" : src.substr(colon + 1);
    if (kind == "ood") {
        auto set = ood_phantoms(grid);
        auto it = set.find(arg);
        if (it == set.end()) throw ConfigError("truth.source: unknown ood phantom '" + arg + "'");
        return it->second;
    }
    if (kind == "index") {
        PhantomSpec spec = phantom_spec(cfg);
        spec.grid = grid;
        RngStream rng = derive_stream(cfg.get_u64("dataset.seed", 1), std::stoull(arg));
        return generate_phantom(spec, rng);
    }
    if (kind == "file") {
        auto fields = read_dataset(arg);
        if (fields.empty()) throw ConfigError("truth.source: empty dataset file " + arg);
        if (fields[0].shape.height != grid.n)
            throw ConfigError("truth.source: file resolution does not match the requested grid");
        return fields[0];
    }
    throw ConfigError("truth.source: unknown kind '" + kind + "'");
}

inline void write_artifact_meta(const std::filesystem::path& artifact, const Config& cfg,
                                std::vector<std::pair<std::string, std::string>> extra = {}) {
    std::vector<std::pair<std::string, std::string>> pairs;
    pairs.emplace_back("digest", cfg.digest());
    for (auto& p : extra) pairs.push_back(std::move(p));
    write_meta(artifact.string() + ".meta", pairs);
}

inline std::shared_ptr<DenseMatrixOperator> load_operator_2ch(const std::string& path) {
    auto f = read_matrix_file(path);
    const std::size_t per = f.n / 2;
    const auto side = static_cast<std::size_t>(std::llround(std::sqrt(double(per))));
    if (2 * side * side != f.n)
        throw ConfigError(path + ": column count is not 2 * n * n");
    return std::make_shared<DenseMatrixOperator>(FieldShape{2, side, side}, f.m,
                                                 std::move(f.row_major));
}

}  // namespace detail_cli

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

inline int cmd_gen_data(const Config& cfg, const Overrides& ov) {
    using namespace detail_cli;
    ensure_outdir(ov);
    PhantomSpec spec = phantom_spec(cfg);
    const std::size_t N = ov.samples.value_or(cfg.get_u64("dataset.size", 10000));
    const std::uint64_t seed = ov.seed.value_or(cfg.get_u64("dataset.seed", 1));
    const auto path = outpath(ov, "dataset.bin");
    generate_dataset_file(spec, N, seed, path.string());
    write_artifact_meta(path, cfg,
                        {{"seed", std::to_string(seed)}, {"count", std::to_string(N)}});
    std::cout << "wrote " << path.string() << " (" << N << " phantoms)\n";
    if (ov.ood) {
        for (const auto& [name, field] : ood_phantoms(spec.grid)) {
            const auto p = outpath(ov, "ood-" + name + ".bin");
            write_dataset(p.string(), {field});
            write_artifact_meta(p, cfg);
            std::cout << "wrote " << p.string() << "\n";
        }
    }
    return kExitOk;
}

inline int cmd_build_operator(const Config& cfg, const Overrides& ov) {
    using namespace detail_cli;
    ensure_outdir(ov);
    const Grid inv_grid = grid_from(cfg, "grid.n", 32);
    const Grid data_grid = grid_from(cfg, "data_grid.n", inv_grid.n + 1);
    dotfwd::Instrument inst = instrument_from(cfg);
    const double mua = cfg.get_double("background.mua", 0.01);
    const double mus = cfg.get_double("background.mus", 1.0);

    auto build = [&](const Grid& g, const std::string& name) {
        auto bg = dotfwd::OpticalField::homogeneous(g, mua, mus);
        dotfwd::DotJacobian J = dotfwd::jacobian(bg, inst);
        auto A = rescale_jacobian(J.j_mua, J.j_mus);
        const auto path = outpath(ov, name);
        write_matrix_file(path.string(), A->codomain_dim(), A->domain_shape().size(),
                          DenseMatrixOperator(A->domain_shape(), A->to_dense()).entries());
        write_artifact_meta(path, cfg, {{"grid_n", std::to_string(g.n)}});
        std::cout << "wrote " << path.string() << " (" << A->codomain_dim() << " x "
                  << A->domain_shape().size() << ")\n";
        return A;
    };
    auto A_inv = build(inv_grid, "operator.spmat");
    auto A_data = build(data_grid, "operator_data.spmat");
    write_data_vector(outpath(ov, "offset.bin").string(), A_inv->data_offset());

    if (cfg.has("truth.source")) {
        Field truth_data = truth_at(cfg, data_grid);
        Field truth_inv = [&] {
            const std::string src = cfg.get_string("truth.source");
            if (src.rfind("file:", 0) == 0) return truth_data;  // fixed resolution
            return truth_at(cfg, inv_grid);
        }();
        const std::uint64_t noise_seed = ov.seed.value_or(cfg.get_u64("noise.seed", 7));
        auto y = dotfwd::simulate_difference_data(
            truth_data, *A_data, cfg.get_double("noise.sigma_amp", 0.05),
            cfg.get_double("noise.sigma_phase", 0.001), noise_seed);
        const auto ypath = outpath(ov, "y.bin");
        write_data_vector(ypath.string(), y);
        write_artifact_meta(ypath, cfg, {{"noise_seed", std::to_string(noise_seed)}});
        const auto tpath = outpath(ov, "truth.bin");
        write_dataset(tpath.string(), {truth_inv});
        write_artifact_meta(tpath, cfg);
        std::cout << "wrote " << ypath.string() << " and " << tpath.string() << "\n";
    }
    return kExitOk;
}

inline int cmd_train(const Config& cfg, const Overrides& ov) {
    using namespace detail_cli;
    ensure_outdir(ov);
    const std::string dataset_path =
        cfg.get_string("paths.dataset", outpath(ov, "dataset.bin").string());
    auto dataset = read_dataset(dataset_path);
    if (dataset.empty()) throw ConfigError("train: dataset is empty");
    const FieldShape shape = dataset[0].shape;
    const Grid grid{shape.height, cfg.get_double("grid.extent_mm", 50.0)};

    NetworkConfig nc = network_config_from(cfg);
    ScoreNetwork net(nc, shape, cfg.get_u64("net.init_seed", 0));

    TrainingConfig tc;
    tc.epochs = cfg.get_u64("train.epochs", 20);
    tc.batch_size = cfg.get_u64("train.batch", 32);
    tc.t_truncation = cfg.get_double("train.eps", 0.001);
    tc.seed = ov.seed.value_or(cfg.get_u64("train.seed", 0));
    tc.optimizer.base_lr = cfg.get_double("train.lr0", 0.002);
    tc.optimizer.final_lr = cfg.get_double("train.lr1", 0.0005);
    tc.optimizer.weight_decay = cfg.get_double("train.weight_decay", 1e-4);
    tc.lambda_weighted = cfg.get_bool("train.lambda_weighted", false);

    const std::string method = cfg.get_string("train.method", "ucos");
    TrainResult result;
    if (method == "ucos") {
        UcosProblem prob;
        prob.A = load_operator_2ch(
            cfg.get_string("paths.operator", outpath(ov, "operator.spmat").string()));
        if (!(prob.A->domain_shape() == shape))
            throw ConfigError("train: operator domain does not match the dataset fields");
        prob.C = diffusion_cov_from(cfg, grid);
        prob.gamma_obs = observation_cov_from(cfg, prob.A->codomain_dim());
        prob.sched = schedule_from(cfg);
        result = train(prob, dataset, net, tc);
    } else if (method == "unconditional") {
        result = train_unconditional(diffusion_cov_from(cfg, grid), schedule_from(cfg), dataset,
                                     net, tc);
    } else {
        throw ConfigError("train.method: unknown value '" + method + "'");
    }

    const auto ckpt = outpath(ov, "model.ckpt");
    net.save(ckpt.string());
    write_artifact_meta(ckpt, cfg, {{"method", method}, {"seed", std::to_string(tc.seed)}});
    std::ofstream trace(outpath(ov, "loss_trace.csv"));
    trace.precision(17);
    for (std::size_t e = 0; e < result.epoch_loss.size(); ++e)
        trace << e << "," << result.epoch_loss[e] << "\n";
    std::cout << "wrote " << ckpt.string() << " (final epoch loss "
              << result.epoch_loss.back() << ")\n";
    return kExitOk;
}

inline int cmd_sample(const Config& cfg, const Overrides& ov) {
    using namespace detail_cli;
    ensure_outdir(ov);
    const std::string method = ov.method.value_or(cfg.get_string("sample.method", "ucos"));
    const std::size_t count = ov.samples.value_or(cfg.get_u64("sample.count", 100));
    const std::uint64_t seed = ov.seed.value_or(cfg.get_u64("sample.seed", 0));

    auto A = load_operator_2ch(
        cfg.get_string("paths.operator", outpath(ov, "operator.spmat").string()));
    const FieldShape shape = A->domain_shape();
    const Grid grid{shape.height, cfg.get_double("grid.extent_mm", 50.0)};
    std::vector<double> y =
        read_data_vector(cfg.get_string("paths.data", outpath(ov, "y.bin").string()));
    if (y.size() != A->codomain_dim())
        throw ConfigError("sample: data length does not match the operator");
    if (ov.shift_data) {
        auto offset = read_data_vector(
            cfg.get_string("paths.offset", outpath(ov, "offset.bin").string()));
        if (offset.size() != y.size()) throw ConfigError("sample: offset length mismatch");
        for (std::size_t i = 0; i < y.size(); ++i) y[i] += offset[i];
    }

    UcosProblem prob;
    prob.A = A;
    prob.C = diffusion_cov_from(cfg, grid);
    prob.gamma_obs = observation_cov_from(cfg, A->codomain_dim());
    prob.sched = schedule_from(cfg);
    GaussianPrior prior = model_prior_from(cfg, grid);

    SampleEnsemble ens;
    if (method == "gaussian") {
        GaussianPosterior post = analytic_posterior(*A, prob.gamma_obs, prior.mean, prior.cov, y);
        ens.method = "gaussian";
        ens.master_seed = seed;
        for (std::size_t k = 0; k < count; ++k) {
            RngStream rng = derive_stream(seed, k);
            ens.samples.push_back(sample_gaussian(post.mean, post.covariance, rng));
        }
    } else if (method == "ucos" || method == "ucos-reg") {
        const std::string ckpt =
            cfg.get_string("paths.checkpoint", outpath(ov, "model.ckpt").string());
        ScoreNetwork net =
            ScoreNetwork::load(ckpt, shape,
                               ad::act_from_string(cfg.get_string("net.activation", "silu")));
        SampleOptions opts;
        opts.alpha = method == "ucos" ? 0.0
                                      : ov.alpha.value_or(cfg.get_double("sample.alpha", 0.5));
        opts.n_samples = count;
        opts.master_seed = seed;
        ens = sample_posterior(prob, y, rmap_from_network(net), opts,
                               opts.alpha > 0.0 ? &prior : nullptr);
        ens.method = method;
    } else if (method == "dps") {
        const std::string ckpt =
            cfg.get_string("paths.checkpoint", outpath(ov, "model.ckpt").string());
        ScoreNetwork net =
            ScoreNetwork::load(ckpt, shape,
                               ad::act_from_string(cfg.get_string("net.activation", "silu")));
        DpsConfig dc;
        dc.rho = cfg.get_double("dps.rho", 1.0);
        dc.normalize_by_residual = cfg.get_bool("dps.normalize", true);
        dc.schedule = prob.sched;
        ens = sample_dps(net, prob, y, dc, count, seed);
    } else {
        throw ConfigError("sample.method: unknown value '" + method + "'");
    }

    ens.config_digest = cfg.digest();
    const auto path = outpath(ov, "samples.bin");
    write_dataset(path.string(), ens.samples);
    write_artifact_meta(path, cfg,
                        {{"method", ens.method},
                         {"seed", std::to_string(seed)},
                         {"count", std::to_string(ens.samples.size())},
                         {"failures", std::to_string(ens.failures.size())}});
    std::cout << "wrote " << path.string() << " (" << ens.samples.size() << " samples, method "
              << ens.method << ")\n";
    for (const auto& f : ens.failures) std::cerr << "warning: " << f << "\n";
    return kExitOk;
}

inline int cmd_stats(const Config& cfg, const Overrides& ov) {
    using namespace detail_cli;
    ensure_outdir(ov);
    std::vector<std::string> inputs = ov.inputs;
    if (inputs.empty()) inputs.push_back(outpath(ov, "samples.bin").string());

    SampleEnsemble ens;
    std::string digest;
    for (const auto& in : inputs) {
        auto meta = read_meta(in + ".meta");
        const std::string d = meta.count("digest") ? meta.at("digest") : "";
        if (digest.empty()) {
            digest = d;
            ens.method = meta.count("method") ? meta.at("method") : "unknown";
        } else if (digest != d) {
            throw ConfigError("stats: refusing to mix ensembles with different config digests (" +
                              digest + " vs " + d + ")");
        }
        for (auto& f : read_dataset(in)) ens.samples.push_back(std::move(f));
    }
    ens.config_digest = digest;

    std::optional<Field> truth;
    const std::string tpath =
        ov.truth.value_or(cfg.get_string("paths.truth", outpath(ov, "truth.bin").string()));
    if (std::filesystem::exists(tpath)) {
        auto t = read_dataset(tpath);
        if (!t.empty()) truth = std::move(t[0]);
    }

    EnsembleStats st = ensemble_stats(ens, truth ? &*truth : nullptr);
    auto maybe_physical = [&](const Field& f) { return ov.physical ? to_physical_units(f) : f; };

    const auto write_stat = [&](const Field& f, const std::string& name) {
        const Field out = maybe_physical(f);
        write_field_csv(outpath(ov, name + ".csv").string(), out);
        for (std::size_t c = 0; c < out.shape.channels; ++c)
            write_pgm16_auto(outpath(ov, name + "_c" + std::to_string(c) + ".pgm").string(), out,
                             c);
        write_artifact_meta(outpath(ov, name + ".csv"), cfg,
                            {{"source_digest", digest}, {"method", ens.method}});
    };
    write_stat(st.mean, "mean");
    // std is a spread, not a field value: physical de-rescaling applies the
    // linear channel scales only (0.02 and 2), no offset
    if (ov.physical) {
        Field s = st.std;
        const std::size_t per = s.shape.height * s.shape.width;
        for (std::size_t i = 0; i < per; ++i) s.v[i] *= 0.02;
        for (std::size_t i = per; i < 2 * per; ++i) s.v[i] *= 2.0;
        write_field_csv(outpath(ov, "std.csv").string(), s);
        for (std::size_t c = 0; c < s.shape.channels; ++c)
            write_pgm16_auto(outpath(ov, "std_c" + std::to_string(c) + ".pgm").string(), s, c);
        write_artifact_meta(outpath(ov, "std.csv"), cfg,
                            {{"source_digest", digest}, {"method", ens.method}});
    } else {
        write_stat(st.std, "std");
    }
    if (st.bias) {
        Field b = *st.bias;
        if (ov.physical) {
            const std::size_t per = b.shape.height * b.shape.width;
            for (std::size_t i = 0; i < per; ++i) b.v[i] *= 0.02;
            for (std::size_t i = per; i < 2 * per; ++i) b.v[i] *= 2.0;
        }
        write_field_csv(outpath(ov, "bias.csv").string(), b);
        for (std::size_t c = 0; c < b.shape.channels; ++c)
            write_pgm16_auto(outpath(ov, "bias_c" + std::to_string(c) + ".pgm").string(), b, c);
        write_artifact_meta(outpath(ov, "bias.csv"), cfg,
                            {{"source_digest", digest}, {"method", ens.method}});
    }
    std::cout << "wrote statistics for " << ens.samples.size() << " samples to " << ov.out
              << "\n";
    return kExitOk;
}

/// Built-in oracle suites: UCoS/Gaussian score equivalence, the geometric
/// mixture small-time rate, and the Jacobian finite-difference check.
inline int cmd_verify(const Config&, const Overrides&) {
    bool all_ok = true;
    const auto report = [&](const std::string& name, bool ok, const std::string& detail) {
        std::cout << (ok ? "PASS" : "FAIL") << "  " << name << "  (" << detail << ")\n";
        all_ok = all_ok && ok;
    };

    {
        RngStream rng(2024);
        double worst = 0.0;
        for (int inst = 0; inst < 20; ++inst) {
            const std::size_t n = 2 + rng.index(15);
            const std::size_t m = 1 + rng.index(8);
            FieldShape dom{1, 1, n};
            std::vector<double> e(m * n);
            for (auto& v : e) v = rng.normal();
            UcosProblem prob;
            prob.A = std::make_shared<DenseMatrixOperator>(dom, m, e);
            if (inst % 2 == 0) {
                Eigen::MatrixXd Cd(n, n);
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t j = 0; j < n; ++j)
                        Cd(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = std::exp(
                            -std::abs(static_cast<double>(i) - static_cast<double>(j)) / 3.0);
                prob.C = CovarianceOperator::dense(Cd);
            } else {
                prob.C = CovarianceOperator::identity(n);
            }
            std::vector<double> gv(m);
            for (auto& v : gv) v = 0.05 + 0.2 * rng.uniform();
            prob.gamma_obs = CovarianceOperator::diagonal(gv);
            prob.sched = DiffusionSchedule{};

            Eigen::MatrixXd S(n, n);
            for (Eigen::Index i = 0; i < S.size(); ++i) S.data()[i] = rng.normal();
            S = (S * S.transpose() / double(n) +
                 Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(n),
                                           static_cast<Eigen::Index>(n)))
                    .eval();
            Field mean(dom);
            auto prior_cov = CovarianceOperator::dense(S);
            std::vector<double> y(m);
            for (auto& v : y) v = rng.normal();
            GaussianPosterior post =
                analytic_posterior(*prob.A, prob.gamma_obs, mean, prior_cov, y);
            GaussianOracleR oracle(prob, mean, prior_cov);
            Field gamma = precompute_data_term(prob, y);
            for (double t : {0.05, 0.2, 0.5, 0.9}) {
                Field x(dom);
                for (auto& v : x.v) v = rng.normal();
                Field su = conditional_score(prob, oracle.as_rmap(), gamma, x, t);
                Field sg =
                    gaussian_posterior_score(post, prob.C, x, prob.sched.effective_time(t));
                double num = 0, den = 0;
                for (std::size_t i = 0; i < n; ++i) {
                    num += (su.v[i] - sg.v[i]) * (su.v[i] - sg.v[i]);
                    den += sg.v[i] * sg.v[i];
                }
                worst = std::max(worst, std::sqrt(num / std::max(den, 1e-300)));
            }
        }
        report("ucos/gaussian score equivalence", worst <= 1e-6,
               "worst relative deviation " + std::to_string(worst));
    }

    {
        auto table = mixture_rate_check({0.0, 1.0}, {1.0, 2.0}, 0.5, 0.3, {0.05, 0.10});
        const double ratio = table[0].error / table[1].error;
        report("geometric mixture small-time rate", ratio >= 0.4 && ratio <= 0.65,
               "error(0.05)/error(0.10) = " + std::to_string(ratio));
    }

    {
        Grid g{12, 50.0};
        auto background = dotfwd::OpticalField::homogeneous(g, 0.01, 1.0);
        auto inst = dotfwd::Instrument::full_view(3, 3, 4.0, 4.0);
        dotfwd::DotJacobian J = dotfwd::jacobian(background, inst);
        auto base = dotfwd::forward_measure_all(background, inst).values;
        RngStream rng(5);
        double worst = 0.0;
        const double h = 1e-6;
        for (int rep = 0; rep < 4; ++rep) {
            const std::size_t c = rng.index(g.cells());
            for (int which = 0; which < 2; ++which) {
                auto pert = background;
                (which == 0 ? pert.mua : pert.mus)[c] += h;
                auto up = dotfwd::forward_measure_all(pert, inst).values;
                const auto& entries = (which == 0 ? J.j_mua : J.j_mus)->entries();
                double num = 0, den = 0;
                for (std::size_t r = 0; r < base.size(); ++r) {
                    const double fd = (up[r] - base[r]) / h;
                    const double col = entries[r * g.cells() + c];
                    num += (fd - col) * (fd - col);
                    den += fd * fd;
                }
                worst = std::max(worst, std::sqrt(num / den));
            }
        }
        report("jacobian finite-difference check", worst <= 1e-3,
               "worst relative column deviation " + std::to_string(worst));
    }

    return all_ok ? kExitOk : kExitNumerical;
}

}  // namespace sbdot::cli

#endif
