#include "xdgmm/checkpoint.hpp"
#include "xdgmm/data.hpp"
#include "xdgmm/em.hpp"
#include "xdgmm/kmeans.hpp"
#include "xdgmm/sgd.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct GenArgs {
    std::string preset = "three-blobs";
    std::string truth_path;
    std::size_t n = 20000;
    std::uint64_t seed = 0;
    std::string out = ".";
    double noise_lo = -1.0;  // < 0 means preset default
    double noise_hi = -1.0;
};

struct FitArgs {
    std::string method = "minibatch-em";
    std::string data_path;
    std::string schema_path;
    std::string val_path;
    std::string out = ".";
    std::string config_path;
    std::string init = "kmeans";
    std::string init_checkpoint;
    int k = 4;
    int epochs = 20;
    int batch_size = 500;
    double step_size = 1e-2;
    double lr = 1e-2;
    double reg_w = 1e-3;
    int halve_step_at = 10;
    int lr_drop_at = 10;
    std::uint64_t seed = 0;
    int threads = 1;
};

struct EvalArgs {
    std::string model_path;
    std::string data_path;
    std::string schema_path;
    int threads = 1;
};

struct SampleArgs {
    std::string model_path;
    std::size_t n = 1000;
    std::uint64_t seed = 0;
    std::string out = "samples.csv";
};

// Values from a JSON config file fill in any fit option the user did not
// pass on the command line; flags always win.
void apply_config_file(CLI::App* fit, FitArgs& args) {
    if (args.config_path.empty()) return;
    std::ifstream in(args.config_path);
    if (!in) throw xdgmm::ValidationError("cannot read config file " + args.config_path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw xdgmm::ValidationError("config file is not valid JSON: " + std::string(e.what()));
    }
    const auto take = [&](const char* flag, const char* key, auto& slot) {
        if (fit->get_option(flag)->count() == 0 && j.contains(key)) {
            j.at(key).get_to(slot);
        }
    };
    take("--method", "method", args.method);
    take("--data", "data", args.data_path);
    take("--schema", "schema", args.schema_path);
    take("--val-data", "val_data", args.val_path);
    take("--out", "out", args.out);
    take("--init", "init", args.init);
    take("--init-checkpoint", "init_checkpoint", args.init_checkpoint);
    take("--k", "k", args.k);
    take("--epochs", "epochs", args.epochs);
    take("--batch-size", "batch_size", args.batch_size);
    take("--step-size", "step_size", args.step_size);
    take("--lr", "lr", args.lr);
    take("--reg-w", "reg_w", args.reg_w);
    take("--halve-step-at", "halve_step_at", args.halve_step_at);
    take("--lr-drop-at", "lr_drop_at", args.lr_drop_at);
    take("--seed", "seed", args.seed);
    take("--threads", "threads", args.threads);
}

int run_gen(const GenArgs& args) {
    xdgmm::GmmParams truth;
    xdgmm::NoiseSpec noise;
    if (!args.truth_path.empty()) {
        truth = xdgmm::load_model(args.truth_path);
        const auto d = truth.dim();
        const double lo = args.noise_lo >= 0 ? args.noise_lo : 0.05;
        const double hi = args.noise_hi >= 0 ? args.noise_hi : 0.3;
        noise = xdgmm::NoiseSpec::diagonal_range(xdgmm::Vector::Constant(d, lo),
                                                 xdgmm::Vector::Constant(d, hi));
    } else if (args.preset == "three-blobs") {
        truth = xdgmm::three_blobs_truth();
        noise = xdgmm::three_blobs_noise();
        if (args.noise_lo >= 0) noise.sigma2_lo.setConstant(args.noise_lo);
        if (args.noise_hi >= 0) noise.sigma2_hi.setConstant(args.noise_hi);
    } else {
        throw xdgmm::ValidationError("unknown preset '" + args.preset + "'");
    }

    const auto data = xdgmm::generate_synthetic(truth, noise, args.n, args.seed);
    fs::create_directories(args.out);
    xdgmm::write_csv(data, (fs::path(args.out) / "data.csv").string());
    data.schema.save((fs::path(args.out) / "schema.json").string());
    xdgmm::save_model(truth, (fs::path(args.out) / "truth.json").string());
    std::cout << "wrote " << data.size() << " rows to " << args.out << "\n";
    return 0;
}

xdgmm::GmmParams make_init(const FitArgs& args, const xdgmm::Dataset& data) {
    if (args.init == "checkpoint") {
        if (args.init_checkpoint.empty()) {
            throw xdgmm::ValidationError("--init checkpoint requires --init-checkpoint");
        }
        return xdgmm::load_model(args.init_checkpoint);
    }
    if (args.init != "kmeans") {
        throw xdgmm::ValidationError("unknown init '" + args.init + "'");
    }
    std::vector<xdgmm::Vector> observed;
    observed.reserve(data.size());
    for (const auto& p : data.points) observed.push_back(p.x);
    xdgmm::KmeansConfig cfg;
    cfg.k = args.k;
    cfg.epochs = 10;
    cfg.minibatch_size = args.batch_size;
    cfg.seed = args.seed;
    return xdgmm::kmeans_init(observed, cfg);
}

int run_fit(CLI::App* fit_cmd, FitArgs& args) {
    apply_config_file(fit_cmd, args);
    if (args.data_path.empty() || args.schema_path.empty()) {
        throw xdgmm::ValidationError("fit requires --data and --schema");
    }

    const auto schema = xdgmm::DataSchema::load(args.schema_path);
    const auto data = xdgmm::load_csv(args.data_path, schema);
    if (data.points.empty()) throw xdgmm::ValidationError("training data is empty");
    std::optional<xdgmm::Dataset> val;
    if (!args.val_path.empty()) val = xdgmm::load_csv(args.val_path, schema);

    fs::create_directories(args.out);
    const std::string model_path = (fs::path(args.out) / "model.json").string();
    const std::string report_path = (fs::path(args.out) / "report.json").string();

    const auto init = make_init(args, data);

    xdgmm::EmConfig em_cfg;
    xdgmm::SgdConfig sgd_cfg;
    bool use_sgd = false;
    if (args.method == "batch-em" || args.method == "minibatch-em") {
        em_cfg.mode = args.method == "batch-em" ? xdgmm::EmConfig::Mode::batch
                                                : xdgmm::EmConfig::Mode::minibatch;
        em_cfg.minibatch_size = args.batch_size;
        em_cfg.step_size = args.step_size;
        em_cfg.step_schedule.clear();
        if (args.halve_step_at >= 0) {
            em_cfg.step_schedule.push_back({args.halve_step_at, args.step_size / 2.0});
        }
        em_cfg.epochs = args.epochs;
        em_cfg.reg_w = args.reg_w;
        em_cfg.seed = args.seed;
        em_cfg.threads = args.threads;
    } else if (args.method == "sgd") {
        use_sgd = true;
        sgd_cfg.minibatch_size = args.batch_size;
        sgd_cfg.learning_rate = args.lr;
        sgd_cfg.lr_schedule.clear();
        if (args.lr_drop_at >= 0) {
            sgd_cfg.lr_schedule.push_back({args.lr_drop_at, args.lr / 10.0});
        }
        sgd_cfg.epochs = args.epochs;
        sgd_cfg.reg_w = args.reg_w;
        sgd_cfg.seed = args.seed;
        sgd_cfg.threads = args.threads;
    } else {
        throw xdgmm::ValidationError("unknown method '" + args.method + "'");
    }

    // Epoch records collected as they arrive so a numerical failure can
    // still leave a partial report behind.
    xdgmm::FitReport partial;
    partial.method = args.method;
    partial.config = use_sgd ? xdgmm::sgd_config_json(sgd_cfg)
                             : xdgmm::em_config_json(
                                   em_cfg, em_cfg.mode == xdgmm::EmConfig::Mode::batch
                                               ? static_cast<int>(data.size())
                                               : em_cfg.minibatch_size);
    const auto on_epoch = [&](const xdgmm::EpochRecord& rec, const xdgmm::GmmParams&) {
        partial.epochs.push_back(rec);
        std::printf("epoch %3d  train_ll %.6f  wall %.2fs\n", rec.epoch, rec.train_ll,
                    rec.wall_clock_sec);
        std::fflush(stdout);
    };

    try {
        xdgmm::FitResult result = use_sgd ? xdgmm::fit_sgd(data.points, init, sgd_cfg, on_epoch)
                                          : xdgmm::fit_em(data.points, init, em_cfg, on_epoch);
        xdgmm::save_model(result.params, model_path);
        result.report.checkpoint_path = model_path;
        if (val) {
            result.report.final_val_ll =
                xdgmm::mean_log_likelihood(result.params, val->points, args.threads);
        }
        result.report.save(report_path);
        std::printf("final train_ll %.6f", result.report.final_train_ll);
        if (result.report.final_val_ll) std::printf("  val_ll %.6f", *result.report.final_val_ll);
        std::printf("\nmodel: %s\nreport: %s\n", model_path.c_str(), report_path.c_str());
        return 0;
    } catch (const xdgmm::NumericalError& e) {
        if (!partial.epochs.empty()) {
            partial.final_train_ll = partial.epochs.back().train_ll;
        }
        partial.save(report_path);
        std::cerr << "numerical failure: " << e.what() << "\npartial report: " << report_path
                  << "\n";
        return 2;
    }
}

int run_eval(const EvalArgs& args) {
    const auto model = xdgmm::load_model(args.model_path);
    const auto schema = xdgmm::DataSchema::load(args.schema_path);
    const auto data = xdgmm::load_csv(args.data_path, schema);
    if (model.dim() != data.d_latent) {
        throw xdgmm::ValidationError("model dimension " + std::to_string(model.dim()) +
                                     " does not match data latent dimension " +
                                     std::to_string(data.d_latent));
    }
    const double ll = xdgmm::mean_log_likelihood(model, data.points, args.threads);
    std::printf("%.6f\n", ll);
    return 0;
}

int run_sample(const SampleArgs& args) {
    const auto model = xdgmm::load_model(args.model_path);
    const auto samples = xdgmm::sample_model(model, args.n, args.seed);
    if (const auto dir = fs::path(args.out).parent_path(); !dir.empty()) {
        fs::create_directories(dir);
    }
    xdgmm::write_samples_csv(samples, args.out);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Gaussian mixture fitting for data with known per-sample noise"};
    app.require_subcommand(1);

    GenArgs gen_args;
    auto* gen = app.add_subcommand("gen", "generate a synthetic dataset with ground truth");
    gen->add_option("--preset", gen_args.preset, "built-in truth preset (three-blobs)");
    gen->add_option("--truth", gen_args.truth_path, "truth checkpoint instead of a preset");
    gen->add_option("--n", gen_args.n, "number of rows");
    gen->add_option("--seed", gen_args.seed, "RNG seed");
    gen->add_option("--out", gen_args.out, "output directory");
    gen->add_option("--noise-lo", gen_args.noise_lo, "min per-coordinate noise variance");
    gen->add_option("--noise-hi", gen_args.noise_hi, "max per-coordinate noise variance");

    FitArgs fit_args;
    auto* fit = app.add_subcommand("fit", "fit a model to a dataset");
    fit->add_option("--method", fit_args.method, "batch-em | minibatch-em | sgd");
    fit->add_option("--data", fit_args.data_path, "training CSV");
    fit->add_option("--schema", fit_args.schema_path, "schema JSON");
    fit->add_option("--val-data", fit_args.val_path, "validation CSV (same schema)");
    fit->add_option("--out", fit_args.out, "output directory");
    fit->add_option("--config", fit_args.config_path, "JSON config file (flags override)");
    fit->add_option("--init", fit_args.init, "kmeans | checkpoint");
    fit->add_option("--init-checkpoint", fit_args.init_checkpoint, "checkpoint for --init checkpoint");
    fit->add_option("--k", fit_args.k, "number of mixture components");
    fit->add_option("--epochs", fit_args.epochs, "training epochs");
    fit->add_option("--batch-size", fit_args.batch_size, "minibatch size");
    fit->add_option("--step-size", fit_args.step_size, "EM step size lambda");
    fit->add_option("--lr", fit_args.lr, "SGD learning rate");
    fit->add_option("--reg-w", fit_args.reg_w, "covariance regularization w");
    fit->add_option("--halve-step-at", fit_args.halve_step_at,
                    "epoch from which lambda is halved (negative disables)");
    fit->add_option("--lr-drop-at", fit_args.lr_drop_at,
                    "epoch from which the learning rate drops tenfold (negative disables)");
    fit->add_option("--seed", fit_args.seed, "RNG seed");
    fit->add_option("--threads", fit_args.threads, "worker threads");

    EvalArgs eval_args;
    auto* eval = app.add_subcommand("eval", "print mean log-likelihood of a model on a dataset");
    eval->add_option("--model", eval_args.model_path, "model checkpoint")->required();
    eval->add_option("--data", eval_args.data_path, "CSV dataset")->required();
    eval->add_option("--schema", eval_args.schema_path, "schema JSON")->required();
    eval->add_option("--threads", eval_args.threads, "worker threads");

    SampleArgs sample_args;
    auto* sample = app.add_subcommand("sample", "draw samples from a model checkpoint");
    sample->add_option("--model", sample_args.model_path, "model checkpoint")->required();
    sample->add_option("--n", sample_args.n, "number of samples");
    sample->add_option("--seed", sample_args.seed, "RNG seed");
    sample->add_option("--out", sample_args.out, "output CSV path");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        if (gen->parsed()) return run_gen(gen_args);
        if (fit->parsed()) return run_fit(fit, fit_args);
        if (eval->parsed()) return run_eval(eval_args);
        if (sample->parsed()) return run_sample(sample_args);
    } catch (const xdgmm::NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 2;
    } catch (const xdgmm::ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
