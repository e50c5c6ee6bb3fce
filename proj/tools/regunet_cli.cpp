// Command-line front end: train / eval / gradcheck / params / synth.
//
// Exit codes: 0 success, 1 configuration error, 2 data or checkpoint error,
// 3 numerical abort (non-finite loss). Errors go to standard error; success
// output goes to standard output only.
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "regunet/regunet.hpp"

namespace {

using nlohmann::ordered_json;

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

// Seed derivation: one master seed drives every random stream, with fixed
// offsets so the streams stay independent of each other.
constexpr std::uint64_t kShuffleSeedOffset = 1000;
constexpr std::uint64_t kSynthSeedOffset = 2000;

struct RunConfig {
    std::string data;
    std::string label = "PCOS (Y/N)";
    std::string variant;
    std::string impute = "none";
    std::string out = "out";
    bool synthetic = false;
    std::size_t n = 500;
    double alpha = 0.01;
    std::size_t epochs = 200;
    std::size_t batch_size = 32;
    double val_fraction = 0.1;
    std::uint64_t seed = 7;
};

regunet::MissingPolicy impute_policy(const std::string& impute) {
    if (impute == "median") return regunet::MissingPolicy::median;
    return regunet::MissingPolicy::drop;
}

ordered_json config_to_json(const RunConfig& run) {
    ordered_json j;
    j["command"] = "train";
    j["data"] = run.data;
    j["label"] = run.label;
    j["synthetic"] = run.synthetic;
    j["n"] = run.n;
    j["variant"] = run.variant;
    j["alpha"] = run.alpha;
    j["epochs"] = run.epochs;
    j["batch_size"] = run.batch_size;
    j["val_fraction"] = run.val_fraction;
    j["seed"] = run.seed;
    j["impute"] = run.impute;
    j["out"] = run.out;
    return j;
}

// Values from --config fill in any option the user did not pass explicitly;
// command-line flags always win.
void merge_config_file(const std::string& path, RunConfig& run,
                       const std::map<std::string, const CLI::Option*>& opts) {
    std::ifstream in(path);
    if (!in) throw regunet::DataError("cannot open config file '" + path + "'");
    ordered_json j;
    try {
        j = ordered_json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw regunet::DataError("config file '" + path + "' is not valid JSON: " + e.what());
    }
    auto unset = [&opts](const char* flag) {
        auto it = opts.find(flag);
        return it == opts.end() || it->second->count() == 0;
    };
    try {
        if (j.contains("data") && unset("data")) run.data = j["data"].get<std::string>();
        if (j.contains("label") && unset("label")) run.label = j["label"].get<std::string>();
        if (j.contains("variant") && unset("variant")) run.variant = j["variant"].get<std::string>();
        if (j.contains("impute") && unset("impute")) run.impute = j["impute"].get<std::string>();
        if (j.contains("out") && unset("out")) run.out = j["out"].get<std::string>();
        if (j.contains("synthetic") && unset("synthetic")) run.synthetic = j["synthetic"].get<bool>();
        if (j.contains("n") && unset("n")) run.n = j["n"].get<std::size_t>();
        if (j.contains("alpha") && unset("alpha")) run.alpha = j["alpha"].get<double>();
        if (j.contains("epochs") && unset("epochs")) run.epochs = j["epochs"].get<std::size_t>();
        if (j.contains("batch_size") && unset("batch-size"))
            run.batch_size = j["batch_size"].get<std::size_t>();
        if (j.contains("val_fraction") && unset("val-fraction"))
            run.val_fraction = j["val_fraction"].get<double>();
        if (j.contains("seed") && unset("seed")) run.seed = j["seed"].get<std::uint64_t>();
    } catch (const nlohmann::json::exception& e) {
        throw regunet::DataError("config file '" + path + "' has a badly typed field: " + e.what());
    }
}

regunet::Dataset obtain_dataset(const RunConfig& run) {
    if (run.synthetic)
        return regunet::synthetic_dataset(run.n, 41, 0.25, 0.0, run.seed + kSynthSeedOffset);
    if (run.data.empty())
        throw regunet::TrainError("either --data or --synthetic is required");
    return regunet::load_csv(run.data, run.label, impute_policy(run.impute), &std::cerr);
}

int run_train(const RunConfig& run) {
    if (run.variant.empty())
        throw regunet::TrainError("--variant is required (or supply it via --config)");
    const regunet::Variant variant = regunet::variant_from_name(run.variant);

    regunet::Dataset ds = obtain_dataset(run);
    const regunet::SplitIndices split =
        regunet::stratified_split(ds, run.val_fraction, run.seed);
    ds = regunet::standardize(ds, split);

    regunet::ModelSpec spec;
    spec.variant = variant;
    spec.input_dim = ds.X.cols();
    spec.reg = regunet::RegularizationConfig(regunet::RegMode::none, run.alpha);
    spec.seed = run.seed;
    regunet::Model model = regunet::build(spec);

    regunet::TrainConfig cfg;
    cfg.epochs = run.epochs;
    cfg.batch_size = run.batch_size;
    cfg.shuffle_seed = run.seed + kShuffleSeedOffset;

    const std::filesystem::path out_dir(run.out);
    std::filesystem::create_directories(out_dir);
    regunet::atomic_write_text((out_dir / "resolved_config.json").string(),
                               config_to_json(run).dump(2) + "\n");

    const regunet::TrainHistory history = regunet::train(model, ds, split, cfg);

    regunet::export_history(history, (out_dir / "history.csv").string(), "csv");
    regunet::export_history(history, (out_dir / "history.json").string(), "json");
    regunet::save_checkpoint(model, (out_dir / "checkpoint.json").string(), ds.standardization);

    const regunet::EpochRecord& last = history.records.back();
    std::printf("%s %.2f %.2f %.6f %.6f\n", regunet::variant_name(variant), last.train_acc,
                last.val_acc, last.train_loss, last.val_loss);
    return kExitOk;
}

int run_eval(const std::string& checkpoint_path, const std::string& data_path,
             const std::string& label, const std::string& impute, const std::string& split_name,
             double val_fraction, double threshold) {
    regunet::LoadedCheckpoint loaded = regunet::load_checkpoint(checkpoint_path);
    regunet::Dataset ds = regunet::load_csv(data_path, label, impute_policy(impute), &std::cerr);
    if (ds.X.cols() != loaded.model.spec.input_dim)
        throw regunet::CheckpointError(
            "checkpoint expects " + std::to_string(loaded.model.spec.input_dim) +
            " features but '" + data_path + "' provides " + std::to_string(ds.X.cols()));
    if (loaded.standardization) ds = regunet::apply_standardization(ds, *loaded.standardization);

    std::vector<std::size_t> indices;
    if (split_name == "all") {
        indices.resize(ds.X.rows());
        for (std::size_t i = 0; i < indices.size(); ++i) indices[i] = i;
    } else {
        const regunet::SplitIndices split =
            regunet::stratified_split(ds, val_fraction, loaded.model.spec.seed);
        indices = split_name == "train" ? split.train_idx : split.val_idx;
    }

    regunet::set_mode(loaded.model, regunet::BnMode::eval);
    const regunet::EvalResult r = regunet::evaluate(loaded.model, ds, indices, threshold);
    std::printf("%s %s n=%zu accuracy %.2f loss %.6f\n",
                regunet::variant_name(loaded.model.spec.variant), split_name.c_str(),
                indices.size(), r.accuracy, r.data_loss);
    return kExitOk;
}

int run_gradcheck(const std::string& variant, std::uint64_t seed, double alpha, bool corrupt) {
    std::vector<regunet::Variant> variants;
    if (variant.empty()) {
        variants = {regunet::Variant::l1_reg, regunet::Variant::l2_reg, regunet::Variant::concat,
                    regunet::Variant::residual_concat};
    } else {
        variants = {regunet::variant_from_name(variant)};
    }
    std::function<void(regunet::Model&)> tamper;
    if (corrupt) {
        tamper = [](regunet::Model& m) {
            auto refs = regunet::trainable_params(m);
            refs.front().grad->data()[0] += 0.5;
        };
    }
    bool ok = true;
    for (regunet::Variant v : variants) {
        regunet::ModelSpec spec;
        spec.variant = v;
        spec.input_dim = 4;
        spec.hidden_width = 8;
        spec.head_width = 4;
        spec.seed = seed;
        spec.reg = regunet::RegularizationConfig(regunet::RegMode::none, alpha);
        const regunet::GradCheckResult r = regunet::gradient_check(spec, seed, tamper);
        std::printf("%s %.6e\n", regunet::variant_name(v), r.max_rel_error);
        if (r.max_rel_error >= 1e-4) {
            ok = false;
            std::fprintf(stderr, "gradient check failed for %s at %s (max relative error %.6e)\n",
                         regunet::variant_name(v), r.worst_param.c_str(), r.max_rel_error);
        }
    }
    return ok ? kExitOk : kExitConfig;
}

int run_params(const std::string& variant, long long expect, bool branch_only) {
    regunet::ModelSpec spec;
    spec.variant = regunet::variant_from_name(variant);
    regunet::Model model = regunet::build(spec);

    auto print_layers = [](const std::vector<regunet::LayerNode>& layers,
                           const std::string& prefix) {
        for (std::size_t i = 0; i < layers.size(); ++i) {
            const regunet::LayerNode& node = layers[i];
            std::string shape = "-";
            std::size_t count = 0;
            if (node.kind == regunet::LayerKind::dense) {
                shape = std::to_string(node.params->fan_in()) + "x" +
                        std::to_string(node.params->fan_out()) + "+" +
                        std::to_string(node.params->fan_out());
                count = node.params->parameter_count();
            } else if (node.kind == regunet::LayerKind::batchnorm) {
                shape = std::to_string(node.bn->features());
            }
            std::printf("%-18s %-12s %-14s %zu\n", (prefix + std::to_string(i)).c_str(),
                        regunet::layer_kind_name(node.kind), shape.c_str(), count);
        }
    };
    for (std::size_t b = 0; b < model.branches.size(); ++b)
        print_layers(model.branches[b].layers, "branch" + std::to_string(b + 1) + ".");
    if (model.concat_node) std::printf("%-18s %-12s %-14s %d\n", "concat", "concat", "-", 0);
    print_layers(model.head, "head.");

    const std::size_t total = branch_only ? regunet::branch_param_count(model)
                                          : regunet::param_count(model);
    std::printf("total%s %zu\n", branch_only ? " (branch body)" : "", total);
    if (expect >= 0 && static_cast<std::size_t>(expect) != total) {
        std::fprintf(stderr, "expected %lld parameters, counted %zu\n", expect, total);
        return kExitConfig;
    }
    return kExitOk;
}

int run_synth(const std::string& out_path, std::size_t n, std::size_t dim, double margin,
              double flip_rate, std::uint64_t seed, const std::string& label) {
    const regunet::Dataset ds = regunet::synthetic_dataset(n, dim, margin, flip_rate, seed);
    regunet::save_csv(ds, out_path, label);
    std::printf("wrote %zu rows x %zu features to %s\n", ds.X.rows(), ds.X.cols(),
                out_path.c_str());
    return kExitOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Binary classifiers for tabular data: regularized, concatenated, and "
                 "residual-concatenated feedforward networks"};
    app.require_subcommand(1);

    const std::vector<std::string> variant_names = {"l1_reg", "l2_reg", "concat",
                                                    "residual_concat"};

    // train
    RunConfig run;
    std::string config_path;
    CLI::App* t = app.add_subcommand("train", "Train a model and write history + checkpoint");
    std::map<std::string, const CLI::Option*> topts;
    topts["data"] = t->add_option("--data", run.data, "CSV dataset path");
    topts["label"] = t->add_option("--label", run.label, "Label column name");
    topts["variant"] =
        t->add_option("--variant", run.variant, "Model variant")->check(CLI::IsMember(variant_names));
    topts["alpha"] = t->add_option("--alpha", run.alpha, "Regularization strength");
    topts["epochs"] = t->add_option("--epochs", run.epochs, "Training epochs")
                          ->check(CLI::PositiveNumber);
    topts["batch-size"] = t->add_option("--batch-size", run.batch_size, "Mini-batch size")
                              ->check(CLI::Range(std::size_t{2}, std::size_t{1} << 20));
    topts["val-fraction"] =
        t->add_option("--val-fraction", run.val_fraction, "Validation fraction (0,0.5)");
    topts["seed"] = t->add_option("--seed", run.seed, "Master seed");
    topts["out"] = t->add_option("--out", run.out, "Output directory");
    topts["synthetic"] = t->add_flag("--synthetic", run.synthetic, "Generate a synthetic dataset");
    topts["n"] = t->add_option("--n", run.n, "Synthetic dataset size");
    topts["impute"] = t->add_option("--impute", run.impute, "Missing-cell policy")
                          ->check(CLI::IsMember({"none", "median"}));
    t->add_option("--config", config_path, "JSON config from a previous run; flags override");

    // eval
    std::string eval_checkpoint, eval_data, eval_split = "val";
    std::string eval_label = "PCOS (Y/N)", eval_impute = "none";
    double eval_threshold = 0.5, eval_val_fraction = 0.1;
    CLI::App* e = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
    e->add_option("--checkpoint", eval_checkpoint, "Checkpoint JSON path")->required();
    e->add_option("--data", eval_data, "CSV dataset path")->required();
    e->add_option("--label", eval_label, "Label column name");
    e->add_option("--impute", eval_impute, "Missing-cell policy")
        ->check(CLI::IsMember({"none", "median"}));
    e->add_option("--split", eval_split, "Rows to evaluate")
        ->check(CLI::IsMember({"val", "train", "all"}));
    e->add_option("--val-fraction", eval_val_fraction, "Fraction used when re-deriving the split");
    e->add_option("--threshold", eval_threshold, "Classification threshold");

    // gradcheck
    std::string gc_variant;
    std::uint64_t gc_seed = 11;
    double gc_alpha = 0.01;
    bool gc_corrupt = false;
    CLI::App* g = app.add_subcommand("gradcheck",
                                     "Compare analytic gradients with finite differences");
    g->add_option("--variant", gc_variant, "Check a single variant")
        ->check(CLI::IsMember(variant_names));
    g->add_option("--seed", gc_seed, "Seed for the probe input");
    g->add_option("--alpha", gc_alpha, "Regularization strength for the check");
    g->add_flag("--self-test-corrupt", gc_corrupt,
                "Corrupt one gradient on purpose (verifies the check can fail)")
        ->group("");  // hidden: test fixture only

    // params
    std::string p_variant;
    long long p_expect = -1;
    bool p_branch_only = false;
    CLI::App* p = app.add_subcommand("params", "Print the per-layer parameter table");
    p->add_option("--variant", p_variant, "Model variant")
        ->required()
        ->check(CLI::IsMember(variant_names));
    p->add_option("--expect", p_expect, "Fail unless the total equals this");
    p->add_flag("--branch-only", p_branch_only, "Count one branch body only");

    // synth
    std::string s_out = "synthetic.csv", s_label = "label";
    std::size_t s_n = 500, s_dim = 41;
    double s_margin = 0.25, s_flip = 0.0;
    std::uint64_t s_seed = 7;
    CLI::App* s = app.add_subcommand("synth", "Write a synthetic linearly separable CSV");
    s->add_option("--out", s_out, "Output CSV path");
    s->add_option("--n", s_n, "Row count");
    s->add_option("--dim", s_dim, "Feature count");
    s->add_option("--margin", s_margin, "Separation margin");
    s->add_option("--flip-rate", s_flip, "Label noise rate [0,0.5)");
    s->add_option("--seed", s_seed, "Generator seed");
    s->add_option("--label", s_label, "Label column name in the output");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& err) {
        return app.exit(err);
    } catch (const CLI::ParseError& err) {
        app.exit(err);
        return kExitConfig;
    }

    try {
        if (t->parsed()) {
            if (!config_path.empty()) merge_config_file(config_path, run, topts);
            return run_train(run);
        }
        if (e->parsed())
            return run_eval(eval_checkpoint, eval_data, eval_label, eval_impute, eval_split,
                            eval_val_fraction, eval_threshold);
        if (g->parsed()) return run_gradcheck(gc_variant, gc_seed, gc_alpha, gc_corrupt);
        if (p->parsed()) return run_params(p_variant, p_expect, p_branch_only);
        if (s->parsed()) return run_synth(s_out, s_n, s_dim, s_margin, s_flip, s_seed, s_label);
    } catch (const regunet::NumericError& err) {
        std::fprintf(stderr, "numerical abort: %s\n", err.what());
        return kExitNumeric;
    } catch (const regunet::DataError& err) {
        std::fprintf(stderr, "data error: %s\n", err.what());
        return kExitData;
    } catch (const regunet::CheckpointError& err) {
        std::fprintf(stderr, "checkpoint error: %s\n", err.what());
        return kExitData;
    } catch (const std::ios_base::failure& err) {
        std::fprintf(stderr, "io error: %s\n", err.what());
        return kExitData;
    } catch (const std::exception& err) {
        std::fprintf(stderr, "error: %s\n", err.what());
        return kExitConfig;
    }
    return kExitConfig;
}
