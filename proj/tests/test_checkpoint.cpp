#include <catch2/catch_amalgamated.hpp>

#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "regunet/checkpoint.hpp"
#include "regunet/train.hpp"

using namespace regunet;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        static std::atomic<int> counter{0};
        path = fs::temp_directory_path() /
               ("regunet_ckpt_test_" + std::to_string(counter.fetch_add(1)));
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
};

ModelSpec tiny_spec(Variant v, std::uint64_t seed = 3) {
    ModelSpec s;
    s.variant = v;
    s.input_dim = 4;
    s.hidden_width = 8;
    s.head_width = 4;
    s.seed = seed;
    s.reg = RegularizationConfig(RegMode::none, 0.02);
    return s;
}

/// Trains a tiny model for a few epochs so weights, BN running statistics and
/// the fitted transform are all away from their initial values.
struct TrainedFixture {
    Model model;
    Dataset ds;
    SplitIndices split;
};

TrainedFixture trained_model(Variant v) {
    Dataset raw = synthetic_dataset(40, 4, 0.3, 0.0, 77);
    SplitIndices split = stratified_split(raw, 0.2, 5);
    Dataset ds = standardize(raw, split);
    Model model = build(tiny_spec(v, 31));
    TrainConfig cfg;
    cfg.epochs = 6;
    cfg.batch_size = 8;
    cfg.shuffle_seed = 2;
    (void)train(model, ds, split, cfg);
    return TrainedFixture{std::move(model), std::move(ds), std::move(split)};
}

nlohmann::json read_doc(const std::string& path) {
    std::ifstream in(path);
    return nlohmann::json::parse(in);
}

void write_doc(const nlohmann::json& doc, const std::string& path) {
    std::ofstream out(path);
    out << doc.dump(2) << "\n";
}

} // namespace

TEST_CASE("a checkpoint round trip restores the forward map") {
    TempDir dir;
    TrainedFixture fx = trained_model(Variant::concat);
    const std::string path = (dir.path / "model.ckpt.json").string();
    save_checkpoint(fx.model, path, fx.ds.standardization);

    LoadedCheckpoint loaded = load_checkpoint(path);
    CHECK(param_count(loaded.model) == param_count(fx.model));
    CHECK(loaded.model.spec.variant == fx.model.spec.variant);
    CHECK(loaded.model.spec.input_dim == fx.model.spec.input_dim);
    CHECK(loaded.model.spec.seed == fx.model.spec.seed);
    CHECK(loaded.model.spec.reg.alpha == fx.model.spec.reg.alpha);

    REQUIRE(loaded.standardization.has_value());
    CHECK(loaded.standardization->mean == fx.ds.standardization->mean);
    CHECK(loaded.standardization->std_dev == fx.ds.standardization->std_dev);

    set_mode(fx.model, BnMode::eval);
    set_mode(loaded.model, BnMode::eval);
    Rng rng(123);
    Matrix x(7, 4);
    for (std::size_t i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
    Matrix before = forward(fx.model, x);
    Matrix after = forward(loaded.model, x);
    for (std::size_t i = 0; i < before.size(); ++i)
        CHECK(std::fabs(before.data()[i] - after.data()[i]) <= 1e-12);
}

TEST_CASE("every parameter and BN statistic survives the round trip bit-exactly") {
    TempDir dir;
    TrainedFixture fx = trained_model(Variant::l2_reg);
    const std::string path = (dir.path / "model.ckpt.json").string();
    save_checkpoint(fx.model, path, fx.ds.standardization);
    LoadedCheckpoint loaded = load_checkpoint(path);

    std::vector<ParamRef> a = trainable_params(fx.model);
    std::vector<ParamRef> b = trainable_params(loaded.model);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].name == b[i].name);
        CHECK(*a[i].value == *b[i].value);
    }

    // BN running statistics moved during training and must match exactly
    const LayerNode* bn_a = nullptr;
    const LayerNode* bn_b = nullptr;
    for (std::size_t i = 0; i < fx.model.branches[0].layers.size(); ++i) {
        if (fx.model.branches[0].layers[i].kind == LayerKind::batchnorm) {
            bn_a = &fx.model.branches[0].layers[i];
            bn_b = &loaded.model.branches[0].layers[i];
            break;
        }
    }
    REQUIRE(bn_a != nullptr);
    CHECK_FALSE(bn_a->bn->running_mean == Matrix(1, 8, 0.0));  // training moved it
    CHECK(bn_a->bn->running_mean == bn_b->bn->running_mean);
    CHECK(bn_a->bn->running_var == bn_b->bn->running_var);
    CHECK(bn_a->bn->momentum == bn_b->bn->momentum);
    CHECK(bn_a->bn->epsilon == bn_b->bn->epsilon);
}

TEST_CASE("a checkpoint without a transform loads without one") {
    TempDir dir;
    Model m = build(tiny_spec(Variant::residual_concat, 41));
    const std::string path = (dir.path / "bare.ckpt.json").string();
    save_checkpoint(m, path);
    LoadedCheckpoint loaded = load_checkpoint(path);
    CHECK_FALSE(loaded.standardization.has_value());
    CHECK(param_count(loaded.model) == param_count(m));
}

TEST_CASE("the version field is enforced") {
    TempDir dir;
    Model m = build(tiny_spec(Variant::l1_reg, 43));
    const std::string path = (dir.path / "v.ckpt.json").string();
    save_checkpoint(m, path);
    nlohmann::json doc = read_doc(path);
    CHECK(doc["version"] == "regunet-ckpt-1");
    doc["version"] = "regunet-ckpt-9";
    write_doc(doc, path);
    try {
        (void)load_checkpoint(path);
        FAIL("expected CheckpointError");
    } catch (const CheckpointError& e) {
        CHECK(std::string(e.what()).find("version") != std::string::npos);
    }
}

TEST_CASE("a tampered shape field is rejected") {
    TempDir dir;
    Model m = build(tiny_spec(Variant::l2_reg, 47));
    const std::string path = (dir.path / "s.ckpt.json").string();
    save_checkpoint(m, path);
    nlohmann::json doc = read_doc(path);
    doc["branches"][0][0]["fan_in"] = 7;
    write_doc(doc, path);
    try {
        (void)load_checkpoint(path);
        FAIL("expected CheckpointError");
    } catch (const CheckpointError& e) {
        CHECK(std::string(e.what()).find("shape") != std::string::npos);
    }
}

TEST_CASE("truncated weight arrays and wrong layer lists are rejected") {
    TempDir dir;
    Model m = build(tiny_spec(Variant::l2_reg, 53));
    const std::string path = (dir.path / "t.ckpt.json").string();

    save_checkpoint(m, path);
    nlohmann::json doc = read_doc(path);
    doc["branches"][0][0]["W"].erase(0);
    write_doc(doc, path);
    CHECK_THROWS_AS(load_checkpoint(path), CheckpointError);

    save_checkpoint(m, path);
    doc = read_doc(path);
    doc["head"].erase(0);
    write_doc(doc, path);
    CHECK_THROWS_AS(load_checkpoint(path), CheckpointError);

    save_checkpoint(m, path);
    doc = read_doc(path);
    doc["branches"][0][0]["W"][0] = "giraffe";
    write_doc(doc, path);
    CHECK_THROWS_AS(load_checkpoint(path), CheckpointError);
}

TEST_CASE("unreadable or unparseable files raise checkpoint errors") {
    TempDir dir;
    CHECK_THROWS_AS(load_checkpoint((dir.path / "absent.json").string()), CheckpointError);

    const std::string garbage = (dir.path / "garbage.json").string();
    {
        std::ofstream out(garbage);
        out << "this is not json {{{";
    }
    try {
        (void)load_checkpoint(garbage);
        FAIL("expected CheckpointError");
    } catch (const CheckpointError& e) {
        CHECK(std::string(e.what()).find("parse failure") != std::string::npos);
    }

    Model m = build(tiny_spec(Variant::l1_reg, 59));
    CHECK_THROWS_AS(save_checkpoint(m, (dir.path / "nodir" / "x.json").string()),
                    std::runtime_error);
}

TEST_CASE("the stored spec rebuilds the exact architecture") {
    TempDir dir;
    ModelSpec spec = tiny_spec(Variant::residual_concat, 61);
    spec.residual_tap = 2;
    Model m = build(spec);
    const std::string path = (dir.path / "r.ckpt.json").string();
    save_checkpoint(m, path);
    LoadedCheckpoint loaded = load_checkpoint(path);
    CHECK(loaded.model.spec.residual_tap == 2);
    CHECK(loaded.model.branches[0].tap_index == m.branches[0].tap_index);
    CHECK(loaded.model.branches[0].add_index == m.branches[0].add_index);
    CHECK(loaded.model.branches[0].residual);
}
