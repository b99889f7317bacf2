#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "semcodec/targets.hpp"
#include "semcodec/trainer.hpp"

using namespace semcodec;

namespace {

// 4 classes x 10 records, 6 channels x 64 samples, no preprocessing.
Dataset small_dataset(std::uint64_t seed = 3)
{
    SyntheticSpec spec;
    spec.n_classes = 4;
    spec.records_per_class = 10;
    spec.channels = 6;
    spec.samples = 64;
    spec.noise_sigma = 0.5;
    spec.seed = seed;
    return synthesize_dataset(spec);
}

TrainConfig small_config(int layer)
{
    auto c = TrainConfig::defaults(layer);
    c.preset = "compact";
    c.latent_width = 8;
    c.epochs = 3;
    c.batch_size = 8;
    c.lr = 1e-3;
    c.preprocess = false;
    c.seed = 5;
    return c;
}

struct Fixture {
    Dataset ds = small_dataset();
    EmbeddingDatabase labels = synthetic_label_db(ds.manifest.labels, 8, 1);
    EmbeddingDatabase captions = synthetic_caption_db(ds, 6, 2);
    ThumbnailSet thumbs = synthetic_thumbnails(ds, 3);

    TrainInputs inputs(int layer) const
    {
        TargetSources src{&labels, &captions, &thumbs};
        return split_inputs(ds, build_targets(layer, ds, src));
    }
};

} // namespace

TEST_CASE("config JSON round trip and validation")
{
    auto c = small_config(2);
    CHECK(c.lambda == 40.0);
    CHECK(TrainConfig::defaults(1).lambda == 4.0e4);
    CHECK(TrainConfig::defaults(3).target == TargetSource::thumbnails);
    auto back = TrainConfig::from_json(c.to_json());
    CHECK(back.to_json() == c.to_json());
    CHECK(back.hash() == c.hash());
    CHECK(back.hash().size() == 16);
    c.lambda = 41.0;
    CHECK(c.hash() != back.hash());

    // missing keys fall back to the layer defaults
    auto partial = TrainConfig::from_json(R"({"layer_id": 3, "epochs": 7})");
    CHECK(partial.lambda == 4.0e4);
    CHECK(partial.epochs == 7);
    CHECK_THROWS_AS(TrainConfig::from_json(R"({"layer_id": 1, "epoch": 7})"), FormatError);
    CHECK_THROWS_AS(TrainConfig::from_json(R"({"layer_id": 1, "epochs": 0})"), FormatError);
    CHECK_THROWS_AS(TrainConfig::from_json("nope"), FormatError);

    auto bad = small_config(1);
    bad.target = TargetSource::thumbnails;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = small_config(1);
    bad.preset = "huge";
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("targets come from the right source")
{
    Fixture f;
    TargetSources none;
    CHECK_THROWS_AS(build_targets(1, f.ds, none), std::invalid_argument);
    TargetSources src{&f.labels, &f.captions, &f.thumbs};
    auto t1 = build_targets(1, f.ds, src);
    CHECK(t1[13] == f.labels.by_id(f.ds.records[13].class_id).embedding);
    auto t3 = build_targets(3, f.ds, src);
    CHECK(t3[0].size() == kThumbSize);

    ThumbnailSet short_set{{f.thumbs.images.begin(), f.thumbs.images.begin() + 3}};
    TargetSources partial{nullptr, nullptr, &short_set};
    CHECK_THROWS_AS(build_targets(3, f.ds, partial), FormatError);
}

TEST_CASE("thumbnail file round trip")
{
    Fixture f;
    auto bytes = encode_thumbnails(f.thumbs);
    CHECK(bytes.size() == 4 + 1 + 4 + 2 + 1 + f.thumbs.images.size() * kThumbSize * 4);
    auto back = decode_thumbnails(bytes);
    REQUIRE(back.images.size() == f.thumbs.images.size());
    CHECK(back.images[7].pixels == f.thumbs.images[7].pixels);
    bytes.back() = 0x7f; // high byte of the last f32 now makes it > 1
    CHECK_THROWS_AS(decode_thumbnails(bytes), FormatError);
}

TEST_CASE("training is deterministic and the checkpoint reloads exactly")
{
    Fixture f;
    auto in = f.inputs(1);
    auto cfg = small_config(1);
    std::vector<EpochLog> logs;
    auto a = train_layer(cfg, in, nullptr, [&](const EpochLog& e) { logs.push_back(e); });
    auto b = train_layer(cfg, in);
    auto bytes = encode_checkpoint(a);
    CHECK(bytes == encode_checkpoint(b));
    REQUIRE(logs.size() == 3);
    CHECK(logs[0].best);
    CHECK(format_epoch_log(logs[0]).rfind("epoch=1 ", 0) == 0);

    std::size_t best_epochs = 0;
    double best_loss = INFINITY;
    for (const auto& e : logs) {
        best_epochs += e.best ? 1 : 0;
        best_loss = std::min(best_loss, e.val.loss);
    }
    CHECK(best_epochs >= 1);
    CHECK(a.val_loss == best_loss);
    CHECK(a.config_hash == cfg.hash());

    auto back = decode_checkpoint(bytes);
    CHECK(encode_checkpoint(back) == bytes);
    auto ca = a.codec();
    auto cb = back.codec();
    for (const auto* r : in.val) {
        CHECK(ca.compress(*r) == cb.compress(*r));
    }
    // the stored validation numbers are reproducible from the file alone
    auto v = validate(cb, in.val, in.val_targets, cfg.lambda, cfg.alpha);
    CHECK(v.loss == doctest::Approx(back.val_loss).epsilon(1e-12));

    auto path = std::filesystem::temp_directory_path() / "semcodec_test_ckpt.eidw";
    save_checkpoint(path, a);
    CHECK(encode_checkpoint(load_checkpoint(path)) == bytes);
    std::filesystem::remove(path);

    auto cut = bytes;
    cut.pop_back();
    CHECK_THROWS_AS(decode_checkpoint(cut), FormatError);
    cut = bytes;
    cut[0] = 'X';
    CHECK_THROWS_AS(decode_checkpoint(cut), FormatError);
}

TEST_CASE("training lowers the validation loss")
{
    Fixture f;
    auto in = f.inputs(1);
    auto cfg = small_config(1);
    cfg.epochs = 6;
    auto trained = train_layer(cfg, in);

    auto arch = make_arch(cfg, 6, 64, 8, 0);
    LayerCodec fresh(arch, cfg.seed);
    fresh.set_medians(std::vector<std::int32_t>(arch.latent_width(), 0));
    auto before = validate(fresh, in.val, in.val_targets, cfg.lambda, cfg.alpha);
    CHECK(trained.val_loss < before.loss);
}

TEST_CASE("a single record can be fitted")
{
    Fixture f;
    auto all = f.inputs(3);
    TrainInputs one;
    one.train = {all.train[0]};
    one.train_targets = {all.train_targets[0]};
    one.val = one.train;
    one.val_targets = one.train_targets;
    auto cfg = small_config(3);
    cfg.lambda = 1e8;
    cfg.epochs = 40;
    cfg.batch_size = 1;
    auto ckpt = train_layer(cfg, one);

    auto arch = make_arch(cfg, 6, 64, kThumbSize, 0);
    LayerCodec fresh(arch, cfg.seed);
    fresh.set_medians(std::vector<std::int32_t>(arch.latent_width(), 0));
    auto before = validate(fresh, one.val, one.val_targets, cfg.lambda, cfg.alpha);
    CHECK(ckpt.val_distortion < 0.75 * before.distortion);
}

TEST_CASE("layer 2 trains on a frozen layer 1")
{
    Fixture f;
    auto ocl = train_layer(small_config(1), f.inputs(1));
    auto in2 = f.inputs(2);
    auto cfg = small_config(2);
    cfg.epochs = 2;
    CHECK_THROWS_AS(train_layer(cfg, in2), std::invalid_argument);
    auto icl = train_layer(cfg, in2, &ocl);
    CHECK(icl.arch.condition_width == ocl.arch.output_width());

    auto ocl_codec = ocl.codec();
    auto conds = condition_features(ocl_codec, in2.val);
    REQUIRE(conds.size() == in2.val.size());
    auto v = validate(icl.codec(), in2.val, in2.val_targets, cfg.lambda, cfg.alpha, conds);
    CHECK(v.loss == doctest::Approx(icl.val_loss).epsilon(1e-12));
    CHECK_THROWS_AS(validate(icl.codec(), in2.val, in2.val_targets, cfg.lambda, cfg.alpha), std::invalid_argument);
    CHECK_THROWS_AS(train_layer(small_config(1), f.inputs(1), &ocl), std::invalid_argument);
}
