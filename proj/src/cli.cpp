#include "semcodec/cli.hpp"

#include <atomic>
#include <cstdio>
#include <exception>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "semcodec/bitstream.hpp"
#include "semcodec/link_sim.hpp"
#include "semcodec/metrics.hpp"
#include "semcodec/retrieval.hpp"
#include "semcodec/targets.hpp"
#include "semcodec/trainer.hpp"

namespace semcodec::cli {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace {

// ---------------------------------------------------------------------------
// helpers

std::string default_manifest(const std::string& dataset) { return dataset + ".json"; }

Dataset load_data(const std::string& dataset, const std::string& manifest)
{
    return load_dataset(dataset, manifest.empty() ? default_manifest(dataset) : manifest);
}

std::vector<std::size_t> select_records(const Dataset& ds, const std::string& split)
{
    if (split == "all") {
        std::vector<std::size_t> all(ds.records.size());
        for (std::size_t i = 0; i < all.size(); ++i) {
            all[i] = i;
        }
        return all;
    }
    if (ds.manifest.split.empty()) {
        throw FormatError("manifest has no split; run `split` first or pass --split all");
    }
    auto idx = ds.manifest.records_in(parse_split_tag(split));
    if (idx.empty()) {
        throw std::invalid_argument("split '" + split + "' has no records");
    }
    return idx;
}

void write_output(const std::string& path, const std::string& text, std::ostream& out)
{
    if (path.empty()) {
        out << text << '\n';
    } else {
        write_text_file(path, text + "\n");
    }
}

// Runs fn(i) for i in [0, n) on `jobs` threads. Results are written by
// index, so output order never depends on scheduling. The exception of the
// lowest failing index is rethrown.
void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn)
{
    jobs = std::max<std::size_t>(1, std::min(jobs, n));
    std::vector<std::exception_ptr> errors(n);
    if (jobs == 1) {
        for (std::size_t i = 0; i < n; ++i) {
            try {
                fn(i);
            } catch (...) {
                errors[i] = std::current_exception();
                break;
            }
        }
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < jobs; ++t) {
            pool.emplace_back([&] {
                for (std::size_t i = next++; i < n; i = next++) {
                    try {
                        fn(i);
                    } catch (...) {
                        errors[i] = std::current_exception();
                    }
                }
            });
        }
        for (auto& th : pool) {
            th.join();
        }
    }
    for (auto& e : errors) {
        if (e) {
            std::rethrow_exception(e);
        }
    }
}

BrainSignal prepare(const BrainSignal& raw, const TrainConfig& cfg)
{
    return cfg.preprocess ? preprocess(raw, cfg.preprocessing) : raw;
}

struct LoadedLayer {
    Checkpoint ckpt;
    LayerCodec codec;
};

struct Codecs {
    std::optional<LoadedLayer> layers[3];

    void load(int layer, const std::string& path)
    {
        if (path.empty()) {
            return;
        }
        auto ckpt = load_checkpoint(path);
        if (ckpt.arch.layer_id != layer) {
            throw FormatError(path + " holds a layer-" + std::to_string(ckpt.arch.layer_id) +
                              " checkpoint, expected layer " + std::to_string(layer));
        }
        auto codec = ckpt.codec();
        layers[layer - 1] = LoadedLayer{std::move(ckpt), std::move(codec)};
    }
    bool has(int layer) const { return layers[layer - 1].has_value(); }
    const LoadedLayer& at(int layer) const { return *layers[layer - 1]; }

    std::size_t samples_per_signal() const
    {
        const auto& a = at(1).ckpt.arch;
        return a.in_channels * a.in_samples;
    }
};

const char* checkpoint_flag(int layer)
{
    static const char* names[] = {"--ocl-checkpoint", "--icl-checkpoint", "--scl-checkpoint"};
    return names[layer - 1];
}

void require_layers(const Codecs& c, int max_layer, const std::string& why)
{
    for (int l = 1; l <= max_layer; ++l) {
        if (!c.has(l)) {
            throw UsageError(why + " needs " + checkpoint_flag(l));
        }
    }
}

Bytes encode_record(const Codecs& c, const BrainSignal& raw, int max_layer, bool crc)
{
    if (raw.subject_id > 0xFF) {
        throw FormatError("subject id " + std::to_string(raw.subject_id) + " does not fit the container");
    }
    std::map<int, Bytes> payloads;
    for (int l = 1; l <= max_layer; ++l) {
        const auto& layer = c.at(l);
        payloads[l] = layer.codec.compress(prepare(raw, layer.ckpt.config));
    }
    return pack(payloads, static_cast<std::uint8_t>(raw.subject_id), crc);
}

struct Decoded {
    LayeredBitstream stream;
    int layers = 0;
    std::optional<ClassPrediction> prediction;
    std::vector<double> label_feature;
    std::vector<double> caption_feature;
    std::optional<ClassPrediction> caption_match;
    std::optional<Thumbnail> thumbnail;
};

Decoded decode_record(const Codecs& c, std::span<const std::uint8_t> bytes, int max_layer,
                      const EmbeddingDatabase& label_db, const EmbeddingDatabase* caption_db)
{
    Decoded d;
    d.stream = unpack(slice(bytes, max_layer));
    d.layers = d.stream.max_layer();
    require_layers(c, d.layers, "decoding these layers");
    auto code1 = c.at(1).codec.decompress(d.stream.layers.at(1));
    auto out1 = c.at(1).codec.decode(code1);
    d.label_feature = out1.feature->values;
    d.prediction = classify(label_db, d.label_feature);
    if (d.layers >= 2) {
        auto code2 = c.at(2).codec.decompress(d.stream.layers.at(2));
        auto out2 = c.at(2).codec.decode(code2, &*out1.feature);
        d.caption_feature = out2.feature->values;
        if (caption_db != nullptr) {
            d.caption_match = classify(*caption_db, d.caption_feature);
        }
    }
    if (d.layers >= 3) {
        auto code3 = c.at(3).codec.decompress(d.stream.layers.at(3));
        d.thumbnail = c.at(3).codec.decode(code3).thumbnail;
    }
    return d;
}

std::vector<fs::path> container_inputs(const std::string& input)
{
    fs::path p(input);
    if (!fs::is_directory(p)) {
        if (!fs::exists(p)) {
            throw FormatError("no such file: " + input);
        }
        return {p};
    }
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(p)) {
        if (e.is_regular_file() && e.path().extension() == ".eidc") {
            files.push_back(e.path());
        }
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) {
        throw FormatError("no .eidc files in " + input);
    }
    return files;
}

std::string record_file_name(std::size_t index)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%06zu.eidc", index);
    return buf;
}

ordered_json prediction_json(const ClassPrediction& p, const EmbeddingDatabase& db)
{
    return {{"class_id", p.class_id}, {"text", db.by_id(p.class_id).text}, {"score", p.score}};
}

// ---------------------------------------------------------------------------
// option bundles

struct SynthOpts {
    std::string out, manifest_out, label_db_out, caption_db_out, thumbnails_out;
    std::size_t classes = 8, per_class = 50, channels = 128, samples = 500, subjects = 6;
    std::uint32_t sample_rate = 1000;
    double noise_sigma = 1.0;
    std::size_t label_dim = 64, caption_dim = 32;
};

struct SplitOpts {
    std::string dataset, manifest, out;
    double train = 0.8, val = 0.1, test = 0.1;
};

struct TrainOpts {
    std::string dataset, manifest, config, out, log, label_db, caption_db, thumbnails, ocl_checkpoint;
    int layer = 0;
    std::optional<double> lambda, lr;
    std::optional<std::size_t> epochs, batch_size, latent_width;
    std::string preset;
    bool quiet = false;
};

struct CodecPaths {
    std::string ocl, icl, scl;
};

struct EncodeOpts {
    std::string dataset, manifest, split = "test", out_dir;
    int layer = 1;
    bool no_crc = false;
    std::size_t jobs = 1;
};

struct DecodeOpts {
    std::string input, label_db, caption_db, thumbnails_out, out;
    int max_layer = 3;
    std::size_t jobs = 1;
};

struct ClassifyOpts {
    std::string dataset, manifest, split = "test", label_db, out;
    std::size_t jobs = 1;
};

struct EvaluateOpts {
    std::string dataset, manifest, split = "test", label_db, caption_db, thumbnails, captions, out;
    std::size_t jobs = 1;
};

struct SweepOpts {
    std::string dataset, manifest, label_db, config, out, split = "test";
    std::vector<double> lambdas;
    std::optional<std::size_t> epochs;
    std::string preset;
    bool quiet = false;
};

struct SimulateOpts {
    std::string input, channel_config, out_dir, report;
    std::optional<std::uint64_t> budget_bits;
};

struct InspectOpts {
    std::string input;
};

// ---------------------------------------------------------------------------
// subcommands

int cmd_synth(const SynthOpts& o, std::uint64_t seed, std::ostream& out)
{
    SyntheticSpec spec;
    spec.n_classes = o.classes;
    spec.records_per_class = o.per_class;
    spec.channels = o.channels;
    spec.samples = o.samples;
    spec.sample_rate_hz = o.sample_rate;
    spec.noise_sigma = o.noise_sigma;
    spec.n_subjects = o.subjects;
    spec.seed = seed;
    Dataset ds = synthesize_dataset(spec);
    save_dataset(o.out, ds.records);
    std::string manifest = o.manifest_out.empty() ? default_manifest(o.out) : o.manifest_out;
    save_manifest(manifest, ds.manifest);
    out << "records=" << ds.records.size() << "\ndataset=" << o.out << "\nmanifest=" << manifest << '\n';
    if (!o.label_db_out.empty()) {
        save_embedding_db(o.label_db_out, synthetic_label_db(ds.manifest.labels, o.label_dim, seed));
        out << "label_db=" << o.label_db_out << '\n';
    }
    if (!o.caption_db_out.empty()) {
        save_embedding_db(o.caption_db_out, synthetic_caption_db(ds, o.caption_dim, seed));
        out << "caption_db=" << o.caption_db_out << '\n';
    }
    if (!o.thumbnails_out.empty()) {
        save_thumbnails(o.thumbnails_out, synthetic_thumbnails(ds, seed));
        out << "thumbnails=" << o.thumbnails_out << '\n';
    }
    return kOk;
}

int cmd_split(const SplitOpts& o, std::uint64_t seed, std::ostream& out)
{
    Dataset ds = load_data(o.dataset, o.manifest);
    SplitRatios r{o.train, o.val, o.test};
    auto m = split_dataset(ds.manifest, class_ids_of(ds.records), r, seed);
    std::string dest = o.out.empty() ? (o.manifest.empty() ? default_manifest(o.dataset) : o.manifest) : o.out;
    save_manifest(dest, m);
    out << "train=" << m.records_in(SplitTag::train).size() << "\nval=" << m.records_in(SplitTag::val).size()
        << "\ntest=" << m.records_in(SplitTag::test).size() << "\nmanifest=" << dest << '\n';
    return kOk;
}

TrainConfig resolve_config(const std::string& path, int layer, std::uint64_t seed)
{
    TrainConfig cfg = TrainConfig::defaults(layer);
    if (!path.empty()) {
        cfg = TrainConfig::from_json(read_text_file(path));
        if (cfg.layer_id != layer) {
            throw UsageError("config is for layer " + std::to_string(cfg.layer_id) + " but --layer is " +
                             std::to_string(layer));
        }
    }
    cfg.seed = seed;
    return cfg;
}

int cmd_train(const TrainOpts& o, std::uint64_t seed, std::ostream& out)
{
    if (o.layer == 2 && o.ocl_checkpoint.empty()) {
        throw UsageError("training layer 2 needs --ocl-checkpoint");
    }
    TrainConfig cfg = resolve_config(o.config, o.layer, seed);
    if (o.lambda) {
        cfg.lambda = *o.lambda;
    }
    if (o.lr) {
        cfg.lr = *o.lr;
    }
    if (o.epochs) {
        cfg.epochs = *o.epochs;
    }
    if (o.batch_size) {
        cfg.batch_size = *o.batch_size;
    }
    if (o.latent_width) {
        cfg.latent_width = *o.latent_width;
    }
    if (!o.preset.empty()) {
        cfg.preset = o.preset;
    }
    cfg.validate();

    Dataset ds = load_data(o.dataset, o.manifest);
    EmbeddingDatabase label_db, caption_db;
    ThumbnailSet thumbs;
    TargetSources src;
    if (o.layer == 1) {
        if (o.label_db.empty()) {
            throw UsageError("training layer 1 needs --label-db");
        }
        label_db = load_embedding_db(o.label_db);
        src.label_db = &label_db;
    } else if (o.layer == 2) {
        if (o.caption_db.empty()) {
            throw UsageError("training layer 2 needs --caption-db");
        }
        caption_db = load_embedding_db(o.caption_db);
        src.caption_db = &caption_db;
    } else {
        if (o.thumbnails.empty()) {
            throw UsageError("training layer 3 needs --thumbnails");
        }
        thumbs = load_thumbnails(o.thumbnails);
        src.thumbnails = &thumbs;
    }
    auto targets = build_targets(o.layer, ds, src);
    for (auto& r : ds.records) {
        r = prepare(r, cfg);
    }
    std::optional<Checkpoint> condition;
    if (o.layer == 2) {
        condition = load_checkpoint(o.ocl_checkpoint);
        if (condition->arch.layer_id != 1) {
            throw FormatError("--ocl-checkpoint must hold a layer-1 checkpoint");
        }
    }
    std::ofstream log_file;
    if (!o.log.empty()) {
        log_file.open(o.log, std::ios::binary);
        if (!log_file) {
            throw std::runtime_error("cannot open log file " + o.log);
        }
    }
    auto inputs = split_inputs(ds, targets);
    auto ckpt = train_layer(cfg, inputs, condition ? &*condition : nullptr, [&](const EpochLog& e) {
        auto line = format_epoch_log(e);
        if (!o.quiet) {
            out << line << '\n' << std::flush;
        }
        if (log_file) {
            log_file << line << '\n' << std::flush;
        }
    });
    save_checkpoint(o.out, ckpt);
    out << "checkpoint=" << o.out << "\nbest_epoch=" << ckpt.epoch << "\nval_loss=" << ckpt.val_loss << '\n';
    return kOk;
}

int cmd_encode(const EncodeOpts& o, const CodecPaths& paths, std::ostream& out)
{
    if (o.layer < 1 || o.layer > 3) {
        throw UsageError("--layer must be 1, 2 or 3");
    }
    Codecs c;
    c.load(1, paths.ocl);
    c.load(2, paths.icl);
    c.load(3, paths.scl);
    require_layers(c, o.layer, "encoding with --layer " + std::to_string(o.layer));
    Dataset ds = load_data(o.dataset, o.manifest);
    auto idx = select_records(ds, o.split);
    std::vector<Bytes> streams(idx.size());
    parallel_for(idx.size(), o.jobs, [&](std::size_t i) {
        streams[i] = encode_record(c, ds.records[idx[i]], o.layer, !o.no_crc);
    });
    fs::create_directories(o.out_dir);
    ordered_json index = ordered_json::array();
    for (std::size_t i = 0; i < idx.size(); ++i) {
        auto name = record_file_name(idx[i]);
        write_file(fs::path(o.out_dir) / name, streams[i]);
        auto s = unpack(streams[i]);
        ordered_json layers;
        for (const auto& [id, p] : s.layers) {
            layers["layer" + std::to_string(id)] = p.size();
        }
        index.push_back({{"record_index", idx[i]},
                         {"file", name},
                         {"class_id", ds.records[idx[i]].class_id},
                         {"subject_id", ds.records[idx[i]].subject_id},
                         {"payload_bytes", layers},
                         {"container_bytes", streams[i].size()}});
    }
    write_text_file(fs::path(o.out_dir) / "index.json", index.dump(2) + "\n");
    out << "streams=" << idx.size() << "\nout_dir=" << o.out_dir << '\n';
    return kOk;
}

int cmd_decode(const DecodeOpts& o, const CodecPaths& paths, std::ostream& out)
{
    if (o.max_layer < 1 || o.max_layer > 3) {
        throw UsageError("--max-layer must be 1, 2 or 3");
    }
    if (o.label_db.empty()) {
        throw UsageError("decode needs --label-db to classify the layer-1 feature");
    }
    Codecs c;
    c.load(1, paths.ocl);
    c.load(2, paths.icl);
    c.load(3, paths.scl);
    auto label_db = load_embedding_db(o.label_db);
    std::optional<EmbeddingDatabase> caption_db;
    if (!o.caption_db.empty()) {
        caption_db = load_embedding_db(o.caption_db);
    }
    auto files = container_inputs(o.input);
    std::vector<Decoded> results(files.size());
    parallel_for(files.size(), o.jobs, [&](std::size_t i) {
        results[i] = decode_record(c, read_file(files[i]), o.max_layer, label_db, caption_db ? &*caption_db : nullptr);
    });
    ordered_json list = ordered_json::array();
    ThumbnailSet thumbs;
    for (std::size_t i = 0; i < files.size(); ++i) {
        const auto& d = results[i];
        ordered_json e;
        e["file"] = files[i].filename().string();
        e["subject_id"] = d.stream.subject_id;
        e["layers"] = d.layers;
        e["prediction"] = prediction_json(*d.prediction, label_db);
        if (d.caption_match) {
            const std::string& label = label_db.by_id(d.prediction->class_id).text;
            const std::string& caption = caption_db->by_id(d.caption_match->class_id).text;
            e["caption"] = prediction_json(*d.caption_match, *caption_db);
            e["prompt"] = fuse_prompt(label, caption);
        }
        if (d.thumbnail) {
            e["thumbnail_index"] = thumbs.images.size();
            thumbs.images.push_back(*d.thumbnail);
        }
        list.push_back(e);
    }
    if (!o.thumbnails_out.empty()) {
        save_thumbnails(o.thumbnails_out, thumbs);
    }
    write_output(o.out, list.dump(2), out);
    return kOk;
}

int cmd_classify(const ClassifyOpts& o, const CodecPaths& paths, std::ostream& out)
{
    if (paths.ocl.empty()) {
        throw UsageError("classify needs --ocl-checkpoint");
    }
    if (o.label_db.empty()) {
        throw UsageError("classify needs --label-db");
    }
    Codecs c;
    c.load(1, paths.ocl);
    auto label_db = load_embedding_db(o.label_db);
    Dataset ds = load_data(o.dataset, o.manifest);
    auto idx = select_records(ds, o.split);
    std::vector<Decoded> results(idx.size());
    parallel_for(idx.size(), o.jobs, [&](std::size_t i) {
        results[i] = decode_record(c, encode_record(c, ds.records[idx[i]], 1, true), 1, label_db, nullptr);
    });
    std::vector<std::uint32_t> preds, truths;
    ordered_json list = ordered_json::array();
    for (std::size_t i = 0; i < idx.size(); ++i) {
        preds.push_back(results[i].prediction->class_id);
        truths.push_back(ds.records[idx[i]].class_id);
        auto e = prediction_json(*results[i].prediction, label_db);
        e["record_index"] = idx[i];
        e["true_class_id"] = truths.back();
        list.push_back(e);
    }
    ordered_json j;
    j["records"] = idx.size();
    j["top1"] = top1_accuracy(preds, truths);
    j["predictions"] = list;
    write_output(o.out, j.dump(2), out);
    return kOk;
}

MetricReport evaluate_records(const Codecs& c, const Dataset& ds, const std::vector<std::size_t>& idx,
                              const EmbeddingDatabase& label_db, const EmbeddingDatabase* caption_db,
                              const ThumbnailSet* thumbs, std::size_t jobs)
{
    int max_layer = c.has(3) ? 3 : c.has(2) ? 2 : 1;
    require_layers(c, max_layer, "evaluation");
    std::vector<Decoded> results(idx.size());
    std::vector<Bytes> streams(idx.size());
    parallel_for(idx.size(), jobs, [&](std::size_t i) {
        streams[i] = encode_record(c, ds.records[idx[i]], max_layer, false);
        results[i] = decode_record(c, streams[i], max_layer, label_db, caption_db);
    });
    MetricReport rep;
    rep.records = idx.size();
    const double n_samples = static_cast<double>(c.samples_per_signal());
    std::vector<std::uint32_t> preds, truths;
    double ssim_sum = 0.0;
    for (std::size_t i = 0; i < idx.size(); ++i) {
        const auto& rec = ds.records[idx[i]];
        const auto& d = results[i];
        double bps_all = 0.0;
        for (const auto& [id, payload] : d.stream.layers) {
            double b = compute_bps(8.0 * static_cast<double>(payload.size()), n_samples);
            rep.bps_per_layer[id] += b / static_cast<double>(idx.size());
            bps_all += b;
        }
        rep.bps_total += bps_all / static_cast<double>(idx.size());
        preds.push_back(d.prediction->class_id);
        truths.push_back(rec.class_id);
        auto& subj = rep.per_subject[rec.subject_id];
        ++subj.count;
        subj.correct += preds.back() == truths.back() ? 1 : 0;
        subj.bps_sum += bps_all;
        if (thumbs != nullptr && d.thumbnail) {
            ssim_sum += ssim(*d.thumbnail, thumbs->images.at(idx[i]));
        }
    }
    rep.top1 = top1_accuracy(preds, truths);
    std::vector<std::uint32_t> classes;
    for (const auto& e : label_db.entries()) {
        classes.push_back(e.class_id);
    }
    rep.confusion = confusion_matrix(preds, truths, classes);
    if (thumbs != nullptr && max_layer == 3) {
        rep.mean_ssim = ssim_sum / static_cast<double>(idx.size());
    }
    return rep;
}

int cmd_evaluate(const EvaluateOpts& o, const CodecPaths& paths, std::ostream& out)
{
    if (paths.ocl.empty()) {
        throw UsageError("evaluate needs --ocl-checkpoint");
    }
    if (o.label_db.empty()) {
        throw UsageError("evaluate needs --label-db");
    }
    if (!paths.scl.empty() && paths.icl.empty()) {
        throw UsageError("--scl-checkpoint needs --icl-checkpoint as well (layers form a prefix)");
    }
    Codecs c;
    c.load(1, paths.ocl);
    c.load(2, paths.icl);
    c.load(3, paths.scl);
    auto label_db = load_embedding_db(o.label_db);
    std::optional<EmbeddingDatabase> caption_db;
    if (!o.caption_db.empty()) {
        caption_db = load_embedding_db(o.caption_db);
    }
    std::optional<ThumbnailSet> thumbs;
    Dataset ds = load_data(o.dataset, o.manifest);
    if (!o.thumbnails.empty()) {
        thumbs = load_thumbnails(o.thumbnails);
        if (thumbs->images.size() != ds.records.size()) {
            throw FormatError("thumbnail count does not match the dataset");
        }
    }
    auto idx = select_records(ds, o.split);
    auto rep = evaluate_records(c, ds, idx, label_db, caption_db ? &*caption_db : nullptr,
                                thumbs ? &*thumbs : nullptr, o.jobs);
    if (!o.captions.empty()) {
        rep.captions = score_captions(load_caption_pairs(o.captions));
    }
    write_output(o.out, rep.to_json(), out);
    return kOk;
}

int cmd_sweep(const SweepOpts& o, std::uint64_t seed, std::ostream& out)
{
    if (o.label_db.empty()) {
        throw UsageError("sweep needs --label-db");
    }
    TrainConfig base = resolve_config(o.config, 1, seed);
    if (o.epochs) {
        base.epochs = *o.epochs;
    }
    if (!o.preset.empty()) {
        base.preset = o.preset;
    }
    Dataset ds = load_data(o.dataset, o.manifest);
    auto label_db = load_embedding_db(o.label_db);
    TargetSources src;
    src.label_db = &label_db;
    auto targets = build_targets(1, ds, src);
    for (auto& r : ds.records) {
        r = prepare(r, base);
    }
    auto inputs = split_inputs(ds, targets);
    auto idx = select_records(ds, o.split);
    auto points = rate_accuracy_sweep(o.lambdas, [&](double lambda) {
        TrainConfig cfg = base;
        cfg.lambda = lambda;
        cfg.validate();
        auto ckpt = train_layer(cfg, inputs, nullptr, [&](const EpochLog& e) {
            if (!o.quiet) {
                out << "lambda=" << lambda << ' ' << format_epoch_log(e) << '\n' << std::flush;
            }
        });
        LayerCodec codec = ckpt.codec();
        double bits = 0.0;
        std::vector<std::uint32_t> preds, truths;
        for (auto i : idx) {
            const auto& x = ds.records[i];
            auto payload = codec.compress(x);
            bits += 8.0 * static_cast<double>(payload.size());
            auto z = codec.decode(codec.decompress(payload));
            preds.push_back(classify(label_db, z.feature->values).class_id);
            truths.push_back(x.class_id);
        }
        double n = static_cast<double>(idx.size()) * static_cast<double>(codec.arch().in_channels) *
                   static_cast<double>(codec.arch().in_samples);
        return std::pair{compute_bps(bits, n), top1_accuracy(preds, truths)};
    });
    write_output(o.out, sweep_to_json(points), out);
    return kOk;
}

int cmd_simulate(const SimulateOpts& o, std::ostream& out)
{
    if (o.budget_bits.has_value() == !o.channel_config.empty()) {
        throw UsageError("simulate needs exactly one of --budget-bits and --channel-config");
    }
    ChannelModel ch;
    if (o.budget_bits) {
        ch.budget_bits_per_signal = *o.budget_bits;
        ch.validate();
    } else {
        auto j = nlohmann::json::parse(read_text_file(o.channel_config));
        // accepts the channel object itself or a config with a "channel" member
        ch = ChannelModel::from_json(j.contains("channel") ? j["channel"].dump() : j.dump());
    }
    auto files = container_inputs(o.input);
    std::vector<Bytes> streams;
    for (const auto& f : files) {
        streams.push_back(read_file(f));
    }
    auto result = simulate(streams, ch);
    if (!o.out_dir.empty()) {
        fs::create_directories(o.out_dir);
        for (std::size_t i = 0; i < files.size(); ++i) {
            write_file(fs::path(o.out_dir) / files[i].filename(), result.delivered[i]);
        }
    }
    auto j = ordered_json::parse(result.report.to_json());
    for (std::size_t i = 0; i < files.size(); ++i) {
        j["signals"][i]["file"] = files[i].filename().string();
    }
    write_output(o.report, j.dump(2), out);
    return kOk;
}

int cmd_inspect(const InspectOpts& o, std::ostream& out)
{
    auto bytes = read_file(o.input);
    if (bytes.size() >= 4 && std::string(bytes.begin(), bytes.begin() + 4) == "EIDW") {
        auto c = decode_checkpoint(bytes);
        out << "kind=checkpoint\nlayer_id=" << c.arch.layer_id << "\nepoch=" << c.epoch
            << "\nval_rate_bits=" << c.val_rate_bits << "\nval_distortion=" << c.val_distortion
            << "\nval_loss=" << c.val_loss << "\nconfig_hash=" << c.config_hash
            << "\nlatent_width=" << c.arch.latent_width() << "\noutput_width=" << c.arch.output_width()
            << "\nparameters=" << c.params.size() << '\n';
        return kOk;
    }
    auto s = unpack(bytes);
    out << "kind=container\nmagic=EIDC\nversion=1\ncrc=" << (s.with_crc ? 1 : 0) << "\nsubject_id="
        << static_cast<int>(s.subject_id) << "\nlayer_count=" << s.layers.size() << '\n';
    for (const auto& [id, payload] : s.layers) {
        out << "layer" << id << "_bytes=" << payload.size() << '\n';
    }
    out << "payload_bits=" << payload_bits(s, 3) << "\ncontainer_bytes=" << bytes.size() << '\n';
    return kOk;
}

void add_codec_paths(CLI::App* app, CodecPaths& p)
{
    app->add_option("--ocl-checkpoint", p.ocl, "Layer-1 (label) checkpoint")->check(CLI::ExistingFile);
    app->add_option("--icl-checkpoint", p.icl, "Layer-2 (caption) checkpoint")->check(CLI::ExistingFile);
    app->add_option("--scl-checkpoint", p.scl, "Layer-3 (thumbnail) checkpoint")->check(CLI::ExistingFile);
}

void add_dataset(CLI::App* app, std::string& dataset, std::string& manifest)
{
    app->add_option("--dataset", dataset, "EEGD record file")->required()->check(CLI::ExistingFile);
    app->add_option("--manifest", manifest, "Manifest JSON (default: <dataset>.json)")->check(CLI::ExistingFile);
}

const auto kSplitNames = CLI::IsMember({"train", "val", "test", "all"});

} // namespace

// ---------------------------------------------------------------------------

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err)
{
    CLI::App app{"Layered semantic codec for brain signals", "semcodec"};
    app.set_help_flag("--help", "Print this help message and exit");
    app.require_subcommand(1);
    app.fallthrough();
    std::uint64_t seed = 0;
    app.add_option("--seed", seed, "Seed for every random choice")->capture_default_str();

    SynthOpts so;
    auto* synth = app.add_subcommand("synth", "Write a synthetic dataset and optional targets");
    synth->add_option("--out", so.out, "Output EEGD file")->required();
    synth->add_option("--manifest-out", so.manifest_out, "Manifest path (default: <out>.json)");
    synth->add_option("--classes", so.classes, "Number of classes")->capture_default_str()->check(CLI::PositiveNumber);
    synth->add_option("--per-class", so.per_class, "Records per class")->capture_default_str()->check(CLI::PositiveNumber);
    synth->add_option("--channels", so.channels, "Electrodes")->capture_default_str()->check(CLI::PositiveNumber);
    synth->add_option("--samples", so.samples, "Samples per channel")->capture_default_str()->check(CLI::PositiveNumber);
    synth->add_option("--sample-rate", so.sample_rate, "Sampling rate in Hz")->capture_default_str()->check(CLI::PositiveNumber);
    synth->add_option("--noise-sigma", so.noise_sigma, "White noise level (1 gives about 0 dB SNR)")->capture_default_str();
    synth->add_option("--subjects", so.subjects, "Number of subjects")->capture_default_str()->check(CLI::PositiveNumber);
    synth->add_option("--label-db-out", so.label_db_out, "Also write orthogonal label embeddings (EMBD)");
    synth->add_option("--label-dim", so.label_dim, "Label embedding width")->capture_default_str();
    synth->add_option("--caption-db-out", so.caption_db_out, "Also write per-record caption embeddings (EMBD)");
    synth->add_option("--caption-dim", so.caption_dim, "Caption embedding width")->capture_default_str();
    synth->add_option("--thumbnails-out", so.thumbnails_out, "Also write per-record thumbnails (THMB)");

    SplitOpts sp;
    auto* split = app.add_subcommand("split", "Write a stratified train/val/test split into a manifest");
    add_dataset(split, sp.dataset, sp.manifest);
    split->add_option("--out", sp.out, "Output manifest (default: overwrite the input manifest)");
    split->add_option("--train", sp.train, "Train fraction")->capture_default_str();
    split->add_option("--val", sp.val, "Validation fraction")->capture_default_str();
    split->add_option("--test", sp.test, "Test fraction")->capture_default_str();

    TrainOpts to;
    auto* train = app.add_subcommand("train", "Train one layer codec");
    add_dataset(train, to.dataset, to.manifest);
    train->add_option("--layer", to.layer, "Layer to train (1, 2 or 3)")->required()->check(CLI::Range(1, 3));
    train->add_option("--config", to.config, "Training config JSON")->check(CLI::ExistingFile);
    train->add_option("--out", to.out, "Output checkpoint")->required();
    train->add_option("--log", to.log, "Also write the progress lines to this file");
    train->add_option("--label-db", to.label_db, "Label embeddings (layer 1 targets)")->check(CLI::ExistingFile);
    train->add_option("--caption-db", to.caption_db, "Caption embeddings (layer 2 targets)")->check(CLI::ExistingFile);
    train->add_option("--thumbnails", to.thumbnails, "Thumbnails (layer 3 targets)")->check(CLI::ExistingFile);
    train->add_option("--ocl-checkpoint", to.ocl_checkpoint, "Trained layer-1 checkpoint (layer 2 only)")
        ->check(CLI::ExistingFile);
    train->add_option("--lambda", to.lambda, "Override the rate-distortion multiplier");
    train->add_option("--lr", to.lr, "Override the learning rate");
    train->add_option("--epochs", to.epochs, "Override the epoch count");
    train->add_option("--batch-size", to.batch_size, "Override the batch size");
    train->add_option("--preset", to.preset, "Architecture preset")->check(CLI::IsMember({"paper", "compact"}));
    train->add_option("--latent-width", to.latent_width, "Override the code length");
    train->add_flag("--quiet", to.quiet, "Do not echo progress lines");

    EncodeOpts eo;
    CodecPaths encode_paths;
    auto* encode = app.add_subcommand("encode", "Encode records into layered containers, one file per record");
    add_dataset(encode, eo.dataset, eo.manifest);
    encode->add_option("--split", eo.split, "Records to encode")->capture_default_str()->check(kSplitNames);
    encode->add_option("--layer", eo.layer, "Encode layers 1..k")->capture_default_str()->check(CLI::Range(1, 3));
    add_codec_paths(encode, encode_paths);
    encode->add_option("--out-dir", eo.out_dir, "Directory for <record>.eidc files and index.json")->required();
    encode->add_flag("--no-crc", eo.no_crc, "Omit the CRC32 trailer");
    encode->add_option("--jobs", eo.jobs, "Worker threads")->capture_default_str()->check(CLI::PositiveNumber);

    DecodeOpts dop;
    CodecPaths decode_paths;
    auto* decode = app.add_subcommand("decode", "Decode containers up to a layer");
    decode->add_option("--input", dop.input, "Container file or directory of .eidc files")->required();
    decode->add_option("--max-layer", dop.max_layer, "Highest layer to decode")->capture_default_str()->check(CLI::Range(1, 3));
    add_codec_paths(decode, decode_paths);
    decode->add_option("--label-db", dop.label_db, "Label embeddings for classification")->check(CLI::ExistingFile);
    decode->add_option("--caption-db", dop.caption_db, "Caption embeddings for caption retrieval")->check(CLI::ExistingFile);
    decode->add_option("--thumbnails-out", dop.thumbnails_out, "Write decoded thumbnails (THMB)");
    decode->add_option("--out", dop.out, "Result JSON (default: stdout)");
    decode->add_option("--jobs", dop.jobs, "Worker threads")->capture_default_str()->check(CLI::PositiveNumber);

    ClassifyOpts co;
    CodecPaths classify_paths;
    auto* classify_cmd = app.add_subcommand("classify", "Classify records through the layer-1 bitstream");
    add_dataset(classify_cmd, co.dataset, co.manifest);
    classify_cmd->add_option("--split", co.split, "Records to classify")->capture_default_str()->check(kSplitNames);
    classify_cmd->add_option("--ocl-checkpoint", classify_paths.ocl, "Layer-1 checkpoint")->check(CLI::ExistingFile);
    classify_cmd->add_option("--label-db", co.label_db, "Label embeddings")->check(CLI::ExistingFile);
    classify_cmd->add_option("--out", co.out, "Result JSON (default: stdout)");
    classify_cmd->add_option("--jobs", co.jobs, "Worker threads")->capture_default_str()->check(CLI::PositiveNumber);

    EvaluateOpts ev;
    CodecPaths evaluate_paths;
    auto* evaluate = app.add_subcommand("evaluate", "Write a metric report for trained layers");
    add_dataset(evaluate, ev.dataset, ev.manifest);
    evaluate->add_option("--split", ev.split, "Records to evaluate")->capture_default_str()->check(kSplitNames);
    add_codec_paths(evaluate, evaluate_paths);
    evaluate->add_option("--label-db", ev.label_db, "Label embeddings")->check(CLI::ExistingFile);
    evaluate->add_option("--caption-db", ev.caption_db, "Caption embeddings")->check(CLI::ExistingFile);
    evaluate->add_option("--thumbnails", ev.thumbnails, "Reference thumbnails for SSIM")->check(CLI::ExistingFile);
    evaluate->add_option("--captions", ev.captions, "Caption pairs JSON for BLEU/ROUGE")->check(CLI::ExistingFile);
    evaluate->add_option("--out", ev.out, "Report JSON (default: stdout)");
    evaluate->add_option("--jobs", ev.jobs, "Worker threads")->capture_default_str()->check(CLI::PositiveNumber);

    SweepOpts sw;
    auto* sweep = app.add_subcommand("sweep", "Train one layer-1 codec per lambda and report (bps, accuracy)");
    add_dataset(sweep, sw.dataset, sw.manifest);
    sweep->add_option("--label-db", sw.label_db, "Label embeddings")->check(CLI::ExistingFile);
    sweep->add_option("--lambdas", sw.lambdas, "Comma-separated lambda values")->required()->delimiter(',');
    sweep->add_option("--config", sw.config, "Base layer-1 training config JSON")->check(CLI::ExistingFile);
    sweep->add_option("--epochs", sw.epochs, "Override the epoch count");
    sweep->add_option("--preset", sw.preset, "Architecture preset")->check(CLI::IsMember({"paper", "compact"}));
    sweep->add_option("--split", sw.split, "Records to evaluate")->capture_default_str()->check(kSplitNames);
    sweep->add_option("--out", sw.out, "Sweep JSON (default: stdout)");
    sweep->add_flag("--quiet", sw.quiet, "Do not echo progress lines");

    SimulateOpts si;
    auto* simulate_cmd = app.add_subcommand("simulate", "Pass containers through a bandwidth-limited link");
    simulate_cmd->add_option("--input", si.input, "Container file or directory of .eidc files")->required();
    simulate_cmd->add_option("--budget-bits", si.budget_bits, "Per-signal budget in bits");
    simulate_cmd->add_option("--channel-config", si.channel_config, "Channel JSON")->check(CLI::ExistingFile);
    simulate_cmd->add_option("--out-dir", si.out_dir, "Write delivered containers here");
    simulate_cmd->add_option("--report", si.report, "Report JSON (default: stdout)");

    InspectOpts io;
    auto* inspect = app.add_subcommand("inspect", "Print container or checkpoint header fields as key=value");
    inspect->add_option("--input", io.input, "Container or checkpoint file")->required()->check(CLI::ExistingFile);

    try {
        try {
            app.parse(argc, argv);
        } catch (const CLI::ParseError& e) {
            int code = app.exit(e, out, err);
            return code == 0 ? kOk : kUsage;
        }
        if (synth->parsed()) {
            return cmd_synth(so, seed, out);
        }
        if (split->parsed()) {
            return cmd_split(sp, seed, out);
        }
        if (train->parsed()) {
            return cmd_train(to, seed, out);
        }
        if (encode->parsed()) {
            return cmd_encode(eo, encode_paths, out);
        }
        if (decode->parsed()) {
            return cmd_decode(dop, decode_paths, out);
        }
        if (classify_cmd->parsed()) {
            return cmd_classify(co, classify_paths, out);
        }
        if (evaluate->parsed()) {
            return cmd_evaluate(ev, evaluate_paths, out);
        }
        if (sweep->parsed()) {
            return cmd_sweep(sw, seed, out);
        }
        if (simulate_cmd->parsed()) {
            return cmd_simulate(si, out);
        }
        if (inspect->parsed()) {
            return cmd_inspect(io, out);
        }
        return kUsage;
    } catch (const UsageError& e) {
        err << "usage error: " << e.what() << '\n';
        return kUsage;
    } catch (const FormatError& e) {
        err << "format error: " << e.what() << '\n';
        return kDataError;
    } catch (const std::invalid_argument& e) {
        err << "invalid data: " << e.what() << '\n';
        return kDataError;
    } catch (const nlohmann::json::exception& e) {
        err << "format error: " << e.what() << '\n';
        return kDataError;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kRuntimeError;
    }
}

} // namespace semcodec::cli
