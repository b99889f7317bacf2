#include <doctest.h>

#include <filesystem>
#include <sstream>

#include <json.hpp>

#include "semcodec/bitstream.hpp"
#include "semcodec/byte_io.hpp"
#include "semcodec/cli.hpp"

namespace fs = std::filesystem;
using namespace semcodec;

namespace {

struct Result {
    int code = -1;
    std::string out;
    std::string err;
};

Result run(std::vector<std::string> args)
{
    args.insert(args.begin(), "semcodec");
    std::vector<const char*> argv;
    for (const auto& a : args) {
        argv.push_back(a.c_str());
    }
    std::ostringstream out, err;
    Result r;
    r.code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
    r.out = out.str();
    r.err = err.str();
    return r;
}

// Fresh scratch directory per test case.
struct Scratch {
    fs::path dir;
    explicit Scratch(const std::string& name) : dir(fs::temp_directory_path() / ("semcodec_cli_" + name))
    {
        fs::remove_all(dir);
        fs::create_directories(dir);
    }
    ~Scratch() { fs::remove_all(dir); }
    std::string operator()(const std::string& f) const { return (dir / f).string(); }
};

// Small three-layer setup: synthetic data, targets and one-epoch checkpoints.
void build_pipeline(const Scratch& s)
{
    REQUIRE(run({"synth", "--classes", "4", "--per-class", "10", "--channels", "4", "--out", s("d.eegd"),
                 "--label-db-out", s("l.embd"), "--label-dim", "8", "--caption-db-out", s("c.embd"),
                 "--thumbnails-out", s("t.thmb"), "--seed", "7"})
                .code == 0);
    const std::vector<std::string> common = {"--dataset", s("d.eegd"), "--epochs", "1", "--preset", "compact",
                                             "--latent-width", "8", "--quiet"};
    auto train = [&](std::vector<std::string> extra) {
        extra.insert(extra.begin(), "train");
        extra.insert(extra.end(), common.begin(), common.end());
        auto r = run(extra);
        INFO(r.err);
        REQUIRE(r.code == 0);
    };
    train({"--layer", "1", "--label-db", s("l.embd"), "--out", s("ocl.eidw")});
    train({"--layer", "2", "--caption-db", s("c.embd"), "--ocl-checkpoint", s("ocl.eidw"), "--out", s("icl.eidw")});
    train({"--layer", "3", "--thumbnails", s("t.thmb"), "--out", s("scl.eidw")});
}

std::vector<std::string> checkpoints(const Scratch& s)
{
    return {"--ocl-checkpoint", s("ocl.eidw"), "--icl-checkpoint", s("icl.eidw"), "--scl-checkpoint", s("scl.eidw")};
}

std::vector<std::string> operator+(std::vector<std::string> a, const std::vector<std::string>& b)
{
    a.insert(a.end(), b.begin(), b.end());
    return a;
}

} // namespace

TEST_CASE("synth creates the dataset and manifest")
{
    Scratch s("synth");
    auto r = run({"synth", "--classes", "8", "--per-class", "50", "--out", s("d.eegd"), "--seed", "7"});
    CHECK(r.code == 0);
    CHECK(fs::exists(s("d.eegd")));
    CHECK(fs::exists(s("d.eegd.json")));
    CHECK(r.out.find("records=400") != std::string::npos);
    // 128 channels x 500 samples of f32 per record
    CHECK(fs::file_size(s("d.eegd")) == 19 + 400 * (3 + 128 * 500 * 4));
}

TEST_CASE("usage errors and help")
{
    CHECK(run({}).code == cli::kUsage);
    CHECK(run({"bogus"}).code == cli::kUsage);
    CHECK(run({"--help"}).code == cli::kOk);
    CHECK(run({"synth", "--classes"}).code == cli::kUsage);
    CHECK(run({"synth", "-o", "x"}).code == cli::kUsage);

    const std::map<std::string, std::vector<std::string>> flags = {
        {"synth", {"--classes", "--per-class", "--out", "--noise-sigma", "--label-db-out"}},
        {"split", {"--dataset", "--train", "--val", "--test"}},
        {"train", {"--layer", "--config", "--ocl-checkpoint", "--lambda", "--preset"}},
        {"encode", {"--layer", "--ocl-checkpoint", "--out-dir", "--no-crc"}},
        {"decode", {"--input", "--max-layer", "--label-db", "--thumbnails-out"}},
        {"classify", {"--ocl-checkpoint", "--label-db", "--split"}},
        {"evaluate", {"--captions", "--thumbnails", "--out"}},
        {"sweep", {"--lambdas", "--epochs", "--out"}},
        {"simulate", {"--budget-bits", "--channel-config", "--report"}},
        {"inspect", {"--input"}},
    };
    for (const auto& [cmd, names] : flags) {
        auto r = run({cmd, "--help"});
        CHECK(r.code == cli::kOk);
        for (const auto& n : names) {
            INFO(cmd << " " << n);
            CHECK(r.out.find(n) != std::string::npos);
        }
    }
}

TEST_CASE("encode, slice-decode, simulate and inspect")
{
    Scratch s("pipeline");
    build_pipeline(s);

    auto r = run({"encode", "--dataset", s("d.eegd"), "--layer", "2", "--out-dir", s("bad")});
    CHECK(r.code == cli::kUsage);
    CHECK(r.err.find("--ocl-checkpoint") != std::string::npos);

    r = run(std::vector<std::string>{"encode", "--dataset", s("d.eegd"), "--layer", "3", "--out-dir", s("enc")} +
            checkpoints(s));
    REQUIRE(r.code == 0);
    auto index = nlohmann::json::parse(read_text_file(s("enc/index.json")));
    REQUIRE(index.size() == 4); // one test record per class
    std::string first = s("enc/" + index[0]["file"].get<std::string>());
    CHECK(unpack(read_file(first)).max_layer() == 3);

    r = run({"decode", "--input", first, "--max-layer", "1", "--ocl-checkpoint", s("ocl.eidw"), "--label-db",
             s("l.embd")});
    REQUIRE(r.code == 0);
    auto one = nlohmann::json::parse(r.out);
    CHECK(one[0]["layers"] == 1);
    CHECK(one[0].contains("prediction"));
    CHECK(!one[0].contains("caption"));
    CHECK(!one[0].contains("thumbnail_index"));

    r = run(std::vector<std::string>{"decode", "--input", s("enc"), "--label-db", s("l.embd"), "--caption-db",
                                     s("c.embd"), "--thumbnails-out", s("out.thmb")} +
            checkpoints(s));
    REQUIRE(r.code == 0);
    auto all = nlohmann::json::parse(r.out);
    REQUIRE(all.size() == 4);
    CHECK(all[0]["layers"] == 3);
    CHECK(all[0].contains("caption"));
    CHECK(all[0].contains("prompt"));
    CHECK(all[0]["prediction"] == one[0]["prediction"]);
    CHECK(fs::exists(s("out.thmb")));

    r = run({"inspect", "--input", first});
    CHECK(r.code == 0);
    CHECK(r.out.find("magic=EIDC") != std::string::npos);
    CHECK(r.out.find("layer_count=3") != std::string::npos);
    r = run({"inspect", "--input", s("icl.eidw")});
    CHECK(r.code == 0);
    CHECK(r.out.find("layer_id=2") != std::string::npos);

    auto l1 = container_size({{1, unpack(read_file(first)).layers.at(1)}}, true);
    r = run({"simulate", "--input", s("enc"), "--budget-bits", std::to_string(8 * l1), "--out-dir", s("sim"),
             "--report", s("report.json")});
    CHECK(r.code == 0);
    auto rep = nlohmann::json::parse(read_text_file(s("report.json")));
    CHECK(rep["signals"][0]["delivered_layers"] == std::vector<int>{1});
    CHECK(unpack(read_file(s("sim/" + index[0]["file"].get<std::string>()))).max_layer() == 1);
    CHECK(run({"simulate", "--input", s("enc"), "--budget-bits", "8", "--out-dir", s("sim2")}).code ==
          cli::kRuntimeError);

    // corrupt input is a data error
    auto bytes = read_file(first);
    bytes[bytes.size() / 2] ^= 0x5A;
    write_file(s("corrupt.eidc"), bytes);
    r = run({"decode", "--input", s("corrupt.eidc"), "--ocl-checkpoint", s("ocl.eidw"), "--label-db", s("l.embd")});
    CHECK(r.code == cli::kDataError);
    CHECK(!r.err.empty());
    CHECK(run({"inspect", "--input", s("d.eegd")}).code == cli::kDataError);

    r = run(std::vector<std::string>{"evaluate", "--dataset", s("d.eegd"), "--label-db", s("l.embd"), "--caption-db",
                                     s("c.embd"), "--thumbnails", s("t.thmb"), "--out", s("eval.json")} +
            checkpoints(s));
    REQUIRE(r.code == 0);
    auto ev = nlohmann::json::parse(read_text_file(s("eval.json")));
    CHECK(ev["records"] == 4);
    CHECK(ev.contains("mean_ssim"));
    CHECK(ev["bps"]["total"].get<double>() > 0.0);

    r = run({"classify", "--dataset", s("d.eegd"), "--ocl-checkpoint", s("ocl.eidw"), "--label-db", s("l.embd")});
    REQUIRE(r.code == 0);
    auto cls = nlohmann::json::parse(r.out);
    CHECK(cls["predictions"].size() == 4);
    CHECK(cls["top1"] == ev["top1"]);

    r = run({"sweep", "--dataset", s("d.eegd"), "--label-db", s("l.embd"), "--lambdas", "4000,400", "--epochs", "1",
             "--preset", "compact", "--quiet"});
    REQUIRE(r.code == 0);
    auto sw = nlohmann::json::parse(r.out);
    REQUIRE(sw.size() == 2);
    CHECK(sw[0]["bps"].get<double>() <= sw[1]["bps"].get<double>());
    CHECK(run({"sweep", "--dataset", s("d.eegd"), "--label-db", s("l.embd"), "--lambdas", "400"}).code ==
          cli::kDataError);
}

TEST_CASE("outputs are byte-identical across runs")
{
    Scratch a("det_a"), b("det_b");
    for (const Scratch* s : {&a, &b}) {
        REQUIRE(run({"synth", "--classes", "4", "--per-class", "10", "--channels", "4", "--out", (*s)("d.eegd"),
                     "--label-db-out", (*s)("l.embd"), "--label-dim", "8", "--seed", "3"})
                    .code == 0);
        REQUIRE(run({"train", "--dataset", (*s)("d.eegd"), "--layer", "1", "--label-db", (*s)("l.embd"), "--out",
                     (*s)("ocl.eidw"), "--epochs", "1", "--preset", "compact", "--latent-width", "8", "--quiet"})
                    .code == 0);
        REQUIRE(run({"encode", "--dataset", (*s)("d.eegd"), "--layer", "1", "--ocl-checkpoint", (*s)("ocl.eidw"),
                     "--out-dir", (*s)("enc"), "--jobs", "2"})
                    .code == 0);
    }
    for (const char* f : {"d.eegd", "d.eegd.json", "l.embd", "ocl.eidw", "enc/index.json"}) {
        INFO(f);
        CHECK(read_file(a(f)) == read_file(b(f)));
    }
    for (const auto& e : fs::directory_iterator(a.dir / "enc")) {
        CHECK(read_file(e.path()) == read_file(b.dir / "enc" / e.path().filename()));
    }
}

TEST_CASE("split rewrites the manifest")
{
    Scratch s("split");
    REQUIRE(run({"synth", "--classes", "2", "--per-class", "10", "--channels", "2", "--out", s("d.eegd")}).code == 0);
    auto r = run({"split", "--dataset", s("d.eegd"), "--out", s("m.json"), "--train", "0.6", "--val", "0.2",
                  "--test", "0.2"});
    CHECK(r.code == 0);
    CHECK(r.out.find("train=12") != std::string::npos);
    CHECK(run({"split", "--dataset", s("d.eegd"), "--out", s("m2.json"), "--train", "0.9", "--val", "0.2",
               "--test", "0.2"})
              .code == cli::kDataError);
}
