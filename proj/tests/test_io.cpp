#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <unistd.h>

#include "uhar/io.hpp"

using namespace uhar;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() / ("uhar_test_" + std::to_string(::getpid()) + "_" +
                                            std::to_string(counter()++));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    static std::size_t& counter() {
        static std::size_t c = 0;
        return c;
    }
};

}  // namespace

TEST_CASE("encoder checkpoint round trip is bit exact") {
    TempDir tmp;
    Rng rng(5);
    const EncoderModel m = build_encoder(24, 4, {10, 6}, Activation::Relu, rng);
    save_encoder(tmp.path / "enc.ckpt", m);
    const EncoderModel back = load_encoder(tmp.path / "enc.ckpt");
    REQUIRE(back.input_dim == m.input_dim);
    REQUIRE(back.latent_dim == m.latent_dim);
    REQUIRE(encoder_flatten_params(back) == encoder_flatten_params(m));
}

TEST_CASE("fcbnn checkpoint round trip is bit exact") {
    TempDir tmp;
    Rng rng(6);
    const FcBnnModel m = build_fcbnn(8, 3, {6, 5, 4}, rng, 1.3, {1, 3, 5});
    save_fcbnn(tmp.path / "bnn.ckpt", m);
    const FcBnnModel back = load_fcbnn(tmp.path / "bnn.ckpt");
    REQUIRE(back.kept == m.kept);
    REQUIRE(back.num_classes == m.num_classes);
    REQUIRE(back.layers.front().prior_sigma == m.layers.front().prior_sigma);
    REQUIRE(fcbnn_flatten_params(back) == fcbnn_flatten_params(m));
}

TEST_CASE("checkpoint kind and magic are validated") {
    TempDir tmp;
    Rng rng(7);
    const EncoderModel m = build_encoder(12, 2, {4}, Activation::Tanh, rng);
    save_encoder(tmp.path / "enc.ckpt", m);
    REQUIRE_THROWS_AS(load_fcbnn(tmp.path / "enc.ckpt"), ArtifactError);
    atomic_write_file(tmp.path / "junk.ckpt", "definitely not a checkpoint");
    REQUIRE_THROWS_AS(load_encoder(tmp.path / "junk.ckpt"), ArtifactError);
    REQUIRE_THROWS_AS(load_encoder(tmp.path / "missing.ckpt"), ArtifactError);
}

namespace {

DatasetSplit tiny_dataset() {
    SyntheticSpec spec = default_synthetic_spec();
    spec.classes.resize(3);
    spec.unknown_class = 2;
    spec.windows_per_class = 8;
    spec.window_len = 16;
    spec.seed = 11;
    return generate_synthetic(spec);
}

void require_equal(const DatasetSplit& a, const DatasetSplit& b) {
    REQUIRE(a.window_len == b.window_len);
    REQUIRE(a.num_known_classes == b.num_known_classes);
    REQUIRE(a.seed == b.seed);
    const auto check = [](const std::vector<ImuWindow>& x, const std::vector<ImuWindow>& y) {
        REQUIRE(x.size() == y.size());
        for (std::size_t i = 0; i < x.size(); ++i) {
            REQUIRE(x[i].label == y[i].label);
            REQUIRE(x[i].samples.data == y[i].samples.data);
        }
    };
    check(a.train, b.train);
    check(a.validation, b.validation);
    check(a.test, b.test);
    check(a.unknown, b.unknown);
}

}  // namespace

TEST_CASE("dataset binary round trip") {
    TempDir tmp;
    const DatasetSplit d = tiny_dataset();
    save_dataset(tmp.path, d, DatasetFormat::Binary);
    require_equal(load_dataset(tmp.path), d);

    const auto kv = read_dataset_manifest(tmp.path);
    REQUIRE(kv.at("format") == "binary");
    REQUIRE(std::stoul(kv.at("count_train")) == d.train.size());
    REQUIRE(std::stoul(kv.at("window_len")) == d.window_len);
}

TEST_CASE("dataset csv round trip") {
    TempDir tmp;
    const DatasetSplit d = tiny_dataset();
    save_dataset(tmp.path, d, DatasetFormat::Csv);
    require_equal(load_dataset(tmp.path), d);
    REQUIRE(read_dataset_manifest(tmp.path).at("format") == "csv");

    SECTION("reader does not depend on row order") {
        const std::string text = read_file(tmp.path / "train.csv");
        std::istringstream in(text);
        std::string header, line;
        std::getline(in, header);
        std::vector<std::string> rows;
        while (std::getline(in, line))
            if (!line.empty()) rows.push_back(line);
        Rng rng(3);
        rng.shuffle(rows);
        std::string shuffled = header + "\n";
        for (const auto& r : rows) shuffled += r + "\n";
        atomic_write_file(tmp.path / "train.csv", shuffled);
        require_equal(load_dataset(tmp.path), d);
    }
}

TEST_CASE("fmt_double round trips") {
    Rng rng(12);
    for (int i = 0; i < 100; ++i) {
        const double v = rng.normal() * std::pow(10.0, rng.uniform(-8.0, 8.0));
        REQUIRE(std::stod(fmt_double(v)) == v);
    }
}
