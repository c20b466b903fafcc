// Writes the procedural digit corpus as four IDX files:
//   lns_make_corpus <dir> [--train N] [--test N] [--size S] [--seed K]

#include <filesystem>
#include <iostream>

#include <CLI11.hpp>

#include "lns/data.hpp"

int main(int argc, char** argv) {
    CLI::App app{"Render the synthetic digit corpus to IDX files"};
    std::string dir;
    std::size_t train = 6000, test = 1000, size = 16;
    std::uint64_t seed = 1234;
    app.add_option("dir", dir, "output directory")->required();
    app.add_option("--train", train, "training images");
    app.add_option("--test", test, "test images");
    app.add_option("--size", size, "image side in pixels")->check(CLI::Range(8, 256));
    app.add_option("--seed", seed, "corpus seed; the test split uses seed + 1");
    CLI11_PARSE(app, argc, argv);

    try {
        namespace fs = std::filesystem;
        fs::create_directories(dir);
        const auto a = lns::data::synth_digits(train, size, seed);
        const auto b = lns::data::synth_digits(test, size, seed + 1);
        lns::data::write_idx_images(fs::path(dir) / "train-images.idx3-ubyte", a.images);
        lns::data::write_idx_labels(fs::path(dir) / "train-labels.idx1-ubyte", a.labels);
        lns::data::write_idx_images(fs::path(dir) / "test-images.idx3-ubyte", b.images);
        lns::data::write_idx_labels(fs::path(dir) / "test-labels.idx1-ubyte", b.labels);
        std::cout << "wrote " << train << " train and " << test << " test images of " << size << "x" << size
                  << " to " << dir << "\n";
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
