#include "ctxseg/dataio/storage.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace ctxseg {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::ifstream open_in(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw DataIoError("cannot open " + path.string());
    return in;
}

std::ofstream open_out(const fs::path& path) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw DataIoError("cannot write " + path.string());
    return out;
}

// Reads the next whitespace-separated token, skipping '#' comments.
std::string next_token(std::istream& in, const fs::path& path) {
    std::string tok;
    while (in >> tok) {
        if (tok[0] != '#') return tok;
        std::string rest;
        std::getline(in, rest);
    }
    throw DataIoError("unexpected end of " + path.string());
}

std::size_t next_number(std::istream& in, const fs::path& path) {
    const std::string tok = next_token(in, path);
    try {
        std::size_t used = 0;
        const unsigned long v = std::stoul(tok, &used);
        if (used != tok.size()) throw std::invalid_argument(tok);
        return v;
    } catch (const std::exception&) {
        throw DataIoError("malformed number '" + tok + "' in " + path.string());
    }
}

int to_byte(double v) { return static_cast<int>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

}  // namespace

void write_ppm(const fs::path& path, const Image& image) {
    if (image.channels != 3) throw ShapeError("PPM needs a 3-channel image");
    auto out = open_out(path);
    out << "P3\n" << image.width << ' ' << image.height << "\n255\n";
    for (std::size_t y = 0; y < image.height; ++y) {
        for (std::size_t x = 0; x < image.width; ++x) {
            for (std::size_t c = 0; c < 3; ++c) out << to_byte(image.at(c, y, x)) << ' ';
        }
        out << '\n';
    }
}

Image read_ppm(const fs::path& path) {
    auto in = open_in(path);
    if (next_token(in, path) != "P3") throw DataIoError(path.string() + " is not a plain PPM (P3)");
    const std::size_t w = next_number(in, path), h = next_number(in, path), maxval = next_number(in, path);
    if (maxval == 0 || maxval > 65535) throw DataIoError("bad maxval in " + path.string());
    Image img(3, h, w);
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
            for (std::size_t c = 0; c < 3; ++c) {
                const std::size_t v = next_number(in, path);
                if (v > maxval) throw DataIoError("sample exceeds maxval in " + path.string());
                img.at(c, y, x) = static_cast<double>(v) / static_cast<double>(maxval);
            }
    return img;
}

void write_pgm(const fs::path& path, const Mask& mask) {
    auto out = open_out(path);
    out << "P2\n" << mask.width << ' ' << mask.height << "\n255\n";
    for (std::size_t y = 0; y < mask.height; ++y) {
        for (std::size_t x = 0; x < mask.width; ++x) out << (mask.at(y, x) ? 255 : 0) << ' ';
        out << '\n';
    }
}

Mask read_pgm(const fs::path& path) {
    auto in = open_in(path);
    if (next_token(in, path) != "P2") throw DataIoError(path.string() + " is not a plain PGM (P2)");
    const std::size_t w = next_number(in, path), h = next_number(in, path), maxval = next_number(in, path);
    if (maxval == 0) throw DataIoError("bad maxval in " + path.string());
    Mask m(h, w);
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
            const std::size_t v = next_number(in, path);
            if (v != 0 && v != maxval) throw DataIoError("mask " + path.string() + " is not binary");
            m.at(y, x) = v == maxval ? 1 : 0;
        }
    return m;
}

std::vector<ManifestEntry> read_manifest(const fs::path& path) {
    auto in = open_in(path);
    std::vector<ManifestEntry> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            const json j = json::parse(line);
            out.push_back({j.at("image_path").get<std::string>(), j.at("mask_path").get<std::string>(),
                           j.at("phrase").get<std::string>(), j.at("class_id").get<std::size_t>(),
                           j.at("split").get<std::string>()});
        } catch (const json::exception& e) {
            throw DataIoError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

void write_manifest(const fs::path& path, const std::vector<ManifestEntry>& entries) {
    auto out = open_out(path);
    for (const auto& e : entries) {
        json j = {{"image_path", e.image_path}, {"mask_path", e.mask_path}, {"phrase", e.phrase},
                  {"class_id", e.class_id}, {"split", e.split}};
        out << j.dump() << '\n';
    }
}

fs::path save_dataset(const Dataset& dataset, const fs::path& dir) {
    std::vector<ManifestEntry> entries;
    for (const auto* split : {&dataset.train, &dataset.val, &dataset.test}) {
        for (std::size_t i = 0; i < split->size(); ++i) {
            const auto& s = (*split)[i];
            const std::string stem = s.split + "_" + std::to_string(i);
            ManifestEntry e{"images/" + stem + ".ppm", "masks/" + stem + ".pgm", s.phrase, s.class_id, s.split};
            write_ppm(dir / e.image_path, s.image);
            write_pgm(dir / e.mask_path, s.mask);
            entries.push_back(std::move(e));
        }
    }
    const fs::path manifest = dir / "manifest.jsonl";
    write_manifest(manifest, entries);
    return manifest;
}

Dataset load_dataset(const fs::path& manifest) {
    const fs::path root = manifest.parent_path();
    Dataset ds;
    for (const auto& e : read_manifest(manifest)) {
        SegmentationSample s{read_ppm(root / e.image_path), read_pgm(root / e.mask_path), e.phrase, e.class_id, e.split};
        if (s.mask.height != s.image.height || s.mask.width != s.image.width)
            throw DataIoError("mask and image sizes differ for " + e.image_path);
        if (s.phrase.empty()) throw DataIoError("empty phrase for " + e.image_path);
        if (e.split == "train") ds.train.push_back(std::move(s));
        else if (e.split == "val") ds.val.push_back(std::move(s));
        else if (e.split == "test") ds.test.push_back(std::move(s));
        else throw DataIoError("unknown split '" + e.split + "' in " + manifest.string());
    }
    return ds;
}

SyntheticTaskSpec read_task_spec(const fs::path& path) {
    auto in = open_in(path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw DataIoError(path.string() + ": " + e.what());
    }
    SyntheticTaskSpec s;
    static const char* known[] = {"n_classes", "train_samples", "val_samples", "test_samples",
                                  "image_size", "seed", "min_extent", "max_extent"};
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (std::find(std::begin(known), std::end(known), it.key()) == std::end(known))
            throw ConfigError("unknown task spec key '" + it.key() + "'");
    }
    try {
        s.n_classes = j.value("n_classes", s.n_classes);
        s.train_samples = j.value("train_samples", s.train_samples);
        s.val_samples = j.value("val_samples", s.val_samples);
        s.test_samples = j.value("test_samples", s.test_samples);
        s.image_size = j.value("image_size", s.image_size);
        s.seed = j.value("seed", s.seed);
        s.min_extent = j.value("min_extent", s.min_extent);
        s.max_extent = j.value("max_extent", s.max_extent);
    } catch (const json::exception& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
    s.validate();
    return s;
}

}  // namespace ctxseg
