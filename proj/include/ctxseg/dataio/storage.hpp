#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "ctxseg/dataio/synthetic.hpp"

namespace ctxseg {

struct DataIoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Plain-text netpbm: P3 for images, P2 for masks, maxval 255.
void write_ppm(const std::filesystem::path& path, const Image& image);
Image read_ppm(const std::filesystem::path& path);
void write_pgm(const std::filesystem::path& path, const Mask& mask);
Mask read_pgm(const std::filesystem::path& path);

struct ManifestEntry {
    std::string image_path;  // relative to the manifest directory
    std::string mask_path;
    std::string phrase;
    std::size_t class_id = 0;
    std::string split;
};

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries);

// Writes images/, masks/ and manifest.jsonl under `dir`.
std::filesystem::path save_dataset(const Dataset& dataset, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& manifest);

SyntheticTaskSpec read_task_spec(const std::filesystem::path& path);

}  // namespace ctxseg
