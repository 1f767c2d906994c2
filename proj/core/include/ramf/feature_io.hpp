#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace ramf {

enum class ModalityName : uint32_t {
    text = 0,
    audio = 1,
    video = 2,
    obj_desc = 3,
    hate_inf = 4,
    nonhate_inf = 5,
};

const char* modality_name_str(ModalityName name);
ModalityName modality_name_from_str(const std::string& s);

struct ModalitySpec {
    ModalityName name;
    int seq_len = 0;
    int feat_dim = 0;
    std::string encoder_tag;  // provenance only
};

// Row-major float32 matrix; float is the on-disk and in-memory feature type
// so save/load round-trips are bit-exact.
struct FeatureMatrix {
    int rows = 0;
    int cols = 0;
    std::vector<float> data;

    float& at(int r, int c) { return data[static_cast<size_t>(r) * cols + c]; }
    float at(int r, int c) const { return data[static_cast<size_t>(r) * cols + c]; }
};

struct FeatureBundle {
    std::string video_id;
    std::map<ModalityName, FeatureMatrix> features;
    int label = 0;  // 1 = hate
    // Padded-step markers, provenance only; downstream pooling ignores them.
    std::map<ModalityName, std::vector<uint8_t>> masks;

    bool has(ModalityName m) const { return features.count(m) != 0; }
};

struct ManifestRecord {
    std::string video_id;
    std::string path;  // relative to the manifest's directory
    int label = 0;
};

struct DatasetManifest {
    std::string dataset_name;
    int format_version = 1;
    std::vector<ModalitySpec> modality_specs;
    std::vector<ManifestRecord> records;
    std::filesystem::path base_dir;  // directory the manifest was loaded from

    const ModalitySpec* spec_for(ModalityName name) const;
};

// JSON manifest I/O. Loading validates id uniqueness and file existence.
DatasetManifest load_manifest(const std::filesystem::path& path);
void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);

// Binary bundle format: magic "RAMFFEAT", u32 LE version, then per modality
// (in manifest spec order) u32 name tag, u32 seq_len, u32 feat_dim and
// seq_len*feat_dim little-endian float32 values row-major; trailing u8 label.
FeatureBundle load_bundle(const DatasetManifest& manifest, const std::string& video_id);
void save_bundle(const FeatureBundle& bundle, const std::vector<ModalitySpec>& specs,
                 const std::filesystem::path& path);

enum class FitMode {
    zero_pad_or_truncate,
    stride_downsample,
};

// Fits a [L', D] sequence to target length L. Truncation keeps the head.
// stride_downsample picks rows round(i*L'/L) when L' > L, else zero-pads.
FeatureMatrix fit_length(const FeatureMatrix& seq, int target_len, FitMode mode);
// Mask marking the rows of fit_length output that are zero padding.
std::vector<uint8_t> fit_length_pad_mask(int source_len, int target_len);

struct SyntheticOptions {
    int n = 0;
    double signal_strength = 0.0;
    uint64_t seed = 0;
    std::vector<ModalitySpec> specs;
    std::string dataset_name = "synthetic";
};

// Emits n bundles (~50% label 1) of i.i.d. standard normal features with a
// planted class signal: for label-1 bundles a fixed unit direction u_m scaled
// by signal_strength is added on a contiguous window of 10% of the time steps
// of text/audio/video and on every hate_inf row; label-0 bundles get the same
// shift on nonhate_inf rows only. Fully deterministic given the seed.
DatasetManifest generate_synthetic(const SyntheticOptions& options,
                                   const std::filesystem::path& out_dir);

// Paper-faithful dimensions (BERT text, MFCC audio, ViT video, 100 steps).
std::vector<ModalitySpec> paper_spec_set();
// Small dimensions for fast end-to-end runs; sequence length stays 100 so the
// planted window/mean signals behave like the full-size setup.
std::vector<ModalitySpec> desk_spec_set();

}  // namespace ramf
