#include "ramf/feature_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "ramf/errors.hpp"
#include "ramf/random.hpp"

namespace ramf {

namespace {

constexpr char kMagic[8] = {'R', 'A', 'M', 'F', 'F', 'E', 'A', 'T'};
constexpr uint32_t kFormatVersion = 1;

void write_u32(std::ostream& out, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

bool read_u32(std::istream& in, uint32_t& v) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4)) return false;
    v = static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
        (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
    return true;
}

void write_f32_le(std::ostream& out, const std::vector<float>& values) {
    // Matrices are written value-by-value through the u32 path so the file is
    // little-endian regardless of host order.
    for (float f : values) {
        uint32_t bits;
        std::memcpy(&bits, &f, 4);
        write_u32(out, bits);
    }
}

bool read_f32_le(std::istream& in, std::vector<float>& values) {
    for (float& f : values) {
        uint32_t bits;
        if (!read_u32(in, bits)) return false;
        std::memcpy(&f, &bits, 4);
    }
    return true;
}

}  // namespace

const char* modality_name_str(ModalityName name) {
    switch (name) {
        case ModalityName::text: return "text";
        case ModalityName::audio: return "audio";
        case ModalityName::video: return "video";
        case ModalityName::obj_desc: return "obj_desc";
        case ModalityName::hate_inf: return "hate_inf";
        case ModalityName::nonhate_inf: return "nonhate_inf";
    }
    return "unknown";
}

ModalityName modality_name_from_str(const std::string& s) {
    for (uint32_t i = 0; i < 6; ++i) {
        auto m = static_cast<ModalityName>(i);
        if (s == modality_name_str(m)) return m;
    }
    raise(ErrorKind::CorruptPayload, "unknown modality name '" + s + "'");
}

const ModalitySpec* DatasetManifest::spec_for(ModalityName name) const {
    for (const auto& spec : modality_specs) {
        if (spec.name == name) return &spec;
    }
    return nullptr;
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) raise(ErrorKind::IoError, "cannot open manifest " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        raise(ErrorKind::CorruptPayload, "manifest parse failure: " + std::string(e.what()));
    }
    DatasetManifest m;
    m.base_dir = path.parent_path();
    try {
        m.dataset_name = j.at("dataset_name").get<std::string>();
        m.format_version = j.at("format_version").get<int>();
        for (const auto& js : j.at("modality_specs")) {
            ModalitySpec spec;
            spec.name = modality_name_from_str(js.at("name").get<std::string>());
            spec.seq_len = js.at("seq_len").get<int>();
            spec.feat_dim = js.at("feat_dim").get<int>();
            spec.encoder_tag = js.value("encoder_tag", std::string());
            if (spec.seq_len <= 0 || spec.feat_dim <= 0) {
                raise(ErrorKind::CorruptPayload, "non-positive dims for modality " +
                                                     std::string(modality_name_str(spec.name)));
            }
            m.modality_specs.push_back(spec);
        }
        for (const auto& jr : j.at("records")) {
            ManifestRecord rec;
            rec.video_id = jr.at("video_id").get<std::string>();
            rec.path = jr.at("path").get<std::string>();
            rec.label = jr.at("label").get<int>();
            m.records.push_back(rec);
        }
    } catch (const nlohmann::json::exception& e) {
        raise(ErrorKind::CorruptPayload, "manifest field error: " + std::string(e.what()));
    }
    std::vector<std::string> ids;
    for (const auto& rec : m.records) ids.push_back(rec.video_id);
    std::sort(ids.begin(), ids.end());
    if (std::adjacent_find(ids.begin(), ids.end()) != ids.end()) {
        raise(ErrorKind::CorruptPayload, "duplicate video_id in manifest");
    }
    for (const auto& rec : m.records) {
        if (!std::filesystem::exists(m.base_dir / rec.path)) {
            raise(ErrorKind::MissingRecord, "referenced file missing: " + rec.path);
        }
    }
    return m;
}

void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path) {
    nlohmann::json j;
    j["dataset_name"] = manifest.dataset_name;
    j["format_version"] = manifest.format_version;
    j["modality_specs"] = nlohmann::json::array();
    for (const auto& spec : manifest.modality_specs) {
        j["modality_specs"].push_back({{"name", modality_name_str(spec.name)},
                                       {"seq_len", spec.seq_len},
                                       {"feat_dim", spec.feat_dim},
                                       {"encoder_tag", spec.encoder_tag}});
    }
    j["records"] = nlohmann::json::array();
    for (const auto& rec : manifest.records) {
        j["records"].push_back(
            {{"video_id", rec.video_id}, {"path", rec.path}, {"label", rec.label}});
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) raise(ErrorKind::IoError, "cannot write manifest " + path.string());
    out << j.dump(2) << "\n";
}

void save_bundle(const FeatureBundle& bundle, const std::vector<ModalitySpec>& specs,
                 const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) raise(ErrorKind::IoError, "cannot write bundle " + path.string());
    out.write(kMagic, 8);
    write_u32(out, kFormatVersion);
    for (const auto& spec : specs) {
        auto it = bundle.features.find(spec.name);
        if (it == bundle.features.end()) {
            raise(ErrorKind::MissingModality, std::string("bundle lacks modality ") +
                                                  modality_name_str(spec.name));
        }
        const FeatureMatrix& mat = it->second;
        if (mat.rows != spec.seq_len || mat.cols != spec.feat_dim) {
            raise(ErrorKind::ShapeMismatch,
                  std::string(modality_name_str(spec.name)) + ": expected [" +
                      std::to_string(spec.seq_len) + ", " + std::to_string(spec.feat_dim) +
                      "], found [" + std::to_string(mat.rows) + ", " + std::to_string(mat.cols) + "]");
        }
        write_u32(out, static_cast<uint32_t>(spec.name));
        write_u32(out, static_cast<uint32_t>(spec.seq_len));
        write_u32(out, static_cast<uint32_t>(spec.feat_dim));
        write_f32_le(out, mat.data);
    }
    unsigned char label = static_cast<unsigned char>(bundle.label);
    out.write(reinterpret_cast<const char*>(&label), 1);
    if (!out) raise(ErrorKind::IoError, "short write on " + path.string());
}

FeatureBundle load_bundle(const DatasetManifest& manifest, const std::string& video_id) {
    const ManifestRecord* record = nullptr;
    for (const auto& rec : manifest.records) {
        if (rec.video_id == video_id) {
            record = &rec;
            break;
        }
    }
    if (!record) raise(ErrorKind::MissingRecord, "video_id '" + video_id + "' not in manifest");

    const auto path = manifest.base_dir / record->path;
    std::ifstream in(path, std::ios::binary);
    if (!in) raise(ErrorKind::IoError, "cannot open bundle " + path.string());

    char magic[8];
    if (!in.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0) {
        raise(ErrorKind::CorruptPayload, "bad magic in " + path.string());
    }
    uint32_t version;
    if (!read_u32(in, version) || version != kFormatVersion) {
        raise(ErrorKind::CorruptPayload, "unsupported bundle version in " + path.string());
    }

    FeatureBundle bundle;
    bundle.video_id = video_id;
    for (const auto& spec : manifest.modality_specs) {
        uint32_t tag, rows, cols;
        if (!read_u32(in, tag) || !read_u32(in, rows) || !read_u32(in, cols)) {
            raise(ErrorKind::CorruptPayload, "truncated modality header in " + path.string());
        }
        if (tag != static_cast<uint32_t>(spec.name)) {
            raise(ErrorKind::CorruptPayload,
                  "modality tag " + std::to_string(tag) + " where " +
                      modality_name_str(spec.name) + " was expected in " + path.string());
        }
        if (rows != static_cast<uint32_t>(spec.seq_len) ||
            cols != static_cast<uint32_t>(spec.feat_dim)) {
            raise(ErrorKind::ShapeMismatch,
                  std::string(modality_name_str(spec.name)) + ": expected [" +
                      std::to_string(spec.seq_len) + ", " + std::to_string(spec.feat_dim) +
                      "], found [" + std::to_string(rows) + ", " + std::to_string(cols) + "]");
        }
        FeatureMatrix mat;
        mat.rows = static_cast<int>(rows);
        mat.cols = static_cast<int>(cols);
        mat.data.resize(static_cast<size_t>(rows) * cols);
        if (!read_f32_le(in, mat.data)) {
            raise(ErrorKind::CorruptPayload, "payload shorter than header claims in " + path.string());
        }
        for (float v : mat.data) {
            if (!std::isfinite(v)) {
                raise(ErrorKind::NonFiniteValue, std::string("non-finite value in modality ") +
                                                     modality_name_str(spec.name));
            }
        }
        bundle.features[spec.name] = std::move(mat);
    }
    unsigned char label;
    if (!in.read(reinterpret_cast<char*>(&label), 1)) {
        raise(ErrorKind::CorruptPayload, "missing label byte in " + path.string());
    }
    if (label > 1) {
        raise(ErrorKind::CorruptPayload, "label byte " + std::to_string(int(label)) + " not in {0,1}");
    }
    if (in.peek() != std::char_traits<char>::eof()) {
        raise(ErrorKind::CorruptPayload, "trailing bytes after label in " + path.string());
    }
    bundle.label = label;
    return bundle;
}

FeatureMatrix fit_length(const FeatureMatrix& seq, int target_len, FitMode mode) {
    if (target_len <= 0) {
        raise(ErrorKind::InvalidTarget, "target length " + std::to_string(target_len));
    }
    if (seq.rows < 1) raise(ErrorKind::ShapeMismatch, "fit_length needs at least one row");
    if (seq.rows == target_len) return seq;

    FeatureMatrix out;
    out.rows = target_len;
    out.cols = seq.cols;
    out.data.assign(static_cast<size_t>(target_len) * seq.cols, 0.0f);

    if (seq.rows > target_len && mode == FitMode::stride_downsample) {
        for (int i = 0; i < target_len; ++i) {
            int64_t src = static_cast<int64_t>(
                std::llround(static_cast<double>(i) * seq.rows / target_len));
            src = std::min<int64_t>(src, seq.rows - 1);
            std::copy(seq.data.begin() + src * seq.cols, seq.data.begin() + (src + 1) * seq.cols,
                      out.data.begin() + static_cast<size_t>(i) * seq.cols);
        }
        return out;
    }
    // zero_pad_or_truncate, and the pad branch of stride_downsample: keep the
    // head, pad the tail with zero rows.
    const int copy_rows = std::min(seq.rows, target_len);
    std::copy(seq.data.begin(), seq.data.begin() + static_cast<size_t>(copy_rows) * seq.cols,
              out.data.begin());
    return out;
}

std::vector<uint8_t> fit_length_pad_mask(int source_len, int target_len) {
    std::vector<uint8_t> mask(static_cast<size_t>(target_len), 0);
    for (int i = source_len; i < target_len; ++i) mask[static_cast<size_t>(i)] = 1;
    return mask;
}

namespace {

std::vector<float> unit_direction(int dim, Xoshiro256ss& rng) {
    std::vector<double> v(static_cast<size_t>(dim));
    double norm = 0.0;
    for (double& x : v) {
        x = rng.gaussian();
        norm += x * x;
    }
    norm = std::sqrt(norm);
    std::vector<float> out(static_cast<size_t>(dim));
    for (int i = 0; i < dim; ++i) out[i] = static_cast<float>(v[i] / norm);
    return out;
}

}  // namespace

DatasetManifest generate_synthetic(const SyntheticOptions& options,
                                   const std::filesystem::path& out_dir) {
    if (options.n < 2) {
        raise(ErrorKind::TooFewSamples, "need at least 2 bundles, got " + std::to_string(options.n));
    }
    if (options.signal_strength < 0.0) {
        raise(ErrorKind::InvalidArgument, "signal_strength must be nonnegative");
    }
    if (options.specs.empty()) raise(ErrorKind::InvalidArgument, "empty modality spec set");

    std::filesystem::create_directories(out_dir / "bundles");

    // One shared direction per modality, drawn from a dedicated stream.
    std::map<ModalityName, std::vector<float>> directions;
    {
        Xoshiro256ss dir_rng(mix_seed(options.seed, 0x64697273ULL));  // "dirs"
        for (const auto& spec : options.specs) {
            directions[spec.name] = unit_direction(spec.feat_dim, dir_rng);
        }
    }

    DatasetManifest manifest;
    manifest.dataset_name = options.dataset_name;
    manifest.format_version = 1;
    manifest.modality_specs = options.specs;
    manifest.base_dir = out_dir;

    char name_buf[32];
    for (int i = 0; i < options.n; ++i) {
        std::snprintf(name_buf, sizeof(name_buf), "synth_%06d", i);
        FeatureBundle bundle;
        bundle.video_id = name_buf;
        bundle.label = i % 2;  // interleave for an even class balance

        // Per-record stream: generation is order-independent and parallelizable.
        Xoshiro256ss rng(mix_seed(options.seed, 0x100000ULL + static_cast<uint64_t>(i)));
        for (const auto& spec : options.specs) {
            FeatureMatrix mat;
            mat.rows = spec.seq_len;
            mat.cols = spec.feat_dim;
            mat.data.resize(static_cast<size_t>(spec.seq_len) * spec.feat_dim);
            for (float& v : mat.data) v = static_cast<float>(rng.gaussian());
            bundle.features[spec.name] = std::move(mat);
        }

        const double s = options.signal_strength;
        if (bundle.label == 1) {
            for (ModalityName m : {ModalityName::text, ModalityName::audio, ModalityName::video}) {
                auto it = bundle.features.find(m);
                if (it == bundle.features.end()) continue;
                FeatureMatrix& mat = it->second;
                const int window = std::max(1, static_cast<int>(std::ceil(0.1 * mat.rows)));
                const int start = static_cast<int>(rng.bounded(static_cast<uint64_t>(
                    mat.rows - window + 1)));
                const auto& u = directions[m];
                for (int t = start; t < start + window; ++t) {
                    for (int c = 0; c < mat.cols; ++c) {
                        mat.at(t, c) += static_cast<float>(s * u[static_cast<size_t>(c)]);
                    }
                }
            }
            auto it = bundle.features.find(ModalityName::hate_inf);
            if (it != bundle.features.end()) {
                const auto& u = directions[ModalityName::hate_inf];
                for (int t = 0; t < it->second.rows; ++t) {
                    for (int c = 0; c < it->second.cols; ++c) {
                        it->second.at(t, c) += static_cast<float>(s * u[static_cast<size_t>(c)]);
                    }
                }
            }
        } else {
            auto it = bundle.features.find(ModalityName::nonhate_inf);
            if (it != bundle.features.end()) {
                const auto& u = directions[ModalityName::nonhate_inf];
                for (int t = 0; t < it->second.rows; ++t) {
                    for (int c = 0; c < it->second.cols; ++c) {
                        it->second.at(t, c) += static_cast<float>(s * u[static_cast<size_t>(c)]);
                    }
                }
            }
        }

        const std::string rel = std::string("bundles/") + name_buf + ".ramf";
        save_bundle(bundle, options.specs, out_dir / rel);
        manifest.records.push_back({bundle.video_id, rel, bundle.label});
    }

    save_manifest(manifest, out_dir / "manifest.json");
    return manifest;
}

std::vector<ModalitySpec> paper_spec_set() {
    return {
        {ModalityName::text, 100, 768, "bert"},
        {ModalityName::audio, 100, 40, "mfcc"},
        {ModalityName::video, 100, 768, "vit"},
        {ModalityName::obj_desc, 100, 768, "bert"},
        {ModalityName::hate_inf, 100, 768, "bert"},
        {ModalityName::nonhate_inf, 100, 768, "bert"},
    };
}

std::vector<ModalitySpec> desk_spec_set() {
    return {
        {ModalityName::text, 100, 48, "synthetic"},
        {ModalityName::audio, 100, 32, "synthetic"},
        {ModalityName::video, 100, 48, "synthetic"},
        {ModalityName::obj_desc, 100, 48, "synthetic"},
        {ModalityName::hate_inf, 100, 48, "synthetic"},
        {ModalityName::nonhate_inf, 100, 48, "synthetic"},
    };
}

}  // namespace ramf
