#pragma once

// Feature containers, manifests and dataset loading.
//
// Feature container (little-endian, packed, 15-byte header):
//   offset 0  char[4]  magic "MMFC"
//   offset 4  u16      version = 1
//   offset 6  u8       modality (0 video, 1 audio, 2 text)
//   offset 7  u32      length (rows)
//   offset 11 u32      dim (cols)
//   offset 15 f32[length*dim] row-major payload
//
// Manifest: JSON, see docs in README.md. Paths are relative to the
// manifest's directory unless absolute.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mmreg/ensemble.hpp"
#include "mmreg/mscmlp.hpp"
#include "mmreg/pooling.hpp"

namespace mmreg {

inline constexpr Index kResponsesPerSubject = 6;
inline constexpr std::uint16_t kContainerVersion = 1;
inline constexpr std::size_t kContainerHeaderBytes = 15;

enum class Split : std::uint8_t { train, val, test };

std::string_view to_string(Split s);
Split parse_split(std::string_view s);

// --- containers ------------------------------------------------------------

void write_container(const std::filesystem::path& path, Modality modality, const Matrix<float>& data);
void write_container(const std::filesystem::path& path, const FeatureSequence<double>& seq);

/// Promotes the fp32 payload to double. Throws ParseError on bad magic,
/// version, modality, truncation or non-finite values.
FeatureSequence<double> read_container(const std::filesystem::path& path);

/// Same, additionally checking modality and dim against a manifest declaration.
FeatureSequence<double> read_container(const std::filesystem::path& path, Modality expected, Index expected_dim);

// --- manifest --------------------------------------------------------------

struct ManifestResponse {
    int question_index = 0;
    std::string video_path;
    std::string audio_path;
    std::string text_path;
    std::vector<std::string> warnings;
};

struct ManifestSubject {
    std::string subject_id;
    Split split = Split::train;
    std::vector<ManifestResponse> responses;
    std::optional<ScoreVector> labels;
};

struct Manifest {
    ModalityDims dims;
    std::vector<ManifestSubject> subjects;
    nlohmann::json metadata = nlohmann::json::object();  // free-form, e.g. synthetic oracle info
};

Manifest parse_manifest(const nlohmann::json& doc);
nlohmann::json manifest_to_json(const Manifest& m);
Manifest read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const Manifest& m);

// --- dataset ---------------------------------------------------------------

struct ResponseRecord {
    int question_index = 0;
    FeatureSequence<double> video;
    FeatureSequence<double> audio;
    FeatureSequence<double> text;
};

/// Responses are stored sorted by question index.
struct SubjectRecord {
    std::string subject_id;
    Split split = Split::train;
    std::vector<ResponseRecord> responses;
    std::optional<ScoreVector> label;
};

struct Dataset {
    ModalityDims dims;
    std::vector<SubjectRecord> train;
    std::vector<SubjectRecord> val;
    std::vector<SubjectRecord> test;
    std::vector<std::string> warnings;
    nlohmann::json metadata = nlohmann::json::object();

    const std::vector<SubjectRecord>& split(Split s) const;
};

Dataset load_dataset(const std::filesystem::path& manifest_path);

/// Pools every response of a record. Sorts responses by question index first.
MscmlpInput<double> pool_subject(const SubjectRecord& record, const PoolingConfig& cfg, const ModalityDims& dims);

// --- synthetic data --------------------------------------------------------

/// Planted-model generator. Per response a latent z ~ N(0, I_q) is embedded in
/// each modality (frames = z A_m + frame_noise), and labels are
///   clamp(bias + (1/R) sum_k sum_m pool(f_{m,k}) W_m + noise * eps, 1, 5)
/// so with noise 0 an affine map of the pooled features reproduces them.
struct SynthSpec {
    std::size_t n_subjects = 64;
    std::uint64_t seed = 0;
    double noise = 0.3;
    ModalityDims dims;
    Index min_length = 4;
    Index max_length = 12;
    Index latent_dim = 4;
    double frame_noise = 0.1;
    double label_spread = 0.6;  // std of the noiseless label per dimension
    PoolingConfig planted_pooling;
    std::array<double, 3> split_weights = {450.0, 64.0, 130.0};
};

struct SynthResult {
    std::filesystem::path manifest_path;
    std::size_t train = 0;
    std::size_t val = 0;
    std::size_t test = 0;
    double oracle_floor = 0.0;
};

/// Split sizes proportional to `weights`, largest remainders first.
std::array<std::size_t, 3> split_counts(std::size_t n, const std::array<double, 3>& weights);

SynthResult gen_synthetic(const SynthSpec& spec, const std::filesystem::path& out_dir);

}  // namespace mmreg
