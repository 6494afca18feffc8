#include "mmreg/dataio.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>
#include <set>

#include <Eigen/Cholesky>

namespace mmreg {

namespace fs = std::filesystem;
using nlohmann::json;

std::string_view to_string(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::val: return "val";
        case Split::test: return "test";
    }
    return "?";
}

Split parse_split(std::string_view s) {
    if (s == "train") return Split::train;
    if (s == "val") return Split::val;
    if (s == "test") return Split::test;
    throw DataError("unknown split '" + std::string(s) + "' (expected train, val or test)");
}

const std::vector<SubjectRecord>& Dataset::split(Split s) const {
    switch (s) {
        case Split::train: return train;
        case Split::val: return val;
        case Split::test: return test;
    }
    return train;
}

// ---------------------------------------------------------------------------
// Containers
// ---------------------------------------------------------------------------

namespace {

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
    out.push_back(static_cast<std::uint8_t>(v & 0xff));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

std::uint16_t get_u16(const std::uint8_t* p) { return static_cast<std::uint16_t>(p[0] | (p[1] << 8)); }

std::uint32_t get_u32(const std::uint8_t* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::vector<std::uint8_t> read_bytes(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const fs::path& path, const std::vector<std::uint8_t>& bytes) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("write failed for " + path.string());
}

}  // namespace

void write_container(const fs::path& path, Modality modality, const Matrix<float>& data) {
    if (data.rows() < 1 || data.cols() < 1)
        throw DataError("write_container: refusing to write empty " + std::string(to_string(modality)) +
                        " sequence " + shape_str(data));
    require_finite(data, "write_container " + path.string());
    std::vector<std::uint8_t> bytes;
    bytes.reserve(kContainerHeaderBytes + 4 * static_cast<std::size_t>(data.size()));
    bytes.insert(bytes.end(), {'M', 'M', 'F', 'C'});
    put_u16(bytes, kContainerVersion);
    bytes.push_back(static_cast<std::uint8_t>(modality));
    put_u32(bytes, static_cast<std::uint32_t>(data.rows()));
    put_u32(bytes, static_cast<std::uint32_t>(data.cols()));
    for (Index i = 0; i < data.size(); ++i) put_u32(bytes, std::bit_cast<std::uint32_t>(data.data()[i]));
    write_bytes(path, bytes);
}

void write_container(const fs::path& path, const FeatureSequence<double>& seq) {
    write_container(path, seq.modality, seq.data.cast<float>().eval());
}

FeatureSequence<double> read_container(const fs::path& path) {
    const auto bytes = read_bytes(path);
    const std::string p = path.string();
    if (bytes.size() < kContainerHeaderBytes)
        throw ParseError(p, bytes.size(),
                         "truncated header: expected " + std::to_string(kContainerHeaderBytes) + " bytes, found " +
                             std::to_string(bytes.size()));
    if (!(bytes[0] == 'M' && bytes[1] == 'M' && bytes[2] == 'F' && bytes[3] == 'C'))
        throw ParseError(p, 0, "bad magic (expected \"MMFC\")");
    const std::uint16_t version = get_u16(&bytes[4]);
    if (version != kContainerVersion)
        throw ParseError(p, 4, "unsupported version " + std::to_string(version) + " (expected " +
                                   std::to_string(kContainerVersion) + ")");
    const std::uint8_t modality = bytes[6];
    if (modality > 2) throw ParseError(p, 6, "unknown modality code " + std::to_string(modality));
    const std::uint32_t length = get_u32(&bytes[7]);
    const std::uint32_t dim = get_u32(&bytes[11]);
    if (length == 0 || dim == 0)
        throw ParseError(p, 7, "empty sequence (length " + std::to_string(length) + ", dim " + std::to_string(dim) + ")");
    const std::uint64_t expected = kContainerHeaderBytes + 4ULL * length * dim;
    if (bytes.size() != expected)
        throw ParseError(p, std::min<std::uint64_t>(bytes.size(), expected),
                         "payload size mismatch: expected " + std::to_string(expected) + " bytes, found " +
                             std::to_string(bytes.size()));

    FeatureSequence<double> seq;
    seq.modality = static_cast<Modality>(modality);
    seq.data.resize(length, dim);
    const std::uint8_t* payload = bytes.data() + kContainerHeaderBytes;
    for (std::uint64_t i = 0; i < std::uint64_t{length} * dim; ++i) {
        const float v = std::bit_cast<float>(get_u32(payload + 4 * i));
        if (!std::isfinite(v)) throw ParseError(p, kContainerHeaderBytes + 4 * i, "non-finite value");
        seq.data.data()[i] = static_cast<double>(v);
    }
    return seq;
}

FeatureSequence<double> read_container(const fs::path& path, Modality expected, Index expected_dim) {
    auto seq = read_container(path);
    if (seq.modality != expected)
        throw DataError(path.string() + ": container holds " + std::string(to_string(seq.modality)) +
                        " features, manifest expects " + std::string(to_string(expected)));
    if (seq.dim() != expected_dim)
        throw DataError(path.string() + ": container dim " + std::to_string(seq.dim()) +
                        " does not match manifest " + std::string(to_string(expected)) + " dim " +
                        std::to_string(expected_dim));
    return seq;
}

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

namespace {

template <typename T>
T require(const json& obj, const char* key, const std::string& where) {
    if (!obj.is_object() || !obj.contains(key)) throw DataError(where + ": missing field '" + key + "'");
    try {
        return obj.at(key).get<T>();
    } catch (const json::exception& e) {
        throw DataError(where + ": field '" + key + "' has the wrong type (" + e.what() + ")");
    }
}

}  // namespace

Manifest parse_manifest(const json& doc) {
    Manifest m;
    if (!doc.is_object()) throw DataError("manifest: top level must be an object");
    if (doc.contains("format") && doc["format"] != "mmreg-manifest")
        throw DataError("manifest: unexpected format tag " + doc["format"].dump());
    if (doc.contains("version") && doc["version"] != 1)
        throw DataError("manifest: unsupported version " + doc["version"].dump());
    const json dims = require<json>(doc, "dims", "manifest");
    m.dims.video = require<Index>(dims, "video", "manifest.dims");
    m.dims.audio = require<Index>(dims, "audio", "manifest.dims");
    m.dims.text = require<Index>(dims, "text", "manifest.dims");
    if (m.dims.video < 1 || m.dims.audio < 1 || m.dims.text < 1) throw DataError("manifest: dims must be positive");
    if (doc.contains("metadata")) m.metadata = doc["metadata"];

    std::set<std::string> seen_ids;
    for (const auto& s : require<json>(doc, "subjects", "manifest")) {
        ManifestSubject sub;
        sub.subject_id = require<std::string>(s, "subject_id", "manifest subject");
        const std::string where = "subject " + sub.subject_id;
        if (!seen_ids.insert(sub.subject_id).second) throw DataError(where + ": duplicate subject_id");
        sub.split = parse_split(require<std::string>(s, "split", where));

        const json responses = require<json>(s, "responses", where);
        if (!responses.is_array() || static_cast<Index>(responses.size()) != kResponsesPerSubject)
            throw DataError(where + ": expected " + std::to_string(kResponsesPerSubject) + " responses, found " +
                            std::to_string(responses.is_array() ? responses.size() : 0));
        std::set<int> questions;
        for (const auto& r : responses) {
            ManifestResponse resp;
            resp.question_index = require<int>(r, "question_index", where);
            if (resp.question_index < 1 || resp.question_index > kResponsesPerSubject)
                throw DataError(where + ": question_index " + std::to_string(resp.question_index) + " outside 1..6");
            if (!questions.insert(resp.question_index).second)
                throw DataError(where + ": question_index " + std::to_string(resp.question_index) + " repeated");
            resp.video_path = require<std::string>(r, "video_path", where);
            resp.audio_path = require<std::string>(r, "audio_path", where);
            resp.text_path = require<std::string>(r, "text_path", where);
            if (r.contains("warnings")) resp.warnings = r["warnings"].get<std::vector<std::string>>();
            sub.responses.push_back(std::move(resp));
        }
        std::sort(sub.responses.begin(), sub.responses.end(),
                  [](const ManifestResponse& a, const ManifestResponse& b) { return a.question_index < b.question_index; });

        if (s.contains("labels") && !s["labels"].is_null()) {
            const auto values = s["labels"].get<std::vector<double>>();
            if (static_cast<Index>(values.size()) != kScoreDims)
                throw DataError(where + ": expected 5 labels, found " + std::to_string(values.size()));
            ScoreVector label;
            for (Index d = 0; d < kScoreDims; ++d) {
                const double v = values[static_cast<std::size_t>(d)];
                if (!(v >= kScoreMin && v <= kScoreMax))
                    throw DataError(where + ": label " + std::string(kScoreNames[static_cast<std::size_t>(d)]) + " = " +
                                    std::to_string(v) + " outside [1, 5]");
                label(d) = v;
            }
            sub.labels = label;
        } else if (sub.split != Split::test) {
            throw DataError(where + ": labels are required for the " + std::string(to_string(sub.split)) + " split");
        }
        m.subjects.push_back(std::move(sub));
    }
    return m;
}

json manifest_to_json(const Manifest& m) {
    json doc;
    doc["format"] = "mmreg-manifest";
    doc["version"] = 1;
    doc["dims"] = {{"video", m.dims.video}, {"audio", m.dims.audio}, {"text", m.dims.text}};
    json subjects = json::array();
    for (const auto& s : m.subjects) {
        json js;
        js["subject_id"] = s.subject_id;
        js["split"] = std::string(to_string(s.split));
        json responses = json::array();
        for (const auto& r : s.responses) {
            json jr = {{"question_index", r.question_index},
                       {"video_path", r.video_path},
                       {"audio_path", r.audio_path},
                       {"text_path", r.text_path}};
            if (!r.warnings.empty()) jr["warnings"] = r.warnings;
            responses.push_back(std::move(jr));
        }
        js["responses"] = std::move(responses);
        if (s.labels) js["labels"] = std::vector<double>(s.labels->data(), s.labels->data() + kScoreDims);
        subjects.push_back(std::move(js));
    }
    doc["subjects"] = std::move(subjects);
    if (!m.metadata.empty()) doc["metadata"] = m.metadata;
    return doc;
}

Manifest read_manifest(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open manifest " + path.string());
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::parse_error& e) {
        throw DataError("manifest " + path.string() + " is not valid JSON: " + e.what());
    }
    return parse_manifest(doc);
}

void write_manifest(const fs::path& path, const Manifest& m) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot write manifest " + path.string());
    out << manifest_to_json(m).dump(1) << '\n';
}

// ---------------------------------------------------------------------------
// Dataset
// ---------------------------------------------------------------------------

Dataset load_dataset(const fs::path& manifest_path) {
    const Manifest manifest = read_manifest(manifest_path);
    const fs::path base = manifest_path.parent_path();
    auto resolve = [&](const std::string& p) {
        const fs::path fp(p);
        return fp.is_absolute() ? fp : base / fp;
    };

    Dataset ds;
    ds.dims = manifest.dims;
    ds.metadata = manifest.metadata;
    for (const auto& s : manifest.subjects) {
        SubjectRecord rec;
        rec.subject_id = s.subject_id;
        rec.split = s.split;
        rec.label = s.labels;
        for (const auto& r : s.responses) {
            ResponseRecord rr;
            rr.question_index = r.question_index;
            rr.video = read_container(resolve(r.video_path), Modality::video, ds.dims.video);
            rr.audio = read_container(resolve(r.audio_path), Modality::audio, ds.dims.audio);
            rr.text = read_container(resolve(r.text_path), Modality::text, ds.dims.text);
            if (rr.text.length() != 1)
                throw DataError(r.text_path + ": text container must hold exactly one vector, found " +
                                std::to_string(rr.text.length()));
            for (const auto& w : r.warnings)
                ds.warnings.push_back(s.subject_id + " q" + std::to_string(r.question_index) + ": " + w);
            rec.responses.push_back(std::move(rr));
        }
        switch (rec.split) {
            case Split::train: ds.train.push_back(std::move(rec)); break;
            case Split::val: ds.val.push_back(std::move(rec)); break;
            case Split::test: ds.test.push_back(std::move(rec)); break;
        }
    }
    return ds;
}

MscmlpInput<double> pool_subject(const SubjectRecord& record, const PoolingConfig& cfg, const ModalityDims& dims) {
    if (static_cast<Index>(record.responses.size()) != kResponsesPerSubject) {
        std::string missing;
        for (int q = 1; q <= kResponsesPerSubject; ++q) {
            const bool present = std::any_of(record.responses.begin(), record.responses.end(),
                                             [q](const ResponseRecord& r) { return r.question_index == q; });
            if (!present) missing += (missing.empty() ? "" : ",") + std::to_string(q);
        }
        throw DataError("subject " + record.subject_id + ": has " + std::to_string(record.responses.size()) +
                        " responses, expected " + std::to_string(kResponsesPerSubject) +
                        (missing.empty() ? std::string() : " (missing questions " + missing + ")"));
    }
    std::vector<const ResponseRecord*> ordered;
    for (const auto& r : record.responses) ordered.push_back(&r);
    std::sort(ordered.begin(), ordered.end(),
              [](const ResponseRecord* a, const ResponseRecord* b) { return a->question_index < b->question_index; });

    MscmlpInput<double> in;
    in.audio.resize(kResponsesPerSubject, dims.audio);
    in.video.resize(kResponsesPerSubject, dims.video);
    in.text.resize(kResponsesPerSubject, dims.text);
    for (Index k = 0; k < kResponsesPerSubject; ++k) {
        const auto& r = *ordered[static_cast<std::size_t>(k)];
        const auto pooled = pool_response(r.video, r.audio, r.text, cfg, dims,
                                          record.subject_id + " q" + std::to_string(r.question_index));
        in.audio.row(k) = pooled.audio;
        in.video.row(k) = pooled.video;
        in.text.row(k) = pooled.text;
    }
    return in;
}

// ---------------------------------------------------------------------------
// Synthetic generator
// ---------------------------------------------------------------------------

std::array<std::size_t, 3> split_counts(std::size_t n, const std::array<double, 3>& weights) {
    const double total = weights[0] + weights[1] + weights[2];
    if (!(total > 0.0)) throw ConfigError("split weights must sum to a positive value");
    std::array<std::size_t, 3> counts{};
    std::array<double, 3> remainder{};
    std::size_t assigned = 0;
    for (std::size_t i = 0; i < 3; ++i) {
        const double exact = static_cast<double>(n) * weights[i] / total;
        counts[i] = static_cast<std::size_t>(std::floor(exact));
        remainder[i] = exact - std::floor(exact);
        assigned += counts[i];
    }
    std::array<std::size_t, 3> order = {0, 1, 2};
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return remainder[a] > remainder[b]; });
    for (std::size_t i = 0; assigned < n; ++i, ++assigned) ++counts[order[i % 3]];
    // Small datasets still get one train and one validation subject.
    if (n >= 2) {
        for (std::size_t need : {std::size_t{0}, std::size_t{1}}) {
            if (counts[need] == 0) {
                const std::size_t donor = counts[2] > 0 ? 2 : (need == 0 ? 1 : 0);
                --counts[donor];
                ++counts[need];
            }
        }
    }
    return counts;
}

namespace {

MatrixD gaussian(Index rows, Index cols, double stddev, Rng& rng) {
    MatrixD m(rows, cols);
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = stddev * rng.normal();
    return m;
}

// Right pseudo-inverse of a full-row-rank q x d matrix: A^T (A A^T)^{-1}.
MatrixD right_pinv(const MatrixD& a) {
    const Eigen::MatrixXd gram = a * a.transpose();
    const Eigen::MatrixXd inv = gram.ldlt().solve(Eigen::MatrixXd::Identity(a.rows(), a.rows()));
    return a.transpose() * inv;
}

json matrix_to_json(const MatrixD& m) {
    json rows = json::array();
    for (Index r = 0; r < m.rows(); ++r) rows.push_back(std::vector<double>(m.row(r).data(), m.row(r).data() + m.cols()));
    return rows;
}

}  // namespace

SynthResult gen_synthetic(const SynthSpec& spec, const fs::path& out_dir) {
    if (spec.n_subjects < 1) throw ConfigError("gen_synthetic: need at least one subject");
    if (spec.min_length < 1 || spec.max_length < spec.min_length)
        throw ConfigError("gen_synthetic: invalid sequence length range [" + std::to_string(spec.min_length) + ", " +
                          std::to_string(spec.max_length) + "]");
    if (spec.latent_dim < 1 || spec.noise < 0.0 || spec.frame_noise < 0.0)
        throw ConfigError("gen_synthetic: latent_dim must be >= 1 and noise levels >= 0");
    for (Modality m : kModalities)
        if (spec.dims[m] < spec.latent_dim)
            throw ConfigError("gen_synthetic: " + std::string(to_string(m)) + " dim " + std::to_string(spec.dims[m]) +
                              " is smaller than latent_dim " + std::to_string(spec.latent_dim));

    std::error_code ec;
    fs::create_directories(out_dir / "features", ec);
    if (ec) throw DataError("cannot create " + (out_dir / "features").string() + ": " + ec.message());

    const Index q = spec.latent_dim;
    const Index R = kResponsesPerSubject;
    Rng root(spec.seed);
    Rng model_rng = root.split();
    Rng data_rng = root.split();
    Rng noise_rng = root.split();

    // Planted model: mixing matrices, their pseudo-inverses, label readout.
    std::array<MatrixD, 3> mixing;
    std::array<MatrixD, 3> readout;
    const MatrixD latent_to_score = gaussian(q, kScoreDims, spec.label_spread * std::sqrt(double(R) / double(q)), model_rng);
    for (Modality m : kModalities) {
        const auto i = static_cast<std::size_t>(m);
        mixing[i] = gaussian(q, spec.dims[m], 1.0 / std::sqrt(double(q)), model_rng);
        readout[i] = right_pinv(mixing[i]) * latent_to_score / 3.0;
    }

    const auto counts = split_counts(spec.n_subjects, spec.split_weights);
    Manifest manifest;
    manifest.dims = spec.dims;
    const int id_width = std::max<int>(4, static_cast<int>(std::to_string(spec.n_subjects - 1).size()));

    MatrixD linear_part(static_cast<Index>(spec.n_subjects), kScoreDims);
    for (std::size_t s = 0; s < spec.n_subjects; ++s) {
        std::string sid = std::to_string(s);
        sid = "S" + std::string(static_cast<std::size_t>(id_width) - sid.size(), '0') + sid;
        ManifestSubject sub;
        sub.subject_id = sid;
        sub.split = s < counts[0] ? Split::train : (s < counts[0] + counts[1] ? Split::val : Split::test);

        ScoreVector lin = ScoreVector::Zero();
        for (Index k = 0; k < R; ++k) {
            const MatrixD z = gaussian(1, q, 1.0, data_rng);
            ManifestResponse resp;
            resp.question_index = static_cast<int>(k + 1);
            for (Modality m : kModalities) {
                const auto i = static_cast<std::size_t>(m);
                const Index len = m == Modality::text
                                      ? 1
                                      : spec.min_length + static_cast<Index>(data_rng.below(
                                                              static_cast<std::uint64_t>(spec.max_length - spec.min_length + 1)));
                MatrixD frames = gaussian(len, spec.dims[m], spec.frame_noise, data_rng);
                frames.rowwise() += (z * mixing[i]).row(0);
                const Matrix<float> stored = frames.cast<float>();

                const std::string rel = "features/" + sid + "_q" + std::to_string(k + 1) + "_" +
                                        std::string(to_string(m)) + ".mmfc";
                write_container(out_dir / rel, m, stored);
                (m == Modality::video ? resp.video_path : m == Modality::audio ? resp.audio_path : resp.text_path) = rel;

                FeatureSequence<double> seq{m, stored.cast<double>()};
                const PoolMode mode = m == Modality::video ? spec.planted_pooling.video : spec.planted_pooling.audio;
                const RowVectorD pooled = m == Modality::text ? RowVectorD(seq.data.row(0)) : pool(seq, mode);
                lin += pooled * readout[i];
            }
            sub.responses.push_back(std::move(resp));
        }
        linear_part.row(static_cast<Index>(s)) = lin / double(R);
        manifest.subjects.push_back(std::move(sub));
    }

    // Centre the planted labels on the middle of the 1..5 scale.
    const ScoreVector bias = ScoreVector::Constant(3.0) - linear_part.colwise().mean();
    std::size_t clamped = 0;
    for (std::size_t s = 0; s < spec.n_subjects; ++s) {
        ScoreVector label;
        for (Index d = 0; d < kScoreDims; ++d) {
            const double raw = bias(d) + linear_part(static_cast<Index>(s), d) + spec.noise * noise_rng.normal();
            const double c = std::clamp(raw, kScoreMin, kScoreMax);
            if (c != raw) ++clamped;
            label(d) = c;
        }
        manifest.subjects[s].labels = label;
    }

    SynthResult result;
    result.manifest_path = out_dir / "manifest.json";
    result.train = counts[0];
    result.val = counts[1];
    result.test = counts[2];
    result.oracle_floor = spec.noise * spec.noise;

    manifest.metadata = {
        {"generator",
         {{"n_subjects", spec.n_subjects},
          {"seed", spec.seed},
          {"noise", spec.noise},
          {"latent_dim", spec.latent_dim},
          {"frame_noise", spec.frame_noise},
          {"label_spread", spec.label_spread},
          {"min_length", spec.min_length},
          {"max_length", spec.max_length},
          {"planted_pooling",
           {{"video", std::string(to_string(spec.planted_pooling.video))},
            {"audio", std::string(to_string(spec.planted_pooling.audio))}}}}},
        {"oracle_floor", result.oracle_floor},
        {"clamped_label_fraction", double(clamped) / double(spec.n_subjects * kScoreDims)},
        {"planted_model", "planted.json"}};
    write_manifest(result.manifest_path, manifest);

    json planted = {{"bias", std::vector<double>(bias.data(), bias.data() + kScoreDims)},
                    {"responses", R},
                    {"readout",
                     {{"video", matrix_to_json(readout[0])},
                      {"audio", matrix_to_json(readout[1])},
                      {"text", matrix_to_json(readout[2])}}}};
    std::ofstream po(out_dir / "planted.json", std::ios::trunc);
    if (!po) throw DataError("cannot write " + (out_dir / "planted.json").string());
    po << planted.dump() << '\n';
    return result;
}

}  // namespace mmreg
