#include "synermed/synergy.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <set>

#include <json.hpp>

#include "synermed/flowcore.hpp"
#include "synermed/parallel.hpp"

namespace synermed::synergy {

using domain::Modality;
using domain::RngStream;
using domain::Route;
using toynet::ForwardCache;
using toynet::Gradients;
using toynet::Matrix;

// ---------------------------------------------------------------------------
// Toy corpus
// ---------------------------------------------------------------------------

ToyCorpusConfig ToyCorpusConfig::defaults() {
    ToyCorpusConfig cfg;
    // Gamma/bias/noise chosen so (t1, t1ce) and (t2, flair) overlap enough to
    // act as confusable pairs while every sequence stays identifiable.
    cfg.modality_params["t1"] = {0.70, 0.10, 0.02};
    cfg.modality_params["t1ce"] = {0.62, 0.12, 0.02};
    cfg.modality_params["t2"] = {1.60, 0.10, 0.02};
    cfg.modality_params["flair"] = {1.45, 0.15, 0.03};
    return cfg;
}

void ToyCorpusConfig::validate(int forge_k_window) const {
    if (n_volumes < 2) fail(ErrorKind::Usage, "ConfigInvalid", "need at least 2 content volumes");
    if (slices_per_volume < 2) {
        fail(ErrorKind::Usage, "ConfigInvalid", "need at least 2 slices per volume");
    }
    if (width < 16 || height < 16 || width % 16 != 0 || height % 16 != 0) {
        fail(ErrorKind::Usage, "ConfigInvalid",
             "slice dimensions must be multiples of 16 (encoder/latent downsampling)");
    }
    if (n_blobs < 1) fail(ErrorKind::Usage, "ConfigInvalid", "need at least 1 blob");
    if (drift_step < 0.0) fail(ErrorKind::Usage, "ConfigInvalid", "drift step must be >= 0");
    if (routes.empty()) fail(ErrorKind::Usage, "ConfigInvalid", "need at least one route");
    if (slices_per_volume < 2 * forge_k_window + 2) {
        fail(ErrorKind::Usage, "ConfigInvalid",
             "slices_per_volume must be >= 2K+2 for the CTS window (K = " +
                 std::to_string(forge_k_window) + ")");
    }
    for (const auto& [token, params] : modality_params) {
        domain::modality_from_token(token);
        if (params.noise_sigma < 0.0) {
            fail(ErrorKind::Usage, "ConfigInvalid", token + ": noise sigma must be >= 0");
        }
        if (params.gamma <= 0.0) {
            fail(ErrorKind::Usage, "ConfigInvalid", token + ": gamma must be positive");
        }
    }
    for (const std::string& route_id : routes) {
        const Route& r = domain::route_by_id(route_id);
        for (Modality m : {r.src, r.tgt}) {
            if (modality_params.find(domain::modality_token(m)) == modality_params.end()) {
                fail(ErrorKind::Usage, "ConfigInvalid",
                     route_id + ": no modality_params entry for " + domain::modality_token(m));
            }
        }
    }
}

namespace {

std::string two_digits(int v) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%02d", v);
    return buf;
}

std::string params_signature(const ToyModalityParams& p) {
    char buf[96];
    std::snprintf(buf, sizeof(buf), "%.17g/%.17g/%.17g", p.gamma, p.bias_amp, p.noise_sigma);
    return buf;
}

struct BlobTrack {
    double amp, radius;
    std::vector<std::pair<double, double>> centers;  // per slice
};

struct ContentField {
    double base, amp, fx, fy, phase;
    std::vector<BlobTrack> blobs;
};

// One shared content field per patient: smooth cosine background plus
// random-walking Gaussian blobs (fixed amplitude/radius, drifting centers).
ContentField build_content(const ToyCorpusConfig& cfg, int patient) {
    RngStream rng(cfg.seed, {"toy-content", std::to_string(patient)});
    ContentField f;
    f.base = 0.15 + 0.10 * rng.uniform01();
    f.amp = 0.04 + 0.06 * rng.uniform01();
    f.fx = 1.0 + static_cast<double>(rng.bounded(2));
    f.fy = 1.0 + static_cast<double>(rng.bounded(2));
    f.phase = 2.0 * std::numbers::pi * rng.uniform01();

    double margin = 4.0;
    double lo_x = 2.0, hi_x = cfg.width - 3.0;
    double lo_y = 2.0, hi_y = cfg.height - 3.0;
    for (int b = 0; b < cfg.n_blobs; ++b) {
        BlobTrack blob;
        blob.amp = 0.35 + 0.40 * rng.uniform01();
        blob.radius = 2.5 + 3.0 * rng.uniform01();
        double cx = margin + rng.uniform01() * (cfg.width - 2.0 * margin);
        double cy = margin + rng.uniform01() * (cfg.height - 2.0 * margin);
        blob.centers.emplace_back(cx, cy);
        f.blobs.push_back(std::move(blob));
    }
    auto reflect = [](double v, double lo, double hi) {
        if (v < lo) v = lo + (lo - v);
        if (v > hi) v = hi - (v - hi);
        return std::clamp(v, lo, hi);
    };
    for (int k = 1; k < cfg.slices_per_volume; ++k) {
        for (BlobTrack& blob : f.blobs) {
            double angle = 2.0 * std::numbers::pi * rng.uniform01();
            auto [cx, cy] = blob.centers.back();
            cx = reflect(cx + cfg.drift_step * std::cos(angle), lo_x, hi_x);
            cy = reflect(cy + cfg.drift_step * std::sin(angle), lo_y, hi_y);
            blob.centers.emplace_back(cx, cy);
        }
    }
    return f;
}

Image2D content_slice(const ToyCorpusConfig& cfg, const ContentField& f, int k) {
    Image2D img(cfg.width, cfg.height);
    for (int y = 0; y < cfg.height; ++y) {
        for (int x = 0; x < cfg.width; ++x) {
            double v = f.base +
                       f.amp * std::cos(2.0 * std::numbers::pi *
                                            (f.fx * x / cfg.width + f.fy * y / cfg.height) +
                                        f.phase);
            for (const BlobTrack& blob : f.blobs) {
                auto [cx, cy] = blob.centers[static_cast<size_t>(k)];
                double dx = x - cx, dy = y - cy;
                v += blob.amp * std::exp(-(dx * dx + dy * dy) / (2.0 * blob.radius * blob.radius));
            }
            img.at(x, y) = std::clamp(v, 0.0, 1.0);
        }
    }
    return img;
}

// Renders the content field as one modality. The stream is keyed by the
// parameter values, not the modality name, so identical transforms produce
// bitwise-identical volumes (the degenerate-corpus case).
std::vector<Image2D> render_volume(const ToyCorpusConfig& cfg, const ContentField& content,
                                   int patient, domain::DatasetTag dataset,
                                   const ToyModalityParams& params) {
    RngStream rng(cfg.seed, {"toy-render", std::to_string(patient),
                             domain::dataset_token(dataset), params_signature(params)});
    double bx = 0.5 + rng.uniform01();
    double by = 0.5 + rng.uniform01();
    double psi = 2.0 * std::numbers::pi * rng.uniform01();

    std::vector<Image2D> slices;
    slices.reserve(static_cast<size_t>(cfg.slices_per_volume));
    for (int k = 0; k < cfg.slices_per_volume; ++k) {
        Image2D c = content_slice(cfg, content, k);
        Image2D out(cfg.width, cfg.height);
        for (int y = 0; y < cfg.height; ++y) {
            for (int x = 0; x < cfg.width; ++x) {
                double bias = 1.0 + params.bias_amp *
                                        std::cos(2.0 * std::numbers::pi *
                                                     (bx * x / cfg.width + by * y / cfg.height) +
                                                 psi);
                double v = std::pow(c.at(x, y), params.gamma) * bias;
                if (params.noise_sigma > 0.0) v += params.noise_sigma * rng.gaussian();
                out.at(x, y) = std::clamp(v, 0.0, 1.0);
            }
        }
        slices.push_back(std::move(out));
    }
    return slices;
}

}  // namespace

CorpusManifest gen_toy_corpus(const ToyCorpusConfig& cfg, const std::filesystem::path& out_dir,
                              int jobs) {
    cfg.validate(1);
    std::filesystem::create_directories(out_dir / "slices");

    // Render set: per dataset appearing in the routes, every configured
    // modality that dataset allows (extra modalities enrich the MI labels).
    std::set<domain::DatasetTag> datasets;
    for (const std::string& route_id : cfg.routes) {
        datasets.insert(domain::route_by_id(route_id).dataset);
    }
    struct RenderTask {
        int patient;
        domain::DatasetTag dataset;
        Modality modality;
        std::string volume_id;
    };
    std::vector<RenderTask> tasks;
    for (int p = 0; p < cfg.n_volumes; ++p) {
        for (domain::DatasetTag d : datasets) {
            for (const auto& [token, params] : cfg.modality_params) {
                Modality m = domain::modality_from_token(token);
                if (!domain::dataset_allows(d, m)) continue;
                tasks.push_back({p, d, m,
                                 "p" + two_digits(p) + "_" + domain::dataset_token(d) + "_" +
                                     token});
            }
        }
    }

    std::vector<ingest::VolumeRef> volumes(tasks.size());
    parallel_for(tasks.size(), jobs, [&](size_t i) {
        const RenderTask& task = tasks[i];
        ContentField content = build_content(cfg, task.patient);
        const ToyModalityParams& params =
            cfg.modality_params.at(domain::modality_token(task.modality));
        std::vector<Image2D> slices =
            render_volume(cfg, content, task.patient, task.dataset, params);

        std::filesystem::path vol_dir = out_dir / "slices" / task.volume_id;
        std::filesystem::create_directories(vol_dir);
        ingest::VolumeRef ref;
        ref.volume_id = task.volume_id;
        ref.dataset = task.dataset;
        ref.modality = task.modality;
        ref.width = cfg.width;
        ref.height = cfg.height;
        ref.intensity_window = {0.0, 1.0};
        for (size_t k = 0; k < slices.size(); ++k) {
            std::string rel = "slices/" + task.volume_id + "/s" +
                              (k < 10 ? "00" : k < 100 ? "0" : "") + std::to_string(k) + ".pgm";
            ingest::write_pgm_file(out_dir / rel, slices[k]);
            ref.slice_paths.push_back(rel);
        }
        volumes[i] = std::move(ref);
    });

    CorpusManifest manifest;
    manifest.schema_version = 1;
    manifest.base_dir = out_dir;
    manifest.volumes = std::move(volumes);
    for (const std::string& route_id : cfg.routes) {
        const Route& r = domain::route_by_id(route_id);
        std::string flat = route_id;
        std::replace(flat.begin(), flat.end(), '/', '_');
        for (int p = 0; p < cfg.n_volumes; ++p) {
            ingest::PairEntry pair;
            pair.pair_id = "pair_" + flat + "_p" + two_digits(p);
            pair.route_id = route_id;
            pair.src_volume_id = "p" + two_digits(p) + "_" +
                                 domain::dataset_token(r.dataset) + "_" +
                                 domain::modality_token(r.src);
            pair.tgt_volume_id = "p" + two_digits(p) + "_" +
                                 domain::dataset_token(r.dataset) + "_" +
                                 domain::modality_token(r.tgt);
            manifest.pairs.push_back(std::move(pair));
        }
    }
    manifest.validate();
    ingest::save_manifest(manifest, out_dir / "manifest.json");
    return ingest::load_manifest(out_dir / "manifest.json");
}

// ---------------------------------------------------------------------------
// Resampling
// ---------------------------------------------------------------------------

Image2D box_downsample(const Image2D& img, int out_w, int out_h) {
    if (out_w <= 0 || out_h <= 0 || img.width % out_w != 0 || img.height % out_h != 0) {
        fail(ErrorKind::Data, "DimMismatch",
             "box downsample requires integer factors (got " + std::to_string(img.width) + "x" +
                 std::to_string(img.height) + " -> " + std::to_string(out_w) + "x" +
                 std::to_string(out_h) + ")");
    }
    int fx = img.width / out_w;
    int fy = img.height / out_h;
    double inv = 1.0 / (fx * fy);
    Image2D out(out_w, out_h);
    for (int y = 0; y < out_h; ++y) {
        for (int x = 0; x < out_w; ++x) {
            double acc = 0.0;
            for (int dy = 0; dy < fy; ++dy) {
                for (int dx = 0; dx < fx; ++dx) acc += img.at(x * fx + dx, y * fy + dy);
            }
            out.at(x, y) = acc * inv;
        }
    }
    return out;
}

std::vector<double> encoder_input_from_slice(const Image2D& img) {
    return box_downsample(img, 16, 16).data;
}

Image2D bilinear_upsample(const Image2D& img, int out_w, int out_h) {
    Image2D out(out_w, out_h);
    double sx = static_cast<double>(img.width) / out_w;
    double sy = static_cast<double>(img.height) / out_h;
    for (int y = 0; y < out_h; ++y) {
        double fy = (y + 0.5) * sy - 0.5;
        int y0 = static_cast<int>(std::floor(fy));
        double wy = fy - y0;
        int y0c = std::clamp(y0, 0, img.height - 1);
        int y1c = std::clamp(y0 + 1, 0, img.height - 1);
        for (int x = 0; x < out_w; ++x) {
            double fx = (x + 0.5) * sx - 0.5;
            int x0 = static_cast<int>(std::floor(fx));
            double wx = fx - x0;
            int x0c = std::clamp(x0, 0, img.width - 1);
            int x1c = std::clamp(x0 + 1, 0, img.width - 1);
            double v = (1.0 - wy) * ((1.0 - wx) * img.at(x0c, y0c) + wx * img.at(x1c, y0c)) +
                       wy * ((1.0 - wx) * img.at(x0c, y1c) + wx * img.at(x1c, y1c));
            out.at(x, y) = v;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

void TrainConfig::validate() const {
    if (stage1_epochs < 1 || stage2_epochs < 1) {
        fail(ErrorKind::Usage, "ConfigInvalid", "epoch counts must be >= 1");
    }
    if (batch_size < 1) fail(ErrorKind::Usage, "ConfigInvalid", "batch_size must be >= 1");
    if (lr_stage1 <= 0.0 || lr_stage2 <= 0.0) {
        fail(ErrorKind::Usage, "ConfigInvalid", "learning rates must be positive");
    }
    if (holdout_fraction <= 0.0 || holdout_fraction >= 1.0) {
        fail(ErrorKind::Usage, "ConfigInvalid", "holdout_fraction must be in (0,1)");
    }
    if (sample_steps < 1) fail(ErrorKind::Usage, "ConfigInvalid", "sample_steps must be >= 1");
    if (!(sample_t_end > 0.0) || sample_t_end >= 1.0) {
        fail(ErrorKind::Usage, "ConfigInvalid", "sample_t_end must be in (0,1)");
    }
}

namespace {

size_t route_count() { return domain::route_catalog().size(); }

std::vector<size_t> with_ends(size_t in, const std::vector<size_t>& hidden, size_t out) {
    std::vector<size_t> dims{in};
    dims.insert(dims.end(), hidden.begin(), hidden.end());
    dims.push_back(out);
    return dims;
}

}  // namespace

SynergyModel SynergyModel::init(std::uint64_t seed, const TrainConfig& cfg) {
    cfg.validate();
    SynergyModel m;
    {
        RngStream rng(seed, {"init", "encoder"});
        m.encoder = toynet::MlpNet::init(with_ends(kEncoderInputDim, cfg.encoder_hidden, kEmbedDim),
                                         rng);
    }
    {
        RngStream rng(seed, {"init", "cts_query"});
        m.cts_query = toynet::MlpNet::init(
            {kEmbedDim + static_cast<size_t>(domain::kModalityCount), kEmbedDim}, rng);
    }
    {
        RngStream rng(seed, {"init", "mi_head"});
        m.mi_head = toynet::MlpNet::init(
            {kEmbedDim, static_cast<size_t>(domain::kModalityCount)}, rng);
    }
    {
        RngStream rng(seed, {"init", "tia_head"});
        m.tia_head = toynet::MlpNet::init({2 * kEmbedDim, route_count()}, rng);
    }
    {
        RngStream rng(seed, {"init", "vnet"});
        m.vnet = toynet::MlpNet::init(
            with_ends(kLatentDim + kEmbedDim + route_count() + kTimeFeatures, cfg.vnet_hidden,
                      kLatentDim),
            rng);
    }
    return m;
}

void SynergyModel::save(const std::filesystem::path& dir) const {
    std::filesystem::create_directories(dir);
    toynet::save_net(encoder, dir, "encoder");
    toynet::save_net(cts_query, dir, "cts_query");
    toynet::save_net(mi_head, dir, "mi_head");
    toynet::save_net(tia_head, dir, "tia_head");
    toynet::save_net(vnet, dir, "vnet");
    nlohmann::ordered_json j;
    j["format"] = "synermed-model-v1";
    j["embed_dim"] = kEmbedDim;
    j["route_count"] = route_count();
    std::ofstream out(dir / "model.json", std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::Data, "IoError", "cannot write model.json");
    out << j.dump(2) << "\n";
}

SynergyModel SynergyModel::load(const std::filesystem::path& dir) {
    SynergyModel m;
    m.encoder = toynet::load_net(dir, "encoder");
    m.cts_query = toynet::load_net(dir, "cts_query");
    m.mi_head = toynet::load_net(dir, "mi_head");
    m.tia_head = toynet::load_net(dir, "tia_head");
    m.vnet = toynet::load_net(dir, "vnet");
    return m;
}

// ---------------------------------------------------------------------------
// Prepared corpus, splits
// ---------------------------------------------------------------------------

PreparedCorpus PreparedCorpus::prepare(const CorpusManifest& manifest, int jobs) {
    PreparedCorpus prep;
    prep.manifest = manifest;
    if (manifest.volumes.empty()) fail(ErrorKind::Data, "NoVolumes", "manifest has no volumes");
    prep.width = manifest.volumes.front().width;
    prep.height = manifest.volumes.front().height;

    std::vector<std::vector<std::vector<double>>> enc(manifest.volumes.size());
    std::vector<std::vector<std::vector<double>>> lat(manifest.volumes.size());
    parallel_for(manifest.volumes.size(), jobs, [&](size_t i) {
        const ingest::VolumeRef& vol = manifest.volumes[i];
        if (vol.width != prep.width || vol.height != prep.height) {
            fail(ErrorKind::Data, "DimMismatch",
                 vol.volume_id + ": all volumes must share slice dimensions");
        }
        for (int k = 0; k < vol.slice_count(); ++k) {
            Image2D slice = ingest::load_slice(manifest, vol, k);
            enc[i].push_back(encoder_input_from_slice(slice));
            lat[i].push_back(box_downsample(slice, 8, 8).data);
        }
    });
    for (size_t i = 0; i < manifest.volumes.size(); ++i) {
        prep.enc_inputs[manifest.volumes[i].volume_id] = std::move(enc[i]);
        prep.latents[manifest.volumes[i].volume_id] = std::move(lat[i]);
    }
    return prep;
}

const std::vector<double>& PreparedCorpus::enc_input(const std::string& volume_id, int k) const {
    return enc_inputs.at(volume_id).at(static_cast<size_t>(k));
}

const std::vector<double>& PreparedCorpus::latent(const std::string& volume_id, int k) const {
    return latents.at(volume_id).at(static_cast<size_t>(k));
}

const std::vector<double>& PreparedCorpus::enc_input_ref(const std::string& image_ref) const {
    auto [volume_id, k] = ingest::parse_image_ref(image_ref);
    return enc_input(volume_id, k);
}

namespace {

std::string patient_key(const std::string& volume_id) {
    size_t underscore = volume_id.find('_');
    return underscore == std::string::npos ? volume_id : volume_id.substr(0, underscore);
}

}  // namespace

Split split_pairs(const CorpusManifest& manifest, double holdout_fraction, std::uint64_t seed) {
    std::set<std::string> patient_set;
    for (const auto& pair : manifest.pairs) patient_set.insert(patient_key(pair.src_volume_id));
    if (patient_set.size() < 2) {
        fail(ErrorKind::Data, "ConfigInvalid",
             "need at least 2 patients (volume_id prefixes) to split train/held-out");
    }
    std::vector<std::string> patients(patient_set.begin(), patient_set.end());
    RngStream rng(seed, {"split"});
    rng.shuffle(patients);

    size_t n_holdout = static_cast<size_t>(
        std::lround(holdout_fraction * static_cast<double>(patients.size())));
    n_holdout = std::clamp<size_t>(n_holdout, 1, patients.size() - 1);
    std::set<std::string> holdout(patients.begin(),
                                  patients.begin() + static_cast<long>(n_holdout));

    Split split;
    for (const auto& pair : manifest.pairs) {
        if (holdout.count(patient_key(pair.src_volume_id))) {
            split.holdout.push_back(pair);
        } else {
            split.train.push_back(pair);
        }
    }
    return split;
}

CorpusManifest restrict_pairs(const CorpusManifest& manifest,
                              const std::vector<ingest::PairEntry>& keep) {
    CorpusManifest out = manifest;
    out.pairs = keep;
    out.validate();
    return out;
}

// ---------------------------------------------------------------------------
// Shared forward/backward pieces
// ---------------------------------------------------------------------------

namespace {

constexpr double kRmsEps = 1e-8;
// Softmax scale for the normalized CTS dot products.
constexpr double kCtsScale = 10.0;

// RMS-normalizes the conditioning embedding so its scale stays stable across
// training stages and initializations.
std::vector<double> rms_normalize(const std::vector<double>& e, double* scale_out) {
    double mean_sq = 0.0;
    for (double v : e) mean_sq += v * v;
    mean_sq /= static_cast<double>(e.size());
    double s = std::sqrt(mean_sq + kRmsEps);
    if (scale_out) *scale_out = s;
    std::vector<double> out(e.size());
    for (size_t i = 0; i < e.size(); ++i) out[i] = e[i] / s;
    return out;
}

std::vector<double> rms_backward(const std::vector<double>& e, double s,
                                 const std::vector<double>& d_cond) {
    double dot = 0.0;
    for (size_t i = 0; i < e.size(); ++i) dot += d_cond[i] * e[i];
    double n = static_cast<double>(e.size());
    std::vector<double> d_e(e.size());
    for (size_t i = 0; i < e.size(); ++i) {
        d_e[i] = d_cond[i] / s - dot * e[i] / (n * s * s * s);
    }
    return d_e;
}

std::vector<double> modality_one_hot(Modality m) {
    std::vector<double> v(static_cast<size_t>(domain::kModalityCount), 0.0);
    v[static_cast<size_t>(m)] = 1.0;
    return v;
}

std::vector<double> time_features(double t) {
    return {t, std::sin(2.0 * std::numbers::pi * t), std::cos(2.0 * std::numbers::pi * t)};
}

}  // namespace

Stage1Grads zero_stage1_grads(const SynergyModel& model) {
    return {toynet::zero_gradients(model.encoder), toynet::zero_gradients(model.cts_query),
            toynet::zero_gradients(model.mi_head), toynet::zero_gradients(model.tia_head)};
}

Stage2Grads zero_stage2_grads(const SynergyModel& model) {
    return {toynet::zero_gradients(model.encoder), toynet::zero_gradients(model.vnet)};
}

namespace {

struct OptionLogits {
    std::vector<double> logits;
    // For MI/TIA: index into the head's output vector per option.
    std::vector<size_t> head_index;
};

// CTS scoring: query = cts_query([enc(src) ++ one-hot(m_tgt)]); candidates
// score as the scaled dot product of the RMS-normalized query and candidate
// embeddings, so matching depends on direction rather than norm shortcuts.
double cts_loss(const SynergyModel& model, const PreparedCorpus& prep,
                const UnderstandingInstance& inst, Stage1Grads* grads, double grad_scale,
                int* predicted) {
    const Route& route = domain::route_by_id(inst.meta.route_id);
    size_t n_options = inst.options.size();

    Matrix enc_in(n_options + 1, kEncoderInputDim);
    {
        const std::vector<double>& src = prep.enc_input_ref(inst.image_refs.at(0));
        std::copy(src.begin(), src.end(), enc_in.data.begin());
        for (size_t j = 0; j < n_options; ++j) {
            const std::vector<double>& cand = prep.enc_input_ref(inst.options[j]);
            std::copy(cand.begin(), cand.end(),
                      enc_in.data.begin() + static_cast<long>((j + 1) * kEncoderInputDim));
        }
    }
    ForwardCache enc_cache;
    Matrix emb = toynet::forward(model.encoder, enc_in, grads ? &enc_cache : nullptr);

    std::vector<double> query_in = emb.row(0);
    std::vector<double> one_hot = modality_one_hot(route.tgt);
    query_in.insert(query_in.end(), one_hot.begin(), one_hot.end());
    ForwardCache query_cache;
    Matrix query = toynet::forward(model.cts_query, Matrix::from_row(query_in),
                                   grads ? &query_cache : nullptr);

    double q_scale = 1.0;
    std::vector<double> q_raw = query.row(0);
    std::vector<double> q_hat = rms_normalize(q_raw, &q_scale);
    std::vector<std::vector<double>> c_raw(n_options), c_hat(n_options);
    std::vector<double> c_scale(n_options, 1.0);
    for (size_t j = 0; j < n_options; ++j) {
        c_raw[j] = emb.row(j + 1);
        c_hat[j] = rms_normalize(c_raw[j], &c_scale[j]);
    }

    std::vector<double> logits(n_options, 0.0);
    for (size_t j = 0; j < n_options; ++j) {
        double acc = 0.0;
        for (size_t e = 0; e < kEmbedDim; ++e) acc += q_hat[e] * c_hat[j][e];
        logits[j] = acc * kCtsScale;
    }
    if (predicted) {
        *predicted = static_cast<int>(
            std::max_element(logits.begin(), logits.end()) - logits.begin());
    }
    toynet::SoftmaxXent sx = toynet::softmax_xent(logits, static_cast<size_t>(inst.answer_index));

    if (grads) {
        std::vector<double> d_q_hat(kEmbedDim, 0.0);
        Matrix d_emb(n_options + 1, kEmbedDim);
        for (size_t j = 0; j < n_options; ++j) {
            double d = sx.d_logits[j] * kCtsScale;
            std::vector<double> d_c_hat(kEmbedDim);
            for (size_t e = 0; e < kEmbedDim; ++e) {
                d_q_hat[e] += d * c_hat[j][e];
                d_c_hat[e] = d * q_hat[e];
            }
            std::vector<double> d_c = rms_backward(c_raw[j], c_scale[j], d_c_hat);
            for (size_t e = 0; e < kEmbedDim; ++e) d_emb.at(j + 1, e) = d_c[e];
        }
        std::vector<double> d_q = rms_backward(q_raw, q_scale, d_q_hat);
        Gradients query_grads =
            toynet::backward(model.cts_query, query_cache, Matrix::from_row(d_q));
        for (size_t e = 0; e < kEmbedDim; ++e) {
            d_emb.at(0, e) += query_grads.d_input.at(0, e);
        }
        Gradients enc_grads = toynet::backward(model.encoder, enc_cache, d_emb);
        grads->encoder.add_scaled(enc_grads, grad_scale);
        grads->cts_query.add_scaled(query_grads, grad_scale);
    }
    return sx.loss;
}

double mi_loss(const SynergyModel& model, const PreparedCorpus& prep,
               const UnderstandingInstance& inst, Stage1Grads* grads, double grad_scale,
               int* predicted) {
    ForwardCache enc_cache;
    Matrix emb = toynet::forward(
        model.encoder, Matrix::from_row(prep.enc_input_ref(inst.image_refs.at(0))),
        grads ? &enc_cache : nullptr);
    ForwardCache head_cache;
    Matrix head_out = toynet::forward(model.mi_head, emb, grads ? &head_cache : nullptr);

    size_t n_options = inst.options.size();
    std::vector<double> logits(n_options);
    std::vector<size_t> head_index(n_options);
    for (size_t j = 0; j < n_options; ++j) {
        head_index[j] = static_cast<size_t>(domain::modality_from_label(inst.options[j]));
        logits[j] = head_out.at(0, head_index[j]);
    }
    if (predicted) {
        *predicted = static_cast<int>(
            std::max_element(logits.begin(), logits.end()) - logits.begin());
    }
    toynet::SoftmaxXent sx = toynet::softmax_xent(logits, static_cast<size_t>(inst.answer_index));

    if (grads) {
        Matrix d_head(1, static_cast<size_t>(domain::kModalityCount));
        for (size_t j = 0; j < n_options; ++j) d_head.at(0, head_index[j]) += sx.d_logits[j];
        Gradients head_grads = toynet::backward(model.mi_head, head_cache, d_head);
        Gradients enc_grads = toynet::backward(model.encoder, enc_cache, head_grads.d_input);
        grads->encoder.add_scaled(enc_grads, grad_scale);
        grads->mi_head.add_scaled(head_grads, grad_scale);
    }
    return sx.loss;
}

double tia_loss(const SynergyModel& model, const PreparedCorpus& prep,
                const UnderstandingInstance& inst, Stage1Grads* grads, double grad_scale,
                int* predicted) {
    Matrix enc_in(2, kEncoderInputDim);
    {
        const std::vector<double>& src = prep.enc_input_ref(inst.image_refs.at(0));
        const std::vector<double>& tgt = prep.enc_input_ref(inst.image_refs.at(1));
        std::copy(src.begin(), src.end(), enc_in.data.begin());
        std::copy(tgt.begin(), tgt.end(),
                  enc_in.data.begin() + static_cast<long>(kEncoderInputDim));
    }
    ForwardCache enc_cache;
    Matrix emb = toynet::forward(model.encoder, enc_in, grads ? &enc_cache : nullptr);

    std::vector<double> feat = emb.row(0);
    std::vector<double> tgt_emb = emb.row(1);
    feat.insert(feat.end(), tgt_emb.begin(), tgt_emb.end());
    ForwardCache head_cache;
    Matrix head_out = toynet::forward(model.tia_head, Matrix::from_row(feat),
                                      grads ? &head_cache : nullptr);

    // Option -> route: the answer slot carries meta.route_id, distractors
    // consume meta.distractor_route_ids in option order.
    size_t n_options = inst.options.size();
    std::vector<size_t> head_index(n_options);
    size_t distractor_pos = 0;
    for (size_t j = 0; j < n_options; ++j) {
        const std::string& route_id =
            static_cast<int>(j) == inst.answer_index
                ? inst.meta.route_id
                : inst.meta.distractor_route_ids.at(distractor_pos++);
        head_index[j] = static_cast<size_t>(domain::route_index(route_id));
    }
    std::vector<double> logits(n_options);
    for (size_t j = 0; j < n_options; ++j) logits[j] = head_out.at(0, head_index[j]);
    if (predicted) {
        *predicted = static_cast<int>(
            std::max_element(logits.begin(), logits.end()) - logits.begin());
    }
    toynet::SoftmaxXent sx = toynet::softmax_xent(logits, static_cast<size_t>(inst.answer_index));

    if (grads) {
        Matrix d_head(1, route_count());
        for (size_t j = 0; j < n_options; ++j) d_head.at(0, head_index[j]) += sx.d_logits[j];
        Gradients head_grads = toynet::backward(model.tia_head, head_cache, d_head);
        Matrix d_emb(2, kEmbedDim);
        for (size_t e = 0; e < kEmbedDim; ++e) {
            d_emb.at(0, e) = head_grads.d_input.at(0, e);
            d_emb.at(1, e) = head_grads.d_input.at(0, kEmbedDim + e);
        }
        Gradients enc_grads = toynet::backward(model.encoder, enc_cache, d_emb);
        grads->encoder.add_scaled(enc_grads, grad_scale);
        grads->tia_head.add_scaled(head_grads, grad_scale);
    }
    return sx.loss;
}

}  // namespace

double stage1_instance_loss(const SynergyModel& model, const PreparedCorpus& prep,
                            const UnderstandingInstance& inst, Stage1Grads* grads,
                            double grad_scale) {
    switch (inst.task) {
        case Task::CTS: return cts_loss(model, prep, inst, grads, grad_scale, nullptr);
        case Task::MI: return mi_loss(model, prep, inst, grads, grad_scale, nullptr);
        case Task::TIA: return tia_loss(model, prep, inst, grads, grad_scale, nullptr);
    }
    fail(ErrorKind::Data, "UnknownTask", "invalid task value");
}

int stage1_predict(const SynergyModel& model, const PreparedCorpus& prep,
                   const UnderstandingInstance& inst) {
    int predicted = 0;
    switch (inst.task) {
        case Task::CTS: cts_loss(model, prep, inst, nullptr, 0.0, &predicted); break;
        case Task::MI: mi_loss(model, prep, inst, nullptr, 0.0, &predicted); break;
        case Task::TIA: tia_loss(model, prep, inst, nullptr, 0.0, &predicted); break;
    }
    return predicted;
}

double stage2_example_loss(const SynergyModel& model, const Stage2Example& ex, bool zero_cond,
                           Stage2Grads* grads, double grad_scale) {
    ForwardCache enc_cache;
    Matrix emb = toynet::forward(model.encoder, Matrix::from_row(ex.enc_input),
                                 grads ? &enc_cache : nullptr);
    std::vector<double> emb_row = emb.row(0);
    double rms_scale = 1.0;
    std::vector<double> cond = zero_cond ? std::vector<double>(kEmbedDim, 0.0)
                                         : rms_normalize(emb_row, &rms_scale);

    size_t n_routes = route_count();
    std::vector<double> vin;
    vin.reserve(kLatentDim + kEmbedDim + n_routes + kTimeFeatures);
    for (size_t i = 0; i < kLatentDim; ++i) {
        vin.push_back((1.0 - ex.t) * ex.z0[i] + ex.t * ex.z1[i]);
    }
    vin.insert(vin.end(), cond.begin(), cond.end());
    for (size_t r = 0; r < n_routes; ++r) {
        vin.push_back(r == static_cast<size_t>(ex.route_idx) ? 1.0 : 0.0);
    }
    std::vector<double> tf = time_features(ex.t);
    vin.insert(vin.end(), tf.begin(), tf.end());

    ForwardCache vnet_cache;
    Matrix v = toynet::forward(model.vnet, Matrix::from_row(vin), grads ? &vnet_cache : nullptr);

    double loss = 0.0;
    std::vector<double> d_v(kLatentDim);
    double inv_n = 1.0 / static_cast<double>(kLatentDim);
    for (size_t i = 0; i < kLatentDim; ++i) {
        double err = v.at(0, i) - (ex.z1[i] - ex.z0[i]);
        loss += err * err * inv_n;
        d_v[i] = 2.0 * err * inv_n;
    }

    if (grads) {
        Gradients vnet_grads = toynet::backward(model.vnet, vnet_cache, Matrix::from_row(d_v));
        grads->vnet.add_scaled(vnet_grads, grad_scale);
        if (!zero_cond) {
            std::vector<double> d_cond(kEmbedDim);
            for (size_t e = 0; e < kEmbedDim; ++e) {
                d_cond[e] = vnet_grads.d_input.at(0, kLatentDim + e);
            }
            std::vector<double> d_emb = rms_backward(emb_row, rms_scale, d_cond);
            Gradients enc_grads =
                toynet::backward(model.encoder, enc_cache, Matrix::from_row(d_emb));
            grads->encoder.add_scaled(enc_grads, grad_scale);
        }
    }
    return loss;
}

// ---------------------------------------------------------------------------
// Stage I
// ---------------------------------------------------------------------------

std::map<Task, double> evaluate_gau(const SynergyModel& model, const PreparedCorpus& prep,
                                    const std::vector<UnderstandingInstance>& instances) {
    std::map<Task, int> n, correct;
    for (const auto& inst : instances) {
        ++n[inst.task];
        if (stage1_predict(model, prep, inst) == inst.answer_index) ++correct[inst.task];
    }
    std::map<Task, double> acc;
    for (const auto& [task, count] : n) {
        acc[task] = count == 0 ? 0.0 : static_cast<double>(correct[task]) / count;
    }
    return acc;
}

Stage1Result train_stage1(const PreparedCorpus& prep, const Split& split,
                          const prompts::RouteDescriptionPools& pools,
                          const forge::ForgeConfig& forge_cfg, SynergyModel& model,
                          const TrainConfig& cfg) {
    cfg.validate();
    CorpusManifest train_manifest = restrict_pairs(prep.manifest, split.train);
    CorpusManifest holdout_manifest = restrict_pairs(prep.manifest, split.holdout);
    forge::ForgeOutput holdout_forged = forge::forge_corpus(holdout_manifest, pools, forge_cfg);

    std::vector<UnderstandingInstance> holdout;
    for (auto* chunk : {&holdout_forged.cts, &holdout_forged.mi, &holdout_forged.tia}) {
        holdout.insert(holdout.end(), chunk->begin(), chunk->end());
    }

    toynet::AdamState opt_enc = toynet::AdamState::for_net(model.encoder, cfg.lr_stage1);
    toynet::AdamState opt_query = toynet::AdamState::for_net(model.cts_query, cfg.lr_stage1);
    toynet::AdamState opt_mi = toynet::AdamState::for_net(model.mi_head, cfg.lr_stage1);
    toynet::AdamState opt_tia = toynet::AdamState::for_net(model.tia_head, cfg.lr_stage1);

    Stage1Result result;
    result.n_holdout_instances = holdout.size();

    for (int epoch = 0; epoch < cfg.stage1_epochs; ++epoch) {
        // Fresh anchors/negatives each epoch (epoch-derived forge seed) so the
        // matcher sees new hard-negative combinations instead of memorizing a
        // fixed instance set.
        forge::ForgeConfig fc_epoch = forge_cfg;
        fc_epoch.seed =
            RngStream(forge_cfg.seed, {"stage1-reforge", std::to_string(epoch)}).next_u64();
        forge::ForgeOutput train_forged = forge::forge_corpus(train_manifest, pools, fc_epoch);
        std::vector<UnderstandingInstance> train;
        for (auto* chunk : {&train_forged.cts, &train_forged.mi, &train_forged.tia}) {
            train.insert(train.end(), chunk->begin(), chunk->end());
        }
        if (train.empty()) fail(ErrorKind::Data, "ConfigInvalid", "no training instances forged");
        result.n_train_instances = train.size();

        std::vector<size_t> order(train.size());
        for (size_t i = 0; i < order.size(); ++i) order[i] = i;
        RngStream order_rng(cfg.seed, {"stage1-order", std::to_string(epoch)});
        order_rng.shuffle(order);

        double epoch_loss = 0.0;
        size_t n_batches = 0;
        for (size_t start = 0; start < order.size(); start += static_cast<size_t>(cfg.batch_size)) {
            size_t end = std::min(order.size(), start + static_cast<size_t>(cfg.batch_size));
            std::map<Task, int> task_count;
            for (size_t i = start; i < end; ++i) ++task_count[train[order[i]].task];

            Stage1Grads grads = zero_stage1_grads(model);
            double batch_loss = 0.0;
            // Batch objective: sum over tasks of the per-task mean, the
            // stochastic realization of the equal-weight joint loss.
            for (size_t i = start; i < end; ++i) {
                const UnderstandingInstance& inst = train[order[i]];
                double w = 1.0 / task_count[inst.task];
                batch_loss += w * stage1_instance_loss(model, prep, inst, &grads, w);
            }
            toynet::adam_step(model.encoder, grads.encoder, opt_enc);
            toynet::adam_step(model.cts_query, grads.cts_query, opt_query);
            toynet::adam_step(model.mi_head, grads.mi_head, opt_mi);
            toynet::adam_step(model.tia_head, grads.tia_head, opt_tia);
            epoch_loss += batch_loss;
            ++n_batches;
        }
        result.epoch_loss.push_back(epoch_loss / static_cast<double>(n_batches));

        std::map<Task, double> acc = evaluate_gau(model, prep, holdout);
        for (const auto& [task, a] : acc) result.holdout_accuracy_curve[task].push_back(a);
    }
    result.final_accuracy = evaluate_gau(model, prep, holdout);
    return result;
}

// ---------------------------------------------------------------------------
// Stage II
// ---------------------------------------------------------------------------

namespace {

struct Stage2Target {
    std::string pair_id;
    std::string src_volume_id;
    std::string tgt_volume_id;
    int route_idx;
    int k;
};

std::vector<Stage2Target> stage2_targets(const CorpusManifest& manifest,
                                         const std::vector<ingest::PairEntry>& pairs) {
    std::vector<Stage2Target> targets;
    for (const auto& pair : pairs) {
        int route_idx = domain::route_index(pair.route_id);
        int slices = manifest.volume(pair.src_volume_id).slice_count();
        for (int k = 0; k < slices; ++k) {
            targets.push_back({pair.pair_id, pair.src_volume_id, pair.tgt_volume_id, route_idx, k});
        }
    }
    return targets;
}

Stage2Example make_example(const PreparedCorpus& prep, const Stage2Target& target,
                           RngStream& rng) {
    Stage2Example ex;
    ex.enc_input = prep.enc_input(target.src_volume_id, target.k);
    ex.z0 = prep.latent(target.tgt_volume_id, target.k);
    ex.z1.resize(kLatentDim);
    for (double& v : ex.z1) v = rng.gaussian();
    ex.t = rng.uniform_open01();
    ex.route_idx = target.route_idx;
    return ex;
}

double validation_loss(const SynergyModel& model, const PreparedCorpus& prep,
                       const std::vector<Stage2Target>& val_targets, std::uint64_t seed,
                       bool zero_cond) {
    if (val_targets.empty()) return 0.0;
    double acc = 0.0;
    for (const Stage2Target& target : val_targets) {
        RngStream rng(seed, {"s2-val", target.pair_id, std::to_string(target.k)});
        Stage2Example ex = make_example(prep, target, rng);
        acc += stage2_example_loss(model, ex, zero_cond, nullptr, 0.0);
    }
    return acc / static_cast<double>(val_targets.size());
}

}  // namespace

Stage2Result train_stage2(const PreparedCorpus& prep, const Split& split, SynergyModel& model,
                          const TrainConfig& cfg) {
    cfg.validate();
    std::vector<Stage2Target> train_targets = stage2_targets(prep.manifest, split.train);
    std::vector<Stage2Target> val_targets = stage2_targets(prep.manifest, split.holdout);
    if (train_targets.empty()) {
        fail(ErrorKind::Data, "ConfigInvalid", "no training targets for stage II");
    }

    toynet::AdamState opt_enc = toynet::AdamState::for_net(model.encoder, cfg.lr_stage2);
    toynet::AdamState opt_vnet = toynet::AdamState::for_net(model.vnet, cfg.lr_stage2);

    Stage2Result result;
    result.initial_val_loss = validation_loss(model, prep, val_targets, cfg.seed, cfg.zero_cond);

    std::vector<size_t> order(train_targets.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (int epoch = 0; epoch < cfg.stage2_epochs; ++epoch) {
        RngStream order_rng(cfg.seed, {"stage2-order", std::to_string(epoch)});
        order_rng.shuffle(order);

        double epoch_loss = 0.0;
        size_t n_examples = 0;
        for (size_t start = 0; start < order.size(); start += static_cast<size_t>(cfg.batch_size)) {
            size_t end = std::min(order.size(), start + static_cast<size_t>(cfg.batch_size));
            double inv_batch = 1.0 / static_cast<double>(end - start);
            Stage2Grads grads = zero_stage2_grads(model);
            for (size_t i = start; i < end; ++i) {
                const Stage2Target& target = train_targets[order[i]];
                RngStream rng(cfg.seed, {"s2", target.pair_id, std::to_string(target.k),
                                         std::to_string(epoch)});
                Stage2Example ex = make_example(prep, target, rng);
                epoch_loss += stage2_example_loss(model, ex, cfg.zero_cond, &grads, inv_batch);
                ++n_examples;
            }
            toynet::adam_step(model.vnet, grads.vnet, opt_vnet);
            if (!cfg.freeze_encoder && !cfg.zero_cond) {
                toynet::adam_step(model.encoder, grads.encoder, opt_enc);
            }
        }
        result.train_loss_curve.push_back(epoch_loss / static_cast<double>(n_examples));
        result.val_loss_curve.push_back(
            validation_loss(model, prep, val_targets, cfg.seed, cfg.zero_cond));
    }
    result.final_val_loss = result.val_loss_curve.empty() ? result.initial_val_loss
                                                          : result.val_loss_curve.back();
    return result;
}

// ---------------------------------------------------------------------------
// Synthesis
// ---------------------------------------------------------------------------

std::vector<double> synthesize_latent(const SynergyModel& model,
                                      const std::vector<double>& enc_input,
                                      const std::string& route_id, std::uint64_t seed,
                                      const std::vector<std::string>& stream_labels,
                                      const TrainConfig& cfg) {
    int route_idx = domain::route_index(route_id);
    Matrix emb = toynet::forward(model.encoder, Matrix::from_row(enc_input));
    std::vector<double> cond = cfg.zero_cond ? std::vector<double>(kEmbedDim, 0.0)
                                             : rms_normalize(emb.row(0), nullptr);

    flowcore::Tensor z_start({static_cast<std::uint32_t>(kLatentDim)});
    RngStream rng(seed, stream_labels);
    for (double& v : z_start.data) v = rng.gaussian();

    flowcore::Tensor cond_tensor({static_cast<std::uint32_t>(cond.size())});
    cond_tensor.data = cond;

    size_t n_routes = route_count();
    auto v_fn = [&](const flowcore::Tensor& z, double t,
                    const flowcore::Tensor& c) -> flowcore::Tensor {
        std::vector<double> vin;
        vin.reserve(kLatentDim + kEmbedDim + n_routes + kTimeFeatures);
        vin.insert(vin.end(), z.data.begin(), z.data.end());
        vin.insert(vin.end(), c.data.begin(), c.data.end());
        for (size_t r = 0; r < n_routes; ++r) {
            vin.push_back(r == static_cast<size_t>(route_idx) ? 1.0 : 0.0);
        }
        std::vector<double> tf = time_features(t);
        vin.insert(vin.end(), tf.begin(), tf.end());
        Matrix v = toynet::forward(model.vnet, Matrix::from_row(vin));
        flowcore::Tensor out({static_cast<std::uint32_t>(kLatentDim)});
        out.data = v.row(0);
        return out;
    };

    flowcore::Tensor z_hat = flowcore::sample(v_fn, std::move(z_start), cond_tensor,
                                              cfg.sample_steps, cfg.sample_t_end,
                                              flowcore::OdeMethod::Euler);
    std::vector<double> latent = std::move(z_hat.data);
    for (double& v : latent) v = std::clamp(v, 0.0, 1.0);
    return latent;
}

Image2D synthesize(const SynergyModel& model, const Image2D& src, const std::string& route_id,
                   std::uint64_t seed, const TrainConfig& cfg) {
    src.validate();
    std::vector<double> enc_input = encoder_input_from_slice(src);
    std::vector<double> latent =
        synthesize_latent(model, enc_input, route_id, seed, {"sample", route_id}, cfg);
    Image2D latent_img(8, 8);
    latent_img.data = latent;
    return bilinear_upsample(latent_img, src.width, src.height);
}

// ---------------------------------------------------------------------------
// Ablation
// ---------------------------------------------------------------------------

const char* schedule_token(Schedule s) {
    switch (s) {
        case Schedule::Baseline: return "baseline";
        case Schedule::Stage2Only: return "stage2_only";
        case Schedule::Stage1Only: return "stage1_only";
        case Schedule::Stage1Plus2: return "stage1_plus_2";
    }
    fail(ErrorKind::Usage, "ConfigInvalid", "invalid schedule value");
}

Schedule schedule_from_token(const std::string& token) {
    for (Schedule s : {Schedule::Baseline, Schedule::Stage2Only, Schedule::Stage1Only,
                       Schedule::Stage1Plus2}) {
        if (token == schedule_token(s)) return s;
    }
    fail(ErrorKind::Usage, "ConfigInvalid", "unknown schedule: " + token);
}

namespace {

struct ScheduleEval {
    std::vector<AblationCell> cells;
    double ssim_mean = 0.0;
    double psnr_mean = 0.0;
    double mae_mean = 0.0;
    std::map<Task, double> gau;
};

ScheduleEval evaluate_schedule(const SynergyModel& model, const PreparedCorpus& prep,
                               const Split& split,
                               const std::vector<UnderstandingInstance>& holdout_instances,
                               const TrainConfig& cfg, const std::string& schedule,
                               std::uint64_t seed) {
    // Per-route collections of predicted/GT latents.
    std::map<std::string, std::vector<Image2D>> preds8, gts8, preds_up, gts_up;
    int width = prep.width, height = prep.height;
    for (const auto& pair : split.holdout) {
        int slices = prep.manifest.volume(pair.src_volume_id).slice_count();
        for (int k = 0; k < slices; ++k) {
            std::vector<double> latent = synthesize_latent(
                model, prep.enc_input(pair.src_volume_id, k), pair.route_id, cfg.seed,
                {"sample", pair.pair_id, std::to_string(k)}, cfg);
            Image2D pred(8, 8);
            pred.data = std::move(latent);
            Image2D gt(8, 8);
            gt.data = prep.latent(pair.tgt_volume_id, k);
            preds_up[pair.route_id].push_back(bilinear_upsample(pred, width, height));
            gts_up[pair.route_id].push_back(bilinear_upsample(gt, width, height));
            preds8[pair.route_id].push_back(std::move(pred));
            gts8[pair.route_id].push_back(std::move(gt));
        }
    }

    // Window 5 both for the upsampled SSIM and for the 8x8 latent pass (whose
    // SSIM is discarded; only MAE/PSNR are taken from it).
    metrics::SsimParams small_window;
    small_window.window = 5;

    ScheduleEval eval;
    double ssim_total = 0.0, psnr_total = 0.0, mae_total = 0.0;
    int n_total = 0, psnr_n = 0;
    for (const auto& [route_id, preds] : preds8) {
        metrics::RouteMetricsReport small =
            metrics::evaluate_route(route_id, preds, gts8[route_id], small_window);
        metrics::RouteMetricsReport up =
            metrics::evaluate_route(route_id, preds_up[route_id], gts_up[route_id], small_window);
        AblationCell cell;
        cell.schedule = schedule;
        cell.seed = seed;
        cell.route_id = route_id;
        cell.n_slices = small.n_slices;
        cell.ssim_x100 = up.ssim_x100;
        cell.psnr_db = small.psnr_db;
        cell.psnr_identical = small.psnr_identical;
        cell.mae_8bit = small.mae_8bit;
        eval.cells.push_back(cell);

        ssim_total += up.ssim_x100.mean * small.n_slices;
        mae_total += small.mae_8bit.mean * small.n_slices;
        int finite = small.n_slices - small.psnr_identical;
        psnr_total += small.psnr_db.mean * finite;
        psnr_n += finite;
        n_total += small.n_slices;
    }
    eval.ssim_mean = n_total ? ssim_total / n_total : 0.0;
    eval.mae_mean = n_total ? mae_total / n_total : 0.0;
    eval.psnr_mean = psnr_n ? psnr_total / psnr_n : 0.0;
    eval.gau = evaluate_gau(model, prep, holdout_instances);
    return eval;
}

}  // namespace

AblationReport run_ablation(const CorpusManifest& manifest,
                            const prompts::RouteDescriptionPools& pools,
                            const forge::ForgeConfig& forge_cfg, const TrainConfig& train_cfg,
                            const std::vector<Schedule>& schedules,
                            const std::vector<std::uint64_t>& seeds, int jobs) {
    if (schedules.size() < 2) {
        fail(ErrorKind::Usage, "ConfigInvalid", "ablation needs at least 2 schedules");
    }
    if (seeds.size() < 3) {
        fail(ErrorKind::Usage, "ConfigInvalid", "ablation needs at least 3 seeds");
    }
    PreparedCorpus prep = PreparedCorpus::prepare(manifest, jobs);

    struct SeedResult {
        std::vector<AblationCell> cells;
        std::vector<ScheduleSeedSummary> summaries;
    };
    std::vector<SeedResult> results(seeds.size());

    parallel_for(seeds.size(), jobs, [&](size_t si) {
        std::uint64_t seed = seeds[si];
        TrainConfig tc = train_cfg;
        tc.seed = seed;
        forge::ForgeConfig fc = forge_cfg;
        fc.seed = seed;

        Split split = split_pairs(prep.manifest, tc.holdout_fraction, seed);
        CorpusManifest holdout_manifest = restrict_pairs(prep.manifest, split.holdout);
        forge::ForgeOutput holdout_forged = forge::forge_corpus(holdout_manifest, pools, fc);
        std::vector<UnderstandingInstance> holdout_instances;
        for (auto* chunk : {&holdout_forged.cts, &holdout_forged.mi, &holdout_forged.tia}) {
            holdout_instances.insert(holdout_instances.end(), chunk->begin(), chunk->end());
        }

        SynergyModel fresh = SynergyModel::init(seed, tc);
        bool need_stage1 =
            std::find(schedules.begin(), schedules.end(), Schedule::Stage1Only) !=
                schedules.end() ||
            std::find(schedules.begin(), schedules.end(), Schedule::Stage1Plus2) !=
                schedules.end();
        SynergyModel stage1_model = fresh;
        if (need_stage1) {
            train_stage1(prep, split, pools, fc, stage1_model, tc);
        }

        for (Schedule schedule : schedules) {
            SynergyModel model = fresh;
            switch (schedule) {
                case Schedule::Baseline: break;
                case Schedule::Stage2Only:
                    train_stage2(prep, split, model, tc);
                    break;
                case Schedule::Stage1Only:
                    model = stage1_model;
                    break;
                case Schedule::Stage1Plus2:
                    model = stage1_model;
                    train_stage2(prep, split, model, tc);
                    break;
            }
            ScheduleEval eval = evaluate_schedule(model, prep, split, holdout_instances, tc,
                                                  schedule_token(schedule), seed);
            results[si].cells.insert(results[si].cells.end(), eval.cells.begin(),
                                     eval.cells.end());
            ScheduleSeedSummary summary;
            summary.schedule = schedule_token(schedule);
            summary.seed = seed;
            summary.ssim_x100_mean = eval.ssim_mean;
            summary.psnr_db_mean = eval.psnr_mean;
            summary.mae_8bit_mean = eval.mae_mean;
            summary.gau_accuracy = eval.gau;
            results[si].summaries.push_back(std::move(summary));
        }
    });

    AblationReport report;
    for (Schedule s : schedules) report.schedules.push_back(schedule_token(s));
    report.seeds = seeds;
    {
        std::set<std::string> route_set;
        for (const auto& pair : manifest.pairs) route_set.insert(pair.route_id);
        report.routes.assign(route_set.begin(), route_set.end());
    }
    for (const SeedResult& r : results) {
        report.cells.insert(report.cells.end(), r.cells.begin(), r.cells.end());
        report.per_seed.insert(report.per_seed.end(), r.summaries.begin(), r.summaries.end());
    }
    for (const std::string& schedule : report.schedules) {
        double ssim = 0.0, psnr = 0.0, mae = 0.0;
        int n = 0;
        for (const ScheduleSeedSummary& s : report.per_seed) {
            if (s.schedule != schedule) continue;
            ssim += s.ssim_x100_mean;
            psnr += s.psnr_db_mean;
            mae += s.mae_8bit_mean;
            ++n;
        }
        report.schedule_ssim_mean[schedule] = n ? ssim / n : 0.0;
        report.schedule_psnr_mean[schedule] = n ? psnr / n : 0.0;
        report.schedule_mae_mean[schedule] = n ? mae / n : 0.0;
    }
    return report;
}

// ---------------------------------------------------------------------------
// K sweep
// ---------------------------------------------------------------------------

KSweepReport k_sensitivity(const CorpusManifest& manifest,
                           const prompts::RouteDescriptionPools& pools,
                           const std::vector<int>& k_values, const forge::ForgeConfig& forge_cfg,
                           const TrainConfig& train_cfg, int jobs) {
    if (k_values.empty()) fail(ErrorKind::Usage, "ConfigInvalid", "k sweep needs at least one K");
    int min_slices = 0;
    for (const auto& vol : manifest.volumes) {
        if (min_slices == 0 || vol.slice_count() < min_slices) min_slices = vol.slice_count();
    }
    for (int k : k_values) {
        if (k < 1 || min_slices < 2 * k + 2) {
            fail(ErrorKind::Usage, "ConfigInvalid",
                 "K = " + std::to_string(k) + " violates the window feasibility bound (S >= 2K+2, S = " +
                     std::to_string(min_slices) + ")");
        }
    }

    PreparedCorpus prep = PreparedCorpus::prepare(manifest, jobs);
    KSweepReport report;
    report.rows.resize(k_values.size());

    parallel_for(k_values.size(), jobs, [&](size_t i) {
        forge::ForgeConfig fc = forge_cfg;
        fc.k_window = k_values[i];
        TrainConfig tc = train_cfg;

        Split split = split_pairs(prep.manifest, tc.holdout_fraction, tc.seed);
        SynergyModel model = SynergyModel::init(tc.seed, tc);
        Stage1Result stage1 = train_stage1(prep, split, pools, fc, model, tc);
        train_stage2(prep, split, model, tc);

        CorpusManifest holdout_manifest = restrict_pairs(prep.manifest, split.holdout);
        forge::ForgeOutput holdout_forged = forge::forge_corpus(holdout_manifest, pools, fc);
        std::vector<UnderstandingInstance> holdout_instances;
        for (auto* chunk : {&holdout_forged.cts, &holdout_forged.mi, &holdout_forged.tia}) {
            holdout_instances.insert(holdout_instances.end(), chunk->begin(), chunk->end());
        }
        ScheduleEval eval = evaluate_schedule(model, prep, split, holdout_instances, tc,
                                              "stage1_plus_2", tc.seed);
        KSweepRow row;
        row.k = k_values[i];
        row.stage1_accuracy = stage1.final_accuracy;
        row.ssim_x100_mean = eval.ssim_mean;
        row.psnr_db_mean = eval.psnr_mean;
        row.mae_8bit_mean = eval.mae_mean;
        report.rows[i] = std::move(row);
    });
    return report;
}

// ---------------------------------------------------------------------------
// Report serialization
// ---------------------------------------------------------------------------

namespace {

nlohmann::ordered_json stat_json(const metrics::Stat& s) {
    nlohmann::ordered_json j;
    j["mean"] = s.mean;
    j["std"] = s.stddev;
    return j;
}

std::string format_double(double v) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

}  // namespace

std::string AblationReport::to_json(int indent) const {
    nlohmann::ordered_json j;
    j["schedules"] = schedules;
    j["seeds"] = seeds;
    j["routes"] = routes;
    j["notes"] = {{"stage1_only",
                   "untrained generation path; expected near-baseline without a pretrained "
                   "generation expert"}};
    j["cells"] = nlohmann::ordered_json::array();
    for (const AblationCell& c : cells) {
        nlohmann::ordered_json jc;
        jc["schedule"] = c.schedule;
        jc["seed"] = c.seed;
        jc["route_id"] = c.route_id;
        jc["n_slices"] = c.n_slices;
        jc["ssim_x100"] = stat_json(c.ssim_x100);
        jc["psnr_db"] = stat_json(c.psnr_db);
        jc["psnr_identical"] = c.psnr_identical;
        jc["mae_8bit"] = stat_json(c.mae_8bit);
        j["cells"].push_back(std::move(jc));
    }
    j["per_seed"] = nlohmann::ordered_json::array();
    for (const ScheduleSeedSummary& s : per_seed) {
        nlohmann::ordered_json js;
        js["schedule"] = s.schedule;
        js["seed"] = s.seed;
        js["ssim_x100_mean"] = s.ssim_x100_mean;
        js["psnr_db_mean"] = s.psnr_db_mean;
        js["mae_8bit_mean"] = s.mae_8bit_mean;
        nlohmann::ordered_json acc;
        for (const auto& [task, a] : s.gau_accuracy) acc[domain::task_token(task)] = a;
        js["gau_accuracy"] = std::move(acc);
        j["per_seed"].push_back(std::move(js));
    }
    nlohmann::ordered_json summary;
    for (const std::string& schedule : schedules) {
        nlohmann::ordered_json js;
        js["ssim_x100_mean"] = schedule_ssim_mean.at(schedule);
        js["psnr_db_mean"] = schedule_psnr_mean.at(schedule);
        js["mae_8bit_mean"] = schedule_mae_mean.at(schedule);
        summary[schedule] = std::move(js);
    }
    j["summary"] = std::move(summary);
    return j.dump(indent);
}

std::string AblationReport::to_csv() const {
    std::string out =
        "schedule,seed,route_id,n_slices,ssim_x100_mean,ssim_x100_std,psnr_db_mean,psnr_db_std,"
        "psnr_identical,mae_8bit_mean,mae_8bit_std\n";
    for (const AblationCell& c : cells) {
        out += c.schedule + "," + std::to_string(c.seed) + "," + c.route_id + "," +
               std::to_string(c.n_slices) + "," + format_double(c.ssim_x100.mean) + "," +
               format_double(c.ssim_x100.stddev) + "," + format_double(c.psnr_db.mean) + "," +
               format_double(c.psnr_db.stddev) + "," + std::to_string(c.psnr_identical) + "," +
               format_double(c.mae_8bit.mean) + "," + format_double(c.mae_8bit.stddev) + "\n";
    }
    return out;
}

std::string AblationReport::to_ssim_table() const {
    // Wide table: one row per schedule, one SSIM*100 column per route,
    // averaged over seeds.
    std::string out = "schedule";
    for (const std::string& route : routes) out += "," + route;
    out += "\n";
    for (const std::string& schedule : schedules) {
        out += schedule;
        for (const std::string& route : routes) {
            double total = 0.0;
            int n = 0;
            for (const AblationCell& c : cells) {
                if (c.schedule == schedule && c.route_id == route) {
                    total += c.ssim_x100.mean;
                    ++n;
                }
            }
            out += "," + (n ? format_double(total / n) : std::string("nan"));
        }
        out += "\n";
    }
    return out;
}

std::string KSweepReport::to_json(int indent) const {
    nlohmann::ordered_json j;
    j["rows"] = nlohmann::ordered_json::array();
    for (const KSweepRow& r : rows) {
        nlohmann::ordered_json jr;
        jr["k"] = r.k;
        nlohmann::ordered_json acc;
        for (const auto& [task, a] : r.stage1_accuracy) acc[domain::task_token(task)] = a;
        jr["stage1_accuracy"] = std::move(acc);
        jr["ssim_x100_mean"] = r.ssim_x100_mean;
        jr["psnr_db_mean"] = r.psnr_db_mean;
        jr["mae_8bit_mean"] = r.mae_8bit_mean;
        j["rows"].push_back(std::move(jr));
    }
    // Published full-scale context for side-by-side reading; the toy run
    // records its own trend and asserts nothing about this optimum.
    j["published_reference"] = {{"note",
                                 "published full-scale K-sensitivity optimum, for context only"},
                                {"best_k", 5},
                                {"ssim_x100", 74.91}};
    return j.dump(indent);
}

std::string KSweepReport::to_csv() const {
    std::string out = "k,cts_accuracy,mi_accuracy,tia_accuracy,ssim_x100_mean,psnr_db_mean,mae_8bit_mean\n";
    for (const KSweepRow& r : rows) {
        auto acc = [&](Task t) {
            auto it = r.stage1_accuracy.find(t);
            return it == r.stage1_accuracy.end() ? 0.0 : it->second;
        };
        out += std::to_string(r.k) + "," + format_double(acc(Task::CTS)) + "," +
               format_double(acc(Task::MI)) + "," + format_double(acc(Task::TIA)) + "," +
               format_double(r.ssim_x100_mean) + "," + format_double(r.psnr_db_mean) + "," +
               format_double(r.mae_8bit_mean) + "\n";
    }
    return out;
}

}  // namespace synermed::synergy
