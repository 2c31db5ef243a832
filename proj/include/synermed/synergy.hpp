#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "synermed/domain.hpp"
#include "synermed/forge.hpp"
#include "synermed/ingest.hpp"
#include "synermed/metrics.hpp"
#include "synermed/prompts.hpp"
#include "synermed/toynet.hpp"

namespace synermed::synergy {

using domain::Image2D;
using domain::Task;
using domain::UnderstandingInstance;
using ingest::CorpusManifest;
using ingest::VolumePair;

// ---------------------------------------------------------------------------
// Toy corpus
// ---------------------------------------------------------------------------

/// Per-modality rendering of the shared content field:
/// clamp(content^gamma * (1 + bias_amp * cos(low-frequency field)) + noise).
struct ToyModalityParams {
    double gamma = 1.0;
    double bias_amp = 0.1;
    double noise_sigma = 0.02;
};

/// Paired volumes share one content field (Gaussian blobs whose centers
/// random-walk across slices, so neighboring slices are genuine hard
/// negatives) and differ only in the modality rendering.
struct ToyCorpusConfig {
    int n_volumes = 24;  // content volumes ("patients"); each renders once per modality
    int slices_per_volume = 32;
    int width = 32;
    int height = 32;
    int n_blobs = 4;
    double drift_step = 3.0;  // blob-center step per slice, in pixels
    std::vector<std::string> routes = {"brats/t1_to_t2", "brats/t2_to_t1"};
    std::map<std::string, ToyModalityParams> modality_params;  // modality token -> params
    std::uint64_t seed = 0;

    static ToyCorpusConfig defaults();
    /// Errors: ConfigInvalid (including the S >= 2K+2 window feasibility bound).
    void validate(int forge_k_window) const;
};

/// Writes PGM slices plus manifest.json under out_dir and returns the loaded
/// manifest. Byte-identical across runs and thread counts.
CorpusManifest gen_toy_corpus(const ToyCorpusConfig& cfg, const std::filesystem::path& out_dir,
                              int jobs = 1);

// ---------------------------------------------------------------------------
// Resampling stand-ins for the encoder/decoder pair
// ---------------------------------------------------------------------------

/// Integer-factor box-average downsample; width/height must be divisible by
/// the target dimensions.
Image2D box_downsample(const Image2D& img, int out_w, int out_h);

/// The encoder's input view of a slice: the flattened 16x16 box downsample.
std::vector<double> encoder_input_from_slice(const Image2D& img);

/// Bilinear upsample with half-pixel centers; inverse-direction stand-in for
/// the latent decoder.
Image2D bilinear_upsample(const Image2D& img, int out_w, int out_h);

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

constexpr size_t kEmbedDim = 64;
constexpr size_t kEncoderInputDim = 256;  // 16x16 downsample, flattened
constexpr size_t kLatentDim = 64;         // 8x8 downsample, flattened
constexpr size_t kTimeFeatures = 3;       // t, sin(2 pi t), cos(2 pi t)

struct TrainConfig {
    std::uint64_t seed = 0;
    int stage1_epochs = 60;
    int stage2_epochs = 40;
    int batch_size = 16;
    double lr_stage1 = 1e-3;
    double lr_stage2 = 2e-3;
    double holdout_fraction = 0.25;
    std::vector<size_t> encoder_hidden = {128};
    std::vector<size_t> vnet_hidden = {128};
    bool freeze_encoder = false;
    bool zero_cond = false;  // diagnostic: train/evaluate with zeroed conditioning
    int sample_steps = 50;
    double sample_t_end = 1e-3;

    void validate() const;
};

/// Shared encoder feeding three understanding heads and the velocity network.
/// The 64-d embedding is the representation transferred between stages.
struct SynergyModel {
    toynet::MlpNet encoder;    // 256 -> hidden -> 64
    toynet::MlpNet cts_query;  // (64 + 8 modality one-hot) -> 64
    toynet::MlpNet mi_head;    // 64 -> 8 modality logits
    toynet::MlpNet tia_head;   // 128 (src ++ tgt embedding) -> 22 route logits
    toynet::MlpNet vnet;       // (64 latent + 64 cond + 22 route + 3 time) -> 64

    static SynergyModel init(std::uint64_t seed, const TrainConfig& cfg);
    void save(const std::filesystem::path& dir) const;
    static SynergyModel load(const std::filesystem::path& dir);
};

/// All slices preloaded and resampled once: 256-d encoder inputs and 64-d
/// latents per (volume, slice).
struct PreparedCorpus {
    CorpusManifest manifest;
    int width = 0;
    int height = 0;
    std::map<std::string, std::vector<std::vector<double>>> enc_inputs;
    std::map<std::string, std::vector<std::vector<double>>> latents;

    static PreparedCorpus prepare(const CorpusManifest& manifest, int jobs = 1);
    const std::vector<double>& enc_input(const std::string& volume_id, int k) const;
    const std::vector<double>& latent(const std::string& volume_id, int k) const;
    const std::vector<double>& enc_input_ref(const std::string& image_ref) const;
};

/// Patient-level train/held-out split (patients are volume_id prefixes up to
/// the first '_'; toygen follows this convention). All pair volumes stay in
/// both sub-manifests so the MI label universe is unchanged.
struct Split {
    std::vector<ingest::PairEntry> train;
    std::vector<ingest::PairEntry> holdout;
};

Split split_pairs(const CorpusManifest& manifest, double holdout_fraction, std::uint64_t seed);
CorpusManifest restrict_pairs(const CorpusManifest& manifest,
                              const std::vector<ingest::PairEntry>& keep);

// ---------------------------------------------------------------------------
// Losses shared by training and the finite-difference checks
// ---------------------------------------------------------------------------

struct Stage1Grads {
    toynet::Gradients encoder;
    toynet::Gradients cts_query;
    toynet::Gradients mi_head;
    toynet::Gradients tia_head;
};

Stage1Grads zero_stage1_grads(const SynergyModel& model);

/// Softmax cross-entropy of one instance under the current heads; when
/// `grads` is given, accumulates d(loss)/d(params) * grad_scale.
double stage1_instance_loss(const SynergyModel& model, const PreparedCorpus& prep,
                            const UnderstandingInstance& inst, Stage1Grads* grads,
                            double grad_scale);

/// Argmax option index under the current heads.
int stage1_predict(const SynergyModel& model, const PreparedCorpus& prep,
                   const UnderstandingInstance& inst);

struct Stage2Example {
    std::vector<double> enc_input;  // 256
    std::vector<double> z0;         // 64 clean latent
    std::vector<double> z1;         // 64 noise
    double t = 0.5;                 // in (0,1]
    int route_idx = 0;              // catalog index for the one-hot
};

struct Stage2Grads {
    toynet::Gradients encoder;
    toynet::Gradients vnet;
};

Stage2Grads zero_stage2_grads(const SynergyModel& model);

/// Flow-matching regression loss of one example; cond is the RMS-normalized
/// encoder embedding (zeroed when zero_cond).
double stage2_example_loss(const SynergyModel& model, const Stage2Example& ex, bool zero_cond,
                           Stage2Grads* grads, double grad_scale);

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct Stage1Result {
    std::vector<double> epoch_loss;
    std::map<Task, std::vector<double>> holdout_accuracy_curve;
    std::map<Task, double> final_accuracy;
    size_t n_train_instances = 0;
    size_t n_holdout_instances = 0;
};

/// Stage I: joint CTS+MI+TIA training of the shared encoder and heads
/// (equal task weights; per-batch task means are summed).
Stage1Result train_stage1(const PreparedCorpus& prep, const Split& split,
                          const prompts::RouteDescriptionPools& pools,
                          const forge::ForgeConfig& forge_cfg, SynergyModel& model,
                          const TrainConfig& cfg);

struct Stage2Result {
    std::vector<double> train_loss_curve;
    std::vector<double> val_loss_curve;
    double initial_val_loss = 0.0;
    double final_val_loss = 0.0;
};

/// Stage II: conditional flow matching on train-pair latents; the encoder
/// fine-tunes unless cfg.freeze_encoder.
Stage2Result train_stage2(const PreparedCorpus& prep, const Split& split, SynergyModel& model,
                          const TrainConfig& cfg);

/// Accuracy per task over the given instances.
std::map<Task, double> evaluate_gau(const SynergyModel& model, const PreparedCorpus& prep,
                                    const std::vector<UnderstandingInstance>& instances);

// ---------------------------------------------------------------------------
// Synthesis
// ---------------------------------------------------------------------------

/// Euler-samples the latent flow conditioned on the source slice; returns the
/// clamped 8x8 latent.
std::vector<double> synthesize_latent(const SynergyModel& model,
                                      const std::vector<double>& enc_input,
                                      const std::string& route_id, std::uint64_t seed,
                                      const std::vector<std::string>& stream_labels,
                                      const TrainConfig& cfg);

/// Full-resolution output: synthesized latent bilinearly upsampled to the
/// source slice size.
Image2D synthesize(const SynergyModel& model, const Image2D& src, const std::string& route_id,
                   std::uint64_t seed, const TrainConfig& cfg);

// ---------------------------------------------------------------------------
// Ablation and K sweep
// ---------------------------------------------------------------------------

enum class Schedule { Baseline, Stage2Only, Stage1Only, Stage1Plus2 };

const char* schedule_token(Schedule s);
Schedule schedule_from_token(const std::string& token);

struct AblationCell {
    std::string schedule;
    std::uint64_t seed = 0;
    std::string route_id;
    int n_slices = 0;
    metrics::Stat ssim_x100;  // window 5 on bilinearly upsampled latents
    metrics::Stat psnr_db;    // on the 8x8 latents
    int psnr_identical = 0;
    metrics::Stat mae_8bit;   // on the 8x8 latents
};

struct ScheduleSeedSummary {
    std::string schedule;
    std::uint64_t seed = 0;
    double ssim_x100_mean = 0.0;  // slice-weighted over routes
    double psnr_db_mean = 0.0;
    double mae_8bit_mean = 0.0;
    std::map<Task, double> gau_accuracy;
};

struct AblationReport {
    std::vector<std::string> schedules;
    std::vector<std::uint64_t> seeds;
    std::vector<std::string> routes;
    std::vector<AblationCell> cells;
    std::vector<ScheduleSeedSummary> per_seed;
    std::map<std::string, double> schedule_ssim_mean;  // mean over seeds
    std::map<std::string, double> schedule_psnr_mean;
    std::map<std::string, double> schedule_mae_mean;

    std::string to_json(int indent = 2) const;
    std::string to_csv() const;        // long form, one row per cell
    std::string to_ssim_table() const; // wide: schedules x routes, SSIM*100
};

/// Per seed: fixed patient split, Stage-I training shared by the stage1_*
/// schedules, identical Stage-II budget for stage2_only and stage1_plus_2,
/// and held-out latent evaluation for every schedule.
AblationReport run_ablation(const CorpusManifest& manifest,
                            const prompts::RouteDescriptionPools& pools,
                            const forge::ForgeConfig& forge_cfg, const TrainConfig& train_cfg,
                            const std::vector<Schedule>& schedules,
                            const std::vector<std::uint64_t>& seeds, int jobs = 1);

struct KSweepRow {
    int k = 0;
    std::map<Task, double> stage1_accuracy;
    double ssim_x100_mean = 0.0;
    double psnr_db_mean = 0.0;
    double mae_8bit_mean = 0.0;
};

struct KSweepReport {
    std::vector<KSweepRow> rows;

    std::string to_json(int indent = 2) const;
    std::string to_csv() const;
};

/// Reruns CTS forging + Stage I + Stage I+II per window size K and reports
/// GAU accuracy plus downstream synthesis metrics.
KSweepReport k_sensitivity(const CorpusManifest& manifest,
                           const prompts::RouteDescriptionPools& pools,
                           const std::vector<int>& k_values, const forge::ForgeConfig& forge_cfg,
                           const TrainConfig& train_cfg, int jobs = 1);

}  // namespace synermed::synergy
