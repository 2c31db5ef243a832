#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "synermed/domain.hpp"
#include "synermed/ingest.hpp"
#include "synermed/prompts.hpp"

namespace synermed::forge {

using domain::Task;
using domain::UnderstandingInstance;
using ingest::CorpusManifest;
using ingest::VolumePair;
using prompts::RouteDescriptionPools;

enum class BalanceBy { Route, Dataset };

struct TaskCounts {
    int cts = 40;
    int mi = 24;
    int tia = 24;
};

struct ForgeConfig {
    std::uint64_t seed = 0;
    int k_window = 5;        // CTS half-window K
    int cts_options = 4;     // N (also the MCQ size for MI, capped by the label universe)
    int tia_options = 4;     // R
    double mi_confusable_weight = 0.5;
    TaskCounts instances_per_pair;
    BalanceBy balance_by = BalanceBy::Route;

    void validate() const;
};

/// CTS instances for one pair. Anchors come from a per-pair stream; option
/// sampling and shuffling use a stream derived from (seed, "cts", pair_id, k)
/// so forging is independent of thread count. Errors: WindowTooSmall.
std::vector<UnderstandingInstance> forge_cts(const VolumePair& pair, const ForgeConfig& cfg,
                                             int count);

/// MI instances across all pairs of the manifest, balanced per balance_by.
/// Errors: NoVolumes, DistractorExhausted.
std::vector<UnderstandingInstance> forge_mi(const CorpusManifest& manifest,
                                            const ForgeConfig& cfg, int jobs = 1);

/// TIA instances across all pairs, balanced per balance_by.
/// Errors: PoolMissing, DistractorExhausted.
std::vector<UnderstandingInstance> forge_tia(const CorpusManifest& manifest,
                                             const RouteDescriptionPools& pools,
                                             const ForgeConfig& cfg, int jobs = 1);

/// CTS instances across all pairs, balanced per balance_by.
std::vector<UnderstandingInstance> forge_cts_all(const CorpusManifest& manifest,
                                                 const ForgeConfig& cfg, int jobs = 1);

struct ForgeOutput {
    std::vector<UnderstandingInstance> cts;
    std::vector<UnderstandingInstance> mi;
    std::vector<UnderstandingInstance> tia;
};

ForgeOutput forge_corpus(const CorpusManifest& manifest, const RouteDescriptionPools& pools,
                         const ForgeConfig& cfg, int jobs = 1);

/// Writes one JSON object per line with fixed key order, sorted by
/// instance_id; returns the number of lines written.
size_t emit_jsonl(const std::vector<UnderstandingInstance>& instances,
                  const std::filesystem::path& path);

std::vector<UnderstandingInstance> read_jsonl(const std::filesystem::path& path);

/// Per-pair instance quotas that keep group totals (route or dataset) within
/// one of each other. Returned in the order of manifest.pairs.
std::vector<int> balanced_pair_counts(const CorpusManifest& manifest, int per_pair_count,
                                      BalanceBy balance_by);

}  // namespace synermed::forge
