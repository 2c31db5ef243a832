#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "synermed/domain.hpp"

namespace synermed::ingest {

using domain::DatasetTag;
using domain::Image2D;
using domain::Modality;
using domain::Route;

/// One volume on disk: an ordered stack of PGM slices sharing dimensions.
/// The intensity window is applied at load time in normalized units.
struct VolumeRef {
    std::string volume_id;
    DatasetTag dataset = DatasetTag::BRATS;
    Modality modality = Modality::MR_T1;
    int width = 0;
    int height = 0;
    std::array<double, 2> intensity_window = {0.0, 1.0};
    std::vector<std::string> slice_paths;  // relative to the manifest directory

    int slice_count() const { return static_cast<int>(slice_paths.size()); }
};

struct PairEntry {
    std::string pair_id;
    std::string route_id;
    std::string src_volume_id;
    std::string tgt_volume_id;
};

/// A resolved slice-aligned pair: equal slice counts and dimensions,
/// modalities matching the route ends.
struct VolumePair {
    std::string pair_id;
    Route route;
    VolumeRef src;
    VolumeRef tgt;

    int slice_count() const { return src.slice_count(); }
};

struct CorpusManifest {
    int schema_version = 1;
    std::filesystem::path base_dir;  // directory the slice paths resolve against
    std::vector<VolumeRef> volumes;
    std::vector<PairEntry> pairs;

    const VolumeRef& volume(const std::string& volume_id) const;
    bool has_volume(const std::string& volume_id) const;
    std::vector<VolumePair> resolved_pairs() const;

    /// Enforces all manifest invariants (unique ids, resolvable references,
    /// slice alignment, dataset/modality compatibility).
    void validate() const;
};

// ---------------------------------------------------------------------------
// PGM (P5) with maxval 255 or 65535; 16-bit samples are big-endian.
// ---------------------------------------------------------------------------

/// Errors: MalformedHeader, UnsupportedMaxval, TruncatedPayload.
Image2D parse_pgm(std::span<const std::uint8_t> bytes);
Image2D parse_pgm_file(const std::filesystem::path& path);

/// Quantizes to round(v * maxval) and emits a canonical header, so
/// parse_pgm(write_pgm(img)) round-trips exactly on quantized images.
std::vector<std::uint8_t> write_pgm(const Image2D& img, int maxval = 65535);
void write_pgm_file(const std::filesystem::path& path, const Image2D& img, int maxval = 65535);

// ---------------------------------------------------------------------------
// Manifest JSON (schema v1)
// ---------------------------------------------------------------------------

/// Errors: IoError, SchemaError (with a JSON-pointer location),
/// ConstraintError (dangling references, alignment/shape mismatch).
CorpusManifest load_manifest(const std::filesystem::path& path);

/// Writes the manifest JSON next to its slices; inverse of load_manifest.
void save_manifest(const CorpusManifest& manifest, const std::filesystem::path& path);

/// Loads slice k of a volume and applies its intensity window:
/// out = clamp((raw - lo) / (hi - lo), 0, 1) on the normalized PGM value.
Image2D load_slice(const CorpusManifest& manifest, const VolumeRef& vref, int k);

/// Resolves an "volume_id#k" image ref against the manifest.
Image2D load_image_ref(const CorpusManifest& manifest, const std::string& image_ref);

/// Splits "volume_id#k" into its parts; errors on malformed refs.
std::pair<std::string, int> parse_image_ref(const std::string& image_ref);
std::string make_image_ref(const std::string& volume_id, int k);

}  // namespace synermed::ingest
