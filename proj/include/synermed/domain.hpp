#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace synermed {

/// Error classes map 1:1 onto CLI exit codes: usage/config = 1,
/// data/validation = 2, numeric failure = 3.
enum class ErrorKind { Usage = 1, Data = 2, Numeric = 3 };

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, std::string code, const std::string& message)
        : std::runtime_error(message), kind_(kind), code_(std::move(code)) {}
    ErrorKind kind() const noexcept { return kind_; }
    const std::string& code() const noexcept { return code_; }

private:
    ErrorKind kind_;
    std::string code_;
};

[[noreturn]] void fail(ErrorKind kind, const std::string& code, const std::string& message);

namespace domain {

// ---------------------------------------------------------------------------
// Modalities, datasets, routes
// ---------------------------------------------------------------------------

/// Imaging acquisition type. MR is the sequence-unspecified MRI used by the
/// SynthRAD routes; the four explicit sequences belong to BraTS routes.
enum class Modality { CT, CBCT, PET, MR, MR_T1, MR_T1CE, MR_T2, MR_FLAIR };

enum class CoarseModality { CT, CBCT, PET, MRI };

enum class DatasetTag { SYNTHRAD_BRAIN, SYNTHRAD_PELVIS, AUTOPET, BRATS };

constexpr int kModalityCount = 8;
constexpr int kDatasetCount = 4;

CoarseModality coarse_class(Modality m);

/// Lowercase token used inside route ids, e.g. "t1ce", "cbct".
const char* modality_token(Modality m);
/// Human-readable label used in questions and as the MI answer text,
/// e.g. "MRI T1CE".
const char* modality_label(Modality m);
/// Spelled-out name used in synthesis prompts,
/// e.g. "MRI T1CE (T1-weighted Contrast-Enhanced Magnetic Resonance Imaging)".
const char* modality_long_name(Modality m);
Modality modality_from_token(const std::string& token);
Modality modality_from_label(const std::string& label);

const char* dataset_token(DatasetTag d);
DatasetTag dataset_from_token(const std::string& token);

/// True when the modality may appear in volumes/routes of the dataset.
bool dataset_allows(DatasetTag d, Modality m);

/// True when the dataset labels MR data by explicit sequence (BraTS).
bool dataset_distinguishes_mr_sequences(DatasetTag d);

/// Modalities whose appearance is easily confused with m: CT <-> CBCT and
/// any MR family member <-> the other MR family members.
std::vector<Modality> confusable_modalities(Modality m);

/// A directed synthesis task.
struct Route {
    DatasetTag dataset;
    Modality src;
    Modality tgt;
    std::string route_id;  // "<dataset>/<src>_to_<tgt>", lowercase ASCII
};

std::string make_route_id(DatasetTag dataset, Modality src, Modality tgt);

/// The 22 directed routes, in catalog order: datasets in declaration order,
/// then src, then tgt by modality declaration order.
const std::vector<Route>& route_catalog();

const Route& route_by_id(const std::string& route_id);
bool route_exists(const std::string& route_id);
/// Index of the route within the catalog (used for one-hot encodings).
int route_index(const std::string& route_id);
/// The same modality pair in the opposite direction. Every catalog route has
/// a catalog reverse.
const Route& reversed_route(const Route& r);

// ---------------------------------------------------------------------------
// Images
// ---------------------------------------------------------------------------

/// Normalized 2-D intensity grid: row-major, every value finite in [0,1].
struct Image2D {
    int width = 0;
    int height = 0;
    std::vector<double> data;

    Image2D() = default;
    Image2D(int w, int h, double fill = 0.0);

    double& at(int x, int y) { return data[static_cast<size_t>(y) * width + x]; }
    double at(int x, int y) const { return data[static_cast<size_t>(y) * width + x]; }
    size_t pixel_count() const { return data.size(); }

    /// Enforces the type invariants; throws Error("ImageInvariant") on violation.
    void validate() const;
};

// ---------------------------------------------------------------------------
// Understanding instances
// ---------------------------------------------------------------------------

enum class Task { CTS, MI, TIA };

const char* task_token(Task t);
Task task_from_token(const std::string& token);

/// Letter for a 0-based option index; rejects indices beyond 'Z'.
char answer_letter_for(int index);

struct InstanceMeta {
    std::string route_id;
    std::string volume_id;
    int slice_index = 0;
    int k_window = 0;                               // CTS only
    std::vector<std::string> distractor_route_ids;  // TIA only, in option order
    int template_version = 1;
};

/// One forged multiple-choice question with provenance metadata.
/// Options are image refs ("volume_id#k") for CTS and text for MI/TIA.
struct UnderstandingInstance {
    std::string instance_id;
    Task task = Task::CTS;
    std::string prompt;
    std::vector<std::string> image_refs;
    std::vector<std::string> options;
    int answer_index = 0;
    char answer_letter = 'A';
    InstanceMeta meta;

    void validate() const;
};

// ---------------------------------------------------------------------------
// Deterministic splittable RNG
// ---------------------------------------------------------------------------

std::uint64_t fnv1a64(const std::string& bytes);

/// Deterministic stream derived from (seed, labels). The initial state is
/// seed XOR FNV-1a-64 of the labels joined by "/"; draws are the SplitMix64
/// sequence from that state. Bounded draws use next_u64() % n and shuffles
/// use descending Fisher-Yates, so independent implementations can match
/// byte-for-byte.
class RngStream {
public:
    RngStream(std::uint64_t seed, const std::vector<std::string>& labels);

    std::uint64_t next_u64();
    /// Uniform in [0, n); requires n >= 1.
    std::uint64_t bounded(std::uint64_t n);
    /// 53-bit uniform in [0, 1).
    double uniform01();
    /// Uniform in (0, 1] (safe as a log() argument and as flow time t).
    double uniform_open01();
    /// Standard normal via Box-Muller; the paired draw is cached.
    double gaussian();

    template <typename T>
    void shuffle(std::vector<T>& v) {
        if (v.size() < 2) return;
        for (size_t i = v.size() - 1; i >= 1; --i) {
            size_t j = static_cast<size_t>(bounded(i + 1));
            std::swap(v[i], v[j]);
        }
    }

private:
    std::uint64_t state_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

/// Convenience for building the label vector from mixed parts.
RngStream derive_stream(std::uint64_t seed, std::initializer_list<std::string> labels);

}  // namespace domain
}  // namespace synermed
