#include "synermed/domain.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>

namespace synermed {

void fail(ErrorKind kind, const std::string& code, const std::string& message) {
    throw Error(kind, code, message);
}

namespace domain {

CoarseModality coarse_class(Modality m) {
    switch (m) {
        case Modality::CT: return CoarseModality::CT;
        case Modality::CBCT: return CoarseModality::CBCT;
        case Modality::PET: return CoarseModality::PET;
        default: return CoarseModality::MRI;
    }
}

const char* modality_token(Modality m) {
    switch (m) {
        case Modality::CT: return "ct";
        case Modality::CBCT: return "cbct";
        case Modality::PET: return "pet";
        case Modality::MR: return "mr";
        case Modality::MR_T1: return "t1";
        case Modality::MR_T1CE: return "t1ce";
        case Modality::MR_T2: return "t2";
        case Modality::MR_FLAIR: return "flair";
    }
    fail(ErrorKind::Data, "UnknownModality", "invalid modality value");
}

const char* modality_label(Modality m) {
    switch (m) {
        case Modality::CT: return "CT";
        case Modality::CBCT: return "CBCT";
        case Modality::PET: return "PET";
        case Modality::MR: return "MRI";
        case Modality::MR_T1: return "MRI T1";
        case Modality::MR_T1CE: return "MRI T1CE";
        case Modality::MR_T2: return "MRI T2";
        case Modality::MR_FLAIR: return "MRI FLAIR";
    }
    fail(ErrorKind::Data, "UnknownModality", "invalid modality value");
}

const char* modality_long_name(Modality m) {
    switch (m) {
        case Modality::CT: return "CT (Computed Tomography)";
        case Modality::CBCT: return "CBCT (Cone-Beam Computed Tomography)";
        case Modality::PET: return "PET (Positron Emission Tomography)";
        case Modality::MR: return "MRI (Magnetic Resonance Imaging)";
        case Modality::MR_T1: return "MRI T1 (T1-weighted Magnetic Resonance Imaging)";
        case Modality::MR_T1CE:
            return "MRI T1CE (T1-weighted Contrast-Enhanced Magnetic Resonance Imaging)";
        case Modality::MR_T2: return "MRI T2 (T2-weighted Magnetic Resonance Imaging)";
        case Modality::MR_FLAIR:
            return "MRI FLAIR (Fluid-Attenuated Inversion Recovery Magnetic Resonance Imaging)";
    }
    fail(ErrorKind::Data, "UnknownModality", "invalid modality value");
}

static const Modality kAllModalities[kModalityCount] = {
    Modality::CT,    Modality::CBCT,    Modality::PET,   Modality::MR,
    Modality::MR_T1, Modality::MR_T1CE, Modality::MR_T2, Modality::MR_FLAIR};

Modality modality_from_token(const std::string& token) {
    for (Modality m : kAllModalities) {
        if (token == modality_token(m)) return m;
    }
    fail(ErrorKind::Data, "UnknownModality", "unknown modality token: " + token);
}

Modality modality_from_label(const std::string& label) {
    for (Modality m : kAllModalities) {
        if (label == modality_label(m)) return m;
    }
    fail(ErrorKind::Data, "UnknownModality", "unknown modality label: " + label);
}

const char* dataset_token(DatasetTag d) {
    switch (d) {
        case DatasetTag::SYNTHRAD_BRAIN: return "synthrad_brain";
        case DatasetTag::SYNTHRAD_PELVIS: return "synthrad_pelvis";
        case DatasetTag::AUTOPET: return "autopet";
        case DatasetTag::BRATS: return "brats";
    }
    fail(ErrorKind::Data, "UnknownDataset", "invalid dataset value");
}

DatasetTag dataset_from_token(const std::string& token) {
    for (DatasetTag d : {DatasetTag::SYNTHRAD_BRAIN, DatasetTag::SYNTHRAD_PELVIS,
                         DatasetTag::AUTOPET, DatasetTag::BRATS}) {
        if (token == dataset_token(d)) return d;
    }
    fail(ErrorKind::Data, "UnknownDataset", "unknown dataset token: " + token);
}

bool dataset_allows(DatasetTag d, Modality m) {
    switch (d) {
        case DatasetTag::SYNTHRAD_BRAIN:
        case DatasetTag::SYNTHRAD_PELVIS:
            return m == Modality::CBCT || m == Modality::CT || m == Modality::MR;
        case DatasetTag::AUTOPET:
            return m == Modality::CT || m == Modality::PET;
        case DatasetTag::BRATS:
            return m == Modality::MR_T1 || m == Modality::MR_T1CE || m == Modality::MR_T2 ||
                   m == Modality::MR_FLAIR;
    }
    return false;
}

bool dataset_distinguishes_mr_sequences(DatasetTag d) { return d == DatasetTag::BRATS; }

std::vector<Modality> confusable_modalities(Modality m) {
    if (m == Modality::CT) return {Modality::CBCT};
    if (m == Modality::CBCT) return {Modality::CT};
    if (m == Modality::PET) return {};
    std::vector<Modality> out;
    for (Modality o : {Modality::MR, Modality::MR_T1, Modality::MR_T1CE, Modality::MR_T2,
                       Modality::MR_FLAIR}) {
        if (o != m) out.push_back(o);
    }
    return out;
}

std::string make_route_id(DatasetTag dataset, Modality src, Modality tgt) {
    return std::string(dataset_token(dataset)) + "/" + modality_token(src) + "_to_" +
           modality_token(tgt);
}

static std::vector<Route> build_catalog() {
    std::vector<Route> routes;
    auto add_pairs = [&routes](DatasetTag d, const std::vector<Modality>& mods,
                               bool all_ordered_pairs) {
        // Routes sorted by (src, tgt) in modality declaration order.
        for (Modality src : kAllModalities) {
            if (std::find(mods.begin(), mods.end(), src) == mods.end()) continue;
            for (Modality tgt : kAllModalities) {
                if (tgt == src) continue;
                if (std::find(mods.begin(), mods.end(), tgt) == mods.end()) continue;
                if (!all_ordered_pairs) {
                    // SynthRAD uses CBCT<->CT and MR<->CT only (no CBCT<->MR).
                    bool involves_ct = src == Modality::CT || tgt == Modality::CT;
                    if (!involves_ct) continue;
                }
                routes.push_back({d, src, tgt, make_route_id(d, src, tgt)});
            }
        }
    };
    add_pairs(DatasetTag::SYNTHRAD_BRAIN, {Modality::CT, Modality::CBCT, Modality::MR}, false);
    add_pairs(DatasetTag::SYNTHRAD_PELVIS, {Modality::CT, Modality::CBCT, Modality::MR}, false);
    add_pairs(DatasetTag::AUTOPET, {Modality::CT, Modality::PET}, true);
    add_pairs(DatasetTag::BRATS,
              {Modality::MR_T1, Modality::MR_T1CE, Modality::MR_T2, Modality::MR_FLAIR}, true);
    return routes;
}

const std::vector<Route>& route_catalog() {
    static const std::vector<Route> catalog = build_catalog();
    return catalog;
}

const Route& route_by_id(const std::string& route_id) {
    for (const Route& r : route_catalog()) {
        if (r.route_id == route_id) return r;
    }
    fail(ErrorKind::Data, "UnknownRoute", "route not in catalog: " + route_id);
}

bool route_exists(const std::string& route_id) {
    for (const Route& r : route_catalog()) {
        if (r.route_id == route_id) return true;
    }
    return false;
}

int route_index(const std::string& route_id) {
    const auto& catalog = route_catalog();
    for (size_t i = 0; i < catalog.size(); ++i) {
        if (catalog[i].route_id == route_id) return static_cast<int>(i);
    }
    fail(ErrorKind::Data, "UnknownRoute", "route not in catalog: " + route_id);
}

const Route& reversed_route(const Route& r) {
    return route_by_id(make_route_id(r.dataset, r.tgt, r.src));
}

// ---------------------------------------------------------------------------
// Image2D
// ---------------------------------------------------------------------------

Image2D::Image2D(int w, int h, double fill)
    : width(w), height(h), data(static_cast<size_t>(w) * static_cast<size_t>(h), fill) {}

void Image2D::validate() const {
    if (width <= 0 || height <= 0) {
        fail(ErrorKind::Data, "ImageInvariant", "image dimensions must be positive");
    }
    if (data.size() != static_cast<size_t>(width) * static_cast<size_t>(height)) {
        fail(ErrorKind::Data, "ImageInvariant", "data length must equal width*height");
    }
    for (double v : data) {
        if (!std::isfinite(v) || v < 0.0 || v > 1.0) {
            fail(ErrorKind::Data, "ImageInvariant", "pixel values must be finite and in [0,1]");
        }
    }
}

// ---------------------------------------------------------------------------
// Understanding instances
// ---------------------------------------------------------------------------

const char* task_token(Task t) {
    switch (t) {
        case Task::CTS: return "CTS";
        case Task::MI: return "MI";
        case Task::TIA: return "TIA";
    }
    fail(ErrorKind::Data, "UnknownTask", "invalid task value");
}

Task task_from_token(const std::string& token) {
    if (token == "CTS") return Task::CTS;
    if (token == "MI") return Task::MI;
    if (token == "TIA") return Task::TIA;
    fail(ErrorKind::Data, "UnknownTask", "unknown task token: " + token);
}

char answer_letter_for(int index) {
    if (index < 0 || index >= 26) {
        fail(ErrorKind::Data, "TooManyOptions", "option index beyond A..Z: " + std::to_string(index));
    }
    return static_cast<char>('A' + index);
}

void UnderstandingInstance::validate() const {
    if (instance_id.empty()) {
        fail(ErrorKind::Data, "InstanceInvariant", "instance_id must be nonempty");
    }
    if (options.size() < 2) {
        fail(ErrorKind::Data, "InstanceInvariant",
             instance_id + ": needs at least 2 options");
    }
    if (options.size() > 26) {
        fail(ErrorKind::Data, "TooManyOptions", instance_id + ": option count beyond A..Z");
    }
    if (answer_index < 0 || answer_index >= static_cast<int>(options.size())) {
        fail(ErrorKind::Data, "InstanceInvariant", instance_id + ": answer_index out of range");
    }
    if (answer_letter != answer_letter_for(answer_index)) {
        fail(ErrorKind::Data, "InstanceInvariant",
             instance_id + ": answer_letter does not match answer_index");
    }
}

// ---------------------------------------------------------------------------
// RngStream
// ---------------------------------------------------------------------------

std::uint64_t fnv1a64(const std::string& bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= static_cast<std::uint64_t>(c);
        h *= 0x100000001b3ULL;
    }
    return h;
}

RngStream::RngStream(std::uint64_t seed, const std::vector<std::string>& labels) {
    std::string joined;
    for (size_t i = 0; i < labels.size(); ++i) {
        if (i > 0) joined += '/';
        joined += labels[i];
    }
    state_ = seed ^ fnv1a64(joined);
}

std::uint64_t RngStream::next_u64() {
    state_ += 0x9E3779B97F4A7C15ULL;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

std::uint64_t RngStream::bounded(std::uint64_t n) {
    if (n == 0) fail(ErrorKind::Usage, "EmptyRange", "bounded draw over empty range");
    return next_u64() % n;
}

double RngStream::uniform01() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double RngStream::uniform_open01() { return 1.0 - uniform01(); }

double RngStream::gaussian() {
    if (have_spare_) {
        have_spare_ = false;
        return spare_;
    }
    double u1 = uniform_open01();
    double u2 = uniform01();
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
}

RngStream derive_stream(std::uint64_t seed, std::initializer_list<std::string> labels) {
    return RngStream(seed, std::vector<std::string>(labels));
}

}  // namespace domain
}  // namespace synermed
