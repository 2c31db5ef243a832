#include "synermed/prompts.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace synermed::prompts {

using domain::DatasetTag;
using domain::Modality;
using domain::Task;

namespace {

const char* region_word(DatasetTag d) {
    switch (d) {
        case DatasetTag::SYNTHRAD_BRAIN: return "brain";
        case DatasetTag::SYNTHRAD_PELVIS: return "pelvic";
        case DatasetTag::AUTOPET: return "whole-body";
        case DatasetTag::BRATS: return "brain tumor";
    }
    return "";
}

// Six routes ship hand-written long-form prompts; the rest are generated from
// the change/invariance schema below.
const std::map<std::string, std::string>& curated_synthesis_prompts() {
    static const std::map<std::string, std::string> prompts = {
        {"synthrad_pelvis/ct_to_cbct",
         "Convert a non-contrast pelvic CT slice to a CBCT-like appearance. Keep anatomy, "
         "voxel grid, field-of-view, slice position, and lesion morphology strictly unchanged "
         "(1:1 mapping). Modify only photometric/texture properties. CBCT appearance "
         "constraints (ONLY IF VISIBLE): \xE2\x80\xA2 Lower soft-tissue contrast vs diagnostic "
         "CT; HU compression acceptable. \xE2\x80\xA2 Add realistic, moderate CBCT texture: "
         "granular noise, mild cone-beam streaks/flare, slight ring artifacts; must not hide "
         "organ boundaries. \xE2\x80\xA2 Gentle scatter shading/cupping permissible; avoid "
         "strong vignetting or truncation that alters anatomy. Preserve stones/hardware "
         "geometry and position. No hallucinated anatomy or warping."},
        {"autopet/pet_to_ct",
         "Convert an PET whole-body slice to a non-contrast diagnostic CT appearance. Keep "
         "anatomy, voxel grid, field-of-view, slice position, and lesion morphology strictly "
         "unchanged (1:1 mapping). Modify ONLY contrast to emulate CT attenuation. CT "
         "constraints (ONLY IF VISIBLE): \xE2\x80\xA2 Cortical/trabecular bone -> bright to "
         "very bright; air spaces -> near-black. \xE2\x80\xA2 Soft-tissue HU ordering: fat < "
         "water (mid-gray) < muscle/solid organs < bone. \xE2\x80\xA2 Remove PET blur/halo "
         "appearance; produce realistic diagnostic CT noise/edge sharpness. No "
         "iodinated-contrast patterns or invented anatomy; preserve exact geometry."},
        {"synthrad_brain/ct_to_mr",
         "Convert a non-contrast brain CT slice to a non-contrast structural MRI (T1-like) "
         "appearance. Keep anatomy, voxel grid, field-of-view, slice position and lesion "
         "morphology strictly unchanged (1:1 mapping). Modify ONLY soft-tissue signal "
         "relationships to emulate MRI. MRI (T1-like) constraints (ONLY IF VISIBLE): "
         "\xE2\x80\xA2 Cortical bone and air -> near-black. \xE2\x80\xA2 White matter slightly "
         "brighter than gray matter. \xE2\x80\xA2 Ventricles/sulci -> CSF dark with sharp "
         "boundaries. \xE2\x80\xA2 Remove CT-specific streaks/beam hardening cues. No "
         "gadolinium enhancement patterns, no invented anatomy; preserve exact geometry and "
         "realistic MRI-like texture."},
        {"brats/t2_to_t1ce",
         "Generate a post-contrast MRI FLAIR (T1-weighted Contrast-Enhanced Magnetic Resonance "
         "Imaging) depiction from the MRI FLAIR (Fluid-Attenuated Inversion Recovery (FLAIR) "
         "Magnetic Resonance Imaging) slice while rigorously preserving anatomy. Remove "
         "FLAIR-specific CSF suppression characteristics, enforce T1-like baseline (dark CSF), "
         "and add anatomically plausible enhancement (vessels, dura, genuinely enhancing tumor "
         "regions) without altering lesion size or shape. No artificial structures; maintain "
         "resolution and field-of-view."},
        {"brats/t2_to_t1",
         "Render a faithful MRI T1 (T1-weighted Magnetic Resonance Imaging) version from the "
         "MRI T2 (T2-weighted Magnetic Resonance Imaging) slice by changing contrast only. In "
         "MRI T1, CSF should be dark; white matter typically brighter than gray matter; no "
         "contrast-agent signatures should appear. Exact geometry, field-of-view, and lesion "
         "morphology must be preserved; avoid hallucinations."},
        {"brats/t1_to_t2",
         "Convert this MRI T1 (T1-weighted Magnetic Resonance Imaging) slice into a "
         "fluid-sensitive MRI T2 (T2-weighted Magnetic Resonance Imaging) depiction. Preserve "
         "geometry exactly; alter only signal relationships so CSF/free fluid becomes bright, "
         "vasogenic edema and many lesions trend hyperintense, and -- on MRI T2 -- white "
         "matter appears darker than gray matter (contrast direction reversed from T1). "
         "Exclude any contrast-agent effects; no structure may be added, removed, or "
         "reshaped."},
    };
    return prompts;
}

std::string schema_synthesis_prompt(const domain::Route& r) {
    std::ostringstream out;
    out << "Convert this " << region_word(r.dataset) << " " << domain::modality_long_name(r.src)
        << " slice into a " << domain::modality_long_name(r.tgt)
        << " appearance. Modify only modality-dependent intensity, contrast, and texture so "
           "the output matches "
        << domain::modality_label(r.tgt)
        << " characteristics. Keep anatomy, field-of-view, slice position, and lesion "
           "morphology strictly unchanged (1:1 mapping). No hallucinated anatomy.";
    return out.str();
}

std::vector<std::string> route_description_pool(const domain::Route& r) {
    const char* region = region_word(r.dataset);
    const char* src = domain::modality_label(r.src);
    const char* tgt = domain::modality_label(r.tgt);
    std::vector<std::string> pool;
    {
        std::ostringstream s;
        s << "A " << region << " " << src << " slice is translated to " << tgt
          << ": modality-specific contrast and texture change while anatomy and slice "
             "position stay fixed.";
        pool.push_back(s.str());
    }
    {
        std::ostringstream s;
        s << "This " << region << " " << src << " slice becomes a " << tgt
          << " slice; only the imaging appearance shifts, and structures and lesions remain "
             "identical.";
        pool.push_back(s.str());
    }
    {
        std::ostringstream s;
        s << "Cross-modality synthesis of a " << region << " slice from " << src << " to "
          << tgt << ", preserving patient anatomy and changing only " << tgt
          << "-characteristic intensity.";
        pool.push_back(s.str());
    }
    return pool;
}

}  // namespace

const std::vector<std::string>& RouteDescriptionPools::pool(const std::string& route_id) const {
    auto it = descriptions.find(route_id);
    if (it == descriptions.end() || it->second.empty()) {
        fail(ErrorKind::Data, "PoolMissing", "no description pool for route " + route_id);
    }
    return it->second;
}

bool RouteDescriptionPools::has_pool(const std::string& route_id) const {
    auto it = descriptions.find(route_id);
    return it != descriptions.end() && !it->second.empty();
}

const std::string& RouteDescriptionPools::route_of_description(
    const std::string& description) const {
    for (const auto& [route_id, pool] : descriptions) {
        for (const std::string& d : pool) {
            if (d == description) return route_id;
        }
    }
    fail(ErrorKind::Data, "UnknownDescription",
         "description does not belong to any pool: " + description);
}

void RouteDescriptionPools::validate() const {
    std::set<std::string> seen;
    for (const auto& [route_id, pool] : descriptions) {
        if (!domain::route_exists(route_id)) {
            fail(ErrorKind::Data, "UnknownRoute", "pool for unknown route: " + route_id);
        }
        if (pool.size() < 3) {
            fail(ErrorKind::Data, "PoolTooSmall",
                 route_id + ": description pool needs at least 3 entries");
        }
        for (const std::string& d : pool) {
            if (!seen.insert(d).second) {
                fail(ErrorKind::Data, "DuplicateDescription",
                     route_id + ": description appears in more than one pool entry: " + d);
            }
        }
    }
    for (const domain::Route& r : domain::route_catalog()) {
        if (!has_pool(r.route_id)) {
            fail(ErrorKind::Data, "PoolMissing", "catalog route lacks a pool: " + r.route_id);
        }
        if (synthesis_prompts.find(r.route_id) == synthesis_prompts.end()) {
            fail(ErrorKind::Data, "PoolMissing",
                 "catalog route lacks a synthesis prompt: " + r.route_id);
        }
    }
}

const RouteDescriptionPools& default_pools() {
    static const RouteDescriptionPools pools = [] {
        RouteDescriptionPools p;
        const auto& curated = curated_synthesis_prompts();
        for (const domain::Route& r : domain::route_catalog()) {
            p.descriptions[r.route_id] = route_description_pool(r);
            auto it = curated.find(r.route_id);
            p.synthesis_prompts[r.route_id] =
                it != curated.end() ? it->second : schema_synthesis_prompt(r);
        }
        p.validate();
        return p;
    }();
    return pools;
}

RouteDescriptionPools load_pools(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::Data, "IoError", "cannot open pools file " + path.string());
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        fail(ErrorKind::Data, "SchemaError", "pools file is not valid JSON: " + std::string(e.what()));
    }
    if (!doc.is_object()) {
        fail(ErrorKind::Data, "SchemaError", "pools root must be an object of route_id -> strings");
    }
    RouteDescriptionPools pools = default_pools();
    for (auto it = doc.begin(); it != doc.end(); ++it) {
        if (!it.value().is_array()) {
            fail(ErrorKind::Data, "SchemaError", "pool for " + it.key() + " must be an array");
        }
        std::vector<std::string> pool;
        for (const auto& d : it.value()) {
            if (!d.is_string()) {
                fail(ErrorKind::Data, "SchemaError",
                     "pool entries for " + it.key() + " must be strings");
            }
            pool.push_back(d.get<std::string>());
        }
        pools.descriptions[it.key()] = std::move(pool);
    }
    pools.validate();
    return pools;
}

std::string render_synthesis_prompt(const domain::Route& route) {
    return default_pools().synthesis_prompts.at(route.route_id);
}

std::string render_synthesis_prompt(const std::string& route_id) {
    return render_synthesis_prompt(domain::route_by_id(route_id));
}

std::string render_question(const UnderstandingInstance& instance) {
    std::ostringstream out;
    switch (instance.task) {
        case Task::CTS: {
            const domain::Route& route = domain::route_by_id(instance.meta.route_id);
            out << "Conditional target selection. You are given a source "
                << domain::modality_label(route.src) << " slice: <image_1>.\n"
                << "Select the " << domain::modality_label(route.tgt)
                << " slice that is the exact paired target at the same slice position.\n";
            for (size_t i = 0; i < instance.options.size(); ++i) {
                out << domain::answer_letter_for(static_cast<int>(i)) << ". <image_"
                    << (i + 2) << ">\n";
            }
            break;
        }
        case Task::MI: {
            out << "Modality identification. What is the imaging modality of this slice? "
                   "<image_1>\n";
            for (size_t i = 0; i < instance.options.size(); ++i) {
                out << domain::answer_letter_for(static_cast<int>(i)) << ". "
                    << instance.options[i] << "\n";
            }
            break;
        }
        case Task::TIA: {
            out << "Transformation instruction alignment. Observe the aligned pair: source "
                   "<image_1> and target <image_2>.\n"
                << "Which description matches the transformation from source to target?\n";
            for (size_t i = 0; i < instance.options.size(); ++i) {
                out << domain::answer_letter_for(static_cast<int>(i)) << ". "
                    << instance.options[i] << "\n";
            }
            break;
        }
    }
    out << "Answer with a single option letter.";
    return out.str();
}

}  // namespace synermed::prompts
