#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "synermed/domain.hpp"

namespace synermed::prompts {

using domain::Route;
using domain::UnderstandingInstance;

/// Question/option templates are versioned so forged corpora stay traceable
/// when wording evolves; the version is stamped into every instance's meta.
constexpr int kTemplateVersion = 1;

/// Per-route text assets: a pool of short transformation descriptions used as
/// TIA options (>= 3 each, globally unique so a description identifies its
/// route), plus one long-form synthesis prompt used as generation
/// conditioning text.
struct RouteDescriptionPools {
    std::map<std::string, std::vector<std::string>> descriptions;
    std::map<std::string, std::string> synthesis_prompts;

    const std::vector<std::string>& pool(const std::string& route_id) const;
    bool has_pool(const std::string& route_id) const;
    /// Reverse lookup: which route a description belongs to.
    const std::string& route_of_description(const std::string& description) const;

    void validate() const;
};

/// The built-in pools covering every catalog route.
const RouteDescriptionPools& default_pools();

/// Loads a descriptions file (JSON object: route_id -> array of strings) and
/// merges it over the defaults; synthesis prompts stay built-in.
RouteDescriptionPools load_pools(const std::filesystem::path& path);

/// Long-form conditioning prompt for a route. Errors: UnknownRoute.
std::string render_synthesis_prompt(const Route& route);
std::string render_synthesis_prompt(const std::string& route_id);

/// Deterministic question text: task preamble, "<image_i>" placeholders in
/// image_refs order, lettered options, and the single-letter answer
/// instruction. Works from the structural fields; ignores instance.prompt.
std::string render_question(const UnderstandingInstance& instance);

}  // namespace synermed::prompts
