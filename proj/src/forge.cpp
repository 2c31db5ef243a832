#include "synermed/forge.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "synermed/parallel.hpp"

namespace synermed::forge {

using domain::Modality;
using domain::RngStream;
using domain::Route;
using ingest::make_image_ref;

void ForgeConfig::validate() const {
    if (k_window < 1) fail(ErrorKind::Usage, "ConfigInvalid", "k_window must be >= 1");
    if (cts_options < 2) fail(ErrorKind::Usage, "ConfigInvalid", "cts_options must be >= 2");
    if (cts_options > 26 || tia_options > 26) {
        fail(ErrorKind::Usage, "ConfigInvalid", "option counts beyond A..Z are rejected");
    }
    if (tia_options < 2) fail(ErrorKind::Usage, "ConfigInvalid", "tia_options must be >= 2");
    if (mi_confusable_weight < 0.0 || mi_confusable_weight > 1.0) {
        fail(ErrorKind::Usage, "ConfigInvalid", "mi_confusable_weight must be in [0,1]");
    }
    if (instances_per_pair.cts < 0 || instances_per_pair.mi < 0 || instances_per_pair.tia < 0) {
        fail(ErrorKind::Usage, "ConfigInvalid", "instances_per_pair counts must be >= 0");
    }
}

namespace {

std::string padded(int value, int width = 5) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%0*d", width, value);
    return buf;
}

std::string make_instance_id(const char* task, const std::string& pair_id, int k, int seq) {
    return std::string(task) + "/" + pair_id + "/" + padded(k) + "/" + padded(seq);
}

void finalize(UnderstandingInstance& inst) {
    inst.answer_letter = domain::answer_letter_for(inst.answer_index);
    inst.meta.template_version = prompts::kTemplateVersion;
    inst.prompt = prompts::render_question(inst);
    inst.validate();
}

// Modality label for a volume as seen from `dataset`'s granularity: coarse
// datasets collapse every MR sequence to the generic MRI label.
Modality granular_modality(Modality m, domain::DatasetTag dataset) {
    if (domain::dataset_distinguishes_mr_sequences(dataset)) return m;
    if (domain::coarse_class(m) == domain::CoarseModality::MRI) return Modality::MR;
    return m;
}

}  // namespace

std::vector<int> balanced_pair_counts(const CorpusManifest& manifest, int per_pair_count,
                                      BalanceBy balance_by) {
    size_t n_pairs = manifest.pairs.size();
    std::vector<int> counts(n_pairs, 0);
    if (n_pairs == 0 || per_pair_count <= 0) return counts;

    // Group pairs by route or dataset; keys sorted for a stable quota split.
    std::map<std::string, std::vector<size_t>> groups;
    for (size_t i = 0; i < n_pairs; ++i) {
        const auto& p = manifest.pairs[i];
        std::string key = balance_by == BalanceBy::Route
                              ? p.route_id
                              : std::string(domain::dataset_token(
                                    domain::route_by_id(p.route_id).dataset));
        groups[key].push_back(i);
    }

    long total = static_cast<long>(per_pair_count) * static_cast<long>(n_pairs);
    long n_groups = static_cast<long>(groups.size());
    long base = total / n_groups;
    long rem = total % n_groups;

    long group_idx = 0;
    for (auto& [key, indices] : groups) {
        long quota = base + (group_idx < rem ? 1 : 0);
        ++group_idx;
        // Distribute the group quota across its pairs, ordered by pair_id.
        std::sort(indices.begin(), indices.end(), [&](size_t a, size_t b) {
            return manifest.pairs[a].pair_id < manifest.pairs[b].pair_id;
        });
        long n = static_cast<long>(indices.size());
        for (long i = 0; i < n; ++i) {
            counts[indices[static_cast<size_t>(i)]] =
                static_cast<int>(quota / n + (i < quota % n ? 1 : 0));
        }
    }
    return counts;
}

// ---------------------------------------------------------------------------
// CTS
// ---------------------------------------------------------------------------

std::vector<UnderstandingInstance> forge_cts(const VolumePair& pair, const ForgeConfig& cfg,
                                             int count) {
    cfg.validate();
    std::vector<UnderstandingInstance> out;
    if (count <= 0) return out;

    int slice_count = pair.slice_count();
    int n_options = cfg.cts_options;
    int k_window = cfg.k_window;

    RngStream anchor_rng(cfg.seed, {"cts-anchors", pair.pair_id});
    std::vector<int> anchor_perm(static_cast<size_t>(slice_count));
    for (int i = 0; i < slice_count; ++i) anchor_perm[static_cast<size_t>(i)] = i;
    anchor_rng.shuffle(anchor_perm);

    for (int seq = 0; seq < count; ++seq) {
        int k = anchor_perm[static_cast<size_t>(seq % slice_count)];
        RngStream rng(cfg.seed, {"cts", pair.pair_id, std::to_string(k)});

        // Clipped hard-negative window {k +/- 1 .. k +/- K}, never k itself.
        std::vector<int> candidates;
        for (int idx = std::max(0, k - k_window); idx <= std::min(slice_count - 1, k + k_window);
             ++idx) {
            if (idx != k) candidates.push_back(idx);
        }
        if (static_cast<int>(candidates.size()) < n_options - 1) {
            fail(ErrorKind::Data, "WindowTooSmall",
                 pair.pair_id + ": anchor k=" + std::to_string(k) + " has only " +
                     std::to_string(candidates.size()) + " window candidates, need " +
                     std::to_string(n_options - 1));
        }
        rng.shuffle(candidates);

        std::string positive_ref = make_image_ref(pair.tgt.volume_id, k);
        std::vector<std::string> options;
        options.push_back(positive_ref);
        for (int i = 0; i < n_options - 1; ++i) {
            options.push_back(make_image_ref(pair.tgt.volume_id, candidates[static_cast<size_t>(i)]));
        }
        rng.shuffle(options);

        UnderstandingInstance inst;
        inst.instance_id = make_instance_id("cts", pair.pair_id, k, seq);
        inst.task = Task::CTS;
        inst.options = options;
        inst.answer_index = static_cast<int>(
            std::find(options.begin(), options.end(), positive_ref) - options.begin());
        inst.image_refs.push_back(make_image_ref(pair.src.volume_id, k));
        for (const std::string& opt : options) inst.image_refs.push_back(opt);
        inst.meta.route_id = pair.route.route_id;
        inst.meta.volume_id = pair.tgt.volume_id;
        inst.meta.slice_index = k;
        inst.meta.k_window = k_window;
        finalize(inst);
        out.push_back(std::move(inst));
    }
    return out;
}

// ---------------------------------------------------------------------------
// MI
// ---------------------------------------------------------------------------

namespace {

std::vector<Modality> mi_universe(const CorpusManifest& manifest, domain::DatasetTag dataset) {
    std::set<int> seen;
    for (const auto& v : manifest.volumes) {
        seen.insert(static_cast<int>(granular_modality(v.modality, dataset)));
    }
    std::vector<Modality> out;
    for (int m : seen) out.push_back(static_cast<Modality>(m));  // enum declaration order
    return out;
}

// Builds one MI question for the given slice: the true label plus distractors
// drawn from the corpus label universe (confusable set of the truth with
// probability mi_confusable_weight, uniform otherwise).
UnderstandingInstance build_mi_instance(const CorpusManifest& manifest,
                                        const std::string& scope_id,
                                        const std::string& route_id,
                                        const ingest::VolumeRef& vol, int k, int seq,
                                        const ForgeConfig& cfg, RngStream& rng) {
    Modality truth = granular_modality(vol.modality, vol.dataset);
    std::vector<Modality> universe = mi_universe(manifest, vol.dataset);
    if (universe.size() < 2) {
        fail(ErrorKind::Data, "DistractorExhausted",
             scope_id + ": corpus has a single modality label, cannot build >= 2 options");
    }
    int n_options = std::min<int>(cfg.cts_options, static_cast<int>(universe.size()));

    std::vector<Modality> others;
    for (Modality m : universe) {
        if (m != truth) others.push_back(m);
    }
    std::vector<Modality> confusable;
    for (Modality m : domain::confusable_modalities(truth)) {
        if (std::find(others.begin(), others.end(), m) != others.end()) {
            confusable.push_back(m);
        }
    }

    bool confusable_draw = rng.uniform01() < cfg.mi_confusable_weight;
    std::vector<Modality> distractors;
    if (confusable_draw && !confusable.empty()) {
        rng.shuffle(confusable);
        for (Modality m : confusable) {
            if (static_cast<int>(distractors.size()) == n_options - 1) break;
            distractors.push_back(m);
        }
    }
    if (static_cast<int>(distractors.size()) < n_options - 1) {
        std::vector<Modality> rest;
        for (Modality m : others) {
            if (std::find(distractors.begin(), distractors.end(), m) == distractors.end()) {
                rest.push_back(m);
            }
        }
        rng.shuffle(rest);
        for (Modality m : rest) {
            if (static_cast<int>(distractors.size()) == n_options - 1) break;
            distractors.push_back(m);
        }
    }

    std::vector<std::string> options;
    options.push_back(domain::modality_label(truth));
    for (Modality m : distractors) options.push_back(domain::modality_label(m));
    rng.shuffle(options);

    UnderstandingInstance inst;
    inst.instance_id = make_instance_id("mi", scope_id, k, seq);
    inst.task = Task::MI;
    inst.options = options;
    inst.answer_index = static_cast<int>(
        std::find(options.begin(), options.end(), domain::modality_label(truth)) -
        options.begin());
    inst.image_refs.push_back(make_image_ref(vol.volume_id, k));
    inst.meta.route_id = route_id;
    inst.meta.volume_id = vol.volume_id;
    inst.meta.slice_index = k;
    finalize(inst);
    return inst;
}

std::vector<UnderstandingInstance> forge_mi_pair(const CorpusManifest& manifest,
                                                 const VolumePair& pair, const ForgeConfig& cfg,
                                                 int count) {
    std::vector<UnderstandingInstance> out;
    for (int seq = 0; seq < count; ++seq) {
        RngStream rng(cfg.seed, {"mi", pair.pair_id, std::to_string(seq)});
        const ingest::VolumeRef& vol = rng.bounded(2) == 0 ? pair.src : pair.tgt;
        int k = static_cast<int>(rng.bounded(static_cast<std::uint64_t>(vol.slice_count())));
        out.push_back(build_mi_instance(manifest, pair.pair_id, pair.route.route_id, vol, k,
                                        seq, cfg, rng));
    }
    return out;
}

}  // namespace

std::vector<UnderstandingInstance> forge_mi(const CorpusManifest& manifest,
                                            const ForgeConfig& cfg, int jobs) {
    cfg.validate();
    if (manifest.volumes.empty()) {
        fail(ErrorKind::Data, "NoVolumes", "manifest contains no volumes");
    }
    std::vector<std::vector<UnderstandingInstance>> chunks;
    if (manifest.pairs.empty()) {
        // Pairless corpus: draw directly from volumes (route_id stays empty).
        chunks.resize(manifest.volumes.size());
        parallel_for(manifest.volumes.size(), jobs, [&](size_t i) {
            const ingest::VolumeRef& vol = manifest.volumes[i];
            for (int seq = 0; seq < cfg.instances_per_pair.mi; ++seq) {
                RngStream rng(cfg.seed, {"mi", vol.volume_id, std::to_string(seq)});
                int k = static_cast<int>(
                    rng.bounded(static_cast<std::uint64_t>(vol.slice_count())));
                chunks[i].push_back(
                    build_mi_instance(manifest, vol.volume_id, "", vol, k, seq, cfg, rng));
            }
        });
    } else {
        std::vector<VolumePair> pairs = manifest.resolved_pairs();
        std::vector<int> counts = balanced_pair_counts(manifest, cfg.instances_per_pair.mi,
                                                       cfg.balance_by);
        chunks.resize(pairs.size());
        parallel_for(pairs.size(), jobs, [&](size_t i) {
            chunks[i] = forge_mi_pair(manifest, pairs[i], cfg, counts[i]);
        });
    }
    std::vector<UnderstandingInstance> out;
    for (auto& chunk : chunks) {
        out.insert(out.end(), std::make_move_iterator(chunk.begin()),
                   std::make_move_iterator(chunk.end()));
    }
    std::sort(out.begin(), out.end(),
              [](const auto& a, const auto& b) { return a.instance_id < b.instance_id; });
    return out;
}

// ---------------------------------------------------------------------------
// TIA
// ---------------------------------------------------------------------------

namespace {

std::vector<UnderstandingInstance> forge_tia_pair(const VolumePair& pair,
                                                  const RouteDescriptionPools& pools,
                                                  const std::vector<std::string>& pool_routes,
                                                  const ForgeConfig& cfg, int count) {
    const std::string& route_id = pair.route.route_id;
    std::string reversed_id = domain::reversed_route(pair.route).route_id;
    bool have_reversed = pools.has_pool(reversed_id);

    std::vector<UnderstandingInstance> out;
    for (int seq = 0; seq < count; ++seq) {
        RngStream rng(cfg.seed, {"tia", pair.pair_id, std::to_string(seq)});
        int k = static_cast<int>(rng.bounded(static_cast<std::uint64_t>(pair.slice_count())));

        const auto& positive_pool = pools.pool(route_id);
        std::string positive = positive_pool[rng.bounded(positive_pool.size())];

        // Option text -> owning route, used to emit distractor_route_ids in
        // final option order.
        std::map<std::string, std::string> option_route;
        option_route[positive] = route_id;

        std::vector<std::string> options{positive};
        int needed = cfg.tia_options - 1;
        if (have_reversed && needed > 0) {
            // Exactly one swapped-direction distractor of the same modality pair.
            const auto& rev_pool = pools.pool(reversed_id);
            std::string d = rev_pool[rng.bounded(rev_pool.size())];
            option_route[d] = reversed_id;
            options.push_back(d);
            --needed;
        }

        std::vector<std::string> other_routes;
        for (const std::string& r : pool_routes) {
            if (r != route_id && r != reversed_id) other_routes.push_back(r);
        }
        if (static_cast<int>(other_routes.size()) < needed) {
            fail(ErrorKind::Data, "DistractorExhausted",
                 pair.pair_id + ": pools cover too few routes for " +
                     std::to_string(cfg.tia_options) + " options");
        }
        rng.shuffle(other_routes);
        for (int i = 0; i < needed; ++i) {
            const std::string& r = other_routes[static_cast<size_t>(i)];
            const auto& pool = pools.pool(r);
            std::string d = pool[rng.bounded(pool.size())];
            option_route[d] = r;
            options.push_back(d);
        }
        rng.shuffle(options);

        UnderstandingInstance inst;
        inst.instance_id = make_instance_id("tia", pair.pair_id, k, seq);
        inst.task = Task::TIA;
        inst.options = options;
        inst.answer_index = static_cast<int>(
            std::find(options.begin(), options.end(), positive) - options.begin());
        inst.image_refs.push_back(make_image_ref(pair.src.volume_id, k));
        inst.image_refs.push_back(make_image_ref(pair.tgt.volume_id, k));
        inst.meta.route_id = route_id;
        inst.meta.volume_id = pair.src.volume_id;
        inst.meta.slice_index = k;
        for (int i = 0; i < static_cast<int>(options.size()); ++i) {
            if (i == inst.answer_index) continue;
            inst.meta.distractor_route_ids.push_back(option_route.at(options[static_cast<size_t>(i)]));
        }
        finalize(inst);
        out.push_back(std::move(inst));
    }
    return out;
}

}  // namespace

std::vector<UnderstandingInstance> forge_tia(const CorpusManifest& manifest,
                                             const RouteDescriptionPools& pools,
                                             const ForgeConfig& cfg, int jobs) {
    cfg.validate();
    std::vector<VolumePair> pairs = manifest.resolved_pairs();
    for (const VolumePair& p : pairs) {
        if (!pools.has_pool(p.route.route_id)) {
            fail(ErrorKind::Data, "PoolMissing",
                 p.pair_id + ": no description pool for route " + p.route.route_id);
        }
    }
    // Routes with pools, in catalog order.
    std::vector<std::string> pool_routes;
    for (const Route& r : domain::route_catalog()) {
        if (pools.has_pool(r.route_id)) pool_routes.push_back(r.route_id);
    }

    std::vector<int> counts = balanced_pair_counts(manifest, cfg.instances_per_pair.tia,
                                                   cfg.balance_by);
    std::vector<std::vector<UnderstandingInstance>> per_pair(pairs.size());
    parallel_for(pairs.size(), jobs, [&](size_t i) {
        per_pair[i] = forge_tia_pair(pairs[i], pools, pool_routes, cfg, counts[i]);
    });
    std::vector<UnderstandingInstance> out;
    for (auto& chunk : per_pair) {
        out.insert(out.end(), std::make_move_iterator(chunk.begin()),
                   std::make_move_iterator(chunk.end()));
    }
    std::sort(out.begin(), out.end(),
              [](const auto& a, const auto& b) { return a.instance_id < b.instance_id; });
    return out;
}

std::vector<UnderstandingInstance> forge_cts_all(const CorpusManifest& manifest,
                                                 const ForgeConfig& cfg, int jobs) {
    cfg.validate();
    std::vector<VolumePair> pairs = manifest.resolved_pairs();
    std::vector<int> counts = balanced_pair_counts(manifest, cfg.instances_per_pair.cts,
                                                   cfg.balance_by);
    std::vector<std::vector<UnderstandingInstance>> per_pair(pairs.size());
    parallel_for(pairs.size(), jobs, [&](size_t i) {
        per_pair[i] = forge_cts(pairs[i], cfg, counts[i]);
    });
    std::vector<UnderstandingInstance> out;
    for (auto& chunk : per_pair) {
        out.insert(out.end(), std::make_move_iterator(chunk.begin()),
                   std::make_move_iterator(chunk.end()));
    }
    std::sort(out.begin(), out.end(),
              [](const auto& a, const auto& b) { return a.instance_id < b.instance_id; });
    return out;
}

ForgeOutput forge_corpus(const CorpusManifest& manifest, const RouteDescriptionPools& pools,
                         const ForgeConfig& cfg, int jobs) {
    ForgeOutput out;
    out.cts = forge_cts_all(manifest, cfg, jobs);
    out.mi = forge_mi(manifest, cfg, jobs);
    out.tia = forge_tia(manifest, pools, cfg, jobs);
    return out;
}

// ---------------------------------------------------------------------------
// JSONL
// ---------------------------------------------------------------------------

namespace {

nlohmann::ordered_json instance_to_json(const UnderstandingInstance& inst) {
    nlohmann::ordered_json j;
    j["instance_id"] = inst.instance_id;
    j["task"] = domain::task_token(inst.task);
    j["prompt"] = inst.prompt;
    j["image_refs"] = inst.image_refs;
    j["options"] = inst.options;
    j["answer_index"] = inst.answer_index;
    j["answer_letter"] = std::string(1, inst.answer_letter);
    nlohmann::ordered_json meta;
    meta["route_id"] = inst.meta.route_id;
    meta["volume_id"] = inst.meta.volume_id;
    meta["slice_index"] = inst.meta.slice_index;
    if (inst.task == Task::CTS) meta["k_window"] = inst.meta.k_window;
    if (inst.task == Task::TIA) meta["distractor_route_ids"] = inst.meta.distractor_route_ids;
    meta["template_version"] = inst.meta.template_version;
    j["meta"] = std::move(meta);
    return j;
}

UnderstandingInstance instance_from_json(const nlohmann::json& j) {
    UnderstandingInstance inst;
    inst.instance_id = j.at("instance_id").get<std::string>();
    inst.task = domain::task_from_token(j.at("task").get<std::string>());
    inst.prompt = j.at("prompt").get<std::string>();
    inst.image_refs = j.at("image_refs").get<std::vector<std::string>>();
    inst.options = j.at("options").get<std::vector<std::string>>();
    inst.answer_index = j.at("answer_index").get<int>();
    std::string letter = j.at("answer_letter").get<std::string>();
    if (letter.size() != 1) {
        fail(ErrorKind::Data, "SchemaError", inst.instance_id + ": answer_letter must be 1 char");
    }
    inst.answer_letter = letter[0];
    const auto& meta = j.at("meta");
    inst.meta.route_id = meta.at("route_id").get<std::string>();
    inst.meta.volume_id = meta.at("volume_id").get<std::string>();
    inst.meta.slice_index = meta.at("slice_index").get<int>();
    if (meta.contains("k_window")) inst.meta.k_window = meta.at("k_window").get<int>();
    if (meta.contains("distractor_route_ids")) {
        inst.meta.distractor_route_ids =
            meta.at("distractor_route_ids").get<std::vector<std::string>>();
    }
    inst.meta.template_version = meta.at("template_version").get<int>();
    inst.validate();
    return inst;
}

}  // namespace

size_t emit_jsonl(const std::vector<UnderstandingInstance>& instances,
                  const std::filesystem::path& path) {
    std::vector<const UnderstandingInstance*> sorted;
    sorted.reserve(instances.size());
    for (const auto& inst : instances) {
        inst.validate();
        sorted.push_back(&inst);
    }
    std::sort(sorted.begin(), sorted.end(),
              [](const auto* a, const auto* b) { return a->instance_id < b->instance_id; });

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::Data, "IoError", "cannot write " + path.string());
    for (const auto* inst : sorted) {
        out << instance_to_json(*inst).dump() << "\n";
    }
    if (!out) fail(ErrorKind::Data, "IoError", "short write to " + path.string());
    return sorted.size();
}

std::vector<UnderstandingInstance> read_jsonl(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::Data, "IoError", "cannot open " + path.string());
    std::vector<UnderstandingInstance> out;
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            out.push_back(instance_from_json(nlohmann::json::parse(line)));
        } catch (const nlohmann::json::exception& e) {
            fail(ErrorKind::Data, "SchemaError",
                 path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return out;
}

}  // namespace synermed::forge
