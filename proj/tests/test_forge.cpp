#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "synermed/forge.hpp"

using namespace synermed;
using namespace synermed::forge;
using domain::Modality;
using domain::Task;
using ingest::CorpusManifest;
using ingest::VolumeRef;

namespace {

VolumeRef make_volume(const std::string& id, domain::DatasetTag dataset, Modality modality,
                      int slices) {
    VolumeRef v;
    v.volume_id = id;
    v.dataset = dataset;
    v.modality = modality;
    v.width = 32;
    v.height = 32;
    for (int k = 0; k < slices; ++k) {
        v.slice_paths.push_back(id + "/s" + std::to_string(k) + ".pgm");
    }
    return v;
}

// In-memory manifest; forging never touches pixels, only ids and counts.
CorpusManifest brats_manifest(int n_patients, int slices) {
    CorpusManifest m;
    m.schema_version = 1;
    for (int p = 0; p < n_patients; ++p) {
        std::string pp = p < 10 ? "0" + std::to_string(p) : std::to_string(p);
        m.volumes.push_back(make_volume("p" + pp + "_brats_t1", domain::DatasetTag::BRATS,
                                        Modality::MR_T1, slices));
        m.volumes.push_back(make_volume("p" + pp + "_brats_t2", domain::DatasetTag::BRATS,
                                        Modality::MR_T2, slices));
        m.pairs.push_back({"pair_t1t2_p" + pp, "brats/t1_to_t2", "p" + pp + "_brats_t1",
                           "p" + pp + "_brats_t2"});
        m.pairs.push_back({"pair_t2t1_p" + pp, "brats/t2_to_t1", "p" + pp + "_brats_t2",
                           "p" + pp + "_brats_t1"});
    }
    m.validate();
    return m;
}

CorpusManifest synthrad_ct_cbct_manifest(int slices = 20) {
    CorpusManifest m;
    m.schema_version = 1;
    m.volumes.push_back(make_volume("p00_sb_ct", domain::DatasetTag::SYNTHRAD_BRAIN,
                                    Modality::CT, slices));
    m.volumes.push_back(make_volume("p00_sb_cbct", domain::DatasetTag::SYNTHRAD_BRAIN,
                                    Modality::CBCT, slices));
    m.pairs.push_back({"pair_ct_cbct_p00", "synthrad_brain/ct_to_cbct", "p00_sb_ct",
                       "p00_sb_cbct"});
    m.validate();
    return m;
}

int delta_of(const UnderstandingInstance& inst, const std::string& option) {
    auto [vol, k] = ingest::parse_image_ref(option);
    return k - inst.meta.slice_index;
}

}  // namespace

TEST_CASE("CTS negatives stay inside the clipped window and one positive exists") {
    CorpusManifest m = brats_manifest(1, 100);
    auto pairs = m.resolved_pairs();
    ForgeConfig cfg;
    cfg.seed = 11;
    cfg.k_window = 5;
    cfg.cts_options = 4;

    auto instances = forge_cts(pairs[0], cfg, 100);  // anchors cover all slices
    CHECK(instances.size() == 100);
    for (const auto& inst : instances) {
        int positives = 0;
        for (size_t j = 0; j < inst.options.size(); ++j) {
            int delta = delta_of(inst, inst.options[j]);
            if (delta == 0) {
                ++positives;
                CHECK(static_cast<int>(j) == inst.answer_index);
            } else {
                CHECK(std::abs(delta) >= 1);
                CHECK(std::abs(delta) <= cfg.k_window);
            }
        }
        CHECK(positives == 1);
        CHECK(inst.image_refs.size() == inst.options.size() + 1);
        // Negatives are drawn without replacement.
        std::set<std::string> unique(inst.options.begin(), inst.options.end());
        CHECK(unique.size() == inst.options.size());
    }
}

TEST_CASE("CTS at the volume boundary clips the window") {
    CorpusManifest m = brats_manifest(1, 40);
    auto pairs = m.resolved_pairs();
    ForgeConfig cfg;
    cfg.seed = 3;
    cfg.k_window = 2;
    cfg.cts_options = 3;

    auto instances = forge_cts(pairs[0], cfg, 40);
    bool saw_boundary = false;
    for (const auto& inst : instances) {
        if (inst.meta.slice_index != 0) continue;
        saw_boundary = true;
        for (const auto& opt : inst.options) {
            int delta = delta_of(inst, opt);
            if (delta != 0) CHECK((delta == 1 || delta == 2));
        }
    }
    CHECK(saw_boundary);
}

TEST_CASE("CTS with too few candidates is WindowTooSmall") {
    CorpusManifest m = brats_manifest(1, 3);
    auto pairs = m.resolved_pairs();
    ForgeConfig cfg;
    cfg.seed = 1;
    cfg.k_window = 5;
    cfg.cts_options = 5;
    CHECK_THROWS_WITH_AS(forge_cts(pairs[0], cfg, 1), doctest::Contains("window candidates"),
                         Error);
}

TEST_CASE("CTS meta records the window and target volume") {
    CorpusManifest m = brats_manifest(1, 30);
    auto pairs = m.resolved_pairs();
    ForgeConfig cfg;
    cfg.seed = 5;
    auto instances = forge_cts(pairs[0], cfg, 4);
    for (const auto& inst : instances) {
        CHECK(inst.meta.k_window == cfg.k_window);
        CHECK(inst.meta.volume_id == pairs[0].tgt.volume_id);
        CHECK(inst.meta.route_id == "brats/t1_to_t2");
        CHECK(inst.prompt.find("MRI T2") != std::string::npos);
    }
}

TEST_CASE("MI confusable draws include the confusable modality") {
    CorpusManifest m = synthrad_ct_cbct_manifest();
    ForgeConfig cfg;
    cfg.seed = 17;
    cfg.mi_confusable_weight = 1.0;  // always confusable
    cfg.instances_per_pair.mi = 50;
    auto instances = forge_mi(m, cfg);
    CHECK(instances.size() == 50);
    for (const auto& inst : instances) {
        bool truth_is_ct_family = inst.options[static_cast<size_t>(inst.answer_index)] == "CT" ||
                                  inst.options[static_cast<size_t>(inst.answer_index)] == "CBCT";
        REQUIRE(truth_is_ct_family);
        // CT and CBCT are mutual confusables; with weight 1 both must appear.
        CHECK(std::find(inst.options.begin(), inst.options.end(), "CT") != inst.options.end());
        CHECK(std::find(inst.options.begin(), inst.options.end(), "CBCT") != inst.options.end());
    }
}

TEST_CASE("MI on a single-modality corpus is DistractorExhausted") {
    CorpusManifest m;
    m.schema_version = 1;
    m.volumes.push_back(make_volume("p00_brats_t1", domain::DatasetTag::BRATS, Modality::MR_T1,
                                    10));
    m.validate();
    ForgeConfig cfg;
    cfg.instances_per_pair.mi = 1;
    CHECK_THROWS_WITH_AS(forge_mi(m, cfg), doctest::Contains("single modality"), Error);
}

TEST_CASE("MI on an empty corpus is NoVolumes") {
    CorpusManifest m;
    m.schema_version = 1;
    ForgeConfig cfg;
    CHECK_THROWS_WITH_AS(forge_mi(m, cfg), doctest::Contains("no volumes"), Error);
}

TEST_CASE("MI answer positions are roughly uniform") {
    CorpusManifest m = brats_manifest(4, 24);
    ForgeConfig cfg;
    cfg.seed = 23;
    cfg.instances_per_pair.mi = 250;
    auto instances = forge_mi(m, cfg);
    REQUIRE(instances.size() == 2000);
    std::map<int, int> position_counts;
    for (const auto& inst : instances) {
        CHECK(inst.options.size() == 2);  // corpus has two modality labels
        ++position_counts[inst.answer_index];
    }
    for (const auto& [pos, count] : position_counts) {
        CHECK(std::abs(count / 2000.0 - 0.5) < 0.05);
    }
}

TEST_CASE("TIA includes a swapped-direction distractor when the reversed pool exists") {
    CorpusManifest m = brats_manifest(2, 20);
    const auto& pools = prompts::default_pools();
    ForgeConfig cfg;
    cfg.seed = 29;
    cfg.instances_per_pair.tia = 25;
    auto instances = forge_tia(m, pools, cfg);
    CHECK(instances.size() == 100);
    for (const auto& inst : instances) {
        std::string reversed = domain::reversed_route(domain::route_by_id(inst.meta.route_id))
                                   .route_id;
        CHECK(inst.meta.distractor_route_ids.size() == inst.options.size() - 1);
        int swapped = 0;
        for (const auto& r : inst.meta.distractor_route_ids) {
            if (r == reversed) ++swapped;
        }
        CHECK(swapped == 1);
        // Exactly one option belongs to the true route's pool.
        int positives = 0;
        for (const auto& opt : inst.options) {
            if (pools.route_of_description(opt) == inst.meta.route_id) ++positives;
        }
        CHECK(positives == 1);
    }
}

TEST_CASE("TIA with only the true route pooled is DistractorExhausted") {
    CorpusManifest m = brats_manifest(1, 20);
    prompts::RouteDescriptionPools pools;
    pools.descriptions["brats/t1_to_t2"] = {"one", "two", "three"};
    pools.synthesis_prompts["brats/t1_to_t2"] = "prompt";
    ForgeConfig cfg;
    cfg.tia_options = 4;
    cfg.instances_per_pair.tia = 1;
    // Restrict to the single pooled route.
    m.pairs.erase(std::remove_if(m.pairs.begin(), m.pairs.end(),
                                 [](const auto& p) { return p.route_id != "brats/t1_to_t2"; }),
                  m.pairs.end());
    CHECK_THROWS_WITH_AS(forge_tia(m, pools, cfg), doctest::Contains("too few routes"), Error);
}

TEST_CASE("TIA missing pool is PoolMissing") {
    CorpusManifest m = brats_manifest(1, 20);
    prompts::RouteDescriptionPools pools;  // empty
    ForgeConfig cfg;
    cfg.instances_per_pair.tia = 1;
    CHECK_THROWS_WITH_AS(forge_tia(m, pools, cfg), doctest::Contains("no description pool"),
                         Error);
}

TEST_CASE("forging is deterministic and independent of thread count") {
    CorpusManifest m = brats_manifest(3, 24);
    const auto& pools = prompts::default_pools();
    ForgeConfig cfg;
    cfg.seed = 31;
    cfg.instances_per_pair = {6, 4, 4};

    ForgeOutput a = forge_corpus(m, pools, cfg, 1);
    ForgeOutput b = forge_corpus(m, pools, cfg, 8);

    auto dir = std::filesystem::temp_directory_path() / "synermed_forge_det";
    std::filesystem::create_directories(dir);
    emit_jsonl(a.cts, dir / "a.jsonl");
    emit_jsonl(b.cts, dir / "b.jsonl");
    emit_jsonl(a.tia, dir / "a_tia.jsonl");
    emit_jsonl(b.tia, dir / "b_tia.jsonl");
    for (const char* pair : {"a.jsonl b.jsonl", "a_tia.jsonl b_tia.jsonl"}) {
        std::string first(pair), second;
        second = first.substr(first.find(' ') + 1);
        first = first.substr(0, first.find(' '));
        std::ifstream fa(dir / first, std::ios::binary), fb(dir / second, std::ios::binary);
        std::string ca((std::istreambuf_iterator<char>(fa)), std::istreambuf_iterator<char>());
        std::string cb((std::istreambuf_iterator<char>(fb)), std::istreambuf_iterator<char>());
        CHECK(ca == cb);
        CHECK(!ca.empty());
    }
    std::filesystem::remove_all(dir);
}

TEST_CASE("emit_jsonl writes sorted lines that round-trip") {
    CorpusManifest m = brats_manifest(1, 20);
    const auto& pools = prompts::default_pools();
    ForgeConfig cfg;
    cfg.seed = 37;
    cfg.instances_per_pair = {3, 0, 0};
    auto instances = forge_cts_all(m, cfg);

    auto dir = std::filesystem::temp_directory_path() / "synermed_emit";
    std::filesystem::create_directories(dir);

    SUBCASE("empty list gives an empty file") {
        CHECK(emit_jsonl({}, dir / "empty.jsonl") == 0);
        CHECK(std::filesystem::file_size(dir / "empty.jsonl") == 0);
    }

    SUBCASE("instances round-trip exactly") {
        size_t n = emit_jsonl(instances, dir / "cts.jsonl");
        CHECK(n == instances.size());
        auto back = read_jsonl(dir / "cts.jsonl");
        REQUIRE(back.size() == instances.size());
        // emit sorts by instance_id; forge_cts_all output is already sorted.
        for (size_t i = 0; i < back.size(); ++i) {
            CHECK(back[i].instance_id == instances[i].instance_id);
            CHECK(back[i].prompt == instances[i].prompt);
            CHECK(back[i].options == instances[i].options);
            CHECK(back[i].answer_index == instances[i].answer_index);
            CHECK(back[i].meta.route_id == instances[i].meta.route_id);
            CHECK(back[i].meta.k_window == instances[i].meta.k_window);
        }
        (void)pools;
    }
    std::filesystem::remove_all(dir);
}

TEST_CASE("route balancing keeps per-route totals within one") {
    // 3 patients on t1<->t2 plus 1 extra pair on t1->t1ce: unequal pair counts.
    CorpusManifest m = brats_manifest(3, 24);
    m.volumes.push_back(make_volume("p00_brats_t1ce", domain::DatasetTag::BRATS,
                                    Modality::MR_T1CE, 24));
    m.pairs.push_back({"pair_t1t1ce_p00", "brats/t1_to_t1ce", "p00_brats_t1", "p00_brats_t1ce"});
    m.validate();

    ForgeConfig cfg;
    cfg.seed = 41;
    cfg.instances_per_pair.cts = 6;
    cfg.balance_by = BalanceBy::Route;
    auto instances = forge_cts_all(m, cfg);
    std::map<std::string, int> per_route;
    for (const auto& inst : instances) ++per_route[inst.meta.route_id];
    REQUIRE(per_route.size() == 3);
    int lo = 1 << 30, hi = 0;
    for (const auto& [route, count] : per_route) {
        lo = std::min(lo, count);
        hi = std::max(hi, count);
    }
    CHECK(hi - lo <= 1);
    CHECK(instances.size() == 6u * m.pairs.size());
}
