#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <set>

#include "synermed/domain.hpp"

using namespace synermed;
using namespace synermed::domain;

TEST_CASE("route catalog has exactly 22 directed routes") {
    const auto& catalog = route_catalog();
    CHECK(catalog.size() == 22);

    std::set<std::string> ids;
    for (const Route& r : catalog) {
        CHECK(r.src != r.tgt);
        CHECK(dataset_allows(r.dataset, r.src));
        CHECK(dataset_allows(r.dataset, r.tgt));
        CHECK(ids.insert(r.route_id).second);  // unique
    }
    CHECK(ids.count("brats/t2_to_t1ce") == 1);
    CHECK(ids.count("synthrad_brain/cbct_to_ct") == 1);
    CHECK(ids.count("synthrad_pelvis/ct_to_cbct") == 1);
    CHECK(ids.count("autopet/ct_to_pet") == 1);
    CHECK(ids.count("autopet/pet_to_ct") == 1);
    // SynthRAD never pairs CBCT with MR directly.
    CHECK(ids.count("synthrad_brain/cbct_to_mr") == 0);
}

TEST_CASE("catalog order is dataset, then src, then tgt") {
    const auto& catalog = route_catalog();
    CHECK(catalog[0].route_id == "synthrad_brain/ct_to_cbct");
    CHECK(catalog[1].route_id == "synthrad_brain/ct_to_mr");
    CHECK(catalog[2].route_id == "synthrad_brain/cbct_to_ct");
    CHECK(catalog[3].route_id == "synthrad_brain/mr_to_ct");
    CHECK(catalog[8].route_id == "autopet/ct_to_pet");
    CHECK(catalog[9].route_id == "autopet/pet_to_ct");
    CHECK(catalog[10].route_id == "brats/t1_to_t1ce");
    CHECK(catalog[21].route_id == "brats/flair_to_t2");
}

TEST_CASE("every catalog route has its reverse in the catalog") {
    for (const Route& r : route_catalog()) {
        const Route& rev = reversed_route(r);
        CHECK(rev.src == r.tgt);
        CHECK(rev.tgt == r.src);
        CHECK(rev.dataset == r.dataset);
    }
}

TEST_CASE("coarse class is total") {
    CHECK(coarse_class(Modality::CT) == CoarseModality::CT);
    CHECK(coarse_class(Modality::CBCT) == CoarseModality::CBCT);
    CHECK(coarse_class(Modality::PET) == CoarseModality::PET);
    CHECK(coarse_class(Modality::MR) == CoarseModality::MRI);
    CHECK(coarse_class(Modality::MR_T1) == CoarseModality::MRI);
    CHECK(coarse_class(Modality::MR_T1CE) == CoarseModality::MRI);
    CHECK(coarse_class(Modality::MR_T2) == CoarseModality::MRI);
    CHECK(coarse_class(Modality::MR_FLAIR) == CoarseModality::MRI);
}

TEST_CASE("confusable sets pair CT with CBCT and MR sequences with each other") {
    auto ct = confusable_modalities(Modality::CT);
    REQUIRE(ct.size() == 1);
    CHECK(ct[0] == Modality::CBCT);
    CHECK(confusable_modalities(Modality::PET).empty());
    auto t1 = confusable_modalities(Modality::MR_T1);
    CHECK(t1.size() == 4);
    CHECK(std::find(t1.begin(), t1.end(), Modality::MR_T2) != t1.end());
}

TEST_CASE("same seed and labels give identical draws") {
    RngStream a(42, {"forge", "pair01"});
    RngStream b(42, {"forge", "pair01"});
    for (int i = 0; i < 16; ++i) CHECK(a.next_u64() == b.next_u64());
}

TEST_CASE("label derivation separates streams") {
    // Golden values frozen from the reference implementation of the
    // SplitMix64-over-FNV construction.
    RngStream a(42, {"a"});
    RngStream b(42, {"b"});
    std::uint64_t first_a = a.next_u64();
    std::uint64_t first_b = b.next_u64();
    CHECK(first_a != first_b);
    CHECK(first_a == 3630054059982681624ULL);
    CHECK(first_b == 17469429649380612305ULL);
}

TEST_CASE("fnv1a64 matches the published test vectors") {
    CHECK(fnv1a64("") == 0xcbf29ce484222325ULL);
    CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
}

TEST_CASE("shuffle of [0,1,2,3] under fixed streams gives the frozen permutations") {
    // Golden permutations from the reference run; cross-implementation ports
    // must reproduce them byte-for-byte. Stream (7, ["x"]) happens to land on
    // the identity (1 of 24 equally likely outcomes).
    RngStream rng7(7, {"x"});
    std::vector<int> v{0, 1, 2, 3};
    rng7.shuffle(v);
    CHECK(v == std::vector<int>{0, 1, 2, 3});

    RngStream rng1(1, {"x"});
    v = {0, 1, 2, 3};
    rng1.shuffle(v);
    CHECK(v == std::vector<int>{2, 1, 3, 0});

    RngStream rng4(4, {"x"});
    v = {0, 1, 2, 3};
    rng4.shuffle(v);
    CHECK(v == std::vector<int>{3, 1, 2, 0});
}

TEST_CASE("uniform_open01 never returns zero and stays in (0,1]") {
    RngStream rng(123, {"t"});
    for (int i = 0; i < 100000; ++i) {
        double t = rng.uniform_open01();
        CHECK(t > 0.0);
        CHECK(t <= 1.0);
    }
}

TEST_CASE("bounded draw rejects empty range and covers the range") {
    RngStream rng(5, {"bounded"});
    CHECK_THROWS_AS(rng.bounded(0), Error);
    std::set<std::uint64_t> seen;
    for (int i = 0; i < 200; ++i) seen.insert(rng.bounded(4));
    CHECK(seen == std::set<std::uint64_t>{0, 1, 2, 3});
}

TEST_CASE("answer letters are A..Z only") {
    CHECK(answer_letter_for(0) == 'A');
    CHECK(answer_letter_for(25) == 'Z');
    CHECK_THROWS_AS(answer_letter_for(26), Error);
    CHECK_THROWS_AS(answer_letter_for(-1), Error);
}

TEST_CASE("instance validation enforces letter/index consistency") {
    UnderstandingInstance inst;
    inst.instance_id = "cts/p/00001/00000";
    inst.task = Task::CTS;
    inst.options = {"a#1", "a#2", "a#3"};
    inst.answer_index = 1;
    inst.answer_letter = 'B';
    CHECK_NOTHROW(inst.validate());
    inst.answer_letter = 'A';
    CHECK_THROWS_AS(inst.validate(), Error);
    inst.answer_letter = 'B';
    inst.options = {"a#1"};
    CHECK_THROWS_AS(inst.validate(), Error);
}

TEST_CASE("image invariants reject bad data") {
    Image2D img(2, 2, 0.5);
    CHECK_NOTHROW(img.validate());
    img.data[0] = 1.5;
    CHECK_THROWS_AS(img.validate(), Error);
    img.data[0] = 0.5;
    img.data.pop_back();
    CHECK_THROWS_AS(img.validate(), Error);
}
