#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "synermed/metrics.hpp"
#include "synermed/synergy.hpp"

using namespace synermed;
using namespace synermed::synergy;
using domain::Image2D;
using domain::Task;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& tag) {
    fs::path dir = fs::temp_directory_path() / ("synermed_synergy_" + tag);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string file_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

ToyCorpusConfig small_corpus_config(std::uint64_t seed = 5) {
    ToyCorpusConfig cfg = ToyCorpusConfig::defaults();
    cfg.n_volumes = 4;
    cfg.slices_per_volume = 16;
    cfg.seed = seed;
    return cfg;
}

// Finite differences over one net inside the synergy composites.
template <typename LossFn>
double fd_max_rel_error(toynet::MlpNet& net, const toynet::Gradients& analytic, LossFn&& loss_fn,
                        double h = 1e-5) {
    double worst = 0.0;
    for (size_t l = 0; l < net.layers.size(); ++l) {
        auto check = [&](double& p, double g) {
            double saved = p;
            p = saved + h;
            double up = loss_fn();
            p = saved - h;
            double down = loss_fn();
            p = saved;
            double numeric = (up - down) / (2.0 * h);
            double denom = std::max({std::abs(numeric), std::abs(g), 1e-8});
            worst = std::max(worst, std::abs(numeric - g) / denom);
        };
        for (size_t i = 0; i < net.layers[l].weights.data.size(); ++i) {
            check(net.layers[l].weights.data[i], analytic.layers[l].weights.data[i]);
        }
        for (size_t i = 0; i < net.layers[l].bias.size(); ++i) {
            check(net.layers[l].bias[i], analytic.layers[l].bias[i]);
        }
    }
    return worst;
}

}  // namespace

TEST_CASE("toy corpus generation is byte-identical across runs and thread counts") {
    ToyCorpusConfig cfg = small_corpus_config();
    fs::path d1 = temp_dir("det1"), d2 = temp_dir("det2");
    gen_toy_corpus(cfg, d1, 1);
    gen_toy_corpus(cfg, d2, 8);
    CHECK(file_bytes(d1 / "manifest.json") == file_bytes(d2 / "manifest.json"));
    int compared = 0;
    for (const auto& entry : fs::recursive_directory_iterator(d1)) {
        if (!entry.is_regular_file()) continue;
        fs::path rel = fs::relative(entry.path(), d1);
        CHECK(file_bytes(entry.path()) == file_bytes(d2 / rel));
        ++compared;
    }
    CHECK(compared > 10);
    fs::remove_all(d1);
    fs::remove_all(d2);
}

TEST_CASE("identical modality transforms with zero noise give identical paired slices") {
    ToyCorpusConfig cfg = small_corpus_config();
    cfg.modality_params["t1"] = {1.0, 0.1, 0.0};
    cfg.modality_params["t2"] = {1.0, 0.1, 0.0};  // same params, zero noise
    fs::path dir = temp_dir("degenerate");
    ingest::CorpusManifest m = gen_toy_corpus(cfg, dir);
    auto pairs = m.resolved_pairs();
    REQUIRE(!pairs.empty());
    for (int k = 0; k < 4; ++k) {
        Image2D src = ingest::load_slice(m, pairs[0].src, k);
        Image2D tgt = ingest::load_slice(m, pairs[0].tgt, k);
        CHECK(src.data == tgt.data);
    }
    fs::remove_all(dir);
}

TEST_CASE("blob drift makes nearby slices closer than distant ones") {
    ToyCorpusConfig cfg = small_corpus_config(11);
    fs::path dir = temp_dir("drift");
    ingest::CorpusManifest m = gen_toy_corpus(cfg, dir);
    const auto& vol = m.volumes.front();
    double near_total = 0.0, far_total = 0.0;
    int n = 0;
    for (int k = 0; k + 8 < vol.slice_count(); ++k) {
        Image2D a = ingest::load_slice(m, vol, k);
        Image2D b = ingest::load_slice(m, vol, k + 1);
        Image2D c = ingest::load_slice(m, vol, k + 8);
        near_total += metrics::mae(a, b);
        far_total += metrics::mae(a, c);
        ++n;
    }
    CHECK(near_total / n > 0.0);
    CHECK(near_total / n < far_total / n);
    fs::remove_all(dir);
}

TEST_CASE("box downsample averages blocks and rejects non-integer factors") {
    Image2D img(4, 4, 0.0);
    img.at(0, 0) = 1.0;
    img.at(1, 0) = 1.0;
    img.at(0, 1) = 1.0;
    img.at(1, 1) = 1.0;
    Image2D down = box_downsample(img, 2, 2);
    CHECK(down.at(0, 0) == 1.0);
    CHECK(down.at(1, 0) == 0.0);
    CHECK(down.at(1, 1) == 0.0);
    CHECK_THROWS_AS(box_downsample(img, 3, 3), Error);
}

TEST_CASE("bilinear upsample preserves constants and interpolates smoothly") {
    Image2D flat(8, 8, 0.37);
    Image2D up = bilinear_upsample(flat, 32, 32);
    for (double v : up.data) CHECK(v == doctest::Approx(0.37).epsilon(1e-12));

    Image2D grad(2, 1);
    grad.data = {0.0, 1.0};
    Image2D up2 = bilinear_upsample(grad, 4, 1);
    CHECK(up2.data[0] <= up2.data[1]);
    CHECK(up2.data[1] <= up2.data[2]);
    CHECK(up2.data[2] <= up2.data[3]);
}

TEST_CASE("patient split separates train and holdout patients") {
    ToyCorpusConfig cfg = small_corpus_config();
    fs::path dir = temp_dir("split");
    ingest::CorpusManifest m = gen_toy_corpus(cfg, dir);
    Split split = split_pairs(m, 0.25, 3);
    CHECK(!split.train.empty());
    CHECK(!split.holdout.empty());
    std::set<std::string> train_patients, holdout_patients;
    for (const auto& p : split.train) {
        train_patients.insert(p.src_volume_id.substr(0, p.src_volume_id.find('_')));
    }
    for (const auto& p : split.holdout) {
        holdout_patients.insert(p.src_volume_id.substr(0, p.src_volume_id.find('_')));
    }
    for (const auto& p : holdout_patients) CHECK(train_patients.count(p) == 0);
    // Same seed gives the same split.
    Split again = split_pairs(m, 0.25, 3);
    CHECK(again.train.size() == split.train.size());
    CHECK(again.holdout.size() == split.holdout.size());
    fs::remove_all(dir);
}

TEST_CASE("stage-1 composite gradients match finite differences") {
    ToyCorpusConfig cfg = small_corpus_config(21);
    fs::path dir = temp_dir("grad1");
    ingest::CorpusManifest manifest = gen_toy_corpus(cfg, dir);
    PreparedCorpus prep = PreparedCorpus::prepare(manifest);

    TrainConfig tc;
    tc.seed = 4;
    tc.encoder_hidden = {8};  // narrow nets keep finite differences affordable
    tc.vnet_hidden = {8};
    SynergyModel model = SynergyModel::init(4, tc);

    forge::ForgeConfig fc;
    fc.seed = 9;
    fc.k_window = 4;
    fc.instances_per_pair = {2, 2, 2};
    forge::ForgeOutput forged = forge::forge_corpus(manifest, prompts::default_pools(), fc);
    std::vector<domain::UnderstandingInstance> batch;
    batch.push_back(forged.cts.at(0));
    batch.push_back(forged.mi.at(0));
    batch.push_back(forged.tia.at(0));

    auto loss_of = [&] {
        double acc = 0.0;
        for (const auto& inst : batch) {
            acc += stage1_instance_loss(model, prep, inst, nullptr, 0.0);
        }
        return acc;
    };
    Stage1Grads grads = zero_stage1_grads(model);
    for (const auto& inst : batch) stage1_instance_loss(model, prep, inst, &grads, 1.0);

    CHECK(fd_max_rel_error(model.encoder, grads.encoder, loss_of) <= 1e-6);
    CHECK(fd_max_rel_error(model.cts_query, grads.cts_query, loss_of) <= 1e-6);
    CHECK(fd_max_rel_error(model.mi_head, grads.mi_head, loss_of) <= 1e-6);
    CHECK(fd_max_rel_error(model.tia_head, grads.tia_head, loss_of) <= 1e-6);
    fs::remove_all(dir);
}

TEST_CASE("stage-2 composite gradients match finite differences") {
    ToyCorpusConfig cfg = small_corpus_config(22);
    fs::path dir = temp_dir("grad2");
    ingest::CorpusManifest manifest = gen_toy_corpus(cfg, dir);
    PreparedCorpus prep = PreparedCorpus::prepare(manifest);

    TrainConfig tc;
    tc.encoder_hidden = {8};
    tc.vnet_hidden = {8};
    SynergyModel model = SynergyModel::init(5, tc);

    auto pairs = manifest.resolved_pairs();
    domain::RngStream rng(17, {"grad2"});
    Stage2Example ex;
    ex.enc_input = prep.enc_input(pairs[0].src.volume_id, 3);
    ex.z0 = prep.latent(pairs[0].tgt.volume_id, 3);
    ex.z1.resize(kLatentDim);
    for (double& v : ex.z1) v = rng.gaussian();
    ex.t = 0.63;
    ex.route_idx = domain::route_index(pairs[0].route.route_id);

    auto loss_of = [&] { return stage2_example_loss(model, ex, false, nullptr, 0.0); };
    Stage2Grads grads = zero_stage2_grads(model);
    stage2_example_loss(model, ex, false, &grads, 1.0);

    CHECK(fd_max_rel_error(model.vnet, grads.vnet, loss_of) <= 1e-6);
    CHECK(fd_max_rel_error(model.encoder, grads.encoder, loss_of) <= 1e-6);
    fs::remove_all(dir);
}

TEST_CASE("untrained model scores near chance on forged holdout questions") {
    ToyCorpusConfig cfg = small_corpus_config(31);
    cfg.n_volumes = 6;
    fs::path dir = temp_dir("chance");
    ingest::CorpusManifest manifest = gen_toy_corpus(cfg, dir);
    PreparedCorpus prep = PreparedCorpus::prepare(manifest);

    forge::ForgeConfig fc;
    fc.seed = 13;
    fc.k_window = 4;
    fc.instances_per_pair = {40, 0, 0};
    forge::ForgeOutput forged = forge::forge_corpus(manifest, prompts::default_pools(), fc);
    REQUIRE(forged.cts.size() >= 400);

    TrainConfig tc;
    SynergyModel model = SynergyModel::init(77, tc);
    std::map<Task, double> acc = evaluate_gau(model, prep, forged.cts);
    CHECK(std::abs(acc.at(Task::CTS) - 0.25) < 0.08);
    fs::remove_all(dir);
}

TEST_CASE("conditioning strictly improves held-out flow-matching loss") {
    ToyCorpusConfig cfg = small_corpus_config(41);
    cfg.n_volumes = 4;
    fs::path dir = temp_dir("cond");
    ingest::CorpusManifest manifest = gen_toy_corpus(cfg, dir);
    PreparedCorpus prep = PreparedCorpus::prepare(manifest);
    Split split = split_pairs(manifest, 0.25, 7);

    TrainConfig tc;
    tc.seed = 7;
    tc.stage2_epochs = 25;

    SynergyModel conditioned = SynergyModel::init(7, tc);
    Stage2Result with_cond = train_stage2(prep, split, conditioned, tc);

    TrainConfig tc_zero = tc;
    tc_zero.zero_cond = true;
    SynergyModel unconditioned = SynergyModel::init(7, tc_zero);
    Stage2Result without_cond = train_stage2(prep, split, unconditioned, tc_zero);

    // Evaluate both on the SAME conditioned validation objective is not
    // meaningful; compare each model's own val loss: the conditioned model
    // must end strictly lower.
    CHECK(with_cond.final_val_loss < without_cond.final_val_loss);
    fs::remove_all(dir);
}

TEST_CASE("synthesize is deterministic and in range") {
    ToyCorpusConfig cfg = small_corpus_config(51);
    fs::path dir = temp_dir("synth");
    ingest::CorpusManifest manifest = gen_toy_corpus(cfg, dir);
    auto pairs = manifest.resolved_pairs();
    Image2D src = ingest::load_slice(manifest, pairs[0].src, 2);

    TrainConfig tc;
    SynergyModel model = SynergyModel::init(3, tc);
    Image2D out1 = synthesize(model, src, pairs[0].route.route_id, 123, tc);
    Image2D out2 = synthesize(model, src, pairs[0].route.route_id, 123, tc);
    CHECK(out1.data == out2.data);
    CHECK_NOTHROW(out1.validate());
    CHECK(out1.width == src.width);

    Image2D out3 = synthesize(model, src, pairs[0].route.route_id, 124, tc);
    CHECK(out1.data != out3.data);
    fs::remove_all(dir);
}

TEST_CASE("zeroed velocity net gives the clamped fixed normal draw") {
    ToyCorpusConfig cfg = small_corpus_config(61);
    fs::path dir = temp_dir("zerovnet");
    ingest::CorpusManifest manifest = gen_toy_corpus(cfg, dir);
    auto pairs = manifest.resolved_pairs();
    PreparedCorpus prep = PreparedCorpus::prepare(manifest);

    TrainConfig tc;
    SynergyModel model = SynergyModel::init(3, tc);
    for (auto& layer : model.vnet.layers) {
        std::fill(layer.weights.data.begin(), layer.weights.data.end(), 0.0);
        std::fill(layer.bias.begin(), layer.bias.end(), 0.0);
    }
    std::vector<double> latent =
        synthesize_latent(model, prep.enc_input(pairs[0].src.volume_id, 0),
                          pairs[0].route.route_id, 9, {"identity-check"}, tc);
    domain::RngStream rng(9, {"identity-check"});
    for (size_t i = 0; i < latent.size(); ++i) {
        CHECK(latent[i] == std::clamp(rng.gaussian(), 0.0, 1.0));
    }
    fs::remove_all(dir);
}

TEST_CASE("model checkpoints round-trip") {
    TrainConfig tc;
    SynergyModel model = SynergyModel::init(19, tc);
    fs::path dir = temp_dir("model_ckpt");
    model.save(dir);
    SynergyModel back = SynergyModel::load(dir);
    CHECK(back.encoder.layers[0].weights.data == model.encoder.layers[0].weights.data);
    CHECK(back.vnet.layers.back().bias == model.vnet.layers.back().bias);
    fs::remove_all(dir);
}

TEST_CASE("k sweep validates the feasibility bound before training") {
    ToyCorpusConfig cfg = small_corpus_config(71);
    cfg.slices_per_volume = 16;
    fs::path dir = temp_dir("ksweep_bound");
    ingest::CorpusManifest manifest = gen_toy_corpus(cfg, dir);
    forge::ForgeConfig fc;
    TrainConfig tc;
    // K = 8 needs S >= 18 but S = 16.
    CHECK_THROWS_WITH_AS(
        k_sensitivity(manifest, prompts::default_pools(), {2, 8}, fc, tc),
        doctest::Contains("feasibility"), Error);
    fs::remove_all(dir);
}
