#include <cstdio>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "geosteer/corpus.hpp"
#include "geosteer/steer.hpp"

using namespace geosteer;
using namespace geosteer::steer;
namespace fs = std::filesystem;

namespace {

Tensor random_vec(std::size_t n, Rng& rng, double scale = 1.0) {
    Tensor v = Tensor::vec(n);
    for (double& x : v.data) x = scale * rng.normal();
    return v;
}

struct SteerFixture {
    corpus::Dataset ds;
    student::StudentParams sp;
    manifold::VaeParams vae;
    quality::QualityParams qp;
};

const SteerFixture& fixture() {
    static const SteerFixture fx = [] {
        corpus::CorpusConfig cc;
        cc.n_train = 12;
        cc.n_val = 3;
        cc.n_test = 4;
        cc.max_steps = 2;
        cc.master_seed = 77;
        SteerFixture f{corpus::build_dataset(cc), {}, {}, {}};
        student::StudentConfig sc;
        sc.epochs = 8;
        sc.seed = 3;
        f.sp = student::train_student(f.ds.train, f.ds.val, sc).params;
        f.vae = manifold::random_vae(sc.hidden_dim, 4, 16, 5);
        f.qp = quality::random_quality(4, 12, 7);
        return f;
    }();
    return fx;
}

}  // namespace

TEST_SUITE_BEGIN("steer");

TEST_CASE("pullback gradient matches central differences through the composition") {
    manifold::VaeParams vae = manifold::random_vae(16, 4, 20, 11);
    quality::QualityParams qp = quality::random_quality(4, 12, 13);
    Rng rng(1);

    auto s = [&](const Tensor& h) { return quality::predict(qp, manifold::encode(vae, h).mu); };
    for (int i = 0; i < 25; ++i) {
        Tensor h = random_vec(16, rng, 3.0);
        PullbackOut out = pullback_gradient(vae, qp, h);
        CHECK(out.grad.numel() == 16);
        CHECK(out.pred == doctest::Approx(s(h)).epsilon(1e-12));
        CHECK(max_abs_diff(out.mu, manifold::encode(vae, h).mu) < 1e-14);
        Tensor fd = finite_diff_grad(s, h, 1e-5);
        CHECK(max_rel_err(out.grad, fd) < 1e-5);
    }
}

TEST_CASE("zero quality weights give a zero pullback") {
    manifold::VaeParams vae = manifold::random_vae(10, 3, 12, 17);
    quality::QualityParams qp = quality::random_quality(3, 8, 19);
    for (auto& [name, t] : qp.named()) t->fill(0.0);
    Rng rng(2);
    PullbackOut out = pullback_gradient(vae, qp, random_vec(10, rng));
    CHECK(norm(out.grad) == 0.0);
}

TEST_CASE("steer step moves exactly beta along the normalized gradient") {
    Rng rng(3);
    const double beta = 2.5, floor = 1e-8;
    for (int i = 0; i < 1000; ++i) {
        Tensor h = random_vec(32, rng, 4.0);
        Tensor g = random_vec(32, rng);
        Tensor out = steer_step(h, g, beta, floor);
        double moved = norm(out - h);
        CHECK(std::abs(moved - beta) <= 1e-12 * beta);
        // ascent identity: <g, h' - h> = beta * ||g||
        double along = dot(g, out - h);
        CHECK(along == doctest::Approx(beta * norm(g)).epsilon(1e-12));
        CHECK(along > 0.0);
    }
}

TEST_CASE("steer step is the identity below the floor or at beta zero") {
    Rng rng(4);
    Tensor h = random_vec(8, rng);
    Tensor tiny = Tensor::vec(8);
    tiny.fill(1e-12);
    Tensor out = steer_step(h, tiny, 1.0, 1e-8);
    CHECK(max_abs_diff(out, h) == 0.0);  // same bits

    Tensor g = random_vec(8, rng);
    Tensor out2 = steer_step(h, g, 0.0, 1e-8);
    CHECK(max_abs_diff(out2, h) == 0.0);

    Tensor zero = Tensor::vec(8);
    CHECK(max_abs_diff(steer_step(h, zero, 1.0, 1e-8), h) == 0.0);
}

TEST_CASE("beta zero generation is bit-identical to the plain path") {
    const SteerFixture& fx = fixture();
    for (const corpus::DatasetRecord& rec : {fx.ds.test[0], fx.ds.test[2]}) {
        std::vector<int> prompt = student::prompt_tokens(rec.problem);
        student::GenerationRecord plain = student::generate(fx.sp, prompt, nullptr, 60);

        SteerConfig cfg;
        cfg.beta = 0.0;
        SteerResult steered = steered_generate(fx.sp, fx.vae, fx.qp, prompt, cfg, 60);

        CHECK(steered.record.generated == plain.generated);
        CHECK(steered.record.text == plain.text);
        REQUIRE(steered.record.hiddens.size() == plain.hiddens.size());
        for (std::size_t i = 0; i < plain.hiddens.size(); ++i)
            CHECK(max_abs_diff(steered.record.hiddens[i], plain.hiddens[i]) == 0.0);
        CHECK(steered.record.step_final_slots == plain.step_final_slots);

        // latent trace and predictions cover every emitted slot
        CHECK(steered.record.latents.size() == plain.hiddens.size());
        CHECK(steered.record.pred_quality.size() == plain.hiddens.size());
        // every-token granularity: one diagnostics row per emitted slot
        CHECK(steered.diag.size() == plain.hiddens.size());
        for (const SteerDiagRow& row : steered.diag) {
            CHECK(!row.applied);  // beta = 0 never applies
            CHECK(row.r_after == row.r_before);
        }
    }
}

TEST_CASE("positive beta moves hidden states by exactly beta at applied slots") {
    const SteerFixture& fx = fixture();
    std::vector<int> prompt = student::prompt_tokens(fx.ds.test[1].problem);

    SteerConfig cfg;
    cfg.beta = 0.05;
    SteerResult res = steered_generate(fx.sp, fx.vae, fx.qp, prompt, cfg, 60);
    REQUIRE(!res.diag.empty());
    std::size_t applied = 0;
    for (const SteerDiagRow& row : res.diag)
        if (row.applied) ++applied;
    CHECK(applied > 0);

    // recorded latent/prediction reflect the post-update hidden state
    for (std::size_t i = 0; i < res.record.hiddens.size(); ++i) {
        Tensor mu = manifold::encode(fx.vae, res.record.hiddens[i]).mu;
        CHECK(max_abs_diff(mu, res.record.latents[i]) == 0.0);
        CHECK(res.record.pred_quality[i] == quality::predict(fx.qp, mu));
    }
}

TEST_CASE("step-final granularity restricts eligible slots") {
    const SteerFixture& fx = fixture();
    std::vector<int> prompt = student::prompt_tokens(fx.ds.test[3].problem);

    SteerConfig cfg;
    cfg.beta = 0.05;
    cfg.granularity = Granularity::step_final;
    SteerResult res = steered_generate(fx.sp, fx.vae, fx.qp, prompt, cfg, 60);
    CHECK(res.diag.size() == res.record.step_final_slots.size());
    for (std::size_t i = 0; i < res.diag.size(); ++i)
        CHECK(res.diag[i].slot == res.record.step_final_slots[i]);

    // a cap on applied updates
    SteerConfig capped;
    capped.beta = 0.05;
    capped.max_updates = 1;
    SteerResult lim = steered_generate(fx.sp, fx.vae, fx.qp, prompt, capped, 60);
    std::size_t applied = 0;
    for (const SteerDiagRow& row : lim.diag)
        if (row.applied) ++applied;
    CHECK(applied <= 1);
}

TEST_CASE("configuration and dimension validation") {
    const SteerFixture& fx = fixture();
    std::vector<int> prompt = student::prompt_tokens(fx.ds.test[0].problem);

    SteerConfig bad_beta;
    bad_beta.beta = -1.0;
    CHECK_THROWS(steered_generate(fx.sp, fx.vae, fx.qp, prompt, bad_beta, 40));

    SteerConfig bad_floor;
    bad_floor.grad_floor = 0.0;
    CHECK_THROWS(steered_generate(fx.sp, fx.vae, fx.qp, prompt, bad_floor, 40));

    manifold::VaeParams wrong_d = manifold::random_vae(8, 3, 12, 29);  // d mismatch
    SteerConfig ok;
    CHECK_THROWS(steered_generate(fx.sp, wrong_d, fx.qp, prompt, ok, 40));

    quality::QualityParams wrong_k = quality::random_quality(5, 8, 31);  // k mismatch
    CHECK_THROWS(steered_generate(fx.sp, fx.vae, wrong_k, prompt, ok, 40));
}

TEST_CASE("diagnostics csv layout") {
    fs::path dir = fs::temp_directory_path() / "geosteer_test_steer_csv";
    fs::remove_all(dir);
    fs::create_directories(dir);
    std::vector<SteerDiagRow> rows{{3, 0.25, true, 0.5, 0.625}, {4, 1e-12, false, 0.5, 0.5}};
    write_diag_csv(dir / "diag.csv", rows);
    std::ifstream in(dir / "diag.csv");
    std::string header, l1, l2;
    std::getline(in, header);
    std::getline(in, l1);
    std::getline(in, l2);
    CHECK(header == "slot,grad_norm,applied,r_before,r_after");
    CHECK(l1 == "3,0.25,1,0.5,0.625");
    char tiny[64];
    std::snprintf(tiny, sizeof(tiny), "%.17g", 1e-12);
    CHECK(l2 == std::string("4,") + tiny + ",0,0.5,0.5");
    fs::remove_all(dir);
}

TEST_SUITE_END();
