#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "geosteer/manifold.hpp"

using namespace geosteer;
using namespace geosteer::manifold;
namespace fs = std::filesystem;

namespace {

Tensor random_vec(std::size_t n, Rng& rng, double scale = 1.0) {
    Tensor v = Tensor::vec(n);
    for (double& x : v.data) x = scale * rng.normal();
    return v;
}

// two-cluster synthetic hidden states for quick training runs
std::vector<Tensor> toy_rows(std::size_t n, std::size_t d, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<Tensor> rows;
    for (std::size_t i = 0; i < n; ++i) {
        Tensor v = Tensor::vec(d);
        double center = (i % 2 == 0) ? 2.0 : -2.0;
        for (double& x : v.data) x = center + 0.5 * rng.normal();
        rows.push_back(std::move(v));
    }
    return rows;
}

double cosine(const Tensor& a, const Tensor& b) {
    return dot(a, b) / (norm(a) * norm(b));
}

}  // namespace

TEST_SUITE_BEGIN("manifold");

TEST_CASE("encode and decode have the declared shapes and are deterministic") {
    VaeParams p = random_vae(16, 4, 24, 11);
    Rng rng(1);
    Tensor h = random_vec(16, rng, 3.0);

    EncodeOut e1 = encode(p, h);
    EncodeOut e2 = encode(p, h);
    CHECK(e1.mu.numel() == 4);
    CHECK(e1.logvar.numel() == 4);
    CHECK(max_abs_diff(e1.mu, e2.mu) == 0.0);
    CHECK(max_abs_diff(e1.logvar, e2.logvar) == 0.0);
    for (double lv : e1.logvar.data) {
        CHECK(lv >= -10.0);
        CHECK(lv <= 10.0);
    }

    Tensor z = random_vec(4, rng);
    Tensor x1 = decode(p, z), x2 = decode(p, z);
    CHECK(x1.numel() == 16);
    CHECK(max_abs_diff(x1, x2) == 0.0);

    CHECK_THROWS(encode(p, random_vec(7, rng)));
    CHECK_THROWS(decode(p, random_vec(7, rng)));
}

TEST_CASE("standardization is invertible") {
    VaeParams p = random_vae(12, 3, 16, 7);
    Rng rng(2);
    Tensor h = random_vec(12, rng, 5.0);
    Tensor back = unstandardize(p, standardize(p, h));
    CHECK(max_rel_err(back, h, 1e-9) < 1e-12);
}

TEST_CASE("tape encoder path equals the plain encoder") {
    VaeParams p = random_vae(10, 3, 20, 13);
    Rng rng(3);
    for (int i = 0; i < 5; ++i) {
        Tensor h = random_vec(10, rng, 2.0);
        Tape t;
        NodeId hn = t.leaf(h);
        NodeId mu = build_encoder_mu(t, p, hn);
        CHECK(max_abs_diff(t.value(mu), encode(p, h).mu) == 0.0);  // same fp expressions
    }
}

TEST_CASE("reparameterization at the variance floor collapses to the mean") {
    Rng rng(4);
    Tensor mu = random_vec(6, rng, 2.0);
    Tensor logvar = Tensor::vec(6);
    logvar.fill(-10.0);
    Tensor u = random_vec(6, rng);
    Tensor z = reparameterize(mu, logvar, u);
    CHECK(norm(z - mu) <= 1e-2 * norm(mu) + 1e-2);

    // fixed noise -> reproducible draw
    Tensor z2 = reparameterize(mu, logvar, u);
    CHECK(max_abs_diff(z, z2) == 0.0);
}

TEST_CASE("reparameterization sample mean approaches mu") {
    Rng rng(5);
    const std::size_t k = 4, n = 100000;
    Tensor mu = random_vec(k, rng, 1.5);
    Tensor logvar = Tensor::vec(k);  // sigma = 1
    Tensor sum = Tensor::vec(k);
    for (std::size_t i = 0; i < n; ++i) {
        Tensor u = random_vec(k, rng);
        Tensor z = reparameterize(mu, logvar, u);
        axpy(1.0, z, sum);
    }
    double bound = 3.0 / std::sqrt(static_cast<double>(n));  // 3 sigma / sqrt(n)
    for (std::size_t i = 0; i < k; ++i)
        CHECK(std::abs(sum[i] / static_cast<double>(n) - mu[i]) < bound);
}

TEST_CASE("analytic gaussian kl: exact values and monte carlo agreement") {
    Tensor mu0 = Tensor::vec(8), lv0 = Tensor::vec(8);
    CHECK(kl_gaussian(mu0, lv0) == 0.0);

    Tensor mu1 = Tensor::vec(8);
    mu1.fill(1.0);
    CHECK(kl_gaussian(mu1, lv0) == 4.0);

    // MC oracle: E_q[log q(z) - log p(z)] over 1e6 draws
    Rng rng(6);
    const std::size_t k = 6;
    Tensor mu = random_vec(k, rng, 0.8);
    Tensor lv = Tensor::vec(k);
    for (double& v : lv.data) v = rng.uniform(-1.0, 1.0);
    double analytic = kl_gaussian(mu, lv);

    const std::size_t n = 1000000;
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double term = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
            double u = rng.normal();
            double sigma = std::exp(0.5 * lv[j]);
            double z = mu[j] + sigma * u;
            // log N(z; mu, sigma^2) - log N(z; 0, 1), constants cancel
            term += -0.5 * u * u - 0.5 * lv[j] + 0.5 * z * z;
        }
        acc += term;
    }
    double mc = acc / static_cast<double>(n);
    CHECK(std::abs(mc - analytic) < 0.01 * std::max(1.0, std::abs(analytic)));
}

TEST_CASE("training histories, determinism, and the kl-free reconstruction bound") {
    auto train = toy_rows(80, 8, 21);
    auto val = toy_rows(20, 8, 22);

    VaeConfig cfg;
    cfg.input_dim = 8;
    cfg.latent_dim = 2;
    cfg.hidden_dim = 16;
    cfg.epochs = 12;
    cfg.batch = 16;
    cfg.seed = 31;

    VaeTrainResult a = train_vae(train, val, cfg);
    CHECK(a.train_total.size() == 12);
    CHECK(a.train_recon.size() == 12);
    CHECK(a.train_kl.size() == 12);
    CHECK(a.val_total.size() == 12);
    CHECK(a.val_total.back() < a.val_total.front());

    VaeTrainResult b = train_vae(train, val, cfg);
    auto an = a.params.named();
    auto bn = b.params.named();
    REQUIRE(an.size() == bn.size());
    for (std::size_t i = 0; i < an.size(); ++i) {
        CHECK(an[i].first == bn[i].first);
        CHECK(max_abs_diff(*an[i].second, *bn[i].second) == 0.0);
    }

    // dropping the kl term can only help pure reconstruction
    VaeConfig free_cfg = cfg;
    free_cfg.kl_weight = 0.0;
    VaeTrainResult free_run = train_vae(train, val, free_cfg);
    CHECK(free_run.train_recon.back() <= a.train_recon.back());
    for (double klv : free_run.train_kl) (void)klv;  // history still recorded
    CHECK(free_run.train_kl.size() == 12);
}

TEST_CASE("checkpoint round trip preserves the encoder exactly") {
    auto train = toy_rows(40, 6, 41);
    auto val = toy_rows(10, 6, 42);
    VaeConfig cfg;
    cfg.input_dim = 6;
    cfg.latent_dim = 2;
    cfg.hidden_dim = 12;
    cfg.epochs = 4;
    cfg.seed = 51;
    VaeParams p = train_vae(train, val, cfg).params;

    fs::path dir = fs::temp_directory_path() / "geosteer_test_manifold_ckpt";
    fs::remove_all(dir);
    fs::create_directories(dir);
    save_vae(dir / "vae.bin", p);
    VaeParams back = load_vae(dir / "vae.bin");

    CHECK(back.input_dim == 6);
    CHECK(back.latent_dim == 2);
    Rng rng(8);
    Tensor h = random_vec(6, rng, 2.0);
    CHECK(max_abs_diff(encode(back, h).mu, encode(p, h).mu) == 0.0);
    CHECK(max_abs_diff(encode(back, h).logvar, encode(p, h).logvar) == 0.0);
    CHECK(max_abs_diff(decode(back, encode(back, h).mu), decode(p, encode(p, h).mu)) == 0.0);
    fs::remove_all(dir);
}

TEST_CASE("trained autoencoder reconstructs toy data directionally") {
    auto train = toy_rows(120, 8, 61);
    auto val = toy_rows(30, 8, 62);
    VaeConfig cfg;
    cfg.input_dim = 8;
    cfg.latent_dim = 2;
    cfg.hidden_dim = 24;
    cfg.epochs = 40;
    cfg.seed = 71;
    VaeParams p = train_vae(train, val, cfg).params;

    double worst = 1.0;
    for (const Tensor& h : val) worst = std::min(worst, cosine(reconstruct(p, h), h));
    CHECK(worst > 0.8);  // the two-cluster toy set is easy to reconstruct
}

TEST_CASE("latent csv layout") {
    fs::path dir = fs::temp_directory_path() / "geosteer_test_manifold_csv";
    fs::remove_all(dir);
    fs::create_directories(dir);

    std::vector<LatentRow> rows;
    rows.push_back({"p1:pos", 0, Tensor::from({0.5, -1.25})});
    rows.push_back({"p1:pos", 1, Tensor::from({1.0, 0.0})});
    write_latent_csv(dir / "latents.csv", rows);

    std::ifstream in(dir / "latents.csv");
    std::string header, line1, line2;
    std::getline(in, header);
    std::getline(in, line1);
    std::getline(in, line2);
    CHECK(header == "record_id,step_index,mu_1,mu_2");
    CHECK(line1 == "p1:pos,0,0.5,-1.25");
    CHECK(line2 == "p1:pos,1,1,0");
    fs::remove_all(dir);
}

TEST_SUITE_END();
