#include <catch2/catch_amalgamated.hpp>

#include "gradcheck.hpp"
#include "manidiff/jointvae.hpp"

using namespace manidiff;

namespace {

JointVAEConfig toy_config() {
    JointVAEConfig cfg;
    cfg.d_latent = 3;
    cfg.hidden = 8;
    cfg.blocks = 1;
    cfg.d_obj = 4;
    cfg.d_text = 4;
    cfg.max_frames = 4;
    return cfg;
}

Eigen::VectorXd feat(int n, double base) {
    Eigen::VectorXd v(n);
    for (int i = 0; i < n; ++i) v(i) = base + 0.1 * i;
    return v;
}

}  // namespace

TEST_CASE("jointvae config validation") {
    JointVAEConfig cfg;
    REQUIRE_NOTHROW(cfg.validate());
    cfg.d_latent = 0;
    REQUIRE_THROWS_AS(cfg.validate(), InvalidConfig);
    cfg = {};
    cfg.gamma_min = 2.0;
    cfg.gamma_max = 1.0;
    REQUIRE_THROWS_AS(cfg.validate(), InvalidConfig);
    cfg = {};
    cfg.max_frames = kMaxFrames + 1;
    REQUIRE_THROWS_AS(cfg.validate(), InvalidConfig);
}

TEST_CASE("kl divergence closed form") {
    const int d = 32;
    Eigen::VectorXd mu = Eigen::VectorXd::Ones(d);
    Eigen::VectorXd lv = Eigen::VectorXd::Zero(d);
    // mu = 1, logvar = 0 contributes exactly 1/2 per dimension
    REQUIRE(kl_divergence(mu, lv) == Catch::Approx(0.5 * d).margin(1e-9));

    REQUIRE(kl_divergence(Eigen::VectorXd::Zero(d), Eigen::VectorXd::Zero(d)) == 0.0);

    Rng rng(11);
    for (int trial = 0; trial < 50; ++trial) {
        Eigen::VectorXd m(5), l(5);
        for (int i = 0; i < 5; ++i) {
            m(i) = rng.uniform(-2, 2);
            l(i) = rng.uniform(-2, 2);
        }
        REQUIRE(kl_divergence(m, l) >= 0.0);
    }
    // strictly positive whenever the posterior differs from the prior
    Eigen::VectorXd m1 = Eigen::VectorXd::Zero(3), l1 = Eigen::VectorXd::Zero(3);
    m1(1) = 0.01;
    REQUIRE(kl_divergence(m1, l1) > 0.0);
    m1(1) = 0.0;
    l1(2) = -0.01;
    REQUIRE(kl_divergence(m1, l1) > 0.0);

    REQUIRE_THROWS_AS(kl_divergence(Eigen::VectorXd::Zero(3), Eigen::VectorXd::Zero(4)),
                      ShapeMismatch);
}

TEST_CASE("kl divergence graph op matches closed form") {
    Rng rng(5);
    Eigen::RowVectorXd m(6), l(6);
    for (int i = 0; i < 6; ++i) {
        m(i) = rng.uniform(-1.5, 1.5);
        l(i) = rng.uniform(-1.5, 1.5);
    }
    ad::NoGradGuard ng;
    double graph = kl_divergence_var(ad::Var::constant(m), ad::Var::constant(l)).item();
    double plain = kl_divergence(m.transpose(), l.transpose());
    REQUIRE(graph == Catch::Approx(plain).margin(1e-12));
}

TEST_CASE("jointvae loss formula and contracts") {
    const int n = 7;
    Eigen::VectorXd gamma = Eigen::VectorXd::LinSpaced(n, 0.0, 1.2);
    Eigen::VectorXd gamma_hat = gamma.array() + 0.1;
    JointLatent latent{Eigen::VectorXd::Zero(3), Eigen::VectorXd::Zero(3)};
    JointVAELossWeights w;

    auto b = jointvae_loss(gamma, gamma_hat, latent, w);
    // each frame off by 0.1 -> 0.01 per frame
    REQUIRE(b.rec == Catch::Approx(0.01 * n).margin(1e-12));
    REQUIRE(b.recon_nll == b.rec);
    REQUIRE(b.kl == 0.0);
    REQUIRE(b.total == Catch::Approx(w.elbo * b.rec + w.rec * b.rec).margin(1e-12));

    JointVAELossWeights neg;
    neg.rec = -0.5;
    REQUIRE_THROWS_AS(jointvae_loss(gamma, gamma_hat, latent, neg), InvalidConfig);

    REQUIRE_THROWS_AS(jointvae_loss(gamma, gamma_hat.head(3), latent, w), ShapeMismatch);
}

TEST_CASE("jointvae encode contracts") {
    JointVAE vae(toy_config(), 42);
    Eigen::VectorXd gamma(3);
    gamma << 0.1, 0.5, 0.9;
    Eigen::VectorXd of = feat(4, 0.2), tf = feat(4, -0.3);

    JointLatent a = vae.encode(gamma, of, tf);
    REQUIRE(a.mu.size() == 3);
    REQUIRE(a.logvar.size() == 3);
    JointLatent b = vae.encode(gamma, of, tf);
    REQUIRE(a.mu == b.mu);
    REQUIRE(a.logvar == b.logvar);

    Eigen::VectorXd gamma2 = gamma.array() + 0.3;
    JointLatent c = vae.encode(gamma2, of, tf);
    REQUIRE((a.mu - c.mu).norm() > 0.0);

    REQUIRE_THROWS_AS(vae.encode(Eigen::VectorXd(), of, tf), InvalidLength);
    REQUIRE_THROWS_AS(vae.encode(Eigen::VectorXd::Zero(5), of, tf), InvalidLength);
    Eigen::VectorXd bad = gamma;
    bad(1) = std::numeric_limits<double>::quiet_NaN();
    REQUIRE_THROWS_AS(vae.encode(bad, of, tf), InvalidInput);
    REQUIRE_THROWS_AS(vae.encode(gamma, feat(3, 0.0), tf), ShapeMismatch);
    Eigen::VectorXd inf_feat = of;
    inf_feat(0) = std::numeric_limits<double>::infinity();
    REQUIRE_THROWS_AS(vae.encode(gamma, inf_feat, tf), InvalidInput);
}

TEST_CASE("jointvae decode clamps to joint limits") {
    JointVAEConfig cfg = toy_config();
    cfg.gamma_min = 0.2;
    cfg.gamma_max = 0.9;
    JointVAE vae(cfg, 3);
    Eigen::VectorXd of = feat(4, 0.1), tf = feat(4, 0.4);
    Eigen::VectorXd z(3);
    z << 5.0, -5.0, 5.0;  // push the raw decoder far out of range

    for (int n : {1, 2, 4}) {
        Eigen::VectorXd g = vae.decode(z, of, tf, n);
        REQUIRE(g.size() == n);
        for (Eigen::Index i = 0; i < g.size(); ++i) {
            REQUIRE(g(i) >= cfg.gamma_min);
            REQUIRE(g(i) <= cfg.gamma_max);
        }
    }

    // a degenerate limit interval pins every output
    JointVAEConfig pin = toy_config();
    pin.gamma_min = pin.gamma_max = 0.5;
    JointVAE pinned(pin, 3);
    Eigen::VectorXd g = pinned.decode(z, of, tf, 4);
    REQUIRE((g.array() == 0.5).all());

    REQUIRE_THROWS_AS(vae.decode(z, of, tf, 0), InvalidLength);
    REQUIRE_THROWS_AS(vae.decode(z, of, tf, 5), InvalidLength);
    REQUIRE_THROWS_AS(vae.decode(Eigen::VectorXd::Zero(2), of, tf, 2), ShapeMismatch);
}

TEST_CASE("jointvae reparameterization sampling statistics") {
    JointLatent latent;
    latent.mu = Eigen::VectorXd::Constant(4, 0.5);
    latent.logvar = Eigen::VectorXd::Constant(4, std::log(0.09));  // sigma = 0.3

    Rng rng(2024);
    const int n = 10000;
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(4);
    Eigen::VectorXd sq = Eigen::VectorXd::Zero(4);
    for (int i = 0; i < n; ++i) {
        Eigen::VectorXd z = JointVAE::sample_latent(latent, rng);
        mean += z;
        sq += z.cwiseProduct(z);
    }
    mean /= n;
    Eigen::VectorXd var = sq / n - mean.cwiseProduct(mean);
    for (int i = 0; i < 4; ++i) {
        REQUIRE(mean(i) == Catch::Approx(0.5).epsilon(0.05));
        REQUIRE(var(i) == Catch::Approx(0.09).epsilon(0.05));
    }
}

TEST_CASE("jointvae full loss gradient check") {
    JointVAE vae(toy_config(), 9);
    Eigen::VectorXd gamma(2);
    gamma << 0.3, 0.8;
    Eigen::VectorXd of = feat(4, 0.15), tf = feat(4, -0.25);
    Rng noise(77);
    Eigen::RowVectorXd eps(3);
    for (int i = 0; i < 3; ++i) eps(i) = noise.normal();
    JointVAELossWeights w;
    w.elbo = 1.0;
    w.rec = 0.7;

    auto build = [&]() {
        auto [mu, logvar] = vae.encode_var(gamma, of, tf);
        ad::Var z = JointVAE::reparameterize(mu, logvar, eps);
        ad::Var pred = ad::slice_cols(vae.decode_var(z, of, tf), 0, 2);
        ad::Var rec = ad::sum_sq(ad::sub(pred, ad::Var::constant(gamma.transpose())));
        ad::Var kl = kl_divergence_var(mu, logvar);
        return ad::add(ad::scale(ad::add(rec, kl), w.elbo), ad::scale(rec, w.rec));
    };
    param_gradcheck(vae.params(), build, 1e-4, 1e-3);
}

TEST_CASE("jointvae training is deterministic and reduces the loss") {
    auto run = [](uint64_t seed) {
        JointVAE vae(toy_config(), seed);
        nn::AdamConfig ac;
        ac.lr = 3e-3;
        nn::Adam opt(vae.params(), ac);
        Rng rng(1234);
        JointVAE::TrainSample s;
        s.gamma = Eigen::VectorXd(3);
        s.gamma << 0.2, 0.6, 1.0;
        s.obj_feat = feat(4, 0.3);
        s.text_feat = feat(4, -0.1);
        JointVAELossWeights w;
        double first = vae.eval_loss(s, w).total;
        for (int i = 0; i < 80; ++i) vae.train_step(s, w, opt, rng);
        double last = vae.eval_loss(s, w).total;
        return std::tuple{first, last, vae.params().value_hash()};
    };
    auto [f1, l1, h1] = run(21);
    auto [f2, l2, h2] = run(21);
    REQUIRE(l1 < f1);
    REQUIRE(f1 == f2);
    REQUIRE(l1 == l2);
    REQUIRE(h1 == h2);

    auto [f3, l3, h3] = run(22);
    REQUIRE(h3 != h1);
}
