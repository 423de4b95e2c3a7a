#include <catch2/catch_amalgamated.hpp>

#include "gradcheck.hpp"
#include "manidiff/diffusion.hpp"

using namespace manidiff;

namespace {

DenoiserConfig tiny_config() {
    DenoiserConfig cfg;
    cfg.d_latent = 6;
    cfg.d_model = 16;
    cfg.d_obj = 4;
    cfg.d_text = 4;
    cfg.backbone.state_dim = 4;
    cfg.backbone.num_blocks = 1;
    return cfg;
}

DiffusionConditions tiny_conditions(int n_frames, double scale = 1.0) {
    DiffusionConditions c;
    c.obj_feat = Eigen::VectorXd::LinSpaced(4, 0.1, 0.4) * scale;
    c.text_feat = Eigen::VectorXd::LinSpaced(4, -0.2, 0.3) * scale;
    c.type = HandTypeFlag::make(HandType::Bimanual);
    c.gamma = Eigen::VectorXd::LinSpaced(n_frames, 0.0, 0.9);
    return c;
}

Eigen::MatrixXd random_mat(Rng& rng, Eigen::Index r, Eigen::Index c) {
    Eigen::MatrixXd m(r, c);
    for (Eigen::Index i = 0; i < r; ++i)
        for (Eigen::Index j = 0; j < c; ++j) m(i, j) = rng.normal();
    return m;
}

}  // namespace

TEST_CASE("cosine schedule invariants") {
    DiffusionSchedule s = DiffusionSchedule::cosine(1000);
    REQUIRE(s.T == 1000);
    for (int t = 1; t <= s.T; ++t) {
        REQUIRE(s.beta(t) > 0.0);
        REQUIRE(s.beta(t) <= 0.999);
        REQUIRE(s.alpha(t) == 1.0 - s.beta(t));
        if (t > 1) REQUIRE(s.alpha_bar(t) < s.alpha_bar(t - 1));
    }
    REQUIRE(s.alpha_bar(1000) < 1e-3);

    // alpha_bar is the exact running product of the alphas
    double run = 1.0;
    for (int t = 1; t <= s.T; ++t) {
        run *= s.alpha(t);
        REQUIRE(s.alpha_bar(t) == run);
    }

    REQUIRE(s.alpha_bar_prev(1) == 1.0);
    REQUIRE(s.posterior_var(1) == 0.0);
    for (int t : {2, 500, 1000}) {
        REQUIRE(s.posterior_var(t) > 0.0);
        REQUIRE(s.posterior_var(t) <= s.beta(t) + 1e-15);
    }

    REQUIRE_THROWS_AS(s.beta(0), InvalidTimestep);
    REQUIRE_THROWS_AS(s.alpha_bar(1001), InvalidTimestep);
    REQUIRE_THROWS_AS(DiffusionSchedule::cosine(0), InvalidConfig);
}

TEST_CASE("forward noising formula") {
    DiffusionSchedule s = DiffusionSchedule::cosine(100);
    Rng rng(1);
    Eigen::MatrixXd x0 = random_mat(rng, 3, 5);

    // zero noise leaves only the signal scaling
    Eigen::MatrixXd clean = forward_noise(s, x0, 40, Eigen::MatrixXd::Zero(3, 5));
    REQUIRE((clean - std::sqrt(s.alpha_bar(40)) * x0).cwiseAbs().maxCoeff() == 0.0);

    Eigen::MatrixXd eta = random_mat(rng, 3, 5);
    Eigen::MatrixXd noised = forward_noise(s, x0, 40, eta);
    Eigen::MatrixXd expect =
        std::sqrt(s.alpha_bar(40)) * x0 + std::sqrt(1.0 - s.alpha_bar(40)) * eta;
    REQUIRE((noised - expect).cwiseAbs().maxCoeff() < 1e-15);

    REQUIRE_THROWS_AS(forward_noise(s, x0, 40, Eigen::MatrixXd::Zero(2, 5)), ShapeMismatch);
    REQUIRE_THROWS_AS(forward_noise(s, x0, 0, eta), InvalidTimestep);
}

TEST_CASE("noising statistics match the marginal") {
    DiffusionSchedule s = DiffusionSchedule::cosine(1000);
    const int t = 600;
    Eigen::MatrixXd x0 = Eigen::MatrixXd::Constant(4, 6, 0.7);
    Rng rng(33);
    const int draws = 4000;
    double sum = 0, sumsq = 0;
    for (int k = 0; k < draws; ++k) {
        Eigen::MatrixXd x_t = forward_noise(s, x0, t, random_mat(rng, 4, 6));
        sum += x_t.sum();
        sumsq += x_t.array().square().sum();
    }
    const double n = draws * 24.0;
    double mean = sum / n;
    double var = sumsq / n - mean * mean;
    REQUIRE(mean == Catch::Approx(std::sqrt(s.alpha_bar(t)) * 0.7).margin(0.02));
    REQUIRE(var == Catch::Approx(1.0 - s.alpha_bar(t)).epsilon(0.05));
}

TEST_CASE("composing single steps matches the closed form") {
    DiffusionSchedule s = DiffusionSchedule::cosine(1000);
    Rng rng(4);
    Eigen::MatrixXd x0 = random_mat(rng, 2, 7);

    // mean path: x_t = sqrt(alpha_t) x_{t-1}, composed over 20 steps
    Eigen::MatrixXd x = x0;
    for (int t = 1; t <= 20; ++t) x = std::sqrt(s.alpha(t)) * x;
    Eigen::MatrixXd closed = forward_noise(s, x0, 20, Eigen::MatrixXd::Zero(2, 7));
    REQUIRE((x - closed).cwiseAbs().maxCoeff() < 1e-5);
}

TEST_CASE("ancestral sampling with the oracle recovers the clean state") {
    DiffusionSchedule s = DiffusionSchedule::cosine(1000);
    CompositeDims dims{16, 64};
    Rng data_rng(17);
    Eigen::MatrixXd x0 = random_mat(data_rng, dims.n_frames, dims.cols());

    DenoiserFn oracle = [&](const Eigen::MatrixXd& x, int t) {
        double ab = s.alpha_bar(t);
        return Eigen::MatrixXd((x - std::sqrt(ab) * x0) / std::sqrt(1.0 - ab));
    };
    Rng rng(55);
    Eigen::MatrixXd got = DiffusionModel::sample_with(s, oracle, dims, rng);
    double rmse = std::sqrt((got - x0).array().square().mean());
    REQUIRE(rmse < 1e-3);
}

TEST_CASE("sampling reports the diverging step") {
    DiffusionSchedule s = DiffusionSchedule::cosine(100);
    CompositeDims dims{2, 4};
    DenoiserFn bad = [&](const Eigen::MatrixXd& x, int t) {
        Eigen::MatrixXd eps = Eigen::MatrixXd::Zero(x.rows(), x.cols());
        if (t == 37) eps(0, 0) = std::numeric_limits<double>::quiet_NaN();
        return eps;
    };
    Rng rng(5);
    REQUIRE_THROWS_WITH(DiffusionModel::sample_with(s, bad, dims, rng),
                        Catch::Matchers::ContainsSubstring("37"));

    DenoiserFn wrong_shape = [](const Eigen::MatrixXd&, int) {
        return Eigen::MatrixXd::Zero(1, 1);
    };
    Rng rng2(6);
    REQUIRE_THROWS_AS(DiffusionModel::sample_with(s, wrong_shape, dims, rng2), ShapeMismatch);
}

TEST_CASE("token position encodings are injective over every slot") {
    Denoiser den(tiny_config(), 7);
    DiffusionSchedule s = DiffusionSchedule::cosine(50);
    DiffusionConditions c;
    c.obj_feat = Eigen::VectorXd::Zero(4);
    c.text_feat = Eigen::VectorXd::Zero(4);
    c.type = HandTypeFlag::make(HandType::Bimanual);
    c.gamma = Eigen::VectorXd::Zero(kMaxFrames);

    ad::NoGradGuard ng;
    Eigen::MatrixXd grid = den.fuse_conditions(s, 10, c, kMaxFrames).value();
    REQUIRE(grid.rows() == 4 * kMaxFrames);
    double min_dist = std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < grid.rows(); ++i)
        for (Eigen::Index j = i + 1; j < grid.rows(); ++j)
            min_dist = std::min(min_dist, (grid.row(i) - grid.row(j)).norm());
    REQUIRE(min_dist > 0.0);
}

TEST_CASE("condition fusion is affine in each pathway") {
    Denoiser den(tiny_config(), 8);
    DiffusionSchedule s = DiffusionSchedule::cosine(50);
    const int n = 3;
    ad::NoGradGuard ng;

    auto grid = [&](const DiffusionConditions& c) {
        return Eigen::MatrixXd(den.fuse_conditions(s, 20, c, n).value());
    };
    DiffusionConditions base = tiny_conditions(n);
    DiffusionConditions zero = base;
    zero.obj_feat.setZero();
    DiffusionConditions a = base, b = base, ab = base;
    a.obj_feat << 0.3, -0.1, 0.2, 0.5;
    b.obj_feat << -0.4, 0.2, 0.1, -0.2;
    ab.obj_feat = a.obj_feat + b.obj_feat;
    // affine pathway: increments add
    Eigen::MatrixXd lhs = grid(ab) - grid(a);
    Eigen::MatrixXd rhs = grid(b) - grid(zero);
    REQUIRE((lhs - rhs).cwiseAbs().maxCoeff() < 1e-12);

    DiffusionConditions tz = base, ta = base, tb = base, tab = base;
    tz.text_feat.setZero();
    ta.text_feat << 0.2, 0.1, -0.3, 0.4;
    tb.text_feat << -0.1, 0.3, 0.2, 0.1;
    tab.text_feat = ta.text_feat + tb.text_feat;
    REQUIRE(((grid(tab) - grid(ta)) - (grid(tb) - grid(tz))).cwiseAbs().maxCoeff() < 1e-12);

    DiffusionConditions gz = base, ga = base, gb = base, gab = base;
    gz.gamma.setZero();
    ga.gamma << 0.1, 0.2, 0.3;
    gb.gamma << 0.4, 0.1, 0.0;
    gab.gamma = ga.gamma + gb.gamma;
    REQUIRE(((grid(gab) - grid(ga)) - (grid(gb) - grid(gz))).cwiseAbs().maxCoeff() < 1e-12);

    // hand type and timestep change the grid
    DiffusionConditions left = base;
    left.type = HandTypeFlag::make(HandType::LeftOnly);
    REQUIRE((grid(base) - grid(left)).cwiseAbs().maxCoeff() > 0.0);
    Eigen::MatrixXd g20 = grid(base);
    Eigen::MatrixXd g21 = den.fuse_conditions(s, 21, base, n).value();
    REQUIRE((g20 - g21).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("fresh denoiser predicts exactly zero and checks shapes") {
    DenoiserConfig cfg = tiny_config();
    Denoiser den(cfg, 9);
    DiffusionSchedule s = DiffusionSchedule::cosine(50);
    const int n = 4;
    DiffusionConditions c = tiny_conditions(n);
    Rng rng(2);
    Eigen::MatrixXd x = random_mat(rng, n, cfg.d_latent + 15);

    Eigen::MatrixXd eps = den.forward(x, s, 25, c);
    REQUIRE(eps.rows() == n);
    REQUIRE(eps.cols() == cfg.d_latent + 15);
    REQUIRE(eps.cwiseAbs().maxCoeff() == 0.0);

    REQUIRE_THROWS_AS(den.forward(x.leftCols(10), s, 25, c), ShapeMismatch);
    REQUIRE_THROWS_AS(den.forward(x, s, 0, c), InvalidTimestep);
    DiffusionConditions short_gamma = c;
    short_gamma.gamma = Eigen::VectorXd::Zero(n - 1);
    REQUIRE_THROWS_AS(den.forward(x, s, 25, short_gamma), ShapeMismatch);
    Eigen::MatrixXd bad = x;
    bad(1, 2) = std::numeric_limits<double>::quiet_NaN();
    REQUIRE_THROWS_AS(den.forward(bad, s, 25, c), InvalidInput);
}

TEST_CASE("perturbed denoiser reacts to the joint-angle condition") {
    DenoiserConfig cfg = tiny_config();
    Denoiser den(cfg, 10);
    Rng jitter(3);
    for (nn::Param* p : den.params().ordered())
        for (Eigen::Index i = 0; i < p->value.size(); ++i)
            p->value.data()[i] += 0.05 * jitter.normal();

    DiffusionSchedule s = DiffusionSchedule::cosine(50);
    const int n = 4;
    DiffusionConditions c1 = tiny_conditions(n);
    DiffusionConditions c2 = c1;
    c2.gamma = Eigen::VectorXd::LinSpaced(n, 0.9, 0.0);
    Rng rng(12);
    Eigen::MatrixXd x = random_mat(rng, n, cfg.d_latent + 15);
    Eigen::MatrixXd e1 = den.forward(x, s, 25, c1);
    Eigen::MatrixXd e2 = den.forward(x, s, 25, c2);
    REQUIRE((e1 - e2).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("zero prediction scores unit loss against standard noise") {
    DiffusionModel model(tiny_config(), 100, 11);
    const int n = 4;
    DiffusionConditions c = tiny_conditions(n);
    Rng rng(77);
    Eigen::MatrixXd x0 = 0.3 * random_mat(rng, n, tiny_config().d_latent + 15);

    double total = 0;
    const int reps = 40;
    for (int k = 0; k < reps; ++k) {
        int t = 1 + static_cast<int>(rng.integer(100));
        total += model.eval_loss(x0, c, t, random_mat(rng, n, x0.cols()));
    }
    REQUIRE(total / reps == Catch::Approx(1.0).epsilon(0.05));
}

TEST_CASE("diffusion training is deterministic and reduces the loss") {
    auto run = [](uint64_t seed) {
        DiffusionModel model(tiny_config(), 40, seed);
        const int n = 3;
        DiffusionConditions c = tiny_conditions(n);
        Rng data_rng(21);
        Eigen::MatrixXd x0 = 0.5 * random_mat(data_rng, n, tiny_config().d_latent + 15);

        nn::AdamConfig ac;
        ac.lr = 2e-3;
        nn::Adam opt(model.params(), ac);
        Rng rng(31);
        Eigen::MatrixXd probe_eta = random_mat(data_rng, n, x0.cols());
        double before = model.eval_loss(x0, c, 20, probe_eta);
        double last = 0;
        for (int i = 0; i < 60; ++i) last = model.train_step(x0, c, opt, rng);
        double after = model.eval_loss(x0, c, 20, probe_eta);
        return std::tuple{before, after, last, model.params().value_hash()};
    };
    auto [b1, a1, l1, h1] = run(100);
    auto [b2, a2, l2, h2] = run(100);
    REQUIRE(a1 < b1);
    REQUIRE(b1 == b2);
    REQUIRE(a1 == a2);
    REQUIRE(l1 == l2);
    REQUIRE(h1 == h2);
}

TEST_CASE("training composite requires a frozen refinement net") {
    ManiVAEConfig mcfg;
    mcfg.d_latent = 3;
    mcfg.hidden = 8;
    mcfg.blocks = 1;
    mcfg.d_obj = 4;
    mcfg.d_text = 4;
    ManiVAE vae(mcfg, 3);

    MotionSequence seq;
    seq.hands.resize(2);
    seq.objects.resize(2);
    seq.objects[1].joint_angle = 0.4;
    Eigen::VectorXd of = Eigen::VectorXd::Constant(4, 0.2);
    Eigen::VectorXd tf = Eigen::VectorXd::Constant(4, -0.1);
    HandTypeFlag type = HandTypeFlag::make(HandType::Bimanual);

    REQUIRE_THROWS_AS(make_training_composite(seq, vae, of, tf, type), ConfigError);

    vae.params().freeze();
    Eigen::MatrixXd x = make_training_composite(seq, vae, of, tf, type);
    REQUIRE(x.rows() == 2);
    REQUIRE(x.cols() == 3 + 15);
    for (int i = 0; i < 2; ++i) {
        ManiLatent lat = vae.encode(seq.hands[i], seq.objects[i], of, tf, type);
        REQUIRE(x.block(i, 0, 1, 3).transpose() == lat.mu);
    }
    // wrist and object blocks carry the states verbatim
    REQUIRE(x(0, 3 + 0) == seq.hands[0].trans_left(0));
    REQUIRE(x(1, 3 + 6 + 2) == seq.objects[1].trans(2));
    REQUIRE(x(1, 3 + 9) == seq.objects[1].rot.v[0]);
}

TEST_CASE("assembled sequences adopt the joint-angle curve verbatim") {
    ManiVAEConfig mcfg;
    mcfg.d_latent = 3;
    mcfg.hidden = 8;
    mcfg.blocks = 1;
    mcfg.d_obj = 4;
    mcfg.d_text = 4;
    ManiVAE vae(mcfg, 4);
    Eigen::VectorXd of = Eigen::VectorXd::Constant(4, 0.2);
    Eigen::VectorXd tf = Eigen::VectorXd::Constant(4, -0.1);
    HandTypeFlag type = HandTypeFlag::make(HandType::Bimanual);

    const int n = 3;
    Rng rng(9);
    Eigen::MatrixXd comp = 0.2 * random_mat(rng, n, 3 + 15);
    Eigen::VectorXd gamma(n);
    gamma << 0.123456789, 0.3, 1.0471975511965976;

    MotionSequence seq = assemble_output(comp, gamma, vae, of, tf, type);
    REQUIRE(seq.frames() == n);
    for (int i = 0; i < n; ++i) {
        REQUIRE(seq.objects[i].joint_angle == gamma(i));  // bit-exact passthrough
        REQUIRE(seq.objects[i].trans == Vec3(comp.block(i, 3 + 6, 1, 3).transpose()));
        for (int k = 0; k < 6; ++k) REQUIRE(seq.objects[i].rot.v[k] == comp(i, 3 + 9 + k));
        REQUIRE(seq.hands[i].trans_left == Vec3(comp.block(i, 3, 1, 3).transpose()));
        REQUIRE(seq.hands[i].trans_right == Vec3(comp.block(i, 3 + 3, 1, 3).transpose()));
        // fresh refinement decoder emits identity poses
        REQUIRE(seq.hands[i].pose_left == HandState::identity_pose());
    }

    REQUIRE_THROWS_AS(assemble_output(comp, gamma.head(2), vae, of, tf, type), AssemblyError);
    REQUIRE_THROWS_AS(assemble_output(comp.leftCols(10), gamma, vae, of, tf, type),
                      AssemblyError);
    Eigen::MatrixXd bad = comp;
    bad(0, 0) = std::numeric_limits<double>::quiet_NaN();
    REQUIRE_THROWS_AS(assemble_output(bad, gamma, vae, of, tf, type), AssemblyError);
}

TEST_CASE("sequence files round trip") {
    MotionSequence seq;
    seq.hands.resize(2);
    seq.objects.resize(2);
    seq.hands[0].trans_left = Vec3(0.1, -0.2, 0.3);
    seq.hands[1].pose_right(3, 2) = 0.7071067811865476;
    seq.objects[0].joint_angle = 0.25;
    seq.objects[1].trans = Vec3(1e-17, 2.5, -4.0);

    SampleMeta meta;
    meta.seed = 0xdeadbeefcafe;
    meta.condition_hash = condition_hash(Eigen::VectorXd::Constant(2, 0.5),
                                         Eigen::VectorXd::Constant(3, -1.0),
                                         Eigen::VectorXd::Constant(2, 0.1));
    meta.type = HandType::LeftOnly;

    std::string path = "/tmp/manidiff_test_seq.bin";
    save_sequence(path, seq, meta);
    SampleMeta back_meta;
    MotionSequence back = load_sequence(path, &back_meta);
    REQUIRE(back_meta.seed == meta.seed);
    REQUIRE(back_meta.condition_hash == meta.condition_hash);
    REQUIRE(back_meta.type == meta.type);
    REQUIRE(flatten_sequence(back) == flatten_sequence(seq));

    // different conditions hash differently
    uint64_t other = condition_hash(Eigen::VectorXd::Constant(2, 0.5),
                                    Eigen::VectorXd::Constant(3, -1.0),
                                    Eigen::VectorXd::Constant(2, 0.2));
    REQUIRE(other != meta.condition_hash);
}

TEST_CASE("diffusion training gradients match finite differences") {
    DenoiserConfig cfg;
    cfg.d_latent = 3;
    cfg.d_model = 6;
    cfg.d_obj = 2;
    cfg.d_text = 2;
    cfg.backbone.state_dim = 2;
    cfg.backbone.num_blocks = 1;
    Denoiser den(cfg, 13);
    Rng jitter(7);
    for (nn::Param* p : den.params().ordered())
        for (Eigen::Index i = 0; i < p->value.size(); ++i)
            p->value.data()[i] += 0.1 * jitter.normal();

    DiffusionSchedule s = DiffusionSchedule::cosine(30);
    const int n = 2;
    DiffusionConditions c;
    c.obj_feat = Eigen::VectorXd::Constant(2, 0.3);
    c.text_feat = Eigen::VectorXd::Constant(2, -0.2);
    c.type = HandTypeFlag::make(HandType::RightOnly);
    c.gamma = Eigen::VectorXd::LinSpaced(n, 0.1, 0.5);
    Rng rng(19);
    Eigen::MatrixXd x_t = random_mat(rng, n, cfg.d_latent + 15);
    Eigen::MatrixXd eta = random_mat(rng, n, cfg.d_latent + 15);

    auto build = [&]() {
        return ad::mse(den.forward_var(x_t, s, 12, c), ad::Var::constant(eta));
    };
    param_gradcheck(den.params(), build, 1e-4, 1e-3, 6);
}
