#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <random>

#include "ifse/error.hpp"
#include "ifse/model/checkpoint.hpp"
#include "ifse/model/ifsenet.hpp"
#include "model_oracles.hpp"

using namespace ifse;
using namespace ifse::model;
namespace fs = std::filesystem;

namespace {

torch::Tensor random_image(int64_t h, int64_t w, uint64_t seed) {
    auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
    return torch::randint(0, 256, {3, h, w}, gen, torch::kFloat32);
}

torch::Tensor blank(int64_t h, int64_t w, torch::Dtype dtype = torch::kFloat32) {
    return torch::zeros({h, w}, dtype);
}

torch::Tensor blob(int64_t h, int64_t w, int64_t r0, int64_t c0, int64_t r1, int64_t c1) {
    auto m = blank(h, w);
    m.slice(0, r0, r1).slice(1, c0, c1).fill_(1);
    return m;
}

torch::Tensor random_fg(int64_t h, int64_t w, std::mt19937_64& rng, double p = 0.4) {
    std::bernoulli_distribution b(p);
    auto m = blank(h, w, torch::kFloat64);
    auto a = m.accessor<double, 2>();
    for (int64_t r = 0; r < h; ++r)
        for (int64_t c = 0; c < w; ++c) a[r][c] = b(rng) ? 1.0 : 0.0;
    return m;
}

double max_abs_diff(const torch::Tensor& a, const std::vector<double>& b) {
    const auto flat = a.to(torch::kFloat64).reshape({-1}).contiguous();
    REQUIRE(flat.numel() == static_cast<int64_t>(b.size()));
    double worst = 0;
    for (int64_t i = 0; i < flat.numel(); ++i) worst = std::max(worst, std::abs(flat[i].item<double>() - b[i]));
    return worst;
}

struct SupportCase {
    torch::Tensor image, pos, neg, prev;
};

SupportCase support_case(int64_t size, uint64_t seed) {
    SupportCase c{random_image(size, size, seed), blank(size, size), blank(size, size), blank(size, size)};
    c.pos.slice(0, 10, 20).slice(1, 10, 20).fill_(1);
    c.neg.slice(0, 40, 46).slice(1, 40, 46).fill_(1);
    c.prev.slice(0, 5, 30).slice(1, 5, 30).fill_(1);
    return c;
}

struct Episode {
    std::vector<SupportCase> supports;
    torch::Tensor query;
    torch::Tensor query_prev;
};

torch::Tensor query_logits(IfseNet& net, const Episode& ep, const std::vector<std::size_t>& order) {
    std::vector<SupportState> states;
    for (auto i : order) {
        const auto& s = ep.supports[i];
        states.push_back(net->run_support(net->extract_features(s.image), {s.pos, s.neg, s.prev}));
    }
    const auto qf = net->extract_features(ep.query);
    return net->query_forward(qf, net->bundle_for_query(states, qf), ep.query_prev).final_logits;
}

} // namespace

TEST_CASE("feature extraction keeps stride 8" * doctest::test_suite("architecture")) {
    torch::NoGradGuard no_grad;
    auto net = make_network(ModelConfig::tiny(), 1);
    CHECK(net->extract_features(random_image(64, 64, 1)).data.sizes() == torch::IntArrayRef{16, 8, 8});
    CHECK(net->extract_features(random_image(64, 48, 1)).data.sizes() == torch::IntArrayRef{16, 8, 6});
    CHECK(net->extract_features(random_image(61, 43, 1)).data.sizes() == torch::IntArrayRef{16, 8, 6});

    SUBCASE("same input twice gives identical features") {
        const auto img = random_image(64, 64, 2);
        CHECK(torch::equal(net->extract_features(img).data, net->extract_features(img).data));
    }
    SUBCASE("bad inputs are rejected") {
        CHECK_THROWS_AS(net->extract_features(torch::zeros({1, 16, 16})), InvalidArgument);
        CHECK_THROWS_AS(net->extract_features(torch::zeros({3, 0, 16})), InvalidArgument);
    }
}

TEST_CASE("ResNet-50 variant maps 512x384 to a 64x48 grid" * doctest::test_suite("architecture")) {
    torch::NoGradGuard no_grad;
    ModelConfig cfg;
    cfg.feature_channels = 32;
    cfg.support_width = 8;
    cfg.query_scales = {8};
    auto net = make_network(cfg, 3);
    const auto feat = net->extract_features(random_image(512, 384, 3));

    // Independent shape walk: conv1 7/2/3, maxpool 3/2/1, layer2 3x3 stride 2,
    // layer3 dilated (stride 1).
    const auto walk = [](int64_t n) {
        n = oracle::conv_out(n, 7, 2, 3);
        n = oracle::conv_out(n, 3, 2, 1);
        n = oracle::conv_out(n, 3, 2, 1);
        return oracle::conv_out(n, 3, 1, 2, 2);
    };
    CHECK(feat.data.size(0) == 32);
    CHECK(feat.data.size(1) == walk(512));
    CHECK(feat.data.size(2) == walk(384));
    CHECK(feat.data.size(1) == 64);
    CHECK(feat.data.size(2) == 48);
    CHECK(feat.stride == 8);
    CHECK(net->backbone->mid_channels() == 1536);
}

TEST_CASE("support_forward" * doctest::test_suite("architecture")) {
    torch::NoGradGuard no_grad;
    auto net = make_network(ModelConfig::tiny(), 4);

    SUBCASE("blank clicks and mask give finite logits at input resolution") {
        const auto feat = net->extract_features(random_image(64, 64, 5));
        const auto out = net->support_forward(feat, blank(64, 64), blank(64, 64), blank(64, 64));
        CHECK(out.logits.sizes() == torch::IntArrayRef{2, 64, 64});
        CHECK(torch::isfinite(out.logits).all().item<bool>());
        CHECK(out.bottleneck.sizes() == torch::IntArrayRef{16 * 8, 1, 1});
    }
    SUBCASE("64x64 feature map gives an 8x8 bottleneck") {
        const auto feat = net->extract_features(random_image(512, 512, 6));
        REQUIRE(feat.data.size(1) == 64);
        const auto out = net->support_forward(feat, blank(512, 512), blank(512, 512), blank(512, 512));
        CHECK(out.bottleneck.sizes() == torch::IntArrayRef{16 * 8, 8, 8});
        CHECK(out.logits.sizes() == torch::IntArrayRef{2, 512, 512});
    }
    SUBCASE("other input sizes divisible by 8") {
        for (auto [h, w] : {std::pair{64, 128}, std::pair{128, 64}, std::pair{96, 80}}) {
            const auto feat = net->extract_features(random_image(h, w, 7));
            const auto out = net->support_forward(feat, blank(h, w), blank(h, w), blank(h, w));
            CHECK(out.logits.sizes() == torch::IntArrayRef{2, h, w});
        }
    }
    SUBCASE("auxiliary masks must match the feature map") {
        const auto feat = net->extract_features(random_image(64, 64, 8));
        CHECK_THROWS_AS(net->support_forward(feat, blank(32, 32), blank(32, 32), blank(32, 32)), ShapeMismatch);
        CHECK_THROWS_AS(net->support_forward(feat, blank(64, 64), blank(64, 32), blank(64, 64)), ShapeMismatch);
    }
}

TEST_CASE("support-path gradients agree with finite differences" * doctest::test_suite("architecture")) {
    auto net = make_network(ModelConfig::tiny(8, {4, 2}, 32), 9);
    net->to(torch::kFloat64);
    const auto c = support_case(64, 10);
    const auto target = blob(64, 64, 8, 8, 30, 30).to(torch::kFloat64);
    const auto loss_fn = [&] {
        const auto feat = net->extract_features(c.image);
        return pixel_bce(net->support_forward(feat, c.pos, c.neg, c.prev).logits, target);
    };

    net->zero_grad();
    loss_fn().backward();

    std::vector<std::pair<std::string, torch::Tensor>> params;
    for (const auto& item : net->named_parameters()) {
        const bool on_support_logits = item.key().rfind("support.", 0) == 0 &&
                                       item.key().find("click_reduce") == std::string::npos;
        if (!on_support_logits && item.key().rfind("reduce.", 0) != 0) continue;
        params.emplace_back(item.key(), item.value());
        INFO(item.key());
        REQUIRE(item.value().grad().defined());
        CHECK(item.value().grad().abs().sum().item<double>() > 0.0);
    }

    std::mt19937_64 rng(11);
    int checked = 0;
    for (int attempt = 0; attempt < 200 && checked < 6; ++attempt) {
        auto& [name, p] = params[std::uniform_int_distribution<std::size_t>(0, params.size() - 1)(rng)];
        const auto idx = std::uniform_int_distribution<int64_t>(0, p.numel() - 1)(rng);
        const double analytic = p.grad().reshape({-1})[idx].item<double>();
        if (std::abs(analytic) < 1e-7) continue;
        const double eps = 1e-6;
        auto flat = p.detach().view({-1});
        const double orig = flat[idx].item<double>();
        torch::NoGradGuard no_grad;
        flat[idx] = orig + eps;
        const double up = loss_fn().item<double>();
        flat[idx] = orig - eps;
        const double down = loss_fn().item<double>();
        flat[idx] = orig;
        const double numeric = (up - down) / (2 * eps);
        INFO(name << "[" << idx << "] analytic " << analytic << " numeric " << numeric);
        CHECK(std::abs(analytic - numeric) <= 1e-3 * std::max(std::abs(analytic), std::abs(numeric)));
        ++checked;
    }
    CHECK(checked >= 3);
}

TEST_CASE("compute_support_vector" * doctest::test_suite("oracle")) {
    SUBCASE("constant features under a full mask give the constant") {
        const auto v = torch::tensor({1.5, -2.0, 0.25}, torch::kFloat64);
        const auto feat = v.view({3, 1, 1}).expand({3, 5, 5}).contiguous();
        CHECK(torch::allclose(compute_support_vector(feat, torch::ones({5, 5})), v));
    }
    SUBCASE("empty foreground gives zeros") {
        const auto feat = torch::randn({4, 3, 3});
        CHECK(torch::equal(compute_support_vector(feat, torch::zeros({3, 3})), torch::zeros({4})));
    }
    SUBCASE("2x2 map with two foreground cells averages those columns") {
        const auto feat = torch::tensor({1.0, 2.0, 3.0, 4.0, 10.0, 20.0, 30.0, 40.0}, torch::kFloat64).view({2, 2, 2});
        const auto fg = torch::tensor({1.0, 0.0, 0.0, 1.0}, torch::kFloat64).view({2, 2});
        const auto out = compute_support_vector(feat, fg);
        CHECK(out[0].item<double>() == doctest::Approx(2.5));
        CHECK(out[1].item<double>() == doctest::Approx(25.0));
    }
    SUBCASE("every mask on a 4x4 grid matches the loop oracle") {
        torch::manual_seed(12);
        const auto feat = torch::randn({5, 4, 4}, torch::kFloat64);
        double worst = 0;
        for (uint32_t bits = 0; bits < (1U << 16); ++bits) {
            auto fg = torch::zeros({4, 4}, torch::kFloat64);
            auto a = fg.accessor<double, 2>();
            for (int i = 0; i < 16; ++i) a[i / 4][i % 4] = (bits >> i) & 1U;
            worst = std::max(worst, max_abs_diff(compute_support_vector(feat, fg), oracle::support_vector(feat, fg)));
        }
        CHECK(worst <= 1e-6);
    }
    SUBCASE("shape mismatch is rejected") {
        CHECK_THROWS_AS(compute_support_vector(torch::zeros({2, 4, 4}), torch::zeros({4, 3})), ShapeMismatch);
    }
}

TEST_CASE("compute_click_vector" * doctest::test_suite("oracle")) {
    torch::NoGradGuard no_grad;
    auto net = make_network(ModelConfig::tiny(8), 13);
    net->to(torch::kFloat64);
    const auto& conv = net->support->click_reduce;
    const int64_t B = net->support->bottleneck_channels();

    SUBCASE("spatially constant bottleneck gives the 1x1 conv of the constant") {
        const auto v = torch::randn({B}, torch::kFloat64);
        const auto out = net->compute_click_vector(v.view({B, 1, 1}).expand({B, 3, 3}).contiguous());
        const auto expect = torch::matmul(conv->weight.view({-1, B}), v) + conv->bias;
        CHECK(torch::allclose(out, expect, 0, 1e-10));
    }
    SUBCASE("zero bottleneck with zero bias gives zeros") {
        const auto saved = conv->bias.clone();
        conv->bias.zero_();
        CHECK(torch::equal(net->compute_click_vector(torch::zeros({B, 2, 2}, torch::kFloat64)),
                           torch::zeros({8}, torch::kFloat64)));
        conv->bias.copy_(saved);
    }
    SUBCASE("random 4x4 bottleneck matches a loop oracle") {
        for (int trial = 0; trial < 20; ++trial) {
            const auto x = torch::randn({B, 4, 4}, torch::kFloat64);
            const auto out = net->compute_click_vector(x);
            const auto w = conv->weight.view({-1, B}).contiguous();
            std::vector<double> expect(static_cast<std::size_t>(w.size(0)));
            for (int64_t o = 0; o < w.size(0); ++o) {
                double sum = 0;
                for (int64_t r = 0; r < 4; ++r)
                    for (int64_t c = 0; c < 4; ++c) {
                        double v = conv->bias[o].item<double>();
                        for (int64_t i = 0; i < B; ++i) v += w[o][i].item<double>() * x[i][r][c].item<double>();
                        sum += v;
                    }
                expect[o] = sum / 16.0;
            }
            CHECK(max_abs_diff(out, expect) <= 1e-6);
        }
    }
}

TEST_CASE("attention_prior" * doctest::test_suite("oracle")) {
    SUBCASE("exact feature match scores 1 against orthogonal cells") {
        auto support = torch::zeros({3, 2, 2}, torch::kFloat64);
        support.select(1, 0).select(1, 0).copy_(torch::tensor({1.0, 0.0, 0.0}, torch::kFloat64));
        auto query = torch::zeros({3, 2, 2}, torch::kFloat64);
        query.select(1, 1).select(1, 1).copy_(torch::tensor({1.0, 0.0, 0.0}, torch::kFloat64));
        query.select(1, 0).select(1, 0).copy_(torch::tensor({0.0, 1.0, 0.0}, torch::kFloat64));
        query.select(1, 0).select(1, 1).copy_(torch::tensor({0.0, 0.0, 1.0}, torch::kFloat64));
        query.select(1, 1).select(1, 0).copy_(torch::tensor({0.0, 1.0, 1.0}, torch::kFloat64));
        auto fg = torch::zeros({2, 2});
        fg[0][0] = 1;
        const auto out = attention_prior(support, query, fg);
        CHECK(out[1][1].item<double>() == doctest::Approx(1.0));
        CHECK(out[0][0].item<double>() == 0.0);
    }
    SUBCASE("flat similarities give zeros") {
        const auto v = torch::tensor({0.3, 0.4, 0.5}, torch::kFloat64).view({3, 1, 1});
        const auto out = attention_prior(v.expand({3, 3, 3}).contiguous(), v.expand({3, 4, 4}).contiguous(),
                                         torch::ones({3, 3}));
        CHECK(torch::equal(out, torch::zeros({4, 4}, torch::kFloat64)));
    }
    SUBCASE("empty support foreground gives zeros") {
        const auto out = attention_prior(torch::randn({4, 3, 3}), torch::randn({4, 5, 5}), torch::zeros({3, 3}));
        CHECK(torch::equal(out, torch::zeros({5, 5})));
    }
    SUBCASE("2x2 random instance matches the triple loop") {
        torch::manual_seed(14);
        const auto s = torch::randn({6, 2, 2}, torch::kFloat64);
        const auto q = torch::randn({6, 2, 2}, torch::kFloat64);
        const auto fg = torch::tensor({1.0, 1.0, 0.0, 1.0}, torch::kFloat64).view({2, 2});
        CHECK(max_abs_diff(attention_prior(s, q, fg), oracle::attention(s, q, fg)) <= 1e-6);
    }
    SUBCASE("every grid size up to 8x8 matches the brute-force oracle and stays in [0,1]") {
        torch::manual_seed(15);
        std::mt19937_64 rng(15);
        double worst = 0;
        bool in_range = true;
        for (int64_t hs = 1; hs <= 8; ++hs)
            for (int64_t ws = 1; ws <= 8; ++ws)
                for (int64_t hq = 1; hq <= 8; hq += 1)
                    for (int64_t wq = 1; wq <= 8; wq += 3) {
                        const auto s = torch::randn({4, hs, ws}, torch::kFloat64);
                        const auto q = torch::randn({4, hq, wq}, torch::kFloat64);
                        const auto fg = random_fg(hs, ws, rng);
                        const auto out = attention_prior(s, q, fg);
                        in_range = in_range && out.min().item<double>() >= 0.0 && out.max().item<double>() <= 1.0;
                        worst = std::max(worst, max_abs_diff(out, oracle::attention(s, q, fg)));
                    }
        CHECK(in_range);
        CHECK(worst <= 1e-6);
    }
    SUBCASE("float32 network features stay within tolerance of the double oracle") {
        torch::manual_seed(16);
        std::mt19937_64 rng(16);
        for (int trial = 0; trial < 50; ++trial) {
            const auto s = torch::relu(torch::randn({16, 8, 8}));
            const auto q = torch::relu(torch::randn({16, 8, 8}));
            const auto fg = random_fg(8, 8, rng);
            CHECK(max_abs_diff(attention_prior(s, q, fg), oracle::attention(s, q, fg)) <= 1e-5);
        }
    }
}

TEST_CASE("aggregate_multi_support" * doctest::test_suite("architecture")) {
    torch::manual_seed(17);
    const auto make = [] {
        return SupportBundle{torch::randn({5}), torch::randn({5}), torch::rand({3, 3})};
    };
    const auto same = [](const SupportBundle& a, const SupportBundle& b) {
        return torch::equal(a.support_vector, b.support_vector) && torch::equal(a.click_vector, b.click_vector) &&
               torch::equal(a.attention_mask, b.attention_mask);
    };
    const auto b0 = make();
    const auto b1 = make();
    const auto b2 = make();

    CHECK(same(aggregate_multi_support({b0}), b0));
    CHECK(same(aggregate_multi_support({b0, b0}), b0));

    const auto mean = aggregate_multi_support({b0, b1, b2});
    std::vector<double> expect(5);
    for (int i = 0; i < 5; ++i) {
        expect[i] = (b0.support_vector[i].item<double>() + b1.support_vector[i].item<double>() +
                     b2.support_vector[i].item<double>()) / 3.0;
    }
    CHECK(max_abs_diff(mean.support_vector, expect) <= 1e-6);

    std::vector<SupportBundle> list{b0, b1, b2};
    std::vector<int> order{0, 1, 2};
    do {
        CHECK(same(aggregate_multi_support({list[order[0]], list[order[1]], list[order[2]]}), mean));
    } while (std::next_permutation(order.begin(), order.end()));

    CHECK_THROWS_AS(aggregate_multi_support({}), InvalidArgument);
    CHECK_THROWS_AS(aggregate_multi_support({b0, SupportBundle{torch::randn({4}), torch::randn({5}), torch::rand({3, 3})}}),
                    ShapeMismatch);
}

TEST_CASE("query_forward" * doctest::test_suite("architecture")) {
    torch::NoGradGuard no_grad;
    auto cfg = ModelConfig::tiny(16, {8, 6, 4, 2});
    auto net = make_network(cfg, 18);
    Episode ep{{support_case(64, 19), support_case(64, 20), support_case(64, 21)}, random_image(64, 64, 22),
               blob(64, 64, 0, 0, 16, 16)};

    SUBCASE("four scales give four intermediate maps and one full-size final map") {
        std::vector<SupportState> states;
        for (const auto& s : ep.supports) {
            states.push_back(net->run_support(net->extract_features(s.image), {s.pos, s.neg, s.prev}));
        }
        const auto qf = net->extract_features(ep.query);
        const auto out = net->query_forward(qf, net->bundle_for_query(states, qf), ep.query_prev);
        CHECK(out.final_logits.sizes() == torch::IntArrayRef{2, 64, 64});
        REQUIRE(out.intermediate.size() == 4);
        for (std::size_t i = 0; i < 4; ++i) {
            CHECK(out.intermediate[i].sizes() == torch::IntArrayRef{2, cfg.query_scales[i], cfg.query_scales[i]});
        }
        CHECK(states[0].support_vector.sizes() == torch::IntArrayRef{16});
        CHECK(states[0].click_vector.sizes() == torch::IntArrayRef{16});
    }
    SUBCASE("deterministic") {
        CHECK(torch::equal(query_logits(net, ep, {0, 1, 2}), query_logits(net, ep, {0, 1, 2})));
    }
    SUBCASE("final logits do not depend on the order of the supports") {
        const auto ref = query_logits(net, ep, {0, 1, 2});
        std::vector<std::size_t> order{0, 1, 2};
        while (std::next_permutation(order.begin(), order.end())) {
            CHECK((query_logits(net, ep, order) - ref).abs().max().item<double>() <= 1e-6);
        }
    }
    SUBCASE("empty support foreground gives a zero bundle and finite query logits") {
        const auto qf = net->extract_features(ep.query);
        SupportState st = net->run_support(net->extract_features(ep.supports[0].image),
                                           {blank(64, 64), blank(64, 64), blank(64, 64)});
        st.fg = torch::zeros_like(st.fg);
        st.support_vector = compute_support_vector(st.feature.data, st.fg);
        const auto bundle = net->bundle_for_query({st}, qf);
        CHECK(torch::equal(bundle.support_vector, torch::zeros({16})));
        CHECK(torch::equal(bundle.attention_mask, torch::zeros({8, 8})));
        const auto out = net->query_forward(qf, bundle, blank(64, 64));
        CHECK(torch::isfinite(out.final_logits).all().item<bool>());
    }
    SUBCASE("bundle width must match the query features") {
        const auto qf = net->extract_features(ep.query);
        SupportBundle bad{torch::zeros({8}), torch::zeros({8}), torch::zeros({8, 8})};
        CHECK_THROWS_AS(net->query_forward(qf, bad, blank(64, 64)), ShapeMismatch);
    }
}

TEST_CASE("every trainable parameter has a gradient path" * doctest::test_suite("architecture")) {
    auto net = make_network(ModelConfig::tiny(16, {8, 4}), 23);
    net->train();
    std::map<std::string, double> grad_mass;
    for (uint64_t batch = 0; batch < 3; ++batch) {
        Episode ep{{support_case(64, 30 + batch), support_case(64, 40 + batch)}, random_image(64, 64, 50 + batch),
                   blob(64, 64, 10, 10, 40, 40)};
        net->zero_grad();
        std::vector<SupportState> states;
        std::vector<torch::Tensor> s_logits, s_masks;
        for (const auto& s : ep.supports) {
            states.push_back(net->run_support(net->extract_features(s.image), {s.pos, s.neg, s.prev}));
            s_logits.push_back(states.back().logits);
            s_masks.push_back(blob(64, 64, 8, 8, 30, 30));
        }
        const auto qf = net->extract_features(ep.query);
        const auto q = net->query_forward(qf, net->bundle_for_query(states, qf), ep.query_prev);
        compute_loss(s_logits, s_masks, q.intermediate, q.final_logits, blob(64, 64, 20, 20, 50, 50)).backward();
        for (const auto& item : net->named_parameters()) {
            if (!item.value().requires_grad()) continue;
            grad_mass[item.key()] += item.value().grad().defined() ? item.value().grad().abs().sum().item<double>() : 0.0;
        }
    }
    for (const auto& item : net->named_parameters()) {
        INFO(item.key());
        if (item.key().rfind("backbone.", 0) == 0) {
            CHECK_FALSE(item.value().requires_grad());
        } else {
            CHECK(item.value().requires_grad());
            CHECK(grad_mass[item.key()] > 0.0);
        }
    }
    CHECK(net->trainable_parameters().size() == grad_mass.size());
}

TEST_CASE("compute_loss" * doctest::test_suite("oracle")) {
    SUBCASE("saturated correct logits give a tiny loss") {
        const auto target = blob(8, 8, 2, 2, 6, 6);
        const auto logits = torch::stack({(1 - target) * 30, target * 30});
        const auto loss = compute_loss({logits}, {target}, {torch::stack({(1 - target) * 30, target * 30})}, logits, target);
        CHECK(loss.item<double>() < 1e-3);
    }
    SUBCASE("k=1, n=1 with equal terms gives three times the term") {
        const auto target = blob(4, 4, 0, 0, 2, 2);
        const auto logits = torch::zeros({2, 4, 4});
        const double term = pixel_bce(logits, target).item<double>();
        CHECK(term == doctest::Approx(std::log(2.0)));
        CHECK(compute_loss({logits}, {target}, {logits}, logits, target).item<double>() == doctest::Approx(3 * term));
    }
    SUBCASE("k=2, n=4 random case matches the sum-of-BCE oracle") {
        torch::manual_seed(24);
        std::mt19937_64 rng(24);
        for (int trial = 0; trial < 25; ++trial) {
            std::vector<torch::Tensor> sl, sm, il;
            for (int i = 0; i < 2; ++i) {
                sl.push_back(torch::randn({2, 8, 8}, torch::kFloat64) * 3);
                sm.push_back(random_fg(8, 8, rng));
            }
            const std::vector<int64_t> scales{8, 6, 4, 2};
            for (auto s : scales) il.push_back(torch::randn({2, s, s}, torch::kFloat64) * 3);
            const auto fl = torch::randn({2, 8, 8}, torch::kFloat64) * 3;
            const auto qm = random_fg(8, 8, rng);
            double expect = (oracle::bce(sl[0], sm[0]) + oracle::bce(sl[1], sm[1])) / 2.0;
            double inter = 0;
            for (std::size_t i = 0; i < il.size(); ++i) inter += oracle::bce(il[i], oracle::nearest(qm, scales[i], scales[i]));
            expect += inter / 4.0 + oracle::bce(fl, qm);
            CHECK(std::abs(compute_loss(sl, sm, il, fl, qm).item<double>() - expect) <= 1e-6);

            const auto swapped = compute_loss({sl[1], sl[0]}, {sm[1], sm[0]}, {il[3], il[1], il[2], il[0]}, fl, qm);
            CHECK(std::abs(swapped.item<double>() - expect) <= 1e-6);
        }
    }
    SUBCASE("invalid inputs") {
        const auto t = blob(4, 4, 0, 0, 2, 2);
        const auto l = torch::zeros({2, 4, 4});
        CHECK_THROWS_AS(compute_loss({}, {}, {l}, l, t), InvalidArgument);
        CHECK_THROWS_AS(compute_loss({l}, {t}, {}, l, t), InvalidArgument);
        CHECK_THROWS_AS(compute_loss({l}, {t}, {l}, l, t * 0.5), InvalidArgument);
        CHECK_THROWS_AS(compute_loss({l}, {t * 2}, {l}, l, t), InvalidArgument);
    }
}

TEST_CASE("binarization breaks ties toward background") {
    auto logits = torch::zeros({2, 2, 2});
    logits[1][0][0] = 1.0;
    logits[0][1][1] = 1.0;
    const auto m = logits_to_mask(logits);
    CHECK(m(0, 0));
    CHECK_FALSE(m(0, 1));
    CHECK_FALSE(m(1, 0));
    CHECK_FALSE(m(1, 1));
}

TEST_CASE("mask and tensor conversions round trip") {
    BinaryMask m(3, 5);
    m.set(0, 4, true);
    m.set(2, 1, true);
    CHECK(tensor_to_mask(mask_to_tensor(m)) == m);
    CHECK(mask_to_tensor(m).sum().item<double>() == 2.0);
}

TEST_CASE("checkpoint container") {
    const auto dir = fs::temp_directory_path() / ("ifse_ckpt_" + std::to_string(std::random_device{}()));
    fs::create_directories(dir);
    auto net = make_network(ModelConfig::tiny(8, {4, 2}, 32), 25);
    const auto path = dir / "model.ckpt";
    const auto version = save_checkpoint(net, path, {{"epoch", 3}});

    SUBCASE("round trip restores every tensor and the config") {
        auto loaded = load_checkpoint(path);
        CHECK(loaded.version == version);
        CHECK(loaded.metadata.at("epoch") == 3);
        CHECK(loaded.net->config() == net->config());
        auto a = net->named_parameters();
        auto b = loaded.net->named_parameters();
        for (const auto& item : a) {
            INFO(item.key());
            CHECK(torch::equal(item.value(), b[item.key()]));
            CHECK(item.value().requires_grad() == b[item.key()].requires_grad());
        }
        for (const auto& item : net->named_buffers()) {
            CHECK(torch::equal(item.value(), loaded.net->named_buffers()[item.key()]));
        }
    }
    SUBCASE("a different format version is rejected") {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(8);
        const std::uint32_t other = 2;
        f.write(reinterpret_cast<const char*>(&other), sizeof(other));
        f.close();
        CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains("format version 2"), InvalidArgument);
    }
    SUBCASE("tampered tensor data no longer matches the version tag") {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(-4, std::ios::end);
        const float junk = 12345.0F;
        f.write(reinterpret_cast<const char*>(&junk), sizeof(junk));
        f.close();
        CHECK_THROWS_AS(load_checkpoint(path), IoError);
    }
    SUBCASE("non-checkpoint files are rejected") {
        std::ofstream(dir / "junk.bin") << "not a checkpoint";
        CHECK_THROWS_AS(load_checkpoint(dir / "junk.bin"), IoError);
        CHECK_THROWS_AS(load_checkpoint(dir / "missing.ckpt"), IoError);
    }
    SUBCASE("backbone weights load by name") {
        auto other = make_network(ModelConfig::tiny(8, {4, 2}, 32), 26);
        CHECK(load_backbone_weights(other, path) > 0);
        for (const auto& item : net->backbone->named_parameters()) {
            CHECK(torch::equal(item.value(), other->backbone->named_parameters()[item.key()]));
        }
        CHECK_FALSE(torch::equal(net->reduce->weight, other->reduce->weight));
    }
    fs::remove_all(dir);
}
