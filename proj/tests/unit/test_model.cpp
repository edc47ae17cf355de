#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "gridshield/model.hpp"
#include "test_helpers.hpp"

using namespace gridshield;

TEST_SUITE_BEGIN("model");

TEST_CASE("reference architecture matches the published layout") {
    ArchSpec a = reference_arch(48);
    CHECK(a.layers.size() == 9);
    a.validate();

    const auto trace = a.trace();
    // 48 -> 46 -> 44 -> 42 -> 21 -> 19 -> flatten 512*19
    CHECK(trace[0] == std::pair<int, int>{128, 46});
    CHECK(trace[1] == std::pair<int, int>{256, 44});
    CHECK(trace[2] == std::pair<int, int>{256, 42});
    CHECK(trace[3] == std::pair<int, int>{256, 21});
    CHECK(trace[4] == std::pair<int, int>{512, 19});
    CHECK(trace[5].second == 512 * 19);

    Model m = Model::init(a, 1);
    CHECK(m.params[m.param_index(6, false)]->shape == std::vector<int>{512 * 19, 1024});
}

TEST_CASE("model output is one probability per window") {
    ArchSpec a = testutil::tiny_arch(16);
    Model m = Model::init(a, 3);
    std::vector<float> x(5 * 16, 0.2f);
    Graph g;
    auto fn = m.forward(g, x.data(), 5, false, 0);
    CHECK(g.value(fn.prob).shape == std::vector<int>{5, 1});
}

TEST_CASE("metrics arithmetic") {
    Metrics m = metrics_from_counts(40, 10, 10, 40);
    CHECK(m.accuracy == doctest::Approx(0.8));
    CHECK(m.precision == doctest::Approx(0.8));
    CHECK(m.recall == doctest::Approx(0.8));
    CHECK(m.f1 == doctest::Approx(0.8));

    Metrics perfect = metrics_from_counts(50, 0, 0, 50);
    CHECK(perfect.accuracy == 1.0);
    CHECK(perfect.precision == 1.0);
    CHECK(perfect.recall == 1.0);
    CHECK(perfect.f1 == 1.0);
}

TEST_CASE("all-benign predictor has zero recall and f1") {
    ArchSpec a = testutil::tiny_arch(48);
    Model m = Model::init(a, 5);
    // force the output bias low so every probability is < 0.5
    m.params[m.param_index(4, true)]->data[0] = -10.0f;

    auto ws = testutil::toy_windows(2, 10, 48, 48, 12);
    Metrics res = evaluate(m, ws.windows);
    CHECK(res.recall == 0.0);
    CHECK(res.f1 == 0.0);
    CHECK(res.accuracy == doctest::Approx(0.5).epsilon(0.05));
}

TEST_CASE("evaluate rejects an empty dataset") {
    ArchSpec a = testutil::tiny_arch(16);
    Model m = Model::init(a, 5);
    CHECK_THROWS_AS(evaluate(m, {}), std::invalid_argument);
}

TEST_CASE("evaluate is pure and order-invariant") {
    auto ws = testutil::toy_windows(2, 12, 48, 24, 8);
    ArchSpec a = testutil::tiny_arch(48);
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.seed = 4;
    Model m = train(a, ws.subset(0), ws.subset(1), cfg, ws.mean, ws.stdev);

    auto test = ws.subset(2);
    Metrics r1 = evaluate(m, test);
    Metrics r2 = evaluate(m, test);
    CHECK(r1.accuracy == r2.accuracy);
    CHECK(r1.f1 == r2.f1);

    std::reverse(test.begin(), test.end());
    Metrics r3 = evaluate(m, test);
    CHECK(r3.accuracy == doctest::Approx(r1.accuracy));
    CHECK(r3.f1 == doctest::Approx(r1.f1));
    CHECK(r3.recall == doctest::Approx(r1.recall));
}

TEST_CASE("predict: duplicates identical, range [0,1], batch equals loop") {
    ArchSpec a = testutil::tiny_arch(48);
    Model m = Model::init(a, 21);
    auto ws = testutil::toy_windows(2, 8, 48, 48, 5);
    std::vector<MeterWindow> batch(ws.windows.begin(),
                                   ws.windows.begin() + std::min<std::size_t>(9, ws.windows.size()));
    batch.push_back(batch[0]);  // duplicate

    auto probs = m.predict(batch);
    REQUIRE(probs.size() == batch.size());
    CHECK(probs.back() == probs.front());
    for (float p : probs) {
        CHECK(p >= 0.0f);
        CHECK(p <= 1.0f);
    }

    for (std::size_t i = 0; i < batch.size(); ++i) {
        auto one = m.predict({batch[i]});
        CHECK(std::abs(one[0] - probs[i]) < 1e-6f);
    }
}

TEST_CASE("width mismatch is an error") {
    ArchSpec a = testutil::tiny_arch(48);
    Model m = Model::init(a, 2);
    MeterWindow w;
    w.values.assign(32, 1.0f);
    CHECK_THROWS_AS(m.predict({w}), shape_error);
}

TEST_CASE("training memorizes a 32-window toy set") {
    auto ws = testutil::toy_windows(2, 10, 48, 48, 71);
    std::vector<MeterWindow> toy;
    for (const auto& w : ws.windows) {
        toy.push_back(w);
        if (toy.size() == 32) break;
    }
    REQUIRE(toy.size() == 32);

    TrainConfig cfg;
    cfg.epochs = 200;
    cfg.patience = 200;
    cfg.batch_size = 8;
    cfg.seed = 17;
    Model m = train(testutil::tiny_arch(48), toy, {}, cfg, ws.mean, ws.stdev);

    auto probs = m.predict(toy);
    int correct = 0;
    for (std::size_t i = 0; i < toy.size(); ++i)
        correct += ((probs[i] >= 0.5f) == (toy[i].label == 1)) ? 1 : 0;
    CHECK(static_cast<double>(correct) / toy.size() >= 0.95);
}

TEST_CASE("zero epochs returns the initialized model at chance level") {
    auto ws = testutil::toy_windows(3, 12, 48, 24, 15);
    TrainConfig cfg;
    cfg.epochs = 0;
    cfg.seed = 9;
    Model m = train(testutil::tiny_arch(48), ws.subset(0), ws.subset(1), cfg, ws.mean, ws.stdev);
    Metrics r = evaluate(m, ws.subset(2));
    CHECK(r.accuracy > 0.3);
    CHECK(r.accuracy < 0.7);
}

TEST_CASE("same seed reproduces identical weights") {
    auto ws = testutil::toy_windows(2, 10, 48, 24, 44);
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.seed = 33;
    Model m1 = train(testutil::tiny_arch(48), ws.subset(0), ws.subset(1), cfg, ws.mean, ws.stdev);
    Model m2 = train(testutil::tiny_arch(48), ws.subset(0), ws.subset(1), cfg, ws.mean, ws.stdev);
    for (std::size_t i = 0; i < m1.params.size(); ++i)
        CHECK(m1.params[i]->data == m2.params[i]->data);
}

TEST_CASE("non-finite loss raises TrainingDiverged with the last finite epoch") {
    auto ws = testutil::toy_windows(2, 10, 48, 48, 3);
    auto bad = ws.subset(0);
    REQUIRE(!bad.empty());
    bad[0].values[10] = std::numeric_limits<float>::infinity();

    // no relu between input and loss: relu would clamp the NaN away
    ArchSpec arch;
    arch.input_width = 48;
    arch.layers = {
        LayerSpec::make_conv(4, 3, 1, Activation::none),
        LayerSpec::make_flatten(),
        LayerSpec::make_dense(1, Activation::sigmoid),
    };
    TrainConfig cfg;
    cfg.epochs = 2;
    try {
        train(arch, bad, ws.subset(1), cfg, ws.mean, ws.stdev);
        FAIL("expected TrainingDiverged");
    } catch (const TrainingDiverged& e) {
        CHECK(e.last_finite_epoch == -1);  // first epoch never finished
    }
}

TEST_CASE("save and load round trip") {
    namespace fs = std::filesystem;
    auto ws = testutil::toy_windows(2, 8, 48, 48, 27);
    TrainConfig cfg;
    cfg.epochs = 1;
    Model m = train(testutil::tiny_arch(48), ws.subset(0), ws.subset(1), cfg, ws.mean, ws.stdev);

    const std::string gsw = (fs::temp_directory_path() / "gs_model.gsw").string();
    const std::string arch = (fs::temp_directory_path() / "gs_model.json").string();
    m.save(gsw, arch);
    Model back = Model::load(gsw, arch);
    CHECK(back.input_mean == m.input_mean);
    for (std::size_t i = 0; i < m.params.size(); ++i)
        CHECK(back.params[i]->data == m.params[i]->data);

    auto p1 = m.predict(ws.subset(2));
    auto p2 = back.predict(ws.subset(2));
    CHECK(p1 == p2);
}

TEST_SUITE_END();
