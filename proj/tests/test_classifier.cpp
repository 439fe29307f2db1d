#include "bunit/classifier.hpp"
#include "bunit/errors.hpp"
#include "bunit/rng.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <set>

using namespace bunit;

namespace {

ClassifierConfig tiny_config() {
    ClassifierConfig cfg;
    cfg.d_model = 8;
    cfg.heads = 1;
    cfg.layers = 1;
    cfg.d_ff = 16;
    cfg.mlp_hidden = 8;
    cfg.dropout = 0.0;
    cfg.max_unit_len = 6;
    cfg.embed_dim = 4;
    return cfg;
}

EmbeddingTable random_table(int vocab, int dim, uint64_t seed) {
    EmbeddingTable t;
    t.dim = dim;
    t.vectors = Matrix(vocab, dim);
    Rng rng(seed);
    for (auto& v : t.vectors.a) v = rng.uniform_real() * 2.0 - 1.0;
    for (int i = 0; i < vocab; ++i) {
        double norm = 0.0;
        for (int q = 0; q < dim; ++q) norm += t.vectors.at(i, q) * t.vectors.at(i, q);
        norm = std::sqrt(norm);
        for (int q = 0; q < dim; ++q) t.vectors.at(i, q) /= norm;
    }
    return t;
}

ClassifierExample example_of(std::vector<int> tokens, std::vector<int> unit_of, int label) {
    ClassifierExample ex;
    ex.tokens = std::move(tokens);
    ex.unit_of = std::move(unit_of);
    ex.label = label;
    return ex;
}

} // namespace

TEST_CASE("encode_unit basic behavior") {
    const EmbeddingTable table = random_table(10, 4, 1);
    const ClassifierModel model(tiny_config(), 77);

    SUBCASE("single-token unit: pooled mean is the lone hidden state") {
        const auto rep = model.encode_unit({3}, table);
        CHECK(rep.size() == 8);
        for (double v : rep) CHECK(std::isfinite(v));
    }
    SUBCASE("deterministic across calls") {
        CHECK(model.encode_unit({2, 5, 7}, table) == model.encode_unit({2, 5, 7}, table));
    }
    SUBCASE("positional encodings make order matter") {
        const auto fwd = model.encode_unit({2, 5, 7}, table);
        const auto rev = model.encode_unit({7, 5, 2}, table);
        bool differs = false;
        for (size_t i = 0; i < fwd.size(); ++i)
            if (std::abs(fwd[i] - rev[i]) > 1e-12) differs = true;
        CHECK(differs);
    }
    SUBCASE("empty and oversized units rejected") {
        CHECK_THROWS_AS(model.encode_unit({}, table), ValidationError);
        CHECK_THROWS_AS(model.encode_unit({1, 2, 3, 4, 5, 6, 7}, table), ValidationError);
    }
}

TEST_CASE("joint input broadcasts one unit vector per owning unit") {
    const EmbeddingTable table = random_table(10, 4, 2);
    const ClassifierModel model(tiny_config(), 78);
    const std::vector<std::vector<int>> units = {{3, 2, 6}, {1, 5, 0}};

    SUBCASE("one unit of length 3 -> 3 rows sharing the right half") {
        const Matrix joint =
            model.build_joint_input(example_of({3, 2, 6}, {0, 0, 0}, 1), units, table);
        CHECK(joint.rows == 3);
        CHECK(joint.cols == 16);
        for (int t = 1; t < 3; ++t)
            for (int c = 8; c < 16; ++c) CHECK(joint.at(t, c) == joint.at(0, c));
    }
    SUBCASE("two units -> exactly two distinct right halves") {
        // gamma from the worked containment example: D,B,G,C,H,A owned 0,1,1,0,0,1
        const Matrix joint = model.build_joint_input(
            example_of({3, 1, 5, 2, 6, 0}, {0, 1, 1, 0, 0, 1}, 1), units, table);
        CHECK(joint.rows == 6);
        std::set<std::vector<double>> halves;
        for (int t = 0; t < 6; ++t)
            halves.insert(std::vector<double>(joint.row(t) + 8, joint.row(t) + 16));
        CHECK(halves.size() == 2);
        for (int c = 8; c < 16; ++c) {
            CHECK(joint.at(0, c) == joint.at(3, c));
            CHECK(joint.at(3, c) == joint.at(4, c));
            CHECK(joint.at(1, c) == joint.at(2, c));
            CHECK(joint.at(2, c) == joint.at(5, c));
        }
    }
}

TEST_CASE("forward yields a softmax distribution and honors the empty policy") {
    const EmbeddingTable table = random_table(10, 4, 3);
    ClassifierModel model(tiny_config(), 79);
    const std::vector<std::vector<int>> units = {{3, 2, 6}};

    SUBCASE("probabilities sum to one") {
        Rng rng(9);
        for (int trial = 0; trial < 20; ++trial) {
            std::vector<int> tokens(1 + rng.uniform(12));
            for (auto& t : tokens) t = static_cast<int>(rng.uniform(10));
            const Prediction pred =
                model.forward(example_of(tokens, std::vector<int>(tokens.size(), 0), 1), units, table);
            CHECK(std::abs(pred.probs[0] + pred.probs[1] - 1.0) < 1e-9);
        }
    }
    SUBCASE("attention rows sum to one") {
        model.forward(example_of({3, 2, 6, 3}, {0, 0, 0, 0}, 1), units, table);
        const Matrix& attn = model.last_attention();
        REQUIRE(attn.rows == 4);
        for (int t = 0; t < attn.rows; ++t) {
            double total = 0.0;
            for (int j = 0; j < attn.cols; ++j) {
                total += attn.at(t, j);
                CHECK(attn.at(t, j) >= 0.0);
            }
            CHECK(std::abs(total - 1.0) < 1e-9);
        }
    }
    SUBCASE("zeroed output head gives the uniform prediction") {
        // the 2-logit output layer is the last allocated tensor block
        ParamVector& params = model.parameters();
        const size_t out_block = static_cast<size_t>(8 * 2 + 2);
        for (size_t i = params.values.size() - out_block; i < params.values.size(); ++i)
            params.values[i] = 0.0;
        const Prediction pred = model.forward(example_of({3, 2}, {0, 0}, 1), units, table);
        CHECK(pred.probs[0] == doctest::Approx(0.5).epsilon(1e-12));
        CHECK(pred.probs[1] == doctest::Approx(0.5).epsilon(1e-12));
    }
    SUBCASE("empty input predicts benign with the flag") {
        const Prediction pred = model.forward(example_of({}, {}, 1), units, table);
        CHECK(pred.no_units);
        CHECK(pred.probs[0] == 1.0);
        CHECK(pred.label_at(0.5) == 0);
    }
}

TEST_CASE("backprop matches central finite differences") {
    const EmbeddingTable table = random_table(12, 4, 4);
    const std::vector<std::vector<int>> units = {{3, 2, 6}, {1, 5}, {7, 8, 9, 4}};
    const std::vector<ClassifierExample> batch = {
        example_of({3, 2, 6, 1, 5}, {0, 0, 0, 1, 1}, 1),
        example_of({7, 8, 9, 4}, {2, 2, 2, 2}, 0),
        example_of({1, 5, 3, 2, 6, 7}, {1, 1, 0, 0, 0, 2}, 1),
    };

    auto run_check = [&](bool use_units) {
        ClassifierConfig cfg = tiny_config();
        cfg.use_units = use_units;
        ClassifierModel model(cfg, 80 + (use_units ? 1 : 0));
        ParamVector& params = model.parameters();
        params.zero_grads();
        const double base = model.batch_loss_and_grad(batch, units, table, nullptr);
        CHECK(base == doctest::Approx(model.batch_loss(batch, units, table)).epsilon(1e-12));

        const double h = 1e-5;
        double worst = 0.0;
        size_t worst_idx = 0;
        for (size_t i = 0; i < params.values.size(); ++i) {
            const double keep = params.values[i];
            params.values[i] = keep + h;
            const double up = model.batch_loss(batch, units, table);
            params.values[i] = keep - h;
            const double down = model.batch_loss(batch, units, table);
            params.values[i] = keep;
            const double numeric = (up - down) / (2.0 * h);
            const double analytic = params.grads[i];
            const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
            const double rel = std::abs(analytic - numeric) / denom;
            if (rel > worst) {
                worst = rel;
                worst_idx = i;
            }
        }
        INFO("worst relative error ", worst, " at parameter ", worst_idx);
        CHECK(worst < 1e-3);
    };

    SUBCASE("full two-level model") { run_check(true); }
    SUBCASE("behaviors-only variant") { run_check(false); }
}

TEST_CASE("training is deterministic and learns separable data") {
    const EmbeddingTable table = random_table(12, 4, 6);
    // units perfectly correlated with the label
    const std::vector<std::vector<int>> units = {{1, 2, 3}, {7, 8, 9}};
    std::vector<ClassifierExample> examples;
    Rng rng(33);
    for (int i = 0; i < 40; ++i) {
        const int label = i % 2;
        std::vector<int> tokens = label == 1 ? std::vector<int>{1, 2, 3} : std::vector<int>{7, 8, 9};
        if (rng.uniform(2) == 0) tokens.push_back(label == 1 ? 1 : 7);
        std::vector<int> owners(tokens.size(), label == 1 ? 0 : 1);
        examples.push_back(example_of(tokens, owners, label));
    }

    ClassifierConfig cfg = tiny_config();
    ClassifierTrainConfig tc;
    tc.epochs = 50;
    tc.batch_size = 8;
    tc.learning_rate = 3e-3;
    tc.seed = 13;

    const ClassifierModel model = train_classifier(examples, units, table, cfg, tc, "digest-a");
    REQUIRE(model.epoch_losses.size() == 50);
    CHECK(model.epoch_losses.back() < model.epoch_losses.front());

    int correct = 0;
    for (const auto& ex : examples)
        if (model.forward(ex, units, table).label_at(0.5) == ex.label) ++correct;
    CHECK(correct == static_cast<int>(examples.size()));

    // same seed, same parameters, bit for bit
    const ClassifierModel again = train_classifier(examples, units, table, cfg, tc, "digest-a");
    CHECK(model.parameters().values == again.parameters().values);

    // single-class training set rejected
    std::vector<ClassifierExample> one_class(examples.begin(), examples.begin() + 1);
    CHECK_THROWS_AS(train_classifier(one_class, units, table, cfg, tc), ValidationError);
}

TEST_CASE("model save/load round-trips parameters and metadata") {
    const EmbeddingTable table = random_table(10, 4, 8);
    ClassifierModel model(tiny_config(), 99);
    model.train_digest = "abc123";
    model.epoch_losses = {1.0, 0.5};
    const std::string path =
        (std::filesystem::temp_directory_path() / "bunit_model_io.bin").string();
    model.save(path);
    const ClassifierModel loaded = ClassifierModel::load(path);
    CHECK(loaded.parameters().values == model.parameters().values);
    CHECK(loaded.train_digest == "abc123");
    CHECK(loaded.epoch_losses == model.epoch_losses);
    CHECK(loaded.config().use_units == model.config().use_units);

    const std::vector<std::vector<int>> units = {{3, 2, 6}};
    const ClassifierExample ex = example_of({3, 2, 6}, {0, 0, 0}, 1);
    CHECK(model.forward(ex, units, table).score() == loaded.forward(ex, units, table).score());
}
